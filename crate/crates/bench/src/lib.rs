//! Shared fixtures for the benchmarks under `benches/`.

use boxcal::{generate_scene_pair, ScenePair, SynthConfig};

/// Noise-free scene pair with `n_boxes` boxes, all co-visible.
pub fn fixture(n_boxes: usize, seed: u64) -> ScenePair {
    let cfg = SynthConfig {
        n_boxes,
        seed,
        coop_visibility: 1.0,
        ..SynthConfig::default()
    };
    generate_scene_pair(&cfg).expect("default synthesis settings place the boxes")
}
