//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use boxcal::{AffinityMatrix, Mat3, Vec3};
use nalgebra::{Matrix4, Quaternion, SymmetricEigen, UnitQuaternion};
use rand::Rng;

/// Exhaustive maximum over all partial one-to-one assignments.
pub fn brute_force_max(m: &AffinityMatrix) -> f64 {
    fn go(m: &AffinityMatrix, row: usize, used: &mut Vec<bool>) -> f64 {
        let (n, k) = m.shape();
        if row == n {
            return 0.0;
        }
        let mut best = go(m, row + 1, used);
        for j in 0..k {
            if !used[j] {
                used[j] = true;
                best = best.max(m.get(row, j) + go(m, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    let (_, k) = m.shape();
    go(m, 0, &mut vec![false; k])
}

/// Unweighted least-squares rotation and translation taking `src` onto
/// `dst`, via Horn's unit-quaternion eigenvector method.
pub fn horn(src: &[Vec3], dst: &[Vec3]) -> (Mat3, Vec3) {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut s = Mat3::zeros();
    for (a, b) in src.iter().zip(dst) {
        s += (a - cs) * (b - cd).transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy,       szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz, sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,       syz + szy,        -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(nmat);
    let k = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(k);
    let r = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner();
    (r, cd - r * cs)
}

pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let q = Quaternion::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

pub fn random_point(rng: &mut impl Rng, half: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

pub fn max_abs(m: &Mat3) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}
