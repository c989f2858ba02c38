//! Small linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, SMatrix, SymmetricEigen};

use crate::{Mat3, Vec3};

/// Skew-symmetric cross-product matrix: `hat(a) * b == a x b`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]: reads `[S32, S13, S21]`.
pub fn vee(s: &Mat3) -> Vec3 {
    Vec3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

pub fn sym<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (a + a.transpose()) * 0.5
}

/// Largest eigenvalue of a symmetric matrix together with a unit eigenvector.
pub trait SymEig: Sized {
    type Vector;
    fn max_eig(&self) -> (f64, Self::Vector);
    fn min_eig(&self) -> f64;
}

macro_rules! impl_sym_eig {
    ($($n:literal),*) => {$(
        impl SymEig for SMatrix<f64, $n, $n> {
            type Vector = SMatrix<f64, $n, 1>;

            fn max_eig(&self) -> (f64, Self::Vector) {
                let eig = SymmetricEigen::new(*self);
                let (idx, val) = eig.eigenvalues.iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                );
                (val, eig.eigenvectors.column(idx).into_owned())
            }

            fn min_eig(&self) -> f64 {
                SymmetricEigen::new(*self).eigenvalues.min()
            }
        }
    )*};
}

impl_sym_eig!(2, 3, 9, 18);

pub fn max_eig<M: SymEig>(a: &M) -> (f64, M::Vector) {
    a.max_eig()
}

pub fn min_eig<M: SymEig>(a: &M) -> f64 {
    a.min_eig()
}

/// Eigenvalues of a dynamically sized symmetric matrix, ascending.
pub fn eigenvalues_sorted(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn inf_norm<const R: usize, const C: usize>(a: &SMatrix<f64, R, C>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Rotation angle of `R`, i.e. `arccos((tr R - 1) / 2)`, clamped for round-off.
pub fn rotation_angle(r: &Mat3) -> f64 {
    ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// Linear-interpolated quantile of an unsorted sample (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn vee_inverts_hat(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
            let v = Vec3::new(x, y, z);
            prop_assert_eq!(vee(&hat(&v)), v);
            let w = Vec3::new(z, x, -y);
            prop_assert!((hat(&v) * w - v.cross(&w)).norm() < 1e-12);
        }
    }

    #[test]
    fn max_eig_of_diagonal() {
        let a = nalgebra::Matrix3::from_diagonal(&Vec3::new(1.0, -3.0, 2.0));
        let (l, v) = max_eig(&a);
        assert!((l - 2.0).abs() < 1e-14);
        assert!((v.z.abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
