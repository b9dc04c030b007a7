//! Small vector helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Unsigned angle between two nonzero vectors, in radians.
///
/// Uses `atan2(|u x v|, u . v)`, which stays accurate down to angles far below
/// 1e-9 rad where the `acos` of a normalized dot product saturates to zero.
/// Returns `f64::NAN` if either vector is zero.
pub fn angle_between(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    assert_eq!(u.len(), v.len(), "angle_between: dimension mismatch");
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return f64::NAN;
    }
    let dot = u.dot(v);
    let cross = match u.len() {
        2 => (u[0] * v[1] - u[1] * v[0]).abs(),
        3 => {
            let cx = u[1] * v[2] - u[2] * v[1];
            let cy = u[2] * v[0] - u[0] * v[2];
            let cz = u[0] * v[1] - u[1] * v[0];
            (cx * cx + cy * cy + cz * cz).sqrt()
        }
        _ => {
            // Gram determinant fallback for other dimensions.
            let g = nu * nu * nv * nv - dot * dot;
            g.max(0.0).sqrt()
        }
    };
    cross.atan2(dot)
}

/// Rotate a 2-vector counterclockwise by `angle` radians.
pub fn rotate2(v: &DVector<f64>, angle: f64) -> DVector<f64> {
    debug_assert_eq!(v.len(), 2);
    let (s, c) = angle.sin_cos();
    DVector::from_vec(vec![c * v[0] - s * v[1], s * v[0] + c * v[1]])
}

/// 2D rotation matrix.
pub fn rotation2(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Norm-relative error `|got - want| / max(|got|, |want|)`; zero if both are zero.
pub fn relative_error(got: &DVector<f64>, want: &DVector<f64>) -> f64 {
    let scale = got.norm().max(want.norm());
    if scale == 0.0 {
        0.0
    } else {
        (got - want).norm() / scale
    }
}

/// Spectral norm (largest absolute eigenvalue) of a symmetric matrix.
pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_resolves_tiny_angles() {
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let v = DVector::from_vec(vec![1.0, 1e-11]);
        let a = angle_between(&u, &v);
        assert!((a - 1e-11).abs() < 1e-14, "a = {a}");
    }

    #[test]
    fn angle_of_orthogonal_vectors() {
        let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 3.0, 0.0]);
        assert!((angle_between(&u, &v) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn angle_of_antiparallel_vectors() {
        let u = DVector::from_vec(vec![2.0, 0.0]);
        let v = DVector::from_vec(vec![-5.0, 0.0]);
        assert!((angle_between(&u, &v) - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn rotate2_quarter_turn() {
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let r = rotate2(&v, std::f64::consts::FRAC_PI_2);
        assert!((r[0]).abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_of_diag() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -7.0]);
        assert!((symmetric_spectral_norm(&m) - 7.0).abs() < 1e-12);
    }
}
