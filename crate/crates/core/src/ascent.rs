//! The sampled ascending direction and its guarantees.
//!
//! The swarm computes `L = (1/(N D^2)) sum sigma(p_c + x_i) x_i` from field
//! readings alone. Its first-order model `L1 = P(x) grad / (N D^2)` is an
//! ascending direction whenever the deployment spans the space, and the two
//! stay within `M D` of each other (`M` a regional Hessian bound). That gap
//! plus an eigenvalue bound on `P(x)` yields a certificate that the sampled
//! direction ascends everywhere in a region. Affine morphs redirect the
//! first-order direction predictably, which is what lets the swarm steer by
//! reshaping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::deployment::{Deployment, DEGENERACY_TOL};
use crate::field::{Region, RegionBounds, SignalField};
use crate::geometry::angle_between;
use crate::{Error, Result};

/// Scale factor of the direction-unreliability threshold: the sampled
/// direction is flagged unreliable when `|L| < UNRELIABLE_SCALE * s / D`
/// with `s` the largest absolute field reading.
pub const UNRELIABLE_SCALE: f64 = 1e-12;

/// `L` from precomputed readings `sigma(p_c + x_i)`; shared by the direct
/// entry point and the simulator so there is exactly one implementation.
pub fn sampled_direction_from_readings(
    readings: &[f64],
    deployment: &Deployment,
) -> Result<DVector<f64>> {
    if readings.len() != deployment.len() {
        return Err(Error::DimensionMismatch {
            expected: deployment.len(),
            got: readings.len(),
        });
    }
    let d_max = deployment.max_radius();
    if d_max == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    let mut sum = DVector::zeros(deployment.dim());
    for (value, offset) in readings.iter().zip(deployment.offsets()) {
        sum.axpy(*value, offset, 1.0);
    }
    Ok(sum / (deployment.len() as f64 * d_max * d_max))
}

/// The sampled ascending direction `(1/(N D^2)) sum sigma(p_c + x_i) x_i`.
///
/// Uses field evaluations only, never gradients.
pub fn sampled_direction(
    field: &SignalField,
    centroid: &DVector<f64>,
    deployment: &Deployment,
) -> Result<DVector<f64>> {
    let readings: Result<Vec<f64>> = deployment
        .offsets()
        .iter()
        .map(|x| field.eval(&(centroid + x)))
        .collect();
    sampled_direction_from_readings(&readings?, deployment)
}

/// First-order model `(1/(N D^2)) sum (grad . x_i) x_i`, evaluated as the
/// plain sum. Diagnostic quantity: it uses the analytic gradient, which the
/// simulated robots never see.
pub fn first_order_direction(
    field: &SignalField,
    centroid: &DVector<f64>,
    deployment: &Deployment,
) -> Result<DVector<f64>> {
    let grad = field.gradient(centroid)?;
    let d_max = deployment.max_radius();
    if d_max == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    let mut sum = DVector::zeros(deployment.dim());
    for x in deployment.offsets() {
        sum.axpy(grad.dot(x), x, 1.0);
    }
    Ok(sum / (deployment.len() as f64 * d_max * d_max))
}

/// The same first-order model through the shape matrix:
/// `P(x) grad / (N D^2)`. Kept as an independent code path; the two must
/// agree to machine accuracy.
pub fn first_order_from_shape(
    field: &SignalField,
    centroid: &DVector<f64>,
    deployment: &Deployment,
) -> Result<DVector<f64>> {
    let grad = field.gradient(centroid)?;
    let d_max = deployment.max_radius();
    if d_max == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    let p = deployment.shape_matrix().matrix;
    Ok(p * grad / (deployment.len() as f64 * d_max * d_max))
}

/// Closed form of the first-order direction for the four-corner rectangle
/// deployment `(+-a, +-b)`: `|grad|/(a^2+b^2) * (a^2 cos t, b^2 sin t)`
/// with `t` the gradient angle — evaluated as
/// `(a^2 g_x, b^2 g_y)/(a^2+b^2)`, which is the same expression and exact
/// for degenerate rectangles.
pub fn rectangle_direction(a: f64, b: f64, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if grad.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: grad.len(),
        });
    }
    if a < 0.0 || b < 0.0 || (a == 0.0 && b == 0.0) {
        return Err(Error::invalid(
            "rectangle needs a, b >= 0 and not both zero",
        ));
    }
    let s = a * a + b * b;
    // (a^2/s) is exactly 1 when b = 0, so the degenerate case projects
    // bit-exactly.
    Ok(DVector::from_vec(vec![
        (a * a / s) * grad[0],
        (b * b / s) * grad[1],
    ]))
}

/// Predicted direction of the first-order model after morphing a regular
/// polygon/polyhedron by `A = U S V^T`: the normalized `U S^2 U^T r`.
/// `V` plays no role.
pub fn predict_morph(
    u: &DMatrix<f64>,
    scales: &DVector<f64>,
    grad_dir: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = grad_dir.len();
    if u.nrows() != m || u.ncols() != m || scales.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: u.nrows(),
        });
    }
    let eye = DMatrix::identity(m, m);
    if (u.transpose() * u - eye).abs().max() > 1e-10 {
        return Err(Error::invalid("U must be orthogonal"));
    }
    if scales.iter().any(|s| *s < 0.0) {
        return Err(Error::invalid("singular values must be nonnegative"));
    }
    if scales.iter().all(|s| *s == 0.0) {
        return Err(Error::invalid("all singular values are zero"));
    }
    if (grad_dir.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("gradient direction must be a unit vector"));
    }
    let s2 = DMatrix::from_diagonal(&scales.map(|s| s * s));
    let w = u * s2 * u.transpose() * grad_dir;
    let n = w.norm();
    if n == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    Ok(w / n)
}

/// Continuum direction for a density satisfying the axis reflection
/// symmetries: proportional to `(var_x cos t, var_y sin t)` with `t` the
/// gradient angle.
pub fn variance_direction(var_x: f64, var_y: f64, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if grad.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: grad.len(),
        });
    }
    if var_x < 0.0 || var_y < 0.0 || (var_x == 0.0 && var_y == 0.0) {
        return Err(Error::invalid(
            "variances must be nonnegative and not both zero",
        ));
    }
    let n = grad.norm();
    if n == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    let theta = grad[1].atan2(grad[0]);
    Ok(DVector::from_vec(vec![
        var_x * theta.cos(),
        var_y * theta.sin(),
    ]))
}

/// Divergence between the sampled direction and its first-order model,
/// against the regional bound `M D`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// `|L - L1|`.
    pub lhs: f64,
    /// `M D` from the region bounds.
    pub rhs: f64,
    pub ok: bool,
    /// `rhs - lhs`.
    pub slack: f64,
}

/// Check `|L - L1| <= M D` with all robots inside the bounds region.
pub fn divergence_check(
    field: &SignalField,
    centroid: &DVector<f64>,
    deployment: &Deployment,
    bounds: &RegionBounds,
) -> Result<DivergenceReport> {
    for (i, x) in deployment.offsets().iter().enumerate() {
        if !bounds.region.contains(&(centroid + x)) {
            return Err(Error::RobotOutsideRegion { index: i });
        }
    }
    let l = sampled_direction(field, centroid, deployment)?;
    let l1 = first_order_direction(field, centroid, deployment)?;
    let lhs = (l - l1).norm();
    let rhs = bounds.m_bound * deployment.max_radius();
    Ok(DivergenceReport {
        lhs,
        rhs,
        ok: lhs <= rhs * (1.0 + 1e-9),
        slack: rhs - lhs,
    })
}

/// Conditioning constant `C = max(lambda_max/(N D^2), N D^2/lambda_min)`:
/// sandwiches the ascent inner product via
/// `|grad|^2 / C <= grad . L1 <= C |grad|^2`.
pub fn conditioning(deployment: &Deployment) -> Result<f64> {
    let sm = deployment.shape_matrix();
    if !deployment.is_non_degenerate(DEGENERACY_TOL) {
        return Err(Error::DegenerateDeployment);
    }
    let nd2 = deployment.len() as f64 * deployment.max_radius().powi(2);
    Ok((sm.lambda_max() / nd2).max(nd2 / sm.lambda_min()))
}

/// Regional ascent certificate: when `margin > 0`, the sampled direction
/// ascends at every centroid in the region with all robots inside it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub region: Region,
    pub lambda_min: f64,
    pub n: usize,
    /// Swarm radius scale `D`.
    pub d_max: f64,
    /// Minimum gradient norm over the region.
    pub k_min: f64,
    /// Regional Hessian bound `M`.
    pub m_bound: f64,
    /// `lambda_min/(N D^2) * k_min - M * D`.
    pub margin: f64,
    pub holds: bool,
    /// Lower bound on the ascent inner product over the region:
    /// `lambda_min/(N D^2) * k_min^2`.
    pub inner_product_lower: f64,
    /// Conditioning constant; absent for degenerate deployments.
    pub conditioning: Option<f64>,
}

impl Certificate {
    /// Plain-text table used by the command-line tool.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("lambda_min {:>14.6e}\n", self.lambda_min));
        s.push_str(&format!("N          {:>14}\n", self.n));
        s.push_str(&format!("D          {:>14.6e}\n", self.d_max));
        s.push_str(&format!("K_min      {:>14.6e}\n", self.k_min));
        s.push_str(&format!("M          {:>14.6e}\n", self.m_bound));
        s.push_str(&format!("margin     {:>14.6e}\n", self.margin));
        s.push_str(&format!(
            "C(x)       {}\n",
            match self.conditioning {
                Some(c) => format!("{c:>14.6e}"),
                None => format!("{:>14}", "n/a"),
            }
        ));
        s.push_str(&format!(
            "certified  {:>14}\n",
            if self.holds { "yes" } else { "no" }
        ));
        s
    }
}

/// Evaluate the ascent certificate for a deployment over precomputed region
/// bounds. A degenerate deployment yields `lambda_min = 0, holds = false`
/// rather than an error.
pub fn certify(deployment: &Deployment, bounds: &RegionBounds) -> Certificate {
    let sm = deployment.shape_matrix();
    let degenerate = !deployment.is_non_degenerate(DEGENERACY_TOL);
    let lambda_min = if degenerate { 0.0 } else { sm.lambda_min() };
    let n = deployment.len();
    let d_max = deployment.max_radius();
    let nd2 = n as f64 * d_max * d_max;
    let first = if nd2 > 0.0 { lambda_min / nd2 } else { 0.0 };
    let margin = first * bounds.k_min - bounds.m_bound * d_max;
    Certificate {
        region: bounds.region.clone(),
        lambda_min,
        n,
        d_max,
        k_min: bounds.k_min,
        m_bound: bounds.m_bound,
        margin,
        holds: !degenerate && margin > 0.0,
        inner_product_lower: first * bounds.k_min * bounds.k_min,
        conditioning: conditioning(deployment).ok(),
    }
}

/// Full diagnostic bundle for one (field, centroid, deployment) triple.
#[derive(Debug, Clone)]
pub struct AscentResult {
    /// The sampled direction `L`.
    pub sampled: DVector<f64>,
    /// The first-order model `L1`.
    pub first_order: DVector<f64>,
    /// `L - L1`.
    pub residual: DVector<f64>,
    /// Analytic gradient at the centroid.
    pub gradient: DVector<f64>,
    /// `grad . L`.
    pub inner_sampled: f64,
    /// `grad . L1`.
    pub inner_first_order: f64,
    /// Angle between the sampled direction and the gradient (NaN if either
    /// vanishes).
    pub angle_to_gradient: f64,
    /// Unit gradient direction, when the gradient is nonzero.
    pub gradient_direction: Option<DVector<f64>>,
    /// 2D gradient angle `atan2(g_y, g_x)` (NaN in 3D or at zero gradient).
    pub gradient_angle: f64,
    /// Set when `|L|` falls below the reliability threshold.
    pub unreliable: bool,
}

/// Compute every ascent diagnostic at once.
pub fn analyze(
    field: &SignalField,
    centroid: &DVector<f64>,
    deployment: &Deployment,
) -> Result<AscentResult> {
    let readings: Result<Vec<f64>> = deployment
        .offsets()
        .iter()
        .map(|x| field.eval(&(centroid + x)))
        .collect();
    let readings = readings?;
    let sampled = sampled_direction_from_readings(&readings, deployment)?;
    let first_order = first_order_direction(field, centroid, deployment)?;
    let gradient = field.gradient(centroid)?;
    let d_max = deployment.max_radius();
    let scale = readings.iter().fold(0.0f64, |a, r| a.max(r.abs())).max(f64::MIN_POSITIVE);
    let grad_norm = gradient.norm();
    Ok(AscentResult {
        residual: &sampled - &first_order,
        inner_sampled: gradient.dot(&sampled),
        inner_first_order: gradient.dot(&first_order),
        angle_to_gradient: angle_between(&sampled, &gradient),
        gradient_direction: (grad_norm > 0.0).then(|| &gradient / grad_norm),
        gradient_angle: if deployment.dim() == 2 && grad_norm > 0.0 {
            gradient[1].atan2(gradient[0])
        } else {
            f64::NAN
        },
        unreliable: sampled.norm() < UNRELIABLE_SCALE * scale / d_max,
        sampled,
        first_order,
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deployment::regular_polygon;
    use nalgebra::DMatrix;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn gaussian(width: f64) -> SignalField {
        SignalField::gaussian(
            1.0,
            vec2(0.0, 0.0),
            DMatrix::identity(2, 2) / (width * width),
        )
        .unwrap()
    }

    fn plus_deployment() -> Deployment {
        Deployment::new(vec![
            vec2(1.0, 0.0),
            vec2(-1.0, 0.0),
            vec2(0.0, 1.0),
            vec2(0.0, -1.0),
        ])
        .unwrap()
    }

    #[test]
    fn symmetric_readings_cancel_at_the_peak() {
        // Radially symmetric field, plus-shaped deployment at the source:
        // paired +-x readings are equal and cancel.
        let f = gaussian(1.0);
        let l = sampled_direction(&f, &vec2(0.0, 0.0), &plus_deployment()).unwrap();
        assert!(l.norm() < 1e-16);
    }

    #[test]
    fn sampled_direction_ascends_for_small_swarms() {
        let f = SignalField::gaussian(1.0, vec2(0.0, 0.0), DMatrix::identity(2, 2)).unwrap();
        let d = Deployment::new(vec![
            vec2(0.01, 0.01),
            vec2(-0.01, 0.01),
            vec2(-0.01, -0.01),
            vec2(0.01, -0.01),
        ])
        .unwrap();
        let pc = vec2(1.0, 0.0);
        let l = sampled_direction(&f, &pc, &d).unwrap();
        let g = f.gradient(&pc).unwrap();
        assert!(g.dot(&l) > 0.0);
    }

    #[test]
    fn zero_radius_deployment_is_undefined() {
        let f = gaussian(1.0);
        let d = Deployment::new(vec![vec2(0.0, 0.0), vec2(0.0, 0.0)]).unwrap();
        assert!(matches!(
            sampled_direction(&f, &vec2(1.0, 0.0), &d),
            Err(Error::UndefinedDirection)
        ));
    }

    #[test]
    fn square_first_order_is_half_gradient() {
        let f = gaussian(3.0);
        let d = Deployment::new(vec![
            vec2(-1.0, -1.0),
            vec2(1.0, -1.0),
            vec2(-1.0, 1.0),
            vec2(1.0, 1.0),
        ])
        .unwrap();
        let pc = vec2(0.7, -1.3);
        let l1 = first_order_direction(&f, &pc, &d).unwrap();
        let g = f.gradient(&pc).unwrap();
        assert!((l1 - g * 0.5).norm() < 1e-15);
    }

    #[test]
    fn sum_and_shape_forms_agree() {
        let f = gaussian(2.0);
        let d = regular_polygon(7, 1.3, 0.2).unwrap();
        let pc = vec2(0.5, 0.8);
        let a = first_order_direction(&f, &pc, &d).unwrap();
        let b = first_order_from_shape(&f, &pc, &d).unwrap();
        assert!(crate::geometry::relative_error(&a, &b) < 1e-12);
    }

    #[test]
    fn degenerate_line_sees_only_its_projection() {
        let f = gaussian(2.0);
        // Robots on the x-axis, gradient along y at this point.
        let d = Deployment::new(vec![
            vec2(1.0, 0.0),
            vec2(-1.0, 0.0),
            vec2(2.0, 0.0),
            vec2(-2.0, 0.0),
        ])
        .unwrap();
        let pc = vec2(0.0, 1.0); // gradient is (0, -2 y e^{...}) — pure y
        let l1 = first_order_direction(&f, &pc, &d).unwrap();
        assert_eq!(l1[0], 0.0);
        assert_eq!(l1[1], 0.0);
    }

    #[test]
    fn rectangle_direction_square_case() {
        let got = rectangle_direction(1.0, 1.0, &vec2(3.0, 4.0)).unwrap();
        assert_eq!(got, vec2(1.5, 2.0));
    }

    #[test]
    fn rectangle_direction_degenerate_case() {
        let got = rectangle_direction(1.0, 0.0, &vec2(0.0, 1.0)).unwrap();
        assert_eq!(got, vec2(0.0, 0.0));
    }

    #[test]
    fn rectangle_direction_two_one() {
        let got = rectangle_direction(2.0, 1.0, &vec2(1.0, 0.0)).unwrap();
        assert!((got[0] - 0.8).abs() < 1e-15 && got[1] == 0.0);
    }

    #[test]
    fn rectangle_direction_rejects_zero_rectangle() {
        assert!(rectangle_direction(0.0, 0.0, &vec2(1.0, 0.0)).is_err());
    }

    #[test]
    fn predict_morph_identity_keeps_direction() {
        let r = vec2(0.6, 0.8);
        let got = predict_morph(
            &DMatrix::identity(2, 2),
            &DVector::from_vec(vec![1.0, 1.0]),
            &r,
        )
        .unwrap();
        assert!((got - r).norm() < 1e-15);
    }

    #[test]
    fn predict_morph_diag_two_one() {
        let r = vec2(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2);
        let got = predict_morph(
            &DMatrix::identity(2, 2),
            &DVector::from_vec(vec![2.0, 1.0]),
            &r,
        )
        .unwrap();
        let want = vec2(4.0, 1.0) / 17.0f64.sqrt();
        assert!((got - want).norm() < 1e-15);
    }

    #[test]
    fn predict_morph_validates_inputs() {
        let r = vec2(1.0, 0.0);
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(predict_morph(&skew, &DVector::from_vec(vec![1.0, 1.0]), &r).is_err());
        assert!(predict_morph(
            &DMatrix::identity(2, 2),
            &DVector::from_vec(vec![0.0, 0.0]),
            &r
        )
        .is_err());
        assert!(predict_morph(
            &DMatrix::identity(2, 2),
            &DVector::from_vec(vec![1.0, 1.0]),
            &vec2(2.0, 0.0)
        )
        .is_err());
    }

    #[test]
    fn variance_direction_isotropic_is_parallel() {
        let g = vec2(3.0, -4.0);
        let v = variance_direction(2.0, 2.0, &g).unwrap();
        assert!(angle_between(&v, &g) < 1e-12);
    }

    #[test]
    fn variance_direction_four_one() {
        let g = vec2(1.0, 1.0);
        let v = variance_direction(4.0, 1.0, &g).unwrap();
        let angle = v[1].atan2(v[0]);
        assert!((angle - 1.0f64.atan2(4.0)).abs() < 1e-12);
    }

    #[test]
    fn conditioning_of_regular_polygon_is_two() {
        let d = regular_polygon(9, 2.0, 0.3).unwrap();
        let c = conditioning(&d).unwrap();
        assert!((c - 2.0).abs() < 1e-9);
    }

    #[test]
    fn conditioning_rejects_degenerate() {
        let d = Deployment::new(vec![vec2(-1.0, 0.0), vec2(1.0, 0.0)]).unwrap();
        assert!(matches!(conditioning(&d), Err(Error::DegenerateDeployment)));
    }

    #[test]
    fn certify_degenerate_line_fails() {
        let f = gaussian(5.0);
        let region = Region::Annulus {
            center: vec![0.0, 0.0],
            inner: 3.0,
            outer: 6.0,
        };
        let bounds = crate::field::region_bounds(&f, &region, 32).unwrap();
        let d = Deployment::new(vec![vec2(-1.0, 0.0), vec2(0.0, 0.0), vec2(1.0, 0.0)]).unwrap();
        let cert = certify(&d, &bounds);
        assert_eq!(cert.lambda_min, 0.0);
        assert!(!cert.holds);
        assert!(cert.conditioning.is_none());
    }

    #[test]
    fn divergence_check_rejects_outside_robots() {
        let f = gaussian(5.0);
        let region = Region::Box {
            min: vec![-1.0, -1.0],
            max: vec![1.0, 1.0],
        };
        let bounds = crate::field::region_bounds(&f, &region, 16).unwrap();
        let d = regular_polygon(4, 3.0, 0.0).unwrap();
        assert!(matches!(
            divergence_check(&f, &vec2(0.0, 0.0), &d, &bounds),
            Err(Error::RobotOutsideRegion { .. })
        ));
    }
}
