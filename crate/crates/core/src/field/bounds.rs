//! Region-restricted derivative bounds.
//!
//! Ascent certificates need the minimum gradient norm and a Hessian bound on a
//! compact region. Global bounds are never computed; bounds come from grid
//! sampling with a recorded refinement check (the documented tolerance is 5%:
//! doubling the resolution must move no bound by more than that).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::SignalField;
use crate::geometry::symmetric_spectral_norm;
use crate::{Error, Result};

/// Grid-refinement tolerance documented for [`RegionBounds`]: refining the
/// sampling grid must change no bound by more than this relative amount.
pub const REFINEMENT_TOLERANCE: f64 = 0.05;

/// A compact evaluation region.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Region {
    /// Axis-aligned box, possibly degenerate (min == max picks a point).
    Box { min: Vec<f64>, max: Vec<f64> },
    /// Annulus shell `inner <= |p - center| <= outer`; keeps the source out
    /// of the region when `inner > 0` and the shell is centered on it.
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box { min, .. } => min.len(),
            Region::Annulus { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Box { min, max } => {
                if min.len() != max.len() || min.is_empty() {
                    return Err(Error::invalid("box min/max dimensions differ"));
                }
                if min.iter().zip(max).any(|(a, b)| a > b) {
                    return Err(Error::invalid("box min exceeds max"));
                }
            }
            Region::Annulus { inner, outer, .. } => {
                if *inner < 0.0 || outer < inner {
                    return Err(Error::invalid("annulus needs 0 <= inner <= outer"));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &DVector<f64>) -> bool {
        match self {
            Region::Box { min, max } => {
                p.len() == min.len()
                    && p.iter()
                        .zip(min.iter().zip(max))
                        .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
            }
            Region::Annulus {
                center,
                inner,
                outer,
            } => {
                if p.len() != center.len() {
                    return false;
                }
                let r = p
                    .iter()
                    .zip(center)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
                    .sqrt();
                r >= *inner && r <= *outer
            }
        }
    }

    /// Sample points covering the region, `resolution` per axis.
    fn sample_points(&self, resolution: usize) -> Vec<DVector<f64>> {
        fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
            if n == 1 || a == b {
                return vec![0.5 * (a + b)];
            }
            (0..n)
                .map(|i| a + (b - a) * (i as f64) / ((n - 1) as f64))
                .collect()
        }

        match self {
            Region::Box { min, max } => {
                let axes: Vec<Vec<f64>> = min
                    .iter()
                    .zip(max)
                    .map(|(a, b)| linspace(*a, *b, resolution))
                    .collect();
                let mut pts = Vec::new();
                match axes.len() {
                    2 => {
                        for x in &axes[0] {
                            for y in &axes[1] {
                                pts.push(DVector::from_vec(vec![*x, *y]));
                            }
                        }
                    }
                    3 => {
                        for x in &axes[0] {
                            for y in &axes[1] {
                                for z in &axes[2] {
                                    pts.push(DVector::from_vec(vec![*x, *y, *z]));
                                }
                            }
                        }
                    }
                    _ => unreachable!("regions are 2D or 3D"),
                }
                pts
            }
            Region::Annulus {
                center,
                inner,
                outer,
            } => {
                let radii = linspace(*inner, *outer, resolution);
                let c = DVector::from_vec(center.clone());
                let mut pts = Vec::new();
                if center.len() == 2 {
                    for r in &radii {
                        for k in 0..resolution {
                            let th = 2.0 * std::f64::consts::PI * (k as f64)
                                / (resolution as f64);
                            pts.push(DVector::from_vec(vec![
                                c[0] + r * th.cos(),
                                c[1] + r * th.sin(),
                            ]));
                        }
                    }
                } else {
                    // Fibonacci directions cover the sphere evenly.
                    let n_dir = resolution * resolution;
                    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
                    for r in &radii {
                        for k in 0..n_dir {
                            let z = 1.0 - 2.0 * (k as f64 + 0.5) / (n_dir as f64);
                            let rho = (1.0 - z * z).max(0.0).sqrt();
                            let phi = 2.0 * std::f64::consts::PI * (k as f64) / golden;
                            pts.push(DVector::from_vec(vec![
                                c[0] + r * rho * phi.cos(),
                                c[1] + r * rho * phi.sin(),
                                c[2] + r * z,
                            ]));
                        }
                    }
                }
                pts
            }
        }
    }
}

/// Gradient and Hessian bounds for a region, from grid sampling.
///
/// `m_bound` is half the largest Hessian spectral norm, so the Taylor
/// remainder obeys `|sigma(a) - sigma(b) - grad(a).(a-b)| <= m_bound |a-b|^2`
/// for segments inside the region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionBounds {
    pub region: Region,
    /// Minimum gradient norm over the samples (forced to 0 when the region
    /// contains the source).
    pub k_min: f64,
    /// Maximum gradient norm over the samples.
    pub k_max: f64,
    /// Half the maximum Hessian spectral norm over the samples.
    pub m_bound: f64,
    /// Number of grid samples behind the reported values.
    pub samples: usize,
    /// Largest relative change of any bound when the grid was refined 2x;
    /// should stay below [`REFINEMENT_TOLERANCE`].
    pub refinement_delta: f64,
    /// Set when the region contains the field source; `k_min` is then 0.
    pub contains_source: bool,
}

impl RegionBounds {
    /// `m_bound` inflated by the documented refinement tolerance; the safe
    /// value to use in inequalities that must hold for off-grid points.
    pub fn m_safe(&self) -> f64 {
        self.m_bound * (1.0 + REFINEMENT_TOLERANCE)
    }
}

fn scan(
    field: &SignalField,
    region: &Region,
    resolution: usize,
) -> Result<(f64, f64, f64, usize)> {
    let pts = region.sample_points(resolution);
    let mut k_min = f64::INFINITY;
    let mut k_max: f64 = 0.0;
    let mut h_max: f64 = 0.0;
    for p in &pts {
        let g = field.gradient(p)?.norm();
        k_min = k_min.min(g);
        k_max = k_max.max(g);
        h_max = h_max.max(symmetric_spectral_norm(&field.hessian(p)?));
    }
    Ok((k_min, k_max, h_max / 2.0, pts.len()))
}

/// Sample derivative bounds for `field` over `region`.
///
/// The returned values come from a grid refined to `2 * resolution` per axis;
/// the change from the `resolution` grid is recorded as `refinement_delta`.
pub fn region_bounds(
    field: &SignalField,
    region: &Region,
    resolution: usize,
) -> Result<RegionBounds> {
    region.validate()?;
    if region.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: region.dim(),
        });
    }
    if resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2 per axis"));
    }

    let (ck_min, ck_max, cm, _) = scan(field, region, resolution)?;
    let (mut k_min, k_max, m_bound, samples) = scan(field, region, resolution * 2)?;

    let rel = |a: f64, b: f64| {
        let s = a.abs().max(b.abs());
        if s == 0.0 {
            0.0
        } else {
            (a - b).abs() / s
        }
    };
    let contains_source = region.contains(field.source());
    // k_min is grid-noise around zero when the source sits inside the region
    // (and is forced to 0 below), so it is excluded from the refinement check
    // in that case.
    let refinement_delta = if contains_source {
        rel(ck_max, k_max).max(rel(cm, m_bound))
    } else {
        rel(ck_min, k_min).max(rel(ck_max, k_max)).max(rel(cm, m_bound))
    };
    if contains_source {
        k_min = 0.0;
    }

    Ok(RegionBounds {
        region: region.clone(),
        k_min,
        k_max,
        m_bound,
        samples,
        refinement_delta,
        contains_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn unit_gaussian() -> SignalField {
        SignalField::gaussian(
            1.0,
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn single_radius_ring_has_equal_bounds() {
        // exp(-|a|^2) on the unit circle: |grad| = 2 e^{-1} everywhere.
        let f = unit_gaussian();
        let region = Region::Annulus {
            center: vec![0.0, 0.0],
            inner: 1.0,
            outer: 1.0,
        };
        let b = region_bounds(&f, &region, 64).unwrap();
        let want = 2.0 * (-1.0f64).exp();
        assert!((b.k_min - want).abs() < 1e-12, "k_min = {}", b.k_min);
        assert!((b.k_max - want).abs() < 1e-12);
        assert!(!b.contains_source);
    }

    #[test]
    fn degenerate_box_is_a_point() {
        let f = unit_gaussian();
        let region = Region::Box {
            min: vec![0.5, 0.25],
            max: vec![0.5, 0.25],
        };
        let b = region_bounds(&f, &region, 8).unwrap();
        let g = f
            .gradient(&DVector::from_vec(vec![0.5, 0.25]))
            .unwrap()
            .norm();
        assert_eq!(b.k_min, g);
        assert_eq!(b.k_max, g);
    }

    #[test]
    fn region_with_source_flags_zero_k_min() {
        let f = unit_gaussian();
        let region = Region::Annulus {
            center: vec![0.0, 0.0],
            inner: 0.0,
            outer: 2.0,
        };
        let b = region_bounds(&f, &region, 24).unwrap();
        assert!(b.contains_source);
        assert_eq!(b.k_min, 0.0);
    }

    #[test]
    fn bounds_are_ordered() {
        let f = unit_gaussian();
        let region = Region::Box {
            min: vec![-2.0, -1.0],
            max: vec![1.0, 2.0],
        };
        let b = region_bounds(&f, &region, 40).unwrap();
        assert!(0.0 <= b.k_min && b.k_min <= b.k_max);
        assert!(b.m_bound >= 0.0);
        assert!(b.refinement_delta < REFINEMENT_TOLERANCE);
    }

    #[test]
    fn resolution_below_two_rejected() {
        let f = unit_gaussian();
        let region = Region::Box {
            min: vec![0.0, 0.0],
            max: vec![1.0, 1.0],
        };
        assert!(region_bounds(&f, &region, 1).is_err());
    }

    #[test]
    fn annulus_rejects_bad_radii() {
        let r = Region::Annulus {
            center: vec![0.0, 0.0],
            inner: 2.0,
            outer: 1.0,
        };
        assert!(r.validate().is_err());
    }
}
