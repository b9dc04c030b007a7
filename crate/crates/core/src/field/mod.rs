//! Scalar signal fields with analytic derivatives.
//!
//! A signal is a positive, twice continuously differentiable scalar field with
//! a single maximum (the source) that vanishes at infinity. Every built-in
//! kind carries closed-form gradient and Hessian; the swarm algorithms only
//! ever *sample* the field, the derivatives exist for oracles, certificates
//! and diagnostics.

mod bounds;

pub use bounds::{region_bounds, Region, RegionBounds, REFINEMENT_TOLERANCE};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ridge-cone constants: the two exponential ridge directions, derived once
/// from the defining matrices.
fn ridge_directions() -> (DVector<f64>, DVector<f64>) {
    let s30 = 30.0f64.sqrt().recip();
    let s15 = 15.0f64.sqrt().recip();
    // v3 = A1 * uX with A1 = [[1/sqrt(30), 0], [1, 0]]
    let v3 = DVector::from_vec(vec![s30, 1.0]);
    // v4 = S^T * A2 * S * uY with A2 = [[1, 0], [1, 1/sqrt(15)]], S = [[1, -1], [1, 1]]
    let a2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, s15]);
    let s = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
    let m = s.transpose() * a2 * s;
    let v4 = DVector::from_vec(vec![m[(0, 1)], m[(1, 1)]]);
    (v3, v4)
}

/// An analytic scalar field. Immutable after construction; evaluation is pure.
#[derive(Debug, Clone)]
pub enum SignalField {
    /// `amplitude * exp(-(a-c)^T S (a-c))` with `S` symmetric positive definite.
    Gaussian {
        amplitude: f64,
        center: DVector<f64>,
        shape: DMatrix<f64>,
    },
    /// `amplitude / (|a-c|^2 + s^2)`: an inverse-square law, smoothed at the
    /// origin by the scale `s > 0` to stay twice differentiable.
    SmoothedPowerLaw {
        amplitude: f64,
        center: DVector<f64>,
        smoothing: f64,
    },
    /// 2D benchmark field `2 - 0.04|d| + exp(-0.9 v3.d) + exp(0.9 v4.d)` with
    /// `d = a - source`: a cone peaked at the source plus two exponential
    /// ridges that bend the level sets. Non-convex and only meaningful on a
    /// bounded arena: far along the ridge directions it grows without bound
    /// and opposite them it goes negative, and its gradient never vanishes
    /// (the cone kink at the source is not a critical point). The stated
    /// source is the cone apex.
    RidgeCone { source: DVector<f64> },
    /// Positively weighted sum of other fields. The source is located
    /// numerically at construction (best ascent run started from each
    /// component source).
    WeightedSum {
        components: Vec<(f64, SignalField)>,
        source: DVector<f64>,
    },
}

impl SignalField {
    pub fn gaussian(amplitude: f64, center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let m = center.len();
        if !(2..=3).contains(&m) {
            return Err(Error::invalid("field dimension must be 2 or 3"));
        }
        if amplitude <= 0.0 {
            return Err(Error::invalid("gaussian amplitude must be positive"));
        }
        if shape.nrows() != m || shape.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: shape.nrows(),
            });
        }
        // Symmetrize, then require positive definiteness so the field decays
        // in every direction.
        let sym = (shape.clone() + shape.transpose()) * 0.5;
        let min_eig = sym
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= 0.0 {
            return Err(Error::invalid(
                "gaussian shape matrix must be positive definite",
            ));
        }
        Ok(SignalField::Gaussian {
            amplitude,
            center,
            shape: sym,
        })
    }

    pub fn smoothed_power_law(amplitude: f64, center: DVector<f64>, smoothing: f64) -> Result<Self> {
        if !(2..=3).contains(&center.len()) {
            return Err(Error::invalid("field dimension must be 2 or 3"));
        }
        if amplitude <= 0.0 || smoothing <= 0.0 {
            return Err(Error::invalid(
                "power law needs positive amplitude and smoothing scale",
            ));
        }
        Ok(SignalField::SmoothedPowerLaw {
            amplitude,
            center,
            smoothing,
        })
    }

    /// The benchmark ridge-cone field with the standard source `(40, 40)`.
    pub fn ridge_cone() -> Self {
        SignalField::RidgeCone {
            source: DVector::from_vec(vec![40.0, 40.0]),
        }
    }

    pub fn ridge_cone_at(source: DVector<f64>) -> Result<Self> {
        if source.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: source.len(),
            });
        }
        Ok(SignalField::RidgeCone { source })
    }

    pub fn weighted_sum(components: Vec<(f64, SignalField)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("weighted sum needs components"));
        }
        let m = components[0].1.dim();
        for (w, f) in &components {
            if *w <= 0.0 {
                return Err(Error::invalid("weighted-sum weights must be positive"));
            }
            if f.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: f.dim(),
                });
            }
        }
        // Locate the dominant maximum: ascend from every component source and
        // keep the best endpoint.
        let probe = SignalField::WeightedSum {
            source: DVector::zeros(m),
            components: components.clone(),
        };
        let mut best: Option<(f64, DVector<f64>)> = None;
        for (_, f) in &components {
            let search = locate_maximum(&probe, f.source(), None, &MaxSearchOptions::default())?;
            let val = probe.eval(&search.location)?;
            if best.as_ref().is_none_or(|(v, _)| val > *v) {
                best = Some((val, search.location));
            }
        }
        let source = best.expect("components checked non-empty").1;
        Ok(SignalField::WeightedSum { components, source })
    }

    /// Ambient dimension (2 or 3).
    pub fn dim(&self) -> usize {
        match self {
            SignalField::Gaussian { center, .. } => center.len(),
            SignalField::SmoothedPowerLaw { center, .. } => center.len(),
            SignalField::RidgeCone { .. } => 2,
            SignalField::WeightedSum { source, .. } => source.len(),
        }
    }

    /// Source location: the stated maximum for analytic kinds, the
    /// numerically located one for weighted sums. For the ridge-cone kind
    /// this is the cone apex used by the experiments, not a critical point.
    pub fn source(&self) -> &DVector<f64> {
        match self {
            SignalField::Gaussian { center, .. } => center,
            SignalField::SmoothedPowerLaw { center, .. } => center,
            SignalField::RidgeCone { source } => source,
            SignalField::WeightedSum { source, .. } => source,
        }
    }

    fn check_dim(&self, a: &DVector<f64>) -> Result<()> {
        if a.len() != self.dim() {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: a.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Field strength at `a`.
    pub fn eval(&self, a: &DVector<f64>) -> Result<f64> {
        self.check_dim(a)?;
        Ok(match self {
            SignalField::Gaussian {
                amplitude,
                center,
                shape,
            } => {
                let u = a - center;
                amplitude * (-(u.dot(&(shape * &u)))).exp()
            }
            SignalField::SmoothedPowerLaw {
                amplitude,
                center,
                smoothing,
            } => {
                let u = a - center;
                amplitude / (u.norm_squared() + smoothing * smoothing)
            }
            SignalField::RidgeCone { source } => {
                let d = a - source;
                let (v3, v4) = ridge_directions();
                2.0 - 0.04 * d.norm() + (-0.9 * d.dot(&v3)).exp() + (0.9 * d.dot(&v4)).exp()
            }
            SignalField::WeightedSum { components, .. } => {
                let mut s = 0.0;
                for (w, f) in components {
                    s += w * f.eval(a)?;
                }
                s
            }
        })
    }

    /// Analytic gradient at `a`.
    ///
    /// The ridge-cone norm term is not differentiable exactly at the source;
    /// its contribution is taken as zero there.
    pub fn gradient(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(a)?;
        Ok(match self {
            SignalField::Gaussian {
                amplitude,
                center,
                shape,
            } => {
                let u = a - center;
                let su = shape * &u;
                let val = amplitude * (-(u.dot(&su))).exp();
                su * (-2.0 * val)
            }
            SignalField::SmoothedPowerLaw {
                amplitude,
                center,
                smoothing,
            } => {
                let u = a - center;
                let q = u.norm_squared() + smoothing * smoothing;
                u * (-2.0 * amplitude / (q * q))
            }
            SignalField::RidgeCone { source } => {
                let d = a - source;
                let (v3, v4) = ridge_directions();
                let mut g = DVector::zeros(2);
                let nd = d.norm();
                if nd > 0.0 {
                    g += &d * (-0.04 / nd);
                }
                g += &v3 * (-0.9 * (-0.9 * d.dot(&v3)).exp());
                g += &v4 * (0.9 * (0.9 * d.dot(&v4)).exp());
                g
            }
            SignalField::WeightedSum { components, .. } => {
                let mut g = DVector::zeros(self.dim());
                for (w, f) in components {
                    g += f.gradient(a)? * *w;
                }
                g
            }
        })
    }

    /// Analytic Hessian at `a`; symmetric by construction.
    pub fn hessian(&self, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(a)?;
        Ok(match self {
            SignalField::Gaussian {
                amplitude,
                center,
                shape,
            } => {
                let u = a - center;
                let su = shape * &u;
                let val = amplitude * (-(u.dot(&su))).exp();
                (&su * su.transpose() * 4.0 - shape * 2.0) * val
            }
            SignalField::SmoothedPowerLaw {
                amplitude,
                center,
                smoothing,
            } => {
                let u = a - center;
                let q = u.norm_squared() + smoothing * smoothing;
                let eye = DMatrix::identity(u.len(), u.len());
                eye * (-2.0 * amplitude / (q * q)) + &u * u.transpose() * (8.0 * amplitude / (q * q * q))
            }
            SignalField::RidgeCone { source } => {
                let d = a - source;
                let (v3, v4) = ridge_directions();
                let mut h = DMatrix::zeros(2, 2);
                let nd = d.norm();
                if nd > 0.0 {
                    let dhat = &d / nd;
                    let eye = DMatrix::identity(2, 2);
                    h += (eye - &dhat * dhat.transpose()) * (-0.04 / nd);
                }
                h += &v3 * v3.transpose() * (0.81 * (-0.9 * d.dot(&v3)).exp());
                h += &v4 * v4.transpose() * (0.81 * (0.9 * d.dot(&v4)).exp());
                h
            }
            SignalField::WeightedSum { components, .. } => {
                let m = self.dim();
                let mut h = DMatrix::zeros(m, m);
                for (w, f) in components {
                    h += f.hessian(a)? * *w;
                }
                h
            }
        })
    }

    pub fn from_spec(spec: &FieldSpec) -> Result<Self> {
        spec.build()
    }

    pub fn to_spec(&self) -> FieldSpec {
        match self {
            SignalField::Gaussian {
                amplitude,
                center,
                shape,
            } => FieldSpec::Gaussian {
                amplitude: *amplitude,
                center: center.iter().cloned().collect(),
                shape: (0..shape.nrows())
                    .map(|i| (0..shape.ncols()).map(|j| shape[(i, j)]).collect())
                    .collect(),
            },
            SignalField::SmoothedPowerLaw {
                amplitude,
                center,
                smoothing,
            } => FieldSpec::SmoothedPowerLaw {
                amplitude: *amplitude,
                center: center.iter().cloned().collect(),
                smoothing: *smoothing,
            },
            SignalField::RidgeCone { source } => FieldSpec::RidgeCone {
                source: Some(source.iter().cloned().collect()),
            },
            SignalField::WeightedSum { components, .. } => FieldSpec::WeightedSum {
                components: components
                    .iter()
                    .map(|(w, f)| WeightedComponent {
                        weight: *w,
                        field: f.to_spec(),
                    })
                    .collect(),
            },
        }
    }
}

/// JSON-facing field description: `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum FieldSpec {
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        shape: Vec<Vec<f64>>,
    },
    SmoothedPowerLaw {
        amplitude: f64,
        center: Vec<f64>,
        #[serde(default = "default_smoothing")]
        smoothing: f64,
    },
    RidgeCone {
        #[serde(default)]
        source: Option<Vec<f64>>,
    },
    WeightedSum { components: Vec<WeightedComponent> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedComponent {
    pub weight: f64,
    pub field: FieldSpec,
}

fn default_smoothing() -> f64 {
    1.0
}

impl FieldSpec {
    pub fn build(&self) -> Result<SignalField> {
        match self {
            FieldSpec::Gaussian {
                amplitude,
                center,
                shape,
            } => {
                let m = center.len();
                if shape.len() != m || shape.iter().any(|row| row.len() != m) {
                    return Err(Error::invalid("gaussian shape matrix must be m x m"));
                }
                let flat: Vec<f64> = shape.iter().flatten().cloned().collect();
                SignalField::gaussian(
                    *amplitude,
                    DVector::from_vec(center.clone()),
                    DMatrix::from_row_slice(m, m, &flat),
                )
            }
            FieldSpec::SmoothedPowerLaw {
                amplitude,
                center,
                smoothing,
            } => SignalField::smoothed_power_law(
                *amplitude,
                DVector::from_vec(center.clone()),
                *smoothing,
            ),
            FieldSpec::RidgeCone { source } => match source {
                Some(s) => SignalField::ridge_cone_at(DVector::from_vec(s.clone())),
                None => Ok(SignalField::ridge_cone()),
            },
            FieldSpec::WeightedSum { components } => {
                let mut built = Vec::with_capacity(components.len());
                for c in components {
                    built.push((c.weight, c.field.build()?));
                }
                SignalField::weighted_sum(built)
            }
        }
    }
}

/// Options for the numerical maximum search.
#[derive(Debug, Clone)]
pub struct MaxSearchOptions {
    pub max_iterations: usize,
    /// Convergence when `|grad| <= gradient_tolerance * value`: relative to
    /// the local field value, since `|grad|/value` grows in gaussian tails
    /// and only vanishes at the peak.
    pub gradient_tolerance: f64,
    pub initial_step: f64,
}

impl Default for MaxSearchOptions {
    fn default() -> Self {
        MaxSearchOptions {
            // Ascent on f64 values stalls once per-step improvements drop
            // below one ulp of the field value, which caps the achievable
            // relative gradient norm near 1e-8.
            max_iterations: 20_000,
            gradient_tolerance: 1e-8,
            initial_step: 1.0,
        }
    }
}

/// Outcome of a gradient-ascent maximum search.
#[derive(Debug, Clone)]
pub struct MaximumSearch {
    pub location: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    /// True when the gradient norm fell below the tolerance.
    pub converged: bool,
    /// True when the iterate was clamped to the search box.
    pub hit_boundary: bool,
    pub iterations: usize,
}

/// Gradient ascent with backtracking line search, optionally clamped to an
/// axis-aligned box. Reports honestly when it stalls on the box boundary or
/// runs out of iterations (fields without interior critical points do that).
pub fn locate_maximum(
    field: &SignalField,
    start: &DVector<f64>,
    bbox: Option<(&DVector<f64>, &DVector<f64>)>,
    opts: &MaxSearchOptions,
) -> Result<MaximumSearch> {
    let clamp = |p: &DVector<f64>| -> (DVector<f64>, bool) {
        match bbox {
            None => (p.clone(), false),
            Some((lo, hi)) => {
                let mut q = p.clone();
                let mut hit = false;
                for i in 0..q.len() {
                    if q[i] < lo[i] {
                        q[i] = lo[i];
                        hit = true;
                    }
                    if q[i] > hi[i] {
                        q[i] = hi[i];
                        hit = true;
                    }
                }
                (q, hit)
            }
        }
    };

    let (mut p, mut hit_boundary) = clamp(start);
    let mut value = field.eval(&p)?;
    let mut step = opts.initial_step;
    let mut iterations = 0;
    let threshold =
        |value: f64| opts.gradient_tolerance * value.abs().max(f64::MIN_POSITIVE);
    loop {
        let g = field.gradient(&p)?;
        let gn = g.norm();
        if gn <= threshold(value) || iterations >= opts.max_iterations {
            return Ok(MaximumSearch {
                location: p,
                value,
                gradient_norm: gn,
                converged: gn <= threshold(value),
                hit_boundary,
                iterations,
            });
        }
        // Backtracking along the gradient.
        let mut advanced = false;
        for _ in 0..60 {
            let (cand, hit) = clamp(&(&p + &g * (step / gn)));
            let cand_val = field.eval(&cand)?;
            if cand_val > value {
                if (&cand - &p).norm() == 0.0 {
                    // Clamped in place: stuck on the boundary.
                    break;
                }
                p = cand;
                value = cand_val;
                hit_boundary = hit;
                step *= 1.3;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            let g = field.gradient(&p)?;
            let gn = g.norm();
            return Ok(MaximumSearch {
                location: p,
                value,
                gradient_norm: gn,
                converged: gn <= threshold(value),
                hit_boundary,
                iterations,
            });
        }
        iterations += 1;
    }
}
