//! Shared oracles and generators for the integration suites.
//!
//! Everything here is independent of the library code paths it checks:
//! derivatives come from central differences of `eval`, region bounds from a
//! raw dense scan, statistics from per-robot terms.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use swarmseek::deployment::Deployment;
use swarmseek::field::SignalField;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn vec2(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![x, y])
}

/// Central-difference gradient of `eval` (independent of `field.gradient`).
pub fn fd_gradient(field: &SignalField, p: &DVector<f64>, h: f64) -> DVector<f64> {
    let m = p.len();
    let mut g = DVector::zeros(m);
    for i in 0..m {
        let mut pp = p.clone();
        let mut pm = p.clone();
        pp[i] += h;
        pm[i] -= h;
        g[i] = (field.eval(&pp).unwrap() - field.eval(&pm).unwrap()) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of the analytic gradient: the Hessian oracle.
pub fn fd_hessian(field: &SignalField, p: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = p.len();
    let mut hess = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut pp = p.clone();
        let mut pm = p.clone();
        pp[j] += h;
        pm[j] -= h;
        let col = (field.gradient(&pp).unwrap() - field.gradient(&pm).unwrap()) / (2.0 * h);
        for i in 0..m {
            hess[(i, j)] = col[i];
        }
    }
    hess
}

pub fn rel_scalar(got: f64, want: f64) -> f64 {
    let s = got.abs().max(want.abs());
    if s == 0.0 {
        0.0
    } else {
        (got - want).abs() / s
    }
}

/// A random smooth test field (gaussian, power law, or a two-gaussian sum)
/// with its center region roughly inside [-5, 5]^2.
pub fn random_field(rng: &mut ChaCha8Rng) -> SignalField {
    let kind = rng.random_range(0..3u8);
    let center = vec2(uniform(rng, -3.0, 3.0), uniform(rng, -3.0, 3.0));
    match kind {
        0 => {
            let w1 = uniform(rng, 2.0, 6.0);
            let w2 = uniform(rng, 2.0, 6.0);
            let rot = uniform(rng, 0.0, std::f64::consts::PI);
            let (s, c) = rot.sin_cos();
            let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let diag = DMatrix::from_row_slice(
                2,
                2,
                &[1.0 / (w1 * w1), 0.0, 0.0, 1.0 / (w2 * w2)],
            );
            let shape = &r * diag * r.transpose();
            SignalField::gaussian(uniform(rng, 0.5, 3.0), center, shape).unwrap()
        }
        1 => SignalField::smoothed_power_law(
            uniform(rng, 1.0, 5.0),
            center,
            uniform(rng, 1.0, 3.0),
        )
        .unwrap(),
        _ => {
            let a = SignalField::gaussian(
                uniform(rng, 1.0, 3.0),
                center.clone(),
                DMatrix::identity(2, 2) / uniform(rng, 6.0, 30.0),
            )
            .unwrap();
            let b = SignalField::gaussian(
                uniform(rng, 0.1, 0.4),
                vec2(
                    center[0] + uniform(rng, -1.0, 1.0),
                    center[1] + uniform(rng, -1.0, 1.0),
                ),
                DMatrix::identity(2, 2) / uniform(rng, 3.0, 10.0),
            )
            .unwrap();
            SignalField::weighted_sum(vec![(1.0, a), (1.0, b)]).unwrap()
        }
    }
}

/// Random non-degenerate deployment of `n` robots with `D` rescaled to
/// exactly `radius`.
pub fn random_deployment(
    rng: &mut ChaCha8Rng,
    dim: usize,
    n: usize,
    radius: f64,
) -> Deployment {
    loop {
        let offsets: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                DVector::from_iterator(dim, (0..dim).map(|_| uniform(rng, -1.0, 1.0)))
            })
            .collect();
        let d = Deployment::new(offsets).unwrap();
        let max = d.max_radius();
        if max == 0.0 {
            continue;
        }
        let scale = radius / max;
        let d = d
            .affine_transform(&(DMatrix::identity(dim, dim) * scale))
            .unwrap();
        if d.is_non_degenerate(1e-6) {
            return d;
        }
    }
}

/// Random orthogonal matrix from the QR of a gaussian-ish random matrix,
/// sign-fixed so the diagonal of R is positive.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_iterator(
            m,
            m,
            (0..m * m).map(|_| uniform(rng, -1.0, 1.0)),
        );
        let qr = a.clone().qr();
        let mut q = qr.q();
        let r = qr.r();
        if (0..m).any(|i| r[(i, i)].abs() < 1e-3) {
            continue;
        }
        for j in 0..m {
            if r[(j, j)] < 0.0 {
                for i in 0..m {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        return q;
    }
}

/// Signed angle of `direction` relative to `reference` with its Monte-Carlo
/// standard error, from the per-robot terms `y_i = (ref_dir . x_i) x_i` that
/// average to the first-order direction. Valid for small angles (2D).
pub fn first_order_angle_and_se(deployment: &Deployment, grad: &DVector<f64>) -> (f64, f64) {
    assert_eq!(deployment.dim(), 2);
    let g = grad / grad.norm();
    let n_hat = vec2(-g[1], g[0]);
    let mut num = Vec::with_capacity(deployment.len());
    let mut den = Vec::with_capacity(deployment.len());
    for x in deployment.offsets() {
        let w = grad.dot(x);
        num.push(w * n_hat.dot(x));
        den.push(w * g.dot(x));
    }
    let n = num.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let angle = mean(&num).atan2(mean(&den));
    let se = sd(&num) / (n.sqrt() * mean(&den).abs());
    (angle, se)
}

/// Raw dense scan of gradient/Hessian bounds over a 2D annulus: the
/// region-bounds oracle, kept free of the library's sampling code.
pub fn annulus_scan_oracle(
    field: &SignalField,
    center: &DVector<f64>,
    inner: f64,
    outer: f64,
    res: usize,
) -> (f64, f64, f64) {
    let mut k_min = f64::INFINITY;
    let mut k_max: f64 = 0.0;
    let mut h_max: f64 = 0.0;
    for i in 0..res {
        let r = inner + (outer - inner) * (i as f64) / ((res - 1) as f64);
        for k in 0..res {
            let th = 2.0 * std::f64::consts::PI * (k as f64) / (res as f64);
            let p = vec2(center[0] + r * th.cos(), center[1] + r * th.sin());
            let g = field.gradient(&p).unwrap().norm();
            k_min = k_min.min(g);
            k_max = k_max.max(g);
            let h = field.hessian(&p).unwrap();
            let spec = h
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(0.0f64, |a, &l| a.max(l.abs()));
            h_max = h_max.max(spec);
        }
    }
    (k_min, k_max, h_max / 2.0)
}
