//! Swarm deployments: robot offsets around the centroid.
//!
//! A deployment is non-degenerate when the offsets span the ambient space,
//! which is what makes the first-order direction always-ascending. The shape
//! matrix `P = sum x_i x_i^T` carries everything the ascent analysis needs:
//! its eigenvalues drive conditioning and certificates, and `P` proportional
//! to the identity (regular polygons and polyhedra, symmetric densities)
//! aligns the first-order direction with the gradient.

mod density;

pub use density::{sample_density, Density, DensitySpec, Polynomial, Shape, Term};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::{Error, Result};

/// Default eigenvalue-ratio threshold for non-degeneracy checks.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Centered robot offsets `x_i` with a fixed ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    offsets: Vec<DVector<f64>>,
    dim: usize,
}

impl Deployment {
    /// Build from offsets; re-centers so the offsets sum to zero.
    pub fn new(mut offsets: Vec<DVector<f64>>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::EmptyInput("deployment needs at least one robot"));
        }
        let dim = offsets[0].len();
        if !(2..=3).contains(&dim) {
            return Err(Error::invalid("deployment dimension must be 2 or 3"));
        }
        if offsets.iter().any(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: offsets.iter().find(|x| x.len() != dim).unwrap().len(),
            });
        }
        let mut mean = DVector::zeros(dim);
        for x in &offsets {
            mean += x;
        }
        mean /= offsets.len() as f64;
        for x in &mut offsets {
            *x -= &mean;
        }
        Ok(Deployment { offsets, dim })
    }

    /// Split absolute positions into centroid and centered offsets.
    pub fn from_positions(positions: &[DVector<f64>]) -> Result<(DVector<f64>, Self)> {
        if positions.is_empty() {
            return Err(Error::EmptyInput("no robot positions given"));
        }
        let dim = positions[0].len();
        let mut centroid = DVector::zeros(dim);
        for p in positions {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            centroid += p;
        }
        centroid /= positions.len() as f64;
        let offsets = positions.iter().map(|p| p - &centroid).collect();
        Ok((centroid, Deployment::new(offsets)?))
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offsets(&self) -> &[DVector<f64>] {
        &self.offsets
    }

    /// Swarm radius scale `D = max_i |x_i|`.
    pub fn max_radius(&self) -> f64 {
        self.offsets
            .iter()
            .map(|x| x.norm())
            .fold(0.0f64, f64::max)
    }

    /// `P = sum x_i x_i^T` with its eigendecomposition.
    pub fn shape_matrix(&self) -> ShapeMatrix {
        let mut p = DMatrix::zeros(self.dim, self.dim);
        for x in &self.offsets {
            p += x * x.transpose();
        }
        let mut eigenvalues: Vec<f64> = p.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ShapeMatrix {
            matrix: p,
            eigenvalues: DVector::from_vec(eigenvalues),
        }
    }

    /// True when the offsets span the ambient space:
    /// `lambda_min > tol * lambda_max` with `lambda_max > 0`.
    pub fn is_non_degenerate(&self, tol: f64) -> bool {
        let sm = self.shape_matrix();
        let lmax = sm.lambda_max();
        lmax > 0.0 && sm.lambda_min() > tol * lmax
    }

    /// Apply `A` to every offset. Centering is preserved (A is linear).
    pub fn affine_transform(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != self.dim || a.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: a.nrows(),
            });
        }
        Ok(Deployment {
            offsets: self.offsets.iter().map(|x| a * x).collect(),
            dim: self.dim,
        })
    }

    /// Keep the offsets selected by `mask` (alive robots), re-centered.
    pub fn masked(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: mask.len(),
            });
        }
        let kept: Vec<DVector<f64>> = self
            .offsets
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| x.clone())
            .collect();
        Deployment::new(kept)
    }

    /// Discrete second moments (2D): the Monte-Carlo estimates of the density
    /// integrals that decide whether the first-order direction is parallel to
    /// the gradient.
    pub fn moments(&self) -> Result<MomentReport> {
        if self.dim != 2 {
            return Err(Error::invalid("moment reports are defined for 2D deployments"));
        }
        let n = self.len() as f64;
        let mut xy = Vec::with_capacity(self.len());
        let mut diff = Vec::with_capacity(self.len());
        let mut xx = Vec::with_capacity(self.len());
        let mut yy = Vec::with_capacity(self.len());
        for o in &self.offsets {
            xy.push(o[0] * o[1]);
            diff.push(o[0] * o[0] - o[1] * o[1]);
            xx.push(o[0] * o[0]);
            yy.push(o[1] * o[1]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let se = |v: &[f64]| {
            if v.len() < 2 {
                return 0.0;
            }
            let m = mean(v);
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Ok(MomentReport {
            m_xy: mean(&xy),
            m_diff: mean(&diff),
            var_x: mean(&xx),
            var_y: mean(&yy),
            se_m_xy: se(&xy),
            se_m_diff: se(&diff),
            se_var_x: se(&xx),
            se_var_y: se(&yy),
            n: self.len(),
        })
    }

    /// CSV export, one row per robot.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(if self.dim == 2 { "x,y\n" } else { "x,y,z\n" });
        for o in &self.offsets {
            let row: Vec<String> = o.iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// CSV import. Rows are robot positions (or offsets); the result is
    /// re-centered either way and the mean returned as centroid.
    pub fn from_csv(text: &str) -> Result<(DVector<f64>, Self)> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            ok_header(line, lineno, &mut rows)?;
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput("CSV contains no robot rows"));
        }
        Deployment::from_positions(&rows)
    }

    pub fn to_json(&self) -> DeploymentSpec {
        DeploymentSpec {
            offsets: self
                .offsets
                .iter()
                .map(|o| o.iter().cloned().collect())
                .collect(),
        }
    }
}

fn ok_header(line: &str, lineno: usize, rows: &mut Vec<DVector<f64>>) -> Result<()> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let parsed: std::result::Result<Vec<f64>, _> =
        fields.iter().map(|f| f.parse::<f64>()).collect();
    match parsed {
        Ok(vals) => {
            rows.push(DVector::from_vec(vals));
            Ok(())
        }
        Err(_) if lineno == 0 => Ok(()), // header row
        Err(_) => Err(Error::invalid(format!(
            "CSV line {} is not numeric: {line:?}",
            lineno + 1
        ))),
    }
}

/// JSON-facing deployment: `{"offsets": [[x, y], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploymentSpec {
    pub offsets: Vec<Vec<f64>>,
}

impl DeploymentSpec {
    pub fn build(&self) -> Result<Deployment> {
        Deployment::new(
            self.offsets
                .iter()
                .map(|o| DVector::from_vec(o.clone()))
                .collect(),
        )
    }
}

/// `P = sum x_i x_i^T` with eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct ShapeMatrix {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl ShapeMatrix {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// Numerical rank: eigenvalues above `tol * lambda_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let lmax = self.lambda_max();
        if lmax <= 0.0 {
            return 0;
        }
        self.eigenvalues.iter().filter(|&&l| l > tol * lmax).count()
    }
}

/// Discrete second moments of a 2D deployment with estimator standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    /// `mean(X Y)` — must vanish for gradient alignment.
    pub m_xy: f64,
    /// `mean(X^2 - Y^2)` — must vanish for gradient alignment.
    pub m_diff: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub se_m_xy: f64,
    pub se_m_diff: f64,
    pub se_var_x: f64,
    pub se_var_y: f64,
    pub n: usize,
}

impl fmt::Display for MomentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n        {}", self.n)?;
        writeln!(f, "m_xy     {:>14.6e}  (se {:.3e})", self.m_xy, self.se_m_xy)?;
        writeln!(
            f,
            "m_diff   {:>14.6e}  (se {:.3e})",
            self.m_diff, self.se_m_diff
        )?;
        writeln!(
            f,
            "var_x    {:>14.6e}  (se {:.3e})",
            self.var_x, self.se_var_x
        )?;
        write!(
            f,
            "var_y    {:>14.6e}  (se {:.3e})",
            self.var_y, self.se_var_y
        )
    }
}

/// Vertices of a regular N-gon of given circumradius, starting at `phase`.
pub fn regular_polygon(n: usize, radius: f64, phase: f64) -> Result<Deployment> {
    if n < 3 {
        return Err(Error::invalid("regular polygon needs at least 3 vertices"));
    }
    if radius <= 0.0 {
        return Err(Error::invalid("polygon radius must be positive"));
    }
    let offsets = (0..n)
        .map(|i| {
            let th = phase + 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
            DVector::from_vec(vec![radius * th.cos(), radius * th.sin()])
        })
        .collect();
    Deployment::new(offsets)
}

/// The five regular polyhedra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolyhedronKind {
    Tetrahedron,
    Octahedron,
    Cube,
    Icosahedron,
    Dodecahedron,
}

impl std::str::FromStr for PolyhedronKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tetrahedron" => Ok(PolyhedronKind::Tetrahedron),
            "octahedron" => Ok(PolyhedronKind::Octahedron),
            "cube" => Ok(PolyhedronKind::Cube),
            "icosahedron" => Ok(PolyhedronKind::Icosahedron),
            "dodecahedron" => Ok(PolyhedronKind::Dodecahedron),
            other => Err(Error::invalid(format!("unknown polyhedron kind {other:?}"))),
        }
    }
}

/// Vertices of a regular polyhedron scaled to the given circumradius.
///
/// Standard vertex coordinates in a fixed orientation; any rotation works
/// because `P = (N r^2 / 3) I` for all of them.
pub fn regular_polyhedron(kind: PolyhedronKind, radius: f64) -> Result<Deployment> {
    if radius <= 0.0 {
        return Err(Error::invalid("polyhedron radius must be positive"));
    }
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let verts: Vec<[f64; 3]> = match kind {
        PolyhedronKind::Tetrahedron => vec![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ],
        PolyhedronKind::Octahedron => vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ],
        PolyhedronKind::Cube => {
            let mut v = Vec::with_capacity(8);
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        v.push([sx, sy, sz]);
                    }
                }
            }
            v
        }
        PolyhedronKind::Icosahedron => {
            let mut v = Vec::with_capacity(12);
            for s1 in [-1.0, 1.0] {
                for s2 in [-1.0, 1.0] {
                    v.push([0.0, s1, s2 * phi]);
                    v.push([s1, s2 * phi, 0.0]);
                    v.push([s2 * phi, 0.0, s1]);
                }
            }
            v
        }
        PolyhedronKind::Dodecahedron => {
            let mut v = Vec::with_capacity(20);
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        v.push([sx, sy, sz]);
                    }
                }
            }
            let inv = 1.0 / phi;
            for s1 in [-1.0, 1.0] {
                for s2 in [-1.0, 1.0] {
                    v.push([0.0, s1 * inv, s2 * phi]);
                    v.push([s1 * inv, s2 * phi, 0.0]);
                    v.push([s2 * phi, 0.0, s1 * inv]);
                }
            }
            v
        }
    };
    let offsets = verts
        .into_iter()
        .map(|v| {
            let x = DVector::from_vec(v.to_vec());
            let n = x.norm();
            x * (radius / n)
        })
        .collect();
    Deployment::new(offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    #[test]
    fn from_positions_square() {
        let pos = vec![vec2(0.0, 0.0), vec2(2.0, 0.0), vec2(0.0, 2.0), vec2(2.0, 2.0)];
        let (c, d) = Deployment::from_positions(&pos).unwrap();
        assert_eq!(c, vec2(1.0, 1.0));
        let want = [vec2(-1.0, -1.0), vec2(1.0, -1.0), vec2(-1.0, 1.0), vec2(1.0, 1.0)];
        for (o, w) in d.offsets().iter().zip(&want) {
            assert_eq!(o, w);
        }
    }

    #[test]
    fn single_robot_is_degenerate() {
        let (c, d) = Deployment::from_positions(&[vec2(5.0, 5.0)]).unwrap();
        assert_eq!(c, vec2(5.0, 5.0));
        assert_eq!(d.offsets()[0], vec2(0.0, 0.0));
        assert!(!d.is_non_degenerate(DEGENERACY_TOL));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            Deployment::from_positions(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn collinear_offsets_degenerate() {
        let d = Deployment::new(vec![vec2(-1.0, 0.0), vec2(0.0, 0.0), vec2(1.0, 0.0)]).unwrap();
        assert!(!d.is_non_degenerate(DEGENERACY_TOL));
        assert_eq!(d.shape_matrix().rank(DEGENERACY_TOL), 1);
    }

    #[test]
    fn square_corners_non_degenerate() {
        let d = Deployment::new(vec![
            vec2(-1.0, -1.0),
            vec2(1.0, -1.0),
            vec2(-1.0, 1.0),
            vec2(1.0, 1.0),
        ])
        .unwrap();
        assert!(d.is_non_degenerate(DEGENERACY_TOL));
    }

    #[test]
    fn seventeen_gon_has_equal_eigenvalues() {
        let d = regular_polygon(17, 3.0, 0.4).unwrap();
        assert!(d.is_non_degenerate(DEGENERACY_TOL));
        let sm = d.shape_matrix();
        let want = 17.0 * 9.0 / 2.0;
        assert!((sm.lambda_min() - want).abs() < 1e-9 * want);
        assert!((sm.lambda_max() - want).abs() < 1e-9 * want);
    }

    #[test]
    fn square_from_polygon_constructor() {
        let d = regular_polygon(4, 2.0f64.sqrt(), std::f64::consts::FRAC_PI_4).unwrap();
        let mut got: Vec<(i32, i32)> = d
            .offsets()
            .iter()
            .map(|o| (o[0].round() as i32, o[1].round() as i32))
            .collect();
        got.sort_unstable();
        assert_eq!(got, vec![(-1, -1), (-1, 1), (1, -1), (1, 1)]);
        for o in d.offsets() {
            assert!((o[0].abs() - 1.0).abs() < 1e-12 && (o[1].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_vertices() {
        let d = regular_polygon(3, 1.0, std::f64::consts::FRAC_PI_2).unwrap();
        let o = d.offsets();
        assert!((o[0][0]).abs() < 1e-12 && (o[0][1] - 1.0).abs() < 1e-12);
        assert!((o[1][0] + 3.0f64.sqrt() / 2.0).abs() < 1e-12 && (o[1][1] + 0.5).abs() < 1e-12);
        assert!((o[2][0] - 3.0f64.sqrt() / 2.0).abs() < 1e-12 && (o[2][1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn polygon_needs_three_vertices() {
        assert!(regular_polygon(2, 1.0, 0.0).is_err());
    }

    #[test]
    fn tetrahedron_standard_coordinates() {
        let d = regular_polyhedron(PolyhedronKind::Tetrahedron, 3.0f64.sqrt()).unwrap();
        assert_eq!(d.len(), 4);
        for o in d.offsets() {
            assert!((o.norm() - 3.0f64.sqrt()).abs() < 1e-12);
            // even parity corners of the cube
            let prod: f64 = o.iter().product();
            assert!(prod > 0.0);
        }
    }

    #[test]
    fn cube_vertices() {
        let d = regular_polyhedron(PolyhedronKind::Cube, 3.0f64.sqrt()).unwrap();
        assert_eq!(d.len(), 8);
        for o in d.offsets() {
            for c in o.iter() {
                assert!((c.abs() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn polyhedra_shape_matrices_are_isotropic() {
        for kind in [
            PolyhedronKind::Tetrahedron,
            PolyhedronKind::Octahedron,
            PolyhedronKind::Cube,
            PolyhedronKind::Icosahedron,
            PolyhedronKind::Dodecahedron,
        ] {
            let r = 1.7;
            let d = regular_polyhedron(kind, r).unwrap();
            let sm = d.shape_matrix();
            let want = d.len() as f64 * r * r / 3.0;
            assert!(
                (sm.lambda_min() - want).abs() < 1e-9 * want,
                "{kind:?}: {} vs {want}",
                sm.lambda_min()
            );
            assert!((sm.lambda_max() - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn affine_identity_is_noop() {
        let d = regular_polygon(5, 1.0, 0.0).unwrap();
        let e = d.affine_transform(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(d, e);
    }

    #[test]
    fn affine_diag_stretches_square() {
        let d = Deployment::new(vec![
            vec2(-1.0, -1.0),
            vec2(1.0, -1.0),
            vec2(-1.0, 1.0),
            vec2(1.0, 1.0),
        ])
        .unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let e = d.affine_transform(&a).unwrap();
        for o in e.offsets() {
            assert!((o[0].abs() - 2.0).abs() < 1e-15 && (o[1].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn moments_of_square_vanish() {
        let d = Deployment::new(vec![
            vec2(-1.0, -1.0),
            vec2(1.0, -1.0),
            vec2(-1.0, 1.0),
            vec2(1.0, 1.0),
        ])
        .unwrap();
        let m = d.moments().unwrap();
        assert_eq!(m.m_xy, 0.0);
        assert_eq!(m.m_diff, 0.0);
    }

    #[test]
    fn moments_of_rectangle_corners() {
        let (a, b) = (3.0, 1.5);
        let d = Deployment::new(vec![vec2(a, b), vec2(-a, b), vec2(-a, -b), vec2(a, -b)]).unwrap();
        let m = d.moments().unwrap();
        assert_eq!(m.m_xy, 0.0);
        assert!((m.m_diff - (a * a - b * b)).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let d = regular_polygon(6, 2.0, 0.1).unwrap();
        let text = d.to_csv();
        let (c, back) = Deployment::from_csv(&text).unwrap();
        assert!(c.norm() < 1e-12);
        for (o, b) in d.offsets().iter().zip(back.offsets()) {
            assert!((o - b).norm() < 1e-12);
        }
    }

    #[test]
    fn masked_drops_dead_robots() {
        let d = regular_polygon(4, 1.0, 0.0).unwrap();
        let kept = d.masked(&[true, false, true, true]).unwrap();
        assert_eq!(kept.len(), 3);
        let mut sum = DVector::zeros(2);
        for o in kept.offsets() {
            sum += o;
        }
        assert!(sum.norm() < 1e-12);
    }
}
