//! Deterministic single-integrator swarm simulator.
//!
//! Every robot tracks the common unit velocity `L/|L|` computed from the
//! field readings of the robots still alive, possibly rotated by per-robot
//! actuator noise, plus a shape-correction term that is only active while a
//! morph is in progress. Explicit Euler, seeded and bitwise reproducible.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ascent::{sampled_direction_from_readings, UNRELIABLE_SCALE};
use crate::deployment::{sample_density, DensitySpec, Deployment, DEGENERACY_TOL};
use crate::field::{FieldSpec, SignalField};
use crate::{Error, Result};

/// Default actuator-noise resampling period (time units).
pub const DEFAULT_NOISE_PERIOD: f64 = 0.2;
/// Steps a run may coast on the last valid direction after the alive
/// deployment degenerates, before aborting.
pub const DEGENERATE_GRACE_STEPS: usize = 10;

/// Actuator noise: every `period` time units each robot redraws a deviation
/// angle uniform in `[-max_deviation, +max_deviation]` (radians) and tracks
/// the commanded direction rotated by it until the next redraw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub period: f64,
    pub max_deviation: f64,
}

/// Robot failure model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DeathModel {
    #[default]
    None,
    /// Independent Bernoulli trial per alive robot per noise period.
    PerPeriod { prob: f64 },
    /// Scripted death instants per robot index.
    Scripted { times: Vec<ScriptedDeath> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedDeath {
    pub robot: usize,
    pub time: f64,
}

/// What a morph event steers the reference deployment towards.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MorphTarget {
    /// Reference offsets become `A * x_ref0` (the original reference).
    Affine { matrix: Vec<Vec<f64>> },
    /// Reference offsets are re-sampled from a density (same robot count).
    Density { spec: DensitySpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorphEvent {
    pub time: f64,
    pub target: MorphTarget,
    pub duration: f64,
}

/// Timed disturbances of a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventSchedule {
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub deaths: DeathModel,
    #[serde(default)]
    pub morphs: Vec<MorphEvent>,
}

/// Stop condition: time horizon plus the epsilon ball around the source.
/// When `epsilon` is absent the ball radius is `2 * D` of the current alive
/// deployment (the direction loses meaning once the centroid is within the
/// swarm's own scale of the source).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopCondition {
    pub max_time: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

/// Passive scenario geometry; obstacles exert no forces, clearance is
/// checked after the fact and reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Initial robot placement: explicit offsets or a sampled density.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialDeployment {
    Offsets { offsets: Vec<Vec<f64>> },
    Density { density: DensitySpec },
}

/// JSON-facing run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfigSpec {
    pub field: FieldSpec,
    /// Initial centroid position.
    pub start: Vec<f64>,
    pub deployment: InitialDeployment,
    #[serde(default)]
    pub schedule: EventSchedule,
    pub dt: f64,
    pub seed: u64,
    pub stop: StopCondition,
    #[serde(default = "default_morph_gain")]
    pub morph_gain: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub robot_dump_every: Option<usize>,
}

fn default_morph_gain() -> f64 {
    1.0
}

fn default_log_every() -> usize {
    1
}

impl SimConfigSpec {
    pub fn build(&self) -> Result<SimConfig> {
        let field = self.field.build()?;
        let deployment = match &self.deployment {
            InitialDeployment::Offsets { offsets } => Deployment::new(
                offsets
                    .iter()
                    .map(|o| DVector::from_vec(o.clone()))
                    .collect(),
            )?,
            InitialDeployment::Density { density } => sample_density(density)?,
        };
        SimConfig::new(
            field,
            DVector::from_vec(self.start.clone()),
            deployment,
            self.schedule.clone(),
            self.dt,
            self.seed,
            self.stop.clone(),
            self.morph_gain,
            self.obstacles.clone(),
            self.log_every,
        )
    }
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub field: SignalField,
    pub start: DVector<f64>,
    pub deployment: Deployment,
    pub schedule: EventSchedule,
    pub dt: f64,
    pub seed: u64,
    pub stop: StopCondition,
    pub morph_gain: f64,
    pub obstacles: Vec<Obstacle>,
    pub log_every: usize,
    noise_steps: usize,
    morph_targets: Vec<MorphKind>,
}

#[derive(Debug, Clone)]
enum MorphKind {
    Affine(DMatrix<f64>),
    Density(DensitySpec),
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl SimConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        field: SignalField,
        start: DVector<f64>,
        deployment: Deployment,
        schedule: EventSchedule,
        dt: f64,
        seed: u64,
        stop: StopCondition,
        morph_gain: f64,
        obstacles: Vec<Obstacle>,
        log_every: usize,
    ) -> Result<Self> {
        let m = field.dim();
        if start.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: start.len(),
            });
        }
        if deployment.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: deployment.dim(),
            });
        }
        if deployment.len() <= m {
            return Err(Error::invalid(format!(
                "a non-degenerate deployment needs more robots than dimensions (N = {}, m = {m})",
                deployment.len()
            )));
        }
        if !positive(dt) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !positive(stop.max_time) {
            return Err(Error::invalid("max_time must be positive"));
        }
        if let Some(eps) = stop.epsilon {
            if !positive(eps) {
                return Err(Error::invalid("stop epsilon must be positive"));
            }
        }
        if log_every == 0 {
            return Err(Error::invalid("log_every must be at least 1"));
        }
        let period = match &schedule.noise {
            Some(n) => {
                if !positive(n.period) || n.max_deviation < 0.0 {
                    return Err(Error::invalid(
                        "noise needs a positive period and nonnegative deviation",
                    ));
                }
                n.period
            }
            None => DEFAULT_NOISE_PERIOD,
        };
        let steps = period / dt;
        let noise_steps = steps.round() as usize;
        if noise_steps == 0 || (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::invalid(
                "the noise period must be an integer multiple of dt",
            ));
        }
        if let DeathModel::PerPeriod { prob } = &schedule.deaths {
            if !(0.0..=1.0).contains(prob) {
                return Err(Error::invalid("death probability must lie in [0, 1]"));
            }
        }
        if let DeathModel::Scripted { times } = &schedule.deaths {
            for s in times {
                if s.time < 0.0 {
                    return Err(Error::invalid("scripted death times must be nonnegative"));
                }
                if s.robot >= deployment.len() {
                    return Err(Error::invalid(format!(
                        "scripted death for robot {} out of range",
                        s.robot
                    )));
                }
            }
        }
        let mut last = -1.0;
        let mut morph_targets = Vec::with_capacity(schedule.morphs.len());
        for e in &schedule.morphs {
            if e.time < 0.0 || e.time < last {
                return Err(Error::invalid(
                    "morph event times must be nonnegative and sorted",
                ));
            }
            if !positive(e.duration) {
                return Err(Error::invalid("morph duration must be positive"));
            }
            last = e.time;
            match &e.target {
                MorphTarget::Affine { matrix } => {
                    if matrix.len() != m || matrix.iter().any(|r| r.len() != m) {
                        return Err(Error::invalid("morph matrix must be m x m"));
                    }
                    let flat: Vec<f64> = matrix.iter().flatten().cloned().collect();
                    let a = DMatrix::from_row_slice(m, m, &flat);
                    if a.determinant().abs() < 1e-12 {
                        return Err(Error::SingularMorphTarget);
                    }
                    morph_targets.push(MorphKind::Affine(a));
                }
                MorphTarget::Density { spec } => {
                    if spec.n != deployment.len() {
                        return Err(Error::invalid(
                            "density morph target must keep the robot count",
                        ));
                    }
                    morph_targets.push(MorphKind::Density(spec.clone()));
                }
            }
        }
        Ok(SimConfig {
            field,
            start,
            deployment,
            schedule,
            dt,
            seed,
            stop,
            morph_gain,
            obstacles,
            log_every,
            noise_steps,
            morph_targets,
        })
    }
}

/// What the common controller decides for one step.
#[derive(Debug, Clone)]
pub enum ControlDecision {
    /// Track this unit vector.
    Move(DVector<f64>),
    /// The sampled direction is unreliable (the centroid sits where the
    /// readings balance out): stop and flag arrival.
    StopArrived,
}

/// The common velocity: `L/|L|` from the alive robots' readings, or a stop
/// flag when `|L|` falls below `UNRELIABLE_SCALE * max|reading| / D`.
pub fn controller(
    readings: &[f64],
    alive_deployment: &Deployment,
) -> Result<ControlDecision> {
    let l = sampled_direction_from_readings(readings, alive_deployment)?;
    let scale = readings
        .iter()
        .fold(0.0f64, |a, r| a.max(r.abs()))
        .max(f64::MIN_POSITIVE);
    let norm = l.norm();
    if norm < UNRELIABLE_SCALE * scale / alive_deployment.max_radius() {
        return Ok(ControlDecision::StopArrived);
    }
    Ok(ControlDecision::Move(l / norm))
}

/// Mutable simulation state between steps.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    pub positions: Vec<DVector<f64>>,
    pub alive: Vec<bool>,
    noise_angles: Vec<f64>,
    noise_axes: Vec<DVector<f64>>,
    x_ref0: Vec<DVector<f64>>,
    x_ref: Vec<DVector<f64>>,
    morph_from: Vec<DVector<f64>>,
    morph_target: Vec<DVector<f64>>,
    active_morph: Option<(f64, f64)>, // (start time, duration)
    pending: VecDeque<usize>,
    /// Set at the first morph activation; the correction gain then stays on
    /// so the reference shape is actually reached and held. Until then the
    /// dynamics are the pure common velocity.
    corrections_on: bool,
    rng: ChaCha8Rng,
    last_direction: Option<DVector<f64>>,
    degenerate_streak: usize,
    scripted_done: Vec<bool>,
}

impl SimState {
    pub fn new(config: &SimConfig) -> Self {
        let offsets = config.deployment.offsets().to_vec();
        let positions = offsets.iter().map(|x| &config.start + x).collect();
        let n = offsets.len();
        let scripted_len = match &config.schedule.deaths {
            DeathModel::Scripted { times } => times.len(),
            _ => 0,
        };
        SimState {
            t: 0.0,
            step: 0,
            positions,
            alive: vec![true; n],
            noise_angles: vec![0.0; n],
            noise_axes: vec![DVector::zeros(config.field.dim()); n],
            x_ref0: offsets.clone(),
            x_ref: offsets.clone(),
            morph_from: offsets.clone(),
            morph_target: offsets,
            active_morph: None,
            pending: (0..config.schedule.morphs.len()).collect(),
            corrections_on: false,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            last_direction: None,
            degenerate_streak: 0,
            scripted_done: vec![false; scripted_len],
        }
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    /// Centroid of the alive robots, recomputed from positions.
    pub fn centroid(&self) -> Result<DVector<f64>> {
        let n = self.alive_count();
        if n == 0 {
            return Err(Error::AllRobotsDead);
        }
        let dim = self.positions[0].len();
        let mut c = DVector::zeros(dim);
        for (p, &a) in self.positions.iter().zip(&self.alive) {
            if a {
                c += p;
            }
        }
        Ok(c / n as f64)
    }

    /// Alive offsets as a deployment (re-centered), plus the centroid.
    pub fn alive_deployment(&self) -> Result<(DVector<f64>, Deployment)> {
        let alive: Vec<DVector<f64>> = self
            .positions
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(p, _)| p.clone())
            .collect();
        if alive.is_empty() {
            return Err(Error::AllRobotsDead);
        }
        Deployment::from_positions(&alive)
    }

    fn resample_noise(&mut self, config: &SimConfig, max_dev: f64) {
        let dim = config.field.dim();
        for i in 0..self.noise_angles.len() {
            self.noise_angles[i] = -max_dev + 2.0 * max_dev * self.rng.random::<f64>();
            if dim == 3 {
                // Uniform direction for the rotation plane.
                loop {
                    let v = DVector::from_vec(vec![
                        2.0 * self.rng.random::<f64>() - 1.0,
                        2.0 * self.rng.random::<f64>() - 1.0,
                        2.0 * self.rng.random::<f64>() - 1.0,
                    ]);
                    let n2 = v.norm_squared();
                    if n2 > 1e-12 && n2 <= 1.0 {
                        self.noise_axes[i] = v / n2.sqrt();
                        break;
                    }
                }
            }
        }
    }

    fn perturbed(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        let eta = self.noise_angles[i];
        if u.len() == 2 {
            crate::geometry::rotate2(u, eta)
        } else {
            // Rotate u by eta within the plane spanned by u and the robot's
            // noise axis.
            let v = &self.noise_axes[i];
            let mut w = v - u * v.dot(u);
            if w.norm() < 1e-9 {
                // Axis almost parallel to u: fall back to a fixed perpendicular.
                let k = (0..3)
                    .min_by(|&a, &b| u[a].abs().partial_cmp(&u[b].abs()).unwrap())
                    .unwrap();
                let mut e = DVector::zeros(3);
                e[k] = 1.0;
                w = &e - u * e.dot(u);
            }
            let w = w.normalize();
            u * eta.cos() + w * eta.sin()
        }
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// Centroid entered the epsilon ball (or the direction went unreliable
    /// at the source).
    Arrived,
    MaxTimeReached,
    AllRobotsDead,
    /// Alive deployment degenerated and did not recover within the grace
    /// window.
    DegenerateAborted,
}

/// One logged step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub centroid: DVector<f64>,
    pub dist_to_source: f64,
    pub alive: usize,
    /// Sampled direction used at this instant (zeros when not computable).
    pub direction: DVector<f64>,
    /// Field readings of the alive robots, in robot index order.
    pub readings: Vec<f64>,
    /// Offsets |x_i| of the alive robots to the centroid.
    pub offset_norms: Vec<f64>,
}

/// Trajectory of a run.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub dim: usize,
    pub records: Vec<StepRecord>,
}

impl TrajectoryLog {
    /// Frozen CSV layout:
    /// `t,pc_x,pc_y[,pc_z],dist_to_source,alive_count,L_x,L_y[,L_z],`
    /// `sigma_min,sigma_mean,sigma_max,offset_min,offset_mean,offset_max`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.dim == 2 {
            out.push_str("t,pc_x,pc_y,dist_to_source,alive_count,L_x,L_y,");
        } else {
            out.push_str("t,pc_x,pc_y,pc_z,dist_to_source,alive_count,L_x,L_y,L_z,");
        }
        out.push_str("sigma_min,sigma_mean,sigma_max,offset_min,offset_mean,offset_max\n");
        for r in &self.records {
            let stats = |v: &[f64]| {
                if v.is_empty() {
                    return (0.0, 0.0, 0.0);
                }
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut sum = 0.0;
                for x in v {
                    lo = lo.min(*x);
                    hi = hi.max(*x);
                    sum += x;
                }
                (lo, sum / v.len() as f64, hi)
            };
            let (smin, smean, smax) = stats(&r.readings);
            let (omin, omean, omax) = stats(&r.offset_norms);
            let mut cols: Vec<String> = vec![format!("{}", r.t)];
            cols.extend(r.centroid.iter().map(|v| format!("{v}")));
            cols.push(format!("{}", r.dist_to_source));
            cols.push(format!("{}", r.alive));
            cols.extend(r.direction.iter().map(|v| format!("{v}")));
            for v in [smin, smean, smax, omin, omean, omax] {
                cols.push(format!("{v}"));
            }
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

/// End-of-run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub arrival_time: Option<f64>,
    pub final_time: f64,
    pub steps: usize,
    pub initial_robots: usize,
    pub final_alive: usize,
    pub deaths: usize,
    pub min_dist_to_source: f64,
    pub final_dist_to_source: f64,
    /// Minimum over the run of lambda_min/lambda_max of the alive shape
    /// matrix; stays above the degeneracy threshold on healthy runs.
    pub min_eigen_ratio: f64,
    /// Smallest robot-to-obstacle-surface distance seen (when obstacles are
    /// configured); negative means a robot entered an obstacle.
    pub min_obstacle_clearance: Option<f64>,
    /// Robot-steps spent inside an obstacle.
    pub obstacle_violations: usize,
    /// Steps on which the alive deployment was degenerate.
    pub degenerate_warnings: usize,
}

/// One per-robot position snapshot: (time, positions, alive mask).
pub type PositionSnapshot = (f64, Vec<DVector<f64>>, Vec<bool>);

/// Per-robot position dump row layout: `t,robot,alive,x,y[,z]`.
pub fn robot_dump_csv(snapshots: &[PositionSnapshot], dim: usize) -> String {
    let mut out = String::from(if dim == 2 {
        "t,robot,alive,x,y\n"
    } else {
        "t,robot,alive,x,y,z\n"
    });
    for (t, positions, alive) in snapshots {
        for (i, p) in positions.iter().enumerate() {
            let mut cols = vec![
                format!("{t}"),
                format!("{i}"),
                format!("{}", u8::from(alive[i])),
            ];
            cols.extend(p.iter().map(|v| format!("{v}")));
            out.push_str(&cols.join(","));
            out.push('\n');
        }
    }
    out
}

/// Advance the state by one Euler step.
///
/// Order within a step: (1) redraw noise on period boundaries, (2) compute
/// the common direction and morph corrections from the current state,
/// (3) move the alive robots, (4) apply deaths. Returns the control decision
/// that was applied.
pub fn step(state: &mut SimState, config: &SimConfig) -> Result<ControlDecision> {
    if state.alive_count() == 0 {
        return Err(Error::AllRobotsDead);
    }
    if state.step.is_multiple_of(config.noise_steps) {
        let max_dev = config
            .schedule
            .noise
            .as_ref()
            .map_or(0.0, |n| n.max_deviation);
        state.resample_noise(config, max_dev);
    }

    let (centroid, alive_dep) = state.alive_deployment()?;
    let readings: Result<Vec<f64>> = state
        .positions
        .iter()
        .zip(&state.alive)
        .filter(|(_, &a)| a)
        .map(|(p, _)| config.field.eval(p))
        .collect();
    let readings = readings?;

    let decision = if !alive_dep.is_non_degenerate(DEGENERACY_TOL) {
        state.degenerate_streak += 1;
        match (&state.last_direction, state.degenerate_streak <= DEGENERATE_GRACE_STEPS) {
            (Some(dir), true) => ControlDecision::Move(dir.clone()),
            _ => return Err(Error::DegenerateDeployment),
        }
    } else {
        state.degenerate_streak = 0;
        controller(&readings, &alive_dep)?
    };

    let u = match &decision {
        ControlDecision::Move(u) => u.clone(),
        ControlDecision::StopArrived => return Ok(decision),
    };
    state.last_direction = Some(u.clone());

    // Morph bookkeeping: activate due events against the current reference.
    if let Some(&next) = state.pending.front() {
        if state.t >= config.schedule.morphs[next].time - 1e-12 {
            state.pending.pop_front();
            state.morph_from = state.x_ref.clone();
            state.morph_target = match &config.morph_targets[next] {
                MorphKind::Affine(a) => state.x_ref0.iter().map(|x| a * x).collect(),
                MorphKind::Density(spec) => sample_density(spec)?.offsets().to_vec(),
            };
            state.active_morph = Some((
                config.schedule.morphs[next].time,
                config.schedule.morphs[next].duration,
            ));
            state.corrections_on = true;
        }
    }
    if let Some((t0, dur)) = state.active_morph {
        let s = ((state.t - t0) / dur).clamp(0.0, 1.0);
        for i in 0..state.x_ref.len() {
            state.x_ref[i] = &state.morph_from[i] * (1.0 - s) + &state.morph_target[i] * s;
        }
        if s >= 1.0 {
            state.active_morph = None;
        }
    }
    let gain = if state.corrections_on {
        config.morph_gain
    } else {
        0.0
    };

    // Corrections are re-centered over the alive robots so they sum to zero:
    // they reshape the swarm without thrusting its centroid (dead robots
    // would otherwise leave a net reference offset).
    let mut ref_mean = DVector::zeros(centroid.len());
    if gain != 0.0 {
        let mut count = 0usize;
        for (x, &a) in state.x_ref.iter().zip(&state.alive) {
            if a {
                ref_mean += x;
                count += 1;
            }
        }
        ref_mean /= count as f64;
    }

    for i in 0..state.positions.len() {
        if !state.alive[i] {
            continue;
        }
        let mut vel = state.perturbed(i, &u);
        if gain != 0.0 {
            vel += (&centroid + &state.x_ref[i] - &ref_mean - &state.positions[i]) * gain;
        }
        state.positions[i] += vel * config.dt;
    }

    state.step += 1;
    state.t = state.step as f64 * config.dt;

    // Deaths after motion: Bernoulli trials on period boundaries, scripted
    // instants whenever reached.
    match &config.schedule.deaths {
        DeathModel::None => {}
        DeathModel::PerPeriod { prob } => {
            if state.step.is_multiple_of(config.noise_steps) {
                for i in 0..state.alive.len() {
                    let draw = state.rng.random::<f64>();
                    if state.alive[i] && draw < *prob {
                        state.alive[i] = false;
                    }
                }
            }
        }
        DeathModel::Scripted { times } => {
            for (k, s) in times.iter().enumerate() {
                if !state.scripted_done[k] && state.t >= s.time - 1e-12 {
                    state.scripted_done[k] = true;
                    state.alive[s.robot] = false;
                }
            }
        }
    }

    Ok(decision)
}

/// Run a configured simulation to completion.
pub fn run(config: &SimConfig) -> Result<(TrajectoryLog, RunSummary)> {
    run_with_dump(config, None).map(|(log, summary, _)| (log, summary))
}

/// Like [`run`], also collecting per-robot position snapshots every
/// `dump_every` steps when requested.
pub fn run_with_dump(
    config: &SimConfig,
    dump_every: Option<usize>,
) -> Result<(TrajectoryLog, RunSummary, Vec<PositionSnapshot>)> {
    let mut state = SimState::new(config);
    let source = config.field.source().clone();
    let dim = config.field.dim();
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut min_dist = f64::INFINITY;
    let mut min_eigen_ratio = f64::INFINITY;
    let mut min_clearance = f64::INFINITY;
    let mut violations = 0usize;
    let mut degenerate_warnings = 0usize;
    let status;
    let mut arrival_time = None;

    let log_state = |state: &SimState,
                     direction: &DVector<f64>,
                     records: &mut Vec<StepRecord>|
     -> Result<f64> {
        let centroid = state.centroid()?;
        let dist = (&centroid - &source).norm();
        let mut readings = Vec::new();
        let mut offset_norms = Vec::new();
        for (p, &a) in state.positions.iter().zip(&state.alive) {
            if a {
                readings.push(config.field.eval(p)?);
                offset_norms.push((p - &centroid).norm());
            }
        }
        records.push(StepRecord {
            t: state.t,
            centroid,
            dist_to_source: dist,
            alive: state.alive_count(),
            direction: direction.clone(),
            readings,
            offset_norms,
        });
        Ok(dist)
    };

    loop {
        // Bookkeeping on the pre-step state.
        let (_, alive_dep) = state.alive_deployment()?;
        let sm = alive_dep.shape_matrix();
        if sm.lambda_max() > 0.0 {
            min_eigen_ratio = min_eigen_ratio.min(sm.lambda_min() / sm.lambda_max());
        } else {
            min_eigen_ratio = 0.0;
        }
        if !alive_dep.is_non_degenerate(DEGENERACY_TOL) {
            degenerate_warnings += 1;
        }
        for (p, &a) in state.positions.iter().zip(&state.alive) {
            if !a {
                continue;
            }
            for o in &config.obstacles {
                let c = DVector::from_vec(o.center.clone());
                let clear = (p - c).norm() - o.radius;
                min_clearance = min_clearance.min(clear);
                if clear < 0.0 {
                    violations += 1;
                }
            }
        }
        if let Some(k) = dump_every {
            if state.step.is_multiple_of(k) {
                snapshots.push((state.t, state.positions.clone(), state.alive.clone()));
            }
        }

        let decision = match step(&mut state, config) {
            Ok(d) => d,
            Err(Error::AllRobotsDead) => {
                status = RunStatus::AllRobotsDead;
                break;
            }
            Err(Error::DegenerateDeployment) => {
                status = RunStatus::DegenerateAborted;
                break;
            }
            Err(e) => return Err(e),
        };

        let direction = match &decision {
            ControlDecision::Move(u) => u.clone(),
            ControlDecision::StopArrived => {
                status = RunStatus::Arrived;
                arrival_time = Some(state.t);
                break;
            }
        };

        if state.alive_count() == 0 {
            status = RunStatus::AllRobotsDead;
            break;
        }

        let dist = log_state(&state, &direction, &mut records)?;
        min_dist = min_dist.min(dist);

        let epsilon = config
            .stop
            .epsilon
            .unwrap_or_else(|| 2.0 * state.alive_deployment().map(|(_, d)| d.max_radius()).unwrap_or(0.0));
        if dist < epsilon {
            status = RunStatus::Arrived;
            arrival_time = Some(state.t);
            break;
        }
        if state.t >= config.stop.max_time {
            status = RunStatus::MaxTimeReached;
            break;
        }
    }

    // Thin the records to the requested logging period, always keeping the
    // final row.
    let kept: Vec<StepRecord> = if config.log_every > 1 {
        let last = records.len().saturating_sub(1);
        records
            .into_iter()
            .enumerate()
            .filter(|(i, _)| i % config.log_every == 0 || *i == last)
            .map(|(_, r)| r)
            .collect()
    } else {
        records
    };

    let final_alive = state.alive_count();
    let final_dist = state
        .centroid()
        .map(|c| (&c - &source).norm())
        .unwrap_or(f64::NAN);
    let summary = RunSummary {
        status,
        arrival_time,
        final_time: state.t,
        steps: state.step,
        initial_robots: config.deployment.len(),
        final_alive,
        deaths: config.deployment.len() - final_alive,
        min_dist_to_source: min_dist.min(final_dist),
        final_dist_to_source: final_dist,
        min_eigen_ratio,
        min_obstacle_clearance: (!config.obstacles.is_empty()).then_some(min_clearance),
        obstacle_violations: violations,
        degenerate_warnings,
    };
    Ok((
        TrajectoryLog {
            dim,
            records: kept,
        },
        summary,
        snapshots,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deployment::regular_polygon;
    use nalgebra::DMatrix;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn wide_gaussian() -> SignalField {
        SignalField::gaussian(
            1.0,
            vec2(0.0, 0.0),
            DMatrix::identity(2, 2) / 2500.0,
        )
        .unwrap()
    }

    fn quiet_config(start: DVector<f64>, n: usize, radius: f64) -> SimConfig {
        SimConfig::new(
            wide_gaussian(),
            start,
            regular_polygon(n, radius, 0.0).unwrap(),
            EventSchedule::default(),
            0.02,
            7,
            StopCondition {
                max_time: 100.0,
                epsilon: Some(2.0 * radius),
            },
            1.0,
            vec![],
            1,
        )
        .unwrap()
    }

    #[test]
    fn too_few_robots_rejected() {
        let d = Deployment::new(vec![vec2(-1.0, 0.0), vec2(1.0, 0.0)]).unwrap();
        let r = SimConfig::new(
            wide_gaussian(),
            vec2(10.0, 0.0),
            d,
            EventSchedule::default(),
            0.02,
            1,
            StopCondition {
                max_time: 10.0,
                epsilon: Some(1.0),
            },
            1.0,
            vec![],
            1,
        );
        assert!(r.is_err());
    }

    #[test]
    fn common_velocity_preserves_shape() {
        let config = quiet_config(vec2(5.0, 0.0), 6, 1.0);
        let mut state = SimState::new(&config);
        let initial: Vec<DVector<f64>> = {
            let (c, _) = state.alive_deployment().unwrap();
            state.positions.iter().map(|p| p - &c).collect()
        };
        for _ in 0..100 {
            step(&mut state, &config).unwrap();
        }
        let (c, _) = state.alive_deployment().unwrap();
        for (p, x0) in state.positions.iter().zip(&initial) {
            assert!((p - &c - x0).norm() <= 1e-12);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let mut config = quiet_config(vec2(20.0, 5.0), 8, 1.0);
        config.schedule.noise = Some(NoiseSpec {
            period: 0.2,
            max_deviation: 10f64.to_radians(),
        });
        config.schedule.deaths = DeathModel::PerPeriod { prob: 0.01 };
        let (log_a, sum_a) = run(&config).unwrap();
        let (log_b, sum_b) = run(&config).unwrap();
        assert_eq!(log_a.to_csv(), log_b.to_csv());
        assert_eq!(sum_a.final_alive, sum_b.final_alive);
    }

    #[test]
    fn euler_update_matches_hand_computation() {
        // One step of a 3-robot triangle: positions move by dt * L/|L| with
        // L recomputed here longhand.
        let config = quiet_config(vec2(10.0, 0.0), 3, 1.0);
        let mut state = SimState::new(&config);
        let before = state.positions.clone();
        let (centroid, _) = state.alive_deployment().unwrap();
        let n = 3.0;
        let d_max = before
            .iter()
            .map(|p| (p - &centroid).norm())
            .fold(0.0f64, f64::max);
        let mut l = DVector::zeros(2);
        for p in &before {
            let x = p - &centroid;
            l += x * config.field.eval(p).unwrap();
        }
        l /= n * d_max * d_max;
        let u = &l / l.norm();
        step(&mut state, &config).unwrap();
        for (p, q) in state.positions.iter().zip(&before) {
            assert!((p - (q + &u * config.dt)).norm() < 1e-12);
        }
    }

    #[test]
    fn all_dead_is_failure() {
        let mut config = quiet_config(vec2(30.0, 0.0), 4, 1.0);
        config.schedule.deaths = DeathModel::Scripted {
            times: (0..4).map(|i| ScriptedDeath { robot: i, time: 1.0 }).collect(),
        };
        let (_, summary) = run(&config).unwrap();
        assert_eq!(summary.status, RunStatus::AllRobotsDead);
        assert_eq!(summary.final_alive, 0);
    }

    #[test]
    fn stop_flag_at_the_source() {
        // Symmetric deployment centered exactly on an even field's source:
        // readings cancel and the controller stops immediately.
        let config = SimConfig::new(
            wide_gaussian(),
            vec2(0.0, 0.0),
            Deployment::new(vec![
                vec2(1.0, 0.0),
                vec2(-1.0, 0.0),
                vec2(0.0, 1.0),
                vec2(0.0, -1.0),
            ])
            .unwrap(),
            EventSchedule::default(),
            0.02,
            1,
            StopCondition {
                max_time: 10.0,
                epsilon: Some(0.5),
            },
            1.0,
            vec![],
            1,
        )
        .unwrap();
        let (_, summary) = run(&config).unwrap();
        assert_eq!(summary.status, RunStatus::Arrived);
    }

    #[test]
    fn identity_morph_gives_zero_correction() {
        let mut config = quiet_config(vec2(15.0, 0.0), 6, 1.0);
        config.schedule.morphs = vec![MorphEvent {
            time: 0.1,
            target: MorphTarget::Affine {
                matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            },
            duration: 0.5,
        }];
        let rebuilt = SimConfig::new(
            config.field.clone(),
            config.start.clone(),
            config.deployment.clone(),
            config.schedule.clone(),
            config.dt,
            config.seed,
            config.stop.clone(),
            config.morph_gain,
            vec![],
            1,
        )
        .unwrap();
        // Shape must stay put despite the active morph window.
        let mut state = SimState::new(&rebuilt);
        let initial: Vec<DVector<f64>> = {
            let (c, _) = state.alive_deployment().unwrap();
            state.positions.iter().map(|p| p - &c).collect()
        };
        for _ in 0..60 {
            step(&mut state, &rebuilt).unwrap();
        }
        let (c, _) = state.alive_deployment().unwrap();
        for (p, x0) in state.positions.iter().zip(&initial) {
            assert!((p - &c - x0).norm() <= 1e-9);
        }
    }

    #[test]
    fn unsorted_morphs_rejected() {
        let schedule = EventSchedule {
            morphs: vec![
                MorphEvent {
                    time: 5.0,
                target: MorphTarget::Affine {
                    matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                },
                duration: 1.0,
            },
            MorphEvent {
                time: 2.0,
                target: MorphTarget::Affine {
                    matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                },
                duration: 1.0,
            },
        ];
        let r = SimConfig::new(
            wide_gaussian(),
            vec2(10.0, 0.0),
            regular_polygon(4, 1.0, 0.0).unwrap(),
            schedule,
            0.02,
            1,
            StopCondition {
                max_time: 10.0,
                epsilon: Some(1.0),
            },
            1.0,
            vec![],
            1,
        );
        assert!(r.is_err());
    }

    #[test]
    fn singular_morph_rejected() {
        let mut schedule = EventSchedule::default();
        schedule.morphs = vec![MorphEvent {
            time: 1.0,
            target: MorphTarget::Affine {
                matrix: vec![vec![1.0, 0.0], vec![2.0, 0.0]],
            },
            duration: 1.0,
        }];
        let r = SimConfig::new(
            wide_gaussian(),
            vec2(10.0, 0.0),
            regular_polygon(4, 1.0, 0.0).unwrap(),
            schedule,
            0.02,
            1,
            StopCondition {
                max_time: 10.0,
                epsilon: Some(1.0),
            },
            1.0,
            vec![],
            1,
        );
        assert!(matches!(r, Err(Error::SingularMorphTarget)));
    }

    #[test]
    fn morph_to_stretched_circle_changes_variances() {
        // diag(2, 1) morph on a polygon: converged shape has var ratio ~4.
        let mut config = quiet_config(vec2(60.0, 0.0), 24, 2.0);
        config.schedule.morphs = vec![MorphEvent {
            time: 0.5,
            target: MorphTarget::Affine {
                matrix: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
            },
            duration: 2.0,
        }];
        let rebuilt = SimConfig::new(
            config.field.clone(),
            config.start.clone(),
            config.deployment.clone(),
            config.schedule.clone(),
            config.dt,
            config.seed,
            StopCondition {
                max_time: 12.0,
                epsilon: Some(1.0),
            },
            2.0,
            vec![],
            1,
        )
        .unwrap();
        let mut state = SimState::new(&rebuilt);
        for _ in 0..(12.0 / rebuilt.dt) as usize {
            step(&mut state, &rebuilt).unwrap();
        }
        let (_, dep) = state.alive_deployment().unwrap();
        let m = dep.moments().unwrap();
        let ratio = m.var_x / m.var_y;
        assert!((ratio - 4.0).abs() < 0.2, "ratio = {ratio}");
    }
}
