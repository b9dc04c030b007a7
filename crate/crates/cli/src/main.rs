//! Experiment harness for the swarm source-seeking library.
//!
//! Exit codes are a stable contract:
//!   0  success / certified
//!   1  configuration error (unreadable, malformed, or invalid inputs)
//!   2  simulation failure (no arrival, all robots dead, degenerate abort)
//!   3  certificate does not hold

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use swarmseek::ascent::{certify, first_order_direction, sampled_direction, Certificate};
use swarmseek::deployment::{sample_density, DensitySpec, Deployment};
use swarmseek::field::{
    locate_maximum, region_bounds, FieldSpec, MaxSearchOptions, Region, RegionBounds,
};
use swarmseek::geometry::angle_between;
use swarmseek::sim::{
    robot_dump_csv, run_with_dump, DeathModel, MorphEvent, MorphTarget, RunStatus, SimConfig,
    SimConfigSpec,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_SIM_FAILURE: u8 = 2;
const EXIT_NOT_CERTIFIED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "swarmseek",
    version,
    about = "Gradient-free swarm source seeking: simulate, certify, sweep, moments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation config and write trajectory, summary and manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the regional ascent certificate for a deployment.
    Certify {
        /// Deployment CSV (one row per robot: x,y[,z]).
        #[arg(long)]
        deployment: PathBuf,
        /// Field JSON ({"kind": ..., "params": ...}).
        #[arg(long)]
        field: PathBuf,
        /// Region JSON ({"type": "annulus"|"box", ...}).
        #[arg(long)]
        region: PathBuf,
        /// Grid resolution per axis for the bounds scan.
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        /// Also write the certificate report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Re-run a config across parameter values and print one summary row per
    /// value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Also write the CSV to a file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a density spec and print its moment report.
    Moments {
        #[arg(long)]
        spec: PathBuf,
        /// Sample count (overrides the spec).
        #[arg(long)]
        n: usize,
        /// RNG seed (overrides the spec).
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    /// Swarm radius scale.
    #[value(name = "D", alias = "d")]
    D,
    /// Per-period death probability.
    DeathRate,
    /// Stretch factor of the first morph target.
    MorphAspect,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Certify {
            deployment,
            field,
            region,
            resolution,
            json,
        } => cmd_certify(&deployment, &field, &region, resolution, json.as_deref()),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => cmd_sweep(&config, param, &values, out.as_deref()),
        Command::Moments { spec, n, seed } => cmd_moments(&spec, n, seed),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

/// Read + parse a JSON file, with the path in any error.
fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Canonical config hash: sha256 over the JSON value re-serialized with
/// sorted keys, so formatting and key order do not matter.
fn config_hash(path: &Path) -> Result<String, String> {
    let value: serde_json::Value = load_json(path)?;
    let canonical = serde_json::to_string(&value).map_err(|e| e.to_string())?;
    Ok(hex_digest(canonical.as_bytes()))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest {
    config_hash: String,
    seed: u64,
    version: String,
    outputs: Vec<String>,
    duration_seconds: f64,
}

#[derive(Serialize)]
struct MaxSearchReport {
    location: Vec<f64>,
    value: f64,
    gradient_norm: f64,
    converged: bool,
    hit_boundary: bool,
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    seed: u64,
    config_hash: &'a str,
    source: Vec<f64>,
    run: &'a swarmseek::sim::RunSummary,
    /// Where a gradient ascent from the stated source lands inside the run's
    /// arena box; `converged = false` means the field has no interior
    /// critical point there and the stated source is a modeling choice.
    maximum_search: MaxSearchReport,
}

fn cmd_simulate(config_path: &Path, out_dir: &Path) -> Result<u8, String> {
    let started = Instant::now();
    let spec: SimConfigSpec = load_json(config_path)?;
    let hash = config_hash(config_path)?;
    let config = spec.build().map_err(|e| e.to_string())?;

    fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;

    let (log, summary, snapshots) = run_with_dump(&config, spec.robot_dump_every)
        .map_err(|e| format!("simulation error: {e}"))?;

    // Diagnostic: look for a vanishing-gradient point inside the arena.
    let source = config.field.source().clone();
    let margin = (&config.start - &source).norm() + 3.0 * config.deployment.max_radius() + 10.0;
    let lo = source.map(|c| c - margin).inf(&config.start.map(|c| c - margin));
    let hi = source.map(|c| c + margin).sup(&config.start.map(|c| c + margin));
    let found = locate_maximum(
        &config.field,
        &source,
        Some((&lo, &hi)),
        &MaxSearchOptions::default(),
    )
    .map_err(|e| e.to_string())?;

    let traj_path = out_dir.join("trajectory.csv");
    fs::write(&traj_path, log.to_csv()).map_err(|e| e.to_string())?;
    let mut outputs = vec![traj_path.display().to_string()];

    if spec.robot_dump_every.is_some() {
        let dump_path = out_dir.join("robots.csv");
        fs::write(&dump_path, robot_dump_csv(&snapshots, log.dim)).map_err(|e| e.to_string())?;
        outputs.push(dump_path.display().to_string());
    }

    let summary_path = out_dir.join("summary.json");
    let full = SimulateSummary {
        seed: spec.seed,
        config_hash: &hash,
        source: source.iter().cloned().collect(),
        run: &summary,
        maximum_search: MaxSearchReport {
            location: found.location.iter().cloned().collect(),
            value: found.value,
            gradient_norm: found.gradient_norm,
            converged: found.converged,
            hit_boundary: found.hit_boundary,
        },
    };
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&full).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    outputs.push(summary_path.display().to_string());

    let manifest_path = out_dir.join("manifest.json");
    let manifest = Manifest {
        config_hash: hash.clone(),
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;

    println!(
        "status: {:?}  arrival: {:?}  alive: {}/{}  min dist: {:.3}",
        summary.status,
        summary.arrival_time,
        summary.final_alive,
        summary.initial_robots,
        summary.min_dist_to_source
    );
    Ok(match summary.status {
        RunStatus::Arrived => 0,
        _ => EXIT_SIM_FAILURE,
    })
}

#[derive(Serialize)]
struct CertifyReport {
    certificate: Certificate,
    bounds: RegionBounds,
}

fn cmd_certify(
    deployment_path: &Path,
    field_path: &Path,
    region_path: &Path,
    resolution: usize,
    json_out: Option<&Path>,
) -> Result<u8, String> {
    let text = fs::read_to_string(deployment_path)
        .map_err(|e| format!("cannot read {}: {e}", deployment_path.display()))?;
    let (_, deployment) = Deployment::from_csv(&text).map_err(|e| e.to_string())?;
    let field_spec: FieldSpec = load_json(field_path)?;
    let field = field_spec.build().map_err(|e| e.to_string())?;
    let region: Region = load_json(region_path)?;
    let bounds = region_bounds(&field, &region, resolution).map_err(|e| e.to_string())?;
    let cert = certify(&deployment, &bounds);
    print!("{}", cert.table());
    if let Some(path) = json_out {
        let report = CertifyReport {
            certificate: cert.clone(),
            bounds,
        };
        fs::write(
            path,
            serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
    }
    Ok(if cert.holds { 0 } else { EXIT_NOT_CERTIFIED })
}

fn cmd_sweep(
    config_path: &Path,
    param: SweepParam,
    values: &[f64],
    out: Option<&Path>,
) -> Result<u8, String> {
    if values.is_empty() {
        return Err("sweep needs at least one value".into());
    }
    let base: SimConfigSpec = load_json(config_path)?;
    let mut csv = String::from("value,margin,mean_angle_rad,mean_divergence,arrival_time\n");
    for &value in values {
        let row = sweep_one(&base, param, value)?;
        csv.push_str(&row);
        csv.push('\n');
    }
    print!("{csv}");
    if let Some(path) = out {
        fs::write(path, &csv).map_err(|e| e.to_string())?;
    }
    Ok(0)
}

fn sweep_one(base: &SimConfigSpec, param: SweepParam, value: f64) -> Result<String, String> {
    let mut spec = base.clone();
    match param {
        SweepParam::DeathRate => {
            if !(0.0..=1.0).contains(&value) {
                return Err(format!("death rate {value} outside [0, 1]"));
            }
            // The swept value is the expected fraction of robots dead by the
            // time horizon; convert to the per-period Bernoulli probability.
            let period = spec
                .schedule
                .noise
                .as_ref()
                .map_or(swarmseek::sim::DEFAULT_NOISE_PERIOD, |n| n.period);
            let periods = (spec.stop.max_time / period).max(1.0);
            let prob = if value >= 1.0 {
                1.0
            } else {
                1.0 - (1.0 - value).powf(1.0 / periods)
            };
            spec.schedule.deaths = DeathModel::PerPeriod { prob };
        }
        SweepParam::MorphAspect => {
            if value <= 0.0 {
                return Err("morph aspect must be positive".into());
            }
            // Keep the first morph's principal axis, replace its stretch by
            // diag(value, 1) in that basis; without morphs, stretch along x
            // at a tenth of the horizon.
            let target = |u: DMatrix<f64>| {
                let s = DMatrix::from_diagonal(&DVector::from_vec(vec![value, 1.0]));
                let a = &u * s * u.transpose();
                MorphTarget::Affine {
                    matrix: vec![
                        vec![a[(0, 0)], a[(0, 1)]],
                        vec![a[(1, 0)], a[(1, 1)]],
                    ],
                }
            };
            match spec.schedule.morphs.first_mut() {
                Some(event) => {
                    let u = match &event.target {
                        MorphTarget::Affine { matrix } => {
                            let flat: Vec<f64> = matrix.iter().flatten().cloned().collect();
                            let a = DMatrix::from_row_slice(2, 2, &flat);
                            a.svd(true, false)
                                .u
                                .ok_or("morph matrix SVD failed".to_string())?
                        }
                        MorphTarget::Density { .. } => DMatrix::identity(2, 2),
                    };
                    event.target = target(u);
                }
                None => {
                    spec.schedule.morphs.push(MorphEvent {
                        time: (spec.stop.max_time * 0.1).max(1.0),
                        target: target(DMatrix::identity(2, 2)),
                        duration: 2.0,
                    });
                }
            }
        }
        SweepParam::D => {
            if value <= 0.0 {
                return Err("D must be positive".into());
            }
        }
    }
    let mut config = spec.build().map_err(|e| e.to_string())?;
    if let SweepParam::D = param {
        let d0 = config.deployment.max_radius();
        if d0 == 0.0 {
            return Err("deployment has zero radius".into());
        }
        let m = config.deployment.dim();
        let scaled = config
            .deployment
            .affine_transform(&(DMatrix::identity(m, m) * (value / d0)))
            .map_err(|e| e.to_string())?;
        config = SimConfig::new(
            config.field.clone(),
            config.start.clone(),
            scaled,
            config.schedule.clone(),
            config.dt,
            config.seed,
            config.stop.clone(),
            config.morph_gain,
            config.obstacles.clone(),
            config.log_every,
        )
        .map_err(|e| e.to_string())?;
    }

    // Certificate margin on the annulus the run traverses.
    let source = config.field.source().clone();
    let d_max = config.deployment.max_radius();
    let eps = config.stop.epsilon.unwrap_or(2.0 * d_max);
    let start_dist = (&config.start - &source).norm();
    let region = Region::Annulus {
        center: source.iter().cloned().collect(),
        inner: eps.min(start_dist * 0.5),
        outer: start_dist + d_max + 1.0,
    };
    let bounds = region_bounds(&config.field, &region, 100).map_err(|e| e.to_string())?;
    let margin = certify(&config.deployment, &bounds).margin;

    // Per-step diagnostics come from full position snapshots.
    let (_, summary, snapshots) =
        run_with_dump(&config, Some(1)).map_err(|e| format!("simulation error: {e}"))?;
    let mut angles = Vec::new();
    let mut divergences = Vec::new();
    for (_, positions, alive) in &snapshots {
        let alive_positions: Vec<DVector<f64>> = positions
            .iter()
            .zip(alive)
            .filter(|(_, &a)| a)
            .map(|(p, _)| p.clone())
            .collect();
        if alive_positions.len() < 3 {
            continue;
        }
        let (centroid, dep) = match Deployment::from_positions(&alive_positions) {
            Ok(x) => x,
            Err(_) => continue,
        };
        let l = match sampled_direction(&config.field, &centroid, &dep) {
            Ok(l) => l,
            Err(_) => continue,
        };
        let l1 = match first_order_direction(&config.field, &centroid, &dep) {
            Ok(l1) => l1,
            Err(_) => continue,
        };
        let grad = config.field.gradient(&centroid).map_err(|e| e.to_string())?;
        if grad.norm() > 0.0 && l.norm() > 0.0 {
            angles.push(angle_between(&l, &grad));
        }
        divergences.push((l - l1).norm());
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let arrival = summary
        .arrival_time
        .map(|t| format!("{t}"))
        .unwrap_or_default();
    Ok(format!(
        "{value},{margin},{},{},{arrival}",
        mean(&angles),
        mean(&divergences)
    ))
}

fn cmd_moments(spec_path: &Path, n: usize, seed: u64) -> Result<u8, String> {
    let mut spec: DensitySpec = load_json(spec_path)?;
    spec.n = n;
    spec.seed = seed;
    let deployment = sample_density(&spec).map_err(|e| e.to_string())?;
    let report = deployment.moments().map_err(|e| e.to_string())?;
    println!("{report}");
    Ok(0)
}
