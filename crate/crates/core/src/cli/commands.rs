use std::path::Path;

use nalgebra::DVector;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, Source, SweepMetric, Theorem};
use super::output::Run;
use super::CliError;
use crate::calculus::{
    balance_residual, continuity_residual, empirical_box, estimated_fields, estimated_slice_fields,
    material_report, momentum_residual, oracle_box, oracle_fields, sample_stack, FieldSet,
    GridField, ResidualReport, SliceFields, SpatialGrid,
};
use crate::error::Result as CoreResult;
use crate::estimate::{KernelEstimator, Target};
use crate::flow::{
    flow_map, one_step_error, straightness_deviation, write_trajectories_csv, AnalyticOracle,
    KernelOracle, Trajectory, VelocityField,
};
use crate::oracle::GaussianProcessSpec;
use crate::process::{make_time_grid, sample_paths, sample_slice, ProcessSpec};
use crate::verify::{affine_straightness_check, determinism_detector, geometric_report, Verdict};

pub const ENSEMBLE_FILE: &str = "ensemble.bin";
pub const REPORT_FILE: &str = "report.json";
pub const DIAGNOSE_FILE: &str = "diagnose.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const STRAIGHTNESS_FILE: &str = "straightness.json";
pub const SWEEP_FILE: &str = "sweep.csv";

const FIELD_NAMES: [&str; 5] = ["rho", "v", "a", "sigma", "pi"];
const RESIDUAL_NAMES: [&str; 4] = ["continuity", "momentum", "balance", "material"];

fn gaussian(spec: &ProcessSpec) -> Result<GaussianProcessSpec, CliError> {
    spec.to_gaussian().map_err(|e| {
        CliError::Capability(format!("the oracle source needs jointly Gaussian endpoints ({e})"))
    })
}

fn make_grid(cfg: &ExperimentConfig, fallback: impl FnOnce() -> CoreResult<Vec<(f64, f64)>>) -> Result<SpatialGrid, CliError> {
    let bounds = match &cfg.grid.bounds {
        Some(b) => b.iter().map(|&[lo, hi]| (lo, hi)).collect(),
        None => fallback()?,
    };
    Ok(SpatialGrid::from_box(&bounds, cfg.grid.nodes, cfg.grid.stencil)?)
}

fn csv_bytes(f: &GridField, prefix: &str) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f.write_csv(&mut buf, &f.component_names(prefix))?;
    Ok(buf)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = cfg.validate()?;
    let grid = make_time_grid(cfg.time_nodes - 1)?;
    let ens = sample_paths(&spec, cfg.n, &grid, cfg.seed)?;
    let mut bytes = Vec::new();
    ens.write_to(&mut bytes)?;
    let run = Run::start(cfg, "simulate", &[ENSEMBLE_FILE.into()])?;
    run.write(ENSEMBLE_FILE, &bytes)
}

pub fn fields(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = cfg.validate()?;
    let t = cfg.time;
    let f: SliceFields = match cfg.source {
        Source::Oracle => {
            let g = gaussian(&spec)?;
            let grid = make_grid(cfg, || oracle_box(&g, t, 3.0))?;
            let set = oracle_fields(&g, t, &grid, cfg.h_t())?;
            SliceFields {
                rho: set.rho.current().clone(),
                v: set.v.current().clone(),
                a: set.a,
                sigma: set.sigma,
                pi: set.pi,
            }
        }
        Source::Estimate => {
            let slice = sample_slice(&spec, cfg.n, t, cfg.seed)?;
            let grid = make_grid(cfg, || empirical_box(&slice.view(), cfg.grid.quantile))?;
            let f = estimated_slice_fields(&slice.view(), &grid, &cfg.kernel())?;
            SliceFields {
                rho: f.rho.masked(),
                v: f.v.masked(),
                a: f.a.masked(),
                sigma: f.sigma.masked(),
                pi: f.pi.masked(),
            }
        }
    };
    let outputs: Vec<String> = FIELD_NAMES.iter().map(|n| format!("{n}.csv")).collect();
    let data = [
        csv_bytes(&f.rho, "rho")?,
        csv_bytes(&f.v, "v")?,
        csv_bytes(&f.a, "a")?,
        csv_bytes(&f.sigma, "sigma")?,
        csv_bytes(&f.pi, "pi")?,
    ];
    let run = Run::start(cfg, "fields", &outputs)?;
    for (name, bytes) in outputs.iter().zip(data) {
        run.write(name, &bytes)?;
    }
    Ok(())
}

fn field_set(cfg: &ExperimentConfig, spec: &ProcessSpec) -> Result<FieldSet, CliError> {
    let (t, h_t) = (cfg.time, cfg.h_t());
    match cfg.source {
        Source::Oracle => {
            let g = gaussian(spec)?;
            let grid = make_grid(cfg, || oracle_box(&g, t, 3.0))?;
            Ok(oracle_fields(&g, t, &grid, h_t)?)
        }
        Source::Estimate => {
            let (scheme, slices) = sample_stack(spec, cfg.n, t, h_t, cfg.seed)?;
            let views = [slices[0].view(), slices[1].view(), slices[2].view()];
            let current = views[scheme.center()];
            let grid = make_grid(cfg, || empirical_box(&current, cfg.grid.quantile))?;
            Ok(estimated_fields(views, scheme, h_t, &grid, &cfg.kernel())?)
        }
    }
}

fn section(report: &CoreResult<ResidualReport>, tol: f64) -> Value {
    match report {
        Ok(r) => json!({
            "max_abs": r.max_abs,
            "rms": r.rms,
            "relative": r.relative,
            "reference": r.reference,
            "tolerance": tol,
            "within_tolerance": r.relative <= tol,
        }),
        Err(e) => json!({ "error": e.to_string(), "tolerance": tol }),
    }
}

pub fn diagnose(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = cfg.validate()?;
    let fs = field_set(cfg, &spec)?;
    let reports = [
        continuity_residual(&fs.rho, &fs.v),
        momentum_residual(&fs.rho, &fs.v, &fs.sigma, &fs.a),
        balance_residual(fs.rho.current(), &fs.pi, &fs.a),
        material_report(&fs.v, fs.a.masked_rms()),
    ];
    let tol = &cfg.tolerances;
    let tols = [tol.continuity, tol.momentum, tol.balance, tol.material];
    let mut doc = serde_json::Map::new();
    doc.insert("time".into(), json!(cfg.time));
    doc.insert("source".into(), serde_json::to_value(cfg.source).unwrap_or(Value::Null));
    doc.insert("h_t".into(), json!(cfg.h_t()));
    doc.insert("masked_nodes".into(), json!(fs.grid().masked_count()));
    let mut outputs = vec![DIAGNOSE_FILE.to_string()];
    let mut csvs = Vec::new();
    for ((name, report), tol) in RESIDUAL_NAMES.iter().zip(&reports).zip(tols) {
        doc.insert((*name).into(), section(report, tol));
        if let Ok(r) = report {
            let file = format!("{name}_residual.csv");
            csvs.push((file.clone(), csv_bytes(&r.residual, name)?));
            outputs.push(file);
        }
    }
    let run = Run::start(cfg, "diagnose", &outputs)?;
    run.write_json(DIAGNOSE_FILE, &Value::Object(doc))?;
    for (file, bytes) in csvs {
        run.write(&file, &bytes)?;
    }
    Ok(())
}

pub fn verify(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = cfg.validate()?;
    let vcfg = cfg.verify_config();
    let report = match cfg.theorem {
        Theorem::Affine => {
            if !spec.is_affine() {
                return Err(CliError::Capability(
                    "the affine theorem applies to affine coefficients without latent noise".into(),
                ));
            }
            affine_straightness_check(&spec, cfg.n, cfg.seed, &vcfg)?
        }
        Theorem::Geometric => {
            let grid = make_time_grid(cfg.time_nodes - 1)?;
            let ens = sample_paths(&spec, cfg.n, &grid, cfg.seed)?;
            geometric_report(&ens, grid.nearest_index(cfg.time), &vcfg)?
        }
        Theorem::Determinism => {
            let grid = make_time_grid(cfg.time_nodes - 1)?;
            let ens = sample_paths(&spec, cfg.n, &grid, cfg.seed)?;
            determinism_detector(&ens, &spec, cfg.seed, &vcfg)?
        }
    };
    let run = Run::start(cfg, "verify", &[REPORT_FILE.into()])?;
    run.write_json(REPORT_FILE, &report)?;
    match report.verdict {
        Verdict::Consistent => Ok(()),
        v => Err(CliError::Verdict(v)),
    }
}

pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), k + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_values(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .map_err(|e| CliError::Config(format!("sweep value '{v}': {e}")))
        })
        .collect()
}

fn start_points(cfg: &ExperimentConfig, spec: &ProcessSpec) -> Result<Vec<f64>, CliError> {
    if let Some(p) = &cfg.flow.points {
        return Ok(p.concat());
    }
    let d = spec.dim();
    if cfg.flow.grid_points {
        let (mean, cov) = spec.coupling.source_moments();
        let per_axis = (cfg.flow.n_points as f64).powf(1.0 / d as f64).ceil().max(1.0) as usize;
        let total = per_axis.pow(d as u32);
        let mut pts = Vec::with_capacity(total * d);
        for k in 0..total {
            let mut rest = k;
            for j in 0..d {
                let i = rest % per_axis;
                rest /= per_axis;
                let s = if per_axis == 1 {
                    0.0
                } else {
                    -2.0 + 4.0 * i as f64 / (per_axis - 1) as f64
                };
                pts.push(mean[j] + s * cov[(j, j)].sqrt());
            }
        }
        return Ok(pts);
    }
    Ok(sample_slice(spec, cfg.flow.n_points, 0.0, cfg.seed)?.positions)
}

fn flow_outputs<O: VelocityField + ?Sized>(
    cfg: &ExperimentConfig,
    oracle: &O,
    points: &[f64],
) -> Result<(Vec<u8>, Value), CliError> {
    let grid = make_time_grid(cfg.flow.steps)?;
    let results = flow_map(oracle, points, &grid, cfg.flow.scheme);
    let mut trajs: Vec<Trajectory> = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    let mut per_point = Vec::new();
    let (mut max_chord, mut max_second) = (0.0f64, 0.0f64);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(traj) => {
                let entry = match straightness_deviation(&traj) {
                    Ok(s) => {
                        max_chord = max_chord.max(s.chord_dev);
                        max_second = max_second.max(s.second_diff);
                        json!({ "point": i, "chord_dev": s.chord_dev, "second_diff": s.second_diff })
                    }
                    Err(e) => json!({ "point": i, "error": e.to_string() }),
                };
                per_point.push(entry);
                trajs.push(traj);
            }
            Err(e) => {
                failures.push(json!({ "point": i, "error": e.to_string() }));
                trajs.push(e.partial);
            }
        }
    }
    let one_step = match one_step_error(oracle, points, cfg.flow.reference_steps) {
        Ok(r) => json!({ "max": r.max, "rms": r.rms, "reference_steps": r.reference_steps, "errors": r.errors }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let mut csv = Vec::new();
    write_trajectories_csv(&mut csv, &trajs)?;
    let doc = json!({
        "scheme": cfg.flow.scheme,
        "steps": cfg.flow.steps,
        "n_points": trajs.len(),
        "max_chord_dev": max_chord,
        "max_second_diff": max_second,
        "per_point": per_point,
        "failures": failures,
        "one_step": one_step,
    });
    Ok((csv, doc))
}

pub fn flow(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = cfg.validate()?;
    let points = start_points(cfg, &spec)?;
    let (csv, mut doc) = match cfg.source {
        Source::Oracle => {
            let oracle = AnalyticOracle::new(gaussian(&spec)?);
            flow_outputs(cfg, &oracle, &points)?
        }
        Source::Estimate => {
            let grid = make_time_grid(cfg.time_nodes - 1)?;
            let ens = sample_paths(&spec, cfg.n, &grid, cfg.seed)?;
            let oracle = KernelOracle::new(&ens, &cfg.kernel(), None)?;
            let (csv, mut doc) = flow_outputs(cfg, &oracle, &points)?;
            doc["excursions"] = json!(oracle.excursions());
            (csv, doc)
        }
    };
    doc["source"] = serde_json::to_value(cfg.source).unwrap_or(Value::Null);
    let run = Run::start(cfg, "flow", &[TRAJECTORIES_FILE.into(), STRAIGHTNESS_FILE.into()])?;
    run.write(TRAJECTORIES_FILE, &csv)?;
    run.write_json(STRAIGHTNESS_FILE, &doc)
}

const SWEEP_PARAMS: [&str; 6] = ["n", "seed", "time", "bandwidth", "density_floor", "queries"];

fn as_count(param: &str, v: f64, min: f64) -> Result<u64, CliError> {
    if v.fract() != 0.0 || v < min || v > 1e15 {
        return Err(CliError::Config(format!("sweep value {v} is not a valid {param}")));
    }
    Ok(v as u64)
}

fn apply(cfg: &mut ExperimentConfig, param: &str, v: f64) -> Result<(), CliError> {
    match param {
        "n" => cfg.n = as_count(param, v, 1.0)? as usize,
        "seed" => cfg.seed = as_count(param, v, 0.0)?,
        "time" => cfg.time = v,
        "bandwidth" => cfg.bandwidth = super::config::BandwidthSetting::Fixed(v),
        "density_floor" => cfg.density_floor = v,
        "queries" => cfg.verify.queries = as_count(param, v, 1.0)? as usize,
        _ => {
            return Err(CliError::Config(format!(
                "unknown sweep parameter '{param}' (expected one of {})",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Velocity RMSE against the oracle on nine points spanning mean ± 2 sd.
pub(crate) fn velocity_rmse(cfg: &ExperimentConfig, spec: &ProcessSpec, est: &KernelEstimator<'_>) -> Result<f64, CliError> {
    let g = gaussian(spec)?;
    let os = g.at(cfg.time)?;
    let sd = os.std_devs();
    let mut sq = 0.0;
    let mut used = 0usize;
    for k in 0..9 {
        let s = -2.0 + 0.5 * k as f64;
        let x: DVector<f64> = &os.mean + s * &sd;
        if let Ok((v, _)) = est.conditional(x.as_slice(), Target::Velocity) {
            sq += (v - os.velocity(&x)).norm_squared();
            used += 1;
        }
    }
    Ok(if used == 0 { f64::NAN } else { (sq / used as f64).sqrt() })
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let sw = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep needs a param and values".into()))?;
    if sw.values.is_empty() {
        return Err(CliError::Config("sweep.values is empty".into()));
    }
    if sw.metrics.is_empty() {
        return Err(CliError::Config("sweep.metrics is empty".into()));
    }
    let seeds = if cfg.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.seeds.clone()
    };
    // check every value before computing anything
    let mut runs = Vec::new();
    for &value in &sw.values {
        let seed_list = if sw.param == "seed" { vec![0] } else { seeds.clone() };
        for &seed in &seed_list {
            let mut c = cfg.clone();
            c.seed = seed;
            apply(&mut c, &sw.param, value)?;
            let spec = c.validate()?;
            runs.push((value, c, spec));
        }
    }
    let mut csv = String::from("param,value,seed,metric,metric_value\n");
    for (value, c, spec) in &runs {
        let slice = sample_slice(spec, c.n, c.time, c.seed)?;
        let est = KernelEstimator::new(slice.view(), &c.kernel())?;
        for m in &sw.metrics {
            let val = match m {
                SweepMetric::VRmse => velocity_rmse(c, spec, &est)?,
                SweepMetric::TracePi => {
                    let q: Vec<usize> = (0..c.n.min(c.verify.queries)).collect();
                    est.mean_trace_reynolds(&q)?.mean
                }
            };
            csv.push_str(&format!("{},{value:?},{},{},{val:?}\n", sw.param, c.seed, m.name()));
        }
    }
    let run = Run::start(cfg, "sweep", &[SWEEP_FILE.into()])?;
    run.write(SWEEP_FILE, csv.as_bytes())
}
