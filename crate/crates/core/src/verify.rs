//! Theorem-level checks assembled from sampling, estimation, grid residuals
//! and flow integration. Each check returns a [`TheoremReport`] whose verdict
//! is computed only from the reported metrics and thresholds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calculus::{balance_residual, empirical_box, estimated_slice_fields, SpatialGrid, Stencil};
use crate::error::{Error, Result};
use crate::estimate::{mean_and_se, KernelConfig, KernelEstimator, TraceEstimate};
use crate::flow::{integrate, straightness_deviation, KernelOracle, Scheme};
use crate::process::{
    make_time_grid, paths_from_endpoints, process_endpoints, slice_from_endpoints, EndpointSample,
    PathEnsemble, ProcessSpec, Schedule, SliceView,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    /// SHA-256 of the process description, seed and sizes.
    pub digest: String,
    pub seed: Option<u64>,
    pub n: usize,
    pub d: usize,
}

impl ReportInputs {
    fn new(description: &str, seed: Option<u64>, n: usize, d: usize) -> Self {
        let text = format!("{description}|seed={seed:?}|n={n}|d={d}");
        let digest = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        ReportInputs { digest, seed, n, d }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub name: String,
    pub inputs: ReportInputs,
    pub metrics: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

impl TheoremReport {
    fn new(name: &str, inputs: ReportInputs) -> Self {
        TheoremReport {
            name: name.into(),
            inputs,
            metrics: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            verdict: Verdict::Inconclusive,
            notes: Vec::new(),
        }
    }

    fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub kernel: KernelConfig,
    /// Samples used as leave-one-out queries for `E[tr Π]` at each time.
    pub queries: usize,
    /// Straightness threshold as a fraction of the shuffled-pairing control.
    pub control_ratio: f64,
    /// Fraction of refused queries above which a verdict is inconclusive.
    pub max_refused: f64,
    /// Source points integrated through the kernel velocity field.
    pub flow_points: usize,
    /// Grid nodes per axis for the estimated balance residual.
    pub grid_nodes: usize,
    /// Allowance for kernel bias in the trace identity, relative to the
    /// magnitude of its terms.
    pub bias_allowance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            kernel: KernelConfig::default(),
            queries: 2000,
            control_ratio: 0.05,
            max_refused: 0.2,
            flow_points: 20,
            grid_nodes: 60,
            bias_allowance: 0.01,
        }
    }
}

/// Times at which the affine check measures `E[tr Π]`.
pub const CHECK_TIMES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Minimum ensemble size for the determinism detector.
pub const MIN_DETECTOR_N: usize = 200;

fn query_indices(n: usize, m: usize) -> Vec<usize> {
    (0..n.min(m.max(1))).collect()
}

fn trace_at(slice: SliceView<'_>, cfg: &VerifyConfig) -> Result<TraceEstimate> {
    let est = KernelEstimator::new(slice, &cfg.kernel)?;
    est.mean_trace_reynolds(&query_indices(slice.n, cfg.queries))
}

fn control_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Same marginals, shuffled pairing; latent draws are refreshed.
fn shuffled(endpoints: &[EndpointSample], seed: u64) -> Vec<EndpointSample> {
    let mut rng = control_rng(seed);
    let mut order: Vec<usize> = (0..endpoints.len()).collect();
    order.shuffle(&mut rng);
    endpoints
        .iter()
        .zip(&order)
        .map(|(e, &j)| EndpointSample {
            x0: e.x0.clone(),
            x1: endpoints[j].x1.clone(),
            z: e.z.as_ref().map(|z| {
                crate::process::Gaussian::standard(z.len()).sample(&mut rng)
            }),
        })
        .collect()
}

fn refused_fraction(t: &TraceEstimate) -> f64 {
    let total = t.used + t.refused;
    if total == 0 {
        1.0
    } else {
        t.refused as f64 / total as f64
    }
}

/// Deterministic-coupling test for an affine interpolant: `E[tr Π_t]` at
/// interior times against a shuffled-pairing control, plus the estimated
/// balance residual and kernel-flow straightness (reported, not judged).
pub fn affine_straightness_check(
    spec: &ProcessSpec,
    n: usize,
    seed: u64,
    cfg: &VerifyConfig,
) -> Result<TheoremReport> {
    if !spec.is_affine() {
        return Err(Error::InvalidArgument(
            "affine straightness check needs the affine schedule without latent noise".into(),
        ));
    }
    let mut report = TheoremReport::new(
        "affine_straightness",
        ReportInputs::new(&format!("{spec:?}"), Some(seed), n, spec.dim()),
    );
    let endpoints = process_endpoints(spec, n, seed)?;
    let control = shuffled(&endpoints, seed);

    let mut all_below = true;
    let mut inconclusive = false;
    for &t in &CHECK_TIMES {
        let slice = slice_from_endpoints(spec, &endpoints, t);
        let cslice = slice_from_endpoints(spec, &control, t);
        let est = trace_at(slice.view(), cfg)?;
        let ctl = trace_at(cslice.view(), cfg)?;
        let threshold = cfg.control_ratio * ctl.mean;
        report.metric(format!("trace_pi@{t:.1}"), est.mean);
        report.metric(format!("trace_pi_se@{t:.1}"), est.std_err);
        report.metric(format!("control_trace_pi@{t:.1}"), ctl.mean);
        report.metric(format!("refused_fraction@{t:.1}"), refused_fraction(&est));
        report.thresholds.insert(format!("trace_pi@{t:.1}"), threshold);
        if refused_fraction(&est) > cfg.max_refused || refused_fraction(&ctl) > cfg.max_refused {
            inconclusive = true;
            report.notes.push(format!("too many low-density queries at t = {t:.1}"));
        }
        if !(threshold.is_finite() && threshold > 0.0) {
            inconclusive = true;
            report.notes.push(format!("control trace vanishes at t = {t:.1}"));
        }
        if !(est.mean <= threshold) {
            all_below = false;
        }
    }
    report.verdict = if inconclusive {
        Verdict::Inconclusive
    } else if all_below {
        Verdict::Consistent
    } else {
        Verdict::Violated
    };

    let mid = slice_from_endpoints(spec, &endpoints, 0.5);
    match estimated_balance(mid.view(), cfg) {
        Ok(rel) => report.metric("balance_relative_rms@0.5", rel),
        Err(e) => report.notes.push(format!("estimated balance residual unavailable: {e}")),
    }
    flow_indicators(spec, &endpoints, cfg, &mut report)?;
    report.notes.push(
        "verdict uses the trace criterion only; balance and flow indicators are reported".into(),
    );
    Ok(report)
}

fn estimated_balance(slice: SliceView<'_>, cfg: &VerifyConfig) -> Result<f64> {
    let nodes = match slice.d {
        1 => cfg.grid_nodes,
        2 => cfg.grid_nodes.min(30),
        _ => return Err(Error::Unsupported("grid residuals above two dimensions".into())),
    };
    let grid = SpatialGrid::from_box(&empirical_box(&slice, 0.01)?, nodes, Stencil::default())?;
    let f = estimated_slice_fields(&slice, &grid, &cfg.kernel)?;
    let r = balance_residual(&f.rho, &f.pi, &f.a)?;
    if r.residual.grid().masked_count() == 0 {
        return Err(Error::DegenerateData("no admissible grid nodes".into()));
    }
    Ok(r.relative)
}

fn flow_indicators(
    spec: &ProcessSpec,
    endpoints: &[EndpointSample],
    cfg: &VerifyConfig,
    report: &mut TheoremReport,
) -> Result<()> {
    let grid = make_time_grid(10)?;
    let ens = paths_from_endpoints(spec, endpoints, &grid);
    let oracle = KernelOracle::new(&ens, &cfg.kernel, None)?;
    let start = ens.slice(0);
    let (mut chord, mut second, mut failures) = (0.0f64, 0.0f64, 0usize);
    let points = start.n.min(cfg.flow_points);
    for i in 0..points {
        match integrate(&oracle, start.position(i), &grid, Scheme::Rk4) {
            Ok(traj) => {
                let s = straightness_deviation(&traj)?;
                chord = chord.max(s.chord_dev);
                second = second.max(s.second_diff);
            }
            Err(_) => failures += 1,
        }
    }
    report.metric("flow_max_chord_dev", chord);
    report.metric("flow_max_second_diff", second);
    report.metric("flow_failures", failures as f64);
    report.metric("flow_excursions", oracle.excursions() as f64);
    Ok(())
}

/// Radial acceleration `E[X·Ẍ]` against `−E[tr Π]` at one time node, with
/// the two derived inequalities.
pub fn geometric_report(ensemble: &PathEnsemble, t_index: usize, cfg: &VerifyConfig) -> Result<TheoremReport> {
    if t_index >= ensemble.grid().len() {
        return Err(Error::InvalidArgument(format!(
            "time index {t_index} outside a grid of {} nodes",
            ensemble.grid().len()
        )));
    }
    let slice = ensemble.slice(t_index);
    let mut report = TheoremReport::new(
        "trace_identity",
        ReportInputs::new(
            &format!("ensemble t={} k={}", slice.t, ensemble.grid().len()),
            ensemble.seed(),
            slice.n,
            slice.d,
        ),
    );
    report.metric("t", slice.t);

    let radial: Vec<f64> = (0..slice.n)
        .map(|i| dot(slice.position(i), slice.acceleration(i)))
        .collect();
    let kinetic: Vec<f64> = (0..slice.n)
        .map(|i| dot(slice.velocity(i), slice.velocity(i)))
        .collect();
    let (xa, xa_se) = mean_and_se(&radial);
    let (vv, _) = mean_and_se(&kinetic);
    report.metric("mean_x_dot_xddot", xa);
    report.metric("mean_x_dot_xddot_se", xa_se);
    report.metric("mean_sq_velocity", vv);
    report.metric("two_mean_sq_velocity", 2.0 * vv);
    report.metric("mean_dtt_norm_sq", 2.0 * xa + 2.0 * vv);
    let holds1 = xa <= 0.0;
    let holds2 = 2.0 * xa + 2.0 * vv <= 2.0 * vv;
    report.metric("inequality1_margin", -xa);
    report.metric("inequality1_holds", f64::from(u8::from(holds1)));
    report.metric("inequality2_margin", -2.0 * xa);
    report.metric("inequality2_holds", f64::from(u8::from(holds2)));
    report.notes.push(
        "identity and inequalities are implied by the straightness balance law; \
         a violation flags a process that does not satisfy it"
            .into(),
    );

    let trace = match trace_at(slice, cfg) {
        Ok(t) if t.used > 0 => t,
        Ok(_) => {
            report.notes.push("every trace query was refused".into());
            return Ok(report);
        }
        Err(e) => {
            report.notes.push(format!("trace estimate unavailable: {e}"));
            return Ok(report);
        }
    };
    let gap = xa + trace.mean;
    let gap_se = (xa_se * xa_se + trace.std_err * trace.std_err).sqrt();
    let scale = xa.abs().max(trace.mean.abs()).max(vv).max(1e-12);
    report.metric("mean_trace_pi", trace.mean);
    report.metric("mean_trace_pi_se", trace.std_err);
    report.metric("neg_mean_trace_pi", -trace.mean);
    report.metric("mean_sq_v_hat", trace.mean_sq_v_hat);
    report.metric("identity_gap", gap);
    report.metric("identity_gap_se", gap_se);
    report.metric("identity_gap_z", gap / gap_se);
    report.metric("refused_fraction", refused_fraction(&trace));
    let allowed = 3.0 * gap_se + cfg.bias_allowance * scale;
    report.thresholds.insert("identity_gap".into(), allowed);
    report.thresholds.insert("identity_gap_se".into(), 0.25 * scale);

    report.verdict = if !(gap_se <= 0.25 * scale) || refused_fraction(&trace) > cfg.max_refused {
        report.notes.push("standard errors too large for a verdict".into());
        Verdict::Inconclusive
    } else if gap.abs() <= allowed {
        Verdict::Consistent
    } else {
        Verdict::Violated
    };
    Ok(report)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Time-integrated `E[tr Π_t]` over interior nodes, relative to a control
/// ensemble with the same marginals and shuffled pairing. `spec` supplies the
/// interpolation coefficients used to rebuild the control paths from the
/// ensemble's endpoints.
pub fn determinism_detector(
    ensemble: &PathEnsemble,
    spec: &ProcessSpec,
    seed: u64,
    cfg: &VerifyConfig,
) -> Result<TheoremReport> {
    let grid = ensemble.grid();
    let (n, d) = (ensemble.n_paths(), ensemble.dim());
    if spec.dim() != d {
        return Err(Error::ShapeMismatch("process and ensemble dimensions differ".into()));
    }
    if grid.len() < 3 {
        return Err(Error::InvalidArgument("detector needs an interior time node".into()));
    }
    let mut report = TheoremReport::new(
        "determinism",
        ReportInputs::new(&format!("{spec:?} k={}", grid.len()), ensemble.seed(), n, d),
    );
    report.thresholds.insert("ratio".into(), cfg.control_ratio);
    if n < MIN_DETECTOR_N {
        report.notes.push(format!("need at least {MIN_DETECTOR_N} paths"));
        return Ok(report);
    }
    let last = grid.len() - 1;
    let endpoints: Vec<EndpointSample> = (0..n)
        .map(|i| EndpointSample {
            x0: nalgebra::DVector::from_column_slice(ensemble.position(i, 0)),
            x1: nalgebra::DVector::from_column_slice(ensemble.position(i, last)),
            z: spec.latent.map(|_| nalgebra::DVector::zeros(d)),
        })
        .collect();
    let control = shuffled(&endpoints, seed);
    let interior = &grid.nodes()[1..last];
    let mut values = Vec::with_capacity(interior.len());
    let mut cvalues = Vec::with_capacity(interior.len());
    let mut worst_refused = 0.0f64;
    for (k, &t) in interior.iter().enumerate() {
        let est = trace_at(ensemble.slice(k + 1), cfg)?;
        let cs = slice_from_endpoints(spec, &control, t);
        let ctl = trace_at(cs.view(), cfg)?;
        worst_refused = worst_refused.max(refused_fraction(&est)).max(refused_fraction(&ctl));
        values.push(est.mean);
        cvalues.push(ctl.mean);
    }
    let integral = trapezoid(interior, &values);
    let cintegral = trapezoid(interior, &cvalues);
    let ratio = integral / cintegral;
    report.metric("integrated_trace_pi", integral);
    report.metric("control_integrated_trace_pi", cintegral);
    report.metric("ratio", ratio);
    report.metric("max_refused_fraction", worst_refused);
    report.verdict = if !(cintegral > 1e-12) || !ratio.is_finite() {
        report.notes.push("control trace vanishes; nothing to calibrate against".into());
        Verdict::Inconclusive
    } else if worst_refused > cfg.max_refused {
        report.notes.push("too many low-density queries".into());
        Verdict::Inconclusive
    } else if ratio <= cfg.control_ratio {
        Verdict::Consistent
    } else {
        Verdict::Violated
    };
    report
        .notes
        .push("consistent means consistent with a deterministic coupling".into());
    if spec.schedule != Schedule::Affine {
        report.notes.push("non-affine schedule".into());
    }
    Ok(report)
}
