//! Kernel estimators of `ρ_t`, `v_t`, `a_t`, `Σ_t` and `Π_t` from one time
//! slice of a path ensemble.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::process::SliceView;

/// Default minimum kernel mass below which estimates are refused.
pub const DEFAULT_DENSITY_FLOOR: f64 = 25.0;

/// Kernel support cutoff in bandwidths; neglected weights are below 1.6e-8.
pub const KERNEL_CUTOFF: f64 = 6.0;

/// Relative tolerance for negative Reynolds eigenvalues before refusing.
pub const PSD_REPAIR_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    Silverman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
    pub kernel: KernelKind,
    pub density_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            bandwidth: Bandwidth::Silverman,
            kernel: KernelKind::Gaussian,
            density_floor: DEFAULT_DENSITY_FLOOR,
        }
    }
}

impl KernelConfig {
    pub fn with_bandwidth(h: f64) -> Self {
        KernelConfig {
            bandwidth: Bandwidth::Fixed(h),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
            }
        }
        if !(self.density_floor.is_finite() && self.density_floor >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "density_floor must be >= 0, got {}",
                self.density_floor
            )));
        }
        Ok(())
    }
}

/// What the Nadaraya–Watson ratio averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Velocity,
    Acceleration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceEstimate {
    pub x: DVector<f64>,
    pub rho_hat: f64,
    pub v_hat: DVector<f64>,
    pub a_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub pi_hat: DMatrix<f64>,
    /// Sum of unnormalized kernel weights `exp(−|x − X_i|² / 2h²)`.
    pub effective_n: f64,
}

/// Silverman's rule `σ̂ (4 / ((d + 2) N))^{1/(d+4)}`, with `σ̂` the mean
/// per-coordinate sample standard deviation.
pub fn bandwidth_silverman(slice: &SliceView<'_>) -> Result<f64> {
    let (n, d) = (slice.n, slice.d);
    if n < 2 {
        return Err(Error::DegenerateData("Silverman bandwidth needs at least two samples".into()));
    }
    let mut sd_sum = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| slice.position(i)[j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (slice.position(i)[j] - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        sd_sum += var.sqrt();
    }
    let sigma = sd_sum / d as f64;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::DegenerateData(format!(
            "slice at t = {} has zero spread",
            slice.t
        )));
    }
    Ok(silverman_from_sigma(sigma, n, d))
}

pub fn silverman_from_sigma(sigma: f64, n: usize, d: usize) -> f64 {
    let d = d as f64;
    sigma * (4.0 / ((d + 2.0) * n as f64)).powf(1.0 / (d + 4.0))
}

/// `Π = Σ − v vᵀ`, symmetrized; eigenvalues down to `−1e-8 · tr Σ` are
/// clipped to zero, anything below is an error.
pub fn reynolds_tensor(sigma: &DMatrix<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = v.len();
    if sigma.shape() != (d, d) {
        return Err(Error::ShapeMismatch(format!(
            "second moment {}x{} vs velocity of length {d}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let pi = linalg::symmetrize(&(sigma - linalg::outer(v, v)));
    let trace = sigma.trace();
    let min = linalg::min_eigenvalue(&pi);
    if min >= 0.0 {
        return Ok(pi);
    }
    if min < -PSD_REPAIR_TOL * trace.abs() {
        return Err(Error::InconsistentMoments {
            min_eigenvalue: min,
            trace,
        });
    }
    Ok(linalg::clip_psd(&pi))
}

struct Sums {
    weight: f64,
    vel: DVector<f64>,
    acc: DVector<f64>,
    second: DMatrix<f64>,
}

/// Gaussian-kernel estimator over one slice, with the samples indexed by
/// their first coordinate so that queries only visit the kernel support.
pub struct KernelEstimator<'a> {
    slice: SliceView<'a>,
    h: f64,
    floor: f64,
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl<'a> KernelEstimator<'a> {
    pub fn new(slice: SliceView<'a>, cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        if slice.n == 0 {
            return Err(Error::InvalidArgument("empty slice".into()));
        }
        check_moments(&slice)?;
        let h = match cfg.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Silverman => bandwidth_silverman(&slice)?,
        };
        let mut order: Vec<usize> = (0..slice.n).collect();
        order.sort_by(|&a, &b| slice.position(a)[0].total_cmp(&slice.position(b)[0]));
        let keys = order.iter().map(|&i| slice.position(i)[0]).collect();
        Ok(KernelEstimator {
            slice,
            h,
            floor: cfg.density_floor,
            order,
            keys,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn slice(&self) -> &SliceView<'a> {
        &self.slice
    }

    fn for_each_weight(&self, x: &[f64], skip: Option<usize>, mut f: impl FnMut(usize, f64)) {
        let radius = KERNEL_CUTOFF * self.h;
        let r2 = radius * radius;
        let inv = 1.0 / (2.0 * self.h * self.h);
        let lo = self.keys.partition_point(|&k| k < x[0] - radius);
        let hi = self.keys.partition_point(|&k| k <= x[0] + radius);
        for &i in &self.order[lo..hi] {
            if Some(i) == skip {
                continue;
            }
            let p = self.slice.position(i);
            let mut sq = 0.0;
            for (a, b) in p.iter().zip(x) {
                sq += (a - b) * (a - b);
            }
            if sq <= r2 {
                f(i, (-sq * inv).exp());
            }
        }
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.slice.d {
            return Err(Error::ShapeMismatch(format!(
                "query of length {} in dimension {}",
                x.len(),
                self.slice.d
            )));
        }
        Ok(())
    }

    fn admit(&self, weight: f64) -> Result<()> {
        if weight < self.floor || weight <= 0.0 {
            return Err(Error::LowDensity {
                effective_n: weight,
                floor: self.floor,
            });
        }
        Ok(())
    }

    fn kernel_norm(&self) -> f64 {
        (2.0 * PI * self.h * self.h).powf(-0.5 * self.slice.d as f64)
    }

    /// `ρ̂(x) = (1/N) Σ K_h(x − X_i)`.
    pub fn density(&self, x: &[f64]) -> f64 {
        let mut w = 0.0;
        self.for_each_weight(x, None, |_, k| w += k);
        w * self.kernel_norm() / self.slice.n as f64
    }

    /// Nadaraya–Watson average of velocities or accelerations, with the
    /// effective sample size.
    pub fn conditional(&self, x: &[f64], target: Target) -> Result<(DVector<f64>, f64)> {
        self.check_query(x)?;
        self.weighted_mean(x, target, None)
    }

    fn weighted_mean(&self, x: &[f64], target: Target, skip: Option<usize>) -> Result<(DVector<f64>, f64)> {
        let d = self.slice.d;
        let mut w = 0.0;
        let mut acc = DVector::zeros(d);
        self.for_each_weight(x, skip, |i, k| {
            w += k;
            let y = match target {
                Target::Velocity => self.slice.velocity(i),
                Target::Acceleration => self.slice.acceleration(i),
            };
            for j in 0..d {
                acc[j] += k * y[j];
            }
        });
        self.admit(w)?;
        Ok((acc / w, w))
    }

    /// Kernel average of `Ẋ ⊗ Ẋ`.
    pub fn second_moment(&self, x: &[f64]) -> Result<(DMatrix<f64>, f64)> {
        self.check_query(x)?;
        let s = self.sums(x);
        self.admit(s.weight)?;
        Ok((linalg::symmetrize(&(s.second / s.weight)), s.weight))
    }

    fn sums(&self, x: &[f64]) -> Sums {
        let d = self.slice.d;
        let mut s = Sums {
            weight: 0.0,
            vel: DVector::zeros(d),
            acc: DVector::zeros(d),
            second: DMatrix::zeros(d, d),
        };
        self.for_each_weight(x, None, |i, k| {
            s.weight += k;
            let v = self.slice.velocity(i);
            let a = self.slice.acceleration(i);
            for j in 0..d {
                s.vel[j] += k * v[j];
                s.acc[j] += k * a[j];
                for l in 0..d {
                    s.second[(j, l)] += k * v[j] * v[l];
                }
            }
        });
        s
    }

    /// All fields at `x` from a single pass over the kernel support.
    pub fn estimate(&self, x: &[f64]) -> Result<SliceEstimate> {
        self.check_query(x)?;
        let s = self.sums(x);
        self.admit(s.weight)?;
        let v_hat = &s.vel / s.weight;
        let a_hat = &s.acc / s.weight;
        let sigma_hat = linalg::symmetrize(&(&s.second / s.weight));
        let pi_hat = reynolds_tensor(&sigma_hat, &v_hat)?;
        if pi_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Reynolds tensor estimate".into()));
        }
        Ok(SliceEstimate {
            x: DVector::from_column_slice(x),
            rho_hat: s.weight * self.kernel_norm() / self.slice.n as f64,
            v_hat,
            a_hat,
            sigma_hat,
            pi_hat,
            effective_n: s.weight,
        })
    }

    /// Leave-one-out velocity estimate at sample `i`.
    pub fn loo_velocity(&self, i: usize) -> Result<(DVector<f64>, f64)> {
        self.weighted_mean(self.slice.position(i), Target::Velocity, Some(i))
    }

    /// Monte Carlo `E[tr Π_t(X_t)]` as the mean of `|Ẋ_i − v̂_{−i}(X_i)|²`
    /// over the query samples (law of total variance). Queries refused for
    /// low density are counted and skipped.
    pub fn mean_trace_reynolds(&self, queries: &[usize]) -> Result<TraceEstimate> {
        let results: Vec<Result<(f64, f64, f64)>> = queries
            .par_iter()
            .map(|&i| {
                let xdot = self.slice.velocity(i);
                match self.loo_velocity(i) {
                    Ok((v, _)) => {
                        let resid: f64 = xdot.iter().zip(v.iter()).map(|(a, b)| (a - b).powi(2)).sum();
                        let kinetic: f64 = xdot.iter().map(|a| a * a).sum();
                        Ok((resid, kinetic, v.norm_squared()))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut vals = Vec::with_capacity(queries.len());
        let mut kinetic = 0.0;
        let mut vhat_sq = 0.0;
        let mut refused = 0;
        for r in results {
            match r {
                Ok((res, k, v)) => {
                    vals.push(res);
                    kinetic += k;
                    vhat_sq += v;
                }
                Err(Error::LowDensity { .. }) => refused += 1,
                Err(e) => return Err(e),
            }
        }
        let used = vals.len();
        if used == 0 {
            return Ok(TraceEstimate {
                mean: f64::NAN,
                std_err: f64::NAN,
                mean_sq_velocity: f64::NAN,
                mean_sq_v_hat: f64::NAN,
                used,
                refused,
            });
        }
        let (mean, std_err) = mean_and_se(&vals);
        if !mean.is_finite() {
            return Err(Error::NonFinite("trace estimate".into()));
        }
        Ok(TraceEstimate {
            mean,
            std_err,
            mean_sq_velocity: kinetic / used as f64,
            mean_sq_v_hat: vhat_sq / used as f64,
            used,
            refused,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub mean: f64,
    pub std_err: f64,
    /// `Ê|Ẋ|²` over the admitted queries.
    pub mean_sq_velocity: f64,
    /// `Ê|v̂(X)|²` over the admitted queries.
    pub mean_sq_v_hat: f64,
    pub used: usize,
    pub refused: usize,
}

pub fn mean_and_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Second-moment finiteness guard on the slice arrays.
fn check_moments(slice: &SliceView<'_>) -> Result<()> {
    for (name, data) in [
        ("positions", slice.positions),
        ("velocities", slice.velocities),
        ("accelerations", slice.accelerations),
    ] {
        if data.len() != slice.n * slice.d {
            return Err(Error::ShapeMismatch(format!("{name} array length")));
        }
        let second: f64 = data.iter().map(|v| v * v).sum();
        if !second.is_finite() {
            return Err(Error::NonFinite(format!("{name} have non-finite second moment")));
        }
    }
    Ok(())
}

pub fn kde_density(slice: &SliceView<'_>, x: &[f64], cfg: &KernelConfig) -> Result<f64> {
    let est = KernelEstimator::new(*slice, cfg)?;
    est.check_query(x)?;
    Ok(est.density(x))
}

pub fn nw_conditional(
    slice: &SliceView<'_>,
    x: &[f64],
    target: Target,
    cfg: &KernelConfig,
) -> Result<(DVector<f64>, f64)> {
    KernelEstimator::new(*slice, cfg)?.conditional(x, target)
}

pub fn nw_second_moment(slice: &SliceView<'_>, x: &[f64], cfg: &KernelConfig) -> Result<DMatrix<f64>> {
    Ok(KernelEstimator::new(*slice, cfg)?.second_moment(x)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::Slice;

    fn slice_1d(pos: Vec<f64>, vel: Vec<f64>) -> Slice {
        let n = pos.len();
        Slice {
            t: 0.5,
            n,
            d: 1,
            accelerations: vec![0.0; n],
            positions: pos,
            velocities: vel,
        }
    }

    #[test]
    fn silverman_formula() {
        let h = silverman_from_sigma(1.0, 10_000, 1);
        assert!((h - (4.0f64 / 30_000.0).powf(0.2)).abs() < 1e-15);
        assert!((h - 0.1679).abs() < 5e-4);
        assert!((silverman_from_sigma(2.0, 10_000, 1) - 2.0 * h).abs() < 1e-15);
        let shrink = silverman_from_sigma(1.0, 40_000, 1) / h;
        assert!((shrink - 4f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn silverman_rejects_constant_slice() {
        let s = slice_1d(vec![1.0; 10], vec![0.0; 10]);
        assert!(matches!(bandwidth_silverman(&s.view()), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn single_kernel_density() {
        let s = slice_1d(vec![0.0], vec![0.0]);
        let h = 0.3;
        let rho = kde_density(&s.view(), &[0.0], &KernelConfig::with_bandwidth(h)).unwrap();
        assert!((rho - 1.0 / (2.0 * PI * h * h).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn density_vanishes_far_from_data() {
        let s = slice_1d(vec![0.0, 0.1, -0.2], vec![0.0; 3]);
        let h = 0.1;
        let rho = kde_density(&s.view(), &[-0.2 - 10.0 * h - 0.1], &KernelConfig::with_bandwidth(h)).unwrap();
        assert!(rho < 1e-10);
    }

    #[test]
    fn constant_velocity_recovered() {
        let pos: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = slice_1d(pos, vec![1.25; 200]);
        let cfg = KernelConfig::with_bandwidth(0.3);
        for x in [-0.5, 0.0, 0.4] {
            let (v, n) = nw_conditional(&s.view(), &[x], Target::Velocity, &cfg).unwrap();
            assert!((v[0] - 1.25).abs() < 1e-14);
            assert!(n >= 25.0);
            let sig = nw_second_moment(&s.view(), &[x], &cfg).unwrap();
            assert!((sig[(0, 0)] - 1.25 * 1.25).abs() < 1e-13);
            let (a, _) = nw_conditional(&s.view(), &[x], Target::Acceleration, &cfg).unwrap();
            assert_eq!(a[0], 0.0);
        }
    }

    #[test]
    fn low_density_refused() {
        let s = slice_1d(vec![0.0; 10], vec![1.0; 10]);
        let r = nw_conditional(&s.view(), &[0.0], Target::Velocity, &KernelConfig::with_bandwidth(1.0));
        assert!(matches!(r, Err(Error::LowDensity { .. })));
    }

    #[test]
    fn reynolds_examples() {
        let c = DVector::from_vec(vec![0.3, -1.2]);
        let pi = reynolds_tensor(&linalg::outer(&c, &c), &c).unwrap();
        assert!(pi.amax() < 1e-15);

        let pi = reynolds_tensor(&DMatrix::from_element(1, 1, 2.0), &DVector::zeros(1)).unwrap();
        assert_eq!(pi[(0, 0)], 2.0);

        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let pi = reynolds_tensor(&sigma, &v).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]);
        assert!(linalg::max_abs_diff(&pi, &expect) < 1e-15);
    }

    #[test]
    fn reynolds_inconsistent_moments() {
        let r = reynolds_tensor(&DMatrix::from_element(1, 1, 1.0), &DVector::from_element(1, 2.0));
        assert!(matches!(r, Err(Error::InconsistentMoments { .. })));
    }

    #[test]
    fn reynolds_clips_small_negatives() {
        let sigma = DMatrix::from_element(1, 1, 1.0);
        let v = DVector::from_element(1, (1.0f64 + 1e-10).sqrt());
        let pi = reynolds_tensor(&sigma, &v).unwrap();
        assert_eq!(pi[(0, 0)], 0.0);
    }

    #[test]
    fn non_finite_slice_rejected() {
        let s = slice_1d(vec![0.0, f64::NAN, 1.0], vec![0.0; 3]);
        let r = KernelEstimator::new(s.view(), &KernelConfig::with_bandwidth(0.5));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let s = slice_1d(vec![0.0, 1.0], vec![0.0; 2]);
        assert!(KernelEstimator::new(s.view(), &KernelConfig::with_bandwidth(-1.0)).is_err());
        let cfg = KernelConfig {
            density_floor: -1.0,
            ..Default::default()
        };
        assert!(KernelEstimator::new(s.view(), &cfg).is_err());
    }
}
