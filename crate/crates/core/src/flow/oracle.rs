use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use nalgebra::DVector;

use crate::calculus::{empirical_box, GridField, Rank};
use crate::error::{Error, Result};
use crate::estimate::{Bandwidth, KernelConfig, KernelEstimator, Target};
use crate::oracle::{GaussianProcessSpec, OracleSlice};
use crate::process::PathEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleSource {
    Analytic,
    KernelRegression,
    TabulatedGrid,
    Function,
}

/// `(t, x) ↦ v_t(x)`. Implementations are called concurrently from the
/// integrators.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    fn source(&self) -> OracleSource;

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Closed-form Gaussian velocity. Per-time quantities are cached, so a
/// batch of trajectories on one time grid solves each linear system once.
pub struct AnalyticOracle {
    spec: GaussianProcessSpec,
    cache: RwLock<HashMap<u64, Arc<OracleSlice>>>,
}

impl AnalyticOracle {
    pub fn new(spec: GaussianProcessSpec) -> Self {
        AnalyticOracle {
            spec,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &GaussianProcessSpec {
        &self.spec
    }

    fn slice(&self, t: f64) -> Result<Arc<OracleSlice>> {
        let key = t.to_bits();
        if let Some(s) = self.cache.read().ok().and_then(|c| c.get(&key).cloned()) {
            return Ok(s);
        }
        let s = Arc::new(self.spec.at(t)?);
        if let Ok(mut c) = self.cache.write() {
            c.insert(key, s.clone());
        }
        Ok(s)
    }
}

impl VelocityField for AnalyticOracle {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn source(&self) -> OracleSource {
        OracleSource::Analytic
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let v = self.slice(t)?.velocity(&DVector::from_column_slice(x));
        out.copy_from_slice(v.as_slice());
        Ok(())
    }
}

/// Wraps a closure as a velocity field.
pub struct FnOracle<F> {
    d: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> FnOracle<F> {
    pub fn new(d: usize, f: F) -> Self {
        FnOracle { d, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> VelocityField for FnOracle<F> {
    fn dim(&self) -> usize {
        self.d
    }

    fn source(&self) -> OracleSource {
        OracleSource::Function
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(t, x, out);
        Ok(())
    }
}

/// Nadaraya–Watson velocity from an ensemble, linear in time between the
/// ensemble's time nodes. Queries outside a slice's box are clamped onto it
/// and counted as excursions.
pub struct KernelOracle<'a> {
    times: Vec<f64>,
    estimators: Vec<KernelEstimator<'a>>,
    bounds: Vec<Vec<(f64, f64)>>,
    excursions: AtomicUsize,
}

impl<'a> KernelOracle<'a> {
    /// With `bounds = None` each time slice uses its own per-axis 1%–99%
    /// quantile box; otherwise the given box applies at all times.
    pub fn new(
        ensemble: &'a PathEnsemble,
        cfg: &KernelConfig,
        bounds: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        let grid = ensemble.grid();
        if let Some(b) = &bounds {
            if b.len() != ensemble.dim() {
                return Err(Error::ShapeMismatch("oracle bounds".into()));
            }
        }
        let mut estimators = Vec::with_capacity(grid.len());
        let mut boxes = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let slice = ensemble.slice(k);
            let mut c = *cfg;
            if c.bandwidth == Bandwidth::Silverman {
                c.bandwidth = Bandwidth::Fixed(crate::estimate::bandwidth_silverman(&slice)?);
            }
            boxes.push(match &bounds {
                Some(b) => b.clone(),
                None => empirical_box(&slice, 0.01)?,
            });
            estimators.push(KernelEstimator::new(slice, &c)?);
        }
        Ok(KernelOracle {
            times: grid.nodes().to_vec(),
            estimators,
            bounds: boxes,
            excursions: AtomicUsize::new(0),
        })
    }

    /// Clamping box of the `k`-th time slice.
    pub fn bounds(&self, k: usize) -> &[(f64, f64)] {
        &self.bounds[k]
    }

    /// Number of queries that were clamped onto a box.
    pub fn excursions(&self) -> usize {
        self.excursions.load(Ordering::Relaxed)
    }

    fn at_node(&self, k: usize, t: f64, x: &[f64]) -> Result<DVector<f64>> {
        let mut q = x.to_vec();
        let mut clamped = false;
        for (v, &(lo, hi)) in q.iter_mut().zip(&self.bounds[k]) {
            if *v < lo || *v > hi {
                *v = v.clamp(lo, hi);
                clamped = true;
            }
        }
        if clamped {
            self.excursions.fetch_add(1, Ordering::Relaxed);
        }
        match self.estimators[k].conditional(&q, Target::Velocity) {
            Ok((v, _)) => Ok(v),
            Err(Error::LowDensity { effective_n, floor }) => Err(Error::LeftSupport {
                t,
                reason: format!("effective sample size {effective_n:.3} below {floor}"),
            }),
            Err(e) => Err(e),
        }
    }
}

/// Index `k` and weight `w` such that `t ≈ (1 − w)·times[k] + w·times[k + 1]`.
fn bracket(times: &[f64], t: f64) -> (usize, f64) {
    if times.len() == 1 {
        return (0, 0.0);
    }
    let k = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1) - 1;
    let w = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);
    (k, w)
}

impl VelocityField for KernelOracle<'_> {
    fn dim(&self) -> usize {
        self.bounds[0].len()
    }

    fn source(&self) -> OracleSource {
        OracleSource::KernelRegression
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (k, w) = bracket(&self.times, t);
        let v0 = self.at_node(k, t, x)?;
        if w == 0.0 {
            out.copy_from_slice(v0.as_slice());
            return Ok(());
        }
        let v1 = self.at_node(k + 1, t, x)?;
        for (o, (a, b)) in out.iter_mut().zip(v0.iter().zip(v1.iter())) {
            *o = (1.0 - w) * a + w * b;
        }
        Ok(())
    }
}

/// Velocity tabulated on a grid at several times; multilinear in space and
/// linear in time. Queries in cells touching unmasked or non-finite nodes
/// are refused.
pub struct GridOracle {
    fields: Vec<GridField>,
    times: Vec<f64>,
}

impl GridOracle {
    pub fn new(mut fields: Vec<GridField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidArgument("no velocity slices".into()));
        }
        fields.sort_by(|a, b| a.time().total_cmp(&b.time()));
        for f in &fields {
            if f.rank() != Rank::Vector || !f.grid().same_geometry(fields[0].grid()) {
                return Err(Error::ShapeMismatch(
                    "velocity slices must be vector fields on one grid".into(),
                ));
            }
        }
        let times = fields.iter().map(GridField::time).collect();
        Ok(GridOracle { fields, times })
    }

    fn interpolate(&self, f: &GridField, x: &[f64], out: &mut [f64]) -> Result<()> {
        let grid = f.grid();
        let d = grid.dim();
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut frac = vec![0.0; d];
        let mut strides = vec![0usize; d];
        for ax in (0..d).rev() {
            let a = grid.axes()[ax];
            let s = (x[ax] - a.start) / a.step;
            if !(s >= 0.0 && s <= (a.n - 1) as f64) {
                return Err(Error::LeftSupport {
                    t: f.time(),
                    reason: format!("coordinate {ax} = {} outside the grid", x[ax]),
                });
            }
            let i = (s.floor() as usize).min(a.n - 2);
            frac[ax] = s - i as f64;
            base += i * stride;
            strides[ax] = stride;
            stride *= a.n;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for corner in 0..(1usize << d) {
            let mut idx = base;
            let mut w = 1.0;
            for ax in 0..d {
                if corner >> ax & 1 == 1 {
                    idx += strides[ax];
                    w *= frac[ax];
                } else {
                    w *= 1.0 - frac[ax];
                }
            }
            if w == 0.0 {
                continue;
            }
            let val = f.at(idx);
            if !grid.mask()[idx] || val.iter().any(|v| !v.is_finite()) {
                return Err(Error::LeftSupport {
                    t: f.time(),
                    reason: "query cell touches a masked node".into(),
                });
            }
            for (o, v) in out.iter_mut().zip(val) {
                *o += w * v;
            }
        }
        Ok(())
    }
}

impl VelocityField for GridOracle {
    fn dim(&self) -> usize {
        self.fields[0].dim()
    }

    fn source(&self) -> OracleSource {
        OracleSource::TabulatedGrid
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (k, w) = bracket(&self.times, t);
        self.interpolate(&self.fields[k], x, out)?;
        if w > 0.0 {
            let mut other = vec![0.0; out.len()];
            self.interpolate(&self.fields[k + 1], x, &mut other)?;
            for (o, b) in out.iter_mut().zip(other) {
                *o = (1.0 - w) * *o + w * b;
            }
        }
        Ok(())
    }
}
