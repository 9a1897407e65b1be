use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use super::grid::{GridField, Rank, SpatialGrid};
use super::ops::with_grid;
use super::residual::{TimeScheme, TimeStack};
use crate::error::{Error, Result};
use crate::estimate::{Bandwidth, KernelConfig, KernelEstimator, Target};
use crate::oracle::GaussianProcessSpec;
use crate::process::{process_endpoints, slice_from_endpoints, ProcessSpec, Slice, SliceView};

/// Density and velocity on three time slices, plus acceleration, `Σ` and
/// `Π` at the current one.
#[derive(Debug, Clone)]
pub struct FieldSet {
    pub rho: TimeStack,
    pub v: TimeStack,
    pub a: GridField,
    pub sigma: GridField,
    pub pi: GridField,
}

impl FieldSet {
    pub fn grid(&self) -> &Arc<SpatialGrid> {
        self.rho.current().grid()
    }

    pub fn time(&self) -> f64 {
        self.rho.current().time()
    }
}

/// All fields at one time. For estimated fields the grid mask is narrowed
/// to nodes where every estimate in the stencil was admissible.
#[derive(Debug, Clone)]
pub struct SliceFields {
    pub rho: GridField,
    pub v: GridField,
    pub a: GridField,
    pub sigma: GridField,
    pub pi: GridField,
}

fn oracle_slice_fields(
    spec: &GaussianProcessSpec,
    t: f64,
    grid: &Arc<SpatialGrid>,
    full: bool,
) -> Result<SliceFields> {
    let os = spec.at(t)?;
    let d = grid.dim();
    let n = grid.len();
    let mut rho = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n * d);
    let (mut a, mut sigma, mut pi) = (Vec::new(), Vec::new(), Vec::new());
    for idx in 0..n {
        let x = DVector::from_vec(grid.coords(idx));
        if full {
            let f = os.fields(&x);
            rho.push(f.rho);
            v.extend(f.v.iter());
            a.extend(f.a.iter());
            sigma.extend(f.sigma.transpose().iter());
            pi.extend(f.pi.transpose().iter());
        } else {
            rho.push(os.density(&x));
            v.extend(os.velocity(&x).iter());
        }
    }
    if !full {
        a = vec![0.0; n * d];
        sigma = vec![0.0; n * d * d];
        pi = vec![0.0; n * d * d];
    }
    Ok(SliceFields {
        rho: GridField::new(grid.clone(), Rank::Scalar, t, rho)?,
        v: GridField::new(grid.clone(), Rank::Vector, t, v)?,
        a: GridField::new(grid.clone(), Rank::Vector, t, a)?,
        sigma: GridField::new(grid.clone(), Rank::Matrix, t, sigma)?,
        pi: GridField::new(grid.clone(), Rank::Matrix, t, pi)?,
    })
}

/// Closed-form Gaussian fields tabulated on `grid`. The time stencil is
/// central when `[t − h_t, t + h_t] ⊂ [0, 1]`, one-sided otherwise.
pub fn oracle_fields(
    spec: &GaussianProcessSpec,
    t: f64,
    grid: &SpatialGrid,
    h_t: f64,
) -> Result<FieldSet> {
    check_dim(grid, spec.dim())?;
    let grid = Arc::new(grid.clone());
    let scheme = TimeScheme::for_time(t, h_t);
    let times = scheme.times(t, h_t);
    let c = scheme.center();
    let mut slices = Vec::with_capacity(3);
    for (s, &ts) in times.iter().enumerate() {
        slices.push(oracle_slice_fields(spec, ts, &grid, s == c)?);
    }
    assemble(slices, c, h_t, scheme)
}

fn assemble(mut slices: Vec<SliceFields>, c: usize, h_t: f64, scheme: TimeScheme) -> Result<FieldSet> {
    let rho = [slices[0].rho.clone(), slices[1].rho.clone(), slices[2].rho.clone()];
    let v = [slices[0].v.clone(), slices[1].v.clone(), slices[2].v.clone()];
    let cur = slices.swap_remove(c);
    Ok(FieldSet {
        rho: TimeStack::new(rho, h_t, scheme)?,
        v: TimeStack::new(v, h_t, scheme)?,
        a: cur.a,
        sigma: cur.sigma,
        pi: cur.pi,
    })
}

fn check_dim(grid: &SpatialGrid, d: usize) -> Result<()> {
    if grid.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "grid dimension {} for a process in dimension {d}",
            grid.dim()
        )));
    }
    Ok(())
}

/// `mean ± k·sd` per axis of the marginal at `t`.
pub fn oracle_box(spec: &GaussianProcessSpec, t: f64, k: f64) -> Result<Vec<(f64, f64)>> {
    let os = spec.at(t)?;
    let sd = os.std_devs();
    Ok((0..spec.dim())
        .map(|i| (os.mean[i] - k * sd[i], os.mean[i] + k * sd[i]))
        .collect())
}

/// Per-axis `[q, 1 − q]` empirical quantile box of the slice positions.
pub fn empirical_box(slice: &SliceView<'_>, q: f64) -> Result<Vec<(f64, f64)>> {
    if !(0.0..0.5).contains(&q) || slice.n < 2 {
        return Err(Error::InvalidArgument(format!(
            "quantile {q} on {} samples",
            slice.n
        )));
    }
    (0..slice.d)
        .map(|j| {
            let mut xs: Vec<f64> = (0..slice.n).map(|i| slice.position(i)[j]).collect();
            xs.sort_by(f64::total_cmp);
            let at = |p: f64| xs[((p * (xs.len() - 1) as f64).round()) as usize];
            let (lo, hi) = (at(q), at(1.0 - q));
            if !(hi > lo) {
                return Err(Error::DegenerateData(format!("axis {j} has no spread")));
            }
            Ok((lo, hi))
        })
        .collect()
}

/// Slices at the three stencil times sharing endpoints (the same paths).
pub fn sample_stack(
    spec: &ProcessSpec,
    n: usize,
    t: f64,
    h_t: f64,
    seed: u64,
) -> Result<(TimeScheme, [Slice; 3])> {
    let scheme = TimeScheme::for_time(t, h_t);
    let ends = process_endpoints(spec, n, seed)?;
    let [a, b, c] = scheme.times(t, h_t);
    Ok((
        scheme,
        [
            slice_from_endpoints(spec, &ends, a),
            slice_from_endpoints(spec, &ends, b),
            slice_from_endpoints(spec, &ends, c),
        ],
    ))
}

/// Kernel estimates of all fields on `grid`. Nodes below the density floor
/// hold NaN and are removed, with their stencil neighbourhood, from the mask.
pub fn estimated_slice_fields(
    slice: &SliceView<'_>,
    grid: &SpatialGrid,
    cfg: &KernelConfig,
) -> Result<SliceFields> {
    check_dim(grid, slice.d)?;
    let est = KernelEstimator::new(*slice, cfg)?;
    let d = grid.dim();
    let rows: Vec<Option<Vec<f64>>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let e = est.estimate(&grid.coords(idx)).ok()?;
            let mut row = vec![e.rho_hat];
            row.extend(e.v_hat.iter());
            row.extend(e.a_hat.iter());
            row.extend(e.sigma_hat.transpose().iter());
            row.extend(e.pi_hat.transpose().iter());
            Some(row)
        })
        .collect();
    let ok: Vec<bool> = rows.iter().map(Option::is_some).collect();
    let restricted = Arc::new(grid.restrict(&ok)?);
    let widths = [1, d, d, d * d, d * d];
    let mut cols: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(w * grid.len())).collect();
    for row in &rows {
        let mut off = 0;
        for (col, &w) in cols.iter_mut().zip(&widths) {
            match row {
                Some(r) => col.extend_from_slice(&r[off..off + w]),
                None => col.extend(std::iter::repeat_n(f64::NAN, w)),
            }
            off += w;
        }
    }
    let t = slice.t;
    let mut it = cols.into_iter();
    let mut next = |rank| GridField::new(restricted.clone(), rank, t, it.next().unwrap_or_default());
    Ok(SliceFields {
        rho: next(Rank::Scalar)?,
        v: next(Rank::Vector)?,
        a: next(Rank::Vector)?,
        sigma: next(Rank::Matrix)?,
        pi: next(Rank::Matrix)?,
    })
}

/// Kernel estimates on three stencil slices. The bandwidth is resolved once
/// on the current slice and reused on the others.
pub fn estimated_fields(
    slices: [SliceView<'_>; 3],
    scheme: TimeScheme,
    h_t: f64,
    grid: &SpatialGrid,
    cfg: &KernelConfig,
) -> Result<FieldSet> {
    let c = scheme.center();
    let mut cfg = *cfg;
    if cfg.bandwidth == Bandwidth::Silverman {
        cfg.bandwidth = Bandwidth::Fixed(crate::estimate::bandwidth_silverman(&slices[c])?);
    }
    let current = estimated_slice_fields(&slices[c], grid, &cfg)?;
    let mut ok: Vec<bool> = current.grid_mask_source();
    let mut rho = Vec::with_capacity(3);
    let mut v = Vec::with_capacity(3);
    for (s, slice) in slices.iter().enumerate() {
        if s == c {
            rho.push(current.rho.values().to_vec());
            v.push(current.v.values().to_vec());
            continue;
        }
        let est = KernelEstimator::new(*slice, &cfg)?;
        let pairs: Vec<Option<(f64, DVector<f64>)>> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let x = grid.coords(idx);
                let (vel, _) = est.conditional(&x, Target::Velocity).ok()?;
                Some((est.density(&x), vel))
            })
            .collect();
        let d = grid.dim();
        let mut r = Vec::with_capacity(grid.len());
        let mut vv = Vec::with_capacity(grid.len() * d);
        for (idx, p) in pairs.into_iter().enumerate() {
            match p {
                Some((rh, vel)) => {
                    r.push(rh);
                    vv.extend(vel.iter());
                }
                None => {
                    ok[idx] = false;
                    r.push(f64::NAN);
                    vv.extend(std::iter::repeat_n(f64::NAN, d));
                }
            }
        }
        rho.push(r);
        v.push(vv);
    }
    let g = Arc::new(grid.restrict(&ok)?);
    let times = scheme.times(slices[c].t, h_t);
    let stack = |vals: Vec<Vec<f64>>, rank| -> Result<TimeStack> {
        let mut it = vals.into_iter().zip(times);
        let mut next = || {
            let (vals, t) = it.next().unwrap_or_default();
            GridField::new(g.clone(), rank, t, vals)
        };
        TimeStack::new([next()?, next()?, next()?], h_t, scheme)
    };
    Ok(FieldSet {
        rho: stack(rho, Rank::Scalar)?,
        v: stack(v, Rank::Vector)?,
        a: with_grid(&current.a, g.clone())?,
        sigma: with_grid(&current.sigma, g.clone())?,
        pi: with_grid(&current.pi, g)?,
    })
}

impl SliceFields {
    /// Nodes where the estimate exists (finite density).
    fn grid_mask_source(&self) -> Vec<bool> {
        self.rho.values().iter().map(|r| r.is_finite()).collect()
    }
}
