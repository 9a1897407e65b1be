use std::sync::Arc;

use rayon::prelude::*;

use super::grid::{GridField, Rank, SpatialGrid};
use crate::error::{Error, Result};

fn require(f: &GridField, rank: Rank, what: &str) -> Result<()> {
    if f.rank() != rank {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects a {rank:?} field, got {:?}",
            f.rank()
        )));
    }
    Ok(())
}

pub(crate) fn same_grid(a: &GridField, b: &GridField) -> Result<()> {
    if !a.grid().same_geometry(b.grid()) {
        return Err(Error::InvalidArgument("fields live on different grids".into()));
    }
    Ok(())
}

/// Fills masked nodes with `f(idx, out)`; other nodes get NaN.
fn masked_map(
    grid: &Arc<SpatialGrid>,
    rank: Rank,
    time: f64,
    f: impl Fn(usize, &mut [f64]) + Sync,
) -> Result<GridField> {
    let comps = rank.components(grid.dim());
    let mut values = vec![f64::NAN; grid.len() * comps];
    let mask = grid.mask();
    values
        .par_chunks_mut(comps)
        .enumerate()
        .filter(|(idx, _)| mask[*idx])
        .for_each(|(idx, out)| f(idx, out));
    GridField::new(grid.clone(), rank, time, values)
}

/// Partial derivative of component `c` along `axis` at node `idx`.
pub(crate) fn partial(f: &GridField, c: usize, axis: usize, idx: usize) -> f64 {
    let grid = f.grid();
    let comps = f.components();
    let vals = f.values();
    grid.stencil().apply(
        |k| vals[grid.offset(idx, axis, k) * comps + c],
        grid.axes()[axis].step,
    )
}

pub fn grid_gradient(f: &GridField) -> Result<GridField> {
    require(f, Rank::Scalar, "gradient")?;
    let d = f.dim();
    masked_map(f.grid(), Rank::Vector, f.time(), |idx, out| {
        for (axis, o) in out.iter_mut().enumerate().take(d) {
            *o = partial(f, 0, axis, idx);
        }
    })
}

/// `(∇·T)_j = Σᵢ ∂ᵢ T_ij`, contracting the first index.
pub fn grid_divergence_matrix(t: &GridField) -> Result<GridField> {
    require(t, Rank::Matrix, "matrix divergence")?;
    let d = t.dim();
    masked_map(t.grid(), Rank::Vector, t.time(), |idx, out| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|i| partial(t, i * d + j, i, idx)).sum();
        }
    })
}

pub fn grid_divergence(v: &GridField) -> Result<GridField> {
    require(v, Rank::Vector, "divergence")?;
    let d = v.dim();
    masked_map(v.grid(), Rank::Scalar, v.time(), |idx, out| {
        out[0] = (0..d).map(|i| partial(v, i, i, idx)).sum();
    })
}

/// `(w·∇)v`, i.e. the Jacobian of `v` applied to `w` at each node.
pub fn advect(v: &GridField, w: &GridField) -> Result<GridField> {
    require(v, Rank::Vector, "advection")?;
    require(w, Rank::Vector, "advection")?;
    same_grid(v, w)?;
    let d = v.dim();
    masked_map(v.grid(), Rank::Vector, v.time(), |idx, out| {
        let wi = w.at(idx);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|i| wi[i] * partial(v, j, i, idx)).sum();
        }
    })
}

/// Nodewise `ρ·f` for scalar `ρ` and any `f`.
pub fn scale_by(rho: &GridField, f: &GridField) -> Result<GridField> {
    require(rho, Rank::Scalar, "scaling")?;
    same_grid(rho, f)?;
    let comps = f.components();
    let values = f
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| rho.values()[k / comps] * v)
        .collect();
    GridField::new(f.grid().clone(), f.rank(), f.time(), values)
}

/// Nodewise matrix-vector product `M·v`.
pub fn mat_vec(m: &GridField, v: &GridField) -> Result<GridField> {
    require(m, Rank::Matrix, "mat_vec")?;
    require(v, Rank::Vector, "mat_vec")?;
    same_grid(m, v)?;
    let d = v.dim();
    let mut values = Vec::with_capacity(v.values().len());
    for idx in 0..v.grid().len() {
        let (mi, vi) = (m.at(idx), v.at(idx));
        for i in 0..d {
            values.push((0..d).map(|j| mi[i * d + j] * vi[j]).sum());
        }
    }
    GridField::new(v.grid().clone(), Rank::Vector, v.time(), values)
}

/// `a·x + b·y` nodewise.
pub fn lin_comb(a: f64, x: &GridField, b: f64, y: &GridField) -> Result<GridField> {
    same_grid(x, y)?;
    if x.rank() != y.rank() {
        return Err(Error::ShapeMismatch("rank mismatch in linear combination".into()));
    }
    let values = x
        .values()
        .iter()
        .zip(y.values())
        .map(|(p, q)| a * p + b * q)
        .collect();
    GridField::new(x.grid().clone(), x.rank(), x.time(), values)
}

pub fn add(x: &GridField, y: &GridField) -> Result<GridField> {
    lin_comb(1.0, x, 1.0, y)
}

pub fn sub(x: &GridField, y: &GridField) -> Result<GridField> {
    lin_comb(1.0, x, -1.0, y)
}

/// Rewraps a field onto `grid`, which must share its geometry (typically a
/// restriction with a narrower mask).
pub fn with_grid(f: &GridField, grid: Arc<SpatialGrid>) -> Result<GridField> {
    if !grid.same_geometry(f.grid()) {
        return Err(Error::InvalidArgument("grid geometry differs".into()));
    }
    GridField::new(grid, f.rank(), f.time(), f.values().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::Stencil;

    fn grid2() -> Arc<SpatialGrid> {
        Arc::new(SpatialGrid::from_box(&[(-1.0, 1.0), (-1.0, 1.0)], 11, Stencil::Central2).unwrap())
    }

    #[test]
    fn divergence_contracts_first_index() {
        let g = grid2();
        // T = [[0, x1], [0, 0]]: first-index contraction gives (0, ∂₁x1) = (0, 1),
        // second-index contraction would give (∂₂x1, 0) = (0, 0).
        let t = GridField::from_fn(g, Rank::Matrix, 0.0, |x| vec![0.0, x[0], 0.0, 0.0]).unwrap();
        let div = grid_divergence_matrix(&t).unwrap();
        let idx = (0..t.grid().len()).find(|&i| t.grid().mask()[i]).unwrap();
        assert!((div.at(idx)[0]).abs() < 1e-12);
        assert!((div.at(idx)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outside_mask_is_nan() {
        let g = grid2();
        let f = GridField::from_fn(g, Rank::Scalar, 0.0, |x| vec![x[0]]).unwrap();
        let grad = grid_gradient(&f).unwrap();
        assert!(grad.at(0)[0].is_nan());
        assert!(grad.masked_rms().is_finite());
    }

    #[test]
    fn advection_of_linear_field() {
        let g = grid2();
        let v = GridField::from_fn(g.clone(), Rank::Vector, 0.0, |x| vec![x[1], 2.0 * x[0]]).unwrap();
        let w = GridField::from_fn(g, Rank::Vector, 0.0, |_| vec![1.0, 3.0]).unwrap();
        let adv = advect(&v, &w).unwrap();
        let idx = (0..v.grid().len()).find(|&i| v.grid().mask()[i]).unwrap();
        assert!((adv.at(idx)[0] - 3.0).abs() < 1e-12);
        assert!((adv.at(idx)[1] - 2.0).abs() < 1e-12);
    }
}
