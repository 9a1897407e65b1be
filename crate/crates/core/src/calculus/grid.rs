use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Central finite-difference stencil used for spatial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// `(f₊₁ − f₋₁) / 2h`
    Central2,
    /// `(−f₊₂ + 8f₊₁ − 8f₋₁ + f₋₂) / 12h`
    #[default]
    Central4,
}

impl Stencil {
    /// Number of boundary layers the stencil cannot reach past.
    pub fn halo(self) -> usize {
        match self {
            Stencil::Central2 => 1,
            Stencil::Central4 => 2,
        }
    }

    pub(crate) fn apply(self, f: impl Fn(isize) -> f64, step: f64) -> f64 {
        match self {
            Stencil::Central2 => (f(1) - f(-1)) / (2.0 * step),
            Stencil::Central4 => (-f(2) + 8.0 * f(1) - 8.0 * f(-1) + f(-2)) / (12.0 * step),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub n: usize,
}

impl Axis {
    pub fn coord(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn end(&self) -> f64 {
        self.coord(self.n - 1)
    }
}

/// Tensor-product grid with uniform spacing per axis. Nodes are numbered
/// row-major (last axis fastest). The mask marks nodes where derivatives are
/// taken and statistics are collected; it always excludes the boundary
/// layers the stencil cannot reach past.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    axes: Vec<Axis>,
    stencil: Stencil,
    strides: Vec<usize>,
    mask: Vec<bool>,
}

impl SpatialGrid {
    pub fn new(axes: Vec<Axis>, stencil: Stencil) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one axis".into()));
        }
        let min_nodes = (2 * stencil.halo() + 1).max(3);
        for (k, a) in axes.iter().enumerate() {
            if a.n < min_nodes {
                return Err(Error::InvalidGrid(format!(
                    "axis {k} has {} nodes, stencil needs at least {min_nodes}",
                    a.n
                )));
            }
            if !(a.step.is_finite() && a.step > 0.0 && a.start.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {k} has invalid spacing")));
            }
        }
        let mut strides = vec![1; axes.len()];
        for k in (0..axes.len() - 1).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].n;
        }
        let mut grid = SpatialGrid {
            axes,
            stencil,
            strides,
            mask: Vec::new(),
        };
        let halo = stencil.halo();
        grid.mask = (0..grid.len())
            .map(|idx| {
                grid.multi_index(idx)
                    .iter()
                    .zip(&grid.axes)
                    .all(|(&i, a)| i >= halo && i + halo < a.n)
            })
            .collect();
        Ok(grid)
    }

    /// `nodes` equally spaced nodes per axis spanning each `(lo, hi)`.
    pub fn from_box(bounds: &[(f64, f64)], nodes: usize, stencil: Stencil) -> Result<Self> {
        let axes = bounds
            .iter()
            .map(|&(lo, hi)| {
                if !(hi > lo) || nodes < 2 {
                    return Err(Error::InvalidGrid(format!("degenerate box [{lo}, {hi}]")));
                }
                Ok(Axis {
                    start: lo,
                    step: (hi - lo) / (nodes - 1) as f64,
                    n: nodes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes, stencil)
    }

    /// Nodes with spacing exactly `h`, starting at each `lo` and covering `hi`
    /// to within rounding.
    pub fn with_spacing(bounds: &[(f64, f64)], h: f64, stencil: Stencil) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {h}")));
        }
        let axes = bounds
            .iter()
            .map(|&(lo, hi)| Axis {
                start: lo,
                step: h,
                n: ((hi - lo) / h).round() as usize + 1,
            })
            .collect();
        Self::new(axes, stencil)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(&s, a)| (idx / s) % a.n)
            .collect()
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coord(i))
            .collect()
    }

    pub(crate) fn offset(&self, idx: usize, axis: usize, delta: isize) -> usize {
        (idx as isize + delta * self.strides[axis] as isize) as usize
    }

    /// Narrows the mask to nodes where `ok` holds at the node and at every
    /// node its stencil touches.
    pub fn restrict(&self, ok: &[bool]) -> Result<SpatialGrid> {
        if ok.len() != self.len() {
            return Err(Error::ShapeMismatch("admissibility mask length".into()));
        }
        let halo = self.stencil.halo() as isize;
        let mask = (0..self.len())
            .map(|idx| {
                self.mask[idx]
                    && ok[idx]
                    && (0..self.dim()).all(|ax| {
                        (-halo..=halo).all(|dl| ok[self.offset(idx, ax, dl)])
                    })
            })
            .collect();
        Ok(SpatialGrid {
            mask,
            ..self.clone()
        })
    }

    /// Geometry equality, ignoring the mask.
    pub fn same_geometry(&self, other: &SpatialGrid) -> bool {
        self.axes == other.axes && self.stencil == other.stencil
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
    Matrix,
}

impl Rank {
    pub fn components(self, d: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => d,
            Rank::Matrix => d * d,
        }
    }
}

/// Field tabulated at every node of a grid at one time. Matrix values are
/// stored row-major, `T[i][j]` at component `i * d + j`.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Arc<SpatialGrid>,
    rank: Rank,
    time: f64,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Arc<SpatialGrid>, rank: Rank, time: f64, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * rank.components(grid.dim());
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid needs {expected}",
                values.len()
            )));
        }
        Ok(GridField {
            grid,
            rank,
            time,
            values,
        })
    }

    pub fn from_fn(
        grid: Arc<SpatialGrid>,
        rank: Rank,
        time: f64,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let comps = rank.components(grid.dim());
        let mut values = Vec::with_capacity(grid.len() * comps);
        for idx in 0..grid.len() {
            let v = f(&grid.coords(idx));
            if v.len() != comps {
                return Err(Error::ShapeMismatch("field function output length".into()));
            }
            values.extend(v);
        }
        Self::new(grid, rank, time, values)
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn components(&self) -> usize {
        self.rank.components(self.dim())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, idx: usize) -> &[f64] {
        let c = self.components();
        &self.values[idx * c..(idx + 1) * c]
    }

    /// Copy with NaN at every node outside the mask.
    pub fn masked(&self) -> GridField {
        let c = self.components();
        let mask = self.grid.mask();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| if mask[k / c] { v } else { f64::NAN })
            .collect();
        GridField {
            values,
            ..self.clone()
        }
    }

    pub fn norm_at(&self, idx: usize) -> f64 {
        self.at(idx).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum pointwise norm over masked nodes.
    pub fn masked_max(&self) -> f64 {
        self.masked_norms().fold(0.0, f64::max)
    }

    /// Root mean square of pointwise norms over masked nodes.
    pub fn masked_rms(&self) -> f64 {
        let (sum, count) = self
            .masked_norms()
            .fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
        if count == 0 {
            return f64::NAN;
        }
        (sum / count as f64).sqrt()
    }

    fn masked_norms(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.grid.len())
            .filter(|&i| self.grid.mask()[i])
            .map(|i| self.norm_at(i))
    }

    /// Writes one row per node: coordinates, then value components.
    /// Non-finite values are written as `nan`.
    pub fn write_csv<W: Write>(&self, mut w: W, names: &[String]) -> Result<()> {
        if names.len() != self.components() {
            return Err(Error::ShapeMismatch("CSV column names".into()));
        }
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        header.extend(names.iter().cloned());
        writeln!(w, "{}", header.join(","))?;
        for idx in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.coords(idx).iter().map(|c| format!("{c:?}")).collect();
            row.extend(self.at(idx).iter().map(|v| {
                if v.is_finite() {
                    format!("{v:?}")
                } else {
                    "nan".to_string()
                }
            }));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Default component names: `prefix` for scalars, `prefix1..` for
    /// vectors, `prefix11, prefix12, ..` for matrices.
    pub fn component_names(&self, prefix: &str) -> Vec<String> {
        let d = self.dim();
        match self.rank {
            Rank::Scalar => vec![prefix.to_string()],
            Rank::Vector => (1..=d).map(|j| format!("{prefix}{j}")).collect(),
            Rank::Matrix => (1..=d)
                .flat_map(|i| (1..=d).map(move |j| format!("{prefix}{i}{j}")))
                .collect(),
        }
    }
}
