use serde::{Deserialize, Serialize};

use super::grid::{GridField, Rank};
use super::ops::{add, advect, grid_divergence, grid_divergence_matrix, same_grid, scale_by, sub};
use crate::error::{Error, Result};

/// Floor for the relative-norm denominator.
pub const REFERENCE_FLOOR: f64 = 1e-30;

/// Minimum max-abs reduction when the spacing halves.
pub const CONVERGENCE_RATIO: f64 = 3.5;

/// Below this relative residual the coarse grid is already at roundoff and
/// the halving ratio carries no information.
pub const ROUNDOFF_RELATIVE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    /// Slices at `t − h, t, t + h`.
    Central,
    /// Slices at `t, t + h, t + 2h`; used near `t = 0`.
    Forward,
    /// Slices at `t − 2h, t − h, t`; used near `t = 1`.
    Backward,
}

impl TimeScheme {
    /// Central where the stencil fits in `[0, 1]`, one-sided otherwise.
    pub fn for_time(t: f64, h_t: f64) -> Self {
        if t - h_t < 0.0 {
            TimeScheme::Forward
        } else if t + h_t > 1.0 {
            TimeScheme::Backward
        } else {
            TimeScheme::Central
        }
    }

    /// Slice times in ascending order.
    pub fn times(self, t: f64, h_t: f64) -> [f64; 3] {
        match self {
            TimeScheme::Central => [t - h_t, t, t + h_t],
            TimeScheme::Forward => [t, t + h_t, t + 2.0 * h_t],
            TimeScheme::Backward => [t - 2.0 * h_t, t - h_t, t],
        }
    }

    /// Position of `t` itself among [`TimeScheme::times`].
    pub fn center(self) -> usize {
        match self {
            TimeScheme::Central => 1,
            TimeScheme::Forward => 0,
            TimeScheme::Backward => 2,
        }
    }

    fn weights(self) -> [f64; 3] {
        match self {
            TimeScheme::Central => [-0.5, 0.0, 0.5],
            TimeScheme::Forward => [-1.5, 2.0, -0.5],
            TimeScheme::Backward => [0.5, -2.0, 1.5],
        }
    }
}

/// Three slices of one field on a shared grid, ascending in time.
#[derive(Debug, Clone)]
pub struct TimeStack {
    pub fields: [GridField; 3],
    pub h_t: f64,
    pub scheme: TimeScheme,
}

impl TimeStack {
    pub fn new(fields: [GridField; 3], h_t: f64, scheme: TimeScheme) -> Result<Self> {
        if !(h_t.is_finite() && h_t > 0.0) {
            return Err(Error::InvalidArgument(format!("time step {h_t}")));
        }
        same_grid(&fields[0], &fields[1])?;
        same_grid(&fields[0], &fields[2])?;
        if fields.iter().any(|f| f.rank() != fields[0].rank()) {
            return Err(Error::ShapeMismatch("time slices differ in rank".into()));
        }
        Ok(TimeStack {
            fields,
            h_t,
            scheme,
        })
    }

    pub fn central(minus: GridField, center: GridField, plus: GridField, h_t: f64) -> Result<Self> {
        Self::new([minus, center, plus], h_t, TimeScheme::Central)
    }

    pub fn current(&self) -> &GridField {
        &self.fields[self.scheme.center()]
    }

    /// Second-order time derivative at the current slice, at every node.
    pub fn derivative(&self) -> Result<GridField> {
        let w = self.scheme.weights();
        let values = (0..self.fields[0].values().len())
            .map(|k| {
                (0..3)
                    .map(|s| w[s] * self.fields[s].values()[k])
                    .sum::<f64>()
                    / self.h_t
            })
            .collect();
        let c = self.current();
        GridField::new(c.grid().clone(), c.rank(), c.time(), values)
    }

    /// Applies `f` slice by slice.
    pub fn map(&self, f: impl Fn(&GridField) -> Result<GridField>) -> Result<TimeStack> {
        let [a, b, c] = &self.fields;
        TimeStack::new([f(a)?, f(b)?, f(c)?], self.h_t, self.scheme)
    }

    /// Nodewise product with a scalar stack.
    pub fn scaled_by(&self, rho: &TimeStack) -> Result<TimeStack> {
        let fields = [
            scale_by(&rho.fields[0], &self.fields[0])?,
            scale_by(&rho.fields[1], &self.fields[1])?,
            scale_by(&rho.fields[2], &self.fields[2])?,
        ];
        TimeStack::new(fields, self.h_t, self.scheme)
    }
}

/// `(f₊ − f₋) / 2h_t`.
pub fn time_derivative(
    f_minus: &GridField,
    f_center: &GridField,
    f_plus: &GridField,
    h_t: f64,
) -> Result<GridField> {
    TimeStack::central(f_minus.clone(), f_center.clone(), f_plus.clone(), h_t)?.derivative()
}

/// `D_t v = ∂_t v + (v·∇)v` at the current slice.
pub fn material_derivative(v: &TimeStack) -> Result<GridField> {
    Ok(material_parts(v)?.0)
}

fn material_parts(v: &TimeStack) -> Result<(GridField, GridField, GridField)> {
    if v.current().rank() != Rank::Vector {
        return Err(Error::ShapeMismatch("material derivative needs a vector field".into()));
    }
    let dt = v.derivative()?;
    let adv = advect(v.current(), v.current())?;
    Ok((add(&adv, &dt)?, dt, adv))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub max_abs: f64,
    pub rms: f64,
    pub relative: f64,
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub residual: GridField,
    pub max_abs: f64,
    pub rms: f64,
    /// Denominator of `relative`: the largest rms among the individual terms
    /// of the identity, or the scale guard, floored at [`REFERENCE_FLOOR`].
    pub reference: f64,
    pub relative: f64,
}

impl ResidualReport {
    pub fn from_terms(residual: GridField, terms: &[&GridField], guard: f64) -> Self {
        let max_abs = residual.masked_max();
        let rms = residual.masked_rms();
        let reference = terms
            .iter()
            .map(|t| t.masked_rms())
            .fold(guard, f64::max)
            .max(REFERENCE_FLOOR);
        ResidualReport {
            residual,
            max_abs,
            rms,
            reference,
            relative: rms / reference,
        }
    }

    pub fn norms(&self) -> ResidualNorms {
        ResidualNorms {
            max_abs: self.max_abs,
            rms: self.rms,
            relative: self.relative,
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.relative <= tol
    }
}

/// `∂_t(ρv) + ∇·(ρΣ) − ρa`, with `Σ` and `a` at the current slice.
pub fn momentum_residual(
    rho: &TimeStack,
    v: &TimeStack,
    sigma: &GridField,
    a: &GridField,
) -> Result<ResidualReport> {
    let rho_c = rho.current();
    let flux_t = v.scaled_by(rho)?.derivative()?;
    let div = grid_divergence_matrix(&scale_by(rho_c, sigma)?)?;
    let rho_a = scale_by(rho_c, a)?;
    let res = sub(&add(&flux_t, &div)?, &rho_a)?;
    Ok(ResidualReport::from_terms(res, &[&flux_t, &div, &rho_a], rho_c.masked_rms()))
}

/// `∂_t ρ + ∇·(ρv)`.
pub fn continuity_residual(rho: &TimeStack, v: &TimeStack) -> Result<ResidualReport> {
    let rho_c = rho.current();
    let drho = rho.derivative()?;
    let div = grid_divergence(&scale_by(rho_c, v.current())?)?;
    let res = add(&drho, &div)?;
    Ok(ResidualReport::from_terms(res, &[&drho, &div], rho_c.masked_rms()))
}

/// `∇·(ρΠ) − ρa`; vanishes exactly when the velocity field is straight.
pub fn balance_residual(rho: &GridField, pi: &GridField, a: &GridField) -> Result<ResidualReport> {
    let div = grid_divergence_matrix(&scale_by(rho, pi)?)?;
    let rho_a = scale_by(rho, a)?;
    let res = sub(&div, &rho_a)?;
    Ok(ResidualReport::from_terms(res, &[&div, &rho_a], rho.masked_rms()))
}

/// Material derivative as a report; `relative` is measured against the
/// larger of `∂_t v`, `(v·∇)v` and `guard` (typically the rms acceleration,
/// which keeps the ratio meaningful where `v` vanishes identically).
pub fn material_report(v: &TimeStack, guard: f64) -> Result<ResidualReport> {
    let (dv, dt, adv) = material_parts(v)?;
    Ok(ResidualReport::from_terms(dv, &[&dt, &adv], guard))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCheck {
    pub coarse_max_abs: f64,
    pub fine_max_abs: f64,
    pub ratio: f64,
    pub at_roundoff: bool,
    pub passed: bool,
}

/// Compares residuals on a grid and on the same box at half the spacing.
pub fn convergence_check(coarse: &ResidualReport, fine: &ResidualReport) -> ConvergenceCheck {
    let ratio = coarse.max_abs / fine.max_abs.max(f64::MIN_POSITIVE);
    let at_roundoff = coarse.relative <= ROUNDOFF_RELATIVE;
    ConvergenceCheck {
        coarse_max_abs: coarse.max_abs,
        fine_max_abs: fine.max_abs,
        ratio,
        at_roundoff,
        passed: ratio >= CONVERGENCE_RATIO || at_roundoff,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::calculus::{SpatialGrid, Stencil};

    fn field(t: f64, f: impl Fn(&[f64]) -> Vec<f64>, rank: Rank) -> GridField {
        let g = Arc::new(SpatialGrid::from_box(&[(-1.0, 1.0)], 21, Stencil::Central4).unwrap());
        GridField::from_fn(g, rank, t, f).unwrap()
    }

    #[test]
    fn one_sided_schemes_exact_on_quadratics() {
        let h = 0.01;
        for scheme in [TimeScheme::Central, TimeScheme::Forward, TimeScheme::Backward] {
            let ts = scheme.times(0.0, h);
            let fs = ts.map(|t| field(t, |x| vec![t * t * x[0] + 3.0 * t], Rank::Scalar));
            let d = TimeStack::new(fs, h, scheme).unwrap().derivative().unwrap();
            let g = d.grid().clone();
            for idx in 0..g.len() {
                let x = g.coords(idx)[0];
                assert!((d.at(idx)[0] - 3.0).abs() < 1e-10, "{scheme:?} {x}");
            }
        }
    }

    #[test]
    fn scheme_selection() {
        assert_eq!(TimeScheme::for_time(0.0, 1e-3), TimeScheme::Forward);
        assert_eq!(TimeScheme::for_time(1.0, 1e-3), TimeScheme::Backward);
        assert_eq!(TimeScheme::for_time(0.5, 1e-3), TimeScheme::Central);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = field(0.0, |x| vec![x[0]], Rank::Scalar);
        let g = Arc::new(SpatialGrid::from_box(&[(-2.0, 1.0)], 21, Stencil::Central4).unwrap());
        let b = GridField::from_fn(g, Rank::Scalar, 0.0, |x| vec![x[0]]).unwrap();
        assert!(matches!(
            time_derivative(&a, &a, &b, 0.1),
            Err(Error::InvalidArgument(_))
        ));
    }
}
