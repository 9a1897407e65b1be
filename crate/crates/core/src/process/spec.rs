use crate::error::{Error, Result};

use super::coupling::CouplingSpec;
use super::schedule::{Coeff, Latent, Schedule};

/// Recipe for an interpolant process `X_t = α(t) X + β(t) Y + γ(t) Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    pub schedule: Schedule,
    pub latent: Option<Latent>,
    pub coupling: CouplingSpec,
}

impl ProcessSpec {
    pub fn new(schedule: Schedule, latent: Option<Latent>, coupling: CouplingSpec) -> Result<Self> {
        let spec = ProcessSpec {
            schedule,
            latent,
            coupling,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn affine(coupling: CouplingSpec) -> Result<Self> {
        Self::new(Schedule::Affine, None, coupling)
    }

    pub fn trig(coupling: CouplingSpec) -> Result<Self> {
        Self::new(Schedule::Trig, None, coupling)
    }

    pub fn dim(&self) -> usize {
        self.coupling.dim()
    }

    /// True for `X_t = (1 − t) X + t Y` without latent noise.
    pub fn is_affine(&self) -> bool {
        self.schedule == Schedule::Affine && self.latent.is_none()
    }

    /// Coefficients `(α, β, γ)` at `t`; γ is zero without a latent term.
    pub fn coefficients(&self, t: f64) -> (Coeff, Coeff, Coeff) {
        let gamma = self.latent.map_or(Coeff::ZERO, |l| l.gamma(t));
        (self.schedule.alpha(t), self.schedule.beta(t), gamma)
    }

    pub fn validate(&self) -> Result<()> {
        self.coupling.validate()?;
        let (a0, b0, g0) = self.coefficients(0.0);
        let (a1, b1, g1) = self.coefficients(1.0);
        let tol = 1e-12;
        let ok = (a0.value - 1.0).abs() < tol
            && b0.value.abs() < tol
            && a1.value.abs() < tol
            && (b1.value - 1.0).abs() < tol
            && g0.value.abs() < tol
            && g1.value.abs() < tol;
        if !ok {
            return Err(Error::InvalidArgument(
                "coefficients do not preserve the endpoint marginals".into(),
            ));
        }
        if let Some(l) = self.latent {
            if !(l.scale.is_finite() && l.scale >= 0.0) {
                return Err(Error::InvalidArgument("latent scale must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}
