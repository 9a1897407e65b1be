//! JSON descriptors for processes and couplings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::gaussian_ot_map;

use super::coupling::{AffineMap, CouplingSpec, Distribution, Gaussian, TransportMap};
use super::schedule::{Latent, Schedule};
use super::spec::ProcessSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientsTag {
    Affine,
    Trig,
    /// Affine coefficients plus latent noise (γ = √(t(1−t)) unless overridden).
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub coefficients: CoefficientsTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Latent>,
    pub coupling: CouplingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponentConfig {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionConfig {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Mixture { components: Vec<MixtureComponentConfig> },
    Empirical { samples: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum MapConfig {
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    Tabulated {
        targets: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    Independent {
        mu0: DistributionConfig,
        mu1: DistributionConfig,
    },
    DeterministicMap {
        mu0: DistributionConfig,
        map: MapConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu1: Option<DistributionConfig>,
    },
    /// Deterministic coupling through the Gaussian optimal transport map.
    OtMap {
        mu0: DistributionConfig,
        mu1: DistributionConfig,
    },
    GaussianJoint {
        mean0: Vec<f64>,
        mean1: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
}

pub(crate) fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::ShapeMismatch(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

impl DistributionConfig {
    pub fn build(&self) -> Result<Distribution> {
        match self {
            DistributionConfig::Gaussian { mean, cov } => {
                Distribution::gaussian(vector(mean), matrix(cov, "cov")?)
            }
            DistributionConfig::Mixture { components } => {
                let weights = components.iter().map(|c| c.weight).collect();
                let comps = components
                    .iter()
                    .map(|c| Gaussian::new(vector(&c.mean), matrix(&c.cov, "cov")?))
                    .collect::<Result<Vec<_>>>()?;
                Distribution::mixture(weights, comps)
            }
            DistributionConfig::Empirical { samples } => {
                Distribution::empirical(samples.iter().map(|s| vector(s)).collect())
            }
        }
    }
}

impl CouplingConfig {
    pub fn build(&self) -> Result<CouplingSpec> {
        match self {
            CouplingConfig::Independent { mu0, mu1 } => {
                CouplingSpec::independent(mu0.build()?, mu1.build()?)
            }
            CouplingConfig::DeterministicMap { mu0, map, mu1 } => {
                let map = match map {
                    MapConfig::Affine { matrix: m, offset } => {
                        TransportMap::Affine(AffineMap::new(matrix(m, "map.matrix")?, vector(offset))?)
                    }
                    MapConfig::Tabulated { targets } => {
                        TransportMap::Tabulated(targets.iter().map(|t| vector(t)).collect())
                    }
                };
                let mu1 = mu1.as_ref().map(DistributionConfig::build).transpose()?;
                CouplingSpec::deterministic(mu0.build()?, map, mu1)
            }
            CouplingConfig::OtMap { mu0, mu1 } => {
                let (d0, d1) = (mu0.build()?, mu1.build()?);
                let (Some(g0), Some(g1)) = (d0.as_gaussian(), d1.as_gaussian()) else {
                    return Err(Error::InvalidCoupling(
                        "ot_map coupling needs Gaussian endpoints".into(),
                    ));
                };
                let map = gaussian_ot_map(g0.mean(), g0.cov(), g1.mean(), g1.cov())?;
                CouplingSpec::deterministic(d0.clone(), TransportMap::Affine(map), Some(d1.clone()))
            }
            CouplingConfig::GaussianJoint { mean0, mean1, cov } => {
                CouplingSpec::gaussian_joint(vector(mean0), vector(mean1), matrix(cov, "cov")?)
            }
        }
    }
}

impl ProcessConfig {
    pub fn build(&self) -> Result<ProcessSpec> {
        let coupling = self.coupling.build()?;
        let (schedule, latent) = match self.coefficients {
            CoefficientsTag::Affine => (Schedule::Affine, self.latent),
            CoefficientsTag::Trig => (Schedule::Trig, self.latent),
            CoefficientsTag::Latent => (Schedule::Affine, Some(self.latent.unwrap_or_else(Latent::sqrt))),
        };
        ProcessSpec::new(schedule, latent, coupling)
    }
}
