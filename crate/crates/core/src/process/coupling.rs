//! Endpoint distributions and couplings `γ` of `(X, Y)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance for the analytic pushforward check of affine maps between Gaussians.
pub const PUSHFORWARD_TOL: f64 = 1e-9;

const PSD_TOL: f64 = 1e-10;

/// `x ↦ A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != offset.len() {
            return Err(Error::ShapeMismatch(format!(
                "affine map {}x{} with offset of length {}",
                matrix.nrows(),
                matrix.ncols(),
                offset.len()
            )));
        }
        if matrix.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine map entries".into()));
        }
        Ok(AffineMap { matrix, offset })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }
}

/// Multivariate normal with a cached factor `L`, `L Lᵀ = cov`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("zero-dimensional Gaussian".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "mean of length {d} with {}x{} covariance",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian parameters".into()));
        }
        check_psd(&cov, "covariance")?;
        let cov = linalg::symmetrize(&cov);
        let factor = linalg::psd_factor(&cov);
        Ok(Gaussian { mean, cov, factor })
    }

    pub fn standard(d: usize) -> Self {
        Gaussian::new(DVector::zeros(d), DMatrix::identity(d, d)).expect("standard normal")
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = standard_normal_vec(rng, self.dim());
        &self.mean + &self.factor * z
    }
}

pub(crate) fn standard_normal_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !linalg::is_symmetric(m, 1e-12) {
        return Err(Error::InvalidCoupling(format!("{what} is not symmetric")));
    }
    let trace = m.trace();
    let min = linalg::min_eigenvalue(m);
    if min < -PSD_TOL * trace.abs().max(1.0) {
        return Err(Error::InvalidCoupling(format!(
            "{what} is not positive semidefinite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Endpoint distribution descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Gaussian(Gaussian),
    /// Finite mixture; weights are normalized on construction.
    Mixture {
        weights: Vec<f64>,
        components: Vec<Gaussian>,
    },
    /// Uniform over a list of samples.
    Empirical(Vec<DVector<f64>>),
}

impl Distribution {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Ok(Distribution::Gaussian(Gaussian::new(mean, cov)?))
    }

    pub fn standard_normal(d: usize) -> Self {
        Distribution::Gaussian(Gaussian::standard(d))
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidArgument(
                "mixture needs one positive weight per component".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::ShapeMismatch("mixture components differ in dimension".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Distribution::Mixture {
            weights,
            components,
        })
    }

    pub fn empirical(samples: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("empirical distribution with no samples".into()));
        };
        let d = first.len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::ShapeMismatch("empirical samples differ in dimension".into()));
        }
        if samples.iter().flat_map(|s| s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("empirical samples".into()));
        }
        Ok(Distribution::Empirical(samples))
    }

    pub fn dim(&self) -> usize {
        match self {
            Distribution::Gaussian(g) => g.dim(),
            Distribution::Mixture { components, .. } => components[0].dim(),
            Distribution::Empirical(s) => s[0].len(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&Gaussian> {
        match self {
            Distribution::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    /// Mean and covariance of the distribution.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        match self {
            Distribution::Gaussian(g) => (g.mean.clone(), g.cov.clone()),
            Distribution::Mixture {
                weights,
                components,
            } => {
                let d = self.dim();
                let mut mean = DVector::zeros(d);
                for (w, c) in weights.iter().zip(components) {
                    mean += &c.mean * *w;
                }
                let mut cov = DMatrix::zeros(d, d);
                for (w, c) in weights.iter().zip(components) {
                    let dm = &c.mean - &mean;
                    cov += (&c.cov + linalg::outer(&dm, &dm)) * *w;
                }
                (mean, cov)
            }
            Distribution::Empirical(s) => {
                let d = self.dim();
                let n = s.len() as f64;
                let mean = s.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
                let cov = s.iter().fold(DMatrix::zeros(d, d), |acc, x| {
                    let dx = x - &mean;
                    acc + linalg::outer(&dx, &dx)
                }) / n;
                (mean, cov)
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self {
            Distribution::Gaussian(g) => g.sample(rng),
            Distribution::Mixture {
                weights,
                components,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                components[pick].sample(rng)
            }
            Distribution::Empirical(s) => s[rng.random_range(0..s.len())].clone(),
        }
    }
}

/// Deterministic map `T` used by a deterministic coupling.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportMap {
    Affine(AffineMap),
    /// `T(samples[i]) = targets[i]` over an empirical source distribution.
    Tabulated(Vec<DVector<f64>>),
}

/// Joint Gaussian law of `(X, Y)` given by mean pair and full `2d × 2d` covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianJoint {
    mean0: DVector<f64>,
    mean1: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GaussianJoint {
    pub fn new(mean0: DVector<f64>, mean1: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean0.len();
        if d == 0 || mean1.len() != d || cov.nrows() != 2 * d || cov.ncols() != 2 * d {
            return Err(Error::ShapeMismatch(format!(
                "joint Gaussian with means of length {} and {} needs a {}x{} covariance",
                d,
                mean1.len(),
                2 * d,
                2 * d
            )));
        }
        if mean0
            .iter()
            .chain(mean1.iter())
            .chain(cov.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("joint Gaussian parameters".into()));
        }
        check_psd(&cov, "joint covariance")?;
        let cov = linalg::symmetrize(&cov);
        let factor = linalg::psd_factor(&cov);
        Ok(GaussianJoint {
            mean0,
            mean1,
            cov,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    pub fn mean0(&self) -> &DVector<f64> {
        &self.mean0
    }

    pub fn mean1(&self) -> &DVector<f64> {
        &self.mean1
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Covariance blocks `(S00, S01, S11)`.
    pub fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim();
        (
            self.cov.view((0, 0), (d, d)).into_owned(),
            self.cov.view((0, d), (d, d)).into_owned(),
            self.cov.view((d, d), (d, d)).into_owned(),
        )
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let z = standard_normal_vec(rng, 2 * d);
        let w = &self.factor * z;
        (
            &self.mean0 + w.rows(0, d),
            &self.mean1 + w.rows(d, d),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    Independent,
    DeterministicMap,
    GaussianJoint,
}

/// Joint law of the endpoints `(X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    Independent {
        mu0: Distribution,
        mu1: Distribution,
    },
    DeterministicMap {
        mu0: Distribution,
        map: TransportMap,
        /// Declared target; checked against the pushforward when both ends are Gaussian.
        mu1: Option<Distribution>,
    },
    GaussianJoint(GaussianJoint),
}

impl CouplingSpec {
    pub fn independent(mu0: Distribution, mu1: Distribution) -> Result<Self> {
        let c = CouplingSpec::Independent { mu0, mu1 };
        c.validate()?;
        Ok(c)
    }

    pub fn deterministic(
        mu0: Distribution,
        map: TransportMap,
        mu1: Option<Distribution>,
    ) -> Result<Self> {
        let c = CouplingSpec::DeterministicMap { mu0, map, mu1 };
        c.validate()?;
        Ok(c)
    }

    pub fn gaussian_joint(
        mean0: DVector<f64>,
        mean1: DVector<f64>,
        cov: DMatrix<f64>,
    ) -> Result<Self> {
        Ok(CouplingSpec::GaussianJoint(GaussianJoint::new(mean0, mean1, cov)?))
    }

    pub fn kind(&self) -> CouplingKind {
        match self {
            CouplingSpec::Independent { .. } => CouplingKind::Independent,
            CouplingSpec::DeterministicMap { .. } => CouplingKind::DeterministicMap,
            CouplingSpec::GaussianJoint(_) => CouplingKind::GaussianJoint,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CouplingSpec::Independent { mu0, .. } => mu0.dim(),
            CouplingSpec::DeterministicMap { mu0, .. } => mu0.dim(),
            CouplingSpec::GaussianJoint(j) => j.dim(),
        }
    }

    /// Mean and covariance of the source marginal.
    pub fn source_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        match self {
            CouplingSpec::Independent { mu0, .. } | CouplingSpec::DeterministicMap { mu0, .. } => {
                mu0.moments()
            }
            CouplingSpec::GaussianJoint(j) => (j.mean0().clone(), j.blocks().0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CouplingSpec::Independent { mu0, mu1 } => {
                if mu0.dim() != mu1.dim() {
                    return Err(Error::InvalidCoupling(format!(
                        "endpoint dimensions differ: {} vs {}",
                        mu0.dim(),
                        mu1.dim()
                    )));
                }
            }
            CouplingSpec::DeterministicMap { mu0, map, mu1 } => {
                let d = mu0.dim();
                match map {
                    TransportMap::Affine(m) => {
                        if m.dim() != d {
                            return Err(Error::InvalidCoupling(format!(
                                "map dimension {} does not match source dimension {d}",
                                m.dim()
                            )));
                        }
                    }
                    TransportMap::Tabulated(targets) => {
                        let Distribution::Empirical(src) = mu0 else {
                            return Err(Error::InvalidCoupling(
                                "tabulated maps require an empirical source".into(),
                            ));
                        };
                        if targets.len() != src.len() || targets.iter().any(|y| y.len() != d) {
                            return Err(Error::InvalidCoupling(
                                "tabulated map must list one target per source sample".into(),
                            ));
                        }
                    }
                }
                if let Some(mu1) = mu1 {
                    if mu1.dim() != d {
                        return Err(Error::InvalidCoupling("target dimension mismatch".into()));
                    }
                    if let (Some(g0), Some(g1), TransportMap::Affine(m)) =
                        (mu0.as_gaussian(), mu1.as_gaussian(), map)
                    {
                        check_pushforward(g0, g1, m)?;
                    }
                }
            }
            CouplingSpec::GaussianJoint(_) => {}
        }
        Ok(())
    }

    /// Draws one endpoint pair.
    pub fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
        match self {
            CouplingSpec::Independent { mu0, mu1 } => {
                let x0 = mu0.sample(rng);
                let x1 = mu1.sample(rng);
                (x0, x1)
            }
            CouplingSpec::DeterministicMap { mu0, map, .. } => match map {
                TransportMap::Affine(m) => {
                    let x0 = mu0.sample(rng);
                    let x1 = m.apply(&x0);
                    (x0, x1)
                }
                TransportMap::Tabulated(targets) => {
                    let Distribution::Empirical(src) = mu0 else {
                        unreachable!("validated on construction")
                    };
                    let i = rng.random_range(0..src.len());
                    (src[i].clone(), targets[i].clone())
                }
            },
            CouplingSpec::GaussianJoint(j) => j.sample(rng),
        }
    }
}

fn check_pushforward(g0: &Gaussian, g1: &Gaussian, map: &AffineMap) -> Result<()> {
    let pushed_cov = &map.matrix * g0.cov() * map.matrix.transpose();
    let pushed_mean = map.apply(g0.mean());
    let cov_scale = g1.cov().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mean_scale = g1.mean().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let cov_err = linalg::max_abs_diff(&pushed_cov, g1.cov());
    let mean_err = (&pushed_mean - g1.mean()).amax();
    if cov_err > PUSHFORWARD_TOL * cov_scale || mean_err > PUSHFORWARD_TOL * mean_scale {
        return Err(Error::InvalidCoupling(format!(
            "map does not push mu0 onto mu1 (covariance error {cov_err:e}, mean error {mean_err:e})"
        )));
    }
    Ok(())
}
