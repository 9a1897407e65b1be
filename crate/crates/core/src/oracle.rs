//! Closed-form ensemble fields for jointly Gaussian processes.
//!
//! With `(X, Y, Z)` jointly Gaussian, `(X_t, Ẋ_t, Ẍ_t)` is jointly Gaussian
//! for every `t`, so the conditional velocity and acceleration are affine in
//! `x` and the Reynolds tensor does not depend on `x`. The cross covariances
//! are assembled from the coefficient derivatives, see `docs/gaussian_oracle.md`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::process::{
    AffineMap, Coeff, CouplingSpec, Distribution, Latent, ProcessSpec, Schedule, TransportMap,
};

/// Central time step for `∂_t v` in the analytic material derivative.
pub const TIME_STEP: f64 = 1e-5;

/// Marginal covariance is flagged degenerate when its smallest eigenvalue is
/// at most this fraction of its trace.
pub const DEGENERACY_RATIO: f64 = 1e-12;

/// Ensemble fields at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValues {
    pub rho: f64,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub pi: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub degenerate: bool,
}

/// Jointly Gaussian endpoints `(X, Y)` with blocks `S00, S01, S11`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProcessSpec {
    pub mean0: DVector<f64>,
    pub mean1: DVector<f64>,
    pub s00: DMatrix<f64>,
    pub s01: DMatrix<f64>,
    pub s11: DMatrix<f64>,
    pub schedule: Schedule,
    pub latent: Option<Latent>,
}

impl GaussianProcessSpec {
    pub fn new(
        mean0: DVector<f64>,
        mean1: DVector<f64>,
        s00: DMatrix<f64>,
        s01: DMatrix<f64>,
        s11: DMatrix<f64>,
        schedule: Schedule,
        latent: Option<Latent>,
    ) -> Result<Self> {
        let d = mean0.len();
        let shapes_ok = d > 0
            && mean1.len() == d
            && [&s00, &s01, &s11].iter().all(|m| m.nrows() == d && m.ncols() == d);
        if !shapes_ok {
            return Err(Error::ShapeMismatch("Gaussian process blocks".into()));
        }
        let mut joint = DMatrix::zeros(2 * d, 2 * d);
        joint.view_mut((0, 0), (d, d)).copy_from(&s00);
        joint.view_mut((0, d), (d, d)).copy_from(&s01);
        joint.view_mut((d, 0), (d, d)).copy_from(&s01.transpose());
        joint.view_mut((d, d), (d, d)).copy_from(&s11);
        let trace = joint.trace();
        if !linalg::is_symmetric(&s00, 1e-12) || !linalg::is_symmetric(&s11, 1e-12) {
            return Err(Error::InvalidCoupling("covariance blocks are not symmetric".into()));
        }
        if linalg::min_eigenvalue(&joint) < -1e-10 * trace.max(1.0) {
            return Err(Error::InvalidCoupling("joint covariance is not PSD".into()));
        }
        Ok(GaussianProcessSpec {
            mean0,
            mean1,
            s00,
            s01,
            s11,
            schedule,
            latent,
        })
    }

    /// Independent standard Gaussians in dimension `d`.
    pub fn independent_standard(schedule: Schedule, d: usize) -> Self {
        let i = DMatrix::identity(d, d);
        Self::new(
            DVector::zeros(d),
            DVector::zeros(d),
            i.clone(),
            DMatrix::zeros(d, d),
            i,
            schedule,
            None,
        )
        .expect("valid spec")
    }

    /// Deterministic coupling `Y = A X + b` with `X ~ N(m0, S0)`.
    pub fn deterministic(
        schedule: Schedule,
        m0: DVector<f64>,
        s0: DMatrix<f64>,
        map: &AffineMap,
    ) -> Result<Self> {
        let s01 = &s0 * map.matrix.transpose();
        let s11 = linalg::symmetrize(&(&map.matrix * &s0 * map.matrix.transpose()));
        let m1 = map.apply(&m0);
        Self::new(m0, m1, s0, s01, s11, schedule, None)
    }

    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    fn coefficients(&self, t: f64) -> (Coeff, Coeff, Coeff) {
        let g = self.latent.map_or(Coeff::ZERO, |l| l.gamma(t));
        (self.schedule.alpha(t), self.schedule.beta(t), g)
    }

    /// `p S00 q + p S01 r + s S10 q + s S11 r + γγ' I` for coefficient pairs
    /// `(p, s)` of the left factor and `(q, r)` of the right factor.
    fn cross(&self, left: (f64, f64), right: (f64, f64), latent: f64) -> DMatrix<f64> {
        let d = self.dim();
        &self.s00 * (left.0 * right.0)
            + &self.s01 * (left.0 * right.1)
            + self.s01.transpose() * (left.1 * right.0)
            + &self.s11 * (left.1 * right.1)
            + DMatrix::identity(d, d) * latent
    }

    pub fn marginal_moments(&self, t: f64) -> Result<MarginalMoments> {
        check_time(t)?;
        let (a, b, g) = self.coefficients(t);
        let mean = &self.mean0 * a.value + &self.mean1 * b.value;
        let cov = linalg::symmetrize(&self.cross(
            (a.value, b.value),
            (a.value, b.value),
            g.value * g.value,
        ));
        let trace = cov.trace();
        let degenerate = linalg::min_eigenvalue(&cov) <= DEGENERACY_RATIO * trace;
        Ok(MarginalMoments {
            mean,
            cov,
            degenerate,
        })
    }

    /// Precomputes everything needed to evaluate the fields at time `t`.
    pub fn at(&self, t: f64) -> Result<OracleSlice> {
        let moments = self.marginal_moments(t)?;
        if moments.degenerate {
            return Err(Error::DegenerateMarginal {
                t,
                min_eigenvalue: linalg::min_eigenvalue(&moments.cov),
                trace: moments.cov.trace(),
            });
        }
        let (a, b, g) = self.coefficients(t);
        let d = self.dim();
        let chol = moments
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::DegenerateMarginal {
                t,
                min_eigenvalue: linalg::min_eigenvalue(&moments.cov),
                trace: moments.cov.trace(),
            })?;
        let cov_inv = chol.inverse();
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let pos = (a.value, b.value);
        let vel = (a.d1, b.d1);
        let acc = (a.d2, b.d2);
        // Cov(Ẋ_t, X_t), Cov(Ẍ_t, X_t), Cov(Ẋ_t)
        let c_v = self.cross(vel, pos, g.d1 * g.value);
        let c_a = self.cross(acc, pos, g.d2 * g.value);
        let cov_vel = self.cross(vel, vel, g.d1 * g.d1);
        let gain_v = &c_v * &cov_inv;
        let gain_a = &c_a * &cov_inv;
        let pi = linalg::symmetrize(&(cov_vel - &gain_v * c_v.transpose()));
        Ok(OracleSlice {
            t,
            mean: moments.mean,
            cov: moments.cov,
            cov_inv,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
            mean_vel: &self.mean0 * a.d1 + &self.mean1 * b.d1,
            mean_acc: &self.mean0 * a.d2 + &self.mean1 * b.d2,
            gain_v,
            gain_a,
            pi,
        })
    }

    pub fn conditional_fields(&self, t: f64, x: &DVector<f64>) -> Result<FieldValues> {
        Ok(self.at(t)?.fields(x))
    }

    /// `D_t v = ∂_t v + (∇v) v`, with `∂_t v` by central differences in time
    /// (one-sided within `TIME_STEP` of the endpoints) and the exact spatial
    /// Jacobian.
    pub fn material_derivative(&self, t: f64, x: &DVector<f64>) -> Result<MaterialDerivative> {
        check_time(t)?;
        let h = TIME_STEP;
        let here = self.at(t)?;
        let (dv_dt, accuracy) = if t - h < 0.0 {
            let v1 = self.at(t + h)?.velocity(x);
            let v2 = self.at(t + 2.0 * h)?.velocity(x);
            ((v1 * 4.0 - v2 - here.velocity(x) * 3.0) / (2.0 * h), TimeAccuracy::OneSided)
        } else if t + h > 1.0 {
            let v1 = self.at(t - h)?.velocity(x);
            let v2 = self.at(t - 2.0 * h)?.velocity(x);
            ((here.velocity(x) * 3.0 - v1 * 4.0 + v2) / (2.0 * h), TimeAccuracy::OneSided)
        } else {
            let vp = self.at(t + h)?.velocity(x);
            let vm = self.at(t - h)?.velocity(x);
            ((vp - vm) / (2.0 * h), TimeAccuracy::Central)
        };
        let v = here.velocity(x);
        let value = dv_dt + here.velocity_jacobian() * v;
        Ok(MaterialDerivative { value, accuracy })
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeAccuracy {
    Central,
    /// One-sided differencing near `t = 0` or `t = 1`.
    OneSided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialDerivative {
    pub value: DVector<f64>,
    pub accuracy: TimeAccuracy,
}

/// Oracle frozen at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSlice {
    pub t: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    log_norm: f64,
    mean_vel: DVector<f64>,
    mean_acc: DVector<f64>,
    gain_v: DMatrix<f64>,
    gain_a: DMatrix<f64>,
    pi: DMatrix<f64>,
}

impl OracleSlice {
    pub fn density(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.mean;
        let q = (dx.transpose() * &self.cov_inv * &dx)[(0, 0)];
        (self.log_norm - 0.5 * q).exp()
    }

    pub fn velocity(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mean_vel + &self.gain_v * (x - &self.mean)
    }

    pub fn acceleration(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mean_acc + &self.gain_a * (x - &self.mean)
    }

    /// `∂v/∂x`, constant in `x`.
    pub fn velocity_jacobian(&self) -> &DMatrix<f64> {
        &self.gain_v
    }

    /// Reynolds tensor, constant in `x`.
    pub fn reynolds(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn fields(&self, x: &DVector<f64>) -> FieldValues {
        let v = self.velocity(x);
        let sigma = &self.pi + linalg::outer(&v, &v);
        FieldValues {
            rho: self.density(x),
            a: self.acceleration(x),
            v,
            sigma,
            pi: self.pi.clone(),
        }
    }

    /// Per-axis marginal standard deviations.
    pub fn std_devs(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Bures–Wasserstein map `A = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2}`,
/// `b = m1 − A m0`.
pub fn gaussian_ot_map(
    m0: &DVector<f64>,
    s0: &DMatrix<f64>,
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
) -> Result<AffineMap> {
    let d = m0.len();
    if m1.len() != d || s0.shape() != (d, d) || s1.shape() != (d, d) {
        return Err(Error::ShapeMismatch("OT map inputs".into()));
    }
    if !linalg::is_symmetric(s0, 1e-12) || !linalg::is_symmetric(s1, 1e-12) {
        return Err(Error::InvalidArgument("covariances must be symmetric".into()));
    }
    if linalg::min_eigenvalue(s0) <= DEGENERACY_RATIO * s0.trace() {
        return Err(Error::InvalidArgument("source covariance is singular".into()));
    }
    if linalg::min_eigenvalue(s1) < -1e-10 * s1.trace().abs().max(1.0) {
        return Err(Error::InvalidArgument("target covariance is not PSD".into()));
    }
    let root = linalg::sym_sqrt(s0);
    let inv_root = linalg::sym_inv_sqrt(s0);
    let middle = linalg::sym_sqrt(&linalg::symmetrize(&(&root * s1 * &root)));
    let a = linalg::symmetrize(&(&inv_root * middle * &inv_root));
    let b = m1 - &a * m0;
    AffineMap::new(a, b)
}

impl ProcessSpec {
    /// Gaussian oracle for this process when `(X, Y)` is jointly Gaussian.
    pub fn to_gaussian(&self) -> Result<GaussianProcessSpec> {
        let unsupported =
            || Error::Unsupported("process endpoints are not jointly Gaussian".into());
        let (m0, m1, s00, s01, s11) = match &self.coupling {
            CouplingSpec::Independent { mu0, mu1 } => {
                let (Distribution::Gaussian(g0), Distribution::Gaussian(g1)) = (mu0, mu1) else {
                    return Err(unsupported());
                };
                let d = g0.dim();
                (
                    g0.mean().clone(),
                    g1.mean().clone(),
                    g0.cov().clone(),
                    DMatrix::zeros(d, d),
                    g1.cov().clone(),
                )
            }
            CouplingSpec::DeterministicMap {
                mu0: Distribution::Gaussian(g0),
                map: TransportMap::Affine(map),
                ..
            } => {
                let g = GaussianProcessSpec::deterministic(
                    self.schedule,
                    g0.mean().clone(),
                    g0.cov().clone(),
                    map,
                )?;
                (g.mean0, g.mean1, g.s00, g.s01, g.s11)
            }
            CouplingSpec::DeterministicMap { .. } => return Err(unsupported()),
            CouplingSpec::GaussianJoint(j) => {
                let (s00, s01, s11) = j.blocks();
                (j.mean0().clone(), j.mean1().clone(), s00, s01, s11)
            }
        };
        GaussianProcessSpec::new(m0, m1, s00, s01, s11, self.schedule, self.latent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn doubling(schedule: Schedule) -> GaussianProcessSpec {
        // Y = 2X through a perfectly correlated joint Gaussian.
        GaussianProcessSpec::new(v1(0.0), v1(0.0), m1(1.0), m1(2.0), m1(4.0), schedule, None).unwrap()
    }

    fn normal_pdf(x: f64, var: f64) -> f64 {
        (-0.5 * x * x / var).exp() / (2.0 * PI * var).sqrt()
    }

    #[test]
    fn marginal_affine_independent() {
        let g = GaussianProcessSpec::independent_standard(Schedule::Affine, 1);
        let m = g.marginal_moments(0.5).unwrap();
        assert!(m.mean[0].abs() < 1e-15);
        assert!((m.cov[(0, 0)] - 0.5).abs() < 1e-15);
        let m0 = g.marginal_moments(0.0).unwrap();
        assert_eq!(m0.cov, g.s00);
        assert_eq!(m0.mean, g.mean0);
    }

    #[test]
    fn marginal_trig_is_stationary() {
        let g = GaussianProcessSpec::independent_standard(Schedule::Trig, 1);
        for t in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let m = g.marginal_moments(t).unwrap();
            assert!((m.cov[(0, 0)] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_marginal_flagged() {
        // Y = -X collapses X_t to a point at t = 1/2.
        let g = GaussianProcessSpec::new(v1(0.0), v1(0.0), m1(1.0), m1(-1.0), m1(1.0), Schedule::Affine, None)
            .unwrap();
        assert!(g.marginal_moments(0.5).unwrap().degenerate);
        assert!(matches!(g.at(0.5), Err(Error::DegenerateMarginal { .. })));
    }

    #[test]
    fn fields_affine_independent_t0() {
        let g = GaussianProcessSpec::independent_standard(Schedule::Affine, 1);
        for x in [-1.3, 0.0, 0.7] {
            let f = g.conditional_fields(0.0, &v1(x)).unwrap();
            assert!((f.v[0] + x).abs() < 1e-14);
            assert!((f.pi[(0, 0)] - 1.0).abs() < 1e-14);
            assert_eq!(f.a[0], 0.0);
        }
    }

    #[test]
    fn fields_affine_independent_midpoint() {
        let g = GaussianProcessSpec::independent_standard(Schedule::Affine, 1);
        let f = g.conditional_fields(0.5, &v1(0.4)).unwrap();
        assert!(f.v[0].abs() < 1e-14);
        assert!((f.pi[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((f.rho - normal_pdf(0.4, 0.5)).abs() < 1e-14);
    }

    #[test]
    fn fields_trig_independent() {
        let g = GaussianProcessSpec::independent_standard(Schedule::Trig, 1);
        let k = PI * PI / 4.0;
        for t in [0.1, 0.5, 0.77] {
            for x in [-2.0, 0.3] {
                let f = g.conditional_fields(t, &v1(x)).unwrap();
                assert!(f.v[0].abs() < 1e-14);
                assert!((f.a[0] + k * x).abs() < 1e-12);
                assert!((f.pi[(0, 0)] - k).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fields_deterministic_doubling() {
        let g = doubling(Schedule::Affine);
        for t in [0.0, 0.3, 1.0] {
            for x in [-1.0, 0.5, 2.0] {
                let f = g.conditional_fields(t, &v1(x)).unwrap();
                assert!((f.v[0] - x / (1.0 + t)).abs() < 1e-12);
                assert!(f.pi[(0, 0)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reynolds_independent_of_x() {
        let g = GaussianProcessSpec::new(
            DVector::from_vec(vec![0.5, -1.0]),
            DVector::from_vec(vec![2.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]),
            DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, 0.4]),
            DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]),
            Schedule::Trig,
            Some(Latent::sqrt()),
        )
        .unwrap();
        let s = g.at(0.4).unwrap();
        let f1 = s.fields(&DVector::from_vec(vec![0.0, 0.0]));
        let f2 = s.fields(&DVector::from_vec(vec![3.0, -2.0]));
        assert_eq!(f1.pi, f2.pi);
        assert!(linalg::min_eigenvalue(&f1.pi) > -1e-10);
        assert!(linalg::max_abs_diff(&f1.sigma, &(&f1.pi + linalg::outer(&f1.v, &f1.v))) < 1e-14);
    }

    #[test]
    fn ot_map_identity_when_covariances_match() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m0 = DVector::from_vec(vec![1.0, 2.0]);
        let m1 = DVector::from_vec(vec![-1.0, 0.5]);
        let map = gaussian_ot_map(&m0, &s, &m1, &s).unwrap();
        assert!(linalg::max_abs_diff(&map.matrix, &DMatrix::identity(2, 2)) < 1e-9);
        assert!((&map.offset - (&m1 - &m0)).amax() < 1e-9);
    }

    #[test]
    fn ot_map_scalar() {
        let map = gaussian_ot_map(&v1(0.0), &m1(1.0), &v1(0.0), &m1(4.0)).unwrap();
        assert!((map.matrix[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(map.offset[0].abs() < 1e-12);
    }

    #[test]
    fn ot_map_diagonal() {
        let s1 = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let map = gaussian_ot_map(&DVector::zeros(2), &DMatrix::identity(2, 2), &DVector::zeros(2), &s1)
            .unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert!(linalg::max_abs_diff(&map.matrix, &expect) < 1e-12);
    }

    #[test]
    fn ot_map_pushes_covariance_forward() {
        let s0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]);
        let s1 = DMatrix::from_row_slice(2, 2, &[1.0, -0.4, -0.4, 3.0]);
        let map = gaussian_ot_map(&DVector::zeros(2), &s0, &DVector::zeros(2), &s1).unwrap();
        let pushed = &map.matrix * &s0 * map.matrix.transpose();
        assert!(linalg::max_abs_diff(&pushed, &s1) <= 1e-9 * 3.0);
        assert!(linalg::min_eigenvalue(&map.matrix) > 0.0);
    }

    #[test]
    fn ot_map_singular_source_rejected() {
        let s0 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = gaussian_ot_map(&DVector::zeros(2), &s0, &DVector::zeros(2), &DMatrix::identity(2, 2));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn material_derivative_deterministic_vanishes() {
        let g = doubling(Schedule::Affine);
        for t in [0.0, 0.25, 0.5, 1.0] {
            let md = g.material_derivative(t, &v1(1.7)).unwrap();
            assert!(md.value[0].abs() < 1e-8, "t={t}: {}", md.value[0]);
        }
        assert_eq!(g.material_derivative(0.0, &v1(1.0)).unwrap().accuracy, TimeAccuracy::OneSided);
        assert_eq!(g.material_derivative(0.5, &v1(1.0)).unwrap().accuracy, TimeAccuracy::Central);
    }

    #[test]
    fn material_derivative_affine_independent_midpoint() {
        let g = GaussianProcessSpec::independent_standard(Schedule::Affine, 1);
        for x in [-2.0, 0.5, 1.5] {
            let md = g.material_derivative(0.5, &v1(x)).unwrap();
            assert!((md.value[0] - 4.0 * x).abs() < 1e-6);
        }
    }

    #[test]
    fn material_derivative_trig_independent() {
        let g = GaussianProcessSpec::independent_standard(Schedule::Trig, 1);
        let md = g.material_derivative(0.3, &v1(0.8)).unwrap();
        assert!(md.value[0].abs() < 1e-9);
    }
}
