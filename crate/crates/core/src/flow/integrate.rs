use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::VelocityField;
use crate::error::{Error, Result};
use crate::process::{make_time_grid, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Midpoint,
    #[default]
    Rk4,
}

impl Scheme {
    pub fn evals_per_step(self) -> usize {
        match self {
            Scheme::Euler => 1,
            Scheme::Midpoint => 2,
            Scheme::Rk4 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// Row `k` is the state at `grid.nodes()[k]`.
    pub states: Vec<f64>,
    pub d: usize,
    pub scheme: Scheme,
    pub n_evals: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.d..(k + 1) * self.d]
    }

    pub fn initial(&self) -> &[f64] {
        self.state(0)
    }

    pub fn endpoint(&self) -> &[f64] {
        self.state(self.len() - 1)
    }
}

/// Failure during integration, carrying the states computed so far.
#[derive(Debug)]
pub struct IntegrationError {
    pub error: Error,
    pub partial: Trajectory,
}

impl fmt::Display for IntegrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} of {} nodes)", self.error, self.partial.len(), self.partial.grid.len())
    }
}

impl std::error::Error for IntegrationError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<IntegrationError> for Error {
    fn from(e: IntegrationError) -> Self {
        e.error
    }
}

struct Stepper<'a, O: ?Sized> {
    oracle: &'a O,
    evals: usize,
    d: usize,
}

impl<O: VelocityField + ?Sized> Stepper<'_, O> {
    fn eval(&mut self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        self.evals += 1;
        self.oracle.velocity(t, x, &mut out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("velocity at t = {t}")));
        }
        Ok(out)
    }

    fn step(&mut self, scheme: Scheme, t: f64, h: f64, x: &[f64]) -> Result<Vec<f64>> {
        let shift = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> {
            x.iter().zip(k).map(|(a, b)| a + s * b).collect()
        };
        Ok(match scheme {
            Scheme::Euler => {
                let k1 = self.eval(t, x)?;
                shift(x, &k1, h)
            }
            Scheme::Midpoint => {
                let k1 = self.eval(t, x)?;
                let k2 = self.eval(t + 0.5 * h, &shift(x, &k1, 0.5 * h))?;
                shift(x, &k2, h)
            }
            Scheme::Rk4 => {
                let k1 = self.eval(t, x)?;
                let k2 = self.eval(t + 0.5 * h, &shift(x, &k1, 0.5 * h))?;
                let k3 = self.eval(t + 0.5 * h, &shift(x, &k2, 0.5 * h))?;
                let k4 = self.eval(t + h, &shift(x, &k3, h))?;
                x.iter()
                    .enumerate()
                    .map(|(j, a)| a + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                    .collect()
            }
        })
    }
}

/// Explicit integration of `dx/dt = v_t(x)` over the nodes of `grid`.
pub fn integrate<O: VelocityField + ?Sized>(
    oracle: &O,
    x0: &[f64],
    grid: &TimeGrid,
    scheme: Scheme,
) -> std::result::Result<Trajectory, IntegrationError> {
    let d = oracle.dim();
    let mut traj = Trajectory {
        grid: grid.clone(),
        states: Vec::with_capacity(grid.len() * d),
        d,
        scheme,
        n_evals: 0,
    };
    if x0.len() != d {
        return Err(IntegrationError {
            error: Error::ShapeMismatch(format!("initial point of length {} in dimension {d}", x0.len())),
            partial: traj,
        });
    }
    traj.states.extend_from_slice(x0);
    let mut stepper = Stepper { oracle, evals: 0, d };
    let nodes = grid.nodes();
    let mut x = x0.to_vec();
    for k in 0..grid.n_steps() {
        match stepper.step(scheme, nodes[k], nodes[k + 1] - nodes[k], &x) {
            Ok(next) => {
                x = next;
                traj.states.extend_from_slice(&x);
            }
            Err(error) => {
                traj.n_evals = stepper.evals;
                return Err(IntegrationError { error, partial: traj });
            }
        }
    }
    traj.n_evals = stepper.evals;
    Ok(traj)
}

/// Integrates every point in parallel; failures are returned per point.
/// `points` holds one row of length `d` per point.
pub fn flow_map<O: VelocityField + ?Sized>(
    oracle: &O,
    points: &[f64],
    grid: &TimeGrid,
    scheme: Scheme,
) -> Vec<std::result::Result<Trajectory, IntegrationError>> {
    let d = oracle.dim().max(1);
    points
        .par_chunks(d)
        .map(|x| integrate(oracle, x, grid, scheme))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Straightness {
    /// `max_k |φ_k − ((1 − t_k) φ_0 + t_k φ_1)|`
    pub chord_dev: f64,
    /// `max_k |φ_{k+1} − 2φ_k + φ_{k−1}| / step²`
    pub second_diff: f64,
}

pub fn straightness_deviation(traj: &Trajectory) -> Result<Straightness> {
    let n = traj.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("trajectory has {n} nodes, need 3")));
    }
    let nodes = traj.grid.nodes();
    let (first, last) = (traj.initial(), traj.endpoint());
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let mut chord_dev = 0.0f64;
    for k in 0..n {
        let t = nodes[k];
        let dev = norm(&mut traj
            .state(k)
            .iter()
            .zip(first.iter().zip(last))
            .map(|(x, (a, b))| x - ((1.0 - t) * a + t * b)));
        chord_dev = chord_dev.max(dev);
    }
    let h = traj.grid.step();
    let mut second_diff = 0.0f64;
    for k in 1..n - 1 {
        let (p, c, q) = (traj.state(k - 1), traj.state(k), traj.state(k + 1));
        let dd = norm(&mut (0..traj.d).map(|j| q[j] - 2.0 * c[j] + p[j]));
        second_diff = second_diff.max(dd / (h * h));
    }
    Ok(Straightness {
        chord_dev,
        second_diff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepReport {
    pub errors: Vec<f64>,
    pub max: f64,
    pub rms: f64,
    pub reference_steps: usize,
}

/// Default number of rk4 steps for reference endpoints.
pub const REFERENCE_STEPS: usize = 400;

/// Distance between the single-step Euler endpoint and an rk4 reference
/// endpoint, per point.
pub fn one_step_error<O: VelocityField + ?Sized>(
    oracle: &O,
    points: &[f64],
    reference_steps: usize,
) -> Result<OneStepReport> {
    let d = oracle.dim();
    if d == 0 || points.len() % d != 0 || points.is_empty() {
        return Err(Error::ShapeMismatch("points must be nonempty rows of length d".into()));
    }
    let one = make_time_grid(1)?;
    let fine = make_time_grid(reference_steps)?;
    let errors = points
        .par_chunks(d)
        .map(|x| -> Result<f64> {
            let e = integrate(oracle, x, &one, Scheme::Euler)?;
            let r = integrate(oracle, x, &fine, Scheme::Rk4)?;
            Ok(e.endpoint()
                .iter()
                .zip(r.endpoint())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = errors.iter().copied().fold(0.0, f64::max);
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    Ok(OneStepReport {
        errors,
        max,
        rms,
        reference_steps,
    })
}

/// CSV with columns `point,t,x1..xd`.
pub fn write_trajectories_csv<W: Write>(mut w: W, trajs: &[Trajectory]) -> Result<()> {
    let d = trajs.first().map_or(0, |t| t.d);
    let mut header = vec!["point".to_string(), "t".to_string()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    writeln!(w, "{}", header.join(","))?;
    for (p, traj) in trajs.iter().enumerate() {
        for (k, t) in traj.grid.nodes().iter().enumerate().take(traj.len()) {
            let row: Vec<String> = traj.state(k).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{p},{t:?},{}", row.join(","))?;
        }
    }
    Ok(())
}
