//! Python bindings: processes, ensembles, Gaussian oracle fields, flows and
//! theorem reports. Matrices cross the boundary as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyNotImplementedError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use straightflow::estimate::{Bandwidth, KernelConfig, KernelEstimator};
use straightflow::flow::{self as sf, AnalyticOracle, Scheme};
use straightflow::oracle::{self, GaussianProcessSpec};
use straightflow::process::{self, make_time_grid, PathEnsemble, ProcessConfig, ProcessSpec};
use straightflow::verify::{self, TheoremReport, VerifyConfig};
use straightflow::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Unsupported(_) => PyNotImplementedError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(PyValueError::new_err("matrix rows must be nonempty and of equal length"));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

fn flatten(points: &[Vec<f64>], d: usize) -> PyResult<Vec<f64>> {
    if points.iter().any(|p| p.len() != d) {
        return Err(PyValueError::new_err(format!("points must have length {d}")));
    }
    Ok(points.concat())
}

fn scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "euler" => Ok(Scheme::Euler),
        "midpoint" => Ok(Scheme::Midpoint),
        "rk4" => Ok(Scheme::Rk4),
        _ => Err(PyValueError::new_err(format!("unknown scheme {name:?}"))),
    }
}

fn report_to_py<'py>(py: Python<'py>, value: &TheoremReport) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Interpolating process built from the JSON `process` object used by the CLI.
#[pyclass(frozen)]
struct Process {
    spec: ProcessSpec,
}

impl Process {
    fn gaussian(&self) -> PyResult<GaussianProcessSpec> {
        self.spec.to_gaussian().map_err(to_py)
    }
}

#[pymethods]
impl Process {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg: ProcessConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Process {
            spec: cfg.build().map_err(to_py)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    #[getter]
    fn is_affine(&self) -> bool {
        self.spec.is_affine()
    }

    /// `(alpha, beta, gamma)` values at `t`.
    fn coefficients(&self, t: f64) -> (f64, f64, f64) {
        let (a, b, g) = self.spec.coefficients(t);
        (a.value, b.value, g.value)
    }

    #[pyo3(signature = (n, n_steps, seed))]
    fn sample_paths(&self, n: usize, n_steps: usize, seed: u64) -> PyResult<Ensemble> {
        let grid = make_time_grid(n_steps).map_err(to_py)?;
        Ok(Ensemble {
            inner: process::sample_paths(&self.spec, n, &grid, seed).map_err(to_py)?,
        })
    }

    /// Closed-form `rho, v, a, sigma, pi` at `(t, x)`; Gaussian endpoints only.
    fn oracle_fields<'py>(&self, py: Python<'py>, t: f64, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let f = self
            .gaussian()?
            .conditional_fields(t, &DVector::from_vec(x))
            .map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("rho", f.rho)?;
        out.set_item("v", f.v.as_slice().to_vec())?;
        out.set_item("a", f.a.as_slice().to_vec())?;
        out.set_item("sigma", rows(&f.sigma))?;
        out.set_item("pi", rows(&f.pi))?;
        Ok(out)
    }

    fn material_derivative(&self, t: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let m = self
            .gaussian()?
            .material_derivative(t, &DVector::from_vec(x))
            .map_err(to_py)?;
        Ok(m.value.as_slice().to_vec())
    }

    /// Trajectories of the oracle velocity field from each point; one list of
    /// states per point.
    #[pyo3(signature = (points, n_steps=100, scheme="rk4"))]
    fn flow(&self, points: Vec<Vec<f64>>, n_steps: usize, scheme: &str) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let oracle = AnalyticOracle::new(self.gaussian()?);
        let grid = make_time_grid(n_steps).map_err(to_py)?;
        let flat = flatten(&points, self.spec.dim())?;
        let s = self::scheme(scheme)?;
        sf::flow_map(&oracle, &flat, &grid, s)
            .into_iter()
            .map(|r| {
                let t = r.map_err(|e| to_py(e.error))?;
                Ok((0..t.len()).map(|k| t.state(k).to_vec()).collect())
            })
            .collect()
    }

    /// Chord deviation and second difference of the oracle flow from `x0`.
    #[pyo3(signature = (x0, n_steps=100, scheme="rk4"))]
    fn straightness(&self, x0: Vec<f64>, n_steps: usize, scheme: &str) -> PyResult<(f64, f64)> {
        let oracle = AnalyticOracle::new(self.gaussian()?);
        let grid = make_time_grid(n_steps).map_err(to_py)?;
        let traj = sf::integrate(&oracle, &x0, &grid, self::scheme(scheme)?).map_err(|e| to_py(e.error))?;
        let s = sf::straightness_deviation(&traj).map_err(to_py)?;
        Ok((s.chord_dev, s.second_diff))
    }

    /// Euler one-step error against an rk4 reference, per point.
    #[pyo3(signature = (points, reference_steps=400))]
    fn one_step_error(&self, points: Vec<Vec<f64>>, reference_steps: usize) -> PyResult<Vec<f64>> {
        let oracle = AnalyticOracle::new(self.gaussian()?);
        let flat = flatten(&points, self.spec.dim())?;
        Ok(sf::one_step_error(&oracle, &flat, reference_steps).map_err(to_py)?.errors)
    }

    /// Shuffled-control test of `E[tr Π] = 0` for an affine process.
    #[pyo3(signature = (n, seed, queries=2000))]
    fn verify_affine<'py>(&self, py: Python<'py>, n: usize, seed: u64, queries: usize) -> PyResult<Bound<'py, PyAny>> {
        let cfg = VerifyConfig {
            queries,
            ..Default::default()
        };
        let report = py
            .detach(|| verify::affine_straightness_check(&self.spec, n, seed, &cfg))
            .map_err(to_py)?;
        report_to_py(py, &report)
    }
}

/// Sampled paths with analytic velocities and accelerations.
#[pyclass(frozen)]
struct Ensemble {
    inner: PathEnsemble,
}

#[pymethods]
impl Ensemble {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = std::fs::File::open(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Ensemble {
            inner: PathEnsemble::read_from(std::io::BufReader::new(f)).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.inner.write_to(std::io::BufWriter::new(f)).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n_paths()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.grid().nodes().to_vec()
    }

    /// Positions, velocities and accelerations at time index `k` as `n × d` rows.
    fn slice<'py>(&self, py: Python<'py>, k: usize) -> PyResult<Bound<'py, PyDict>> {
        if k >= self.inner.grid().len() {
            return Err(PyValueError::new_err(format!("time index {k} out of range")));
        }
        let s = self.inner.slice(k);
        let split = |a: &[f64]| a.chunks(s.d).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let out = PyDict::new(py);
        out.set_item("t", s.t)?;
        out.set_item("positions", split(s.positions))?;
        out.set_item("velocities", split(s.velocities))?;
        out.set_item("accelerations", split(s.accelerations))?;
        Ok(out)
    }

    /// Kernel estimates at `x` on slice `k`; `bandwidth=None` uses Silverman.
    #[pyo3(signature = (k, x, bandwidth=None))]
    fn estimate<'py>(&self, py: Python<'py>, k: usize, x: Vec<f64>, bandwidth: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
        if k >= self.inner.grid().len() {
            return Err(PyValueError::new_err(format!("time index {k} out of range")));
        }
        let mut cfg = KernelConfig::default();
        if let Some(h) = bandwidth {
            cfg.bandwidth = Bandwidth::Fixed(h);
        }
        let est = KernelEstimator::new(self.inner.slice(k), &cfg).map_err(to_py)?;
        let e = est.estimate(&x).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("rho", e.rho_hat)?;
        out.set_item("v", e.v_hat.as_slice().to_vec())?;
        out.set_item("a", e.a_hat.as_slice().to_vec())?;
        out.set_item("sigma", rows(&e.sigma_hat))?;
        out.set_item("pi", rows(&e.pi_hat))?;
        out.set_item("effective_n", e.effective_n)?;
        out.set_item("bandwidth", est.bandwidth())?;
        Ok(out)
    }

    /// Trace identity report at time index `k`.
    #[pyo3(signature = (k, queries=2000))]
    fn verify_geometric<'py>(&self, py: Python<'py>, k: usize, queries: usize) -> PyResult<Bound<'py, PyAny>> {
        let cfg = VerifyConfig {
            queries,
            ..Default::default()
        };
        let report = py
            .detach(|| verify::geometric_report(&self.inner, k, &cfg))
            .map_err(to_py)?;
        report_to_py(py, &report)
    }
}

/// Bures–Wasserstein map `x ↦ A x + b` between two Gaussians; returns `(A, b)`.
#[pyfunction]
fn gaussian_ot_map(m0: Vec<f64>, s0: Vec<Vec<f64>>, m1: Vec<f64>, s1: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let map = oracle::gaussian_ot_map(
        &DVector::from_vec(m0),
        &matrix(&s0)?,
        &DVector::from_vec(m1),
        &matrix(&s1)?,
    )
    .map_err(to_py)?;
    Ok((rows(&map.matrix), map.offset.as_slice().to_vec()))
}

/// Energy distance between two samples given as lists of rows.
#[pyfunction]
fn energy_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let d = a.first().map_or(0, Vec::len);
    sf::energy_distance(&flatten(&a, d)?, &flatten(&b, d)?, d).map_err(to_py)
}

#[pymodule]
fn straightflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Process>()?;
    m.add_class::<Ensemble>()?;
    m.add_function(wrap_pyfunction!(gaussian_ot_map, m)?)?;
    m.add_function(wrap_pyfunction!(energy_distance, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
