//! Sampled path ensembles with exact per-path velocity and acceleration.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::coupling::{standard_normal_vec, CouplingSpec};
use super::spec::ProcessSpec;
use super::time_grid::{make_time_grid, TimeGrid};

/// Magic bytes opening a binary ensemble file.
pub const ENSEMBLE_MAGIC: &[u8; 5] = b"SFLW1";

/// One draw of the endpoints and, for latent processes, the noise vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointSample {
    pub x0: DVector<f64>,
    pub x1: DVector<f64>,
    pub z: Option<DVector<f64>>,
}

/// RNG stream of path `index` under `seed`. Streams do not depend on how
/// many paths are drawn or in which order.
pub fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw(coupling: &CouplingSpec, latent: bool, seed: u64, index: usize) -> EndpointSample {
    let mut rng = path_rng(seed, index);
    let (x0, x1) = coupling.sample_pair(&mut rng);
    let z = latent.then(|| standard_normal_vec(&mut rng, x0.len()));
    EndpointSample { x0, x1, z }
}

pub fn coupling_sample(coupling: &CouplingSpec, n: usize, seed: u64) -> Result<Vec<EndpointSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    coupling.validate()?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| draw(coupling, false, seed, i))
        .collect())
}

/// Endpoint draws used by `sample_paths`/`sample_slice` for `spec`.
pub fn process_endpoints(spec: &ProcessSpec, n: usize, seed: u64) -> Result<Vec<EndpointSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    spec.validate()?;
    let latent = spec.latent.is_some();
    Ok((0..n)
        .into_par_iter()
        .map(|i| draw(&spec.coupling, latent, seed, i))
        .collect())
}

/// Positions, velocities and accelerations of `n` paths at a single time.
/// Arrays are row-major `n × d`.
#[derive(Debug, Clone, Copy)]
pub struct SliceView<'a> {
    pub t: f64,
    pub n: usize,
    pub d: usize,
    pub positions: &'a [f64],
    pub velocities: &'a [f64],
    pub accelerations: &'a [f64],
}

impl<'a> SliceView<'a> {
    pub fn position(&self, i: usize) -> &'a [f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn velocity(&self, i: usize) -> &'a [f64] {
        &self.velocities[i * self.d..(i + 1) * self.d]
    }

    pub fn acceleration(&self, i: usize) -> &'a [f64] {
        &self.accelerations[i * self.d..(i + 1) * self.d]
    }
}

/// Owned single-time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub t: f64,
    pub n: usize,
    pub d: usize,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub accelerations: Vec<f64>,
}

impl Slice {
    pub fn view(&self) -> SliceView<'_> {
        SliceView {
            t: self.t,
            n: self.n,
            d: self.d,
            positions: &self.positions,
            velocities: &self.velocities,
            accelerations: &self.accelerations,
        }
    }
}

fn fill_state(
    spec: &ProcessSpec,
    t: f64,
    e: &EndpointSample,
    pos: &mut [f64],
    vel: &mut [f64],
    acc: &mut [f64],
) {
    let (a, b, g) = spec.coefficients(t);
    for j in 0..pos.len() {
        let (x, y) = (e.x0[j], e.x1[j]);
        let z = e.z.as_ref().map_or(0.0, |z| z[j]);
        pos[j] = a.value * x + b.value * y + g.value * z;
        vel[j] = a.d1 * x + b.d1 * y + g.d1 * z;
        acc[j] = a.d2 * x + b.d2 * y + g.d2 * z;
    }
}

/// Evaluates the endpoint draws at time `t`.
pub fn slice_from_endpoints(spec: &ProcessSpec, endpoints: &[EndpointSample], t: f64) -> Slice {
    let n = endpoints.len();
    let d = spec.dim();
    let mut positions = vec![0.0; n * d];
    let mut velocities = vec![0.0; n * d];
    let mut accelerations = vec![0.0; n * d];
    positions
        .par_chunks_mut(d)
        .zip(velocities.par_chunks_mut(d))
        .zip(accelerations.par_chunks_mut(d))
        .zip(endpoints.par_iter())
        .for_each(|(((p, v), a), e)| fill_state(spec, t, e, p, v, a));
    Slice {
        t,
        n,
        d,
        positions,
        velocities,
        accelerations,
    }
}

/// Samples `n` paths at the single time `t`, using the same per-path
/// streams as `sample_paths`.
pub fn sample_slice(spec: &ProcessSpec, n: usize, t: f64, seed: u64) -> Result<Slice> {
    check_time(t)?;
    let endpoints = process_endpoints(spec, n, seed)?;
    Ok(slice_from_endpoints(spec, &endpoints, t))
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// `n` sampled trajectories on a shared time grid. Storage is time-major:
/// entry `(k, i, j)` lives at `(k * n + i) * d + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n: usize,
    d: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    accelerations: Vec<f64>,
    /// `None` when loaded from a file.
    seed: Option<u64>,
}

pub fn sample_paths(spec: &ProcessSpec, n: usize, grid: &TimeGrid, seed: u64) -> Result<PathEnsemble> {
    let endpoints = process_endpoints(spec, n, seed)?;
    let mut ens = paths_from_endpoints(spec, &endpoints, grid);
    ens.seed = Some(seed);
    Ok(ens)
}

/// Evaluates given endpoint draws on every node of `grid`.
pub fn paths_from_endpoints(spec: &ProcessSpec, endpoints: &[EndpointSample], grid: &TimeGrid) -> PathEnsemble {
    let n = endpoints.len();
    let d = spec.dim();
    let stride = n * d;
    let k = grid.len();
    let mut positions = vec![0.0; k * stride];
    let mut velocities = vec![0.0; k * stride];
    let mut accelerations = vec![0.0; k * stride];
    positions
        .par_chunks_mut(stride.max(1))
        .zip(velocities.par_chunks_mut(stride.max(1)))
        .zip(accelerations.par_chunks_mut(stride.max(1)))
        .zip(grid.nodes().par_iter())
        .for_each(|(((p, v), a), &t)| {
            for (i, e) in endpoints.iter().enumerate() {
                let r = i * d..(i + 1) * d;
                fill_state(spec, t, e, &mut p[r.clone()], &mut v[r.clone()], &mut a[r]);
            }
        });
    PathEnsemble {
        grid: grid.clone(),
        n,
        d,
        positions,
        velocities,
        accelerations,
        seed: None,
    }
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn slice(&self, k: usize) -> SliceView<'_> {
        let stride = self.n * self.d;
        let r = k * stride..(k + 1) * stride;
        SliceView {
            t: self.grid.nodes()[k],
            n: self.n,
            d: self.d,
            positions: &self.positions[r.clone()],
            velocities: &self.velocities[r.clone()],
            accelerations: &self.accelerations[r],
        }
    }

    fn index(&self, i: usize, k: usize) -> std::ops::Range<usize> {
        let start = (k * self.n + i) * self.d;
        start..start + self.d
    }

    pub fn position(&self, i: usize, k: usize) -> &[f64] {
        &self.positions[self.index(i, k)]
    }

    pub fn velocity(&self, i: usize, k: usize) -> &[f64] {
        &self.velocities[self.index(i, k)]
    }

    pub fn acceleration(&self, i: usize, k: usize) -> &[f64] {
        &self.accelerations[self.index(i, k)]
    }

    /// Writes the flat binary format: magic, `N`, `K`, `d` as little-endian
    /// u64, then positions, velocities and accelerations as row-major
    /// `N × K × d` little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ENSEMBLE_MAGIC)?;
        for dim in [self.n, self.grid.len(), self.d] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.n * self.grid.len() * self.d * 8);
        for data in [&self.positions, &self.velocities, &self.accelerations] {
            buf.clear();
            for i in 0..self.n {
                for k in 0..self.grid.len() {
                    let start = (k * self.n + i) * self.d;
                    for v in &data[start..start + self.d] {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != ENSEMBLE_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut dims = [0usize; 3];
        for dim in dims.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *dim = u64::from_le_bytes(b) as usize;
        }
        let [n, k, d] = dims;
        if n == 0 || k < 2 || d == 0 {
            return Err(Error::Format(format!("invalid header dims ({n}, {k}, {d})")));
        }
        let grid = make_time_grid(k - 1)?;
        let total = n * k * d;
        let mut arrays = Vec::with_capacity(3);
        let mut bytes = vec![0u8; total * 8];
        for _ in 0..3 {
            r.read_exact(&mut bytes)?;
            let mut data = vec![0.0; total];
            for (idx, chunk) in bytes.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                let j = idx % d;
                let kk = (idx / d) % k;
                let i = idx / (d * k);
                data[(kk * n + i) * d + j] = v;
            }
            arrays.push(data);
        }
        let accelerations = arrays.pop().expect("three arrays");
        let velocities = arrays.pop().expect("three arrays");
        let positions = arrays.pop().expect("three arrays");
        Ok(PathEnsemble {
            grid,
            n,
            d,
            positions,
            velocities,
            accelerations,
            seed: None,
        })
    }
}
