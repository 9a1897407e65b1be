//! Processes, couplings, time grids and path sampling.

mod config;
mod coupling;
mod ensemble;
mod schedule;
mod spec;
mod time_grid;

pub use config::{CouplingConfig, DistributionConfig, MapConfig, ProcessConfig};
pub use coupling::{
    AffineMap, CouplingKind, CouplingSpec, Distribution, Gaussian, GaussianJoint, TransportMap,
    PUSHFORWARD_TOL,
};
pub use ensemble::{
    coupling_sample, path_rng, paths_from_endpoints, process_endpoints, sample_paths, sample_slice,
    slice_from_endpoints, EndpointSample, PathEnsemble, Slice, SliceView, ENSEMBLE_MAGIC,
};
pub use schedule::{Coeff, Latent, LatentKind, Schedule};
pub use spec::ProcessSpec;
pub use time_grid::{make_time_grid, TimeGrid};
