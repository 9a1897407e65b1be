//! Probability-flow integration and straightness measurements.

mod integrate;
mod metrics;
mod oracle;

pub use integrate::{
    flow_map, integrate, one_step_error, straightness_deviation, write_trajectories_csv,
    IntegrationError, OneStepReport, Scheme, Straightness, Trajectory, REFERENCE_STEPS,
};
pub use metrics::energy_distance;
pub use oracle::{
    AnalyticOracle, FnOracle, GridOracle, KernelOracle, OracleSource, VelocityField,
};
