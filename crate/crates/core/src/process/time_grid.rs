use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of time nodes spanning `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    step: f64,
}

impl TimeGrid {
    pub fn t0(&self) -> f64 {
        0.0
    }

    pub fn t1(&self) -> f64 {
        1.0
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Index of the node closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = (t.clamp(0.0, 1.0) / self.step).round() as usize;
        k.min(self.n_steps())
    }
}

/// `n_steps + 1` uniformly spaced nodes on `[0, 1]`.
pub fn make_time_grid(n_steps: usize) -> Result<TimeGrid> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument(
            "time grid needs at least one step".into(),
        ));
    }
    let n = n_steps as f64;
    let nodes = (0..=n_steps).map(|k| k as f64 / n).collect();
    Ok(TimeGrid {
        nodes,
        step: 1.0 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_grid() {
        let g = make_time_grid(1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0]);
    }

    #[test]
    fn quarter_grid() {
        let g = make_time_grid(4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.step(), 0.25);
    }

    #[test]
    fn hundred_steps() {
        let g = make_time_grid(100).unwrap();
        assert_eq!(g.len(), 101);
        assert!((g.step() - 0.01).abs() < 1e-15);
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.nodes()[100], 1.0);
        for w in g.nodes().windows(2) {
            assert!(w[1] > w[0]);
            assert!(((w[1] - w[0]) - g.step()).abs() <= 1e-12 * g.step());
        }
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(make_time_grid(0), Err(Error::InvalidArgument(_))));
    }
}
