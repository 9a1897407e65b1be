use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use straightflow::process::*;
use straightflow::Error;

fn normal(mean: f64, var: f64) -> Distribution {
    Distribution::gaussian(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var)).unwrap()
}

fn doubling() -> CouplingSpec {
    let map = AffineMap::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1)).unwrap();
    CouplingSpec::deterministic(normal(0.0, 1.0), TransportMap::Affine(map), None).unwrap()
}

fn independent() -> CouplingSpec {
    CouplingSpec::independent(normal(0.0, 1.0), normal(0.0, 1.0)).unwrap()
}

fn correlation(pairs: &[EndpointSample]) -> f64 {
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in pairs {
        let (x, y) = (p.x0[0], p.x1[0]);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let cov = sxy / n - sx * sy / (n * n);
    cov / ((sxx / n - sx * sx / (n * n)) * (syy / n - sy * sy / (n * n))).sqrt()
}

#[test]
fn time_grid_examples() {
    assert_eq!(make_time_grid(1).unwrap().nodes(), &[0.0, 1.0]);
    assert_eq!(make_time_grid(4).unwrap().nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    let g = make_time_grid(100).unwrap();
    assert_eq!(g.len(), 101);
    assert!((g.step() - 0.01).abs() < 1e-15);
    assert!(matches!(make_time_grid(0), Err(Error::InvalidArgument(_))));
}

#[test]
fn deterministic_pairs_follow_the_map() {
    for p in coupling_sample(&doubling(), 3, 17).unwrap() {
        assert_eq!(p.x1[0], 2.0 * p.x0[0]);
    }
}

#[test]
fn independent_pairs_are_uncorrelated() {
    let pairs = coupling_sample(&independent(), 100_000, 3).unwrap();
    assert!(correlation(&pairs).abs() <= 0.01);
}

#[test]
fn joint_gaussian_with_identity_cross_block_is_perfectly_correlated() {
    let cov = DMatrix::from_element(2, 2, 1.0);
    let c = CouplingSpec::gaussian_joint(DVector::zeros(1), DVector::zeros(1), cov).unwrap();
    let pairs = coupling_sample(&c, 100_000, 4).unwrap();
    assert!((correlation(&pairs) - 1.0).abs() <= 0.01);
}

#[test]
fn non_psd_joint_rejected() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let r = CouplingSpec::gaussian_joint(DVector::zeros(1), DVector::zeros(1), cov);
    assert!(matches!(r, Err(Error::InvalidCoupling(_))));
}

#[test]
fn affine_paths_have_no_acceleration() {
    let spec = ProcessSpec::affine(independent()).unwrap();
    let ens = sample_paths(&spec, 200, &make_time_grid(8).unwrap(), 1).unwrap();
    for i in 0..200 {
        for k in 0..9 {
            assert_eq!(ens.acceleration(i, k), &[0.0]);
        }
    }
}

#[test]
fn trig_acceleration_is_proportional_to_position() {
    let spec = ProcessSpec::trig(independent()).unwrap();
    let ens = sample_paths(&spec, 200, &make_time_grid(8).unwrap(), 2).unwrap();
    for i in 0..200 {
        for k in 0..9 {
            let want = -PI * PI / 4.0 * ens.position(i, k)[0];
            assert!((ens.acceleration(i, k)[0] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn doubling_path_at_midpoint() {
    let spec = ProcessSpec::affine(doubling()).unwrap();
    let endpoints = [EndpointSample {
        x0: DVector::from_element(1, 1.0),
        x1: DVector::from_element(1, 2.0),
        z: None,
    }];
    let ens = paths_from_endpoints(&spec, &endpoints, &make_time_grid(2).unwrap());
    assert!((ens.position(0, 1)[0] - 1.5).abs() < 1e-15);
    assert!((ens.velocity(0, 1)[0] - 1.0).abs() < 1e-15);
}

#[test]
fn endpoint_marginals_preserved() {
    let c = CouplingSpec::independent(normal(1.0, 4.0), normal(-2.0, 0.25)).unwrap();
    let spec = ProcessSpec::new(Schedule::Trig, Some(Latent::sqrt()), c).unwrap();
    let n = 20_000;
    let ens = sample_paths(&spec, n, &make_time_grid(4).unwrap(), 5).unwrap();
    for (k, mean, var) in [(0, 1.0, 4.0), (4, -2.0, 0.25)] {
        let xs: Vec<f64> = (0..n).map(|i| ens.position(i, k)[0]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Standard errors of the sample mean and variance of a Gaussian.
        assert!((m - mean).abs() <= 4.0 * (var / n as f64).sqrt(), "k={k} mean {m}");
        assert!((v - var).abs() <= 4.0 * var * (2.0 / (n - 1) as f64).sqrt(), "k={k} var {v}");
    }
}

fn max_difference_error(spec: &ProcessSpec, steps: usize) -> f64 {
    let grid = make_time_grid(steps).unwrap();
    let ens = sample_paths(spec, 50, &grid, 6).unwrap();
    let h = grid.step();
    let mut err = 0.0f64;
    for i in 0..50 {
        for k in 1..steps {
            let fd = (ens.position(i, k + 1)[0] - ens.position(i, k - 1)[0]) / (2.0 * h);
            err = err.max((fd - ens.velocity(i, k)[0]).abs());
        }
    }
    err
}

#[test]
fn velocities_match_differenced_positions() {
    let latent = Latent {
        kind: LatentKind::Quadratic,
        ..Latent::sqrt()
    };
    let spec = ProcessSpec::new(Schedule::Trig, Some(latent), independent()).unwrap();
    let coarse = max_difference_error(&spec, 20);
    let fine = max_difference_error(&spec, 40);
    // Second-order differences: halving the step divides the error by about 4.
    assert!(coarse / fine > 3.5, "{coarse} {fine}");
}

#[test]
fn ensemble_file_roundtrip() {
    let spec = ProcessSpec::trig(independent()).unwrap();
    let ens = sample_paths(&spec, 30, &make_time_grid(3).unwrap(), 8).unwrap();
    let mut buf = Vec::new();
    ens.write_to(&mut buf).unwrap();
    assert_eq!(buf.len(), 5 + 24 + 3 * 30 * 4 * 8);
    let back = PathEnsemble::read_from(buf.as_slice()).unwrap();
    for i in 0..30 {
        for k in 0..4 {
            assert_eq!(back.position(i, k), ens.position(i, k));
            assert_eq!(back.velocity(i, k), ens.velocity(i, k));
            assert_eq!(back.acceleration(i, k), ens.acceleration(i, k));
        }
    }
    buf[0] = b'X';
    assert!(PathEnsemble::read_from(buf.as_slice()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), n in 1usize..60, steps in 1usize..12) {
        let spec = ProcessSpec::new(Schedule::Affine, Some(Latent::sqrt()), independent()).unwrap();
        let grid = make_time_grid(steps).unwrap();
        let a = sample_paths(&spec, n, &grid, seed).unwrap();
        let b = sample_paths(&spec, n, &grid, seed).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_to(&mut x).unwrap();
        b.write_to(&mut y).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn paths_do_not_depend_on_ensemble_size(seed in any::<u64>(), n in 2usize..40) {
        let spec = ProcessSpec::trig(independent()).unwrap();
        let grid = make_time_grid(4).unwrap();
        let small = sample_paths(&spec, n - 1, &grid, seed).unwrap();
        let large = sample_paths(&spec, n, &grid, seed).unwrap();
        for i in 0..n - 1 {
            prop_assert_eq!(small.position(i, 2), large.position(i, 2));
        }
    }

    #[test]
    fn positions_interpolate_endpoints(seed in any::<u64>(), t_steps in 1usize..10) {
        let spec = ProcessSpec::affine(doubling()).unwrap();
        let grid = make_time_grid(t_steps).unwrap();
        let ens = sample_paths(&spec, 5, &grid, seed).unwrap();
        for i in 0..5 {
            let x0 = ens.position(i, 0)[0];
            for (k, t) in grid.nodes().iter().enumerate() {
                let want = (1.0 - t) * x0 + t * 2.0 * x0;
                prop_assert!((ens.position(i, k)[0] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }
}
