use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use straightflow::calculus::{GridField, Rank, SpatialGrid, Stencil};
use straightflow::estimate::KernelConfig;
use straightflow::flow::*;
use straightflow::oracle::GaussianProcessSpec;
use straightflow::process::{
    make_time_grid, sample_paths, AffineMap, CouplingSpec, Distribution as Law, ProcessSpec,
    Schedule,
};
use straightflow::Error;

fn normals(n: usize, seed: u64, mean: f64, sd: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean + sd * z
        })
        .collect()
}

fn scaling(schedule: Schedule, factor: f64) -> AnalyticOracle {
    let map = AffineMap::new(DMatrix::from_element(1, 1, factor), DVector::zeros(1)).unwrap();
    AnalyticOracle::new(
        GaussianProcessSpec::deterministic(schedule, DVector::zeros(1), DMatrix::identity(1, 1), &map)
            .unwrap(),
    )
}

#[test]
fn constant_field_is_exact_under_euler() {
    let c = [0.5, -2.0];
    let oracle = FnOracle::new(2, move |_, _, out: &mut [f64]| out.copy_from_slice(&c));
    for steps in [1, 3, 17] {
        let grid = make_time_grid(steps).unwrap();
        let traj = integrate(&oracle, &[1.0, 1.0], &grid, Scheme::Euler).unwrap();
        assert_eq!(traj.n_evals, steps);
        for (k, t) in grid.nodes().iter().enumerate() {
            let s = traj.state(k);
            assert!((s[0] - (1.0 + t * c[0])).abs() < 1e-14);
            assert!((s[1] - (1.0 + t * c[1])).abs() < 1e-14);
        }
    }
}

#[test]
fn eval_counts_per_scheme() {
    let oracle = FnOracle::new(1, |_, x: &[f64], out: &mut [f64]| out[0] = -x[0]);
    let grid = make_time_grid(10).unwrap();
    for (scheme, per) in [(Scheme::Euler, 1), (Scheme::Midpoint, 2), (Scheme::Rk4, 4)] {
        assert_eq!(integrate(&oracle, &[1.0], &grid, scheme).unwrap().n_evals, 10 * per);
    }
}

#[test]
fn scaling_field_rk4() {
    let oracle = FnOracle::new(1, |t, x: &[f64], out: &mut [f64]| out[0] = x[0] / (1.0 + t));
    let traj = integrate(&oracle, &[1.0], &make_time_grid(100).unwrap(), Scheme::Rk4).unwrap();
    assert!((traj.endpoint()[0] - 2.0).abs() < 1e-9);
}

#[test]
fn curved_flow_separates_schemes() {
    let oracle = AnalyticOracle::new(GaussianProcessSpec::independent_standard(Schedule::Affine, 1));
    let euler = integrate(&oracle, &[1.0], &make_time_grid(1).unwrap(), Scheme::Euler).unwrap();
    let rk4 = integrate(&oracle, &[1.0], &make_time_grid(200).unwrap(), Scheme::Rk4).unwrap();
    assert!(euler.endpoint()[0].abs() < 1e-12);
    assert!((rk4.endpoint()[0] - euler.endpoint()[0]).abs() > 0.1);
}

#[test]
fn flow_map_preserves_order_and_collects_failures() {
    let oracle = FnOracle::new(1, |_, x: &[f64], out: &mut [f64]| {
        out[0] = if x[0] > 5.0 { f64::NAN } else { 1.0 }
    });
    let grid = make_time_grid(4).unwrap();
    let res = flow_map(&oracle, &[0.0, 10.0, 2.0], &grid, Scheme::Euler);
    assert_eq!(res.len(), 3);
    assert!((res[0].as_ref().unwrap().endpoint()[0] - 1.0).abs() < 1e-14);
    let err = res[1].as_ref().unwrap_err();
    assert_eq!(err.partial.len(), 1);
    assert!((res[2].as_ref().unwrap().endpoint()[0] - 3.0).abs() < 1e-14);
}

#[test]
fn straightness_examples() {
    let oracle = FnOracle::new(1, |_, _, out: &mut [f64]| out[0] = 2.0);
    let line = integrate(&oracle, &[0.5], &make_time_grid(10).unwrap(), Scheme::Euler).unwrap();
    let s = straightness_deviation(&line).unwrap();
    assert!(s.chord_dev < 1e-14 && s.second_diff < 1e-10);

    let fine = make_time_grid(400).unwrap();
    let trig = integrate(&scaling(Schedule::Trig, 1.0), &[1.0], &fine, Scheme::Rk4).unwrap();
    let s = straightness_deviation(&trig).unwrap();
    assert!((s.chord_dev - (2f64.sqrt() - 1.0)).abs() < 1e-3, "{}", s.chord_dev);

    let aff = integrate(&scaling(Schedule::Affine, 2.0), &[1.0], &make_time_grid(100).unwrap(), Scheme::Rk4)
        .unwrap();
    assert!(straightness_deviation(&aff).unwrap().chord_dev <= 1e-6);

    let short = integrate(&oracle, &[0.0], &make_time_grid(1).unwrap(), Scheme::Euler).unwrap();
    assert!(straightness_deviation(&short).is_err());
}

#[test]
fn one_step_examples() {
    let points = normals(100, 7, 0.0, 1.0);
    let r = one_step_error(&scaling(Schedule::Affine, 2.0), &points, REFERENCE_STEPS).unwrap();
    assert!(r.max <= 1e-6, "{}", r.max);

    let indep = AnalyticOracle::new(GaussianProcessSpec::independent_standard(Schedule::Affine, 1));
    assert!(one_step_error(&indep, &[1.0], REFERENCE_STEPS).unwrap().max >= 0.5);

    let zero = FnOracle::new(1, |_, _, out: &mut [f64]| out[0] = 0.0);
    assert_eq!(one_step_error(&zero, &points, 50).unwrap().max, 0.0);
}

#[test]
fn rk4_reference_is_converged() {
    let specs = [
        GaussianProcessSpec::independent_standard(Schedule::Affine, 1),
        GaussianProcessSpec::independent_standard(Schedule::Trig, 1),
    ];
    for spec in specs {
        let oracle = AnalyticOracle::new(spec);
        for x0 in [-1.5, 0.3, 2.0] {
            let a = integrate(&oracle, &[x0], &make_time_grid(200).unwrap(), Scheme::Rk4).unwrap();
            let b = integrate(&oracle, &[x0], &make_time_grid(400).unwrap(), Scheme::Rk4).unwrap();
            assert!((a.endpoint()[0] - b.endpoint()[0]).abs() <= 1e-8);
        }
    }
}

#[test]
fn energy_distance_examples() {
    let a = normals(10_000, 1, 0.0, 1.0);
    let b = normals(10_000, 2, 0.0, 1.0);
    let c = normals(10_000, 3, 3.0, 1.0);
    assert!(energy_distance(&a, &a, 1).unwrap().abs() < 1e-12);
    assert!(energy_distance(&a, &b, 1).unwrap() <= 0.01);
    assert!(energy_distance(&a, &c, 1).unwrap() >= 1.0);
    assert!(matches!(energy_distance(&a, &[], 1), Err(Error::InvalidArgument(_))));
}

#[test]
fn analytic_flow_transports_marginals_in_two_dimensions() {
    let s1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let m1 = DVector::from_vec(vec![1.0, -1.0]);
    let spec = GaussianProcessSpec::new(
        DVector::zeros(2),
        m1.clone(),
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 2),
        s1.clone(),
        Schedule::Trig,
        None,
    )
    .unwrap();
    let n = 1000;
    let src = normals(2 * n, 11, 0.0, 1.0);
    let oracle = AnalyticOracle::new(spec);
    let grid = make_time_grid(100).unwrap();
    let ends: Vec<f64> = flow_map(&oracle, &src, &grid, Scheme::Rk4)
        .into_iter()
        .flat_map(|r| r.unwrap().endpoint().to_vec())
        .collect();
    let target = straightflow::process::Gaussian::new(m1, s1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let direct: Vec<f64> = (0..n).flat_map(|_| target.sample(&mut rng).as_slice().to_vec()).collect();
    let far: Vec<f64> = direct.iter().map(|v| v + 1.0).collect();
    let e = energy_distance(&ends, &direct, 2).unwrap();
    assert!(e < 0.2 * energy_distance(&far, &direct, 2).unwrap(), "{e}");
}

#[test]
fn kernel_oracle_tracks_analytic_velocity() {
    let spec = ProcessSpec::affine(
        CouplingSpec::independent(Law::standard_normal(1), Law::standard_normal(1)).unwrap(),
    )
    .unwrap();
    let ens = sample_paths(&spec, 20_000, &make_time_grid(10).unwrap(), 5).unwrap();
    let kernel = KernelOracle::new(&ens, &KernelConfig::default(), None).unwrap();
    let exact = AnalyticOracle::new(spec.to_gaussian().unwrap());
    let (mut a, mut b) = ([0.0], [0.0]);
    for t in [0.1, 0.45, 0.8] {
        kernel.velocity(t, &[0.5], &mut a).unwrap();
        exact.velocity(t, &[0.5], &mut b).unwrap();
        assert!((a[0] - b[0]).abs() < 0.1, "t={t}: {} vs {}", a[0], b[0]);
    }
    assert_eq!(kernel.excursions(), 0);
    kernel.velocity(0.5, &[100.0], &mut a).unwrap();
    assert!(kernel.excursions() >= 1);
}

#[test]
fn kernel_oracle_refuses_empty_regions() {
    let spec = ProcessSpec::affine(
        CouplingSpec::independent(Law::standard_normal(1), Law::standard_normal(1)).unwrap(),
    )
    .unwrap();
    let ens = sample_paths(&spec, 500, &make_time_grid(4).unwrap(), 5).unwrap();
    let cfg = KernelConfig::with_bandwidth(0.01);
    let kernel = KernelOracle::new(&ens, &cfg, Some(vec![(-50.0, 50.0)])).unwrap();
    let err = integrate(&kernel, &[40.0], &make_time_grid(4).unwrap(), Scheme::Euler).unwrap_err();
    assert!(matches!(err.error, Error::LeftSupport { .. }));
    assert_eq!(err.partial.len(), 1);
}

#[test]
fn grid_oracle_interpolates_linear_fields() {
    let g = Arc::new(SpatialGrid::from_box(&[(-2.0, 2.0), (-2.0, 2.0)], 21, Stencil::Central2).unwrap());
    let field = |t: f64| {
        GridField::from_fn(g.clone(), Rank::Vector, t, |x| vec![x[1] + t, -x[0]]).unwrap()
    };
    let oracle = GridOracle::new(vec![field(1.0), field(0.0)]).unwrap();
    let mut out = [0.0; 2];
    oracle.velocity(0.25, &[0.33, -0.71], &mut out).unwrap();
    assert!((out[0] - (-0.71 + 0.25)).abs() < 1e-12);
    assert!((out[1] + 0.33).abs() < 1e-12);
    assert!(matches!(
        oracle.velocity(0.5, &[1.95, 0.0], &mut out),
        Err(Error::LeftSupport { .. })
    ));
}

#[test]
fn trajectory_csv() {
    let oracle = FnOracle::new(1, |_, _, out: &mut [f64]| out[0] = 1.0);
    let t = integrate(&oracle, &[0.0], &make_time_grid(2).unwrap(), Scheme::Euler).unwrap();
    let mut buf = Vec::new();
    write_trajectories_csv(&mut buf, &[t]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "point,t,x1\n0,0.0,0.0\n0,0.5,0.5\n0,1.0,1.0\n");
}
