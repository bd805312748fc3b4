mod common;

use std::sync::Arc;

use common::{rel_err, rng, uniform_points};
use srmmd::flows::{
    check_pairing, flow_step, noise_injected_field, read_particles_csv, run_flow, vector_field,
    write_metrics_csv, write_particles_csv, FlowConfig, FlowKind, MetricSuite, METRICS_HEADER,
};
use srmmd::kernels::{Kernel, RadialKernel};
use srmmd::metrics::Estimator;
use srmmd::rng::{gaussian_points, stream, Stream};
use srmmd::stein::SteinKernel;
use srmmd::targets::GaussianMixture;
use srmmd::witness::TargetRepresentation;
use srmmd::{Error, Points};

fn config(kind: FlowKind, iterations: usize) -> FlowConfig {
    FlowConfig {
        kind,
        iterations,
        ..FlowConfig::default()
    }
}

fn four_gaussian_start(n: usize, seed: u64) -> Points {
    gaussian_points(n, &[0.0, 0.0], 1.0, &mut stream(seed, Stream::Particles))
}

#[test]
fn coinciding_particles_do_not_move() {
    let mut r = rng(81);
    let x = uniform_points(9, 2, -2.0, 2.0, &mut r);
    let target = TargetRepresentation::empirical(x.clone()).unwrap();
    let k = RadialKernel::gaussian(1.0).unwrap();
    for kind in [FlowKind::Mmd, FlowKind::Srmmd, FlowKind::Hrmmd] {
        let field = vector_field(kind, &k, &target, &x, &config(kind, 1)).unwrap();
        assert!(field.as_flat().iter().all(|&v| v == 0.0), "{kind:?}");
        let next = flow_step(&x, &field, 0.1, 1).unwrap();
        assert_eq!(next, x);
    }
}

#[test]
fn single_particle_at_the_stein_mode_is_fixed() {
    let normal = Arc::new(GaussianMixture::standard_normal(1));
    let sk = SteinKernel::new(RadialKernel::gaussian(1.0).unwrap(), normal.clone()).unwrap();
    let target = TargetRepresentation::stein(normal);
    let x = Points::from_rows(&[[0.0]]).unwrap();
    for kind in [FlowKind::Srmmd, FlowKind::Ksd, FlowKind::Hrmmd] {
        let field = vector_field(kind, &sk, &target, &x, &config(kind, 1)).unwrap();
        assert_eq!(field.as_flat(), &[0.0], "{kind:?}");
    }
    let plain = RadialKernel::gaussian(1.0).unwrap();
    let field = vector_field(FlowKind::Svgd, &plain, &target, &x, &config(FlowKind::Svgd, 1)).unwrap();
    assert_eq!(field.as_flat(), &[0.0]);
}

#[test]
fn regularized_field_tends_to_the_mmd_field() {
    let mut r = rng(82);
    let k = RadialKernel::gaussian(1.0).unwrap();
    let gm = GaussianMixture::four_gaussians();
    let targets = [
        TargetRepresentation::empirical(uniform_points(25, 2, -3.0, 3.0, &mut r)).unwrap(),
        TargetRepresentation::analytic(gm, 1.0).unwrap(),
    ];
    for target in &targets {
        for _ in 0..3 {
            let x = uniform_points(20, 2, -2.0, 2.0, &mut r);
            let cfg = FlowConfig {
                lambda: 1e6,
                ..config(FlowKind::Srmmd, 1)
            };
            let sr = vector_field(FlowKind::Srmmd, &k, target, &x, &cfg).unwrap();
            let mmd = vector_field(FlowKind::Mmd, &k, target, &x, &cfg).unwrap();
            for (a, b) in sr.as_flat().iter().zip(mmd.as_flat()) {
                assert!((1e6 * a - b).abs() <= 1e-3 * b.abs(), "{} vs {b}", 1e6 * a);
            }
        }
    }
}

#[test]
fn polynomial_srmmd_uses_the_feature_solver_consistently() {
    // p = 6 < N·d = 20 selects the factorized path; it must agree with the dense solve
    let mut r = rng(83);
    let k = RadialKernel::polynomial(1.0).unwrap();
    let x = uniform_points(10, 2, -1.0, 1.0, &mut r);
    let target = TargetRepresentation::empirical(uniform_points(8, 2, 0.0, 1.5, &mut r)).unwrap();
    let field = vector_field(FlowKind::Srmmd, &k, &target, &x, &config(FlowKind::Srmmd, 1)).unwrap();
    let dense = srmmd::witness::assemble_witness(&k, &x, &target, 0.1).unwrap().field_at_particles();
    assert!(rel_err(field.as_flat(), dense.as_flat()) < 1e-8);
}

#[test]
fn svgd_field_is_the_standard_update() {
    let mut r = rng(84);
    let gm = Arc::new(GaussianMixture::four_gaussians());
    let target = TargetRepresentation::stein(gm.clone());
    let k = RadialKernel::gaussian(1.0).unwrap();
    let x = uniform_points(6, 2, -3.0, 3.0, &mut r);
    let field = vector_field(FlowKind::Svgd, &k, &target, &x, &config(FlowKind::Svgd, 1)).unwrap();
    for (j, xj) in x.rows().enumerate() {
        let mut phi = [0.0; 2];
        for xi in x.rows() {
            let kv = k.value(xi, xj);
            let s = srmmd::stein::ScoreModel::score(gm.as_ref(), xi);
            let mut g = vec![0.0; 2];
            k.grad1_into(xi, xj, &mut g).unwrap();
            for l in 0..2 {
                phi[l] += (kv * s[l] + g[l]) / 6.0;
            }
        }
        assert!((field.row(j)[0] + phi[0]).abs() < 1e-14);
        assert!((field.row(j)[1] + phi[1]).abs() < 1e-14);
    }
}

#[test]
fn incompatible_pairings_are_configuration_errors() {
    let k = RadialKernel::gaussian(1.0).unwrap();
    let samples = TargetRepresentation::empirical(Points::zeros(3, 2)).unwrap();
    let normal = Arc::new(GaussianMixture::standard_normal(2));
    let sk = SteinKernel::new(RadialKernel::gaussian(1.0).unwrap(), normal.clone()).unwrap();
    let score = TargetRepresentation::stein(normal);
    let cases: [(FlowKind, &dyn Kernel, &TargetRepresentation); 5] = [
        (FlowKind::Svgd, &k, &samples),
        (FlowKind::Ksd, &k, &samples),
        (FlowKind::Ksd, &k, &score),
        (FlowKind::Svgd, &sk, &score),
        (FlowKind::Srmmd, &k, &score),
    ];
    for (kind, kernel, target) in cases {
        assert!(matches!(check_pairing(kind, kernel, target), Err(Error::Configuration(_))));
        let x = Points::zeros(2, 2);
        assert!(matches!(
            run_flow(&config(kind, 1), kernel, target, &x, &MetricSuite::default()),
            Err(Error::Configuration(_))
        ));
    }
    assert!(check_pairing(FlowKind::Ksd, &sk, &score).is_ok());
    assert!(check_pairing(FlowKind::Srmmd, &sk, &score).is_ok());
}

#[test]
fn flow_step_examples() {
    let x = Points::from_rows(&[[0.5, 1.5]]).unwrap();
    let zero = Points::zeros(1, 2);
    assert_eq!(flow_step(&x, &zero, 0.1, 1).unwrap(), x);
    let f = Points::from_rows(&[[1.0, -2.0]]).unwrap();
    assert_eq!(flow_step(&x, &f, 0.0, 1).unwrap(), x);
    let y = flow_step(&Points::zeros(1, 2), &f, 0.1, 1).unwrap();
    assert_eq!(y.row(0), &[-0.1, 0.2]);
    assert!(flow_step(&x, &Points::zeros(2, 2), 0.1, 1).is_err());
}

#[test]
fn noise_injection() {
    let gm = GaussianMixture::four_gaussians();
    let target = TargetRepresentation::analytic(gm, 1.0).unwrap();
    let k = RadialKernel::gaussian(1.0).unwrap();
    let x = four_gaussian_start(30, 1);
    let plain = vector_field(FlowKind::Mmd, &k, &target, &x, &config(FlowKind::Mmd, 1)).unwrap();
    let zero = noise_injected_field(&k, &target, &x, 0.0, &mut rng(5)).unwrap();
    assert_eq!(zero, plain);
    let a = noise_injected_field(&k, &target, &x, 0.1, &mut rng(5)).unwrap();
    let b = noise_injected_field(&k, &target, &x, 0.1, &mut rng(5)).unwrap();
    assert_eq!(a, b);
    let diff = a
        .as_flat()
        .iter()
        .zip(plain.as_flat())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    assert!(diff > 0.0);
    assert!(noise_injected_field(&k, &target, &x, -0.1, &mut rng(5)).is_err());
}

#[test]
fn zero_iterations_return_the_initial_ensemble() {
    let k = RadialKernel::gaussian(1.0).unwrap();
    let target = TargetRepresentation::analytic(GaussianMixture::four_gaussians(), 1.0).unwrap();
    let x = four_gaussian_start(10, 2);
    let suite = MetricSuite {
        mmd: Some((&k, &target)),
        ..MetricSuite::default()
    };
    let t = run_flow(&config(FlowKind::Srmmd, 0), &k, &target, &x, &suite).unwrap();
    assert_eq!(t.initial, t.last);
    assert_eq!(t.steps, 0);
    assert_eq!(t.log.len(), 1);
    assert_eq!(t.log[0].step, 0);
}

#[test]
fn logs_rows_at_the_cadence_and_is_deterministic() {
    let k = RadialKernel::gaussian(1.0).unwrap();
    let target = TargetRepresentation::analytic(GaussianMixture::four_gaussians(), 1.0).unwrap();
    let x = four_gaussian_start(20, 3);
    let reference = four_gaussian_start(20, 4);
    let suite = MetricSuite {
        mmd: Some((&k, &target)),
        w2_reference: Some(&reference),
        ..MetricSuite::default()
    };
    let cfg = FlowConfig {
        noise: 0.05,
        snapshot_every: 25,
        ..config(FlowKind::Mmd, 100)
    };
    let a = run_flow(&cfg, &k, &target, &x, &suite).unwrap();
    let b = run_flow(&cfg, &k, &target, &x, &suite).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.log.len(), 100 / 10 + 1);
    assert!(a.log.windows(2).all(|w| w[0].step < w[1].step));
    assert!(a.log.iter().all(|r| r.mmd2.is_some() && r.w2.is_some() && r.ksd2.is_none()));
    assert!(a.log.iter().all(|r| r.wall_ms.is_none()));
    assert_eq!(a.snapshots.iter().map(|s| s.step).collect::<Vec<_>>(), vec![0, 25, 50, 75, 100]);
    // a different seed changes the injected noise
    let c = run_flow(&FlowConfig { seed: 1, ..cfg }, &k, &target, &x, &suite).unwrap();
    assert_ne!(a.last, c.last);
}

#[test]
fn last_step_is_logged_off_cadence() {
    let k = RadialKernel::gaussian(1.0).unwrap();
    let target = TargetRepresentation::analytic(GaussianMixture::four_gaussians(), 1.0).unwrap();
    let suite = MetricSuite {
        mmd: Some((&k, &target)),
        ..MetricSuite::default()
    };
    let t = run_flow(&config(FlowKind::Mmd, 23), &k, &target, &four_gaussian_start(8, 5), &suite).unwrap();
    assert_eq!(t.log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 10, 20, 23]);
}

#[test]
fn srmmd_decreases_mmd_on_the_four_gaussian_benchmark() {
    let k = RadialKernel::gaussian(1.0).unwrap();
    let target = TargetRepresentation::analytic(GaussianMixture::four_gaussians(), 1.0).unwrap();
    let suite = MetricSuite {
        mmd: Some((&k, &target)),
        ..MetricSuite::default()
    };
    let cfg = FlowConfig {
        cadence: 1,
        ..config(FlowKind::Srmmd, 200)
    };
    let t = run_flow(&cfg, &k, &target, &four_gaussian_start(100, 6), &suite).unwrap();
    let mmd: Vec<f64> = t.log.iter().map(|r| r.mmd2.unwrap()).collect();
    assert!(mmd.windows(2).all(|w| w[1] <= w[0] + 1e-6));
    assert!(mmd[200] < 0.5 * mmd[0]);
}

#[test]
fn hybrid_flow_with_full_gradient_weight_follows_srmmd() {
    let k = RadialKernel::gaussian(1.0).unwrap();
    let target = TargetRepresentation::analytic(GaussianMixture::four_gaussians(), 1.0).unwrap();
    let x = four_gaussian_start(20, 7);
    let none = MetricSuite::default();
    let sr = run_flow(&config(FlowKind::Srmmd, 100), &k, &target, &x, &none).unwrap();
    let hr = run_flow(
        &FlowConfig {
            alpha: 1.0,
            ..config(FlowKind::Hrmmd, 100)
        },
        &k,
        &target,
        &x,
        &none,
    )
    .unwrap();
    let dev = sr
        .last
        .as_flat()
        .iter()
        .zip(hr.last.as_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-6, "{dev}");
}

#[test]
fn ksd_flow_logs_ksd() {
    let gm = Arc::new(GaussianMixture::four_gaussians());
    let sk = SteinKernel::new(RadialKernel::gaussian(1.0).unwrap(), gm.clone()).unwrap();
    let target = TargetRepresentation::stein(gm);
    let suite = MetricSuite {
        ksd: Some(&sk),
        estimator: Estimator::V,
        ..MetricSuite::default()
    };
    let cfg = FlowConfig {
        step_size: 0.01,
        ..config(FlowKind::Ksd, 50)
    };
    let t = run_flow(&cfg, &sk, &target, &four_gaussian_start(15, 8), &suite).unwrap();
    let first = t.log.first().unwrap().ksd2.unwrap();
    let last = t.log.last().unwrap().ksd2.unwrap();
    assert!(last < first);
}

#[test]
fn divergence_keeps_the_partial_trajectory() {
    let k = RadialKernel::polynomial(1.0).unwrap();
    let target = TargetRepresentation::empirical(Points::from_rows(&[[3.0, -1.0]]).unwrap()).unwrap();
    let x = Points::from_rows(&[[0.5, 0.5], [-1.0, 2.0]]).unwrap();
    let cfg = FlowConfig {
        step_size: 1e200,
        ..config(FlowKind::Mmd, 10)
    };
    match run_flow(&cfg, &k, &target, &x, &MetricSuite::default()) {
        Err(Error::Divergence { step, trajectory: Some(t), .. }) => {
            assert_eq!(t.steps, step - 1);
            assert!(t.last.all_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_validation_and_warnings() {
    let ok = FlowConfig::default();
    assert!(ok.validate().is_ok());
    assert!(ok.warnings().is_empty());
    let bad = [
        FlowConfig { lambda: 0.0, ..ok.clone() },
        FlowConfig { alpha: 1.5, ..ok.clone() },
        FlowConfig { noise: 0.1, ..ok.clone() },
        FlowConfig { cadence: 0, ..ok.clone() },
        FlowConfig { step_size: -0.1, ..ok.clone() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Configuration(_))), "{c:?}");
    }
    assert!(FlowConfig { kind: FlowKind::Mmd, noise: 0.1, ..ok.clone() }.validate().is_ok());
    assert!(FlowConfig { kind: FlowKind::Mmd, lambda: 0.0, ..ok.clone() }.validate().is_ok());
    assert_eq!(FlowConfig { step_size: 0.7, ..ok.clone() }.warnings().len(), 1);
    assert_eq!(FlowConfig { step_size: 0.0, ..ok }.warnings().len(), 1);
}

#[test]
fn csv_outputs_round_trip() {
    let k = RadialKernel::gaussian(1.0).unwrap();
    let target = TargetRepresentation::analytic(GaussianMixture::four_gaussians(), 1.0).unwrap();
    let suite = MetricSuite {
        mmd: Some((&k, &target)),
        ..MetricSuite::default()
    };
    let x = four_gaussian_start(6, 9);
    let t = run_flow(&config(FlowKind::Srmmd, 20), &k, &target, &x, &suite).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics.csv");
    write_metrics_csv(&metrics, &t.log).unwrap();
    let text = std::fs::read_to_string(&metrics).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 5);
    assert_eq!(row[0], "0");
    assert_eq!(row[1].parse::<f64>().unwrap(), t.log[0].mmd2.unwrap());
    assert_eq!(&row[2..], &["", "", ""]);

    let particles = dir.path().join("particles.csv");
    write_particles_csv(&particles, &[(0, &t.initial), (20, &t.last)]).unwrap();
    assert_eq!(read_particles_csv(&particles).unwrap(), t.last);
    let header = std::fs::read_to_string(&particles).unwrap();
    assert!(header.starts_with("step,particle,x0,x1\n0,0,"));

    let plain = dir.path().join("plain.csv");
    std::fs::write(&plain, "a,b\n1,2\n3.5,-4\n").unwrap();
    assert_eq!(
        read_particles_csv(&plain).unwrap(),
        Points::from_rows(&[[1.0, 2.0], [3.5, -4.0]]).unwrap()
    );
    std::fs::write(&plain, "1,2\n3,oops\n").unwrap();
    assert!(matches!(read_particles_csv(&plain), Err(Error::Parse { .. })));
}
