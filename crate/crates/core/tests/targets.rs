mod common;

use std::io::Write;

use common::{fd_grad, fd_jacobian, max_eigenvalue, rel_err, rng, uniform_vec};
use nalgebra::DMatrix;
use srmmd::kernels::{FeatureMapKernel, Kernel, RadialKernel, PARAM_DIM, PROBE_DIM};
use srmmd::metrics::{mmd_squared, Estimator};
use srmmd::rng::gaussian_points;
use srmmd::stein::ScoreModel;
use srmmd::targets::{
    load_csv_dataset, logistic_metrics, mixture_mean_embedding, student_teacher_objective,
    synthetic_logistic_dataset, uniform_sphere, Dataset, DataSplit, GaussianMixture,
    LogisticPosterior, Sampler, StudentTeacherConfig, StudentTeacherSetup, SwissRoll,
};
use srmmd::witness::TargetRepresentation;
use srmmd::{Error, Points};

fn skewed_mixture() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.2, 0.5, 0.3],
        vec![vec![-2.0, 0.0], vec![1.0, 1.5], vec![0.5, -2.0]],
        vec![
            DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.3, 0.5]),
            DMatrix::from_row_slice(2, 2, &[1.2, -0.2, -0.2, 0.4]),
            DMatrix::identity(2, 2) * 0.3,
        ],
    )
    .unwrap()
}

#[test]
fn score_examples() {
    let n = GaussianMixture::standard_normal(2);
    assert_eq!(n.score(&[1.0, 2.0]), vec![-1.0, -2.0]);
    let pair = GaussianMixture::isotropic(vec![0.5, 0.5], vec![vec![-1.5, 0.5], vec![1.5, -0.5]], 1.0).unwrap();
    assert!(pair.score(&[0.0, 0.0]).iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn scores_match_differences_of_the_log_density() {
    let mut r = rng(51);
    let mixtures = [
        GaussianMixture::four_gaussians(),
        GaussianMixture::ten_gaussian_ring(),
        skewed_mixture(),
    ];
    for gm in &mixtures {
        for _ in 0..20 {
            let x = uniform_vec(2, -5.0, 5.0, &mut r);
            let fd = fd_grad(|p| gm.log_pdf(p), &x, 1e-5);
            assert!(rel_err(&gm.score(&x), &fd) < 1e-6);
            let jfd = fd_jacobian(|p| gm.score(p), &x, 1e-5);
            assert!(rel_err(&gm.jacobian(&x), &jfd) < 1e-5);
            assert_eq!(gm.log_density(&x), Some(gm.log_pdf(&x)));
        }
    }
}

#[test]
fn scores_stay_finite_far_in_the_tails() {
    let gm = GaussianMixture::ten_gaussian_ring();
    for x in [[1e3, -1e3], [0.0, 5e4], [-3e5, 2.0]] {
        assert!(gm.score(&x).iter().all(|v| v.is_finite()));
        assert!(gm.jacobian(&x).iter().all(|v| v.is_finite()));
    }
}

#[test]
fn mixture_construction_is_validated() {
    let id = DMatrix::identity(2, 2);
    assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0, 0.0]; 2], vec![id.clone(); 2]).is_err());
    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(
        GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![indefinite]),
        Err(Error::Argument(_))
    ));
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![asym]).is_err());
}

#[test]
fn four_gaussian_benchmark_parameters() {
    let gm = GaussianMixture::four_gaussians();
    assert_eq!(gm.components(), 4);
    assert!(gm.weights().iter().all(|&w| w == 0.25));
    let mut means = gm.means();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(means, vec![vec![-2.0, -2.0], vec![-2.0, 2.0], vec![2.0, -2.0], vec![2.0, 2.0]]);
    for c in gm.covariances() {
        assert_eq!(c, DMatrix::identity(2, 2) * 1.2);
    }
}

#[test]
fn embedding_examples() {
    let n = GaussianMixture::standard_normal(1);
    let (v, g) = mixture_mean_embedding(&n, 1.0, &[0.0]).unwrap();
    assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert_eq!(g, vec![0.0]);
    let (_, g) = mixture_mean_embedding(&GaussianMixture::four_gaussians(), 1.0, &[0.0, 0.0]).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-15));
    assert!(mixture_mean_embedding(&n, 0.0, &[0.0]).is_err());
    assert!(mixture_mean_embedding(&n, 1.0, &[0.0, 1.0]).is_err());
}

#[test]
fn embedding_gradient_matches_finite_differences() {
    let mut r = rng(52);
    for gm in [GaussianMixture::four_gaussians(), skewed_mixture()] {
        let e = gm.embedding(0.8).unwrap();
        for _ in 0..10 {
            let x = uniform_vec(2, -4.0, 4.0, &mut r);
            let mut g = vec![0.0; 2];
            e.eval(&x, Some(&mut g));
            let fd = fd_grad(|p| e.eval(p, None), &x, 1e-5);
            assert!(rel_err(&g, &fd) < 1e-7);
        }
    }
}

/// Mean and standard error of a sample.
fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn embedding_agrees_with_monte_carlo() {
    let mut r = rng(53);
    let k = RadialKernel::gaussian(1.0).unwrap();
    for gm in [GaussianMixture::four_gaussians(), skewed_mixture()] {
        let e = gm.embedding(1.0).unwrap();
        let y = gm.sample(100_000, &mut r);
        for x in [[0.0, 0.0], [2.0, 2.0], [-1.0, 3.0], [3.5, -0.5]] {
            let vals: Vec<f64> = y.rows().map(|p| k.value(p, &x)).collect();
            let (m, se) = mean_and_stderr(&vals);
            assert!((m - e.eval(&x, None)).abs() <= 3.0 * se, "{m} ± {se} vs {}", e.eval(&x, None));
        }
        // ∬k dπdπ from independent pairs
        let y2 = gm.sample(100_000, &mut r);
        let vals: Vec<f64> = y.rows().zip(y2.rows()).map(|(a, b)| k.value(a, b)).collect();
        let (m, se) = mean_and_stderr(&vals);
        assert!((m - e.self_term()).abs() <= 3.0 * se);
    }
}

#[test]
fn mixture_sampling_is_reproducible_and_centered() {
    let gm = skewed_mixture();
    let a = gm.sample(100_000, &mut rng(54));
    let b = gm.sample(100_000, &mut rng(54));
    assert_eq!(a, b);
    let mean = gm.mean();
    for c in 0..2 {
        let col: Vec<f64> = a.rows().map(|p| p[c]).collect();
        let (m, se) = mean_and_stderr(&col);
        assert!((m - mean[c]).abs() <= 4.0 * se);
    }
    let expect: Vec<f64> = (0..2)
        .map(|c| gm.weights().iter().zip(gm.means()).map(|(w, m)| w * m[c]).sum())
        .collect();
    assert!(rel_err(&mean, &expect) < 1e-15);
}

#[test]
fn swiss_roll_noiseless_points_lie_on_the_spiral() {
    let sr = SwissRoll {
        noise: 0.0,
        ..SwissRoll::default()
    };
    let (pts, ts) = sr.sample_with_parameters(500, &mut rng(55));
    for (p, &t) in pts.rows().zip(&ts) {
        assert!((1.5 * std::f64::consts::PI..=4.5 * std::f64::consts::PI).contains(&t));
        let radius = (p[0] * p[0] + p[1] * p[1]).sqrt();
        assert!((radius - t / sr.scale).abs() < 1e-12);
        let c = sr.curve(t);
        assert!((c[0] - p[0]).abs() < 1e-12 && (c[1] - p[1]).abs() < 1e-12);
    }
}

#[test]
fn swiss_roll_sampling_is_reproducible_and_validated() {
    let sr = SwissRoll::default();
    assert_eq!(sr.dim(), 2);
    assert_eq!(sr.sample(200, &mut rng(56)), sr.sample(200, &mut rng(56)));
    assert_ne!(sr.sample(200, &mut rng(56)), sr.sample(200, &mut rng(57)));
    for bad in [
        SwissRoll { scale: 0.0, ..sr },
        SwissRoll { noise: -1.0, ..sr },
        SwissRoll { t_min: 5.0, t_max: 1.0, ..sr },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn empty_dataset_score_is_the_prior() {
    let lp = LogisticPosterior::new(Dataset::empty(3), 2.0).unwrap();
    let x = [1.0, -2.0, 0.5];
    assert_eq!(lp.score(&x), vec![-0.25, 0.5, -0.125]);
}

#[test]
fn logistic_score_and_jacobian() {
    let mut r = rng(58);
    let data = synthetic_logistic_dataset(60, 4, 0.1, &mut r).unwrap();
    let lp = LogisticPosterior::new(data, 1.0).unwrap();
    for _ in 0..20 {
        let x = uniform_vec(4, -3.0, 3.0, &mut r);
        let fd = fd_grad(|p| lp.log_posterior(p), &x, 1e-5);
        assert!(rel_err(&lp.score(&x), &fd) < 1e-6);
        let jfd = fd_jacobian(|p| lp.score(p), &x, 1e-5);
        assert!(rel_err(&lp.jacobian(&x), &jfd) < 1e-6);
        let j = DMatrix::from_row_slice(4, 4, &lp.jacobian(&x));
        assert!(max_eigenvalue(&j) <= 1e-10);
    }
}

#[test]
fn logistic_metric_examples() {
    let test = Dataset::new(
        Points::from_rows(&[[1.0, 0.0], [-1.0, 0.5], [0.0, -2.0], [2.0, 2.0]]).unwrap(),
        vec![1.0, 0.0, 0.0, 1.0],
    )
    .unwrap();
    let zero = Points::zeros(1, 2);
    let m = logistic_metrics(&test, &zero).unwrap();
    assert!((m.log_likelihood - 0.5f64.ln()).abs() < 1e-15);

    // separable along the first coordinate; a large-margin particle classifies all
    let separable = Dataset::new(
        Points::from_rows(&[[1.0, 0.3], [2.0, -1.0], [-1.0, 0.4], [-0.5, -2.0]]).unwrap(),
        vec![1.0, 1.0, 0.0, 0.0],
    )
    .unwrap();
    let particle = Points::from_rows(&[[20.0, 0.0]]).unwrap();
    assert_eq!(logistic_metrics(&separable, &particle).unwrap().accuracy, 1.0);

    let mut r = rng(59);
    let ens = gaussian_points(7, &[0.5, -0.5], 1.0, &mut r);
    let doubled = ens.concat(&ens).unwrap();
    let a = logistic_metrics(&test, &ens).unwrap();
    let b = logistic_metrics(&test, &doubled).unwrap();
    assert_eq!(a.accuracy, b.accuracy);
    assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-14);
}

#[test]
fn predictive_probability_is_the_particle_average() {
    let z = [0.7, -1.3];
    let ens = Points::from_rows(&[[1.0, 0.5], [-2.0, 0.1], [0.3, 3.0]]).unwrap();
    let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
    let p: f64 = ens.rows().map(|x| sig(x[0] * z[0] + x[1] * z[1])).sum::<f64>() / 3.0;
    let test = Dataset::new(Points::from_rows(&[z]).unwrap(), vec![1.0]).unwrap();
    let m = logistic_metrics(&test, &ens).unwrap();
    assert!((m.log_likelihood - p.ln()).abs() < 1e-14);
    assert_eq!(m.accuracy, if p > 0.5 { 1.0 } else { 0.0 });
}

#[test]
fn split_is_two_thirds_and_standardized_on_training_rows() {
    let mut r = rng(60);
    let data = synthetic_logistic_dataset(200, 5, 0.05, &mut r).unwrap();
    let split = DataSplit::new(&data, &mut rng(61)).unwrap();
    assert_eq!(split.train.len(), 133);
    assert_eq!(split.test.len(), 67);
    let mean = split.train.features.mean();
    assert!(mean.iter().all(|m| m.abs() < 1e-12));
    for c in 0..5 {
        let var = split.train.features.rows().map(|p| p[c] * p[c]).sum::<f64>() / 133.0;
        assert!((var - 1.0).abs() < 1e-12);
    }
    assert_eq!(split, DataSplit::new(&data, &mut rng(61)).unwrap());
}

#[test]
fn csv_loader_handles_headers_and_label_coding() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "a,b,label").unwrap();
    for i in 0..30 {
        let label = if i % 3 == 0 { 2 } else { 7 };
        writeln!(f, "{},{},{label}", i as f64 * 0.1, (i * i) as f64 * 0.01).unwrap();
    }
    drop(f);
    let split = load_csv_dataset(&path, &mut rng(62)).unwrap();
    assert_eq!(split.train.len() + split.test.len(), 30);
    assert_eq!(split.train.dim(), 2);
    let ones = split.train.labels.iter().chain(&split.test.labels).filter(|&&y| y == 1.0).count();
    assert_eq!(ones, 20);
}

#[test]
fn csv_loader_reports_offsets_of_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "1,2,0\n3,4,1\n5,x,1\n").unwrap();
    match load_csv_dataset(&path, &mut rng(63)) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12),
        other => panic!("expected a parse error, got {other:?}"),
    }
    std::fs::write(&path, "1,2,0\n3,4,1\n5,6,2\n").unwrap();
    assert!(matches!(load_csv_dataset(&path, &mut rng(63)), Err(Error::Argument(_))));
}

#[test]
fn student_teacher_objective_is_the_feature_mmd() {
    let mut r = rng(64);
    for _ in 0..5 {
        let teachers = gaussian_points(3, &[0.0; PARAM_DIM], 1.0, &mut r);
        let probes = uniform_sphere(20, PROBE_DIM, &mut r);
        let setup = StudentTeacherSetup::from_parts(teachers.clone(), probes.clone(), probes.clone(), 20).unwrap();
        let students = gaussian_points(5, &[0.0; PARAM_DIM], 1.0, &mut r);
        let direct = student_teacher_objective(&setup, &students, &probes).unwrap();
        let k = FeatureMapKernel::new(probes).unwrap();
        let target = TargetRepresentation::empirical(teachers).unwrap();
        let mmd = mmd_squared(&k, &students, &target, Estimator::V).unwrap().value;
        assert!((direct - mmd).abs() < 1e-10, "{direct} vs {mmd}");
        assert!(direct >= 0.0);
    }
}

#[test]
fn students_at_the_teachers_have_zero_objective() {
    let setup = StudentTeacherSetup::new(&StudentTeacherConfig::default(), 3).unwrap();
    let students = setup.teachers().clone();
    assert_eq!(student_teacher_objective(&setup, &students, setup.validation_probes()).unwrap(), 0.0);
    assert_eq!(setup.teachers().len(), 10);
    assert_eq!(setup.train_probes().len(), 1000);
    assert_eq!(setup.validation_probes().len(), 1000);
    assert_eq!(setup.subsample(), 100);
}

#[test]
fn student_teacher_setup_is_seeded() {
    let cfg = StudentTeacherConfig::default();
    let a = StudentTeacherSetup::new(&cfg, 9).unwrap();
    let b = StudentTeacherSetup::new(&cfg, 9).unwrap();
    assert_eq!(a.teachers(), b.teachers());
    assert_eq!(a.train_probes(), b.train_probes());
    let ka = a.subsampled_kernel(&mut rng(1));
    let kb = b.subsampled_kernel(&mut rng(1));
    assert_eq!(ka.probes(), kb.probes());
    assert_eq!(ka.probe_count(), 100);
    for z in a.validation_probes().rows() {
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
    let students = a.initial_students(20_000, &mut rng(2));
    let var = students.as_flat().iter().map(|v| v * v).sum::<f64>() / students.as_flat().len() as f64;
    assert!((var - 0.1).abs() < 0.005);
}
