use std::path::Path;

use srmmd::rng::{stream, Stream};
use srmmd::{Error, Points};
use srmmd_cli::color::{nearest_particle, quantize, recolor, sample_pixels};
use srmmd_cli::config::{Experiment, ExperimentConfig, TargetSpec};
use srmmd_cli::ppm::{write_ppm, PpmImage};
use srmmd_cli::run::{run_experiment, RECOLORED_FILE};

/// Left half one colour, right half another, plus a few distinct pixels.
fn two_tone(w: usize, h: usize, a: [u8; 3], b: [u8; 3]) -> PpmImage {
    let mut img = PpmImage::filled(w, h, a).unwrap();
    for y in 0..h {
        for x in w / 2..w {
            img.set_pixel(y * w + x, b);
        }
    }
    img
}

fn config(dir: &Path, source: &PpmImage, target: &PpmImage, n: usize, iters: usize) -> ExperimentConfig {
    let (s, t) = (dir.join("source.ppm"), dir.join("target.ppm"));
    write_ppm(source, &s).unwrap();
    write_ppm(target, &t).unwrap();
    let mut cfg = ExperimentConfig::defaults(Experiment::ColorTransfer);
    cfg.target = TargetSpec::Images { source: s, target: t };
    cfg.particles = n;
    cfg.flow.iterations = iters;
    cfg.output = dir.join("out");
    cfg
}

#[test]
fn quantization_clamps_and_rounds_half_up() {
    assert_eq!(quantize(-0.3), 0);
    assert_eq!(quantize(1.7), 255);
    assert_eq!(quantize(0.5), 128); // 127.5 rounds up
    assert_eq!(quantize(127.49 / 255.0), 127);
    for c in 0..=255u8 {
        assert_eq!(quantize(f64::from(c) / 255.0), c);
    }
}

#[test]
fn nearest_particle_breaks_ties_towards_the_lowest_index() {
    let p = Points::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
    assert_eq!(nearest_particle(&p, &[0.5, 0.0, 0.0]), 0);
    assert_eq!(nearest_particle(&p, &[0.1, 0.0, 0.0]), 0);
    assert_eq!(nearest_particle(&p, &[0.9, 0.0, 0.0]), 1);
}

#[test]
fn sampling_is_without_replacement_and_bounded_by_the_pixel_count() {
    let img = PpmImage::filled(4, 3, [9, 9, 9]).unwrap();
    let idx = sample_pixels(&img, 12, &mut stream(0, Stream::Particles)).unwrap();
    assert_eq!(idx, (0..12).collect::<Vec<_>>());
    let idx = sample_pixels(&img, 5, &mut stream(0, Stream::Particles)).unwrap();
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    assert!(matches!(
        sample_pixels(&img, 13, &mut stream(0, Stream::Particles)),
        Err(Error::Argument(_))
    ));
}

#[test]
fn identity_map_reproduces_the_source() {
    let img = two_tone(6, 4, [10, 200, 30], [250, 0, 128]);
    let colors = img.colors(&(0..img.pixel_count()).collect::<Vec<_>>());
    assert_eq!(recolor(&img, &colors, &colors).unwrap(), img);
}

#[test]
fn zero_steps_with_every_pixel_sampled_returns_the_source() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = two_tone(5, 4, [10, 200, 30], [250, 0, 128]);
    img.set_pixel(3, [1, 2, 3]);
    let cfg = config(dir.path(), &img, &img, img.pixel_count(), 0);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.image.as_ref().unwrap(), &img);
    let written = std::fs::read(cfg.output_dir().join(RECOLORED_FILE)).unwrap();
    assert_eq!(written, img.encode());
}

#[test]
fn zero_step_size_is_a_nearest_neighbour_self_map() {
    let dir = tempfile::tempdir().unwrap();
    let src = two_tone(6, 3, [40, 40, 40], [200, 100, 0]);
    let tgt = two_tone(6, 3, [0, 0, 255], [255, 255, 0]);
    let mut cfg = config(dir.path(), &src, &tgt, src.pixel_count(), 10);
    cfg.flow.step_size = 0.0;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.final_particles, out.initial);
    assert_eq!(out.image.unwrap(), src);
}

#[test]
fn flow_moves_colours_towards_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let src = two_tone(10, 10, [220, 30, 30], [30, 30, 220]);
    let tgt = two_tone(10, 10, [30, 200, 40], [240, 240, 20]);
    let cfg = config(dir.path(), &src, &tgt, 40, 200);
    let out = run_experiment(&cfg).unwrap();
    let first = out.log.first().unwrap();
    let last = out.log.last().unwrap();
    assert!(last.mmd2.unwrap() < 0.5 * first.mmd2.unwrap());
    assert!(last.w2.unwrap() < first.w2.unwrap());
    assert_ne!(out.image.unwrap(), src);
}

#[test]
fn too_many_particles_is_an_argument_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let img = PpmImage::filled(3, 3, [1, 1, 1]).unwrap();
    let cfg = config(dir.path(), &img, &img, 10, 1);
    assert!(matches!(run_experiment(&cfg), Err(Error::Argument(_))));
    assert!(!cfg.output_dir().exists());
}

#[test]
fn fixed_seed_gives_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    let src = two_tone(8, 8, [220, 30, 30], [30, 30, 220]);
    let tgt = two_tone(8, 8, [30, 200, 40], [240, 240, 20]);
    let mut cfg = config(dir.path(), &src, &tgt, 16, 30);
    let a = run_experiment(&cfg).unwrap().image.unwrap();
    cfg.output = dir.path().join("again");
    let b = run_experiment(&cfg).unwrap().image.unwrap();
    assert_eq!(a.encode(), b.encode());
}
