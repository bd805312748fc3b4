//! Colour transfer: flow a sample of source colours onto a sample of target
//! colours, then recolour every source pixel through its nearest initial
//! particle.

use std::collections::HashMap;

use rand::seq::index::sample;
use srmmd::points::sq_dist;
use srmmd::rng::FlowRng;
use srmmd::{Error, Points, Result};

use crate::ppm::PpmImage;

/// `n` distinct pixel indices, ascending.
pub fn sample_pixels(img: &PpmImage, n: usize, rng: &mut FlowRng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Argument("need at least one colour particle".into()));
    }
    if n > img.pixel_count() {
        return Err(Error::Argument(format!(
            "{n} colour particles requested from an image with {} pixels",
            img.pixel_count()
        )));
    }
    let mut idx = sample(rng, img.pixel_count(), n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Index of the particle closest to `c`; ties go to the lowest index.
pub fn nearest_particle(particles: &Points, c: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, p) in particles.rows().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Clamps to `[0, 1]` and rounds half up to an 8-bit level.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Each source pixel takes the transported colour of its nearest initial particle.
pub fn recolor(source: &PpmImage, initial: &Points, transported: &Points) -> Result<PpmImage> {
    if initial.len() != transported.len() || initial.dim() != 3 || transported.dim() != 3 {
        return Err(Error::Argument(
            "initial and transported colours must be matching sets in R^3".into(),
        ));
    }
    let mut out = source.clone();
    let mut cache: HashMap<[u8; 3], [u8; 3]> = HashMap::new();
    for i in 0..source.pixel_count() {
        let rgb = source.pixel(i);
        let mapped = *cache.entry(rgb).or_insert_with(|| {
            let j = nearest_particle(initial, &source.color(i));
            let t = transported.row(j);
            [quantize(t[0]), quantize(t[1]), quantize(t[2])]
        });
        out.set_pixel(i, mapped);
    }
    Ok(out)
}
