//! Bayesian logistic regression: posterior score, datasets and predictive metrics.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{argument, Error, Result};
use crate::points::{dot, Points};
use crate::rng::FlowRng;
use crate::stein::ScoreModel;

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log σ(t)` without overflow.
#[inline]
fn log_sigmoid(t: f64) -> f64 {
    let x = -t;
    -(x.max(0.0) + (-x.abs()).exp().ln_1p())
}

/// Features (one row per observation) and binary labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Points,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Points, labels: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() {
            return argument(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            ));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return argument("labels must be 0 or 1");
        }
        Ok(Self { features, labels })
    }

    /// No observations in dimension `p`.
    pub fn empty(p: usize) -> Self {
        Self {
            features: Points::zeros(0, p),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Train/test split with features standardized on the training part.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub test: Dataset,
}

impl DataSplit {
    /// Shuffles, keeps `round(2n/3)` rows for training, and rescales every
    /// feature to zero mean and unit variance on the training rows. Constant
    /// features are centered only.
    pub fn new(data: &Dataset, rng: &mut FlowRng) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return argument("need at least two observations to split");
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = ((2 * n) as f64 / 3.0).round() as usize;
        let n_train = n_train.clamp(1, n - 1);
        let mut train = data.select(&idx[..n_train]);
        let mut test = data.select(&idx[n_train..]);

        let p = data.dim();
        let mean = train.features.mean();
        let mut var = vec![0.0; p];
        for r in train.features.rows() {
            for k in 0..p {
                var[k] += (r[k] - mean[k]).powi(2);
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let sd = (v / n_train as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        for set in [&mut train, &mut test] {
            for i in 0..set.len() {
                let r = set.features.row_mut(i);
                for k in 0..p {
                    r[k] = (r[k] - mean[k]) / scale[k];
                }
            }
        }
        Ok(Self { train, test })
    }
}

/// Linearly separable labels `1[zᵀw* > 0]` on Gaussian features, each flipped
/// with probability `label_noise`.
pub fn synthetic_logistic_dataset(
    n: usize,
    p: usize,
    label_noise: f64,
    rng: &mut FlowRng,
) -> Result<Dataset> {
    if p == 0 {
        return argument("feature dimension must be positive");
    }
    if !(0.0..=0.5).contains(&label_noise) {
        return argument("label noise must lie in [0, 0.5]");
    }
    let w: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    let mut feats = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        let mut y = if dot(&z, &w) > 0.0 { 1.0 } else { 0.0 };
        if rng.random::<f64>() < label_noise {
            y = 1.0 - y;
        }
        feats.extend_from_slice(&z);
        labels.push(y);
    }
    Dataset::new(Points::from_flat(feats, p)?, labels)
}

/// Reads a numeric CSV whose last column is a binary label, then splits and
/// standardizes. A non-numeric first row is treated as a header. Labels may be
/// `{0, 1}` or any two distinct values (the smaller maps to 0).
pub fn load_csv_dataset(path: &Path, rng: &mut FlowRng) -> Result<DataSplit> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width = None;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    offset,
                    message: format!("non-numeric field on line {}: {e}", line + 1),
                })
            }
        };
        if values.len() < 2 {
            return Err(Error::Parse {
                offset,
                message: "need at least one feature column and a label column".into(),
            });
        }
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::Parse {
                offset,
                message: format!("line {} has {} columns", line + 1, values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                offset,
                message: format!("non-finite value on line {}", line + 1),
            });
        }
        let (feat, label) = values.split_at(values.len() - 1);
        rows.push(feat.to_vec());
        raw_labels.push(label[0]);
    }
    if rows.is_empty() {
        return argument(format!("{} contains no data rows", path.display()));
    }

    let mut distinct = raw_labels.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let labels = if distinct.iter().all(|&v| v == 0.0 || v == 1.0) {
        raw_labels
    } else if distinct.len() == 2 {
        raw_labels
            .iter()
            .map(|&v| if v == distinct[0] { 0.0 } else { 1.0 })
            .collect()
    } else {
        return argument(format!(
            "label column must be binary, found {} distinct values",
            distinct.len()
        ));
    };
    DataSplit::new(&Dataset::new(Points::from_rows(&rows)?, labels)?, rng)
}

/// Posterior `π(x) ∝ N(x; 0, a²I) Π_i σ(z_iᵀx)^{y_i} (1 − σ(z_iᵀx))^{1−y_i}`.
#[derive(Debug, Clone)]
pub struct LogisticPosterior {
    data: Dataset,
    prior_scale: f64,
}

impl LogisticPosterior {
    pub fn new(data: Dataset, prior_scale: f64) -> Result<Self> {
        if !(prior_scale.is_finite() && prior_scale > 0.0) {
            return argument(format!("prior scale must be positive, got {prior_scale}"));
        }
        Ok(Self { data, prior_scale })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    pub fn log_posterior(&self, x: &[f64]) -> f64 {
        let a2 = self.prior_scale * self.prior_scale;
        let mut lp = -dot(x, x) / (2.0 * a2);
        for (z, &y) in self.data.features.rows().zip(&self.data.labels) {
            let t = dot(z, x);
            lp += y * log_sigmoid(t) + (1.0 - y) * log_sigmoid(-t);
        }
        lp
    }
}

impl ScoreModel for LogisticPosterior {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let inv_a2 = 1.0 / (self.prior_scale * self.prior_scale);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -xi * inv_a2;
        }
        for (z, &y) in self.data.features.rows().zip(&self.data.labels) {
            let w = y - sigmoid(dot(z, x));
            for (o, zk) in out.iter_mut().zip(z) {
                *o += w * zk;
            }
        }
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let p = x.len();
        let inv_a2 = 1.0 / (self.prior_scale * self.prior_scale);
        out.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..p {
            out[a * p + a] = -inv_a2;
        }
        for z in self.data.features.rows() {
            let s = sigmoid(dot(z, x));
            let w = s * (1.0 - s);
            for a in 0..p {
                let wa = w * z[a];
                for b in 0..p {
                    out[a * p + b] -= wa * z[b];
                }
            }
        }
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(self.log_posterior(x))
    }
}

/// Test accuracy and mean log predictive likelihood under the particle average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticMetrics {
    pub accuracy: f64,
    pub log_likelihood: f64,
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + (s / v.len() as f64).ln()
}

/// Bayesian model averaging over the ensemble: `p(y = 1 | z) = (1/N) Σ_i σ(zᵀx_i)`.
/// A point is classified as 1 when that probability exceeds 0.5.
pub fn logistic_metrics(test: &Dataset, ensemble: &Points) -> Result<LogisticMetrics> {
    if ensemble.is_empty() {
        return argument("ensemble is empty");
    }
    if ensemble.dim() != test.dim() {
        return argument(format!(
            "particles have dimension {}, features {}",
            ensemble.dim(),
            test.dim()
        ));
    }
    if test.is_empty() {
        return argument("test set is empty");
    }
    let n = ensemble.len();
    let mut pos = vec![0.0; n];
    let mut neg = vec![0.0; n];
    let mut correct = 0usize;
    let mut ll = 0.0;
    for (z, &y) in test.features.rows().zip(&test.labels) {
        for (i, x) in ensemble.rows().enumerate() {
            let t = dot(z, x);
            pos[i] = log_sigmoid(t);
            neg[i] = log_sigmoid(-t);
        }
        let lp = log_mean_exp(&pos);
        let ln = log_mean_exp(&neg);
        let predicted = if lp > ln { 1.0 } else { 0.0 };
        if predicted == y {
            correct += 1;
        }
        ll += if y == 1.0 { lp } else { ln };
    }
    let m = test.len() as f64;
    Ok(LogisticMetrics {
        accuracy: correct as f64 / m,
        log_likelihood: ll / m,
    })
}
