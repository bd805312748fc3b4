//! Discrepancies between a particle ensemble and a target: MMD², KSD² and exact W₂.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::kernels::{points_data, Kernel};
use crate::points::{sq_dist, Points};
use crate::stein::SteinKernel;
use crate::witness::TargetRepresentation;

/// With (V) or without (U) the diagonal of each within-sample double sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    V,
    U,
}

/// How a reported value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorVariant {
    VStatistic,
    UStatistic,
    /// Particle term estimated, target terms in closed form.
    AnalyticCrossTerm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: &'static str,
    pub value: f64,
    pub variant: EstimatorVariant,
}

/// `Σ_{i,j} k(x_i, x_j)` over all pairs (V) or distinct pairs (U), normalized.
fn within_mean(kernel: &dyn Kernel, x: &Points, estimator: Estimator) -> Result<f64> {
    let n = x.len();
    if estimator == Estimator::U && n < 2 {
        return argument("the U-statistic needs at least two points per sample");
    }
    let data = points_data(kernel, x);
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        let (xi, di) = (x.row(i), &data[i]);
        diag += kernel.value_with_data(xi, di, xi, di);
        for j in i + 1..n {
            off += kernel.value_with_data(xi, di, x.row(j), &data[j]);
        }
    }
    let nf = n as f64;
    Ok(match estimator {
        Estimator::V => (diag + 2.0 * off) / (nf * nf),
        Estimator::U => 2.0 * off / (nf * (nf - 1.0)),
    })
}

/// `MMD²(μ̂, π)`. Empirical targets use the three-term estimator; analytic
/// targets replace the target terms by `m_π(x_i)` and `∬k dπdπ`; for Stein
/// targets both target terms vanish and the value is the KSD².
pub fn mmd_squared(
    kernel: &dyn Kernel,
    x: &Points,
    target: &TargetRepresentation,
    estimator: Estimator,
) -> Result<MetricReport> {
    if x.is_empty() {
        return argument("need at least one particle");
    }
    if x.dim() != target.dim() {
        return argument(format!(
            "particles live in R^{} but the target in R^{}",
            x.dim(),
            target.dim()
        ));
    }
    target.check_kernel(kernel)?;
    let xx = within_mean(kernel, x, estimator)?;
    let plain = match estimator {
        Estimator::V => EstimatorVariant::VStatistic,
        Estimator::U => EstimatorVariant::UStatistic,
    };
    let (value, variant) = match target {
        TargetRepresentation::Empirical(y) => {
            let yy = within_mean(kernel, y, estimator)?;
            let mut cross = 0.0;
            for xi in x.rows() {
                for yj in y.rows() {
                    cross += kernel.value(xi, yj);
                }
            }
            cross /= (x.len() * y.len()) as f64;
            (xx + yy - 2.0 * cross, plain)
        }
        TargetRepresentation::Analytic { embedding, .. } => {
            let cross: f64 =
                x.rows().map(|xi| embedding.eval(xi, None)).sum::<f64>() / x.len() as f64;
            (
                xx - 2.0 * cross + embedding.self_term(),
                EstimatorVariant::AnalyticCrossTerm,
            )
        }
        TargetRepresentation::Stein(_) => (xx, plain),
    };
    Ok(MetricReport {
        name: "mmd2",
        value,
        variant,
    })
}

/// `KSD²(μ̂, π) = (1/N²) Σ_{i,j} k_π(x_i, x_j)` (or the off-diagonal mean).
pub fn ksd_squared(sk: &SteinKernel, x: &Points, estimator: Estimator) -> Result<MetricReport> {
    if x.is_empty() {
        return argument("need at least one particle");
    }
    if x.dim() != sk.dim() {
        return argument(format!(
            "particles live in R^{} but the score in R^{}",
            x.dim(),
            sk.dim()
        ));
    }
    let value = within_mean(sk, x, estimator)?;
    Ok(MetricReport {
        name: "ksd2",
        value,
        variant: match estimator {
            Estimator::V => EstimatorVariant::VStatistic,
            Estimator::U => EstimatorVariant::UStatistic,
        },
    })
}

/// Minimum-cost perfect matching on a square cost matrix (row-major), by
/// shortest augmenting paths with dual potentials. Returns `col_of_row`.
/// Costs must be finite.
pub fn optimal_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    assert!(cost.iter().all(|c| c.is_finite()), "assignment costs must be finite");
    // 1-based internals; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}

/// Exact `W₂` between two equal-size uniform point sets:
/// `√( min_σ (1/N) Σ_i ‖x_i − y_σ(i)‖² )`.
pub fn w2_exact(x: &Points, y: &Points) -> Result<f64> {
    if x.len() != y.len() {
        return argument(format!(
            "W2 needs equal sizes, got {} and {}",
            x.len(),
            y.len()
        ));
    }
    if x.dim() != y.dim() {
        return argument(format!("dimension mismatch: {} vs {}", x.dim(), y.dim()));
    }
    let n = x.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = vec![0.0; n * n];
    for (i, xi) in x.rows().enumerate() {
        for (j, yj) in y.rows().enumerate() {
            cost[i * n + j] = sq_dist(xi, yj);
        }
    }
    // overflowed or NaN particles: the potentials would never settle
    if cost.iter().any(|c| c.is_nan()) {
        return Ok(f64::NAN);
    }
    if cost.iter().any(|c| c.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    let perm = optimal_assignment(&cost, n);
    // summed in ascending order so that the result does not depend on which
    // set indexes the rows (exact symmetry in the arguments)
    let mut matched: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    matched.sort_by(f64::total_cmp);
    let total: f64 = matched.iter().sum();
    Ok((total / n as f64).sqrt())
}
