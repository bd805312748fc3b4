//! Symmetric positive-definite factorization with jitter escalation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const BLOCK: usize = 96;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Lower Cholesky factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl SpdFactor {
    /// Factorizes `a` (symmetric). On failure, retries with diagonal jitter
    /// `1e-10·tr(A)/n`, escalating tenfold up to `1e-6·tr(A)/n`.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        Self::new_shifted(a, 0.0)
    }

    /// Factorizes `A = h + shift·I` without keeping a second copy of `A`
    /// around. Jitter escalation is as in [`SpdFactor::new`], relative to `tr(A)`.
    pub fn new_shifted(h: &DMatrix<f64>, shift: f64) -> Result<Self> {
        let n = h.nrows();
        assert_eq!(n, h.ncols(), "SpdFactor requires a square matrix");
        let shifted = |extra: f64| {
            let mut a = h.clone();
            for i in 0..n {
                a[(i, i)] += shift + extra;
            }
            a
        };
        if let Some(lower) = blocked_cholesky(shifted(0.0)) {
            return Ok(Self { lower, jitter: 0.0 });
        }
        let trace = h.trace() + n as f64 * shift;
        let scale = if trace > 0.0 && trace.is_finite() {
            trace / n as f64
        } else {
            1.0
        };
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            if let Some(lower) = blocked_cholesky(shifted(jitter)) {
                return Ok(Self { lower, jitter });
            }
            rel *= 10.0;
        }
        Err(Error::Factorization {
            size: n,
            trace,
            jitter: JITTER_MAX * scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Diagonal shift that was needed to factorize (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut DVector<f64>) {
        self.lower.solve_lower_triangular_mut(b);
        self.lower.tr_solve_lower_triangular_mut(b);
    }
}

/// Right-looking blocked Cholesky; the trailing update goes through GEMM.
fn blocked_cholesky(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut off = 0;
    while off < n {
        let nb = BLOCK.min(n - off);
        let l11 = a.view((off, off), (nb, nb)).clone_owned().cholesky()?.unpack();
        a.view_mut((off, off), (nb, nb)).copy_from(&l11);
        let rest = off + nb;
        if rest < n {
            let m = n - rest;
            // L21 = A21 L11^{-T}. Inverting the small diagonal block and
            // multiplying runs through GEMM, which is far faster here than
            // a triangular solve with m right-hand sides.
            let mut l11_inv = DMatrix::identity(nb, nb);
            if !l11.solve_lower_triangular_mut(&mut l11_inv) {
                return None;
            }
            let mut l21 = DMatrix::zeros(m, nb);
            l21.gemm(1.0, &a.view((rest, off), (m, nb)), &l11_inv.transpose(), 0.0);
            let l21t = l21.transpose();
            a.view_mut((rest, off), (m, nb)).copy_from(&l21);
            // Only the lower triangle is read again, so the trailing update
            // runs one block column at a time from its diagonal block down.
            let mut c = 0;
            while c < m {
                let w = BLOCK.min(m - c);
                a.view_mut((rest + c, rest + c), (m - c, w)).gemm(
                    -1.0,
                    &l21.rows(c, m - c),
                    &l21t.columns(c, w),
                    1.0,
                );
                c += w;
            }
        }
        off += nb;
    }
    // Clear the strictly upper part so the result is a proper lower factor.
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Some(a)
}

/// Copies the strict lower triangle onto the upper one, tile by tile so that
/// both the reads and the writes stay within a few cache lines.
pub fn mirror_lower(a: &mut DMatrix<f64>) {
    const TILE: usize = 32;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "mirror_lower requires a square matrix");
    for c0 in (0..n).step_by(TILE) {
        for r0 in (c0..n).step_by(TILE) {
            for c in c0..(c0 + TILE).min(n) {
                for r in r0.max(c + 1)..(r0 + TILE).min(n) {
                    a[(c, r)] = a[(r, c)];
                }
            }
        }
    }
}

/// Relative residual `‖A x − b‖ / ‖b‖` (absolute when `b = 0`).
pub fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let res = (a * x - b).norm();
    let nb = b.norm();
    if nb > 0.0 {
        res / nb
    } else {
        res
    }
}
