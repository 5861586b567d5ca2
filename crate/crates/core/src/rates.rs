//! Per-direction growth rate envelopes.
//!
//! For each base index l the sweep maintains an orthonormal frame Z and the
//! running log volumes of its nested column spans: after Y = A_k Z and the
//! decomposition Y = QR, each diagonal entry |r_ii| is the one-step growth of
//! the i-th flag direction. Accumulated over k − l steps and divided by the
//! separation, the sorted totals estimate the log singular value rates of
//! Φ(k, l) without ever forming the product, so no floating-point floor is
//! hit even when the condition number of the product is astronomical. On
//! diagonal or triangular sequences the totals are exact.

use crate::error::{CoreError, Result};
use crate::system::{MatrixSequence, Window};

/// Margin (in log rate units) before a weight is considered separated from
/// a rate interval.
pub const RATE_TOL: f64 = 1e-9;

/// Envelopes of the i-th largest growth rate over all sampled pairs.
#[derive(Clone, Debug)]
pub struct RateCloud {
    window: Window,
    dim: usize,
    d_min: i64,
    max_rate: Vec<f64>,
    min_rate: Vec<f64>,
    pairs: usize,
}

/// Counts of directions below, above, and straddling a weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RateClass {
    pub stable: usize,
    pub unstable: usize,
    pub conflicted: usize,
}

impl RateCloud {
    pub fn window(&self) -> Window {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest separation k − l that contributed to the envelopes.
    pub fn min_span(&self) -> i64 {
        self.d_min
    }

    pub fn pair_count(&self) -> usize {
        self.pairs
    }

    /// Upper envelope of the i-th largest rate (non-increasing in i).
    pub fn max_rates(&self) -> &[f64] {
        &self.max_rate
    }

    /// Lower envelope of the i-th largest rate.
    pub fn min_rates(&self) -> &[f64] {
        &self.min_rate
    }

    /// Compare every direction against the log weight `c`.
    pub fn classify(&self, c: f64) -> RateClass {
        let mut out = RateClass { stable: 0, unstable: 0, conflicted: 0 };
        for i in 0..self.dim {
            if c - self.max_rate[i] > RATE_TOL {
                out.stable += 1;
            } else if self.min_rate[i] - c > RATE_TOL {
                out.unstable += 1;
            } else {
                out.conflicted += 1;
            }
        }
        out
    }

    /// Number of directions strictly below `c`, or None if any direction's
    /// rate interval straddles `c`.
    pub fn stable_dim(&self, c: f64) -> Option<usize> {
        let cls = self.classify(c);
        if cls.conflicted == 0 {
            Some(cls.stable)
        } else {
            None
        }
    }
}

/// Rate envelopes over `w`, sampling pairs separated by at least half the span.
pub fn rate_cloud(sys: &MatrixSequence, w: &Window) -> Result<RateCloud> {
    let d_min = (w.span() + 1) / 2;
    rate_cloud_with_min_span(sys, w, d_min.max(1))
}

pub fn rate_cloud_with_min_span(sys: &MatrixSequence, w: &Window, d_min: i64) -> Result<RateCloud> {
    if w.span() < d_min.max(1) {
        return Err(CoreError::WindowTooShort {
            k_min: w.k_min(),
            k_max: w.k_max(),
            need: d_min.max(1) + 1,
        });
    }
    sys.require_window(w)?;
    let n = sys.dim();
    let mut max_rate = vec![f64::NEG_INFINITY; n];
    let mut min_rate = vec![f64::INFINITY; n];
    let mut pairs = 0usize;
    let mut sorted = vec![0.0f64; n];
    for l in w.indices() {
        let mut frame = nalgebra::DMatrix::<f64>::identity(n, n);
        let mut cum = vec![0.0f64; n];
        for k in (l + 1)..=w.k_max() {
            let y = sys.transition(k - 1)? * frame;
            let qr = y.qr();
            let r = qr.r();
            for i in 0..n {
                cum[i] += r[(i, i)].abs().ln();
            }
            frame = qr.q();
            let d = k - l;
            if d >= d_min {
                sorted.copy_from_slice(&cum);
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
                for i in 0..n {
                    let rate = sorted[i] / d as f64;
                    if rate > max_rate[i] {
                        max_rate[i] = rate;
                    }
                    if rate < min_rate[i] {
                        min_rate[i] = rate;
                    }
                }
                pairs += 1;
            }
        }
    }
    Ok(RateCloud { window: *w, dim: n, d_min, max_rate, min_rate, pairs })
}
