//! Dichotomy certificates: projector propagation, bound verification, and
//! constant fitting.
//!
//! A certificate asserts the pair of estimates
//! ‖Φ(k,l)P_l‖ ≤ K α^{k−l} ε^{e(l)} for k ≥ l and
//! ‖Φ(k,l)Q_l‖ ≤ K α^{l−k} ε^{e(l)} for k ≤ l,
//! where Q = I − P and e(l) is either l (signed) or |l| (absolute).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{op_norm, rank_with_tol};
use crate::system::{MatrixSequence, Window};

/// Slack allowed when checking the bounds in log space.
pub const EXCESS_TOL: f64 = 1e-9;

/// Largest constant K the fitter will accept before declaring infeasibility.
pub const DEFAULT_K_CAP: f64 = 1e12;

const PROJECTOR_TOL: f64 = 1e-8;

/// Exponent convention for the ε^{e(l)} factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonuniformExponent {
    #[default]
    Signed,
    Absolute,
}

impl NonuniformExponent {
    pub fn exponent(self, l: i64) -> i64 {
        match self {
            NonuniformExponent::Signed => l,
            NonuniformExponent::Absolute => l.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DichotomyFlavor {
    #[serde(rename = "uniform_ED")]
    UniformEd,
    #[serde(rename = "NED")]
    Ned,
    #[serde(rename = "strong_NED")]
    StrongNed,
}

impl std::fmt::Display for DichotomyFlavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DichotomyFlavor::UniformEd => "uniform_ED",
            DichotomyFlavor::Ned => "NED",
            DichotomyFlavor::StrongNed => "strong_NED",
        };
        f.write_str(s)
    }
}

/// An invariant projector family P_k over a window, built either by
/// conjugating a single reference projector along the flow
/// ([`propagate_projector`]) or from per-index projectors whose invariance
/// is checked ([`ProjectorSequence::from_pointwise`]).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectorSequence {
    window: Window,
    reference_index: i64,
    rank: usize,
    projectors: Vec<DMatrix<f64>>,
    invariance_residual: f64,
    idempotency_residual: f64,
}

impl ProjectorSequence {
    pub fn window(&self) -> Window {
        self.window
    }

    pub fn reference_index(&self) -> i64 {
        self.reference_index
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].nrows()
    }

    pub fn invariance_residual(&self) -> f64 {
        self.invariance_residual
    }

    pub fn idempotency_residual(&self) -> f64 {
        self.idempotency_residual
    }

    /// P_k. Panics if `k` lies outside the window.
    pub fn at(&self, k: i64) -> &DMatrix<f64> {
        assert!(self.window.contains(k), "index {k} outside projector window");
        &self.projectors[self.window.offset(k)]
    }

    /// Q_k = I − P_k.
    pub fn complement_at(&self, k: i64) -> DMatrix<f64> {
        let p = self.at(k);
        DMatrix::identity(p.nrows(), p.ncols()) - p
    }

    /// The family Q_k = I − P_k. Both residuals carry over unchanged:
    /// Q² − Q = P² − P and Q_{k+1}A_k − A_kQ_k = −(P_{k+1}A_k − A_kP_k).
    pub fn complement(&self) -> ProjectorSequence {
        let n = self.dim();
        let id = DMatrix::<f64>::identity(n, n);
        ProjectorSequence {
            window: self.window,
            reference_index: self.reference_index,
            rank: n - self.rank,
            projectors: self.projectors.iter().map(|p| &id - p).collect(),
            invariance_residual: self.invariance_residual,
            idempotency_residual: self.idempotency_residual,
        }
    }

    /// Assemble a family from one projector per window index, checking
    /// idempotency and one-step invariance P_{k+1}A_k = A_kP_k. Residuals
    /// are relative: invariance is normalized by ‖A_k‖·max(1, ‖P_k‖).
    pub fn from_pointwise(
        sys: &MatrixSequence,
        w: &Window,
        projectors: Vec<DMatrix<f64>>,
    ) -> Result<ProjectorSequence> {
        let n = sys.dim();
        if projectors.len() != w.len() {
            return Err(CoreError::DimensionMismatch {
                expected: w.len(),
                found: projectors.len(),
            });
        }
        sys.require_window(w)?;
        let mut idempotency = 0.0f64;
        for p in &projectors {
            if p.nrows() != n || p.ncols() != n {
                return Err(CoreError::DimensionMismatch {
                    expected: n,
                    found: p.nrows().max(p.ncols()),
                });
            }
            idempotency = idempotency.max(op_norm(&(p * p - p)) / op_norm(p).max(1.0));
        }
        if !idempotency.is_finite() || idempotency > PROJECTOR_TOL {
            return Err(CoreError::NotAProjector { residual: idempotency });
        }
        let mut invariance = 0.0f64;
        for k in w.k_min()..w.k_max() {
            let a = sys.transition(k)?;
            let p = &projectors[w.offset(k)];
            let defect = op_norm(&(&projectors[w.offset(k + 1)] * &a - &a * p));
            let scale = (op_norm(&a) * op_norm(p).max(1.0)).max(f64::MIN_POSITIVE);
            invariance = invariance.max(defect / scale);
        }
        if !invariance.is_finite() || invariance > PROJECTOR_TOL {
            return Err(CoreError::ProjectorNotInvariant { residual: invariance });
        }
        let reference_index = w.midpoint();
        let rank = rank_with_tol(&projectors[w.offset(reference_index)], PROJECTOR_TOL);
        Ok(ProjectorSequence {
            window: *w,
            reference_index,
            rank,
            projectors,
            invariance_residual: invariance,
            idempotency_residual: idempotency,
        })
    }
}

/// Conjugate `p_ref` (given at `l_ref`) along the flow to every index of `w`:
/// P_{k+1} = A_k P_k A_k^{−1}, which makes P_{k+1} A_k = A_k P_k hold by
/// construction up to roundoff.
pub fn propagate_projector(
    sys: &MatrixSequence,
    p_ref: &DMatrix<f64>,
    l_ref: i64,
    w: &Window,
) -> Result<ProjectorSequence> {
    let n = sys.dim();
    if p_ref.nrows() != n || p_ref.ncols() != n {
        return Err(CoreError::DimensionMismatch { expected: n, found: p_ref.nrows().max(p_ref.ncols()) });
    }
    if !w.contains(l_ref) {
        return Err(CoreError::IndexOutOfRange { index: l_ref, k_min: w.k_min(), k_max: w.k_max() });
    }
    sys.require_window(w)?;
    let residual = op_norm(&(p_ref * p_ref - p_ref)) / op_norm(p_ref).max(1.0);
    if !residual.is_finite() || residual > PROJECTOR_TOL {
        return Err(CoreError::NotAProjector { residual });
    }
    let rank = rank_with_tol(p_ref, PROJECTOR_TOL);

    let len = w.len();
    let mut projectors = vec![DMatrix::zeros(n, n); len];
    let ref_off = w.offset(l_ref);
    projectors[ref_off] = p_ref.clone();
    for k in l_ref..w.k_max() {
        let a = sys.transition(k)?;
        // P_{k+1} = A_k P_k A_k^{−1}: solve A_k^T Y = (A_k P_k)^T, then transpose.
        let x = (&a * &projectors[w.offset(k)]).transpose();
        let next = a
            .transpose()
            .lu()
            .solve(&x)
            .ok_or(CoreError::SingularTransition { index: k, det: a.lu().determinant() })?
            .transpose();
        projectors[w.offset(k + 1)] = next;
    }
    for k in (w.k_min()..l_ref).rev() {
        let a = sys.transition(k)?;
        let lu = a.clone().lu();
        let rhs = &projectors[w.offset(k + 1)] * &a;
        let prev = lu
            .solve(&rhs)
            .ok_or(CoreError::SingularTransition { index: k, det: a.lu().determinant() })?;
        projectors[w.offset(k)] = prev;
    }

    let mut invariance = 0.0f64;
    let mut idempotency = residual;
    for k in w.indices() {
        let p = &projectors[w.offset(k)];
        let idem = op_norm(&(p * p - p)) / op_norm(p).max(1.0);
        idempotency = idempotency.max(idem);
        if k < w.k_max() {
            let a = sys.transition(k)?;
            let defect = op_norm(&(&projectors[w.offset(k + 1)] * &a - &a * p)) / op_norm(&a).max(1.0);
            invariance = invariance.max(defect);
        }
    }
    Ok(ProjectorSequence {
        window: *w,
        reference_index: l_ref,
        rank,
        projectors,
        invariance_residual: invariance,
        idempotency_residual: idempotency,
    })
}

/// Verified or candidate constants for the pair of dichotomy estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DichotomyCertificate {
    pub projector: ProjectorSequence,
    pub k_const: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub flavor: DichotomyFlavor,
}

impl DichotomyCertificate {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_const.is_finite() && self.k_const >= 1.0) {
            return Err(CoreError::InvalidCertificate {
                message: format!("K must be finite and >= 1, got {}", self.k_const),
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CoreError::InvalidCertificate {
                message: format!("alpha must lie in (0, 1), got {}", self.alpha),
            });
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 1.0) {
            return Err(CoreError::InvalidCertificate {
                message: format!("epsilon must be finite and >= 1, got {}", self.epsilon),
            });
        }
        match self.flavor {
            DichotomyFlavor::UniformEd => {
                if self.epsilon > 1.0 + 1e-12 {
                    return Err(CoreError::InvalidCertificate {
                        message: format!("uniform_ED requires epsilon = 1, got {}", self.epsilon),
                    });
                }
            }
            DichotomyFlavor::StrongNed => {
                if !(self.alpha * self.epsilon * self.epsilon < 1.0) {
                    return Err(CoreError::InvalidCertificate {
                        message: format!(
                            "strong_NED requires alpha * epsilon^2 < 1, got {}",
                            self.alpha * self.epsilon * self.epsilon
                        ),
                    });
                }
            }
            DichotomyFlavor::Ned => {}
        }
        Ok(())
    }

    /// Whether the constants satisfy the strong smallness condition αε² < 1.
    pub fn is_strong(&self) -> bool {
        self.alpha * self.epsilon * self.epsilon < 1.0
    }
}

pub fn is_strong(cert: &DichotomyCertificate) -> bool {
    cert.is_strong()
}

/// Outcome of an exhaustive bound check over a window.
#[derive(Clone, Debug, Serialize)]
pub struct ViolationReport {
    pub max_stable_excess: f64,
    pub stable_witness: Option<(i64, i64)>,
    pub max_unstable_excess: f64,
    pub unstable_witness: Option<(i64, i64)>,
    pub pass: bool,
}

/// Invariant-splitting side that a long product is confined to after every
/// factor. A free-running product carries a rounding floor of machine epsilon
/// times the dominant growth, which buries genuine decay once the rate gap
/// spans the mantissa; re-projecting each step returns the noise to the
/// tracked subspace, where the remaining factors contract it. For an
/// invariant family the projection telescopes away (P_{k+1} A_k P_k =
/// A_k P_k), so exact values are unchanged.
pub(crate) enum Confine<'a> {
    Free,
    Range(&'a ProjectorSequence),
    Kernel(&'a ProjectorSequence),
}

impl Confine<'_> {
    fn apply(&self, k: i64, acc: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Confine::Free => acc,
            Confine::Range(p) => p.at(k) * acc,
            Confine::Kernel(p) => p.complement_at(k) * acc,
        }
    }
}

/// Log norms ln‖Φ(k, l)·start‖ for k = l, l+1, …, k_max, computed with
/// per-step renormalization so that long products cannot overflow.
pub(crate) fn forward_log_norms(
    sys: &MatrixSequence,
    l: i64,
    k_max: i64,
    start: &DMatrix<f64>,
    confine: &Confine,
) -> Result<Vec<f64>> {
    let steps = (k_max - l).max(0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut acc = start.clone();
    let mut shift = 0.0f64;
    for i in 0..=steps {
        let f = acc.norm();
        if !f.is_finite() {
            return Err(CoreError::NonFiniteEntry { index: l + i as i64 });
        }
        if f == 0.0 {
            out.resize(steps + 1, f64::NEG_INFINITY);
            break;
        }
        acc /= f;
        shift += f.ln();
        out.push(shift + op_norm(&acc).ln());
        if i < steps {
            let k = l + i as i64;
            acc = confine.apply(k + 1, sys.transition(k)? * acc);
        }
    }
    Ok(out)
}

/// Log norms ln‖Φ(k, l)·start‖ for k = l, l−1, …, k_min (index i holds k = l−i).
pub(crate) fn backward_log_norms(
    sys: &MatrixSequence,
    l: i64,
    k_min: i64,
    start: &DMatrix<f64>,
    confine: &Confine,
) -> Result<Vec<f64>> {
    let steps = (l - k_min).max(0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut acc = start.clone();
    let mut shift = 0.0f64;
    for i in 0..=steps {
        let f = acc.norm();
        if !f.is_finite() {
            return Err(CoreError::NonFiniteEntry { index: l - i as i64 });
        }
        if f == 0.0 {
            out.resize(steps + 1, f64::NEG_INFINITY);
            break;
        }
        acc /= f;
        shift += f.ln();
        out.push(shift + op_norm(&acc).ln());
        if i < steps {
            let k = l - i as i64 - 1;
            let a = sys.transition(k)?;
            let y = a
                .clone()
                .lu()
                .solve(&acc)
                .ok_or(CoreError::SingularTransition { index: k, det: a.lu().determinant() })?;
            acc = confine.apply(k, y);
        }
    }
    Ok(out)
}

/// Check both estimates at every pair (k, l) with k, l in `w`, in the 2-norm.
pub fn verify_certificate(
    sys: &MatrixSequence,
    cert: &DichotomyCertificate,
    w: &Window,
    convention: NonuniformExponent,
) -> Result<ViolationReport> {
    cert.validate()?;
    sys.require_window(w)?;
    if cert.projector.dim() != sys.dim() {
        return Err(CoreError::DimensionMismatch { expected: sys.dim(), found: cert.projector.dim() });
    }
    let pw = cert.projector.window();
    if pw.k_min() > w.k_min() || pw.k_max() < w.k_max() {
        return Err(CoreError::InvalidCertificate {
            message: format!(
                "projector window [{}, {}] does not cover verification window [{}, {}]",
                pw.k_min(),
                pw.k_max(),
                w.k_min(),
                w.k_max()
            ),
        });
    }

    let mut invariance = 0.0f64;
    for k in w.k_min()..w.k_max() {
        let a = sys.transition(k)?;
        let residual = op_norm(&(cert.projector.at(k + 1) * &a - &a * cert.projector.at(k)));
        let scale = op_norm(&a) * op_norm(cert.projector.at(k)).max(1.0);
        invariance = invariance.max(residual / scale.max(f64::MIN_POSITIVE));
    }
    if !invariance.is_finite() || invariance > PROJECTOR_TOL {
        return Err(CoreError::ProjectorNotInvariant { residual: invariance });
    }

    let ln_k = cert.k_const.ln();
    let ln_a = cert.alpha.ln();
    let ln_e = cert.epsilon.ln();
    let mut report = ViolationReport {
        max_stable_excess: f64::NEG_INFINITY,
        stable_witness: None,
        max_unstable_excess: f64::NEG_INFINITY,
        unstable_witness: None,
        pass: false,
    };
    let confine_s = Confine::Range(&cert.projector);
    let confine_u = Confine::Kernel(&cert.projector);
    for l in w.indices() {
        let weight = convention.exponent(l) as f64 * ln_e;
        let fwd = forward_log_norms(sys, l, w.k_max(), cert.projector.at(l), &confine_s)?;
        for (i, f) in fwd.iter().enumerate() {
            let excess = f - (ln_k + i as f64 * ln_a + weight);
            if excess > report.max_stable_excess {
                report.max_stable_excess = excess;
                report.stable_witness = Some((l + i as i64, l));
            }
        }
        let bwd =
            backward_log_norms(sys, l, w.k_min(), &cert.projector.complement_at(l), &confine_u)?;
        for (i, f) in bwd.iter().enumerate() {
            let excess = f - (ln_k + i as f64 * ln_a + weight);
            if excess > report.max_unstable_excess {
                report.max_unstable_excess = excess;
                report.unstable_witness = Some((l - i as i64, l));
            }
        }
    }
    report.pass = report.max_stable_excess <= EXCESS_TOL && report.max_unstable_excess <= EXCESS_TOL;
    Ok(report)
}

#[derive(Clone, Debug)]
pub enum FitOutcome {
    Feasible(DichotomyCertificate),
    Infeasible,
}

fn check_grids(alpha_grid: &[f64], eps_grid: &[f64]) -> Result<()> {
    if alpha_grid.is_empty() || eps_grid.is_empty() {
        return Err(CoreError::EmptyGrid);
    }
    for &a in alpha_grid {
        if !(a > 0.0 && a < 1.0) {
            return Err(CoreError::InvalidGrid { message: format!("alpha value {a} outside (0, 1)") });
        }
    }
    for &e in eps_grid {
        if !(e.is_finite() && e >= 1.0) {
            return Err(CoreError::InvalidGrid { message: format!("epsilon value {e} below 1") });
        }
    }
    Ok(())
}

/// Minimal-K grid fit over bound data `(D, s, F)` meaning
/// F = ln‖Φ·projector‖ at separation D with ε-exponent s. Returns the
/// feasible (α, ε, K) minimizing (αε², K, ε) lexicographically, or None.
pub(crate) fn fit_from_cloud(
    cloud: &[(i64, f64, f64)],
    alpha_grid: &[f64],
    eps_grid: &[f64],
    k_cap: f64,
) -> Option<(f64, f64, f64)> {
    let max_d = cloud.iter().map(|&(d, _, _)| d).max().unwrap_or(0) as usize;
    let mut best: Option<(f64, f64, f64)> = None;
    let mut g = vec![f64::NEG_INFINITY; max_d + 1];
    for &eps in eps_grid {
        let ln_e = eps.ln();
        g.fill(f64::NEG_INFINITY);
        for &(d, s, f) in cloud {
            if f.is_finite() {
                let v = f - s * ln_e;
                let slot = &mut g[d as usize];
                if v > *slot {
                    *slot = v;
                }
            }
        }
        for &alpha in alpha_grid {
            let ln_a = alpha.ln();
            let mut ln_k = f64::NEG_INFINITY;
            for (d, &gd) in g.iter().enumerate() {
                if gd.is_finite() {
                    ln_k = ln_k.max(gd - d as f64 * ln_a);
                }
            }
            let k = if ln_k.is_finite() { ln_k.exp().max(1.0) } else { 1.0 } * (1.0 + 1e-12);
            if !(k <= k_cap) || !(alpha * eps * eps < 1.0) {
                continue;
            }
            let score = alpha * eps * eps;
            let better = match best {
                None => true,
                Some((ba, be, bk)) => {
                    let bs = ba * be * be;
                    score < bs || (score == bs && (k < bk || (k == bk && eps < be)))
                }
            };
            if better {
                best = Some((alpha, eps, k));
            }
        }
    }
    best
}

fn build_cloud(
    sys: &MatrixSequence,
    proj: &ProjectorSequence,
    w: &Window,
    convention: NonuniformExponent,
) -> Result<Vec<(i64, f64, f64)>> {
    let mut cloud = Vec::new();
    let confine_s = Confine::Range(proj);
    let confine_u = Confine::Kernel(proj);
    for l in w.indices() {
        let s = convention.exponent(l) as f64;
        let fwd = forward_log_norms(sys, l, w.k_max(), proj.at(l), &confine_s)?;
        for (i, &f) in fwd.iter().enumerate() {
            if f.is_finite() {
                cloud.push((i as i64, s, f));
            }
        }
        let bwd = backward_log_norms(sys, l, w.k_min(), &proj.complement_at(l), &confine_u)?;
        for (i, &f) in bwd.iter().enumerate() {
            if f.is_finite() {
                cloud.push((i as i64, s, f));
            }
        }
    }
    Ok(cloud)
}

/// Fit certificate constants over the given grids, keeping only candidates
/// with K below `k_cap` and αε² < 1, and minimizing (αε², K, ε).
pub fn fit_constants_capped(
    sys: &MatrixSequence,
    proj: &ProjectorSequence,
    w: &Window,
    alpha_grid: &[f64],
    eps_grid: &[f64],
    convention: NonuniformExponent,
    k_cap: f64,
) -> Result<FitOutcome> {
    check_grids(alpha_grid, eps_grid)?;
    sys.require_window(w)?;
    if proj.dim() != sys.dim() {
        return Err(CoreError::DimensionMismatch { expected: sys.dim(), found: proj.dim() });
    }
    let pw = proj.window();
    if pw.k_min() > w.k_min() || pw.k_max() < w.k_max() {
        return Err(CoreError::InvalidCertificate {
            message: "projector window does not cover the fitting window".into(),
        });
    }
    let cloud = build_cloud(sys, proj, w, convention)?;
    match fit_from_cloud(&cloud, alpha_grid, eps_grid, k_cap) {
        None => Ok(FitOutcome::Infeasible),
        Some((alpha, eps, k)) => {
            let flavor = if eps <= 1.0 + 1e-12 {
                DichotomyFlavor::UniformEd
            } else {
                DichotomyFlavor::StrongNed
            };
            Ok(FitOutcome::Feasible(DichotomyCertificate {
                projector: proj.clone(),
                k_const: k,
                alpha,
                epsilon: eps,
                flavor,
            }))
        }
    }
}

pub fn fit_constants(
    sys: &MatrixSequence,
    proj: &ProjectorSequence,
    w: &Window,
    alpha_grid: &[f64],
    eps_grid: &[f64],
    convention: NonuniformExponent,
) -> Result<FitOutcome> {
    fit_constants_capped(sys, proj, w, alpha_grid, eps_grid, convention, DEFAULT_K_CAP)
}

/// Two-sided growth envelope ‖Φ(k, l)‖ ≤ K a^{|k−l|} ε^{|l|}.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GrowthBound {
    pub k_const: f64,
    pub a: f64,
    pub epsilon: f64,
}

impl GrowthBound {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_const.is_finite() && self.k_const > 0.0)
            || !(self.a.is_finite() && self.a >= 1.0)
            || !(self.epsilon.is_finite() && self.epsilon >= 1.0)
        {
            return Err(CoreError::InvalidCertificate {
                message: format!(
                    "growth bound requires K > 0, a >= 1, epsilon >= 1; got K = {}, a = {}, epsilon = {}",
                    self.k_const, self.a, self.epsilon
                ),
            });
        }
        Ok(())
    }
}

/// Fit the smallest base `a` (then smallest ε) such that the two-sided
/// growth envelope holds over `w`. The rate is the steepest chord of the
/// norm envelope, so `a` dominates every attained per-step rate and the
/// spectrum always lands inside `[1/a, a]`.
pub fn fit_growth_bound(sys: &MatrixSequence, w: &Window, eps_grid: &[f64]) -> Result<GrowthBound> {
    if eps_grid.is_empty() {
        return Err(CoreError::EmptyGrid);
    }
    for &e in eps_grid {
        if !(e.is_finite() && e >= 1.0) {
            return Err(CoreError::InvalidGrid { message: format!("epsilon value {e} below 1") });
        }
    }
    sys.require_window(w)?;
    let n = sys.dim();
    let id = DMatrix::identity(n, n);
    let mut cloud: Vec<(i64, f64, f64)> = Vec::new();
    for l in w.indices() {
        let s = l.abs() as f64;
        let fwd = forward_log_norms(sys, l, w.k_max(), &id, &Confine::Free)?;
        for (i, &f) in fwd.iter().enumerate() {
            cloud.push((i as i64, s, f));
        }
        let bwd = backward_log_norms(sys, l, w.k_min(), &id, &Confine::Free)?;
        for (i, &f) in bwd.iter().enumerate() {
            if i > 0 {
                cloud.push((i as i64, s, f));
            }
        }
    }
    let max_d = w.span() as usize;
    let mut best: Option<GrowthBound> = None;
    for &eps in eps_grid {
        let ln_e = eps.ln();
        let mut h = vec![f64::NEG_INFINITY; max_d + 1];
        for &(d, s, f) in &cloud {
            let v = f - s * ln_e;
            let slot = &mut h[d as usize];
            if v > *slot {
                *slot = v;
            }
        }
        let pts: Vec<(f64, f64)> = h
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(d, &v)| (d as f64, v))
            .collect();
        if pts.is_empty() {
            continue;
        }
        // a must dominate every attained per-step rate, so take the worst
        // chord slope; a hull edge would let the epsilon term absorb real
        // asymptotic growth
        let ln_a = pts
            .iter()
            .filter(|&&(d, _)| d > 0.0)
            .map(|&(d, v)| v / d)
            .fold(0.0f64, f64::max);
        let mut ln_k = 0.0f64;
        for &(d, v) in &pts {
            ln_k = ln_k.max(v - ln_a * d);
        }
        let cand = GrowthBound { k_const: ln_k.exp() * (1.0 + 1e-12), a: ln_a.exp(), epsilon: eps };
        let better = match &best {
            None => true,
            Some(b) => {
                cand.a < b.a - 1e-12 * b.a.max(1.0)
                    || ((cand.a - b.a).abs() <= 1e-12 * b.a.max(1.0) && cand.epsilon < b.epsilon)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or(CoreError::EmptyGrid)
}

/// 64 log-spaced decay rates between 0.02 and 0.995.
pub fn default_alpha_grid() -> Vec<f64> {
    let lo: f64 = 0.02;
    let hi: f64 = 0.995;
    let n = 64;
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// 16 log-spaced ε values between 1 and e^{1/2}.
pub fn default_eps_grid() -> Vec<f64> {
    (0..16).map(|i| (0.5 * i as f64 / 15.0).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn paper_2d() -> MatrixSequence {
        MatrixSequence::builtin_example("paper_2d", &[1.0, 0.1]).unwrap()
    }

    fn diag_proj(n: usize, ones: &[usize], w: &Window, sys: &MatrixSequence) -> ProjectorSequence {
        let mut p = DMatrix::zeros(n, n);
        for &i in ones {
            p[(i, i)] = 1.0;
        }
        propagate_projector(sys, &p, w.midpoint(), w).unwrap()
    }

    #[test]
    fn exponent_conventions() {
        assert_eq!(NonuniformExponent::Signed.exponent(-3), -3);
        assert_eq!(NonuniformExponent::Absolute.exponent(-3), 3);
        assert_eq!(NonuniformExponent::default(), NonuniformExponent::Signed);
    }

    #[test]
    fn flavor_serde_names() {
        assert_eq!(serde_json::to_string(&DichotomyFlavor::StrongNed).unwrap(), "\"strong_NED\"");
        assert_eq!(serde_json::to_string(&DichotomyFlavor::UniformEd).unwrap(), "\"uniform_ED\"");
        let f: DichotomyFlavor = serde_json::from_str("\"NED\"").unwrap();
        assert_eq!(f, DichotomyFlavor::Ned);
    }

    #[test]
    fn propagation_keeps_diagonal_projectors_exact() {
        let sys = paper_2d();
        let w = Window::new(-6, 6).unwrap();
        let proj = diag_proj(2, &[0], &w, &sys);
        assert_eq!(proj.rank(), 1);
        assert!(proj.invariance_residual() < 1e-14);
        for k in w.indices() {
            let p = proj.at(k);
            assert_relative_eq!(p[(0, 0)], 1.0, max_relative = 1e-12);
            assert!(p[(1, 1)].abs() < 1e-12);
        }
        let q = proj.complement_at(0);
        assert!(q[(1, 1)] > 0.999);
    }

    #[test]
    fn propagation_rejects_non_projectors() {
        let sys = paper_2d();
        let w = Window::new(-2, 2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.5]);
        assert!(matches!(
            propagate_projector(&sys, &m, 0, &w),
            Err(CoreError::NotAProjector { .. })
        ));
    }

    #[test]
    fn propagation_matches_direct_conjugation() {
        let mats: Vec<DMatrix<f64>> = (0..6)
            .map(|k| {
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[1.2 + 0.1 * k as f64, 0.3, -0.2, 0.8 + 0.05 * k as f64],
                )
            })
            .collect();
        let sys = MatrixSequence::from_table(-3, mats).unwrap();
        let w = Window::new(-3, 3).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let proj = propagate_projector(&sys, &p, 0, &w).unwrap();
        for k in w.indices() {
            let phi = sys.evolution(k, 0).unwrap();
            let phi_inv = sys.evolution(0, k).unwrap();
            let direct = &phi * &p * &phi_inv;
            assert!(crate::linalg::rel_diff(proj.at(k), &direct) < 1e-10);
        }
        assert!(proj.invariance_residual() < 1e-12);
    }

    #[test]
    fn certificate_validation() {
        let sys = paper_2d();
        let w = Window::new(-2, 2).unwrap();
        let proj = diag_proj(2, &[0], &w, &sys);
        let mut cert = DichotomyCertificate {
            projector: proj,
            k_const: 1.0,
            alpha: 0.5,
            epsilon: 1.0,
            flavor: DichotomyFlavor::UniformEd,
        };
        assert!(cert.validate().is_ok());
        cert.epsilon = 1.5;
        assert!(cert.validate().is_err());
        cert.flavor = DichotomyFlavor::StrongNed;
        // 0.5 * 1.5^2 = 1.125 breaks the strong product condition
        assert!(cert.validate().is_err());
        cert.epsilon = 1.2;
        assert!(cert.validate().is_ok());
        assert!(cert.is_strong());
        cert.alpha = 0.8;
        assert!(cert.validate().is_err());
        cert.flavor = DichotomyFlavor::Ned;
        assert!(cert.validate().is_ok());
        assert!(!cert.is_strong());
        cert.k_const = 0.5;
        assert!(cert.validate().is_err());
    }

    #[test]
    fn verify_exact_rates_pass_and_tight_rates_fail() {
        let sys = MatrixSequence::builtin_example("constant_diag", &[0.5, 2.0]).unwrap();
        let w = Window::new(-5, 5).unwrap();
        let proj = diag_proj(2, &[0], &w, &sys);
        let good = DichotomyCertificate {
            projector: proj.clone(),
            k_const: 1.0,
            alpha: 0.5,
            epsilon: 1.0,
            flavor: DichotomyFlavor::UniformEd,
        };
        let rep = verify_certificate(&sys, &good, &w, NonuniformExponent::Signed).unwrap();
        assert!(rep.pass, "stable {} unstable {}", rep.max_stable_excess, rep.max_unstable_excess);
        assert!(rep.max_stable_excess.abs() < 1e-12);

        let bad = DichotomyCertificate { alpha: 0.4, ..good };
        let rep = verify_certificate(&sys, &bad, &w, NonuniformExponent::Signed).unwrap();
        assert!(!rep.pass);
        let (k, l) = rep.stable_witness.unwrap();
        assert_eq!(k - l, w.span());
        assert_relative_eq!(
            rep.max_stable_excess,
            w.span() as f64 * (0.5f64.ln() - 0.4f64.ln()),
            max_relative = 1e-9
        );
    }

    #[test]
    fn alternating_example_needs_absolute_convention() {
        let sys = paper_2d();
        let w = Window::new(-30, 30).unwrap();
        let proj = diag_proj(2, &[0], &w, &sys);
        let cert = DichotomyCertificate {
            projector: proj,
            k_const: 0.9f64.exp(),
            alpha: (-0.9f64).exp(),
            epsilon: 0.2f64.exp(),
            flavor: DichotomyFlavor::StrongNed,
        };
        let abs = verify_certificate(&sys, &cert, &w, NonuniformExponent::Absolute).unwrap();
        assert!(abs.pass, "stable {} unstable {}", abs.max_stable_excess, abs.max_unstable_excess);
        let signed = verify_certificate(&sys, &cert, &w, NonuniformExponent::Signed).unwrap();
        assert!(!signed.pass);
        assert!(signed.max_stable_excess > 1.0 || signed.max_unstable_excess > 1.0);
    }

    #[test]
    fn fit_picks_smallest_strong_product() {
        let sys = MatrixSequence::builtin_example("constant_diag", &[2.0, 0.5]).unwrap();
        let w = Window::new(-8, 8).unwrap();
        let proj = diag_proj(2, &[1], &w, &sys);
        let out = fit_constants(&sys, &proj, &w, &[0.5, 0.7], &[1.0], NonuniformExponent::Signed).unwrap();
        let cert = match out {
            FitOutcome::Feasible(c) => c,
            FitOutcome::Infeasible => panic!("expected feasible fit"),
        };
        assert_relative_eq!(cert.alpha, 0.5, max_relative = 1e-12);
        assert!(cert.k_const >= 1.0 && cert.k_const < 1.0 + 1e-9);
        assert_eq!(cert.flavor, DichotomyFlavor::UniformEd);
        let rep = verify_certificate(&sys, &cert, &w, NonuniformExponent::Signed).unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn fit_respects_cap_and_strong_condition() {
        let sys = MatrixSequence::builtin_example("constant_diag", &[0.5, 2.0]).unwrap();
        let w = Window::new(-6, 6).unwrap();
        let proj = diag_proj(2, &[0], &w, &sys);
        let out = fit_constants_capped(
            &sys,
            &proj,
            &w,
            &[0.05],
            &[1.0],
            NonuniformExponent::Signed,
            10.0,
        )
        .unwrap();
        assert!(matches!(out, FitOutcome::Infeasible));
        let out = fit_constants(&sys, &proj, &w, &[0.5], &[2.0], NonuniformExponent::Signed).unwrap();
        assert!(matches!(out, FitOutcome::Infeasible));
    }

    #[test]
    fn fit_grid_validation() {
        let sys = paper_2d();
        let w = Window::new(-2, 2).unwrap();
        let proj = diag_proj(2, &[0], &w, &sys);
        assert!(matches!(
            fit_constants(&sys, &proj, &w, &[], &[1.0], NonuniformExponent::Signed),
            Err(CoreError::EmptyGrid)
        ));
        assert!(matches!(
            fit_constants(&sys, &proj, &w, &[1.5], &[1.0], NonuniformExponent::Signed),
            Err(CoreError::InvalidGrid { .. })
        ));
        assert!(matches!(
            fit_constants(&sys, &proj, &w, &[0.5], &[0.9], NonuniformExponent::Signed),
            Err(CoreError::InvalidGrid { .. })
        ));
    }

    #[test]
    fn growth_bound_recovers_constant_rates() {
        let sys = MatrixSequence::builtin_example("constant_diag", &[2.0, 0.5]).unwrap();
        let w = Window::new(-10, 10).unwrap();
        let g = fit_growth_bound(&sys, &w, &[1.0, 1.2]).unwrap();
        assert_relative_eq!(g.a, 2.0, max_relative = 1e-9);
        assert_relative_eq!(g.epsilon, 1.0, max_relative = 1e-12);
        assert!(g.k_const >= 1.0 && g.k_const < 1.0 + 1e-9);
        g.validate().unwrap();

        let id = MatrixSequence::builtin_example("constant_diag", &[1.0, 1.0]).unwrap();
        let g = fit_growth_bound(&id, &w, &[1.0]).unwrap();
        assert_relative_eq!(g.a, 1.0, max_relative = 1e-12);
        assert!(g.k_const < 1.0 + 1e-9);
    }

    #[test]
    fn growth_bound_covers_all_pairs() {
        let sys = paper_2d();
        let w = Window::new(-9, 9).unwrap();
        let g = fit_growth_bound(&sys, &w, &default_eps_grid()).unwrap();
        for l in w.indices() {
            for k in w.indices() {
                let f = op_norm(&sys.evolution(k, l).unwrap()).ln();
                let bound = g.k_const.ln() + (k - l).abs() as f64 * g.a.ln() + l.abs() as f64 * g.epsilon.ln();
                assert!(f <= bound + 1e-9, "pair ({k}, {l}): {f} > {bound}");
            }
        }
    }

    #[test]
    fn default_grids_shape() {
        let a = default_alpha_grid();
        assert_eq!(a.len(), 64);
        assert!(a[0] >= 0.02 - 1e-12 && a[63] <= 0.995 + 1e-12);
        assert!(a.windows(2).all(|p| p[0] < p[1]));
        let e = default_eps_grid();
        assert_eq!(e.len(), 16);
        assert_relative_eq!(e[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(e[6], 0.2f64.exp(), max_relative = 1e-12);
    }
}
