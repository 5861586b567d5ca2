//! Matrix sequences and their evolution operators.
//!
//! A system is the difference equation x_{k+1} = A_k x_k given by an
//! invertible matrix sequence {A_k}. The evolution operator Φ(k, l)
//! propagates states from time l to time k: the ordered product
//! A_{k-1}···A_l for k > l, the identity at k = l, and the product of
//! single-step inverses A_k^{-1}···A_{l-1}^{-1} for k < l.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Closed integer interval of time indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    k_min: i64,
    k_max: i64,
}

impl Window {
    pub fn new(k_min: i64, k_max: i64) -> Result<Self> {
        if k_min > k_max {
            return Err(CoreError::InvalidWindow { k_min, k_max });
        }
        Ok(Window { k_min, k_max })
    }

    pub fn k_min(&self) -> i64 {
        self.k_min
    }

    pub fn k_max(&self) -> i64 {
        self.k_max
    }

    pub fn len(&self) -> usize {
        (self.k_max - self.k_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn span(&self) -> i64 {
        self.k_max - self.k_min
    }

    pub fn contains(&self, k: i64) -> bool {
        self.k_min <= k && k <= self.k_max
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.k_min..=self.k_max
    }

    /// Vector offset of index `k` (caller guarantees containment).
    pub fn offset(&self, k: i64) -> usize {
        debug_assert!(self.contains(k));
        (k - self.k_min) as usize
    }

    pub fn midpoint(&self) -> i64 {
        self.k_min + self.span() / 2
    }

    /// Window with twice the span around the same midpoint.
    pub fn doubled(&self) -> Window {
        let c = self.midpoint();
        let half = self.span().max(1);
        Window { k_min: c - half, k_max: c + half }
    }

    /// Window with half the span around the same midpoint (span at least 2).
    pub fn halved(&self) -> Window {
        let c = self.midpoint();
        let q = (self.span() / 4).max(1);
        Window { k_min: c - q, k_max: c + q }
    }
}

#[derive(Clone, Debug)]
enum Source {
    Table { k_min: i64, matrices: Arc<Vec<DMatrix<f64>>> },
    Alternating2d { omega: f64, a: f64 },
    AlternatingScalar { omega: f64, a: f64 },
    ConstantDiag { diag: Vec<f64> },
}

/// Exponent of the alternating generator at step `k`:
/// −ω + a·k·(−1)^k − a·(k−1)·(−1)^{k−1}.
fn alternating_exponent(omega: f64, a: f64, k: i64) -> f64 {
    let sign = |j: i64| if j.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    -omega + a * (k as f64) * sign(k) - a * ((k - 1) as f64) * sign(k - 1)
}

/// A matrix sequence {A_k}: explicit table over a window, or one of the
/// closed-form generator families, optionally rescaled by a constant factor.
#[derive(Clone, Debug)]
pub struct MatrixSequence {
    dim: usize,
    source: Source,
    scale: f64,
    invertibility_tolerance: f64,
}

pub const DEFAULT_INVERTIBILITY_TOL: f64 = 1e-12;

impl MatrixSequence {
    /// Table-backed sequence: `matrices[i]` is A_{k_min + i}.
    pub fn from_table(k_min: i64, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(CoreError::ParamConstraintViolated {
                message: "table must contain at least one matrix".into(),
            });
        }
        let dim = matrices[0].nrows();
        if dim == 0 {
            return Err(CoreError::ParamConstraintViolated {
                message: "matrices must be nonempty".into(),
            });
        }
        for (i, m) in matrices.iter().enumerate() {
            let k = k_min + i as i64;
            if m.nrows() != dim || m.ncols() != dim {
                return Err(CoreError::DimensionMismatch { expected: dim, found: m.nrows().max(m.ncols()) });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFiniteEntry { index: k });
            }
        }
        Ok(MatrixSequence {
            dim,
            source: Source::Table { k_min, matrices: Arc::new(matrices) },
            scale: 1.0,
            invertibility_tolerance: DEFAULT_INVERTIBILITY_TOL,
        })
    }

    /// Named closed-form generators.
    ///
    /// * `paper_2d` — params `[omega, a]` with ω > a > 0; the 2×2 diagonal
    ///   alternating example, entries e^{±(−ω + ak(−1)^k − a(k−1)(−1)^{k−1})}.
    /// * `paper_scalar` — params `[omega, a]` with ω > 5a > 0; the scalar
    ///   alternating example (the first entry of `paper_2d`).
    /// * `constant_diag` — params are the diagonal entries (nonzero), constant in k.
    /// * `table` is rejected here; build tables with [`MatrixSequence::from_table`].
    pub fn builtin_example(name: &str, params: &[f64]) -> Result<Self> {
        match name {
            "paper_2d" => {
                let (omega, a) = two_params(name, params)?;
                if !(omega > a && a > 0.0) {
                    return Err(CoreError::ParamConstraintViolated {
                        message: format!("paper_2d requires omega > a > 0, got omega = {omega}, a = {a}"),
                    });
                }
                Ok(MatrixSequence {
                    dim: 2,
                    source: Source::Alternating2d { omega, a },
                    scale: 1.0,
                    invertibility_tolerance: DEFAULT_INVERTIBILITY_TOL,
                })
            }
            "paper_scalar" => {
                let (omega, a) = two_params(name, params)?;
                if !(omega > 5.0 * a && a > 0.0) {
                    return Err(CoreError::ParamConstraintViolated {
                        message: format!("paper_scalar requires omega > 5a > 0, got omega = {omega}, a = {a}"),
                    });
                }
                Ok(MatrixSequence {
                    dim: 1,
                    source: Source::AlternatingScalar { omega, a },
                    scale: 1.0,
                    invertibility_tolerance: DEFAULT_INVERTIBILITY_TOL,
                })
            }
            "constant_diag" => {
                if params.is_empty() {
                    return Err(CoreError::ParamConstraintViolated {
                        message: "constant_diag needs at least one diagonal entry".into(),
                    });
                }
                if params.iter().any(|d| !d.is_finite() || *d == 0.0) {
                    return Err(CoreError::ParamConstraintViolated {
                        message: "constant_diag entries must be finite and nonzero".into(),
                    });
                }
                Ok(MatrixSequence {
                    dim: params.len(),
                    source: Source::ConstantDiag { diag: params.to_vec() },
                    scale: 1.0,
                    invertibility_tolerance: DEFAULT_INVERTIBILITY_TOL,
                })
            }
            "table" => Err(CoreError::ParamConstraintViolated {
                message: "`table` systems carry explicit data; use MatrixSequence::from_table".into(),
            }),
            other => Err(CoreError::UnknownName { name: other.to_string() }),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn invertibility_tolerance(&self) -> f64 {
        self.invertibility_tolerance
    }

    pub fn with_invertibility_tolerance(mut self, tol: f64) -> Self {
        self.invertibility_tolerance = tol.abs();
        self
    }

    /// Index range over which transitions are defined; `None` means all of ℤ.
    pub fn defined_range(&self) -> Option<(i64, i64)> {
        match &self.source {
            Source::Table { k_min, matrices } => Some((*k_min, *k_min + matrices.len() as i64 - 1)),
            _ => None,
        }
    }

    /// Whether the sequence extends beyond any finite window (closed-form generator).
    pub fn is_generator_backed(&self) -> bool {
        !matches!(self.source, Source::Table { .. })
    }

    /// Same sequence with every transition multiplied by `factor`
    /// (used for γ-weighted systems, factor = 1/γ).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale *= factor;
        out
    }

    /// Closed-form candidate descriptions of the spectral interval, when the
    /// generator family comes with them. The scalar alternating family has two
    /// disagreeing candidates (a narrow attained-rate band and a wider one);
    /// the spectrum estimator reports which candidate its numerics support.
    pub fn reference_candidates(&self) -> Option<[(f64, f64); 2]> {
        match &self.source {
            Source::AlternatingScalar { omega, a } => Some([
                ((-omega - a).exp(), (-omega + a).exp()),
                ((-omega - 5.0 * a).exp(), (-omega + 5.0 * a).exp()),
            ]),
            _ => None,
        }
    }

    /// Check that every transition used by products over `w` is defined:
    /// window bounds are state indices, so transitions k_min..k_max−1 must
    /// exist and the last valid state index is one past the last transition.
    pub fn require_window(&self, w: &Window) -> Result<()> {
        if let Some((lo, hi)) = self.defined_range() {
            if w.k_min() < lo || w.k_max() > hi + 1 {
                let bad = if w.k_min() < lo { w.k_min() } else { w.k_max() };
                return Err(CoreError::IndexOutOfRange { index: bad, k_min: lo, k_max: hi + 1 });
            }
        }
        Ok(())
    }

    fn raw_transition(&self, k: i64) -> Result<DMatrix<f64>> {
        match &self.source {
            Source::Table { k_min, matrices } => {
                let hi = *k_min + matrices.len() as i64 - 1;
                if k < *k_min || k > hi {
                    return Err(CoreError::IndexOutOfRange { index: k, k_min: *k_min, k_max: hi });
                }
                Ok(matrices[(k - k_min) as usize].clone())
            }
            Source::Alternating2d { omega, a } => {
                let x = alternating_exponent(*omega, *a, k);
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![x.exp(), (-x).exp()])))
            }
            Source::AlternatingScalar { omega, a } => {
                let x = alternating_exponent(*omega, *a, k);
                Ok(DMatrix::from_element(1, 1, x.exp()))
            }
            Source::ConstantDiag { diag } => {
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag.clone())))
            }
        }
    }

    /// A_k, with the invertibility guard: |det A_k| must exceed the
    /// tolerance relative to ‖A_k‖_F^N.
    pub fn transition(&self, k: i64) -> Result<DMatrix<f64>> {
        let mut m = self.raw_transition(k)?;
        if self.scale != 1.0 {
            m *= self.scale;
        }
        let det = m.clone().lu().determinant();
        let scale = m.norm().powi(self.dim as i32);
        if !det.is_finite() || det.abs() <= self.invertibility_tolerance * scale {
            return Err(CoreError::SingularTransition { index: k, det });
        }
        Ok(m)
    }

    fn transition_inverse(&self, k: i64) -> Result<DMatrix<f64>> {
        let m = self.transition(k)?;
        m.clone()
            .try_inverse()
            .ok_or(CoreError::SingularTransition { index: k, det: m.lu().determinant() })
    }

    /// Evolution operator Φ(k, l).
    pub fn evolution(&self, k: i64, l: i64) -> Result<DMatrix<f64>> {
        let n = self.dim;
        if k == l {
            // still validate the state index against table ranges
            if let Some((lo, hi)) = self.defined_range() {
                if k < lo || k > hi + 1 {
                    return Err(CoreError::IndexOutOfRange { index: k, k_min: lo, k_max: hi + 1 });
                }
            }
            return Ok(DMatrix::identity(n, n));
        }
        let mut acc = DMatrix::identity(n, n);
        if k > l {
            for j in l..k {
                acc = self.transition(j)? * acc;
            }
        } else {
            for j in k..l {
                acc = acc * self.transition_inverse(j)?;
            }
            // ordering: Φ(k,l) = A_k^{-1} A_{k+1}^{-1} ··· A_{l-1}^{-1}
        }
        Ok(acc)
    }

    /// γ-weighted evolution operator Φ_γ(k, l) = γ^{−(k−l)} Φ(k, l).
    pub fn weighted_evolution(&self, gamma: f64, k: i64, l: i64) -> Result<DMatrix<f64>> {
        if !(gamma > 0.0) {
            return Err(CoreError::NonpositiveWeight { gamma });
        }
        let phi = self.evolution(k, l)?;
        let w = gamma.powi(-((k - l) as i32));
        Ok(phi * w)
    }
}

fn two_params(name: &str, params: &[f64]) -> Result<(f64, f64)> {
    if params.len() != 2 {
        return Err(CoreError::ParamConstraintViolated {
            message: format!("{name} takes exactly two parameters [omega, a], got {}", params.len()),
        });
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(CoreError::ParamConstraintViolated { message: format!("{name} parameters must be finite") });
    }
    Ok((params[0], params[1]))
}

/// Convenience free function mirroring the method.
pub fn builtin_example(name: &str, params: &[f64]) -> Result<MatrixSequence> {
    MatrixSequence::builtin_example(name, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{op_norm, rel_diff};
    use approx::assert_relative_eq;

    fn paper_2d() -> MatrixSequence {
        MatrixSequence::builtin_example("paper_2d", &[1.0, 0.1]).unwrap()
    }

    /// Telescoped log of the first diagonal entry of Φ(k, l) for the
    /// alternating generator: −ω(k−l) + a(k−1)(−1)^{k−1} + a(l−1)(−1)^l.
    fn log_gain(omega: f64, a: f64, k: i64, l: i64) -> f64 {
        let sgn = |j: i64| if j.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        -omega * ((k - l) as f64) + a * ((k - 1) as f64) * sgn(k - 1) + a * ((l - 1) as f64) * sgn(l)
    }

    #[test]
    fn window_basics() {
        let w = Window::new(-3, 5).unwrap();
        assert_eq!(w.len(), 9);
        assert_eq!(w.midpoint(), 1);
        assert!(w.contains(-3) && w.contains(5) && !w.contains(6));
        assert!(Window::new(2, 1).is_err());
        let d = w.doubled();
        assert_eq!(d.span(), 2 * w.span());
        assert_eq!(d.midpoint(), w.midpoint());
    }

    #[test]
    fn builtin_guards() {
        assert!(MatrixSequence::builtin_example("paper_2d", &[0.1, 0.5]).is_err());
        assert!(MatrixSequence::builtin_example("paper_scalar", &[0.4, 0.1]).is_err());
        assert!(MatrixSequence::builtin_example("nope", &[]).is_err());
        assert!(matches!(
            MatrixSequence::builtin_example("table", &[]),
            Err(CoreError::ParamConstraintViolated { .. })
        ));
        assert!(MatrixSequence::builtin_example("constant_diag", &[2.0, 0.0]).is_err());
    }

    #[test]
    fn generator_entry_matches_formula_at_zero() {
        let sys = paper_2d();
        let a0 = sys.transition(0).unwrap();
        // k = 0: exponent −ω + 0 − a·(−1)·(−1)^{−1} = −ω − a
        assert_relative_eq!(a0[(0, 0)], (-1.0f64 - 0.1).exp(), max_relative = 1e-14);
        assert_relative_eq!(a0[(1, 1)], (1.0f64 + 0.1).exp(), max_relative = 1e-14);
        assert_relative_eq!(a0[(0, 0)] * a0[(1, 1)], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn scalar_matches_first_entry_of_2d() {
        let s = MatrixSequence::builtin_example("paper_scalar", &[1.0, 0.1]).unwrap();
        let d = paper_2d();
        for k in -7..7 {
            assert_relative_eq!(
                s.transition(k).unwrap()[(0, 0)],
                d.transition(k).unwrap()[(0, 0)],
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn repeated_queries_are_bit_identical() {
        let sys = paper_2d();
        for k in [-9i64, 0, 4, 31] {
            let a = sys.transition(k).unwrap();
            let b = sys.transition(k).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn evolution_identity_and_single_step() {
        let sys = paper_2d();
        let id = sys.evolution(5, 5).unwrap();
        assert!(rel_diff(&id, &DMatrix::identity(2, 2)) < 1e-15);
        let single = sys.evolution(4, 3).unwrap();
        assert!(rel_diff(&single, &sys.transition(3).unwrap()) < 1e-15);
    }

    #[test]
    fn closed_form_matches_products() {
        let sys = paper_2d();
        for l in -12..=12 {
            for k in l..=12 {
                let phi = sys.evolution(k, l).unwrap();
                let f = log_gain(1.0, 0.1, k, l);
                assert_relative_eq!(phi[(0, 0)], f.exp(), max_relative = 1e-10);
                assert_relative_eq!(phi[(1, 1)], (-f).exp(), max_relative = 1e-10);
                assert_eq!(phi[(0, 1)], 0.0);
            }
        }
    }

    #[test]
    fn backward_evolution_inverts_forward() {
        let sys = paper_2d();
        let fwd = sys.evolution(6, -3).unwrap();
        let bwd = sys.evolution(-3, 6).unwrap();
        assert!(rel_diff(&(fwd * bwd), &DMatrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn cocycle_on_a_table() {
        let mats = vec![
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 0.8, 0.1, 0.3, 0.0, 1.2]),
            DMatrix::from_row_slice(3, 3, &[0.9, 0.0, 0.4, 0.1, 1.1, 0.0, 0.0, 0.2, 0.7]),
            DMatrix::from_row_slice(3, 3, &[1.3, 0.1, 0.0, 0.0, 0.6, 0.2, 0.1, 0.0, 1.0]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.1, 0.2, 0.9, 0.0, 0.0, 0.1, 1.1]),
        ];
        let sys = MatrixSequence::from_table(0, mats).unwrap();
        let a = sys.evolution(4, 2).unwrap() * sys.evolution(2, 0).unwrap();
        let b = sys.evolution(4, 0).unwrap();
        assert!(op_norm(&(a - &b)) <= 1e-12 * op_norm(&b).max(1.0));
    }

    #[test]
    fn table_range_errors() {
        let mats = vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)];
        let sys = MatrixSequence::from_table(0, mats).unwrap();
        assert!(matches!(sys.transition(2), Err(CoreError::IndexOutOfRange { .. })));
        assert!(sys.evolution(3, 0).is_err());
        assert!(sys.evolution(2, 0).is_ok());
        assert!(sys.require_window(&Window::new(0, 2).unwrap()).is_ok());
        assert!(sys.require_window(&Window::new(0, 3).unwrap()).is_err());
        assert!(sys.require_window(&Window::new(-1, 2).unwrap()).is_err());
    }

    #[test]
    fn singular_transition_detected() {
        let mats = vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])];
        let sys = MatrixSequence::from_table(0, mats).unwrap();
        assert!(matches!(sys.transition(0), Err(CoreError::SingularTransition { .. })));
    }

    #[test]
    fn weighted_evolution_weight_law() {
        let sys = MatrixSequence::builtin_example("constant_diag", &[2.0, 2.0]).unwrap();
        let w = sys.weighted_evolution(2.0, 7, 3).unwrap();
        assert!(rel_diff(&w, &DMatrix::identity(2, 2)) < 1e-14);
        let same = sys.weighted_evolution(1.0, 5, 2).unwrap();
        assert_eq!(same, sys.evolution(5, 2).unwrap());
        assert!(sys.weighted_evolution(0.0, 1, 0).is_err());
        assert!(sys.weighted_evolution(-1.0, 1, 0).is_err());
    }

    #[test]
    fn scaled_sequence_composes() {
        let sys = MatrixSequence::builtin_example("constant_diag", &[3.0]).unwrap();
        let s = sys.scaled(0.5).scaled(2.0);
        assert_relative_eq!(s.transition(0).unwrap()[(0, 0)], 3.0, max_relative = 1e-15);
        let half = sys.scaled(1.0 / 3.0);
        assert!(rel_diff(&half.evolution(9, 0).unwrap(), &DMatrix::identity(1, 1)) < 1e-12);
    }

    #[test]
    fn reference_candidates_only_for_scalar() {
        let s = MatrixSequence::builtin_example("paper_scalar", &[1.0, 0.1]).unwrap();
        let c = s.reference_candidates().unwrap();
        assert_relative_eq!(c[0].0, (-1.1f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(c[1].1, (-0.5f64).exp(), max_relative = 1e-14);
        assert!(paper_2d().reference_candidates().is_none());
    }
}
