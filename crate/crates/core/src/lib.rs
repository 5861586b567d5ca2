//! Finite-window analysis of nonautonomous linear difference systems
//! x_{k+1} = A_k x_k: evolution operators, nonuniform exponential dichotomy
//! certificates and their verification, growth-rate clouds, weighted-system
//! spectrum estimation with stable/unstable bundles, and the weak kinematic
//! similarity that reduces a system to block-diagonal form along its
//! spectral cuts.

pub mod dichotomy;
pub mod error;
pub mod linalg;
pub mod rates;
pub mod reducibility;
pub mod spectrum;
pub mod system;

pub use dichotomy::{
    default_alpha_grid, default_eps_grid, fit_constants, fit_constants_capped, fit_growth_bound,
    is_strong, propagate_projector, verify_certificate, DichotomyCertificate, DichotomyFlavor,
    FitOutcome, GrowthBound, NonuniformExponent, ProjectorSequence, ViolationReport,
    DEFAULT_K_CAP, EXCESS_TOL,
};
pub use error::{CoreError, Result};
pub use rates::{rate_cloud, rate_cloud_with_min_span, RateClass, RateCloud, RATE_TOL};
pub use reducibility::{
    block_diagonalize, full_reduction, lyapunov_split, normalize_projector, split_frame_matrix,
    spectrum_invariance_check, verify_weak_similarity, BlockSystem, DegeneracyClass, FrameSplit,
    NormalizedFrame, SimilarityTransform, SpectrumInvarianceReport, WeakSimilarityReport,
};
pub use spectrum::{
    estimate_spectrum, estimate_spectrum_with, intersect_subspaces, resolvent_test,
    spectral_bundles, stable_bundle, unstable_bundle, BundleBasis, CandidateComparison,
    CutSummary, EstimateOptions, FitConfig, ResolventVerdict, ScanPoint, SpectralInterval,
    SpectrumEstimate, VerdictStatus, CANDIDATE_MATCH_TOL,
};
pub use system::{builtin_example, MatrixSequence, Window, DEFAULT_INVERTIBILITY_TOL};
