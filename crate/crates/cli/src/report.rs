//! Report emission: structured JSON documents plus plot-ready CSV tables.
//! Identical configs produce byte-identical files apart from the timestamp.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use nedspec_core::{
    CandidateComparison, CutSummary, DegeneracyClass, DichotomyFlavor, GrowthBound,
    NonuniformExponent, ScanPoint, SpectralInterval, SpectrumInvarianceReport, VerdictStatus,
    ViolationReport, WeakSimilarityReport,
};
use serde::Serialize;

pub fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn write_csv(dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = String::with_capacity(header.len() + 1 + rows.len() * 24);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn status_str(status: VerdictStatus) -> &'static str {
    match status {
        VerdictStatus::Resolvent => "resolvent",
        VerdictStatus::Spectrum => "spectrum",
        VerdictStatus::Undecided => "undecided",
    }
}

pub fn scan_rows(scan: &[ScanPoint]) -> Vec<String> {
    scan.iter()
        .map(|p| {
            let dim = p.stable_dim.map(|d| d.to_string()).unwrap_or_default();
            format!("{},{},{}", p.gamma, status_str(p.status), dim)
        })
        .collect()
}

pub fn interval_rows(intervals: &[SpectralInterval]) -> Vec<String> {
    intervals
        .iter()
        .map(|iv| {
            format!(
                "{},{},{},{},{},{},{},{}",
                iv.lo,
                iv.hi,
                iv.lo_unbounded,
                iv.hi_unbounded,
                iv.lo_bracket.0,
                iv.lo_bracket.1,
                iv.hi_bracket.0,
                iv.hi_bracket.1
            )
        })
        .collect()
}

pub fn cut_rows(cuts: &[CutSummary]) -> Vec<String> {
    cuts.iter()
        .map(|c| format!("{},{},{},{},{}", c.gamma, c.stable_dim, c.alpha, c.epsilon, c.k_const))
        .collect()
}

#[derive(Serialize)]
pub struct CertificateEcho {
    pub reference_index: i64,
    pub rank: usize,
    pub k: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub flavor: DichotomyFlavor,
    pub reference_projector: Vec<Vec<f64>>,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub command: &'static str,
    pub generated_at_unix: u64,
    pub config: serde_json::Value,
    pub window: (i64, i64),
    pub convention: NonuniformExponent,
    pub certificate: CertificateEcho,
    pub report: ViolationReport,
    pub norms_csv: String,
}

#[derive(Serialize)]
pub struct SpectrumReport {
    pub command: &'static str,
    pub generated_at_unix: u64,
    pub config: serde_json::Value,
    pub window: (i64, i64),
    pub bracket: (f64, f64),
    pub bisect_tol: f64,
    pub saturated: bool,
    pub intervals: Vec<SpectralInterval>,
    pub cuts: Vec<CutSummary>,
    pub growth: Option<GrowthBound>,
    pub candidate_comparison: Option<CandidateComparison>,
    pub scan_points: usize,
    pub scan_csv: String,
}

#[derive(Serialize)]
pub struct ReduceReport {
    pub command: &'static str,
    pub generated_at_unix: u64,
    pub config: serde_json::Value,
    pub window: (i64, i64),
    pub reduced_window: (i64, i64),
    pub saturated: bool,
    pub intervals: Vec<SpectralInterval>,
    pub block_dims: Vec<usize>,
    pub degeneracy: DegeneracyClass,
    pub max_transform_norm: f64,
    pub max_inverse_norm: f64,
    pub similarity: WeakSimilarityReport,
    pub invariance: SpectrumInvarianceReport,
}

#[derive(Serialize)]
pub struct BundleEcho {
    pub dim: usize,
    pub basis: Vec<Vec<f64>>,
}

#[derive(Serialize)]
pub struct BundlesReport {
    pub command: &'static str,
    pub generated_at_unix: u64,
    pub config: serde_json::Value,
    pub gamma: f64,
    pub fiber: i64,
    pub horizon: i64,
    pub epsilon: f64,
    pub stable: BundleEcho,
    pub unstable: BundleEcho,
    pub intersection_dim: usize,
    pub max_principal_cosine: f64,
    pub complementary: bool,
}

#[derive(Serialize)]
pub struct NoGapReport {
    pub command: &'static str,
    pub generated_at_unix: u64,
    pub config: serde_json::Value,
    pub gamma: f64,
    pub fiber: i64,
    pub horizon: i64,
    pub no_spectral_gap: bool,
    pub gap_ratio: f64,
    pub note: String,
}
