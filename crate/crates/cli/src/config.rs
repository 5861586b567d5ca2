//! Run configuration: one structured document drives every subcommand, so a
//! report plus its config echo is always enough to reproduce a run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use nedspec_core::{
    propagate_projector, DichotomyCertificate, DichotomyFlavor, FitConfig, MatrixSequence,
    NonuniformExponent, Window,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub window: WindowSpec,
    pub gamma_bracket: Option<(f64, f64)>,
    pub bisect_tol: Option<f64>,
    pub alpha_grid: Option<Vec<f64>>,
    pub eps_grid: Option<Vec<f64>>,
    /// Power-iteration depth for bundle fibers; defaults to half the window,
    /// clipped to the table range around the fiber.
    pub horizon: Option<i64>,
    /// Applies to certificate verification. Spectrum estimation always uses
    /// the two-sided absolute convention internally.
    pub nonuniform_exponent: Option<NonuniformExponent>,
    pub output: Option<PathBuf>,
    pub report_format: Option<ReportFormat>,
    pub certificate: Option<CertificateSource>,
    pub gamma: Option<f64>,
    pub fiber: Option<i64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub k_min: i64,
    pub k_max: i64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub name: Option<String>,
    pub params: Option<Vec<f64>>,
    pub dimension: Option<usize>,
    pub k_min: Option<i64>,
    /// Row-major matrices, one per transition index starting at `k_min`.
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
    pub invertibility_tolerance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Builtin,
    Table,
}

/// Either an inline certificate object or a path to a file holding one,
/// resolved relative to the config file.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum CertificateSource {
    Path(PathBuf),
    Inline(CertificateSpec),
}

/// Constants plus a reference projector; the projector family is realized by
/// propagation along the flow over the run window.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    pub reference_index: i64,
    /// Row-major reference projector.
    pub projector: Vec<Vec<f64>>,
    pub k: f64,
    pub alpha: f64,
    pub epsilon: f64,
    /// Derived from the constants when absent: ε = 1 gives uniform_ED,
    /// αε² < 1 gives strong_NED, anything else plain NED.
    pub flavor: Option<DichotomyFlavor>,
}

pub struct LoadedConfig {
    /// Parsed file contents, echoed verbatim into every report.
    pub raw: serde_json::Value,
    pub config: RunConfig,
    /// Directory of the config file, the base for relative paths inside it.
    pub dir: PathBuf,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config file {}", path.display()))?;
    let config: RunConfig = serde_json::from_value(raw.clone())
        .with_context(|| format!("invalid config schema in {}", path.display()))?;
    let dir = match path.parent() {
        Some(p) if p.as_os_str().is_empty() => PathBuf::from("."),
        Some(p) => p.to_path_buf(),
        None => PathBuf::from("."),
    };
    Ok(LoadedConfig { raw, config, dir })
}

impl RunConfig {
    pub fn window(&self) -> Result<Window> {
        Ok(Window::new(self.window.k_min, self.window.k_max)?)
    }

    pub fn bisect_tol(&self) -> f64 {
        self.bisect_tol.unwrap_or(1e-3)
    }

    pub fn fit_config(&self) -> FitConfig {
        let mut fit = FitConfig::default();
        if self.alpha_grid.is_some() {
            fit.alpha_grid = self.alpha_grid.clone();
        }
        if let Some(g) = &self.eps_grid {
            fit.eps_grid = g.clone();
        }
        fit
    }

    pub fn convention(&self) -> NonuniformExponent {
        self.nonuniform_exponent.unwrap_or_default()
    }
}

fn parse_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        bail!("{what} must have at least one row");
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            bail!("{what} must be square: row {i} has {} entries, expected {n}", row.len());
        }
    }
    Ok(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
}

pub fn build_system(spec: &SystemSpec) -> Result<MatrixSequence> {
    let mut sys = match spec.kind {
        SystemKind::Builtin => {
            if spec.k_min.is_some() || spec.matrices.is_some() {
                bail!("builtin system takes `name` and `params`, not table fields");
            }
            let name = spec.name.as_deref().context("builtin system needs a `name`")?;
            let params = spec.params.clone().unwrap_or_default();
            MatrixSequence::builtin_example(name, &params)?
        }
        SystemKind::Table => {
            if spec.name.is_some() || spec.params.is_some() {
                bail!("table system takes `k_min` and `matrices`, not builtin fields");
            }
            let k_min = spec.k_min.context("table system needs `k_min`")?;
            let rows = spec.matrices.as_ref().context("table system needs `matrices`")?;
            let mats = rows
                .iter()
                .enumerate()
                .map(|(i, m)| parse_matrix(m, &format!("matrix {i}")))
                .collect::<Result<Vec<_>>>()?;
            MatrixSequence::from_table(k_min, mats)?
        }
    };
    if let Some(tol) = spec.invertibility_tolerance {
        sys = sys.with_invertibility_tolerance(tol);
    }
    if let Some(d) = spec.dimension {
        if d != sys.dim() {
            bail!("config says dimension {d} but the system has dimension {}", sys.dim());
        }
    }
    Ok(sys)
}

pub fn load_certificate_spec(source: &CertificateSource, dir: &Path) -> Result<CertificateSpec> {
    match source {
        CertificateSource::Inline(spec) => Ok(spec.clone()),
        CertificateSource::Path(path) => {
            let full = if path.is_relative() { dir.join(path) } else { path.clone() };
            let text = fs::read_to_string(&full)
                .with_context(|| format!("reading certificate file {}", full.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid certificate schema in {}", full.display()))
        }
    }
}

pub fn build_certificate(
    spec: &CertificateSpec,
    sys: &MatrixSequence,
    w: &Window,
) -> Result<DichotomyCertificate> {
    let p_ref = parse_matrix(&spec.projector, "certificate projector")?;
    let projector = propagate_projector(sys, &p_ref, spec.reference_index, w)?;
    let flavor = spec.flavor.unwrap_or_else(|| {
        if spec.epsilon <= 1.0 + 1e-12 {
            DichotomyFlavor::UniformEd
        } else if spec.alpha * spec.epsilon * spec.epsilon < 1.0 {
            DichotomyFlavor::StrongNed
        } else {
            DichotomyFlavor::Ned
        }
    });
    Ok(DichotomyCertificate {
        projector,
        k_const: spec.k,
        alpha: spec.alpha,
        epsilon: spec.epsilon,
        flavor,
    })
}
