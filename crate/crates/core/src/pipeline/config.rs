//! TOML pipeline configuration. Defaults reproduce the bundled two-state
//! example; a config file must still state `gamma` or `derive_gamma`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fixture::PAPER_SEC4;
use crate::invariance::DEFAULT_GRID_RESOLUTION;
use crate::kernel::KernelSpec;
use crate::plant::ExperimentConfig;

use super::gamma::{Monomial, DEFAULT_OVERAPPROX_FACTOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Componentwise RKHS-norm bounds.
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    /// Derive `Γ` from known monomial expansions of the drift.
    #[serde(default)]
    pub derive_gamma: Option<DeriveGamma>,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default = "default_q")]
    pub q: Vec<Vec<f64>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveGamma {
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// One polynomial per state component.
    pub components: Vec<Vec<Monomial>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Fixture { name: String },
    /// Directory written by dataset export.
    Files { dir: PathBuf },
    /// Fresh experiments on the bundled example plant.
    Simulate { drift: ExperimentConfig, forced: ExperimentConfig },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Fixture {
            name: PAPER_SEC4.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    /// Lyapunov matrix used for certification.
    #[serde(default = "default_cert_p")]
    pub p: Option<Vec<Vec<f64>>>,
    /// Certify with the synthesized `P` instead of `p`.
    #[serde(default)]
    pub use_synthesized_p: bool,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    #[serde(default)]
    pub level_search: Option<LevelSearch>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            p: default_cert_p(),
            use_synthesized_p: false,
            level: default_level(),
            grid_resolution: default_resolution(),
            level_search: None,
        }
    }
}

/// Linear scan of `steps` levels in `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSearch {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl LevelSearch {
    pub fn candidates(&self) -> Vec<f64> {
        if self.steps <= 1 {
            return vec![self.max];
        }
        (0..self.steps)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.steps - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            trajectories: default_trajectories(),
            steps: default_steps(),
        }
    }
}

fn default_kernel() -> KernelSpec {
    KernelSpec::cubic()
}
fn default_lambda() -> f64 {
    1e-7
}
fn default_q() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![0.0, 1.0]]
}
fn default_alpha() -> f64 {
    1.0
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_factor() -> f64 {
    DEFAULT_OVERAPPROX_FACTOR
}
fn default_cert_p() -> Option<Vec<Vec<f64>>> {
    Some(vec![vec![1.335, 0.0], vec![0.0, 1.335]])
}
fn default_level() -> f64 {
    11.5
}
fn default_resolution() -> usize {
    DEFAULT_GRID_RESOLUTION
}
fn default_trajectories() -> usize {
    100
}
fn default_steps() -> usize {
    200
}

/// Drift of the two-state example written as monomials.
pub fn example_monomials() -> Vec<Vec<Monomial>> {
    vec![
        vec![Monomial::new(1.0, vec![0, 1]), Monomial::new(1.0, vec![3, 0])],
        vec![Monomial::new(0.5, vec![1, 0]), Monomial::new(0.2, vec![0, 2])],
    ]
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kernel: default_kernel(),
            lambda: default_lambda(),
            gamma: Some(vec![3.0, 0.4]),
            derive_gamma: Some(DeriveGamma {
                factor: DEFAULT_OVERAPPROX_FACTOR,
                components: example_monomials(),
            }),
            data: DataSource::default(),
            q: default_q(),
            alpha: default_alpha(),
            certify: CertifyConfig::default(),
            simulate: SimulateConfig::default(),
            output_dir: default_output_dir(),
            seed: 0,
        }
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("λ must be nonnegative, got {}", self.lambda)));
        }
        if self.gamma.is_none() && self.derive_gamma.is_none() {
            return Err(Error::Config(
                "no Γ given: set `gamma` or a `derive_gamma` directive".into(),
            ));
        }
        if let Some(g) = &self.gamma {
            if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config("Γ entries must be nonnegative".into()));
            }
        }
        if let Some(d) = &self.derive_gamma {
            if !(d.factor.is_finite() && d.factor >= 1.0) {
                return Err(Error::Config("derive_gamma.factor must be at least 1".into()));
            }
        }
        let q = self.q_matrix()?;
        if q.nrows() != q.ncols() {
            return Err(Error::Config("Q must be square".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config("α must be nonnegative".into()));
        }
        if let Some(p) = &self.certify.p {
            matrix_from_rows(p, "certify.p")?;
        }
        if !(self.certify.level.is_finite() && self.certify.level > 0.0) {
            return Err(Error::Config("certify.level must be positive".into()));
        }
        if self.certify.grid_resolution < 2 {
            return Err(Error::Config("certify.grid_resolution must be at least 2".into()));
        }
        if let Some(s) = &self.certify.level_search {
            if !(s.min > 0.0 && s.max >= s.min && s.steps >= 1) {
                return Err(Error::Config("level_search needs 0 < min ≤ max and steps ≥ 1".into()));
            }
        }
        Ok(())
    }

    pub fn q_matrix(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows(&self.q, "q")
    }

    /// `None` selects the synthesized `P`.
    pub fn cert_p_matrix(&self) -> Result<Option<DMatrix<f64>>> {
        if self.certify.use_synthesized_p {
            return Ok(None);
        }
        self.certify.p.as_deref().map(|p| matrix_from_rows(p, "certify.p")).transpose()
    }

    /// SHA-256 of the canonical JSON form of the configuration, ignoring the
    /// output directory.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn missing_gamma_is_a_config_error() {
        assert!(matches!(PipelineConfig::from_toml_str(""), Err(Error::Config(_))));
        let cfg = PipelineConfig::from_toml_str("gamma = [3.0, 0.4]").unwrap();
        assert_eq!(cfg.lambda, 1e-7);
        assert_eq!(cfg.certify.level, 11.5);
    }

    #[test]
    fn negative_lambda_rejected() {
        let r = PipelineConfig::from_toml_str("gamma = [1.0, 1.0]\nlambda = -1.0");
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn hash_changes_with_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.seed = 7;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
