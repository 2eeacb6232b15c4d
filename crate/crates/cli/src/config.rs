use std::fs;
use std::path::{Path, PathBuf};

use lqmfg::actor::ActorConfig;
use lqmfg::critic::{CriticConfig, CriticKind};
use lqmfg::linalg::{self, Vector};
use lqmfg::mfg::MfgConfig;
use lqmfg::model::{LinearGaussianPolicy, MfgModel, ModelDoc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// A model given inline, as a path relative to the config file, or as the
/// keyword `"scalar-reference"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(String),
    Inline(ModelDoc),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactSection {
    pub mu0: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ExactSection {
    fn default() -> Self {
        Self {
            mu0: None,
            tol: 1e-12,
            max_iters: 10_000,
        }
    }
}

/// Policy and mean-field state a single evaluation runs at.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Operating {
    pub mu: Option<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
}

impl Operating {
    pub fn resolve(&self, model: &MfgModel) -> Result<(Vector, LinearGaussianPolicy), Failure> {
        let mu = match &self.mu {
            Some(v) => Vector::from_vec(v.clone()),
            None => Vector::zeros(model.state_dim()),
        };
        model.check_mu(&mu)?;
        let mut pol = LinearGaussianPolicy::zero(model);
        if let Some(rows) = &self.k {
            pol.gain = linalg::mat_from_rows(rows).map_err(|e| Failure::config(format!("K: {e}")))?;
        }
        if let Some(b) = &self.b {
            pol.intercept = Vector::from_vec(b.clone());
        }
        model.check_policy(&pol)?;
        Ok((mu, pol))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSection {
    pub kind: CriticKind,
    /// Trajectory lengths to benchmark; each seed is reused across the sweep.
    #[serde(rename = "T_sweep")]
    pub t_sweep: Vec<usize>,
    pub at: Operating,
    pub settings: CriticConfig,
}

impl Default for CriticSection {
    fn default() -> Self {
        Self {
            kind: CriticKind::PdGtd,
            t_sweep: vec![1_000, 10_000, 100_000],
            at: Operating::default(),
            settings: CriticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorSection {
    pub at: Operating,
    pub settings: ActorConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub exact: ExactSection,
    #[serde(default)]
    pub critic: CriticSection,
    #[serde(default)]
    pub actor: ActorSection,
    #[serde(default)]
    pub mfg: MfgConfig,
}

/// A loaded config with the model resolved.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub model: MfgModel,
    pub seeds: Vec<u64>,
}

pub fn load(path: &Path, seeds_flag: Option<&str>) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("config schema error in {}: {e}", path.display())))?;
    let model = match &config.model {
        ModelSource::Path(p) if p == "scalar-reference" => MfgModel::scalar_reference(),
        ModelSource::Path(p) => {
            let full = path.parent().unwrap_or(Path::new(".")).join(p);
            let text = fs::read_to_string(&full)
                .map_err(|e| Failure::config(format!("cannot read model {}: {e}", full.display())))?;
            MfgModel::from_json_str(&text)?
        }
        ModelSource::Inline(doc) => MfgModel::try_from(doc.clone())?,
    };
    config.model = ModelSource::Inline(model.to_json_doc());
    let seeds = match seeds_flag {
        Some(s) => parse_seeds(s)?,
        None => config.seeds.clone().unwrap_or_else(|| vec![0]),
    };
    if seeds.is_empty() {
        return Err(Failure::config("seed list is empty"));
    }
    config.seeds = Some(seeds.clone());
    Ok(Loaded { config, model, seeds })
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u64>().map_err(|e| Failure::config(format!("bad seed {t:?}: {e}"))))
        .collect()
}

/// SHA-256 of the canonical JSON of the effective config for `command`,
/// excluding the seed list and output directory.
pub fn config_hash(command: &str, config: &ExperimentConfig) -> String {
    let mut config = config.clone();
    config.seeds = None;
    config.out = None;
    let value = serde_json::json!({ "command": command, "config": config });
    // serde_json::Value keeps object keys sorted, so this is canonical.
    let text = serde_json::to_string(&value).expect("config serialises");
    hex::encode(Sha256::digest(text.as_bytes()))
}
