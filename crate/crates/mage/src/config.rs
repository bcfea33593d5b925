//! Pipeline configuration: one TOML file, unknown keys rejected by name.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mage_core::generator::{DecodeMode, GeneratorConfig, LossMode};
use mage_core::junction::SpanningTree;
use mage_core::motif::Method;
use mage_core::motif_id::{AttentionConfig, DEFAULT_THETA};
use mage_core::target::TargetConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const OUTPUT_ROOT_ENV: &str = "MAGE_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT: &str = "mage-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// deterministic synthetic stand-in for Mutagenicity
    #[default]
    Surrogate,
    /// TU benchmark directory
    Tu,
    /// `MAGE-DATASET 1` text file
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub path: Option<PathBuf>,
    /// TU file prefix
    pub name: String,
    /// `mutagenicity` or `synthetic`
    pub node_map: String,
    /// surrogate size
    pub graphs: usize,
    /// surrogate stores hydrogens as atoms, as the TU release does
    pub hydrogens: bool,
    /// keep only the first `limit` graphs
    pub limit: Option<usize>,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Surrogate,
            path: None,
            name: "Mutagenicity".into(),
            node_map: "mutagenicity".into(),
            graphs: 500,
            hydrogens: true,
            limit: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    pub hidden: usize,
    /// permits a hidden size outside {16, 64}
    pub allow_any_hidden: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub learn_gates: bool,
}

impl Default for TargetSection {
    fn default() -> Self {
        let t = TargetConfig::default();
        Self { hidden: 16, allow_any_hidden: false, lr: t.lr, epochs: t.epochs, batch_size: t.batch_size, seed: t.seed, learn_gates: t.learn_gates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotifSection {
    /// `bridge` or `rings_and_bonds`
    pub method: String,
    pub theta: f64,
    pub attention_lr: f64,
    pub attention_epochs: usize,
    pub attention_seed: u64,
    /// classes to explain; empty means all
    pub classes: Vec<usize>,
}

impl Default for MotifSection {
    fn default() -> Self {
        let a = AttentionConfig::default();
        Self {
            method: Method::default().to_string(),
            theta: DEFAULT_THETA,
            attention_lr: a.lr,
            attention_epochs: a.epochs,
            attention_seed: a.seed,
            classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub epochs: usize,
    pub lr: f64,
    /// `recon`, `property` or `both`
    pub mode: String,
    pub beta: f64,
    pub max_clusters: usize,
    pub max_children: usize,
    pub max_retries: usize,
    /// `max_weight` or `uniform`
    pub spanning: String,
    pub seed: u64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            epochs: g.epochs,
            lr: g.lr,
            mode: g.mode.to_string(),
            beta: g.beta,
            max_clusters: g.max_clusters,
            max_children: g.max_children,
            max_retries: g.max_retries,
            spanning: "max_weight".into(),
            seed: g.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub num_samples: usize,
    /// `greedy` or `stochastic`
    pub decode: String,
    pub seed: u64,
    /// graph-text files written per class, best first
    pub top_k: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self { num_samples: 1000, decode: "stochastic".into(), seed: 0, top_k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// defaults to `$MAGE_OUTPUT_ROOT`, then `mage-out`
    pub output: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub target: TargetSection,
    pub motifs: MotifSection,
    pub generator: GeneratorSection,
    pub sampling: SamplingSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).context("invalid config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.motifs.theta >= 0.0) {
            bail!("motifs.theta must be non-negative, got {}", self.motifs.theta);
        }
        if !self.target.allow_any_hidden && ![16, 64].contains(&self.target.hidden) {
            bail!("target.hidden must be 16 or 64 (set target.allow_any_hidden to override), got {}", self.target.hidden);
        }
        if self.target.hidden == 0 {
            bail!("target.hidden must be positive");
        }
        if self.dataset.kind != DatasetKind::Surrogate && self.dataset.path.is_none() {
            bail!("dataset.path is required for dataset.kind = {:?}", self.dataset.kind);
        }
        self.method()?;
        self.loss_mode()?;
        self.decode_mode()?;
        self.spanning()?;
        self.node_map()?;
        Ok(())
    }

    pub fn output_root(&self) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }

    pub fn method(&self) -> Result<Method> {
        Ok(self.motifs.method.parse()?)
    }

    pub fn loss_mode(&self) -> Result<LossMode> {
        Ok(self.generator.mode.parse()?)
    }

    pub fn decode_mode(&self) -> Result<DecodeMode> {
        Ok(self.sampling.decode.parse()?)
    }

    pub fn node_map(&self) -> Result<crate::tu::NodeMap> {
        self.dataset.node_map.parse().map_err(anyhow::Error::msg)
    }

    pub fn spanning(&self) -> Result<SpanningTree> {
        match self.generator.spanning.as_str() {
            "max_weight" => Ok(SpanningTree::MaxWeight),
            "uniform" => Ok(SpanningTree::UniformRandom(self.generator.seed)),
            other => bail!("unknown generator.spanning `{other}` (expected max_weight or uniform)"),
        }
    }

    pub fn target_config(&self) -> TargetConfig {
        let t = &self.target;
        TargetConfig { hidden: t.hidden, lr: t.lr, epochs: t.epochs, batch_size: t.batch_size, seed: t.seed, learn_gates: t.learn_gates }
    }

    pub fn attention_config(&self) -> AttentionConfig {
        let m = &self.motifs;
        AttentionConfig { lr: m.attention_lr, epochs: m.attention_epochs, seed: m.attention_seed, ..AttentionConfig::default() }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let g = &self.generator;
        Ok(GeneratorConfig {
            epochs: g.epochs,
            lr: g.lr,
            mode: self.loss_mode()?,
            beta: g.beta,
            max_clusters: g.max_clusters,
            max_children: g.max_children,
            max_retries: g.max_retries,
            spanning: self.spanning()?,
            seed: g.seed,
        })
    }

    /// Sets every seed from one value.
    pub fn reseed(&mut self, seed: u64) {
        self.target.seed = seed;
        self.motifs.attention_seed = seed;
        self.generator.seed = seed;
        self.sampling.seed = seed;
    }

    pub fn digest(&self) -> String {
        digest_of(&[&self.to_toml()])
    }
}

/// Hex SHA-256 over length-prefixed parts.
pub fn digest_of(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Digest of one config section.
pub fn section_digest<T: Serialize>(name: &str, section: &T) -> String {
    digest_of(&[name, &serde_json::to_string(section).expect("section serializes")])
}
