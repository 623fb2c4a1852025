//! Run configurations for `t2max simulate`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use t2max::globaltest::Method;
use t2max::nullcal::DEFAULT_B;
use t2max::randdist::InnovationLaw;
use t2max::simharness::{CovKind, ExperimentConfig, MeanModel, DEFAULT_HC_B};

const PRESETS: &[(&str, &str)] = &[
    ("table1-sigma1-normal-m50", include_str!("../presets/table1-sigma1-normal-m50.json")),
    ("table2-model1-m50", include_str!("../presets/table2-model1-m50.json")),
    ("table2-model2-m50", include_str!("../presets/table2-model2-m50.json")),
    ("smoke", include_str!("../presets/smoke.json")),
];

fn default_alpha() -> f64 {
    0.05
}
fn default_law() -> InnovationLaw {
    InnovationLaw::NORMAL
}
fn default_table_b() -> u64 {
    DEFAULT_B
}
fn default_hc_b() -> u64 {
    DEFAULT_HC_B
}

/// A sweep over `(n1, n2)` pairs sharing every other setting. Unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub cov: CovKind,
    #[serde(default = "default_law")]
    pub law: InnovationLaw,
    pub mean: MeanModel,
    pub m: usize,
    pub d: usize,
    /// `(n1, n2)` pairs, run in order.
    pub sizes: Vec<(usize, usize)>,
    pub reps: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    #[serde(default = "default_table_b")]
    pub table_b: u64,
    #[serde(default = "default_hc_b")]
    pub hc_b: u64,
    /// Output stem: reports go to `<out>.csv` and `<out>.json`.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.sizes.is_empty() {
            bail!("sizes must list at least one (n1, n2) pair");
        }
        for exp in cfg.experiments() {
            exp.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("invalid run config {}", path.display()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).with_context(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            format!("unknown preset {name:?} (available: {})", names.join(", "))
        })?;
        Self::from_json(text).with_context(|| format!("preset {name}"))
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        self.sizes
            .iter()
            .map(|&(n1, n2)| ExperimentConfig {
                cov: self.cov,
                law: self.law,
                mean: self.mean,
                m: self.m,
                d: self.d,
                n1,
                n2,
                reps: self.reps,
                alpha: self.alpha,
                methods: self.methods.clone(),
                master_seed: self.master_seed,
                table_b: self.table_b,
                hc_b: self.hc_b,
            })
            .collect()
    }
}
