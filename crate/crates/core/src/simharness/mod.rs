//! Simulation harness: covariance builders, data generation, empirical size
//! and power, and tail-ratio diagnostics.
//!
//! Group rows are `Z·R + μ`, where `Z` holds i.i.d. innovations, `R` is the
//! symmetric square root of the `D x D` covariance (`D = m·d`), and `μ` is
//! zero for group 1 and the mean model for group 2. The `D` coordinates are
//! then cut into `m` consecutive blocks of `d`.

mod diagnostics;
mod experiment;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::globaltest::{Dataset, Method, MAX_BLOCK_DIM};
use crate::hotelling::{check_sizes, BlockPair, SampleBlock};
use crate::linalg::{cholesky, sym_sqrt_report, SymMatrix};
use crate::nullcal::{TableKey, DEFAULT_B};
use crate::randdist::{derive_stream_id, fnv1a, InnovationLaw, SeededStream};

pub use diagnostics::{centered_max_sample, ks_distance, md_ratio_check, RatioPoint};
pub use experiment::{
    run_experiment, run_power_experiment, run_size_experiment, with_threads, write_reports, ExperimentReport, RateRow,
};

const DATA_TAG: u64 = 0x6461_7461; // "data"
pub const DEFAULT_HC_B: u64 = 100_000;

/// Shape of the data-generating covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum CovKind {
    /// `σ_ij = ρ^|i-j|`.
    PowerDecay { rho: f64 },
    /// `σ_ij = max(1 - |i-j| / (fraction·D), 0)`.
    LinearBand { fraction: f64 },
    Identity,
}

impl CovKind {
    pub const SIGMA1: CovKind = CovKind::PowerDecay { rho: 0.9 };
    pub const SIGMA2: CovKind = CovKind::LinearBand { fraction: 0.1 };
    pub const SIGMA3: CovKind = CovKind::LinearBand { fraction: 0.8 };

    pub fn label(&self) -> String {
        match self {
            CovKind::PowerDecay { rho } => format!("power_decay({rho})"),
            CovKind::LinearBand { fraction } => format!("linear_band({fraction})"),
            CovKind::Identity => "identity".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CovKind::PowerDecay { rho } if !(rho.abs() < 1.0) => {
                Err(Error::InvalidInput(format!("power decay needs |rho| < 1, got {rho}")))
            }
            CovKind::LinearBand { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                Err(Error::InvalidInput(format!("linear band needs fraction in (0, 1], got {fraction}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovKind,
    pub total_dim: usize,
}

impl CovarianceSpec {
    pub fn new(kind: CovKind, total_dim: usize) -> Self {
        Self { kind, total_dim }
    }

    fn cache_key(&self) -> (u64, usize) {
        let bits = match self.kind {
            CovKind::PowerDecay { rho } => fnv1a(format!("pd:{:016x}", rho.to_bits()).as_bytes()),
            CovKind::LinearBand { fraction } => fnv1a(format!("lb:{:016x}", fraction.to_bits()).as_bytes()),
            CovKind::Identity => fnv1a(b"id"),
        };
        (bits, self.total_dim)
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let lag = i.abs_diff(j);
        match self.kind {
            CovKind::PowerDecay { rho } => rho.powi(lag as i32),
            CovKind::LinearBand { fraction } => (1.0 - lag as f64 / (fraction * self.total_dim as f64)).max(0.0),
            CovKind::Identity => f64::from(u8::from(lag == 0)),
        }
    }
}

/// The `D x D` covariance matrix of `spec`, checked for definiteness.
pub fn build_covariance(spec: &CovarianceSpec) -> Result<SymMatrix> {
    spec.kind.validate()?;
    if spec.total_dim == 0 {
        return Err(Error::InvalidInput("covariance dimension must be positive".into()));
    }
    let s = SymMatrix::from_fn(spec.total_dim, |i, j| spec.entry(i, j));
    match spec.kind {
        CovKind::PowerDecay { .. } => {
            cholesky(&s)?;
        }
        CovKind::LinearBand { .. } => {
            covariance_root(spec)?;
        }
        CovKind::Identity => {}
    }
    Ok(s)
}

type RootCache = Mutex<HashMap<(u64, usize), Arc<SymMatrix>>>;

fn root_cache() -> &'static RootCache {
    static CACHE: OnceLock<RootCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Symmetric square root of the covariance, cached per spec for the life of
/// the process.
pub fn covariance_root(spec: &CovarianceSpec) -> Result<Arc<SymMatrix>> {
    spec.kind.validate()?;
    let key = spec.cache_key();
    if let Some(r) = root_cache().lock().unwrap().get(&key) {
        return Ok(Arc::clone(r));
    }
    let s = SymMatrix::from_fn(spec.total_dim, |i, j| spec.entry(i, j));
    let report = sym_sqrt_report(&s)?;
    if report.clamped > 0 {
        log::info!(
            "{} (D = {}): clamped {} slightly negative eigenvalues to zero",
            spec.kind.label(),
            spec.total_dim,
            report.clamped
        );
    }
    let root = Arc::new(report.root);
    root_cache().lock().unwrap().insert(key, Arc::clone(&root));
    Ok(root)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeanModel {
    Null,
    /// Approximately sparse: `μ_i = (-0.2)^(i-1) · 2√(σ² ln m / n2)`.
    Model1,
    /// Dense: `μ_i = 0.2 (-1)^(i-1) · 2√(σ² ln m / n2)`.
    Model2,
}

impl MeanModel {
    pub fn label(self) -> &'static str {
        match self {
            MeanModel::Null => "null",
            MeanModel::Model1 => "model1",
            MeanModel::Model2 => "model2",
        }
    }

    /// Group-2 mean shift over `total_dim` coordinates.
    pub fn mean_vector(self, total_dim: usize, m: usize, n2: usize, sigma2: f64) -> Vec<f64> {
        let amplitude = 2.0 * (sigma2 * (m as f64).ln() / n2 as f64).sqrt();
        (0..total_dim)
            .map(|i| match self {
                MeanModel::Null => 0.0,
                MeanModel::Model1 => (-0.2f64).powi(i as i32) * amplitude,
                MeanModel::Model2 => {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    0.2 * sign * amplitude
                }
            })
            .collect()
    }
}

impl fmt::Display for MeanModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

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

/// One cell of a size or power study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cov: CovKind,
    #[serde(default = "default_law")]
    pub law: InnovationLaw,
    pub mean: MeanModel,
    pub m: usize,
    pub d: usize,
    pub n1: usize,
    pub n2: usize,
    pub reps: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    #[serde(default = "default_table_b")]
    pub table_b: u64,
    #[serde(default = "default_hc_b")]
    pub hc_b: u64,
}

impl ExperimentConfig {
    pub fn total_dim(&self) -> usize {
        self.m * self.d
    }

    pub fn cov_spec(&self) -> CovarianceSpec {
        CovarianceSpec::new(self.cov, self.total_dim())
    }

    pub fn validate(&self) -> Result<()> {
        self.cov.validate()?;
        if self.m == 0 || self.d == 0 || self.d > MAX_BLOCK_DIM {
            return Err(Error::InvalidInput(format!(
                "need m >= 1 and 1 <= d <= {MAX_BLOCK_DIM}, got m = {}, d = {}",
                self.m, self.d
            )));
        }
        check_sizes(self.n1, self.n2, self.d)?;
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods requested".into()));
        }
        Ok(())
    }

    /// Null tables the requested methods read.
    pub fn table_keys(&self) -> Vec<TableKey> {
        let key = |d| TableKey { n1: self.n1, n2: self.n2, d, b: self.table_b, master_seed: self.master_seed };
        let mut keys = Vec::new();
        if self.methods.iter().any(|m| matches!(m, Method::Star | Method::Dagger)) {
            keys.push(key(self.d));
        }
        if self.methods.contains(&Method::UTMax) && !keys.contains(&key(1)) {
            keys.push(key(1));
        }
        keys
    }

    /// Hash of the fields that determine the generated data; replicate
    /// streams are derived from it, so every method sees the same datasets.
    pub fn data_hash(&self) -> u64 {
        let key = serde_json::json!({
            "cov": self.cov,
            "law": self.law,
            "mean": self.mean,
            "m": self.m,
            "d": self.d,
            "n1": self.n1,
            "n2": self.n2,
        });
        fnv1a(key.to_string().as_bytes())
    }

    pub fn replicate_stream(&self, rep: u64) -> SeededStream {
        SeededStream::new(self.master_seed, derive_stream_id(&[DATA_TAG, self.data_hash(), rep]))
    }
}

/// Prepared data generator for one configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: ExperimentConfig,
    root: Option<Arc<SymMatrix>>,
    shift: Vec<f64>,
}

impl Simulator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let root = match cfg.cov {
            CovKind::Identity => None,
            _ => Some(covariance_root(&cfg.cov_spec())?),
        };
        let shift = cfg.mean.mean_vector(cfg.total_dim(), cfg.m, cfg.n2, cfg.law.variance());
        Ok(Self { cfg: cfg.clone(), root, shift })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Group-2 mean shift.
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    /// Full `n x D` group matrices (row-major) of replicate `rep`.
    pub fn generate_raw(&self, rep: u64) -> (Vec<f64>, Vec<f64>) {
        let cfg = &self.cfg;
        let dim = cfg.total_dim();
        let mut rng = cfg.replicate_stream(rep).rng();
        let mut z = vec![0.0; dim];
        let mut draw_group = |n: usize, shift: Option<&[f64]>| {
            let mut out = vec![0.0; n * dim];
            for row in out.chunks_exact_mut(dim) {
                match &self.root {
                    Some(r) => {
                        cfg.law.fill(&mut rng, &mut z);
                        r.left_mul_into(&z, row);
                    }
                    None => cfg.law.fill(&mut rng, row),
                }
                if let Some(s) = shift {
                    for (v, mu) in row.iter_mut().zip(s) {
                        *v += mu;
                    }
                }
            }
            out
        };
        let x = draw_group(cfg.n1, None);
        let y = draw_group(cfg.n2, Some(&self.shift));
        (x, y)
    }

    pub fn generate(&self, rep: u64) -> Result<Dataset> {
        let (x, y) = self.generate_raw(rep);
        split_blocks(&x, &y, self.cfg.n1, self.cfg.n2, self.cfg.m, self.cfg.d)
    }
}

fn block_columns(data: &[f64], n: usize, dim: usize, start: usize, d: usize) -> SampleBlock {
    let mut out = Vec::with_capacity(n * d);
    for row in data.chunks_exact(dim) {
        out.extend_from_slice(&row[start..start + d]);
    }
    SampleBlock::from_trusted(n, d, out)
}

fn split_blocks(x: &[f64], y: &[f64], n1: usize, n2: usize, m: usize, d: usize) -> Result<Dataset> {
    let dim = m * d;
    let pairs = (0..m)
        .map(|i| BlockPair::new(block_columns(x, n1, dim, i * d, d), block_columns(y, n2, dim, i * d, d)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(pairs)
}

/// Dataset of replicate `rep_index` under `cfg`.
pub fn generate_dataset(cfg: &ExperimentConfig, rep_index: u64) -> Result<Dataset> {
    Simulator::new(cfg)?.generate(rep_index)
}
