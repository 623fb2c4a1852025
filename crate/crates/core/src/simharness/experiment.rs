use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, MeanModel, Simulator};
use crate::error::{Error, Result};
use crate::globaltest::{
    hc_critical, phi_dagger_stats, phi_extreme_stats, phi_star_stats, hc_test_stats, ut_max_stats, BlockStats,
    Method, TableMap,
};
use crate::nullcal::{NullTable, TableKey, TableStore};

/// Rejection rate of one method in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub method: Method,
    pub m: usize,
    pub n1: usize,
    pub n2: usize,
    pub law: String,
    pub cov: String,
    pub model: String,
    pub reps: u64,
    pub alpha: f64,
    pub rate: f64,
    pub mc_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<RateRow>,
}

impl ExperimentReport {
    pub fn rates(&self) -> BTreeMap<Method, f64> {
        self.rows.iter().map(|r| (r.method, r.rate)).collect()
    }

    pub fn rate(&self, method: Method) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method).map(|r| r.rate)
    }
}

/// Calibration objects shared read-only by all replicates.
struct Calibration {
    block: Option<Arc<NullTable>>,
    coord: Option<Arc<NullTable>>,
    hc_critical: Option<f64>,
}

impl Calibration {
    fn prepare(cfg: &ExperimentConfig, store: &TableStore) -> Result<Self> {
        let key = |d| TableKey { n1: cfg.n1, n2: cfg.n2, d, b: cfg.table_b, master_seed: cfg.master_seed };
        let wants = |ms: &[Method]| cfg.methods.iter().any(|m| ms.contains(m));
        let block = if wants(&[Method::Star, Method::Dagger]) {
            Some(store.get(key(cfg.d))?.0)
        } else {
            None
        };
        let coord = if wants(&[Method::UTMax]) { Some(store.get(key(1))?.0) } else { None };
        // surface thin tables before any replicate runs
        if let Some(t) = &block {
            t.y_alpha(cfg.m, cfg.alpha)?;
        }
        if let Some(t) = &coord {
            t.y_alpha(cfg.total_dim(), cfg.alpha)?;
        }
        let hc_critical = if wants(&[Method::HCStar]) {
            Some(hc_critical(cfg.total_dim(), cfg.alpha, cfg.hc_b, cfg.master_seed)?)
        } else {
            None
        };
        Ok(Self { block, coord, hc_critical })
    }

    fn decide(&self, method: Method, stats: &BlockStats, alpha: f64) -> Result<bool> {
        let res = match method {
            Method::Star => phi_star_stats(stats, self.block.as_deref().expect("prepared"), alpha)?,
            Method::Dagger => {
                let table = self.block.clone().expect("prepared");
                let tables: TableMap = [(table.d(), table)].into_iter().collect();
                phi_dagger_stats(stats, &tables, alpha)?
            }
            Method::Extreme => phi_extreme_stats(stats, alpha)?,
            Method::HCStar => hc_test_stats(stats, self.hc_critical.expect("prepared"), alpha)?,
            Method::UTMax => ut_max_stats(stats, self.coord.as_deref().expect("prepared"), alpha)?,
        };
        Ok(res.reject)
    }
}

/// Runs `cfg.reps` replicates and reports the rejection rate of every
/// requested method. Tables come from `store` and are keyed by
/// `(n1, n2, d, table_b, master_seed)`.
pub fn run_experiment(cfg: &ExperimentConfig, store: &TableStore) -> Result<ExperimentReport> {
    let sim = Simulator::new(cfg)?;
    let calib = Calibration::prepare(cfg, store)?;
    let coords = cfg.methods.iter().any(|m| matches!(m, Method::HCStar | Method::UTMax));
    log::info!(
        "running {} reps: m = {}, d = {}, (n1, n2) = ({}, {}), {}, {}, {}",
        cfg.reps,
        cfg.m,
        cfg.d,
        cfg.n1,
        cfg.n2,
        cfg.law.kind.label(),
        cfg.cov.label(),
        cfg.mean
    );

    let decisions: Vec<Vec<bool>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let run = || -> Result<Vec<bool>> {
                let ds = sim.generate(rep)?;
                let stats = BlockStats::compute_with(&ds, coords)?;
                cfg.methods.iter().map(|&m| calib.decide(m, &stats, cfg.alpha)).collect()
            };
            run().map_err(|e| Error::Replicate { rep, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let rows = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let hits = decisions.iter().filter(|d| d[k]).count();
            let rate = hits as f64 / cfg.reps as f64;
            RateRow {
                method,
                m: cfg.m,
                n1: cfg.n1,
                n2: cfg.n2,
                law: cfg.law.kind.label().to_string(),
                cov: cfg.cov.label(),
                model: cfg.mean.label().to_string(),
                reps: cfg.reps,
                alpha: cfg.alpha,
                rate,
                mc_stderr: (rate * (1.0 - rate) / cfg.reps as f64).sqrt(),
            }
        })
        .collect();
    Ok(ExperimentReport { config: cfg.clone(), rows })
}

/// Empirical sizes; the mean model must be `Null`.
pub fn run_size_experiment(cfg: &ExperimentConfig, store: &TableStore) -> Result<ExperimentReport> {
    if cfg.mean != MeanModel::Null {
        return Err(Error::InvalidInput(format!("size experiment needs the null mean model, got {}", cfg.mean)));
    }
    run_experiment(cfg, store)
}

/// Empirical powers; the mean model must be `Model1` or `Model2`.
pub fn run_power_experiment(cfg: &ExperimentConfig, store: &TableStore) -> Result<ExperimentReport> {
    if cfg.mean == MeanModel::Null {
        return Err(Error::InvalidInput("power experiment needs model1 or model2".into()));
    }
    run_experiment(cfg, store)
}

/// Writes the CSV rate table and the JSON report (with configs) for a
/// sequence of experiments.
pub fn write_reports(reports: &[ExperimentReport], csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in reports.iter().flat_map(|r| &r.rows) {
        w.serialize(row).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    fs::write(csv_path, bytes)?;
    let json = serde_json::to_string_pretty(&serde_json::json!({ "experiments": reports }))?;
    fs::write(json_path, json + "\n")?;
    Ok(())
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
