use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;
use t2max::globaltest::{
    hc_critical, hc_test_stats, phi_dagger_stats, phi_extreme_stats, phi_star_stats, ut_max_stats, BlockStats,
    GlobalTestResult, Method, TableMap,
};
use t2max::hotelling::{chisq_pvalue, two_sample_t2};
use t2max::nullcal::{NullTable, TableKey, TableSource, TableStore};
use t2max::randdist::chisq_isf;
use t2max::simharness::{md_ratio_check, run_experiment, write_reports};
use t2max::Error;

use crate::config::RunConfig;
use crate::dataset::{self, LoadedDataset};
use crate::Command;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Rough single-thread throughput of null-table simulation, in standard
/// normal draws per second; only used for the auto-build warning.
const NORMALS_PER_SEC: f64 = 4.0e7;

#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub error: anyhow::Error,
}

type CmdResult<T = ()> = Result<T, CmdError>;

fn usage(error: impl Into<anyhow::Error>) -> CmdError {
    CmdError { code: EXIT_USAGE, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> CmdError {
    CmdError { code: EXIT_RUNTIME, error: error.into() }
}

trait OrExit<T> {
    fn or_usage(self) -> CmdResult<T>;
    fn or_runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_usage(self) -> CmdResult<T> {
        self.map_err(usage)
    }

    fn or_runtime(self) -> CmdResult<T> {
        self.map_err(runtime)
    }
}

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::T2 { dataset, out, max_dim } => cmd_t2(&dataset, out.as_deref(), max_dim),
        Command::Calibrate { n1, n2, d, b, seed, tables } => {
            let store = open_store(tables.cache_dir, tables.no_auto_build)?;
            cmd_calibrate(&store, TableKey { n1, n2, d, b, master_seed: seed })
        }
        Command::Test { dataset, method, alpha, b, seed, hc_b, out, max_dim, tables } => {
            let store = open_store(tables.cache_dir, tables.no_auto_build)?;
            let ds = dataset::load(&dataset, max_dim).or_usage()?;
            let opts = TestOptions { method, alpha, b, seed, hc_b };
            cmd_test(&ds, &opts, &store, out.as_deref())
        }
        Command::Simulate { config, preset, list_presets, out, tables } => {
            if list_presets {
                for name in RunConfig::preset_names() {
                    println!("{name}");
                }
                return Ok(());
            }
            let cfg = match (config, preset) {
                (Some(path), _) => RunConfig::load(&path),
                (None, Some(name)) => RunConfig::preset(&name),
                (None, None) => Err(anyhow!("--config or --preset is required")),
            }
            .or_usage()?;
            let stem = out
                .or_else(|| cfg.out.clone())
                .or_else(|| cfg.name.as_ref().map(PathBuf::from))
                .ok_or_else(|| usage(anyhow!("no output stem: pass --out or set \"out\" in the config")))?;
            let store = open_store(tables.cache_dir.or_else(|| cfg.cache_dir.clone()), tables.no_auto_build)?;
            cmd_simulate(&cfg, &store, &stem)
        }
        Command::Mdcheck { n1, n2, d, reps, grid, levels, seed, out } => {
            cmd_mdcheck(n1, n2, d, reps, &grid, &levels, seed, out.as_deref())
        }
    }
}

fn open_store(cache_dir: Option<PathBuf>, no_auto_build: bool) -> CmdResult<TableStore> {
    match cache_dir {
        Some(dir) => Ok(TableStore::with_cache_dir(dir, !no_auto_build)),
        None if no_auto_build => Err(usage(anyhow!("--no-auto-build needs a cache directory (--cache-dir or T2MAX_CACHE_DIR)"))),
        None => Ok(TableStore::in_memory()),
    }
}

fn output(path: Option<&Path>) -> CmdResult<Box<dyn Write>> {
    match path {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display())).or_runtime()?;
            Ok(Box::new(io::BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

/// Fetches a table, announcing a simulation with a cost estimate first.
fn fetch_table(store: &TableStore, key: TableKey) -> CmdResult<Arc<NullTable>> {
    fetch_with_source(store, key).map(|(t, _)| t)
}

fn fetch_with_source(store: &TableStore, key: TableKey) -> CmdResult<(Arc<NullTable>, TableSource)> {
    if !store.is_cached(&key) {
        let normals = key.b as f64 * ((key.n1 + key.n2) * key.d) as f64;
        let secs = normals / NORMALS_PER_SEC / rayon::current_num_threads() as f64;
        log::warn!(
            "null table (n1 = {}, n2 = {}, d = {}, b = {}, seed = {}) not cached; simulating ~{:.1e} normal draws (est. {:.0} s)",
            key.n1,
            key.n2,
            key.d,
            key.b,
            key.master_seed,
            normals,
            secs.max(1.0)
        );
    }
    store.get(key).or_runtime()
}

#[derive(Serialize)]
struct T2Row<'a> {
    block_id: &'a str,
    d: usize,
    t2: f64,
    chisq_pvalue: f64,
}

fn cmd_t2(path: &Path, out: Option<&Path>, max_dim: usize) -> CmdResult {
    let ds = dataset::load(path, max_dim).or_usage()?;
    let mut w = csv::Writer::from_writer(output(out)?);
    for (id, pair) in ds.block_ids.iter().zip(ds.dataset.pairs()) {
        let t2 = two_sample_t2(pair).map_err(|e| runtime(anyhow!("block {id:?}: {e}")))?;
        let chisq_pvalue = chisq_pvalue(t2, pair.d()).or_runtime()?;
        w.serialize(T2Row { block_id: id, d: pair.d(), t2, chisq_pvalue }).or_runtime()?;
    }
    w.flush().or_runtime()
}

fn cmd_calibrate(store: &TableStore, key: TableKey) -> CmdResult {
    let (table, source) = fetch_with_source(store, key)?;
    let s = table.summary();
    let source = match source {
        TableSource::Built => "built",
        TableSource::Disk | TableSource::Memory => "cache hit",
    };
    if let Some(p) = store.cache_path(&key) {
        println!("table: {} ({source})", p.display());
    } else {
        println!("table: in memory ({source})");
    }
    println!("n1 = {}, n2 = {}, d = {}, b = {}, seed = {}", s.n1, s.n2, s.d, s.b, s.master_seed);
    println!("min = {:.6}, median = {:.6}, max = {:.6}", s.min, s.median, s.max);
    for (p, q) in &s.upper_quantiles {
        println!("upper {p:e} quantile = {q:.6}");
    }
    Ok(())
}

pub struct TestOptions {
    pub method: Method,
    pub alpha: f64,
    pub b: u64,
    pub seed: u64,
    pub hc_b: u64,
}

#[derive(Serialize)]
struct TestReport<'a> {
    #[serde(flatten)]
    result: &'a GlobalTestResult,
    n1: usize,
    n2: usize,
    block_ids: &'a [String],
}

fn cmd_test(ds: &LoadedDataset, opts: &TestOptions, store: &TableStore, out: Option<&Path>) -> CmdResult {
    let data = &ds.dataset;
    let (n1, n2) = (data.n1(), data.n2());
    if opts.method == Method::Star && data.uniform_dim().is_none() {
        let dims: std::collections::BTreeSet<usize> = data.dims().into_iter().collect();
        return Err(runtime(anyhow!(
            "blocks have mixed dimensions {dims:?}; the star test needs a common d, use --method dagger"
        )));
    }
    let coords = matches!(opts.method, Method::HCStar | Method::UTMax);
    let stats = BlockStats::compute_with(data, coords).map_err(|e| match e {
        Error::SingularScale { block: Some(i) } => runtime(anyhow!("singular scale matrix in block {:?}", ds.block_ids[i])),
        e => runtime(e),
    })?;
    let key = |d| TableKey { n1, n2, d, b: opts.b, master_seed: opts.seed };
    let result = match opts.method {
        Method::Star => {
            let table = fetch_table(store, key(data.dims()[0]))?;
            phi_star_stats(&stats, &table, opts.alpha)
        }
        Method::Dagger => {
            let mut tables = TableMap::new();
            for d in data.dims() {
                if !tables.contains_key(&d) {
                    tables.insert(d, fetch_table(store, key(d))?);
                }
            }
            phi_dagger_stats(&stats, &tables, opts.alpha)
        }
        Method::Extreme => phi_extreme_stats(&stats, opts.alpha),
        Method::HCStar => hc_critical(data.total_dim(), opts.alpha, opts.hc_b, opts.seed)
            .and_then(|c| hc_test_stats(&stats, c, opts.alpha)),
        Method::UTMax => {
            let table = fetch_table(store, key(1))?;
            ut_max_stats(&stats, &table, opts.alpha)
        }
    }
    .or_runtime()?;

    let report = TestReport { result: &result, n1, n2, block_ids: &ds.block_ids };
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &report).or_runtime()?;
    writeln!(w).and_then(|_| w.flush()).or_runtime()?;
    let verdict = if result.reject { "reject" } else { "do not reject" };
    let line = format!(
        "{}: statistic = {:.7}, threshold = {:.7}, alpha = {}, m = {} -> {verdict}",
        result.method, result.statistic, result.threshold, result.alpha, result.m
    );
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, store: &TableStore, stem: &Path) -> CmdResult {
    let exps = cfg.experiments();
    let label = cfg.name.as_deref().unwrap_or("run");
    let mut reports = Vec::with_capacity(exps.len());
    for (i, exp) in exps.iter().enumerate() {
        let start = Instant::now();
        for key in exp.table_keys() {
            fetch_table(store, key)?;
        }
        let rep = run_experiment(exp, store)
            .map_err(|e| runtime(anyhow!("{label} (n1, n2) = ({}, {}): {e}", exp.n1, exp.n2)))?;
        let rates: BTreeMap<_, _> = rep.rates();
        let summary: Vec<String> = rates.iter().map(|(m, r)| format!("{m} = {r:.4}")).collect();
        eprintln!(
            "[{}/{}] {label} (n1, n2) = ({}, {}): {} ({:.1} s)",
            i + 1,
            exps.len(),
            exp.n1,
            exp.n2,
            summary.join(", "),
            start.elapsed().as_secs_f64()
        );
        reports.push(rep);
    }
    let csv_path = with_ext(stem, "csv");
    let json_path = with_ext(stem, "json");
    write_reports(&reports, &csv_path, &json_path).or_runtime()?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[allow(clippy::too_many_arguments)]
fn cmd_mdcheck(
    n1: usize,
    n2: usize,
    d: usize,
    reps: u64,
    grid: &[f64],
    levels: &[f64],
    seed: u64,
    out: Option<&Path>,
) -> CmdResult {
    let mut x2 = grid.to_vec();
    for &p in levels {
        x2.push(chisq_isf(d, p).or_usage()?);
    }
    if x2.is_empty() {
        return Err(usage(anyhow!("give grid points with --grid or --levels")));
    }
    let points = md_ratio_check(n1, n2, d, reps, &x2, seed).or_runtime()?;
    let mut w = csv::Writer::from_writer(output(out)?);
    for p in &points {
        w.serialize(p).or_runtime()?;
    }
    w.flush().or_runtime()
}
