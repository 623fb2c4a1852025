//! Monte-Carlo null tables for the single-block T² statistic.
//!
//! A [`NullTable`] holds `b` sorted draws of T² computed from two groups of
//! i.i.d. `N(0, I_d)` vectors of sizes `n1` and `n2`. Its empirical upper tail
//! stands in for the exact finite-sample null law when calibrating the max
//! statistic: the threshold `y` solves `exp(-m F(y)) = 1 - α`.
//!
//! Replicates are simulated in chunks of [`CHUNK`]; chunk `c` draws from the
//! stream `derive_stream_id([stream_tag, c])`, so a table depends only on
//! `(n1, n2, d, b, master_seed)` and never on the thread count.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hotelling::{check_sizes, T2Workspace};
use crate::randdist::{derive_stream_id, InnovationLaw, SeededStream};

pub const DEFAULT_B: u64 = 2_000_000;
pub const MIN_B: u64 = 1_000;
pub const CHUNK: u64 = 4_096;

/// Expected exceedances demanded at the calibrated tail probability.
pub const EXCEEDANCE_FLOOR: f64 = 100.0;

const MAGIC: &[u8; 4] = b"T2NT";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 32;
const NULL_TABLE_TAG: u64 = 0x7432_6e75_6c6c; // "t2null"

#[derive(Debug, Clone, PartialEq)]
pub struct NullTable {
    n1: usize,
    n2: usize,
    d: usize,
    master_seed: u64,
    stream_tag: u64,
    draws: Vec<f64>,
}

/// Stream tag of the table for `(n1, n2, d)`; keeps tables of different
/// shapes on disjoint streams under one master seed.
pub fn stream_tag(n1: usize, n2: usize, d: usize) -> u64 {
    derive_stream_id(&[NULL_TABLE_TAG, n1 as u64, n2 as u64, d as u64])
}

/// Simulates `count` null T² values in chunk order (unsorted).
pub(crate) fn simulate_null_t2(
    n1: usize,
    n2: usize,
    d: usize,
    count: u64,
    master_seed: u64,
    tag: u64,
) -> Result<Vec<f64>> {
    check_sizes(n1, n2, d)?;
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(count - c * CHUNK) as usize;
            let mut rng = SeededStream::new(master_seed, derive_stream_id(&[tag, c])).rng();
            let mut ws = T2Workspace::new(d);
            let mut x = vec![0.0; n1 * d];
            let mut y = vec![0.0; n2 * d];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                InnovationLaw::NORMAL.fill(&mut rng, &mut x);
                InnovationLaw::NORMAL.fill(&mut rng, &mut y);
                out.push(ws.two_sample(&x, n1, &y, n2, d)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

pub fn build_null_table(n1: usize, n2: usize, d: usize, b: u64, master_seed: u64) -> Result<NullTable> {
    if b < MIN_B {
        return Err(Error::InvalidInput(format!("null table needs b >= {MIN_B}, got {b}")));
    }
    check_sizes(n1, n2, d)?;
    let tag = stream_tag(n1, n2, d);
    let mut draws = simulate_null_t2(n1, n2, d, b, master_seed, tag)?;
    draws.sort_unstable_by(f64::total_cmp);
    Ok(NullTable { n1, n2, d, master_seed, stream_tag: tag, draws })
}

/// `k = ⌈p·b⌉`, with a relative slack of 1e-9 so that `p` values carrying
/// rounding error (e.g. `-ln(1 - α)/m`) land on the intended order statistic.
fn upper_rank(p: f64, b: usize) -> usize {
    let pb = p * b as f64;
    (pb - 1e-9 * pb).ceil().max(1.0) as usize
}

/// Tail probability `p* = -ln(1 - α)/m` targeted by the max calibration.
pub fn tail_target(m: usize, alpha: f64) -> f64 {
    -(-alpha).ln_1p() / m as f64
}

/// Smallest table size satisfying the exceedance floor for `(m, α)`.
pub fn required_b(m: usize, alpha: f64) -> u64 {
    (EXCEEDANCE_FLOOR * m as f64 / alpha).ceil() as u64
}

/// `g_m(α) = 1 + ln(1 - α)/m`.
pub fn g_threshold(m: usize, alpha: f64) -> f64 {
    1.0 + (-alpha).ln_1p() / m as f64
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

impl NullTable {
    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn b(&self) -> u64 {
        self.draws.len() as u64
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_tag(&self) -> u64 {
        self.stream_tag
    }

    /// Sorted ascending.
    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn matches(&self, n1: usize, n2: usize, d: usize) -> bool {
        self.n1 == n1 && self.n2 == n2 && self.d == d
    }

    /// Number of draws `>= y`.
    pub fn count_at_least(&self, y: f64) -> usize {
        self.draws.len() - self.draws.partition_point(|&v| v < y)
    }

    /// Empirical `P(T*² >= y)`.
    pub fn null_sf(&self, y: f64) -> f64 {
        self.count_at_least(y) as f64 / self.draws.len() as f64
    }

    /// The `⌈p·b⌉`-th largest draw.
    pub fn upper_quantile(&self, p: f64) -> Result<f64> {
        let b = self.draws.len();
        if !(p <= 1.0) || p.is_nan() {
            return Err(Error::Domain(format!("tail probability must be <= 1, got {p}")));
        }
        if p * (b as f64) < 1.0 - 1e-9 {
            return Err(Error::TailTooThin { p, b: b as u64, required: (1.0 / p).ceil() as u64 });
        }
        let k = upper_rank(p, b).min(b);
        Ok(self.draws[b - k])
    }

    /// Threshold `y` with `exp(-m F(y)) = 1 - α`.
    pub fn y_alpha(&self, m: usize, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        if m == 0 {
            return Err(Error::InvalidInput("m must be >= 1".into()));
        }
        let p = tail_target(m, alpha);
        let required = required_b(m, alpha);
        if self.b() < required {
            return Err(Error::TailTooThin { p, b: self.b(), required });
        }
        self.upper_quantile(p)
    }

    /// Order-statistic summary used by the CLI.
    pub fn summary(&self) -> TableSummary {
        let b = self.draws.len();
        let quantiles = [0.5, 0.1, 0.05, 0.01, 1e-3, 1e-4]
            .into_iter()
            .filter_map(|p| self.upper_quantile(p).ok().map(|v| (p, v)))
            .collect();
        TableSummary {
            n1: self.n1,
            n2: self.n2,
            d: self.d,
            b: b as u64,
            master_seed: self.master_seed,
            min: self.draws[0],
            median: self.draws[(b - 1) / 2],
            max: self.draws[b - 1],
            upper_quantiles: quantiles,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableSummary {
    pub n1: usize,
    pub n2: usize,
    pub d: usize,
    pub b: u64,
    pub master_seed: u64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// `(p, upper p-quantile)` pairs the table can resolve.
    pub upper_quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableKey {
    pub n1: usize,
    pub n2: usize,
    pub d: usize,
    pub b: u64,
    pub master_seed: u64,
}

impl TableKey {
    pub fn file_stem(&self) -> String {
        format!(
            "t2nt-n1_{}-n2_{}-d_{}-b_{}-seed_{:016x}",
            self.n1, self.n2, self.d, self.b, self.master_seed
        )
    }

    pub fn build(&self) -> Result<NullTable> {
        build_null_table(self.n1, self.n2, self.d, self.b, self.master_seed)
    }
}

/// JSON sidecar duplicating the binary header.
#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    magic: String,
    version: u16,
    n1: usize,
    n2: usize,
    d: usize,
    b: u64,
    master_seed: u64,
    stream_tag: u64,
    min: f64,
    median: f64,
    max: f64,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadTableFile { path: path.to_path_buf(), reason: reason.into() }
}

fn write_atomic(path: &Path, bytes_writer: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file_name = path.file_name().and_then(|s| s.to_str()).unwrap_or("table");
    let tmp = path.with_file_name(format!(".{file_name}.tmp.{}", std::process::id()));
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        bytes_writer(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the binary table (and its `.json` sidecar) through temp files.
pub fn write_table(path: &Path, table: &NullTable) -> Result<()> {
    let to_u32 = |v: usize, what: &str| u32::try_from(v).map_err(|_| bad(path, format!("{what} exceeds u32")));
    let n1 = to_u32(table.n1, "n1")?;
    let n2 = to_u32(table.n2, "n2")?;
    let d = u16::try_from(table.d).map_err(|_| bad(path, "d exceeds u16"))?;
    write_atomic(path, |w| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&n1.to_le_bytes())?;
        w.write_all(&n2.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        w.write_all(&table.b().to_le_bytes())?;
        w.write_all(&table.master_seed.to_le_bytes())?;
        for v in &table.draws {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })?;
    let s = table.summary();
    let sidecar = Sidecar {
        magic: "T2NT".into(),
        version: VERSION,
        n1: table.n1,
        n2: table.n2,
        d: table.d,
        b: table.b(),
        master_seed: table.master_seed,
        stream_tag: table.stream_tag,
        min: s.min,
        median: s.median,
        max: s.max,
    };
    let json = serde_json::to_vec_pretty(&sidecar)?;
    write_atomic(&path.with_extension("json"), |w| w.write_all(&json))
}

pub fn read_table(path: &Path) -> Result<NullTable> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|_| bad(path, "truncated header"))?;
    if &header[0..4] != MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let n1 = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let n2 = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let d = u16::from_le_bytes(header[14..16].try_into().unwrap()) as usize;
    let b = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let master_seed = u64::from_le_bytes(header[24..32].try_into().unwrap());
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() as u64 != b * 8 {
        return Err(bad(path, format!("expected {b} draws, found {} bytes", body.len())));
    }
    let draws: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if b == 0 || draws.windows(2).any(|w| w[0] > w[1]) || draws[0] < 0.0 {
        return Err(bad(path, "draws are not sorted nonnegative values"));
    }
    Ok(NullTable { n1, n2, d, master_seed, stream_tag: stream_tag(n1, n2, d), draws })
}

/// Where a table handed out by [`TableStore`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSource {
    Memory,
    Disk,
    Built,
}

/// Memoizing table provider with an optional on-disk cache.
#[derive(Debug, Default)]
pub struct TableStore {
    cache_dir: Option<PathBuf>,
    auto_build: bool,
    memo: Mutex<HashMap<TableKey, Arc<NullTable>>>,
}

impl TableStore {
    /// In-memory store that builds tables on demand.
    pub fn in_memory() -> Self {
        Self { cache_dir: None, auto_build: true, memo: Mutex::default() }
    }

    pub fn with_cache_dir(dir: impl Into<PathBuf>, auto_build: bool) -> Self {
        Self { cache_dir: Some(dir.into()), auto_build, memo: Mutex::default() }
    }

    pub fn cache_path(&self, key: &TableKey) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{}.bin", key.file_stem())))
    }

    /// Whether `get` would be served without simulating.
    pub fn is_cached(&self, key: &TableKey) -> bool {
        self.memo.lock().unwrap().contains_key(key) || self.cache_path(key).is_some_and(|p| p.exists())
    }

    pub fn get(&self, key: TableKey) -> Result<(Arc<NullTable>, TableSource)> {
        if let Some(t) = self.memo.lock().unwrap().get(&key) {
            return Ok((Arc::clone(t), TableSource::Memory));
        }
        let path = self.cache_path(&key);
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let table = read_table(p)?;
            if !table.matches(key.n1, key.n2, key.d) || table.b() != key.b || table.master_seed != key.master_seed {
                return Err(bad(p, "header does not match the requested key"));
            }
            let table = Arc::new(table);
            self.memo.lock().unwrap().insert(key, Arc::clone(&table));
            return Ok((table, TableSource::Disk));
        }
        if !self.auto_build {
            return Err(Error::TableNotCached {
                path: path.unwrap_or_else(|| PathBuf::from(key.file_stem())),
            });
        }
        let table = Arc::new(key.build()?);
        if let (Some(dir), Some(p)) = (&self.cache_dir, &path) {
            fs::create_dir_all(dir)?;
            write_table(p, &table)?;
        }
        self.memo.lock().unwrap().insert(key, Arc::clone(&table));
        Ok((table, TableSource::Built))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(draws: Vec<f64>) -> NullTable {
        NullTable { n1: 2, n2: 2, d: 1, master_seed: 0, stream_tag: 0, draws }
    }

    #[test]
    fn small_table_structure() {
        let t = build_null_table(6, 6, 1, 1_000, 7).unwrap();
        assert_eq!(t.b(), 1_000);
        assert!(t.draws().iter().all(|&v| v >= 0.0));
        assert!(t.draws().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn builds_are_deterministic() {
        let a = build_null_table(5, 7, 2, 10_000, 42).unwrap();
        let b = build_null_table(5, 7, 2, 10_000, 42).unwrap();
        assert_eq!(a, b);
        let c = build_null_table(5, 7, 2, 10_000, 43).unwrap();
        assert_ne!(a.draws(), c.draws());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| build_null_table(4, 9, 3, 3 * CHUNK + 17, 5).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn preconditions() {
        assert!(matches!(build_null_table(6, 6, 1, 999, 0), Err(Error::InvalidInput(_))));
        assert!(matches!(build_null_table(1, 6, 1, 1_000, 0), Err(Error::InvalidInput(_))));
        assert!(matches!(build_null_table(2, 2, 3, 1_000, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sf_edges() {
        let t = toy((1..=10).map(f64::from).collect());
        assert_eq!(t.null_sf(-1.0), 1.0);
        assert_eq!(t.null_sf(0.0), 1.0);
        assert_eq!(t.null_sf(1.0), 1.0);
        assert_eq!(t.null_sf(1.5), 0.9);
        assert_eq!(t.null_sf(10.0), 0.1);
        assert_eq!(t.null_sf(10.0001), 0.0);
        assert_eq!(t.null_sf(f64::INFINITY), 0.0);
        assert_eq!(t.null_sf(f64::NEG_INFINITY), 1.0);
    }

    #[test]
    fn quantile_edges() {
        let t = toy((1..=10).map(f64::from).collect());
        assert_eq!(t.upper_quantile(1.0).unwrap(), 1.0);
        assert_eq!(t.upper_quantile(0.1).unwrap(), 10.0);
        assert_eq!(t.upper_quantile(0.25).unwrap(), 8.0);
        assert!(matches!(t.upper_quantile(0.09), Err(Error::TailTooThin { .. })));
        for &p in &[1.0, 0.5, 0.3, 0.1] {
            let q = t.upper_quantile(p).unwrap();
            assert!(t.null_sf(q) >= p);
        }
    }

    #[test]
    fn median_draw() {
        let t = build_null_table(6, 6, 2, 2_000, 1).unwrap();
        let med = t.draws()[999];
        assert!((t.null_sf(med) - 0.5).abs() <= 1.0 / 2_000.0 + 1e-12);
    }

    #[test]
    fn y_alpha_examples() {
        let t = build_null_table(6, 8, 2, 4_000, 3).unwrap();
        let alpha = 1.0 - (-0.05f64).exp();
        assert_eq!(t.y_alpha(1, alpha).unwrap(), t.upper_quantile(0.05).unwrap());
        assert_eq!(t.draws()[4_000 - 200], t.upper_quantile(0.05).unwrap());
        assert!((tail_target(50, 0.05) - 1.0259e-3).abs() < 1e-7);
        assert!(matches!(t.y_alpha(50, 0.05), Err(Error::TailTooThin { required: 100_000, .. })));
        assert!(t.y_alpha(1, 0.0).is_err());
        assert!(t.y_alpha(1, 1.0).is_err());
    }

    #[test]
    fn g_threshold_examples() {
        assert!((g_threshold(117, 0.05) - 0.999_561).abs() < 1e-6);
        assert!(g_threshold(117, 0.05) < 1.0);
        assert!((g_threshold(1, 1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!(g_threshold(10, 1e-12) < 1.0 && g_threshold(10, 1e-12) > 1.0 - 1e-12);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = TableStore::with_cache_dir(dir.path(), true);
        let key = TableKey { n1: 4, n2: 5, d: 2, b: 1_000, master_seed: 9 };
        assert!(!store.is_cached(&key));
        let (t, src) = store.get(key).unwrap();
        assert_eq!(src, TableSource::Built);
        let path = store.cache_path(&key).unwrap();
        assert!(path.exists() && path.with_extension("json").exists());
        assert_eq!(fs::metadata(&path).unwrap().len(), 32 + 8 * 1_000);
        assert_eq!(*t, read_table(&path).unwrap());

        let fresh = TableStore::with_cache_dir(dir.path(), false);
        let (t2, src) = fresh.get(key).unwrap();
        assert_eq!(src, TableSource::Disk);
        assert_eq!(t, t2);
        assert_eq!(fresh.get(key).unwrap().1, TableSource::Memory);

        let other = TableKey { b: 2_000, ..key };
        assert!(matches!(fresh.get(other), Err(Error::TableNotCached { .. })));
    }

    #[test]
    fn corrupt_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        fs::write(&p, b"NOPE").unwrap();
        assert!(matches!(read_table(&p), Err(Error::BadTableFile { .. })));
        let t = build_null_table(3, 3, 1, 1_000, 0).unwrap();
        write_table(&p, &t).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_table(&p), Err(Error::BadTableFile { .. })));
    }
}
