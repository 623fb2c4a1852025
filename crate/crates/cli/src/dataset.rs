//! Long-format dataset files: `block_id,group,c1,...,cK`, one observation per
//! row, unused trailing coordinate columns left empty.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use t2max::globaltest::Dataset;
use t2max::hotelling::{BlockPair, SampleBlock};

pub const DEFAULT_MAX_DIM: usize = 6;

#[derive(Debug)]
pub struct LoadedDataset {
    pub block_ids: Vec<String>,
    pub dataset: Dataset,
}

#[derive(Default)]
struct BlockRows {
    d: usize,
    first_line: u64,
    groups: [Vec<f64>; 2],
    counts: [usize; 2],
}

pub fn load(path: &Path, max_dim: usize) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse(file, max_dim).with_context(|| format!("in {}", path.display()))
}

pub fn parse(input: impl std::io::Read, max_dim: usize) -> Result<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input);
    let header = rdr.headers().context("reading header")?.clone();
    let ncoord = check_header(&header, max_dim)?;

    let mut order: Vec<String> = Vec::new();
    let mut blocks: HashMap<String, BlockRows> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.context("malformed row")?;
        let line = rec.position().map_or(0, |p| p.line());
        let at = |msg: String| anyhow!("line {line}: {msg}");

        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(at("empty block_id".into()));
        }
        let group = match rec[1].trim() {
            "1" => 0,
            "2" => 1,
            g => return Err(at(format!("group must be 1 or 2, got {g:?}"))),
        };
        let mut coords = Vec::with_capacity(ncoord);
        let mut ended = false;
        for (j, cell) in rec.iter().skip(2).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                ended = true;
                continue;
            }
            if ended {
                return Err(at(format!("c{} is set after an empty coordinate column", j + 1)));
            }
            let v: f64 = cell.parse().map_err(|_| at(format!("c{}: not a number: {cell:?}", j + 1)))?;
            if !v.is_finite() {
                return Err(at(format!("c{}: non-finite value", j + 1)));
            }
            coords.push(v);
        }
        if coords.is_empty() {
            return Err(at(format!("block {id:?} row has no coordinates")));
        }

        let entry = blocks.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            BlockRows { d: coords.len(), first_line: line, ..Default::default() }
        });
        if coords.len() != entry.d {
            return Err(at(format!(
                "block {id:?} has {} coordinates here but {} on line {}",
                coords.len(),
                entry.d,
                entry.first_line
            )));
        }
        entry.groups[group].extend_from_slice(&coords);
        entry.counts[group] += 1;
    }
    if order.is_empty() {
        bail!("dataset has no rows");
    }

    let sizes = blocks[&order[0]].counts;
    let mut pairs = Vec::with_capacity(order.len());
    for id in &order {
        let b = blocks.remove(id).expect("recorded");
        if b.counts != sizes {
            bail!(
                "block {id:?} has group sizes ({}, {}) but block {:?} has ({}, {})",
                b.counts[0],
                b.counts[1],
                order[0],
                sizes[0],
                sizes[1]
            );
        }
        let [gx, gy] = b.groups;
        let x = SampleBlock::new(b.counts[0], b.d, gx).with_context(|| format!("block {id:?}"))?;
        let y = SampleBlock::new(b.counts[1], b.d, gy).with_context(|| format!("block {id:?}"))?;
        pairs.push(BlockPair::new(x, y).with_context(|| format!("block {id:?}"))?);
    }
    let dataset = Dataset::new(pairs)?;
    Ok(LoadedDataset { block_ids: order, dataset })
}

fn check_header(header: &csv::StringRecord, max_dim: usize) -> Result<usize> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "block_id" || cols[1] != "group" {
        bail!("line 1: header must start with block_id,group,c1");
    }
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("c{}", j + 1) {
            bail!("line 1: expected column c{}, found {c:?}", j + 1);
        }
    }
    let ncoord = cols.len() - 2;
    if ncoord > max_dim {
        bail!("line 1: {ncoord} coordinate columns exceed --max-dim {max_dim}");
    }
    Ok(ncoord)
}
