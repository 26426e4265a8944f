//! Two-pass Min-Max density estimation over an `R x B` counter array.
//!
//! Pass 1 hashes every cell with `R` independent 0-bit CWS functions and
//! increments one counter per row. Pass 2 hashes each cell again and averages
//! the `R` counters it lands in. For a cell `q` in the data,
//!
//! ```text
//! E[w_q] = sum_x Pr[h(q) = h(x)] ~= sum_x MinMax(q, x) + (n - sum_x MinMax(q, x)) / B
//! ```
//!
//! Memory is the counter array alone; the data is only streamed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cws::{CwsHasher, HashFamilyConfig, PreparedCell};
use crate::sparse::{CellSource, CellVector, Dataset};
use crate::{Error, Result};

/// Default number of hash rows.
pub const DEFAULT_ROWS: usize = 100;

const TEXT_MAGIC: &str = "RACE1";
const BINARY_MAGIC: &[u8; 8] = b"RACE1BIN";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaceSketch {
    config: HashFamilyConfig,
    counts: Vec<u32>,
    n_items: u64,
}

/// Estimated Min-Max density per cell, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityScores {
    pub ids: Vec<String>,
    pub densities: Vec<f64>,
}

impl DiversityScores {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|x| x == id).map(|i| self.densities[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ids.iter().map(String::as_str).zip(self.densities.iter().copied())
    }

    /// `cell_id<TAB>density` per line.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, w) in self.iter() {
            writeln!(out, "{id}\t{w}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut ids = Vec::new();
        let mut densities = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, w) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected `cell_id<TAB>density`".into() })?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad density {w:?}") })?;
            ids.push(id.to_string());
            densities.push(w);
        }
        Ok(Self { ids, densities })
    }
}

impl RaceSketch {
    /// All-zero sketch; the identity for [`merge`].
    pub fn empty(config: HashFamilyConfig) -> Self {
        Self { config, counts: vec![0; config.rows * config.range as usize], n_items: 0 }
    }

    pub fn config(&self) -> &HashFamilyConfig {
        &self.config
    }

    pub fn n_items(&self) -> u64 {
        self.n_items
    }

    pub fn row(&self, r: usize) -> &[u32] {
        let b = self.config.range as usize;
        &self.counts[r * b..(r + 1) * b]
    }

    /// Bytes held by the counter array.
    pub fn counter_bytes(&self) -> usize {
        self.counts.len() * std::mem::size_of::<u32>()
    }

    /// Pass 1. Workers own disjoint blocks of rows and scan every cell, so the
    /// counter array is never duplicated and the result does not depend on
    /// the number of workers.
    pub fn build<S: CellSource + ?Sized>(source: &S, config: HashFamilyConfig) -> Result<Self> {
        let mut sketch = Self::empty(config);
        let hasher = CwsHasher::new(config);
        let b = config.range as usize;
        let rows_per_block = config.rows.div_ceil(worker_count()).max(1);
        let fill = |(block, counts): (usize, &mut [u32])| -> Result<()> {
            let first = block * rows_per_block;
            let rows = counts.len() / b;
            let mut prepared = PreparedCell::default();
            for i in 0..source.len() {
                hasher.prepare_into(&source.cell(i), &mut prepared);
                for local in 0..rows {
                    let bucket = hasher.bucket(&prepared, first + local) as usize;
                    let slot = &mut counts[local * b + bucket];
                    *slot =
                        slot.checked_add(1).ok_or(Error::CounterOverflow { row: first + local, bucket })?;
                }
            }
            Ok(())
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            sketch.counts.par_chunks_mut(rows_per_block * b).enumerate().map(fill).collect::<Result<()>>()?;
        }
        #[cfg(not(feature = "parallel"))]
        {
            sketch.counts.chunks_mut(rows_per_block * b).enumerate().try_for_each(fill)?;
        }
        sketch.n_items = source.len() as u64;
        Ok(sketch)
    }

    /// Pass 1 by splitting the data into `shards` contiguous pieces, building
    /// each independently and merging.
    pub fn build_sharded(dataset: &Dataset, config: HashFamilyConfig, shards: usize) -> Result<Self> {
        let cells = dataset.cells();
        let size = cells.len().div_ceil(shards.max(1)).max(1);
        let build = |chunk: &[CellVector]| Self::build(chunk, config);
        #[cfg(feature = "parallel")]
        let parts: Vec<Self> = {
            use rayon::prelude::*;
            cells.par_chunks(size).map(build).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<Self> = cells.chunks(size).map(build).collect::<Result<_>>()?;
        parts.iter().try_fold(Self::empty(config), |acc, p| merge(&acc, p))
    }

    /// Pass 2 for one cell: the mean of its `R` counters.
    pub fn query(&self, x: &CellVector) -> f64 {
        let hasher = CwsHasher::new(self.config);
        self.query_prepared(&hasher, &hasher.prepare(x))
    }

    fn query_prepared(&self, hasher: &CwsHasher, x: &PreparedCell) -> f64 {
        let b = self.config.range as usize;
        let total: u64 =
            (0..self.config.rows).map(|r| u64::from(self.counts[r * b + hasher.bucket(x, r) as usize])).sum();
        total as f64 / self.config.rows as f64
    }

    /// Pass 2 over a whole source, writing `out[i]` for cell `i`.
    pub fn query_into<S: CellSource + ?Sized>(&self, source: &S, out: &mut [f64]) {
        assert_eq!(out.len(), source.len(), "output length must match the source");
        let hasher = CwsHasher::new(self.config);
        let one = |prepared: &mut PreparedCell, (i, slot): (usize, &mut f64)| {
            hasher.prepare_into(&source.cell(i), prepared);
            *slot = self.query_prepared(&hasher, prepared);
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            out.par_iter_mut().enumerate().for_each_init(PreparedCell::default, one);
        }
        #[cfg(not(feature = "parallel"))]
        {
            let mut prepared = PreparedCell::default();
            out.iter_mut().enumerate().for_each(|item| one(&mut prepared, item));
        }
    }

    /// Text format: `RACE1 seed R B n_items`, then `R` lines of `B` counts.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        writeln!(out, "{TEXT_MAGIC} {} {} {} {}", c.seed, c.rows, c.range, self.n_items)?;
        for r in 0..c.rows {
            let mut first = true;
            for v in self.row(r) {
                if !first {
                    out.write_all(b" ")?;
                }
                write!(out, "{v}")?;
                first = false;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| perr(1, "missing header"))??;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 || f[0] != TEXT_MAGIC {
            return Err(perr(1, "header must be `RACE1 seed R B n_items`"));
        }
        let seed: u64 = f[1].parse().map_err(|_| perr(1, "bad seed"))?;
        let rows: usize = f[2].parse().map_err(|_| perr(1, "bad R"))?;
        let range: u32 = f[3].parse().map_err(|_| perr(1, "bad B"))?;
        let n_items: u64 = f[4].parse().map_err(|_| perr(1, "bad n_items"))?;
        let config = HashFamilyConfig::new(seed, rows, range)?;
        let mut counts = Vec::with_capacity(rows * range as usize);
        for r in 0..rows {
            let line = lines.next().ok_or_else(|| perr(r + 2, "missing counter row"))??;
            let before = counts.len();
            for v in line.split_whitespace() {
                counts.push(v.parse::<u32>().map_err(|_| perr(r + 2, format!("bad counter {v:?}")))?);
            }
            if counts.len() - before != range as usize {
                return Err(perr(r + 2, format!("expected {range} counters")));
            }
        }
        Self::from_parts(config, counts, n_items)
    }

    /// Binary format, little endian: magic `RACE1BIN`, `seed: u64`, `R: u32`,
    /// `B: u32`, `n_items: u64`, counter count `R*B: u64`, then the counters
    /// as `u32` in row-major order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&self.config.seed.to_le_bytes())?;
        out.write_all(&(self.config.rows as u32).to_le_bytes())?;
        out.write_all(&self.config.range.to_le_bytes())?;
        out.write_all(&self.n_items.to_le_bytes())?;
        out.write_all(&(self.counts.len() as u64).to_le_bytes())?;
        for v in &self.counts {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut reader: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(perr(0, "not a binary sketch file"));
        }
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        reader.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        reader.read_exact(&mut b4)?;
        let rows = u32::from_le_bytes(b4) as usize;
        reader.read_exact(&mut b4)?;
        let range = u32::from_le_bytes(b4);
        reader.read_exact(&mut b8)?;
        let n_items = u64::from_le_bytes(b8);
        reader.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let config = HashFamilyConfig::new(seed, rows, range)?;
        if len != rows * range as usize {
            return Err(perr(0, format!("counter block length {len} does not match R*B")));
        }
        let mut raw = vec![0u8; len * 4];
        reader.read_exact(&mut raw)?;
        let counts = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_parts(config, counts, n_items)
    }

    fn from_parts(config: HashFamilyConfig, counts: Vec<u32>, n_items: u64) -> Result<Self> {
        let s = Self { config, counts, n_items };
        for r in 0..config.rows {
            let sum: u64 = s.row(r).iter().map(|&v| u64::from(v)).sum();
            if sum != n_items {
                return Err(perr(r + 2, format!("row {r} sums to {sum}, expected {n_items}")));
            }
        }
        Ok(s)
    }

    /// Writes binary when the extension is `bin`, text otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        if is_binary(path) {
            self.write_binary(&mut out)?;
        } else {
            self.write_text(&mut out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        if is_binary(path) {
            Self::read_binary(reader)
        } else {
            Self::read_text(reader)
        }
    }
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Elementwise counter sum of two sketches built with the same hash family.
pub fn merge(a: &RaceSketch, b: &RaceSketch) -> Result<RaceSketch> {
    if a.config != b.config {
        return Err(Error::ConfigMismatch(format!("{:?} vs {:?}", a.config, b.config)));
    }
    let range = a.config.range as usize;
    let counts = a
        .counts
        .iter()
        .zip(&b.counts)
        .enumerate()
        .map(|(k, (x, y))| {
            x.checked_add(*y).ok_or(Error::CounterOverflow { row: k / range, bucket: k % range })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RaceSketch { config: a.config, counts, n_items: a.n_items + b.n_items })
}

/// Both passes over a streamed source. Densities land in `out`; the only
/// allocation that scales with the problem is the `R x B` counter array.
pub fn two_pass<S: CellSource + ?Sized>(
    source: &S,
    config: HashFamilyConfig,
    out: &mut [f64],
) -> Result<RaceSketch> {
    if source.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let sketch = RaceSketch::build(source, config)?;
    sketch.query_into(source, out);
    Ok(sketch)
}

/// Estimated Min-Max density for every cell of `dataset`.
pub fn estimate_all(dataset: &Dataset, config: HashFamilyConfig) -> Result<DiversityScores> {
    let mut densities = vec![0.0; dataset.cells().len()];
    two_pass(dataset, config, &mut densities)?;
    Ok(DiversityScores { ids: dataset.cells().iter().map(|c| c.id().to_string()).collect(), densities })
}

/// Densities from an already-built sketch (pass 2 only).
pub fn densities_from_sketch(sketch: &RaceSketch, dataset: &Dataset) -> DiversityScores {
    let mut densities = vec![0.0; dataset.cells().len()];
    sketch.query_into(dataset, &mut densities);
    DiversityScores { ids: dataset.cells().iter().map(|c| c.id().to_string()).collect(), densities }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{clustered_dataset, random_dataset};

    fn cfg(rows: usize, range: u32) -> HashFamilyConfig {
        HashFamilyConfig::new(17, rows, range).unwrap()
    }

    #[test]
    fn one_cell_sketch() {
        let d = random_dataset(1, 100, 5..10, 1);
        let s = RaceSketch::build(&d, cfg(16, 64)).unwrap();
        for r in 0..16 {
            let nz: Vec<_> = s.row(r).iter().filter(|&&v| v > 0).collect();
            assert_eq!(nz, vec![&1]);
        }
        assert_eq!(s.query(&d.cells()[0]), 1.0);
        let scores = estimate_all(&d, cfg(16, 64)).unwrap();
        assert_eq!(scores.densities, vec![1.0]);
    }

    #[test]
    fn identical_cells_share_one_counter() {
        let q = crate::synth::random_cell("q", 200, 30, 9);
        let cells: Vec<_> = (0..12).map(|i| q.clone().with_id(format!("c{i}"))).collect();
        let d = Dataset::new(200, cells).unwrap();
        let s = RaceSketch::build(&d, cfg(10, 1000)).unwrap();
        for r in 0..10 {
            assert_eq!(s.row(r).iter().filter(|&&v| v > 0).count(), 1);
            assert_eq!(*s.row(r).iter().max().unwrap(), 12);
        }
        assert_eq!(s.query(&q), 12.0);
    }

    #[test]
    fn rows_sum_to_n_and_scores_are_at_least_one() {
        let (d, _) = clustered_dataset(120, 400, 6, 3);
        let c = cfg(20, 50);
        let s = RaceSketch::build(&d, c).unwrap();
        for r in 0..20 {
            assert_eq!(s.row(r).iter().map(|&v| u64::from(v)).sum::<u64>(), 120);
        }
        let scores = estimate_all(&d, c).unwrap();
        assert!(scores.densities.iter().all(|&w| w >= 1.0));
        // estimate_all is exactly build + query
        for (cell, w) in d.cells().iter().zip(&scores.densities) {
            assert_eq!(s.query(cell).to_bits(), w.to_bits());
        }
    }

    #[test]
    fn merge_identity_commutativity_and_union() {
        let d = random_dataset(60, 300, 5..30, 4);
        let c = cfg(8, 97);
        let (left, right) = d.cells().split_at(25);
        let a = RaceSketch::build(left, c).unwrap();
        let b = RaceSketch::build(right, c).unwrap();
        let whole = RaceSketch::build(&d, c).unwrap();
        assert_eq!(merge(&a, &RaceSketch::empty(c)).unwrap(), a);
        assert_eq!(merge(&a, &b).unwrap(), merge(&b, &a).unwrap());
        assert_eq!(merge(&a, &b).unwrap(), whole);
        assert_eq!(RaceSketch::build_sharded(&d, c, 7).unwrap(), whole);
    }

    #[test]
    fn merge_rejects_mismatched_configs() {
        let a = RaceSketch::empty(cfg(8, 97));
        let b = RaceSketch::empty(HashFamilyConfig::new(18, 8, 97).unwrap());
        assert!(matches!(merge(&a, &b), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn overflow_is_reported() {
        let c = cfg(1, 2);
        let mut s = RaceSketch::empty(c);
        s.counts[0] = u32::MAX;
        s.n_items = u64::from(u32::MAX);
        let d = random_dataset(1, 10, 1..2, 0);
        let one = RaceSketch::build(&d, c).unwrap();
        let mut t = s.clone();
        t.counts = vec![u32::MAX, u32::MAX];
        assert!(matches!(merge(&t, &one), Err(Error::CounterOverflow { row: 0, .. })));
    }

    #[test]
    fn text_and_binary_round_trip() {
        let d = random_dataset(30, 100, 3..9, 5);
        let s = RaceSketch::build(&d, cfg(4, 13)).unwrap();
        let mut text = Vec::new();
        s.write_text(&mut text).unwrap();
        assert!(text.starts_with(b"RACE1 17 4 13 30\n"));
        assert_eq!(RaceSketch::read_text(text.as_slice()).unwrap(), s);
        let mut bin = Vec::new();
        s.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 8 + 8 + 4 + 4 + 8 + 8 + 4 * 4 * 13);
        assert_eq!(RaceSketch::read_binary(bin.as_slice()).unwrap(), s);
    }

    #[test]
    fn corrupt_row_sum_is_rejected() {
        let text = "RACE1 1 2 2 3\n1 2\n2 2\n";
        assert!(matches!(RaceSketch::read_text(text.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn density_tsv_round_trip() {
        let scores = DiversityScores { ids: vec!["a".into(), "b".into()], densities: vec![1.5, 2.25] };
        let mut buf = Vec::new();
        scores.write_tsv(&mut buf).unwrap();
        assert_eq!(DiversityScores::read_tsv(buf.as_slice()).unwrap(), scores);
    }
}
