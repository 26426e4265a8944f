//! 0-bit consistent weighted sampling (CWS).
//!
//! For a row `r` and gene `i` the family draws `r_i, c_i ~ Gamma(2, 1)` and
//! `beta_i ~ U[0, 1)`. A cell `x` is sampled as
//!
//! ```text
//! t_i    = floor(ln x_i / r_i + beta_i)
//! ln y_i = r_i (t_i - beta_i)
//! ln a_i = ln c_i - ln y_i - r_i
//! i*     = argmin_i ln a_i
//! ```
//!
//! and the 0-bit hash keeps only `i*`, rehashed into `[0, B)`. Two cells
//! collide with probability close to their Min-Max similarity, plus roughly
//! `(1 - MinMax) / B` from the rehash.
//!
//! Parameters are never materialized: each `(seed, row, gene)` triple is
//! regenerated from a counter-based mixer when needed.

use crate::rng::{mix64, open_unit_hi, open_unit_lo, unit_53};
use crate::sparse::CellVector;
use crate::{Error, Result};

const FAMILY_DOMAIN: u64 = 0x43_57_53_2D_46_41_4D_31; // "CWS-FAM1"
const REHASH_DOMAIN: u64 = 0x43_57_53_2D_52_45_48_31; // "CWS-REH1"
const GENE_MUL: u64 = 0xD6E8_FEB8_6659_FD93;
const STREAM_C: u64 = 0xA076_1D64_78BD_642F;
const STREAM_BETA: u64 = 0xE703_7ED1_A0B4_28DB;

/// Default hash range.
pub const DEFAULT_RANGE: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFamilyConfig {
    pub seed: u64,
    pub rows: usize,
    pub range: u32,
}

impl HashFamilyConfig {
    pub fn new(seed: u64, rows: usize, range: u32) -> Result<Self> {
        if rows == 0 {
            return Err(Error::Config("number of hash rows must be at least 1".into()));
        }
        if range < 2 {
            return Err(Error::Config(format!("hash range must be at least 2, got {range}")));
        }
        Ok(Self { seed, rows, range })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwsParams {
    pub r: f64,
    pub c: f64,
    pub beta: f64,
}

/// The full (non 0-bit) CWS sample of a cell: selected gene and its quantized level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CwsSample {
    pub gene: u32,
    pub t: i64,
}

/// A cell with per-entry quantities that do not depend on the row hoisted out.
#[derive(Debug, Clone, Default)]
pub struct PreparedCell {
    genes: Vec<u32>,
    gene_keys: Vec<u64>,
    ln_levels: Vec<f64>,
}

/// Hash functions of one family; cheap to construct.
#[derive(Debug, Clone, Copy)]
pub struct CwsHasher {
    config: HashFamilyConfig,
    family_key: u64,
    rehash_key: u64,
    kernel: Kernel,
    table: &'static LnTable,
}

impl CwsHasher {
    pub fn new(config: HashFamilyConfig) -> Self {
        Self {
            config,
            family_key: mix64(config.seed ^ FAMILY_DOMAIN),
            rehash_key: mix64(config.seed ^ REHASH_DOMAIN),
            kernel: Kernel::detect(),
            table: ln_table(),
        }
    }

    pub fn config(&self) -> &HashFamilyConfig {
        &self.config
    }

    #[inline(always)]
    fn row_key(&self, row: usize) -> u64 {
        mix64(self.family_key.wrapping_add((row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    #[inline(always)]
    fn gene_key(&self, gene: u32) -> u64 {
        mix64(u64::from(gene).wrapping_mul(GENE_MUL) ^ self.family_key)
    }

    pub fn prepare(&self, cell: &CellVector) -> PreparedCell {
        PreparedCell {
            genes: cell.genes().to_vec(),
            gene_keys: cell.genes().iter().map(|&g| self.gene_key(g)).collect(),
            ln_levels: cell.levels().iter().map(|&v| self.ln_level(v)).collect(),
        }
    }

    /// Reuses the buffers of `prepared` for another cell.
    pub fn prepare_into(&self, cell: &CellVector, prepared: &mut PreparedCell) {
        prepared.genes.clear();
        prepared.genes.extend_from_slice(cell.genes());
        prepared.gene_keys.clear();
        prepared.gene_keys.extend(cell.genes().iter().map(|&g| self.gene_key(g)));
        prepared.ln_levels.clear();
        prepared.ln_levels.extend(cell.levels().iter().map(|&v| self.ln_level(v)));
    }

    /// Platform-independent `ln` of a positive level.
    fn ln_level(&self, v: f64) -> f64 {
        if v >= f64::MIN_POSITIVE {
            ln(self.table, v)
        } else {
            v.ln()
        }
    }

    /// `r, c ~ Gamma(2, 1)` as sums of two exponentials; `beta ~ U[0, 1)`.
    #[inline(always)]
    fn params_from_key(table: &LnTable, row_key: u64, gene_key: u64) -> (f64, f64, f64) {
        let b1 = mix64(row_key ^ gene_key);
        let b2 = mix64(b1 ^ STREAM_C);
        let b3 = mix64(b1 ^ STREAM_BETA);
        let r = -ln(table, open_unit_hi(b1) * open_unit_lo(b1));
        let c = -ln(table, open_unit_hi(b2) * open_unit_lo(b2));
        (r, c, unit_53(b3))
    }

    pub fn params(&self, row: usize, gene: u32) -> CwsParams {
        let (r, c, beta) = Self::params_from_key(self.table, self.row_key(row), self.gene_key(gene));
        CwsParams { r, c, beta }
    }

    /// Full CWS sample `(i*, t*)` for one row: with
    /// `t = floor(ln x / r + beta)` and `ln a = ln c - r (t - beta) - r`,
    /// the entry of smallest `ln a` wins.
    pub fn sample(&self, cell: &PreparedCell, row: usize) -> CwsSample {
        let (pos, t) = self.kernel.argmin(self.table, self.row_key(row), &cell.gene_keys, &cell.ln_levels);
        CwsSample { gene: cell.genes[pos], t: t as i64 }
    }

    /// Rehashes a selected gene into `[0, B)` for the given row.
    #[inline]
    pub fn rehash(&self, row: usize, gene: u32) -> u32 {
        let h = mix64(
            self.rehash_key
                ^ (row as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
                ^ u64::from(gene).wrapping_mul(GENE_MUL),
        );
        let h = mix64(h);
        ((u128::from(h) * u128::from(self.config.range)) >> 64) as u32
    }

    /// 0-bit CWS bucket of a prepared cell in `row`.
    #[inline]
    pub fn bucket(&self, cell: &PreparedCell, row: usize) -> u32 {
        self.rehash(row, self.sample(cell, row).gene)
    }
}

/// Natural log of a positive normal `x` by `ln m = 2 atanh((m - 1) / (m + 1))`.
/// Only used to build [`LnTable`]; pure IEEE arithmetic, so the table is the
/// same on every platform.
fn ln_series(x: f64) -> f64 {
    let bits = x.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | 0x3ff0_0000_0000_0000);
    let mut e = e as f64;
    if m > std::f64::consts::SQRT_2 {
        m *= 0.5;
        e += 1.0;
    }
    let s = (m - 1.0) / (m + 1.0);
    let z = s * s;
    let mut p = 1.0 / 23.0;
    for k in (0..11).rev() {
        p = p * z + 1.0 / (2 * k + 1) as f64;
    }
    2.0 * s * p + e * std::f64::consts::LN_2
}

const TABLE_BITS: u32 = 10;

/// `inv[j]` is close to `1 / m` for mantissas `m` whose top bits are `j`, and
/// `neg_ln_inv[j] = -ln(inv[j])` for that exact float.
struct LnTable {
    inv: [f64; 1 << TABLE_BITS],
    neg_ln_inv: [f64; 1 << TABLE_BITS],
}

impl std::fmt::Debug for LnTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LnTable")
    }
}

fn ln_table() -> &'static LnTable {
    static TABLE: std::sync::OnceLock<Box<LnTable>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let n = 1 << TABLE_BITS;
        let mut t = Box::new(LnTable { inv: [0.0; 1 << TABLE_BITS], neg_ln_inv: [0.0; 1 << TABLE_BITS] });
        for j in 0..n {
            let mid = 1.0 + (j as f64 + 0.5) / n as f64;
            t.inv[j] = 1.0 / mid;
            t.neg_ln_inv[j] = -ln_series(t.inv[j]);
        }
        t
    })
}

/// Natural log of a positive normal `x`, within a few ulp of the
/// true value. Table lookup plus a short series, with no branches, calls or
/// divisions, so the hashing loop vectorizes.
#[inline(always)]
fn ln(table: &LnTable, x: f64) -> f64 {
    let bits = x.to_bits();
    // 2^52 + biased exponent, exactly, without an int-to-float conversion
    let e = f64::from_bits((bits >> 52) | 0x4330_0000_0000_0000) - (4_503_599_627_370_496.0 + 1023.0);
    let m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | 0x3ff0_0000_0000_0000);
    let j = ((bits >> (52 - TABLE_BITS)) & ((1 << TABLE_BITS) - 1)) as usize;
    // m * inv[j] is within 2^-11 of 1
    let f = m * table.inv[j] - 1.0;
    let p = f * (1.0 + f * (-0.5 + f * (1.0 / 3.0 + f * (-0.25 + f * (0.2 - f * (1.0 / 6.0))))));
    p + table.neg_ln_inv[j] + e * std::f64::consts::LN_2
}

const CHUNK: usize = 16;

/// Position and `t` of the entry with the smallest `ln a`; the first such
/// entry on ties. Each of the `CHUNK` lanes keeps its own running minimum
/// over the entries it sees, and the lanes are reduced at the end.
struct Lanes {
    best: [f64; CHUNK],
    pos: [usize; CHUNK],
    t: [f64; CHUNK],
}

#[inline(always)]
fn update_lanes(
    table: &LnTable,
    lanes: &mut Lanes,
    row_key: u64,
    base: usize,
    keys: &[u64; CHUNK],
    ln_x: &[f64; CHUNK],
    valid: usize,
) {
    for i in 0..CHUNK {
        let (r, c, beta) = CwsHasher::params_from_key(table, row_key, keys[i]);
        let t = (ln_x[i] / r + beta).floor();
        let ln_a = ln(table, c) - r * (t - beta) - r;
        let take = i < valid && ln_a < lanes.best[i];
        lanes.best[i] = if take { ln_a } else { lanes.best[i] };
        lanes.pos[i] = if take { base.wrapping_add(i) } else { lanes.pos[i] };
        lanes.t[i] = if take { t } else { lanes.t[i] };
    }
}

/// Position and `t` of the entry with the smallest `ln a`; the first such
/// entry on ties. Each of the `CHUNK` lanes keeps its own running minimum
/// over the entries it sees, and the lanes are reduced at the end.
#[inline(always)]
fn argmin_row(table: &LnTable, row_key: u64, keys: &[u64], ln_x: &[f64]) -> (usize, f64) {
    let mut lanes = Lanes { best: [f64::INFINITY; CHUNK], pos: [usize::MAX; CHUNK], t: [0.0; CHUNK] };
    let full = keys.len() / CHUNK * CHUNK;
    for base in (0..full).step_by(CHUNK) {
        let k: &[u64; CHUNK] = keys[base..base + CHUNK].try_into().unwrap();
        let l: &[f64; CHUNK] = ln_x[base..base + CHUNK].try_into().unwrap();
        update_lanes(table, &mut lanes, row_key, base, k, l, CHUNK);
    }
    if full < keys.len() {
        let rest = keys.len() - full;
        let (mut k, mut l) = ([0u64; CHUNK], [0.0; CHUNK]);
        k[..rest].copy_from_slice(&keys[full..]);
        l[..rest].copy_from_slice(&ln_x[full..]);
        update_lanes(table, &mut lanes, row_key, full, &k, &l, rest);
    }
    let mut w = 0;
    for i in 1..CHUNK {
        if lanes.best[i] < lanes.best[w] || (lanes.best[i] == lanes.best[w] && lanes.pos[i] < lanes.pos[w]) {
            w = i;
        }
    }
    (lanes.pos[w], lanes.t[w])
}

/// Which compiled copy of [`argmin_row`] to run. Every copy performs the same
/// IEEE operations in the same order (Rust never fuses multiply-adds), so
/// the choice changes speed only, never a bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    Generic,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

impl Kernel {
    fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            if is_x86_feature_detected!("avx512f")
                && is_x86_feature_detected!("avx512dq")
                && is_x86_feature_detected!("avx512vl")
            {
                return Self::Avx512;
            }
            if is_x86_feature_detected!("avx2") {
                return Self::Avx2;
            }
        }
        Self::Generic
    }

    #[inline(always)]
    fn argmin(self, table: &LnTable, row_key: u64, keys: &[u64], ln_x: &[f64]) -> (usize, f64) {
        match self {
            Self::Generic => argmin_row(table, row_key, keys, ln_x),
            // SAFETY: the variants are only constructed after runtime detection.
            #[cfg(target_arch = "x86_64")]
            Self::Avx2 => unsafe { argmin_avx2(table, row_key, keys, ln_x) },
            #[cfg(target_arch = "x86_64")]
            Self::Avx512 => unsafe { argmin_avx512(table, row_key, keys, ln_x) },
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn argmin_avx2(table: &LnTable, row_key: u64, keys: &[u64], ln_x: &[f64]) -> (usize, f64) {
    argmin_row(table, row_key, keys, ln_x)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512dq,avx512vl")]
unsafe fn argmin_avx512(table: &LnTable, row_key: u64, keys: &[u64], ln_x: &[f64]) -> (usize, f64) {
    argmin_row(table, row_key, keys, ln_x)
}

/// The `(r, c, beta)` triple for one `(seed, row, gene)` key.
pub fn cws_params(seed: u64, row: usize, gene: u32) -> CwsParams {
    CwsHasher::new(HashFamilyConfig { seed, rows: row + 1, range: 2 }).params(row, gene)
}

/// 0-bit CWS bucket of `x` in `row`, in `[0, config.range)`.
pub fn hash_cell(x: &CellVector, config: &HashFamilyConfig, row: usize) -> u32 {
    let h = CwsHasher::new(*config);
    h.bucket(&h.prepare(x), row)
}
