//! Scatter-add aggregation of per-cell attention maps into gene-pair scores.
//!
//! For every cell and every off-diagonal map entry `(p, q)`,
//! `Z[g_p, g_q] += w * A[p, q]` and `M[g_p, g_q] += w`. The final score of a
//! directed key is `Z / M`; the two directions of an unordered pair are
//! averaged. Storage is sparse: only pairs that co-occur in some cell exist.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::attention::AttentionMap;
use crate::sparse::{Dataset, Label};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionAccumulator {
    sums: HashMap<(u32, u32), (f64, f64)>,
    weight_total: f64,
    cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedPair {
    pub i: u32,
    pub j: u32,
    pub score: f64,
    pub support: f64,
}

/// Canonical pairs (`i < j`), by descending score, ties by `(i, j)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedPairs {
    pub pairs: Vec<RankedPair>,
}

impl InteractionAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn n_keys(&self) -> usize {
        self.sums.len()
    }

    pub fn weight_total(&self) -> f64 {
        self.weight_total
    }

    /// Directed `(Z, M)` for a key, if present.
    pub fn get(&self, i: u32, j: u32) -> Option<(f64, f64)> {
        self.sums.get(&(i, j)).copied()
    }

    /// Adds one cell's map with weight `weight`; the diagonal is dropped.
    pub fn accumulate_cell(&mut self, map: &AttentionMap, weight: f64) -> Result<()> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("cell weight must be positive, got {weight}")));
        }
        for (p, &gp) in map.genes.iter().enumerate() {
            for (q, &gq) in map.genes.iter().enumerate() {
                if p == q {
                    continue;
                }
                let e = self.sums.entry((gp, gq)).or_insert((0.0, 0.0));
                e.0 += weight * map.values[[p, q]];
                e.1 += weight;
            }
        }
        self.weight_total += weight;
        self.cells += 1;
        Ok(())
    }

    /// Key-wise sum; associative and commutative.
    pub fn merge(&mut self, other: &Self) {
        for (&k, &(z, m)) in &other.sums {
            let e = self.sums.entry(k).or_insert((0.0, 0.0));
            e.0 += z;
            e.1 += m;
        }
        self.weight_total += other.weight_total;
        self.cells += other.cells;
    }

    /// Directed `Z / M` scores, symmetrized onto canonical pairs and ranked.
    pub fn finalize(&self) -> Result<RankedPairs> {
        if self.sums.is_empty() {
            return Err(Error::Empty("interaction accumulator"));
        }
        let mut keys: Vec<(u32, u32)> = self.sums.keys().copied().filter(|&(i, j)| i < j).collect();
        keys.extend(
            self.sums
                .keys()
                .copied()
                .filter(|&(i, j)| i > j && !self.sums.contains_key(&(j, i)))
                .map(|(i, j)| (j, i)),
        );
        keys.sort_unstable();
        let pairs = keys
            .into_iter()
            .map(|(i, j)| {
                let fwd = self.sums.get(&(i, j));
                let bwd = self.sums.get(&(j, i));
                let (score, support) = match (fwd, bwd) {
                    (Some(&(z1, m1)), Some(&(z2, m2))) => ((z1 / m1 + z2 / m2) / 2.0, (m1 + m2) / 2.0),
                    (Some(&(z, m)), None) | (None, Some(&(z, m))) => (z / m, m),
                    (None, None) => unreachable!("key came from the map"),
                };
                RankedPair { i, j, score, support }
            })
            .collect();
        Ok(RankedPairs::ranked(pairs))
    }

    /// Checkpoint: `INTERACT1 cells weight_total n_keys`, then `i j z m` per
    /// key in sorted order.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "INTERACT1 {} {} {}", self.cells, self.weight_total, self.sums.len())?;
        let mut keys: Vec<_> = self.sums.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            let (z, m) = self.sums[&k];
            writeln!(out, "{} {} {} {}", k.0, k.1, z, m)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| perr(1, "missing header"))??;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 4 || f[0] != "INTERACT1" {
            return Err(perr(1, "header must be `INTERACT1 cells weight_total n_keys`"));
        }
        let cells = f[1].parse().map_err(|_| perr(1, "bad cell count"))?;
        let weight_total = f[2].parse().map_err(|_| perr(1, "bad weight total"))?;
        let n: usize = f[3].parse().map_err(|_| perr(1, "bad key count"))?;
        let mut sums = HashMap::with_capacity(n);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let ln = idx + 2;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.is_empty() {
                continue;
            }
            if t.len() != 4 {
                return Err(perr(ln, "expected `i j z m`"));
            }
            let i: u32 = t[0].parse().map_err(|_| perr(ln, "bad gene index"))?;
            let j: u32 = t[1].parse().map_err(|_| perr(ln, "bad gene index"))?;
            if i == j {
                return Err(perr(ln, "diagonal key in checkpoint"));
            }
            let z: f64 = t[2].parse().map_err(|_| perr(ln, "bad z"))?;
            let m: f64 = t[3].parse().map_err(|_| perr(ln, "bad m"))?;
            if m.is_nan() || m <= 0.0 {
                return Err(perr(ln, "count must be positive"));
            }
            sums.insert((i, j), (z, m));
        }
        if sums.len() != n {
            return Err(perr(1, format!("header declares {n} keys, found {}", sums.len())));
        }
        Ok(Self { sums, weight_total, cells })
    }
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn rank_order(a: &RankedPair, b: &RankedPair) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then((a.i, a.j).cmp(&(b.i, b.j)))
}

impl RankedPairs {
    /// Sorts into rank order.
    pub fn ranked(mut pairs: Vec<RankedPair>) -> Self {
        pairs.sort_by(rank_order);
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn score_of(&self, i: u32, j: u32) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.pairs.iter().find(|p| (p.i, p.j) == key).map(|p| p.score)
    }

    /// `gene_i<TAB>gene_j<TAB>score<TAB>support`, plus symbol columns when
    /// `symbols` is given.
    pub fn write_tsv<W: Write>(&self, mut out: W, symbols: Option<&HashMap<u32, String>>) -> Result<()> {
        for p in &self.pairs {
            write!(out, "{}\t{}\t{}\t{}", p.i, p.j, p.score, p.support)?;
            if let Some(sym) = symbols {
                let name = |g: u32| sym.get(&g).map_or("NA", String::as_str);
                write!(out, "\t{}\t{}", name(p.i), name(p.j))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads the first four columns; extra columns are ignored.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ln = idx + 1;
            let t: Vec<&str> = line.split('\t').collect();
            if t.len() < 4 {
                return Err(perr(ln, "expected `gene_i gene_j score support`"));
            }
            let i: u32 = t[0].trim().parse().map_err(|_| perr(ln, "bad gene index"))?;
            let j: u32 = t[1].trim().parse().map_err(|_| perr(ln, "bad gene index"))?;
            let score: f64 = t[2].trim().parse().map_err(|_| perr(ln, "bad score"))?;
            let support: f64 = t[3].trim().parse().map_err(|_| perr(ln, "bad support"))?;
            if i >= j {
                return Err(perr(ln, "pairs must be canonical (gene_i < gene_j)"));
            }
            pairs.push(RankedPair { i, j, score, support });
        }
        Ok(Self::ranked(pairs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    All,
    PositiveOnly,
    Contrastive,
}

impl AggregationMode {
    fn name(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::PositiveOnly => "positive",
            Self::Contrastive => "contrastive",
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "positive" | "positive_only" => Ok(Self::PositiveOnly),
            "contrastive" => Ok(Self::Contrastive),
            other => Err(Error::Config(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

fn accumulate<'a>(maps: impl Iterator<Item = (&'a AttentionMap, f64)>) -> Result<InteractionAccumulator> {
    let mut acc = InteractionAccumulator::new();
    for (m, w) in maps {
        acc.accumulate_cell(m, w)?;
    }
    Ok(acc)
}

/// Aggregates maps aligned with `dataset.cells()`. `weights` defaults to 1.
pub fn aggregate(
    dataset: &Dataset,
    maps: &[AttentionMap],
    mode: AggregationMode,
    weights: Option<&[f64]>,
) -> Result<RankedPairs> {
    if maps.len() != dataset.cells().len() {
        return Err(Error::Config(format!("{} maps for {} cells", maps.len(), dataset.cells().len())));
    }
    if let Some(w) = weights {
        if w.len() != maps.len() {
            return Err(Error::Config(format!("{} weights for {} maps", w.len(), maps.len())));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let select = |want: Option<Label>| -> Result<InteractionAccumulator> {
        let labels = dataset.labels();
        accumulate(
            maps.iter()
                .enumerate()
                .filter(|&(i, _)| match (want, labels) {
                    (None, _) => true,
                    (Some(l), Some(ls)) => ls[i] == l,
                    (Some(_), None) => false,
                })
                .map(|(i, m)| (m, weight(i))),
        )
    };
    if mode != AggregationMode::All && dataset.labels().is_none() {
        return Err(Error::LabelsRequired(mode.name()));
    }
    match mode {
        AggregationMode::All => select(None)?.finalize(),
        AggregationMode::PositiveOnly => select(Some(Label::Positive))?.finalize(),
        AggregationMode::Contrastive => {
            let pos = select(Some(Label::Positive))?.finalize()?;
            let neg = select(Some(Label::Negative))?.finalize()?;
            Ok(subtract(&pos, &neg))
        }
    }
}

/// Per-pair `a - b` with missing pairs read as 0; supports add.
pub fn subtract(a: &RankedPairs, b: &RankedPairs) -> RankedPairs {
    let mut table: HashMap<(u32, u32), (f64, f64)> = HashMap::new();
    for p in &a.pairs {
        let e = table.entry((p.i, p.j)).or_insert((0.0, 0.0));
        e.0 += p.score;
        e.1 += p.support;
    }
    for p in &b.pairs {
        let e = table.entry((p.i, p.j)).or_insert((0.0, 0.0));
        e.0 -= p.score;
        e.1 += p.support;
    }
    RankedPairs::ranked(
        table.into_iter().map(|((i, j), (score, support))| RankedPair { i, j, score, support }).collect(),
    )
}

/// Weighted estimate `sum_x Z_x I(x) / sum_x I(x)` over a sampled subset,
/// per directed key, then symmetrized and ranked like [`InteractionAccumulator::finalize`].
pub fn estimated_interaction(maps: &[AttentionMap], weights: &[f64]) -> Result<RankedPairs> {
    if maps.len() != weights.len() {
        return Err(Error::Config(format!("{} weights for {} maps", weights.len(), maps.len())));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Config("subset weights sum to zero".into()));
    }
    accumulate(maps.iter().zip(weights.iter().copied()))?.finalize()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl std::str::FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Self::Pearson),
            "spearman" => Ok(Self::Spearman),
            other => Err(Error::Config(format!("unknown correlation method {other:?}"))),
        }
    }
}

/// Average ranks (1-based), ties share the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation matrix of the columns of `cols` (each a length-n
/// vector). Constant columns correlate 0 with everything.
fn correlation_matrix(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let centered: Vec<(Vec<f64>, f64)> = cols
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let v: Vec<f64> = c.iter().map(|x| x - mean).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (v, norm)
        })
        .collect();
    let g = cols.len();
    let mut out = vec![vec![0.0; g]; g];
    for a in 0..g {
        for b in a + 1..g {
            let (va, na) = &centered[a];
            let (vb, nb) = &centered[b];
            let r = if *na > 0.0 && *nb > 0.0 {
                va.iter().zip(vb).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
            } else {
                0.0
            };
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    out
}

/// Co-expression baseline: `corr_positive(i, j) - corr_negative(i, j)` over
/// genes expressed in at least `min_cells` cells of each group; absent genes
/// count as level 0.
pub fn baseline_correlation_rank(
    dataset: &Dataset,
    method: CorrelationMethod,
    min_cells: usize,
) -> Result<RankedPairs> {
    let labels = dataset.labels().ok_or(Error::LabelsRequired("baseline correlation"))?;
    let groups: [Vec<usize>; 2] = [Label::Positive, Label::Negative]
        .map(|l| labels.iter().enumerate().filter(|&(_, &x)| x == l).map(|(i, _)| i).collect());
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::Empty("label group"));
    }
    let v = dataset.n_genes();
    let mut counts = [vec![0usize; v], vec![0usize; v]];
    for (gi, group) in groups.iter().enumerate() {
        for &c in group {
            for &g in dataset.cells()[c].genes() {
                counts[gi][g as usize] += 1;
            }
        }
    }
    let genes: Vec<u32> = (0..v)
        .filter(|&g| counts[0][g] >= min_cells && counts[1][g] >= min_cells)
        .map(|g| g as u32)
        .collect();
    let column = |group: &[usize], g: u32| -> Vec<f64> {
        let col: Vec<f64> = group.iter().map(|&c| dataset.cells()[c].level(g).unwrap_or(0.0)).collect();
        match method {
            CorrelationMethod::Pearson => col,
            CorrelationMethod::Spearman => average_ranks(&col),
        }
    };
    let corr: Vec<Vec<Vec<f64>>> = groups
        .iter()
        .map(|group| correlation_matrix(&genes.iter().map(|&g| column(group, g)).collect::<Vec<_>>()))
        .collect();
    let mut pairs = Vec::new();
    for a in 0..genes.len() {
        for b in a + 1..genes.len() {
            pairs.push(RankedPair {
                i: genes[a],
                j: genes[b],
                score: corr[0][a][b] - corr[1][a][b],
                support: labels.len() as f64,
            });
        }
    }
    Ok(RankedPairs::ranked(pairs))
}

/// Genes with any observed pair, for reporting.
pub fn genes_in(ranked: &RankedPairs) -> HashSet<u32> {
    ranked.pairs.iter().flat_map(|p| [p.i, p.j]).collect()
}
