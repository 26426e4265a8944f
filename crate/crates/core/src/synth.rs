//! Synthetic data generators used by tests, the demo and the CLI fixture.
//!
//! All generators are deterministic functions of their seed.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::stream_rng;
use crate::sparse::{CellSource, CellVector, Dataset, Label};

fn random_entries(rng: &mut ChaCha8Rng, n_genes: usize, nnz: usize) -> Vec<(u32, f64)> {
    let nnz = nnz.clamp(1, n_genes);
    sample(rng, n_genes, nnz).into_iter().map(|g| (g as u32, (rng.random::<f64>() * 3.0).exp())).collect()
}

/// One cell with `nnz` distinct genes and log-uniform levels in `[1, e^3)`.
pub fn random_cell(id: &str, n_genes: usize, nnz: usize, seed: u64) -> CellVector {
    let mut rng = stream_rng(seed, "random_cell", crate::rng::hash_str(id));
    CellVector::new(id, random_entries(&mut rng, n_genes, nnz)).expect("non-empty by construction")
}

/// `n` independent cells with nnz drawn uniformly from `nnz`.
pub fn random_dataset(n: usize, n_genes: usize, nnz: std::ops::Range<usize>, seed: u64) -> Dataset {
    let cells = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, "random_dataset", i as u64);
            let k = rng.random_range(nnz.clone());
            CellVector::new(format!("cell{i}"), random_entries(&mut rng, n_genes, k)).unwrap()
        })
        .collect();
    Dataset::new(n_genes, cells).unwrap()
}

/// Perturbs a prototype: multiplicative level noise, dropout and a few
/// spurious genes.
fn perturb(
    rng: &mut ChaCha8Rng,
    id: String,
    proto: &[(u32, f64)],
    n_genes: usize,
    noise: f64,
    dropout: f64,
    extra: usize,
) -> CellVector {
    let mut m: BTreeMap<u32, f64> = BTreeMap::new();
    for &(g, v) in proto {
        if rng.random::<f64>() >= dropout {
            let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
            m.insert(g, v * (noise * z).exp());
        }
    }
    for _ in 0..extra {
        let g = rng.random_range(0..n_genes) as u32;
        m.entry(g).or_insert_with(|| (rng.random::<f64>() * 2.0).exp());
    }
    if m.is_empty() {
        m.insert(proto[0].0, proto[0].1);
    }
    CellVector::new(id, m.into_iter().collect()).unwrap()
}

/// Cells grouped around prototypes with heavily unequal cluster sizes
/// (cluster `k` gets weight `1 / (k + 1)`), so Min-Max densities span a
/// wide range. Returns the dataset and each cell's cluster.
pub fn clustered_dataset(n: usize, n_genes: usize, n_clusters: usize, seed: u64) -> (Dataset, Vec<usize>) {
    let mut rng = stream_rng(seed, "clustered", 0);
    let protos: Vec<Vec<(u32, f64)>> = (0..n_clusters)
        .map(|_| {
            let k = rng.random_range(20..100);
            random_entries(&mut rng, n_genes, k)
        })
        .collect();
    let weights: Vec<f64> = (0..n_clusters).map(|k| 1.0 / (k as f64 + 1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut cells = Vec::with_capacity(n);
    let mut membership = Vec::with_capacity(n);
    for i in 0..n {
        let mut u = rng.random::<f64>() * total;
        let mut k = 0;
        while k + 1 < n_clusters && u >= weights[k] {
            u -= weights[k];
            k += 1;
        }
        cells.push(perturb(&mut rng, format!("cell{i}"), &protos[k], n_genes, 0.3, 0.1, 3));
        membership.push(k);
    }
    (Dataset::new(n_genes, cells).unwrap(), membership)
}

/// A population where `1 - diverse_fraction` of the cells are near-duplicates
/// of a single prototype and the rest are independent random cells.
/// Cluster id 0 is the duplicate block; each diverse cell is its own cluster.
pub fn near_duplicate_population(
    n: usize,
    n_genes: usize,
    diverse_fraction: f64,
    seed: u64,
) -> (Dataset, Vec<usize>) {
    let mut rng = stream_rng(seed, "near_duplicates", 0);
    let n_diverse = (n as f64 * diverse_fraction).round() as usize;
    let proto = random_entries(&mut rng, n_genes, 60);
    let mut cells = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(n);
    for i in 0..n {
        if i < n - n_diverse {
            cells.push(perturb(&mut rng, format!("cell{i}"), &proto, n_genes, 0.05, 0.0, 0));
            clusters.push(0);
        } else {
            let k = rng.random_range(20..100);
            cells.push(CellVector::new(format!("cell{i}"), random_entries(&mut rng, n_genes, k)).unwrap());
            clusters.push(i);
        }
    }
    (Dataset::new(n_genes, cells).unwrap(), clusters)
}

/// Cells synthesized on demand from `(seed, index)`; nothing is stored.
///
/// nnz is uniform in `[mean_nnz / 2, 3 mean_nnz / 2]`.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub n: usize,
    pub n_genes: usize,
    pub mean_nnz: usize,
    pub seed: u64,
}

impl CellSource for SyntheticStream {
    fn len(&self) -> usize {
        self.n
    }

    fn cell(&self, index: usize) -> Cow<'_, CellVector> {
        let mut rng = stream_rng(self.seed, "stream", index as u64);
        let lo = (self.mean_nnz / 2).max(1);
        let k = rng.random_range(lo..=self.mean_nnz + self.mean_nnz / 2);
        Cow::Owned(CellVector::new(format!("s{index}"), random_entries(&mut rng, self.n_genes, k)).unwrap())
    }
}

/// Parameters of the planted-interaction benchmark.
#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub n_cells: usize,
    pub n_genes: usize,
    pub n_pairs: usize,
    pub positive_fraction: f64,
    /// Background genes per cell.
    pub background_nnz: usize,
    /// Probability that a positive cell carries a given planted pair.
    pub injection_rate: f64,
    /// Level range of injected genes; background levels lie in `[0.5, 1.5)`.
    pub high_level: (f64, f64),
    /// Null control: each planted gene is injected independently, with the
    /// same marginal rate, so the two genes of a pair are no longer co-expressed.
    pub decouple: bool,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_cells: 200,
            n_genes: 120,
            n_pairs: 20,
            positive_fraction: 0.5,
            background_nnz: 12,
            injection_rate: 0.5,
            high_level: (5.0, 8.0),
            decouple: false,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub dataset: Dataset,
    /// Canonical `(i, j)` with `i < j`.
    pub pairs: Vec<(u32, u32)>,
}

/// Labelled dataset with `n_pairs` disjoint planted gene pairs that are
/// co-expressed at high level in positive cells.
pub fn planted_interactions(cfg: &PlantedConfig) -> PlantedData {
    assert!(2 * cfg.n_pairs <= cfg.n_genes, "not enough genes for the planted pairs");
    let mut rng = stream_rng(cfg.seed, "planted", 0);
    let planted_genes: Vec<u32> =
        sample(&mut rng, cfg.n_genes, 2 * cfg.n_pairs).into_iter().map(|g| g as u32).collect();
    let pairs: Vec<(u32, u32)> = planted_genes.chunks(2).map(|p| (p[0].min(p[1]), p[0].max(p[1]))).collect();

    let mut cells = Vec::with_capacity(cfg.n_cells);
    let mut labels = Vec::with_capacity(cfg.n_cells);
    let (lo, hi) = cfg.high_level;
    for c in 0..cfg.n_cells {
        let positive = rng.random::<f64>() < cfg.positive_fraction;
        let mut m: BTreeMap<u32, f64> = BTreeMap::new();
        for g in sample(&mut rng, cfg.n_genes, cfg.background_nnz.min(cfg.n_genes)) {
            m.insert(g as u32, 0.5 + rng.random::<f64>());
        }
        if positive {
            for &(a, b) in &pairs {
                if cfg.decouple {
                    for g in [a, b] {
                        if rng.random::<f64>() < cfg.injection_rate {
                            m.insert(g, rng.random_range(lo..hi));
                        }
                    }
                } else if rng.random::<f64>() < cfg.injection_rate {
                    m.insert(a, rng.random_range(lo..hi));
                    m.insert(b, rng.random_range(lo..hi));
                }
            }
        }
        cells.push(CellVector::new(format!("cell{c}"), m.into_iter().collect()).unwrap());
        labels.push(if positive { Label::Positive } else { Label::Negative });
    }
    let symbols: HashMap<u32, String> = (0..cfg.n_genes as u32).map(|g| (g, format!("G{g}"))).collect();
    let dataset =
        Dataset::new(cfg.n_genes, cells).unwrap().with_labels(labels).unwrap().with_symbols(symbols);
    PlantedData { dataset, pairs }
}
