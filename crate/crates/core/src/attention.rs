//! A small set-input transformer encoder whose only output is the per-cell
//! attention map averaged over all layers and heads.
//!
//! Each expressed gene is one token: its embedding row scaled by the
//! expression level. There are no positional encodings and no causal mask,
//! so permuting the tokens permutes the rows and columns of the map and
//! changes nothing else. Blocks are pre-norm:
//!
//! ```text
//! x = x + MultiHead(LN1(x))
//! x = x + W2 relu(W1 LN2(x) + b1) + b2
//! ```
//!
//! Weights are either seeded Gaussian (std `1/sqrt(d_model)`) or loaded from
//! a manifest + little-endian `f32` blob (see [`Model::save`]).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::rng::stream_rng;
use crate::sparse::CellVector;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_genes: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: 32-dim model, 2 layers, 4 heads, 64-wide FFN.
    pub fn desk(n_genes: usize, seed: u64) -> Self {
        Self { n_genes, d_model: 32, n_layers: 2, n_heads: 4, d_ff: 64, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_genes, self.d_model, self.n_layers, self.n_heads, self.d_ff];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Matrices act on row vectors: `y = x W + b`, `W` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embedding: Array2<f64>,
    pub layers: Vec<LayerWeights>,
}

/// Layer- and head-averaged attention over one cell's expressed genes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Token order: `genes[p]` is the gene at row/column `p`.
    pub genes: Vec<u32>,
    pub values: Array2<f64>,
}

impl AttentionMap {
    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }
}

fn gaussian_f32(seed: u64, tensor: u64, shape: (usize, usize), std: f64) -> Array2<f64> {
    let mut rng = stream_rng(seed, "model", tensor);
    // drawn at f32 precision so save/load round-trips exactly
    Array2::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(&mut rng);
        f64::from((z * std) as f32)
    })
}

impl Model {
    /// Seeded Gaussian weights with std `1/sqrt(d_model)`, zero biases and
    /// identity layer norms.
    pub fn seeded(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let std = 1.0 / (d as f64).sqrt();
        let mut t = 0u64;
        let mut next = |shape| {
            t += 1;
            gaussian_f32(config.seed, t, shape, std)
        };
        let embedding = next((config.n_genes, d));
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln1_gamma: Array1::ones(d),
                ln1_beta: Array1::zeros(d),
                wq: next((d, d)),
                bq: Array1::zeros(d),
                wk: next((d, d)),
                bk: Array1::zeros(d),
                wv: next((d, d)),
                bv: Array1::zeros(d),
                wo: next((d, d)),
                bo: Array1::zeros(d),
                ln2_gamma: Array1::ones(d),
                ln2_beta: Array1::zeros(d),
                w1: next((d, config.d_ff)),
                b1: Array1::zeros(config.d_ff),
                w2: next((config.d_ff, d)),
                b2: Array1::zeros(d),
            })
            .collect();
        Ok(Self { config, embedding, layers })
    }

    /// Token embeddings: `level * E[gene]` for each `(gene, level)`.
    pub fn embed(&self, tokens: &[(u32, f64)]) -> Array2<f64> {
        let d = self.config.d_model;
        let mut x = Array2::zeros((tokens.len(), d));
        for (p, &(g, level)) in tokens.iter().enumerate() {
            let row = self.embedding.row(g as usize);
            x.row_mut(p).assign(&(&row * level));
        }
        x
    }

    /// Averaged attention map for tokens in the given order.
    pub fn forward_tokens(&self, tokens: &[(u32, f64)]) -> AttentionMap {
        self.forward_padded(&[tokens]).pop().expect("one sequence in, one map out")
    }

    /// Runs a batch padded to its longest sequence. Padded key positions get
    /// `-inf` logits, so they receive exactly zero attention.
    pub fn forward_padded(&self, seqs: &[&[(u32, f64)]]) -> Vec<AttentionMap> {
        let cfg = &self.config;
        let (d, heads, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let pad = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let nb = seqs.len();
        if pad == 0 {
            return seqs
                .iter()
                .map(|_| AttentionMap { genes: vec![], values: Array2::zeros((0, 0)) })
                .collect();
        }
        let mut x = Array2::<f64>::zeros((nb * pad, d));
        for (b, seq) in seqs.iter().enumerate() {
            x.slice_mut(s![b * pad..b * pad + seq.len(), ..]).assign(&self.embed(seq));
        }
        let mut maps = vec![Array2::<f64>::zeros((pad, pad)); nb];
        let scale = 1.0 / (hd as f64).sqrt();
        for layer in &self.layers {
            let h = layer_norm(x.view(), &layer.ln1_gamma, &layer.ln1_beta);
            let q = h.dot(&layer.wq) + &layer.bq;
            let k = h.dot(&layer.wk) + &layer.bk;
            let v = h.dot(&layer.wv) + &layer.bv;
            let mut mixed = Array2::<f64>::zeros((nb * pad, d));
            for (b, seq) in seqs.iter().enumerate() {
                let rows = b * pad..(b + 1) * pad;
                for head in 0..heads {
                    let cols = head * hd..(head + 1) * hd;
                    let qh = q.slice(s![rows.clone(), cols.clone()]);
                    let kh = k.slice(s![rows.clone(), cols.clone()]);
                    let vh = v.slice(s![rows.clone(), cols.clone()]);
                    let mut scores = qh.dot(&kh.t()) * scale;
                    masked_softmax_rows(&mut scores, seq.len());
                    maps[b] += &scores;
                    mixed.slice_mut(s![rows.clone(), cols]).assign(&scores.dot(&vh));
                }
            }
            x = x + mixed.dot(&layer.wo) + &layer.bo;
            let h2 = layer_norm(x.view(), &layer.ln2_gamma, &layer.ln2_beta);
            let mut f = h2.dot(&layer.w1) + &layer.b1;
            f.mapv_inplace(|z| z.max(0.0));
            x = x + f.dot(&layer.w2) + &layer.b2;
        }
        let norm = 1.0 / (cfg.n_layers * heads) as f64;
        seqs.iter()
            .zip(maps)
            .map(|(seq, m)| {
                let n = seq.len();
                AttentionMap {
                    genes: seq.iter().map(|&(g, _)| g).collect(),
                    values: m.slice(s![..n, ..n]).mapv(|v| v * norm),
                }
            })
            .collect()
    }

    /// Tensor names and shapes in file order.
    pub fn tensor_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (config.d_model, config.d_ff);
        let mut specs = vec![("embedding".to_string(), vec![config.n_genes, d])];
        for l in 0..config.n_layers {
            let p = format!("layer{l}");
            for (name, shape) in [
                ("ln1.gamma", vec![d]),
                ("ln1.beta", vec![d]),
                ("attn.wq", vec![d, d]),
                ("attn.bq", vec![d]),
                ("attn.wk", vec![d, d]),
                ("attn.bk", vec![d]),
                ("attn.wv", vec![d, d]),
                ("attn.bv", vec![d]),
                ("attn.wo", vec![d, d]),
                ("attn.bo", vec![d]),
                ("ln2.gamma", vec![d]),
                ("ln2.beta", vec![d]),
                ("ffn.w1", vec![d, f]),
                ("ffn.b1", vec![f]),
                ("ffn.w2", vec![f, d]),
                ("ffn.b2", vec![d]),
            ] {
                specs.push((format!("{p}.{name}"), shape));
            }
        }
        specs
    }

    fn flat_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embedding.as_slice().expect("standard layout")];
        for l in &self.layers {
            for a in [&l.ln1_gamma, &l.ln1_beta] {
                out.push(a.as_slice().unwrap());
            }
            for (w, b) in [(&l.wq, &l.bq), (&l.wk, &l.bk), (&l.wv, &l.bv), (&l.wo, &l.bo)] {
                out.push(w.as_slice().expect("standard layout"));
                out.push(b.as_slice().unwrap());
            }
            for a in [&l.ln2_gamma, &l.ln2_beta] {
                out.push(a.as_slice().unwrap());
            }
            out.push(l.w1.as_slice().expect("standard layout"));
            out.push(l.b1.as_slice().unwrap());
            out.push(l.w2.as_slice().expect("standard layout"));
            out.push(l.b2.as_slice().unwrap());
        }
        out
    }

    /// Writes the manifest (`name dim...` per tensor) and the blob of
    /// row-major little-endian `f32` values in manifest order.
    pub fn write_weights<M: Write, B: Write>(&self, mut manifest: M, mut blob: B) -> Result<()> {
        for ((name, shape), data) in Self::tensor_specs(&self.config).iter().zip(self.flat_tensors()) {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            writeln!(manifest, "{name} {}", dims.join(" "))?;
            for v in data {
                blob.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads weights written by [`Model::write_weights`]. The architecture is
    /// recovered from the manifest; the head count is not stored and must be
    /// supplied.
    pub fn read_weights<M: BufRead, B: Read>(manifest: M, mut blob: B, n_heads: usize) -> Result<Self> {
        let mut lines = Vec::new();
        for line in manifest.lines() {
            let line = line?;
            let mut it = line.split_whitespace();
            let Some(name) = it.next() else { continue };
            let shape = it
                .map(|t| {
                    t.parse::<usize>().map_err(|_| Error::Weights(format!("bad dimension {t:?} for {name}")))
                })
                .collect::<Result<Vec<_>>>()?;
            lines.push((name.to_string(), shape));
        }
        let (v, d) = match lines.first() {
            Some((name, shape)) if name == "embedding" && shape.len() == 2 => (shape[0], shape[1]),
            _ => return Err(Error::Weights("manifest must start with `embedding V d`".into())),
        };
        let n_layers = lines.iter().filter(|(n, _)| n.ends_with(".ln1.gamma")).count();
        let d_ff = lines
            .iter()
            .find(|(n, _)| n == "layer0.ffn.b1")
            .map(|(_, s)| s[0])
            .ok_or_else(|| Error::Weights("missing layer0.ffn.b1".into()))?;
        let config = ModelConfig { n_genes: v, d_model: d, n_layers, n_heads, d_ff, seed: 0 };
        config.validate()?;
        let specs = Self::tensor_specs(&config);
        if specs != lines {
            return Err(Error::Weights("manifest does not match the expected tensor layout".into()));
        }
        let mut model = Self::seeded(ModelConfig { seed: 0, ..config })?;
        let total: usize = specs.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let mut raw = Vec::with_capacity(total * 4);
        blob.read_to_end(&mut raw)?;
        if raw.len() != total * 4 {
            return Err(Error::Weights(format!("blob holds {} bytes, expected {}", raw.len(), total * 4)));
        }
        let mut values = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
        let mut fill = |dst: &mut [f64]| {
            for slot in dst {
                *slot = values.next().expect("length checked");
            }
        };
        fill(model.embedding.as_slice_mut().unwrap());
        for l in &mut model.layers {
            for a in [&mut l.ln1_gamma, &mut l.ln1_beta] {
                fill(a.as_slice_mut().unwrap());
            }
            for (w, b) in [
                (&mut l.wq, &mut l.bq),
                (&mut l.wk, &mut l.bk),
                (&mut l.wv, &mut l.bv),
                (&mut l.wo, &mut l.bo),
            ] {
                fill(w.as_slice_mut().unwrap());
                fill(b.as_slice_mut().unwrap());
            }
            for a in [&mut l.ln2_gamma, &mut l.ln2_beta] {
                fill(a.as_slice_mut().unwrap());
            }
            fill(l.w1.as_slice_mut().unwrap());
            fill(l.b1.as_slice_mut().unwrap());
            fill(l.w2.as_slice_mut().unwrap());
            fill(l.b2.as_slice_mut().unwrap());
        }
        Ok(model)
    }

    /// Saves `<path>` (manifest) and the blob next to it with extension `bin`.
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let mut m = BufWriter::new(File::create(manifest_path)?);
        let mut b = BufWriter::new(File::create(blob_path(manifest_path))?);
        self.write_weights(&mut m, &mut b)?;
        m.flush()?;
        b.flush()?;
        Ok(())
    }

    pub fn load(manifest_path: &Path, n_heads: usize) -> Result<Self> {
        let m = BufReader::new(File::open(manifest_path)?);
        let b = BufReader::new(File::open(blob_path(manifest_path))?);
        Self::read_weights(m, b, n_heads)
    }
}

/// The blob that accompanies a manifest: same path, extension `bin`.
pub fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn layer_norm(x: ArrayView2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out * gamma + beta
}

/// Row softmax where only the first `valid` columns participate.
fn masked_softmax_rows(scores: &mut Array2<f64>, valid: usize) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.iter().take(valid).copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j < valid {
                *v = (*v - max).exp();
                total += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / total);
    }
}

/// Embeddings for a cell: `level * E[gene]` in entry order.
pub fn embed_cell(cell: &CellVector, model: &Model) -> Array2<f64> {
    let tokens: Vec<_> = cell.entries().collect();
    model.embed(&tokens)
}

/// Averaged attention map of one cell.
pub fn forward_attention(cell: &CellVector, model: &Model) -> AttentionMap {
    let tokens: Vec<_> = cell.entries().collect();
    model.forward_tokens(&tokens)
}

/// Averaged attention maps of a batch, padded to its longest cell.
pub fn forward_batch(cells: &[CellVector], model: &Model) -> Vec<AttentionMap> {
    let tokens: Vec<Vec<(u32, f64)>> = cells.iter().map(|c| c.entries().collect()).collect();
    let views: Vec<&[(u32, f64)]> = tokens.iter().map(Vec::as_slice).collect();
    model.forward_padded(&views)
}

/// Maps for many cells: consecutive batches of `batch_size`, run in parallel.
pub fn forward_all(cells: &[CellVector], model: &Model, batch_size: usize) -> Vec<AttentionMap> {
    let size = batch_size.max(1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cells.par_chunks(size).flat_map_iter(|c| forward_batch(c, model)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cells.chunks(size).flat_map(|c| forward_batch(c, model)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_cell;

    fn model(n_genes: usize) -> Model {
        Model::seeded(ModelConfig::desk(n_genes, 7)).unwrap()
    }

    fn assert_stochastic(m: &AttentionMap) {
        for row in m.values.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6, "row sum {}", row.sum());
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::desk(10, 0);
        c.n_heads = 5;
        assert!(Model::seeded(c).is_err());
        c.n_heads = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn embedding_is_linear_in_level_and_seeded() {
        let m = model(50);
        let a = m.embed(&[(3, 1.5), (9, 2.0)]);
        let b = m.embed(&[(3, 3.0), (9, 2.0)]);
        assert_eq!(b.row(0), a.row(0).mapv(|v| v * 2.0));
        assert_eq!(b.row(1), a.row(1));
        assert!(a.rows().into_iter().all(|r| r.iter().any(|&v| v != 0.0)));
        assert_eq!(model(50).embedding, m.embedding);
    }

    #[test]
    fn single_token_map_is_one() {
        let m = model(20);
        let map = m.forward_tokens(&[(4, 2.0)]);
        assert_eq!(map.values, ndarray::arr2(&[[1.0]]));
    }

    #[test]
    fn maps_are_row_stochastic() {
        let m = model(300);
        for i in 0..5 {
            let c = random_cell(&format!("c{i}"), 300, 5 + 7 * i, 3);
            assert_stochastic(&forward_attention(&c, &m));
        }
    }

    #[test]
    fn batch_matches_solo() {
        let m = model(200);
        let short = random_cell("s", 200, 3, 1);
        let long = random_cell("l", 200, 7, 2);
        let batch = forward_batch(&[short.clone(), long.clone()], &m);
        for (cell, got) in [short, long].iter().zip(&batch) {
            let solo = forward_attention(cell, &m);
            assert_eq!(solo.genes, got.genes);
            let diff = (&solo.values - &got.values).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff < 1e-5, "{diff}");
        }
        assert_eq!(
            forward_batch(std::slice::from_ref(&batch_one()), &m)[0],
            forward_attention(&batch_one(), &m)
        );
    }

    fn batch_one() -> CellVector {
        random_cell("one", 200, 6, 4)
    }

    #[test]
    fn weights_round_trip() {
        let m = Model::seeded(ModelConfig {
            n_genes: 15,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            seed: 3,
        })
        .unwrap();
        let (mut man, mut blob) = (Vec::new(), Vec::new());
        m.write_weights(&mut man, &mut blob).unwrap();
        let text = String::from_utf8(man.clone()).unwrap();
        assert!(text.starts_with("embedding 15 8\nlayer0.ln1.gamma 8\n"));
        let back = Model::read_weights(man.as_slice(), blob.as_slice(), 2).unwrap();
        assert_eq!(back.embedding, m.embedding);
        assert_eq!(back.layers, m.layers);
        assert!(Model::read_weights(man.as_slice(), &blob[4..], 2).is_err());
    }
}
