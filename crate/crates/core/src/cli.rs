//! `wds` command-line front end.
//!
//! Every command takes flags; `--config FILE` supplies `key=value` defaults
//! (keys are long flag names) that explicit flags override. All randomness
//! comes from `--seed`, split into per-stage seeds by labelled hashing.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::attention::{forward_all, Model, ModelConfig};
use crate::cws::HashFamilyConfig;
use crate::enrichment::{nes, parse_ground_truth};
use crate::interaction::{
    aggregate, baseline_correlation_rank, AggregationMode, CorrelationMethod, RankedPairs,
};
use crate::rng::derive_seed;
use crate::sampler::{imd, k_for_fraction, sample_without_replacement, uniform_plan, SampledSubset};
use crate::sketch::{densities_from_sketch, estimate_all, DiversityScores, RaceSketch};
use crate::sparse::{
    exact_densities, parse_symbols, parse_triplets, write_labels, write_symbols, write_triplets, Dataset,
};
use crate::synth::{planted_interactions, PlantedConfig};

#[derive(Debug, Parser)]
#[command(
    name = "wds",
    version,
    about = "Diversified subset sampling and gene-pair discovery",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads (outputs do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// `key=value` file of defaults for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the R x B counter sketch (pass 1) and write it to --out.
    Sketch(SketchArgs),
    /// Estimated density per cell, from --sketch or by running both passes.
    Density(DensityArgs),
    /// Inverse-density (or --uniform) weighted subset without replacement.
    Sample(SampleArgs),
    /// Attention-map aggregation into a ranked gene-pair list.
    Discover(DiscoverArgs),
    /// Enrichment of a ranked pair list against a ground-truth pair set.
    Eval(EvalArgs),
    /// Exact O(n^2) densities, for validation.
    Oracle(OracleArgs),
    /// Write a labelled synthetic dataset with planted interacting pairs.
    Synth(SynthArgs),
    /// Write seeded model weights (manifest plus `.bin` blob).
    InitWeights(InitWeightsArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Expression triplet file.
    #[arg(long)]
    pub expr: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub symbols: Option<PathBuf>,
    /// Apply log(1 + v / sum * scale) to every cell first.
    #[arg(long, num_args = 0..=1, default_missing_value = "10000")]
    pub normalize: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HashArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hash rows R.
    #[arg(long, default_value_t = 100)]
    pub rows: usize,
    /// Hash range B.
    #[arg(long, default_value_t = 10_000)]
    pub range: u32,
}

impl HashArgs {
    fn family(&self) -> crate::Result<HashFamilyConfig> {
        HashFamilyConfig::new(derive_seed(self.seed, "sketch"), self.rows, self.range)
    }
}

#[derive(Debug, Args)]
pub struct SketchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hash: HashArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hash: HashArgs,
    /// Sketch from `wds sketch`; skips pass 1.
    #[arg(long)]
    pub sketch: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Density TSV from `wds density`.
    #[arg(long, required_unless_present = "expr", conflicts_with = "expr")]
    pub density: Option<PathBuf>,
    /// Expression file; densities are computed in-process.
    #[arg(long)]
    pub expr: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "10000")]
    pub normalize: Option<f64>,
    #[command(flatten)]
    pub hash: HashArgs,
    #[arg(long, required_unless_present = "k", conflicts_with = "k")]
    pub fraction: Option<f64>,
    #[arg(short = 'k', long = "k")]
    pub k: Option<usize>,
    /// Equal probabilities instead of inverse density.
    #[arg(long)]
    pub uniform: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Weight manifest; the blob is read from the same path with extension `bin`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub d_ff: usize,
}

impl ModelArgs {
    fn model(&self, n_genes: usize, seed: u64) -> anyhow::Result<Model> {
        let model = match &self.weights {
            Some(path) => Model::load(path, self.heads)
                .with_context(|| format!("loading weights {}", path.display()))?,
            None => Model::seeded(self.config(n_genes, seed))?,
        };
        if model.config.n_genes < n_genes {
            bail!("model vocabulary {} is smaller than dataset vocabulary {n_genes}", model.config.n_genes);
        }
        Ok(model)
    }

    fn config(&self, n_genes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_genes,
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            d_ff: self.d_ff,
            seed: derive_seed(seed, "model"),
        }
    }
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Subset TSV from `wds sample`; all cells when omitted.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub mode: AggregationMode,
    /// Weight each cell by its sampling probability.
    #[arg(long, requires = "subset")]
    pub weighted_estimator: bool,
    /// Rank by co-expression difference instead of attention.
    #[arg(long)]
    pub baseline: Option<CorrelationMethod>,
    #[arg(long, default_value_t = 10)]
    pub min_cells: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ranked pairs TSV from `wds discover`.
    #[arg(long)]
    pub ranked: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long)]
    pub symbols: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub n_perm: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub cells: usize,
    #[arg(long, default_value_t = 120)]
    pub genes: usize,
    #[arg(long, default_value_t = 20)]
    pub pairs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Directory for expr.txt, labels.tsv, symbols.tsv and ground_truth.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub genes: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path.
    #[arg(long)]
    pub out: PathBuf,
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_dataset(
    expr: &Path,
    labels: Option<&Path>,
    symbols: Option<&Path>,
    normalize: Option<f64>,
) -> anyhow::Result<Dataset> {
    let labels = labels.map(open).transpose()?;
    let symbols = symbols.map(open).transpose()?;
    let d = parse_triplets(open(expr)?, labels, symbols)
        .with_context(|| format!("parsing {}", expr.display()))?;
    Ok(match normalize {
        Some(scale) if scale > 0.0 => d.normalized(scale)?,
        Some(scale) => bail!("normalization scale must be positive, got {scale}"),
        None => d,
    })
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<Dataset> {
        load_dataset(&self.expr, self.labels.as_deref(), self.symbols.as_deref(), self.normalize)
    }
}

/// Turns `key=value` lines into `--key value` arguments. A bare `key` or a
/// value of `true` becomes a bare flag; `#` starts a comment.
pub fn config_args(text: &str) -> anyhow::Result<Vec<OsString>> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (line, None),
        };
        if key.is_empty() || key.contains(char::is_whitespace) {
            bail!("config line {}: bad key {key:?}", i + 1);
        }
        args.push(format!("--{}", key.replace('_', "-")).into());
        match value {
            Some("true") | None => {}
            Some(v) => args.push(v.into()),
        }
    }
    Ok(args)
}

/// Splices config-file arguments in right after the subcommand name so that
/// later, explicit flags win.
fn with_config(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let pos = args.iter().position(|a| a == "--config");
    let Some(pos) = pos else { return Ok(args) };
    let path = args.get(pos + 1).context("--config needs a path")?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.to_string_lossy()))?;
    let extra = config_args(&text)?;
    let mut rest: Vec<OsString> =
        args.iter().enumerate().filter(|&(i, _)| i != pos && i != pos + 1).map(|(_, a)| a.clone()).collect();
    // first non-flag argument after the binary name is the subcommand
    let mut sub = None;
    let mut i = 1;
    while i < rest.len() {
        let a = rest[i].to_string_lossy();
        if a == "--threads" {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            sub = Some(i);
            break;
        }
    }
    let sub = sub.context("no subcommand given")?;
    rest.splice(sub + 1..sub + 1, extra);
    Ok(rest)
}

pub fn main_with_args(args: Vec<OsString>) -> anyhow::Result<()> {
    let cli = Cli::parse_from(with_config(args)?);
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    run(cli.command)
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Sketch(a) => cmd_sketch(&a),
        Command::Density(a) => cmd_density(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Discover(a) => cmd_discover(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::InitWeights(a) => cmd_init_weights(&a),
    }
}

pub fn cmd_sketch(a: &SketchArgs) -> anyhow::Result<()> {
    let d = a.data.load()?;
    let sketch = RaceSketch::build(&d, a.hash.family()?)?;
    sketch.save(&a.out)?;
    Ok(())
}

pub fn cmd_density(a: &DensityArgs) -> anyhow::Result<()> {
    let d = a.data.load()?;
    let scores = match &a.sketch {
        Some(p) => {
            let sketch = RaceSketch::load(p).with_context(|| format!("loading sketch {}", p.display()))?;
            densities_from_sketch(&sketch, &d)
        }
        None => estimate_all(&d, a.hash.family()?)?,
    };
    let mut out = output(a.out.as_deref())?;
    scores.write_tsv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_sample(a: &SampleArgs) -> anyhow::Result<()> {
    let scores = match (&a.density, &a.expr) {
        (Some(p), _) => DiversityScores::read_tsv(open(p)?)?,
        (None, Some(expr)) => {
            let d = load_dataset(expr, None, None, a.normalize)?;
            if a.uniform {
                DiversityScores {
                    ids: d.cells().iter().map(|c| c.id().to_string()).collect(),
                    densities: vec![1.0; d.cells().len()],
                }
            } else {
                estimate_all(&d, a.hash.family()?)?
            }
        }
        (None, None) => bail!("one of --density or --expr is required"),
    };
    let seed = derive_seed(a.hash.seed, "sample");
    let plan = if a.uniform { uniform_plan(scores.ids.clone(), seed)? } else { imd(&scores, seed)? };
    let k = match (a.k, a.fraction) {
        (Some(k), _) => k,
        (None, Some(f)) => k_for_fraction(plan.len(), f)?,
        (None, None) => bail!("one of --fraction or -k is required"),
    };
    let subset = sample_without_replacement(&plan, k);
    let mut out = output(a.out.as_deref())?;
    subset.write_tsv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_discover(a: &DiscoverArgs) -> anyhow::Result<()> {
    let full = a.data.load()?;
    let (d, weights) = match &a.subset {
        Some(p) => {
            let subset = SampledSubset::read_tsv(open(p)?)?;
            let d = full.subset(&subset.ids())?;
            (d, a.weighted_estimator.then(|| subset.weights()))
        }
        None => (full, None),
    };
    let ranked = match a.baseline {
        Some(method) => baseline_correlation_rank(&d, method, a.min_cells)?,
        None => {
            let model = a.model.model(d.n_genes(), a.seed)?;
            let maps = forward_all(d.cells(), &model, a.batch_size);
            aggregate(&d, &maps, a.mode, weights.as_deref())?
        }
    };
    let mut out = output(a.out.as_deref())?;
    ranked.write_tsv(&mut out, d.gene_symbols())?;
    out.flush()?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let ranked = RankedPairs::read_tsv(open(&a.ranked)?)?;
    let symbols =
        a.symbols.as_deref().map(|p| -> anyhow::Result<_> { Ok(parse_symbols(open(p)?)?) }).transpose()?;
    let (gt, skips) = parse_ground_truth(open(&a.ground_truth)?, symbols.as_ref())?;
    if skips.self_pairs + skips.unknown_symbols > 0 {
        eprintln!(
            "ground truth: skipped {} self pairs and {} pairs with unknown symbols",
            skips.self_pairs, skips.unknown_symbols
        );
    }
    let result = nes(&ranked, &gt, a.n_perm, derive_seed(a.seed, "eval"))?;
    if result.mixed_sign_null {
        eprintln!("warning: no permutation matched the sign of ES; normalized over all permutations");
    }
    let mut out = output(a.out.as_deref())?;
    result.write_tsv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_oracle(a: &OracleArgs) -> anyhow::Result<()> {
    let d = a.data.load()?;
    let scores = DiversityScores {
        ids: d.cells().iter().map(|c| c.id().to_string()).collect(),
        densities: exact_densities(&d),
    };
    let mut out = output(a.out.as_deref())?;
    scores.write_tsv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let cfg = PlantedConfig {
        n_cells: a.cells,
        n_genes: a.genes,
        n_pairs: a.pairs,
        seed: a.seed,
        ..PlantedConfig::default()
    };
    if 2 * cfg.n_pairs > cfg.n_genes {
        bail!("{} pairs need at least {} genes", cfg.n_pairs, 2 * cfg.n_pairs);
    }
    let data = planted_interactions(&cfg);
    std::fs::create_dir_all(&a.out_dir)?;
    let file = |name: &str| output(Some(&a.out_dir.join(name)));
    let mut w = file("expr.txt")?;
    write_triplets(&data.dataset, &mut w)?;
    w.flush()?;
    let mut w = file("labels.tsv")?;
    write_labels(&data.dataset, &mut w)?;
    w.flush()?;
    let mut w = file("symbols.tsv")?;
    write_symbols(data.dataset.gene_symbols().expect("generator attaches symbols"), &mut w)?;
    w.flush()?;
    let mut w = file("ground_truth.tsv")?;
    for (i, j) in &data.pairs {
        writeln!(w, "G{i}\tG{j}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_init_weights(a: &InitWeightsArgs) -> anyhow::Result<()> {
    let model = Model::seeded(a.model.config(a.genes, a.seed))?;
    model.save(&a.out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines_become_flags() {
        let args = config_args("rows=200\n# comment\nuniform\nweighted_estimator = true\nrange = 500 # B\n")
            .unwrap();
        let args: Vec<String> = args.into_iter().map(|a| a.into_string().unwrap()).collect();
        assert_eq!(args, ["--rows", "200", "--uniform", "--weighted-estimator", "--range", "500"]);
        assert!(config_args("bad key=1").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "rows=7\nrange=300\n").unwrap();
        let args: Vec<OsString> =
            ["wds", "--config", cfg.to_str().unwrap(), "sketch", "--expr", "x", "--out", "y", "--rows", "9"]
                .iter()
                .map(OsString::from)
                .collect();
        let cli = Cli::parse_from(with_config(args).unwrap());
        let Command::Sketch(s) = cli.command else { panic!("expected sketch") };
        assert_eq!((s.hash.rows, s.hash.range), (9, 300));
    }
}
