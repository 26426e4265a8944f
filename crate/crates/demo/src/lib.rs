//! Browser bindings for the interactive page in `www/`.

use std::collections::{HashMap, HashSet};

use wasm_bindgen::prelude::*;
use wds_core::cws::HashFamilyConfig;
use wds_core::enrichment::es_from_positions;
use wds_core::sampler::{imd, sample_without_replacement, uniform_plan, SampledSubset};
use wds_core::sketch::estimate_all;
use wds_core::sparse::exact_densities;
use wds_core::synth::{clustered_dataset, near_duplicate_population};

fn js(e: wds_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Sketch densities next to the exact O(n^2) densities for a clustered
/// synthetic population. Returns `[exact_0, sketch_0, exact_1, sketch_1, ...]`.
#[wasm_bindgen]
pub fn density_comparison(
    n: usize,
    clusters: usize,
    rows: usize,
    range: u32,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    if n == 0 || clusters == 0 {
        return Err(JsError::new("need at least one cell and one cluster"));
    }
    let seed = u64::from(seed);
    let (ds, _) = clustered_dataset(n, 2000, clusters, seed);
    let exact = exact_densities(&ds);
    let est = estimate_all(&ds, HashFamilyConfig::new(seed, rows, range).map_err(js)?).map_err(js)?;
    Ok(exact.iter().zip(&est.densities).flat_map(|(&e, &w)| [e, w]).collect())
}

/// Distinct diverse cells captured by an inverse-density sample and by a
/// uniform sample of the same size, on a population of near duplicates plus
/// a diverse minority. Returns `[wds, uniform, k, n_diverse]`.
#[wasm_bindgen]
pub fn diversity_comparison(
    n: usize,
    diverse_fraction: f64,
    sample_fraction: f64,
    seed: u32,
) -> Result<Vec<u32>, JsError> {
    if n == 0
        || !(0.0..=1.0).contains(&diverse_fraction)
        || !(sample_fraction > 0.0 && sample_fraction <= 1.0)
    {
        return Err(JsError::new("need n > 0, diverse fraction in [0, 1] and sample fraction in (0, 1]"));
    }
    let seed = u64::from(seed);
    let (ds, clusters) = near_duplicate_population(n, 5000, diverse_fraction, seed);
    let scores = estimate_all(&ds, HashFamilyConfig::new(seed, 100, 10_000).map_err(js)?).map_err(js)?;
    let index: HashMap<&str, usize> = scores.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let k = ((n as f64 * sample_fraction).round() as usize).max(1);
    let diverse = |sub: &SampledSubset| {
        sub.ids().iter().map(|id| clusters[index[id]]).filter(|&c| c != 0).collect::<HashSet<_>>().len()
            as u32
    };
    let wds = diverse(&sample_without_replacement(&imd(&scores, seed).map_err(js)?, k));
    let uni = diverse(&sample_without_replacement(&uniform_plan(scores.ids.clone(), seed).map_err(js)?, k));
    let n_diverse = clusters.iter().filter(|&&c| c != 0).count() as u32;
    Ok(vec![wds, uni, k as u32, n_diverse])
}

/// Running-sum walk of an unweighted enrichment score for a ranked list of
/// length `n` with hits at `positions` (0-based, any order). The walk has
/// `n + 1` points starting at 0; the last element appended is the ES.
#[wasm_bindgen]
pub fn enrichment_walk(n: usize, positions: &[u32]) -> Result<Vec<f64>, JsError> {
    let mut pos: Vec<usize> = positions.iter().map(|&p| p as usize).collect();
    pos.sort_unstable();
    pos.dedup();
    if pos.last().is_some_and(|&p| p >= n) {
        return Err(JsError::new("hit position beyond the list"));
    }
    let es = es_from_positions(&pos, n).map_err(js)?;
    let (nh, nm) = (pos.len() as f64, (n - pos.len()) as f64);
    let mut walk = Vec::with_capacity(n + 2);
    let mut s = 0.0;
    walk.push(s);
    let mut next = pos.iter().peekable();
    for i in 0..n {
        if next.peek() == Some(&&i) {
            next.next();
            s += 1.0 / nh;
        } else {
            s -= 1.0 / nm;
        }
        walk.push(s);
    }
    walk.push(es);
    Ok(walk)
}
