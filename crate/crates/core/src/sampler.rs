//! Inverse Min-Max density (IMD) probabilities and weighted sampling without
//! replacement.

use std::io::{BufRead, Write};

use crate::rng::{hash_str, uniform};
use crate::sketch::DiversityScores;
use crate::{Error, Result};

/// Per-cell sampling probabilities, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub ids: Vec<String>,
    pub probabilities: Vec<f64>,
    pub seed: u64,
}

/// Sampled cells in draw order, with the probability each carried in the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSubset {
    pub members: Vec<(String, f64)>,
    pub target_k: usize,
}

impl SampledSubset {
    pub fn ids(&self) -> Vec<&str> {
        self.members.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|&(_, w)| w).collect()
    }

    /// `cell_id<TAB>probability`, one row per sampled cell.
    pub fn write_tsv<W: Write>(&self, out: W) -> Result<()> {
        write_pairs(self.members.iter().map(|(id, p)| (id.as_str(), *p)), out)
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let members = read_pairs(reader)?;
        Ok(Self { target_k: members.len(), members })
    }
}

/// Softmax of `1 / w` over all cells, with max-subtraction.
pub fn imd(scores: &DiversityScores, seed: u64) -> Result<SamplingPlan> {
    if scores.is_empty() {
        return Err(Error::Empty("density scores"));
    }
    let mut inv = Vec::with_capacity(scores.len());
    for (id, w) in scores.iter() {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::NonPositiveDensity(id.to_string()));
        }
        inv.push(1.0 / w);
    }
    Ok(SamplingPlan { ids: scores.ids.clone(), probabilities: softmax(&inv), seed })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Equal probabilities; the uniform-sampling baseline.
pub fn uniform_plan(ids: Vec<String>, seed: u64) -> Result<SamplingPlan> {
    if ids.is_empty() {
        return Err(Error::Empty("cell list"));
    }
    let p = 1.0 / ids.len() as f64;
    let probabilities = vec![p; ids.len()];
    Ok(SamplingPlan { ids, probabilities, seed })
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `cell_id<TAB>probability` per line.
    pub fn write_tsv<W: Write>(&self, out: W) -> Result<()> {
        write_pairs(self.ids.iter().map(String::as_str).zip(self.probabilities.iter().copied()), out)
    }

    pub fn read_tsv<R: BufRead>(reader: R, seed: u64) -> Result<Self> {
        let (ids, probabilities) = read_pairs(reader)?.into_iter().unzip();
        Ok(Self { ids, probabilities, seed })
    }
}

/// Draws `min(k, n)` distinct cells. Each cell gets the key `ln(u) / I(x)`
/// (the log of `u^(1/I(x))`) with `u` uniform and keyed on `(seed, cell id)`;
/// the `k` largest keys win. The first selected cell has probability exactly
/// `I(x)`. Members are returned in decreasing key order.
pub fn sample_without_replacement(plan: &SamplingPlan, k: usize) -> SampledSubset {
    let key = |i: usize| -> f64 {
        let p = plan.probabilities[i];
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        uniform(plan.seed, hash_str(&plan.ids[i]), 0).ln() / p
    };
    let mut keyed: Vec<(f64, usize)> = (0..plan.len()).map(|i| (key(i), i)).collect();
    let take = k.min(keyed.len());
    // descending key, ties by position
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if take > 0 && take < keyed.len() {
        keyed.select_nth_unstable_by(take - 1, order);
    }
    keyed.truncate(take);
    keyed.sort_unstable_by(order);
    SampledSubset {
        members: keyed.into_iter().map(|(_, i)| (plan.ids[i].clone(), plan.probabilities[i])).collect(),
        target_k: k,
    }
}

/// `sum I^2 / (sum I)^2` over the subset: the variance inflation of the
/// weighted interaction estimator relative to a single draw.
pub fn variance_factor(subset: &SampledSubset) -> Result<f64> {
    if subset.members.is_empty() {
        return Err(Error::Empty("subset"));
    }
    let (s1, s2) = subset.members.iter().fold((0.0, 0.0), |(s1, s2), &(_, w)| (s1 + w, s2 + w * w));
    Ok(s2 / (s1 * s1))
}

/// Sample size for a fraction of `n`, rounded to nearest.
pub fn k_for_fraction(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("sample fraction must lie in (0, 1], got {fraction}")));
    }
    Ok(((n as f64) * fraction).round() as usize)
}

fn write_pairs<'a, W: Write>(rows: impl Iterator<Item = (&'a str, f64)>, mut out: W) -> Result<()> {
    for (id, p) in rows {
        writeln!(out, "{id}\t{p}")?;
    }
    Ok(())
}

fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let (id, p) =
            line.split_once('\t').ok_or_else(|| bad("expected `cell_id<TAB>probability`".into()))?;
        let p: f64 = p.trim().parse().map_err(|_| bad(format!("bad probability {p:?}")))?;
        rows.push((id.to_string(), p));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scores(ws: &[f64]) -> DiversityScores {
        DiversityScores { ids: (0..ws.len()).map(|i| format!("c{i}")).collect(), densities: ws.to_vec() }
    }

    #[test]
    fn imd_examples() {
        let p = imd(&scores(&[2.0, 2.0]), 0).unwrap();
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
        assert_eq!(imd(&scores(&[3.7]), 0).unwrap().probabilities, vec![1.0]);
        let p = imd(&scores(&[1.0, 2.0]), 0).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(p.probabilities[0], e / (e + e.sqrt()), epsilon = 1e-12);
        assert_relative_eq!(p.probabilities[0], 0.6224593312018546, epsilon = 1e-12);
        assert_relative_eq!(p.probabilities[1], 0.3775406687981454, epsilon = 1e-12);
    }

    #[test]
    fn imd_rejects_zero_density() {
        assert!(matches!(imd(&scores(&[1.0, 0.0]), 0), Err(Error::NonPositiveDensity(_))));
    }

    #[test]
    fn k_edge_cases() {
        let plan = uniform_plan((0..20).map(|i| format!("c{i}")).collect(), 3).unwrap();
        assert!(sample_without_replacement(&plan, 0).members.is_empty());
        let all = sample_without_replacement(&plan, 20);
        let mut ids = all.ids();
        ids.sort_unstable();
        let mut expected: Vec<String> = plan.ids.clone();
        expected.sort_unstable();
        assert_eq!(ids, expected.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(sample_without_replacement(&plan, 50).members.len(), 20);
    }

    #[test]
    fn sampling_is_reproducible() {
        let plan = imd(&scores(&[1.0, 3.0, 2.0, 8.0, 1.5]), 99).unwrap();
        assert_eq!(sample_without_replacement(&plan, 3), sample_without_replacement(&plan, 3));
    }

    #[test]
    fn first_draw_is_proportional_to_probability() {
        let probs = [0.5, 0.3, 0.2];
        let trials = 30_000;
        let mut first = [0usize; 3];
        for s in 0..trials {
            let plan = SamplingPlan {
                ids: vec!["a".into(), "b".into(), "c".into()],
                probabilities: probs.to_vec(),
                seed: s,
            };
            let sub = sample_without_replacement(&plan, 1);
            first[plan.ids.iter().position(|x| *x == sub.members[0].0).unwrap()] += 1;
        }
        for (count, p) in first.iter().zip(probs) {
            let freq = *count as f64 / trials as f64;
            let se = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * se, "{freq} vs {p}");
        }
    }

    #[test]
    fn variance_factor_examples() {
        let sub = |w: &[f64]| SampledSubset {
            members: w.iter().enumerate().map(|(i, &x)| (format!("c{i}"), x)).collect(),
            target_k: w.len(),
        };
        assert_eq!(variance_factor(&sub(&[0.2; 4])).unwrap(), 0.25);
        assert_eq!(variance_factor(&sub(&[0.7])).unwrap(), 1.0);
        assert_eq!(variance_factor(&sub(&[0.5, 0.25, 0.25])).unwrap(), 0.375);
        assert!(variance_factor(&sub(&[])).is_err());
    }

    #[test]
    fn plan_tsv_round_trip() {
        let plan = imd(&scores(&[1.0, 2.0, 4.0]), 5).unwrap();
        let mut buf = Vec::new();
        plan.write_tsv(&mut buf).unwrap();
        assert_eq!(SamplingPlan::read_tsv(buf.as_slice(), 5).unwrap(), plan);
    }

    proptest! {
        #[test]
        fn imd_properties(ws in prop::collection::vec(1.0f64..500.0, 1..40), shift in 0.0f64..5.0) {
            let p = imd(&scores(&ws), 0).unwrap();
            prop_assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.probabilities.iter().all(|&x| x > 0.0));
            for i in 0..ws.len() {
                for j in 0..ws.len() {
                    if ws[i] < ws[j] {
                        prop_assert!(p.probabilities[i] > p.probabilities[j]);
                    }
                }
            }
            // shifting every logit leaves the softmax unchanged
            let inv: Vec<f64> = ws.iter().map(|w| 1.0 / w).collect();
            let shifted: Vec<f64> = inv.iter().map(|v| v + shift).collect();
            for (a, b) in softmax(&inv).iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-14);
            }
            // permuting the input permutes the output
            let mut rev = scores(&ws);
            rev.ids.reverse();
            rev.densities.reverse();
            let pr = imd(&rev, 0).unwrap();
            for (i, id) in p.ids.iter().enumerate() {
                let j = pr.ids.iter().position(|x| x == id).unwrap();
                prop_assert!((p.probabilities[i] - pr.probabilities[j]).abs() < 1e-15);
            }
        }
    }
}
