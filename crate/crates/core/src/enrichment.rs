//! Pre-ranked enrichment scoring of a pair ranking against a ground-truth set.
//!
//! The running sum steps up by `1/N_h` at a hit and down by `1/(N - N_h)` at
//! a miss (unweighted, exponent 0). All trajectory values are kept as integer
//! numerators over `N_h * (N - N_h)` so extremal placements give exactly
//! `+-1` and the streaming scorer matches an explicit walk bit for bit.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::index::sample;

use crate::interaction::RankedPairs;
use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruthSet {
    pairs: HashSet<(u32, u32)>,
}

/// Lines dropped while reading a ground-truth file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroundTruthSkips {
    pub self_pairs: usize,
    pub unknown_symbols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnrichmentResult {
    pub es: f64,
    pub nes: f64,
    pub n_hits: usize,
    pub n_total: usize,
    pub n_permutations: usize,
    pub seed: u64,
    /// No permutation had the sign of `es`; NES was normalized by the mean
    /// magnitude over all permutations instead.
    pub mixed_sign_null: bool,
}

impl GroundTruthSet {
    pub fn new(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        Self {
            pairs: pairs.into_iter().filter(|&(a, b)| a != b).map(|(a, b)| (a.min(b), a.max(b))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: u32, b: u32) -> bool {
        self.pairs.contains(&(a.min(b), a.max(b)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.pairs.iter().copied()
    }
}

/// Two tab- or space-separated columns per line. If every entry parses as an
/// integer the file holds gene indices; otherwise symbols, resolved through
/// `symbols` (required in that case).
pub fn parse_ground_truth<R: BufRead>(
    reader: R,
    symbols: Option<&HashMap<u32, String>>,
) -> Result<(GroundTruthSet, GroundTruthSkips)> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() || t[0].starts_with('#') {
            continue;
        }
        if t.len() != 2 {
            return Err(Error::Parse { line: i + 1, msg: "expected two columns `gene_a gene_b`".into() });
        }
        rows.push((t[0].to_string(), t[1].to_string()));
    }
    let numeric = rows.iter().all(|(a, b)| a.parse::<u32>().is_ok() && b.parse::<u32>().is_ok());
    let mut skips = GroundTruthSkips::default();
    let mut pairs = HashSet::new();
    let by_symbol: Option<HashMap<&str, u32>> =
        symbols.map(|m| m.iter().map(|(&g, s)| (s.as_str(), g)).collect());
    for (a, b) in &rows {
        let (ga, gb) = if numeric {
            (a.parse().unwrap(), b.parse().unwrap())
        } else {
            let lookup = by_symbol.as_ref().ok_or_else(|| {
                Error::Config("ground truth uses symbols but no symbol file was given".into())
            })?;
            match (lookup.get(a.as_str()), lookup.get(b.as_str())) {
                (Some(&x), Some(&y)) => (x, y),
                _ => {
                    skips.unknown_symbols += 1;
                    continue;
                }
            }
        };
        if ga == gb {
            skips.self_pairs += 1;
            continue;
        }
        pairs.insert((ga.min(gb), ga.max(gb)));
    }
    Ok((GroundTruthSet { pairs }, skips))
}

/// Hit flags along the ranking.
pub fn hit_mask(ranked: &RankedPairs, gt: &GroundTruthSet) -> Vec<bool> {
    ranked.pairs.iter().map(|p| gt.contains(p.i, p.j)).collect()
}

fn check_hits(n_hits: usize, n: usize) -> Result<()> {
    if n_hits == 0 || n_hits >= n {
        return Err(Error::DegenerateHits { hits: n_hits, total: n });
    }
    Ok(())
}

/// Signed maximum deviation, given sorted 0-based hit positions in a list of
/// length `n`. Only the values just after each hit (maxima) and just before
/// each hit or at the end (minima) can be extremal, so this is O(N_h).
pub fn es_from_positions(positions: &[usize], n: usize) -> Result<f64> {
    let nh = positions.len() as i64;
    check_hits(positions.len(), n)?;
    let nm = n as i64 - nh;
    let (mut hi, mut lo) = (0i64, 0i64);
    for (k, &p) in positions.iter().enumerate() {
        let k = k as i64;
        let misses = p as i64 - k;
        lo = lo.min(k * nm - misses * nh);
        hi = hi.max((k + 1) * nm - misses * nh);
    }
    let denom = (nh * nm) as f64;
    // ties go to the positive side
    Ok(if hi >= -lo { hi as f64 / denom } else { lo as f64 / denom })
}

pub fn es_from_mask(hits: &[bool]) -> Result<f64> {
    let positions: Vec<usize> = hits.iter().enumerate().filter(|&(_, &h)| h).map(|(i, _)| i).collect();
    es_from_positions(&positions, hits.len())
}

/// Enrichment score of `ranked`; ground-truth pairs absent from the ranking
/// are ignored.
pub fn enrichment_score(ranked: &RankedPairs, gt: &GroundTruthSet) -> Result<f64> {
    es_from_mask(&hit_mask(ranked, gt))
}

fn permuted_es(n_hits: usize, n: usize, seed: u64, perm: usize) -> f64 {
    let mut rng = stream_rng(seed, "nes", perm as u64);
    let mut pos = sample(&mut rng, n, n_hits).into_vec();
    pos.sort_unstable();
    es_from_positions(&pos, n).expect("hit count checked by caller")
}

fn null_distribution(n_hits: usize, n: usize, n_perm: usize, seed: u64) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_perm).into_par_iter().map(|p| permuted_es(n_hits, n, seed, p)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_perm).map(|p| permuted_es(n_hits, n, seed, p)).collect()
    }
}

/// ES normalized by the mean magnitude of same-sign permutation scores, with
/// hit positions shuffled uniformly. Each permutation draws from its own
/// stream keyed by `(seed, index)`.
pub fn nes_from_mask(hits: &[bool], n_perm: usize, seed: u64) -> Result<EnrichmentResult> {
    if n_perm < 100 {
        return Err(Error::Config(format!("need at least 100 permutations, got {n_perm}")));
    }
    let es = es_from_mask(hits)?;
    let n_hits = hits.iter().filter(|&&h| h).count();
    let null = null_distribution(n_hits, hits.len(), n_perm, seed);
    let same: Vec<f64> = null.iter().copied().filter(|&v| (v >= 0.0) == (es >= 0.0)).collect();
    let mixed_sign_null = same.is_empty();
    let pool = if mixed_sign_null { &null } else { &same };
    let scale = pool.iter().map(|v| v.abs()).sum::<f64>() / pool.len() as f64;
    Ok(EnrichmentResult {
        es,
        nes: es / scale,
        n_hits,
        n_total: hits.len(),
        n_permutations: n_perm,
        seed,
        mixed_sign_null,
    })
}

pub fn nes(ranked: &RankedPairs, gt: &GroundTruthSet, n_perm: usize, seed: u64) -> Result<EnrichmentResult> {
    nes_from_mask(&hit_mask(ranked, gt), n_perm, seed)
}

impl EnrichmentResult {
    /// `es nes n_hits n_total n_perm seed`, tab-separated, one line.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.es, self.nes, self.n_hits, self.n_total, self.n_permutations, self.seed
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Explicit walk over the whole list with the extreme picked at the end.
    fn trajectory(hits: &[bool]) -> Vec<i64> {
        let nh = hits.iter().filter(|&&h| h).count() as i64;
        let nm = hits.len() as i64 - nh;
        let mut s = 0;
        hits.iter()
            .map(|&h| {
                s += if h { nm } else { -nh };
                s
            })
            .collect()
    }

    fn oracle(hits: &[bool]) -> f64 {
        let t = trajectory(hits);
        let nh = hits.iter().filter(|&&h| h).count() as i64;
        let denom = (nh * (hits.len() as i64 - nh)) as f64;
        let hi = *t.iter().max().unwrap();
        let lo = *t.iter().min().unwrap();
        let hi = hi.max(0);
        let lo = lo.min(0);
        if hi >= -lo {
            hi as f64 / denom
        } else {
            lo as f64 / denom
        }
    }

    fn mask(n: usize, hits: &[usize]) -> Vec<bool> {
        (0..n).map(|i| hits.contains(&i)).collect()
    }

    #[test]
    fn extremal_placements() {
        assert_eq!(es_from_mask(&mask(10, &[0, 1, 2])).unwrap(), 1.0);
        assert_eq!(es_from_mask(&mask(10, &[7, 8, 9])).unwrap(), -1.0);
    }

    #[test]
    fn hand_worked_example() {
        // hits at ranks 1 and 6 of 10: +1/2 then four steps of -1/8
        let m = mask(10, &[0, 5]);
        assert_eq!(es_from_mask(&m).unwrap(), 0.5);
        assert_eq!(oracle(&m), 0.5);
    }

    #[test]
    fn degenerate_hit_counts() {
        assert!(matches!(es_from_mask(&[false; 4]), Err(Error::DegenerateHits { .. })));
        assert!(matches!(es_from_mask(&[true; 4]), Err(Error::DegenerateHits { .. })));
    }

    #[test]
    fn ground_truth_parsing() {
        let sym: HashMap<u32, String> =
            [(0, "A"), (1, "B"), (2, "C")].into_iter().map(|(g, s)| (g, s.to_string())).collect();
        let (gt, skips) = parse_ground_truth("A\tB\nB\tA\nA\tA\nA\tZZZ\n".as_bytes(), Some(&sym)).unwrap();
        assert_eq!(gt.len(), 1);
        assert!(gt.contains(1, 0));
        assert_eq!(skips, GroundTruthSkips { self_pairs: 1, unknown_symbols: 1 });
        let (gt, _) = parse_ground_truth("3 1\n1 3\n2 5\n".as_bytes(), None).unwrap();
        assert_eq!(gt.len(), 2);
        assert!(parse_ground_truth("A\tB\n".as_bytes(), None).is_err());
        assert!(parse_ground_truth("1\t2\t3\n".as_bytes(), None).is_err());
    }

    #[test]
    fn nes_is_deterministic_and_needs_permutations() {
        let m = mask(200, &[0, 3, 9, 40, 100]);
        assert_eq!(nes_from_mask(&m, 200, 7).unwrap(), nes_from_mask(&m, 200, 7).unwrap());
        assert!(nes_from_mask(&m, 99, 7).is_err());
    }

    proptest! {
        #[test]
        fn streaming_matches_trajectory(hits in prop::collection::vec(any::<bool>(), 2..80)) {
            let nh = hits.iter().filter(|&&h| h).count();
            prop_assume!(nh > 0 && nh < hits.len());
            prop_assert_eq!(es_from_mask(&hits).unwrap(), oracle(&hits));
        }

        #[test]
        fn reversal_mirrors_trajectory(hits in prop::collection::vec(any::<bool>(), 2..80)) {
            let nh = hits.iter().filter(|&&h| h).count();
            prop_assume!(nh > 0 && nh < hits.len());
            // walking backwards visits the negated partial sums
            let t = trajectory(&hits);
            let rev: Vec<bool> = hits.iter().rev().copied().collect();
            let tr = trajectory(&rev);
            let lo = t.iter().copied().min().unwrap().min(0);
            let hi_rev = tr.iter().copied().max().unwrap().max(0);
            prop_assert_eq!(hi_rev, -lo);
        }
    }
}
