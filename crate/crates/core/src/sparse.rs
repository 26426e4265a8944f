//! Sparse cell vectors, datasets, triplet-file ingestion and the exact
//! Min-Max similarity / density oracles.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::{Error, Result};

/// One observation: the expressed genes of a cell with their (positive) levels.
///
/// Gene indices are strictly increasing; absent genes have level zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVector {
    id: String,
    genes: Vec<u32>,
    levels: Vec<f64>,
}

impl CellVector {
    /// Builds a cell from unordered `(gene, level)` entries.
    pub fn new(id: impl Into<String>, mut entries: Vec<(u32, f64)>) -> Result<Self> {
        let id = id.into();
        if entries.is_empty() {
            return Err(Error::EmptyCell(id));
        }
        entries.sort_unstable_by_key(|&(g, _)| g);
        let mut genes = Vec::with_capacity(entries.len());
        let mut levels = Vec::with_capacity(entries.len());
        for (g, v) in entries {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidLevel { cell_id: id, level: v });
            }
            if genes.last() == Some(&g) {
                return Err(Error::DuplicateEntry { cell_id: id, gene: g });
            }
            genes.push(g);
            levels.push(v);
        }
        Ok(Self { id, genes, levels })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn genes(&self) -> &[u32] {
        &self.genes
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Number of expressed genes.
    pub fn nnz(&self) -> usize {
        self.genes.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.genes.iter().copied().zip(self.levels.iter().copied())
    }

    pub fn level(&self, gene: u32) -> Option<f64> {
        self.genes.binary_search(&gene).ok().map(|p| self.levels[p])
    }

    /// Same support, every level multiplied by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("scale factor must be positive, got {factor}")));
        }
        Ok(Self {
            id: self.id.clone(),
            genes: self.genes.clone(),
            levels: self.levels.iter().map(|v| v * factor).collect(),
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Log-normalization: `v -> ln(1 + v / sum(v) * total_scale)`; support is kept.
pub fn normalize_cell(cell: &CellVector, total_scale: f64) -> Result<CellVector> {
    if !(total_scale > 0.0 && total_scale.is_finite()) {
        return Err(Error::Config(format!("total scale must be positive, got {total_scale}")));
    }
    let total: f64 = cell.levels.iter().sum();
    let levels = cell.levels.iter().map(|v| (v / total * total_scale).ln_1p()).collect();
    Ok(CellVector { id: cell.id.clone(), genes: cell.genes.clone(), levels })
}

/// `sum_i min(x_i, y_i) / sum_i max(x_i, y_i)`, merging the two sorted supports.
pub fn min_max_similarity(x: &CellVector, y: &CellVector) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut num, mut den) = (0.0, 0.0);
    while i < x.genes.len() && j < y.genes.len() {
        match x.genes[i].cmp(&y.genes[j]) {
            std::cmp::Ordering::Less => {
                den += x.levels[i];
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                den += y.levels[j];
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                let (a, b) = (x.levels[i], y.levels[j]);
                num += a.min(b);
                den += a.max(b);
                i += 1;
                j += 1;
            }
        }
    }
    den += x.levels[i..].iter().sum::<f64>();
    den += y.levels[j..].iter().sum::<f64>();
    num / den
}

/// Exact Min-Max density of `q`: the sum of its similarity to every cell.
pub fn exact_density<S: CellSource + ?Sized>(source: &S, q: &CellVector) -> f64 {
    (0..source.len()).map(|i| min_max_similarity(&source.cell(i), q)).sum()
}

/// Exact densities for every cell of a dataset (O(n^2 nnz)).
pub fn exact_densities(dataset: &Dataset) -> Vec<f64> {
    let one = |q: &CellVector| exact_density(dataset, q);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        dataset.cells.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        dataset.cells.iter().map(one).collect()
    }
}

/// Random access to cells. Implemented by [`Dataset`] and by generators that
/// synthesize cells on demand, so multi-pass algorithms can stream data
/// without holding it in memory.
pub trait CellSource: Sync {
    fn len(&self) -> usize;

    fn cell(&self, index: usize) -> Cow<'_, CellVector>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CellSource for [CellVector] {
    fn len(&self) -> usize {
        <[CellVector]>::len(self)
    }

    fn cell(&self, index: usize) -> Cow<'_, CellVector> {
        Cow::Borrowed(&self[index])
    }
}

impl CellSource for Dataset {
    fn len(&self) -> usize {
        self.cells.len()
    }

    fn cell(&self, index: usize) -> Cow<'_, CellVector> {
        Cow::Borrowed(&self.cells[index])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// A collection of cells over a gene vocabulary of size `n_genes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_genes: usize,
    cells: Vec<CellVector>,
    labels: Option<Vec<Label>>,
    gene_symbols: Option<HashMap<u32, String>>,
}

impl Dataset {
    pub fn new(n_genes: usize, cells: Vec<CellVector>) -> Result<Self> {
        if n_genes == 0 {
            return Err(Error::Config("vocabulary size must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(cells.len());
        for c in &cells {
            if let Some(&g) = c.genes.last() {
                if g as usize >= n_genes {
                    return Err(Error::GeneOutOfRange { cell_id: c.id.clone(), gene: g, n_genes });
                }
            }
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateCell(c.id.clone()));
            }
        }
        Ok(Self { n_genes, cells, labels: None, gene_symbols: None })
    }

    /// Attaches labels aligned with `cells`.
    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != self.cells.len() {
            return Err(Error::Config(format!("{} labels for {} cells", labels.len(), self.cells.len())));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attaches labels by cell id; every cell must be covered.
    pub fn with_label_map(self, map: &HashMap<String, Label>) -> Result<Self> {
        let labels = self
            .cells
            .iter()
            .map(|c| map.get(&c.id).copied().ok_or_else(|| Error::MissingLabel(c.id.clone())))
            .collect::<Result<Vec<_>>>()?;
        self.with_labels(labels)
    }

    pub fn with_symbols(mut self, symbols: HashMap<u32, String>) -> Self {
        self.gene_symbols = Some(symbols);
        self
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn cells(&self) -> &[CellVector] {
        &self.cells
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn gene_symbols(&self) -> Option<&HashMap<u32, String>> {
        self.gene_symbols.as_ref()
    }

    pub fn nnz(&self) -> usize {
        self.cells.iter().map(CellVector::nnz).sum()
    }

    /// Applies [`normalize_cell`] to every cell.
    pub fn normalized(&self, total_scale: f64) -> Result<Self> {
        let cells = self.cells.iter().map(|c| normalize_cell(c, total_scale)).collect::<Result<Vec<_>>>()?;
        Ok(Self { cells, ..self.clone() })
    }

    /// Keeps the cells whose ids are listed, in the order given.
    pub fn subset(&self, ids: &[&str]) -> Result<Self> {
        let index: HashMap<&str, usize> =
            self.cells.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
        let mut cells = Vec::with_capacity(ids.len());
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(ids.len()));
        for id in ids {
            let &i = index.get(id).ok_or_else(|| Error::Config(format!("cell {id} not in dataset")))?;
            cells.push(self.cells[i].clone());
            if let (Some(out), Some(all)) = (labels.as_mut(), self.labels.as_ref()) {
                out.push(all[i]);
            }
        }
        let mut d = Dataset::new(self.n_genes, cells)?;
        d.labels = labels;
        d.gene_symbols = self.gene_symbols.clone();
        Ok(d)
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(l) => {
            let t = l.trim();
            if t.is_empty() || t.starts_with('%') {
                None
            } else {
                Some(Ok((i + 1, t.to_string())))
            }
        }
    })
}

/// Reads an expression triplet file plus optional labels and symbols.
///
/// Cells appear in order of first occurrence; entries are sorted by gene.
pub fn parse_triplets<E: BufRead, L: BufRead, S: BufRead>(
    expr: E,
    labels: Option<L>,
    symbols: Option<S>,
) -> Result<Dataset> {
    let mut lines = data_lines(expr);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(hline, "header must be `n_cells n_genes nnz`"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(hline, format!("bad integer {s:?}")));
    let (n_cells, n_genes, nnz) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);

    let mut order: Vec<String> = Vec::with_capacity(n_cells);
    let mut by_cell: HashMap<String, Vec<(u32, f64)>> = HashMap::with_capacity(n_cells);
    let mut count = 0usize;
    for item in lines {
        let (ln, line) = item?;
        let mut it = line.split_whitespace();
        let (Some(id), Some(g), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(parse_err(ln, "expected `cell_id gene_index level`"));
        };
        let gene: u32 = g.parse().map_err(|_| parse_err(ln, format!("bad gene index {g:?}")))?;
        let level: f64 = v.parse().map_err(|_| parse_err(ln, format!("bad level {v:?}")))?;
        if gene as usize >= n_genes {
            return Err(Error::GeneOutOfRange { cell_id: id.to_string(), gene, n_genes });
        }
        if !(level > 0.0 && level.is_finite()) {
            return Err(Error::InvalidLevel { cell_id: id.to_string(), level });
        }
        let entries = by_cell.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            Vec::new()
        });
        entries.push((gene, level));
        count += 1;
    }
    if count != nnz {
        return Err(parse_err(hline, format!("header declares {nnz} entries, found {count}")));
    }
    if order.len() != n_cells {
        return Err(parse_err(hline, format!("header declares {n_cells} cells, found {}", order.len())));
    }
    let cells = order
        .into_iter()
        .map(|id| {
            let entries = by_cell.remove(&id).unwrap_or_default();
            CellVector::new(id, entries)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = Dataset::new(n_genes, cells)?;
    if let Some(l) = labels {
        dataset = dataset.with_label_map(&parse_labels(l)?)?;
    }
    if let Some(s) = symbols {
        dataset = dataset.with_symbols(parse_symbols(s)?);
    }
    Ok(dataset)
}

/// `cell_id<TAB>label` with label 1 (positive) or 0 (negative).
pub fn parse_labels<R: BufRead>(reader: R) -> Result<HashMap<String, Label>> {
    let mut map = HashMap::new();
    for item in data_lines(reader) {
        let (ln, line) = item?;
        let (id, lab) = line.split_once('\t').ok_or_else(|| parse_err(ln, "expected `cell_id<TAB>label`"))?;
        let label = match lab.trim() {
            "1" => Label::Positive,
            "0" => Label::Negative,
            other => return Err(parse_err(ln, format!("label must be 0 or 1, got {other:?}"))),
        };
        if map.insert(id.trim().to_string(), label).is_some() {
            return Err(parse_err(ln, format!("cell {id} labelled twice")));
        }
    }
    Ok(map)
}

/// `gene_index<TAB>symbol`.
pub fn parse_symbols<R: BufRead>(reader: R) -> Result<HashMap<u32, String>> {
    let mut map = HashMap::new();
    for item in data_lines(reader) {
        let (ln, line) = item?;
        let (g, sym) =
            line.split_once('\t').ok_or_else(|| parse_err(ln, "expected `gene_index<TAB>symbol`"))?;
        let g: u32 = g.trim().parse().map_err(|_| parse_err(ln, format!("bad gene index {g:?}")))?;
        map.insert(g, sym.trim().to_string());
    }
    Ok(map)
}

/// Writes the triplet format read by [`parse_triplets`].
pub fn write_triplets<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    writeln!(out, "{} {} {}", dataset.cells.len(), dataset.n_genes, dataset.nnz())?;
    for c in &dataset.cells {
        for (g, v) in c.entries() {
            writeln!(out, "{} {} {}", c.id, g, v)?;
        }
    }
    Ok(())
}

pub fn write_labels<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let labels = dataset.labels().ok_or(Error::LabelsRequired("write_labels"))?;
    for (c, l) in dataset.cells.iter().zip(labels) {
        writeln!(out, "{}\t{}", c.id, u8::from(l.is_positive()))?;
    }
    Ok(())
}

pub fn write_symbols<W: Write>(symbols: &HashMap<u32, String>, mut out: W) -> Result<()> {
    let mut keys: Vec<_> = symbols.keys().copied().collect();
    keys.sort_unstable();
    for g in keys {
        writeln!(out, "{}\t{}", g, symbols[&g])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cell(id: &str, e: &[(u32, f64)]) -> CellVector {
        CellVector::new(id, e.to_vec()).unwrap()
    }

    fn parse(s: &str) -> Result<Dataset> {
        parse_triplets(s.as_bytes(), None::<&[u8]>, None::<&[u8]>)
    }

    #[test]
    fn parses_small_file() {
        let d = parse("% comment\n2 5 3\nc0 2 2.0\nc0 0 1.0\nc1 4 3.0\n").unwrap();
        assert_eq!(d.cells().len(), 2);
        assert_eq!(d.cells()[0].nnz(), 2);
        assert_eq!(d.cells()[1].nnz(), 1);
        assert_eq!(d.cells()[0].genes(), &[0, 2]);
        assert_eq!(d.n_genes(), 5);
    }

    #[test]
    fn rejects_duplicate_entry() {
        let err = parse("1 5 2\nc0 1 1.0\nc0 1 2.0\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { gene: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_out_of_range_gene() {
        let err = parse("1 5 1\nc0 5 1.0\n").unwrap_err();
        assert!(matches!(err, Error::GeneOutOfRange { gene: 5, n_genes: 5, .. }), "{err}");
    }

    #[test]
    fn rejects_zero_and_negative_levels() {
        assert!(matches!(parse("1 5 1\nc0 1 0\n"), Err(Error::InvalidLevel { .. })));
        assert!(matches!(parse("1 5 1\nc0 1 -2\n"), Err(Error::InvalidLevel { .. })));
    }

    #[test]
    fn rejects_count_mismatch() {
        assert!(matches!(parse("1 5 2\nc0 1 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("2 5 1\nc0 1 1\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_label_is_an_error() {
        let err =
            parse_triplets("2 5 2\nc0 0 1\nc1 1 1\n".as_bytes(), Some("c0\t1\n".as_bytes()), None::<&[u8]>)
                .unwrap_err();
        assert!(matches!(err, Error::MissingLabel(ref id) if id == "c1"));
    }

    #[test]
    fn labels_and_symbols_attach() {
        let d = parse_triplets(
            "2 5 2\nc0 0 1\nc1 1 1\n".as_bytes(),
            Some("c1\t0\nc0\t1\n".as_bytes()),
            Some("0\tAPOE\n1\tTREM2\n".as_bytes()),
        )
        .unwrap();
        assert_eq!(d.labels().unwrap(), &[Label::Positive, Label::Negative]);
        assert_eq!(d.gene_symbols().unwrap()[&1], "TREM2");
    }

    #[test]
    fn empty_cell_is_rejected() {
        assert!(matches!(CellVector::new("x", vec![]), Err(Error::EmptyCell(_))));
    }

    #[test]
    fn normalize_matches_hand_arithmetic() {
        let c = cell("a", &[(0, 4.0), (1, 6.0)]);
        let n = normalize_cell(&c, 10.0).unwrap();
        assert_relative_eq!(n.levels()[0], 1.6094379124341003, epsilon = 1e-12);
        assert_relative_eq!(n.levels()[1], 1.9459101490553132, epsilon = 1e-12);
        assert_eq!(n.genes(), c.genes());
    }

    #[test]
    fn normalize_single_entry() {
        let n = normalize_cell(&cell("a", &[(3, 17.0)]), 10_000.0).unwrap();
        assert_relative_eq!(n.levels()[0], 10_001f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn similarity_examples() {
        let x = cell("x", &[(0, 1.0), (1, 2.0)]);
        let y = cell("y", &[(0, 2.0), (1, 1.0)]);
        assert_eq!(min_max_similarity(&x, &x), 1.0);
        assert_eq!(min_max_similarity(&x, &y), 0.5);
        let z = cell("z", &[(5, 1.0)]);
        assert_eq!(min_max_similarity(&x, &z), 0.0);
    }

    #[test]
    fn density_examples() {
        let q = cell("q", &[(1, 2.0), (4, 0.5)]);
        let one = Dataset::new(5, vec![q.clone()]).unwrap();
        assert_eq!(exact_density(&one, &q), 1.0);
        let copies: Vec<_> = (0..7).map(|i| q.clone().with_id(format!("c{i}"))).collect();
        let many = Dataset::new(5, copies).unwrap();
        assert_eq!(exact_density(&many, &q), 7.0);
    }

    #[test]
    fn density_matches_dense_double_loop() {
        let d = crate::synth::random_dataset(50, 40, 3..12, 11);
        // dense re-implementation: expand to V-vectors and sum min/max directly
        let dense: Vec<Vec<f64>> = d
            .cells()
            .iter()
            .map(|c| {
                let mut v = vec![0.0; 40];
                for (g, l) in c.entries() {
                    v[g as usize] = l;
                }
                v
            })
            .collect();
        let exact = exact_densities(&d);
        for (qi, q) in dense.iter().enumerate() {
            let mut total = 0.0;
            for x in &dense {
                let (mut mn, mut mx) = (0.0, 0.0);
                for k in 0..40 {
                    mn += q[k].min(x[k]);
                    mx += q[k].max(x[k]);
                }
                total += mn / mx;
            }
            assert_relative_eq!(exact[qi], total, epsilon = 1e-12);
            assert!(exact[qi] >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn subset_keeps_labels_in_order() {
        let d = crate::synth::random_dataset(5, 10, 1..4, 3)
            .with_labels(vec![
                Label::Positive,
                Label::Negative,
                Label::Positive,
                Label::Negative,
                Label::Negative,
            ])
            .unwrap();
        let s = d.subset(&["cell3", "cell0"]).unwrap();
        assert_eq!(s.cells()[0].id(), "cell3");
        assert_eq!(s.labels().unwrap(), &[Label::Negative, Label::Positive]);
    }

    fn arb_cell(n_genes: u32) -> impl Strategy<Value = CellVector> {
        prop::collection::btree_map(0..n_genes, 0.01f64..100.0, 1..15)
            .prop_map(|m| CellVector::new("p", m.into_iter().collect()).unwrap())
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric_bounded_and_scale_free(
            x in arb_cell(30), y in arb_cell(30), c in 0.1f64..50.0
        ) {
            let s = min_max_similarity(&x, &y);
            prop_assert_eq!(s, min_max_similarity(&y, &x));
            prop_assert!((0.0..=1.0).contains(&s));
            let scaled = min_max_similarity(&x.scaled(c).unwrap(), &y.scaled(c).unwrap());
            prop_assert!((scaled - s).abs() < 1e-12);
            if x.genes() != y.genes() || x.levels() != y.levels() {
                prop_assert!(s < 1.0);
            }
        }

        #[test]
        fn triplet_round_trip(cells in prop::collection::vec(arb_cell(25), 1..8)) {
            let cells: Vec<_> = cells.into_iter().enumerate()
                .map(|(i, c)| c.with_id(format!("c{i}"))).collect();
            let d = Dataset::new(25, cells).unwrap();
            let mut buf = Vec::new();
            write_triplets(&d, &mut buf).unwrap();
            let back = parse_triplets(buf.as_slice(), None::<&[u8]>, None::<&[u8]>).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
