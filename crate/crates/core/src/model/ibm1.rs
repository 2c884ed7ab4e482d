//! IBM Model 1 lexical translation probabilities estimated with EM.

use std::collections::HashMap;

use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Sparse t(target | source) with an extra NULL source row.
///
/// Rows are indexed by source id; the NULL row sits at index `src_vocab.len()`. Each row is
/// sorted by target id and sums to one when nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct LexTable {
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    rows: Vec<Vec<(TokenId, f64)>>,
}

impl LexTable {
    pub(crate) fn from_rows(
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        rows: Vec<Vec<(TokenId, f64)>>,
    ) -> Self {
        debug_assert_eq!(rows.len(), src_vocab.len() + 1);
        LexTable {
            src_vocab,
            tgt_vocab,
            rows,
        }
    }

    pub fn src_vocab(&self) -> &Vocabulary {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocabulary {
        &self.tgt_vocab
    }

    pub fn null_index(&self) -> usize {
        self.src_vocab.len()
    }

    pub fn row(&self, index: usize) -> &[(TokenId, f64)] {
        &self.rows[index]
    }

    pub fn rows(&self) -> &[Vec<(TokenId, f64)>] {
        &self.rows
    }

    fn lookup(&self, row: usize, target: &str) -> f64 {
        let Some(t) = self.tgt_vocab.get(target) else {
            return 0.0;
        };
        let r = &self.rows[row];
        r.binary_search_by_key(&t, |&(w, _)| w)
            .map(|i| r[i].1)
            .unwrap_or(0.0)
    }

    /// t(target | source); `None` as source means NULL.
    pub fn prob(&self, source: Option<&str>, target: &str) -> f64 {
        match source {
            None => self.lookup(self.null_index(), target),
            Some(s) => match self.src_vocab.get(s) {
                Some(id) => self.lookup(id as usize, target),
                None => 0.0,
            },
        }
    }

    /// Rewrites target ids into `vocab`, merging entries whose token is missing there into
    /// `<unk>`. Row sums are preserved.
    pub fn remap_targets(&self, vocab: &Vocabulary) -> LexTable {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut merged: HashMap<TokenId, f64> = HashMap::new();
                for &(t, p) in row {
                    *merged
                        .entry(vocab.id_or_unk(self.tgt_vocab.token(t)))
                        .or_default() += p;
                }
                let mut v: Vec<_> = merged.into_iter().collect();
                v.sort_unstable_by_key(|&(w, _)| w);
                v
            })
            .collect();
        LexTable {
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: vocab.clone(),
            rows,
        }
    }
}

/// EM state over a fixed weighted bitext. Each [`Ibm1Em::step`] is one EM iteration.
pub struct Ibm1Em {
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    /// (row, target) of every parameter cell.
    cells: Vec<(u32, TokenId)>,
    params: Vec<f64>,
    /// Per pair: weight, source length incl. NULL, and the (len_src+1) x len_tgt cell grid
    /// stored target-major.
    pairs: Vec<(f64, usize, Vec<u32>)>,
    iterations: usize,
}

impl Ibm1Em {
    pub fn new(bitext: &[(&SentencePair, f64)]) -> Result<Self> {
        if bitext.is_empty() {
            return Err(Error::Empty("IBM Model 1 needs a nonempty bitext"));
        }
        let mut src_vocab = Vocabulary::new();
        let mut tgt_vocab = Vocabulary::new();
        for (p, _) in bitext {
            for t in p.source.tokens() {
                src_vocab.insert(t);
            }
            for t in p.target.tokens() {
                tgt_vocab.insert(t);
            }
        }
        let null_row = src_vocab.len() as u32;
        let mut cell_index: HashMap<(u32, TokenId), u32> = HashMap::new();
        let mut cells = Vec::new();
        let mut pairs = Vec::with_capacity(bitext.len());
        for &(p, w) in bitext {
            let src: Vec<u32> = p
                .source
                .tokens()
                .iter()
                .map(|t| src_vocab.get(t).unwrap())
                .chain(std::iter::once(null_row))
                .collect();
            let mut grid = Vec::with_capacity(src.len() * p.target.len());
            for t in p.target.tokens() {
                let t = tgt_vocab.get(t).unwrap();
                for &s in &src {
                    let id = *cell_index.entry((s, t)).or_insert_with(|| {
                        cells.push((s, t));
                        (cells.len() - 1) as u32
                    });
                    grid.push(id);
                }
            }
            pairs.push((w, src.len(), grid));
        }
        let observed_targets = tgt_vocab.len() as f64;
        Ok(Ibm1Em {
            params: vec![1.0 / observed_targets; cells.len()],
            src_vocab,
            tgt_vocab,
            cells,
            pairs,
            iterations: 0,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Weighted log-likelihood of the targets under the current parameters, with uniform
    /// alignment over source positions and NULL.
    pub fn log_likelihood(&self) -> f64 {
        let mut ll = 0.0;
        for (w, ls, grid) in &self.pairs {
            for col in grid.chunks(*ls) {
                let z: f64 = col.iter().map(|&c| self.params[c as usize]).sum();
                ll += w * (z / *ls as f64).ln();
            }
        }
        ll
    }

    /// One EM iteration; returns the log-likelihood under the parameters it started from.
    pub fn step(&mut self) -> f64 {
        let mut expected = vec![0.0; self.params.len()];
        let mut ll = 0.0;
        for (w, ls, grid) in &self.pairs {
            for col in grid.chunks(*ls) {
                let z: f64 = col.iter().map(|&c| self.params[c as usize]).sum();
                ll += w * (z / *ls as f64).ln();
                for &c in col {
                    expected[c as usize] += w * self.params[c as usize] / z;
                }
            }
        }
        let mut row_totals = vec![0.0; self.src_vocab.len() + 1];
        for (&(row, _), &e) in self.cells.iter().zip(&expected) {
            row_totals[row as usize] += e;
        }
        for (i, &(row, _)) in self.cells.iter().enumerate() {
            let total = row_totals[row as usize];
            self.params[i] = if total > 0.0 { expected[i] / total } else { 0.0 };
        }
        self.iterations += 1;
        ll
    }

    pub fn table(&self) -> LexTable {
        let mut rows: Vec<Vec<(TokenId, f64)>> = vec![Vec::new(); self.src_vocab.len() + 1];
        for (&(row, t), &p) in self.cells.iter().zip(&self.params) {
            if p > 0.0 {
                rows[row as usize].push((t, p));
            }
        }
        for r in &mut rows {
            r.sort_unstable_by_key(|&(w, _)| w);
        }
        LexTable::from_rows(self.src_vocab.clone(), self.tgt_vocab.clone(), rows)
    }
}

/// Runs `iterations` EM iterations from a uniform start.
pub fn train_ibm1_em(bitext: &[SentencePair], iterations: usize) -> Result<LexTable> {
    if iterations < 1 {
        return Err(Error::InvalidArgument(
            "IBM Model 1 needs at least one EM iteration".into(),
        ));
    }
    let weighted: Vec<_> = bitext.iter().map(|p| (p, 1.0)).collect();
    let mut em = Ibm1Em::new(&weighted)?;
    for _ in 0..iterations {
        em.step();
    }
    Ok(em.table())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn pair(src: &str, tgt: &str) -> SentencePair {
        SentencePair::new(
            Sentence::from_whitespace(src, crate::Granularity::Word),
            Sentence::from_whitespace(tgt, crate::Granularity::Word),
        )
        .unwrap()
    }

    #[test]
    fn single_pair_is_certain() {
        let t = train_ibm1_em(&[pair("a", "x")], 1).unwrap();
        assert_eq!(t.prob(Some("a"), "x"), 1.0);
        assert_eq!(t.prob(None, "x"), 1.0);
    }

    #[test]
    fn rejects_zero_iterations_and_empty_bitext() {
        assert!(train_ibm1_em(&[pair("a", "x")], 0).is_err());
        assert!(train_ibm1_em(&[], 3).is_err());
    }

    #[test]
    fn rows_are_normalized() {
        let bitext = [pair("a b", "x y"), pair("a c", "x z"), pair("b", "y")];
        let t = train_ibm1_em(&bitext, 5).unwrap();
        for row in t.rows() {
            if !row.is_empty() {
                let s: f64 = row.iter().map(|&(_, p)| p).sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&(_, p)| p >= 0.0));
            }
        }
        assert!(t.prob(Some("b"), "y") > t.prob(Some("b"), "x"));
    }

    #[test]
    fn likelihood_never_decreases() {
        let bitext = [pair("a b c", "x y"), pair("a c", "x z w"), pair("b", "y"), pair("c a", "z x")];
        let w: Vec<_> = bitext.iter().map(|p| (p, 1.0)).collect();
        let mut em = Ibm1Em::new(&w).unwrap();
        let mut last = f64::NEG_INFINITY;
        for _ in 0..20 {
            let ll = em.step();
            assert!(ll >= last - 1e-9);
            last = ll;
        }
        assert!(em.log_likelihood() >= last - 1e-9);
    }

    #[test]
    fn remap_merges_missing_targets_into_unk() {
        let t = train_ibm1_em(&[pair("a", "x y")], 3).unwrap();
        let v = Vocabulary::from_tokens(["x"]);
        let r = t.remap_targets(&v);
        let row = r.row(r.src_vocab().get("a").unwrap() as usize);
        let s: f64 = row.iter().map(|&(_, p)| p).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(row.iter().any(|&(w, _)| w == crate::vocab::UNK_ID));
    }
}
