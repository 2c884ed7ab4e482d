//! Joint byte-pair encoding: greedy merge learning over a word-frequency table, merge replay
//! and merge reversal through an end-of-word marker.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use super::{Granularity, Sentence};
use crate::error::{Error, Result};
use crate::vocab::BLANK;

/// Suffix marking the last unit of a word. Words containing it are not supported.
pub const EOW: &str = "</w>";

type Pair = (String, String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
    vocab: BTreeSet<String>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<Pair>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        let mut vocab = BTreeSet::new();
        for (i, (l, r)) in merges.iter().enumerate() {
            if ranks.insert((l.clone(), r.clone()), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate merge {l:?} {r:?}"
                )));
            }
            vocab.insert(l.clone());
            vocab.insert(r.clone());
            vocab.insert(format!("{l}{r}"));
        }
        Ok(BpeModel {
            merges,
            ranks,
            vocab,
        })
    }

    pub fn merges(&self) -> &[Pair] {
        &self.merges
    }

    pub fn num_ops(&self) -> usize {
        self.merges.len()
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    /// Segments one word into units.
    pub fn segment(&self, word: &str) -> Vec<String> {
        if word == BLANK {
            return vec![BLANK.to_string()];
        }
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == l && &symbols[i + 1] == r {
                    merged.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Merges file: one `left right` pair per line in priority order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::parse(
                        path.display().to_string(),
                        i + 1,
                        "expected `left right`",
                    ))
                }
            }
        }
        BpeModel::from_merges(merges)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(EOW);
    }
    symbols
}

/// Learns `num_ops` merges from the joint word-frequency table of every given sentence.
///
/// Each step merges the most frequent adjacent pair; equal frequencies go to the
/// lexicographically smallest `(left, right)`. Learning stops early when no pair is left.
pub fn learn_bpe<'a, I>(sentences: I, num_ops: usize) -> BpeModel
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for s in sentences {
        for w in s.tokens() {
            if w != BLANK {
                *freq.entry(w.as_str()).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(&str, u64)> = freq.into_iter().collect();
    words.sort_unstable();
    let mut words: Vec<(Vec<String>, u64)> = words
        .into_iter()
        .map(|(w, f)| (initial_symbols(w), f))
        .collect();

    let mut counts: HashMap<Pair, u64> = HashMap::new();
    let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, (syms, f)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let key = (p[0].clone(), p[1].clone());
            *counts.entry(key.clone()).or_default() += f;
            where_.entry(key).or_default().insert(wi);
        }
    }

    let mut merges = Vec::with_capacity(num_ops);
    while merges.len() < num_ops {
        let best = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|(p, _)| p.clone());
        let Some(best) = best else { break };
        let joined = format!("{}{}", best.0, best.1);
        let mut touched: Vec<usize> = where_
            .get(&best)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        touched.sort_unstable();
        for wi in touched {
            let (syms, f) = &mut words[wi];
            let f = *f;
            for p in syms.windows(2) {
                let key = (p[0].clone(), p[1].clone());
                if let Some(c) = counts.get_mut(&key) {
                    *c -= f;
                }
                if let Some(set) = where_.get_mut(&key) {
                    set.remove(&wi);
                }
            }
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == best.0 && syms[i + 1] == best.1 {
                    merged.push(joined.clone());
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = merged;
            for p in syms.windows(2) {
                let key = (p[0].clone(), p[1].clone());
                *counts.entry(key.clone()).or_default() += f;
                where_.entry(key).or_default().insert(wi);
            }
        }
        counts.remove(&best);
        where_.remove(&best);
        merges.push(best);
    }

    let mut model = BpeModel::from_merges(merges).expect("learned merges are unique");
    for (syms, _) in &words {
        model.vocab.extend(syms.iter().cloned());
    }
    model
}

/// Segments every word of a word-level sentence.
pub fn apply_bpe(model: &BpeModel, s: &Sentence) -> Sentence {
    let units = s.tokens().iter().flat_map(|w| model.segment(w)).collect();
    Sentence::from_parts_unchecked(units, Granularity::Subword)
}

/// Joins units back into words. Returns the word-level sentence and the number of dangling
/// units (a word left open at a `BLANK` or at the end of the sentence), which are closed as
/// if the marker had been present.
pub fn reverse_bpe(s: &Sentence) -> (Sentence, usize) {
    let mut words = Vec::new();
    let mut pending = String::new();
    let mut dangling = 0;
    for unit in s.tokens() {
        if unit == BLANK {
            if !pending.is_empty() {
                words.push(std::mem::take(&mut pending));
                dangling += 1;
            }
            words.push(BLANK.to_string());
        } else if let Some(stem) = unit.strip_suffix(EOW) {
            pending.push_str(stem);
            if pending.is_empty() {
                dangling += 1;
            } else {
                words.push(std::mem::take(&mut pending));
            }
        } else {
            pending.push_str(unit);
        }
    }
    if !pending.is_empty() {
        words.push(pending);
        dangling += 1;
    }
    (
        Sentence::from_parts_unchecked(words, Granularity::Word),
        dangling,
    )
}
