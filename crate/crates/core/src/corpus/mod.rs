//! Sentences, corpora and the preprocessing steps applied before training: tokenization,
//! length/ratio filtering, deduplication, subsampling, splits and joint BPE.

mod bpe;
pub mod io;
mod tokenize;

use std::collections::HashSet;
use std::hash::Hash;

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::seeded;

pub use bpe::{apply_bpe, learn_bpe, reverse_bpe, BpeModel, EOW};
pub use tokenize::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Word,
    Subword,
}

/// An ordered token sequence. Tokens are nonempty and contain no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    tokens: Vec<String>,
    granularity: Granularity,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, granularity: Granularity) -> Result<Self> {
        for t in &tokens {
            check_token(t)?;
        }
        Ok(Sentence {
            tokens,
            granularity,
        })
    }

    /// Builds a word-level sentence from tokens, panicking on invalid tokens.
    ///
    /// Meant for literals in tests and examples; use [`Sentence::new`] for untrusted input.
    pub fn words<S: AsRef<str>>(tokens: &[S]) -> Self {
        Sentence::new(
            tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            Granularity::Word,
        )
        .expect("invalid token")
    }

    /// Splits on whitespace. Never fails since whitespace-split pieces are valid tokens.
    pub fn from_whitespace(line: &str, granularity: Granularity) -> Self {
        Sentence {
            tokens: line.split_whitespace().map(str::to_string).collect(),
            granularity,
        }
    }

    pub(crate) fn from_parts_unchecked(tokens: Vec<String>, granularity: Granularity) -> Self {
        debug_assert!(tokens.iter().all(|t| check_token(t).is_ok()));
        Sentence {
            tokens,
            granularity,
        }
    }

    pub fn empty(granularity: Granularity) -> Self {
        Sentence {
            tokens: Vec::new(),
            granularity,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.tokens
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined rendering, the on-disk form.
    pub fn to_line(&self) -> String {
        self.tokens.join(" ")
    }
}

fn check_token(t: &str) -> Result<()> {
    if t.is_empty() {
        return Err(Error::InvalidToken {
            token: t.to_string(),
            reason: "empty token",
        });
    }
    if t.chars().any(char::is_whitespace) {
        return Err(Error::InvalidToken {
            token: t.to_string(),
            reason: "token contains whitespace",
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
}

impl SentencePair {
    pub fn new(source: Sentence, target: Sentence) -> Result<Self> {
        if source.granularity != target.granularity {
            return Err(Error::InvalidArgument(
                "pair sides have different granularity".into(),
            ));
        }
        Ok(SentencePair { source, target })
    }

    /// Swaps source and target, e.g. to train the reverse direction.
    pub fn swapped(&self) -> SentencePair {
        SentencePair {
            source: self.target.clone(),
            target: self.source.clone(),
        }
    }
}

/// Ordered collection of sentences or sentence pairs, with opaque language labels
/// (one for monolingual corpora, source then target for parallel ones).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus<T> {
    pub labels: Vec<String>,
    pub items: Vec<T>,
}

pub type MonoCorpus = Corpus<Sentence>;
pub type ParallelCorpus = Corpus<SentencePair>;

impl<T> Corpus<T> {
    pub fn new(labels: Vec<String>, items: Vec<T>) -> Self {
        Corpus { labels, items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.items.iter()
    }

    fn with_items(&self, items: Vec<T>) -> Self {
        Corpus {
            labels: self.labels.clone(),
            items,
        }
    }
}

impl<T: Clone> Corpus<T> {
    /// The first `n` items (or all of them when `n` exceeds the length).
    pub fn prefix(&self, n: usize) -> Self {
        self.with_items(self.items[..n.min(self.len())].to_vec())
    }
}

impl MonoCorpus {
    pub fn mono(label: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Corpus::new(vec![label.into()], sentences)
    }
}

impl ParallelCorpus {
    pub fn parallel(
        source_label: impl Into<String>,
        target_label: impl Into<String>,
        pairs: Vec<SentencePair>,
    ) -> Self {
        Corpus::new(vec![source_label.into(), target_label.into()], pairs)
    }

    pub fn source_label(&self) -> &str {
        self.labels.first().map(String::as_str).unwrap_or("src")
    }

    pub fn target_label(&self) -> &str {
        self.labels.get(1).map(String::as_str).unwrap_or("tgt")
    }

    pub fn sources(&self) -> MonoCorpus {
        MonoCorpus::mono(
            self.source_label(),
            self.items.iter().map(|p| p.source.clone()).collect(),
        )
    }

    pub fn targets(&self) -> MonoCorpus {
        MonoCorpus::mono(
            self.target_label(),
            self.items.iter().map(|p| p.target.clone()).collect(),
        )
    }

    /// The same corpus with every pair's sides exchanged.
    pub fn swapped(&self) -> ParallelCorpus {
        ParallelCorpus::parallel(
            self.target_label(),
            self.source_label(),
            self.items.iter().map(SentencePair::swapped).collect(),
        )
    }

    /// Both sides of every pair, source first.
    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.items.iter().flat_map(|p| [&p.source, &p.target])
    }
}

/// Default limits mirror the usual WMT preprocessing: 250 words per side, length ratio 1.5.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub max_len: usize,
    pub max_ratio: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_len: 250,
            max_ratio: 1.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 1 {
            return Err(Error::InvalidArgument("filter.max_len must be >= 1".into()));
        }
        if !(self.max_ratio >= 1.0) {
            return Err(Error::InvalidArgument(
                "filter.max_ratio must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn accepts(&self, pair: &SentencePair) -> bool {
        let (ls, lt) = (pair.source.len(), pair.target.len());
        if ls == 0 || lt == 0 {
            return false;
        }
        let ratio = (ls as f64 / lt as f64).max(lt as f64 / ls as f64);
        ls.max(lt) <= self.max_len && ratio <= self.max_ratio
    }
}

/// Keeps the pairs within the length and length-ratio limits, in order. Pairs with an
/// empty side are dropped.
pub fn filter_pairs(corpus: &ParallelCorpus, cfg: &FilterConfig) -> Result<ParallelCorpus> {
    cfg.validate()?;
    if corpus
        .iter()
        .any(|p| p.source.granularity != Granularity::Word)
    {
        return Err(Error::InvalidArgument(
            "filter_pairs expects word-level sentences".into(),
        ));
    }
    Ok(corpus.with_items(corpus.iter().filter(|p| cfg.accepts(p)).cloned().collect()))
}

/// Keeps the first occurrence of every exact item.
pub fn dedup<T: Clone + Eq + Hash>(corpus: &Corpus<T>) -> Corpus<T> {
    let mut seen = HashSet::with_capacity(corpus.len());
    let items = corpus
        .iter()
        .filter(|item| seen.insert(*item))
        .cloned()
        .collect();
    corpus.with_items(items)
}

/// Uniform sample of `n` items without replacement, in original order.
pub fn subsample<T: Clone>(corpus: &Corpus<T>, n: usize, seed: u64) -> Result<Corpus<T>> {
    if n > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot subsample {n} items from a corpus of {}",
            corpus.len()
        )));
    }
    let mut rng = seeded(seed);
    let mut idx = sample(&mut rng, corpus.len(), n).into_vec();
    idx.sort_unstable();
    Ok(corpus.with_items(idx.into_iter().map(|i| corpus.items[i].clone()).collect()))
}

/// Part sizes for a three-way split: `floor(f_i * n)` with the remainder added to the middle part.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let n1 = (a * n as f64).floor() as usize;
    let n3 = (c * n as f64).floor() as usize;
    let n1 = n1.min(n);
    let n3 = n3.min(n - n1);
    Ok((n1, n - n1 - n3, n3))
}

/// Random disjoint three-way partition; each part keeps the original relative order.
pub fn three_way_split<T: Clone>(
    corpus: &Corpus<T>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus<T>, Corpus<T>, Corpus<T>)> {
    let (n1, n2, _) = split_sizes(corpus.len(), fractions)?;
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut seeded(seed));
    let take = |part: &[usize]| {
        let mut part = part.to_vec();
        part.sort_unstable();
        corpus.with_items(part.into_iter().map(|i| corpus.items[i].clone()).collect())
    };
    Ok((
        take(&idx[..n1]),
        take(&idx[n1..n1 + n2]),
        take(&idx[n1 + n2..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(ls: usize, lt: usize) -> SentencePair {
        let side = |n: usize| Sentence::words(&vec!["w"; n]);
        SentencePair::new(side(ls), side(lt)).unwrap()
    }

    fn par(pairs: Vec<SentencePair>) -> ParallelCorpus {
        ParallelCorpus::parallel("de", "en", pairs)
    }

    #[test]
    fn sentence_rejects_bad_tokens() {
        assert!(Sentence::new(vec!["".into()], Granularity::Word).is_err());
        assert!(Sentence::new(vec!["a b".into()], Granularity::Word).is_err());
    }

    #[test]
    fn filter_length_and_ratio() {
        let cfg = FilterConfig::default();
        let c = par(vec![pair(251, 200), pair(16, 10), pair(10, 10), pair(0, 3), pair(15, 10)]);
        let kept = filter_pairs(&c, &cfg).unwrap();
        let lens: Vec<_> = kept.iter().map(|p| (p.source.len(), p.target.len())).collect();
        assert_eq!(lens, vec![(10, 10), (15, 10)]);
        assert_eq!(filter_pairs(&kept, &cfg).unwrap(), kept);
    }

    #[test]
    fn filter_rejects_invalid_config() {
        let c = par(vec![pair(1, 1)]);
        let bad = FilterConfig {
            max_len: 0,
            ..Default::default()
        };
        assert!(filter_pairs(&c, &bad).is_err());
        let bad = FilterConfig {
            max_ratio: 0.5,
            ..Default::default()
        };
        assert!(filter_pairs(&c, &bad).is_err());
    }

    #[test]
    fn dedup_exact_only() {
        let s1 = Sentence::words(&["a", "b"]);
        let s2 = Sentence::words(&["c"]);
        let s1b = Sentence::words(&["a", "c"]);
        let c = MonoCorpus::mono("en", vec![s1.clone(), s2.clone(), s1.clone(), s1b.clone()]);
        assert_eq!(dedup(&c).items, vec![s1, s2, s1b]);
        assert!(dedup(&MonoCorpus::mono("en", vec![])).is_empty());
        assert_eq!(dedup(&dedup(&c)), dedup(&c));
    }

    #[test]
    fn subsample_edges() {
        let c = MonoCorpus::mono(
            "en",
            (0..20).map(|i| Sentence::words(&[format!("w{i}")])).collect(),
        );
        assert_eq!(subsample(&c, 20, 1).unwrap(), c);
        assert!(subsample(&c, 0, 1).unwrap().is_empty());
        assert!(subsample(&c, 21, 1).is_err());
        let a = subsample(&c, 7, 42).unwrap();
        assert_eq!(a, subsample(&c, 7, 42).unwrap());
        let pos: Vec<usize> = a.iter().map(|s| c.items.iter().position(|x| x == s).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn split_sizes_arithmetic() {
        assert_eq!(split_sizes(10, (0.5, 0.3, 0.2)).unwrap(), (5, 3, 2));
        assert!(split_sizes(10, (0.5, 0.3, 0.3)).is_err());
        assert!(split_sizes(10, (-0.1, 0.9, 0.2)).is_err());
        let (a, b, c) = split_sizes(5_190_000, (0.123, 0.790, 0.087)).unwrap();
        assert_eq!(a + b + c, 5_190_000);
        assert!((a as f64 - 640e3).abs() < 5e3);
        assert!((b as f64 - 4.1e6).abs() < 5e3);
        assert!((c as f64 - 450e3).abs() < 5e3);
    }

    #[test]
    fn split_is_a_partition() {
        let c = MonoCorpus::mono(
            "en",
            (0..10).map(|i| Sentence::words(&[format!("w{i}")])).collect(),
        );
        let (a, b, d) = three_way_split(&c, (0.5, 0.3, 0.2), 9).unwrap();
        assert_eq!((a.len(), b.len(), d.len()), (5, 3, 2));
        let mut all: Vec<_> = a.iter().chain(b.iter()).chain(d.iter()).cloned().collect();
        all.sort_by_key(|s| s.to_line());
        let mut orig = c.items.clone();
        orig.sort_by_key(|s| s.to_line());
        assert_eq!(all, orig);
        assert_eq!(three_way_split(&c, (0.5, 0.3, 0.2), 9).unwrap().0, a);
    }
}
