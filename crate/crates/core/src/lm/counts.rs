use std::collections::{BTreeSet, HashMap};

use crate::corpus::Sentence;
use crate::vocab::{TokenId, Vocabulary, EOS_ID};

/// History padding symbol; conditioned on, never predicted, and not part of the vocabulary.
pub const BOS: &str = "<s>";
pub const BOS_ID: TokenId = TokenId::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountOptions {
    /// Pad each sentence with `order - 1` begin symbols and one `</s>`. Without boundaries only
    /// positions with a full-length history inside the sentence are counted.
    pub boundaries: bool,
}

impl Default for CountOptions {
    fn default() -> Self {
        CountOptions { boundaries: true }
    }
}

/// Exact n-gram counts of every order up to `order`, keyed by token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramCounts {
    pub(crate) order: usize,
    pub(crate) options: CountOptions,
    pub(crate) vocab: Vocabulary,
    /// `tables[k - 1]` holds the k-grams.
    pub(crate) tables: Vec<HashMap<Vec<TokenId>, u64>>,
    /// Tokens that receive probability through the uniform floor even when never observed.
    pub(crate) extra_support: BTreeSet<TokenId>,
}

impl NgramCounts {
    pub fn new(order: usize, options: CountOptions) -> Self {
        assert!(order >= 1, "n-gram order must be >= 1");
        NgramCounts {
            order,
            options,
            vocab: Vocabulary::new(),
            tables: vec![HashMap::new(); order],
            extra_support: BTreeSet::new(),
        }
    }

    /// Uses an existing vocabulary so that ids line up with another component.
    pub fn with_vocab(order: usize, options: CountOptions, vocab: Vocabulary) -> Self {
        let mut c = NgramCounts::new(order, options);
        c.vocab = vocab;
        c
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn options(&self) -> CountOptions {
        self.options
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn add_support(&mut self, token: &str) {
        let id = self.vocab.insert(token);
        self.extra_support.insert(id);
    }

    /// Adds `weight` occurrences of a sentence given as tokens. New tokens join the vocabulary.
    pub fn add_tokens<S: AsRef<str>>(&mut self, tokens: &[S], weight: u64) {
        let ids: Vec<TokenId> = tokens.iter().map(|t| self.vocab.insert(t.as_ref())).collect();
        self.add_ids(&ids, weight);
    }

    pub fn add_sentence(&mut self, s: &Sentence, weight: u64) {
        self.add_tokens(s.tokens(), weight);
    }

    pub(crate) fn add_ids(&mut self, ids: &[TokenId], weight: u64) {
        if weight == 0 {
            return;
        }
        let n = self.order;
        let seq: Vec<TokenId> = if self.options.boundaries {
            std::iter::repeat_n(BOS_ID, n - 1)
                .chain(ids.iter().copied())
                .chain(std::iter::once(EOS_ID))
                .collect()
        } else {
            ids.to_vec()
        };
        for end in (n - 1)..seq.len() {
            for k in 1..=n {
                let gram = &seq[end + 1 - k..=end];
                *self.tables[k - 1].entry(gram.to_vec()).or_default() += weight;
            }
        }
    }

    /// Count of an n-gram given as strings (`<s>` for padding); 0 if unseen.
    pub fn get(&self, gram: &[&str]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        let mut ids = Vec::with_capacity(gram.len());
        for t in gram {
            if *t == BOS {
                ids.push(BOS_ID);
            } else {
                match self.vocab.get(t) {
                    Some(id) => ids.push(id),
                    None => return 0,
                }
            }
        }
        self.tables[gram.len() - 1].get(&ids).copied().unwrap_or(0)
    }

    pub fn table(&self, k: usize) -> &HashMap<Vec<TokenId>, u64> {
        &self.tables[k - 1]
    }

    pub fn total(&self, k: usize) -> u64 {
        self.tables[k - 1].values().sum()
    }

    /// Renders an id n-gram back to strings.
    pub fn render(&self, gram: &[TokenId]) -> Vec<String> {
        gram.iter()
            .map(|&id| {
                if id == BOS_ID {
                    BOS.to_string()
                } else {
                    self.vocab.token(id).to_string()
                }
            })
            .collect()
    }

    /// Adds another table, remapping its ids into this vocabulary.
    pub fn merge(&mut self, other: &NgramCounts) {
        assert_eq!(self.order, other.order, "order mismatch");
        let remap: Vec<TokenId> = other
            .vocab
            .tokens()
            .iter()
            .map(|t| self.vocab.insert(t))
            .collect();
        let map = |id: TokenId| if id == BOS_ID { BOS_ID } else { remap[id as usize] };
        for (k, table) in other.tables.iter().enumerate() {
            for (gram, &c) in table {
                let g: Vec<TokenId> = gram.iter().map(|&i| map(i)).collect();
                *self.tables[k].entry(g).or_default() += c;
            }
        }
        for &id in &other.extra_support {
            self.extra_support.insert(map(id));
        }
    }
}

/// Counts n-grams over sentences with boundary padding.
pub fn count_ngrams<'a, I>(sentences: I, order: usize) -> NgramCounts
where
    I: IntoIterator<Item = &'a Sentence>,
{
    count_ngrams_with(sentences, order, CountOptions::default())
}

pub fn count_ngrams_with<'a, I>(sentences: I, order: usize, options: CountOptions) -> NgramCounts
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let mut counts = NgramCounts::new(order, options);
    for s in sentences {
        counts.add_sentence(s, 1);
    }
    counts
}
