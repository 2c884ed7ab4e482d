use std::collections::{BTreeSet, HashMap};

use super::counts::{NgramCounts, BOS_ID};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
struct Context {
    total: f64,
    types: f64,
    successors: Vec<(TokenId, f64)>,
}

/// Interpolated Kneser–Ney language model with one absolute discount per order.
///
/// The highest order uses raw counts, lower orders use continuation counts, and the unigram
/// level interpolates with a uniform distribution over the support: the tokens observed in a
/// predicted position plus any explicitly registered extra tokens (typically `<unk>` and
/// `BLANK`). Tokens outside the support get probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    counts: NgramCounts,
    discounts: Vec<f64>,
    unigram: Vec<f64>,
    /// `contexts[k - 2]`: statistics of order-k predictions keyed by their (k-1)-token history.
    contexts: Vec<HashMap<Vec<TokenId>, Context>>,
}

/// Estimates with the same discount at every order.
pub fn estimate_kn(counts: &NgramCounts, discount: f64) -> Result<NgramLm> {
    estimate_kn_per_order(counts, vec![discount; counts.order()])
}

pub fn estimate_kn_per_order(counts: &NgramCounts, discounts: Vec<f64>) -> Result<NgramLm> {
    if discounts.len() != counts.order() {
        return Err(Error::InvalidArgument(format!(
            "{} discounts for an order-{} model",
            discounts.len(),
            counts.order()
        )));
    }
    if let Some(d) = discounts.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "discount {d} outside (0, 1)"
        )));
    }
    let n = counts.order();

    // Statistics per order: raw counts at the top, continuation counts below.
    let mut stats: Vec<HashMap<Vec<TokenId>, f64>> = Vec::with_capacity(n);
    for k in 1..=n {
        if k == n {
            stats.push(
                counts
                    .table(k)
                    .iter()
                    .map(|(g, &c)| (g.clone(), c as f64))
                    .collect(),
            );
        } else {
            let mut cont: HashMap<Vec<TokenId>, f64> = HashMap::new();
            for g in counts.table(k + 1).keys() {
                *cont.entry(g[1..].to_vec()).or_default() += 1.0;
            }
            stats.push(cont);
        }
    }

    let vocab_len = counts.vocab().len();
    let mut support: BTreeSet<TokenId> = counts.extra_support.clone();
    let mut uni_counts = vec![0.0; vocab_len];
    for (g, &c) in &stats[0] {
        if g[0] != BOS_ID {
            uni_counts[g[0] as usize] += c;
            support.insert(g[0]);
        }
    }
    if support.is_empty() {
        support.extend(0..vocab_len as TokenId);
    }
    let total: f64 = uni_counts.iter().sum();
    let types = uni_counts.iter().filter(|&&c| c > 0.0).count() as f64;
    let d1 = discounts[0];
    let mut unigram = vec![0.0; vocab_len];
    let floor_mass = if total > 0.0 { d1 * types / total } else { 1.0 };
    let floor = floor_mass / support.len() as f64;
    for &w in &support {
        let c = uni_counts[w as usize];
        let own = if total > 0.0 {
            (c - d1).max(0.0) / total
        } else {
            0.0
        };
        unigram[w as usize] = own + floor;
    }

    let mut contexts = Vec::with_capacity(n.saturating_sub(1));
    for stat in stats.iter().skip(1) {
        let mut by_ctx: HashMap<Vec<TokenId>, Context> = HashMap::new();
        for (g, &c) in stat {
            let (h, w) = g.split_at(g.len() - 1);
            let e = by_ctx.entry(h.to_vec()).or_insert_with(|| Context {
                total: 0.0,
                types: 0.0,
                successors: Vec::new(),
            });
            e.total += c;
            e.types += 1.0;
            e.successors.push((w[0], c));
        }
        for ctx in by_ctx.values_mut() {
            ctx.successors.sort_unstable_by_key(|&(w, _)| w);
        }
        contexts.push(by_ctx);
    }

    Ok(NgramLm {
        counts: counts.clone(),
        discounts,
        unigram,
        contexts,
    })
}

impl NgramLm {
    /// Order-1 model that is uniform over the whole vocabulary.
    pub fn uniform(vocab: Vocabulary) -> Self {
        let p = 1.0 / vocab.len() as f64;
        let counts = NgramCounts::with_vocab(1, Default::default(), vocab);
        NgramLm {
            unigram: vec![p; counts.vocab().len()],
            counts,
            discounts: vec![0.5],
            contexts: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.counts.order()
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.counts.vocab()
    }

    pub fn counts(&self) -> &NgramCounts {
        &self.counts
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    /// History padding for the start of a sentence.
    pub fn start_history(&self) -> Vec<TokenId> {
        if self.counts.options().boundaries {
            vec![BOS_ID; self.order() - 1]
        } else {
            Vec::new()
        }
    }

    /// Observed histories of length `k - 1` for order `k >= 2`.
    pub fn contexts(&self, k: usize) -> impl Iterator<Item = &[TokenId]> {
        self.contexts[k - 2].keys().map(Vec::as_slice)
    }

    /// Orders (ascending) whose history is observed, with their interpolation weight.
    fn active_levels(&self, history: &[TokenId]) -> Vec<(usize, f64, &Context)> {
        let max_k = self.order().min(history.len() + 1);
        (2..=max_k)
            .filter_map(|k| {
                let h = &history[history.len() - (k - 1)..];
                self.contexts[k - 2]
                    .get(h)
                    .map(|ctx| (k, self.discounts[k - 1] * ctx.types / ctx.total, ctx))
            })
            .collect()
    }

    pub fn prob(&self, word: TokenId, history: &[TokenId]) -> f64 {
        let mut p = self.unigram[word as usize];
        for (k, gamma, ctx) in self.active_levels(history) {
            let d = self.discounts[k - 1];
            let own = match ctx.successors.binary_search_by_key(&word, |&(w, _)| w) {
                Ok(i) => (ctx.successors[i].1 - d).max(0.0) / ctx.total,
                Err(_) => 0.0,
            };
            p = own + gamma * p;
        }
        p
    }

    /// Fills `out` (indexed by token id) with P(w | history).
    pub fn distribution_into(&self, history: &[TokenId], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.unigram.len());
        // P_n = s_n + g_n (s_{n-1} + g_{n-1} (... + g_2 P_1)); expand to one dense pass.
        let levels = self.active_levels(history);
        let mut scale = 1.0;
        for &(_, g, _) in levels.iter().rev() {
            scale *= g;
        }
        for (o, &u) in out.iter_mut().zip(&self.unigram) {
            *o = scale * u;
        }
        // Weight of level i is the product of gammas above it.
        let mut above = 1.0;
        for &(k, g, ctx) in levels.iter().rev() {
            let d = self.discounts[k - 1];
            for &(w, c) in &ctx.successors {
                out[w as usize] += above * (c - d).max(0.0) / ctx.total;
            }
            above *= g;
        }
    }

    pub fn distribution(&self, history: &[TokenId]) -> Vec<f64> {
        let mut out = vec![0.0; self.unigram.len()];
        self.distribution_into(history, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Granularity, Sentence};
    use crate::lm::counts::{count_ngrams, count_ngrams_with, CountOptions};

    fn s(line: &str) -> Sentence {
        Sentence::from_whitespace(line, Granularity::Word)
    }

    fn hand_model(d: f64) -> NgramLm {
        let c = count_ngrams_with(&[s("a b"), s("a c")], 2, CountOptions { boundaries: false });
        estimate_kn(&c, d).unwrap()
    }

    #[test]
    fn hand_evaluated_bigram() {
        let lm = hand_model(0.5);
        let v = lm.vocab();
        let (a, b, c) = (v.get("a").unwrap(), v.get("b").unwrap(), v.get("c").unwrap());
        // (1 - 0.5)/2 + (0.5 * 2/2) * (1/2)
        assert!((lm.prob(b, &[a]) - 0.5).abs() < 1e-12);
        assert!((lm.prob(b, &[a]) + lm.prob(c, &[a]) - 1.0).abs() < 1e-12);
        assert!((hand_model(1e-9).prob(b, &[a]) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn point_and_dense_queries_agree() {
        let corp = [s("a b c a"), s("b b c"), s("c a b a a")];
        let lm = estimate_kn(&count_ngrams(&corp, 3), 0.7).unwrap();
        for h in [vec![BOS_ID, BOS_ID], vec![3, 4], vec![4, 4], vec![5, 0]] {
            let dense = lm.distribution(&h);
            for w in 0..dense.len() as TokenId {
                assert!((dense[w as usize] - lm.prob(w, &h)).abs() < 1e-14);
            }
            assert!((dense.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn extra_support_gets_floor_mass() {
        let mut c = count_ngrams(&[s("a b")], 2);
        c.add_support(crate::vocab::UNK);
        let lm = estimate_kn(&c, 0.5).unwrap();
        let p = lm.prob(crate::vocab::UNK_ID, &[BOS_ID]);
        assert!(p > 0.0);
        assert_eq!(lm.prob(crate::vocab::BLANK_ID, &[BOS_ID]), 0.0);
    }

    #[test]
    fn larger_discount_lowers_the_top_successor() {
        let corp = [s("a b"), s("a b"), s("a b"), s("a c"), s("b c")];
        let counts = count_ngrams(&corp, 2);
        let a = counts.vocab().get("a").unwrap();
        let b = counts.vocab().get("b").unwrap();
        let mut last = f64::INFINITY;
        for d in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let p = estimate_kn(&counts, d).unwrap().prob(b, &[a]);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn rejects_bad_discount() {
        let c = count_ngrams(&[s("a")], 2);
        assert!(estimate_kn(&c, 0.0).is_err());
        assert!(estimate_kn(&c, 1.0).is_err());
    }

    #[test]
    fn unseen_history_backs_off() {
        let lm = estimate_kn(&count_ngrams(&[s("a b")], 3), 0.5).unwrap();
        let unseen = [7777, 8888];
        let p: f64 = (0..lm.vocab().len() as TokenId)
            .map(|w| lm.prob(w, &unseen))
            .sum();
        assert!((p - 1.0).abs() < 1e-12);
    }
}
