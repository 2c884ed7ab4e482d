//! N-gram language models with interpolated Kneser–Ney smoothing.

mod counts;
mod kn;

use std::collections::HashMap;
use std::path::Path;

pub use counts::{count_ngrams, count_ngrams_with, CountOptions, NgramCounts, BOS, BOS_ID};
pub use kn::{estimate_kn, estimate_kn_per_order, NgramLm};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::textfmt::{fmt_f64, LineReader};
use crate::vocab::{TokenId, Vocabulary, BLANK, EOS_ID, UNK};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub order: usize,
    pub discount: f64,
    /// Training tokens seen fewer times than this are replaced by `<unk>`.
    pub min_count: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            order: 5,
            discount: 0.75,
            min_count: 2,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::InvalidArgument("lm.order must be >= 1".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidArgument(
                "lm.discount must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Trains a boundary-padded KN model over weighted sentences. Rare tokens become `<unk>`;
/// `<unk>` and `BLANK` always carry floor probability.
pub fn train_lm_weighted(sentences: &[(&Sentence, u64)], cfg: &LmConfig) -> Result<NgramLm> {
    cfg.validate()?;
    let mut freq: HashMap<&str, u64> = HashMap::new();
    if cfg.min_count > 1 {
        for &(s, w) in sentences {
            for t in s.tokens() {
                *freq.entry(t.as_str()).or_default() += w;
            }
        }
    }
    let mut counts = NgramCounts::new(cfg.order, CountOptions::default());
    counts.add_support(UNK);
    counts.add_support(BLANK);
    let mut buf: Vec<&str> = Vec::new();
    for &(s, w) in sentences {
        buf.clear();
        buf.extend(s.tokens().iter().map(|t| {
            if cfg.min_count > 1 && freq[t.as_str()] < cfg.min_count {
                UNK
            } else {
                t.as_str()
            }
        }));
        counts.add_tokens(&buf, w);
    }
    estimate_kn(&counts, cfg.discount)
}

pub fn train_lm<'a, I>(sentences: I, cfg: &LmConfig) -> Result<NgramLm>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let weighted: Vec<(&Sentence, u64)> = sentences.into_iter().map(|s| (s, 1)).collect();
    train_lm_weighted(&weighted, cfg)
}

/// Natural-log probability of a sentence including its `</s>`; OOV tokens score as `<unk>`.
pub fn lm_logprob(lm: &NgramLm, s: &Sentence) -> f64 {
    let ids: Vec<TokenId> = s
        .tokens()
        .iter()
        .map(|t| lm.vocab().id_or_unk(t))
        .collect();
    ids_logprob(lm, &ids)
}

pub(crate) fn ids_logprob(lm: &NgramLm, ids: &[TokenId]) -> f64 {
    let mut history = lm.start_history();
    let mut total = 0.0;
    for &w in ids.iter().chain(std::iter::once(&EOS_ID)) {
        total += lm.prob(w, &history).ln();
        history.push(w);
    }
    total
}

/// `exp(-logprob / tokens)` with every sentence contributing its length plus one for `</s>`.
pub fn perplexity<'a, I>(lm: &NgramLm, corpus: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let (mut lp, mut n) = (0.0, 0usize);
    for s in corpus {
        lp += lm_logprob(lm, s);
        n += s.len() + 1;
    }
    if n == 0 {
        return Err(Error::Empty("perplexity of an empty corpus"));
    }
    Ok((-lp / n as f64).exp())
}

const LM_MAGIC: &str = "ngram-lm";
const LM_VERSION: &str = "v1";

impl NgramLm {
    /// Plain-text table: header lines, the vocabulary, then one `order<TAB>tokens<TAB>count`
    /// row per n-gram. Smoothed parameters are re-derived from the counts on load.
    pub fn write_text(&self, out: &mut String) {
        use std::fmt::Write;
        let c = self.counts();
        let _ = writeln!(out, "{LM_MAGIC} {LM_VERSION}");
        let _ = writeln!(out, "order {}", c.order());
        let d: Vec<String> = self.discounts().iter().map(|&d| fmt_f64(d)).collect();
        let _ = writeln!(out, "discounts {}", d.join(" "));
        let _ = writeln!(out, "boundaries {}", c.options().boundaries);
        let _ = writeln!(out, "vocab {}", c.vocab().len());
        for t in c.vocab().tokens() {
            let _ = writeln!(out, "{t}");
        }
        let extra: Vec<&str> = c.extra_support.iter().map(|&i| c.vocab().token(i)).collect();
        let _ = writeln!(out, "support {}", extra.join(" "));
        let mut rows: Vec<(usize, Vec<String>, u64)> = Vec::new();
        for k in 1..=c.order() {
            for (g, &n) in c.table(k) {
                rows.push((k, c.render(g), n));
            }
        }
        rows.sort();
        let _ = writeln!(out, "ngrams {}", rows.len());
        for (k, g, n) in rows {
            let _ = writeln!(out, "{k}\t{}\t{n}", g.join(" "));
        }
        let _ = writeln!(out, "end {LM_MAGIC}");
    }

    pub fn read_text(r: &mut LineReader<'_>) -> Result<NgramLm> {
        r.expect_header(LM_MAGIC, LM_VERSION)?;
        let order: usize = r.expect_count("order")?;
        if order < 1 {
            return Err(r.error("order must be >= 1"));
        }
        let discounts = r
            .expect_key("discounts")?
            .split(' ')
            .map(|d| r.parse::<f64>(d))
            .collect::<Result<Vec<_>>>()?;
        let boundaries = r.expect_key("boundaries")?;
        let boundaries: bool = r.parse(boundaries)?;
        let nv = r.expect_count("vocab")?;
        let mut tokens = Vec::with_capacity(nv);
        for _ in 0..nv {
            tokens.push(r.next_line()?.to_string());
        }
        let vocab = Vocabulary::from_ordered(tokens).map_err(|e| r.error(e.to_string()))?;
        let mut counts = NgramCounts::with_vocab(order, CountOptions { boundaries }, vocab);
        let support = r.expect_key("support")?;
        for t in support.split(' ').filter(|t| !t.is_empty()) {
            if counts.vocab().get(t).is_none() {
                return Err(r.error(format!("support token {t:?} not in vocabulary")));
            }
            counts.add_support(t);
        }
        let rows = r.expect_count("ngrams")?;
        for _ in 0..rows {
            let line = r.next_line()?;
            let mut cols = line.split('\t');
            let (Some(k), Some(g), Some(n), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(r.error("expected order<TAB>ngram<TAB>count"));
            };
            let k: usize = r.parse(k)?;
            let n: u64 = r.parse(n)?;
            let ids = g
                .split(' ')
                .map(|t| {
                    if t == BOS {
                        Ok(BOS_ID)
                    } else {
                        counts
                            .vocab()
                            .get(t)
                            .ok_or_else(|| r.error(format!("unknown token {t:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if k < 1 || k > order || ids.len() != k {
                return Err(r.error(format!("bad n-gram order {k}")));
            }
            counts.tables[k - 1].insert(ids, n);
        }
        r.expect_key("end")?;
        estimate_kn_per_order(&counts, discounts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        self.write_text(&mut out);
        crate::corpus::io::write_atomic(path, &out)
    }

    pub fn load(path: &Path) -> Result<NgramLm> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NgramLm::read_text(&mut LineReader::new(&text, path.display().to_string()))
    }
}
