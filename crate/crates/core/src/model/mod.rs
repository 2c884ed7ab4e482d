//! A small conditional translation model: IBM Model 1 lexical probabilities averaged over the
//! source words, mixed with a target-side Kneser–Ney language model.
//!
//! Every decoder consumes models through [`NextTokenModel`], so hand-built test models and the
//! trained [`TranslationModel`] are interchangeable.

mod ibm1;
mod io;

pub use ibm1::{train_ibm1_em, Ibm1Em, LexTable};

use crate::corpus::{Sentence, SentencePair};
use crate::error::{Error, Result};
use crate::lm::{train_lm_weighted, LmConfig, NgramLm};
use crate::vocab::{TokenId, Vocabulary, EOS_ID};

/// A source-conditioned autoregressive distribution over a dense target vocabulary.
pub trait NextTokenModel {
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> TokenId {
        EOS_ID
    }

    /// Writes P(w | prefix) for every token id into `out` (length [`Self::vocab_size`]).
    fn next_token_distribution(&self, prefix: &[TokenId], out: &mut [f64]);

    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size()];
        self.next_token_distribution(prefix, &mut out);
        out
    }
}

impl<M: NextTokenModel + ?Sized> NextTokenModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> TokenId {
        (**self).eos()
    }
    fn next_token_distribution(&self, prefix: &[TokenId], out: &mut [f64]) {
        (**self).next_token_distribution(prefix, out)
    }
}

/// Natural-log probability of `target` followed by end-of-sentence; `-inf` if any step has
/// probability zero.
pub fn sequence_logprob<M: NextTokenModel + ?Sized>(m: &M, target: &[TokenId]) -> f64 {
    let mut dist = vec![0.0; m.vocab_size()];
    let mut total = 0.0;
    for t in 0..=target.len() {
        m.next_token_distribution(&target[..t], &mut dist);
        let y = if t < target.len() { target[t] } else { m.eos() };
        let p = dist[y as usize];
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += p.ln();
    }
    total
}

/// Forces end-of-sentence once the prefix holds `cap` tokens.
pub struct LengthCapped<M> {
    pub inner: M,
    pub cap: usize,
}

impl<M: NextTokenModel> NextTokenModel for LengthCapped<M> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn eos(&self) -> TokenId {
        self.inner.eos()
    }
    fn next_token_distribution(&self, prefix: &[TokenId], out: &mut [f64]) {
        if prefix.len() >= self.cap {
            out.fill(0.0);
            out[self.eos() as usize] = 1.0;
        } else {
            self.inner.next_token_distribution(prefix, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Weight of the lexical component; the LM gets `1 - lambda_lex`.
    pub lambda_lex: f64,
    pub lm_order: usize,
    pub lm_discount: f64,
    /// Upper bound on EM iterations (the exact count when no held-out set is used).
    pub em_iterations: usize,
    /// Stop when held-out cross-entropy fails to improve by this much ...
    pub min_improvement: f64,
    /// ... for this many consecutive evaluations.
    pub patience: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lambda_lex: 0.5,
            lm_order: 4,
            lm_discount: 0.75,
            em_iterations: 10,
            min_improvement: 1e-4,
            patience: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_lex) {
            return Err(Error::InvalidArgument(
                "model.lambda_lex must be in [0, 1]".into(),
            ));
        }
        if self.em_iterations < 1 {
            return Err(Error::InvalidArgument(
                "model.em_iterations must be >= 1".into(),
            ));
        }
        self.lm_config().validate()
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            order: self.lm_order,
            discount: self.lm_discount,
            min_count: 1,
        }
    }
}

/// Lexical table plus target LM plus mixture weights. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationModel {
    lex: LexTable,
    lm: NgramLm,
    lambda_lex: f64,
    lambda_lm: f64,
}

impl TranslationModel {
    /// Combines a lexical table and a target LM; the lexical targets are remapped onto the
    /// LM vocabulary, which becomes the model's target vocabulary.
    pub fn new(lex: &LexTable, lm: NgramLm, lambda_lex: f64, lambda_lm: f64) -> Result<Self> {
        if lambda_lex < 0.0 || lambda_lm < 0.0 || (lambda_lex + lambda_lm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights {lambda_lex} and {lambda_lm} must be nonnegative and sum to 1"
            )));
        }
        if lm.vocab().len() <= 3 {
            return Err(Error::Empty("target vocabulary"));
        }
        Ok(TranslationModel {
            lex: lex.remap_targets(lm.vocab()),
            lm,
            lambda_lex,
            lambda_lm,
        })
    }

    pub fn lex(&self) -> &LexTable {
        &self.lex
    }

    pub fn lm(&self) -> &NgramLm {
        &self.lm
    }

    pub fn lambdas(&self) -> (f64, f64) {
        (self.lambda_lex, self.lambda_lm)
    }

    pub fn vocab_src(&self) -> &Vocabulary {
        self.lex.src_vocab()
    }

    pub fn vocab_tgt(&self) -> &Vocabulary {
        self.lm.vocab()
    }

    /// Same lexical table and LM with different mixture weights.
    pub fn with_lambdas(&self, lambda_lex: f64) -> Result<Self> {
        let mut m = self.clone();
        if !(0.0..=1.0).contains(&lambda_lex) {
            return Err(Error::InvalidArgument("lambda_lex must be in [0, 1]".into()));
        }
        m.lambda_lex = lambda_lex;
        m.lambda_lm = 1.0 - lambda_lex;
        Ok(m)
    }

    pub fn encode_source(&self, source: &Sentence) -> Vec<TokenId> {
        self.vocab_src().encode(source.tokens())
    }

    pub fn encode_target(&self, target: &Sentence) -> Vec<TokenId> {
        self.vocab_tgt().encode(target.tokens())
    }

    pub fn decode_target(&self, ids: &[TokenId]) -> Sentence {
        Sentence::from_parts_unchecked(
            self.vocab_tgt().decode(ids),
            crate::Granularity::Word,
        )
    }

    /// Fixes the source sentence, precomputing its lexical mixture.
    pub fn condition(&self, source: &Sentence) -> Conditioned<'_> {
        let src = self.encode_source(source);
        let mut lex_mix = vec![0.0; self.vocab_tgt().len()];
        let scale = 1.0 / (src.len() + 1) as f64;
        let rows = src
            .iter()
            .map(|&s| s as usize)
            .chain(std::iter::once(self.lex.null_index()));
        for r in rows {
            for &(t, p) in self.lex.row(r) {
                lex_mix[t as usize] += scale * p;
            }
        }
        lex_mix[EOS_ID as usize] = 0.0;
        let lex_mass: f64 = lex_mix.iter().sum();
        let norm = self.lambda_lex * lex_mass + self.lambda_lm;
        Conditioned {
            model: self,
            lex_mix,
            norm,
        }
    }

    pub fn next_token_distribution(&self, source: &Sentence, prefix: &Sentence) -> Vec<f64> {
        let c = self.condition(source);
        c.distribution(&self.encode_target(prefix))
    }

    /// ln P(target, `</s>` | source).
    pub fn sequence_logprob(&self, source: &Sentence, target: &Sentence) -> f64 {
        let c = self.condition(source);
        c.logprob(&self.encode_target(target))
    }

    /// Total ln-probability and token count (including one `</s>` per sentence) over pairs.
    pub fn corpus_logprob<'a, I>(&self, pairs: I) -> (f64, usize)
    where
        I: IntoIterator<Item = &'a SentencePair>,
    {
        pairs.into_iter().fold((0.0, 0), |(lp, n), p| {
            (
                lp + self.sequence_logprob(&p.source, &p.target),
                n + p.target.len() + 1,
            )
        })
    }

    /// Token-averaged cross-entropy in nats.
    pub fn cross_entropy<'a, I>(&self, pairs: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a SentencePair>,
    {
        let (lp, n) = self.corpus_logprob(pairs);
        if n == 0 {
            return Err(Error::Empty("cross-entropy over no pairs"));
        }
        Ok(-lp / n as f64)
    }
}

/// A [`TranslationModel`] bound to one source sentence.
pub struct Conditioned<'a> {
    model: &'a TranslationModel,
    lex_mix: Vec<f64>,
    norm: f64,
}

impl Conditioned<'_> {
    fn history(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let mut h = self.model.lm.start_history();
        h.extend_from_slice(prefix);
        let keep = self.model.lm.order().saturating_sub(1);
        h.split_off(h.len().saturating_sub(keep))
    }

    /// Same value as [`sequence_logprob`] through point queries instead of full distributions.
    pub fn logprob(&self, target: &[TokenId]) -> f64 {
        let m = self.model;
        let mut history = m.lm.start_history();
        let mut total = 0.0;
        for &y in target.iter().chain(std::iter::once(&EOS_ID)) {
            let p = (m.lambda_lex * self.lex_mix[y as usize]
                + m.lambda_lm * m.lm.prob(y, &history))
                / self.norm;
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += p.ln();
            history.push(y);
        }
        total
    }
}

impl NextTokenModel for Conditioned<'_> {
    fn vocab_size(&self) -> usize {
        self.lex_mix.len()
    }

    fn next_token_distribution(&self, prefix: &[TokenId], out: &mut [f64]) {
        let m = self.model;
        m.lm.distribution_into(&self.history(prefix), out);
        for (o, &l) in out.iter_mut().zip(&self.lex_mix) {
            *o = (m.lambda_lm * *o + m.lambda_lex * l) / self.norm;
        }
    }
}

/// Weighted training pairs: each pair with an integer multiplicity.
pub type WeightedPairs<'a> = [(&'a SentencePair, u64)];

fn train_lm_on_targets(pairs: &WeightedPairs<'_>, cfg: &ModelConfig) -> Result<NgramLm> {
    let targets: Vec<(&Sentence, u64)> = pairs.iter().map(|&(p, w)| (&p.target, w)).collect();
    train_lm_weighted(&targets, &cfg.lm_config())
}

fn em_input<'a>(pairs: &WeightedPairs<'a>) -> Vec<(&'a SentencePair, f64)> {
    pairs.iter().map(|&(p, w)| (p, w as f64)).collect()
}

/// Trains with exactly `cfg.em_iterations` EM iterations.
pub fn train_model(pairs: &WeightedPairs<'_>, cfg: &ModelConfig) -> Result<TranslationModel> {
    Ok(train_checkpoints(pairs, cfg)?
        .pop()
        .expect("at least one iteration"))
}

/// One model per EM iteration ("epoch"), all sharing the same target LM.
pub fn train_checkpoints(
    pairs: &WeightedPairs<'_>,
    cfg: &ModelConfig,
) -> Result<Vec<TranslationModel>> {
    cfg.validate()?;
    let lm = train_lm_on_targets(pairs, cfg)?;
    let mut em = Ibm1Em::new(&em_input(pairs))?;
    let mut out = Vec::with_capacity(cfg.em_iterations);
    for _ in 0..cfg.em_iterations {
        em.step();
        out.push(TranslationModel::new(
            &em.table(),
            lm.clone(),
            cfg.lambda_lex,
            1.0 - cfg.lambda_lex,
        )?);
    }
    Ok(out)
}

/// Outcome of [`train_until_converged`].
#[derive(Debug, Clone)]
pub struct ConvergedModel {
    pub model: TranslationModel,
    pub iterations: usize,
    /// Held-out cross-entropy after each iteration.
    pub heldout_ce: Vec<f64>,
}

/// Runs EM until held-out cross-entropy fails to improve by `cfg.min_improvement` for
/// `cfg.patience` consecutive iterations (or `cfg.em_iterations` is reached) and returns the
/// best model seen.
pub fn train_until_converged(
    pairs: &WeightedPairs<'_>,
    heldout: &[SentencePair],
    cfg: &ModelConfig,
) -> Result<ConvergedModel> {
    cfg.validate()?;
    if heldout.is_empty() {
        return Err(Error::Empty("held-out set"));
    }
    let lm = train_lm_on_targets(pairs, cfg)?;
    let mut em = Ibm1Em::new(&em_input(pairs))?;
    let mut best: Option<(f64, TranslationModel, usize)> = None;
    let mut curve = Vec::new();
    let mut stale = 0;
    while em.iterations() < cfg.em_iterations {
        em.step();
        let m = TranslationModel::new(&em.table(), lm.clone(), cfg.lambda_lex, 1.0 - cfg.lambda_lex)?;
        let ce = m.cross_entropy(heldout)?;
        curve.push(ce);
        match &best {
            Some((b, _, _)) if ce > b - cfg.min_improvement => {
                stale += 1;
                if ce < *b {
                    best = Some((ce, m, em.iterations()));
                }
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                stale = 0;
                best = Some((ce, m, em.iterations()));
            }
        }
    }
    let (_, model, iterations) = best.expect("at least one iteration");
    Ok(ConvergedModel {
        model,
        iterations,
        heldout_ce: curve,
    })
}

/// Picks the lexical weight with the best held-out log-probability from `grid`.
pub fn tune_lambda(model: &TranslationModel, heldout: &[SentencePair], grid: &[f64]) -> Result<TranslationModel> {
    let mut best: Option<(f64, TranslationModel)> = None;
    for &l in grid {
        let m = model.with_lambdas(l)?;
        let (lp, _) = m.corpus_logprob(heldout);
        if best.as_ref().is_none_or(|(b, _)| lp > *b) {
            best = Some((lp, m));
        }
    }
    best.map(|(_, m)| m).ok_or(Error::Empty("lambda grid"))
}

#[cfg(test)]
mod tests;
