//! Generation methods for synthetic sources. All of them see the model only through
//! [`NextTokenModel::next_token_distribution`].
//!
//! `max_len` bounds the number of decoding steps, the final `</s>` included: a hypothesis
//! holding `max_len` tokens stops with [`Stop::MaxLen`]. Ties are broken towards lower token
//! ids everywhere.

mod beam;
mod exact;
mod sample;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use beam::{beam, BeamOutput};
pub use exact::{enumerate_distribution, exact_map, search_space_size, MAX_ENUMERATION};
pub use sample::{sample, sample_topk, topk_weights};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::model::{NextTokenModel, TranslationModel};
use crate::rng::stream;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Greedy,
    Beam,
    Sampling,
    TopK,
    BeamNoise,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Greedy,
        Method::Beam,
        Method::Sampling,
        Method::TopK,
        Method::BeamNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Beam => "beam",
            Method::Sampling => "sampling",
            Method::TopK => "topk",
            Method::BeamNoise => "beam_noise",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Method::Sampling | Method::TopK | Method::BeamNoise)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown generation method {s:?}")))
    }
}

impl serde::Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub method: Method,
    pub beam_size: usize,
    pub topk_k: usize,
    /// Step limit; `None` means `2 * |source| + 5`.
    pub max_len: Option<usize>,
    /// Sampling temperature; 1 samples the model distribution unchanged.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            method: Method::Beam,
            beam_size: 5,
            topk_k: 10,
            max_len: None,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn with_method(method: Method) -> Self {
        GenerationConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size < 1 {
            return Err(Error::InvalidArgument("beam_size must be >= 1".into()));
        }
        if self.topk_k < 1 {
            return Err(Error::InvalidArgument("topk_k must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        Ok(())
    }

    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 5)
    }

    /// Short label used in reports, e.g. `beam5`, `top10`, `sampling`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Beam => format!("beam{}", self.beam_size),
            Method::TopK => format!("top{}", self.topk_k),
            Method::BeamNoise => format!("beam{}+noise", self.beam_size),
            m => m.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// The hypothesis ended by emitting `</s>`, which is included in the score.
    Eos,
    /// The step limit was reached without `</s>`.
    MaxLen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Output tokens, without the final `</s>`.
    pub tokens: Vec<TokenId>,
    /// Cumulative natural-log model probability of the emitted tokens.
    pub score: f64,
    pub stop: Stop,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.stop == Stop::Eos
    }

    /// Total order used to pick winners: higher score, then shorter, then smaller ids.
    pub(crate) fn better_than(&self, other: &Hypothesis) -> bool {
        match self.score.total_cmp(&other.score) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                (self.tokens.len(), &self.tokens) < (other.tokens.len(), &other.tokens)
            }
        }
    }
}

/// First index holding the maximum, i.e. argmax with ties to the lowest id.
pub(crate) fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

pub fn greedy<M: NextTokenModel + ?Sized>(m: &M, max_len: usize) -> Hypothesis {
    let mut dist = vec![0.0; m.vocab_size()];
    let mut tokens = Vec::new();
    let mut score = 0.0;
    while tokens.len() < max_len {
        m.next_token_distribution(&tokens, &mut dist);
        let w = argmax(&dist) as TokenId;
        score += dist[w as usize].ln();
        if w == m.eos() {
            return Hypothesis {
                tokens,
                score,
                stop: Stop::Eos,
            };
        }
        tokens.push(w);
    }
    Hypothesis {
        tokens,
        score,
        stop: Stop::MaxLen,
    }
}

/// Runs one generation method on a conditioned model. `BeamNoise` decodes like `Beam`; the
/// noise is applied afterwards at word level.
pub fn generate_one<M: NextTokenModel + ?Sized>(
    m: &M,
    cfg: &GenerationConfig,
    max_len: usize,
    rng: &mut crate::rng::Rng,
) -> Hypothesis {
    match cfg.method {
        Method::Greedy => greedy(m, max_len),
        Method::Beam | Method::BeamNoise => beam(m, cfg.beam_size, max_len).best,
        Method::Sampling => sample(m, max_len, cfg.temperature, rng),
        Method::TopK => sample_topk(m, cfg.topk_k, max_len, cfg.temperature, rng),
    }
}

/// Decodes every source sentence in parallel. Sentence `i` draws from its own random stream
/// derived from `(cfg.seed, i)`, so output does not depend on the number of threads.
pub fn generate_batch(
    model: &TranslationModel,
    sources: &[Sentence],
    cfg: &GenerationConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    Ok(sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let c = model.condition(src);
            let mut rng = stream(cfg.seed, i as u64);
            generate_one(&c, cfg, cfg.max_len_for(src.len()), &mut rng)
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod testing;

#[cfg(test)]
mod tests;
