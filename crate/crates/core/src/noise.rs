//! Word-level noise for the beam+noise method: deletion, replacement by the `BLANK` filler,
//! and a bounded local shuffle, applied in that order.

use rand::Rng as _;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::vocab::BLANK;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub p_del: f64,
    pub p_blank: f64,
    pub swap_window: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_del: 0.1,
            p_blank: 0.1,
            swap_window: 3,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// No deletion, no filler and no swapping.
    pub fn identity() -> Self {
        NoiseConfig {
            p_del: 0.0,
            p_blank: 0.0,
            swap_window: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_del", self.p_del), ("p_blank", self.p_blank)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Random permutation moving no element more than `window` places: element `i` gets key
/// `i + u` with `u` uniform on `[0, window + 1)` and elements are stable-sorted by key.
/// Entry `j` of the result is the original index placed at position `j`.
pub fn swap_permutation(n: usize, window: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if window == 0 || n < 2 {
        return idx;
    }
    let span = (window + 1) as f64;
    let keys: Vec<f64> = (0..n).map(|i| i as f64 + rng.random::<f64>() * span).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    idx
}

/// Applies deletion, then filler replacement, then the local shuffle. A nonempty sentence
/// never comes out empty: if every token was deleted, one of them (uniformly) is kept.
pub fn noise_sentence(s: &Sentence, cfg: &NoiseConfig, rng: &mut Rng) -> Sentence {
    let tokens = s.tokens();
    let mut kept: Vec<&str> = tokens
        .iter()
        .filter(|_| !(cfg.p_del > 0.0 && rng.random::<f64>() < cfg.p_del))
        .map(String::as_str)
        .collect();
    if kept.is_empty() && !tokens.is_empty() {
        kept.push(&tokens[rng.random_range(0..tokens.len())]);
    }
    for t in kept.iter_mut() {
        if cfg.p_blank > 0.0 && rng.random::<f64>() < cfg.p_blank {
            *t = BLANK;
        }
    }
    let perm = swap_permutation(kept.len(), cfg.swap_window, rng);
    let out = perm.into_iter().map(|i| kept[i].to_string()).collect();
    Sentence::from_parts_unchecked(out, s.granularity())
}

/// Noises every sentence with its own stream derived from `(cfg.seed, index)`.
pub fn noise_corpus(sentences: &[Sentence], cfg: &NoiseConfig) -> Vec<Sentence> {
    use rayon::prelude::*;
    sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| noise_sentence(s, cfg, &mut stream(cfg.seed, i as u64)))
        .collect()
}
