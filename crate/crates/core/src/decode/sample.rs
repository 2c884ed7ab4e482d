use rand::Rng as _;

use super::{argmax, Hypothesis, Stop};
use crate::model::NextTokenModel;
use crate::rng::Rng;
use crate::vocab::TokenId;

/// The `k` most likely tokens (ties to lower ids) with renormalised probabilities.
pub fn topk_weights(dist: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut ids: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] > 0.0).collect();
    let order = |&a: &usize, &b: &usize| dist[b].total_cmp(&dist[a]).then(a.cmp(&b));
    if k > 0 && k < ids.len() {
        ids.select_nth_unstable_by(k - 1, order);
    }
    ids.truncate(k);
    ids.sort_by(order);
    let z: f64 = ids.iter().map(|&i| dist[i]).sum();
    ids.into_iter().map(|i| (i as TokenId, dist[i] / z)).collect()
}

fn tempered(p: f64, inv_t: f64) -> f64 {
    if inv_t == 1.0 {
        p
    } else {
        p.powf(inv_t)
    }
}

/// Draws an index proportionally to `weights` (not necessarily normalised).
fn draw(weights: impl Iterator<Item = f64> + Clone, rng: &mut Rng) -> usize {
    let total: f64 = weights.clone().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if acc > target {
                return i;
            }
        }
    }
    // Rounding left `target` past the running sum; fall back to the last positive entry.
    last
}

/// Ancestral sampling from the full distribution, optionally sharpened by `temperature`.
/// The returned score is the untempered model log-probability.
pub fn sample<M: NextTokenModel + ?Sized>(
    m: &M,
    max_len: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Hypothesis {
    let inv_t = 1.0 / temperature;
    let mut dist = vec![0.0; m.vocab_size()];
    run(m, max_len, &mut dist, |dist| {
        draw(dist.iter().map(|&p| tempered(p, inv_t)), rng) as TokenId
    })
}

/// Sampling restricted to the `k` most likely tokens at each step.
pub fn sample_topk<M: NextTokenModel + ?Sized>(
    m: &M,
    k: usize,
    max_len: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Hypothesis {
    assert!(k >= 1, "top-k needs k >= 1");
    let inv_t = 1.0 / temperature;
    let mut dist = vec![0.0; m.vocab_size()];
    run(m, max_len, &mut dist, |dist| {
        if k == 1 {
            return argmax(dist) as TokenId;
        }
        let top = topk_weights(dist, k);
        let i = draw(top.iter().map(|&(_, p)| tempered(p, inv_t)), rng);
        top[i].0
    })
}

fn run<M: NextTokenModel + ?Sized>(
    m: &M,
    max_len: usize,
    dist: &mut [f64],
    mut pick: impl FnMut(&[f64]) -> TokenId,
) -> Hypothesis {
    let mut tokens = Vec::new();
    let mut score = 0.0;
    while tokens.len() < max_len {
        m.next_token_distribution(&tokens, dist);
        let w = pick(dist);
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
