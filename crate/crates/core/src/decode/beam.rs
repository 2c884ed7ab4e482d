use std::cmp::Ordering;

use super::{Hypothesis, Stop};
use crate::model::NextTokenModel;
use crate::vocab::TokenId;

#[derive(Debug, Clone)]
pub struct BeamOutput {
    /// Best `</s>`-terminated hypothesis, or the best unfinished one when none finished.
    pub best: Hypothesis,
    /// Finished hypotheses, best first, at most `k` of them.
    pub finished: Vec<Hypothesis>,
    /// True when no hypothesis finished within the step limit.
    pub flagged: bool,
}

struct Candidate {
    score: f64,
    parent: usize,
    token: TokenId,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.parent.cmp(&b.parent))
        .then(a.token.cmp(&b.token))
}

/// Beam search of width `k` with a pool of finished hypotheses. Scores are plain sums of
/// log-probabilities; no length normalisation. Each step keeps the `k` best expansions across
/// the beam; those ending in `</s>` move to the pool and the rest stay live. Search stops once
/// the best finished score is at least the best live score, since scores only decrease.
pub fn beam<M: NextTokenModel + ?Sized>(m: &M, k: usize, max_len: usize) -> BeamOutput {
    assert!(k >= 1, "beam width must be >= 1");
    let v = m.vocab_size();
    let eos = m.eos();
    let mut dist = vec![0.0; v];
    // Live hypotheses stay sorted best-first, so their index is their rank.
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let mut pool: Vec<Hypothesis> = Vec::new();
    let mut cands: Vec<Candidate> = Vec::new();
    let mut top: Vec<(f64, TokenId)> = Vec::new();

    for _ in 0..max_len {
        cands.clear();
        for (r, (tokens, score)) in live.iter().enumerate() {
            m.next_token_distribution(tokens, &mut dist);
            // A parent keeps at most k children, so only its k likeliest tokens can survive.
            top.clear();
            top.extend(
                dist.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(w, &p)| (p, w as TokenId)),
            );
            if top.len() > k {
                top.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                top.truncate(k);
            }
            cands.extend(top.iter().map(|&(p, w)| Candidate {
                score: score + p.ln(),
                parent: r,
                token: w,
            }));
        }
        if cands.len() > k {
            cands.select_nth_unstable_by(k - 1, rank);
            cands.truncate(k);
        }
        cands.sort_by(rank);

        let mut next = Vec::with_capacity(k);
        for c in &cands {
            let parent = &live[c.parent].0;
            if c.token == eos {
                pool.push(Hypothesis {
                    tokens: parent.clone(),
                    score: c.score,
                    stop: Stop::Eos,
                });
            } else {
                let mut t = Vec::with_capacity(parent.len() + 1);
                t.extend_from_slice(parent);
                t.push(c.token);
                next.push((t, c.score));
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        let best_pool = pool.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if !pool.is_empty() && best_pool >= live[0].1 {
            break;
        }
    }

    sort_hyps(&mut pool);
    pool.truncate(k);
    if let Some(best) = pool.first().cloned() {
        return BeamOutput {
            best,
            finished: pool,
            flagged: false,
        };
    }
    let mut open: Vec<Hypothesis> = live
        .into_iter()
        .map(|(tokens, score)| Hypothesis {
            tokens,
            score,
            stop: Stop::MaxLen,
        })
        .collect();
    sort_hyps(&mut open);
    let best = open.into_iter().next().unwrap_or(Hypothesis {
        tokens: Vec::new(),
        score: f64::NEG_INFINITY,
        stop: Stop::MaxLen,
    });
    BeamOutput {
        best,
        finished: Vec::new(),
        flagged: true,
    }
}

pub(crate) fn sort_hyps(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| {
        if a.better_than(b) {
            Ordering::Less
        } else if b.better_than(a) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
}
