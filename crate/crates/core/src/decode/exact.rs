use std::collections::HashMap;

use super::{Hypothesis, Stop};
use crate::error::{Error, Result};
use crate::model::NextTokenModel;
use crate::vocab::TokenId;

/// Largest number of terminated sequences the exhaustive routines will visit.
pub const MAX_ENUMERATION: u64 = 10_000_000;

/// Number of `</s>`-terminated sequences within `max_len` steps over a vocabulary of `v`
/// symbols (one of them `</s>`): the sum of `(v-1)^L` for `L < max_len`.
pub fn search_space_size(v: usize, max_len: usize) -> f64 {
    let b = v.saturating_sub(1) as f64;
    (0..max_len).map(|l| b.powi(l as i32)).sum()
}

fn guard(v: usize, max_len: usize) -> Result<()> {
    let size = search_space_size(v, max_len);
    if size > MAX_ENUMERATION as f64 {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: MAX_ENUMERATION,
        });
    }
    Ok(())
}

/// Depth-first walk over every terminated sequence with non-zero probability.
fn walk<M: NextTokenModel + ?Sized>(
    m: &M,
    max_len: usize,
    prefix: &mut Vec<TokenId>,
    score: f64,
    visit: &mut impl FnMut(&[TokenId], f64),
) {
    if prefix.len() >= max_len {
        return;
    }
    let dist = m.distribution(prefix);
    let eos = m.eos() as usize;
    if dist[eos] > 0.0 {
        visit(prefix, score + dist[eos].ln());
    }
    for (w, &p) in dist.iter().enumerate() {
        if w != eos && p > 0.0 && prefix.len() + 1 < max_len {
            prefix.push(w as TokenId);
            walk(m, max_len, prefix, score + p.ln(), visit);
            prefix.pop();
        }
    }
}

/// True most probable terminated sequence, by exhaustive enumeration. Ties prefer the shorter
/// sequence, then lower ids.
pub fn exact_map<M: NextTokenModel + ?Sized>(m: &M, max_len: usize) -> Result<Hypothesis> {
    guard(m.vocab_size(), max_len)?;
    let mut best: Option<Hypothesis> = None;
    walk(m, max_len, &mut Vec::new(), 0.0, &mut |seq, score| {
        let h = Hypothesis {
            tokens: seq.to_vec(),
            score,
            stop: Stop::Eos,
        };
        if best.as_ref().is_none_or(|b| h.better_than(b)) {
            best = Some(h);
        }
    });
    best.ok_or(Error::Empty("no terminated sequence has non-zero probability"))
}

/// Probability of every terminated sequence with non-zero mass. The total falls short of 1 by
/// the mass of sequences that hit the step limit.
pub fn enumerate_distribution<M: NextTokenModel + ?Sized>(
    m: &M,
    max_len: usize,
) -> Result<HashMap<Vec<TokenId>, f64>> {
    guard(m.vocab_size(), max_len)?;
    let mut out = HashMap::new();
    walk(m, max_len, &mut Vec::new(), 0.0, &mut |seq, score| {
        out.insert(seq.to_vec(), score.exp());
    });
    Ok(out)
}
