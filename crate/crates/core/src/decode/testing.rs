//! Small hand-built models for decoder tests.

use rand::Rng as _;

use crate::model::NextTokenModel;
use crate::rng::stream;
use crate::vocab::TokenId;

/// Model given by a closure from prefix to distribution.
pub struct FnModel<F> {
    pub vocab: usize,
    pub f: F,
}

impl<F: Fn(&[TokenId]) -> Vec<f64>> NextTokenModel for FnModel<F> {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn next_token_distribution(&self, prefix: &[TokenId], out: &mut [f64]) {
        out.copy_from_slice(&(self.f)(prefix));
    }
}

/// Vocabulary `[</s>, a, b, x, y]`. First step: a 0.6, b 0.4. After `a` the best token has 0.3,
/// after `b` it has 0.9; after two tokens `</s>` is certain.
pub fn garden_path() -> FnModel<impl Fn(&[TokenId]) -> Vec<f64>> {
    FnModel {
        vocab: 5,
        f: |p: &[TokenId]| match p {
            [] => vec![0.0, 0.6, 0.4, 0.0, 0.0],
            [1] => vec![0.25, 0.15, 0.15, 0.3, 0.15],
            [2] => vec![0.0, 0.05, 0.05, 0.9, 0.0],
            _ => vec![1.0, 0.0, 0.0, 0.0, 0.0],
        },
    }
}

/// Model whose distribution for each prefix is drawn from a seeded stream keyed by the prefix.
/// `sparsity` is the chance that a non-EOS token gets zero mass.
pub fn random_model(
    vocab: usize,
    seed: u64,
    sparsity: f64,
) -> FnModel<impl Fn(&[TokenId]) -> Vec<f64>> {
    FnModel {
        vocab,
        f: move |p: &[TokenId]| {
            let mut key: u64 = 1469598103934665603;
            for &t in p {
                key = (key ^ (t as u64 + 1)).wrapping_mul(1099511628211);
            }
            key ^= p.len() as u64;
            let mut rng = stream(seed, key);
            let mut d: Vec<f64> = (0..vocab)
                .map(|i| {
                    if i > 0 && rng.random::<f64>() < sparsity {
                        0.0
                    } else {
                        // Heavy-tailed weights so that argmax choices matter.
                        rng.random::<f64>().powi(3) + 1e-3
                    }
                })
                .collect();
            let z: f64 = d.iter().sum();
            d.iter_mut().for_each(|x| *x /= z);
            d
        },
    }
}
