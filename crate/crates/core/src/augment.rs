//! Back-translation and the assembly of augmented training data: synthetic sources for
//! monolingual targets, source-copy filtering and bitext upsampling.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::{
    apply_bpe, reverse_bpe, BpeModel, Granularity, MonoCorpus, ParallelCorpus, Sentence,
    SentencePair,
};
use crate::decode::{generate_one, GenerationConfig, Method};
use crate::error::{Error, Result};
use crate::model::TranslationModel;
use crate::noise::{noise_sentence, NoiseConfig};
use crate::rng::{component_seed, seeded, stream, Rng};

/// Result of back-translating a monolingual corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BackTranslation {
    /// Word-level pairs of (synthetic source, genuine target), in input order.
    pub corpus: ParallelCorpus,
    /// Input positions that produced no usable source and were dropped.
    pub dropped: Vec<usize>,
    /// Outputs that hit the length limit without `</s>`; they are kept.
    pub unfinished: usize,
}

fn to_words(s: &Sentence) -> Sentence {
    if s.granularity() == Granularity::Word {
        s.clone()
    } else {
        reverse_bpe(s).0
    }
}

/// Generates one synthetic source per target sentence with the reverse (target-to-source)
/// model. With `bpe`, targets are segmented before decoding and outputs are joined back into
/// words; noise for `beam_noise` is applied at word level afterwards. An empty output counts
/// as a failure: the pair is dropped and its index recorded, and the order of the remaining
/// pairs is preserved.
pub fn back_translate(
    reverse: &TranslationModel,
    mono: &MonoCorpus,
    gen: &GenerationConfig,
    noise: Option<&NoiseConfig>,
    bpe: Option<&BpeModel>,
) -> Result<BackTranslation> {
    gen.validate()?;
    let noise = match (gen.method, noise) {
        (Method::BeamNoise, Some(n)) => {
            n.validate()?;
            Some(n)
        }
        (Method::BeamNoise, None) => {
            return Err(Error::InvalidArgument("beam_noise needs a noise config".into()))
        }
        (_, Some(_)) => {
            return Err(Error::InvalidArgument(format!(
                "noise config given for method {}",
                gen.method
            )))
        }
        (_, None) => None,
    };
    let outputs: Vec<(Option<Sentence>, bool)> = mono
        .items
        .par_iter()
        .enumerate()
        .map(|(i, target)| {
            let input = match bpe {
                Some(b) => apply_bpe(b, target),
                None => target.clone(),
            };
            let cond = reverse.condition(&input);
            let mut rng = stream(gen.seed, i as u64);
            let h = generate_one(&cond, gen, gen.max_len_for(input.len()), &mut rng);
            let decoded = reverse.decode_target(&h.tokens);
            let decoded = if bpe.is_some() {
                Sentence::from_parts_unchecked(decoded.into_tokens(), Granularity::Subword)
            } else {
                decoded
            };
            let mut words = to_words(&decoded);
            if let Some(n) = noise {
                words = noise_sentence(&words, n, &mut stream(n.seed, i as u64));
            }
            let ok = !words.is_empty();
            (ok.then_some(words), !h.finished())
        })
        .collect();

    let mut pairs = Vec::with_capacity(mono.len());
    let mut dropped = Vec::new();
    let mut unfinished = 0;
    for (i, ((src, open), tgt)) in outputs.into_iter().zip(&mono.items).enumerate() {
        unfinished += open as usize;
        match src {
            Some(source) => pairs.push(SentencePair {
                source,
                target: to_words(tgt),
            }),
            None => dropped.push(i),
        }
    }
    let tgt_label = mono.labels.first().cloned().unwrap_or_default();
    Ok(BackTranslation {
        corpus: ParallelCorpus::parallel("synthetic", tgt_label, pairs),
        dropped,
        unfinished,
    })
}

/// Jaccard similarity of the unigram sets; two empty sentences count as identical.
pub fn jaccard_unigram(a: &Sentence, b: &Sentence) -> f64 {
    let sa: HashSet<&str> = a.tokens().iter().map(String::as_str).collect();
    let sb: HashSet<&str> = b.tokens().iter().map(String::as_str).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopyFilter {
    pub kept: ParallelCorpus,
    pub flagged: ParallelCorpus,
    pub copy_rate: f64,
}

impl CopyFilter {
    /// Rate as a percentage with two decimals, e.g. `0.56%`.
    pub fn rate_line(&self) -> String {
        format!("{:.2}%", 100.0 * self.copy_rate)
    }
}

/// Splits pairs into those whose source looks like a copy of the target (Jaccard above
/// `threshold`, strictly) and the rest.
pub fn filter_copies(pairs: &ParallelCorpus, threshold: f64) -> Result<CopyFilter> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "copy threshold must be in [0, 1], got {threshold}"
        )));
    }
    let (flagged, kept): (Vec<SentencePair>, Vec<SentencePair>) = pairs
        .items
        .iter()
        .cloned()
        .partition(|p| jaccard_unigram(&p.source, &p.target) > threshold);
    let copy_rate = if pairs.is_empty() {
        0.0
    } else {
        flagged.len() as f64 / pairs.len() as f64
    };
    Ok(CopyFilter {
        kept: ParallelCorpus::new(pairs.labels.clone(), kept),
        flagged: ParallelCorpus::new(pairs.labels.clone(), flagged),
        copy_rate,
    })
}

/// Bitext and synthetic pairs combined under an upsampling rate for the bitext.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub bitext: ParallelCorpus,
    pub synthetic: ParallelCorpus,
    pub upsample_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pool {
    Bitext,
    Synthetic,
}

impl Pool {
    pub fn name(self) -> &'static str {
        match self {
            Pool::Bitext => "bitext",
            Pool::Synthetic => "synthetic",
        }
    }
}

impl AugmentedDataset {
    pub fn new(bitext: ParallelCorpus, synthetic: ParallelCorpus, upsample_rate: f64) -> Result<Self> {
        if !(upsample_rate > 0.0) || !upsample_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "upsample rate must be positive, got {upsample_rate}"
            )));
        }
        if bitext.is_empty() && synthetic.is_empty() {
            return Err(Error::Empty("augmented dataset"));
        }
        Ok(AugmentedDataset {
            bitext,
            synthetic,
            upsample_rate,
        })
    }

    /// Bitext visits per epoch: `round(r * B)`.
    pub fn bitext_slots(&self) -> usize {
        (self.upsample_rate * self.bitext.len() as f64).round() as usize
    }

    /// Share of training examples drawn from the bitext, `rB / (rB + S)`.
    pub fn bitext_fraction(&self) -> f64 {
        let rb = self.upsample_rate * self.bitext.len() as f64;
        rb / (rb + self.synthetic.len() as f64)
    }

    pub fn pair(&self, pool: Pool, index: usize) -> &SentencePair {
        match pool {
            Pool::Bitext => &self.bitext.items[index],
            Pool::Synthetic => &self.synthetic.items[index],
        }
    }

    /// How often each pair is visited during one epoch of [`combine_upsampled`]: every
    /// synthetic pair once, bitext pairs `floor(r)` or `ceil(r)` times. These are the training
    /// weights for the non-iterative model.
    pub fn epoch_weights(&self, seed: u64) -> (Vec<u64>, Vec<u64>) {
        let mut b = vec![0u64; self.bitext.len()];
        let mut s = vec![0u64; self.synthetic.len()];
        let mut src = SlotSource::new(self, seed);
        for _ in 0..src.slots.len() {
            let (pool, i) = src.next();
            match pool {
                Pool::Bitext => b[i] += 1,
                Pool::Synthetic => s[i] += 1,
            }
        }
        (b, s)
    }
}

/// Shuffled pool of indices, reshuffled each time it runs out.
struct Cycler {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Cycler {
    fn new(n: usize, rng: Rng) -> Self {
        Cycler {
            n,
            order: Vec::new(),
            pos: 0,
            rng,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Each epoch is a shuffled sequence of `round(rB)` bitext slots and `S` synthetic slots;
/// slots are filled from per-pool permutations.
struct SlotSource {
    slots: Vec<Pool>,
    pos: usize,
    rng: Rng,
    bitext: Cycler,
    synthetic: Cycler,
}

impl SlotSource {
    fn new(ds: &AugmentedDataset, seed: u64) -> Self {
        let mut slots = vec![Pool::Bitext; ds.bitext_slots()];
        slots.extend(std::iter::repeat_n(Pool::Synthetic, ds.synthetic.len()));
        SlotSource {
            slots,
            pos: usize::MAX,
            rng: seeded(component_seed(seed, "epochs")),
            bitext: Cycler::new(ds.bitext.len(), seeded(component_seed(seed, "bitext"))),
            synthetic: Cycler::new(
                ds.synthetic.len(),
                seeded(component_seed(seed, "synthetic")),
            ),
        }
    }

    fn next(&mut self) -> (Pool, usize) {
        if self.pos >= self.slots.len() {
            self.slots.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let pool = self.slots[self.pos];
        self.pos += 1;
        let i = match pool {
            Pool::Bitext => self.bitext.next(),
            Pool::Synthetic => self.synthetic.next(),
        };
        (pool, i)
    }
}

/// A training batch: pair references into the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<(Pool, usize)>,
    pub tokens: usize,
}

/// Endless deterministic stream of batches of about `batch_tokens` tokens (source plus
/// target); a batch always holds at least one pair.
pub struct BatchStream<'a> {
    ds: &'a AugmentedDataset,
    batch_tokens: usize,
    source: SlotSource,
    carry: Option<(Pool, usize)>,
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let mut items = Vec::new();
        let mut tokens = 0;
        loop {
            let slot = self.carry.take().unwrap_or_else(|| self.source.next());
            let p = self.ds.pair(slot.0, slot.1);
            let n = p.source.len() + p.target.len();
            if !items.is_empty() && tokens + n > self.batch_tokens {
                self.carry = Some(slot);
                return Some(Batch { items, tokens });
            }
            items.push(slot);
            tokens += n;
        }
    }
}

pub fn combine_upsampled(
    ds: &AugmentedDataset,
    batch_tokens: usize,
    seed: u64,
) -> Result<BatchStream<'_>> {
    if batch_tokens == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(BatchStream {
        ds,
        batch_tokens,
        source: SlotSource::new(ds, seed),
        carry: None,
    })
}

/// Counts written next to an augmented dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentManifest {
    pub method: String,
    pub bitext_pairs: usize,
    pub synthetic_pairs: usize,
    pub upsample_rate: f64,
    pub copy_rate: f64,
    pub copies_dropped: bool,
    pub failed: usize,
    pub unfinished: usize,
}
