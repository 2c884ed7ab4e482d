//! Synthetic language pair for end-to-end experiments.
//!
//! Sentences are first drawn as sequences of concepts from a small phrase grammar with
//! Zipf-distributed word choice: a subject noun phrase, an optional adverb, a verb and an
//! object noun phrase. The target language renders each concept as one fixed word, with
//! determiners agreeing in gender with their noun. The source language is noisier: every
//! concept has up to three weighted synonyms, adjectives follow their noun, determiners are
//! sometimes dropped, verbs may take a source-only particle and a few neighbouring words are
//! swapped at random. Target-to-source is thus a one-to-many mapping, which is what makes
//! the choice of generation method matter for back-translation.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use crate::corpus::{
    Granularity, MonoCorpus, ParallelCorpus, Sentence, SentencePair,
};
use crate::error::Result;
use crate::rng::{component_seed, seeded, Rng};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub seed: u64,
    pub bitext: usize,
    pub mono: usize,
    pub valid: usize,
    pub test: usize,
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub prepositions: usize,
    /// Zipf exponent of word choice within each class.
    pub zipf: f64,
    /// Chance that a determiner has no counterpart in the source.
    pub p_drop_det: f64,
    /// Chance that a verb is followed by a source-only particle.
    pub p_particle: f64,
    /// Per-position chance of swapping two neighbouring source words.
    pub p_swap: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 1,
            bitext: 10_000,
            mono: 50_000,
            valid: 500,
            test: 500,
            nouns: 1000,
            verbs: 300,
            adjectives: 150,
            adverbs: 40,
            prepositions: 12,
            zipf: 1.0,
            p_drop_det: 0.3,
            p_particle: 0.4,
            p_swap: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Det,
    Noun,
    Verb,
    Adj,
    Adv,
    Prep,
}

#[derive(Debug, Clone, Copy)]
struct Concept {
    class: Class,
    index: usize,
}

struct Entry {
    /// Target realisations; determiners have one per gender, other words just one.
    target: Vec<String>,
    synonyms: Vec<String>,
    weights: WeightedIndex<f64>,
}

/// The two vocabularies and the sampling distributions over concepts.
pub struct Lexicon {
    dets: Vec<Entry>,
    nouns: Vec<Entry>,
    genders: Vec<usize>,
    verbs: Vec<Entry>,
    adjs: Vec<Entry>,
    advs: Vec<Entry>,
    preps: Vec<Entry>,
    particles: Vec<String>,
    zipf_nouns: WeightedIndex<f64>,
    zipf_verbs: WeightedIndex<f64>,
    zipf_adjs: WeightedIndex<f64>,
    zipf_advs: WeightedIndex<f64>,
    zipf_preps: WeightedIndex<f64>,
}

struct WordMaker {
    consonants: &'static [&'static str],
    vowels: &'static [&'static str],
    used: HashSet<String>,
}

impl WordMaker {
    /// A fresh word of `syllables` syllables, or longer once that length is crowded.
    fn make(&mut self, mut syllables: usize, rng: &mut Rng) -> String {
        for attempt in 1u32.. {
            if attempt % 32 == 0 {
                syllables += 1;
            }
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(self.consonants[rng.random_range(0..self.consonants.len())]);
                w.push_str(self.vowels[rng.random_range(0..self.vowels.len())]);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
        unreachable!()
    }
}

fn zipf(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-s))).expect("nonempty class")
}

/// Frequent words get shorter forms, as in natural languages.
fn syllables_for(rank: usize) -> usize {
    match rank {
        0..=15 => 1,
        16..=500 => 2,
        _ => 3,
    }
}

impl Lexicon {
    fn build(cfg: &ToyConfig, rng: &mut Rng) -> Lexicon {
        let mut tgt = WordMaker {
            consonants: &["p", "t", "k", "m", "n", "s", "l"],
            vowels: &["a", "e", "i", "o", "u"],
            used: HashSet::new(),
        };
        let mut src = WordMaker {
            consonants: &["b", "d", "g", "f", "v", "z", "h", "r", "w", "j"],
            vowels: &["a", "e", "i", "o", "u", "y"],
            used: HashSet::new(),
        };
        let mut entries = |n: usize, forms: usize, rng: &mut Rng| -> Vec<Entry> {
            (0..n)
                .map(|rank| {
                    let len = syllables_for(rank);
                    let target = (0..forms).map(|_| tgt.make(len, rng)).collect();
                    let n_syn = match rng.random::<f64>() {
                        x if x < 0.4 => 1,
                        x if x < 0.75 => 2,
                        _ => 3,
                    };
                    let synonyms: Vec<String> = (0..n_syn).map(|_| src.make(len, rng)).collect();
                    let w: &[f64] = match n_syn {
                        1 => &[1.0],
                        2 => &[0.7, 0.3],
                        _ => &[0.6, 0.3, 0.1],
                    };
                    Entry {
                        target,
                        synonyms,
                        weights: WeightedIndex::new(w.iter().copied()).expect("weights"),
                    }
                })
                .collect()
        };
        let dets = entries(4, 2, rng);
        let nouns = entries(cfg.nouns, 1, rng);
        let verbs = entries(cfg.verbs, 1, rng);
        let adjs = entries(cfg.adjectives, 1, rng);
        let advs = entries(cfg.adverbs, 1, rng);
        let preps = entries(cfg.prepositions, 1, rng);
        let genders = (0..cfg.nouns).map(|_| rng.random_range(0..2)).collect();
        let particles = (0..3).map(|_| src.make(1, rng)).collect();
        Lexicon {
            dets,
            nouns,
            genders,
            verbs,
            adjs,
            advs,
            preps,
            particles,
            zipf_nouns: zipf(cfg.nouns, cfg.zipf),
            zipf_verbs: zipf(cfg.verbs, cfg.zipf),
            zipf_adjs: zipf(cfg.adjectives, cfg.zipf),
            zipf_advs: zipf(cfg.adverbs, cfg.zipf),
            zipf_preps: zipf(cfg.prepositions, cfg.zipf),
        }
    }

    fn entry(&self, c: Concept) -> &Entry {
        match c.class {
            Class::Det => &self.dets[c.index],
            Class::Noun => &self.nouns[c.index],
            Class::Verb => &self.verbs[c.index],
            Class::Adj => &self.adjs[c.index],
            Class::Adv => &self.advs[c.index],
            Class::Prep => &self.preps[c.index],
        }
    }

    fn noun_phrase(&self, with_pp: bool, rng: &mut Rng, out: &mut Vec<Concept>) {
        out.push(Concept {
            class: Class::Det,
            index: rng.random_range(0..self.dets.len()),
        });
        let n_adj = match rng.random::<f64>() {
            x if x < 0.6 => 0,
            x if x < 0.9 => 1,
            _ => 2,
        };
        for _ in 0..n_adj {
            out.push(Concept {
                class: Class::Adj,
                index: self.zipf_adjs.sample(rng),
            });
        }
        out.push(Concept {
            class: Class::Noun,
            index: self.zipf_nouns.sample(rng),
        });
        if with_pp && rng.random::<f64>() < 0.25 {
            out.push(Concept {
                class: Class::Prep,
                index: self.zipf_preps.sample(rng),
            });
            self.noun_phrase(false, rng, out);
        }
    }

    /// Subject [adverb] verb object. Optional material never ends a sentence, so the end is
    /// always right after the object noun.
    fn concepts(&self, rng: &mut Rng) -> Vec<Concept> {
        let mut out = Vec::new();
        self.noun_phrase(true, rng, &mut out);
        if rng.random::<f64>() < 0.2 {
            out.push(Concept {
                class: Class::Adv,
                index: self.zipf_advs.sample(rng),
            });
        }
        out.push(Concept {
            class: Class::Verb,
            index: self.zipf_verbs.sample(rng),
        });
        self.noun_phrase(false, rng, &mut out);
        out
    }

    /// Gender of the noun each determiner belongs to: the next noun to its right.
    fn target(&self, concepts: &[Concept]) -> Vec<String> {
        let mut words = Vec::with_capacity(concepts.len());
        for (i, c) in concepts.iter().enumerate() {
            let e = self.entry(*c);
            let w = if c.class == Class::Det {
                let noun = concepts[i..]
                    .iter()
                    .find(|c| c.class == Class::Noun)
                    .expect("determiner precedes a noun");
                &e.target[self.genders[noun.index]]
            } else {
                &e.target[0]
            };
            words.push(w.clone());
        }
        words
    }

    fn source(&self, concepts: &[Concept], cfg: &ToyConfig, rng: &mut Rng) -> Vec<String> {
        // Adjectives move behind their noun.
        let mut order: Vec<Concept> = Vec::with_capacity(concepts.len());
        let mut pending: Vec<Concept> = Vec::new();
        for &c in concepts {
            match c.class {
                Class::Adj => pending.push(c),
                Class::Noun => {
                    order.push(c);
                    order.append(&mut pending);
                }
                _ => order.push(c),
            }
        }
        let mut words = Vec::with_capacity(order.len() + 2);
        for c in order {
            if c.class == Class::Det && rng.random::<f64>() < cfg.p_drop_det {
                continue;
            }
            let e = self.entry(c);
            words.push(e.synonyms[e.weights.sample(rng)].clone());
            if c.class == Class::Verb && rng.random::<f64>() < cfg.p_particle {
                words.push(self.particles[c.index % self.particles.len()].clone());
            }
        }
        let mut i = 0;
        while i + 1 < words.len() {
            if rng.random::<f64>() < cfg.p_swap {
                words.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        words
    }
}

/// Generated corpora. `mono` holds target-language sentences drawn independently of the
/// bitext, as the monolingual data for back-translation.
pub struct ToyTask {
    pub bitext: ParallelCorpus,
    pub mono: MonoCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}

pub const SOURCE_LABEL: &str = "src";
pub const TARGET_LABEL: &str = "tgt";

pub fn generate_toy(cfg: &ToyConfig) -> ToyTask {
    let lex = Lexicon::build(cfg, &mut seeded(component_seed(cfg.seed, "toy-lexicon")));
    let pair_set = |name: &str, n: usize| {
        let mut rng = seeded(component_seed(cfg.seed, name));
        let pairs = (0..n)
            .map(|_| {
                let c = lex.concepts(&mut rng);
                let t = lex.target(&c);
                let s = lex.source(&c, cfg, &mut rng);
                SentencePair {
                    source: Sentence::from_parts_unchecked(s, Granularity::Word),
                    target: Sentence::from_parts_unchecked(t, Granularity::Word),
                }
            })
            .collect();
        ParallelCorpus::parallel(SOURCE_LABEL, TARGET_LABEL, pairs)
    };
    let bitext = pair_set("toy-bitext", cfg.bitext);
    let valid = pair_set("toy-valid", cfg.valid);
    let test = pair_set("toy-test", cfg.test);
    let mut rng = seeded(component_seed(cfg.seed, "toy-mono"));
    let mono = (0..cfg.mono)
        .map(|_| Sentence::from_parts_unchecked(lex.target(&lex.concepts(&mut rng)), Granularity::Word))
        .collect();
    ToyTask {
        bitext,
        mono: MonoCorpus::mono(TARGET_LABEL, mono),
        valid,
        test,
    }
}

/// Writes `bitext.tsv`, `mono.txt`, `valid.tsv` and `test.tsv` into `dir`.
pub fn write_toy(task: &ToyTask, dir: &std::path::Path) -> Result<()> {
    use crate::corpus::io::{write_mono, write_parallel_tsv};
    write_parallel_tsv(&dir.join("bitext.tsv"), &task.bitext, None)?;
    write_mono(&dir.join("mono.txt"), &task.mono)?;
    write_parallel_tsv(&dir.join("valid.tsv"), &task.valid, None)?;
    write_parallel_tsv(&dir.join("test.tsv"), &task.test, None)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig {
            bitext: 300,
            mono: 200,
            valid: 20,
            test: 20,
            ..Default::default()
        }
    }

    #[test]
    fn sizes_and_determinism() {
        let cfg = small();
        let a = generate_toy(&cfg);
        assert_eq!(a.bitext.len(), 300);
        assert_eq!(a.mono.len(), 200);
        assert_eq!(a.test.len(), 20);
        let b = generate_toy(&cfg);
        assert_eq!(a.bitext, b.bitext);
        assert_eq!(a.mono, b.mono);
        let c = generate_toy(&ToyConfig { seed: 2, ..cfg });
        assert_ne!(a.bitext, c.bitext);
    }

    #[test]
    fn languages_share_no_words() {
        let t = generate_toy(&small());
        let src: HashSet<&String> = t.bitext.iter().flat_map(|p| p.source.tokens()).collect();
        let tgt: HashSet<&String> = t.bitext.iter().flat_map(|p| p.target.tokens()).collect();
        assert_eq!(src.intersection(&tgt).count(), 0);
    }

    #[test]
    fn sentence_lengths() {
        let t = generate_toy(&small());
        for p in t.bitext.iter() {
            assert!((5..=16).contains(&p.target.len()), "{}", p.target.to_line());
            assert!(!p.source.is_empty());
        }
        let mean = t.bitext.iter().map(|p| p.target.len()).sum::<usize>() as f64 / 300.0;
        assert!((6.0..9.0).contains(&mean), "mean length {mean}");
    }
}
