//! Corpus BLEU and the two diagnostics for synthetic data: training loss on synthetic versus
//! genuine pairs across epochs, and LM perplexity of synthetic sources.

use std::collections::HashMap;
use std::path::Path;

use crate::augment::back_translate;
use crate::corpus::io::write_atomic;
use crate::corpus::{three_way_split, MonoCorpus, ParallelCorpus, Sentence, SentencePair};
use crate::decode::{GenerationConfig, Method};
use crate::error::{Error, Result};
use crate::lm::{perplexity, train_lm, LmConfig};
use crate::model::{train_model, ModelConfig, TranslationModel};
use crate::noise::NoiseConfig;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BleuReport {
    /// Score in [0, 100].
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuReport {
    pub fn score_line(&self) -> String {
        format!("{:.2}", self.bleu)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_default() += 1;
        }
    }
    m
}

/// Single-reference corpus BLEU with clipped n-gram precisions for n = 1..4, uniform weights
/// and no smoothing.
pub fn bleu(hyps: &[Sentence], refs: &[Sentence]) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("hypotheses"));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h.tokens(), n);
            let rc = ngram_counts(r.tokens(), n);
            for (g, c) in &hc {
                matches[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub pool: String,
    pub method: String,
    pub cross_entropy: f64,
    pub ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub rows: Vec<LossRow>,
}

impl LossReport {
    pub fn get(&self, epoch: usize, pool: &str, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.epoch == epoch && r.pool == pool && r.method == method)
            .map(|r| r.cross_entropy)
    }

    pub fn extend(&mut self, other: LossReport) {
        self.rows.extend(other.rows);
    }
}

/// Per-token cross-entropy of each checkpoint (epoch `i + 1` for `checkpoints[i]`) on a
/// synthetic sample and an equally large bitext sample.
pub fn loss_analysis(
    checkpoints: &[TranslationModel],
    method: &str,
    synthetic: &[SentencePair],
    bitext: &[SentencePair],
) -> Result<LossReport> {
    if synthetic.is_empty() || bitext.is_empty() {
        return Err(Error::Empty("loss analysis sample"));
    }
    if synthetic.len() != bitext.len() {
        return Err(Error::InvalidArgument(format!(
            "synthetic sample has {} pairs, bitext sample {}",
            synthetic.len(),
            bitext.len()
        )));
    }
    let mut rows = Vec::new();
    for (i, m) in checkpoints.iter().enumerate() {
        for (pool, sample) in [("synthetic", synthetic), ("bitext", bitext)] {
            let ce = m.cross_entropy(sample)?;
            rows.push(LossRow {
                epoch: i + 1,
                pool: pool.to_string(),
                method: method.to_string(),
                cross_entropy: ce,
                ppl: ce.exp(),
            });
        }
    }
    Ok(LossReport { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RichnessRow {
    pub method: String,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RichnessReport {
    pub rows: Vec<RichnessRow>,
    /// Sizes of the three parts: reverse-model training, LM training, back-translated.
    pub split: (usize, usize, usize),
}

impl RichnessReport {
    pub fn get(&self, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .map(|r| r.perplexity)
    }
}

pub const HUMAN_ROW: &str = "human data";

/// Settings for [`richness_analysis`].
#[derive(Debug, Clone, PartialEq)]
pub struct RichnessConfig {
    pub fractions: (f64, f64, f64),
    pub generation: Vec<GenerationConfig>,
    pub noise: NoiseConfig,
    pub lm: LmConfig,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for RichnessConfig {
    fn default() -> Self {
        let generation = [Method::Beam, Method::TopK, Method::Sampling, Method::BeamNoise]
            .into_iter()
            .map(GenerationConfig::with_method)
            .collect();
        RichnessConfig {
            fractions: (0.123, 0.790, 0.087),
            generation,
            noise: NoiseConfig::default(),
            lm: LmConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

/// Splits the bitext in three; trains a target-to-source model on part one and a source LM on
/// part two, back-translates the targets of part three with every generation config and
/// reports the LM perplexity of each synthetic source set next to the genuine sources.
pub fn richness_analysis(bitext: &ParallelCorpus, cfg: &RichnessConfig) -> Result<RichnessReport> {
    let (p1, p2, p3) = three_way_split(bitext, cfg.fractions, cfg.seed)?;
    if p1.is_empty() || p2.is_empty() || p3.is_empty() {
        return Err(Error::Empty("richness split part"));
    }
    let reversed: Vec<SentencePair> = p1.iter().map(SentencePair::swapped).collect();
    let weighted: Vec<_> = reversed.iter().map(|p| (p, 1)).collect();
    let reverse = train_model(&weighted, &cfg.model)?;
    let lm = train_lm(p2.iter().map(|p| &p.source), &cfg.lm)?;
    let targets = MonoCorpus::mono(p3.target_label(), p3.iter().map(|p| p.target.clone()).collect());

    let mut rows = Vec::new();
    for g in &cfg.generation {
        let noise = (g.method == Method::BeamNoise).then_some(&cfg.noise);
        let bt = back_translate(&reverse, &targets, g, noise, None)?;
        let ppl = perplexity(&lm, bt.corpus.iter().map(|p| &p.source))?;
        rows.push(RichnessRow {
            method: g.label(),
            perplexity: ppl,
        });
    }
    rows.push(RichnessRow {
        method: HUMAN_ROW.to_string(),
        perplexity: perplexity(&lm, p3.iter().map(|p| &p.source))?,
    });
    Ok(RichnessReport {
        rows,
        split: (p1.len(), p2.len(), p3.len()),
    })
}

fn write_csv<F>(path: &Path, header: &[&str], fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(header).map_err(io_err)?;
    fill(&mut w).map_err(io_err)?;
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    write_atomic(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Formats a float for report files: fixed precision so reruns are byte-identical.
pub fn fmt_report(x: f64) -> String {
    format!("{x:.6}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuRow {
    pub config_id: String,
    pub test_set: String,
    pub report: BleuReport,
}

pub fn write_bleu_csv(path: &Path, rows: &[BleuRow]) -> Result<()> {
    write_csv(
        path,
        &["config_id", "test_set", "bleu", "p1", "p2", "p3", "p4", "bp"],
        |w| {
            for r in rows {
                let p = &r.report.precisions;
                w.write_record([
                    r.config_id.clone(),
                    r.test_set.clone(),
                    format!("{:.2}", r.report.bleu),
                    fmt_report(p[0]),
                    fmt_report(p[1]),
                    fmt_report(p[2]),
                    fmt_report(p[3]),
                    fmt_report(r.report.brevity_penalty),
                ])?;
            }
            Ok(())
        },
    )
}

pub fn write_loss_csv(path: &Path, report: &LossReport) -> Result<()> {
    write_csv(path, &["epoch", "pool", "method", "cross_entropy", "ppl"], |w| {
        for r in &report.rows {
            w.write_record([
                r.epoch.to_string(),
                r.pool.clone(),
                r.method.clone(),
                fmt_report(r.cross_entropy),
                fmt_report(r.ppl),
            ])?;
        }
        Ok(())
    })
}

pub fn write_richness_csv(path: &Path, report: &RichnessReport) -> Result<()> {
    write_csv(path, &["method", "perplexity"], |w| {
        for r in &report.rows {
            w.write_record([r.method.clone(), fmt_report(r.perplexity)])?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Granularity;
    use crate::toy::{generate_toy, ToyConfig};

    fn w(s: &str) -> Sentence {
        Sentence::from_whitespace(s, Granularity::Word)
    }

    fn ws(lines: &[&str]) -> Vec<Sentence> {
        lines.iter().map(|l| w(l)).collect()
    }

    /// Textbook BLEU computed with string n-grams, as an independent reference.
    fn reference_bleu(hyps: &[&str], refs: &[&str]) -> f64 {
        let grams = |s: &str, n: usize| -> Vec<String> {
            let t: Vec<&str> = s.split_whitespace().collect();
            if t.len() < n {
                return vec![];
            }
            (0..=t.len() - n).map(|i| t[i..i + n].join(" ")).collect()
        };
        let mut logp = 0.0;
        for n in 1..=4 {
            let (mut m, mut tot) = (0.0, 0.0);
            for (h, r) in hyps.iter().zip(refs) {
                let hg = grams(h, n);
                let rg = grams(r, n);
                tot += hg.len() as f64;
                let mut used = vec![false; rg.len()];
                for g in &hg {
                    if let Some(j) = (0..rg.len()).find(|&j| !used[j] && rg[j] == *g) {
                        used[j] = true;
                        m += 1.0;
                    }
                }
            }
            if m == 0.0 {
                return 0.0;
            }
            logp += (m / tot).ln() / 4.0;
        }
        let h: usize = hyps.iter().map(|s| s.split_whitespace().count()).sum();
        let r: usize = refs.iter().map(|s| s.split_whitespace().count()).sum();
        let bp = if h >= r { 1.0 } else { (1.0 - r as f64 / h as f64).exp() };
        100.0 * bp * logp.exp()
    }

    #[test]
    fn identity_is_one_hundred() {
        let s = ws(&["the cat sat on the mat", "a b c d e"]);
        let r = bleu(&s, &s).unwrap();
        assert_eq!(r.score_line(), "100.00");
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn clipping_example() {
        let r = bleu(&ws(&["the the the the"]), &ws(&["the cat"])).unwrap();
        assert_eq!(r.precisions[0], 0.25);
        assert_eq!(r.precisions[1], 0.0);
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn duplication_invariance_and_reference_agreement() {
        let hyps = ["the cat is on the mat today", "there is a cat here on a mat", "a b c d"];
        let refs = ["the cat is on the mat", "there is a cat on the mat", "a b c d e"];
        let r1 = bleu(&ws(&hyps), &ws(&refs)).unwrap();
        assert!((r1.bleu - reference_bleu(&hyps, &refs)).abs() < 1e-9);
        let hh: Vec<&str> = hyps.iter().chain(&hyps).copied().collect();
        let rr: Vec<&str> = refs.iter().chain(&refs).copied().collect();
        let r2 = bleu(&ws(&hh), &ws(&rr)).unwrap();
        assert!((r1.bleu - r2.bleu).abs() < 1e-9);
        assert!(r1.bleu > 0.0 && r1.bleu < 100.0);
    }

    #[test]
    fn brevity_penalty_only_for_short_output() {
        let r = bleu(&ws(&["a b c d e f"]), &ws(&["a b c d"])).unwrap();
        assert_eq!(r.brevity_penalty, 1.0);
        let r = bleu(&ws(&["a b c d"]), &ws(&["a b c d e f"])).unwrap();
        assert!((r.brevity_penalty - (1.0f64 - 1.5).exp()).abs() < 1e-12);
        assert!(bleu(&ws(&["a"]), &ws(&["a", "b"])).is_err());
        assert!(bleu(&[], &[]).is_err());
    }

    fn small_toy() -> crate::toy::ToyTask {
        generate_toy(&ToyConfig {
            bitext: 1500,
            mono: 10,
            valid: 10,
            test: 10,
            nouns: 100,
            verbs: 40,
            adjectives: 20,
            adverbs: 10,
            ..Default::default()
        })
    }

    #[test]
    fn loss_analysis_rows_and_errors() {
        let toy = small_toy();
        let train: Vec<SentencePair> = toy.bitext.items[..1000].to_vec();
        let weighted: Vec<_> = train.iter().map(|p| (p, 1)).collect();
        let cfg = ModelConfig {
            em_iterations: 3,
            ..Default::default()
        };
        let cps = crate::model::train_checkpoints(&weighted, &cfg).unwrap();
        let held = &toy.bitext.items[1000..1100];
        let r = loss_analysis(&cps, "beam", &train[..100], held).unwrap();
        assert_eq!(r.rows.len(), 6);
        for row in &r.rows {
            assert!(row.cross_entropy >= 0.0);
            assert!((row.ppl - row.cross_entropy.exp()).abs() < 1e-9);
        }
        // Training pairs are easier than unseen ones.
        assert!(r.get(3, "synthetic", "beam").unwrap() < r.get(3, "bitext", "beam").unwrap());
        assert!(loss_analysis(&cps, "beam", &train[..10], &train[..11]).is_err());
        assert!(loss_analysis(&cps, "beam", &[], &[]).is_err());
    }

    #[test]
    fn disjoint_bitext_samples_agree_within_bootstrap_error() {
        use rand::Rng as _;
        let toy = small_toy();
        let train: Vec<SentencePair> = toy.bitext.items[..900].to_vec();
        let weighted: Vec<_> = train.iter().map(|p| (p, 1)).collect();
        let cfg = ModelConfig {
            em_iterations: 3,
            ..Default::default()
        };
        let cps = crate::model::train_checkpoints(&weighted, &cfg).unwrap();
        let (a, b) = (&toy.bitext.items[900..1200], &toy.bitext.items[1200..1500]);
        let r = loss_analysis(&cps, "x", a, b).unwrap();
        let diff = r.get(3, "synthetic", "x").unwrap() - r.get(3, "bitext", "x").unwrap();

        // Per-sentence (logprob, tokens) so resamples can be rescored cheaply.
        let m = &cps[2];
        let scored = |s: &[SentencePair]| -> Vec<(f64, f64)> {
            s.iter()
                .map(|p| (m.sequence_logprob(&p.source, &p.target), (p.target.len() + 1) as f64))
                .collect()
        };
        let (sa, sb) = (scored(a), scored(b));
        let ce = |v: &[(f64, f64)], idx: &[usize]| {
            let (lp, n) = idx.iter().fold((0.0, 0.0), |(l, n), &i| (l + v[i].0, n + v[i].1));
            -lp / n
        };
        let mut rng = crate::rng::seeded(5);
        let diffs: Vec<f64> = (0..300)
            .map(|_| {
                let ia: Vec<usize> = (0..sa.len()).map(|_| rng.random_range(0..sa.len())).collect();
                let ib: Vec<usize> = (0..sb.len()).map(|_| rng.random_range(0..sb.len())).collect();
                ce(&sa, &ia) - ce(&sb, &ib)
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
        assert!(sd > 0.0);
        assert!(diff.abs() < 3.0 * sd, "diff {diff} sd {sd}");
    }

    #[test]
    fn richness_is_deterministic_and_has_human_row() {
        let toy = small_toy();
        let g = GenerationConfig::with_method(Method::Sampling);
        let cfg = RichnessConfig {
            fractions: (0.3, 0.5, 0.2),
            generation: vec![g.clone(), g],
            model: ModelConfig {
                em_iterations: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = richness_analysis(&toy.bitext, &cfg).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.rows[0].perplexity, r.rows[1].perplexity);
        assert_eq!(r.rows[2].method, HUMAN_ROW);
        assert!(r.rows.iter().all(|row| row.perplexity >= 1.0));
        assert_eq!(r, richness_analysis(&toy.bitext, &cfg).unwrap());
    }

    #[test]
    fn csv_headers_are_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let report = bleu(&ws(&["a b c d"]), &ws(&["a b c d"])).unwrap();
        let p = dir.path().join("bleu.csv");
        write_bleu_csv(
            &p,
            &[BleuRow {
                config_id: "x".into(),
                test_set: "test".into(),
                report,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("config_id,test_set,bleu,p1,p2,p3,p4,bp\nx,test,100.00,"));
        let p = dir.path().join("loss.csv");
        write_loss_csv(&p, &LossReport::default()).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,pool,method,cross_entropy,ppl\n");
        let p = dir.path().join("richness.csv");
        write_richness_csv(
            &p,
            &RichnessReport {
                rows: vec![RichnessRow {
                    method: "beam5".into(),
                    perplexity: 2.5,
                }],
                split: (1, 1, 1),
            },
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "method,perplexity\nbeam5,2.500000\n");
    }
}
