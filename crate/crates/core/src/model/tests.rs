use std::collections::HashMap;

use super::*;
use crate::corpus::Granularity;
use crate::vocab::BLANK_ID;

fn s(line: &str) -> Sentence {
    Sentence::from_whitespace(line, Granularity::Word)
}

fn pair(src: &str, tgt: &str) -> SentencePair {
    SentencePair::new(s(src), s(tgt)).unwrap()
}

fn toy_bitext() -> Vec<SentencePair> {
    vec![
        pair("das haus", "the house"),
        pair("das buch", "the book"),
        pair("ein buch", "a book"),
        pair("ein haus ist klein", "a house is small"),
        pair("das haus ist gross", "the house is big"),
    ]
}

fn toy_model(lambda_lex: f64) -> TranslationModel {
    let bitext = toy_bitext();
    let weighted: Vec<_> = bitext.iter().map(|p| (p, 1)).collect();
    let cfg = ModelConfig {
        lambda_lex,
        lm_order: 3,
        ..Default::default()
    };
    train_model(&weighted, &cfg).unwrap()
}

/// Straightforward IBM Model 1 EM over string-keyed maps, written independently of the
/// cell-grid implementation.
fn naive_ibm1(bitext: &[SentencePair], iterations: usize) -> HashMap<(String, String), f64> {
    const NULL: &str = "\u{0}NULL";
    let targets: std::collections::BTreeSet<&str> = bitext
        .iter()
        .flat_map(|p| p.target.tokens().iter().map(String::as_str))
        .collect();
    let mut t: HashMap<(String, String), f64> = HashMap::new();
    let uniform = 1.0 / targets.len() as f64;
    for p in bitext {
        for e in p.source.tokens().iter().map(String::as_str).chain([NULL]) {
            for f in p.target.tokens() {
                t.insert((e.to_string(), f.clone()), uniform);
            }
        }
    }
    for _ in 0..iterations {
        let mut count: HashMap<(String, String), f64> = HashMap::new();
        let mut total: HashMap<String, f64> = HashMap::new();
        for p in bitext {
            let src: Vec<&str> = p.source.tokens().iter().map(String::as_str).chain([NULL]).collect();
            for f in p.target.tokens() {
                let z: f64 = src.iter().map(|e| t[&(e.to_string(), f.clone())]).sum();
                for e in &src {
                    let key = (e.to_string(), f.clone());
                    let c = t[&key] / z;
                    *count.entry(key).or_default() += c;
                    *total.entry(e.to_string()).or_default() += c;
                }
            }
        }
        for (k, v) in t.iter_mut() {
            *v = count.get(k).copied().unwrap_or(0.0) / total[&k.0];
        }
    }
    t.into_iter()
        .map(|((e, f), p)| ((if e == NULL { String::new() } else { e }, f), p))
        .collect()
}

#[test]
fn em_matches_naive_reference() {
    for bitext in [
        vec![pair("a", "x"), pair("a b", "x y")],
        toy_bitext(),
    ] {
        let fast = train_ibm1_em(&bitext, 20).unwrap();
        let oracle = naive_ibm1(&bitext, 20);
        for ((e, f), p) in &oracle {
            let src = if e.is_empty() { None } else { Some(e.as_str()) };
            let got = fast.prob(src, f);
            assert!((got - p).abs() < 1e-6, "t({f}|{e}) = {got} vs {p}");
        }
    }
}

#[test]
fn backward_model_from_swapped_bitext() {
    let bitext: Vec<_> = toy_bitext().iter().map(SentencePair::swapped).collect();
    let t = train_ibm1_em(&bitext, 10).unwrap();
    assert!(t.prob(Some("house"), "haus") > 0.5);
}

#[test]
fn distributions_are_normalized() {
    let m = toy_model(0.5);
    for (src, prefix) in [("das haus", ""), ("ein buch", "a"), ("unbekannt", "the house is"), ("", "")] {
        let d = m.next_token_distribution(&s(src), &s(prefix));
        assert_eq!(d.len(), m.vocab_tgt().len());
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{src} | {prefix}");
        assert!(d.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn degenerate_mixtures() {
    let lm_only = toy_model(0.0);
    let src = s("das haus");
    let d = lm_only.next_token_distribution(&src, &s("the"));
    let h = {
        let mut h = lm_only.lm().start_history();
        h.push(lm_only.vocab_tgt().get("the").unwrap());
        h
    };
    let lm = lm_only.lm().distribution(&h[h.len() - 2..]);
    for (a, b) in d.iter().zip(&lm) {
        assert!((a - b).abs() < 1e-12);
    }

    let lex_only = toy_model(1.0);
    let d = lex_only.next_token_distribution(&src, &s(""));
    assert_eq!(d[EOS_ID as usize], 0.0);
    let house = lex_only.vocab_tgt().get("house").unwrap() as usize;
    let the = lex_only.vocab_tgt().get("the").unwrap() as usize;
    let book = lex_only.vocab_tgt().get("book").unwrap() as usize;
    assert!(d[house] > d[book]);
    assert!(d[the] > d[book]);
}

#[test]
fn sequence_logprob_paths_agree() {
    let m = toy_model(0.5);
    for (src, tgt) in [("das haus", "the house"), ("ein buch", "book a the"), ("x", "")] {
        let c = m.condition(&s(src));
        let ids = m.encode_target(&s(tgt));
        let a = sequence_logprob(&c, &ids);
        let b = m.sequence_logprob(&s(src), &s(tgt));
        assert!(a <= 0.0);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn zero_probability_step_gives_neg_infinity() {
    let m = toy_model(1.0);
    let c = m.condition(&s("das haus"));
    assert_eq!(sequence_logprob(&c, &[BLANK_ID]), f64::NEG_INFINITY);
    assert_eq!(c.logprob(&[BLANK_ID]), f64::NEG_INFINITY);
}

/// Hand-built model over {</s>, a, b}: fixed per-step distributions.
struct Table(Vec<f64>);

impl NextTokenModel for Table {
    fn vocab_size(&self) -> usize {
        3
    }
    fn next_token_distribution(&self, prefix: &[TokenId], out: &mut [f64]) {
        let shift = prefix.iter().map(|&t| t as usize).sum::<usize>() % 3;
        for i in 0..3 {
            out[i] = self.0[(i + shift) % 3];
        }
    }
}

#[test]
fn enumeration_with_length_cap_sums_to_one() {
    let m = LengthCapped {
        inner: Table(vec![0.2, 0.5, 0.3]),
        cap: 2,
    };
    let mut total = 0.0;
    let mut seqs: Vec<Vec<TokenId>> = vec![vec![]];
    for len in 1..=2 {
        for a in [1, 2] {
            if len == 1 {
                seqs.push(vec![a]);
            } else {
                for b in [1, 2] {
                    seqs.push(vec![a, b]);
                }
            }
        }
    }
    for seq in &seqs {
        total += sequence_logprob(&m, seq).exp();
    }
    assert!((total - 1.0).abs() < 1e-12, "{total}");
}

#[test]
fn empty_target_sequence_under_certain_eos() {
    let m = Table(vec![1.0, 0.0, 0.0]);
    assert_eq!(sequence_logprob(&m, &[]), 0.0);
}

#[test]
fn model_file_round_trip() {
    let m = toy_model(0.5);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.txt");
    m.save(&p).unwrap();
    let back = TranslationModel::load(&p).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_text(), m.to_text());

    let text = m.to_text();
    let truncated = &text[..text.len() / 2];
    assert!(TranslationModel::from_text(truncated, "t").is_err());
    let bumped = text.replacen("bt-model v1", "bt-model v2", 1);
    assert!(matches!(
        TranslationModel::from_text(&bumped, "t"),
        Err(Error::Version { .. })
    ));
}

#[test]
fn invalid_lambdas_rejected() {
    let m = toy_model(0.5);
    assert!(TranslationModel::new(m.lex(), m.lm().clone(), 0.7, 0.7).is_err());
    assert!(m.with_lambdas(1.5).is_err());
}

#[test]
fn convergence_stops_and_keeps_best() {
    let bitext = toy_bitext();
    let weighted: Vec<_> = bitext.iter().map(|p| (p, 1)).collect();
    let cfg = ModelConfig {
        em_iterations: 50,
        lm_order: 2,
        ..Default::default()
    };
    let r = train_until_converged(&weighted, &bitext[..2], &cfg).unwrap();
    assert!(r.heldout_ce.len() < 50);
    let best = r.heldout_ce.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((r.heldout_ce[r.iterations - 1] - best).abs() < 1e-12);
}

#[test]
fn lambda_tuning_picks_grid_point() {
    let m = toy_model(0.5);
    let tuned = tune_lambda(&m, &toy_bitext(), &[0.1, 0.5, 0.9]).unwrap();
    assert!([0.1, 0.5, 0.9].contains(&tuned.lambdas().0));
}
