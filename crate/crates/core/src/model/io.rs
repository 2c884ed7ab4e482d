//! Model file: a versioned text format with sections for the source vocabulary, mixture
//! weights, lexical triples `src<TAB>tgt<TAB>prob` (NULL row in its own section) and the
//! embedded target LM. Probabilities carry 17 significant digits.

use std::fmt::Write;
use std::path::Path;

use super::{LexTable, TranslationModel};
use crate::error::{Error, Result};
use crate::lm::NgramLm;
use crate::textfmt::{fmt_f64, LineReader};
use crate::vocab::Vocabulary;

const MAGIC: &str = "bt-model";
const VERSION: &str = "v1";

impl TranslationModel {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "lambda_lex {}", fmt_f64(self.lambda_lex));
        let _ = writeln!(out, "lambda_lm {}", fmt_f64(self.lambda_lm));
        let src = self.vocab_src();
        let _ = writeln!(out, "vocab_src {}", src.len());
        for t in src.tokens() {
            let _ = writeln!(out, "{t}");
        }
        let tgt = self.vocab_tgt();
        let lex = self.lex();
        let n: usize = (0..src.len()).map(|r| lex.row(r).len()).sum();
        let _ = writeln!(out, "lex {n}");
        for r in 0..src.len() {
            for &(t, p) in lex.row(r) {
                let _ = writeln!(out, "{}\t{}\t{}", src.token(r as u32), tgt.token(t), fmt_f64(p));
            }
        }
        let null = lex.row(lex.null_index());
        let _ = writeln!(out, "lex_null {}", null.len());
        for &(t, p) in null {
            let _ = writeln!(out, "{}\t{}", tgt.token(t), fmt_f64(p));
        }
        self.lm().write_text(&mut out);
        let _ = writeln!(out, "end {MAGIC}");
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut r = LineReader::new(text, origin);
        r.expect_header(MAGIC, VERSION)?;
        let lambda_lex: f64 = {
            let v = r.expect_key("lambda_lex")?;
            r.parse(v)?
        };
        let lambda_lm: f64 = {
            let v = r.expect_key("lambda_lm")?;
            r.parse(v)?
        };
        let nsrc = r.expect_count("vocab_src")?;
        let mut tokens = Vec::with_capacity(nsrc);
        for _ in 0..nsrc {
            tokens.push(r.next_line()?.to_string());
        }
        let src = Vocabulary::from_ordered(tokens).map_err(|e| r.error(e.to_string()))?;

        struct Triple<'a>(usize, &'a str, f64);
        let mut triples = Vec::new();
        let n = r.expect_count("lex")?;
        for _ in 0..n {
            let line = r.next_line()?;
            let cols: Vec<&str> = line.split('\t').collect();
            let [s, t, p] = cols[..] else {
                return Err(r.error("expected src<TAB>tgt<TAB>prob"));
            };
            let row = src
                .get(s)
                .ok_or_else(|| r.error(format!("unknown source token {s:?}")))?;
            triples.push(Triple(row as usize, t, r.parse(p)?));
        }
        let n = r.expect_count("lex_null")?;
        for _ in 0..n {
            let line = r.next_line()?;
            let cols: Vec<&str> = line.split('\t').collect();
            let [t, p] = cols[..] else {
                return Err(r.error("expected tgt<TAB>prob"));
            };
            triples.push(Triple(src.len(), t, r.parse(p)?));
        }
        let lm = NgramLm::read_text(&mut r)?;
        r.expect_key("end")?;

        let tgt = lm.vocab().clone();
        let mut rows = vec![Vec::new(); src.len() + 1];
        for Triple(row, t, p) in triples {
            let id = tgt
                .get(t)
                .ok_or_else(|| Error::parse(origin, 0, format!("lex target {t:?} not in LM vocabulary")))?;
            rows[row].push((id, p));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(w, _)| w);
        }
        let lex = LexTable::from_rows(src, tgt, rows);
        TranslationModel::new(&lex, lm, lambda_lex, lambda_lm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::corpus::io::write_atomic(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TranslationModel::from_text(&text, &path.display().to_string())
    }
}
