//! Line-oriented corpus files: one sentence per line for monolingual text, `source<TAB>target`
//! (optionally followed by further tab-separated columns) for parallel text.

use std::fs;
use std::path::Path;

use super::{Granularity, MonoCorpus, ParallelCorpus, Sentence, SentencePair};
use crate::error::{Error, Result};

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads an already tokenized monolingual file.
pub fn read_mono(path: &Path, label: &str, granularity: Granularity) -> Result<MonoCorpus> {
    let lines = read_lines(path)?;
    Ok(MonoCorpus::mono(
        label,
        lines
            .iter()
            .map(|l| Sentence::from_whitespace(l, granularity))
            .collect(),
    ))
}

pub fn write_mono(path: &Path, corpus: &MonoCorpus) -> Result<()> {
    write_atomic(path, &render_lines(corpus.iter().map(Sentence::to_line)))
}

/// Reads a tokenized TSV; columns past the second are ignored.
pub fn read_parallel_tsv(
    path: &Path,
    labels: (&str, &str),
    granularity: Granularity,
) -> Result<ParallelCorpus> {
    let lines = read_lines(path)?;
    let mut pairs = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let mut cols = line.split('\t');
        let (Some(src), Some(tgt)) = (cols.next(), cols.next()) else {
            return Err(Error::parse(
                path.display().to_string(),
                i + 1,
                "expected source<TAB>target",
            ));
        };
        pairs.push(SentencePair {
            source: Sentence::from_whitespace(src, granularity),
            target: Sentence::from_whitespace(tgt, granularity),
        });
    }
    Ok(ParallelCorpus::parallel(labels.0, labels.1, pairs))
}

/// Reads two line-aligned files.
pub fn read_parallel_files(
    source: &Path,
    target: &Path,
    labels: (&str, &str),
    granularity: Granularity,
) -> Result<ParallelCorpus> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    if src.len() != tgt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} has {} lines but {} has {}",
            source.display(),
            src.len(),
            target.display(),
            tgt.len()
        )));
    }
    let pairs = src
        .iter()
        .zip(&tgt)
        .map(|(s, t)| SentencePair {
            source: Sentence::from_whitespace(s, granularity),
            target: Sentence::from_whitespace(t, granularity),
        })
        .collect();
    Ok(ParallelCorpus::parallel(labels.0, labels.1, pairs))
}

/// Writes `source<TAB>target[<TAB>tag]` lines.
pub fn write_parallel_tsv(path: &Path, corpus: &ParallelCorpus, tag: Option<&str>) -> Result<()> {
    let lines = corpus.iter().map(|p| {
        let mut line = format!("{}\t{}", p.source.to_line(), p.target.to_line());
        if let Some(tag) = tag {
            line.push('\t');
            line.push_str(tag);
        }
        line
    });
    write_atomic(path, &render_lines(lines))
}

fn render_lines<I: Iterator<Item = String>>(lines: I) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

/// Writes through a sibling temporary file and a rename so readers never see partial output.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bi.tsv");
        let c = ParallelCorpus::parallel(
            "de",
            "en",
            vec![
                SentencePair::new(Sentence::words(&["b", "a"]), Sentence::words(&["x"])).unwrap(),
                SentencePair::new(Sentence::words(&["a"]), Sentence::words(&["y", "z"])).unwrap(),
            ],
        );
        write_parallel_tsv(&p, &c, Some("beam")).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "b a\tx\tbeam\na\ty z\tbeam\n"
        );
        assert_eq!(read_parallel_tsv(&p, ("de", "en"), Granularity::Word).unwrap(), c);
    }

    #[test]
    fn missing_tab_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tsv");
        fs::write(&p, "a\tb\nno tab here\n").unwrap();
        let err = read_parallel_tsv(&p, ("s", "t"), Granularity::Word).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn aligned_files_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        fs::write(&a, "x\ny\n").unwrap();
        fs::write(&b, "z\n").unwrap();
        assert!(read_parallel_files(&a, &b, ("s", "t"), Granularity::Word).is_err());
    }
}
