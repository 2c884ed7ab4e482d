//! Helpers for the line-oriented, versioned text formats used by model and LM files.

use crate::error::{Error, Result};

/// `f64` rendered with 17 significant digits, which round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    origin: String,
    last: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(text: &'a str, origin: impl Into<String>) -> Self {
        LineReader {
            lines: text.lines().enumerate(),
            origin: origin.into(),
            last: 0,
        }
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(self.origin.clone(), self.last, message)
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => {
                self.last += 1;
                Err(self.error("unexpected end of file"))
            }
        }
    }

    /// Reads a `key value...` line and returns the value part.
    pub fn expect_key(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            None if line == key => Ok(""),
            _ => Err(self.error(format!("expected `{key}`, found {line:?}"))),
        }
    }

    pub fn expect_count(&mut self, key: &str) -> Result<usize> {
        let v = self.expect_key(key)?;
        v.parse().map_err(|_| self.error(format!("bad count {v:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.error(format!("cannot parse {s:?}")))
    }

    pub fn expect_header(&mut self, magic: &str, version: &str) -> Result<()> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((m, v)) if m == magic => {
                if v == version {
                    Ok(())
                } else {
                    Err(Error::Version {
                        found: v.to_string(),
                        expected: version.to_string(),
                    })
                }
            }
            _ => Err(self.error(format!("not a {magic} file"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bit_exact() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 0.75, f64::MIN_POSITIVE, 123456.789] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }
}
