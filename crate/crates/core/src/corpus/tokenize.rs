use super::{Granularity, Sentence};

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '«' | '»' | '„' | '“' | '”' | '‘' | '’' | '‚' | '…' | '–' | '—' | '¿' | '¡' | '·'
        )
}

/// Whitespace tokenizer that peels punctuation characters off both ends of every word,
/// one token per character. Inner punctuation (`don't`, `e-mail`) is left alone.
pub fn tokenize(raw_line: &str) -> Sentence {
    let mut tokens = Vec::new();
    for chunk in raw_line.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|&c| !is_punct(c));
        let Some(start) = start else {
            tokens.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|&c| !is_punct(c)).unwrap() + 1;
        tokens.extend(chars[..start].iter().map(|c| c.to_string()));
        tokens.push(chars[start..end].iter().collect());
        tokens.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    Sentence::from_parts_unchecked(tokens, Granularity::Word)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).into_tokens()
    }

    #[test]
    fn splits_trailing_punctuation() {
        assert_eq!(toks("The cat sat."), ["The", "cat", "sat", "."]);
    }

    #[test]
    fn empty_and_whitespace() {
        assert!(toks("").is_empty());
        assert!(toks("   \t ").is_empty());
        assert_eq!(toks("a  b"), ["a", "b"]);
    }

    #[test]
    fn leading_and_inner_punctuation() {
        assert_eq!(toks("\"Hello,\" don't"), ["\"", "Hello", ",", "\"", "don't"]);
        assert_eq!(toks("..."), [".", ".", "."]);
        assert_eq!(toks("«Fairness»"), ["«", "Fairness", "»"]);
    }
}
