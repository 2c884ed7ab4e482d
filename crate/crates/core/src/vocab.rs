//! Dense token-id vocabularies shared by the language model and the translation model.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Sentence end. Predicted, never conditioned on as a history start.
pub const EOS: &str = "</s>";
/// Filler token substituted for words by the noise transform.
pub const BLANK: &str = "BLANK";
/// Out-of-vocabulary placeholder.
pub const UNK: &str = "<unk>";

pub const EOS_ID: TokenId = 0;
pub const BLANK_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;

const RESERVED: [&str; 3] = [EOS, BLANK, UNK];

/// Bijection between tokens and dense ids starting at 0.
///
/// The reserved symbols `</s>`, `BLANK` and `<unk>` always occupy ids 0, 1 and 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            v.insert(r);
        }
        v
    }

    /// Builds a vocabulary from tokens in first-seen order; reserved symbols are not duplicated.
    pub fn from_tokens<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Self {
        let mut v = Vocabulary::new();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    /// Builds a vocabulary from an explicit id-ordered list, which must start with the reserved
    /// symbols and contain no duplicates.
    pub fn from_ordered(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED).any(|(t, r)| t.as_str() != r)
        {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the reserved symbols </s> BLANK <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary entry {t:?}"
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Maps a token to its id, sending unknown tokens to `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_symbols_present_once() {
        let v = Vocabulary::from_tokens(["a", "</s>", "b", "BLANK", "a"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.get(EOS), Some(EOS_ID));
        assert_eq!(v.get(BLANK), Some(BLANK_ID));
        assert_eq!(v.get(UNK), Some(UNK_ID));
        assert_eq!(v.token(3), "a");
        assert_eq!(v.token(4), "b");
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = Vocabulary::from_tokens(["a"]);
        assert_eq!(v.encode(&["a", "zzz"]), vec![3, UNK_ID]);
    }

    #[test]
    fn from_ordered_rejects_bad_prefix_and_duplicates() {
        assert!(Vocabulary::from_ordered(vec!["a".into()]).is_err());
        let dup = ["</s>", "BLANK", "<unk>", "x", "x"].map(String::from).to_vec();
        assert!(Vocabulary::from_ordered(dup).is_err());
        let ok = ["</s>", "BLANK", "<unk>", "x"].map(String::from).to_vec();
        assert_eq!(Vocabulary::from_ordered(ok).unwrap().get("x"), Some(3));
    }
}
