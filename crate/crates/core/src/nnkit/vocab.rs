use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const OOV: usize = 1;

/// Token-to-index map. Index 0 is padding and index 1 is out-of-vocabulary;
/// known tokens follow in sorted order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds the vocabulary from the given texts (the training split).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(split_tokens).collect();
        Vocabulary {
            tokens: set.into_iter().collect(),
        }
    }

    /// Number of indices including the two reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> usize {
        self.tokens
            .binary_search_by(|t| t.as_str().cmp(token))
            .map(|k| k + 2)
            .unwrap_or(OOV)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        match index {
            PAD => Some("<pad>"),
            OOV => Some("<oov>"),
            k => self.tokens.get(k - 2).map(String::as_str),
        }
    }
}

/// Lowercased runs of alphanumeric characters.
fn split_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token indices of `text`; unknown tokens map to OOV and an empty text
/// yields a single OOV token.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    let ids: Vec<usize> = split_tokens(text).iter().map(|t| vocab.index(t)).collect();
    if ids.is_empty() {
        vec![OOV]
    } else {
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_tokens() {
        let v = Vocabulary::build(["i am so not afraid", "of you"]);
        let ids = tokenize("I am SO not afraid", &v);
        assert_eq!(ids.len(), 5);
        assert!(ids.iter().all(|&i| i >= 2));
        assert_eq!(v.token(ids[2]), Some("so"));
    }

    #[test]
    fn unseen_and_empty() {
        let v = Vocabulary::build(["alpha beta"]);
        assert_eq!(tokenize("alpha gamma", &v), vec![v.index("alpha"), OOV]);
        assert_eq!(tokenize("", &v), vec![OOV]);
        assert_eq!(tokenize("?!", &v), vec![OOV]);
    }

    #[test]
    fn indices_are_contiguous() {
        let v = Vocabulary::build(["b a c", "a, b."]);
        assert_eq!(v.len(), 5);
        let mut idx: Vec<usize> = ["a", "b", "c"].iter().map(|t| v.index(t)).collect();
        idx.sort_unstable();
        assert_eq!(idx, vec![2, 3, 4]);
    }
}
