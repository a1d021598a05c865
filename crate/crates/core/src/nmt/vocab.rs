use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{EOS, START, UNK};

pub const SPECIALS: [&str; 3] = ["<s>", "</s>", "<unk>"];

/// Token ↔ id table. Ids 0..3 are the start, end and unknown markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, ids }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds from whitespace-tokenized lines. Tokens are ordered by
    /// descending frequency, ties broken lexicographically; `max_size`
    /// counts the three markers.
    pub fn build<S: AsRef<str>>(lines: &[S], max_size: Option<usize>) -> Self {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for line in lines {
            for tok in line.as_ref().split_whitespace() {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let room = max_size.map_or(usize::MAX, |m| m.saturating_sub(SPECIALS.len()));
        tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        tokens.into()
    }

    /// Rebuilds from an id-ordered token list; the first three must be the markers.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..3] != SPECIALS {
            return None;
        }
        let v: Vocab = tokens.into();
        (v.ids.len() == v.tokens.len()).then_some(v)
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

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Ids for a whitespace-tokenized line, unknown tokens mapped to `UNK`.
    pub fn ids(&self, line: &str) -> Vec<usize> {
        line.split_whitespace()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Decoder target form: start marker, ids, end marker.
    pub fn target_ids(&self, line: &str) -> Vec<usize> {
        let mut out = vec![START];
        out.extend(self.ids(line));
        out.push(EOS);
        out
    }

    pub fn line(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn count_unknown(&self, line: &str) -> usize {
        line.split_whitespace().filter(|t| self.id(t).is_none()).count()
    }
}
