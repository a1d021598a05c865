//! Byte-pair encoding over whitespace-separated tokens.
//!
//! Learning splits every token into characters followed by a separate
//! end-of-word symbol [`END_OF_WORD`]; merges may absorb it. Pair frequency is
//! the number of adjacent positions holding the pair, weighted by token
//! count. Ties go to the lexicographically smallest `(left, right)` and
//! learning stops once no pair occurs at least twice.
//!
//! Applied output marks every symbol except the last of a token with the
//! `@@` continuation suffix, so `undo_bpe` only has to delete `"@@ "`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use thiserror::Error;

/// Internal end-of-word symbol. Never appears in applied output.
pub const END_OF_WORD: &str = "</w>";

/// Continuation marker appended to non-final symbols.
pub const CONTINUATION: &str = "@@";

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("token {0:?} contains the reserved marker \"@@\"")]
    ReservedMarker(String),
    #[error("merge file line {line}: expected `left right`, got {text:?}")]
    MalformedMerge { line: usize, text: String },
    #[error("merge file line {line}: duplicate merge {left:?} {right:?}")]
    DuplicateMerge {
        line: usize,
        left: String,
        right: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ordered merge list. Immutable after construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

fn check_token(tok: &str) -> Result<(), BpeError> {
    if tok.contains(CONTINUATION) {
        Err(BpeError::ReservedMarker(tok.to_string()))
    } else {
        Ok(())
    }
}

fn initial_symbols(tok: &str) -> Vec<String> {
    tok.chars()
        .map(String::from)
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

impl BpeModel {
    /// Builds a model from an explicit merge list. Duplicate pairs keep their first rank.
    pub fn from_merges<I, L, R>(merges: I) -> Self
    where
        I: IntoIterator<Item = (L, R)>,
        L: Into<String>,
        R: Into<String>,
    {
        let mut model = BpeModel::default();
        for (l, r) in merges {
            let pair = (l.into(), r.into());
            if !model.ranks.contains_key(&pair) {
                model.ranks.insert(pair.clone(), model.merges.len());
                model.merges.push(pair);
            }
        }
        model
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// The model restricted to its first `k` merges.
    pub fn truncated(&self, k: usize) -> Self {
        Self::from_merges(self.merges.iter().take(k).cloned())
    }

    /// Symbols created by merges, in merge order, without repeats.
    pub fn merged_symbols(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.merges
            .iter()
            .map(|(l, r)| format!("{l}{r}"))
            .filter(|s| seen.insert(s.clone()))
            .collect()
    }

    /// Reads a merge file: one `left right` pair per line. A leading
    /// `#version` line and blank lines are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, BpeError> {
        let mut model = BpeModel::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() || (idx == 0 && line.starts_with("#version")) {
                continue;
            }
            let mut parts = line.split(' ');
            let (left, right) = match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => (l, r),
                _ => {
                    return Err(BpeError::MalformedMerge {
                        line: idx + 1,
                        text: line.to_string(),
                    })
                }
            };
            let pair = (left.to_string(), right.to_string());
            if model.ranks.contains_key(&pair) {
                return Err(BpeError::DuplicateMerge {
                    line: idx + 1,
                    left: pair.0,
                    right: pair.1,
                });
            }
            model.ranks.insert(pair.clone(), model.merges.len());
            model.merges.push(pair);
        }
        Ok(model)
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "#version: 0.2")?;
        for (l, r) in &self.merges {
            writeln!(w, "{l} {r}")?;
        }
        Ok(())
    }

    /// Internal segmentation of one token, end-of-word symbol included.
    ///
    /// Equivalent to replaying every merge in model order over the symbol
    /// list: at each step the lowest-ranked pair present whose rank exceeds
    /// the last applied rank is merged everywhere, left to right.
    pub fn segment(&self, tok: &str) -> Vec<String> {
        let mut symbols = initial_symbols(tok);
        let mut floor: Option<usize> = None;
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.rank_of(&w[0], &w[1]))
                .filter(|&r| floor.is_none_or(|f| r > f))
                .min();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            symbols = merge_pair(symbols, l, r);
            floor = Some(rank);
        }
        symbols
    }

    fn rank_of(&self, l: &str, r: &str) -> Option<usize> {
        // HashMap<(String, String)> cannot be probed with (&str, &str) directly.
        self.ranks.get(&(l.to_string(), r.to_string())).copied()
    }

    /// Output pieces for one token, with continuation markers.
    pub fn apply_token(&self, tok: &str) -> Result<Vec<String>, BpeError> {
        check_token(tok)?;
        Ok(mark_continuations(strip_end_of_word(self.segment(tok))))
    }

    /// Splits each token of `line`. Tokens are re-joined with single spaces.
    pub fn apply_line(&self, line: &str) -> Result<String, BpeError> {
        let mut out = String::with_capacity(line.len() * 2);
        for tok in line.split_whitespace() {
            for piece in self.apply_token(tok)? {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(&piece);
            }
        }
        Ok(out)
    }
}

/// Replaces every left-to-right, non-overlapping occurrence of `(l, r)`.
fn merge_pair(symbols: Vec<String>, l: &str, r: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
            out.push(format!("{l}{r}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

fn strip_end_of_word(mut symbols: Vec<String>) -> Vec<String> {
    if let Some(last) = symbols.last_mut() {
        if last == END_OF_WORD {
            symbols.pop();
        } else if let Some(stripped) = last.strip_suffix(END_OF_WORD) {
            *last = stripped.to_string();
        }
    }
    symbols
}

fn mark_continuations(mut symbols: Vec<String>) -> Vec<String> {
    let n = symbols.len();
    for s in symbols.iter_mut().take(n.saturating_sub(1)) {
        s.push_str(CONTINUATION);
    }
    symbols
}

pub fn apply_bpe(model: &BpeModel, line: &str) -> Result<String, BpeError> {
    model.apply_line(line)
}

/// Deletes every `"@@ "` and a trailing `"@@"`.
pub fn undo_bpe(line: &str) -> String {
    let joined = line.replace("@@ ", "");
    match joined.strip_suffix(CONTINUATION) {
        Some(s) => s.to_string(),
        None => joined,
    }
}

/// Token frequencies of a corpus, rejecting tokens that carry `@@`.
pub fn count_tokens<I, S>(lines: I) -> Result<HashMap<String, u64>, BpeError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for line in lines {
        for tok in line.as_ref().split_whitespace() {
            if let Some(c) = counts.get_mut(tok) {
                *c += 1;
            } else {
                check_token(tok)?;
                counts.insert(tok.to_string(), 1);
            }
        }
    }
    Ok(counts)
}

pub fn learn_bpe<I, S>(lines: I, num_merges: usize) -> Result<BpeModel, BpeError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let counts = count_tokens(lines)?;
    Ok(learn_from_counts(&counts, num_merges))
}

/// Reads a corpus stream line by line and learns `num_merges` merges.
pub fn learn_bpe_reader<R: BufRead>(reader: R, num_merges: usize) -> Result<BpeModel, BpeError> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for line in reader.lines() {
        let line = line?;
        for tok in line.split_whitespace() {
            if let Some(c) = counts.get_mut(tok) {
                *c += 1;
            } else {
                check_token(tok)?;
                counts.insert(tok.to_string(), 1);
            }
        }
    }
    Ok(learn_from_counts(&counts, num_merges))
}

type SymId = u32;
type Pair = (SymId, SymId);

#[derive(Default)]
struct Interner {
    names: Vec<Arc<str>>,
    ids: HashMap<Arc<str>, SymId>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> SymId {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as SymId;
        let name: Arc<str> = Arc::from(s);
        self.names.push(name.clone());
        self.ids.insert(name, id);
        id
    }
}

/// Heap entry: higher count first, then the smaller `(left, right)` strings.
struct Candidate {
    count: u64,
    left: Arc<str>,
    right: Arc<str>,
    pair: Pair,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

fn adjacent_pairs(word: &[SymId]) -> impl Iterator<Item = Pair> + '_ {
    word.windows(2).map(|w| (w[0], w[1]))
}

/// Greedy learner with incremental pair counts and a lazily invalidated heap.
pub fn learn_from_counts(counts: &HashMap<String, u64>, num_merges: usize) -> BpeModel {
    let mut interner = Interner::default();
    let mut sorted: Vec<(&String, &u64)> = counts.iter().collect();
    sorted.sort();

    let mut words: Vec<Vec<SymId>> = Vec::with_capacity(sorted.len());
    let mut freqs: Vec<u64> = Vec::with_capacity(sorted.len());
    for (tok, &n) in sorted {
        let w = initial_symbols(tok)
            .iter()
            .map(|s| interner.intern(s))
            .collect();
        words.push(w);
        freqs.push(n);
    }

    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in adjacent_pairs(w) {
            *pair_counts.entry(p).or_insert(0) += freqs[wi];
            where_.entry(p).or_default().insert(wi);
        }
    }

    let candidate = |interner: &Interner, pair: Pair, count: u64| Candidate {
        count,
        left: interner.names[pair.0 as usize].clone(),
        right: interner.names[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&p, &c)| candidate(&interner, p, c))
        .collect();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            // Stale entry; the live count has its own entry.
            continue;
        }
        if current < 2 {
            break;
        }
        let (a, b) = top.pair;
        let merged_name = format!("{}{}", top.left, top.right);
        let merged = interner.intern(&merged_name);
        merges.push((top.left.to_string(), top.right.to_string()));

        let mut affected: Vec<usize> = where_
            .remove(&top.pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();

        let mut touched: HashSet<Pair> = HashSet::new();
        for wi in affected {
            let old = &words[wi];
            if !adjacent_pairs(old).any(|p| p == (a, b)) {
                continue;
            }
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == a && old[i + 1] == b {
                    new.push(merged);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            let f = freqs[wi];
            for p in adjacent_pairs(old) {
                let c = pair_counts.get_mut(&p).expect("counted pair");
                *c -= f;
                touched.insert(p);
            }
            for p in adjacent_pairs(&new) {
                *pair_counts.entry(p).or_insert(0) += f;
                where_.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
            words[wi] = new;
        }
        pair_counts.remove(&(a, b));
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match pair_counts.get(&p).copied() {
                Some(0) => {
                    pair_counts.remove(&p);
                }
                Some(c) => heap.push(candidate(&interner, p, c)),
                None => {}
            }
        }
    }
    BpeModel::from_merges(merges)
}

/// Applied-symbol counts over a corpus; its size is the effective vocabulary.
pub fn vocabulary<I, S>(model: &BpeModel, lines: I) -> Result<BTreeMap<String, u64>, BpeError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut cache: HashMap<String, Vec<String>> = HashMap::new();
    let mut vocab = BTreeMap::new();
    for line in lines {
        for tok in line.as_ref().split_whitespace() {
            if !cache.contains_key(tok) {
                cache.insert(tok.to_string(), model.apply_token(tok)?);
            }
            for piece in &cache[tok] {
                *vocab.entry(piece.clone()).or_insert(0) += 1;
            }
        }
    }
    Ok(vocab)
}

/// Distinct internal symbols (end-of-word symbol included) after segmenting
/// every distinct token with `model`.
pub fn internal_symbols(model: &BpeModel, counts: &HashMap<String, u64>) -> HashSet<String> {
    counts
        .keys()
        .flat_map(|tok| model.segment(tok))
        .collect()
}
