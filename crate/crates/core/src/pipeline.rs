//! Corpus-level preprocessing and bookkeeping.
//!
//! Every transform here is line-preserving: one output line per input line,
//! in input order. Errors carry the 1-based line number of the offending
//! input line.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bpe::{self, BpeError, BpeModel};
use crate::wubi::{CodecError, WubiTable};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("line {line}: {source}")]
    Codec { line: usize, source: CodecError },
    #[error("line {line}: {source}")]
    Bpe { line: usize, source: BpeError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    SourceZh,
    TargetEn,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub table_path: Option<PathBuf>,
    pub bpe_merges: usize,
    pub side: Side,
    pub lowercase_en: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            table_path: None,
            bpe_merges: 0,
            side: Side::SourceZh,
            lowercase_en: false,
        }
    }
}

fn bpe_at(line: usize) -> impl Fn(BpeError) -> PipelineError {
    move |source| PipelineError::Bpe { line, source }
}

/// Encodes one Chinese line and, when a model is given, splits it.
pub fn preprocess_zh_line(
    table: &WubiTable,
    model: Option<&BpeModel>,
    line: &str,
) -> Result<String, BpeError> {
    let encoded = table.encode_line(line);
    match model {
        Some(m) => m.apply_line(&encoded),
        None => Ok(encoded),
    }
}

/// Learns a merge model from the Wubi encoding of `lines`.
pub fn learn_zh_model<I, S>(table: &WubiTable, lines: I, merges: usize) -> Result<BpeModel, BpeError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    bpe::learn_bpe(lines.into_iter().map(|l| table.encode_line(l.as_ref())), merges)
}

/// Chinese → Wubi → BPE over an in-memory corpus.
///
/// With no model and `bpe_merges > 0` a model is learned from the encoded
/// input first and returned alongside the output.
pub fn preprocess_zh<S: AsRef<str> + Sync>(
    config: &PipelineConfig,
    table: &WubiTable,
    input: &[S],
    model: Option<&BpeModel>,
) -> Result<(Vec<String>, Option<BpeModel>), PipelineError> {
    let learned;
    let model = match model {
        Some(m) => Some(m),
        None if config.bpe_merges > 0 => {
            // Encoded tokens are codes, single punctuation marks or one escaped
            // character each, so they never carry the continuation marker.
            learned = learn_zh_model(table, input.iter().map(AsRef::as_ref), config.bpe_merges)
                .expect("encoded tokens never contain the continuation marker");
            Some(&learned)
        }
        None => None,
    };
    let out = input
        .par_iter()
        .enumerate()
        .map(|(i, line)| preprocess_zh_line(table, model, line.as_ref()).map_err(bpe_at(i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((out, model.cloned()))
}

/// Streaming variant: the model, if any, must already exist.
pub fn preprocess_zh_stream<R: BufRead, W: Write>(
    table: &WubiTable,
    model: Option<&BpeModel>,
    input: R,
    mut output: W,
) -> Result<usize, PipelineError> {
    let mut n = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let out = preprocess_zh_line(table, model, &line).map_err(bpe_at(i + 1))?;
        writeln!(output, "{out}")?;
        n += 1;
    }
    Ok(n)
}

pub fn postprocess_zh_line(table: &WubiTable, line: &str) -> Result<String, CodecError> {
    table.decode_line(&bpe::undo_bpe(line))
}

pub fn postprocess_zh<S: AsRef<str>>(
    table: &WubiTable,
    input: &[S],
) -> Result<Vec<String>, PipelineError> {
    input
        .iter()
        .enumerate()
        .map(|(i, l)| {
            postprocess_zh_line(table, l.as_ref())
                .map_err(|source| PipelineError::Codec { line: i + 1, source })
        })
        .collect()
}

pub fn postprocess_zh_stream<R: BufRead, W: Write>(
    table: &WubiTable,
    input: R,
    mut output: W,
) -> Result<usize, PipelineError> {
    let mut n = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let out = postprocess_zh_line(table, &line)
            .map_err(|source| PipelineError::Codec { line: i + 1, source })?;
        writeln!(output, "{out}")?;
        n += 1;
    }
    Ok(n)
}

/// Whitespace split plus detaching of leading/trailing ASCII punctuation.
///
/// A stand-in for Moses tokenization; lowercasing replaces truecasing.
pub fn tokenize_en(line: &str, lowercase: bool) -> String {
    let mut tokens: Vec<String> = Vec::new();
    for word in line.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let start = chars
            .iter()
            .position(|c| !c.is_ascii_punctuation())
            .unwrap_or(chars.len());
        let end = chars
            .iter()
            .rposition(|c| !c.is_ascii_punctuation())
            .map_or(start, |p| p + 1);
        tokens.extend(chars[..start].iter().map(|c| c.to_string()));
        if start < end {
            let core: String = chars[start..end].iter().collect();
            tokens.push(if lowercase { core.to_lowercase() } else { core });
        }
        tokens.extend(chars[end.max(start)..].iter().map(|c| c.to_string()));
    }
    tokens.join(" ")
}

/// True if the line contains any numeric character.
pub fn has_digits(line: &str) -> bool {
    line.chars().any(char::is_numeric)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub sentences: u64,
    pub tokens: u64,
    pub distinct_tokens: u64,
}

impl CorpusStats {
    /// Exact tokens/sentences; zero for an empty corpus.
    pub fn avg_tokens_per_sentence(&self) -> Ratio<u64> {
        if self.sentences == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(self.tokens, self.sentences)
        }
    }

    pub fn avg_f64(&self) -> f64 {
        let r = self.avg_tokens_per_sentence();
        *r.numer() as f64 / *r.denom() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "sentences": self.sentences,
            "tokens": self.tokens,
            "avg_tokens_per_sentence": self.avg_f64(),
            "distinct_tokens": self.distinct_tokens,
        })
        .to_string()
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sentences={} tokens={} avg_tokens_per_sentence={:.4} distinct_tokens={}",
            self.sentences,
            self.tokens,
            self.avg_f64(),
            self.distinct_tokens
        )
    }
}

#[derive(Debug, Default)]
pub struct StatsAccumulator {
    sentences: u64,
    tokens: u64,
    seen: HashSet<String>,
}

impl StatsAccumulator {
    pub fn add_line(&mut self, line: &str) {
        self.sentences += 1;
        for tok in line.split_whitespace() {
            self.tokens += 1;
            if !self.seen.contains(tok) {
                self.seen.insert(tok.to_string());
            }
        }
    }

    pub fn finish(&self) -> CorpusStats {
        CorpusStats {
            sentences: self.sentences,
            tokens: self.tokens,
            distinct_tokens: self.seen.len() as u64,
        }
    }
}

pub fn corpus_stats<I, S>(lines: I) -> CorpusStats
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut acc = StatsAccumulator::default();
    for l in lines {
        acc.add_line(l.as_ref());
    }
    acc.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentReport {
    pub src_lines: usize,
    pub tgt_lines: usize,
    /// 0-based index of the first line present on one side only.
    pub first_mismatch: Option<usize>,
    /// 0-based indices where exactly one side is blank.
    pub empty_one_side: Vec<usize>,
}

impl AlignmentReport {
    pub fn is_ok(&self) -> bool {
        self.first_mismatch.is_none() && self.empty_one_side.is_empty()
    }
}

impl fmt::Display for AlignmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "src_lines={} tgt_lines={} status={}",
            self.src_lines,
            self.tgt_lines,
            if self.is_ok() { "ok" } else { "mismatch" }
        )?;
        if let Some(i) = self.first_mismatch {
            write!(f, " first_mismatch={i}")?;
        }
        if !self.empty_one_side.is_empty() {
            let idx: Vec<String> = self.empty_one_side.iter().map(|i| i.to_string()).collect();
            write!(f, " empty_one_side={}", idx.join(","))?;
        }
        Ok(())
    }
}

pub fn check_parallel<I, J, S, T>(src: I, tgt: J) -> AlignmentReport
where
    I: IntoIterator<Item = S>,
    J: IntoIterator<Item = T>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    let mut report = AlignmentReport::default();
    let mut src = src.into_iter();
    let mut tgt = tgt.into_iter();
    loop {
        match (src.next(), tgt.next()) {
            (Some(s), Some(t)) => {
                let (se, te) = (s.as_ref().trim().is_empty(), t.as_ref().trim().is_empty());
                if se != te {
                    report.empty_one_side.push(report.src_lines);
                }
                report.src_lines += 1;
                report.tgt_lines += 1;
            }
            (Some(_), None) => {
                report.first_mismatch.get_or_insert(report.src_lines);
                report.src_lines += 1;
            }
            (None, Some(_)) => {
                report.first_mismatch.get_or_insert(report.tgt_lines);
                report.tgt_lines += 1;
            }
            (None, None) => break,
        }
    }
    report
}

/// Drops sentence pairs where either side contains a numeric character.
/// Returns the kept pairs and the 0-based indices that were removed.
pub fn filter_digit_pairs<S, T>(src: &[S], tgt: &[T]) -> (Vec<(String, String)>, Vec<usize>)
where
    S: AsRef<str>,
    T: AsRef<str>,
{
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, (s, t)) in src.iter().zip(tgt).enumerate() {
        if has_digits(s.as_ref()) || has_digits(t.as_ref()) {
            dropped.push(i);
        } else {
            kept.push((s.as_ref().to_string(), t.as_ref().to_string()));
        }
    }
    (kept, dropped)
}
