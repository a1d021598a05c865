//! Reversible Chinese ↔ Wubi code conversion.
//!
//! A [`WubiTable`] maps single characters to letter codes over the 25-letter
//! alphabet `a`–`y`. Characters whose codes collide in the source table get a
//! decimal suffix (`2`, `3`, …) in input order, so the final mapping is a
//! bijection. Chinese punctuation is normalized to ASCII through a one-way
//! punctuation map, and anything else is carried through behind the escape
//! prefix [`ESCAPE`].
//!
//! Table file format, with `<TAB>` standing for a tab character:
//!
//! ```text
//! # comment
//! 照<TAB>jvko
//! 毫<TAB>ypt
//! #! punctuation section starts here
//! 。<TAB>.
//! ```

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use thiserror::Error;

/// Prefix marking a passthrough token. Lies outside `[a-y0-9]`.
pub const ESCAPE: char = '⟂';

/// Longest letter prefix a Wubi code may have.
pub const MAX_CODE_LETTERS: usize = 5;

const FIXTURE: &str = include_str!("../data/wubi_fixture.tsv");

#[derive(Debug, Error)]
pub enum TableError {
    #[error("line {line}: expected `char<TAB>code`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: {field:?} is not a single character")]
    NotSingleChar { line: usize, field: String },
    #[error("line {line}: invalid code {code:?} (need 1-5 letters a-y)")]
    InvalidCode { line: usize, code: String },
    #[error("line {line}: invalid punctuation replacement {text:?} (need one ASCII punctuation mark)")]
    InvalidPunct { line: usize, text: String },
    #[error("line {line}: duplicate character {ch:?}")]
    DuplicateChar { line: usize, ch: char },
    #[error("reading table: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unknown Wubi code {0:?}")]
    UnknownCode(String),
    #[error("unrecognized token {0:?}")]
    InvalidToken(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    WubiCode,
    Passthrough,
    Punct,
}

/// One encoded character.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodecToken {
    pub kind: TokenKind,
    pub text: String,
}

impl CodecToken {
    fn new(kind: TokenKind, text: impl Into<String>) -> Self {
        CodecToken {
            kind,
            text: text.into(),
        }
    }
}

impl fmt::Display for CodecToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Bidirectional character ↔ code table plus the punctuation map.
///
/// Immutable once loaded; every codec operation takes `&self`.
#[derive(Debug, Clone, Default)]
pub struct WubiTable {
    codes: HashMap<char, String>,
    chars: HashMap<String, char>,
    punct: HashMap<char, char>,
    // ASCII replacements, i.e. the range of `punct`.
    punct_targets: Vec<char>,
}

/// True for `[a-y]{1,5}[0-9]*`.
pub fn is_wubi_code(s: &str) -> bool {
    let letters = s.bytes().take_while(|b| (b'a'..=b'y').contains(b)).count();
    (1..=MAX_CODE_LETTERS).contains(&letters) && s.bytes().skip(letters).all(|b| b.is_ascii_digit())
}

fn single_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

impl WubiTable {
    /// Parses a table stream. See the module docs for the format.
    pub fn load<R: BufRead>(source: R) -> Result<Self, TableError> {
        let mut table = WubiTable::default();
        let mut in_punct = false;
        // Number of characters seen so far per bare code.
        let mut seen: HashMap<String, usize> = HashMap::new();

        for (idx, line) in source.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.starts_with("#!") {
                in_punct = true;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(TableError::Malformed {
                    line: line_no,
                    text: line.to_string(),
                });
            }
            let ch = single_char(fields[0]).ok_or_else(|| TableError::NotSingleChar {
                line: line_no,
                field: fields[0].to_string(),
            })?;
            if table.codes.contains_key(&ch) || table.punct.contains_key(&ch) {
                return Err(TableError::DuplicateChar { line: line_no, ch });
            }

            if in_punct {
                let target = single_char(fields[1])
                    .filter(|c| c.is_ascii_punctuation())
                    .ok_or_else(|| TableError::InvalidPunct {
                        line: line_no,
                        text: fields[1].to_string(),
                    })?;
                table.punct.insert(ch, target);
                if !table.punct_targets.contains(&target) {
                    table.punct_targets.push(target);
                }
                continue;
            }

            let code = fields[1];
            let letters_ok = code.bytes().all(|b| (b'a'..=b'y').contains(&b));
            if !letters_ok || code.is_empty() || code.len() > MAX_CODE_LETTERS {
                return Err(TableError::InvalidCode {
                    line: line_no,
                    code: code.to_string(),
                });
            }
            let n = seen.entry(code.to_string()).or_insert(0);
            *n += 1;
            let final_code = if *n == 1 {
                code.to_string()
            } else {
                format!("{code}{n}")
            };
            table.chars.insert(final_code.clone(), ch);
            table.codes.insert(ch, final_code);
        }
        Ok(table)
    }

    pub fn from_source(source: &str) -> Result<Self, TableError> {
        Self::load(source.as_bytes())
    }

    /// The bundled fixture table (about 170 common characters plus punctuation).
    pub fn fixture() -> Self {
        Self::from_source(FIXTURE).expect("bundled fixture table is valid")
    }

    /// Raw text of the bundled fixture, in table file format.
    pub fn fixture_source() -> &'static str {
        FIXTURE
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, c: char) -> Option<&str> {
        self.codes.get(&c).map(String::as_str)
    }

    pub fn char_for(&self, code: &str) -> Option<char> {
        self.chars.get(code).copied()
    }

    pub fn punct(&self, c: char) -> Option<char> {
        self.punct.get(&c).copied()
    }

    /// Table characters, sorted by code point.
    pub fn characters(&self) -> Vec<char> {
        let mut v: Vec<char> = self.codes.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Punctuation map keys, sorted by code point.
    pub fn punct_chars(&self) -> Vec<char> {
        let mut v: Vec<char> = self.punct.keys().copied().collect();
        v.sort_unstable();
        v
    }

    fn is_punct_target(&self, c: char) -> bool {
        self.punct_targets.contains(&c)
    }

    /// Replaces every punctuation-map key in `s` with its ASCII value.
    pub fn normalize_punct(&self, s: &str) -> String {
        s.chars().map(|c| self.punct(c).unwrap_or(c)).collect()
    }

    /// Encodes one character. Total: unknown characters become passthrough tokens.
    ///
    /// ASCII marks that are themselves punctuation-map targets encode as punct
    /// tokens, so normalized and unnormalized text produce the same stream.
    pub fn encode_char(&self, c: char) -> CodecToken {
        if let Some(code) = self.codes.get(&c) {
            CodecToken::new(TokenKind::WubiCode, code.clone())
        } else if let Some(p) = self.punct(c) {
            CodecToken::new(TokenKind::Punct, p.to_string())
        } else if self.is_punct_target(c) {
            CodecToken::new(TokenKind::Punct, c.to_string())
        } else {
            let mut text = String::with_capacity(ESCAPE.len_utf8() + c.len_utf8());
            text.push(ESCAPE);
            text.push(c);
            CodecToken::new(TokenKind::Passthrough, text)
        }
    }

    pub fn decode_token(&self, t: &CodecToken) -> Result<String, CodecError> {
        match t.kind {
            TokenKind::WubiCode => self
                .char_for(&t.text)
                .map(String::from)
                .ok_or_else(|| CodecError::UnknownCode(t.text.clone())),
            TokenKind::Punct => Ok(t.text.clone()),
            TokenKind::Passthrough => t
                .text
                .strip_prefix(ESCAPE)
                .filter(|rest| single_char(rest).is_some())
                .map(String::from)
                .ok_or_else(|| CodecError::InvalidToken(t.text.clone())),
        }
    }

    /// One token per non-whitespace character; whitespace only separates.
    pub fn encode_sentence(&self, s: &str) -> Vec<CodecToken> {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| self.encode_char(c))
            .collect()
    }

    pub fn decode_sentence(&self, tokens: &[CodecToken]) -> Result<String, CodecError> {
        let mut out = String::new();
        for t in tokens {
            out.push_str(&self.decode_token(t)?);
        }
        Ok(out)
    }

    /// Classifies one serialized token.
    pub fn parse_token(&self, text: &str) -> Result<CodecToken, CodecError> {
        if text.starts_with(ESCAPE) {
            Ok(CodecToken::new(TokenKind::Passthrough, text))
        } else if is_wubi_code(text) {
            Ok(CodecToken::new(TokenKind::WubiCode, text))
        } else if single_char(text).is_some_and(|c| self.is_punct_target(c)) {
            Ok(CodecToken::new(TokenKind::Punct, text))
        } else {
            Err(CodecError::InvalidToken(text.to_string()))
        }
    }

    /// Encodes a sentence straight to its serialized, space-separated form.
    pub fn encode_line(&self, s: &str) -> String {
        serialize_tokens(&self.encode_sentence(s))
    }

    /// Parses and decodes a serialized token line.
    pub fn decode_line(&self, line: &str) -> Result<String, CodecError> {
        let tokens = line
            .split_whitespace()
            .map(|t| self.parse_token(t))
            .collect::<Result<Vec<_>, _>>()?;
        self.decode_sentence(&tokens)
    }
}

pub fn serialize_tokens(tokens: &[CodecToken]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.text);
    }
    out
}
