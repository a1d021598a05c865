//! Sub-character preprocessing for Chinese–English machine translation.
//!
//! Chinese text is mapped character by character to Wubi letter codes
//! ([`wubi`]), split further with byte-pair encoding ([`bpe`]) and shuttled
//! through corpus-level helpers ([`pipeline`]). [`bleu`] scores output with
//! the Moses multi-bleu formula and [`nmt`] holds a small attention
//! encoder-decoder used to check that the tokenization trains end to end.

pub mod bleu;
pub mod bpe;
pub mod nmt;
pub mod pipeline;
pub mod wubi;

pub use bleu::{corpus_bleu, BleuReport};
pub use bpe::{apply_bpe, learn_bpe, undo_bpe, vocabulary, BpeModel};
pub use pipeline::{corpus_stats, CorpusStats};
pub use wubi::{CodecToken, TokenKind, WubiTable};
