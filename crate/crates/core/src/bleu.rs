//! Corpus BLEU in the Moses `multi-bleu.perl` convention: one reference per
//! hypothesis, clipped n-gram counts pooled over the corpus for n = 1..4,
//! no smoothing (any zero precision gives a score of 0).

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BleuError {
    #[error("hypothesis has {hyp} lines but reference has {reference}")]
    LineCountMismatch { hyp: usize, reference: usize },
    #[error("empty hypothesis corpus")]
    EmptyHypothesis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Clipped matches per order.
    pub matches: [u64; MAX_ORDER],
    /// Hypothesis n-gram totals per order.
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub score: f64,
    pub hyp_length: u64,
    pub ref_length: u64,
}

impl BleuReport {
    /// Modified precision for order `n` (1-based). `0/0` reads as zero.
    pub fn precision(&self, n: usize) -> Ratio<u64> {
        let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
        if t == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(m, t)
        }
    }

    fn precision_f64(&self, n: usize) -> f64 {
        let p = self.precision(n);
        *p.numer() as f64 / *p.denom() as f64
    }

    pub fn ratio(&self) -> f64 {
        self.hyp_length as f64 / self.ref_length as f64
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.score,
            100.0 * self.precision_f64(1),
            100.0 * self.precision_f64(2),
            100.0 * self.precision_f64(3),
            100.0 * self.precision_f64(4),
            self.brevity_penalty,
            self.ratio(),
            self.hyp_length,
            self.ref_length
        )
    }
}

/// Running clipped counts; lines can be fed one at a time and shards merged.
#[derive(Debug, Clone, Default)]
pub struct BleuStats {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_length: u64,
    ref_length: u64,
    lines: usize,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

impl BleuStats {
    pub fn add(&mut self, hyp: &str, reference: &str) {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        self.hyp_length += h.len() as u64;
        self.ref_length += r.len() as u64;
        self.lines += 1;
        for n in 1..=MAX_ORDER {
            if h.len() < n {
                continue;
            }
            self.totals[n - 1] += (h.len() + 1 - n) as u64;
            let ref_counts = ngram_counts(&r, n);
            for (gram, c) in ngram_counts(&h, n) {
                let available = ref_counts.get(gram).copied().unwrap_or(0);
                self.matches[n - 1] += c.min(available);
            }
        }
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_length += other.hyp_length;
        self.ref_length += other.ref_length;
        self.lines += other.lines;
    }

    pub fn report(&self) -> Result<BleuReport, BleuError> {
        if self.lines == 0 || self.hyp_length == 0 {
            return Err(BleuError::EmptyHypothesis);
        }
        let (hyp, reference) = (self.hyp_length as f64, self.ref_length as f64);
        let brevity_penalty = if self.hyp_length > self.ref_length {
            1.0
        } else {
            (1.0 - reference / hyp).exp()
        };
        let score = if self.matches.contains(&0) {
            0.0
        } else {
            let log_mean = (0..MAX_ORDER)
                .map(|i| (self.matches[i] as f64 / self.totals[i] as f64).ln())
                .sum::<f64>()
                / MAX_ORDER as f64;
            100.0 * brevity_penalty * log_mean.exp()
        };
        Ok(BleuReport {
            matches: self.matches,
            totals: self.totals,
            brevity_penalty,
            score,
            hyp_length: self.hyp_length,
            ref_length: self.ref_length,
        })
    }
}

pub fn corpus_bleu<H, R>(hypotheses: &[H], references: &[R]) -> Result<BleuReport, BleuError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if hypotheses.len() != references.len() {
        return Err(BleuError::LineCountMismatch {
            hyp: hypotheses.len(),
            reference: references.len(),
        });
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(h.as_ref(), r.as_ref());
    }
    stats.report()
}
