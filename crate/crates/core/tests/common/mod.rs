//! Independent oracles and generators shared by the property and acceptance
//! tests. Nothing here calls into the library's learning, splitting or
//! scoring code.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;

pub const EOW: &str = "</w>";

/// Learner that recounts every pair from scratch after each merge.
pub fn naive_learn(lines: &[String], num_merges: usize) -> Vec<(String, String)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for l in lines {
        for t in l.split_whitespace() {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = counts
        .into_iter()
        .map(|(t, c)| {
            let mut syms: Vec<String> = t.chars().map(String::from).collect();
            syms.push(EOW.to_string());
            (syms, c)
        })
        .collect();
    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut pairs: HashMap<(String, String), u64> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].clone(), w[1].clone())).or_default() += c;
            }
        }
        let mut best: Option<((String, String), u64)> = None;
        for (p, c) in pairs {
            let better = match &best {
                None => true,
                Some((bp, bc)) => c > *bc || (c == *bc && p < *bp),
            };
            if better {
                best = Some((p, c));
            }
        }
        match best {
            Some((p, c)) if c >= 2 => {
                for (syms, _) in words.iter_mut() {
                    *syms = replace_pair(syms, &p.0, &p.1);
                }
                merges.push(p);
            }
            _ => break,
        }
    }
    merges
}

fn replace_pair(syms: &[String], l: &str, r: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
            out.push(format!("{l}{r}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

/// Splitting by replaying every merge in order over the whole symbol list.
pub fn naive_apply(merges: &[(String, String)], line: &str) -> String {
    let mut pieces = Vec::new();
    for t in line.split_whitespace() {
        let mut syms: Vec<String> = t.chars().map(String::from).collect();
        syms.push(EOW.to_string());
        for (l, r) in merges {
            syms = replace_pair(&syms, l, r);
        }
        let last = syms.pop().unwrap();
        let last = last.strip_suffix(EOW).unwrap().to_string();
        if !last.is_empty() {
            syms.push(last);
        }
        let n = syms.len();
        for (i, s) in syms.into_iter().enumerate() {
            pieces.push(if i + 1 < n { format!("{s}@@") } else { s });
        }
    }
    pieces.join(" ")
}

/// BLEU by direct enumeration: every hypothesis n-gram is compared with
/// every reference n-gram, and clipping is done by marking used positions.
pub fn brute_bleu(hyp: &[String], reference: &[String]) -> (f64, [(u64, u64); 4]) {
    let mut stats = [(0u64, 0u64); 4];
    let (mut hl, mut rl) = (0usize, 0usize);
    for (h, r) in hyp.iter().zip(reference) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let mut used = vec![false; r.len().saturating_sub(n - 1)];
            for i in 0..=h.len() - n {
                stats[n - 1].1 += 1;
                for j in 0..used.len() {
                    if !used[j] && h[i..i + n] == r[j..j + n] {
                        used[j] = true;
                        stats[n - 1].0 += 1;
                        break;
                    }
                }
            }
        }
    }
    if stats.iter().any(|&(m, _)| m == 0) {
        return (0.0, stats);
    }
    let bp = if hl > rl { 1.0 } else { (1.0 - rl as f64 / hl as f64).exp() };
    let mut logsum = 0.0;
    for &(m, t) in &stats {
        logsum += (m as f64 / t as f64).ln();
    }
    (100.0 * bp * (logsum / 4.0).exp(), stats)
}

/// Random line of `1..=max_tokens` tokens drawn from `vocab`.
pub fn random_line<R: Rng>(rng: &mut R, vocab: &[String], max_tokens: usize) -> String {
    let n = rng.random_range(1..=max_tokens);
    (0..n)
        .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random lowercase words over a small alphabet, so pairs repeat often.
pub fn random_words<R: Rng>(rng: &mut R, count: usize, alphabet: &[char], max_len: usize) -> Vec<String> {
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        })
        .collect()
}
