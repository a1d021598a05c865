mod common;

use std::collections::{HashMap, HashSet};

use ndarray::Array1;
use proptest::prelude::*;
use proptest::sample::select;

use subchar::bpe::{self, BpeModel};
use subchar::nmt::{self, softmax, Dims, NmtParams, TrainConfig, EOS, START};
use subchar::pipeline::{self, corpus_stats, PipelineConfig};
use subchar::wubi::{is_wubi_code, TokenKind};
use subchar::{corpus_bleu, WubiTable};

use common::{brute_bleu, naive_apply, naive_learn};

fn table() -> WubiTable {
    WubiTable::fixture()
}

fn codec_char() -> impl Strategy<Value = char> {
    let t = table();
    prop_oneof![
        4 => select(t.characters()),
        1 => select(t.punct_chars()),
        1 => any::<char>().prop_filter("no whitespace", |c| !c.is_whitespace()),
    ]
}

fn chinese_line() -> impl Strategy<Value = String> {
    let t = table();
    let mut alphabet = t.characters();
    alphabet.extend(t.punct_chars());
    prop::collection::vec(select(alphabet), 1..30).prop_map(|v| v.into_iter().collect())
}

/// Words over a small alphabet; `@` and `<`, `/`, `w`, `>` stress the markers.
fn word() -> impl Strategy<Value = String> {
    "[abcw@<>/]{1,7}".prop_filter("no continuation marker", |w| !w.contains("@@"))
}

fn token_lines(max_lines: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(word(), 1..8).prop_map(|w| w.join(" ")), 1..max_lines)
}

fn small_vocab_corpus() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    let line = || prop::collection::vec(select(vec!["a", "b", "c", "d", "e"]), 1..=6).prop_map(|v| v.join(" "));
    (1usize..=20).prop_flat_map(move |n| {
        (
            prop::collection::vec(line(), n),
            prop::collection::vec(line(), n),
        )
    })
}

proptest! {
    // ---- codec ----

    #[test]
    fn codec_round_trip(s in prop::collection::vec(codec_char(), 0..40).prop_map(|v| v.into_iter().collect::<String>())) {
        let t = table();
        let tokens = t.encode_sentence(&s);
        prop_assert_eq!(t.decode_sentence(&tokens).unwrap(), t.normalize_punct(&s));
        prop_assert_eq!(t.decode_line(&t.encode_line(&s)).unwrap(), t.normalize_punct(&s));
    }

    #[test]
    fn codes_use_the_wubi_alphabet(s in chinese_line()) {
        let t = table();
        for tok in t.encode_sentence(&s) {
            if tok.kind == TokenKind::WubiCode {
                prop_assert!(is_wubi_code(&tok.text), "{}", tok.text);
                let letters = tok.text.trim_end_matches(|c: char| c.is_ascii_digit());
                prop_assert!((1..=5).contains(&letters.len()));
                prop_assert!(letters.chars().all(|c| ('a'..='y').contains(&c)));
            }
        }
    }

    #[test]
    fn passthrough_never_parses_as_code(c in any::<char>().prop_filter("not whitespace", |c| !c.is_whitespace())) {
        let t = table();
        let tok = t.encode_char(c);
        if tok.kind == TokenKind::Passthrough {
            prop_assert!(!is_wubi_code(&tok.text));
            prop_assert_eq!(t.parse_token(&tok.text).unwrap().kind, TokenKind::Passthrough);
        }
    }

    // ---- bpe ----

    #[test]
    fn bpe_inversion(corpus in token_lines(12), line in prop::collection::vec(word(), 1..10), k in 0usize..40) {
        let model = bpe::learn_bpe(&corpus, k).unwrap();
        let line = line.join(" ");
        let split = model.apply_line(&line).unwrap();
        prop_assert_eq!(bpe::undo_bpe(&split), line.clone());
        prop_assert_eq!(split.clone(), naive_apply(model.merges(), &line));
        // Reassembly is idempotent.
        prop_assert_eq!(model.apply_line(&bpe::undo_bpe(&split)).unwrap(), split);
    }

    #[test]
    fn bpe_matches_recount_oracle(corpus in token_lines(20), k in 0usize..=20) {
        let distinct: HashSet<&str> = corpus.iter().flat_map(|l| l.split_whitespace()).collect();
        prop_assume!(distinct.len() <= 50);
        let model = bpe::learn_bpe(&corpus, k).unwrap();
        let oracle = naive_learn(&corpus, k);
        prop_assert_eq!(model.merges(), oracle.as_slice());
    }

    #[test]
    fn bpe_is_deterministic_and_prefix_closed(corpus in token_lines(12), k in 0usize..30) {
        let a = bpe::learn_bpe(&corpus, k).unwrap();
        let b = bpe::learn_bpe(&corpus, k).unwrap();
        prop_assert_eq!(&a, &b);
        let shorter = bpe::learn_bpe(&corpus, k / 2).unwrap();
        prop_assert_eq!(shorter, a.truncated(k / 2));
    }

    #[test]
    fn internal_symbols_grow_by_at_most_one_per_merge(corpus in token_lines(12), k in 0usize..30) {
        let counts = bpe::count_tokens(&corpus).unwrap();
        let model = bpe::learn_from_counts(&counts, k);
        let base = bpe::internal_symbols(&BpeModel::default(), &counts).len();
        for j in 0..=model.len() {
            let n = bpe::internal_symbols(&model.truncated(j), &counts).len();
            prop_assert!(n <= base + j);
        }
    }

    #[test]
    fn merges_never_lengthen_output(corpus in token_lines(12), k in 1usize..30) {
        let model = bpe::learn_bpe(&corpus, k).unwrap();
        let mut prev = usize::MAX;
        for j in 0..=model.len() {
            let tokens = corpus_stats(corpus.iter().map(|l| model.truncated(j).apply_line(l).unwrap())).tokens as usize;
            prop_assert!(tokens <= prev);
            prev = tokens;
        }
    }

    #[test]
    fn merge_file_round_trip(corpus in token_lines(12), k in 0usize..30) {
        let model = bpe::learn_bpe(&corpus, k).unwrap();
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        prop_assert_eq!(BpeModel::read(buf.as_slice()).unwrap(), model);
    }

    // ---- pipeline ----

    #[test]
    fn full_path_round_trip(lines in prop::collection::vec(chinese_line(), 1..12), merges in select(vec![0usize, 500, 2000])) {
        let t = table();
        let config = PipelineConfig { bpe_merges: merges, ..PipelineConfig::default() };
        let (pre, _) = pipeline::preprocess_zh(&config, &t, &lines, None).unwrap();
        prop_assert_eq!(pre.len(), lines.len());
        let post = pipeline::postprocess_zh(&t, &pre).unwrap();
        let normalized: Vec<String> = lines.iter().map(|l| t.normalize_punct(l)).collect();
        prop_assert_eq!(post, normalized);
    }

    #[test]
    fn one_token_per_character(lines in prop::collection::vec(chinese_line(), 1..12)) {
        let t = table();
        let (pre, _) = pipeline::preprocess_zh(&PipelineConfig::default(), &t, &lines, None).unwrap();
        let chars: usize = lines.iter().map(|l| l.chars().count()).sum();
        prop_assert_eq!(corpus_stats(&pre).tokens as usize, chars);
    }

    #[test]
    fn sub_characters_are_at_least_as_long_as_words(
        words in prop::collection::vec(prop::collection::vec(select(table().characters()), 1..4), 1..10)
    ) {
        let t = table();
        let segmented = words.iter().map(|w| w.iter().collect::<String>()).collect::<Vec<_>>().join(" ");
        let encoded = t.encode_line(&segmented);
        prop_assert!(corpus_stats([encoded]).tokens >= corpus_stats([segmented]).tokens);
    }

    // ---- bleu ----

    #[test]
    fn bleu_matches_brute_force((hyp, reference) in small_vocab_corpus()) {
        let r = corpus_bleu(&hyp, &reference).unwrap();
        let (score, stats) = brute_bleu(&hyp, &reference);
        let counts: Vec<(u64, u64)> = r.matches.iter().copied().zip(r.totals).collect();
        prop_assert_eq!(counts, stats.to_vec());
        prop_assert!((r.score - score).abs() < 1e-9);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&r.score));
    }

    #[test]
    fn bleu_ignores_order_and_names((hyp, reference) in small_vocab_corpus(), rot in 0usize..20) {
        let r = corpus_bleu(&hyp, &reference).unwrap();
        let n = hyp.len();
        let rotate = |v: &[String]| -> Vec<String> { (0..n).map(|i| v[(i + rot) % n].clone()).collect() };
        prop_assert_eq!(corpus_bleu(&rotate(&hyp), &rotate(&reference)).unwrap(), r.clone());
        let rename = |v: &[String]| -> Vec<String> {
            v.iter().map(|l| l.split(' ').map(|t| format!("w{t}")).collect::<Vec<_>>().join(" ")).collect()
        };
        prop_assert_eq!(corpus_bleu(&rename(&hyp), &rename(&reference)).unwrap(), r);
    }

    #[test]
    fn bleu_is_100_only_for_identical((hyp, reference) in small_vocab_corpus()) {
        // Without a single 4-gram the fourth precision is 0/0 and the
        // convention scores 0, so the identity direction needs one long line.
        let has_four_gram = hyp.iter().any(|l| l.split(' ').count() >= 4);
        let same = corpus_bleu(&hyp, &hyp).unwrap().score;
        if has_four_gram {
            prop_assert!((same - 100.0).abs() < 1e-9);
        } else {
            prop_assert_eq!(same, 0.0);
        }
        let r = corpus_bleu(&hyp, &reference).unwrap();
        if hyp != reference {
            prop_assert!(r.score < 100.0 - 1e-9);
        }
    }

    // ---- toy nmt ----

    #[test]
    fn attention_is_a_convex_combination(
        seed in any::<u64>(),
        src in prop::collection::vec(0usize..5, 1..8),
        s in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let dims = Dims { src_vocab: 5, tgt_vocab: 4, emb: 2, hidden: 3 };
        let p = NmtParams::random(dims, seed, 1.0).unwrap();
        let enc = p.encode(&src).unwrap();
        prop_assert_eq!(enc.len(), src.len());
        let att = p.attend(&enc, &Array1::from(s)).unwrap();
        prop_assert!((att.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(att.weights.clone(), softmax(&att.scores));
        for k in 0..att.context.len() {
            let lo = enc.states.iter().map(|h| h[k]).fold(f64::INFINITY, f64::min);
            let hi = enc.states.iter().map(|h| h[k]).fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-15 * lo.abs().max(hi.abs());
            prop_assert!(att.context[k] >= lo - slack && att.context[k] <= hi + slack);
        }
    }

    #[test]
    fn softmax_shift_invariance(scores in prop::collection::vec(-20.0f64..20.0, 1..10), k in -50.0f64..50.0) {
        let shifted: Vec<f64> = scores.iter().map(|a| a + k).collect();
        for (a, b) in softmax(&scores).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_nonnegative(seed in any::<u64>(), src in prop::collection::vec(0usize..4, 1..5), mid in prop::collection::vec(0usize..4, 0..4)) {
        let dims = Dims { src_vocab: 4, tgt_vocab: 4, emb: 2, hidden: 2 };
        let p = NmtParams::random(dims, seed, 1.0).unwrap();
        let mut tgt = vec![START];
        tgt.extend(mid);
        tgt.push(EOS);
        prop_assert!(p.sequence_loss(&src, &tgt).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_fidelity(seed in any::<u64>(), src in prop::collection::vec(0usize..5, 1..=4), mid in prop::collection::vec(0usize..5, 1..=3)) {
        let dims = Dims { src_vocab: 5, tgt_vocab: 5, emb: 3, hidden: 3 };
        let p = NmtParams::random(dims, seed, 0.5).unwrap();
        let mut tgt = vec![START];
        tgt.extend(mid);
        tgt.push(EOS);
        let report = nmt::grad_check(&p, &src, &tgt, 1e-5, 1e-4).unwrap();
        prop_assert!(report.passed(), "{:?}", report.worst);
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let dims = Dims { src_vocab: 5, tgt_vocab: 5, emb: 2, hidden: 3 };
        let pairs: Vec<_> = (0..6).map(|i| (vec![2 + i % 3], vec![START, 2 + i % 3, EOS])).collect();
        let config = TrainConfig { epochs: 2, batch: 4, seed, ..TrainConfig::default() };
        let init = NmtParams::init(dims, seed).unwrap();
        prop_assert_eq!(nmt::train(init.clone(), &pairs, &config).unwrap(), nmt::train(init, &pairs, &config).unwrap());
    }
}

#[test]
fn vocabulary_can_shrink_below_the_base() {
    // Merging can retire symbols: "ab" twice uses {a, b, </w>} before and
    // {a, b</w>} after the single (b, </w>) merge.
    let counts: HashMap<String, u64> = [("ab".to_string(), 2)].into();
    let before = bpe::internal_symbols(&BpeModel::default(), &counts).len();
    let model = bpe::learn_from_counts(&counts, 1);
    let after = bpe::internal_symbols(&model, &counts).len();
    assert_eq!((before, after), (3, 2));
}
