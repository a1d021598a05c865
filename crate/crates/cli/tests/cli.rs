use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

fn run(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_subchar"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    // Usage errors exit before reading stdin; a broken pipe is fine then.
    let _ = child.stdin.take().unwrap().write_all(stdin.as_bytes());
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str], stdin: &str) -> String {
    let o = run(args, stdin);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn encode_with_table_file() {
    let dir = TempDir::new().unwrap();
    let table = write(dir.path(), "t.tsv", "毫\typt\n无\tfq\n理\tgj\n由\tmh\n");
    assert_eq!(ok(&["encode", "--table", &table], "毫无理由\n"), "ypt fq gj mh\n");
}

#[test]
fn table_one_round_trip_with_builtin_table() {
    let enc = ok(&["encode"], "这种说法毫无根据。\n");
    assert_eq!(enc, "p tkh yu if ypt fq sve rndg .\n");
    assert_eq!(ok(&["decode"], &enc), "这种说法毫无根据.\n");
}

#[test]
fn pipe_composability() {
    let dir = TempDir::new().unwrap();
    let input = "这种说法毫无根据。\n毫无理由！\nABC 海洋\n\n照\n";
    let encoded = ok(&["encode"], input);
    let corpus = write(dir.path(), "enc.txt", &encoded);
    let merges = dir.path().join("m.merges");
    ok(
        &["learn-bpe", "--merges", "10", "--input", &corpus, "--output", merges.to_str().unwrap()],
        "",
    );
    let split = ok(&["apply-bpe", "--model", merges.to_str().unwrap()], &encoded);
    let joined = ok(&["undo-bpe"], &split);
    assert_eq!(joined, encoded);
    let decoded = ok(&["decode"], &joined);
    assert_eq!(decoded, "这种说法毫无根据.\n毫无理由!\nABC海洋\n\n照\n");
}

#[test]
fn figure_one_through_preprocess_and_postprocess() {
    let dir = TempDir::new().unwrap();
    let model = write(dir.path(), "m", "#version: 0.2\np t\nf q\ng j\nm h\n");
    let pre = ok(&["preprocess", "--side", "zh", "--model", &model], "毫无理由\n");
    assert_eq!(pre, "y@@ pt fq gj mh\n");
    assert_eq!(ok(&["postprocess", "--side", "zh"], &pre), "毫无理由\n");
}

#[test]
fn preprocess_learns_and_saves_a_model() {
    let dir = TempDir::new().unwrap();
    let saved = dir.path().join("learned.merges");
    let out = ok(
        &["preprocess", "--merges", "5", "--save-model", saved.to_str().unwrap()],
        "毫无理由\n理由\n理由\n",
    );
    assert_eq!(out.lines().count(), 3);
    let text = fs::read_to_string(&saved).unwrap();
    assert!(text.starts_with("#version: 0.2\n"));
    assert_eq!(ok(&["postprocess"], &out), "毫无理由\n理由\n理由\n");
}

#[test]
fn english_side_tokenizes_and_lowercases() {
    assert_eq!(
        ok(&["preprocess", "--side", "en", "--lowercase"], "Hello, World!\n"),
        "hello , world !\n"
    );
    assert_eq!(ok(&["postprocess", "--side", "en"], "wor@@ ld\n"), "world\n");
}

#[test]
fn bleu_identity() {
    let dir = TempDir::new().unwrap();
    let r = write(dir.path(), "r.txt", "the cat sat on the mat\n");
    let out = ok(&["bleu", "--ref", &r], "the cat sat on the mat\n");
    assert!(out.starts_with("BLEU = 100.00"), "{out}");
}

#[test]
fn bleu_line_mismatch_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let r = write(dir.path(), "r.txt", "a b\nc d\n");
    let o = run(&["bleu", "--ref", &r], "a b\n");
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn stats_text_and_json() {
    let text = ok(&["stats"], "a b c\nd e\n");
    assert_eq!(text, "sentences=2 tokens=5 avg_tokens_per_sentence=2.5000 distinct_tokens=5\n");
    let json: serde_json::Value = serde_json::from_str(&ok(&["stats", "--json"], "a b c\nd e\n")).unwrap();
    assert_eq!(json["sentences"], 2);
    assert_eq!(json["tokens"], 5);
    assert_eq!(json["avg_tokens_per_sentence"], 2.5);
}

#[test]
fn sweep_writes_corpora_and_monotone_table() {
    let dir = TempDir::new().unwrap();
    let mut corpus = String::new();
    for i in 0..200 {
        corpus.push_str(["毫无理由。", "这种说法毫无根据。", "海洋和陆地", "江河湖海"][i % 4]);
        corpus.push('\n');
    }
    let input = write(dir.path(), "zh.txt", &corpus);
    let out_dir = dir.path().join("sweep");
    let table = ok(
        &[
            "sweep",
            "--merges",
            "0,500,1000,2000,3000,4000",
            "--input",
            &input,
            "--output",
            out_dir.to_str().unwrap(),
        ],
        "",
    );
    let rows: Vec<Vec<String>> = table
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    let avgs: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(avgs.windows(2).all(|w| w[1] <= w[0]), "{avgs:?}");
    for k in [0, 500, 1000, 2000, 3000, 4000] {
        let c = fs::read_to_string(out_dir.join(format!("corpus.{k}.txt"))).unwrap();
        assert_eq!(c.lines().count(), 200);
        assert!(out_dir.join(format!("bpe.{k}.merges")).exists());
    }
}

#[test]
fn check_parallel_and_digit_filter() {
    let dir = TempDir::new().unwrap();
    let s = write(dir.path(), "a.zh", "海洋\n2020年\n江河\n");
    let t = write(dir.path(), "a.en", "ocean\nyear 2020\nrivers\n");
    let prefix = dir.path().join("clean");
    let out = ok(
        &["check-parallel", &s, &t, "--filter-digits", "--output", prefix.to_str().unwrap()],
        "",
    );
    assert!(out.contains("status=ok"), "{out}");
    assert!(out.contains("kept=2 dropped=1"), "{out}");
    assert_eq!(fs::read_to_string(dir.path().join("clean.src")).unwrap(), "海洋\n江河\n");
    assert_eq!(fs::read_to_string(dir.path().join("clean.tgt")).unwrap(), "ocean\nrivers\n");

    let short = write(dir.path(), "b.en", "ocean\n");
    let o = run(&["check-parallel", &s, &short], "");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        vec!["encode", "--bogus"],
        vec!["learn-bpe"],
        vec!["frobnicate"],
        vec!["apply-bpe", "--model"],
        vec!["check-parallel", "a", "b", "--filter-digits"],
    ] {
        let o = run(&args, "");
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert_eq!(stderr(&o).lines().count(), 1, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn data_errors_exit_2_with_line_numbers() {
    let o = run(&["encode", "--table", "/nonexistent/table.tsv"], "x\n");
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["decode"], "ypt\nypt zzz\n");
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error: line 2:"), "{err}");
    assert_eq!(err.lines().count(), 1);

    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.merges", "#version: 0.2\na b\nonly\n");
    let o = run(&["apply-bpe", "--model", &bad], "ab\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = run(&["learn-bpe", "--merges", "3"], "ok\nfine a@@b\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn crlf_flag_strips_carriage_returns() {
    assert_eq!(ok(&["encode", "--crlf"], "毫无理由\r\n"), "ypt fq gj mh\n");
    assert_eq!(ok(&["undo-bpe", "--crlf"], "y@@ pt\r\n"), "ypt\n");
}

#[test]
fn train_and_translate_toy() {
    let dir = TempDir::new().unwrap();
    let mut lines = String::new();
    for i in 0..30 {
        lines.push_str(["c a b", "a b", "b c", "a c b"][i % 4]);
        lines.push('\n');
    }
    let src = write(dir.path(), "s.txt", &lines);
    let tgt = write(dir.path(), "t.txt", &lines);
    let cfg = write(dir.path(), "train.cfg", "# toy\nbatch = 4\nlr = 1.0\n");
    let ckpt = dir.path().join("toy.json");
    let o = run(
        &[
            "train-toy", "--src", &src, "--tgt", &tgt, "--output", ckpt.to_str().unwrap(), "--dims", "8,16",
            "--epochs", "200", "--seed", "3", "--config", &cfg,
        ],
        "",
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stderr(&o);
    assert!(log.contains("epoch 1 loss"), "{log}");
    assert!(log.contains("epoch 200 loss"), "{log}");

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ckpt).unwrap()).unwrap();
    assert_eq!(json["format"], "subchar-nmt");
    assert_eq!(json["version"], 1);
    assert_eq!(json["dims"]["emb"], 8);

    let out = ok(&["translate-toy", "--model", ckpt.to_str().unwrap()], "c a b\n\n");
    assert_eq!(out, "c a b\n\n");

    let o = run(&["train-toy", "--src", &src, "--tgt", &tgt, "--output", "x", "--dims", "8"], "");
    assert_eq!(o.status.code(), Some(2));
    let bad_cfg = write(dir.path(), "bad.cfg", "epochs=3\nwarp=9\n");
    let o = run(
        &["train-toy", "--src", &src, "--tgt", &tgt, "--output", "x", "--config", &bad_cfg],
        "",
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}
