//! `subchar` command-line tool.
//!
//! Text transforms read stdin (or `--input`) and write stdout (or
//! `--output`) line by line. Exit status: 0 on success, 1 for usage errors,
//! 2 for data errors. Diagnostics are a single line on stderr.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use subchar::bpe::{self, BpeModel};
use subchar::nmt::{self, Checkpoint, Dims, NmtParams, TrainConfig, Vocab};
use subchar::pipeline::{self, StatsAccumulator};
use subchar::wubi::WubiTable;

#[derive(Parser)]
#[command(name = "subchar", version, about = "Sub-character Chinese preprocessing for MT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Io {
    /// Read from this file instead of stdin
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write to this file instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Strip a trailing carriage return from every input line
    #[arg(long)]
    crlf: bool,
}

#[derive(Args, Clone)]
struct TableArg {
    /// Wubi table (`char<TAB>code` per line); defaults to the built-in fixture
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Side {
    Zh,
    En,
}

#[derive(Subcommand)]
enum Command {
    /// Chinese text to Wubi code tokens
    Encode {
        #[command(flatten)]
        table: TableArg,
        #[command(flatten)]
        io: Io,
    },
    /// Wubi code tokens back to Chinese text
    Decode {
        #[command(flatten)]
        table: TableArg,
        #[command(flatten)]
        io: Io,
    },
    /// Learn a merge file from tokenized text
    LearnBpe {
        #[arg(long)]
        merges: usize,
        #[command(flatten)]
        io: Io,
    },
    /// Split tokens with a merge file
    ApplyBpe {
        /// Merge file
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
    },
    /// Rejoin `@@`-marked pieces
    UndoBpe {
        #[command(flatten)]
        io: Io,
    },
    /// Encode (Chinese) or tokenize (English), then optionally apply BPE
    Preprocess {
        #[arg(long, value_enum, default_value = "zh")]
        side: Side,
        #[command(flatten)]
        table: TableArg,
        /// Apply this merge file
        #[arg(long, conflicts_with = "merges")]
        model: Option<PathBuf>,
        /// Learn this many merges from the input first
        #[arg(long)]
        merges: Option<usize>,
        /// Write the learned merge file here
        #[arg(long, requires = "merges")]
        save_model: Option<PathBuf>,
        /// Lowercase English tokens
        #[arg(long)]
        lowercase: bool,
        #[command(flatten)]
        io: Io,
    },
    /// Undo BPE and, for Chinese, decode Wubi codes
    Postprocess {
        #[arg(long, value_enum, default_value = "zh")]
        side: Side,
        #[command(flatten)]
        table: TableArg,
        #[command(flatten)]
        io: Io,
    },
    /// Sentence, token and vocabulary counts
    Stats {
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        io: Io,
    },
    /// Verify that two files are line-aligned
    CheckParallel {
        src: PathBuf,
        tgt: PathBuf,
        /// Drop pairs containing digits; needs --output PREFIX
        #[arg(long, requires = "output")]
        filter_digits: bool,
        /// Prefix for PREFIX.src / PREFIX.tgt when filtering
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        crlf: bool,
    },
    /// Corpus BLEU of the input against --ref
    Bleu {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[command(flatten)]
        io: Io,
    },
    /// Train the toy encoder-decoder on tokenized parallel files
    TrainToy {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Checkpoint to write
        #[arg(long)]
        output: PathBuf,
        /// Embedding and hidden sizes, `EMB,HIDDEN`
        #[arg(long, default_value = "16,32")]
        dims: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` training config, applied before the flags above
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        crlf: bool,
    },
    /// Greedy translation with a toy checkpoint
    TranslateToy {
        /// Checkpoint written by train-toy
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_len: usize,
        #[command(flatten)]
        io: Io,
    },
    /// Preprocess at several merge counts and tabulate vocabulary sizes
    Sweep {
        /// Comma-separated merge counts
        #[arg(long, value_delimiter = ',', required = true)]
        merges: Vec<usize>,
        #[arg(long, value_enum, default_value = "zh")]
        side: Side,
        #[command(flatten)]
        table: TableArg,
        #[arg(long)]
        lowercase: bool,
        /// Corpus to sweep
        #[arg(long)]
        input: PathBuf,
        /// Directory for the per-count corpora and merge files
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        crlf: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("usage error");
            eprintln!("{first}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn open_input(path: Option<&Path>) -> anyhow::Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(
            File::open(p).with_context(|| format!("cannot open {}", p.display()))?,
        )),
        None => Box::new(BufReader::new(io::stdin())),
    })
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Lines with 1-based numbers; invalid UTF-8 is reported with its line.
fn numbered_lines(reader: Box<dyn BufRead>, crlf: bool) -> impl Iterator<Item = anyhow::Result<(usize, String)>> {
    reader.lines().enumerate().map(move |(i, line)| {
        let mut line = line.with_context(|| format!("line {}", i + 1))?;
        if crlf && line.ends_with('\r') {
            line.pop();
        }
        Ok((i + 1, line))
    })
}

fn read_lines(path: Option<&Path>, crlf: bool) -> anyhow::Result<Vec<String>> {
    numbered_lines(open_input(path)?, crlf)
        .map(|r| r.map(|(_, l)| l))
        .collect()
}

/// Applies `f` to every line, streaming.
fn transform<F>(io: &Io, mut f: F) -> anyhow::Result<()>
where
    F: FnMut(&str) -> anyhow::Result<String>,
{
    let mut out = open_output(io.output.as_deref())?;
    for item in numbered_lines(open_input(io.input.as_deref())?, io.crlf) {
        let (n, line) = item?;
        let result = f(&line).with_context(|| format!("line {n}"))?;
        writeln!(out, "{result}")?;
    }
    out.flush()?;
    Ok(())
}

fn load_table(arg: &TableArg) -> anyhow::Result<WubiTable> {
    match &arg.table {
        None => Ok(WubiTable::fixture()),
        Some(p) => {
            let f = File::open(p).with_context(|| format!("cannot open table {}", p.display()))?;
            WubiTable::load(BufReader::new(f)).with_context(|| format!("table {}", p.display()))
        }
    }
}

fn load_merges(path: &Path) -> anyhow::Result<BpeModel> {
    let f = File::open(path).with_context(|| format!("cannot open merge file {}", path.display()))?;
    BpeModel::read(BufReader::new(f)).with_context(|| format!("merge file {}", path.display()))
}

fn save_merges(path: &Path, model: &BpeModel) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    model.write(&mut w)?;
    w.flush()?;
    Ok(())
}

/// First stage of `preprocess`: Wubi encoding or English tokenization.
fn base_tokens(side: Side, table: &WubiTable, lowercase: bool, line: &str) -> String {
    match side {
        Side::Zh => table.encode_line(line),
        Side::En => pipeline::tokenize_en(line, lowercase),
    }
}

fn parse_dims(s: &str) -> anyhow::Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [e, h] => Ok((e.parse()?, h.parse()?)),
        _ => bail!("--dims expects EMB,HIDDEN, got {s:?}"),
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Encode { table, io } => {
            let table = load_table(&table)?;
            transform(&io, |l| Ok(table.encode_line(l)))
        }
        Command::Decode { table, io } => {
            let table = load_table(&table)?;
            transform(&io, |l| Ok(table.decode_line(l)?))
        }
        Command::LearnBpe { merges, io } => {
            let lines = read_lines(io.input.as_deref(), io.crlf)?;
            let counts = count_with_lines(&lines)?;
            let model = bpe::learn_from_counts(&counts, merges);
            let mut out = open_output(io.output.as_deref())?;
            model.write(&mut out)?;
            out.flush()?;
            Ok(())
        }
        Command::ApplyBpe { model, io } => {
            let model = load_merges(&model)?;
            transform(&io, |l| Ok(model.apply_line(l)?))
        }
        Command::UndoBpe { io } => transform(&io, |l| Ok(bpe::undo_bpe(l))),
        Command::Preprocess {
            side,
            table,
            model,
            merges,
            save_model,
            lowercase,
            io,
        } => {
            let table = load_table(&table)?;
            if let Some(n) = merges {
                // Learning needs the whole corpus before the first line is written.
                let base: Vec<String> = read_lines(io.input.as_deref(), io.crlf)?
                    .iter()
                    .map(|l| base_tokens(side, &table, lowercase, l))
                    .collect();
                let learned = bpe::learn_from_counts(&count_with_lines(&base)?, n);
                if let Some(p) = &save_model {
                    save_merges(p, &learned)?;
                }
                let mut out = open_output(io.output.as_deref())?;
                for (i, l) in base.iter().enumerate() {
                    let split = learned.apply_line(l).with_context(|| format!("line {}", i + 1))?;
                    writeln!(out, "{split}")?;
                }
                out.flush()?;
                Ok(())
            } else {
                let model = model.as_deref().map(load_merges).transpose()?;
                transform(&io, |l| {
                    let base = base_tokens(side, &table, lowercase, l);
                    Ok(match &model {
                        Some(m) => m.apply_line(&base)?,
                        None => base,
                    })
                })
            }
        }
        Command::Postprocess { side, table, io } => {
            let table = load_table(&table)?;
            transform(&io, |l| match side {
                Side::Zh => Ok(pipeline::postprocess_zh_line(&table, l)?),
                Side::En => Ok(bpe::undo_bpe(l)),
            })
        }
        Command::Stats { json, io } => {
            let mut acc = StatsAccumulator::default();
            for item in numbered_lines(open_input(io.input.as_deref())?, io.crlf) {
                acc.add_line(&item?.1);
            }
            let stats = acc.finish();
            let mut out = open_output(io.output.as_deref())?;
            if json {
                writeln!(out, "{}", stats.to_json())?;
            } else {
                writeln!(out, "{stats}")?;
            }
            out.flush()?;
            Ok(())
        }
        Command::CheckParallel {
            src,
            tgt,
            filter_digits,
            output,
            crlf,
        } => {
            let s = read_lines(Some(&src), crlf)?;
            let t = read_lines(Some(&tgt), crlf)?;
            let report = pipeline::check_parallel(&s, &t);
            println!("{report}");
            if !report.is_ok() {
                let detail = match report.first_mismatch {
                    Some(i) => format!("line {}: present on one side only", i + 1),
                    None => format!("line {}: blank on one side only", report.empty_one_side[0] + 1),
                };
                bail!("{} and {} are not parallel ({detail})", src.display(), tgt.display());
            }
            if filter_digits {
                let prefix = output.expect("clap enforces --output");
                let (kept, dropped) = pipeline::filter_digit_pairs(&s, &t);
                let path = |ext: &str| {
                    let mut p = prefix.clone().into_os_string();
                    p.push(format!(".{ext}"));
                    PathBuf::from(p)
                };
                let mut so = open_output(Some(&path("src")))?;
                let mut to = open_output(Some(&path("tgt")))?;
                for (a, b) in &kept {
                    writeln!(so, "{a}")?;
                    writeln!(to, "{b}")?;
                }
                so.flush()?;
                to.flush()?;
                println!("kept={} dropped={}", kept.len(), dropped.len());
            }
            Ok(())
        }
        Command::Bleu { reference, io } => {
            let hyp = read_lines(io.input.as_deref(), io.crlf)?;
            let refs = read_lines(Some(&reference), io.crlf)?;
            let report = subchar::corpus_bleu(&hyp, &refs)?;
            let mut out = open_output(io.output.as_deref())?;
            writeln!(out, "{report}")?;
            out.flush()?;
            Ok(())
        }
        Command::TrainToy {
            src,
            tgt,
            output,
            dims,
            epochs,
            batch,
            seed,
            config,
            crlf,
        } => {
            let (emb, hidden) = parse_dims(&dims)?;
            let mut cfg = TrainConfig::default();
            if let Some(p) = &config {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                cfg.apply_kv(&text).with_context(|| format!("config {}", p.display()))?;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(b) = batch {
                cfg.batch = b;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let s = read_lines(Some(&src), crlf)?;
            let t = read_lines(Some(&tgt), crlf)?;
            if s.len() != t.len() {
                bail!("{} has {} lines but {} has {}", src.display(), s.len(), tgt.display(), t.len());
            }
            let src_vocab = Vocab::build(&s, None);
            let tgt_vocab = Vocab::build(&t, None);
            let mut pairs = Vec::with_capacity(s.len());
            for (i, (a, b)) in s.iter().zip(&t).enumerate() {
                let ids = src_vocab.ids(a);
                if ids.is_empty() {
                    bail!("line {}: empty source sentence", i + 1);
                }
                pairs.push((ids, tgt_vocab.target_ids(b)));
            }
            let dims = Dims {
                src_vocab: src_vocab.len(),
                tgt_vocab: tgt_vocab.len(),
                emb,
                hidden,
            };
            let params = NmtParams::init(dims, cfg.seed)?;
            eprintln!(
                "pairs={} src_vocab={} tgt_vocab={} params={}",
                pairs.len(),
                dims.src_vocab,
                dims.tgt_vocab,
                params.num_params()
            );
            let (params, _) = nmt::train_with_progress(params, &pairs, &cfg, |epoch, loss| {
                eprintln!("epoch {epoch} loss {loss:.6}");
            })?;
            nmt::save_checkpoint(
                &output,
                &Checkpoint {
                    params,
                    src_vocab,
                    tgt_vocab,
                },
            )?;
            Ok(())
        }
        Command::TranslateToy { model, max_len, io } => {
            if max_len == 0 {
                bail!("--max-len must be at least 1");
            }
            let ckpt = nmt::load_checkpoint(&model).with_context(|| format!("checkpoint {}", model.display()))?;
            transform(&io, |l| {
                let ids = ckpt.src_vocab.ids(l);
                if ids.is_empty() {
                    return Ok(String::new());
                }
                let out = ckpt.params.translate(&ids, max_len)?;
                Ok(ckpt.tgt_vocab.line(&out))
            })
        }
        Command::Sweep {
            merges,
            side,
            table,
            lowercase,
            input,
            output,
            crlf,
        } => {
            let table = load_table(&table)?;
            let base: Vec<String> = read_lines(Some(&input), crlf)?
                .iter()
                .map(|l| base_tokens(side, &table, lowercase, l))
                .collect();
            let max = merges.iter().copied().max().unwrap_or(0);
            // A shorter run is a prefix of a longer one, so learn once.
            let full = bpe::learn_from_counts(&count_with_lines(&base)?, max);
            fs::create_dir_all(&output).with_context(|| format!("cannot create {}", output.display()))?;
            let stdout = io::stdout();
            let mut table_out = stdout.lock();
            writeln!(table_out, "merges\tlearned\tsentences\ttokens\tavg_tokens_per_sentence\tvocab")?;
            for &k in &merges {
                let model = full.truncated(k);
                save_merges(&output.join(format!("bpe.{k}.merges")), &model)?;
                let mut out = open_output(Some(&output.join(format!("corpus.{k}.txt"))))?;
                let mut acc = StatsAccumulator::default();
                for l in &base {
                    let split = model.apply_line(l)?;
                    acc.add_line(&split);
                    writeln!(out, "{split}")?;
                }
                out.flush()?;
                let st = acc.finish();
                writeln!(
                    table_out,
                    "{k}\t{}\t{}\t{}\t{:.4}\t{}",
                    model.len(),
                    st.sentences,
                    st.tokens,
                    st.avg_f64(),
                    st.distinct_tokens
                )?;
            }
            Ok(())
        }
    }
}

/// Token counts for BPE learning, reporting the first offending line.
fn count_with_lines(lines: &[String]) -> anyhow::Result<std::collections::HashMap<String, u64>> {
    for (i, l) in lines.iter().enumerate() {
        if l.split_whitespace().any(|t| t.contains(bpe::CONTINUATION)) {
            return Err(anyhow!("line {}: token contains the reserved marker {:?}", i + 1, bpe::CONTINUATION));
        }
    }
    Ok(bpe::count_tokens(lines)?)
}
