//! JSON checkpoint container. Layout is documented in `docs/checkpoint.md`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Dims, NmtParams};
use super::vocab::Vocab;
use super::NmtError;

pub const FORMAT: &str = "subchar-nmt";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NmtParams,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    format: String,
    version: u32,
    dims: Dims,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    tensors: Vec<TensorRecord>,
}

fn bad(msg: impl Into<String>) -> NmtError {
    NmtError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(mut out: W, ckpt: &Checkpoint) -> Result<(), NmtError> {
    let record = Record {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        dims: ckpt.params.dims,
        src_vocab: ckpt.src_vocab.tokens().to_vec(),
        tgt_vocab: ckpt.tgt_vocab.tokens().to_vec(),
        tensors: ckpt
            .params
            .tensors()
            .into_iter()
            .map(|t| TensorRecord {
                name: t.name,
                shape: t.shape,
                data: t.data.to_vec(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut out, &record).map_err(|e| bad(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint, NmtError> {
    let record: Record = serde_json::from_reader(input).map_err(|e| bad(e.to_string()))?;
    if record.format != FORMAT {
        return Err(bad(format!("unknown format {:?}", record.format)));
    }
    if record.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", record.version)));
    }
    let src_vocab = Vocab::from_tokens(record.src_vocab).ok_or_else(|| bad("malformed source vocabulary"))?;
    let tgt_vocab = Vocab::from_tokens(record.tgt_vocab).ok_or_else(|| bad("malformed target vocabulary"))?;
    if src_vocab.len() != record.dims.src_vocab || tgt_vocab.len() != record.dims.tgt_vocab {
        return Err(bad("vocabulary sizes disagree with dims"));
    }
    let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = record
        .tensors
        .into_iter()
        .map(|t| (t.name, t.shape, t.data))
        .collect();
    let params = NmtParams::from_tensors(record.dims, &tensors)?;
    Ok(Checkpoint {
        params,
        src_vocab,
        tgt_vocab,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), NmtError> {
    write_checkpoint(BufWriter::new(File::create(path)?), ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NmtError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
