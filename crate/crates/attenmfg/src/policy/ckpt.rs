//! Versioned checkpoint file: a magic line, a JSON header describing the
//! architecture and tensor manifest, then raw little-endian `f64` blobs in
//! manifest order (parameters, then the Adam moments when training state is
//! saved).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{PolicyHyper, PolicyParams};

pub const CKPT_MAGIC: &str = "attenmfg-ckpt/1";

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("not a checkpoint file: expected magic `{CKPT_MAGIC}`, found `{found}`")]
    BadMagic { found: String },
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint header is invalid: {reason}")]
    InvalidHeader { reason: String },
    #[error("tensor blob `{name}` is truncated: wanted {wanted} bytes, got {got}")]
    TruncatedBlob { name: String, wanted: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Metadata needed to resume a run deterministically; the optimizer moments
/// travel in the trailing blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs already completed.
    pub epoch: usize,
    /// Adam step counter.
    pub adam_t: u64,
    /// Seed the per-instance seeds are derived from.
    pub master_seed: u64,
    /// Fingerprint of the training configuration that produced this file.
    pub config_hash: String,
}

/// First and second Adam moments, one matrix per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        let zero: Vec<Array2<f64>> =
            params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
        Self { t: 0, m: zero.clone(), v: zero }
    }
}

/// Everything a checkpoint file holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub train: Option<(TrainState, AdamState)>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyper: PolicyHyper,
    tensors: Vec<TensorMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainState>,
}

fn write_blob(out: &mut impl Write, tensor: &Array2<f64>) -> std::io::Result<()> {
    for &v in tensor.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_blob(
    input: &mut impl Read,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>, PolicyError> {
    let wanted = rows * cols * 8;
    let mut bytes = vec![0u8; wanted];
    let mut got = 0;
    while got < wanted {
        let n = input.read(&mut bytes[got..])?;
        if n == 0 {
            return Err(PolicyError::TruncatedBlob { name: name.to_string(), wanted, got });
        }
        got += n;
    }
    let data: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked above"))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), PolicyError> {
    let layout = ckpt.params.hyper.tensor_layout();
    let header = Header {
        hyper: ckpt.params.hyper,
        tensors: layout
            .into_iter()
            .map(|(name, rows, cols)| TensorMeta { name, rows, cols })
            .collect(),
        train: ckpt.train.as_ref().map(|(state, _)| state.clone()),
    };
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CKPT_MAGIC}")?;
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for tensor in ckpt.params.tensors() {
        write_blob(&mut out, tensor)?;
    }
    if let Some((_, adam)) = &ckpt.train {
        for tensor in adam.m.iter().chain(&adam.v) {
            write_blob(&mut out, tensor)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_line(input: &mut impl Read) -> Result<String, PolicyError> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            break;
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 1 << 20 {
            return Err(PolicyError::InvalidHeader { reason: "unterminated header line".into() });
        }
    }
    String::from_utf8(line)
        .map_err(|_| PolicyError::InvalidHeader { reason: "header is not UTF-8".into() })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PolicyError> {
    let mut input = BufReader::new(File::open(path)?);
    let magic = read_line(&mut input)?;
    if magic != CKPT_MAGIC {
        return Err(PolicyError::BadMagic { found: magic });
    }
    let header: Header = serde_json::from_str(&read_line(&mut input)?)?;
    if !header.hyper.is_valid() {
        return Err(PolicyError::InvalidHeader {
            reason: format!("hyperparameters out of range: {:?}", header.hyper),
        });
    }
    let layout = header.hyper.tensor_layout();
    if layout.len() != header.tensors.len()
        || layout
            .iter()
            .zip(&header.tensors)
            .any(|((n, r, c), m)| *n != m.name || *r != m.rows || *c != m.cols)
    {
        return Err(PolicyError::InvalidHeader {
            reason: "tensor manifest does not match the architecture".into(),
        });
    }
    let mut tensors = Vec::with_capacity(layout.len());
    for meta in &header.tensors {
        tensors.push(read_blob(&mut input, &meta.name, meta.rows, meta.cols)?);
    }
    let params = PolicyParams::from_tensors(header.hyper, tensors);
    let train = match header.train {
        None => None,
        Some(state) => {
            let mut m = Vec::with_capacity(header.tensors.len());
            for meta in &header.tensors {
                m.push(read_blob(&mut input, &format!("adam.m.{}", meta.name), meta.rows, meta.cols)?);
            }
            let mut v = Vec::with_capacity(header.tensors.len());
            for meta in &header.tensors {
                v.push(read_blob(&mut input, &format!("adam.v.{}", meta.name), meta.rows, meta.cols)?);
            }
            let adam = AdamState { t: state.adam_t, m, v };
            Some((state, adam))
        }
    };
    Ok(Checkpoint { params, train })
}
