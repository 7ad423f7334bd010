//! Model checkpoints as versioned JSON or a flat little-endian binary file.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes  "V2XL"
//! version  u32
//! cell     u8       0 = LSTM, 1 = GRU
//! input    u32      input size D
//! hidden   u32      hidden size H
//! count    u32      number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   ndims    u32, dims u32 * ndims
//!   values   f64 * product(dims)
//! ```
//!
//! Values are always stored as `f64` regardless of the training precision.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CellKind, ModelParameters, NetError, TENSOR_NAMES};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"V2XL";
pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "v2x-loadcast-checkpoint";

#[derive(Serialize, Deserialize)]
struct JsonTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    format: String,
    version: u32,
    cell: CellKind,
    input_size: usize,
    hidden_size: usize,
    tensors: Vec<JsonTensor>,
}

fn corrupt(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

fn assemble<S: Scalar>(
    cell: CellKind,
    input_size: usize,
    hidden_size: usize,
    tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
) -> Result<ModelParameters<S>, NetError> {
    let mut params = ModelParameters::<S>::zeros(cell, input_size, hidden_size);
    if tensors.len() != TENSOR_NAMES.len() {
        return Err(corrupt(format!("expected {} tensors, found {}", TENSOR_NAMES.len(), tensors.len())));
    }
    let shapes = params.shapes();
    for (name, shape, data) in tensors {
        let k = TENSOR_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| corrupt(format!("unknown tensor `{name}`")))?;
        if shape != shapes[k] || data.len() != shape.iter().product::<usize>() {
            return Err(corrupt(format!("tensor `{name}` has shape {shape:?}, expected {:?}", shapes[k])));
        }
        for (dst, v) in params.tensors_mut()[k].iter_mut().zip(data) {
            *dst = S::of(v);
        }
    }
    if !params.is_finite() {
        return Err(NetError::NonFinite("checkpoint".into()));
    }
    Ok(params)
}

pub fn write_checkpoint_json<S: Scalar, W: Write>(params: &ModelParameters<S>, out: W) -> Result<(), NetError> {
    let doc = JsonCheckpoint {
        format: FORMAT_NAME.into(),
        version: CHECKPOINT_VERSION,
        cell: params.kind,
        input_size: params.input_size,
        hidden_size: params.hidden_size,
        tensors: TENSOR_NAMES
            .iter()
            .zip(params.shapes())
            .zip(params.tensors())
            .map(|((name, shape), data)| JsonTensor {
                name: name.to_string(),
                shape,
                data: data.iter().map(|v| v.as_f64()).collect(),
            })
            .collect(),
    };
    serde_json::to_writer_pretty(out, &doc).map_err(|e| corrupt(e.to_string()))
}

pub fn read_checkpoint_json<S: Scalar, R: Read>(input: R) -> Result<ModelParameters<S>, NetError> {
    let doc: JsonCheckpoint = serde_json::from_reader(input).map_err(|e| corrupt(e.to_string()))?;
    if doc.format != FORMAT_NAME || doc.version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported format {} v{}", doc.format, doc.version)));
    }
    let tensors = doc.tensors.into_iter().map(|t| (t.name, t.shape, t.data)).collect();
    assemble(doc.cell, doc.input_size, doc.hidden_size, tensors)
}

pub fn write_checkpoint_binary<S: Scalar, W: Write>(params: &ModelParameters<S>, mut out: W) -> Result<(), NetError> {
    let io = |e: std::io::Error| corrupt(e.to_string());
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(match params.kind {
        CellKind::Lstm => 0,
        CellKind::Gru => 1,
    });
    buf.extend_from_slice(&(params.input_size as u32).to_le_bytes());
    buf.extend_from_slice(&(params.hidden_size as u32).to_le_bytes());
    buf.extend_from_slice(&(TENSOR_NAMES.len() as u32).to_le_bytes());
    for ((name, shape), data) in TENSOR_NAMES.iter().zip(params.shapes()).zip(params.tensors()) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in &shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io)
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.0.len() < n {
            return Err(corrupt("unexpected end of file"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint_binary<S: Scalar, R: Read>(mut input: R) -> Result<ModelParameters<S>, NetError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| corrupt(e.to_string()))?;
    let mut cur = Cursor(&bytes);
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let cell = match cur.take(1)?[0] {
        0 => CellKind::Lstm,
        1 => CellKind::Gru,
        other => return Err(corrupt(format!("unknown cell tag {other}"))),
    };
    let input_size = cur.u32()? as usize;
    let hidden_size = cur.u32()? as usize;
    let count = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|e| corrupt(e.to_string()))?;
        let ndims = cur.u32()? as usize;
        let shape = (0..ndims).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        if n > cur.0.len() / 8 {
            return Err(corrupt(format!("tensor `{name}` larger than the file")));
        }
        let data = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
        tensors.push((name, shape, data));
    }
    if !cur.0.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    assemble(cell, input_size, hidden_size, tensors)
}
