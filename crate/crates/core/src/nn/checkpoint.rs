//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "TNNCKPT1"
//! version  u32
//! count    u32      number of entries
//! entry*:
//!   name_len u32, name utf-8 bytes
//!   kind     u8     0 = dense net, 1 = tensor
//!   dense:   n_layers u32, then per layer
//!              in u32, out u32, activation u8 (0 identity, 1 tanh, 2 relu),
//!              weights f64[out*in] row-major, bias f64[out]
//!   tensor:  rows u32, cols u32, data f64[rows*cols] row-major
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Activation, DenseNet, Layer, Matrix, NnError, Optimizer, OptimizerKind};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TNNCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Dense(DenseNet),
    Tensor(Matrix),
}

/// Ordered named entries.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<(String, Entry)>,
}

impl Checkpoint {
    pub fn push_dense(&mut self, name: &str, net: &DenseNet) {
        self.entries.push((String::from(name), Entry::Dense(net.clone())));
    }

    pub fn push_tensor(&mut self, name: &str, m: &Matrix) {
        self.entries.push((String::from(name), Entry::Tensor(m.clone())));
    }

    pub fn dense(&self, name: &str) -> Result<DenseNet, NnError> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, Entry::Dense(d))) => Ok(d.clone()),
            _ => Err(NnError::BadCheckpoint("missing dense entry")),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<Matrix, NnError> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, Entry::Tensor(m))) => Ok(m.clone()),
            _ => Err(NnError::BadCheckpoint("missing tensor entry")),
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    /// Stores optimizer state under `{prefix}.meta`, `{prefix}.m.{i}` and `{prefix}.v.{i}`.
    pub fn push_optimizer(&mut self, prefix: &str, opt: &Optimizer) {
        let (code, b1, b2, eps) = match opt.kind {
            OptimizerKind::Sgd => (0.0, 0.0, 0.0, 0.0),
            OptimizerKind::Adam { beta1, beta2, eps } => (1.0, beta1, beta2, eps),
        };
        let meta = [code, opt.learning_rate, opt.clip_norm, opt.t as f64, b1, b2, eps, opt.m.len() as f64, opt.v.len() as f64];
        self.push_tensor(&format!("{prefix}.meta"), &row(&meta));
        for (i, m) in opt.m.iter().enumerate() {
            self.push_tensor(&format!("{prefix}.m.{i}"), &row(m));
        }
        for (i, v) in opt.v.iter().enumerate() {
            self.push_tensor(&format!("{prefix}.v.{i}"), &row(v));
        }
    }

    pub fn optimizer(&self, prefix: &str) -> Result<Optimizer, NnError> {
        let meta = self.tensor(&format!("{prefix}.meta"))?.data;
        if meta.len() != 9 {
            return Err(NnError::BadCheckpoint("optimizer meta"));
        }
        let kind = match meta[0] as u8 {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam {
                beta1: meta[4],
                beta2: meta[5],
                eps: meta[6],
            },
            _ => return Err(NnError::BadCheckpoint("optimizer kind")),
        };
        let load = |tag: &str, n: f64| -> Result<Vec<Vec<f64>>, NnError> {
            (0..n as usize)
                .map(|i| self.tensor(&format!("{prefix}.{tag}.{i}")).map(|m| m.data))
                .collect()
        };
        Ok(Optimizer {
            kind,
            learning_rate: meta[1],
            clip_norm: meta[2],
            t: meta[3] as u64,
            m: load("m", meta[7])?,
            v: load("v", meta[8])?,
        })
    }
}

fn row(xs: &[f64]) -> Matrix {
    Matrix {
        rows: 1,
        cols: xs.len(),
        data: xs.to_vec(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, ck.entries.len());
    for (name, entry) in &ck.entries {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        match entry {
            Entry::Dense(net) => {
                out.push(0);
                put_u32(&mut out, net.layers.len());
                for l in &net.layers {
                    put_u32(&mut out, l.in_dim);
                    put_u32(&mut out, l.out_dim);
                    out.push(l.activation.code());
                    put_f64s(&mut out, &l.weights);
                    put_f64s(&mut out, &l.bias);
                }
            }
            Entry::Tensor(m) => {
                out.push(1);
                put_u32(&mut out, m.rows);
                put_u32(&mut out, m.cols);
                put_f64s(&mut out, &m.data);
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).ok_or(NnError::BadCheckpoint("length overflow"))?;
        let s = self.buf.get(self.pos..end).ok_or(NnError::BadCheckpoint("truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let bytes = self.take(n.checked_mul(8).ok_or(NnError::BadCheckpoint("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NnError::BadCheckpoint("bad magic"));
    }
    if r.u32()? as u32 != CHECKPOINT_VERSION {
        return Err(NnError::BadCheckpoint("unsupported version"));
    }
    let count = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| NnError::BadCheckpoint("entry name is not utf-8"))?;
        let entry = match r.u8()? {
            0 => {
                let n = r.u32()?;
                let mut layers = Vec::new();
                for _ in 0..n {
                    let in_dim = r.u32()?;
                    let out_dim = r.u32()?;
                    let activation = Activation::from_code(r.u8()?).ok_or(NnError::BadCheckpoint("bad activation"))?;
                    let weights = r.f64s(in_dim * out_dim)?;
                    let bias = r.f64s(out_dim)?;
                    layers.push(Layer {
                        in_dim,
                        out_dim,
                        weights,
                        bias,
                        activation,
                    });
                }
                let net = DenseNet { layers };
                if !net.is_chained() {
                    return Err(NnError::BadCheckpoint("layer dimensions do not chain"));
                }
                Entry::Dense(net)
            }
            1 => {
                let rows = r.u32()?;
                let cols = r.u32()?;
                let data = r.f64s(rows * cols)?;
                Entry::Tensor(Matrix { rows, cols, data })
            }
            _ => return Err(NnError::BadCheckpoint("unknown entry kind")),
        };
        entries.push((String::from(name), entry));
    }
    if r.pos != bytes.len() {
        return Err(NnError::BadCheckpoint("trailing bytes"));
    }
    Ok(Checkpoint { entries })
}
