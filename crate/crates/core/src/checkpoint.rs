//! Binary checkpoint format (little-endian).
//!
//! ```text
//! magic            4 bytes  "ODLR"
//! version          u32      = 1
//! model kind       u8       0 = encoder-decoder, 1 = identity passthrough
//! task             u8       0 = unspecified, 1 inpaint, 2 interpolate, 3 deblur, 4 denoise
//! input_channels   u32
//! input_size       u32
//! latent_spatial   u32
//! seed             u64
//! encoder depth    u32      followed by one u32 width per encoder layer
//! tensor count     u32
//! tensors          rank u32, dims u32 x rank, payload f64 x prod(dims)
//! ```
//!
//! Tensors follow layer order. Each parameter contributes its value, first
//! and second ADAM moments (rank 4) and its step count (rank 0); each batch
//! normalization layer then contributes its running mean and variance
//! (rank 1). Values are stored as `f64` regardless of training precision, so
//! an `f32` network round-trips exactly.

use std::fs;
use std::path::Path;

use crate::corrupt::TaskKind;
use crate::error::{Error, Result};
use crate::model::{IdentityRestorer, Model};
use crate::net::{EncoderDecoder, Layer, NetworkConfig};
use crate::nn::{Parameter, RunningStats};
use crate::tensor::{Scalar, Tensor4};

pub const MAGIC: [u8; 4] = *b"ODLR";
pub const VERSION: u32 = 1;

const KIND_NETWORK: u8 = 0;
const KIND_IDENTITY: u8 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, dims: &[usize], values: impl IntoIterator<Item = f64>) {
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u32(d as u32);
        }
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// Reads the next tensor and checks it against `expected` dims.
    fn tensor(&mut self, index: usize, expected: &[usize]) -> Result<Vec<f64>> {
        let what = format!("tensor {index}");
        let rank = self.u32(&what)? as usize;
        if rank > 8 {
            return Err(Error::TensorShape {
                index,
                found: vec![rank],
                expected: expected.to_vec(),
            });
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32(&what)? as usize);
        }
        if dims != expected {
            return Err(Error::TensorShape {
                index,
                found: dims,
                expected: expected.to_vec(),
            });
        }
        let count: usize = dims.iter().product();
        let bytes = self.take(count * 8, &format!("tensor {index} payload"))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn dims4<T: Scalar>(t: &Tensor4<T>) -> [usize; 4] {
    let d = t.dims();
    [d.n, d.c, d.h, d.w]
}

fn header(w: &mut Writer, kind: u8, task: Option<TaskKind>, cfg: &NetworkConfig) {
    w.buf.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.u8(kind);
    w.u8(task.map_or(0, TaskKind::code));
    w.u32(cfg.input_channels as u32);
    w.u32(cfg.input_size as u32);
    w.u32(cfg.latent_spatial as u32);
    w.u64(cfg.seed);
    w.u32(cfg.encoder_channels.len() as u32);
    for &c in &cfg.encoder_channels {
        w.u32(c as u32);
    }
}

fn network_tensors<T: Scalar>(net: &EncoderDecoder<T>, w: &mut Writer) -> u32 {
    let mut count = 0;
    for layer in &net.layers {
        for p in crate::nn::Module::parameters(layer) {
            for t in [&p.value, &p.adam_m, &p.adam_v] {
                w.tensor(&dims4(t), t.data().iter().map(|v| v.f64()));
            }
            w.tensor(&[], [p.step_count as f64]);
            count += 4;
        }
        if let Layer::BatchNorm(bn) = layer {
            let stats = bn
                .running
                .clone()
                .unwrap_or_else(|| RunningStats::standard(bn.channels));
            w.tensor(&[bn.channels], stats.mean.iter().copied());
            w.tensor(&[bn.channels], stats.var.iter().copied());
            count += 2;
        }
    }
    count
}

pub fn encode_network<T: Scalar>(net: &EncoderDecoder<T>, task: Option<TaskKind>) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    header(&mut w, KIND_NETWORK, task, &net.cfg);
    let mut body = Writer { buf: Vec::new() };
    let count = network_tensors(net, &mut body);
    w.u32(count);
    w.buf.extend_from_slice(&body.buf);
    w.buf
}

pub fn encode_identity(id: &IdentityRestorer, task: Option<TaskKind>) -> Vec<u8> {
    let cfg = NetworkConfig {
        input_channels: id.channels,
        input_size: id.size,
        encoder_channels: Vec::new(),
        latent_spatial: id.size,
        seed: 0,
    };
    let mut w = Writer { buf: Vec::new() };
    header(&mut w, KIND_IDENTITY, task, &cfg);
    w.u32(0);
    w.buf
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint<T: Scalar>(net: &EncoderDecoder<T>, task: Option<TaskKind>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_network(net, task))
}

pub fn save_identity(id: &IdentityRestorer, task: Option<TaskKind>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_identity(id, task))
}

fn fill_param<T: Scalar>(r: &mut Reader, index: &mut usize, p: &mut Parameter<T>) -> Result<()> {
    let d = dims4(&p.value);
    for t in [&mut p.value, &mut p.adam_m, &mut p.adam_v] {
        let vals = r.tensor(*index, &d)?;
        *index += 1;
        t.data_mut().iter_mut().zip(vals).for_each(|(o, v)| *o = T::of(v));
    }
    let step = r.tensor(*index, &[])?;
    *index += 1;
    p.step_count = step[0] as u64;
    p.zero_grad();
    Ok(())
}

/// A decoded checkpoint: the model plus the task it was trained for.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: Model<T>,
    pub task: Option<TaskKind>,
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let kind = r.u8("model kind")?;
    let task_code = r.u8("task")?;
    let task = match task_code {
        0 => None,
        c => Some(TaskKind::from_code(c).ok_or_else(|| Error::Data(format!("checkpoint: unknown task code {c}")))?),
    };
    let input_channels = r.u32("config")? as usize;
    let input_size = r.u32("config")? as usize;
    let latent_spatial = r.u32("config")? as usize;
    let seed = r.u64("config")?;
    let depth = r.u32("config")? as usize;
    if depth > 16 {
        return Err(Error::Data(format!("checkpoint: implausible encoder depth {depth}")));
    }
    let mut encoder_channels = Vec::with_capacity(depth);
    for _ in 0..depth {
        encoder_channels.push(r.u32("config")? as usize);
    }
    let count = r.u32("tensor count")? as usize;
    let cfg = NetworkConfig {
        input_channels,
        input_size,
        encoder_channels,
        latent_spatial,
        seed,
    };

    let model = match kind {
        KIND_IDENTITY => Model::Identity(IdentityRestorer {
            channels: input_channels,
            size: input_size,
        }),
        KIND_NETWORK => {
            let mut net = EncoderDecoder::<T>::build(cfg)?;
            let mut index = 0;
            for layer in net.layers.iter_mut() {
                for p in crate::nn::Module::parameters_mut(layer) {
                    fill_param(&mut r, &mut index, p)?;
                }
                if let Layer::BatchNorm(bn) = layer {
                    let mean = r.tensor(index, &[bn.channels])?;
                    let var = r.tensor(index + 1, &[bn.channels])?;
                    index += 2;
                    bn.running = Some(RunningStats { mean, var });
                }
            }
            if index != count {
                return Err(Error::Data(format!(
                    "checkpoint: header lists {count} tensors, network has {index}"
                )));
            }
            Model::Network(net)
        }
        other => return Err(Error::Data(format!("checkpoint: unknown model kind {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "checkpoint: {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { model, task })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint that must contain an encoder-decoder.
pub fn load_network<T: Scalar>(path: &Path) -> Result<EncoderDecoder<T>> {
    match load_checkpoint::<T>(path)?.model {
        Model::Network(net) => Ok(net),
        Model::Identity(_) => Err(Error::Data(format!(
            "{} holds an identity passthrough, not a network",
            path.display()
        ))),
    }
}

/// Bytes outside tensor payloads for a network checkpoint of `cfg`.
pub fn header_bytes(cfg: &NetworkConfig) -> usize {
    4 + 4 + 1 + 1 + 4 * 3 + 8 + 4 + 4 * cfg.encoder_channels.len() + 4
}
