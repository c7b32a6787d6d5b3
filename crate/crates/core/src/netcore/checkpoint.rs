//! Binary model checkpoints.
//!
//! Layout (little endian): magic `SDMC`, version `u32`, input rank `u32` and
//! extents `u64`, layer count `u32` with one record per layer, then every
//! parameter tensor (`prior` flag byte, length `u64`, values), then running
//! statistics for each batch-norm layer, and a trailing CRC-32.

use std::io::{Read, Write};

use thiserror::Error;

use super::{LayerSpec, Model, NetError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SDMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Corrupt("extent overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s_into(&mut self, dst: &mut [f64], what: &str) -> Result<(), CheckpointError> {
        let n = self.usize()?;
        if n != dst.len() {
            return Err(CheckpointError::Corrupt(format!("{what}: expected {} values, found {n}", dst.len())));
        }
        for d in dst {
            *d = self.f64()?;
        }
        Ok(())
    }
}

fn write_spec(w: &mut Writer, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Dense { units } => {
            w.u8(0);
            w.u64(units as u64);
        }
        LayerSpec::Conv2d { out_channels, kernel, stride, padding } => {
            w.u8(1);
            for v in [out_channels, kernel, stride, padding] {
                w.u64(v as u64);
            }
        }
        LayerSpec::BatchNorm { momentum, eps } => {
            w.u8(2);
            w.f64(momentum);
            w.f64(eps);
        }
        LayerSpec::Relu => w.u8(3),
        LayerSpec::MaxPool { size } => {
            w.u8(4);
            w.u64(size as u64);
        }
        LayerSpec::ResidualAdd { from } => {
            w.u8(5);
            w.u64(from as u64);
        }
        LayerSpec::Flatten => w.u8(6),
        LayerSpec::Softmax => w.u8(7),
    }
}

fn read_spec(r: &mut Reader) -> Result<LayerSpec, CheckpointError> {
    Ok(match r.u8()? {
        0 => LayerSpec::Dense { units: r.usize()? },
        1 => LayerSpec::Conv2d {
            out_channels: r.usize()?,
            kernel: r.usize()?,
            stride: r.usize()?,
            padding: r.usize()?,
        },
        2 => LayerSpec::BatchNorm { momentum: r.f64()?, eps: r.f64()? },
        3 => LayerSpec::Relu,
        4 => LayerSpec::MaxPool { size: r.usize()? },
        5 => LayerSpec::ResidualAdd { from: r.usize()? },
        6 => LayerSpec::Flatten,
        7 => LayerSpec::Softmax,
        tag => return Err(CheckpointError::Corrupt(format!("unknown layer tag {tag}"))),
    })
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(model.input_shape().len() as u32);
    model.input_shape().iter().for_each(|&d| w.u64(d as u64));
    w.u32(model.layers().len() as u32);
    for layer in model.layers() {
        write_spec(&mut w, layer.spec());
    }
    for p in model.params() {
        w.u8(p.prior as u8);
        w.f64s(p.value.data());
    }
    for s in model.running_stats().iter().flatten() {
        w.f64s(&s.mean);
        w.f64s(&s.var);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated);
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, pos: 8 };
    let rank = r.u32()? as usize;
    let input: Vec<usize> = (0..rank).map(|_| r.usize()).collect::<Result<_, _>>()?;
    let n_layers = r.u32()? as usize;
    let specs: Vec<LayerSpec> = (0..n_layers).map(|_| read_spec(&mut r)).collect::<Result<_, _>>()?;
    let mut model = Model::new(&input, &specs)?;
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        p.prior = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(CheckpointError::Corrupt(format!("prior flag {v} on parameter {i}"))),
        };
        r.f64s_into(p.value.data_mut(), "parameter")?;
    }
    for s in model.running_stats_mut().iter_mut().flatten() {
        r.f64s_into(&mut s.mean, "running mean")?;
        r.f64s_into(&mut s.var, "running variance")?;
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(model)
}

pub fn write_to<W: Write>(model: &Model, mut w: W) -> Result<(), CheckpointError> {
    w.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn read_from<R: Read>(mut r: R) -> Result<Model, CheckpointError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
