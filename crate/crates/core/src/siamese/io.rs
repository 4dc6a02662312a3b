//! Binary model file, little-endian:
//!
//! ```text
//! "SIAM" | version u16 = 1 | descriptor count u16
//! descriptors: tag u8 + u32 fields
//!     0 input   (channels, height, width)   always first
//!     1 conv    (out_channels, kernel, stride)
//!     2 relu    ()
//!     3 maxpool (window, stride)
//!     4 dense   (out)
//! embed_dim u32
//! weights f32 x param_count, in layer order (conv: kernels then biases,
//!     dense: row-major matrix then biases)
//! head_w f32 | head_b f32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{DistanceHead, SiameseModel};
use super::network::{Architecture, Layer, Shape};

const MAGIC: &[u8; 4] = b"SIAM";
const VERSION: u16 = 1;

pub fn model_to_bytes(model: &SiameseModel) -> Vec<u8> {
    let arch = model.architecture();
    let mut out = Vec::with_capacity(64 + 4 * model.weights().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((arch.layers().len() + 1) as u16).to_le_bytes());
    let put = |out: &mut Vec<u8>, tag: u8, fields: &[u32]| {
        out.push(tag);
        for f in fields {
            out.extend_from_slice(&f.to_le_bytes());
        }
    };
    let s = arch.input();
    put(&mut out, 0, &[s.channels, s.height, s.width]);
    for layer in arch.layers() {
        match *layer {
            Layer::Conv { out_channels, kernel, stride } => put(&mut out, 1, &[out_channels, kernel, stride]),
            Layer::Relu => put(&mut out, 2, &[]),
            Layer::MaxPool { window, stride } => put(&mut out, 3, &[window, stride]),
            Layer::Dense { out: n } => put(&mut out, 4, &[n]),
        }
    }
    out.extend_from_slice(&(arch.embed_dim() as u32).to_le_bytes());
    for w in model.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let head = model.head();
    out.extend_from_slice(&head.w.to_le_bytes());
    out.extend_from_slice(&head.b.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("model file truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<SiameseModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad model magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let count = r.u16()? as usize;
    if count == 0 {
        return Err(Error::format("model has no input descriptor"));
    }
    if r.u8()? != 0 {
        return Err(Error::format("first descriptor must be the input shape"));
    }
    let input = Shape::new(r.u32()?, r.u32()?, r.u32()?);
    let mut layers = Vec::with_capacity(count - 1);
    for _ in 1..count {
        let layer = match r.u8()? {
            1 => Layer::Conv { out_channels: r.u32()?, kernel: r.u32()?, stride: r.u32()? },
            2 => Layer::Relu,
            3 => Layer::MaxPool { window: r.u32()?, stride: r.u32()? },
            4 => Layer::Dense { out: r.u32()? },
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    let arch = Architecture::new(input, layers).map_err(|e| Error::Format(format!("shape chain: {e}")))?;
    let dim = r.u32()? as usize;
    if dim != arch.embed_dim() {
        return Err(Error::Format(format!(
            "declared embed_dim {dim} but layers produce {}",
            arch.embed_dim()
        )));
    }
    let n = arch.param_count();
    let expected_rest = 4 * n + 8;
    if bytes.len() - r.pos != expected_rest {
        return Err(Error::Format(format!(
            "expected {} bytes of weights and head, found {}",
            expected_rest,
            bytes.len() - r.pos
        )));
    }
    let weights = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let head = DistanceHead { w: r.f32()?, b: r.f32()? };
    SiameseModel::from_parts(arch, weights, head)
}

pub fn save_model(model: &SiameseModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SiameseModel> {
    model_from_bytes(&fs::read(path)?)
}
