//! Binary checkpoint for resuming "continue"-mode runs.
//!
//! Layout (all integers `u32` little-endian, all floats `f64` little-endian):
//!
//! ```text
//! magic  b"AFMXCKPT"
//! version            = 1
//! input_dim
//! hidden_count, hidden_dims[hidden_count]
//! num_classes
//! classifier_depth
//! for each layer (encoder first, then classifier):
//!     weights[fan_out * fan_in]   row-major
//!     bias[fan_out]
//! ```
//!
//! Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use super::{Dense, MlpSpec, ModelParams};
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

const MAGIC: &[u8; 8] = b"AFMXCKPT";
const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let spec = params.spec();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let mut put = |v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(VERSION as usize);
    put(spec.input_dim);
    put(spec.hidden_dims.len());
    for &h in &spec.hidden_dims {
        put(h);
    }
    put(spec.num_classes);
    put(spec.classifier_depth);
    for layer in params.layers() {
        for v in layer.weights.as_slice().iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.path, "truncated checkpoint")),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &str) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let input_dim = r.u32()?;
    let n_hidden = r.u32()?;
    if n_hidden > bytes.len() {
        return Err(Error::format(path, "implausible hidden layer count"));
    }
    let hidden_dims = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let num_classes = r.u32()?;
    let classifier_depth = r.u32()?;
    let spec = MlpSpec { input_dim, hidden_dims, num_classes, classifier_depth };
    spec.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let mut layers = Vec::new();
    for (out, fan_in) in spec.layer_shapes() {
        let w = r.f64s(out * fan_in)?;
        let b = r.f64s(out)?;
        layers.push(Dense::new(Matrix::new(out, fan_in, w)?, b)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    ModelParams::from_layers(spec, layers).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::RngStream;

    #[test]
    fn round_trip_and_layout() {
        let spec = MlpSpec::new(3, vec![4, 2], 5).with_classifier_depth(2);
        let p = ModelParams::init(&spec, &mut RngStream::new(9)).unwrap();
        let bytes = encode_checkpoint(&p);
        // header: magic + version, input, count, 2 dims, classes, depth
        let header = 8 + 4 * 7;
        let floats = (4 * 3 + 4) + (2 * 4 + 2) + (2 * 2 + 2) + (5 * 2 + 5);
        assert_eq!(bytes.len(), header + 8 * floats);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(decode_checkpoint(&bytes, "mem").unwrap(), p);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&p, &path).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), p);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let spec = MlpSpec::new(2, vec![2], 2);
        let p = ModelParams::init(&spec, &mut RngStream::new(1)).unwrap();
        let bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], "t").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra, "t").is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic, "t"), Err(Error::Format { .. })));
    }
}
