//! The LDBN weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "LDBN"
//! version  u32      currently 1
//! n_layers u32
//!   per layer: kind u8, n_hyper u32, hyper u32 * n_hyper
//! n_tensors u32
//!   per tensor: name_len u32, name utf-8, class u8,
//!               rank u32, dims u32 * rank, data f32 * prod(dims)
//! ```
//!
//! Saving is byte-deterministic: parameters are walked in stack order, so
//! save -> load -> save reproduces the file exactly.

use super::stack::{LayerDesc, LayerStack, ParamClass};
use crate::bytes::ByteReader;
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LDBN";
pub const WEIGHTS_VERSION: u32 = 1;

const KIND_CONV2D: u8 = 0;
const KIND_BN: u8 = 1;
const KIND_RELU: u8 = 2;
const KIND_MAXPOOL2: u8 = 3;
const KIND_FLATTEN: u8 = 4;
const KIND_LINEAR: u8 = 5;

fn class_tag(c: ParamClass) -> u8 {
    c as u8
}

fn class_from_tag(t: u8, at: u64) -> Result<ParamClass> {
    match t {
        0 => Ok(ParamClass::Frozen),
        1 => Ok(ParamClass::BnAffine),
        2 => Ok(ParamClass::Stat),
        _ => Err(Error::format(at, format!("unknown parameter class tag {t}"))),
    }
}

pub fn save_weights(stack: &LayerStack, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());

    let descs = stack.descriptors();
    buf.extend_from_slice(&(descs.len() as u32).to_le_bytes());
    for d in &descs {
        let (kind, hyper): (u8, Vec<u32>) = match *d {
            LayerDesc::Conv2d {
                cout,
                cin,
                k,
                stride,
                pad,
            } => (
                KIND_CONV2D,
                vec![cout as u32, cin as u32, k as u32, stride as u32, pad as u32],
            ),
            LayerDesc::Bn { channels } => (KIND_BN, vec![channels as u32]),
            LayerDesc::Relu => (KIND_RELU, vec![]),
            LayerDesc::MaxPool2 => (KIND_MAXPOOL2, vec![]),
            LayerDesc::Flatten => (KIND_FLATTEN, vec![]),
            LayerDesc::Linear { out_f, in_f } => (KIND_LINEAR, vec![out_f as u32, in_f as u32]),
        };
        buf.push(kind);
        buf.extend_from_slice(&(hyper.len() as u32).to_le_bytes());
        for h in hyper {
            buf.extend_from_slice(&h.to_le_bytes());
        }
    }

    let mut n_tensors = 0u32;
    stack.visit_params(|_, _, _, _| n_tensors += 1);
    buf.extend_from_slice(&n_tensors.to_le_bytes());
    stack.visit_params(|name, class, dims, data| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(class_tag(class));
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });

    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<LayerStack> {
    let buf = std::fs::read(path)?;
    let mut r = ByteReader::new(&buf);

    let magic = r.bytes(4, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:02x?}, expected \"LDBN\"")));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {WEIGHTS_VERSION}"),
        ));
    }

    let n_layers = r.u32("layer count")? as usize;
    let mut descs = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let at = r.pos();
        let kind = r.u8("layer kind")?;
        let n_hyper = r.u32("hyperparameter count")? as usize;
        let mut hyper = Vec::with_capacity(n_hyper);
        for _ in 0..n_hyper {
            hyper.push(r.u32("hyperparameter")? as usize);
        }
        let expect = |want: usize| -> Result<()> {
            if n_hyper == want {
                Ok(())
            } else {
                Err(Error::format(
                    at,
                    format!("layer {i} kind {kind} carries {n_hyper} hyperparameters, expected {want}"),
                ))
            }
        };
        descs.push(match kind {
            KIND_CONV2D => {
                expect(5)?;
                LayerDesc::Conv2d {
                    cout: hyper[0],
                    cin: hyper[1],
                    k: hyper[2],
                    stride: hyper[3],
                    pad: hyper[4],
                }
            }
            KIND_BN => {
                expect(1)?;
                LayerDesc::Bn { channels: hyper[0] }
            }
            KIND_RELU => {
                expect(0)?;
                LayerDesc::Relu
            }
            KIND_MAXPOOL2 => {
                expect(0)?;
                LayerDesc::MaxPool2
            }
            KIND_FLATTEN => {
                expect(0)?;
                LayerDesc::Flatten
            }
            KIND_LINEAR => {
                expect(2)?;
                LayerDesc::Linear {
                    out_f: hyper[0],
                    in_f: hyper[1],
                }
            }
            other => return Err(Error::format(at, format!("unknown layer kind {other}"))),
        });
    }

    let n_tensors = r.u32("tensor count")? as usize;
    let mut records: HashMap<String, (u64, ParamClass, Vec<usize>, Vec<f32>)> =
        HashMap::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let at = r.pos();
        let name_len = r.u32("tensor name length")? as usize;
        if name_len > 4096 {
            return Err(Error::format(at, format!("implausible tensor name length {name_len}")));
        }
        let name_bytes = r.bytes(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::format(at, "tensor name is not valid utf-8"))?
            .to_string();
        let class = class_from_tag(r.u8("parameter class")?, r.pos() - 1)?;
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::format(at, format!("implausible tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor dim")? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::format(at, format!("invalid tensor dims {dims:?}")))?;
        let raw = r.bytes(len * 4, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if records.insert(name.clone(), (at, class, dims, data)).is_some() {
            return Err(Error::format(at, format!("duplicate tensor {name:?}")));
        }
    }
    if r.pos() != buf.len() as u64 {
        return Err(Error::format(
            r.pos(),
            format!("{} trailing bytes after the last tensor", buf.len() as u64 - r.pos()),
        ));
    }

    let mut stack = LayerStack::from_descriptors(&descs)?;
    stack.visit_params_mut(|name, class, dims, out| {
        let (at, rec_class, rec_dims, data) = records.remove(name).ok_or_else(|| {
            Error::format(buf.len() as u64, format!("missing tensor {name:?}"))
        })?;
        if rec_class != class {
            return Err(Error::format(
                at,
                format!("tensor {name:?} has class {rec_class:?}, architecture expects {class:?}"),
            ));
        }
        if rec_dims != dims {
            return Err(Error::format(
                at,
                format!("tensor {name:?} has dims {rec_dims:?}, architecture expects {dims:?}"),
            ));
        }
        out.copy_from_slice(&data);
        Ok(())
    })?;
    if let Some((name, (at, ..))) = records.into_iter().next() {
        return Err(Error::format(
            at,
            format!("tensor {name:?} does not belong to the declared architecture"),
        ));
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::reference_model;

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ldbn");
        let p2 = dir.path().join("b.ldbn");
        let m = reference_model(42);
        save_weights(&m, &p1).unwrap();
        let loaded = load_weights(&p1).unwrap();
        save_weights(&loaded, &p2).unwrap();
        let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(b1, b2);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ldbn");
        std::fs::write(&p, b"NOPE....").unwrap();
        match load_weights(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_the_failing_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ldbn");
        let m = reference_model(1);
        save_weights(&m, &p).unwrap();
        let full = std::fs::read(&p).unwrap();
        std::fs::write(&p, &full[..full.len() / 2]).unwrap();
        match load_weights(&p) {
            Err(Error::Format { offset, .. }) => {
                assert!(offset <= (full.len() / 2) as u64);
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ldbn");
        let m = reference_model(1);
        save_weights(&m, &p).unwrap();
        let mut full = std::fs::read(&p).unwrap();
        let at = full.len() as u64;
        full.extend_from_slice(&[0u8; 3]);
        std::fs::write(&p, &full).unwrap();
        match load_weights(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, at),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn loaded_weights_match_saved() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ldbn");
        let m = reference_model(9);
        save_weights(&m, &p).unwrap();
        let loaded = load_weights(&p).unwrap();
        let mut a = Vec::new();
        m.visit_params(|_, _, _, d| a.extend_from_slice(d));
        let mut b = Vec::new();
        loaded.visit_params(|_, _, _, d| b.extend_from_slice(d));
        assert_eq!(a, b);
    }
}
