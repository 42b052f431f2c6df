//! The LDDS frame container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     4 bytes  "LDDS"
//! version   u32      currently 1
//! width, height, lanes, cells, anchors            u32 * 5
//! offset lo/hi, curvature lo/hi, half-width lo/hi f32 * 6
//! brightness, contrast, gamma, blur, noise        f32 * 5
//! rng_seed  u64
//! n_frames  u32
//!   per frame: image f32 * 3*H*W, label i16 * anchors*lanes (-1 = absent)
//! ```
//!
//! Records carry no length field: the file size must equal
//! `header + n_frames * frame_bytes` exactly, and any shortfall is reported
//! against the record it lands in.

use super::{frame_at, Frame, ScenarioSpec};
use crate::bytes::ByteReader;
use crate::error::{Error, Result};
use crate::lane::LaneLabel;
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 4] = b"LDDS";
pub const DATASET_VERSION: u32 = 1;

/// An in-memory set of rendered frames plus the spec that produced them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: ScenarioSpec,
    pub frames: Vec<Frame>,
}

impl Dataset {
    /// Renders frames `0..n` of the spec's deterministic stream.
    pub fn generate(spec: &ScenarioSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("a dataset needs at least one frame"));
        }
        spec.validate()?;
        let frames = (0..n as u64)
            .map(|i| frame_at(spec, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Stacks the chosen frames into a `[N, 3, H, W]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<LaneLabel>)> {
        if indices.is_empty() {
            return Err(Error::dimension("cannot build an empty batch"));
        }
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let frame = self.frames.get(i).ok_or_else(|| {
                Error::dimension(format!("frame index {i} out of range for {}", self.len()))
            })?;
            images.push(frame.image.clone());
            labels.push(frame.label.clone());
        }
        Ok((Tensor::stack(&images)?, labels))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        out.write_all(&encode_header(&self.spec, self.len())?)?;
        let mut buf = Vec::new();
        for frame in &self.frames {
            buf.clear();
            encode_frame(frame, &mut buf);
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path)?;
        let mut r = ByteReader::new(&buf);

        let magic = r.bytes(4, "magic")?;
        if magic != DATASET_MAGIC {
            return Err(Error::format(
                0,
                format!("bad magic {magic:02x?}, expected \"LDDS\""),
            ));
        }
        let version = r.u32("version")?;
        if version != DATASET_VERSION {
            return Err(Error::format(
                4,
                format!("unsupported version {version}, expected {DATASET_VERSION}"),
            ));
        }

        let spec_at = r.pos();
        let width = r.u32("width")? as usize;
        let height = r.u32("height")? as usize;
        let lanes = r.u32("lanes")? as usize;
        let cells = r.u32("cells")? as usize;
        let anchors = r.u32("anchors")? as usize;
        let mut range = |what: &str| -> Result<(f32, f32)> {
            Ok((r.f32(what)?, r.f32(what)?))
        };
        let offset_px = range("offset range")?;
        let curvature = range("curvature range")?;
        let half_width_px = range("half-width range")?;
        let spec = ScenarioSpec {
            width,
            height,
            lanes,
            offset_px,
            curvature,
            half_width_px,
            brightness: r.f32("brightness")?,
            contrast: r.f32("contrast")?,
            gamma: r.f32("gamma")?,
            blur_radius: r.f32("blur radius")?,
            noise_std: r.f32("noise sigma")?,
            rng_seed: r.u64("rng seed")?,
        };
        spec.validate()
            .map_err(|e| Error::format(spec_at, format!("embedded scenario is invalid: {e}")))?;
        let grid = spec.grid()?;
        if cells != grid.cells || anchors != grid.anchors() {
            return Err(Error::format(
                spec_at,
                format!(
                    "embedded grid {cells} cells / {anchors} anchors, expected {} / {}",
                    grid.cells,
                    grid.anchors()
                ),
            ));
        }

        let n_frames = r.u32("frame count")? as usize;
        if n_frames == 0 {
            // A structurally valid but empty dataset is a usage problem,
            // not a corruption, so it keeps exit code 1.
            return Err(Error::validation("dataset file declares zero frames"));
        }
        let frame_bytes = 3 * height * width * 4 + anchors * lanes * 2;
        let body = r.remaining();
        if body != n_frames * frame_bytes {
            if body < n_frames * frame_bytes {
                let record = body / frame_bytes;
                return Err(Error::format(
                    buf.len() as u64,
                    format!("file ends inside record {record} of {n_frames}"),
                ));
            }
            return Err(Error::format(
                r.pos() + (n_frames * frame_bytes) as u64,
                format!("{} trailing bytes after record {}", body - n_frames * frame_bytes, n_frames - 1),
            ));
        }

        let mut frames = Vec::with_capacity(n_frames);
        for record in 0..n_frames {
            let pixels = r.bytes(3 * height * width * 4, "image data")?;
            let mut image = Vec::with_capacity(3 * height * width);
            for c in pixels.chunks_exact(4) {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::format(
                        r.pos(),
                        format!("record {record}: pixel {v} outside [0, 1]"),
                    ));
                }
                image.push(v);
            }
            let raw = r.bytes(anchors * lanes * 2, "label data")?;
            let cells: Vec<i16> = raw
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect();
            let label = LaneLabel::new(cells, &grid)
                .map_err(|e| Error::format(r.pos(), format!("record {record}: {e}")))?;
            frames.push(Frame {
                image: Tensor::new([3, height, width], image)?,
                label,
            });
        }
        Ok(Self { spec, frames })
    }
}

/// Renders and writes `n` frames without holding them all in memory.
pub fn generate_to_file(spec: &ScenarioSpec, n: usize, path: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::validation("a dataset needs at least one frame"));
    }
    spec.validate()?;
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    out.write_all(&encode_header(spec, n)?)?;
    let mut buf = Vec::new();
    for i in 0..n as u64 {
        let frame = frame_at(spec, i)?;
        buf.clear();
        encode_frame(&frame, &mut buf);
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn encode_header(spec: &ScenarioSpec, n_frames: usize) -> Result<Vec<u8>> {
    let grid = spec.grid()?;
    let mut buf = Vec::with_capacity(84);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [
        spec.width,
        spec.height,
        spec.lanes,
        grid.cells,
        grid.anchors(),
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [
        spec.offset_px.0,
        spec.offset_px.1,
        spec.curvature.0,
        spec.curvature.1,
        spec.half_width_px.0,
        spec.half_width_px.1,
        spec.brightness,
        spec.contrast,
        spec.gamma,
        spec.blur_radius,
        spec.noise_std,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&spec.rng_seed.to_le_bytes());
    buf.extend_from_slice(&(n_frames as u32).to_le_bytes());
    Ok(buf)
}

fn encode_frame(frame: &Frame, buf: &mut Vec<u8>) {
    for &v in frame.image.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &c in &frame.label.cells {
        buf.extend_from_slice(&c.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ShiftProfile;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ldds");
        let ds = Dataset::generate(&ScenarioSpec::shifted(ShiftProfile::Night, 21), 3).unwrap();
        ds.save(&p).unwrap();
        let back = Dataset::load(&p).unwrap();
        assert_eq!(back.spec, ds.spec);
        assert_eq!(back.len(), 3);
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert_eq!(a.image.to_bits(), b.image.to_bits());
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn file_size_matches_the_documented_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ldds");
        let spec = ScenarioSpec::source(1);
        generate_to_file(&spec, 5, &p).unwrap();
        let header = 84u64;
        let frame = (3 * 64 * 128 * 4 + 14 * 2 * 2) as u64;
        assert_eq!(std::fs::metadata(&p).unwrap().len(), header + 5 * frame);
    }

    #[test]
    fn truncation_names_the_failing_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ldds");
        generate_to_file(&ScenarioSpec::source(2), 3, &p).unwrap();
        let full = std::fs::read(&p).unwrap();
        // Cut into the middle of record 1.
        let frame = 3 * 64 * 128 * 4 + 14 * 2 * 2;
        std::fs::write(&p, &full[..84 + frame + frame / 2]).unwrap();
        match Dataset::load(&p) {
            Err(Error::Format { offset, what }) => {
                assert_eq!(offset, (84 + frame + frame / 2) as u64);
                assert!(what.contains("record 1"), "{what}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ldds");
        generate_to_file(&ScenarioSpec::source(2), 2, &p).unwrap();
        let mut full = std::fs::read(&p).unwrap();
        full.push(0);
        std::fs::write(&p, &full).unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn generate_to_file_matches_in_memory_save() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ldds");
        let b = dir.path().join("b.ldds");
        let spec = ScenarioSpec::shifted(ShiftProfile::Fog, 8);
        generate_to_file(&spec, 4, &a).unwrap();
        Dataset::generate(&spec, 4).unwrap().save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn batch_stacks_frames() {
        let ds = Dataset::generate(&ScenarioSpec::source(3), 4).unwrap();
        let (batch, labels) = ds.batch(&[0, 2]).unwrap();
        assert_eq!(batch.shape(), &[2, 3, 64, 128]);
        assert_eq!(labels.len(), 2);
        assert_eq!(batch.slice_batch(1).unwrap().to_bits(), ds.frames[2].image.to_bits());
        assert!(ds.batch(&[9]).is_err());
    }
}
