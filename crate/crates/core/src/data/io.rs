//! Dataset container format, version 1.
//!
//! Layout (all integers little-endian):
//!   magic `AVDS`, version u32,
//!   header: mode u8, k_t u32, k_b u32, t u32, h u32, w u32, c u32,
//!           privacy_region_fraction f64, correlation f64,
//!           train_samples u64, eval_samples u64, seed u64, n_samples u64
//!   then per sample: split u8, utility u32,
//!           privacy (identity: u32; attributes: k_b bytes),
//!           region flag u8 + (y, x, h, w) u32 when present,
//!           frame payload: t*h*w*c f32, T-major row-major.

use ndarray::Array4;

use super::{
    ClipSample, DualLabeledDataset, LabelMode, PrivacyLabel, RegionBox, Split, SyntheticSpec,
};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AVDS";
const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!(
                "unexpected end of payload (wanted {n} bytes, {} remain)",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serialize a dataset to the version-1 container. Deterministic for equal
/// inputs.
pub fn serialize_dataset(ds: &DualLabeledDataset) -> Vec<u8> {
    let spec = &ds.generator_spec;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match spec.mode {
        LabelMode::Identity => 0,
        LabelMode::Attributes => 1,
    });
    for v in [spec.k_t, spec.k_b, spec.t, spec.h, spec.w, spec.c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&spec.privacy_region_fraction.to_le_bytes());
    out.extend_from_slice(&spec.correlation.to_le_bytes());
    out.extend_from_slice(&(spec.train_samples as u64).to_le_bytes());
    out.extend_from_slice(&(spec.eval_samples as u64).to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    out.extend_from_slice(&(ds.samples.len() as u64).to_le_bytes());

    for (sample, split) in ds.samples.iter().zip(&ds.split_tags) {
        out.push(match split {
            Split::Train => 0,
            Split::Eval => 1,
        });
        out.extend_from_slice(&(sample.utility_label as u32).to_le_bytes());
        match &sample.privacy_label {
            PrivacyLabel::Identity(id) => out.extend_from_slice(&(*id as u32).to_le_bytes()),
            PrivacyLabel::Attributes(a) => out.extend_from_slice(a),
        }
        match sample.region {
            Some(r) => {
                out.push(1);
                for v in [r.y, r.x, r.h, r.w] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        for &v in sample.frames.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Parse a version-1 container. Fails atomically: no partial dataset is ever
/// returned, and errors carry the byte offset.
pub fn load_dataset(bytes: &[u8]) -> Result<DualLabeledDataset> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: "bad magic; not a dataset file".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported format version {version}")));
    }
    let mode = match r.u8()? {
        0 => LabelMode::Identity,
        1 => LabelMode::Attributes,
        m => return Err(r.err(format!("unknown label mode {m}"))),
    };
    let k_t = r.u32()? as usize;
    let k_b = r.u32()? as usize;
    let t = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let privacy_region_fraction = r.f64()?;
    let correlation = r.f64()?;
    let train_samples = r.u64()? as usize;
    let eval_samples = r.u64()? as usize;
    let seed = r.u64()?;
    let n_samples = r.u64()? as usize;

    let spec = SyntheticSpec {
        k_t,
        k_b,
        t,
        h,
        w,
        c,
        privacy_region_fraction,
        correlation,
        train_samples,
        eval_samples,
        mode,
    };
    spec.validate()
        .map_err(|e| r.err(format!("invalid header: {e}")))?;

    let mut samples = Vec::with_capacity(n_samples);
    let mut split_tags = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let split = match r.u8()? {
            0 => Split::Train,
            1 => Split::Eval,
            s => return Err(r.err(format!("unknown split tag {s}"))),
        };
        let utility_label = r.u32()? as usize;
        if utility_label >= k_t {
            return Err(r.err(format!("utility label {utility_label} out of range")));
        }
        let privacy_label = match mode {
            LabelMode::Identity => {
                let id = r.u32()? as usize;
                if id >= k_b {
                    return Err(r.err(format!("identity label {id} out of range")));
                }
                PrivacyLabel::Identity(id)
            }
            LabelMode::Attributes => {
                let raw = r.take(k_b)?;
                if raw.iter().any(|&b| b > 1) {
                    return Err(r.err("attribute labels must be 0/1"));
                }
                PrivacyLabel::Attributes(raw.to_vec())
            }
        };
        let region = match r.u8()? {
            0 => None,
            1 => {
                let y = r.u32()?;
                let x = r.u32()?;
                let rh = r.u32()?;
                let rw = r.u32()?;
                Some(RegionBox { y, x, h: rh, w: rw })
            }
            f => return Err(r.err(format!("unknown region flag {f}"))),
        };
        let count = t * h * w * c;
        let raw = r.take(count * 4)?;
        let mut frames = Array4::<f64>::zeros((t, h, w, c));
        for (i, v) in frames.iter_mut().enumerate() {
            let f = f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().unwrap());
            if !f.is_finite() {
                return Err(r.err("non-finite pixel value"));
            }
            *v = f as f64;
        }
        samples.push(ClipSample {
            frames,
            utility_label,
            privacy_label,
            region,
        });
        split_tags.push(split);
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after last sample"));
    }
    Ok(DualLabeledDataset {
        samples,
        split_tags,
        generator_spec: spec,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    fn ds() -> DualLabeledDataset {
        let spec = SyntheticSpec {
            train_samples: 26,
            eval_samples: 13,
            ..SyntheticSpec::default()
        };
        generate_dataset(&spec, 42).unwrap()
    }

    #[test]
    fn roundtrip_is_lossless_and_deterministic() {
        let d = ds();
        let bytes = serialize_dataset(&d);
        let loaded = load_dataset(&bytes).unwrap();
        assert_eq!(d, loaded);
        assert_eq!(bytes, serialize_dataset(&loaded));
    }

    #[test]
    fn attribute_mode_roundtrip() {
        let spec = SyntheticSpec {
            train_samples: 20,
            eval_samples: 10,
            ..SyntheticSpec::default_attributes()
        };
        let d = generate_dataset(&spec, 9).unwrap();
        let loaded = load_dataset(&serialize_dataset(&d)).unwrap();
        assert_eq!(d, loaded);
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = serialize_dataset(&ds());
        for cut in [3, 10, 60, bytes.len() / 2, bytes.len() - 1] {
            let err = load_dataset(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "cut at {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = serialize_dataset(&ds());
        bytes[0] = b'X';
        assert!(load_dataset(&bytes).is_err());
    }

    #[test]
    fn trailing_garbage_rejected() {
        let mut bytes = serialize_dataset(&ds());
        bytes.push(0);
        assert!(load_dataset(&bytes).is_err());
    }
}
