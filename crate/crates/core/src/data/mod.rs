//! Procedurally generated dual-labeled synthetic clip datasets, the
//! desk-scale stand-in for real video corpora.
//!
//! Each clip carries a utility label encoded as a global luminance motion
//! pattern (an oriented drifting grating) and a privacy label encoded in
//! chromatic signatures: a strong multi-scale color texture inside a localized
//! "face" region plus a weaker global "clothing" tint. Both privacy cues are
//! zero-luminance (the three channels sum to the base gray), so identity
//! information lives entirely in color space while the utility signal lives
//! entirely in luminance. Separability of the two label channels is therefore
//! known by construction.

mod generate;
mod io;
mod transforms;

pub use generate::generate_dataset;
pub use io::{load_dataset, serialize_dataset};
pub use transforms::{downsample, downsample_clip, map_dataset, mask_privacy_region, MaskMode};

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the privacy label of a dataset is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// One identity index in `[0, K_B)`.
    Identity,
    /// A binary attribute vector of length `K_A`.
    Attributes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrivacyLabel {
    Identity(usize),
    Attributes(Vec<u8>),
}

/// Axis-aligned pixel box: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionBox {
    pub y: u32,
    pub x: u32,
    pub h: u32,
    pub w: u32,
}

/// A T-frame clip with one utility label and one privacy label.
/// Frames are `[T, H, W, C]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub frames: Array4<f64>,
    pub utility_label: usize,
    pub privacy_label: PrivacyLabel,
    /// Bounding box of the privacy-carrying region, when generated.
    pub region: Option<RegionBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// Generator parameters. `k_b` is the identity count in identity mode and the
/// attribute count in attribute mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub k_t: usize,
    pub k_b: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub privacy_region_fraction: f64,
    pub correlation: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub mode: LabelMode,
}

impl Default for SyntheticSpec {
    /// Desk-scale default geometry: the smallest size at which probe
    /// classifiers clear the 0.9 calibration bar.
    fn default() -> Self {
        SyntheticSpec {
            k_t: 8,
            k_b: 13,
            t: 4,
            h: 32,
            w: 32,
            c: 3,
            privacy_region_fraction: 0.14,
            correlation: 0.25,
            train_samples: 390,
            eval_samples: 130,
            mode: LabelMode::Identity,
        }
    }
}

impl SyntheticSpec {
    /// Attribute-mode analog (the cross-dataset privacy side).
    pub fn default_attributes() -> Self {
        SyntheticSpec {
            k_b: 7,
            mode: LabelMode::Attributes,
            ..SyntheticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_t < 2 {
            return Err(Error::validation("k_t", "must be >= 2"));
        }
        if self.k_b < 2 {
            return Err(Error::validation("k_b", "must be >= 2"));
        }
        if self.t < 1 {
            return Err(Error::validation("t", "must be >= 1"));
        }
        if self.h < 8 || self.w < 8 {
            return Err(Error::validation("h/w", "must be >= 8"));
        }
        if self.c != 1 && self.c != 3 {
            return Err(Error::validation("c", "must be 1 or 3"));
        }
        if !(self.privacy_region_fraction > 0.0 && self.privacy_region_fraction < 1.0) {
            return Err(Error::validation(
                "privacy_region_fraction",
                "must lie in (0, 1)",
            ));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::validation("correlation", "must lie in [0, 1]"));
        }
        if self.mode == LabelMode::Identity {
            if self.train_samples < self.k_t.max(self.k_b)
                || self.eval_samples < self.k_t.max(self.k_b)
            {
                return Err(Error::validation(
                    "samples",
                    "each split must be able to cover every class",
                ));
            }
        } else if self.train_samples < self.k_t.max(self.k_b)
            || self.eval_samples < self.k_t.max(self.k_b)
        {
            return Err(Error::validation(
                "samples",
                "each split must be able to cover every class/attribute",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualLabeledDataset {
    pub samples: Vec<ClipSample>,
    pub split_tags: Vec<Split>,
    pub generator_spec: SyntheticSpec,
    pub seed: u64,
}

impl DualLabeledDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.split_tags
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn eval_indices(&self) -> Vec<usize> {
        self.indices(Split::Eval)
    }

    pub fn mode(&self) -> LabelMode {
        self.generator_spec.mode
    }
}

/// A model-ready mini-batch: frames flattened to `[N*T, C, H, W]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array4<f64>,
    pub clips: usize,
    pub t: usize,
    pub utility: Vec<usize>,
    pub identity: Vec<usize>,
    pub attributes: Option<Array2<u8>>,
}

/// Assemble a batch from dataset sample indices, converting `[T, H, W, C]`
/// clips to the `[N*T, C, H, W]` layout the models consume.
pub fn batch_from_indices(ds: &DualLabeledDataset, indices: &[usize]) -> Batch {
    let spec = &ds.generator_spec;
    let (t, h, w, c) = (spec.t, spec.h, spec.w, spec.c);
    let n = indices.len();
    let mut x = Array4::<f64>::zeros((n * t, c, h, w));
    let mut utility = Vec::with_capacity(n);
    let mut identity = Vec::with_capacity(n);
    let mut attrs: Option<Array2<u8>> = match ds.mode() {
        LabelMode::Attributes => Some(Array2::zeros((n, spec.k_b))),
        LabelMode::Identity => None,
    };
    for (bi, &si) in indices.iter().enumerate() {
        let s = &ds.samples[si];
        for fi in 0..t {
            for yy in 0..h {
                for xx in 0..w {
                    for ci in 0..c {
                        x[[bi * t + fi, ci, yy, xx]] = s.frames[[fi, yy, xx, ci]];
                    }
                }
            }
        }
        utility.push(s.utility_label);
        match &s.privacy_label {
            PrivacyLabel::Identity(id) => identity.push(*id),
            PrivacyLabel::Attributes(a) => {
                let am = attrs.as_mut().unwrap();
                for (k, &v) in a.iter().enumerate() {
                    am[[bi, k]] = v;
                }
                identity.push(0);
            }
        }
    }
    Batch {
        x,
        clips: n,
        t,
        utility,
        identity,
        attributes: attrs,
    }
}

/// Convert a `[N*T, C, H, W]` model input back per-clip `[T, H, W, C]` frames
/// (used when materializing degraded datasets).
pub fn input_to_frames(x: &Array4<f64>, clip: usize, t: usize) -> Array4<f64> {
    let (_, c, h, w) = x.dim();
    let mut frames = Array4::<f64>::zeros((t, h, w, c));
    for fi in 0..t {
        for yy in 0..h {
            for xx in 0..w {
                for ci in 0..c {
                    frames[[fi, yy, xx, ci]] = x[[clip * t + fi, ci, yy, xx]];
                }
            }
        }
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_validates() {
        SyntheticSpec::default().validate().unwrap();
        SyntheticSpec::default_attributes().validate().unwrap();
    }

    #[test]
    fn invalid_specs_name_offending_field() {
        let mut spec = SyntheticSpec::default();
        spec.k_t = 1;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("k_t"));

        let mut spec = SyntheticSpec::default();
        spec.privacy_region_fraction = 1.5;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("privacy_region_fraction"));

        let mut spec = SyntheticSpec::default();
        spec.c = 2;
        assert!(spec.validate().is_err());
    }
}
