use ndarray::Array4;

use super::{ClipSample, DualLabeledDataset};
use crate::error::{Error, Result};

/// Reduce each frame to `(floor(H/s), floor(W/s))` by average pooling, then
/// re-expand to the original size by nearest neighbor so downstream models
/// keep a fixed input shape. `s = 1` is the identity.
pub fn downsample(frames: &Array4<f64>, s: usize) -> Result<Array4<f64>> {
    if s < 1 {
        return Err(Error::validation("s", "downsampling ratio must be >= 1"));
    }
    if s == 1 {
        return Ok(frames.clone());
    }
    let (t, h, w, c) = frames.dim();
    let h2 = (h / s).max(1);
    let w2 = (w / s).max(1);
    let mut out = Array4::<f64>::zeros((t, h, w, c));
    for fi in 0..t {
        for ci in 0..c {
            let mut pooled = vec![0.0f64; h2 * w2];
            for py in 0..h2 {
                for px in 0..w2 {
                    let mut acc = 0.0;
                    let mut count = 0usize;
                    for dy in 0..s {
                        let yy = py * s + dy;
                        if yy >= h {
                            break;
                        }
                        for dx in 0..s {
                            let xx = px * s + dx;
                            if xx >= w {
                                break;
                            }
                            acc += frames[[fi, yy, xx, ci]];
                            count += 1;
                        }
                    }
                    pooled[py * w2 + px] = acc / count as f64;
                }
            }
            for yy in 0..h {
                let py = (yy / s).min(h2 - 1);
                for xx in 0..w {
                    let px = (xx / s).min(w2 - 1);
                    out[[fi, yy, xx, ci]] = pooled[py * w2 + px];
                }
            }
        }
    }
    Ok(out)
}

/// Downsample a whole sample, keeping labels and region metadata.
pub fn downsample_clip(sample: &ClipSample, s: usize) -> Result<ClipSample> {
    Ok(ClipSample {
        frames: downsample(&sample.frames, s)?,
        ..sample.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Zero the privacy-carrying bounding box (face-crop analog).
    RegionOnly,
    /// Zero the union of privacy and utility regions. The utility pattern is
    /// global by construction, so this blanks the whole frame (body-crop
    /// analog).
    FullSubject,
}

/// Empirical masking baseline over generator ground-truth regions. Labels are
/// unchanged; idempotent.
pub fn mask_privacy_region(sample: &ClipSample, mode: MaskMode) -> Result<ClipSample> {
    let region = sample.region.ok_or(Error::UnsupportedSample)?;
    let mut frames = sample.frames.clone();
    let (t, h, w, c) = frames.dim();
    match mode {
        MaskMode::RegionOnly => {
            let y1 = ((region.y + region.h) as usize).min(h);
            let x1 = ((region.x + region.w) as usize).min(w);
            for fi in 0..t {
                for yy in region.y as usize..y1 {
                    for xx in region.x as usize..x1 {
                        for ci in 0..c {
                            frames[[fi, yy, xx, ci]] = 0.0;
                        }
                    }
                }
            }
        }
        MaskMode::FullSubject => frames.fill(0.0),
    }
    Ok(ClipSample {
        frames,
        ..sample.clone()
    })
}

/// Apply a per-sample transform to every sample of a dataset.
pub fn map_dataset(
    ds: &DualLabeledDataset,
    f: impl Fn(&ClipSample) -> Result<ClipSample>,
) -> Result<DualLabeledDataset> {
    let samples: Result<Vec<_>> = ds.samples.iter().map(|s| f(s)).collect();
    Ok(DualLabeledDataset {
        samples: samples?,
        split_tags: ds.split_tags.clone(),
        generator_spec: ds.generator_spec.clone(),
        seed: ds.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SyntheticSpec};
    use ndarray::Array4;

    #[test]
    fn downsample_identity_at_one() {
        let x = Array4::from_shape_fn((2, 8, 8, 3), |(t, y, x, c)| {
            (t * 100 + y * 10 + x + c) as f64 / 300.0
        });
        let y = downsample(&x, 1).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn downsample_block_mean_example() {
        // 4x4 frame with 2x2 constant blocks is a fixed point of s=2
        let mut x = Array4::<f64>::zeros((1, 4, 4, 1));
        let pattern = [[1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0], [
            0.0, 0.0, 1.0, 1.0,
        ]];
        for yy in 0..4 {
            for xx in 0..4 {
                x[[0, yy, xx, 0]] = pattern[yy][xx];
            }
        }
        let y = downsample(&x, 2).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn downsample_preserves_shape_and_rejects_zero() {
        let x = Array4::<f64>::zeros((1, 10, 10, 3));
        let y = downsample(&x, 3).unwrap();
        assert_eq!(y.dim(), (1, 10, 10, 3));
        assert!(downsample(&x, 0).is_err());
    }

    #[test]
    fn masking_is_idempotent() {
        let spec = SyntheticSpec {
            train_samples: 16,
            eval_samples: 16,
            ..SyntheticSpec::default()
        };
        let ds = generate_dataset(&spec, 1).unwrap();
        let s = &ds.samples[0];
        for mode in [MaskMode::RegionOnly, MaskMode::FullSubject] {
            let once = mask_privacy_region(s, mode).unwrap();
            let twice = mask_privacy_region(&once, mode).unwrap();
            assert_eq!(once, twice);
            assert_eq!(once.utility_label, s.utility_label);
            assert_eq!(once.privacy_label, s.privacy_label);
        }
    }

    #[test]
    fn masking_requires_region_metadata() {
        let spec = SyntheticSpec {
            train_samples: 16,
            eval_samples: 16,
            ..SyntheticSpec::default()
        };
        let ds = generate_dataset(&spec, 1).unwrap();
        let mut s = ds.samples[0].clone();
        s.region = None;
        assert!(matches!(
            mask_privacy_region(&s, MaskMode::RegionOnly),
            Err(Error::UnsupportedSample)
        ));
    }

    #[test]
    fn region_mask_zeroes_exactly_the_box() {
        let spec = SyntheticSpec {
            train_samples: 16,
            eval_samples: 16,
            ..SyntheticSpec::default()
        };
        let ds = generate_dataset(&spec, 2).unwrap();
        let s = &ds.samples[3];
        let r = s.region.unwrap();
        let masked = mask_privacy_region(s, MaskMode::RegionOnly).unwrap();
        let (t, h, w, c) = s.frames.dim();
        for fi in 0..t {
            for yy in 0..h {
                for xx in 0..w {
                    let in_box = yy >= r.y as usize
                        && yy < (r.y + r.h) as usize
                        && xx >= r.x as usize
                        && xx < (r.x + r.w) as usize;
                    for ci in 0..c {
                        if in_box {
                            assert_eq!(masked.frames[[fi, yy, xx, ci]], 0.0);
                        } else {
                            assert_eq!(masked.frames[[fi, yy, xx, ci]], s.frames[[fi, yy, xx, ci]]);
                        }
                    }
                }
            }
        }
    }
}
