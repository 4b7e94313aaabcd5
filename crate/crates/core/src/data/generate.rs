use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ClipSample, DualLabeledDataset, LabelMode, PrivacyLabel, RegionBox, Split, SyntheticSpec,
};
use crate::error::Result;

/// Amplitude of the global luminance motion pattern (utility signal).
const UTILITY_AMP: f64 = 0.16;
/// Amplitude of the localized chroma signature (primary privacy cue).
const FACE_AMP: f64 = 0.35;
/// Amplitude of the global chroma tint (secondary privacy cue, the
/// "clothing" analog that survives region masking).
const CLOTHING_AMP: f64 = 0.10;
const NOISE_AMP: f64 = 0.02;
/// Wavelength of the utility grating, in pixels.
const GRATING_WAVELENGTH: f64 = 8.0;
/// Per-frame phase advance of the utility grating.
const FRAME_PHASE_STEP: f64 = std::f64::consts::PI / 3.0;
const FACE_JITTER: f64 = 0.08;
const CLOTHING_JITTER: f64 = 0.30;

/// Orthonormal zero-sum chroma basis: offsets along these directions change
/// color but not the channel mean, so they are invisible in luminance.
const CHROMA_E1: [f64; 3] = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2, 0.0];
const CHROMA_E2: [f64; 3] = [0.408_248_290_463_863, 0.408_248_290_463_863, -0.816_496_580_927_726];

fn chroma_dir(psi: f64, c: usize) -> [f64; 3] {
    let (s, co) = psi.sin_cos();
    if c == 1 {
        // single-channel fallback: project onto the first basis channel
        [co * CHROMA_E1[0] + s * CHROMA_E2[0], 0.0, 0.0]
    } else {
        [
            co * CHROMA_E1[0] + s * CHROMA_E2[0],
            co * CHROMA_E1[1] + s * CHROMA_E2[1],
            co * CHROMA_E1[2] + s * CHROMA_E2[2],
        ]
    }
}

/// Checkerboard sign with square cells of the given size, in global frame
/// coordinates (so downsampling interacts with it uniformly).
fn checker(y: usize, x: usize, cell: usize) -> f64 {
    if (y / cell + x / cell) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Multi-scale signature mask: a DC part that survives any average pooling
/// plus two balanced checker scales that wash out as pooling grows.
fn signature_mask(y: usize, x: usize) -> f64 {
    0.5 + 0.25 * checker(y, x, 2) + 0.25 * checker(y, x, 1)
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03)),
    )
}

struct ClipPlan {
    utility: usize,
    privacy: PrivacyLabel,
}

fn render_identity_clip(
    spec: &SyntheticSpec,
    plan: &ClipPlan,
    rng: &mut ChaCha8Rng,
) -> ClipSample {
    let (t, h, w, c) = (spec.t, spec.h, spec.w, spec.c);
    let identity = match plan.privacy {
        PrivacyLabel::Identity(id) => id,
        _ => unreachable!(),
    };

    let theta = std::f64::consts::PI * plan.utility as f64 / spec.k_t as f64;
    let kx = 2.0 * std::f64::consts::PI / GRATING_WAVELENGTH * theta.cos();
    let ky = 2.0 * std::f64::consts::PI / GRATING_WAVELENGTH * theta.sin();
    let phase0 = rng.gen_range(0.0..(2.0 * std::f64::consts::PI));

    let side = ((spec.privacy_region_fraction * (h * w) as f64).sqrt().round() as usize)
        .clamp(2, h.min(w) - 1);
    let max_y = h - side;
    let max_x = w - side;
    let rand_y = rng.gen_range(0..=max_y) as f64;
    let rand_x = rng.gen_range(0..=max_x) as f64;
    // privacy cue placement co-occurs with the utility class to the degree
    // set by `correlation`
    let anchor_y = (plan.utility % 3) as f64 * max_y as f64 / 2.0;
    let anchor_x = (plan.utility / 3 % 3) as f64 * max_x as f64 / 2.0;
    let box_y = ((1.0 - spec.correlation) * rand_y + spec.correlation * anchor_y).round() as usize;
    let box_x = ((1.0 - spec.correlation) * rand_x + spec.correlation * anchor_x).round() as usize;
    let region = RegionBox {
        y: box_y as u32,
        x: box_x as u32,
        h: side as u32,
        w: side as u32,
    };

    let psi = 2.0 * std::f64::consts::PI * identity as f64 / spec.k_b as f64;
    let face_dir = chroma_dir(psi + rng.gen_range(-FACE_JITTER..FACE_JITTER), c);
    let cloth_dir = chroma_dir(psi + rng.gen_range(-CLOTHING_JITTER..CLOTHING_JITTER), c);

    let mut frames = Array4::<f64>::zeros((t, h, w, c));
    for fi in 0..t {
        let phase = phase0 + fi as f64 * FRAME_PHASE_STEP;
        for yy in 0..h {
            for xx in 0..w {
                let lum = UTILITY_AMP * (kx * xx as f64 + ky * yy as f64 + phase).sin();
                let in_box = yy >= box_y && yy < box_y + side && xx >= box_x && xx < box_x + side;
                let face_m = if in_box { signature_mask(yy, xx) } else { 0.0 };
                for ci in 0..c {
                    let chroma = CLOTHING_AMP * cloth_dir[ci]
                        + FACE_AMP * face_m * face_dir[ci];
                    let noise = rng.gen_range(-NOISE_AMP..NOISE_AMP);
                    let v = (0.5 + lum + chroma + noise).clamp(0.0, 1.0);
                    // store at f32 precision so the on-disk round-trip is lossless
                    frames[[fi, yy, xx, ci]] = v as f32 as f64;
                }
            }
        }
    }
    ClipSample {
        frames,
        utility_label: plan.utility,
        privacy_label: plan.privacy.clone(),
        region: Some(region),
    }
}

fn render_attribute_clip(
    spec: &SyntheticSpec,
    plan: &ClipPlan,
    rng: &mut ChaCha8Rng,
) -> ClipSample {
    let (t, h, w, c) = (spec.t, spec.h, spec.w, spec.c);
    let attrs = match &plan.privacy {
        PrivacyLabel::Attributes(a) => a.clone(),
        _ => unreachable!(),
    };
    let k_a = spec.k_b;
    let grid = (k_a as f64).sqrt().ceil() as usize;
    let cell_h = h / grid;
    let cell_w = w / grid;

    let theta = std::f64::consts::PI * plan.utility as f64 / spec.k_t as f64;
    let kx = 2.0 * std::f64::consts::PI / GRATING_WAVELENGTH * theta.cos();
    let ky = 2.0 * std::f64::consts::PI / GRATING_WAVELENGTH * theta.sin();
    let phase0 = rng.gen_range(0.0..(2.0 * std::f64::consts::PI));

    let mut dirs = Vec::with_capacity(k_a);
    for a in 0..k_a {
        let psi = 2.0 * std::f64::consts::PI * a as f64 / k_a as f64;
        dirs.push(chroma_dir(psi + rng.gen_range(-FACE_JITTER..FACE_JITTER), c));
    }

    // zone of attribute a: grid cell (a % grid, a / grid), one-pixel inset
    let zone = |a: usize| -> (usize, usize, usize, usize) {
        let row = a / grid;
        let col = a % grid;
        (
            row * cell_h + 1,
            col * cell_w + 1,
            cell_h.saturating_sub(2).max(1),
            cell_w.saturating_sub(2).max(1),
        )
    };

    let mut region: Option<RegionBox> = None;
    for (a, &present) in attrs.iter().enumerate() {
        if present == 0 {
            continue;
        }
        let (zy, zx, zh, zw) = zone(a);
        region = Some(match region {
            None => RegionBox {
                y: zy as u32,
                x: zx as u32,
                h: zh as u32,
                w: zw as u32,
            },
            Some(r) => {
                let y0 = r.y.min(zy as u32);
                let x0 = r.x.min(zx as u32);
                let y1 = (r.y + r.h).max((zy + zh) as u32);
                let x1 = (r.x + r.w).max((zx + zw) as u32);
                RegionBox {
                    y: y0,
                    x: x0,
                    h: y1 - y0,
                    w: x1 - x0,
                }
            }
        });
    }
    let region = region.unwrap_or(RegionBox { y: 0, x: 0, h: 0, w: 0 });

    let mut frames = Array4::<f64>::zeros((t, h, w, c));
    for fi in 0..t {
        let phase = phase0 + fi as f64 * FRAME_PHASE_STEP;
        for yy in 0..h {
            for xx in 0..w {
                let lum = UTILITY_AMP * (kx * xx as f64 + ky * yy as f64 + phase).sin();
                let mut chroma = [0.0f64; 3];
                for (a, &present) in attrs.iter().enumerate() {
                    if present == 0 {
                        continue;
                    }
                    let (zy, zx, zh, zw) = zone(a);
                    if yy >= zy && yy < zy + zh && xx >= zx && xx < zx + zw {
                        let m = signature_mask(yy, xx);
                        for ci in 0..c {
                            chroma[ci] += FACE_AMP * m * dirs[a][ci];
                        }
                    }
                }
                for ci in 0..c {
                    let noise = rng.gen_range(-NOISE_AMP..NOISE_AMP);
                    let v = (0.5 + lum + chroma[ci] + noise).clamp(0.0, 1.0);
                    frames[[fi, yy, xx, ci]] = v as f32 as f64;
                }
            }
        }
    }
    ClipSample {
        frames,
        utility_label: plan.utility,
        privacy_label: PrivacyLabel::Attributes(attrs),
        region: Some(region),
    }
}

/// Deterministically generate a dual-labeled dataset from `(spec, seed)`.
///
/// Labels are assigned round-robin within each split, which guarantees that
/// every utility class and every privacy class/attribute occurs in both
/// splits.
pub fn generate_dataset(spec: &SyntheticSpec, seed: u64) -> Result<DualLabeledDataset> {
    spec.validate()?;
    let total = spec.train_samples + spec.eval_samples;
    let mut samples = Vec::with_capacity(total);
    let mut split_tags = Vec::with_capacity(total);

    for gi in 0..total {
        let (split, si) = if gi < spec.train_samples {
            (Split::Train, gi)
        } else {
            (Split::Eval, gi - spec.train_samples)
        };
        let mut rng = sample_rng(seed, gi as u64);
        let utility = si % spec.k_t;
        let privacy = match spec.mode {
            LabelMode::Identity => PrivacyLabel::Identity(si % spec.k_b),
            LabelMode::Attributes => {
                let mut attrs = vec![0u8; spec.k_b];
                for (a, v) in attrs.iter_mut().enumerate() {
                    if rng.gen_bool(0.4) || a == si % spec.k_b {
                        *v = 1;
                    }
                }
                PrivacyLabel::Attributes(attrs)
            }
        };
        let plan = ClipPlan { utility, privacy };
        let sample = match spec.mode {
            LabelMode::Identity => render_identity_clip(spec, &plan, &mut rng),
            LabelMode::Attributes => render_attribute_clip(spec, &plan, &mut rng),
        };
        samples.push(sample);
        split_tags.push(split);
    }

    Ok(DualLabeledDataset {
        samples,
        split_tags,
        generator_spec: spec.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            train_samples: 40,
            eval_samples: 20,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_dataset(&spec, 7).unwrap();
        let b = generate_dataset(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_are_disjoint_and_class_complete() {
        let spec = small_spec();
        let ds = generate_dataset(&spec, 3).unwrap();
        let train: HashSet<_> = ds.train_indices().into_iter().collect();
        let eval: HashSet<_> = ds.eval_indices().into_iter().collect();
        assert!(train.is_disjoint(&eval));
        assert_eq!(train.len() + eval.len(), ds.samples.len());
        for split in [Split::Train, Split::Eval] {
            let idx = ds.indices(split);
            let utils: HashSet<_> = idx.iter().map(|&i| ds.samples[i].utility_label).collect();
            assert_eq!(utils.len(), spec.k_t);
            let ids: HashSet<_> = idx
                .iter()
                .map(|&i| match ds.samples[i].privacy_label {
                    PrivacyLabel::Identity(id) => id,
                    _ => unreachable!(),
                })
                .collect();
            assert_eq!(ids.len(), spec.k_b);
        }
    }

    #[test]
    fn attribute_mode_covers_every_attribute() {
        let spec = SyntheticSpec {
            train_samples: 40,
            eval_samples: 20,
            ..SyntheticSpec::default_attributes()
        };
        let ds = generate_dataset(&spec, 5).unwrap();
        for split in [Split::Train, Split::Eval] {
            let mut seen = vec![false; spec.k_b];
            for &i in &ds.indices(split) {
                if let PrivacyLabel::Attributes(a) = &ds.samples[i].privacy_label {
                    for (k, &v) in a.iter().enumerate() {
                        if v != 0 {
                            seen[k] = true;
                        }
                    }
                }
            }
            assert!(seen.iter().all(|&s| s), "attribute missing from a split");
        }
    }

    #[test]
    fn pixels_bounded_and_region_recorded() {
        let ds = generate_dataset(&small_spec(), 11).unwrap();
        for s in &ds.samples {
            assert!(s.frames.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let r = s.region.expect("generated samples carry a region");
            assert!(r.h > 0 && r.w > 0);
            assert!((r.y + r.h) as usize <= 32 && (r.x + r.w) as usize <= 32);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = small_spec();
        spec.k_b = 1;
        assert!(generate_dataset(&spec, 0).is_err());
    }
}
