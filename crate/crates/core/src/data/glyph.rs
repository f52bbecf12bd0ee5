//! Glyph-based image scenarios: digit-like glyphs and rotated shapes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::raster::{rasterize, value_noise, Placement, Stroke};
use super::{Domain, RawSet};
use crate::losses::Quaternion;

pub const GLYPH_SIZE: usize = 16;
pub const CHANNELS: usize = 3;

/// Stroke programs for the ten digit-like classes.
pub const DIGITS: [&[Stroke]; 10] = [
    &[&[
        (0.5, 0.12),
        (0.74, 0.25),
        (0.78, 0.5),
        (0.74, 0.75),
        (0.5, 0.88),
        (0.26, 0.75),
        (0.22, 0.5),
        (0.26, 0.25),
        (0.5, 0.12),
    ]],
    &[&[(0.36, 0.3), (0.52, 0.14), (0.52, 0.86)], &[(0.36, 0.86), (0.68, 0.86)]],
    &[&[(0.26, 0.27), (0.5, 0.13), (0.74, 0.3), (0.26, 0.86), (0.76, 0.86)]],
    &[&[
        (0.26, 0.14),
        (0.74, 0.14),
        (0.46, 0.46),
        (0.74, 0.64),
        (0.6, 0.86),
        (0.26, 0.82),
    ]],
    &[&[(0.64, 0.86), (0.64, 0.14), (0.22, 0.62), (0.8, 0.62)]],
    &[&[
        (0.74, 0.14),
        (0.3, 0.14),
        (0.28, 0.47),
        (0.7, 0.5),
        (0.73, 0.78),
        (0.26, 0.86),
    ]],
    &[&[
        (0.7, 0.14),
        (0.3, 0.5),
        (0.28, 0.84),
        (0.72, 0.84),
        (0.72, 0.55),
        (0.3, 0.55),
    ]],
    &[&[(0.24, 0.14), (0.76, 0.14), (0.4, 0.86)], &[(0.38, 0.5), (0.66, 0.5)]],
    &[
        &[(0.5, 0.13), (0.72, 0.31), (0.5, 0.49), (0.28, 0.31), (0.5, 0.13)],
        &[(0.5, 0.49), (0.76, 0.68), (0.5, 0.87), (0.24, 0.68), (0.5, 0.49)],
    ],
    &[&[
        (0.72, 0.46),
        (0.3, 0.46),
        (0.3, 0.14),
        (0.72, 0.14),
        (0.72, 0.86),
        (0.34, 0.86),
    ]],
];

/// Five shapes without rotational symmetry for the pose scenario.
pub const SHAPES: [&[Stroke]; 5] = [
    // L
    &[&[(0.3, 0.12), (0.3, 0.86), (0.72, 0.86)]],
    // F
    &[&[(0.72, 0.14), (0.3, 0.14), (0.3, 0.88)], &[(0.3, 0.48), (0.6, 0.48)]],
    // arrow
    &[&[(0.5, 0.88), (0.5, 0.14)], &[(0.28, 0.36), (0.5, 0.14), (0.72, 0.36)]],
    // hook
    &[&[(0.66, 0.12), (0.66, 0.72), (0.52, 0.86), (0.32, 0.86), (0.26, 0.68)]],
    // flag
    &[&[(0.3, 0.88), (0.3, 0.12), (0.76, 0.3), (0.3, 0.48)]],
];

/// Glyph placement jitter.
#[derive(Clone, Debug, PartialEq)]
pub struct Jitter {
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
    pub thickness: (f64, f64),
    pub scale: (f64, f64),
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            max_rotation_deg: 15.0,
            max_shift_px: 2.0,
            thickness: (1.0, 2.0),
            scale: (12.0, 14.0),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn place(rng: &mut ChaCha8Rng, jitter: &Jitter, rotation: f64) -> Placement {
    let s = jitter.max_shift_px;
    Placement {
        size: GLYPH_SIZE,
        scale: uniform(rng, jitter.scale.0, jitter.scale.1),
        rotation,
        shift: (uniform(rng, -s, s), uniform(rng, -s, s)),
        thickness: uniform(rng, jitter.thickness.0, jitter.thickness.1),
    }
}

/// White-on-black rendering of a mask, three equal channels.
pub fn render_source(mask: &[bool]) -> Vec<f64> {
    mask.iter()
        .flat_map(|&m| [if m { 1.0 } else { 0.0 }; CHANNELS])
        .collect()
}

/// Uses `mask` to invert the colours of `background` (HWC).
pub fn render_inverted(mask: &[bool], background: &[f64]) -> Vec<f64> {
    background
        .iter()
        .enumerate()
        .map(|(i, &b)| if mask[i / CHANNELS] { 1.0 - b } else { b })
        .collect()
}

/// Class sequence with every class appearing `n / classes` times (plus the
/// remainder spread over the first classes), in round-robin order.
pub(crate) fn stratified_labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % classes).collect()
}

pub(crate) fn generate_glyphs(
    rng: &mut ChaCha8Rng,
    n: usize,
    domain: Domain,
    jitter: &Jitter,
    texture_ceiling: f64,
) -> RawSet {
    let labels = stratified_labels(n, DIGITS.len());
    let mut pixels = Vec::with_capacity(n * GLYPH_SIZE * GLYPH_SIZE * CHANNELS);
    for &label in &labels {
        let rot = uniform(rng, -jitter.max_rotation_deg, jitter.max_rotation_deg).to_radians();
        let p = place(rng, jitter, rot);
        let mask = rasterize(DIGITS[label], &p);
        match domain {
            Domain::Source => pixels.extend(render_source(&mask)),
            Domain::Target => {
                let bg = value_noise(rng, GLYPH_SIZE, CHANNELS, texture_ceiling);
                pixels.extend(render_inverted(&mask, &bg));
            }
        }
    }
    RawSet {
        pixels,
        sample_shape: vec![GLYPH_SIZE, GLYPH_SIZE, CHANNELS],
        labels,
        poses: None,
        classes: DIGITS.len(),
    }
}

/// Pose scenario settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseParams {
    /// Poses are drawn uniformly from `[-max_angle, max_angle]` degrees.
    pub max_angle_deg: f64,
    /// Std of additive pixel noise in the target domain.
    pub target_noise: f64,
}

impl Default for PoseParams {
    fn default() -> Self {
        PoseParams {
            max_angle_deg: 180.0,
            target_noise: 0.1,
        }
    }
}

pub(crate) fn generate_poses(
    rng: &mut ChaCha8Rng,
    n: usize,
    domain: Domain,
    params: &PoseParams,
    texture_ceiling: f64,
) -> RawSet {
    let jitter = Jitter {
        max_rotation_deg: 0.0,
        max_shift_px: 1.0,
        thickness: (1.5, 2.0),
        scale: (12.0, 13.0),
    };
    let labels = stratified_labels(n, SHAPES.len());
    let mut poses = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * GLYPH_SIZE * GLYPH_SIZE * CHANNELS);
    for &label in &labels {
        let phi = uniform(rng, -params.max_angle_deg, params.max_angle_deg).to_radians();
        let p = place(rng, &jitter, phi);
        let mask = rasterize(SHAPES[label], &p);
        poses.push(Quaternion::about_z(phi));
        match domain {
            Domain::Source => pixels.extend(render_source(&mask)),
            Domain::Target => {
                let bg = value_noise(rng, GLYPH_SIZE, CHANNELS, texture_ceiling);
                let img = render_inverted(&mask, &bg);
                let normal = rand_distr::Normal::new(0.0, params.target_noise.max(0.0))
                    .expect("finite noise");
                pixels.extend(img.into_iter().map(|v| {
                    let noisy = v + rand_distr::Distribution::sample(&normal, rng);
                    noisy.clamp(0.0, 1.0)
                }));
            }
        }
    }
    RawSet {
        pixels,
        sample_shape: vec![GLYPH_SIZE, GLYPH_SIZE, CHANNELS],
        labels,
        poses: Some(poses),
        classes: SHAPES.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn every_digit_renders_ink() {
        for (class, strokes) in DIGITS.iter().enumerate() {
            let p = Placement {
                size: GLYPH_SIZE,
                scale: 13.0,
                rotation: 0.0,
                shift: (0.0, 0.0),
                thickness: 1.5,
            };
            let ink = rasterize(strokes, &p).iter().filter(|&&m| m).count();
            assert!(ink > 12 && ink < 140, "class {class} has {ink} pixels");
        }
    }

    #[test]
    fn digits_are_pairwise_distinct() {
        let p = Placement {
            size: GLYPH_SIZE,
            scale: 13.0,
            rotation: 0.0,
            shift: (0.0, 0.0),
            thickness: 1.5,
        };
        let masks: Vec<Vec<bool>> = DIGITS.iter().map(|s| rasterize(s, &p)).collect();
        for i in 0..10 {
            for j in i + 1..10 {
                let diff = masks[i].iter().zip(&masks[j]).filter(|(a, b)| a != b).count();
                assert!(diff >= 10, "classes {i} and {j} differ in only {diff} pixels");
            }
        }
    }

    #[test]
    fn inversion_inside_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bg = value_noise(&mut rng, GLYPH_SIZE, CHANNELS, 1.0);
        let mask: Vec<bool> = (0..GLYPH_SIZE * GLYPH_SIZE).map(|i| i % 3 == 0).collect();
        let img = render_inverted(&mask, &bg);
        for (i, (&v, &b)) in img.iter().zip(&bg).enumerate() {
            let expected = if mask[i / CHANNELS] { 1.0 - b } else { b };
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn stratified_counts() {
        let labels = stratified_labels(50, 10);
        for c in 0..10 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 5);
        }
    }
}
