//! Three Gaussian blobs in the plane; the target is rotated, shifted and noisier.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Domain, RawSet};
use crate::data::glyph::stratified_labels;

pub const CLASSES: usize = 3;

/// Coordinates are divided by this before clamping to `[-1, 1]`.
pub const SCALE: f64 = 6.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BlobParams {
    /// Distance of each class center from the origin.
    pub radius: f64,
    pub std: f64,
    /// Target-domain rotation about the origin, degrees.
    pub rotation_deg: f64,
    /// Target-domain translation, applied after rotation.
    pub shift: (f64, f64),
    /// Std of extra isotropic noise added to target points.
    pub target_noise: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        BlobParams {
            radius: 2.5,
            std: 0.6,
            rotation_deg: 25.0,
            shift: (1.8, 1.2),
            target_noise: 0.5,
        }
    }
}

impl BlobParams {
    /// Parameters under which both domains share one distribution.
    pub fn unshifted(&self) -> Self {
        BlobParams {
            rotation_deg: 0.0,
            shift: (0.0, 0.0),
            target_noise: 0.0,
            ..self.clone()
        }
    }

    pub fn center(&self, class: usize) -> (f64, f64) {
        let angle = (90.0 + 120.0 * class as f64).to_radians();
        (self.radius * angle.cos(), self.radius * angle.sin())
    }
}

pub(crate) fn generate(rng: &mut ChaCha8Rng, n: usize, domain: Domain, p: &BlobParams) -> RawSet {
    let base = Normal::new(0.0, p.std.max(0.0)).expect("finite std");
    let extra = Normal::new(0.0, p.target_noise.max(0.0)).expect("finite std");
    let (s, c) = p.rotation_deg.to_radians().sin_cos();
    let labels = stratified_labels(n, CLASSES);
    let mut pixels = Vec::with_capacity(2 * n);
    for &label in &labels {
        let (cx, cy) = p.center(label);
        let mut x = cx + base.sample(rng);
        let mut y = cy + base.sample(rng);
        if domain == Domain::Target {
            let (rx, ry) = (c * x - s * y, s * x + c * y);
            x = rx + p.shift.0 + extra.sample(rng);
            y = ry + p.shift.1 + extra.sample(rng);
        }
        pixels.push((x / SCALE).clamp(-1.0, 1.0));
        pixels.push((y / SCALE).clamp(-1.0, 1.0));
    }
    RawSet {
        pixels,
        sample_shape: vec![2],
        labels,
        poses: None,
        classes: CLASSES,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate as generate_pair, Scenario, ScenarioSpec};

    fn class_stats(points: &[f64], labels: &[usize], class: usize) -> (f64, f64, f64) {
        let pts: Vec<(f64, f64)> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| (points[2 * i], points[2 * i + 1]))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let var = pts.iter().map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2)).sum::<f64>() / n;
        (mx, my, var.sqrt())
    }

    #[test]
    fn unshifted_domains_match() {
        let mut spec = ScenarioSpec::new(Scenario::Blobs2d, 6000, 30, 2);
        spec.noise.blobs = BlobParams::default().unshifted();
        let pair = generate_pair(&spec).unwrap();
        let (s, t) = (&pair.source_train, &pair.target_train);
        for class in 0..CLASSES {
            let a = class_stats(s.images.data(), &s.labels, class);
            let b = class_stats(t.images.data(), &t.labels, class);
            assert!((a.0 - b.0).abs() < 0.01 && (a.1 - b.1).abs() < 0.01, "{a:?} {b:?}");
            assert!((a.2 - b.2).abs() < 0.01, "{a:?} {b:?}");
        }
    }

    #[test]
    fn default_target_is_displaced() {
        let spec = ScenarioSpec::new(Scenario::Blobs2d, 3000, 30, 2);
        let pair = generate_pair(&spec).unwrap();
        let (s, t) = (&pair.source_train, &pair.target_train);
        let a = class_stats(s.images.data(), &s.labels, 0);
        let b = class_stats(t.images.data(), &t.labels, 0);
        assert!((a.0 - b.0).hypot(a.1 - b.1) > 0.05);
        assert!(b.2 > a.2);
    }
}
