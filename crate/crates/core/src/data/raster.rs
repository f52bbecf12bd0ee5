//! Stroke rasterization and value-noise textures.

use rand::Rng;

/// A polyline in glyph space, `[0, 1]^2` with y pointing down.
pub type Stroke = &'static [(f64, f64)];

/// Affine placement of glyph space onto the pixel grid.
#[derive(Clone, Copy, Debug)]
pub struct Placement {
    pub size: usize,
    /// Glyph-space unit length in pixels.
    pub scale: f64,
    /// Radians, counter-clockwise on screen.
    pub rotation: f64,
    pub shift: (f64, f64),
    /// Stroke width in pixels.
    pub thickness: f64,
}

impl Placement {
    fn to_pixels(self, (u, v): (f64, f64)) -> (f64, f64) {
        let (du, dv) = ((u - 0.5) * self.scale, (v - 0.5) * self.scale);
        let (s, c) = self.rotation.sin_cos();
        // screen y points down, so a counter-clockwise turn negates the sine
        let x = c * du + s * dv;
        let y = -s * du + c * dv;
        let mid = self.size as f64 / 2.0;
        (mid + x + self.shift.0, mid + y + self.shift.1)
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Binary `size x size` mask: a pixel is set when its centre lies within
/// half the stroke width of any segment.
pub fn rasterize(strokes: &[Stroke], place: &Placement) -> Vec<bool> {
    let segments: Vec<((f64, f64), (f64, f64))> = strokes
        .iter()
        .flat_map(|s| s.windows(2).map(|w| (place.to_pixels(w[0]), place.to_pixels(w[1]))))
        .collect();
    let half = place.thickness / 2.0;
    let n = place.size;
    let mut mask = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            mask[y * n + x] = segments
                .iter()
                .any(|&(a, b)| segment_distance(p, a, b) <= half);
        }
    }
    mask
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of value noise on a `cells x cells` lattice.
fn octave<R: Rng>(rng: &mut R, size: usize, cells: usize) -> Vec<f64> {
    let side = cells + 1;
    let lattice: Vec<f64> = (0..side * side).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let fx = (x as f64 + 0.5) / size as f64 * cells as f64;
            let fy = (y as f64 + 0.5) / size as f64 * cells as f64;
            let (ix, iy) = ((fx as usize).min(cells - 1), (fy as usize).min(cells - 1));
            let (tx, ty) = (smoothstep(fx - ix as f64), smoothstep(fy - iy as f64));
            let at = |i: usize, j: usize| lattice[j * side + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Per-channel value-noise texture in `[0, ceiling]`, HWC layout. Each
/// channel is contrast-stretched to its own random sub-range.
pub fn value_noise<R: Rng>(rng: &mut R, size: usize, channels: usize, ceiling: f64) -> Vec<f64> {
    let mut planes = Vec::with_capacity(channels);
    for _ in 0..channels {
        let coarse = octave(rng, size, 2);
        let fine = octave(rng, size, 4);
        let mut plane: Vec<f64> = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (2.0 * a + b) / 3.0)
            .collect();
        let (lo, hi) = plane
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let a: f64 = ceiling * rng.random::<f64>();
        let b: f64 = ceiling * rng.random::<f64>();
        let (out_lo, out_hi) = (a.min(b), a.max(b));
        let span = (hi - lo).max(1e-12);
        for v in &mut plane {
            *v = out_lo + (*v - lo) / span * (out_hi - out_lo);
        }
        planes.push(plane);
    }
    let mut out = Vec::with_capacity(size * size * channels);
    for i in 0..size * size {
        for p in &planes {
            out.push(p[i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn horizontal_stroke_covers_its_row() {
        let place = Placement {
            size: 8,
            scale: 8.0,
            rotation: 0.0,
            shift: (0.0, 0.0),
            thickness: 1.0,
        };
        let mask = rasterize(&[&[(0.0, 0.5625), (1.0, 0.5625)]], &place);
        let set: Vec<usize> = (0..64).filter(|&i| mask[i]).collect();
        assert_eq!(set, (32..40).collect::<Vec<_>>());
    }

    #[test]
    fn quarter_turn_maps_vertical_to_horizontal() {
        let upright = Placement {
            size: 9,
            scale: 9.0,
            rotation: 0.0,
            shift: (0.0, 0.0),
            thickness: 1.0,
        };
        let turned = Placement {
            rotation: std::f64::consts::FRAC_PI_2,
            ..upright
        };
        let stroke: &[Stroke] = &[&[(0.5, 0.0), (0.5, 1.0)]];
        let a = rasterize(stroke, &upright);
        let b = rasterize(stroke, &turned);
        for y in 0..9 {
            for x in 0..9 {
                assert_eq!(a[y * 9 + x], b[x * 9 + y]);
            }
        }
    }

    #[test]
    fn noise_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = value_noise(&mut rng, 16, 3, 1.0);
        assert_eq!(t.len(), 16 * 16 * 3);
        assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
