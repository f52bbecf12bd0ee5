//! Reconstruction grids: one row per sample, columns original, combined,
//! shared-only and private-only decodings.

use std::fs;
use std::path::{Path, PathBuf};

use dsn_core::data::{encode_ppm, generate, to_byte, Dataset};
use dsn_core::layers::Group;
use dsn_core::model::{DecodeMode, DsnModel};
use dsn_core::tensor::Tensor;
use dsn_core::{Error, Real, Result};

pub const COLUMNS: usize = 4;

/// Zeroes both private encoders, leaving the shared path untouched.
pub fn zero_private<T: Real>(model: &mut DsnModel<T>) {
    for (group, _, t) in model.params.iter_mut() {
        if matches!(group, Group::PrivateSource | Group::PrivateTarget) {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// RGB bytes of a `n x 4` grid of `h x w` tiles for the first `n` images.
pub fn grid<T: Real>(model: &DsnModel<T>, images: &Tensor<f64>, target: bool) -> Result<(usize, usize, Vec<u8>)> {
    let shape = images.shape();
    let [n, h, w, 3] = *shape else {
        return Err(Error::invalid(format!("reconstruction grid needs RGB images, got {shape:?}")));
    };
    let columns = [
        images.clone(),
        model.decode_partial(images, target, DecodeMode::Combined)?,
        model.decode_partial(images, target, DecodeMode::SharedOnly)?,
        model.decode_partial(images, target, DecodeMode::PrivateOnly)?,
    ];
    let width = COLUMNS * w;
    let mut rgb = vec![0u8; n * h * width * 3];
    for (c, col) in columns.iter().enumerate() {
        for i in 0..n {
            let tile = col.row(i);
            for y in 0..h {
                let src = &tile[y * w * 3..(y + 1) * w * 3];
                let start = ((i * h + y) * width + c * w) * 3;
                for (d, &v) in rgb[start..start + w * 3].iter_mut().zip(src) {
                    *d = to_byte(v);
                }
            }
        }
    }
    Ok((width, n * h, rgb))
}

fn first(set: &Dataset, count: usize) -> Result<Tensor<f64>> {
    set.images.slice_rows(0, count.min(set.len()))
}

/// Writes `recon_source.ppm` and `recon_target.ppm` into `dir` for the first
/// `count` held-out samples of each domain.
pub fn dump<T: Real>(
    model: &DsnModel<T>,
    spec: &dsn_core::data::ScenarioSpec,
    count: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::invalid("reconstruction count must be positive"));
    }
    let data = generate(spec)?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, set, target) in [("source", &data.source_eval, false), ("target", &data.target_eval, true)] {
        let (w, h, rgb) = grid(model, &first(set, count)?, target)?;
        let path = dir.join(format!("recon_{name}.ppm"));
        fs::write(&path, encode_ppm(w, h, &rgb))?;
        written.push(path);
    }
    Ok(written)
}
