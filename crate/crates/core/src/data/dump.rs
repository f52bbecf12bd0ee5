//! Binary PGM/PPM output and dataset dumps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, DomainPair};
use crate::error::{Error, Result};

/// Maps `[-1, 1]` to `[0, 255]`, clamping outside values. NaN maps to 0.
pub fn to_byte(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Binary PPM (`P6`) for `width x height` RGB pixels.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "ppm payload size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Binary PGM (`P5`) for `width x height` gray pixels.
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height, "pgm payload size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

fn dump_images(set: &Dataset, dir: &Path, prefix: &str, index: &mut String) -> Result<()> {
    let shape = set.sample_shape();
    let (h, w, c) = match *shape {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::invalid(format!("dump: not an image shape {shape:?}"))),
    };
    for i in 0..set.len() {
        let bytes: Vec<u8> = set.images.row(i).iter().map(|&v| to_byte(v)).collect();
        let (name, file) = match c {
            1 => (format!("{prefix}{i:05}.pgm"), encode_pgm(w, h, &bytes)),
            3 => (format!("{prefix}{i:05}.ppm"), encode_ppm(w, h, &bytes)),
            _ => return Err(Error::invalid(format!("dump: {c} channels"))),
        };
        fs::write(dir.join(&name), file)?;
        write_index_line(set, i, &name, index);
    }
    Ok(())
}

fn write_index_line(set: &Dataset, i: usize, name: &str, index: &mut String) {
    let _ = write!(index, "{name}\t{}", set.labels[i]);
    if let Some(q) = set.poses.as_ref().map(|p| p[i]) {
        let _ = write!(index, "\t{} {} {} {}", q.w, q.x, q.y, q.z);
    }
    index.push('\n');
}

fn dump_points(set: &Dataset, prefix: &str, csv: &mut String) {
    for i in 0..set.len() {
        let row = set.images.row(i);
        let _ = writeln!(csv, "{prefix}{i:05},{},{},{}", row[0], row[1], set.labels[i]);
    }
}

/// Writes one directory per domain under `dir`. Image scenarios produce one
/// PPM per sample plus `labels.txt` (`file<TAB>class[<TAB>w x y z]`); point
/// scenarios produce `points.csv`.
pub fn dump_dataset(pair: &DomainPair, dir: &Path) -> Result<()> {
    let domains = [
        ("source", &pair.source_train, &pair.source_eval),
        ("target", &pair.target_train, &pair.target_eval),
    ];
    for (name, train, eval) in domains {
        let sub = dir.join(name);
        fs::create_dir_all(&sub)?;
        if train.sample_shape().len() == 3 {
            let mut index = String::new();
            dump_images(train, &sub, "train_", &mut index)?;
            dump_images(eval, &sub, "eval_", &mut index)?;
            fs::write(sub.join("labels.txt"), index)?;
        } else {
            let mut csv = String::from("id,x,y,class\n");
            dump_points(train, "train_", &mut csv);
            dump_points(eval, "eval_", &mut csv);
            fs::write(sub.join("points.csv"), csv)?;
        }
    }
    Ok(())
}
