//! Procedural source/target datasets.
//!
//! Three scenarios are available: `glyph16` (digit-like glyphs, white on
//! black versus inverted over a noise texture), `blobs2d` (Gaussian blobs
//! with a rotated and shifted target) and `pose_glyph` (rotated shapes with a
//! quaternion pose label). Generation is a pure function of the
//! [`ScenarioSpec`], driven by ChaCha8 streams.

mod batch;
mod blobs;
mod dump;
mod glyph;
pub mod raster;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::Quaternion;
use crate::tensor::Tensor;

pub use batch::{BatchIterator, DomainBatch};
pub use blobs::BlobParams;
pub use dump::{dump_dataset, encode_pgm, encode_ppm, to_byte};
pub use glyph::{Jitter, PoseParams, CHANNELS, DIGITS, GLYPH_SIZE, SHAPES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Domain label used by the domain classifier: 0 for source, 1 for target.
    pub fn label(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    fn stream(self) -> u64 {
        self.label() as u64 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Glyph16,
    Blobs2d,
    PoseGlyph,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Glyph16, Scenario::Blobs2d, Scenario::PoseGlyph];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Glyph16 => "glyph16",
            Scenario::Blobs2d => "blobs2d",
            Scenario::PoseGlyph => "pose_glyph",
        }
    }

    /// Per-sample input shape.
    pub fn sample_shape(self) -> Vec<usize> {
        match self {
            Scenario::Blobs2d => vec![2],
            _ => vec![GLYPH_SIZE, GLYPH_SIZE, CHANNELS],
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Scenario::Glyph16 => DIGITS.len(),
            Scenario::Blobs2d => blobs::CLASSES,
            Scenario::PoseGlyph => SHAPES.len(),
        }
    }

    pub fn has_pose(self) -> bool {
        self == Scenario::PoseGlyph
    }

    pub fn is_image(self) -> bool {
        self != Scenario::Blobs2d
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario `{s}`")))
    }
}

/// Scenario-specific generation knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseParams {
    pub jitter: Jitter,
    pub blobs: BlobParams,
    pub pose: PoseParams,
    /// Upper end of the target background texture range, in `(0, 1]`.
    pub texture_ceiling: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            jitter: Jitter::default(),
            blobs: BlobParams::default(),
            pose: PoseParams::default(),
            texture_ceiling: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Samples per domain used for training.
    pub train_size: usize,
    /// Held-out samples per domain used for evaluation.
    pub eval_size: usize,
    pub noise: NoiseParams,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, train_size: usize, eval_size: usize, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            train_size,
            eval_size,
            noise: NoiseParams::default(),
            seed,
        }
    }

    pub fn image_shape(&self) -> Vec<usize> {
        self.scenario.sample_shape()
    }

    pub fn classes(&self) -> usize {
        self.scenario.classes()
    }
}

/// One labeled example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f64>,
    pub class_label: usize,
    pub pose: Option<Quaternion>,
    pub domain: Domain,
}

/// Generator output before normalization, values in `[0, 1]` for images.
pub(crate) struct RawSet {
    pub pixels: Vec<f64>,
    pub sample_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub poses: Option<Vec<Quaternion>>,
    pub classes: usize,
}

/// A batch-major set of samples from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, ...sample_shape]`.
    pub images: Tensor<f64>,
    pub labels: Vec<usize>,
    pub poses: Option<Vec<Quaternion>>,
    pub classes: usize,
    pub domain: Domain,
}

impl Dataset {
    pub fn new(
        images: Tensor<f64>,
        labels: Vec<usize>,
        poses: Option<Vec<Quaternion>>,
        classes: usize,
        domain: Domain,
    ) -> Result<Self> {
        if images.rank() < 2 || images.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "dataset: {} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("dataset: label {bad} outside {classes} classes")));
        }
        if poses.as_ref().is_some_and(|p| p.len() != labels.len()) {
            return Err(Error::invalid("dataset: pose count differs from label count"));
        }
        Ok(Dataset {
            images,
            labels,
            poses,
            classes,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample(&self, i: usize) -> Sample {
        let shape = self.sample_shape().to_vec();
        let row = self.images.row(i);
        Sample {
            image: Tensor::new(&shape, row.to_vec()).expect("row matches sample shape"),
            class_label: self.labels[i],
            pose: self.poses.as_ref().map(|p| p[i]),
            domain: self.domain,
        }
    }

    /// Images at `indices`, stacked in order.
    pub fn gather_images(&self, indices: &[usize]) -> Tensor<f64> {
        let width = self.images.row_len();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Tensor::new(&shape, data).expect("gather of existing rows")
    }

    /// A new dataset holding the samples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.gather_images(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            poses: self
                .poses
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
            classes: self.classes,
            domain: self.domain,
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    pub source_train: Dataset,
    pub source_eval: Dataset,
    pub target_train: Dataset,
    pub target_eval: Dataset,
}

/// Centers a pool on its mean and scales by the largest deviation, so values
/// land in `[-1, 1]` and the pool mean is zero.
pub fn mean_center(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let spread = values
        .iter()
        .fold(0.0f64, |m, &v| m.max((v - mean).abs()))
        .max(1e-12);
    for v in values.iter_mut() {
        *v = ((*v - mean) / spread).clamp(-1.0, 1.0);
    }
}

fn domain_rng(seed: u64, domain: Domain) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain.stream());
    rng
}

fn raw_for(spec: &ScenarioSpec, domain: Domain) -> RawSet {
    let n = spec.train_size + spec.eval_size;
    let mut rng = domain_rng(spec.seed, domain);
    match spec.scenario {
        Scenario::Glyph16 => glyph::generate_glyphs(&mut rng, n, domain, &spec.noise.jitter, spec.noise.texture_ceiling),
        Scenario::Blobs2d => blobs::generate(&mut rng, n, domain, &spec.noise.blobs),
        Scenario::PoseGlyph => glyph::generate_poses(&mut rng, n, domain, &spec.noise.pose, spec.noise.texture_ceiling),
    }
}

fn split(raw: RawSet, train: usize, domain: Domain, images_normalized: bool) -> (Dataset, Dataset) {
    let RawSet {
        mut pixels,
        sample_shape,
        labels,
        poses,
        classes,
    } = raw;
    if images_normalized {
        mean_center(&mut pixels);
    }
    let mut shape = vec![labels.len()];
    shape.extend_from_slice(&sample_shape);
    let all = Dataset {
        images: Tensor::new(&shape, pixels).expect("generator emits consistent shapes"),
        labels,
        poses,
        classes,
        domain,
    };
    let n = all.len();
    let train_idx: Vec<usize> = (0..train).collect();
    let eval_idx: Vec<usize> = (train..n).collect();
    (all.subset(&train_idx), all.subset(&eval_idx))
}

/// Generates train and eval sets for both domains.
pub fn generate(spec: &ScenarioSpec) -> Result<DomainPair> {
    if spec.train_size == 0 || spec.eval_size == 0 {
        return Err(Error::invalid("scenario: train and eval sizes must be positive"));
    }
    let image = spec.scenario.is_image();
    let (source_train, source_eval) =
        split(raw_for(spec, Domain::Source), spec.train_size, Domain::Source, image);
    let (target_train, target_eval) =
        split(raw_for(spec, Domain::Target), spec.train_size, Domain::Target, image);
    Ok(DomainPair {
        source_train,
        source_eval,
        target_train,
        target_eval,
    })
}

pub fn generate_glyph16(spec: &ScenarioSpec) -> Result<DomainPair> {
    generate(&ScenarioSpec {
        scenario: Scenario::Glyph16,
        ..spec.clone()
    })
}

pub fn generate_blobs2d(spec: &ScenarioSpec) -> Result<DomainPair> {
    generate(&ScenarioSpec {
        scenario: Scenario::Blobs2d,
        ..spec.clone()
    })
}

pub fn generate_pose_glyph(spec: &ScenarioSpec) -> Result<DomainPair> {
    generate(&ScenarioSpec {
        scenario: Scenario::PoseGlyph,
        ..spec.clone()
    })
}
