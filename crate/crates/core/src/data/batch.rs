//! Paired per-domain minibatches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::losses::Quaternion;
use crate::tensor::Tensor;

/// One training step's data. Target class labels are deliberately absent.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch {
    pub source_images: Tensor<f64>,
    pub source_labels: Vec<usize>,
    pub source_poses: Option<Vec<Quaternion>>,
    pub target_images: Tensor<f64>,
    /// Index of each source sample within its dataset.
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

impl DomainBatch {
    pub fn batch_size(&self) -> usize {
        self.source_labels.len()
    }

    /// Source labels as a one-hot `[B, classes]` tensor.
    pub fn source_one_hot(&self, classes: usize) -> Tensor<f64> {
        let mut data = vec![0.0; self.source_labels.len() * classes];
        for (i, &l) in self.source_labels.iter().enumerate() {
            data[i * classes + l] = 1.0;
        }
        Tensor::new(&[self.source_labels.len(), classes], data).expect("one-hot shape")
    }
}

struct Cursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cursor {
    fn new(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Cursor { order, pos: 0, rng }
    }

    /// Next `b` indices; reshuffles when fewer than `b` remain in the epoch.
    fn take(&mut self, b: usize) -> Vec<usize> {
        if self.pos + b > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + b].to_vec();
        self.pos += b;
        out
    }
}

/// Endless stream of [`DomainBatch`]es with independent shuffles per domain.
/// Each epoch visits every sample at most once; a trailing remainder smaller
/// than the batch size is skipped before reshuffling.
pub struct BatchIterator<'a> {
    source: &'a Dataset,
    target: &'a Dataset,
    batch_size: usize,
    src: Cursor,
    tgt: Cursor,
}

impl<'a> BatchIterator<'a> {
    pub fn new(source: &'a Dataset, target: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::invalid("batch iterator: empty dataset"));
        }
        if batch_size == 0 || batch_size > source.len() || batch_size > target.len() {
            return Err(Error::invalid(format!(
                "batch iterator: batch size {batch_size} exceeds set sizes {} / {}",
                source.len(),
                target.len()
            )));
        }
        Ok(BatchIterator {
            source,
            target,
            batch_size,
            src: Cursor::new(source.len(), seed, 11),
            tgt: Cursor::new(target.len(), seed, 12),
        })
    }

    pub fn next_batch(&mut self) -> DomainBatch {
        let si = self.src.take(self.batch_size);
        let ti = self.tgt.take(self.batch_size);
        DomainBatch {
            source_images: self.source.gather_images(&si),
            source_labels: si.iter().map(|&i| self.source.labels[i]).collect(),
            source_poses: self
                .source
                .poses
                .as_ref()
                .map(|p| si.iter().map(|&i| p[i]).collect()),
            target_images: self.target.gather_images(&ti),
            source_indices: si,
            target_indices: ti,
        }
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = DomainBatch;

    fn next(&mut self) -> Option<DomainBatch> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Scenario, ScenarioSpec};

    fn pair() -> crate::data::DomainPair {
        generate(&ScenarioSpec::new(Scenario::Blobs2d, 60, 10, 5)).unwrap()
    }

    #[test]
    fn epoch_visits_every_sample_once() {
        let p = pair();
        let mut it = BatchIterator::new(&p.source_train, &p.target_train, 12, 1).unwrap();
        for _epoch in 0..3 {
            let mut seen: Vec<usize> = (0..5).flat_map(|_| it.next_batch().source_indices).collect();
            seen.sort();
            assert_eq!(seen, (0..60).collect::<Vec<_>>());
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let p = pair();
        let a: Vec<DomainBatch> = BatchIterator::new(&p.source_train, &p.target_train, 8, 9)
            .unwrap()
            .take(20)
            .collect();
        let b: Vec<DomainBatch> = BatchIterator::new(&p.source_train, &p.target_train, 8, 9)
            .unwrap()
            .take(20)
            .collect();
        assert_eq!(a, b);
        assert_ne!(a[0].source_indices, a[0].target_indices);
    }

    #[test]
    fn batch_contents_match_dataset() {
        let p = pair();
        let b = BatchIterator::new(&p.source_train, &p.target_train, 4, 2)
            .unwrap()
            .next_batch();
        assert_eq!(b.source_images.shape(), &[4, 2]);
        for (k, &i) in b.source_indices.iter().enumerate() {
            assert_eq!(b.source_images.row(k), p.source_train.images.row(i));
            assert_eq!(b.source_labels[k], p.source_train.labels[i]);
        }
        let oh = b.source_one_hot(3);
        assert_eq!(oh.data().iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let p = pair();
        assert!(BatchIterator::new(&p.source_train, &p.target_train, 61, 0).is_err());
        assert!(BatchIterator::new(&p.source_train, &p.target_train, 0, 0).is_err());
    }
}
