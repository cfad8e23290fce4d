//! Labeled image corpora, splitting and batching.

pub mod folder;
pub mod idx;
pub mod proxy;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use folder::{load_image_folder, write_image_folder, FolderSpec};
pub use idx::{load_idx, load_mnist, write_idx_images, write_idx_labels};
pub use proxy::make_synthetic_proxy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

/// `N x 1 x H x W` images in `[0, 1]` with labels in `[0, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
    class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let names = (0..classes).map(|c| c.to_string()).collect();
        Self::with_names(images, labels, names, split)
    }

    pub fn with_names(
        images: Tensor<f32>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        let classes = class_names.len();
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::Shape(format!("dataset images must be N x 1 x H x W, got {shape:?}")));
        }
        if shape[0] == 0 {
            return Err(Error::Input("dataset is empty".into()));
        }
        if labels.len() != shape[0] {
            return Err(Error::Consistency(format!(
                "{} labels for {} images",
                labels.len(),
                shape[0]
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Consistency(format!("label {bad} outside [0, {classes})")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Consistency("image values must lie in [0, 1]".into()));
        }
        Ok(LabeledDataset {
            images,
            labels,
            classes,
            split,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Per-sample shape `[1, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Input(format!("index {bad} outside dataset of {}", self.len())));
        }
        Self::with_names(
            self.images.select(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
            split,
        )
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.split)
    }

    /// Indices of the samples of each class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }
}

pub(crate) fn class_rng(seed: u64, class: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Splits `ds` into `n` training and `m` test samples per class, drawn by a
/// seeded per-class shuffle. Every class needs at least `n + m` samples.
pub fn split_per_class(ds: &LabeledDataset, n: usize, m: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        if idx.len() < n + m {
            return Err(Error::Input(format!(
                "class `{}` has {} samples, {} needed",
                ds.class_names[c],
                idx.len(),
                n + m
            )));
        }
        idx.shuffle(&mut class_rng(seed, c));
        train.extend_from_slice(&idx[..n]);
        test.extend_from_slice(&idx[n..n + m]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train, Split::Train)?, ds.subset(&test, Split::Test)?))
}

/// Index batches for one epoch: a seeded permutation of `0..n` cut into
/// chunks of `size`; the final short chunk is kept unless `drop_last`.
pub fn epoch_batches(n: usize, size: usize, seed: u64, epoch: u64, drop_last: bool) -> Result<Vec<Vec<usize>>> {
    if size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch.wrapping_mul(0xA076_1D64_78BD_642F))));
    Ok(order
        .chunks(size)
        .filter(|c| !drop_last || c.len() == size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// A minibatch of images with their labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Endless stream of shuffled minibatches, epoch after epoch.
#[derive(Clone, Debug)]
pub struct Sampler<'a> {
    ds: &'a LabeledDataset,
    size: usize,
    seed: u64,
    drop_last: bool,
    epoch: u64,
    pending: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> Sampler<'a> {
    /// Full batches only, unless the dataset is smaller than one batch.
    pub fn new(ds: &'a LabeledDataset, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Sampler {
            ds,
            size,
            seed,
            drop_last: ds.len() >= size,
            epoch: 0,
            pending: Vec::new().into_iter(),
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self) -> Batch {
        let idx = loop {
            if let Some(b) = self.pending.next() {
                break b;
            }
            let batches = epoch_batches(self.ds.len(), self.size, self.seed, self.epoch, self.drop_last)
                .expect("batch size checked in constructor");
            self.epoch += 1;
            self.pending = batches.into_iter();
        };
        Batch {
            images: self.ds.images.select(&idx),
            labels: idx.iter().map(|&i| self.ds.labels[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, k: usize) -> LabeledDataset {
        let images = Tensor::from_fn(vec![n, 1, 2, 2], |i| (i % 5) as f32 / 4.0);
        LabeledDataset::new(images, (0..n).map(|i| i % k).collect(), k, Split::All).unwrap()
    }

    #[test]
    fn invariants_checked() {
        let bad = Tensor::from_fn(vec![2, 1, 1, 1], |i| i as f32 * 2.0);
        assert!(LabeledDataset::new(bad, vec![0, 0], 1, Split::All).is_err());
        let ok = Tensor::zeros(vec![2, 1, 1, 1]);
        assert!(LabeledDataset::new(ok.clone(), vec![0, 2], 2, Split::All).is_err());
        assert!(LabeledDataset::new(ok, vec![0], 2, Split::All).is_err());
    }

    #[test]
    fn batch_sizes_for_ten_by_three() {
        let b = epoch_batches(10, 3, 7, 0, false).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<_> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(10, 3, 7, 0, false).unwrap());
        assert_ne!(b, epoch_batches(10, 3, 7, 1, false).unwrap());
    }

    #[test]
    fn per_class_split_is_disjoint_and_seeded() {
        let ds = tiny(60, 3);
        let (tr, te) = split_per_class(&ds, 12, 5, 1).unwrap();
        assert_eq!(tr.class_counts(), vec![12; 3]);
        assert_eq!(te.class_counts(), vec![5; 3]);
        let (tr2, _) = split_per_class(&ds, 12, 5, 1).unwrap();
        assert_eq!(tr, tr2);
        assert!(split_per_class(&ds, 20, 1, 1).is_err());
    }

    #[test]
    fn sampler_cycles_epochs_with_full_batches() {
        let ds = tiny(10, 2);
        let mut s = Sampler::new(&ds, 4, 0).unwrap();
        for _ in 0..5 {
            assert_eq!(s.next_batch().labels.len(), 4);
        }
        assert!(s.epoch() >= 2);
    }
}
