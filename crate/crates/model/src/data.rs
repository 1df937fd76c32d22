//! Training data: labelled patches in memory and a seeded batch stream.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use til_core::annotation::{AnnotationManifest, Label, LabelCounts};
use til_core::tiling::PatchImage;
use til_core::TilError;

use crate::augment::augment;
use crate::config::AugmentationConfig;
use crate::elem::Elem;
use crate::error::{ModelError, Result};
use crate::preprocess::to_tensor;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dataset {
    patches: Vec<PatchImage>,
    labels: Vec<bool>,
}

impl Dataset {
    pub fn new(patches: Vec<PatchImage>, labels: Vec<bool>) -> Result<Self> {
        if patches.len() != labels.len() {
            return Err(TilError::LengthMismatch {
                left: patches.len(),
                right: labels.len(),
            }
            .into());
        }
        Ok(Self { patches, labels })
    }

    /// Loads every patch referenced by the manifest.
    pub fn from_manifest(manifest: &AnnotationManifest) -> Result<Self> {
        let mut patches = Vec::with_capacity(manifest.len());
        let mut labels = Vec::with_capacity(manifest.len());
        for r in manifest.records() {
            let mut p = PatchImage::load(&manifest.resolve_patch_path(r))?;
            p.grid_x = r.grid_x;
            p.grid_y = r.grid_y;
            patches.push(p);
            labels.push(r.label.is_positive());
        }
        Ok(Self { patches, labels })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[PatchImage] {
        &self.patches
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for &l in &self.labels {
            c.add(Label::from_positive(l));
        }
        c
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let c = self.label_counts();
        if c.positives == 0 || c.negatives == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "training data needs both labels, got {} positive and {} negative",
                c.positives, c.negatives
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Batch<E> {
    pub epoch: u64,
    /// Dataset indices in batch order.
    pub indices: Vec<usize>,
    pub inputs: Tensor<E>,
    pub labels: Vec<bool>,
}

/// Per-epoch shuffled, augmented batches. The shuffle for epoch `e` depends
/// only on `(seed, e)`; augmentation draws from one stream seeded by the
/// augmentation config, so a fixed pair of seeds gives identical batches.
pub struct BatchStream<'a> {
    data: &'a Dataset,
    aug: AugmentationConfig,
    input_px: u32,
    batch_size: usize,
    seed: u64,
    oversample_positives: bool,
    aug_rng: ChaCha8Rng,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        data: &'a Dataset,
        aug: AugmentationConfig,
        input_px: u32,
        batch_size: usize,
        seed: u64,
        oversample_positives: bool,
    ) -> Self {
        let mut s = Self {
            data,
            aug,
            input_px,
            batch_size: batch_size.max(1),
            seed,
            oversample_positives,
            aug_rng: ChaCha8Rng::seed_from_u64(aug.rng_seed),
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.order = s.epoch_order(0);
        s
    }

    /// Sample order for one epoch, including oversampled repeats.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        if self.oversample_positives {
            let pos: Vec<usize> = order.iter().copied().filter(|&i| self.data.labels[i]).collect();
            let neg = self.data.len() - pos.len();
            if !pos.is_empty() {
                order.extend(pos.iter().cycle().take(neg.saturating_sub(pos.len())));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    pub fn epoch_label_counts(&self, epoch: u64) -> LabelCounts {
        let mut c = LabelCounts::default();
        for i in self.epoch_order(epoch) {
            c.add(Label::from_positive(self.data.labels[i]));
        }
        c
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch<E: Elem>(&mut self) -> Batch<E> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.order = self.epoch_order(self.epoch);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let augmented: Vec<PatchImage> = indices
            .iter()
            .map(|&i| augment(&self.data.patches[i], &self.aug, &mut self.aug_rng))
            .collect();
        Batch {
            epoch: self.epoch,
            labels: indices.iter().map(|&i| self.data.labels[i]).collect(),
            inputs: to_tensor(augmented.iter().map(|p| &p.pixels), self.input_px),
            indices,
        }
    }

    /// True when the next call to [`BatchStream::next_batch`] starts a new epoch.
    pub fn at_epoch_end(&self) -> bool {
        self.cursor >= self.order.len()
    }
}
