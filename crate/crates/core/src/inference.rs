//! Whole-slide TIL map inference with any patch classifier.

use chrono::{DateTime, Utc};

use crate::error::{Result, TilError};
use crate::tiling::{extract_patch, tissue_filter, PatchImage, PixelSource, SlideRef, TileGrid, TissueFilterParams};
use crate::tilmap::TilMap;

/// A frozen patch classifier returning TIL-positive probabilities.
///
/// Implementations must be deterministic and batch-size independent, and
/// safe to call from several threads at once.
pub trait PatchScorer: Send + Sync {
    fn model_id(&self) -> &str;

    /// Patch edge length the classifier was trained on, if it cares.
    fn expected_patch_px(&self) -> Option<u32> {
        None
    }

    /// One probability per patch, in input order.
    fn score_patches(&self, patches: &[PatchImage]) -> Result<Vec<f64>>;
}

impl<T: PatchScorer + ?Sized> PatchScorer for &T {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn expected_patch_px(&self) -> Option<u32> {
        (**self).expected_patch_px()
    }

    fn score_patches(&self, patches: &[PatchImage]) -> Result<Vec<f64>> {
        (**self).score_patches(patches)
    }
}

/// Scores patches and checks the scorer's output contract.
pub fn score_checked(model: &dyn PatchScorer, patches: &[PatchImage]) -> Result<Vec<f64>> {
    if patches.is_empty() {
        return Ok(Vec::new());
    }
    let scores = model.score_patches(patches)?;
    if scores.len() != patches.len() {
        return Err(TilError::Scoring(format!(
            "{} returned {} scores for {} patches",
            model.model_id(),
            scores.len(),
            patches.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(TilError::Scoring(format!("{} produced score {bad}", model.model_id())));
    }
    Ok(scores)
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    /// Background cells are not scored: they get probability 0.0 and a mask bit.
    pub tissue_filter: Option<TissueFilterParams>,
    pub batch_size: usize,
    /// Fixed timestamp for reproducible map files.
    pub created_at: Option<DateTime<Utc>>,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            tissue_filter: None,
            batch_size: 128,
            created_at: None,
        }
    }
}

pub fn infer_map(
    slide: &SlideRef,
    source: &dyn PixelSource,
    model: &dyn PatchScorer,
    grid: &TileGrid,
    opts: &InferOptions,
) -> Result<TilMap> {
    if let Some(expected) = model.expected_patch_px() {
        if expected != grid.patch_px {
            return Err(TilError::ModelInputMismatch {
                model: model.model_id().to_string(),
                expected,
                actual: grid.patch_px,
            });
        }
    }
    let batch_size = opts.batch_size.max(1);
    let n = grid.n_cells();
    let mut probs = vec![0.0f64; n];
    let mut mask = vec![false; n];

    let mut batch: Vec<PatchImage> = Vec::with_capacity(batch_size);
    let mut batch_cells: Vec<usize> = Vec::with_capacity(batch_size);
    let flush = |batch: &mut Vec<PatchImage>, cells: &mut Vec<usize>, probs: &mut [f64]| -> Result<()> {
        let scores = score_checked(model, batch)?;
        for (&cell, s) in cells.iter().zip(scores) {
            probs[cell] = s;
        }
        batch.clear();
        cells.clear();
        Ok(())
    };

    for (cell, (gx, gy)) in grid.cells().enumerate() {
        let patch = extract_patch(source, grid, gx, gy)?;
        if let Some(params) = &opts.tissue_filter {
            if !tissue_filter(&patch, params) {
                mask[cell] = true;
                continue;
            }
        }
        batch.push(patch);
        batch_cells.push(cell);
        if batch.len() == batch_size {
            flush(&mut batch, &mut batch_cells, &mut probs)?;
        }
    }
    flush(&mut batch, &mut batch_cells, &mut probs)?;

    let mut map = TilMap::for_grid(grid, probs, model.model_id())?
        .with_slide_meta(slide.patient_id.clone(), slide.cancer_type)
        .with_mask(mask)?;
    if let Some(at) = opts.created_at {
        map = map.with_created_at(at);
    }
    Ok(map)
}

/// Scores a patch by its darkness: 1 − mean intensity / 255. Useful as a
/// transparent stand-in classifier in tests and demos.
#[derive(Debug, Clone, Default)]
pub struct DarknessScorer;

impl PatchScorer for DarknessScorer {
    fn model_id(&self) -> &str {
        "darkness"
    }

    fn score_patches(&self, patches: &[PatchImage]) -> Result<Vec<f64>> {
        Ok(patches
            .iter()
            .map(|p| {
                let raw = p.pixels.as_raw();
                let sum: u64 = raw.iter().map(|&v| v as u64).sum();
                1.0 - sum as f64 / (raw.len() as f64 * 255.0)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cancer::CancerType;
    use crate::tiling::{build_grid, InMemorySource};
    use image::{Rgb, RgbImage};

    fn slide(w: u32, h: u32) -> SlideRef {
        SlideRef {
            slide_id: "syn".into(),
            patient_id: "p".into(),
            cancer_type: CancerType::Skcm,
            width_px: w,
            height_px: h,
            magnification: 20.0,
            microns_per_pixel: 0.5,
            pixel_source: String::new(),
        }
    }

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = ((x / 100 * 13 + y / 100 * 7) % 200) as u8 + 20;
            Rgb([v, v / 2, v])
        })
    }

    #[test]
    fn shape_and_range() {
        let s = slide(1000, 800);
        let src = InMemorySource::new(gradient_image(1000, 800));
        let grid = build_grid(&s, 100).unwrap();
        let map = infer_map(&s, &src, &DarknessScorer, &grid, &InferOptions::default()).unwrap();
        assert_eq!((map.n_cols, map.n_rows), (10, 8));
        assert_eq!(map.probs().len(), 80);
        assert!(map.probs().iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
        assert_eq!(map.cancer_type, Some(CancerType::Skcm));
    }

    #[test]
    fn batching_does_not_change_output() {
        let s = slide(700, 300);
        let src = InMemorySource::new(gradient_image(700, 300));
        let grid = build_grid(&s, 100).unwrap();
        let a = infer_map(&s, &src, &DarknessScorer, &grid, &InferOptions { batch_size: 1, ..Default::default() }).unwrap();
        let b = infer_map(&s, &src, &DarknessScorer, &grid, &InferOptions { batch_size: 8, ..Default::default() }).unwrap();
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn tissue_filter_masks_exactly_background_cells() {
        let s = slide(300, 100);
        let mut img = RgbImage::from_pixel(300, 100, Rgb([255, 255, 255]));
        for y in 0..100 {
            for x in 100..200 {
                img.put_pixel(x, y, Rgb([200, 90, 160]));
            }
        }
        let src = InMemorySource::new(img);
        let grid = build_grid(&s, 100).unwrap();
        let opts = InferOptions {
            tissue_filter: Some(TissueFilterParams::default()),
            ..Default::default()
        };
        let map = infer_map(&s, &src, &DarknessScorer, &grid, &opts).unwrap();
        assert_eq!(map.mask(), &[true, false, true]);
        assert_eq!(map.probs()[0], 0.0);
        assert!(map.probs()[1] > 0.0);
    }

    struct Fixed(u32);
    impl PatchScorer for Fixed {
        fn model_id(&self) -> &str {
            "fixed"
        }
        fn expected_patch_px(&self) -> Option<u32> {
            Some(self.0)
        }
        fn score_patches(&self, patches: &[PatchImage]) -> Result<Vec<f64>> {
            Ok(vec![2.0; patches.len()])
        }
    }

    #[test]
    fn contract_violations() {
        let s = slide(200, 200);
        let src = InMemorySource::new(gradient_image(200, 200));
        let grid = build_grid(&s, 100).unwrap();
        let err = infer_map(&s, &src, &Fixed(64), &grid, &InferOptions::default()).unwrap_err();
        assert_eq!(err.code(), "model_input_mismatch");
        let err = infer_map(&s, &src, &Fixed(100), &grid, &InferOptions::default()).unwrap_err();
        assert_eq!(err.code(), "scoring_failed");
    }
}
