//! Semi-automatic annotation: label a whole group of patches at once by
//! applying a reviewer-chosen threshold to a TIL probability map.

use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationSource, Label, PatchRecord};
use crate::error::{check_unit, Result, TilError};
use crate::registry::Registry;
use crate::tiling::patch_file_name;
use crate::tilmap::TilMap;

/// A candidate cell offered to a sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub cell: usize,
    pub positive: bool,
}

/// Chooses which map cells become annotations.
pub trait HarvestSampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns positions into `candidates`, at most `n` of them, without
    /// repetition.
    fn select(&self, candidates: &[Candidate], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize>;
}

/// Uniform sampling without replacement over all candidate cells.
#[derive(Debug, Default, Clone, Copy)]
pub struct UniformSampler;

impl HarvestSampler for UniformSampler {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn select(&self, candidates: &[Candidate], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = n.min(candidates.len());
        index::sample(rng, candidates.len(), k).into_vec()
    }
}

/// Balances positives and negatives: half of the budget per class, with any
/// shortfall on one side filled from the other.
#[derive(Debug, Default, Clone, Copy)]
pub struct StratifiedSampler;

impl HarvestSampler for StratifiedSampler {
    fn name(&self) -> &'static str {
        "stratified"
    }

    fn select(&self, candidates: &[Candidate], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let (pos, neg): (Vec<usize>, Vec<usize>) =
            (0..candidates.len()).partition(|&i| candidates[i].positive);
        let k = n.min(candidates.len());
        let mut want_pos = (k / 2 + k % 2).min(pos.len());
        let want_neg = (k - want_pos).min(neg.len());
        want_pos = (k - want_neg).min(pos.len());
        let mut out: Vec<usize> = index::sample(rng, pos.len(), want_pos)
            .into_iter()
            .map(|i| pos[i])
            .collect();
        out.extend(index::sample(rng, neg.len(), want_neg).into_iter().map(|i| neg[i]));
        out
    }
}

pub fn sampler_registry() -> Registry<dyn HarvestSampler> {
    let mut reg: Registry<dyn HarvestSampler> = Registry::new("harvest sampler");
    reg.register("uniform", Arc::new(UniformSampler));
    reg.register("stratified", Arc::new(StratifiedSampler));
    reg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleCount {
    All,
    #[serde(untagged)]
    Count(usize),
}

impl std::str::FromStr for SampleCount {
    type Err = TilError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(SampleCount::All);
        }
        s.parse::<usize>()
            .map(SampleCount::Count)
            .map_err(|_| TilError::InvalidArgument(format!("sample count must be ALL or an integer, got {s:?}")))
    }
}

pub struct HarvestRequest<'a> {
    pub threshold: f64,
    pub n_samples: SampleCount,
    pub seed: u64,
    pub sampler: &'a dyn HarvestSampler,
    /// Prefix for generated `patch_uri`s; `None` yields bare file names.
    pub patch_root: Option<&'a str>,
}

impl<'a> HarvestRequest<'a> {
    pub fn uniform(threshold: f64, n_samples: usize, seed: u64) -> Self {
        Self {
            threshold,
            n_samples: SampleCount::Count(n_samples),
            seed,
            sampler: &UniformSampler,
            patch_root: None,
        }
    }
}

/// Samples cells of a thresholded map as semi-automatic annotations.
///
/// Cells flagged as background in the map's mask are never harvested. The
/// result is ordered row-major and is a pure function of `(map, request)`.
pub fn harvest_semi_auto(map: &TilMap, req: &HarvestRequest<'_>) -> Result<Vec<PatchRecord>> {
    check_unit("threshold", req.threshold)?;
    if map.n_cells() == 0 {
        return Err(TilError::EmptyMap);
    }
    let patient_id = map.patient_id.clone().ok_or(TilError::MissingMetadata("patient_id"))?;
    let cancer_type = map.cancer_type.ok_or(TilError::MissingMetadata("cancer_type"))?;

    let candidates: Vec<Candidate> = map
        .probs()
        .iter()
        .zip(map.mask())
        .enumerate()
        .filter(|(_, (_, &masked))| !masked)
        .map(|(cell, (&p, _))| Candidate {
            cell,
            positive: p >= req.threshold,
        })
        .collect();

    let mut chosen: Vec<usize> = match req.n_samples {
        SampleCount::All => (0..candidates.len()).collect(),
        SampleCount::Count(0) => {
            return Err(TilError::InvalidArgument("n_samples must be at least 1".into()))
        }
        SampleCount::Count(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            req.sampler.select(&candidates, n, &mut rng)
        }
    };
    chosen.sort_unstable();

    Ok(chosen
        .into_iter()
        .map(|i| {
            let c = candidates[i];
            let (gx, gy) = map.coords(c.cell);
            let file = patch_file_name(&map.slide_id, gx, gy);
            PatchRecord {
                slide_id: map.slide_id.clone(),
                patient_id: patient_id.clone(),
                cancer_type,
                grid_x: gx,
                grid_y: gy,
                label: Label::from_positive(c.positive),
                source: AnnotationSource::SemiAuto,
                origin_threshold: Some(req.threshold),
                patch_uri: match req.patch_root {
                    Some(root) => format!("{}/{}", root.trim_end_matches('/'), file),
                    None => file,
                },
            }
        })
        .collect())
}
