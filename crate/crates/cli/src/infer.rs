use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use serde_json::json;
use til_core::inference::{infer_map, InferOptions};
use til_core::tiling::{build_grid, patient_from_slide_id, SlideRef, TissueFilterParams, DEFAULT_PATCH_PX};
use til_core::tilmap::{import_grayscale_map, write_binary_map, write_map, GrayscaleImportMeta};
use til_core::CancerType;
use til_model::TrainedModel;

use crate::Toggle;

#[derive(Args)]
pub struct InferArgs {
    /// Slide image (PNG).
    #[arg(long)]
    slide: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mask background cells instead of scoring them.
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    tissue_filter: Toggle,
    /// Write the thresholded binary map instead of probabilities.
    #[arg(long, requires = "threshold")]
    binary: bool,
    #[arg(long)]
    threshold: Option<f64>,
    /// Recorded in the map; harvesting needs it.
    #[arg(long)]
    cancer_type: Option<CancerType>,
    /// Defaults to the TCGA patient barcode prefix of the slide id.
    #[arg(long)]
    patient_id: Option<String>,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
}

pub fn infer(args: InferArgs) -> anyhow::Result<()> {
    if args.threshold.is_some() && !args.binary {
        bail!("--threshold only applies together with --binary");
    }
    let model = TrainedModel::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let (mut slide, source) = SlideRef::from_image(&args.slide, args.cancer_type.unwrap_or(CancerType::Brca))?;
    if let Some(p) = &args.patient_id {
        slide.patient_id = p.clone();
    }
    let grid = build_grid(&slide, model.config.patch_px)?;
    let opts = InferOptions {
        tissue_filter: args.tissue_filter.is_on().then(TissueFilterParams::default),
        batch_size: args.batch_size,
        created_at: None,
    };
    let mut map = infer_map(&slide, &source, &model, &grid, &opts)?;
    if args.cancer_type.is_none() {
        map.cancer_type = None;
    }
    let masked = map.mask().iter().filter(|&&m| m).count();
    match args.threshold {
        Some(t) => {
            let binary = map.threshold(t)?;
            write_binary_map(&binary, &args.out)?;
        }
        None => write_map(&map, &args.out)?,
    }
    crate::print_json(&json!({
        "slide_id": map.slide_id,
        "model_id": map.model_id,
        "n_cols": map.n_cols,
        "n_rows": map.n_rows,
        "masked_cells": masked,
        "out": args.out,
    }))
}

#[derive(Args)]
pub struct ImportMapArgs {
    /// Grayscale PNG, one pixel per patch.
    #[arg(long)]
    png: PathBuf,
    #[arg(long)]
    slide_id: String,
    #[arg(long, default_value_t = DEFAULT_PATCH_PX)]
    patch_px: u32,
    #[arg(long, default_value = "imported")]
    model_id: String,
    /// Channel to read from an RGB(A) image.
    #[arg(long)]
    channel: Option<u8>,
    #[arg(long)]
    cancer_type: Option<CancerType>,
    #[arg(long, requires = "cancer_type")]
    patient_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

pub fn import_map(args: ImportMapArgs) -> anyhow::Result<()> {
    let meta = GrayscaleImportMeta {
        slide_id: args.slide_id.clone(),
        patch_px: args.patch_px,
        model_id: args.model_id,
        channel: args.channel,
    };
    let mut map = import_grayscale_map(&args.png, &meta)?;
    if let Some(ct) = args.cancer_type {
        let patient = args.patient_id.unwrap_or_else(|| patient_from_slide_id(&args.slide_id));
        map = map.with_slide_meta(patient, ct);
    }
    write_map(&map, &args.out)?;
    crate::print_json(&json!({
        "slide_id": map.slide_id,
        "n_cols": map.n_cols,
        "n_rows": map.n_rows,
        "out": args.out,
    }))
}
