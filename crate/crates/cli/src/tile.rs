use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde_json::json;
use til_core::tiling::{write_tiles, SlideRef, TissueFilterParams, DEFAULT_PATCH_PX};
use til_core::CancerType;

use crate::Toggle;

#[derive(Args)]
pub struct TileArgs {
    /// Slide image (PNG).
    #[arg(long)]
    slide: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PATCH_PX)]
    patch_px: u32,
    /// Output directory for patches and `<slide_id>_grid.json`.
    #[arg(long)]
    out: PathBuf,
    /// Skip cells that are mostly background.
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    tissue_filter: Toggle,
}

pub fn run(args: TileArgs) -> anyhow::Result<()> {
    // Tiling output does not record the cancer type.
    let (slide, source) = SlideRef::from_image(&args.slide, CancerType::Brca)
        .with_context(|| format!("opening slide {}", args.slide.display()))?;
    let params = TissueFilterParams::default();
    let summary = write_tiles(
        &slide,
        &source,
        args.patch_px,
        &args.out,
        args.tissue_filter.is_on().then_some(&params),
    )?;
    crate::print_json(&json!({
        "slide_id": slide.slide_id,
        "n_cols": summary.grid.n_cols,
        "n_rows": summary.grid.n_rows,
        "written": summary.written,
        "skipped_background": summary.skipped_background,
        "metadata": summary.metadata_path,
    }))
}
