use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use til_core::annotation::{AnnotationManifest, AnnotationSource, Label, PatchRecord, Split};
use til_core::evaluation::TilLevel;
use til_core::synthetic::{random_layout, synthetic_region, synthetic_slide, SlideSpec};
use til_core::tiling::{patch_file_name, write_tiles, InMemorySource, DEFAULT_PATCH_PX};
use til_core::CancerType;

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    slides: u32,
    #[arg(long, default_value_t = 8)]
    cols: u32,
    #[arg(long, default_value_t = 8)]
    rows: u32,
    #[arg(long, default_value_t = DEFAULT_PATCH_PX)]
    patch_px: u32,
    /// Expected share of TIL-positive cells per slide.
    #[arg(long, default_value_t = 0.5)]
    positive_frac: f64,
    /// Cancer type of every slide; by default slides cycle through all types.
    #[arg(long)]
    cancer_type: Option<CancerType>,
    /// Number of 800x800 regions with expert labels to generate.
    #[arg(long, default_value_t = 0)]
    regions: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn level_fraction(level: TilLevel) -> f64 {
    match level {
        TilLevel::Low => 0.1,
        TilLevel::Medium => 0.4,
        TilLevel::High => 0.75,
    }
}

pub fn run(args: SynthArgs) -> anyhow::Result<()> {
    anyhow::ensure!(
        (0.0..=1.0).contains(&args.positive_frac),
        "--positive-frac must be in [0, 1]"
    );
    let slides_dir = args.out.join("slides");
    let tiles_dir = args.out.join("tiles");
    std::fs::create_dir_all(&slides_dir).with_context(|| format!("creating {}", slides_dir.display()))?;

    let mut records = Vec::new();
    for i in 0..args.slides {
        let slide_id = format!("syn-{i:03}");
        let cancer_type = args.cancer_type.unwrap_or(CancerType::ALL[i as usize % CancerType::ALL.len()]);
        let layout_seed = args.seed.wrapping_mul(1_000_003).wrapping_add(u64::from(i));
        let layout = random_layout(args.cols, args.rows, args.positive_frac, layout_seed);
        let spec = SlideSpec {
            slide_id: &slide_id,
            patient_id: &slide_id,
            cancer_type,
            n_cols: args.cols,
            n_rows: args.rows,
            patch_px: args.patch_px,
            seed: layout_seed ^ 0x5eed,
        };
        let synth = synthetic_slide(&spec, |x, y| layout[(y * args.cols + x) as usize]);
        let slide_path = slides_dir.join(format!("{slide_id}.png"));
        synth.image.save(&slide_path).with_context(|| format!("writing {}", slide_path.display()))?;
        write_tiles(&synth.slide, &InMemorySource::new(synth.image.clone()), args.patch_px, &tiles_dir, None)?;
        for gy in 0..synth.n_rows {
            for gx in 0..synth.n_cols {
                records.push(PatchRecord {
                    slide_id: slide_id.clone(),
                    patient_id: slide_id.clone(),
                    cancer_type,
                    grid_x: gx,
                    grid_y: gy,
                    label: Label::from_positive(synth.is_positive(gx, gy)),
                    source: AnnotationSource::Manual,
                    origin_threshold: None,
                    patch_uri: format!("tiles/{}", patch_file_name(&slide_id, gx, gy)),
                });
            }
        }
    }
    let truth = AnnotationManifest::new("truth", Split::Train, records)?;
    let truth_path = args.out.join("truth.jsonl");
    truth.write_jsonl(&truth_path)?;

    if args.regions > 0 {
        let regions_dir = args.out.join("regions");
        std::fs::create_dir_all(&regions_dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x7e610);
        let mut w = csv::Writer::from_path(args.out.join("region_labels.csv"))?;
        w.write_record(["region_id", "expert_1", "expert_2", "expert_3"])?;
        for r in 0..args.regions {
            let level = TilLevel::ALL[rng.random_range(0..3)];
            let cells: [bool; 64] = std::array::from_fn(|_| rng.random_bool(level_fraction(level)));
            let id = format!("region-{r:03}");
            synthetic_region(&cells, rng.random()).save(regions_dir.join(format!("{id}.png")))?;
            let l = level.to_string();
            w.write_record([id.as_str(), &l, &l, &l])?;
        }
        w.flush()?;
    }

    crate::print_json(&json!({
        "slides": args.slides,
        "patches": truth.len(),
        "truth": truth_path,
        "regions": args.regions,
    }))
}
