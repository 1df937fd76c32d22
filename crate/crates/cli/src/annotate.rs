use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde_json::json;
use til_core::annotation::{
    assemble_mixture, harvest_semi_auto, manifest_stats, sampler_registry, split_by_patient, AnnotationManifest,
    HarvestRequest, MixturePolicy, SampleCount, Split,
};
use til_core::tiling::patient_from_slide_id;
use til_core::tilmap::read_probability_map;
use til_core::CancerType;

use crate::paths::{rebased, stem};

#[derive(Args)]
pub struct HarvestArgs {
    /// Probability TIL map file.
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    threshold: f64,
    /// Number of cells to sample, or ALL.
    #[arg(long)]
    n: SampleCount,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling strategy (uniform, stratified).
    #[arg(long, default_value = "uniform")]
    sampler: String,
    /// Prefix for each record's patch_uri, usually the tile directory.
    #[arg(long)]
    patch_root: Option<String>,
    /// Fills in the cancer type when the map file does not carry one.
    #[arg(long)]
    cancer_type: Option<CancerType>,
    /// Fills in the patient id when the map file does not carry one.
    #[arg(long)]
    patient_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

pub fn harvest(args: HarvestArgs) -> anyhow::Result<()> {
    let mut map = read_probability_map(&args.map)?;
    if map.cancer_type.is_none() {
        map.cancer_type = args.cancer_type;
    }
    if map.patient_id.is_none() {
        map.patient_id = args.patient_id.or_else(|| map.cancer_type.map(|_| patient_from_slide_id(&map.slide_id)));
    }
    let sampler = sampler_registry().get(&args.sampler)?;
    let req = HarvestRequest {
        threshold: args.threshold,
        n_samples: args.n,
        seed: args.seed,
        sampler: sampler.as_ref(),
        patch_root: args.patch_root.as_deref(),
    };
    let records = harvest_semi_auto(&map, &req)?;
    let manifest = AnnotationManifest::new(stem(&args.out), Split::Train, records)?;
    manifest.write_jsonl(&args.out)?;
    crate::print_json(&manifest_stats(&manifest))
}

#[derive(Args)]
pub struct MixArgs {
    /// Manually annotated manifest.
    #[arg(long)]
    manual: PathBuf,
    /// Semi-automatically annotated manifest.
    #[arg(long)]
    semi: PathBuf,
    /// Mixture policy JSON; the default assigns the standard per-type sources.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn mix(args: MixArgs) -> anyhow::Result<()> {
    let policy = match &args.policy {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing policy {}", p.display()))?
        }
        None => MixturePolicy::default(),
    };
    let manual = rebased(&AnnotationManifest::read_jsonl(&args.manual, Split::Train)?, &args.out)?;
    let semi = rebased(&AnnotationManifest::read_jsonl(&args.semi, Split::Train)?, &args.out)?;
    let mixed = assemble_mixture(&manual, &semi, &policy)?;
    mixed.write_jsonl(&args.out)?;
    crate::print_json(&manifest_stats(&mixed))
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long, num_args = 1.., required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    test_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving train.jsonl and test.jsonl.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

pub fn split(args: SplitArgs) -> anyhow::Result<()> {
    let train_path = args.out_dir.join("train.jsonl");
    let test_path = args.out_dir.join("test.jsonl");
    let inputs = args
        .manifests
        .iter()
        .map(|p| rebased(&AnnotationManifest::read_jsonl(p, Split::Train)?, &train_path))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (train, test) = split_by_patient(&inputs, args.test_frac, args.seed)?;
    train.write_jsonl(&train_path)?;
    test.write_jsonl(&test_path)?;
    crate::print_json(&json!({
        "train": { "path": train_path, "records": train.len(), "patients": train.patient_ids().len() },
        "test": { "path": test_path, "records": test.len(), "patients": test.patient_ids().len() },
    }))
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
}

pub fn stats(args: StatsArgs) -> anyhow::Result<()> {
    let m = AnnotationManifest::read_jsonl(&args.manifest, Split::Train)?;
    crate::print_json(&manifest_stats(&m))
}
