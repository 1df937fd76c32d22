use std::path::PathBuf;

use clap::{ArgGroup, Args};
use serde_json::json;
use til_core::annotation::{AnnotationManifest, Split};
use til_model::data::Dataset;
use til_model::{train_on, Architecture, AugmentationConfig, LogEntry, ModelConfig, Preset};

use crate::Toggle;

#[derive(Args)]
#[command(group(ArgGroup::new("model").required(true).args(["preset", "arch"])))]
pub struct TrainArgs {
    /// One of the eight reference recipes, e.g. vgg-mix.
    #[arg(long)]
    preset: Option<Preset>,
    /// Bare architecture: VGG16_CLASS, INCEPTION_V4_CLASS or COMPACT_REF.
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Local safetensors file with initial weights.
    #[arg(long)]
    pretrained: Option<String>,
    /// Manifest scored for best-checkpoint selection.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Native tile size of the training patches.
    #[arg(long)]
    patch_px: Option<u32>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    oversample_positives: bool,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    augment: Toggle,
}

fn model_config(args: &TrainArgs) -> ModelConfig {
    let mut c = match (args.preset, args.arch) {
        (Some(p), _) => p.model_config(args.seed),
        (None, Some(a)) => ModelConfig {
            rng_seed: args.seed,
            ..ModelConfig::for_architecture(a)
        },
        (None, None) => unreachable!("clap requires one of --preset/--arch"),
    };
    c.pretrained_weights = args.pretrained.clone();
    if args.steps.is_some() || args.epochs.is_some() {
        c.max_steps = args.steps;
        c.max_epochs = args.epochs;
    }
    if let Some(b) = args.batch_size {
        c.batch_size = b;
    }
    if let Some(lr) = args.lr {
        c.learning_rate = lr;
    }
    if let Some(px) = args.patch_px {
        c.patch_px = px;
    }
    if let Some(e) = args.eval_every {
        c.eval_every = e;
    }
    c.oversample_positives = args.oversample_positives;
    c
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let config = model_config(&args);
    let aug = if args.augment.is_on() {
        AugmentationConfig {
            rng_seed: args.seed,
            ..Default::default()
        }
    } else {
        AugmentationConfig::none(args.seed)
    };
    let manifest = AnnotationManifest::read_jsonl(&args.manifest, Split::Train)?;
    let data = Dataset::from_manifest(&manifest)?;
    let validation = match &args.validation {
        Some(p) => Some(Dataset::from_manifest(&AnnotationManifest::read_jsonl(p, Split::Validation)?)?),
        None => None,
    };
    let model = train_on(&config, &aug, &data, validation.as_ref(), &manifest.name)?;
    model.save(&args.out)?;

    let steps = model.log.iter().filter(|e| matches!(e, LogEntry::Step { .. })).count();
    let final_loss = model.log.iter().rev().find_map(|e| match e {
        LogEntry::Step { loss, .. } => Some(*loss),
        _ => None,
    });
    let best_auc = model
        .log
        .iter()
        .filter_map(|e| match e {
            LogEntry::Validation { auc, .. } => Some(*auc),
            _ => None,
        })
        .reduce(f64::max);
    crate::print_json(&json!({
        "model_id": model.model_id,
        "checkpoint": args.out,
        "param_count": model.param_count(),
        "steps": steps,
        "final_loss": final_loss,
        "best_validation_auc": best_auc,
    }))
}
