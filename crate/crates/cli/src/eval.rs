use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use til_core::annotation::{AnnotationManifest, Split};
use til_core::evaluation::{
    evaluate_models, region_count, region_distribution, write_plot_data, F1Mode, RegionRecord, TilLevel,
};
use til_core::inference::PatchScorer;
use til_model::TrainedModel;

fn parse_f1_mode(s: &str) -> Result<F1Mode, String> {
    match s.to_ascii_lowercase().as_str() {
        "positive" => Ok(F1Mode::Positive),
        "macro" => Ok(F1Mode::Macro),
        _ => Err(format!("expected positive or macro, got {s:?}")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directories; each is reported under its model id.
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    /// JSON object mapping model id to decision threshold.
    #[arg(long)]
    thresholds: PathBuf,
    /// F1 over the positive class or the macro average of both classes.
    #[arg(long, value_parser = parse_f1_mode, default_value = "positive")]
    f1_mode: F1Mode,
    #[arg(long)]
    out: PathBuf,
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let models = args
        .models
        .iter()
        .map(|p| TrainedModel::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut seen = std::collections::HashSet::new();
    for m in &models {
        if !seen.insert(m.model_id.as_str()) {
            bail!("two checkpoints share the model id {}", m.model_id);
        }
    }
    let named: Vec<(&str, &dyn PatchScorer)> =
        models.iter().map(|m| (m.model_id.as_str(), m as &dyn PatchScorer)).collect();
    let thresholds: BTreeMap<String, f64> = read_json(&args.thresholds)?;
    let test = AnnotationManifest::read_jsonl(&args.test, Split::Test)?;
    let report = evaluate_models(&named, &test, &thresholds, args.f1_mode)?;
    std::fs::write(&args.out, serde_json::to_vec_pretty(&report)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    for (name, r) in &report.per_model {
        crate::emit(&format!(
            "{name}: threshold {:.4} f1 {} accuracy {:.4} auc {}",
            r.threshold,
            r.overall.f1.map_or("n/a".into(), |f| format!("{f:.4}")),
            r.overall.accuracy,
            r.overall.auc.map_or("n/a".into(), |a| format!("{a:.4}")),
        ))?;
    }
    Ok(())
}

/// Reads `region_id,<label>,<label>,...` rows (header required); empty label
/// cells are ignored.
pub fn read_region_labels(path: &Path) -> anyhow::Result<Vec<(String, Vec<TilLevel>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let mut fields = row.iter();
        let Some(id) = fields.next().map(str::trim).filter(|s| !s.is_empty()) else {
            bail!("{} row {}: missing region id", path.display(), i + 1);
        };
        let labels = fields
            .filter(|f| !f.trim().is_empty())
            .map(|f| f.parse::<TilLevel>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}", path.display(), i + 1))?;
        out.push((id.to_string(), labels));
    }
    Ok(out)
}

#[derive(Args)]
pub struct EvalRegionsArgs {
    /// Checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    /// Directory of 800x800 `<region_id>.png` images.
    #[arg(long)]
    regions: PathBuf,
    /// CSV of expert labels per region (LOW, MEDIUM, HIGH).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    threshold: f64,
    /// Per-region counts; quantiles go to `<stem>.quantiles.json` beside it.
    #[arg(long)]
    out: PathBuf,
}

pub fn eval_regions(args: EvalRegionsArgs) -> anyhow::Result<()> {
    let model = TrainedModel::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let mut records = Vec::new();
    for (id, labels) in read_region_labels(&args.labels)? {
        let path = args.regions.join(format!("{id}.png"));
        let img = image::open(&path).with_context(|| format!("reading region {}", path.display()))?.to_rgb8();
        let count = region_count(&model, &img, args.threshold).with_context(|| format!("region {id}"))?;
        records.push(RegionRecord::new(id, labels, count)?);
    }
    let quantiles = write_plot_data(&records, &args.out)?;
    let dist = region_distribution(&records);
    for (level, d) in &dist.classes {
        match &d.quantiles {
            Some(q) => crate::emit(&format!("{level}: n {} median {} [{} - {}]", d.counts.len(), q.median, q.min, q.max))?,
            None => crate::emit(&format!("{level}: no regions"))?,
        }
    }
    log::info!("wrote {} and {}", args.out.display(), quantiles.display());
    Ok(())
}
