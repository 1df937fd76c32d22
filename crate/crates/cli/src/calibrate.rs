use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use til_core::annotation::{AnnotationManifest, Split};
use til_core::calibration::{calibrate as run_calibration, criterion_registry, ScoredSet};
use til_core::evaluation::{load_test_patches, score_patches_batched};
use til_model::TrainedModel;

use crate::paths::stem;

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    score: f64,
    label: String,
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "positive" | "til_positive" => Some(true),
        "0" | "false" | "negative" | "til_negative" => Some(false),
        _ => None,
    }
}

/// Reads a CSV with `score` and `label` columns. Labels may be 1/0,
/// true/false, positive/negative or TIL_POSITIVE/TIL_NEGATIVE.
pub fn read_scores(path: &Path) -> anyhow::Result<ScoredSet> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, row) in reader.deserialize::<ScoreRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let Some(label) = parse_label(&row.label) else {
            bail!("{} row {}: unrecognised label {:?}", path.display(), i + 1, row.label);
        };
        scores.push(row.score);
        labels.push(label);
    }
    Ok(ScoredSet::new(scores, labels)?)
}

pub fn write_scores(path: &Path, scores: &[f64], labels: &[bool]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (&score, &l) in scores.iter().zip(labels) {
        w.serialize(ScoreRow {
            score,
            label: if l { "1" } else { "0" }.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output CSV with `score,label` rows in manifest order.
    #[arg(long)]
    out: PathBuf,
}

pub fn score(args: ScoreArgs) -> anyhow::Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let manifest = AnnotationManifest::read_jsonl(&args.manifest, Split::Validation)?;
    let patches = load_test_patches(&manifest)?;
    let scores = score_patches_batched(&model, &patches, 64)?;
    let labels: Vec<bool> = manifest.records().iter().map(|r| r.label.is_positive()).collect();
    write_scores(&args.out, &scores, &labels)?;
    log::info!("scored {} patches with {}", scores.len(), model.model_id);
    Ok(())
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// CSV with `score,label` columns.
    #[arg(long)]
    scores: PathBuf,
    /// Threshold criterion: eer (minimum |FPR - FNR|) or youden-j.
    #[arg(long, default_value = "eer")]
    method: String,
    /// Validation set name recorded in the output; defaults to the CSV stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

pub fn calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let criterion = criterion_registry().get(&args.method)?;
    let set = read_scores(&args.scores)?;
    let name = args.name.unwrap_or_else(|| stem(&args.scores));
    let result = run_calibration(&set, criterion.as_ref(), &name)?;
    std::fs::write(&args.out, serde_json::to_vec_pretty(&result)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    crate::emit(
        &serde_json::json!({
            "chosen_threshold": result.chosen_threshold,
            "criterion_value": result.criterion_value,
            "method": result.method,
            "auc": result.auc,
        })
        .to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_scores(&p, &[0.25, 0.75, 0.1], &[false, true, true]).unwrap();
        let set = read_scores(&p).unwrap();
        assert_eq!(set.scores(), &[0.25, 0.75, 0.1]);
        assert_eq!(set.labels(), &[false, true, true]);
    }

    #[test]
    fn label_spellings() {
        for s in ["1", "TRUE", "positive", "TIL_POSITIVE"] {
            assert_eq!(parse_label(s), Some(true));
        }
        for s in ["0", "false", "Negative", "til_negative"] {
            assert_eq!(parse_label(s), Some(false));
        }
        assert_eq!(parse_label("maybe"), None);
    }

    #[test]
    fn bad_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "score,label\n0.5,maybe\n").unwrap();
        assert!(read_scores(&p).unwrap_err().to_string().contains("row 1"));
    }
}
