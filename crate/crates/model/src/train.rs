use log::{info, warn};
use serde::{Deserialize, Serialize};
use til_core::annotation::{AnnotationManifest, LabelCounts};
use til_core::calibration::{auc, ScoredSet};

use crate::arch::Architecture;
use crate::checkpoint::{read_weights, TrainedModel, WeightMap};
use crate::config::{AugmentationConfig, ModelConfig};
use crate::data::{Batch, BatchStream, Dataset};
use crate::elem::Elem;
use crate::error::{ModelError, Result};
use crate::network::{bce_with_logits, sigmoid, Network};
use crate::optim::Adam;
use crate::preprocess::to_tensor;

/// One line of `training_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Start {
        architecture: Architecture,
        param_count: usize,
        manifest: String,
        manifest_counts: LabelCounts,
        pretrained_loaded: usize,
    },
    Epoch {
        epoch: u64,
        label_counts: LabelCounts,
        manifest_counts: LabelCounts,
    },
    Step {
        step: u64,
        epoch: u64,
        loss: f64,
        batch_positives: usize,
        batch_negatives: usize,
    },
    Validation {
        step: u64,
        auc: f64,
        best: bool,
    },
}

/// One optimizer step on a batch; returns the mean BCE loss. Gradients are
/// cleared first, and the weights are left untouched if the loss is not
/// finite.
pub fn train_step<E: Elem>(net: &mut Network<E>, opt: &mut Adam<E>, batch: Batch<E>) -> f64 {
    net.zero_grad();
    let logits = net.logits(batch.inputs, true);
    let (loss, grad) = bce_with_logits(&logits, &batch.labels);
    if loss.is_finite() {
        net.backward(&grad);
        opt.step(net);
    }
    loss
}

/// Sigmoid outputs in inference mode.
pub fn predict<E: Elem>(net: &mut Network<E>, data: &Dataset, chunk: usize) -> Vec<f64> {
    let px = net.input_shape().h as u32;
    let mut out = Vec::with_capacity(data.len());
    for part in data.patches().chunks(chunk.max(1)) {
        let x = to_tensor::<E>(part.iter().map(|p| &p.pixels), px);
        out.extend(net.logits(x, false).into_iter().map(|z| sigmoid(z.to_f64())));
    }
    out
}

fn total_steps(config: &ModelConfig, batches_per_epoch: usize) -> u64 {
    let by_epochs = config.max_epochs.map(|e| e * batches_per_epoch as u64);
    match (config.max_steps, by_epochs) {
        (Some(s), Some(e)) => s.min(e),
        (Some(s), None) => s,
        (None, Some(e)) => e,
        (None, None) => unreachable!("validated"),
    }
}

fn load_pretrained(net: &mut Network<f32>, uri: &str) -> Result<usize> {
    let path = uri.strip_prefix("file://").unwrap_or(uri);
    if path.contains("://") {
        return Err(ModelError::InvalidConfig(format!(
            "pretrained weights must be a local safetensors file, got {uri}"
        )));
    }
    let weights: WeightMap<f32> = read_weights(std::path::Path::new(path))?;
    let loaded = net.load_state(&weights).len();
    info!("loaded {loaded} pretrained tensors from {path}");
    Ok(loaded)
}

/// Trains on the patches of a manifest.
pub fn train(config: &ModelConfig, aug: &AugmentationConfig, manifest: &AnnotationManifest) -> Result<TrainedModel> {
    let data = Dataset::from_manifest(manifest)?;
    train_on(config, aug, &data, None, &manifest.name)
}

/// Trains on in-memory data. With a validation set the weights with the
/// best validation AUC are kept, otherwise the final weights.
pub fn train_on(
    config: &ModelConfig,
    aug: &AugmentationConfig,
    data: &Dataset,
    validation: Option<&Dataset>,
    manifest_name: &str,
) -> Result<TrainedModel> {
    config.validate()?;
    aug.validate()?;
    data.require_both_classes()?;

    let mut net = Network::<f32>::new(config.architecture);
    net.init(config.rng_seed);
    let pretrained_loaded = match &config.pretrained_weights {
        Some(uri) => load_pretrained(&mut net, uri)?,
        None => 0,
    };
    let manifest_counts = data.label_counts();
    let mut log = vec![LogEntry::Start {
        architecture: config.architecture,
        param_count: net.param_count(),
        manifest: manifest_name.to_string(),
        manifest_counts,
        pretrained_loaded,
    }];

    let mut stream = BatchStream::new(
        data,
        *aug,
        config.input_size_px,
        config.batch_size,
        config.rng_seed,
        config.oversample_positives,
    );
    let steps = total_steps(config, stream.batches_per_epoch());
    let mut opt = Adam::<f32>::new(config.learning_rate);
    let mut last_finite = None;
    let mut logged_epoch = None;
    let mut best: Option<(f64, WeightMap<f32>)> = None;

    for step in 1..=steps {
        let batch = stream.next_batch::<f32>();
        if logged_epoch != Some(batch.epoch) {
            logged_epoch = Some(batch.epoch);
            log.push(LogEntry::Epoch {
                epoch: batch.epoch,
                label_counts: stream.epoch_label_counts(batch.epoch),
                manifest_counts,
            });
        }
        let epoch = batch.epoch;
        let batch_positives = batch.labels.iter().filter(|&&l| l).count();
        let batch_negatives = batch.labels.len() - batch_positives;
        let loss = train_step(&mut net, &mut opt, batch);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step, loss, last_finite });
        }
        last_finite = Some(loss);
        log.push(LogEntry::Step {
            step,
            epoch,
            loss,
            batch_positives,
            batch_negatives,
        });

        if let Some(val) = validation {
            if step % config.eval_every == 0 || step == steps {
                let scores = predict(&mut net, val, config.batch_size);
                match ScoredSet::new(scores, val.labels().to_vec()).and_then(|s| auc(&s)) {
                    Ok(a) => {
                        let improved = best.as_ref().is_none_or(|(b, _)| a > *b);
                        if improved {
                            best = Some((a, net.state()));
                        }
                        info!("step {step}: loss {loss:.4}, validation AUC {a:.4}");
                        log.push(LogEntry::Validation { step, auc: a, best: improved });
                    }
                    Err(e) => warn!("validation skipped at step {step}: {e}"),
                }
            }
        } else if step % config.eval_every == 0 {
            info!("step {step}: loss {loss:.4}");
        }
    }

    if let Some((a, state)) = best {
        info!("restoring weights with best validation AUC {a:.4}");
        net.load_state(&state);
    }
    let model_id = format!("{}-{}", config.architecture.name().to_ascii_lowercase(), manifest_name);
    Ok(TrainedModel::new(model_id, config.clone(), *aug, manifest_name, net, log))
}
