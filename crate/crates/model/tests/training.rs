use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use til_core::calibration::{auc, ScoredSet};
use til_core::synthetic::synthetic_patch;
use til_core::tiling::PatchImage;
use til_model::data::Dataset;
use til_model::{train_on, Architecture, AugmentationConfig, LogEntry, ModelConfig, TrainedModel};

fn synthetic_set(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let patches = labels
        .iter()
        .map(|&l| PatchImage::new(0, 0, synthetic_patch(l, 100, &mut rng)).unwrap())
        .collect();
    Dataset::new(patches, labels).unwrap()
}

fn compact(steps: u64, lr: f64) -> ModelConfig {
    ModelConfig {
        batch_size: 16,
        max_steps: Some(steps),
        learning_rate: lr,
        rng_seed: 3,
        ..ModelConfig::for_architecture(Architecture::CompactRef)
    }
}

fn losses(m: &TrainedModel) -> Vec<f64> {
    m.log
        .iter()
        .filter_map(|e| match e {
            LogEntry::Step { loss, .. } => Some(*loss),
            _ => None,
        })
        .collect()
}

#[test]
fn toy_training_learns_and_logs() {
    let train = synthetic_set(64, 1);
    let held_out = synthetic_set(40, 2);
    let aug = AugmentationConfig { rng_seed: 4, ..Default::default() };
    let t0 = std::time::Instant::now();
    let model = train_on(&compact(120, 2e-3), &aug, &train, None, "toy").unwrap();
    eprintln!("trained in {:?}", t0.elapsed());

    let l = losses(&model);
    assert_eq!(l.len(), 120);
    let head: f64 = l[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = l[100..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "loss did not decrease: {head} -> {tail}");

    for e in &model.log {
        if let LogEntry::Epoch { label_counts, manifest_counts, .. } = e {
            assert_eq!(label_counts, manifest_counts);
        }
    }
    let scores = model.predict_batch(held_out.patches());
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    let a = auc(&ScoredSet::new(scores, held_out.labels().to_vec()).unwrap()).unwrap();
    assert!(a > 0.9, "held-out AUC {a}");
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let train = synthetic_set(8, 1);
    let model = train_on(&compact(3, 0.0), &AugmentationConfig::default(), &train, None, "toy").unwrap();
    let mut fresh = til_model::Network::<f32>::new(Architecture::CompactRef);
    fresh.init(3);
    assert_eq!(model.weights(), fresh.state());
}

#[test]
fn predictions_are_batch_independent() {
    let mut net = til_model::Network::<f32>::new(Architecture::CompactRef);
    net.init(8);
    let model = TrainedModel::new(
        "m",
        compact(1, 1e-3),
        AugmentationConfig::default(),
        "none",
        net,
        Vec::new(),
    );
    let data = synthetic_set(7, 9);
    let mut patches = data.patches().to_vec();
    let all = model.predict_batch(&patches);
    let mut split = model.predict_batch(&patches[..3]);
    split.extend(model.predict_batch(&patches[3..]));
    assert_eq!(all, split);
    patches.push(patches[2].clone());
    let dup = model.predict_batch(&patches);
    assert_eq!(dup[2], dup[7]);
    assert!(model.predict_batch(&[]).is_empty());
}

#[test]
fn single_class_manifest_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let patches = (0..4).map(|_| PatchImage::new(0, 0, synthetic_patch(true, 100, &mut rng)).unwrap()).collect();
    let data = Dataset::new(patches, vec![true; 4]).unwrap();
    let err = train_on(&compact(2, 1e-3), &AugmentationConfig::default(), &data, None, "pos").unwrap_err();
    assert_eq!(err.code(), "invalid_config");
}

#[test]
fn exploding_learning_rate_aborts() {
    let train = synthetic_set(16, 1);
    let err = train_on(&compact(200, 1e30), &AugmentationConfig::none(0), &train, None, "toy").unwrap_err();
    assert_eq!(err.code(), "non_finite_loss");
}

#[test]
fn checkpoint_round_trip() {
    let train = synthetic_set(16, 1);
    let validation = synthetic_set(8, 5);
    let cfg = ModelConfig { eval_every: 2, ..compact(6, 1e-3) };
    let model = train_on(&cfg, &AugmentationConfig::default(), &train, Some(&validation), "toy").unwrap();
    assert!(model.log.iter().any(|e| matches!(e, LogEntry::Validation { .. })));
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    for f in ["weights.safetensors", "config.json", "training_log.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let back = TrainedModel::load(dir.path()).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.log, model.log);
    assert_eq!(back.training_manifest_name, "toy");
    assert_eq!(back.predict_batch(validation.patches()), model.predict_batch(validation.patches()));
}
