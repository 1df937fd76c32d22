//! Trained models and their on-disk checkpoint directory:
//! `weights.safetensors`, `config.json` and `training_log.jsonl`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use safetensors::tensor::TensorView;
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};
use til_core::inference::PatchScorer;
use til_core::tiling::PatchImage;

use crate::config::{AugmentationConfig, ModelConfig};
use crate::elem::Elem;
use crate::error::{ModelError, Result};
use crate::network::{sigmoid, Network};
use crate::preprocess::to_tensor;
use crate::train::LogEntry;

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "training_log.jsonl";

const PREDICT_CHUNK: usize = 32;

pub type WeightMap<E> = BTreeMap<String, (Vec<usize>, Vec<E>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model_id: String,
    pub training_manifest_name: String,
    pub model: ModelConfig,
    pub augmentation: AugmentationConfig,
}

/// A frozen classifier. Scoring is deterministic and safe to call from
/// several threads; calls are serialized internally.
pub struct TrainedModel {
    pub config: ModelConfig,
    pub augmentation: AugmentationConfig,
    pub training_manifest_name: String,
    pub model_id: String,
    pub log: Vec<LogEntry>,
    net: Mutex<Network<f32>>,
}

impl std::fmt::Debug for TrainedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainedModel")
            .field("model_id", &self.model_id)
            .field("config", &self.config)
            .field("training_manifest_name", &self.training_manifest_name)
            .finish_non_exhaustive()
    }
}

impl TrainedModel {
    pub fn new(
        model_id: impl Into<String>,
        config: ModelConfig,
        augmentation: AugmentationConfig,
        training_manifest_name: impl Into<String>,
        net: Network<f32>,
        log: Vec<LogEntry>,
    ) -> Self {
        Self {
            config,
            augmentation,
            training_manifest_name: training_manifest_name.into(),
            model_id: model_id.into(),
            log,
            net: Mutex::new(net),
        }
    }

    fn net(&self) -> std::sync::MutexGuard<'_, Network<f32>> {
        self.net.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// One probability per patch, in order. Patches of any size are resized
    /// to the network input first.
    pub fn predict_batch(&self, patches: &[PatchImage]) -> Vec<f64> {
        let px = self.config.input_size_px;
        let mut net = self.net();
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(PREDICT_CHUNK) {
            let x = to_tensor::<f32>(chunk.iter().map(|p| &p.pixels), px);
            out.extend(net.logits(x, false).into_iter().map(|z| sigmoid(z as f64)));
        }
        out
    }

    pub fn score(&self, patch: &PatchImage) -> f64 {
        self.predict_batch(std::slice::from_ref(patch))[0]
    }

    pub fn weights(&self) -> WeightMap<f32> {
        self.net().state()
    }

    pub fn param_count(&self) -> usize {
        self.net().param_count()
    }

    pub fn checkpoint_config(&self) -> CheckpointConfig {
        CheckpointConfig {
            model_id: self.model_id.clone(),
            training_manifest_name: self.training_manifest_name.clone(),
            model: self.config.clone(),
            augmentation: self.augmentation,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        write_weights(&self.weights(), &dir.join(WEIGHTS_FILE))?;
        let cfg = serde_json::to_vec_pretty(&self.checkpoint_config())?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, cfg).map_err(|e| ModelError::io(&path, e))?;
        let mut log = Vec::new();
        for entry in &self.log {
            serde_json::to_writer(&mut log, entry)?;
            log.push(b'\n');
        }
        let path = dir.join(LOG_FILE);
        let mut f = fs::File::create(&path).map_err(|e| ModelError::io(&path, e))?;
        f.write_all(&log).map_err(|e| ModelError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let bytes = fs::read(&path).map_err(|e| ModelError::io(&path, e))?;
        let cfg: CheckpointConfig = serde_json::from_slice(&bytes)?;
        cfg.model.validate()?;
        let weights_path = dir.join(WEIGHTS_FILE);
        let weights = read_weights::<f32>(&weights_path)?;
        let mut net = Network::<f32>::new(cfg.model.architecture);
        let names = net.param_names();
        let loaded = net.load_state(&weights);
        if loaded.len() != names.len() {
            let missing: Vec<&String> = names.iter().filter(|n| !loaded.contains(n)).collect();
            return Err(ModelError::checkpoint(
                weights_path,
                format!("{} of {} parameters missing or mis-shaped, first: {}", missing.len(), names.len(), missing[0]),
            ));
        }
        let log = match fs::read_to_string(dir.join(LOG_FILE)) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<_, _>>()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(ModelError::io(dir.join(LOG_FILE), e)),
        };
        Ok(Self::new(cfg.model_id, cfg.model, cfg.augmentation, cfg.training_manifest_name, net, log))
    }
}

impl PatchScorer for TrainedModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn expected_patch_px(&self) -> Option<u32> {
        Some(self.config.patch_px)
    }

    fn score_patches(&self, patches: &[PatchImage]) -> til_core::Result<Vec<f64>> {
        Ok(self.predict_batch(patches))
    }
}

pub fn write_weights<E: Elem>(state: &WeightMap<E>, path: &Path) -> Result<()> {
    let buffers: Vec<(&String, &Vec<usize>, Vec<u8>)> = state
        .iter()
        .map(|(name, (shape, values))| {
            let mut bytes = Vec::with_capacity(values.len() * std::mem::size_of::<E>());
            for &v in values {
                v.write_le(&mut bytes);
            }
            (name, shape, bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| Ok((name.as_str(), TensorView::new(E::DTYPE, shape.to_vec(), bytes)?)))
        .collect::<Result<Vec<_>>>()?;
    let blob = safetensors::serialize(views, None)?;
    fs::write(path, blob).map_err(|e| ModelError::io(path, e))
}

pub fn read_weights<E: Elem>(path: &Path) -> Result<WeightMap<E>> {
    let bytes = fs::read(path).map_err(|e| ModelError::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes)?;
    let width = std::mem::size_of::<E>();
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != E::DTYPE {
            return Err(ModelError::checkpoint(
                path,
                format!("tensor {name} has dtype {:?}, expected {:?}", view.dtype(), E::DTYPE),
            ));
        }
        let values = view.data().chunks_exact(width).map(E::read_le).collect();
        out.insert(name, (view.shape().to_vec(), values));
    }
    Ok(out)
}
