use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::error::{ModelError, Result};

fn default_patch_px() -> u32 {
    til_core::tiling::DEFAULT_PATCH_PX
}

fn default_eval_every() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub input_size_px: u32,
    /// Native tile size fed to the model before resizing to `input_size_px`.
    #[serde(default = "default_patch_px")]
    pub patch_px: u32,
    #[serde(default)]
    pub pretrained_weights: Option<String>,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub max_epochs: Option<u64>,
    #[serde(default)]
    pub batch_norm: bool,
    pub rng_seed: u64,
    /// Repeat positives within each epoch until they match the negatives.
    #[serde(default)]
    pub oversample_positives: bool,
    /// Validation AUC is measured every this many steps (and at the end).
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
}

impl ModelConfig {
    pub fn for_architecture(architecture: Architecture) -> Self {
        Self {
            architecture,
            input_size_px: architecture.input_px(),
            patch_px: default_patch_px(),
            pretrained_weights: None,
            learning_rate: 5e-4,
            batch_size: 128,
            max_steps: Some(10_000),
            max_epochs: None,
            batch_norm: false,
            rng_seed: 0,
            oversample_positives: false,
            eval_every: default_eval_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.input_size_px != self.architecture.input_px() {
            return bad(format!(
                "{} needs {} px input, config says {}",
                self.architecture,
                self.architecture.input_px(),
                self.input_size_px
            ));
        }
        if self.batch_norm {
            return bad("batch normalization is not supported; the reference recipe trains without it".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.patch_px == 0 {
            return bad("patch_px must be at least 1".into());
        }
        match (self.max_steps, self.max_epochs) {
            (None, None) => return bad("set max_steps or max_epochs".into()),
            (Some(0), _) | (_, Some(0)) => return bad("max_steps and max_epochs must be positive".into()),
            _ => {}
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HslJitter {
    pub hue_deg_max: f64,
    pub sat_frac_max: f64,
    pub light_frac_max: f64,
}

impl Default for HslJitter {
    fn default() -> Self {
        Self {
            hue_deg_max: 5.0,
            sat_frac_max: 0.10,
            light_frac_max: 0.05,
        }
    }
}

impl HslJitter {
    pub const NONE: HslJitter = HslJitter {
        hue_deg_max: 0.0,
        sat_frac_max: 0.0,
        light_frac_max: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub shift_px_max: u32,
    pub rotate_flip: bool,
    pub hsl_jitter: HslJitter,
    pub rng_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            shift_px_max: 20,
            rotate_flip: true,
            hsl_jitter: HslJitter::default(),
            rng_seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn none(rng_seed: u64) -> Self {
        Self {
            shift_px_max: 0,
            rotate_flip: false,
            hsl_jitter: HslJitter::NONE,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = &self.hsl_jitter;
        let ok = [j.hue_deg_max, j.sat_frac_max, j.light_frac_max]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && j.sat_frac_max <= 1.0
            && j.light_frac_max <= 1.0
            && j.hue_deg_max <= 180.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(format!("HSL jitter out of range: {j:?}")))
        }
    }
}

/// Training-set recipes of the compared models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrainingRecipe {
    Manual,
    Semi,
    All,
    Mix,
}

impl TrainingRecipe {
    pub fn description(self) -> &'static str {
        match self {
            TrainingRecipe::Manual => "86K manually annotated",
            TrainingRecipe::Semi => "301K semi-automatically annotated",
            TrainingRecipe::All => "301K semi-automatically + 86K manually annotated",
            TrainingRecipe::Mix => "69K semi-automatically + 86K manually annotated",
        }
    }

    /// Documented full-scale training-set size in patches (thousands).
    pub fn documented_size_k(self) -> u32 {
        match self {
            TrainingRecipe::Manual => 86,
            TrainingRecipe::Semi => 301,
            TrainingRecipe::All => 387,
            TrainingRecipe::Mix => 155,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Preset {
    VggManual,
    IncepManual,
    VggSemi,
    IncepSemi,
    VggAll,
    IncepAll,
    VggMix,
    IncepMix,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::VggManual,
        Preset::IncepManual,
        Preset::VggSemi,
        Preset::IncepSemi,
        Preset::VggAll,
        Preset::IncepAll,
        Preset::VggMix,
        Preset::IncepMix,
    ];

    pub fn architecture(self) -> Architecture {
        match self {
            Preset::VggManual | Preset::VggSemi | Preset::VggAll | Preset::VggMix => Architecture::Vgg16Class,
            _ => Architecture::InceptionV4Class,
        }
    }

    pub fn recipe(self) -> TrainingRecipe {
        match self {
            Preset::VggManual | Preset::IncepManual => TrainingRecipe::Manual,
            Preset::VggSemi | Preset::IncepSemi => TrainingRecipe::Semi,
            Preset::VggAll | Preset::IncepAll => TrainingRecipe::All,
            Preset::VggMix | Preset::IncepMix => TrainingRecipe::Mix,
        }
    }

    /// Kebab-case name used on the command line, e.g. `vgg-mix`.
    pub fn cli_name(self) -> &'static str {
        match self {
            Preset::VggManual => "vgg-manual",
            Preset::IncepManual => "incep-manual",
            Preset::VggSemi => "vgg-semi",
            Preset::IncepSemi => "incep-semi",
            Preset::VggAll => "vgg-all",
            Preset::IncepAll => "incep-all",
            Preset::VggMix => "vgg-mix",
            Preset::IncepMix => "incep-mix",
        }
    }

    pub fn model_config(self, rng_seed: u64) -> ModelConfig {
        ModelConfig {
            rng_seed,
            ..ModelConfig::for_architecture(self.architecture())
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Preset::ALL
            .into_iter()
            .find(|p| p.cli_name() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.cli_name()).collect();
                format!("unknown preset {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_recipe() {
        let c = ModelConfig::for_architecture(Architecture::Vgg16Class);
        assert_eq!((c.learning_rate, c.batch_size, c.batch_norm, c.input_size_px), (5e-4, 128, false, 224));
        c.validate().unwrap();
        assert_eq!(ModelConfig::for_architecture(Architecture::InceptionV4Class).input_size_px, 299);
        assert_eq!(ModelConfig::for_architecture(Architecture::CompactRef).input_size_px, 64);
        let a = AugmentationConfig::default();
        assert_eq!(a.shift_px_max, 20);
        assert!(a.rotate_flip);
        assert_eq!(a.hsl_jitter, HslJitter { hue_deg_max: 5.0, sat_frac_max: 0.1, light_frac_max: 0.05 });
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::for_architecture(Architecture::CompactRef);
        c.input_size_px = 100;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::for_architecture(Architecture::CompactRef);
        c.batch_norm = true;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::for_architecture(Architecture::CompactRef);
        c.max_steps = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn eight_presets() {
        assert_eq!(Preset::ALL.len(), 8);
        assert_eq!("vgg-mix".parse::<Preset>().unwrap(), Preset::VggMix);
        assert_eq!("INCEP_ALL".parse::<Preset>().unwrap(), Preset::IncepAll);
        assert_eq!(Preset::VggMix.recipe().documented_size_k(), 155);
        assert_eq!(Preset::IncepSemi.architecture(), Architecture::InceptionV4Class);
        let pairs: std::collections::HashSet<_> = Preset::ALL.iter().map(|p| (p.architecture(), p.recipe())).collect();
        assert_eq!(pairs.len(), 8);
    }

    #[test]
    fn config_json_round_trip() {
        let c = Preset::VggMix.model_config(7);
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
