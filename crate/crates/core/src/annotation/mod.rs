//! Annotation manifests: manual and semi-automatic patch labels.
//!
//! A manifest file is JSON-lines, one [`PatchRecord`] per line, UTF-8. The
//! manifest name is the file stem; the split is supplied by the caller.

mod harvest;
mod mixture;
mod split;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cancer::CancerType;
use crate::error::{Result, TilError};

pub use harvest::{
    harvest_semi_auto, sampler_registry, HarvestRequest, HarvestSampler, SampleCount,
    StratifiedSampler, UniformSampler,
};
pub use mixture::{assemble_mixture, MixturePolicy};
pub use split::split_by_patient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    TilPositive,
    TilNegative,
}

impl Label {
    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::TilPositive
        } else {
            Label::TilNegative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::TilPositive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnnotationSource {
    Manual,
    SemiAuto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub cancer_type: CancerType,
    pub grid_x: u32,
    pub grid_y: u32,
    pub label: Label,
    pub source: AnnotationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_threshold: Option<f64>,
    pub patch_uri: String,
}

pub type PatchKey = (String, u32, u32);

impl PatchRecord {
    pub fn key(&self) -> PatchKey {
        (self.slide_id.clone(), self.grid_x, self.grid_y)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.source, self.origin_threshold) {
            (AnnotationSource::Manual, Some(_)) => Err(TilError::InvalidRecord(format!(
                "manual record {} ({}, {}) carries an origin threshold",
                self.slide_id, self.grid_x, self.grid_y
            ))),
            (AnnotationSource::SemiAuto, None) => Err(TilError::InvalidRecord(format!(
                "semi-automatic record {} ({}, {}) has no origin threshold",
                self.slide_id, self.grid_x, self.grid_y
            ))),
            (AnnotationSource::SemiAuto, Some(t)) if !(0.0..=1.0).contains(&t) => {
                Err(TilError::OutOfUnitRange {
                    what: "origin_threshold",
                    value: t,
                })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationManifest {
    pub name: String,
    pub split: Split,
    records: Vec<PatchRecord>,
    /// Directory that relative `patch_uri`s are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl AnnotationManifest {
    /// Validates every record and rejects duplicate `(slide_id, grid_x, grid_y)`.
    pub fn new(name: impl Into<String>, split: Split, records: Vec<PatchRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !seen.insert((r.slide_id.as_str(), r.grid_x, r.grid_y)) {
                return Err(TilError::DuplicatePatch {
                    slide_id: r.slide_id.clone(),
                    grid_x: r.grid_x,
                    grid_y: r.grid_y,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            split,
            records,
            base_dir: None,
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PatchRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patient_ids(&self) -> std::collections::BTreeSet<&str> {
        self.records.iter().map(|r| r.patient_id.as_str()).collect()
    }

    pub fn resolve_patch_path(&self, record: &PatchRecord) -> PathBuf {
        let p = Path::new(&record.patch_uri);
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.records.len() * 160);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let bytes = self.to_jsonl()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| TilError::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| TilError::io(path, e))
    }

    /// Reads a JSON-lines manifest. Blank lines are skipped; relative patch
    /// URIs resolve against the manifest's directory.
    pub fn read_jsonl(path: &Path, split: Split) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| TilError::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| TilError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: PatchRecord = serde_json::from_str(&line).map_err(|e| TilError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            records.push(record);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut manifest = AnnotationManifest::new(name, split, records)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf);
        Ok(manifest)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positives: usize,
    pub negatives: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.positives + self.negatives
    }

    pub fn add(&mut self, label: Label) {
        match label {
            Label::TilPositive => self.positives += 1,
            Label::TilNegative => self.negatives += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub total: usize,
    pub labels: LabelCounts,
    pub manual: usize,
    pub semi_auto: usize,
    pub per_cancer_type: BTreeMap<CancerType, LabelCounts>,
}

pub fn manifest_stats(m: &AnnotationManifest) -> StatsSummary {
    let mut s = StatsSummary {
        total: m.len(),
        ..Default::default()
    };
    for r in m.records() {
        s.labels.add(r.label);
        match r.source {
            AnnotationSource::Manual => s.manual += 1,
            AnnotationSource::SemiAuto => s.semi_auto += 1,
        }
        s.per_cancer_type.entry(r.cancer_type).or_default().add(r.label);
    }
    s
}
