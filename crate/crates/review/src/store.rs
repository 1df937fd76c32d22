//! On-disk review store.
//!
//! ```text
//! <root>/maps/<map_id>.tilmap       probability maps (append-only)
//! <root>/slides/<slide_id>.png      optional slide pixels for thumbnails
//! <root>/sessions/<session_id>.json review sessions
//! <root>/manifests/<session_id>.jsonl committed manifests
//! ```
//!
//! A session is committed exactly when its manifest file exists. The
//! manifest is written to a temporary file and renamed into place, so a
//! crash leaves either a complete manifest or none; the session file is
//! brought in line on the next read.

use std::collections::HashMap;
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use base64::Engine;
use serde::{Deserialize, Serialize};
use til_core::annotation::{
    harvest_semi_auto, sampler_registry, AnnotationManifest, HarvestRequest, SampleCount, Split,
};
use til_core::cancer::CancerType;
use til_core::tiling::{ImageFileSource, PixelSource};
use til_core::tilmap::{read_probability_map, TilMap};
use til_core::TilError;

use crate::error::{ReviewError, Result};
use crate::preview::{probability_preview, threshold_preview, PreviewGrid};

pub const MAP_EXT: &str = "tilmap";
const MAX_SAMPLES_PER_SIDE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Open,
    Committed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub session_id: String,
    pub map_id: String,
    pub current_threshold: f64,
    pub status: SessionStatus,
    pub committed_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_records: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MapStatus {
    Unreviewed,
    InReview,
    Committed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub map_id: String,
    pub slide_id: String,
    pub cancer_type: Option<CancerType>,
    pub n_cols: u32,
    pub n_rows: u32,
    pub n_cells: usize,
    pub status: MapStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPayload {
    pub map_id: String,
    pub slide_id: String,
    pub patient_id: Option<String>,
    pub cancer_type: Option<CancerType>,
    pub model_id: String,
    pub patch_px: u32,
    pub n_cols: u32,
    pub n_rows: u32,
    pub masked_cells: usize,
    pub preview: PreviewGrid,
    /// Row-major probabilities, only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPreview {
    pub map_id: String,
    pub t: f64,
    /// Tissue cells with probability ≥ t.
    pub positive_count: usize,
    pub tissue_cells: usize,
    pub positive_fraction: f64,
    pub binary_preview: PreviewGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub grid_x: u32,
    pub grid_y: u32,
    pub prob: f64,
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySamples {
    pub map_id: String,
    pub t: f64,
    pub positives: Vec<PatchSample>,
    pub negatives: Vec<PatchSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRequest {
    pub t: f64,
    pub n_samples: SampleCount,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: Option<String>,
}

/// Points where a commit can be made to fail in tests.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    BeforeManifestRename,
    BeforeSessionWrite,
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub root: PathBuf,
    /// Upper bound on cells in any preview raster.
    pub preview_cells: u64,
    /// Prefix written into committed records' `patch_uri`.
    pub patch_root: Option<String>,
}

impl StoreConfig {
    pub const DEFAULT_PREVIEW_CELLS: u64 = 40_000;

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            preview_cells: Self::DEFAULT_PREVIEW_CELLS,
            patch_root: None,
        }
    }
}

pub struct Store {
    config: StoreConfig,
    maps: RwLock<HashMap<String, Arc<TilMap>>>,
    slide: Mutex<Option<(String, Arc<ImageFileSource>)>>,
    create_lock: Mutex<()>,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    fault: Mutex<Option<FaultPoint>>,
}

fn io_err(path: &Path, e: std::io::Error) -> ReviewError {
    ReviewError::Core(TilError::io(path, e))
}

/// Writes via a sibling temporary file and a rename.
fn write_atomic(path: &Path, bytes: &[u8], fault_before_rename: bool) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    if fault_before_rename {
        return Err(ReviewError::Injected("before rename"));
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl Store {
    /// Opens (creating if needed) a store and removes leftovers of
    /// interrupted writes.
    pub fn open(config: StoreConfig) -> Result<Self> {
        for sub in ["maps", "slides", "sessions", "manifests"] {
            let dir = config.root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        for sub in ["sessions", "manifests"] {
            let dir = config.root.join(sub);
            for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
                let path = entry.map_err(|e| io_err(&dir, e))?.path();
                if path.extension().is_some_and(|e| e == "tmp") {
                    fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
                }
            }
        }
        Ok(Self {
            config,
            maps: RwLock::new(HashMap::new()),
            slide: Mutex::new(None),
            create_lock: Mutex::new(()),
            session_locks: Mutex::new(HashMap::new()),
            fault: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.config.root
    }

    #[doc(hidden)]
    pub fn inject_fault(&self, point: Option<FaultPoint>) {
        *self.fault.lock().unwrap() = point;
    }

    fn fault_at(&self, point: FaultPoint) -> bool {
        *self.fault.lock().unwrap() == Some(point)
    }

    fn map_path(&self, map_id: &str) -> PathBuf {
        self.config.root.join("maps").join(format!("{map_id}.{MAP_EXT}"))
    }

    fn session_path(&self, session_id: &str) -> PathBuf {
        self.config.root.join("sessions").join(format!("{session_id}.json"))
    }

    pub fn manifest_path(&self, session_id: &str) -> PathBuf {
        self.config.root.join("manifests").join(format!("{session_id}.jsonl"))
    }

    /// Copies a map file into the store under `map_id`.
    pub fn add_map(&self, map_id: &str, map: &TilMap) -> Result<()> {
        if !valid_id(map_id) {
            return Err(ReviewError::BadRequest(format!("invalid map id {map_id:?}")));
        }
        let path = self.map_path(map_id);
        if path.exists() {
            return Err(ReviewError::Conflict(format!("map {map_id} already exists")));
        }
        til_core::tilmap::write_map(map, &path)?;
        Ok(())
    }

    pub fn map_ids(&self) -> Result<Vec<String>> {
        let dir = self.config.root.join("maps");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let path = entry.map_err(|e| io_err(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == MAP_EXT) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn map(&self, map_id: &str) -> Result<Arc<TilMap>> {
        if let Some(m) = self.maps.read().unwrap().get(map_id) {
            return Ok(m.clone());
        }
        if !valid_id(map_id) || !self.map_path(map_id).is_file() {
            return Err(ReviewError::NotFound(format!("map {map_id}")));
        }
        let map = Arc::new(read_probability_map(&self.map_path(map_id))?);
        self.maps.write().unwrap().insert(map_id.to_string(), map.clone());
        Ok(map)
    }

    pub fn list_maps(&self) -> Result<Vec<MapSummary>> {
        let sessions = self.sessions()?;
        let mut out = Vec::new();
        for id in self.map_ids()? {
            let m = self.map(&id)?;
            let mine = sessions.iter().filter(|s| s.map_id == id);
            let status = mine.fold(MapStatus::Unreviewed, |acc, s| match (acc, s.status) {
                (MapStatus::Committed, _) | (_, SessionStatus::Committed) => MapStatus::Committed,
                _ => MapStatus::InReview,
            });
            out.push(MapSummary {
                map_id: id,
                slide_id: m.slide_id.clone(),
                cancer_type: m.cancer_type,
                n_cols: m.n_cols,
                n_rows: m.n_rows,
                n_cells: m.n_cells(),
                status,
            });
        }
        out.sort_by(|a, b| a.slide_id.cmp(&b.slide_id).then_with(|| a.map_id.cmp(&b.map_id)));
        Ok(out)
    }

    pub fn get_map(&self, map_id: &str, full: bool) -> Result<MapPayload> {
        let m = self.map(map_id)?;
        Ok(MapPayload {
            map_id: map_id.to_string(),
            slide_id: m.slide_id.clone(),
            patient_id: m.patient_id.clone(),
            cancer_type: m.cancer_type,
            model_id: m.model_id.clone(),
            patch_px: m.patch_px,
            n_cols: m.n_cols,
            n_rows: m.n_rows,
            masked_cells: m.mask().iter().filter(|&&b| b).count(),
            preview: probability_preview(&m, self.config.preview_cells),
            full: full.then(|| m.probs().to_vec()),
            mask: full.then(|| m.mask().to_vec()),
        })
    }

    pub fn preview_threshold(&self, map_id: &str, t: f64) -> Result<ThresholdPreview> {
        check_t(t)?;
        let m = self.map(map_id)?;
        let (mut positive_count, mut tissue_cells) = (0, 0);
        for (&p, &masked) in m.probs().iter().zip(m.mask()) {
            if !masked {
                tissue_cells += 1;
                positive_count += (p >= t) as usize;
            }
        }
        Ok(ThresholdPreview {
            map_id: map_id.to_string(),
            t,
            positive_count,
            tissue_cells,
            positive_fraction: if tissue_cells == 0 {
                0.0
            } else {
                positive_count as f64 / tissue_cells as f64
            },
            binary_preview: threshold_preview(&m, t, self.config.preview_cells),
        })
    }

    fn slide_source(&self, slide_id: &str) -> Result<Arc<ImageFileSource>> {
        let mut cached = self.slide.lock().unwrap();
        if let Some((id, src)) = cached.as_ref() {
            if id == slide_id {
                return Ok(src.clone());
            }
        }
        let path = self.config.root.join("slides").join(format!("{slide_id}.png"));
        if !valid_id(slide_id) || !path.is_file() {
            return Err(ReviewError::ThumbnailsUnavailable(format!("no slide pixels for {slide_id}")));
        }
        let src = Arc::new(ImageFileSource::open(&path)?);
        *cached = Some((slide_id.to_string(), src.clone()));
        Ok(src)
    }

    /// The `n` tissue cells on each side of `t` closest to it; ties break
    /// by row-major grid position.
    pub fn boundary_cells(map: &TilMap, t: f64, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, (&p, &masked)) in map.probs().iter().zip(map.mask()).enumerate() {
            if !masked {
                if p >= t { &mut pos } else { &mut neg }.push(i);
            }
        }
        let probs = map.probs();
        let key = |&i: &usize| ((probs[i] - t).abs(), i);
        let nearest = |mut v: Vec<usize>| {
            v.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
            v.truncate(n);
            v
        };
        (nearest(pos), nearest(neg))
    }

    pub fn sample_patches(&self, map_id: &str, t: f64, n: usize) -> Result<BoundarySamples> {
        check_t(t)?;
        if n > MAX_SAMPLES_PER_SIDE {
            return Err(ReviewError::BadRequest(format!("n must be at most {MAX_SAMPLES_PER_SIDE}")));
        }
        let m = self.map(map_id)?;
        let src = self.slide_source(&m.slide_id)?;
        let (pos, neg) = Self::boundary_cells(&m, t, n);
        let thumb = |i: usize| -> Result<PatchSample> {
            let (gx, gy) = m.coords(i);
            let px = m.patch_px;
            let pixels = src
                .read_region(gx * px, gy * px, px, px)
                .map_err(|e| ReviewError::ThumbnailsUnavailable(e.to_string()))?;
            let mut png = Vec::new();
            pixels
                .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(|e| ReviewError::Core(TilError::Image(e)))?;
            Ok(PatchSample {
                grid_x: gx,
                grid_y: gy,
                prob: m.probs()[i],
                png_base64: base64::engine::general_purpose::STANDARD.encode(png),
            })
        };
        Ok(BoundarySamples {
            map_id: map_id.to_string(),
            t,
            positives: pos.into_iter().map(thumb).collect::<Result<_>>()?,
            negatives: neg.into_iter().map(thumb).collect::<Result<_>>()?,
        })
    }

    fn read_session_file(&self, session_id: &str) -> Result<ReviewSession> {
        let path = self.session_path(session_id);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ReviewError::NotFound(format!("session {session_id}")),
            _ => io_err(&path, e),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| ReviewError::Core(TilError::Json(e)))
    }

    /// Reads a session, treating an existing manifest as proof of commit.
    pub fn session(&self, session_id: &str) -> Result<ReviewSession> {
        if !valid_id(session_id) {
            return Err(ReviewError::NotFound(format!("session {session_id}")));
        }
        let mut s = self.read_session_file(session_id)?;
        let manifest = self.manifest_path(session_id);
        if s.status == SessionStatus::Open && manifest.is_file() {
            s.status = SessionStatus::Committed;
            s.committed_manifest = Some(manifest);
        }
        Ok(s)
    }

    pub fn sessions(&self) -> Result<Vec<ReviewSession>> {
        let dir = self.config.root.join("sessions");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let path = entry.map_err(|e| io_err(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        ids.iter().map(|id| self.session(id)).collect()
    }

    fn write_session(&self, s: &ReviewSession) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(s).map_err(|e| ReviewError::Core(TilError::Json(e)))?;
        write_atomic(&self.session_path(&s.session_id), &bytes, false)
    }

    /// Opens a session on a map. Ids are sequential: `s000001`, `s000002`, …
    pub fn create_session(&self, map_id: &str) -> Result<ReviewSession> {
        self.map(map_id)?;
        let _guard = self.create_lock.lock().unwrap();
        let next = self
            .sessions()?
            .iter()
            .filter_map(|s| s.session_id.strip_prefix('s')?.parse::<u64>().ok())
            .max()
            .unwrap_or(0)
            + 1;
        let s = ReviewSession {
            session_id: format!("s{next:06}"),
            map_id: map_id.to_string(),
            current_threshold: 0.5,
            status: SessionStatus::Open,
            committed_manifest: None,
            n_records: None,
        };
        self.write_session(&s)?;
        Ok(s)
    }

    fn session_lock(&self, session_id: &str) -> Arc<Mutex<()>> {
        self.session_locks
            .lock()
            .unwrap()
            .entry(session_id.to_string())
            .or_default()
            .clone()
    }

    /// Harvests the session's map at `t` into a semi-automatic manifest.
    pub fn commit(&self, session_id: &str, req: &CommitRequest) -> Result<ReviewSession> {
        check_t(req.t)?;
        let lock = self.session_lock(session_id);
        let _guard = lock.lock().unwrap();
        let mut s = self.session(session_id)?;
        if s.status == SessionStatus::Committed {
            return Err(ReviewError::Conflict(format!("session {session_id} is already committed")));
        }
        let map = self.map(&s.map_id)?;
        let registry = sampler_registry();
        let sampler = registry.get(req.sampler.as_deref().unwrap_or("uniform"))?;
        let records = harvest_semi_auto(
            &map,
            &HarvestRequest {
                threshold: req.t,
                n_samples: req.n_samples,
                seed: req.seed,
                sampler: sampler.as_ref(),
                patch_root: self.config.patch_root.as_deref(),
            },
        )?;
        let n_records = records.len();
        let manifest = AnnotationManifest::new(session_id, Split::Train, records)?;
        let path = self.manifest_path(session_id);
        write_atomic(&path, &manifest.to_jsonl()?, self.fault_at(FaultPoint::BeforeManifestRename))?;

        s.current_threshold = req.t;
        s.status = SessionStatus::Committed;
        s.committed_manifest = Some(path);
        s.n_records = Some(n_records);
        if self.fault_at(FaultPoint::BeforeSessionWrite) {
            return Err(ReviewError::Injected("before session write"));
        }
        self.write_session(&s)?;
        Ok(s)
    }
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(ReviewError::Core(TilError::OutOfUnitRange { what: "t", value: t }))
    }
}
