use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TilError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TilError {
    #[error("patch size must be at least 1 pixel")]
    InvalidPatchSize,

    #[error("slide {slide_id} ({width}x{height} px) cannot hold a single {patch_px} px patch")]
    EmptyGrid {
        slide_id: String,
        width: u32,
        height: u32,
        patch_px: u32,
    },

    #[error("grid cell ({grid_x}, {grid_y}) is outside the {n_cols}x{n_rows} grid")]
    OutOfBounds {
        grid_x: u32,
        grid_y: u32,
        n_cols: u32,
        n_rows: u32,
    },

    #[error("region ({x}, {y}, {width}x{height}) exceeds the {source_width}x{source_height} pixel source")]
    RegionOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        source_width: u32,
        source_height: u32,
    },

    #[error("cannot read pixel source {path}: {reason}")]
    UnreadableSource { path: String, reason: String },

    #[error("pixel source {path} has color type {color}, expected 8-bit RGB")]
    NonRgbSource { path: String, color: String },

    #[error("{what} {value} is outside [0, 1]")]
    OutOfUnitRange { what: &'static str, value: f64 },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("TIL map has no cells")]
    EmptyMap,

    #[error("input contains a single class; both positives and negatives are required")]
    SingleClass,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid patch record: {0}")]
    InvalidRecord(String),

    #[error("duplicate patch {slide_id} ({grid_x}, {grid_y})")]
    DuplicatePatch {
        slide_id: String,
        grid_x: u32,
        grid_y: u32,
    },

    #[error("cancer type {0} is not covered by the mixture policy")]
    UncoveredCancerType(crate::CancerType),

    #[error("invalid mixture policy: {0}")]
    InvalidPolicy(String),

    #[error("need at least 2 distinct patients to split, found {0}")]
    TooFewPatients(usize),

    #[error("TIL map is missing {0}, required for harvesting")]
    MissingMetadata(&'static str),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("malformed map header: {0}")]
    MalformedHeader(String),

    #[error("map geometry {n_cols}x{n_rows} does not match payload: {detail}")]
    GeometryMismatch {
        n_cols: u32,
        n_rows: u32,
        detail: String,
    },

    #[error("image has {channels} channels; pass an explicit channel to import it")]
    MultiChannelImage { channels: u8 },

    #[error("no threshold supplied for model {0}")]
    MissingThreshold(String),

    #[error("threshold supplied for unknown model {0}")]
    UnknownThresholdModel(String),

    #[error("model {model} expects {expected} px patches, grid uses {actual} px")]
    ModelInputMismatch {
        model: String,
        expected: u32,
        actual: u32,
    },

    #[error("region must be {expected}x{expected} px, got {width}x{height}")]
    WrongRegionSize {
        expected: u32,
        width: u32,
        height: u32,
    },

    #[error("unknown {kind} {name:?}; available: {available}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("scoring failed: {0}")]
    Scoring(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TilError {
    /// Stable machine-readable code, used by the CLI exit path and the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            TilError::InvalidPatchSize => "invalid_patch_size",
            TilError::EmptyGrid { .. } => "empty_grid",
            TilError::OutOfBounds { .. } => "out_of_bounds",
            TilError::RegionOutOfBounds { .. } => "region_out_of_bounds",
            TilError::UnreadableSource { .. } => "unreadable_source",
            TilError::NonRgbSource { .. } => "non_rgb_source",
            TilError::OutOfUnitRange { .. } => "out_of_range",
            TilError::InvalidArgument(_) => "invalid_argument",
            TilError::EmptyMap => "empty_map",
            TilError::SingleClass => "single_class",
            TilError::LengthMismatch { .. } => "length_mismatch",
            TilError::EmptyInput => "empty_input",
            TilError::InvalidRecord(_) => "invalid_record",
            TilError::DuplicatePatch { .. } => "duplicate_patch",
            TilError::UncoveredCancerType(_) => "uncovered_cancer_type",
            TilError::InvalidPolicy(_) => "invalid_policy",
            TilError::TooFewPatients(_) => "too_few_patients",
            TilError::MissingMetadata(_) => "missing_metadata",
            TilError::Parse { .. } => "parse_error",
            TilError::MalformedHeader(_) => "malformed_header",
            TilError::GeometryMismatch { .. } => "geometry_mismatch",
            TilError::MultiChannelImage { .. } => "multi_channel_image",
            TilError::MissingThreshold(_) => "missing_threshold",
            TilError::UnknownThresholdModel(_) => "unknown_threshold_model",
            TilError::ModelInputMismatch { .. } => "model_input_mismatch",
            TilError::WrongRegionSize { .. } => "wrong_region_size",
            TilError::UnknownStrategy { .. } => "unknown_strategy",
            TilError::Scoring(_) => "scoring_failed",
            TilError::Io { .. } => "io_error",
            TilError::Image(_) => "image_error",
            TilError::Json(_) => "json_error",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TilError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(TilError::OutOfUnitRange { what, value })
    }
}
