use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::descriptors::{DEFAULT_OUT_SIZE, DEFAULT_PATCH_SIZE, DEFAULT_STRIDE};
use crate::matching::DEFAULT_TOP_K;
use crate::pose_solver::{RansacParams, MIN_SAMPLE};

pub const DEFAULT_TEMPLATE_COUNT: usize = 300;
pub const DEFAULT_CROP_PAD: f64 = 1.2;
/// Template camera distance in object diameters.
pub const DEFAULT_RADIUS_FACTOR: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorBackend {
    /// Descriptor tensor files produced by an external exporter.
    Archive,
    /// Synthetic descriptors computed from object-coordinate renders.
    #[default]
    Oracle,
}

impl std::str::FromStr for DescriptorBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "archive" => Ok(Self::Archive),
            "oracle" => Ok(Self::Oracle),
            other => Err(format!("unknown backend '{other}' (expected archive or oracle)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub template_count: usize,
    pub correspondence_top_k: usize,
    pub crop_pad: f64,
    pub out_size: usize,
    pub patch_size: u32,
    pub stride: u32,
    pub ransac: RansacParams,
    pub descriptor_backend: DescriptorBackend,
    pub seed: u64,
    pub radius_factor: f64,
    /// Template store root (`obj_<id>` directories).
    pub store: Option<PathBuf>,
    /// BOP dataset root holding `models/` and the split directory.
    pub dataset: Option<PathBuf>,
    pub split: String,
    /// Scenes to process; all scene directories of the split when empty.
    pub scenes: Vec<u32>,
    /// Detections JSON replacing the ground-truth visible masks.
    pub masks: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            template_count: DEFAULT_TEMPLATE_COUNT,
            correspondence_top_k: DEFAULT_TOP_K,
            crop_pad: DEFAULT_CROP_PAD,
            out_size: DEFAULT_OUT_SIZE,
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_STRIDE,
            ransac: RansacParams::default(),
            descriptor_backend: DescriptorBackend::default(),
            seed: 0,
            radius_factor: DEFAULT_RADIUS_FACTOR,
            store: None,
            dataset: None,
            split: "test".to_string(),
            scenes: Vec::new(),
            masks: None,
            results: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.template_count < 1 {
            return bad("template_count must be >= 1".into());
        }
        if self.correspondence_top_k < MIN_SAMPLE {
            return bad(format!("correspondence_top_k must be >= {MIN_SAMPLE}, got {}", self.correspondence_top_k));
        }
        if !(self.crop_pad >= 1.0) {
            return bad(format!("crop_pad must be >= 1, got {}", self.crop_pad));
        }
        if self.out_size < 32 {
            return bad(format!("out_size must be >= 32, got {}", self.out_size));
        }
        if self.patch_size == 0 || self.stride == 0 || self.patch_size as usize > self.out_size {
            return bad("patch_size and stride must be positive and patch_size <= out_size".into());
        }
        if !(self.radius_factor > 0.5) {
            return bad(format!("radius_factor must be > 0.5, got {}", self.radius_factor));
        }
        self.ransac.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub(crate) fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, PipelineError> {
        field.as_deref().ok_or_else(|| PipelineError::Config(format!("missing path: {name}")))
    }

    /// RANSAC parameters with the run seed applied.
    pub fn ransac_params(&self) -> RansacParams {
        RansacParams { seed: self.seed, ..self.ransac }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let c: PipelineConfig = serde_json::from_str(r#"{"correspondence_top_k": 12, "descriptor_backend": "archive"}"#).unwrap();
        assert_eq!(c.correspondence_top_k, 12);
        assert_eq!(c.descriptor_backend, DescriptorBackend::Archive);
        assert_eq!(c.template_count, 300);
        assert_eq!((c.out_size, c.patch_size, c.stride), (224, 8, 8));
        assert_eq!(c.crop_pad, 1.2);
        assert_eq!(c.ransac.max_iterations, 1000);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_values_rejected() {
        let c = PipelineConfig { correspondence_top_k: 3, ..Default::default() };
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
        let c = PipelineConfig { template_count: 0, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"unknown_knob": 1}"#).is_err());
    }
}
