//! The single JSON document that drives every pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_expansion::TransformerSpec;
use crate::geometry::ScaleCoefficient;
use crate::metrics::MetricOptions;
use crate::orchestrator::{EndpointConfig, InferOptions};
use crate::qa_builder::{DatasetMode, ViewSet};
use crate::view_selection::{SelectionThresholds, TrainingFilter};
use crate::visual_prompting::{CropSource, JointViewConfig, PromptStyle};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Annotation file or directory for the training split.
    pub annotations: PathBuf,
    /// Annotations for the test split; the training annotations when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_annotations: Option<PathBuf>,
    /// Root that frame image paths resolve against.
    pub frames: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "ScaleCoefficient::box_default")]
    pub c: ScaleCoefficient,
    #[serde(default = "ScaleCoefficient::crop_default")]
    pub c_star: ScaleCoefficient,
    #[serde(default)]
    pub crop_source: CropSource,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { c: ScaleCoefficient::box_default(), c_star: ScaleCoefficient::crop_default(), crop_source: CropSource::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub mode: DatasetMode,
    #[serde(default)]
    pub views: ViewSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandDemoConfig {
    pub spec: TransformerSpec,
    pub added: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    8
}

impl Default for ExpandDemoConfig {
    fn default() -> Self {
        Self {
            spec: TransformerSpec { n_blocks: 8, d_model: 32, n_heads: 4, d_ffn: 64, vocab: 64, max_seq: 16, bias: false },
            added: 2,
            seed: 0,
            samples: default_samples(),
        }
    }
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub selection: TrainingFilter,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub prompt: PromptStyle,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub endpoint: EndpointConfig,
    #[serde(default)]
    pub infer: InferOptions,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub expand_demo: ExpandDemoConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl PipelineConfig {
    /// Config with defaults everywhere except the paths.
    pub fn with_paths(annotations: impl Into<PathBuf>, frames: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            paths: PathsConfig {
                annotations: annotations.into(),
                test_annotations: None,
                frames: frames.into(),
                output: output.into(),
            },
            selection: TrainingFilter::default(),
            geometry: GeometryConfig::default(),
            prompt: PromptStyle::default(),
            dataset: DatasetConfig::default(),
            endpoint: EndpointConfig::default(),
            infer: InferOptions::default(),
            metrics: MetricOptions::default(),
            expand_demo: ExpandDemoConfig::default(),
            parallelism: default_parallelism(),
        }
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: origin.to_path_buf(), source })
    }

    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json(&text, path)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.annotations);
        fix(&mut self.paths.frames);
        fix(&mut self.paths.output);
        if let Some(t) = &mut self.paths.test_annotations {
            fix(t);
        }
    }

    pub fn test_annotations(&self) -> &Path {
        self.paths.test_annotations.as_deref().unwrap_or(&self.paths.annotations)
    }

    pub fn joint_view(&self) -> JointViewConfig {
        JointViewConfig {
            c: self.geometry.c,
            c_star: self.geometry.c_star,
            style: self.prompt,
            crop_source: self.geometry.crop_source,
        }
    }

    /// Checks values and that input paths exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for (name, p) in [("paths.annotations", &self.paths.annotations), ("paths.frames", &self.paths.frames)] {
            if !p.exists() {
                return invalid(format!("{name}: {} does not exist", p.display()));
            }
        }
        if let Some(t) = &self.paths.test_annotations {
            if !t.exists() {
                return invalid(format!("paths.test_annotations: {} does not exist", t.display()));
            }
        }
        if self.paths.output.exists() && !self.paths.output.is_dir() {
            return invalid(format!("paths.output: {} is not a directory", self.paths.output.display()));
        }
        let t = self.selection.thresholds;
        SelectionThresholds::new(t.thr_p, t.thr_v).map_err(|e| ConfigError::Invalid(format!("selection: {e}")))?;
        self.prompt.validate().map_err(|e| ConfigError::Invalid(format!("prompt: {e}")))?;
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1".into());
        }
        if self.endpoint.max_attempts == 0 {
            return invalid("endpoint.max_attempts must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.endpoint.temperature) {
            return invalid(format!("endpoint.temperature {} outside [0, 2]", self.endpoint.temperature));
        }
        self.expand_demo.spec.validate().map_err(|e| ConfigError::Invalid(format!("expand_demo: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = PipelineConfig::from_json(
            r#"{"paths": {"annotations": "a.json", "frames": "frames", "output": "out"}}"#,
            Path::new("cfg.json"),
        )
        .unwrap();
        assert_eq!(cfg.geometry.c.value(), 1.2);
        assert_eq!(cfg.geometry.c_star.value(), 1.5);
        assert_eq!(cfg.prompt.pedestrian_color, [0, 255, 0]);
        assert_eq!(cfg.prompt.vehicle_color, [0, 0, 255]);
        assert_eq!(cfg.parallelism, 4);
        assert_eq!(cfg.test_annotations(), Path::new("a.json"));
    }

    #[test]
    fn round_trip() {
        let mut cfg = PipelineConfig::with_paths("a", "f", "o");
        cfg.selection.invert = true;
        cfg.selection.excluded_views.insert("cam9".into());
        cfg.paths.test_annotations = Some("t".into());
        cfg.infer.resend_images = true;
        let again = PipelineConfig::from_json(&cfg.to_json(), Path::new("x")).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_json(), cfg.to_json());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        let doc = r#"{"paths": {"annotations": "a", "frames": "f", "output": "o"}, "colour": 1}"#;
        assert!(matches!(PipelineConfig::from_json(doc, Path::new("x")), Err(ConfigError::Parse { .. })));
        let doc = r#"{"paths": {"annotations": "a", "frames": "f", "output": "o"}, "geometry": {"c": -1}}"#;
        assert!(PipelineConfig::from_json(doc, Path::new("x")).is_err());
    }

    #[test]
    fn validate_checks_paths_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::with_paths(dir.path().join("missing.json"), dir.path(), dir.path().join("out"));
        assert!(cfg.validate().unwrap_err().to_string().contains("paths.annotations"));
        cfg.paths.annotations = dir.path().to_path_buf();
        cfg.validate().unwrap();
        cfg.parallelism = 0;
        assert!(cfg.validate().is_err());
        cfg.parallelism = 1;
        cfg.prompt.vehicle_color = cfg.prompt.pedestrian_color;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"paths": {"annotations": "a.json", "frames": "/abs/frames", "output": "out"}}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.annotations, dir.path().join("a.json"));
        assert_eq!(cfg.paths.frames, Path::new("/abs/frames"));
    }
}
