//! Pipeline configuration file.
//!
//! A JSON document; every section and key is optional and falls back to the defaults
//! below. Any key can also be set from the command line as `--set section.key=value`,
//! where `value` is parsed as JSON and taken as a plain string when that fails.
//!
//! ```json
//! {
//!   "seed": 0,
//!   "paths": { "template": null, "template_landmarks": null, "corpus": null,
//!              "model": null, "coupling": null, "output": null },
//!   "model": { "k_g": 200, "k_t": 200 },
//!   "coupling": { "method": "ls", "neutral": false, "ridge": null, "lambda": 1.0,
//!                 "k_joint": null, "temperature": 1.0 },
//!   "alignment": { "w_lm": 10.0, "w_fit": 1.0, "w_reg": 1.0, "max_iters": 10000,
//!                  "step_init": 0.01, "energy_tol": 1e-7,
//!                  "correspondence_refresh": 10, "two_phase": false },
//!   "evaluation": { "folds": 10, "methods": ["random", "nn", "ml", "ls"],
//!                   "texture_resolution": 256, "descriptor_rank": 50,
//!                   "swd": { "resolutions": [128, 64, 32, 16], "patch": 7,
//!                            "patches_per_image": 128, "projections": 128,
//!                            "repeats": 4, "normalize": true,
//!                            "mask_background": true } }
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::alignment::AlignmentParams;
use crate::coupling::{CouplingOptions, Variant};
use crate::error::{Error, Result};
use crate::evaluation::{CvOptions, SwdParams, DEFAULT_DESCRIPTOR_RANK};
use crate::morphable::DEFAULT_RANK;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub template: Option<PathBuf>,
    /// Defaults to the template path with extension `lmk`.
    pub template_landmarks: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub coupling: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub k_g: usize,
    pub k_t: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k_g: DEFAULT_RANK,
            k_t: DEFAULT_RANK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    pub method: Variant,
    /// Replace every geometry by its identity's neutral one before fitting.
    pub neutral: bool,
    pub ridge: Option<f64>,
    pub lambda: f64,
    pub k_joint: Option<usize>,
    pub temperature: f64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        let o = CouplingOptions::default();
        Self {
            method: Variant::LeastSquares,
            neutral: false,
            ridge: o.ridge,
            lambda: o.lambda,
            k_joint: o.k_joint,
            temperature: o.temperature,
        }
    }
}

impl CouplingConfig {
    pub fn options(&self) -> CouplingOptions {
        CouplingOptions {
            k_g: None,
            k_t: None,
            ridge: self.ridge,
            lambda: self.lambda,
            k_joint: self.k_joint,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub w_lm: f64,
    pub w_fit: f64,
    pub w_reg: f64,
    pub max_iters: usize,
    pub step_init: f64,
    pub energy_tol: f64,
    pub correspondence_refresh: usize,
    pub two_phase: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        let p = AlignmentParams::default();
        Self {
            w_lm: p.w_lm,
            w_fit: p.w_fit,
            w_reg: p.w_reg,
            max_iters: p.max_iters,
            step_init: p.step_init,
            energy_tol: p.energy_tol,
            correspondence_refresh: p.correspondence_refresh,
            two_phase: p.two_phase,
        }
    }
}

impl AlignmentConfig {
    pub fn params(&self) -> AlignmentParams {
        AlignmentParams {
            w_lm: self.w_lm,
            w_fit: self.w_fit,
            w_reg: self.w_reg,
            max_iters: self.max_iters,
            step_init: self.step_init,
            energy_tol: self.energy_tol,
            correspondence_refresh: self.correspondence_refresh,
            two_phase: self.two_phase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwdConfig {
    pub resolutions: Vec<usize>,
    pub patch: usize,
    pub patches_per_image: usize,
    pub projections: usize,
    pub repeats: usize,
    pub normalize: bool,
    pub mask_background: bool,
}

impl Default for SwdConfig {
    fn default() -> Self {
        let p = SwdParams::default();
        Self {
            resolutions: p.resolutions,
            patch: p.patch,
            patches_per_image: p.patches_per_image,
            projections: p.projections,
            repeats: p.repeats,
            normalize: p.normalize,
            mask_background: p.mask_background,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub folds: usize,
    pub methods: Vec<Variant>,
    /// Side of the square textures rasterized from vertex colors.
    pub texture_resolution: usize,
    pub descriptor_rank: usize,
    pub swd: SwdConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            folds: CvOptions::default().folds,
            methods: Variant::ALL.to_vec(),
            texture_resolution: 256,
            descriptor_rank: DEFAULT_DESCRIPTOR_RANK,
            swd: SwdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub coupling: CouplingConfig,
    pub alignment: AlignmentConfig,
    pub evaluation: EvaluationConfig,
}

fn format_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{what}: {e}"))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| format_err(&path.display().to_string(), e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| format_err("config", e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the dotted `key` (for example `alignment.w_lm`) to `value`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::invalid(format!("unknown config key {key:?}")))?;
        }
        *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        *self = serde_json::from_value(doc).map_err(|e| Error::invalid(format!("{key}={value}: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` assignments in order.
    pub fn apply_overrides<'a>(&mut self, assignments: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for a in assignments {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got {a:?}")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.k_g == 0 || self.model.k_t == 0 {
            return Err(Error::invalid("model ranks must be positive"));
        }
        if self.coupling.k_joint == Some(0) || self.evaluation.descriptor_rank == 0 {
            return Err(Error::invalid("k_joint and descriptor_rank must be positive"));
        }
        let c = &self.coupling;
        if c.ridge.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::invalid("coupling.ridge must be non-negative"));
        }
        if !(c.lambda > 0.0 && c.lambda.is_finite()) || !(c.temperature >= 0.0 && c.temperature.is_finite()) {
            return Err(Error::invalid("coupling.lambda must be positive and temperature non-negative"));
        }
        self.alignment.params().validate()?;
        let e = &self.evaluation;
        if e.folds < 2 || e.methods.is_empty() || e.texture_resolution < 2 {
            return Err(Error::invalid("evaluation needs folds >= 2, a method and texture_resolution >= 2"));
        }
        let s = &e.swd;
        if s.resolutions.is_empty() || s.patch == 0 || s.patches_per_image == 0 || s.projections == 0 || s.repeats == 0 {
            return Err(Error::invalid("swd parameters must be positive"));
        }
        Ok(())
    }

    /// Landmark sidecar of the template: explicit, or next to the template OBJ.
    pub fn template_landmarks(&self) -> Option<PathBuf> {
        self.paths
            .template_landmarks
            .clone()
            .or_else(|| self.paths.template.as_ref().map(|t| t.with_extension("lmk")))
    }

    pub fn swd_params(&self) -> SwdParams {
        let s = &self.evaluation.swd;
        SwdParams {
            resolutions: s.resolutions.clone(),
            patch: s.patch,
            patches_per_image: s.patches_per_image,
            projections: s.projections,
            repeats: s.repeats,
            seed: self.seed,
            normalize: s.normalize,
            mask_background: s.mask_background,
            directions: None,
        }
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            folds: self.evaluation.folds,
            seed: self.seed,
            k_g: self.model.k_g,
            k_t: self.model.k_t,
            coupling: self.coupling.options(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_documents_keep_other_defaults() {
        let c = PipelineConfig::from_json(r#"{"model": {"k_g": 12}, "coupling": {"method": "nn"}}"#).unwrap();
        assert_eq!((c.model.k_g, c.model.k_t), (12, DEFAULT_RANK));
        assert_eq!(c.coupling.method, Variant::NearestNeighbor);
        assert!(PipelineConfig::from_json(r#"{"modle": {}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"coupling": {"method": "svd"}}"#).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut c = PipelineConfig::default();
        c.apply_overrides(["alignment.w_lm=2.5", "paths.corpus=some/dir", "coupling.ridge=1e-3", "evaluation.swd.resolutions=[64,32]"])
            .unwrap();
        assert_eq!(c.alignment.w_lm, 2.5);
        assert_eq!(c.paths.corpus.as_deref(), Some(Path::new("some/dir")));
        assert_eq!(c.coupling.ridge, Some(1e-3));
        assert_eq!(c.evaluation.swd.resolutions, vec![64, 32]);
        assert!(c.set("alignment.w_lmx", "1").is_err());
        assert!(c.set("model.k_g", "\"many\"").is_err());
        assert!(c.apply_overrides(["seed"]).is_err());
        c.set("alignment.w_reg", "-1").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn landmark_path_defaults_next_to_template() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.template_landmarks(), None);
        c.paths.template = Some("t/face.obj".into());
        assert_eq!(c.template_landmarks(), Some(PathBuf::from("t/face.lmk")));
    }
}
