use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::decode::DecoderConfig;
use crate::deform::{FieldConfig, Stage1Config};
use crate::error::{Error, Result};
use crate::losses::Stage2Weights;
use crate::quadtree::PopulationConfig;
use crate::render::RenderSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraMode {
    Orbit,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scenario: String,
    pub frames: usize,
    pub resolution: usize,
    pub camera_mode: CameraMode,
    /// Multiplies the scenario's deformation; zero gives a rigid scene.
    pub amplitude: f64,
    pub orbit_radius: f64,
    pub elevation_deg: f64,
    /// Focal length in pixels per pixel of image width.
    pub focal_per_pixel: f64,
    /// Held-out cameras sit this far in azimuth on either side of the training view.
    pub test_offset_deg: f64,
    pub test_every: usize,
    /// Prior vertex noise, as a fraction of the bounding-box diagonal.
    pub prior_noise: f64,
    pub prior_deletion: f64,
    pub prior_floaters: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenario: "bending-bar".into(),
            frames: 60,
            resolution: 64,
            camera_mode: CameraMode::Orbit,
            amplitude: 1.0,
            orbit_radius: 4.0,
            elevation_deg: 25.0,
            focal_per_pixel: 90.0 / 64.0,
            test_offset_deg: 45.0,
            test_every: 6,
            prior_noise: 0.01,
            prior_deletion: 0.05,
            prior_floaters: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_faces: usize,
    pub taubin_lambda: f64,
    pub taubin_mu: f64,
    pub taubin_iterations: usize,
    pub icp: bool,
    pub icp_iterations: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_faces: 400,
            taubin_lambda: 0.5,
            taubin_mu: -0.53,
            taubin_iterations: 10,
            icp: true,
            icp_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformSettings {
    pub levels: Vec<usize>,
    pub field: FieldConfig,
}

impl Default for DeformSettings {
    fn default() -> Self {
        DeformSettings {
            levels: vec![2, 4, 8, 16],
            field: FieldConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Settings {
    pub steps: usize,
    pub w_rcd: f64,
    pub w_lap: f64,
    pub w_n: f64,
    /// Chamfer truncation as a fraction of the canonical bounding-box diagonal.
    pub truncation_fraction: f64,
    pub mlp_lr_start: f64,
    pub mlp_lr_end: f64,
    pub logit_lr: f64,
}

impl Default for Stage1Settings {
    fn default() -> Self {
        let c = Stage1Config::default();
        Stage1Settings {
            steps: c.steps,
            w_rcd: c.w_rcd,
            w_lap: c.w_lap,
            w_n: c.w_n,
            truncation_fraction: 0.05,
            mlp_lr_start: c.mlp_lr_start,
            mlp_lr_end: c.mlp_lr_end,
            logit_lr: c.logit_lr,
        }
    }
}

impl Stage1Settings {
    pub fn resolve(&self, bbox_diagonal: f64) -> Stage1Config {
        Stage1Config {
            steps: self.steps,
            w_rcd: self.w_rcd,
            w_lap: self.w_lap,
            w_n: self.w_n,
            truncation: self.truncation_fraction * bbox_diagonal,
            mlp_lr_start: self.mlp_lr_start,
            mlp_lr_end: self.mlp_lr_end,
            logit_lr: self.logit_lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Settings {
    pub steps: usize,
    pub weights: Stage2Weights,
    pub feature_dim: usize,
    pub beta: f64,
    pub max_depth: usize,
    pub initial_opacity: f64,
    pub cadence: usize,
    pub head: usize,
    pub tail: usize,
    pub population: PopulationConfig,
    pub mlp_lr_start: f64,
    pub mlp_lr_end: f64,
    /// Features, edge ratios, position and feature-weight logits.
    pub feature_lr: f64,
    pub opacity_lr: f64,
    pub control_logit_lr: f64,
    pub optimize_deformation: bool,
    pub mask_threshold: f64,
    pub snapshot_every: usize,
}

impl Default for Stage2Settings {
    fn default() -> Self {
        Stage2Settings {
            steps: 40000,
            weights: Stage2Weights::default(),
            feature_dim: 128,
            beta: 0.9,
            max_depth: 6,
            initial_opacity: 0.99,
            cadence: 2000,
            head: 5000,
            tail: 5000,
            population: PopulationConfig::default(),
            mlp_lr_start: 1e-3,
            mlp_lr_end: 1e-5,
            feature_lr: 1e-3,
            opacity_lr: 1e-3,
            control_logit_lr: 1e-2,
            optimize_deformation: true,
            mask_threshold: 0.5,
            snapshot_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub deform: DeformSettings,
    pub stage1: Stage1Settings,
    pub stage2: Stage2Settings,
    pub decoder: DecoderConfig,
    pub render: RenderSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            deform: DeformSettings::default(),
            stage1: Stage1Settings::default(),
            stage2: Stage2Settings::default(),
            decoder: DecoderConfig::default(),
            render: RenderSettings::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Copies `src` into `dst`, refusing keys `dst` does not already have.
fn merge(dst: &mut Table, src: Table, prefix: &str) -> Result<()> {
    for (k, v) in src {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (dst.get_mut(&k), v) {
            (None, _) => return Err(Error::Config(format!("unknown key `{path}`"))),
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s, &path)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| config_err("empty key"))?;
    let mut cur = table;
    for p in parts {
        cur = match cur.get_mut(p) {
            Some(Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        };
    }
    match cur.get_mut(last) {
        Some(Value::Table(_)) | None => Err(Error::Config(format!("unknown key `{key}`"))),
        Some(slot) => {
            *slot = value;
            Ok(())
        }
    }
}

impl TrainConfig {
    /// Defaults, then the file (if any), then `key=value` overrides in order.
    /// Overrides may carry a leading `--`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_parts(&text, overrides)
    }

    pub fn from_parts(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = Table::try_from(TrainConfig::default()).map_err(config_err)?;
        let file: Table = toml::from_str(text).map_err(config_err)?;
        merge(&mut table, file, "")?;
        for o in overrides {
            let o = o.trim_start_matches("--");
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: TrainConfig = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(config_err)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("synth.frames", self.synth.frames),
            ("synth.resolution", self.synth.resolution),
            ("synth.test_every", self.synth.test_every),
            ("preprocess.target_faces", self.preprocess.target_faces),
            ("stage1.steps", self.stage1.steps),
            ("stage2.steps", self.stage2.steps),
            ("stage2.feature_dim", self.stage2.feature_dim),
            ("stage2.cadence", self.stage2.cadence),
            ("stage2.snapshot_every", self.stage2.snapshot_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        let w = &self.stage2.weights;
        let weights = [
            self.stage1.w_rcd,
            self.stage1.w_lap,
            self.stage1.w_n,
            w.l1,
            w.ssim,
            w.edge,
            w.lap,
            w.alpha,
            w.normal,
            w.flow,
        ];
        if weights.iter().any(|x| !(*x >= 0.0)) {
            return Err(config_err("loss weights must be non-negative"));
        }
        if !(self.stage1.truncation_fraction > 0.0) {
            return Err(config_err("`stage1.truncation_fraction` must be positive"));
        }
        if !(self.stage2.beta > 0.0) || !(self.stage2.initial_opacity > 0.0 && self.stage2.initial_opacity < 1.0) {
            return Err(config_err("`stage2.beta` must be positive and `stage2.initial_opacity` in (0, 1)"));
        }
        if self.deform.levels.is_empty() {
            return Err(config_err("`deform.levels` must not be empty"));
        }
        Ok(())
    }
}
