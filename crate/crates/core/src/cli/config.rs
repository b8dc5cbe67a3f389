use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, PriorSchedule};
use crate::renderer::{ModelConfig, RouteRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    /// Poses read from the bundle and held fixed.
    Oracle,
    /// Poses estimated jointly, frames added one at a time.
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_rays: usize,
    pub samples: usize,
    pub near: f64,
    pub far: f64,
    pub lr_field: f64,
    pub lr_mlp: f64,
    pub lr_pose: f64,
    pub lr_threshold: f64,
    /// Cosine decay ends at this fraction of each base rate.
    pub lr_floor: f64,
    /// Spatial grids grow by `upsample_factor` at each listed iteration.
    pub upsample_at: Vec<u64>,
    pub upsample_factor: f64,
    /// Share of the batch re-rendered along warped rays.
    pub adjacent_fraction: f64,
    /// Samples at or below this weight skip the appearance heads.
    pub weight_threshold: f64,
    /// Frames with `q % holdout_every == holdout_offset` are never trained
    /// on; 0 disables the split.
    pub holdout_every: usize,
    pub holdout_offset: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Distance along the anchor camera's view axis to a local field's
    /// center.
    pub field_distance: f64,
    /// World units per field unit.
    pub field_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 6000,
            batch_rays: 256,
            samples: 48,
            near: 0.5,
            far: 6.0,
            lr_field: 2e-2,
            lr_mlp: 1e-3,
            lr_pose: 5e-4,
            lr_threshold: 1e-3,
            lr_floor: 0.1,
            upsample_at: vec![2000, 4000],
            upsample_factor: 2.0,
            adjacent_fraction: 0.25,
            weight_threshold: 1e-4,
            holdout_every: 5,
            holdout_offset: 2,
            checkpoint_every: 1000,
            field_distance: 2.0,
            field_scale: 1.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseConfig {
    pub mode: PoseMode,
    /// Frames added before the first iteration.
    pub initial_frames: usize,
    /// Iterations between frame additions.
    pub add_every: u64,
    pub slot_radius: f64,
    pub slot_overlap: usize,
    /// Free mode: share of each batch drawn from the `recent_frames`
    /// most recently added frames.
    pub recent_fraction: f64,
    pub recent_frames: usize,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            mode: PoseMode::Oracle,
            initial_frames: 2,
            add_every: 100,
            slot_radius: 1.0,
            slot_overlap: 5,
            recent_fraction: 0.5,
            recent_frames: 3,
        }
    }
}

/// Switches for the ablations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub routing: RouteRule,
    /// Off: scene flow is forced to zero and the cycle term dropped.
    pub flow_constraint: bool,
    pub upsampling: bool,
    pub adjacent: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            routing: RouteRule::Learned,
            flow_constraint: true,
            upsampling: true,
            adjacent: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Bundle root directory.
    pub scene: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub priors: PriorSchedule,
    pub adam: AdamConfig,
    pub poses: PoseConfig,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: PathBuf::from("scene"),
            out: PathBuf::from("run"),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            priors: PriorSchedule::default(),
            adam: AdamConfig::default(),
            poses: PoseConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl RunConfig {
    /// TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let bad = |msg: String| Err(Error::Config(msg));
        if t.batch_rays == 0 || t.samples < 2 {
            return bad(format!("need batch_rays > 0 and samples >= 2, got {} and {}", t.batch_rays, t.samples));
        }
        if !(t.near > 0.0 && t.far > t.near) {
            return bad(format!("bad near/far {} / {}", t.near, t.far));
        }
        let rates = [t.lr_field, t.lr_mlp, t.lr_pose, t.lr_threshold, t.lr_floor];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("learning rates must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&t.adjacent_fraction) {
            return bad(format!("adjacent_fraction {} outside [0, 1]", t.adjacent_fraction));
        }
        if t.upsample_factor < 1.0 {
            return bad(format!("upsample_factor {} below 1", t.upsample_factor));
        }
        if t.holdout_every == 1 || (t.holdout_every > 0 && t.holdout_offset >= t.holdout_every) {
            return bad(format!("holdout {} / {} leaves nothing to train on", t.holdout_every, t.holdout_offset));
        }
        if !(t.field_scale > 0.0) {
            return bad("field_scale must be positive".into());
        }
        if self.poses.initial_frames == 0 || !(self.poses.slot_radius > 0.0) {
            return bad("need initial_frames >= 1 and a positive slot radius".into());
        }
        if !(0.0..=1.0).contains(&self.poses.recent_fraction) {
            return bad(format!("recent_fraction {} outside [0, 1]", self.poses.recent_fraction));
        }
        if self.model.spatial_resolution < 2 {
            return bad("spatial_resolution must be at least 2".into());
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn is_held_out(&self, q: usize) -> bool {
        let t = &self.train;
        t.holdout_every > 0 && q % t.holdout_every == t.holdout_offset
    }
}
