use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{sigmoid, ParamGroup, ParamId, ParamSet, Tensor};
use crate::error::Result;
use crate::fieldgrid::{FieldPurpose, GridResolution, HexPlaneField, Init, VmField};
use crate::nets::{ColorHead, EncodingSpec, FlowHead, HeadWidths, SeparationHead};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub rank_separation: usize,
    pub rank_density: usize,
    pub rank_appearance: usize,
    pub spatial_resolution: usize,
    /// Time nodes; 0 picks `max(ceil(Q / 2), 8)`.
    pub time_resolution: usize,
    pub position_encoding: EncodingSpec,
    pub direction_encoding: EncodingSpec,
    pub time_encoding: EncodingSpec,
    pub heads: HeadWidths,
    /// Added to the summed density features before softplus.
    pub density_bias: f64,
    pub init_scale: f64,
    pub tau_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rank_separation: 4,
            rank_density: 8,
            rank_appearance: 12,
            spatial_resolution: 64,
            time_resolution: 0,
            position_encoding: EncodingSpec {
                frequencies: 6,
                include_input: true,
            },
            direction_encoding: EncodingSpec {
                frequencies: 4,
                include_input: true,
            },
            time_encoding: EncodingSpec {
                frequencies: 4,
                include_input: false,
            },
            heads: HeadWidths::default(),
            density_bias: 0.0,
            init_scale: 0.1,
            tau_init: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn time_nodes(&self, frames: usize) -> usize {
        if self.time_resolution > 0 {
            self.time_resolution.max(2)
        } else {
            frames.div_ceil(2).max(8)
        }
    }
}

/// One local radiance field: grids, heads and threshold, plus the affine
/// map from world to field coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub separation: HexPlaneField,
    pub static_density: VmField,
    pub static_appearance: VmField,
    pub dynamic_density: HexPlaneField,
    pub dynamic_appearance: HexPlaneField,
    pub mask_head: SeparationHead,
    pub color_head: ColorHead,
    pub flow_head: FlowHead,
    /// Threshold logit.
    pub tau: ParamId,
    pub density_bias: f64,
    pub center: [f64; 3],
    pub scale: f64,
}

impl FieldModel {
    pub fn new(params: &mut ParamSet, cfg: &ModelConfig, frames: usize, center: [f64; 3], scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res = GridResolution {
            spatial: cfg.spatial_resolution,
            time: cfg.time_nodes(frames),
        };
        let s = cfg.init_scale;
        let noise = Init { offset: 0.0, scale: s };
        let near_one = Init { offset: 1.0, scale: s };
        let hex = |params: &mut ParamSet, name, purpose, rank, rng: &mut ChaCha8Rng| {
            HexPlaneField::new(params, name, purpose, rank, res, noise, near_one, rng)
        };
        let separation = hex(params, "sep", FieldPurpose::Separation, cfg.rank_separation, &mut rng)?;
        let dynamic_density = hex(params, "dyn_sigma", FieldPurpose::DynamicDensity, cfg.rank_density, &mut rng)?;
        let dynamic_appearance = hex(params, "dyn_app", FieldPurpose::DynamicAppearance, cfg.rank_appearance, &mut rng)?;
        let n = cfg.spatial_resolution;
        let static_density = VmField::new(params, "st_sigma", FieldPurpose::StaticDensity, cfg.rank_density, n, near_one, noise, &mut rng)?;
        let static_appearance =
            VmField::new(params, "st_app", FieldPurpose::StaticAppearance, cfg.rank_appearance, n, near_one, noise, &mut rng)?;
        let mask_head = SeparationHead::new(params, separation.output_dim(), &cfg.heads.mask, &mut rng)?;
        let color_head = ColorHead::new(
            params,
            static_appearance.output_dim(),
            cfg.position_encoding,
            cfg.direction_encoding,
            &cfg.heads,
            &mut rng,
        )?;
        let flow_pos = EncodingSpec {
            include_input: false,
            ..cfg.position_encoding
        };
        let flow_time = EncodingSpec {
            include_input: false,
            ..cfg.time_encoding
        };
        let flow_head = FlowHead::new(params, flow_pos, flow_time, &cfg.heads.flow, &mut rng)?;
        let logit = (cfg.tau_init / (1.0 - cfg.tau_init)).ln();
        let tau = params.add("tau", ParamGroup::Threshold, Tensor::param([1, 1], vec![logit])?);
        Ok(Self {
            separation,
            static_density,
            static_appearance,
            dynamic_density,
            dynamic_appearance,
            mask_head,
            color_head,
            flow_head,
            tau,
            density_bias: cfg.density_bias,
            center,
            scale,
        })
    }

    pub fn tau(&self, params: &ParamSet) -> f64 {
        sigmoid(params.get(self.tau).data()[0])
    }

    pub fn grid_ids(&self) -> Vec<ParamId> {
        let mut ids = self.separation.param_ids();
        ids.extend(self.static_density.param_ids());
        ids.extend(self.static_appearance.param_ids());
        ids.extend(self.dynamic_density.param_ids());
        ids.extend(self.dynamic_appearance.param_ids());
        ids
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.grid_ids();
        ids.extend(self.mask_head.mlp.param_ids());
        ids.extend(self.color_head.param_ids());
        ids.extend(self.flow_head.param_ids());
        ids.push(self.tau);
        ids
    }

    /// Resample every grid to a new spatial resolution. Returns the ids
    /// whose optimizer state must be reset.
    pub fn upsample(&mut self, params: &mut ParamSet, spatial: usize) -> Result<Vec<ParamId>> {
        let mut ids = self.separation.upsample_spatial(params, spatial)?;
        ids.extend(self.dynamic_density.upsample_spatial(params, spatial)?);
        ids.extend(self.dynamic_appearance.upsample_spatial(params, spatial)?);
        ids.extend(self.static_density.upsample(params, spatial)?);
        ids.extend(self.static_appearance.upsample(params, spatial)?);
        Ok(ids)
    }

    pub fn spatial_resolution(&self) -> usize {
        self.static_density.resolution
    }

    pub fn to_local(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| (x[k] - self.center[k]) / self.scale)
    }
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        rank_separation: 1,
        rank_density: 1,
        rank_appearance: 2,
        spatial_resolution: 3,
        time_resolution: 2,
        position_encoding: EncodingSpec {
            frequencies: 1,
            include_input: true,
        },
        direction_encoding: EncodingSpec {
            frequencies: 1,
            include_input: true,
        },
        time_encoding: EncodingSpec {
            frequencies: 1,
            include_input: false,
        },
        heads: HeadWidths {
            mask: vec![4],
            view: vec![3],
            color: vec![4],
            flow: vec![4],
        },
        density_bias: 0.0,
        init_scale: 0.5,
        tau_init: 0.5,
    }
}
