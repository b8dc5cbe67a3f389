use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::{FlowLinks, Trainer};
use crate::diffcore::{AdamState, Moments, ParamGroup, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::posegraph::{PoseSet, SlotSchedule};
use crate::renderer::FieldModel;
use crate::synthscene::SceneBundle;

const MAGIC: &[u8; 8] = b"PFCKPT01";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    requires_grad: bool,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct MomentMeta {
    t: u64,
    m: usize,
    v: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    iteration: u64,
    config: RunConfig,
    models: Vec<FieldModel>,
    poses: PoseSet,
    slots: SlotSchedule,
    trained_slot: Option<usize>,
    params: Vec<ParamMeta>,
    adam_step: u64,
    moments: Vec<Option<MomentMeta>>,
}

/// Trainer state without the scene bundle, as stored on disk.
pub struct Checkpoint {
    pub iteration: u64,
    pub config: RunConfig,
    pub models: Vec<FieldModel>,
    pub poses: PoseSet,
    pub slots: SlotSchedule,
    trained_slot: Option<usize>,
    pub params: ParamSet,
    adam: AdamState,
}

impl Checkpoint {
    pub fn into_trainer(self, bundle: SceneBundle) -> Result<Trainer> {
        Ok(Trainer {
            links: FlowLinks::build(&self.config, &bundle)?,
            config: self.config,
            bundle,
            params: self.params,
            adam: self.adam,
            models: self.models,
            poses: self.poses,
            slots: self.slots,
            iteration: self.iteration,
            trained_slot: self.trained_slot,
        })
    }
}

/// Layout: 8-byte magic, u64 LE header length, JSON header, then every
/// parameter and Adam moment as LE f64. Written to a temporary file and
/// renamed so an interrupted write never clobbers the previous checkpoint.
pub fn save_checkpoint(path: &Path, t: &Trainer) -> Result<()> {
    let mut blob: Vec<f64> = Vec::new();
    let mut params = Vec::with_capacity(t.params.len());
    for id in t.params.ids() {
        let tensor = t.params.get(id);
        params.push(ParamMeta {
            name: t.params.name(id).to_string(),
            group: t.params.group(id),
            shape: tensor.shape().to_vec(),
            requires_grad: tensor.requires_grad(),
            offset: blob.len(),
        });
        blob.extend_from_slice(tensor.data());
    }
    let mut moments = Vec::with_capacity(t.params.len());
    for id in t.params.ids() {
        moments.push(t.adam.moments(id).map(|mo| {
            let m = blob.len();
            blob.extend_from_slice(&mo.m);
            let v = blob.len();
            blob.extend_from_slice(&mo.v);
            MomentMeta { t: mo.t, m, v }
        }));
    }
    let header = Header {
        version: VERSION,
        iteration: t.iteration,
        config: t.config.clone(),
        models: t.models.clone(),
        poses: t.poses.clone(),
        slots: t.slots.clone(),
        trained_slot: t.trained_slot,
        params,
        adam_step: t.adam.step_count(),
        moments,
    };
    let json = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in &blob {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(path, "not a checkpoint"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let h: Header = serde_json::from_slice(&json)?;
    if h.version != VERSION {
        return Err(Error::format(path, format!("unsupported version {}", h.version)));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(path, "truncated value blob"));
    }
    let blob: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let slice = |off: usize, n: usize| {
        blob.get(off..off + n)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::format(path, "value offset past end of file"))
    };

    let mut params = ParamSet::new();
    for p in &h.params {
        let n = p.shape.iter().product();
        let mut tensor = Tensor::new(p.shape.clone(), slice(p.offset, n)?)?;
        tensor.set_requires_grad(p.requires_grad);
        params.add(p.name.clone(), p.group, tensor);
    }
    let mut moments = Vec::with_capacity(h.moments.len());
    for (i, m) in h.moments.iter().enumerate() {
        moments.push(match m {
            Some(m) => {
                let n = params.get(ParamId(i)).numel();
                Some(Moments {
                    m: slice(m.m, n)?,
                    v: slice(m.v, n)?,
                    t: m.t,
                })
            }
            None => None,
        });
    }
    let mut adam = AdamState::new(h.config.adam);
    adam.restore(h.adam_step, moments);
    Ok(Checkpoint {
        iteration: h.iteration,
        config: h.config,
        models: h.models,
        poses: h.poses,
        slots: h.slots,
        trained_slot: h.trained_slot,
        params,
        adam,
    })
}
