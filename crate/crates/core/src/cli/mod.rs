//! Training, rendering and evaluation driver behind the `planefield` binary.
//!
//! A training run writes into its output directory:
//! `config.toml` (effective configuration), `train_log.csv`,
//! `trajectory.csv` (estimated poses) and `checkpoint.bin`.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod train;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Ablation, PoseConfig, PoseMode, RunConfig, TrainConfig};
pub use metrics::{iou, psnr, ssim, Metrics};
pub use train::{LogRow, RenderedFrame, Trainer, LOG_HEADER};

use crate::error::{Error, Result};
use crate::posegraph::{ate_rte, write_trajectory_csv, Rigid};
use crate::renderer::RenderMode;
use crate::synthscene::{generate, read_bundle, standard_scene, write_bundle, write_png_gray16, write_png_rgb, SceneBundle, SceneSpec};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.json";

/// Cap the global worker pool at `PLANEFIELD_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("PLANEFIELD_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("PLANEFIELD_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Scene spec from a JSON/TOML file, or one of the built-in scenes by name.
pub fn load_scene_spec(source: &str, seed: Option<u64>) -> Result<SceneSpec> {
    let path = Path::new(source);
    let mut spec = if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{source}: {e}")))?
        } else {
            toml::from_str::<SceneSpec>(&text).map_err(|e| Error::Config(format!("{source}: {e}")))?
        }
    } else {
        standard_scene(source, seed.unwrap_or(0)).map_err(|e| Error::Config(e.to_string()))?
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

/// Generate a bundle and write it under `out`.
pub fn cmd_gen(source: &str, seed: Option<u64>, frames: Option<usize>, out: &Path) -> Result<SceneBundle> {
    let mut spec = load_scene_spec(source, seed)?;
    if let Some(q) = frames {
        spec.frames = q;
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let bundle = generate(&spec)?;
    write_bundle(out, &bundle)?;
    log::info!("wrote {} frames of `{}` to {}", bundle.frames.len(), spec.name, out.display());
    Ok(bundle)
}

fn read_log(path: &Path, before: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|i| i.parse::<u64>().ok()).is_some_and(|i| i < before))
        .map(str::to_string)
        .collect())
}

/// How a training command starts and where it stops.
#[derive(Clone, Debug, Default)]
pub struct TrainRequest {
    /// Continue from this checkpoint with its stored configuration; the
    /// one passed to [`cmd_train`] is ignored.
    pub resume: Option<PathBuf>,
    /// Output directory for a resumed run; defaults to the stored one.
    pub resume_out: Option<PathBuf>,
    /// Stop after this many iterations without shortening the schedules.
    pub stop_at: Option<u64>,
}

/// Train from scratch or continue a checkpoint. A numeric failure returns
/// its error and leaves the last checkpoint in place.
pub fn cmd_train(config: RunConfig, req: &TrainRequest) -> Result<Trainer> {
    let mut trainer = match &req.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let bundle = read_bundle(&ckpt.config.scene)?;
            let mut t = ckpt.into_trainer(bundle)?;
            if let Some(out) = &req.resume_out {
                t.config.out = out.clone();
            }
            t
        }
        None => {
            let bundle = read_bundle(&config.scene)?;
            Trainer::new(config, bundle)?
        }
    };
    let end = req.stop_at.unwrap_or(u64::MAX).min(trainer.config.train.iterations);
    let out = trainer.config.out.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(CONFIG_FILE), trainer.config.to_toml())?;
    let log_path = out.join(LOG_FILE);
    let previous = read_log(&log_path, trainer.iteration)?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    writeln!(log, "{LOG_HEADER}")?;
    for l in previous {
        writeln!(log, "{l}")?;
    }
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let every = trainer.config.train.checkpoint_every;
    while trainer.iteration < end {
        let row = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                log.flush()?;
                log::error!("aborting at iteration {}: {e}", trainer.iteration);
                return Err(e);
            }
        };
        writeln!(log, "{}", row.csv())?;
        if row.iteration % 100 == 0 {
            log::info!("iter {} loss {:.5} frames {}", row.iteration, row.total, row.frames_added);
        }
        if every > 0 && trainer.iteration % every == 0 {
            log.flush()?;
            save_checkpoint(&ckpt_path, &trainer)?;
        }
    }
    log.flush()?;
    save_checkpoint(&ckpt_path, &trainer)?;
    write_trajectory_csv(&out.join(TRAJECTORY_FILE), &trainer.estimated_trajectory())?;
    Ok(trainer)
}

/// Restore a trainer; the bundle comes from `scene` or the path stored in
/// the checkpoint.
pub fn load_trainer(checkpoint: &Path, scene: Option<&Path>) -> Result<Trainer> {
    let ckpt = load_checkpoint(checkpoint)?;
    let root = scene.map(Path::to_path_buf).unwrap_or_else(|| ckpt.config.scene.clone());
    let bundle = read_bundle(&root)?;
    ckpt.into_trainer(bundle)
}

fn save_frame(dir: &Path, stem: &str, w: usize, h: usize, f: &RenderedFrame) -> Result<Vec<PathBuf>> {
    let rgb = dir.join(format!("{stem}_rgb.png"));
    let inv = dir.join(format!("{stem}_invdepth.png"));
    let mask = dir.join(format!("{stem}_mask.png"));
    write_png_rgb(&rgb, w, h, &f.rgb)?;
    let max = f.inv_depth.iter().copied().fold(0.0, f64::max);
    let scaled: Vec<f64> = f.inv_depth.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
    write_png_gray16(&inv, w, h, &scaled)?;
    write_png_gray16(&mask, w, h, &f.mask)?;
    Ok(vec![rgb, inv, mask])
}

/// PNG triplets (RGB, inverse depth, mask) for each frame, plus
/// static-only and dynamic-only renders when `split` is set.
pub fn cmd_render(trainer: &Trainer, frames: &[usize], out: &Path, split: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let (w, h) = (trainer.bundle.width(), trainer.bundle.height());
    let mut written = Vec::new();
    for &q in frames {
        if q >= trainer.bundle.frames.len() {
            return Err(Error::invalid(format!("frame {q} out of range")));
        }
        let f = trainer.render_frame(q, RenderMode::Full)?;
        written.extend(save_frame(out, &format!("{q:05}"), w, h, &f)?);
        if split {
            for (mode, tag) in [(RenderMode::StaticOnly, "static"), (RenderMode::DynamicOnly, "dynamic")] {
                let f = trainer.render_frame(q, mode)?;
                written.extend(save_frame(out, &format!("{q:05}_{tag}"), w, h, &f)?);
            }
        }
    }
    Ok(written)
}

/// Image metrics averaged over `frames` plus trajectory error over the
/// whole sequence. `renders` holds (RGB, mask probability) per frame.
pub fn score(bundle: &SceneBundle, frames: &[usize], renders: &[(Vec<f64>, Vec<f64>)], estimated: &[Rigid]) -> Result<Metrics> {
    if frames.len() != renders.len() || frames.is_empty() {
        return Err(Error::invalid("need one render per scored frame"));
    }
    let (w, h) = (bundle.width(), bundle.height());
    let n = frames.len() as f64;
    let mut m = Metrics {
        frames: frames.to_vec(),
        ..Default::default()
    };
    for (&q, (rgb, mask)) in frames.iter().zip(renders) {
        let gt = &bundle.frames[q];
        m.psnr += psnr(rgb, &gt.image) / n;
        m.ssim += ssim(rgb, &gt.image, w, h) / n;
        let pred: Vec<bool> = mask.iter().map(|&v| v > 0.5).collect();
        m.mask_iou += iou(&pred, &gt.mask) / n;
    }
    let traj = ate_rte(estimated, &bundle.poses())?;
    m.ate = traj.ate;
    m.rte = traj.rte;
    Ok(m)
}

/// Held-out frames when the run has any, every frame otherwise.
pub fn eval_frames(trainer: &Trainer) -> Vec<usize> {
    let held = trainer.held_out_frames();
    if held.is_empty() {
        (0..trainer.bundle.frames.len()).collect()
    } else {
        held
    }
}

pub fn cmd_eval(trainer: &Trainer, out: Option<&Path>) -> Result<Metrics> {
    let frames = eval_frames(trainer);
    let renders = frames
        .iter()
        .map(|&q| trainer.render_frame(q, RenderMode::Full).map(|f| (f.rgb, f.mask)))
        .collect::<Result<Vec<_>>>()?;
    let m = score(&trainer.bundle, &frames, &renders, &trainer.estimated_trajectory())?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(METRICS_FILE), m.to_json()?)?;
    }
    Ok(m)
}
