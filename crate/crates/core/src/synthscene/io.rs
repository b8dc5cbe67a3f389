use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::{FrameRecord, SceneBundle, SceneSpec};
use crate::error::{Error, Result};
use crate::posegraph::Rigid;

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "planefield-bundle";
const FLO_MAGIC: &[u8; 4] = b"FLO1";

/// Paths are relative to the bundle root.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    spec: SceneSpec,
    frames: Vec<FrameEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    index: usize,
    /// World from camera, `[R row-major, t]`.
    pose: [f64; 12],
    rgb: String,
    inv_depth: String,
    /// Inverse depth that maps to code 65535.
    inv_depth_max: f64,
    mask: String,
    flow_fwd: Option<String>,
    flow_bwd: Option<String>,
    occluded_fwd: Option<String>,
    occluded_bwd: Option<String>,
}

fn missing_or(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingFile(path.to_path_buf())
    } else {
        e.into()
    }
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?)
}

/// 8-bit RGB PNG from row-major values in `[0, 1]`.
pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    let buf: Vec<u8> = rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(width as u32, height as u32, buf).unwrap().save(path)?;
    Ok(())
}

pub fn read_png_rgb(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw().into_iter().map(|c| f64::from(c) / 255.0).collect()))
}

/// 16-bit gray PNG from values in `[0, 1]`.
pub fn write_png_gray16(path: &Path, width: usize, height: usize, v: &[f64]) -> Result<()> {
    assert_eq!(v.len(), width * height);
    let buf: Vec<u16> = v.iter().map(|x| (x.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(width as u32, height as u32, buf).unwrap().save(path)?;
    Ok(())
}

pub fn read_png_gray16(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = open_image(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw().into_iter().map(|c| f64::from(c) / 65535.0).collect()))
}

/// `FLO1` magic, little-endian `u32` width and height, then `(u, v)` pairs
/// as little-endian `f32`, row-major.
pub fn write_flo(path: &Path, width: usize, height: usize, flow: &[f32]) -> Result<()> {
    assert_eq!(flow.len(), width * height * 2);
    let mut out = Vec::with_capacity(12 + flow.len() * 4);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    for v in flow {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_flo(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| missing_or(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
        return Err(Error::format(path, "missing FLO1 header"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + w * h * 8 {
        return Err(Error::format(path, format!("{} payload bytes for a {w}x{h} raster", bytes.len() - 12)));
    }
    let flow = bytes[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((w, h, flow))
}

fn bools(v: &[bool]) -> Vec<f64> {
    v.iter().map(|&b| f64::from(u8::from(b))).collect()
}

/// Writes `manifest.json` and per-frame rasters under `root/frames/`.
pub fn write_bundle(root: &Path, bundle: &SceneBundle) -> Result<()> {
    let (w, h) = (bundle.width(), bundle.height());
    std::fs::create_dir_all(root.join("frames"))?;
    let mut entries = Vec::new();
    for (q, f) in bundle.frames.iter().enumerate() {
        let name = |kind: &str, ext: &str| format!("frames/{q:05}_{kind}.{ext}");
        let inv_max = f.inv_depth.iter().copied().fold(0.0, f64::max);
        let scaled: Vec<f64> = f.inv_depth.iter().map(|d| if inv_max > 0.0 { d / inv_max } else { 0.0 }).collect();
        let e = FrameEntry {
            index: q,
            pose: f.pose.to_row(),
            rgb: name("rgb", "png"),
            inv_depth: name("invdepth", "png"),
            inv_depth_max: inv_max,
            mask: name("mask", "png"),
            flow_fwd: f.flow_fwd.as_ref().map(|_| name("flow_fwd", "flo")),
            flow_bwd: f.flow_bwd.as_ref().map(|_| name("flow_bwd", "flo")),
            occluded_fwd: f.occluded_fwd.as_ref().map(|_| name("occ_fwd", "png")),
            occluded_bwd: f.occluded_bwd.as_ref().map(|_| name("occ_bwd", "png")),
        };
        write_png_rgb(&root.join(&e.rgb), w, h, &f.image)?;
        write_png_gray16(&root.join(&e.inv_depth), w, h, &scaled)?;
        write_png_gray16(&root.join(&e.mask), w, h, &bools(&f.mask))?;
        for (file, flow) in [(&e.flow_fwd, &f.flow_fwd), (&e.flow_bwd, &f.flow_bwd)] {
            if let (Some(file), Some(flow)) = (file, flow) {
                write_flo(&root.join(file), w, h, flow)?;
            }
        }
        for (file, occ) in [(&e.occluded_fwd, &f.occluded_fwd), (&e.occluded_bwd, &f.occluded_bwd)] {
            if let (Some(file), Some(occ)) = (file, occ) {
                write_png_gray16(&root.join(file), w, h, &bools(occ))?;
            }
        }
        entries.push(e);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        spec: bundle.spec.clone(),
        frames: entries,
    };
    std::fs::write(root.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_bundle(root: &Path) -> Result<SceneBundle> {
    let mpath = root.join(MANIFEST);
    let text = std::fs::read_to_string(&mpath).map_err(|e| missing_or(&mpath, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if m.format != FORMAT || m.version != 1 {
        return Err(Error::format(&mpath, format!("unsupported bundle format {} v{}", m.format, m.version)));
    }
    let (w, h) = (m.spec.intrinsics.width, m.spec.intrinsics.height);
    let check = |p: &PathBuf, rw: usize, rh: usize| {
        if (rw, rh) != (w, h) {
            Err(Error::format(p, format!("raster is {rw}x{rh}, expected {w}x{h}")))
        } else {
            Ok(())
        }
    };
    let gray = |rel: &str| -> Result<Vec<f64>> {
        let p = root.join(rel);
        let (rw, rh, v) = read_png_gray16(&p)?;
        check(&p, rw, rh)?;
        Ok(v)
    };
    let flo = |rel: &Option<String>| -> Result<Option<Vec<f32>>> {
        rel.as_ref()
            .map(|rel| {
                let p = root.join(rel);
                let (rw, rh, v) = read_flo(&p)?;
                check(&p, rw, rh)?;
                Ok(v)
            })
            .transpose()
    };
    let flags = |rel: &Option<String>| -> Result<Option<Vec<bool>>> { rel.as_ref().map(|r| Ok(gray(r)?.into_iter().map(|v| v > 0.5).collect())).transpose() };
    let mut frames = Vec::with_capacity(m.frames.len());
    for (q, e) in m.frames.iter().enumerate() {
        if e.index != q {
            return Err(Error::format(&mpath, format!("frame entry {q} has index {}", e.index)));
        }
        let p = root.join(&e.rgb);
        let (rw, rh, image) = read_png_rgb(&p)?;
        check(&p, rw, rh)?;
        frames.push(FrameRecord {
            image,
            inv_depth: gray(&e.inv_depth)?.into_iter().map(|v| v * e.inv_depth_max).collect(),
            mask: gray(&e.mask)?.into_iter().map(|v| v > 0.5).collect(),
            flow_fwd: flo(&e.flow_fwd)?,
            flow_bwd: flo(&e.flow_bwd)?,
            occluded_fwd: flags(&e.occluded_fwd)?,
            occluded_bwd: flags(&e.occluded_bwd)?,
            pose: Rigid::from_row(&e.pose),
        });
    }
    if frames.len() != m.spec.frames {
        return Err(Error::format(&mpath, format!("{} frame entries for a {}-frame scene", frames.len(), m.spec.frames)));
    }
    Ok(SceneBundle { spec: m.spec, frames })
}
