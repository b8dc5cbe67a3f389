use super::{CameraPath, Geometry, MotionSegment, Primitive, SceneSpec, Texture};
use crate::error::{Error, Result};
use crate::posegraph::CameraIntrinsics;

pub const STANDARD_SCENES: [&str; 3] = ["dyn-sphere-64", "occlusion-64", "static-64"];

fn waves(base: [f64; 3], amplitude: f64, frequency: f64) -> Texture {
    Texture::Waves { base, amplitude, frequency }
}

fn fixed(geometry: Geometry, texture: Texture) -> Primitive {
    Primitive {
        geometry,
        texture,
        motion: vec![],
    }
}

fn room() -> Vec<Primitive> {
    vec![
        fixed(
            Geometry::Plane {
                normal: [0.0, 0.0, 1.0],
                offset: 0.0,
            },
            waves([0.55, 0.5, 0.4], 0.15, 3.0),
        ),
        fixed(
            Geometry::Plane {
                normal: [0.0, -1.0, 0.0],
                offset: -1.6,
            },
            waves([0.4, 0.5, 0.6], 0.15, 2.5),
        ),
    ]
}

fn base(name: &str, seed: u64, arc_deg: f64, primitives: Vec<Primitive>) -> SceneSpec {
    SceneSpec {
        name: name.into(),
        seed,
        intrinsics: CameraIntrinsics {
            fx: 64.0,
            fy: 64.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        },
        frames: 30,
        camera: CameraPath::Orbit {
            center: [0.0; 3],
            radius: 1.8,
            height: 1.3,
            start_deg: -arc_deg / 2.0,
            end_deg: arc_deg / 2.0,
            target: [0.0, 0.0, 0.2],
            up: [0.0, 0.0, 1.0],
        },
        light: [0.4, -0.5, 0.8],
        background: [0.0; 3],
        primitives,
    }
}

/// 64x64, 30 frames, camera arcing 30 degrees. A textured sphere crosses
/// about a quarter of the image in front of two static boxes.
pub fn dyn_sphere_64(seed: u64) -> SceneSpec {
    let mut p = room();
    p.push(fixed(
        Geometry::Cuboid {
            center: [-0.55, 0.45, 0.25],
            half: [0.2, 0.2, 0.25],
        },
        waves([0.3, 0.6, 0.35], 0.1, 6.0),
    ));
    p.push(fixed(
        Geometry::Cuboid {
            center: [0.55, 0.35, 0.15],
            half: [0.18, 0.18, 0.15],
        },
        waves([0.75, 0.7, 0.3], 0.1, 6.0),
    ));
    p.push(Primitive {
        geometry: Geometry::Sphere {
            center: [-0.25, -0.25, 0.3],
            radius: 0.3,
        },
        texture: waves([0.8, 0.3, 0.25], 0.15, 5.0),
        motion: vec![MotionSegment {
            start: 0,
            velocity: [0.018, 0.0, 0.0],
        }],
    });
    base("dyn-sphere-64", seed, 30.0, p)
}

/// A sphere sweeping in front of a wide static box, hiding and revealing
/// different parts of it over time.
pub fn occlusion_scene(seed: u64) -> SceneSpec {
    let mut p = room();
    p.push(fixed(
        Geometry::Cuboid {
            center: [0.0, 0.35, 0.3],
            half: [0.35, 0.15, 0.3],
        },
        waves([0.3, 0.55, 0.7], 0.15, 7.0),
    ));
    p.push(Primitive {
        geometry: Geometry::Sphere {
            center: [-0.55, -0.3, 0.25],
            radius: 0.25,
        },
        texture: waves([0.85, 0.35, 0.2], 0.15, 5.0),
        motion: vec![MotionSegment {
            start: 0,
            velocity: [0.038, 0.0, 0.0],
        }],
    });
    base("occlusion-64", seed, 20.0, p)
}

/// The standard scene with its sphere frozen mid-way.
pub fn static_scene(seed: u64) -> SceneSpec {
    let mut s = dyn_sphere_64(seed);
    s.name = "static-64".into();
    let sphere = s.primitives.last_mut().unwrap();
    sphere.geometry = Geometry::Sphere {
        center: [0.0, -0.25, 0.3],
        radius: 0.3,
    };
    sphere.motion.clear();
    s
}

pub fn standard_scene(name: &str, seed: u64) -> Result<SceneSpec> {
    match name {
        "dyn-sphere-64" => Ok(dyn_sphere_64(seed)),
        "occlusion-64" => Ok(occlusion_scene(seed)),
        "static-64" => Ok(static_scene(seed)),
        _ => Err(Error::invalid(format!("unknown scene `{name}`; known: {}", STANDARD_SCENES.join(", ")))),
    }
}
