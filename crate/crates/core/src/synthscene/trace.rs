use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-9;

/// Analytic primitive shape in world coordinates at frame 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box.
    Cuboid { center: [f64; 3], half: [f64; 3] },
    /// Infinite plane `n·x = offset`; `normal` need not be unit.
    Plane { normal: [f64; 3], offset: f64 },
}

pub(crate) struct Hit {
    pub t: f64,
    pub normal: [f64; 3],
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    v.map(|c| c / n)
}

impl Geometry {
    pub fn is_degenerate(&self) -> bool {
        match self {
            Geometry::Sphere { center, radius } => !(radius.is_finite() && *radius > 0.0) || center.iter().any(|c| !c.is_finite()),
            Geometry::Cuboid { center, half } => half.iter().any(|h| !(h.is_finite() && *h > 0.0)) || center.iter().any(|c| !c.is_finite()),
            Geometry::Plane { normal, offset } => !(dot(*normal, *normal) > 0.0) || !offset.is_finite(),
        }
    }

    /// Nearest intersection with `t > EPS` of the ray `o + t d` (unit `d`)
    /// after translating the shape by `shift`. Normals face the ray.
    pub(crate) fn intersect(&self, o: [f64; 3], d: [f64; 3], shift: [f64; 3]) -> Option<Hit> {
        let o: [f64; 3] = std::array::from_fn(|k| o[k] - shift[k]);
        let hit = match self {
            Geometry::Sphere { center, radius } => {
                let oc: [f64; 3] = std::array::from_fn(|k| o[k] - center[k]);
                let b = dot(oc, d);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > EPS { -b - s } else { -b + s };
                if t <= EPS {
                    return None;
                }
                let p: [f64; 3] = std::array::from_fn(|k| oc[k] + t * d[k]);
                Hit {
                    t,
                    normal: p.map(|c| c / radius),
                }
            }
            Geometry::Cuboid { center, half } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut a0, mut a1) = (0, 0);
                for k in 0..3 {
                    let lo = center[k] - half[k] - o[k];
                    let hi = center[k] + half[k] - o[k];
                    if d[k].abs() < 1e-300 {
                        if lo > 0.0 || hi < 0.0 {
                            return None;
                        }
                        continue;
                    }
                    let (mut n, mut f) = (lo / d[k], hi / d[k]);
                    if n > f {
                        std::mem::swap(&mut n, &mut f);
                    }
                    if n > t0 {
                        t0 = n;
                        a0 = k;
                    }
                    if f < t1 {
                        t1 = f;
                        a1 = k;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let (t, axis) = if t0 > EPS { (t0, a0) } else { (t1, a1) };
                if t <= EPS {
                    return None;
                }
                let mut normal = [0.0; 3];
                normal[axis] = 1.0;
                Hit { t, normal }
            }
            Geometry::Plane { normal, offset } => {
                let den = dot(*normal, d);
                if den.abs() < 1e-12 {
                    return None;
                }
                let t = (offset - dot(*normal, o)) / den;
                if t <= EPS {
                    return None;
                }
                Hit { t, normal: normalize(*normal) }
            }
        };
        let n = if dot(hit.normal, d) > 0.0 { hit.normal.map(|c| -c) } else { hit.normal };
        Some(Hit { t: hit.t, normal: n })
    }
}
