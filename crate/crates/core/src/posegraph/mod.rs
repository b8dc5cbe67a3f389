//! Pinhole camera, rigid transforms, learnable per-frame poses, local-field
//! scheduling and trajectory metrics.

mod ops;
mod poses;
mod slots;
mod trajectory;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ops::{apply_graph, compose_graph, project_graph, se3_exp_graph, ApplyKind};
pub use poses::PoseSet;
pub use slots::{LocalFieldSlot, SlotSchedule};
pub use trajectory::{ate_rte, read_trajectory_csv, umeyama, write_trajectory_csv, Similarity, TrajectoryError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let inside = (0.0..=self.width as f64).contains(&self.cx) && (0.0..=self.height as f64).contains(&self.cy);
        if !(self.fx > 0.0 && self.fy > 0.0) || !inside || self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!("bad intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Camera-frame point to pixel `(u, v)`.
    pub fn project(&self, x: [f64; 3]) -> Result<[f64; 2]> {
        if x[2] <= 0.0 {
            return Err(Error::BehindCamera(x[2]));
        }
        Ok([self.fx * x[0] / x[2] + self.cx, self.fy * x[1] / x[2] + self.cy])
    }

    /// Pixel and z-depth to a camera-frame point.
    pub fn unproject(&self, p: [f64; 2], depth: f64) -> Result<[f64; 3]> {
        if depth <= 0.0 || depth.is_nan() {
            return Err(Error::invalid(format!("unproject depth {depth} must be positive")));
        }
        Ok([depth * (p[0] - self.cx) / self.fx, depth * (p[1] - self.cy) / self.fy, depth])
    }

    /// Camera-frame direction through pixel `p`, scaled to unit z.
    pub fn ray_direction(&self, p: [f64; 2]) -> [f64; 3] {
        [(p[0] - self.cx) / self.fx, (p[1] - self.cy) / self.fy, 1.0]
    }

    /// Center of pixel `(row, col)`.
    pub fn pixel_center(row: usize, col: usize) -> [f64; 2] {
        [col as f64 + 0.5, row as f64 + 0.5]
    }
}

/// Rigid transform `x -> R x + t`. Camera poses are world-from-camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self { r, t }
    }

    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            r: self.r * other.r,
            t: self.r * other.t + self.t,
        }
    }

    pub fn inverse(&self) -> Rigid {
        let rt = self.r.transpose();
        Rigid { r: rt, t: -(rt * self.t) }
    }

    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        (self.r * Vector3::from(x) + self.t).into()
    }

    pub fn rotate(&self, x: [f64; 3]) -> [f64; 3] {
        (self.r * Vector3::from(x)).into()
    }

    pub fn center(&self) -> [f64; 3] {
        self.t.into()
    }

    /// `inv(next) * prev`: maps frame-`q` camera coordinates into frame
    /// `q + 1` camera coordinates.
    pub fn relative(prev: &Rigid, next: &Rigid) -> Rigid {
        next.inverse().compose(prev)
    }

    /// Row-major `R` then `t`.
    pub fn to_row(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = self.r[(i, j)];
            }
            out[9 + i] = self.t[i];
        }
        out
    }

    pub fn from_row(row: &[f64]) -> Rigid {
        assert!(row.len() >= 12, "pose row needs 12 entries");
        Rigid {
            r: Matrix3::from_row_slice(&row[..9]),
            t: Vector3::new(row[9], row[10], row[11]),
        }
    }

    /// `(x, y, z, w)`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.r));
        [q.i, q.j, q.k, q.w]
    }

    pub fn from_quaternion(t: [f64; 3], q: [f64; 4]) -> Rigid {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        Rigid {
            r: q.to_rotation_matrix().into_inner(),
            t: Vector3::from(t),
        }
    }

    /// Camera looking from `eye` toward `target` with image rows pointing
    /// roughly along `-up`. Camera axes: x right, y down, z forward.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Rigid {
        let eye = Vector3::from(eye);
        let z = (Vector3::from(target) - eye).normalize();
        let x = z.cross(&Vector3::from(up)).normalize();
        let y = z.cross(&x);
        Rigid {
            r: Matrix3::from_columns(&[x, y, z]),
            t: eye,
        }
    }
}

/// Exponential map of a twist `(omega, u)`: rotation from `Rotation3::new`
/// (Rodrigues), translation `V u` with `V` the left Jacobian of SO(3).
pub fn se3_exp(twist: [f64; 6]) -> Rigid {
    let w = Vector3::new(twist[0], twist[1], twist[2]);
    let u = Vector3::new(twist[3], twist[4], twist[5]);
    let r = Rotation3::new(w).into_inner();
    let theta = w.norm();
    let wx = w.cross_matrix();
    let v = if theta < 1e-5 {
        Matrix3::identity() + wx * 0.5 + wx * wx / 6.0
    } else {
        let t2 = theta * theta;
        Matrix3::identity() + wx * ((1.0 - theta.cos()) / t2) + wx * wx * ((theta - theta.sin()) / (t2 * theta))
    };
    Rigid { r, t: v * u }
}

pub fn se3_compose(a: &Rigid, b: &Rigid) -> Rigid {
    a.compose(b)
}

/// Frame-to-frame relative transforms `inv(pose[q+1]) * pose[q]`.
pub fn se3_relative(poses: &[Rigid]) -> Vec<Rigid> {
    poses.windows(2).map(|w| Rigid::relative(&w[0], &w[1])).collect()
}

/// Pose given to a newly added frame: the previous frame's pose, or the
/// identity for the first frame.
pub fn init_new_pose(previous: &[Rigid]) -> Rigid {
    previous.last().copied().unwrap_or_else(Rigid::identity)
}
