use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::Rigid;
use crate::error::{Error, Result};

/// `y ≈ s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub s: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x * self.s + self.t
    }
}

/// Least-squares similarity taking `src` onto `dst` (Umeyama).
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::invalid(format!("umeyama needs two equal sets of at least 2 points, got {} and {}", src.len(), dst.len())));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let var_s = src.iter().map(|x| (x - mu_s).norm_squared()).sum::<f64>() / n;
    let mut cov = Matrix3::zeros();
    for (x, y) in src.iter().zip(dst) {
        cov += (y - mu_d) * (x - mu_s).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let s = if var_s > 0.0 {
        (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_s
    } else {
        1.0
    };
    let t = mu_d - r * mu_s * s;
    Ok(Similarity { s, r, t })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryError {
    pub ate: f64,
    pub rte: f64,
    pub scale: f64,
}

/// Similarity-align the estimated camera centers to the oracle ones, then
/// report the RMSE of positions (ATE) and of frame-to-frame translations
/// (RTE), both in oracle units.
pub fn ate_rte(estimated: &[Rigid], oracle: &[Rigid]) -> Result<TrajectoryError> {
    if estimated.len() != oracle.len() {
        return Err(Error::invalid(format!("trajectory lengths differ: {} vs {}", estimated.len(), oracle.len())));
    }
    let est: Vec<Vector3<f64>> = estimated.iter().map(|p| p.t).collect();
    let gt: Vec<Vector3<f64>> = oracle.iter().map(|p| p.t).collect();
    let sim = umeyama(&est, &gt)?;
    let aligned: Vec<Vector3<f64>> = est.iter().map(|x| sim.apply(x)).collect();
    let n = est.len() as f64;
    let ate = (aligned.iter().zip(&gt).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / n).sqrt();
    let rte = (aligned
        .windows(2)
        .zip(gt.windows(2))
        .map(|(a, b)| ((a[1] - a[0]) - (b[1] - b[0])).norm_squared())
        .sum::<f64>()
        / (n - 1.0))
        .sqrt();
    Ok(TrajectoryError { ate, rte, scale: sim.s })
}

const HEADER: &str = "frame,tx,ty,tz,qx,qy,qz,qw";

/// One line per pose, every real printed with 17 significant digits.
pub fn write_trajectory_csv(path: &Path, poses: &[Rigid]) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (q, p) in poses.iter().enumerate() {
        write!(out, "{q}").unwrap();
        for v in p.center().into_iter().chain(p.quaternion()) {
            write!(out, ",{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<Rigid>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(Error::format(path, "missing trajectory header"));
    }
    let mut poses = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: &str| Error::format(path, format!("line {}: {msg}", i + 2));
        if cols.len() != 8 {
            return Err(bad("expected 8 columns"));
        }
        let q: usize = cols[0].parse().map_err(|_| bad("bad frame index"))?;
        if q != poses.len() {
            return Err(bad("frame indices must be consecutive from 0"));
        }
        let v: Vec<f64> = cols[1..].iter().map(|c| c.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad number"))?;
        poses.push(Rigid::from_quaternion([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]]));
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posegraph::se3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal(rng: &mut impl Rng) -> f64 {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn arc(n: usize) -> Vec<Rigid> {
        (0..n)
            .map(|i| {
                let a = -0.3 + 0.6 * i as f64 / (n - 1) as f64;
                Rigid::look_at([2.0 * a.sin(), -2.0 * a.cos(), 1.0], [0.0; 3], [0.0, 0.0, 1.0])
            })
            .collect()
    }

    #[test]
    fn identical_trajectories() {
        let t = arc(10);
        let e = ate_rte(&t, &t).unwrap();
        assert!(e.ate < 1e-12 && e.rte < 1e-12, "{e:?}");
    }

    #[test]
    fn similarity_invariance() {
        let t = arc(12);
        let g = se3_exp([0.3, -0.2, 0.9, 4.0, -1.0, 2.0]);
        let moved: Vec<Rigid> = t
            .iter()
            .map(|p| {
                let mut q = g.compose(p);
                q.t *= 2.0;
                q
            })
            .collect();
        let e = ate_rte(&moved, &t).unwrap();
        assert!(e.ate < 1e-12 && e.rte < 1e-12, "{e:?}");
        assert!((e.scale - 0.5).abs() < 1e-12);
        assert!(ate_rte(&moved[..5], &t).is_err());
    }

    #[test]
    fn noise_level_recovered() {
        let t = arc(30);
        let sigma = 0.01;
        let mut total = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<Rigid> = t
                .iter()
                .map(|p| {
                    let mut q = *p;
                    for k in 0..3 {
                        q.t[k] += sigma * normal(&mut rng);
                    }
                    q
                })
                .collect();
            total += ate_rte(&noisy, &t).unwrap().ate;
        }
        let want = sigma * 3f64.sqrt();
        let mean = total / 100.0;
        assert!((mean - want).abs() / want < 0.2, "mean ATE {mean} vs {want}");
    }

    #[test]
    fn umeyama_recovers_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src: Vec<Vector3<f64>> = (0..20).map(|_| Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0))).collect();
        let g = se3_exp([0.5, 0.1, -0.7, 1.0, 2.0, 3.0]);
        let dst: Vec<Vector3<f64>> = src.iter().map(|x| g.r * x * 1.7 + g.t).collect();
        let sim = umeyama(&src, &dst).unwrap();
        assert!((sim.s - 1.7).abs() < 1e-12);
        assert!((sim.r - g.r).abs().max() < 1e-12);
        assert!((sim.t - g.t).abs().max() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let t = arc(7);
        write_trajectory_csv(&path, &t).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("frame,tx,ty,tz,qx,qy,qz,qw\n0,"));
        let back = read_trajectory_csv(&path).unwrap();
        for (a, b) in t.iter().zip(&back) {
            assert_eq!(a.t, b.t);
            assert!((a.r - b.r).abs().max() < 1e-15);
        }
        assert!(matches!(read_trajectory_csv(&dir.path().join("nope.csv")), Err(Error::MissingFile(_))));
    }
}
