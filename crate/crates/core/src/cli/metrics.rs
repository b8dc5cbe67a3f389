use serde::{Deserialize, Serialize};

/// Reported when two images are identical.
pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(1 / MSE)` for images in `[0, 1]`.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "image sizes differ");
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WIN: usize = 11;
const SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; WIN] {
    let c = (WIN / 2) as f64;
    let w: [f64; WIN] = std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter, `valid` region only.
fn filter(img: &[f64], w: usize, h: usize, k: &[f64; WIN]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w + 1 - WIN, h + 1 - WIN);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WIN).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WIN).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of one channel with an 11x11 Gaussian window (sigma 1.5)
/// over the valid region, dynamic range 1.
pub fn ssim_gray(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    assert_eq!(a.len(), w * h);
    assert_eq!(b.len(), w * h);
    assert!(w >= WIN && h >= WIN, "images must be at least {WIN}x{WIN}");
    let k = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let (mu_a, ..) = filter(a, w, h, &k);
    let (mu_b, ..) = filter(b, w, h, &k);
    let (aa, ..) = filter(&prod(a, a), w, h, &k);
    let (bb, ..) = filter(&prod(b, b), w, h, &k);
    let (ab, ..) = filter(&prod(a, b), w, h, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mu_a.len();
    (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum::<f64>()
        / n as f64
}

/// SSIM of interleaved RGB images, averaged over channels.
pub fn ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let chan = |img: &[f64], c: usize| img.iter().skip(c).step_by(3).copied().collect::<Vec<f64>>();
    (0..3).map(|c| ssim_gray(&chan(a, c), &chan(b, c), w, h)).sum::<f64>() / 3.0
}

/// Intersection over union of two binary masks; 1 when both are empty.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len());
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mask_iou: f64,
    pub ate: f64,
    pub rte: f64,
    /// Frames the image metrics were averaged over.
    pub frames: Vec<usize>,
}

impl Metrics {
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Vec<f64> {
        (0..w * h).map(|i| ((i % w) as f64 * 0.37 + (i / w) as f64 * 0.11).sin() * 0.4 + 0.5).collect()
    }

    #[test]
    fn psnr_cases() {
        let a = vec![0.3; 100];
        assert_eq!(psnr(&a, &a), 99.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
        assert!(psnr(&[0.0; 10], &[1.0; 10]).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = ramp(20, 16);
        assert!((ssim_gray(&a, &a, 20, 16) - 1.0).abs() < 1e-12);
        let rgb: Vec<f64> = (0..16 * 16 * 3).map(|i| (i as f64 * 0.01).sin() * 0.5 + 0.5).collect();
        assert!((ssim(&rgb, &rgb, 16, 16) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_negated_content_is_negative() {
        // zero-mean content about mid-gray: x and 1 - x share the mean
        let a = ramp(24, 24);
        let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim_gray(&a, &b, 24, 24) < 0.0);
    }

    #[test]
    fn ssim_constant_shift_is_luminance_term() {
        let (x, y) = (0.3, 0.5);
        let a = vec![x; 15 * 13];
        let b = vec![y; 15 * 13];
        let c1 = 0.01f64 * 0.01;
        let want = (2.0 * x * y + c1) / (x * x + y * y + c1);
        assert!((ssim_gray(&a, &b, 15, 13) - want).abs() < 1e-12);
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&[true, false, true, false], &[true, true, false, false]), 1.0 / 3.0);
        assert_eq!(iou(&[false; 3], &[false; 3]), 1.0);
        assert_eq!(iou(&[true; 3], &[true; 3]), 1.0);
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(seed in 0u64..1000) {
            let a: Vec<f64> = (0..144).map(|i| ((i as u64 * 2654435761 + seed) % 997) as f64 / 997.0).collect();
            let b: Vec<f64> = (0..144).map(|i| ((i as u64 * 40503 + seed * 7) % 991) as f64 / 991.0).collect();
            let s = ssim_gray(&a, &b, 12, 12);
            prop_assert!((s - ssim_gray(&b, &a, 12, 12)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
