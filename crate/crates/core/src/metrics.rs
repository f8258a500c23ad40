//! Evaluation metrics: SSIM (Gaussian 11×11, valid borders), cycle
//! reconstruction L1, the latent style distance, and flow-warped
//! temporal error with an explicit validity mask.

use crate::error::{Error, Result};
use crate::linalg::{dot_slices, sum_slice};
use crate::par;
use crate::tensor::Tensor;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Images are on [0,1], so the dynamic range is 1.
const SSIM_C1: f64 = SSIM_K1 * SSIM_K1;
const SSIM_C2: f64 = SSIM_K2 * SSIM_K2;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (k, v) in g.iter_mut().enumerate() {
        let d = k as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in g.iter_mut() {
        *v /= sum;
    }
    g
}

/// Valid-mode separable blur: (H,W) → (H−10, W−10).
fn blur_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let horiz: Vec<f64> = {
        let rows = par::map_collect(h, |y| {
            let row = &src[y * w..(y + 1) * w];
            let mut out = vec![0.0f64; ow];
            for (x, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &gk) in g.iter().enumerate() {
                    acc += gk * row[x + k];
                }
                *o = acc;
            }
            out
        });
        rows.concat()
    };
    let rows = par::map_collect(oh, |y| {
        let mut out = vec![0.0f64; ow];
        for (k, &gk) in g.iter().enumerate() {
            let row = &horiz[(y + k) * ow..(y + k + 1) * ow];
            for (o, v) in out.iter_mut().zip(row) {
                *o += gk * v;
            }
        }
        out
    });
    rows.concat()
}

/// Mean SSIM over channels, Gaussian 11×11 window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, statistics only from fully valid windows.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "ssim",
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (c, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        ));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.plane(ch).iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.plane(ch).iter().map(|&v| v as f64).collect();
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

        let mu_a = blur_valid(&pa, h, w, &g);
        let mu_b = blur_valid(&pb, h, w, &g);
        let m_aa = blur_valid(&paa, h, w, &g);
        let m_bb = blur_valid(&pbb, h, w, &g);
        let m_ab = blur_valid(&pab, h, w, &g);

        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let ma = mu_a[i];
            let mb = mu_b[i];
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            acc += num / den;
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// Mean absolute difference over every element.
pub fn cycle_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "cycle_loss",
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let da = a.data();
    let db = b.data();
    let sum = par::sum_chunks(da.len(), |lo, hi| {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += (da[i] as f64 - db[i] as f64).abs();
        }
        acc
    });
    Ok(sum / da.len() as f64)
}

/// Σ over channels of |Δmean| + |Δstd| between two latent tensors.
/// Spatial sizes may differ; channel counts must match.
pub fn latent_style_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.channels() != b.channels() {
        return Err(Error::shape(
            "latent_style_distance",
            format!("channel counts differ: {} vs {}", a.channels(), b.channels()),
        ));
    }
    let stats = |t: &Tensor, ch: usize| -> (f64, f64) {
        let p: Vec<f64> = t.plane(ch).iter().map(|&v| v as f64).collect();
        let n = p.len() as f64;
        let mean = sum_slice(&p) / n;
        let var = (dot_slices(&p, &p) / n - mean * mean).max(0.0);
        (mean, var.sqrt())
    };
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let (ma, sa) = stats(a, ch);
        let (mb, sb) = stats(b, ch);
        total += (ma - mb).abs() + (sa - sb).abs();
    }
    Ok(total)
}

/// Dense optical flow with a per-pixel validity mask.
#[derive(Clone, Debug)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::shape(
                "flow",
                format!("component length != {height}×{width}"),
            ));
        }
        Ok(FlowField {
            height,
            width,
            u,
            v,
            valid: vec![true; height * width],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn u(&self) -> &[f32] {
        &self.u
    }
    pub fn v(&self) -> &[f32] {
        &self.v
    }
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Restricts validity to mask pixels (true = keep).
    pub fn apply_valid_mask(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.valid.len() {
            return Err(Error::shape("flow", "mask length mismatch".to_string()));
        }
        for (v, m) in self.valid.iter_mut().zip(mask) {
            *v = *v && *m;
        }
        Ok(())
    }
}

/// Temporal error report: the normalized scalar plus the per-pixel map
/// (channel-mean absolute difference; zero outside the valid mask).
#[derive(Clone, Debug)]
pub struct TemporalErrorReport {
    pub error: f64,
    pub valid_pixels: usize,
    pub map: Tensor,
}

/// Warps `prev` along the flow (source = (x−u, y−v), bilinear) and
/// measures mean absolute difference to `next` over valid pixels.
/// Pixels whose source falls outside the image leave the valid set.
pub fn temporal_error(
    prev: &Tensor,
    next: &Tensor,
    flow: &FlowField,
) -> Result<TemporalErrorReport> {
    if prev.shape() != next.shape() {
        return Err(Error::shape(
            "temporal_error",
            format!("shapes differ: {:?} vs {:?}", prev.shape(), next.shape()),
        ));
    }
    let (c, h, w) = prev.shape();
    if flow.height != h || flow.width != w {
        return Err(Error::shape(
            "temporal_error",
            format!("flow {}×{} vs frames {h}×{w}", flow.height, flow.width),
        ));
    }
    let mut map = Tensor::zeros(1, h, w);
    let mut sum = 0.0f64;
    let mut valid_pixels = 0usize;
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !flow.valid[p] {
                continue;
            }
            let sx = x as f64 - flow.u[p] as f64;
            let sy = y as f64 - flow.v[p] as f64;
            if sx < 0.0 || sx > max_x || sy < 0.0 || sy > max_y {
                continue;
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let mut diff = 0.0f64;
            for ch in 0..c {
                let plane = prev.plane(ch);
                let v00 = plane[y0 * w + x0] as f64;
                let v01 = plane[y0 * w + x1] as f64;
                let v10 = plane[y1 * w + x0] as f64;
                let v11 = plane[y1 * w + x1] as f64;
                let warped = v00 * (1.0 - fx) * (1.0 - fy)
                    + v01 * fx * (1.0 - fy)
                    + v10 * (1.0 - fx) * fy
                    + v11 * fx * fy;
                diff += (warped - next.plane(ch)[p] as f64).abs();
            }
            diff /= c as f64;
            map.plane_mut(0)[p] = diff as f32;
            sum += diff;
            valid_pixels += 1;
        }
    }
    if valid_pixels == 0 {
        return Err(Error::numeric(
            "temporal_error",
            "no valid pixels after masking and warping",
        ));
    }
    Ok(TemporalErrorReport {
        error: sum / valid_pixels as f64,
        valid_pixels,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{random_tensor, RngSeed, WeightRng};

    fn test_card(h: usize, w: usize) -> Tensor {
        // Checkerboard over a diagonal ramp: structure in every window.
        let mut t = Tensor::zeros(3, h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let checker = ((x / 8 + y / 8 + c) % 2) as f32;
                    let ramp = (x + y) as f32 / (h + w) as f32;
                    t.set(c, y, x, 0.6 * checker + 0.4 * ramp);
                }
            }
        }
        t
    }

    #[test]
    fn ssim_self_is_one() {
        let img = test_card(48, 64);
        let s = ssim(&img, &img).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "ssim(x,x) = {s}");
    }

    #[test]
    fn ssim_constant_pair_analytic() {
        // Flat images: variance terms vanish, C2 cancels, leaving the
        // luminance ratio (2·0.2·0.7 + C1)/(0.2² + 0.7² + C1).
        let a = Tensor::filled(1, 16, 16, 0.2);
        let b = Tensor::filled(1, 16, 16, 0.7);
        let (ma, mb) = (0.2f32 as f64, 0.7f32 as f64);
        let want = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn ssim_inverted_card_is_low() {
        let img = test_card(64, 64);
        let mut inv = img.clone();
        for v in inv.data_mut() {
            *v = 1.0 - *v;
        }
        let s = ssim(&img, &inv).unwrap();
        assert!(s < 0.3, "ssim(x, 1−x) = {s}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = WeightRng::new(RngSeed(70));
        let a = random_tensor(3, 32, 32, &mut rng, 0.0, 1.0);
        let b = random_tensor(3, 32, 32, &mut rng, 0.0, 1.0);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-9);
        assert!(ab < 0.99);
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        let a = Tensor::zeros(1, 8, 8);
        assert!(ssim(&a, &a).is_err());
        let b = Tensor::zeros(1, 16, 16);
        let c = Tensor::zeros(1, 16, 17);
        assert!(ssim(&b, &c).is_err());
    }

    #[test]
    fn cycle_loss_constants() {
        let a = Tensor::filled(2, 5, 5, 0.25);
        let b = Tensor::filled(2, 5, 5, 0.75);
        assert!((cycle_loss(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(cycle_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn latent_style_distance_hand_case() {
        // Channel 0: means 0 vs 1 (Δμ=1), both constant (Δσ=0).
        // Channel 1: same mean, stds 0 vs 1 computed exactly over ±1.
        let a = Tensor::zeros(2, 1, 4);
        let mut b = Tensor::zeros(2, 1, 4);
        for x in 0..4 {
            b.set(0, 0, x, 1.0);
            b.set(1, 0, x, if x % 2 == 0 { 1.0 } else { -1.0 });
        }
        let d = latent_style_distance(&a, &b).unwrap();
        assert!((d - 2.0).abs() < 1e-9, "distance {d}");
        assert_eq!(latent_style_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn latent_style_distance_ignores_spatial_size() {
        let a = Tensor::filled(2, 4, 4, 0.5);
        let b = Tensor::filled(2, 8, 2, 0.5);
        assert_eq!(latent_style_distance(&a, &b).unwrap(), 0.0);
        let c = Tensor::zeros(3, 4, 4);
        assert!(latent_style_distance(&a, &c).is_err());
    }

    #[test]
    fn temporal_zero_flow_identical_frames() {
        let img = test_card(16, 16);
        let flow = FlowField::new(16, 16, vec![0.0; 256], vec![0.0; 256]).unwrap();
        let rep = temporal_error(&img, &img, &flow).unwrap();
        assert_eq!(rep.error, 0.0);
        assert_eq!(rep.valid_pixels, 256);
    }

    #[test]
    fn temporal_unit_shift_is_exact() {
        // next(x) = prev(x−1) with u ≡ 1: the warp lands exactly on
        // source pixels, so the error vanishes on the valid set.
        let mut rng = WeightRng::new(RngSeed(71));
        let prev = random_tensor(3, 8, 12, &mut rng, 0.0, 1.0);
        let mut next = Tensor::zeros(3, 8, 12);
        for c in 0..3 {
            for y in 0..8 {
                for x in 1..12 {
                    next.set(c, y, x, prev.at(c, y, x - 1));
                }
            }
        }
        let n = 8 * 12;
        let flow = FlowField::new(8, 12, vec![1.0; n], vec![0.0; n]).unwrap();
        let rep = temporal_error(&prev, &next, &flow).unwrap();
        assert!(rep.error <= 1e-6, "shift error {}", rep.error);
        // Column 0 sources at x = −1: dropped from the valid set.
        assert_eq!(rep.valid_pixels, 8 * 11);
        for y in 0..8 {
            assert_eq!(rep.map.at(0, y, 0), 0.0);
        }
    }

    #[test]
    fn temporal_zero_flow_is_masked_l1() {
        let mut rng = WeightRng::new(RngSeed(72));
        let a = random_tensor(2, 6, 6, &mut rng, 0.0, 1.0);
        let b = random_tensor(2, 6, 6, &mut rng, 0.0, 1.0);
        let flow = FlowField::new(6, 6, vec![0.0; 36], vec![0.0; 36]).unwrap();
        let rep = temporal_error(&a, &b, &flow).unwrap();
        // Oracle: channel-mean L1 per pixel, averaged.
        let mut want = 0.0;
        for p in 0..36 {
            let mut d = 0.0;
            for c in 0..2 {
                d += (a.plane(c)[p] as f64 - b.plane(c)[p] as f64).abs();
            }
            want += d / 2.0;
        }
        want /= 36.0;
        assert!((rep.error - want).abs() < 1e-12);
    }

    #[test]
    fn temporal_mask_restricts_and_error_drops() {
        let mut rng = WeightRng::new(RngSeed(73));
        let a = random_tensor(1, 6, 6, &mut rng, 0.0, 1.0);
        let mut b = a.clone();
        // Corrupt the top half only.
        for y in 0..3 {
            for x in 0..6 {
                b.set(0, y, x, 1.0 - b.at(0, y, x));
            }
        }
        let mk_flow = || FlowField::new(6, 6, vec![0.0; 36], vec![0.0; 36]).unwrap();
        let full = temporal_error(&a, &b, &mk_flow()).unwrap();
        let mut masked_flow = mk_flow();
        let mask: Vec<bool> = (0..36).map(|p| p / 6 >= 3).collect();
        masked_flow.apply_valid_mask(&mask).unwrap();
        let masked = temporal_error(&a, &b, &masked_flow).unwrap();
        assert!(masked.error < full.error);
        assert_eq!(masked.error, 0.0);
        assert_eq!(masked.valid_pixels, 18);
    }

    #[test]
    fn temporal_all_invalid_is_error() {
        let img = Tensor::zeros(1, 4, 4);
        let mut flow = FlowField::new(4, 4, vec![0.0; 16], vec![0.0; 16]).unwrap();
        flow.apply_valid_mask(&vec![false; 16]).unwrap();
        assert!(temporal_error(&img, &img, &flow).is_err());
    }
}
