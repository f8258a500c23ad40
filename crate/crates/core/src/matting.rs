//! Matting Laplacian of an RGB image: sparse assembly, the photorealism
//! penalty (1/N)·Σ_c vᵀMv, and its gradient. Windows are (2r+1)² boxes
//! fully inside the image; the per-window 3×3 system is inverted by
//! adjugate. Entries are exact f64 and stored as sorted COO.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{resize_bilinear, Tensor};

/// Longest image side accepted before the diagnostic downsample.
pub const MATTING_MAX_SIDE: usize = 512;

/// Symmetric sparse matrix in row-sorted COO with row offsets.
#[derive(Clone, Debug)]
pub struct SparseLaplacian {
    n: usize,
    height: usize,
    width: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    row_starts: Vec<usize>,
    pub window_radius: usize,
    pub eps_matting: f64,
}

impl SparseLaplacian {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries in (row, col) lexicographic order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    pub fn value_at(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_starts[row];
        let hi = self.row_starts[row + 1];
        match self.cols[lo..hi].binary_search(&(col as u32)) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    /// y = M·x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        par::map_collect(self.n, |i| {
            let lo = self.row_starts[i];
            let hi = self.row_starts[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            acc
        })
    }
}

/// μ and the inverse of (Σ_w + ε/|w|·I₃) for one window, flattened as
/// [μ₀ μ₁ μ₂ a₀₀ a₀₁ a₀₂ a₁₁ a₁₂ a₂₂].
fn window_precompute(
    planes: [&[f32]; 3],
    width: usize,
    cy: usize,
    cx: usize,
    r: usize,
    eps: f64,
) -> Result<[f64; 9]> {
    let wsize = (2 * r + 1) * (2 * r + 1);
    let inv_w = 1.0 / wsize as f64;
    let mut sums = [0.0f64; 3];
    let mut prods = [0.0f64; 6]; // upper 3×3: 00 01 02 11 12 22
    for dy in 0..=2 * r {
        let y = cy - r + dy;
        for dx in 0..=2 * r {
            let x = cx - r + dx;
            let p = y * width + x;
            let v = [
                planes[0][p] as f64,
                planes[1][p] as f64,
                planes[2][p] as f64,
            ];
            sums[0] += v[0];
            sums[1] += v[1];
            sums[2] += v[2];
            prods[0] += v[0] * v[0];
            prods[1] += v[0] * v[1];
            prods[2] += v[0] * v[2];
            prods[3] += v[1] * v[1];
            prods[4] += v[1] * v[2];
            prods[5] += v[2] * v[2];
        }
    }
    let mu = [sums[0] * inv_w, sums[1] * inv_w, sums[2] * inv_w];
    let reg = eps * inv_w;
    // Σ + ε/|w|·I
    let a = prods[0] * inv_w - mu[0] * mu[0] + reg;
    let b = prods[1] * inv_w - mu[0] * mu[1];
    let c = prods[2] * inv_w - mu[0] * mu[2];
    let e = prods[3] * inv_w - mu[1] * mu[1] + reg;
    let f = prods[4] * inv_w - mu[1] * mu[2];
    let i = prods[5] * inv_w - mu[2] * mu[2] + reg;
    // Adjugate inverse of [[a,b,c],[b,e,f],[c,f,i]].
    let co00 = e * i - f * f;
    let co01 = c * f - b * i;
    let co02 = b * f - c * e;
    let det = a * co00 + b * co01 + c * co02;
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::numeric(
            "build_laplacian",
            format!("window ({cy},{cx}) covariance not invertible (det {det:.3e})"),
        ));
    }
    let id = 1.0 / det;
    Ok([
        mu[0],
        mu[1],
        mu[2],
        co00 * id,
        co01 * id,
        co02 * id,
        (a * i - c * c) * id,
        (b * c - a * f) * id,
        (a * e - b * b) * id,
    ])
}

/// Matting Laplacian of a 3-channel image (values expected in [0,1]).
/// `radius` is the window radius (1 → 3×3 windows); `eps` the
/// smoothness regularizer on the window covariance.
pub fn build_laplacian(image: &Tensor, radius: usize, eps: f64) -> Result<SparseLaplacian> {
    if image.channels() != 3 {
        return Err(Error::shape(
            "build_laplacian",
            format!("expected 3 channels, got {}", image.channels()),
        ));
    }
    if radius == 0 {
        return Err(Error::config("window radius must be at least 1"));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config(format!(
            "eps_matting must be positive and finite, got {eps}"
        )));
    }
    let h = image.height();
    let w = image.width();
    if h.max(w) > MATTING_MAX_SIDE {
        return Err(Error::shape(
            "build_laplacian",
            format!("image {h}×{w} exceeds {MATTING_MAX_SIDE} on the longest side; downsample first"),
        ));
    }
    let n = h * w;
    let r = radius;
    let planes = [image.plane(0), image.plane(1), image.plane(2)];

    // No window fits: the matrix is identically zero.
    if h < 2 * r + 1 || w < 2 * r + 1 {
        return Ok(SparseLaplacian {
            n,
            height: h,
            width: w,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            row_starts: vec![0; n + 1],
            window_radius: r,
            eps_matting: eps,
        });
    }

    let wh = h - 2 * r; // window-center grid
    let ww = w - 2 * r;
    let wsize = (2 * r + 1) * (2 * r + 1);
    let inv_w = 1.0 / wsize as f64;

    let wins: Vec<[f64; 9]> = {
        let results = par::map_collect(wh * ww, |wi| {
            let cy = wi / ww + r;
            let cx = wi % ww + r;
            window_precompute(planes, w, cy, cx, r, eps)
        });
        let mut out = Vec::with_capacity(wh * ww);
        for res in results {
            out.push(res?);
        }
        out
    };

    // Upper-triangular rows (j ≥ i), each in ascending-column order.
    let upper: Vec<Vec<(u32, f64)>> = par::map_collect(n, |i| {
        let yi = i / w;
        let xi = i % w;
        let vi = [
            planes[0][i] as f64,
            planes[1][i] as f64,
            planes[2][i] as f64,
        ];
        let mut row: Vec<(u32, f64)> = Vec::with_capacity((2 * r + 1) * (4 * r + 1));
        let span = 2 * r as isize;
        for dy in 0..=span {
            let yj = yi as isize + dy;
            if yj >= h as isize {
                break;
            }
            let dx_lo = if dy == 0 { 0 } else { -span };
            for dx in dx_lo..=span {
                let xj = xi as isize + dx;
                if xj < 0 || xj >= w as isize {
                    continue;
                }
                let j = yj as usize * w + xj as usize;
                let yj = yj as usize;
                let xj = xj as usize;
                // A window centered at c contains pixel y iff |y−c| ≤ r:
                // shared centers lie in [max−r, min+r] ∩ [r, dim−1−r].
                let cy_a = yi.max(yj).saturating_sub(r).max(r);
                let cy_b = (yi.min(yj) + r).min(h - 1 - r);
                let cx_a = xi.max(xj).saturating_sub(r).max(r);
                let cx_b = (xi.min(xj) + r).min(w - 1 - r);
                if cy_a > cy_b || cx_a > cx_b {
                    continue;
                }
                let vj = [
                    planes[0][j] as f64,
                    planes[1][j] as f64,
                    planes[2][j] as f64,
                ];
                let mut acc = 0.0;
                for cy in cy_a..=cy_b {
                    for cx in cx_a..=cx_b {
                        let win = &wins[(cy - r) * ww + (cx - r)];
                        let di = [vi[0] - win[0], vi[1] - win[1], vi[2] - win[2]];
                        let dj = [vj[0] - win[0], vj[1] - win[1], vj[2] - win[2]];
                        // dᵢᵀ·A·dⱼ with symmetric A.
                        let quad = win[3] * di[0] * dj[0]
                            + win[6] * di[1] * dj[1]
                            + win[8] * di[2] * dj[2]
                            + win[4] * (di[0] * dj[1] + di[1] * dj[0])
                            + win[5] * (di[0] * dj[2] + di[2] * dj[0])
                            + win[7] * (di[1] * dj[2] + di[2] * dj[1]);
                        let delta = if i == j { 1.0 } else { 0.0 };
                        acc += delta - inv_w * (1.0 + quad);
                    }
                }
                row.push((j as u32, acc));
            }
        }
        row
    });

    // Mirror into full symmetric storage. Mirrored entries of row j come
    // from rows i < j in ascending i, and all precede j's own columns.
    let mut mirrored: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, row) in upper.iter().enumerate() {
        for &(j, v) in row {
            if j as usize != i {
                mirrored[j as usize].push((i as u32, v));
            }
        }
    }
    let nnz: usize = upper.iter().map(|r| r.len()).sum::<usize>() * 2
        - upper
            .iter()
            .enumerate()
            .filter(|(i, r)| r.first().is_some_and(|&(j, _)| j as usize == *i))
            .count();
    let mut rows = Vec::with_capacity(nnz);
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    let mut row_starts = Vec::with_capacity(n + 1);
    row_starts.push(0);
    for i in 0..n {
        for &(j, v) in &mirrored[i] {
            rows.push(i as u32);
            cols.push(j);
            vals.push(v);
        }
        for &(j, v) in &upper[i] {
            rows.push(i as u32);
            cols.push(j);
            vals.push(v);
        }
        row_starts.push(rows.len());
    }

    Ok(SparseLaplacian {
        n,
        height: h,
        width: w,
        rows,
        cols,
        vals,
        row_starts,
        window_radius: r,
        eps_matting: eps,
    })
}

/// Returns a bilinear-downsampled copy when the longest side exceeds
/// the matting limit, `None` when the image already fits.
pub fn downsample_for_matting(image: &Tensor) -> Result<Option<Tensor>> {
    let h = image.height();
    let w = image.width();
    let longest = h.max(w);
    if longest <= MATTING_MAX_SIDE {
        return Ok(None);
    }
    let f = MATTING_MAX_SIDE as f64 / longest as f64;
    let nh = ((h as f64 * f).round() as usize).max(1);
    let nw = ((w as f64 * f).round() as usize).max(1);
    Ok(Some(resize_bilinear(image, nh, nw)?))
}

fn check_vector_shape(lap: &SparseLaplacian, v: &Tensor) -> Result<()> {
    if v.pixel_count() != lap.n {
        return Err(Error::shape(
            "matting_loss",
            format!(
                "vector has {} pixels, Laplacian expects {}",
                v.pixel_count(),
                lap.n
            ),
        ));
    }
    Ok(())
}

/// (1/N)·Σ_c v_cᵀ·M·v_c with N the pixel count. Chunked fixed-order
/// reduction: bit-identical across thread counts.
pub fn matting_loss(lap: &SparseLaplacian, v: &Tensor) -> Result<f64> {
    check_vector_shape(lap, v)?;
    let n = lap.n;
    let mut total = 0.0;
    for c in 0..v.channels() {
        let plane = v.plane(c);
        total += par::sum_chunks(n, |lo, hi| {
            let mut acc = 0.0;
            for i in lo..hi {
                let a = lap.row_starts[i];
                let b = lap.row_starts[i + 1];
                let mut mv = 0.0;
                for k in a..b {
                    mv += lap.vals[k] * plane[lap.cols[k] as usize] as f64;
                }
                acc += plane[i] as f64 * mv;
            }
            acc
        });
    }
    Ok(total / n as f64)
}

/// ∂/∂v of `matting_loss`: (2/N)·M·v per channel.
pub fn matting_loss_grad(lap: &SparseLaplacian, v: &Tensor) -> Result<Tensor> {
    check_vector_shape(lap, v)?;
    let n = lap.n;
    let scale = 2.0 / n as f64;
    let mut out = Tensor::zeros(v.channels(), v.height(), v.width());
    for c in 0..v.channels() {
        let x: Vec<f64> = v.plane(c).iter().map(|&p| p as f64).collect();
        let mv = lap.mul_vec(&x);
        for (o, m) in out.plane_mut(c).iter_mut().zip(&mv) {
            *o = (m * scale) as f32;
        }
    }
    Ok(out)
}
