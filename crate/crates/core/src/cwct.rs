//! Whitening–coloring with ε-regularized Cholesky factors: covariance
//! estimation, per-region masked transfer, style interpolation, the
//! Cholesky gradient, and the eigendecomposition-based baseline used
//! for cross-validation and benchmarking.
//!
//! All covariance/factorization math runs in f64; feature tensors stay
//! f32 and are processed through bounded f64 tiles. Every reduction has
//! a fixed decomposition, so results are independent of thread count.

use crate::error::{Error, Result};
use crate::linalg::{
    self, cholesky as cholesky_impl, dot_slices, jacobi_eigh, mul_inv_lower_right,
    solve_lower_transpose_mat, sum_slice, Mat,
};
use crate::par;
use crate::tensor::Tensor;

/// Default relative ε: the diagonal loading is eps·trace(Σ)/C.
pub const DEFAULT_EPS: f64 = 1e-8;
/// Escalation ceiling for the relative ε.
const EPS_REL_MAX: f64 = 1e-2;
/// Starting relative ε for degenerate regions (fewer pixels than channels).
const EPS_REL_DEGENERATE: f64 = 1e-4;

const TILE_PIXELS: usize = 2048;
const WAVE_TILES: usize = 8;
const JACOBI_MAX_SWEEPS: usize = 50;

/// Per-region latent statistics. `region_label: None` means global.
#[derive(Clone, Debug)]
pub struct StyleStats {
    pub region_label: Option<u32>,
    pub mean: Vec<f64>,
    pub covariance: Mat,
    pub chol: Mat,
    pub pixel_count: usize,
    /// Relative ε the stats were requested with.
    pub eps_base: f64,
    /// Absolute diagonal loading actually applied (after escalation).
    pub eps_used: f64,
}

impl StyleStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Integer label map at the refined-latent resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMaskLatent {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    label_set: Vec<u32>,
}

impl RegionMaskLatent {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::shape(
                "region mask",
                format!("label count {} != {height}×{width}", labels.len()),
            ));
        }
        let mut label_set: Vec<u32> = labels.to_vec();
        label_set.sort_unstable();
        label_set.dedup();
        Ok(RegionMaskLatent {
            height,
            width,
            labels,
            label_set,
        })
    }

    /// Nearest-neighbor downsample of an image-resolution label map.
    /// Nearest is deliberate: majority voting can erase thin regions.
    pub fn from_image_labels(
        labels: &[u32],
        img_h: usize,
        img_w: usize,
        lat_h: usize,
        lat_w: usize,
    ) -> Result<Self> {
        if labels.len() != img_h * img_w {
            return Err(Error::shape(
                "region mask",
                format!("label count {} != {img_h}×{img_w}", labels.len()),
            ));
        }
        if lat_h == 0 || lat_w == 0 {
            return Err(Error::shape("region mask", "latent dims must be positive"));
        }
        let mut out = Vec::with_capacity(lat_h * lat_w);
        for y in 0..lat_h {
            let sy = (((y as f64 + 0.5) * img_h as f64 / lat_h as f64).floor() as usize)
                .min(img_h - 1);
            for x in 0..lat_w {
                let sx = (((x as f64 + 0.5) * img_w as f64 / lat_w as f64).floor() as usize)
                    .min(img_w - 1);
                out.push(labels[sy * img_w + sx]);
            }
        }
        Self::new(lat_h, lat_w, out)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
    pub fn label_set(&self) -> &[u32] {
        &self.label_set
    }

    pub fn indices_of(&self, label: u32) -> Vec<u32> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i as u32)
            .collect()
    }

    fn matches(&self, f: &Tensor) -> bool {
        self.height == f.height() && self.width == f.width()
    }
}

/// Pixel selection: a contiguous range (global) or an index list (region).
enum Sel<'a> {
    Range(usize),
    Idx(&'a [u32]),
}

impl Sel<'_> {
    fn len(&self) -> usize {
        match self {
            Sel::Range(n) => *n,
            Sel::Idx(v) => v.len(),
        }
    }

    fn batch_count(&self) -> usize {
        self.len().div_ceil(TILE_PIXELS)
    }

    fn batch_len(&self, bi: usize) -> usize {
        let lo = bi * TILE_PIXELS;
        (self.len() - lo).min(TILE_PIXELS)
    }
}

fn gather_tile(f: &Tensor, sel: &Sel, bi: usize, tile: &mut [f64]) -> usize {
    let bl = sel.batch_len(bi);
    let lo = bi * TILE_PIXELS;
    let c = f.channels();
    for ch in 0..c {
        let plane = f.plane(ch);
        let row = &mut tile[ch * TILE_PIXELS..ch * TILE_PIXELS + bl];
        match sel {
            Sel::Range(_) => {
                for (r, v) in row.iter_mut().zip(&plane[lo..lo + bl]) {
                    *r = *v as f64;
                }
            }
            Sel::Idx(idx) => {
                for (r, &i) in row.iter_mut().zip(&idx[lo..lo + bl]) {
                    *r = plane[i as usize] as f64;
                }
            }
        }
    }
    bl
}

fn scatter_tile(dst: &mut Tensor, sel: &Sel, bi: usize, tile: &[f64], bl: usize) {
    let lo = bi * TILE_PIXELS;
    let c = dst.channels();
    for ch in 0..c {
        let row = &tile[ch * TILE_PIXELS..ch * TILE_PIXELS + bl];
        let plane = dst.plane_mut(ch);
        match sel {
            Sel::Range(_) => {
                for (v, r) in plane[lo..lo + bl].iter_mut().zip(row) {
                    *v = *r as f32;
                }
            }
            Sel::Idx(idx) => {
                for (&i, r) in idx[lo..lo + bl].iter().zip(row) {
                    plane[i as usize] = *r as f32;
                }
            }
        }
    }
}

/// First and second raw moments over the selected pixels, reduced
/// tile-by-tile in a fixed order.
fn moments(f: &Tensor, sel: &Sel) -> (Vec<f64>, Mat, usize) {
    let c = f.channels();
    let n = sel.len();
    assert!(n > 0, "moments over an empty pixel set");
    let batches = sel.batch_count();
    let mut sums = vec![0.0f64; c];
    let mut g = Mat::zeros(c);

    let mut bi = 0;
    while bi < batches {
        let wave = (batches - bi).min(WAVE_TILES);
        let partials = par::map_collect(wave, |wi| {
            let mut tile = vec![0.0f64; c * TILE_PIXELS];
            let bl = gather_tile(f, sel, bi + wi, &mut tile);
            let mut psums = vec![0.0f64; c];
            let mut pg = vec![0.0f64; c * c];
            for a in 0..c {
                let ra = &tile[a * TILE_PIXELS..a * TILE_PIXELS + bl];
                psums[a] = sum_slice(ra);
                for b in a..c {
                    let rb = &tile[b * TILE_PIXELS..b * TILE_PIXELS + bl];
                    pg[a * c + b] = dot_slices(ra, rb);
                }
            }
            (psums, pg)
        });
        for (psums, pg) in partials {
            for (s, p) in sums.iter_mut().zip(&psums) {
                *s += p;
            }
            for a in 0..c {
                for b in a..c {
                    g.set(a, b, g.at(a, b) + pg[a * c + b]);
                }
            }
        }
        bi += wave;
    }

    let inv_n = 1.0 / n as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s * inv_n).collect();
    let mut cov = Mat::zeros(c);
    for a in 0..c {
        for b in a..c {
            let v = g.at(a, b) * inv_n - mean[a] * mean[b];
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    (mean, cov, n)
}

/// ε ladder: relative to trace(Σ)/C, absolute when the trace vanishes;
/// degenerate pixel sets start higher; ×10 escalation on failure.
fn factorize_with_escalation(
    cov: &Mat,
    pixel_count: usize,
    eps_base: f64,
    context: &'static str,
) -> Result<(Mat, f64)> {
    let c = cov.order();
    let trace = cov.trace().max(0.0);
    let scale = if trace > 0.0 { trace / c as f64 } else { 1.0 };
    let mut rel = if pixel_count < c {
        eps_base.max(EPS_REL_DEGENERATE)
    } else {
        eps_base
    };
    loop {
        let eff = rel * scale;
        match cholesky_impl(cov, eff) {
            Ok(l) => return Ok((l, eff)),
            Err(_) if rel < EPS_REL_MAX => rel = (rel * 10.0).min(EPS_REL_MAX),
            Err(e) => {
                return Err(Error::numeric(
                    context,
                    format!("factorization failed even at ε = {:.1e}·trace/C: {e}", EPS_REL_MAX),
                ))
            }
        }
    }
}

fn stats_for_sel(
    f: &Tensor,
    sel: &Sel,
    region_label: Option<u32>,
    eps: f64,
) -> Result<StyleStats> {
    let (mean, covariance, pixel_count) = moments(f, sel);
    let (chol, eps_used) =
        factorize_with_escalation(&covariance, pixel_count, eps, "compute_stats")?;
    Ok(StyleStats {
        region_label,
        mean,
        covariance,
        chol,
        pixel_count,
        eps_base: eps,
        eps_used,
    })
}

/// Mean, covariance, and Cholesky factor per region (one global record
/// without a mask). Records are ordered by ascending label.
pub fn compute_stats(
    f: &Tensor,
    mask: Option<&RegionMaskLatent>,
    eps: f64,
) -> Result<Vec<StyleStats>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config(format!("eps must be positive and finite, got {eps}")));
    }
    match mask {
        None => Ok(vec![stats_for_sel(
            f,
            &Sel::Range(f.pixel_count()),
            None,
            eps,
        )?]),
        Some(m) => {
            if !m.matches(f) {
                return Err(Error::shape(
                    "compute_stats",
                    format!(
                        "mask {}×{} does not match features {}×{}",
                        m.height,
                        m.width,
                        f.height(),
                        f.width()
                    ),
                ));
            }
            let mut out = Vec::with_capacity(m.label_set.len());
            for &label in &m.label_set {
                let idx = m.indices_of(label);
                out.push(stats_for_sel(f, &Sel::Idx(&idx), Some(label), eps)?);
            }
            Ok(out)
        }
    }
}

/// Lower Cholesky factor of S + ε·I.
pub fn cholesky(s: &Mat, eps: f64) -> Result<Mat> {
    cholesky_impl(s, eps)
}

fn phi_lower_half_diag(p: &Mat) -> Mat {
    let n = p.order();
    let mut out = Mat::zeros(n);
    for i in 0..n {
        for j in 0..i {
            out.set(i, j, p.at(i, j));
        }
        out.set(i, i, 0.5 * p.at(i, i));
    }
    out
}

/// Gradient of a scalar function of L = cholesky(S) with respect to S:
/// sym(L⁻ᵀ·Φ(Lᵀ·grad_L)·L⁻¹) with Φ = lower triangle, diagonal halved.
/// Entries of `grad_l` above the diagonal are ignored (L is structurally
/// zero there).
pub fn cholesky_backward(s: &Mat, l: &Mat, grad_l: &Mat) -> Result<Mat> {
    let n = s.order();
    if l.order() != n || grad_l.order() != n {
        return Err(Error::shape("cholesky_backward", "matrix orders differ"));
    }
    for i in 0..n {
        let d = l.at(i, i);
        if d == 0.0 || !d.is_finite() {
            return Err(Error::numeric(
                "cholesky_backward",
                format!("singular L diagonal at {i}"),
            ));
        }
    }
    let mut grad_lower = Mat::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            grad_lower.set(i, j, grad_l.at(i, j));
        }
    }
    let p = phi_lower_half_diag(&l.transpose().matmul(&grad_lower));
    let g = mul_inv_lower_right(&solve_lower_transpose_mat(l, &p), l);
    let mut sym = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            sym.set(i, j, 0.5 * (g.at(i, j) + g.at(j, i)));
        }
    }
    Ok(sym)
}

enum TileOp<'a> {
    Whiten(&'a StyleStats),
    Color(&'a StyleStats),
    WhitenColor(&'a StyleStats, &'a StyleStats),
    Svd(&'a SvdTransform),
}

fn tile_rows(tile: &mut [f64], i: usize) -> (&[f64], &mut [f64]) {
    let (head, rest) = tile.split_at_mut(i * TILE_PIXELS);
    (head, &mut rest[..TILE_PIXELS])
}

fn apply_whiten(tile: &mut [f64], bl: usize, stats: &StyleStats) {
    let c = stats.channels();
    let l = &stats.chol;
    for ch in 0..c {
        let m = stats.mean[ch];
        for v in &mut tile[ch * TILE_PIXELS..ch * TILE_PIXELS + bl] {
            *v -= m;
        }
    }
    for i in 0..c {
        let (head, row_i) = tile_rows(tile, i);
        let lrow = l.row(i);
        for k in 0..i {
            let lv = lrow[k];
            if lv == 0.0 {
                continue;
            }
            let rk = &head[k * TILE_PIXELS..k * TILE_PIXELS + bl];
            for (y, x) in row_i[..bl].iter_mut().zip(rk) {
                *y -= lv * x;
            }
        }
        let inv = 1.0 / lrow[i];
        for y in &mut row_i[..bl] {
            *y *= inv;
        }
    }
}

fn apply_color(tile: &mut [f64], bl: usize, stats: &StyleStats) {
    let c = stats.channels();
    let l = &stats.chol;
    for i in (0..c).rev() {
        let (head, row_i) = tile_rows(tile, i);
        let lrow = l.row(i);
        let d = lrow[i];
        for y in &mut row_i[..bl] {
            *y *= d;
        }
        for k in 0..i {
            let lv = lrow[k];
            if lv == 0.0 {
                continue;
            }
            let rk = &head[k * TILE_PIXELS..k * TILE_PIXELS + bl];
            for (y, x) in row_i[..bl].iter_mut().zip(rk) {
                *y += lv * x;
            }
        }
        let m = stats.mean[i];
        for y in &mut row_i[..bl] {
            *y += m;
        }
    }
}

/// Dense eigen-basis transform ρ: U·diag(d)·Uᵀ·(x − μ_in) + μ_out,
/// evaluated the canonical unfused way (Uᵀ, scale, U — twice overall).
struct SvdTransform {
    mean_c: Vec<f64>,
    mean_s: Vec<f64>,
    u_c: Mat,
    d_white: Vec<f64>,
    u_s: Mat,
    d_color: Vec<f64>,
}

fn apply_eigen_stage(tile: &mut [f64], bl: usize, u: &Mat, d: &[f64], scratch: &mut [f64]) {
    let c = u.order();
    // scratch = diag(d)·Uᵀ·tile
    for i in 0..c {
        let srow = &mut scratch[i * TILE_PIXELS..i * TILE_PIXELS + bl];
        srow.fill(0.0);
        for k in 0..c {
            let w = u.at(k, i);
            if w == 0.0 {
                continue;
            }
            let rk = &tile[k * TILE_PIXELS..k * TILE_PIXELS + bl];
            for (s, x) in srow.iter_mut().zip(rk) {
                *s += w * x;
            }
        }
        let dv = d[i];
        for s in srow.iter_mut() {
            *s *= dv;
        }
    }
    // tile = U·scratch
    for i in 0..c {
        let row = &mut tile[i * TILE_PIXELS..i * TILE_PIXELS + bl];
        row.fill(0.0);
        for k in 0..c {
            let w = u.at(i, k);
            if w == 0.0 {
                continue;
            }
            let sk = &scratch[k * TILE_PIXELS..k * TILE_PIXELS + bl];
            for (y, s) in row.iter_mut().zip(sk) {
                *y += w * s;
            }
        }
    }
}

fn apply_op(tile: &mut [f64], bl: usize, op: &TileOp, scratch: &mut [f64]) {
    match op {
        TileOp::Whiten(s) => apply_whiten(tile, bl, s),
        TileOp::Color(s) => apply_color(tile, bl, s),
        TileOp::WhitenColor(c, s) => {
            apply_whiten(tile, bl, c);
            apply_color(tile, bl, s);
        }
        TileOp::Svd(t) => {
            let c = t.u_c.order();
            for ch in 0..c {
                let m = t.mean_c[ch];
                for v in &mut tile[ch * TILE_PIXELS..ch * TILE_PIXELS + bl] {
                    *v -= m;
                }
            }
            apply_eigen_stage(tile, bl, &t.u_c, &t.d_white, scratch);
            apply_eigen_stage(tile, bl, &t.u_s, &t.d_color, scratch);
            for ch in 0..c {
                let m = t.mean_s[ch];
                for v in &mut tile[ch * TILE_PIXELS..ch * TILE_PIXELS + bl] {
                    *v += m;
                }
            }
        }
    }
}

/// Gathers the selected pixels tile-by-tile, applies `op`, and scatters
/// into `dst`. Waves bound peak memory; per-pixel work is independent,
/// so parallel execution is bit-identical to sequential.
fn transform_pixels(src: &Tensor, dst: &mut Tensor, sel: &Sel, op: &TileOp) {
    let c = src.channels();
    let batches = sel.batch_count();
    let needs_scratch = matches!(op, TileOp::Svd(_));
    let mut bi = 0;
    while bi < batches {
        let wave = (batches - bi).min(WAVE_TILES);
        let tiles = par::map_collect(wave, |wi| {
            let mut tile = vec![0.0f64; c * TILE_PIXELS];
            let bl = gather_tile(src, sel, bi + wi, &mut tile);
            let mut scratch = if needs_scratch {
                vec![0.0f64; c * TILE_PIXELS]
            } else {
                Vec::new()
            };
            apply_op(&mut tile, bl, op, &mut scratch);
            (tile, bl)
        });
        for (wi, (tile, bl)) in tiles.iter().enumerate() {
            scatter_tile(dst, sel, bi + wi, tile, *bl);
        }
        bi += wave;
    }
}

fn check_stats_shape(f: &Tensor, stats: &StyleStats, context: &'static str) -> Result<()> {
    if f.channels() != stats.channels() {
        return Err(Error::shape(
            context,
            format!(
                "feature has {} channels, stats have {}",
                f.channels(),
                stats.channels()
            ),
        ));
    }
    Ok(())
}

fn region_sel<'a>(
    stats: &StyleStats,
    mask: Option<&'a RegionMaskLatent>,
    f: &Tensor,
    context: &'static str,
) -> Result<Option<Vec<u32>>> {
    match stats.region_label {
        None => Ok(None),
        Some(label) => {
            let m = mask.ok_or_else(|| {
                Error::shape(context, "regional stats require a mask".to_string())
            })?;
            if !m.matches(f) {
                return Err(Error::shape(context, "mask resolution mismatch".to_string()));
            }
            let idx = m.indices_of(label);
            if idx.is_empty() {
                return Err(Error::shape(
                    context,
                    format!("label {label} has no pixels in the mask"),
                ));
            }
            Ok(Some(idx))
        }
    }
}

/// x̂ = L⁻¹(x − μ) on the stats' pixels (all pixels for global stats);
/// other pixels pass through unchanged.
pub fn whiten(f: &Tensor, stats: &StyleStats, mask: Option<&RegionMaskLatent>) -> Result<Tensor> {
    check_stats_shape(f, stats, "whiten")?;
    let idx = region_sel(stats, mask, f, "whiten")?;
    let mut out = f.clone();
    match idx {
        None => transform_pixels(f, &mut out, &Sel::Range(f.pixel_count()), &TileOp::Whiten(stats)),
        Some(idx) => transform_pixels(f, &mut out, &Sel::Idx(&idx), &TileOp::Whiten(stats)),
    }
    Ok(out)
}

/// x = L·x̂ + μ, the inverse of `whiten` for the same stats.
pub fn color(
    f_white: &Tensor,
    stats: &StyleStats,
    mask: Option<&RegionMaskLatent>,
) -> Result<Tensor> {
    check_stats_shape(f_white, stats, "color")?;
    let idx = region_sel(stats, mask, f_white, "color")?;
    let mut out = f_white.clone();
    match idx {
        None => transform_pixels(
            f_white,
            &mut out,
            &Sel::Range(f_white.pixel_count()),
            &TileOp::Color(stats),
        ),
        Some(idx) => transform_pixels(f_white, &mut out, &Sel::Idx(&idx), &TileOp::Color(stats)),
    }
    Ok(out)
}

/// Style statistics precomputed once and reused across any number of
/// content inputs (the video path relies on this). Regional stats are
/// present iff the style was prepared with a mask; the global record is
/// always available as the fallback for unmatched content labels.
#[derive(Clone, Debug)]
pub struct PreparedStyle {
    pub global: StyleStats,
    pub regional: Vec<StyleStats>,
}

impl PreparedStyle {
    pub fn channels(&self) -> usize {
        self.global.channels()
    }

    fn for_label(&self, label: u32) -> &StyleStats {
        self.regional
            .iter()
            .find(|s| s.region_label == Some(label))
            .unwrap_or(&self.global)
    }
}

/// Computes global stats plus per-region stats when a mask is given.
/// All style-region stats are built up front; content labels missing
/// from the style later fall back to the global record.
pub fn prepare_style(
    f_s: &Tensor,
    mask_s: Option<&RegionMaskLatent>,
    eps: f64,
) -> Result<PreparedStyle> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config(format!("eps must be positive and finite, got {eps}")));
    }
    let global = stats_for_sel(f_s, &Sel::Range(f_s.pixel_count()), None, eps)?;
    let regional = match mask_s {
        Some(ms) => compute_stats(f_s, Some(ms), eps)?,
        None => Vec::new(),
    };
    Ok(PreparedStyle { global, regional })
}

/// Whiten with content stats, color with prepared style stats. Masked
/// and unmasked preparations must be paired with masked and unmasked
/// content respectively.
pub fn transfer_prepared(
    f_c: &Tensor,
    style: &PreparedStyle,
    mask_c: Option<&RegionMaskLatent>,
    eps: f64,
) -> Result<Tensor> {
    if f_c.channels() != style.channels() {
        return Err(Error::shape(
            "transfer",
            format!(
                "content has {} channels, style stats have {}",
                f_c.channels(),
                style.channels()
            ),
        ));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config(format!("eps must be positive and finite, got {eps}")));
    }
    match mask_c {
        None => {
            if !style.regional.is_empty() {
                return Err(Error::config(
                    "style was prepared with a mask; content mask required",
                ));
            }
            let sc = stats_for_sel(f_c, &Sel::Range(f_c.pixel_count()), None, eps)?;
            let mut out = f_c.clone();
            transform_pixels(
                f_c,
                &mut out,
                &Sel::Range(f_c.pixel_count()),
                &TileOp::WhitenColor(&sc, &style.global),
            );
            Ok(out)
        }
        Some(mc) => {
            if style.regional.is_empty() {
                return Err(Error::config(
                    "content mask given but style was prepared without one",
                ));
            }
            if !mc.matches(f_c) {
                return Err(Error::shape("transfer", "mask resolution mismatch".to_string()));
            }
            let mut out = f_c.clone();
            for &label in mc.label_set() {
                let idx = mc.indices_of(label);
                let sc = stats_for_sel(f_c, &Sel::Idx(&idx), Some(label), eps)?;
                let ss = style.for_label(label);
                transform_pixels(f_c, &mut out, &Sel::Idx(&idx), &TileOp::WhitenColor(&sc, ss));
            }
            Ok(out)
        }
    }
}

/// Whiten with content stats, color with style stats. With masks,
/// transfers per matched region label; content labels absent from the
/// style fall back to the style's global stats.
pub fn transfer(
    f_c: &Tensor,
    f_s: &Tensor,
    mask_c: Option<&RegionMaskLatent>,
    mask_s: Option<&RegionMaskLatent>,
    eps: f64,
) -> Result<Tensor> {
    if f_c.channels() != f_s.channels() {
        return Err(Error::shape(
            "transfer",
            format!(
                "content has {} channels, style has {}",
                f_c.channels(),
                f_s.channels()
            ),
        ));
    }
    match (mask_c, mask_s) {
        (None, None) => {
            let prepared = prepare_style(f_s, None, eps)?;
            transfer_prepared(f_c, &prepared, None, eps)
        }
        (Some(mc), Some(ms)) => {
            if !ms.matches(f_s) {
                return Err(Error::shape("transfer", "mask resolution mismatch".to_string()));
            }
            let prepared = prepare_style(f_s, Some(ms), eps)?;
            transfer_prepared(f_c, &prepared, Some(mc), eps)
        }
        _ => Err(Error::config(
            "content and style masks must be given together",
        )),
    }
}

/// Convex combination of two stats records (covariance and mean), with
/// the Cholesky factor recomputed under the same ε policy.
pub fn interpolate_stats(a: &StyleStats, b: &StyleStats, alpha: f64) -> Result<StyleStats> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0,1], got {alpha}")));
    }
    if a.channels() != b.channels() {
        return Err(Error::shape(
            "interpolate_stats",
            format!("channel counts differ: {} vs {}", a.channels(), b.channels()),
        ));
    }
    let mean: Vec<f64> = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
        .collect();
    let covariance = a.covariance.scale(1.0 - alpha).add(&b.covariance.scale(alpha));
    let pixel_count = a.pixel_count.min(b.pixel_count);
    let eps_base = a.eps_base.max(b.eps_base);
    let (chol, eps_used) =
        factorize_with_escalation(&covariance, pixel_count, eps_base, "interpolate_stats")?;
    Ok(StyleStats {
        region_label: a.region_label,
        mean,
        covariance,
        chol,
        pixel_count,
        eps_base,
        eps_used,
    })
}

/// Whitening–coloring through symmetric eigendecompositions (the
/// baseline transform). Global only; eigenvalues floored at the same
/// effective ε the Cholesky route would use.
pub fn wct_svd(f_c: &Tensor, f_s: &Tensor, eps: f64) -> Result<Tensor> {
    if f_c.channels() != f_s.channels() {
        return Err(Error::shape(
            "wct_svd",
            format!(
                "content has {} channels, style has {}",
                f_c.channels(),
                f_s.channels()
            ),
        ));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config(format!("eps must be positive and finite, got {eps}")));
    }
    let c = f_c.channels();
    let (mean_c, cov_c, _) = moments(f_c, &Sel::Range(f_c.pixel_count()));
    let (mean_s, cov_s, _) = moments(f_s, &Sel::Range(f_s.pixel_count()));

    let floor_of = |cov: &Mat| {
        let trace = cov.trace().max(0.0);
        let scale = if trace > 0.0 { trace / c as f64 } else { 1.0 };
        eps * scale
    };
    let (vals_c, u_c) = jacobi_eigh(&cov_c, JACOBI_MAX_SWEEPS)?;
    let (vals_s, u_s) = jacobi_eigh(&cov_s, JACOBI_MAX_SWEEPS)?;
    let fc = floor_of(&cov_c);
    let fs = floor_of(&cov_s);
    let d_white: Vec<f64> = vals_c.iter().map(|&l| 1.0 / l.max(fc).sqrt()).collect();
    let d_color: Vec<f64> = vals_s.iter().map(|&l| l.max(fs).sqrt()).collect();

    let t = SvdTransform {
        mean_c,
        mean_s,
        u_c,
        d_white,
        u_s,
        d_color,
    };
    let mut out = f_c.clone();
    transform_pixels(f_c, &mut out, &Sel::Range(f_c.pixel_count()), &TileOp::Svd(&t));
    Ok(out)
}

/// Frobenius norm of cov(f) − I restricted to the stats' pixel set;
/// diagnostic used by tests and the self-test runner.
pub fn whitened_cov_gap(f: &Tensor) -> f64 {
    let (_, cov, _) = moments(f, &Sel::Range(f.pixel_count()));
    let c = cov.order();
    let mut sq = 0.0;
    for i in 0..c {
        for j in 0..c {
            let want = if i == j { 1.0 } else { 0.0 };
            let d = cov.at(i, j) - want;
            sq += d * d;
        }
    }
    sq.sqrt()
}

/// Covariance of all pixels (global); exposed for oracle checks.
pub fn global_covariance(f: &Tensor) -> (Vec<f64>, Mat) {
    let (mean, cov, _) = moments(f, &Sel::Range(f.pixel_count()));
    (mean, cov)
}

pub use linalg::Mat as Matrix;
