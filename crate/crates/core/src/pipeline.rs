//! End-to-end orchestration: encode → transfer → decode for images and
//! videos, plus the self-test and benchmark runners behind the CLI.
//!
//! The in-memory pipeline is clamp-free; quantization to [0,1] happens
//! only when a file is written. Style statistics are prepared once per
//! style input and reused — an atomic counter makes that observable.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::Serialize;

use crate::cwct::{
    self, interpolate_stats, prepare_style as prepare_latent_style, transfer_prepared,
    PreparedStyle, RegionMaskLatent, DEFAULT_EPS,
};
use crate::error::{Error, Result};
use crate::io::GrayImage;
use crate::refine::{cr_backward, cr_forward};
use crate::revnet::{backward, forward, ArchitecturePlan, NetworkWeights};
use crate::tensor::{random_tensor, RngSeed, Tensor, WeightRng};

/// Shared inference state: validated weights plus the instrumented
/// style-stat counter. Immutable after construction, safe to share.
pub struct Engine {
    weights: NetworkWeights,
    style_stat_computations: AtomicU64,
}

impl Engine {
    pub fn new(weights: NetworkWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Engine {
            weights,
            style_stat_computations: AtomicU64::new(0),
        })
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn plan(&self) -> &ArchitecturePlan {
        &self.weights.plan
    }

    /// Number of style inputs whose statistics were computed so far.
    /// Equals the number of distinct style inputs, never frame count.
    pub fn style_stat_computations(&self) -> u64 {
        self.style_stat_computations.load(Ordering::Relaxed)
    }

    /// Image → refined latent (backbone then channel refinement).
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let latent = forward(image, &self.weights).map_err(|e| e.in_stage("forward"))?;
        cr_forward(&latent, &self.weights).map_err(|e| e.in_stage("refine"))
    }

    /// Refined latent → image; exact inverse of `encode`.
    pub fn decode(&self, refined: &Tensor) -> Result<Tensor> {
        let latent = cr_backward(refined, &self.weights).map_err(|e| e.in_stage("unrefine"))?;
        backward(&latent, &self.weights).map_err(|e| e.in_stage("backward"))
    }

    /// Downsamples an image-resolution label mask to the refined-latent
    /// grid of `reference` (which must match the mask's resolution).
    pub fn latent_mask(&self, mask: &GrayImage, reference: &Tensor) -> Result<RegionMaskLatent> {
        if mask.height != reference.height() || mask.width != reference.width() {
            return Err(Error::shape(
                "mask",
                format!(
                    "mask {}×{} does not match image {}×{}",
                    mask.height,
                    mask.width,
                    reference.height(),
                    reference.width()
                ),
            ));
        }
        // Backbone halves H and W (scales−1) times; the refinement
        // spread multiplies both back by the spread factor.
        let reduce = 1usize << (self.plan().scales.len() - 1);
        let sf = self.plan().cr.spread_factor;
        let lat_h = reference.height() / reduce * sf;
        let lat_w = reference.width() / reduce * sf;
        RegionMaskLatent::from_image_labels(
            &mask.labels(),
            mask.height,
            mask.width,
            lat_h,
            lat_w,
        )
    }

    /// Encodes a style image and computes its statistics (global plus
    /// per-region when a mask is given). Increments the stat counter.
    pub fn prepare_style(
        &self,
        style: &Tensor,
        mask: Option<&GrayImage>,
        eps: f64,
    ) -> Result<PreparedStyle> {
        let latent = self.encode(style).map_err(|e| e.in_stage("encode_style"))?;
        let latent_mask = match mask {
            Some(m) => Some(self.latent_mask(m, style)?),
            None => None,
        };
        let prepared = prepare_latent_style(&latent, latent_mask.as_ref(), eps)
            .map_err(|e| e.in_stage("style_stats"))?;
        self.style_stat_computations.fetch_add(1, Ordering::Relaxed);
        Ok(prepared)
    }
}

/// One stylization request. `alpha` blends toward `style_b` (0 = pure
/// first style); masks pair content regions with style regions.
#[derive(Clone)]
pub struct StylizeJob {
    pub content: Tensor,
    pub style: Tensor,
    pub style_b: Option<Tensor>,
    pub alpha: f64,
    pub content_mask: Option<GrayImage>,
    pub style_mask: Option<GrayImage>,
    pub eps: f64,
}

impl StylizeJob {
    pub fn new(content: Tensor, style: Tensor) -> Self {
        StylizeJob {
            content,
            style,
            style_b: None,
            alpha: 0.0,
            content_mask: None,
            style_mask: None,
            eps: DEFAULT_EPS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        if self.content_mask.is_some() != self.style_mask.is_some() {
            return Err(Error::config(
                "content and style masks must be given together",
            ));
        }
        if self.style_b.is_some() && self.content_mask.is_some() {
            return Err(Error::config(
                "style interpolation and region masks cannot be combined",
            ));
        }
        Ok(())
    }
}

fn prepared_for_job(engine: &Engine, job: &StylizeJob) -> Result<PreparedStyle> {
    let prepared = engine.prepare_style(&job.style, job.style_mask.as_ref(), job.eps)?;
    match &job.style_b {
        None => Ok(prepared),
        Some(style_b) => {
            let prepared_b = engine.prepare_style(style_b, None, job.eps)?;
            let global = interpolate_stats(&prepared.global, &prepared_b.global, job.alpha)
                .map_err(|e| e.in_stage("interpolate"))?;
            Ok(PreparedStyle {
                global,
                regional: Vec::new(),
            })
        }
    }
}

/// Full single-image path. Returns the raw (unclamped) reconstruction;
/// clamping happens at save time only.
pub fn stylize_image(engine: &Engine, job: &StylizeJob) -> Result<Tensor> {
    job.validate()?;
    let prepared = prepared_for_job(engine, job)?;
    let latent_c = engine
        .encode(&job.content)
        .map_err(|e| e.in_stage("encode_content"))?;
    let mask_c = match &job.content_mask {
        Some(m) => Some(engine.latent_mask(m, &job.content)?),
        None => None,
    };
    let transferred = transfer_prepared(&latent_c, &prepared, mask_c.as_ref(), job.eps)
        .map_err(|e| e.in_stage("transfer"))?;
    engine.decode(&transferred).map_err(|e| e.in_stage("decode"))
}

/// Ĩ_C: stylize content with style, then stylize the result using the
/// original content as the style.
pub fn cycle_reconstruct(engine: &Engine, content: &Tensor, style: &Tensor, eps: f64) -> Result<Tensor> {
    let mut job = StylizeJob::new(content.clone(), style.clone());
    job.eps = eps;
    let stylized = stylize_image(engine, &job)?;
    let mut back = StylizeJob::new(stylized, content.clone());
    back.eps = eps;
    stylize_image(engine, &back)
}

/// Video request: one style applied to every frame. Per-frame content
/// masks are allowed (paired with the style mask); frames must share
/// one resolution.
#[derive(Clone)]
pub struct VideoJob {
    pub frames: Vec<Tensor>,
    pub style: Tensor,
    pub style_b: Option<Tensor>,
    pub alpha: f64,
    pub style_mask: Option<GrayImage>,
    pub content_masks: Option<Vec<GrayImage>>,
    pub eps: f64,
}

impl VideoJob {
    pub fn new(frames: Vec<Tensor>, style: Tensor) -> Self {
        VideoJob {
            frames,
            style,
            style_b: None,
            alpha: 0.0,
            style_mask: None,
            content_masks: None,
            eps: DEFAULT_EPS,
        }
    }
}

/// Stylizes every frame against style statistics prepared exactly once.
/// Outputs are returned in input order; a failing frame aborts with its
/// index attached.
pub fn stylize_video(engine: &Engine, job: &VideoJob) -> Result<Vec<Tensor>> {
    if job.frames.is_empty() {
        return Err(Error::config("video needs at least one frame"));
    }
    let shape = job.frames[0].shape();
    for (i, f) in job.frames.iter().enumerate() {
        if f.shape() != shape {
            return Err(Error::shape(
                "video",
                format!("frame {i} has shape {:?}, expected {shape:?}", f.shape()),
            ));
        }
    }
    if !(0.0..=1.0).contains(&job.alpha) {
        return Err(Error::config(format!(
            "alpha must lie in [0,1], got {}",
            job.alpha
        )));
    }
    if job.content_masks.is_some() != job.style_mask.is_some() {
        return Err(Error::config(
            "content and style masks must be given together",
        ));
    }
    if let Some(masks) = &job.content_masks {
        if masks.len() != job.frames.len() {
            return Err(Error::config(format!(
                "{} content masks for {} frames",
                masks.len(),
                job.frames.len()
            )));
        }
        if job.style_b.is_some() {
            return Err(Error::config(
                "style interpolation and region masks cannot be combined",
            ));
        }
    }

    // Style statistics: exactly once per style input.
    let prepared = {
        let base = engine.prepare_style(&job.style, job.style_mask.as_ref(), job.eps)?;
        match &job.style_b {
            None => base,
            Some(style_b) => {
                let b = engine.prepare_style(style_b, None, job.eps)?;
                PreparedStyle {
                    global: interpolate_stats(&base.global, &b.global, job.alpha)
                        .map_err(|e| e.in_stage("interpolate"))?,
                    regional: Vec::new(),
                }
            }
        }
    };

    let mut out = Vec::with_capacity(job.frames.len());
    for (i, frame) in job.frames.iter().enumerate() {
        let run = || -> Result<Tensor> {
            let latent = engine
                .encode(frame)
                .map_err(|e| e.in_stage("encode_content"))?;
            let mask = match &job.content_masks {
                Some(masks) => Some(engine.latent_mask(&masks[i], frame)?),
                None => None,
            };
            let transferred = transfer_prepared(&latent, &prepared, mask.as_ref(), job.eps)
                .map_err(|e| e.in_stage("transfer"))?;
            engine.decode(&transferred).map_err(|e| e.in_stage("decode"))
        };
        out.push(run().map_err(|e| e.in_frame(i))?);
    }
    Ok(out)
}

#[derive(Serialize, Clone, Debug)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Serialize, Clone, Debug)]
pub struct SelftestReport {
    pub quick: bool,
    pub parameter_count_default_plan: usize,
    pub checks: Vec<SelftestCheck>,
    pub all_passed: bool,
}

impl SelftestReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn small_plan() -> ArchitecturePlan {
    ArchitecturePlan {
        initial_pad_channels: 8,
        scales: vec![2, 2],
        squeeze_factor: 2,
        convs_per_block: 2,
        cr: crate::revnet::ChannelRefinePlan {
            target_channels: 8,
            spread_factor: 2,
            block_count: 1,
            variant: crate::revnet::CrVariant::ConvBlocks,
        },
        loss_weights: Default::default(),
    }
}

/// Runs every invariant family once and reports machine-readable
/// results. `quick` shrinks sizes and skips the default-plan 64×64
/// round trip; both modes are deterministic.
pub fn run_selftest(quick: bool) -> SelftestReport {
    use crate::revnet::{init_weights, InitMode};

    let mut checks: Vec<SelftestCheck> = Vec::new();
    let mut record = |name: &'static str, outcome: std::result::Result<String, String>| {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        checks.push(SelftestCheck {
            name,
            passed,
            detail,
        });
    };

    // Deterministic RNG stream.
    record("rng_stream", {
        let mut rng = WeightRng::new(RngSeed(1234567));
        let a = rng.next_u64();
        let b = rng.next_u64();
        if a == 6457827717110365317 && b == 3203168211198807973 {
            Ok(format!("first draws {a}, {b}"))
        } else {
            Err(format!("unexpected draws {a}, {b}"))
        }
    });

    // Squeeze layout.
    record("squeeze_order", {
        let mut t = Tensor::zeros(1, 2, 2);
        t.set(0, 0, 0, 1.0);
        t.set(0, 0, 1, 2.0);
        t.set(0, 1, 0, 3.0);
        t.set(0, 1, 1, 4.0);
        match crate::revnet::squeeze(&t) {
            Ok(s) if s.data() == [1.0, 2.0, 3.0, 4.0] => Ok("1×2×2 → (a,b,c,d)".into()),
            Ok(s) => Err(format!("got {:?}", s.data())),
            Err(e) => Err(e.to_string()),
        }
    });

    // Default-plan parameter count.
    let default_params = init_weights(&ArchitecturePlan::default(), RngSeed(1), InitMode::Random)
        .map(|w| w.parameter_count())
        .unwrap_or(0);
    record("default_plan_parameter_count", {
        if default_params == 3_738_656 {
            Ok(format!("{default_params} parameters"))
        } else {
            Err(format!("{default_params} parameters, expected 3738656"))
        }
    });

    // Bijectivity on the small plan, both precisions.
    let sp = small_plan();
    let roundtrip = |size: usize, seed: u64| -> std::result::Result<(f64, f64), String> {
        let w = init_weights(&sp, RngSeed(seed), InitMode::Random).map_err(|e| e.to_string())?;
        let mut rng = WeightRng::new(RngSeed(seed ^ 0x5a5a));
        let img = random_tensor(3, size, size, &mut rng, 0.0, 1.0);
        let lat = cr_forward(&forward(&img, &w).map_err(|e| e.to_string())?, &w)
            .map_err(|e| e.to_string())?;
        let back = backward(&cr_backward(&lat, &w).map_err(|e| e.to_string())?, &w)
            .map_err(|e| e.to_string())?;
        let err32 = back.max_abs_diff(&img);
        let img64 = img.convert::<f64>();
        let w64 = &w;
        let lat64 = cr_forward(&forward(&img64, w64).map_err(|e| e.to_string())?, w64)
            .map_err(|e| e.to_string())?;
        let back64 = backward(&cr_backward(&lat64, w64).map_err(|e| e.to_string())?, w64)
            .map_err(|e| e.to_string())?;
        let err64 = back64.max_abs_diff(&img64);
        Ok((err32, err64))
    };
    record("roundtrip_small_plan", {
        match roundtrip(if quick { 16 } else { 32 }, 11) {
            Ok((e32, e64)) if e32 <= 1e-3 && e64 <= 1e-10 => {
                Ok(format!("f32 err {e32:.2e} ≤ 1e-3, f64 err {e64:.2e} ≤ 1e-10"))
            }
            Ok((e32, e64)) => Err(format!("f32 err {e32:.2e}, f64 err {e64:.2e}")),
            Err(e) => Err(e),
        }
    });

    if !quick {
        record("roundtrip_default_plan", {
            let plan = ArchitecturePlan::default();
            match init_weights(&plan, RngSeed(3), InitMode::Random) {
                Err(e) => Err(e.to_string()),
                Ok(w) => {
                    let mut rng = WeightRng::new(RngSeed(33));
                    let img = random_tensor(3, 64, 64, &mut rng, 0.0, 1.0);
                    let enc = forward(&img, &w).and_then(|l| cr_forward(&l, &w));
                    match enc.and_then(|lat| {
                        cr_backward(&lat, &w).and_then(|l| backward(&l, &w))
                    }) {
                        Ok(back) => {
                            let err = back.max_abs_diff(&img);
                            if err <= 1e-3 {
                                Ok(format!("f32 err {err:.2e} ≤ 1e-3 at 64×64"))
                            } else {
                                Err(format!("f32 err {err:.2e} at 64×64"))
                            }
                        }
                        Err(e) => Err(e.to_string()),
                    }
                }
            }
        });
    }

    // cWCT invariants.
    record("stats_hand_identity", {
        let f = Tensor::from_vec(2, 1, 4, vec![1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
            .map_err(|e| e.to_string())
            .unwrap();
        match cwct::compute_stats(&f, None, DEFAULT_EPS) {
            Ok(s) => {
                let cov = &s[0].covariance;
                let off = cov.at(0, 1).abs();
                let diag = (cov.at(0, 0) - 1.0).abs().max((cov.at(1, 1) - 1.0).abs());
                if off < 1e-12 && diag < 1e-12 {
                    Ok("Σ = I on the hand-built 2×4 features".into())
                } else {
                    Err(format!("covariance off by diag {diag:.2e}, off-diag {off:.2e}"))
                }
            }
            Err(e) => Err(e.to_string()),
        }
    });

    record("transfer_unbiased", {
        let c = if quick { 8 } else { 16 };
        let n = if quick { 24 } else { 48 };
        let mut rng = WeightRng::new(RngSeed(21));
        let f_c = random_tensor(c, n, n, &mut rng, -1.0, 1.0);
        let f_s = random_tensor(c, n, n, &mut rng, 0.0, 2.0);
        let outcome = cwct::transfer(&f_c, &f_s, None, None, DEFAULT_EPS).and_then(|out| {
            let twice = cwct::transfer(&out, &f_s, None, None, DEFAULT_EPS)?;
            Ok((out, twice))
        });
        match outcome {
            Ok((out, twice)) => {
                let (_, cov_out) = cwct::global_covariance(&out);
                let (_, cov_s) = cwct::global_covariance(&f_s);
                let rel = {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for i in 0..c {
                        for j in 0..c {
                            let d = cov_out.at(i, j) - cov_s.at(i, j);
                            num += d * d;
                            den += cov_s.at(i, j) * cov_s.at(i, j);
                        }
                    }
                    (num / den).sqrt()
                };
                let idem = twice.max_abs_diff(&out);
                if rel <= 1e-3 && idem <= 1e-3 {
                    Ok(format!("cov rel err {rel:.2e}, idempotence {idem:.2e}"))
                } else {
                    Err(format!("cov rel err {rel:.2e}, idempotence {idem:.2e}"))
                }
            }
            Err(e) => Err(e.to_string()),
        }
    });

    record("interpolation_alpha_zero_bitwise", {
        let mut rng = WeightRng::new(RngSeed(22));
        let fa = random_tensor(4, 12, 12, &mut rng, -1.0, 1.0);
        let fb = random_tensor(4, 12, 12, &mut rng, 1.0, 2.0);
        let sa = &cwct::compute_stats(&fa, None, DEFAULT_EPS).unwrap()[0];
        let sb = &cwct::compute_stats(&fb, None, DEFAULT_EPS).unwrap()[0];
        match interpolate_stats(sa, sb, 0.0) {
            Ok(mix) => {
                if mix.covariance.data() == sa.covariance.data()
                    && mix.chol.data() == sa.chol.data()
                    && mix.mean == sa.mean
                {
                    Ok("α = 0 reproduces style A stats bitwise".into())
                } else {
                    Err("α = 0 stats differ from style A".into())
                }
            }
            Err(e) => Err(e.to_string()),
        }
    });

    record("cholesky_gradient_fd", {
        let n = 6;
        let mut rng = WeightRng::new(RngSeed(23));
        let mut a = crate::linalg::Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, rng.uniform(-1.0, 1.0));
            }
        }
        let s = a.transpose().matmul(&a).add_scaled_identity(n as f64);
        let l = cwct::cholesky(&s, 0.0).unwrap();
        let mut grad_l = crate::linalg::Mat::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                grad_l.set(i, j, rng.uniform(-1.0, 1.0));
            }
        }
        match cwct::cholesky_backward(&s, &l, &grad_l) {
            Err(e) => Err(e.to_string()),
            Ok(g) => {
                // φ = Σ w_ij L_ij; symmetric central differences.
                let phi = |m: &crate::linalg::Mat| -> f64 {
                    let lm = cwct::cholesky(m, 0.0).unwrap();
                    let mut acc = 0.0;
                    for i in 0..n {
                        for j in 0..=i {
                            acc += grad_l.at(i, j) * lm.at(i, j);
                        }
                    }
                    acc
                };
                let h = 1e-6;
                let mut worst = 0.0f64;
                for i in 0..n {
                    for j in 0..=i {
                        let mut plus = s.clone();
                        let mut minus = s.clone();
                        plus.set(i, j, plus.at(i, j) + h);
                        minus.set(i, j, minus.at(i, j) - h);
                        if i != j {
                            plus.set(j, i, plus.at(j, i) + h);
                            minus.set(j, i, minus.at(j, i) - h);
                        }
                        let fd = (phi(&plus) - phi(&minus)) / (2.0 * h);
                        let got = if i == j { g.at(i, i) } else { 2.0 * g.at(i, j) };
                        let rel = (got - fd).abs() / fd.abs().max(1e-8);
                        worst = worst.max(rel);
                    }
                }
                if worst <= 1e-5 {
                    Ok(format!("worst relative error {worst:.2e} ≤ 1e-5"))
                } else {
                    Err(format!("worst relative error {worst:.2e}"))
                }
            }
        }
    });

    record("repeated_eigenvalue_gradient_finite", {
        let s = crate::linalg::Mat::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let l = cwct::cholesky(&s, 0.0).unwrap();
        let grad_l = crate::linalg::Mat::from_rows(&[&[0.3, 0.0], &[-1.2, 0.8]]);
        match cwct::cholesky_backward(&s, &l, &grad_l) {
            Ok(g) if g.all_finite() => Ok("finite gradient at λ₁ = λ₂".into()),
            Ok(_) => Err("gradient not finite".into()),
            Err(e) => Err(e.to_string()),
        }
    });

    record("svd_route_agreement", {
        let c = 8;
        let mut rng = WeightRng::new(RngSeed(24));
        let f_c = random_tensor(c, 24, 24, &mut rng, -1.0, 1.0);
        let f_s = random_tensor(c, 24, 24, &mut rng, 0.5, 2.0);
        let a = cwct::transfer(&f_c, &f_s, None, None, DEFAULT_EPS);
        let b = cwct::wct_svd(&f_c, &f_s, DEFAULT_EPS);
        match (a, b) {
            (Ok(x), Ok(y)) => {
                let (_, ca) = cwct::global_covariance(&x);
                let (_, cb) = cwct::global_covariance(&y);
                let diff = ca.max_abs_diff(&cb);
                if diff <= 1e-3 {
                    Ok(format!("route covariances agree to {diff:.2e}"))
                } else {
                    Err(format!("route covariances differ by {diff:.2e}"))
                }
            }
            (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
        }
    });

    // Matting invariants.
    record("matting_row_sums_and_psd", {
        let mut rng = WeightRng::new(RngSeed(25));
        let img = random_tensor(3, 5, 5, &mut rng, 0.0, 1.0);
        match crate::matting::build_laplacian(&img, 1, 1e-7) {
            Err(e) => Err(e.to_string()),
            Ok(lap) => {
                let mut row_sums = vec![0.0f64; lap.n()];
                for (r, _, v) in lap.entries() {
                    row_sums[r as usize] += v;
                }
                let worst_row = row_sums.iter().fold(0.0f64, |m, s| m.max(s.abs()));
                let mut dense = crate::linalg::Mat::zeros(lap.n());
                for (r, c, v) in lap.entries() {
                    dense.set(r as usize, c as usize, v);
                }
                match crate::linalg::jacobi_eigh(&dense, 100) {
                    Err(e) => Err(e.to_string()),
                    Ok((vals, _)) => {
                        if worst_row <= 1e-8 && vals[0] >= -1e-8 {
                            Ok(format!(
                                "row sums ≤ {worst_row:.2e}, min eigenvalue {:.2e}",
                                vals[0]
                            ))
                        } else {
                            Err(format!(
                                "row sums {worst_row:.2e}, min eigenvalue {:.2e}",
                                vals[0]
                            ))
                        }
                    }
                }
            }
        }
    });

    record("matting_grad_fd", {
        // Quadratic loss + f32-exact perturbations (grid-aligned v,
        // power-of-two step, ±1 direction) leave the central difference
        // no slack beyond f64 rounding.
        let mut rng = WeightRng::new(RngSeed(26));
        let img = random_tensor(3, 5, 5, &mut rng, 0.0, 1.0);
        let lap = crate::matting::build_laplacian(&img, 1, 1e-7).unwrap();
        let mut v = random_tensor(1, 5, 5, &mut rng, -1.0, 1.0);
        for x in v.data_mut() {
            *x = (*x * 256.0).round() / 256.0;
        }
        let dir: Vec<f32> = (0..v.data().len())
            .map(|_| if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 })
            .collect();
        let grad = crate::matting::matting_loss_grad(&lap, &v).unwrap();
        let h = 0.00390625f32; // 2⁻⁸
        let mut vp = v.clone();
        let mut vm = v.clone();
        for ((p, m), d) in vp.data_mut().iter_mut().zip(vm.data_mut()).zip(&dir) {
            *p += h * d;
            *m -= h * d;
        }
        let fd = (crate::matting::matting_loss(&lap, &vp).unwrap()
            - crate::matting::matting_loss(&lap, &vm).unwrap())
            / (2.0 * h as f64);
        let analytic: f64 = grad
            .data()
            .iter()
            .zip(&dir)
            .map(|(&g, &d)| g as f64 * d as f64)
            .sum();
        let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
        // The stored gradient is f32, which caps agreement near 1e-7.
        if rel <= 1e-6 {
            Ok(format!("directional derivative rel err {rel:.2e}"))
        } else {
            Err(format!("directional derivative rel err {rel:.2e}"))
        }
    });

    // Metrics invariants.
    record("ssim_self_unity", {
        let mut rng = WeightRng::new(RngSeed(27));
        let img = random_tensor(3, 16, 16, &mut rng, 0.0, 1.0);
        match crate::metrics::ssim(&img, &img) {
            Ok(s) if (s - 1.0).abs() < 1e-12 => Ok(format!("ssim(x,x) = {s}")),
            Ok(s) => Err(format!("ssim(x,x) = {s}")),
            Err(e) => Err(e.to_string()),
        }
    });

    record("temporal_unit_shift", {
        let mut rng = WeightRng::new(RngSeed(28));
        let prev = random_tensor(3, 8, 10, &mut rng, 0.0, 1.0);
        let mut next = Tensor::zeros(3, 8, 10);
        for c in 0..3 {
            for y in 0..8 {
                for x in 1..10 {
                    next.set(c, y, x, prev.at(c, y, x - 1));
                }
            }
        }
        let flow = crate::metrics::FlowField::new(8, 10, vec![1.0; 80], vec![0.0; 80]).unwrap();
        match crate::metrics::temporal_error(&prev, &next, &flow) {
            Ok(rep) if rep.error <= 1e-6 && rep.valid_pixels == 8 * 9 => {
                Ok(format!("error {:.2e} over {} pixels", rep.error, rep.valid_pixels))
            }
            Ok(rep) => Err(format!("error {:.2e} over {} pixels", rep.error, rep.valid_pixels)),
            Err(e) => Err(e.to_string()),
        }
    });

    // Weight container round trip + corruption rejection, via a
    // throwaway file in the system temp directory.
    record("weight_file_roundtrip_and_corruption", {
        use crate::io::{load_weights, save_weights};
        let dir = std::env::temp_dir();
        let path = dir.join(format!(
            "capvst_selftest_{}_{}.capw",
            std::process::id(),
            if quick { "q" } else { "f" }
        ));
        let outcome = (|| -> std::result::Result<String, String> {
            let w = init_weights(&sp, RngSeed(12), InitMode::Random).map_err(|e| e.to_string())?;
            save_weights(&path, &w).map_err(|e| e.to_string())?;
            let back = load_weights(&path).map_err(|e| e.to_string())?;
            if back != w {
                return Err("round trip not bit-identical".into());
            }
            let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            bytes[0] = b'X';
            std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
            match load_weights(&path) {
                Err(_) => Ok("round trip bit-identical; corruption rejected".into()),
                Ok(_) => Err("corrupted file loaded without error".into()),
            }
        })();
        let _ = std::fs::remove_file(&path);
        outcome
    });

    record("stylize_deterministic", {
        let w = init_weights(&sp, RngSeed(13), InitMode::Random).unwrap();
        let engine = Engine::new(w).unwrap();
        let mut rng = WeightRng::new(RngSeed(29));
        let content = random_tensor(3, 16, 16, &mut rng, 0.0, 1.0);
        let style = random_tensor(3, 16, 16, &mut rng, 0.0, 1.0);
        let job = StylizeJob::new(content, style);
        let a = stylize_image(&engine, &job);
        let b = stylize_image(&engine, &job);
        match (a, b) {
            (Ok(x), Ok(y)) if x.data() == y.data() => Ok("two runs bit-identical".into()),
            (Ok(_), Ok(_)) => Err("two runs differ".into()),
            (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
        }
    });

    let all_passed = checks.iter().all(|c| c.passed);
    SelftestReport {
        quick,
        parameter_count_default_plan: default_params,
        checks,
        all_passed,
    }
}

#[derive(Serialize, Clone, Debug)]
pub struct BenchCase {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub cwct_median_seconds: f64,
    pub svd_median_seconds: f64,
}

#[derive(Serialize, Clone, Debug)]
pub struct BenchReport {
    pub reps: usize,
    pub cases: Vec<BenchCase>,
    pub cwct_faster_at_c256: bool,
    /// cWCT(C=256) / cWCT(C=32): reported for comparison, not asserted.
    pub cwct_c256_over_c32_ratio: f64,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn assert_ordering(&self) -> Result<()> {
        if self.cwct_faster_at_c256 {
            Ok(())
        } else {
            Err(Error::numeric(
                "run_bench",
                "cWCT was not strictly faster than SVD-WCT at C=256",
            ))
        }
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Times `transfer` (Cholesky route) against `wct_svd` on synthetic
/// C×512×512 features, C ∈ {32, 256}, median of at least 20 reps per
/// route. Cases run sequentially for stable timing.
pub fn run_bench(reps: usize) -> Result<BenchReport> {
    let reps = reps.max(20);
    let (h, w) = (512usize, 512usize);
    let mut cases = Vec::new();
    let mut cwct_by_c = std::collections::BTreeMap::new();
    for &c in &[32usize, 256] {
        let mut rng = WeightRng::new(RngSeed(0xBE7C + c as u64));
        let f_c = random_tensor(c, h, w, &mut rng, -1.0, 1.0);
        let f_s = random_tensor(c, h, w, &mut rng, 0.0, 2.0);

        let mut cwct_times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            let out = cwct::transfer(&f_c, &f_s, None, None, DEFAULT_EPS)?;
            cwct_times.push(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        let mut svd_times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            let out = cwct::wct_svd(&f_c, &f_s, DEFAULT_EPS)?;
            svd_times.push(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        let cwct_median = median(&mut cwct_times);
        let svd_median = median(&mut svd_times);
        cwct_by_c.insert(c, cwct_median);
        cases.push(BenchCase {
            channels: c,
            height: h,
            width: w,
            cwct_median_seconds: cwct_median,
            svd_median_seconds: svd_median,
        });
    }
    let c256 = cases.iter().find(|c| c.channels == 256).unwrap();
    let cwct_faster_at_c256 = c256.cwct_median_seconds < c256.svd_median_seconds;
    let ratio = cwct_by_c[&256] / cwct_by_c[&32];
    Ok(BenchReport {
        reps,
        cases,
        cwct_faster_at_c256,
        cwct_c256_over_c32_ratio: ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cycle_loss;
    use crate::revnet::{init_weights, InitMode};

    fn small_engine(seed: u64, mode: InitMode) -> Engine {
        Engine::new(init_weights(&small_plan(), RngSeed(seed), mode).unwrap()).unwrap()
    }

    fn rand_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = WeightRng::new(RngSeed(seed));
        random_tensor(c, h, w, &mut rng, 0.0, 1.0)
    }

    #[test]
    fn stylize_identity_style_recovers_content() {
        let engine = small_engine(1, InitMode::Random);
        let content = rand_image(3, 24, 24, 100);
        let job = StylizeJob::new(content.clone(), content.clone());
        let out = stylize_image(&engine, &job).unwrap();
        let mut clamped = out.clone();
        for v in clamped.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        assert!(clamped.max_abs_diff(&content) <= 1e-2);
        assert_eq!(out.shape(), content.shape());
    }

    #[test]
    fn stylized_latent_matches_transfer_end_to_end() {
        // Re-encoding the raw output recovers the transferred latent
        // exactly when transferred latents stay on the padded-image
        // manifold (zero-residual branches): the pad planes decode to
        // ~√ε and re-padding with zeros loses nothing measurable.
        let engine = small_engine(2, InitMode::ZeroResidual);
        let content = rand_image(3, 16, 16, 101);
        let style = rand_image(3, 16, 16, 102);
        let latent_c = engine.encode(&content).unwrap();
        let prepared = engine.prepare_style(&style, None, DEFAULT_EPS).unwrap();
        let transferred =
            transfer_prepared(&latent_c, &prepared, None, DEFAULT_EPS).unwrap();
        let out = engine.decode(&transferred).unwrap();
        let re_encoded = engine.encode(&out).unwrap();
        assert!(re_encoded.max_abs_diff(&transferred) <= 1e-3);

        // Untrained random branches bend that manifold, so exact latent
        // recovery degrades to ~5e-2; the per-channel style statistics
        // survive re-encoding regardless. Trained weights (cycle loss)
        // would tighten this back toward the zero-residual behaviour.
        let engine = small_engine(2, InitMode::Random);
        let latent_c = engine.encode(&content).unwrap();
        let prepared = engine.prepare_style(&style, None, DEFAULT_EPS).unwrap();
        let transferred =
            transfer_prepared(&latent_c, &prepared, None, DEFAULT_EPS).unwrap();
        let out = engine.decode(&transferred).unwrap();
        let re_encoded = engine.encode(&out).unwrap();
        let f_s = engine.encode(&style).unwrap();
        let dist = crate::metrics::latent_style_distance(&re_encoded, &f_s).unwrap();
        let c = re_encoded.channels() as f64;
        assert!(dist <= 1e-2 * c, "style distance {dist} at C={c}");
    }

    #[test]
    fn alpha_zero_equals_single_style_bitwise() {
        let engine = small_engine(3, InitMode::Random);
        let content = rand_image(3, 16, 16, 103);
        let style_a = rand_image(3, 16, 16, 104);
        let style_b = rand_image(3, 16, 16, 105);
        let single = stylize_image(&engine, &StylizeJob::new(content.clone(), style_a.clone()))
            .unwrap();
        let mut job = StylizeJob::new(content, style_a);
        job.style_b = Some(style_b);
        job.alpha = 0.0;
        let blended = stylize_image(&engine, &job).unwrap();
        assert_eq!(single.data(), blended.data());
    }

    #[test]
    fn masked_stylize_runs_and_differs_from_global() {
        let engine = small_engine(4, InitMode::Random);
        let content = rand_image(3, 16, 16, 106);
        let style = rand_image(3, 16, 16, 107);
        let half_labels = |split: usize| -> GrayImage {
            let mut data = vec![0u8; 256];
            for (i, v) in data.iter_mut().enumerate() {
                *v = if i % 16 < split { 1 } else { 2 };
            }
            GrayImage {
                height: 16,
                width: 16,
                data,
            }
        };
        let mut job = StylizeJob::new(content.clone(), style.clone());
        job.content_mask = Some(half_labels(8));
        job.style_mask = Some(half_labels(10));
        let masked = stylize_image(&engine, &job).unwrap();
        let global = stylize_image(&engine, &StylizeJob::new(content, style)).unwrap();
        assert_eq!(masked.shape(), global.shape());
        assert!(masked.max_abs_diff(&global) > 1e-5);
    }

    #[test]
    fn job_validation_rejects_bad_combinations() {
        let engine = small_engine(5, InitMode::Random);
        let content = rand_image(3, 16, 16, 108);
        let style = rand_image(3, 16, 16, 109);
        let mask = GrayImage {
            height: 16,
            width: 16,
            data: vec![0; 256],
        };

        let mut only_content_mask = StylizeJob::new(content.clone(), style.clone());
        only_content_mask.content_mask = Some(mask.clone());
        assert!(stylize_image(&engine, &only_content_mask).is_err());

        let mut bad_alpha = StylizeJob::new(content.clone(), style.clone());
        bad_alpha.alpha = 1.5;
        assert!(stylize_image(&engine, &bad_alpha).is_err());

        let mut masks_plus_interp = StylizeJob::new(content.clone(), style.clone());
        masks_plus_interp.content_mask = Some(mask.clone());
        masks_plus_interp.style_mask = Some(mask);
        masks_plus_interp.style_b = Some(style);
        assert!(stylize_image(&engine, &masks_plus_interp).is_err());

        // Indivisible size surfaces a stage-tagged shape error.
        let bad = StylizeJob::new(rand_image(3, 15, 16, 110), rand_image(3, 16, 16, 111));
        let err = stylize_image(&engine, &bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stage"), "error lacks stage context: {msg}");
    }

    #[test]
    fn cycle_reconstruction_bounds() {
        let engine = small_engine(6, InitMode::ZeroResidual);
        let content = rand_image(3, 16, 16, 112);
        let style = rand_image(3, 16, 16, 113);
        let cycle = cycle_reconstruct(&engine, &content, &style, DEFAULT_EPS).unwrap();
        assert_eq!(cycle.shape(), content.shape());
        let loss = cycle_loss(&cycle, &content).unwrap();
        assert!(loss.is_finite());
        assert!(loss <= 1e-2, "zero-residual cycle loss {loss}");

        // content = style: double identity.
        let same = cycle_reconstruct(&engine, &content, &content, DEFAULT_EPS).unwrap();
        let mut clamped = same.clone();
        for v in clamped.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        assert!(clamped.max_abs_diff(&content) <= 1e-2);
    }

    #[test]
    fn video_reuses_style_stats_and_matches_image_path() {
        let engine = small_engine(7, InitMode::Random);
        let style = rand_image(3, 16, 16, 114);
        let frames: Vec<Tensor> = (0..4).map(|i| rand_image(3, 16, 16, 120 + i)).collect();
        assert_eq!(engine.style_stat_computations(), 0);
        let job = VideoJob::new(frames.clone(), style.clone());
        let outs = stylize_video(&engine, &job).unwrap();
        assert_eq!(outs.len(), 4);
        // One style input → exactly one stat computation, not four.
        assert_eq!(engine.style_stat_computations(), 1);

        // Single-frame video equals the image path bitwise.
        let single = stylize_video(
            &engine,
            &VideoJob::new(vec![frames[0].clone()], style.clone()),
        )
        .unwrap();
        let image_path = stylize_image(&engine, &StylizeJob::new(frames[0].clone(), style))
            .unwrap();
        assert_eq!(single[0].data(), image_path.data());
    }

    #[test]
    fn video_identical_frames_identical_outputs() {
        let engine = small_engine(8, InitMode::Random);
        let style = rand_image(3, 16, 16, 130);
        let frame = rand_image(3, 16, 16, 131);
        let job = VideoJob::new(vec![frame.clone(), frame.clone(), frame], style);
        let outs = stylize_video(&engine, &job).unwrap();
        assert_eq!(outs[0].data(), outs[1].data());
        assert_eq!(outs[1].data(), outs[2].data());
    }

    #[test]
    fn video_errors_carry_frame_index() {
        let engine = small_engine(9, InitMode::Random);
        let style = rand_image(3, 16, 16, 132);
        let good = rand_image(3, 16, 16, 133);
        let bad = rand_image(3, 16, 16, 134);
        let mut job = VideoJob::new(vec![good.clone(), bad, good], style);
        // Frame 1's mask has the wrong resolution.
        let ok_mask = GrayImage {
            height: 16,
            width: 16,
            data: vec![0; 256],
        };
        let bad_mask = GrayImage {
            height: 8,
            width: 8,
            data: vec![0; 64],
        };
        job.style_mask = Some(ok_mask.clone());
        job.content_masks = Some(vec![ok_mask.clone(), bad_mask, ok_mask]);
        let err = stylize_video(&engine, &job).unwrap_err();
        assert!(matches!(err, Error::Frame { index: 1, .. }), "{err}");

        let empty = VideoJob::new(Vec::new(), rand_image(3, 16, 16, 135));
        assert!(stylize_video(&engine, &empty).is_err());
    }

    #[test]
    fn selftest_quick_passes_and_serializes() {
        let report = run_selftest(true);
        for c in &report.checks {
            assert!(c.passed, "selftest check {} failed: {}", c.name, c.detail);
        }
        assert!(report.all_passed);
        assert_eq!(report.parameter_count_default_plan, 3_738_656);
        let json = report.to_json();
        assert!(json.contains("\"all_passed\": true"));
        assert!(json.contains("rng_stream"));
    }
}
