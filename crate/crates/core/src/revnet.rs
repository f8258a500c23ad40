//! The bijective backbone: reversible residual blocks with channel
//! shuffle, squeeze/unsqueeze, and multi-scale forward/backward
//! inference.
//!
//! Invertibility never depends on the residual branch F, only on the
//! coupling structure: y₁ = x₁ + F(x₂), y₂ = x₂, emitted as (y₂, y₁).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{
    conv2d, crop_channels, pad_channels, relu_in_place, ConvParams, Element, RngSeed, TensorBase,
    WeightRng,
};

/// Channel-refinement stage shape. `variant` selects the residual branch
/// realization; `Pointwise` is a diagnostic ablation only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRefinePlan {
    pub target_channels: usize,
    pub spread_factor: usize,
    pub block_count: usize,
    #[serde(default)]
    pub variant: CrVariant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CrVariant {
    #[default]
    ConvBlocks,
    Pointwise,
}

/// Loss weights carried in the plan for record-keeping; inference never
/// evaluates them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_matting: f64,
    pub lambda_cycle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_matting: 1200.0,
            lambda_cycle: 10.0,
        }
    }
}

/// Full architecture description. `scales` lists the residual-block
/// count per scale; a squeeze sits between consecutive scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitecturePlan {
    pub initial_pad_channels: usize,
    pub scales: Vec<usize>,
    pub squeeze_factor: usize,
    pub convs_per_block: usize,
    pub cr: ChannelRefinePlan,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

impl Default for ArchitecturePlan {
    fn default() -> Self {
        ArchitecturePlan {
            initial_pad_channels: 16,
            scales: vec![10, 10, 10],
            squeeze_factor: 2,
            convs_per_block: 2,
            cr: ChannelRefinePlan {
                target_channels: 64,
                spread_factor: 2,
                block_count: 2,
                variant: CrVariant::ConvBlocks,
            },
            loss_weights: LossWeights::default(),
        }
    }
}

impl ArchitecturePlan {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::config("plan needs at least one scale"));
        }
        if self.squeeze_factor != 2 {
            return Err(Error::config("squeeze_factor is fixed at 2"));
        }
        if self.cr.spread_factor != 2 {
            return Err(Error::config("cr spread_factor is fixed at 2"));
        }
        if self.initial_pad_channels < 4 || self.initial_pad_channels % 2 != 0 {
            return Err(Error::config(
                "initial_pad_channels must be even and at least 4",
            ));
        }
        if self.convs_per_block == 0 {
            return Err(Error::config("convs_per_block must be at least 1"));
        }
        if self.cr.block_count == 0 || self.cr.target_channels == 0 {
            return Err(Error::config("cr block_count and target_channels must be positive"));
        }
        let sf2 = self.cr.spread_factor * self.cr.spread_factor;
        let padded = self.cr.target_channels * sf2;
        if padded < self.backbone_out_channels() {
            return Err(Error::config(format!(
                "cr target {}·{} = {} cannot hold backbone output of {} channels",
                self.cr.target_channels,
                sf2,
                padded,
                self.backbone_out_channels()
            )));
        }
        if self.cr.target_channels >= self.backbone_out_channels() {
            return Err(Error::config(
                "cr target_channels must be strictly below the backbone output count",
            ));
        }
        if padded % 2 != 0 {
            return Err(Error::config("cr padded channel count must be even"));
        }
        Ok(())
    }

    pub fn scale_channels(&self, scale: usize) -> usize {
        self.initial_pad_channels * 4usize.pow(scale as u32)
    }

    pub fn backbone_out_channels(&self) -> usize {
        self.scale_channels(self.scales.len() - 1)
    }

    pub fn cr_padded_channels(&self) -> usize {
        self.cr.target_channels * self.cr.spread_factor * self.cr.spread_factor
    }

    /// Input H and W must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        (1usize << (self.scales.len() - 1)) * self.cr.spread_factor
    }

    /// Channel width of every residual block in order: backbone scales,
    /// then the channel-refinement blocks.
    pub fn block_schedule(&self) -> Vec<(usize, CrVariant)> {
        let mut sched = Vec::new();
        for (s, &count) in self.scales.iter().enumerate() {
            for _ in 0..count {
                sched.push((self.scale_channels(s), CrVariant::ConvBlocks));
            }
        }
        for _ in 0..self.cr.block_count {
            sched.push((self.cr_padded_channels(), self.cr.variant));
        }
        sched
    }

    pub fn backbone_block_count(&self) -> usize {
        self.scales.iter().sum()
    }
}

/// Per-pixel dense (1×1) layer; only used by the CR pointwise ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseParams {
    pub fn init_uniform(out_channels: usize, in_channels: usize, rng: &mut WeightRng) -> Self {
        let s = (1.0 / in_channels as f64).sqrt();
        let weights = (0..out_channels * in_channels)
            .map(|_| rng.uniform(-s, s) as f32)
            .collect();
        DenseParams {
            out_channels,
            in_channels,
            weights,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        DenseParams {
            out_channels,
            in_channels,
            weights: vec![0.0; out_channels * in_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn apply<T: Element>(&self, x: &TensorBase<T>) -> Result<TensorBase<T>> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(
                "dense",
                format!(
                    "input has {} channels, layer expects {}",
                    x.channels(),
                    self.in_channels
                ),
            ));
        }
        let (h, w) = (x.height(), x.width());
        let hw = h * w;
        let src: Vec<f64> = x.data().iter().map(|v| v.to_f64()).collect();
        let mut out = TensorBase::<T>::zeros(self.out_channels, h, w);
        par::for_each_chunk_mut(out.data_mut(), hw, |oc, out_plane| {
            let mut acc = vec![self.bias[oc] as f64; hw];
            for ic in 0..self.in_channels {
                let wv = self.weights[oc * self.in_channels + ic] as f64;
                for (a, s) in acc.iter_mut().zip(&src[ic * hw..(ic + 1) * hw]) {
                    *a += wv * s;
                }
            }
            for (o, a) in out_plane.iter_mut().zip(&acc) {
                *o = T::from_f64(*a);
            }
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResidualLayer {
    Conv(ConvParams),
    Dense(DenseParams),
}

impl ResidualLayer {
    fn in_channels(&self) -> usize {
        match self {
            ResidualLayer::Conv(p) => p.in_channels,
            ResidualLayer::Dense(p) => p.in_channels,
        }
    }

    fn out_channels(&self) -> usize {
        match self {
            ResidualLayer::Conv(p) => p.out_channels,
            ResidualLayer::Dense(p) => p.out_channels,
        }
    }

    fn apply<T: Element>(&self, x: &TensorBase<T>) -> Result<TensorBase<T>> {
        match self {
            ResidualLayer::Conv(p) => conv2d(x, p),
            ResidualLayer::Dense(p) => p.apply(x),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            ResidualLayer::Conv(p) => p.weights.len() + p.bias.len(),
            ResidualLayer::Dense(p) => p.weights.len() + p.bias.len(),
        }
    }
}

/// Residual branch F of one reversible block: layers with a relu after
/// every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    pub layers: Vec<ResidualLayer>,
}

impl BlockWeights {
    /// Channel width C of the block this branch belongs to (F maps
    /// C/2 → C/2).
    pub fn block_channels(&self) -> usize {
        2 * self.layers[0].in_channels()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.parameter_count()).sum()
    }

    fn eval<T: Element>(&self, x: &TensorBase<T>) -> Result<TensorBase<T>> {
        let mut cur = self.layers[0].apply(x)?;
        for layer in &self.layers[1..] {
            relu_in_place(&mut cur);
            cur = layer.apply(&cur)?;
        }
        Ok(cur)
    }
}

/// Full parameter set: backbone blocks in execution order, then the
/// channel-refinement blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    pub plan: ArchitecturePlan,
    pub blocks: Vec<BlockWeights>,
}

impl NetworkWeights {
    pub fn backbone_blocks(&self) -> &[BlockWeights] {
        &self.blocks[..self.plan.backbone_block_count()]
    }

    pub fn cr_blocks(&self) -> &[BlockWeights] {
        &self.blocks[self.plan.backbone_block_count()..]
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks.iter().map(|b| b.parameter_count()).sum()
    }

    /// Checks block list shape against the plan.
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        let sched = self.plan.block_schedule();
        if sched.len() != self.blocks.len() {
            return Err(Error::config(format!(
                "plan expects {} blocks, weights carry {}",
                sched.len(),
                self.blocks.len()
            )));
        }
        for (i, ((channels, variant), block)) in sched.iter().zip(&self.blocks).enumerate() {
            if block.layers.is_empty() {
                return Err(Error::config(format!("block {i} has no layers")));
            }
            let half = channels / 2;
            if block.layers[0].in_channels() != half
                || block.layers.last().unwrap().out_channels() != half
            {
                return Err(Error::config(format!(
                    "block {i} maps {}→{}, expected {half}→{half}",
                    block.layers[0].in_channels(),
                    block.layers.last().unwrap().out_channels()
                )));
            }
            for pair in block.layers.windows(2) {
                if pair[0].out_channels() != pair[1].in_channels() {
                    return Err(Error::config(format!("block {i} has a width mismatch")));
                }
            }
            let want_dense = *variant == CrVariant::Pointwise;
            for layer in &block.layers {
                let is_dense = matches!(layer, ResidualLayer::Dense(_));
                if is_dense != want_dense {
                    return Err(Error::config(format!(
                        "block {i} layer kind does not match plan variant"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Random,
    ZeroResidual,
}

/// Deterministic parameter construction for a plan. Zero-residual mode
/// zeroes the final layer of every branch, making each block an exact
/// half-swap.
pub fn init_weights(plan: &ArchitecturePlan, seed: RngSeed, mode: InitMode) -> Result<NetworkWeights> {
    plan.validate()?;
    let mut rng = WeightRng::new(seed);
    let mut blocks = Vec::new();
    for (channels, variant) in plan.block_schedule() {
        let half = channels / 2;
        let mut layers = Vec::with_capacity(plan.convs_per_block);
        for li in 0..plan.convs_per_block {
            let last = li + 1 == plan.convs_per_block;
            let layer = match variant {
                CrVariant::ConvBlocks => {
                    if last && mode == InitMode::ZeroResidual {
                        ResidualLayer::Conv(ConvParams::zeros(half, half))
                    } else {
                        ResidualLayer::Conv(ConvParams::init_uniform(half, half, &mut rng))
                    }
                }
                CrVariant::Pointwise => {
                    if last && mode == InitMode::ZeroResidual {
                        ResidualLayer::Dense(DenseParams::zeros(half, half))
                    } else {
                        ResidualLayer::Dense(DenseParams::init_uniform(half, half, &mut rng))
                    }
                }
            };
            layers.push(layer);
        }
        blocks.push(BlockWeights { layers });
    }
    Ok(NetworkWeights {
        plan: plan.clone(),
        blocks,
    })
}

fn copy_planes<T: Element>(src: &TensorBase<T>, from: usize, count: usize) -> TensorBase<T> {
    let (h, w) = (src.height(), src.width());
    let hw = h * w;
    let mut out = TensorBase::<T>::zeros(count, h, w);
    out.data_mut()
        .copy_from_slice(&src.data()[from * hw..(from + count) * hw]);
    out
}

/// y₁ = x₁ + F(x₂), y₂ = x₂; output is the shuffled concatenation
/// (y₂, y₁). First C/2 planes are x₁.
pub fn block_forward<T: Element>(x: &TensorBase<T>, w: &BlockWeights) -> Result<TensorBase<T>> {
    let c = x.channels();
    if c % 2 != 0 {
        return Err(Error::shape("block_forward", format!("odd channel count {c}")));
    }
    let half = c / 2;
    let x2 = copy_planes(x, half, half);
    let f = w.eval(&x2)?;
    let (h, wd) = (x.height(), x.width());
    let hw = h * wd;
    let mut out = TensorBase::<T>::zeros(c, h, wd);
    out.data_mut()[..half * hw].copy_from_slice(x2.data());
    {
        let y1 = &mut out.data_mut()[half * hw..];
        let x1 = &x.data()[..half * hw];
        for ((o, a), b) in y1.iter_mut().zip(x1).zip(f.data()) {
            *o = T::from_f64(a.to_f64() + b.to_f64());
        }
    }
    Ok(out)
}

/// Exact algebraic inverse of `block_forward` for identical weights.
pub fn block_backward<T: Element>(y: &TensorBase<T>, w: &BlockWeights) -> Result<TensorBase<T>> {
    let c = y.channels();
    if c % 2 != 0 {
        return Err(Error::shape("block_backward", format!("odd channel count {c}")));
    }
    let half = c / 2;
    // First half of y is y₂ = x₂.
    let x2 = copy_planes(y, 0, half);
    let f = w.eval(&x2)?;
    let (h, wd) = (y.height(), y.width());
    let hw = h * wd;
    let mut out = TensorBase::<T>::zeros(c, h, wd);
    {
        let x1 = &mut out.data_mut()[..half * hw];
        let y1 = &y.data()[half * hw..];
        for ((o, a), b) in x1.iter_mut().zip(y1).zip(f.data()) {
            *o = T::from_f64(a.to_f64() - b.to_f64());
        }
    }
    out.data_mut()[half * hw..].copy_from_slice(x2.data());
    Ok(out)
}

/// Space-to-channel: 4C × H/2 × W/2 with output channel
/// c·4 + dy·2 + dx holding sub-pixel (dy, dx). Bijective.
pub fn squeeze<T: Element>(x: &TensorBase<T>) -> Result<TensorBase<T>> {
    let (c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "squeeze",
            format!("spatial dims {h}×{w} must be even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = TensorBase::<T>::zeros(c * 4, oh, ow);
    for ci in 0..c {
        let src = x.plane(ci);
        for dy in 0..2 {
            for dx in 0..2 {
                let oc = ci * 4 + dy * 2 + dx;
                let dst = out.plane_mut(oc);
                for y in 0..oh {
                    let srow = &src[(2 * y + dy) * w..(2 * y + dy + 1) * w];
                    let drow = &mut dst[y * ow..(y + 1) * ow];
                    for (xo, d) in drow.iter_mut().enumerate() {
                        *d = srow[2 * xo + dx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Bitwise inverse of `squeeze`.
pub fn unsqueeze<T: Element>(x: &TensorBase<T>) -> Result<TensorBase<T>> {
    let (c, h, w) = x.shape();
    if c % 4 != 0 {
        return Err(Error::shape(
            "unsqueeze",
            format!("channel count {c} not divisible by 4"),
        ));
    }
    let oc = c / 4;
    let (oh, ow) = (h * 2, w * 2);
    let mut out = TensorBase::<T>::zeros(oc, oh, ow);
    for co in 0..oc {
        let dst = out.plane_mut(co);
        for dy in 0..2 {
            for dx in 0..2 {
                let src_plane = &x.plane(co * 4 + dy * 2 + dx);
                for y in 0..h {
                    let srow = &src_plane[y * w..(y + 1) * w];
                    let drow = &mut dst[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                    for (xi, s) in srow.iter().enumerate() {
                        drow[2 * xi + dx] = *s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backbone forward pass: injective padding, then per scale the
/// residual blocks followed by a squeeze (except after the last scale).
pub fn forward<T: Element>(image: &TensorBase<T>, w: &NetworkWeights) -> Result<TensorBase<T>> {
    if image.channels() != 3 {
        return Err(Error::shape(
            "forward",
            format!("expected a 3-channel image, got {}", image.channels()),
        ));
    }
    let div = w.plan.spatial_divisor();
    if image.height() % div != 0 || image.width() % div != 0 {
        return Err(Error::shape(
            "forward",
            format!(
                "spatial dims {}×{} must be divisible by {div}",
                image.height(),
                image.width()
            ),
        ));
    }
    let mut x = pad_channels(image, w.plan.initial_pad_channels)?;
    let mut block_iter = w.backbone_blocks().iter();
    let n_scales = w.plan.scales.len();
    for (s, &count) in w.plan.scales.iter().enumerate() {
        for _ in 0..count {
            let block = block_iter.next().expect("plan/block mismatch");
            x = block_forward(&x, block)?;
        }
        if s + 1 < n_scales {
            x = squeeze(&x)?;
        }
    }
    Ok(x)
}

/// Inverse of `forward`: runs all inverses in reverse order and ends by
/// cropping the injective padding back to a 3-channel image.
pub fn backward<T: Element>(latent: &TensorBase<T>, w: &NetworkWeights) -> Result<TensorBase<T>> {
    if latent.channels() != w.plan.backbone_out_channels() {
        return Err(Error::shape(
            "backward",
            format!(
                "latent has {} channels, plan produces {}",
                latent.channels(),
                w.plan.backbone_out_channels()
            ),
        ));
    }
    let mut x = latent.clone();
    let n_scales = w.plan.scales.len();
    let mut consumed = 0;
    for (rev_idx, &count) in w.plan.scales.iter().enumerate().rev() {
        if rev_idx + 1 < n_scales {
            x = unsqueeze(&x)?;
        }
        let start = w.plan.scales[..rev_idx].iter().sum::<usize>();
        for b in (start..start + count).rev() {
            x = block_backward(&x, &w.blocks[b])?;
        }
        consumed += count;
    }
    debug_assert_eq!(consumed, w.plan.backbone_block_count());
    crop_channels(&x, 3)
}
