//! Reversible style-transfer inference engine.
//!
//! A bijective residual network encodes images into refined latents,
//! a Cholesky-based whitening–coloring transform moves second-order
//! statistics from style to content, and the inverse network decodes
//! the result — content information survives exactly, by construction.
//! Alongside the core pipeline: a closed-form matting Laplacian for
//! photorealistic regularization, quality metrics (SSIM, cycle, style
//! distance, temporal warp error), deterministic weight I/O, and
//! self-test/bench runners.
//!
//! Feature `parallel` (default) enables rayon data parallelism; all
//! reductions use fixed-order combining, so results are bit-identical
//! with the feature off.

pub mod error;
pub mod par;
pub mod tensor;
pub mod linalg;
pub mod cwct;
pub mod io;
pub mod matting;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod revnet;

pub use cwct::{
    cholesky_backward, compute_stats, interpolate_stats, prepare_style, transfer,
    transfer_prepared, wct_svd, whiten, whitened_cov_gap, PreparedStyle, RegionMaskLatent,
    StyleStats, DEFAULT_EPS,
};
pub use error::{Error, Result};
pub use io::{
    load_weights, read_flo, read_pgm, read_ppm, save_weights, write_flo,
    write_laplacian_triplets, write_pgm, write_ppm, GrayImage,
};
pub use linalg::Mat;
pub use matting::{
    build_laplacian, downsample_for_matting, matting_loss, matting_loss_grad, SparseLaplacian,
    MATTING_MAX_SIDE,
};
pub use metrics::{
    cycle_loss, latent_style_distance, ssim, temporal_error, FlowField, TemporalErrorReport,
};
pub use pipeline::{
    cycle_reconstruct, run_bench, run_selftest, stylize_image, stylize_video, BenchReport,
    Engine, SelftestReport, StylizeJob, VideoJob,
};
pub use refine::{cr_backward, cr_forward};
pub use revnet::{
    backward, forward, init_weights, squeeze, unsqueeze, ArchitecturePlan, ChannelRefinePlan,
    CrVariant, InitMode, LossWeights, NetworkWeights,
};
pub use tensor::{resize_bilinear, ConvParams, RngSeed, Tensor, WeightRng};
