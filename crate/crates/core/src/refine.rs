//! Channel refinement: pads the backbone latent, mixes it with
//! reversible residual blocks, and spreads channels into 2×2 spatial
//! patches. Keeps the full path bijective while shedding redundant
//! channel accumulation before the transform.

use crate::error::{Error, Result};
use crate::revnet::{block_backward, block_forward, squeeze, unsqueeze, NetworkWeights};
use crate::tensor::{crop_channels, pad_channels, Element, TensorBase};

/// Pad → residual blocks → spread (inverse squeeze).
/// Default plan: 256×64×64 → 64×128×128.
pub fn cr_forward<T: Element>(latent: &TensorBase<T>, w: &NetworkWeights) -> Result<TensorBase<T>> {
    let want = w.plan.backbone_out_channels();
    if latent.channels() != want {
        return Err(Error::shape(
            "cr_forward",
            format!("latent has {} channels, plan expects {want}", latent.channels()),
        ));
    }
    let mut x = pad_channels(latent, w.plan.cr_padded_channels())?;
    for block in w.cr_blocks() {
        x = block_forward(&x, block)?;
    }
    unsqueeze(&x)
}

/// Exact inverse: squeeze, inverse blocks in reverse order, crop the
/// padding.
pub fn cr_backward<T: Element>(refined: &TensorBase<T>, w: &NetworkWeights) -> Result<TensorBase<T>> {
    if refined.channels() != w.plan.cr.target_channels {
        return Err(Error::shape(
            "cr_backward",
            format!(
                "refined latent has {} channels, plan expects {}",
                refined.channels(),
                w.plan.cr.target_channels
            ),
        ));
    }
    let mut x = squeeze(refined)?;
    for block in w.cr_blocks().iter().rev() {
        x = block_backward(&x, block)?;
    }
    crop_channels(&x, w.plan.backbone_out_channels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revnet::{backward, forward, init_weights, ArchitecturePlan, InitMode};
    use crate::tensor::{random_tensor, RngSeed, WeightRng};

    #[test]
    fn default_plan_shape_oracle() {
        let w = init_weights(&ArchitecturePlan::default(), RngSeed(3), InitMode::Random).unwrap();
        let mut rng = WeightRng::new(RngSeed(4));
        let img = random_tensor(3, 64, 64, &mut rng, 0.0, 1.0);
        let latent = forward(&img, &w).unwrap();
        assert_eq!(latent.shape(), (256, 16, 16));
        let refined = cr_forward(&latent, &w).unwrap();
        // 256 channels / 2² spread, spatial ×2.
        assert_eq!(refined.shape(), (64, 32, 32));
        assert!(refined.channels() < latent.channels());
    }

    #[test]
    fn cr_roundtrip() {
        let w = init_weights(&ArchitecturePlan::default(), RngSeed(7), InitMode::Random).unwrap();
        let mut rng = WeightRng::new(RngSeed(8));
        let latent = random_tensor(256, 8, 8, &mut rng, -1.0, 1.0);
        let refined = cr_forward(&latent, &w).unwrap();
        let back = cr_backward(&refined, &w).unwrap();
        assert!(back.max_abs_diff(&latent) <= 1e-4);
    }

    #[test]
    fn zero_residual_cr_is_permutation_plus_padding() {
        let w = init_weights(&ArchitecturePlan::default(), RngSeed(9), InitMode::ZeroResidual)
            .unwrap();
        let mut rng = WeightRng::new(RngSeed(10));
        let latent = random_tensor(256, 8, 8, &mut rng, -1.0, 1.0);
        let refined = cr_forward(&latent, &w).unwrap();
        let mut got: Vec<f32> = refined.data().to_vec();
        let mut want: Vec<f32> = latent.data().to_vec();
        // Padding is a no-op for the default plan (256 = 64·4), so the
        // refined values are exactly a permutation of the latent.
        got.sort_by(f32::total_cmp);
        want.sort_by(f32::total_cmp);
        assert_eq!(got, want);
    }

    #[test]
    fn full_path_bijectivity() {
        let w = init_weights(&ArchitecturePlan::default(), RngSeed(21), InitMode::Random).unwrap();
        let mut rng = WeightRng::new(RngSeed(22));
        let img = random_tensor(3, 64, 64, &mut rng, 0.0, 1.0);
        let refined = cr_forward(&forward(&img, &w).unwrap(), &w).unwrap();
        let round = backward(&cr_backward(&refined, &w).unwrap(), &w).unwrap();
        assert!(round.max_abs_diff(&img) <= 1e-3);
    }

    #[test]
    fn cr_shape_errors() {
        let w = init_weights(&ArchitecturePlan::default(), RngSeed(1), InitMode::Random).unwrap();
        let bad = random_tensor(8, 4, 4, &mut WeightRng::new(RngSeed(2)), 0.0, 1.0);
        assert!(cr_forward(&bad, &w).is_err());
        assert!(cr_backward(&bad, &w).is_err());
    }
}
