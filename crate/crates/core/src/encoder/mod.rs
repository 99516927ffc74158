//! The small transformer speech encoder.
//!
//! Parameters live in one flat f64 vector with a fixed canonical ordering
//! (the checkpoint contract). Forward and backward are hand-written; the
//! gradient of any supported loss is exact for the implemented graph.

mod backward;
mod checkpoint;
mod forward;
mod layout;
mod loss;

pub use checkpoint::{Checkpoint, StageTag};
pub use forward::{forward, EncodedBatch};
pub use layout::{param_count, MatRef, ParamLayout};
pub use loss::{loss_and_gradients, ObjectiveSpec};

pub(crate) use backward::backward;
pub(crate) use forward::forward_cached;
pub(crate) use loss::classify_logits;

use crate::error::{Result, SaptError};
use crate::rng::{derive_seed, rng_from_seed};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub feat_dim: usize,
    /// Consecutive frames concatenated before the feature encoder.
    pub frame_stack: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub num_classes: usize,
    pub proj_dim: usize,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0
            || self.frame_stack == 0
            || self.model_dim == 0
            || self.num_heads == 0
            || self.ffn_dim == 0
            || self.proj_dim == 0
        {
            return Err(SaptError::Config("arch: all dimensions must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(SaptError::Config("arch: num_classes must be >= 2".into()));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(SaptError::Config(format!(
                "arch: model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Latent sequence length for an input of `t` frames.
    pub fn latent_len(&self, t: usize) -> usize {
        t / self.frame_stack
    }

    pub fn stacked_dim(&self) -> usize {
        self.feat_dim * self.frame_stack
    }
}

/// Deterministic initialization: linear weights N(0, 1/fan_in), biases zero,
/// layer-norm scales one, mask embedding at scale 0.01. The RNG is consumed
/// in canonical segment order.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<Vec<f64>> {
    arch.validate()?;
    let layout = ParamLayout::new(arch);
    let mut params = vec![0.0; layout.total];
    let mut rng = rng_from_seed(derive_seed(seed, "init", &[]));
    for (name, m) in layout.segments() {
        let seg = &mut params[m.offset..m.offset + m.len()];
        if name.ends_with(".weight") {
            let scale = 1.0 / (m.cols as f64).sqrt();
            for v in seg.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v = n * scale;
            }
        } else if name == "mask_embedding" {
            for v in seg.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v = n * 0.01;
            }
        } else if name.ends_with(".scale") {
            seg.fill(1.0);
        }
        // biases stay zero
    }
    // The two contrastive projections start from the same draw so that
    // projection-space cosines inherit the latent-space similarity structure
    // at step 0; independent draws would decorrelate the two spaces and
    // leave the contrastive objective without an initial signal.
    let (t_w, c_w) = (layout.tproj_w, layout.cproj_w);
    let src: Vec<f64> = t_w.slice(&params).to_vec();
    params[c_w.offset..c_w.offset + c_w.len()].copy_from_slice(&src);
    Ok(params)
}

/// Re-initialize only the classifier head, leaving everything else intact.
/// Fine-tuning uses this so both modes share head initializations.
pub fn reinit_classifier(params: &mut [f64], arch: &ArchConfig, seed: u64) {
    let layout = ParamLayout::new(arch);
    let mut rng = rng_from_seed(derive_seed(seed, "classifier-init", &[]));
    let m = layout.cls_w;
    let scale = 1.0 / (m.cols as f64).sqrt();
    for v in params[m.offset..m.offset + m.len()].iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = n * scale;
    }
    let b = layout.cls_b;
    params[b.offset..b.offset + b.len()].fill(0.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ArchConfig {
        ArchConfig {
            feat_dim: 16,
            frame_stack: 2,
            model_dim: 32,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 64,
            num_classes: 8,
            proj_dim: 16,
        }
    }

    #[test]
    fn init_is_bit_deterministic() {
        let a = init_params(&arch(), 3).unwrap();
        let b = init_params(&arch(), 3).unwrap();
        let c = init_params(&arch(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    /// Closed-form parameter count for the default architecture:
    /// fe 32x32+32, mask 32, per layer 2*32 + 4*(32*32+32) + 2*32 + (64*32+64)
    /// + (32*64+32) = 8544, projections 2*(16*32+16), classifier 8*32+8.
    #[test]
    fn parameter_count_matches_closed_form() {
        let a = arch();
        let expected = 1024 + 32 + 32 + 2 * 8544 + 2 * 528 + 264;
        assert_eq!(param_count(&a), expected);
        assert_eq!(init_params(&a, 0).unwrap().len(), expected);
        assert_eq!(expected, 19496);
    }

    #[test]
    fn layer_norm_scales_start_at_one_and_biases_at_zero() {
        let a = arch();
        let params = init_params(&a, 9).unwrap();
        let layout = ParamLayout::new(&a);
        for (name, m) in layout.segments() {
            let seg = &params[m.offset..m.offset + m.len()];
            if name.ends_with(".scale") {
                assert!(seg.iter().all(|&v| v == 1.0), "{name}");
            }
            if name.ends_with(".bias") {
                assert!(seg.iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn invalid_head_split_is_rejected() {
        let mut a = arch();
        a.num_heads = 5;
        assert!(a.validate().is_err());
    }

    #[test]
    fn classifier_reinit_touches_only_the_head() {
        let a = arch();
        let base = init_params(&a, 1).unwrap();
        let mut modified = base.clone();
        reinit_classifier(&mut modified, &a, 77);
        let layout = ParamLayout::new(&a);
        let head_start = layout.cls_w.offset;
        assert_eq!(base[..head_start], modified[..head_start]);
        assert_ne!(base[head_start..], modified[head_start..]);
    }
}
