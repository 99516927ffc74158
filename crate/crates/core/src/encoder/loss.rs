//! Batch objectives: the masked contrastive loss for self-supervised stages
//! and pooled-classifier cross-entropy for fine-tuning. Losses are summed
//! over the batch; gradients share the canonical parameter layout.

use super::layout::ParamLayout;
use super::{backward, forward_cached, ArchConfig};
use crate::corpus::LoadedUtterance;
use crate::error::{Result, SaptError};
use crate::math::matvec_t_acc;
use crate::objective::{
    contrastive_loss_with_grads, cross_entropy_with_grad, sample_mask, ContrastiveConfig,
    ContrastiveGrads, MaskSpec, ProjectionView,
};
use crate::rng::derive_seed;

/// Subtract the mean row over `rows` rows of width `d`.
fn center_rows(x: &[f64], rows: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for t in 0..rows {
        for i in 0..d {
            mean[i] += x[t * d + i];
        }
    }
    for v in mean.iter_mut() {
        *v /= rows as f64;
    }
    let mut out = x.to_vec();
    for t in 0..rows {
        for i in 0..d {
            out[t * d + i] -= mean[i];
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub enum ObjectiveSpec {
    SelfSupervised {
        mask_prob: f64,
        mask_span: usize,
        contrastive: ContrastiveConfig,
        /// Base seed; per-utterance mask and distractor seeds derive from it.
        seed: u64,
    },
    Supervised,
}

/// Batch-summed loss and its exact gradient in canonical parameter order.
pub fn loss_and_gradients(
    params: &[f64],
    arch: &ArchConfig,
    batch: &[LoadedUtterance],
    spec: &ObjectiveSpec,
) -> Result<(f64, Vec<f64>)> {
    arch.validate()?;
    let layout = ParamLayout::new(arch);
    let mut grads = vec![0.0; layout.total];
    let mut total = 0.0;
    let d = arch.model_dim;

    for (idx, utt) in batch.iter().enumerate() {
        if utt.feat_dim != arch.feat_dim {
            return Err(SaptError::Contract(format!(
                "utterance {}: feature dim {} does not match arch feat_dim {}",
                utt.id, utt.feat_dim, arch.feat_dim
            )));
        }
        let loss = match spec {
            ObjectiveSpec::SelfSupervised { mask_prob, mask_span, contrastive, seed } => {
                let mask_spec = MaskSpec {
                    mask_prob: *mask_prob,
                    span: *mask_span,
                    seed: derive_seed(*seed, "mask", &[idx as u64]),
                };
                let t_lat = arch.latent_len(utt.num_frames);
                if t_lat == 0 {
                    return Err(SaptError::Contract(format!(
                        "utterance {}: too short for frame_stack {}",
                        utt.id, arch.frame_stack
                    )));
                }
                let mask = sample_mask(t_lat, &mask_spec);
                if mask.is_empty() {
                    // mask_prob == 0: no self-supervision signal from this utterance
                    continue;
                }
                let cache =
                    forward_cached(params, arch, &utt.features, utt.num_frames, Some(&mask))?;
                // Center latents and contexts across positions before the
                // contrastive projections. Centered targets sum to zero over
                // the utterance, which rules out the degenerate optimum where
                // every projected target collapses onto a single direction
                // and the loss freezes at chance level.
                let latents_c = center_rows(&cache.latents, t_lat, d);
                let contexts_c = center_rows(&cache.contexts, t_lat, d);
                let proj = ProjectionView {
                    tproj_w: layout.tproj_w.slice(params),
                    tproj_b: layout.tproj_b.slice(params),
                    cproj_w: layout.cproj_w.slice(params),
                    cproj_b: layout.cproj_b.slice(params),
                    model_dim: d,
                    proj_dim: arch.proj_dim,
                };
                let mut d_latents = vec![0.0; t_lat * d];
                let mut d_contexts = vec![0.0; t_lat * d];
                let (mut dtw, mut dtb) =
                    (vec![0.0; layout.tproj_w.len()], vec![0.0; layout.tproj_b.len()]);
                let (mut dcw, mut dcb) =
                    (vec![0.0; layout.cproj_w.len()], vec![0.0; layout.cproj_b.len()]);
                let loss = {
                    let mut sinks = ContrastiveGrads {
                        d_latents: &mut d_latents,
                        d_contexts: &mut d_contexts,
                        d_tproj_w: &mut dtw,
                        d_tproj_b: &mut dtb,
                        d_cproj_w: &mut dcw,
                        d_cproj_b: &mut dcb,
                    };
                    contrastive_loss_with_grads(
                        &latents_c,
                        &contexts_c,
                        t_lat,
                        &mask,
                        proj,
                        contrastive,
                        derive_seed(*seed, "distractors", &[idx as u64]),
                        Some(&mut sinks),
                    )?
                };
                for (dst, src) in [
                    (layout.tproj_w, &dtw),
                    (layout.tproj_b, &dtb),
                    (layout.cproj_w, &dcw),
                    (layout.cproj_b, &dcb),
                ] {
                    for (g, s) in dst.slice_mut(&mut grads).iter_mut().zip(src.iter()) {
                        *g += s;
                    }
                }
                // Centering is linear and symmetric, so the backward pass
                // through it applies the same centering to the gradients.
                let d_latents = center_rows(&d_latents, t_lat, d);
                let d_contexts = center_rows(&d_contexts, t_lat, d);
                let d_pooled = vec![0.0; d];
                backward(params, arch, &cache, &d_latents, &d_contexts, &d_pooled, &mut grads);
                loss
            }
            ObjectiveSpec::Supervised => {
                let label = utt.label.ok_or_else(|| {
                    SaptError::Contract(format!(
                        "utterance {}: supervised objective needs a label",
                        utt.id
                    ))
                })?;
                let cache = forward_cached(params, arch, &utt.features, utt.num_frames, None)?;
                let mut logits = vec![0.0; arch.num_classes];
                crate::math::affine(
                    layout.cls_w.slice(params),
                    layout.cls_b.slice(params),
                    &cache.pooled,
                    arch.num_classes,
                    d,
                    &mut logits,
                );
                let (loss, d_logits) = cross_entropy_with_grad(&logits, label)?;
                crate::math::outer_acc(
                    &d_logits,
                    &cache.pooled,
                    arch.num_classes,
                    d,
                    layout.cls_w.slice_mut(&mut grads),
                );
                for i in 0..arch.num_classes {
                    layout.cls_b.slice_mut(&mut grads)[i] += d_logits[i];
                }
                let mut d_pooled = vec![0.0; d];
                matvec_t_acc(
                    layout.cls_w.slice(params),
                    &d_logits,
                    arch.num_classes,
                    d,
                    &mut d_pooled,
                );
                let t_lat = cache.t_lat;
                let d_latents = vec![0.0; t_lat * d];
                let d_contexts = vec![0.0; t_lat * d];
                backward(params, arch, &cache, &d_latents, &d_contexts, &d_pooled, &mut grads);
                loss
            }
        };
        if !loss.is_finite() {
            return Err(SaptError::Numerical(format!("non-finite loss on utterance {}", utt.id)));
        }
        total += loss;
    }

    if !total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(SaptError::Numerical("non-finite batch loss or gradient".into()));
    }
    Ok((total, grads))
}

/// Classifier logits for one utterance (no masking).
pub(crate) fn classify_logits(
    params: &[f64],
    arch: &ArchConfig,
    utt: &LoadedUtterance,
) -> Result<Vec<f64>> {
    if utt.feat_dim != arch.feat_dim {
        return Err(SaptError::Contract(format!(
            "utterance {}: feature dim {} does not match arch feat_dim {}",
            utt.id, utt.feat_dim, arch.feat_dim
        )));
    }
    let layout = ParamLayout::new(arch);
    let out = super::forward(params, arch, &utt.features, utt.num_frames, None)?;
    let mut logits = vec![0.0; arch.num_classes];
    crate::math::affine(
        layout.cls_w.slice(params),
        layout.cls_b.slice(params),
        &out.pooled,
        arch.num_classes,
        arch.model_dim,
        &mut logits,
    );
    Ok(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn arch() -> ArchConfig {
        ArchConfig {
            feat_dim: 4,
            frame_stack: 2,
            model_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 12,
            num_classes: 3,
            proj_dim: 5,
        }
    }

    fn utt(id: &str, t: usize, seed: u64, label: Option<usize>) -> LoadedUtterance {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(seed);
        LoadedUtterance {
            id: id.into(),
            features: (0..t * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            num_frames: t,
            feat_dim: 4,
            label,
        }
    }

    #[test]
    fn empty_batch_gives_zero_loss_and_zero_gradient() {
        let a = arch();
        let params = init_params(&a, 1).unwrap();
        let (loss, grads) =
            loss_and_gradients(&params, &a, &[], &ObjectiveSpec::Supervised).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_logits_give_batch_times_ln_c() {
        let a = arch();
        let mut params = init_params(&a, 1).unwrap();
        // zero classifier -> logits all zero -> uniform softmax
        let layout = ParamLayout::new(&a);
        layout.cls_w.slice_mut(&mut params).fill(0.0);
        layout.cls_b.slice_mut(&mut params).fill(0.0);
        let batch = vec![utt("a", 8, 1, Some(0)), utt("b", 10, 2, Some(2))];
        let (loss, _) =
            loss_and_gradients(&params, &a, &batch, &ObjectiveSpec::Supervised).unwrap();
        assert!((loss - 2.0 * (3f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn self_supervised_loss_is_deterministic() {
        let a = arch();
        let params = init_params(&a, 3).unwrap();
        let spec = ObjectiveSpec::SelfSupervised {
            mask_prob: 0.3,
            mask_span: 2,
            contrastive: ContrastiveConfig { num_distractors: 3, temperature: 0.1 },
            seed: 17,
        };
        let batch = vec![utt("a", 12, 5, None), utt("b", 9, 6, None)];
        let (l1, g1) = loss_and_gradients(&params, &a, &batch, &spec).unwrap();
        let (l2, g2) = loss_and_gradients(&params, &a, &batch, &spec).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        assert!(l1 > 0.0);
    }

    #[test]
    fn supervised_without_label_is_a_contract_violation() {
        let a = arch();
        let params = init_params(&a, 1).unwrap();
        let batch = vec![utt("a", 8, 1, None)];
        assert!(loss_and_gradients(&params, &a, &batch, &ObjectiveSpec::Supervised).is_err());
    }
}
