//! Forward pass: frame stacking + sinusoidal positions, affine+GELU feature
//! encoder, optional latent masking, pre-layer-norm transformer blocks, mean
//! pooling. Intermediates are cached for the hand-written backward pass.

use super::layout::{LayerOffsets, ParamLayout};
use super::ArchConfig;
use crate::error::{Result, SaptError};
use crate::math::{affine, dot, gelu, softmax_inplace};
use std::collections::BTreeSet;

const LN_EPS: f64 = 1e-5;

/// Public view of the encoder outputs. `latents` are always the unmasked
/// values; they are the contrastive targets.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub latents: Vec<f64>,
    pub contexts: Vec<f64>,
    pub pooled: Vec<f64>,
    pub t_lat: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct LnRowCache {
    pub xhat: Vec<f64>,    // T' x d
    pub inv_std: Vec<f64>, // T'
    pub out: Vec<f64>,     // T' x d
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    pub ln1: LnRowCache,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub attn: Vec<f64>, // H x T' x T'
    pub attn_out: Vec<f64>,
    pub x_mid: Vec<f64>,
    pub ln2: LnRowCache,
    pub ffn_pre: Vec<f64>, // T' x ffn
    pub ffn_act: Vec<f64>, // T' x ffn
}

#[derive(Clone, Debug)]
pub(crate) struct ForwardCache {
    pub t_lat: usize,
    pub stacked: Vec<f64>, // T' x (F*r), positional encoding included
    pub pre: Vec<f64>,     // T' x d, feature-encoder preactivation
    pub latents: Vec<f64>, // T' x d
    pub masked: Vec<bool>, // per latent position
    pub layers: Vec<LayerCache>,
    pub contexts: Vec<f64>,
    pub pooled: Vec<f64>,
}

fn sinusoidal_pe(pos: usize, dim: usize, out: &mut [f64]) {
    for i in 0..dim {
        let pair = (i / 2 * 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(pair / dim as f64);
        out[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

fn layer_norm_rows(x: &[f64], t_lat: usize, d: usize, scale: &[f64], bias: &[f64]) -> LnRowCache {
    let mut xhat = vec![0.0; t_lat * d];
    let mut inv_std = vec![0.0; t_lat];
    let mut out = vec![0.0; t_lat * d];
    for t in 0..t_lat {
        let row = &x[t * d..(t + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[t] = istd;
        for i in 0..d {
            let h = (row[i] - mu) * istd;
            xhat[t * d + i] = h;
            out[t * d + i] = scale[i] * h + bias[i];
        }
    }
    LnRowCache { xhat, inv_std, out }
}

fn layer_forward(
    x: &[f64],
    t_lat: usize,
    arch: &ArchConfig,
    params: &[f64],
    lo: &LayerOffsets,
) -> LayerCache {
    let d = arch.model_dim;
    let heads = arch.num_heads;
    let dk = arch.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();

    let ln1 = layer_norm_rows(x, t_lat, d, lo.ln1_scale.slice(params), lo.ln1_bias.slice(params));

    let mut q = vec![0.0; t_lat * d];
    let mut k = vec![0.0; t_lat * d];
    let mut v = vec![0.0; t_lat * d];
    for t in 0..t_lat {
        let h = &ln1.out[t * d..(t + 1) * d];
        affine(lo.wq.slice(params), lo.bq.slice(params), h, d, d, &mut q[t * d..(t + 1) * d]);
        affine(lo.wk.slice(params), lo.bk.slice(params), h, d, d, &mut k[t * d..(t + 1) * d]);
        affine(lo.wv.slice(params), lo.bv.slice(params), h, d, d, &mut v[t * d..(t + 1) * d]);
    }

    let mut attn = vec![0.0; heads * t_lat * t_lat];
    let mut attn_out = vec![0.0; t_lat * d];
    for hh in 0..heads {
        let hoff = hh * dk;
        for t in 0..t_lat {
            let qrow = &q[t * d + hoff..t * d + hoff + dk];
            let w = &mut attn[hh * t_lat * t_lat + t * t_lat..hh * t_lat * t_lat + (t + 1) * t_lat];
            for u in 0..t_lat {
                let krow = &k[u * d + hoff..u * d + hoff + dk];
                w[u] = dot(qrow, krow) * scale;
            }
            softmax_inplace(w);
            let orow = &mut attn_out[t * d + hoff..t * d + hoff + dk];
            for u in 0..t_lat {
                let vrow = &v[u * d + hoff..u * d + hoff + dk];
                let a = w[u];
                for i in 0..dk {
                    orow[i] += a * vrow[i];
                }
            }
        }
    }

    let mut x_mid = vec![0.0; t_lat * d];
    let mut proj = vec![0.0; d];
    for t in 0..t_lat {
        affine(
            lo.wo.slice(params),
            lo.bo.slice(params),
            &attn_out[t * d..(t + 1) * d],
            d,
            d,
            &mut proj,
        );
        for i in 0..d {
            x_mid[t * d + i] = x[t * d + i] + proj[i];
        }
    }

    let ln2 =
        layer_norm_rows(&x_mid, t_lat, d, lo.ln2_scale.slice(params), lo.ln2_bias.slice(params));

    let ffn = arch.ffn_dim;
    let mut ffn_pre = vec![0.0; t_lat * ffn];
    let mut ffn_act = vec![0.0; t_lat * ffn];
    for t in 0..t_lat {
        affine(
            lo.w1.slice(params),
            lo.b1.slice(params),
            &ln2.out[t * d..(t + 1) * d],
            ffn,
            d,
            &mut ffn_pre[t * ffn..(t + 1) * ffn],
        );
        for i in 0..ffn {
            ffn_act[t * ffn + i] = gelu(ffn_pre[t * ffn + i]);
        }
    }

    LayerCache { ln1, q, k, v, attn, attn_out, x_mid, ln2, ffn_pre, ffn_act }
}

/// Output of a layer given its cache (x_mid + W2 ffn_act + b2).
fn layer_output(
    cache: &LayerCache,
    t_lat: usize,
    arch: &ArchConfig,
    params: &[f64],
    lo: &LayerOffsets,
) -> Vec<f64> {
    let d = arch.model_dim;
    let ffn = arch.ffn_dim;
    let mut out = vec![0.0; t_lat * d];
    let mut proj = vec![0.0; d];
    for t in 0..t_lat {
        affine(
            lo.w2.slice(params),
            lo.b2.slice(params),
            &cache.ffn_act[t * ffn..(t + 1) * ffn],
            d,
            ffn,
            &mut proj,
        );
        for i in 0..d {
            out[t * d + i] = cache.x_mid[t * d + i] + proj[i];
        }
    }
    out
}

pub(crate) fn forward_cached(
    params: &[f64],
    arch: &ArchConfig,
    features: &[f64],
    num_frames: usize,
    mask: Option<&BTreeSet<usize>>,
) -> Result<ForwardCache> {
    arch.validate()?;
    if features.len() != num_frames * arch.feat_dim {
        return Err(SaptError::Contract("forward: feature buffer does not match T x F".into()));
    }
    let t_lat = arch.latent_len(num_frames);
    if t_lat == 0 {
        return Err(SaptError::Contract(format!(
            "forward: {num_frames} frames is shorter than frame_stack {}",
            arch.frame_stack
        )));
    }
    if let Some(m) = mask {
        if m.iter().any(|&i| i >= t_lat) {
            return Err(SaptError::Contract("forward: mask index out of latent range".into()));
        }
    }
    let layout = ParamLayout::new(arch);
    let d = arch.model_dim;
    let sd = arch.stacked_dim();

    // frame stacking
    let mut stacked = vec![0.0; t_lat * sd];
    for t in 0..t_lat {
        let dst = &mut stacked[t * sd..(t + 1) * sd];
        for r in 0..arch.frame_stack {
            let frame = (t * arch.frame_stack + r) * arch.feat_dim;
            dst[r * arch.feat_dim..(r + 1) * arch.feat_dim]
                .copy_from_slice(&features[frame..frame + arch.feat_dim]);
        }
    }

    // feature encoder
    let mut pre = vec![0.0; t_lat * d];
    let mut latents = vec![0.0; t_lat * d];
    for t in 0..t_lat {
        affine(
            layout.fe_w.slice(params),
            layout.fe_b.slice(params),
            &stacked[t * sd..(t + 1) * sd],
            d,
            sd,
            &mut pre[t * d..(t + 1) * d],
        );
        for i in 0..d {
            latents[t * d + i] = gelu(pre[t * d + i]);
        }
    }

    // mask replacement, then positional encoding on the context-network
    // input. Adding positions after masking keeps the latent targets free of
    // position content while letting masked positions retain their identity;
    // masking before positions would make all masked rows exchangeable and
    // the contrastive task unlearnable by construction.
    let mut masked = vec![false; t_lat];
    let mut x = latents.clone();
    if let Some(m) = mask {
        let emb = layout.mask_emb.slice(params);
        for &t in m {
            masked[t] = true;
            x[t * d..(t + 1) * d].copy_from_slice(emb);
        }
    }
    let mut pe = vec![0.0; d];
    for t in 0..t_lat {
        sinusoidal_pe(t, d, &mut pe);
        for i in 0..d {
            x[t * d + i] += pe[i];
        }
    }

    // context network
    let mut layers = Vec::with_capacity(arch.num_layers);
    for lo in &layout.layers {
        let cache = layer_forward(&x, t_lat, arch, params, lo);
        x = layer_output(&cache, t_lat, arch, params, lo);
        layers.push(cache);
    }
    let contexts = x;

    let mut pooled = vec![0.0; d];
    for t in 0..t_lat {
        for i in 0..d {
            pooled[i] += contexts[t * d + i];
        }
    }
    for v in pooled.iter_mut() {
        *v /= t_lat as f64;
    }

    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(SaptError::Numerical("forward produced non-finite activations".into()));
    }

    Ok(ForwardCache { t_lat, stacked, pre, latents, masked, layers, contexts, pooled })
}

/// Encode one utterance. When `mask` is given, masked latents are replaced by
/// the mask embedding before the context network; the returned latents are
/// always the unmasked values.
pub fn forward(
    params: &[f64],
    arch: &ArchConfig,
    features: &[f64],
    num_frames: usize,
    mask: Option<&BTreeSet<usize>>,
) -> Result<EncodedBatch> {
    let cache = forward_cached(params, arch, features, num_frames, mask)?;
    Ok(EncodedBatch {
        latents: cache.latents,
        contexts: cache.contexts,
        pooled: cache.pooled,
        t_lat: cache.t_lat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn tiny_arch(layers: usize) -> ArchConfig {
        ArchConfig {
            feat_dim: 4,
            frame_stack: 2,
            model_dim: 8,
            num_layers: layers,
            num_heads: 2,
            ffn_dim: 12,
            num_classes: 3,
            proj_dim: 5,
        }
    }

    fn random_features(t: usize, f: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..t * f).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn empty_mask_matches_no_mask() {
        let arch = tiny_arch(2);
        let params = init_params(&arch, 1).unwrap();
        let feats = random_features(10, 4, 2);
        let none = forward(&params, &arch, &feats, 10, None).unwrap();
        let empty = forward(&params, &arch, &feats, 10, Some(&BTreeSet::new())).unwrap();
        assert_eq!(none.contexts, empty.contexts);
        assert_eq!(none.latents, empty.latents);
    }

    #[test]
    fn zero_layers_pass_masked_latents_through() {
        let arch = tiny_arch(0);
        let params = init_params(&arch, 1).unwrap();
        let feats = random_features(10, 4, 3);
        let mask: BTreeSet<usize> = [1, 3].into_iter().collect();
        let out = forward(&params, &arch, &feats, 10, Some(&mask)).unwrap();
        let layout = ParamLayout::new(&arch);
        let emb = layout.mask_emb.slice(&params);
        let d = arch.model_dim;
        let mut pe = vec![0.0; d];
        for t in 0..out.t_lat {
            sinusoidal_pe(t, d, &mut pe);
            let ctx = &out.contexts[t * d..(t + 1) * d];
            if mask.contains(&t) {
                for i in 0..d {
                    assert!(
                        (ctx[i] - (emb[i] + pe[i])).abs() == 0.0,
                        "masked position {t} must equal mask embedding plus position"
                    );
                }
            } else {
                for i in 0..d {
                    assert!((ctx[i] - (out.latents[t * d + i] + pe[i])).abs() == 0.0);
                }
            }
        }
    }

    #[test]
    fn masked_position_output_is_input_independent_at_zero_layers() {
        let arch = tiny_arch(0);
        let params = init_params(&arch, 5).unwrap();
        let mask: BTreeSet<usize> = [2].into_iter().collect();
        let a = forward(&params, &arch, &random_features(8, 4, 1), 8, Some(&mask)).unwrap();
        let b = forward(&params, &arch, &random_features(8, 4, 2), 8, Some(&mask)).unwrap();
        let d = arch.model_dim;
        assert_eq!(a.contexts[2 * d..3 * d], b.contexts[2 * d..3 * d]);
    }

    #[test]
    fn pooled_is_the_mean_of_context_rows() {
        let arch = tiny_arch(2);
        let params = init_params(&arch, 7).unwrap();
        let out = forward(&params, &arch, &random_features(12, 4, 9), 12, None).unwrap();
        let d = arch.model_dim;
        for i in 0..d {
            let m: f64 =
                (0..out.t_lat).map(|t| out.contexts[t * d + i]).sum::<f64>() / out.t_lat as f64;
            assert!((m - out.pooled[i]).abs() < 1e-6);
        }
    }

    /// Hand-computed check with degenerate parameters: zero layers, identity-
    /// free feature encoder with zero weights and a fixed bias means every
    /// latent equals gelu(bias) and the pooled vector equals it too.
    #[test]
    fn hand_set_parameters_give_predictable_pooled_output() {
        let arch = ArchConfig {
            feat_dim: 2,
            frame_stack: 1,
            model_dim: 2,
            num_layers: 0,
            num_heads: 1,
            ffn_dim: 2,
            num_classes: 2,
            proj_dim: 2,
        };
        let layout = ParamLayout::new(&arch);
        let mut params = vec![0.0; layout.total];
        params[layout.fe_b.offset] = 1.0;
        params[layout.fe_b.offset + 1] = -0.5;
        let feats = vec![0.3, -0.7, 0.1, 0.9, -0.2, 0.4, 0.0, 0.0];
        let out = forward(&params, &arch, &feats, 4, None).unwrap();
        // zero weights: every latent row is gelu([1.0, -0.5]); with no
        // transformer layers the contexts are latents plus the positional
        // encoding, so the pooled mean picks up the mean position row.
        let mut pe_mean = [0.0; 2];
        let mut pe = vec![0.0; 2];
        for t in 0..4 {
            sinusoidal_pe(t, 2, &mut pe);
            for i in 0..2 {
                pe_mean[i] += pe[i] / 4.0;
            }
        }
        let expected = [crate::math::gelu(1.0) + pe_mean[0], crate::math::gelu(-0.5) + pe_mean[1]];
        for i in 0..2 {
            assert!((out.pooled[i] - expected[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let arch = tiny_arch(1);
        let params = init_params(&arch, 1).unwrap();
        let feats = random_features(1, 4, 0);
        assert!(forward(&params, &arch, &feats, 1, None).is_err());
    }

    #[test]
    fn out_of_range_mask_index_is_rejected() {
        let arch = tiny_arch(1);
        let params = init_params(&arch, 1).unwrap();
        let feats = random_features(8, 4, 0);
        let mask: BTreeSet<usize> = [99].into_iter().collect();
        assert!(forward(&params, &arch, &feats, 8, Some(&mask)).is_err());
    }
}
