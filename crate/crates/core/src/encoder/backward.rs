//! Hand-written reverse pass mirroring `forward.rs`. Gradients accumulate
//! into a flat vector with the same canonical layout as the parameters.

use super::forward::{ForwardCache, LayerCache, LnRowCache};
use super::layout::{LayerOffsets, ParamLayout};
use super::ArchConfig;
use crate::math::{gelu_deriv, matvec_t_acc, outer_acc};

/// Split out adjacent scale/bias gradient slices for a layer norm.
fn ln_grad_slices(
    grads: &mut [f64],
    scale: super::layout::MatRef,
    bias: super::layout::MatRef,
) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(scale.offset + scale.len(), bias.offset);
    let (head, tail) = grads.split_at_mut(bias.offset);
    (&mut head[scale.offset..scale.offset + scale.len()], &mut tail[..bias.len()])
}

/// Backward through one layer norm row; returns d(input row), accumulates
/// scale/bias grads.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward_row(
    ln: &LnRowCache,
    t: usize,
    d: usize,
    scale: &[f64],
    dy: &[f64],
    d_scale: &mut [f64],
    d_bias: &mut [f64],
    dx: &mut [f64],
) {
    let xhat = &ln.xhat[t * d..(t + 1) * d];
    let istd = ln.inv_std[t];
    let mut dxhat = vec![0.0; d];
    let mut mean_dxhat = 0.0;
    let mut mean_dxhat_xhat = 0.0;
    for i in 0..d {
        d_scale[i] += dy[i] * xhat[i];
        d_bias[i] += dy[i];
        let v = dy[i] * scale[i];
        dxhat[i] = v;
        mean_dxhat += v;
        mean_dxhat_xhat += v * xhat[i];
    }
    mean_dxhat /= d as f64;
    mean_dxhat_xhat /= d as f64;
    for i in 0..d {
        dx[i] += istd * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

/// Backward through one transformer block. `d_out` is the gradient of the
/// block output; returns the gradient of the block input.
fn layer_backward(
    cache: &LayerCache,
    t_lat: usize,
    arch: &ArchConfig,
    params: &[f64],
    lo: &LayerOffsets,
    d_out: &[f64],
    grads: &mut [f64],
) -> Vec<f64> {
    let d = arch.model_dim;
    let ffn = arch.ffn_dim;
    let heads = arch.num_heads;
    let dk = arch.head_dim();
    let att_scale = 1.0 / (dk as f64).sqrt();

    // --- FFN sub-block ---
    let mut d_x_mid = vec![0.0; t_lat * d];
    d_x_mid.copy_from_slice(d_out); // residual branch
    {
        let w2 = lo.w2.slice(params);
        let w1 = lo.w1.slice(params);
        let ln2_scale = lo.ln2_scale.slice(params);
        for t in 0..t_lat {
            let d_yf = &d_out[t * d..(t + 1) * d];
            let act = &cache.ffn_act[t * ffn..(t + 1) * ffn];
            outer_acc(d_yf, act, d, ffn, lo.w2.slice_mut(grads));
            for i in 0..d {
                lo.b2.slice_mut(grads)[i] += d_yf[i];
            }
            let mut du = vec![0.0; ffn];
            matvec_t_acc(w2, d_yf, d, ffn, &mut du);
            let pre = &cache.ffn_pre[t * ffn..(t + 1) * ffn];
            for i in 0..ffn {
                du[i] *= gelu_deriv(pre[i]);
            }
            let h2 = &cache.ln2.out[t * d..(t + 1) * d];
            outer_acc(&du, h2, ffn, d, lo.w1.slice_mut(grads));
            for i in 0..ffn {
                lo.b1.slice_mut(grads)[i] += du[i];
            }
            let mut dh2 = vec![0.0; d];
            matvec_t_acc(w1, &du, ffn, d, &mut dh2);
            let mut dx_row = vec![0.0; d];
            let (d_scale, d_bias) = ln_grad_slices(grads, lo.ln2_scale, lo.ln2_bias);
            layer_norm_backward_row(
                &cache.ln2,
                t,
                d,
                ln2_scale,
                &dh2,
                d_scale,
                d_bias,
                &mut dx_row,
            );
            for i in 0..d {
                d_x_mid[t * d + i] += dx_row[i];
            }
        }
    }

    // --- attention sub-block ---
    let mut d_x_in = vec![0.0; t_lat * d];
    d_x_in.copy_from_slice(&d_x_mid); // residual branch

    let wo = lo.wo.slice(params);
    let mut d_attn_out = vec![0.0; t_lat * d];
    for t in 0..t_lat {
        let dy = &d_x_mid[t * d..(t + 1) * d];
        outer_acc(dy, &cache.attn_out[t * d..(t + 1) * d], d, d, lo.wo.slice_mut(grads));
        for i in 0..d {
            lo.bo.slice_mut(grads)[i] += dy[i];
        }
        matvec_t_acc(wo, dy, d, d, &mut d_attn_out[t * d..(t + 1) * d]);
    }

    let mut d_q = vec![0.0; t_lat * d];
    let mut d_k = vec![0.0; t_lat * d];
    let mut d_v = vec![0.0; t_lat * d];
    for hh in 0..heads {
        let hoff = hh * dk;
        for t in 0..t_lat {
            let a_row =
                &cache.attn[hh * t_lat * t_lat + t * t_lat..hh * t_lat * t_lat + (t + 1) * t_lat];
            let d_o = &d_attn_out[t * d + hoff..t * d + hoff + dk];
            // dA and softmax backward
            let mut d_a = vec![0.0; t_lat];
            for u in 0..t_lat {
                let vrow = &cache.v[u * d + hoff..u * d + hoff + dk];
                let mut acc = 0.0;
                for i in 0..dk {
                    acc += d_o[i] * vrow[i];
                    d_v[u * d + hoff + i] += a_row[u] * d_o[i];
                }
                d_a[u] = acc;
            }
            let dot_a: f64 = (0..t_lat).map(|u| a_row[u] * d_a[u]).sum();
            for u in 0..t_lat {
                let ds = a_row[u] * (d_a[u] - dot_a) * att_scale;
                let krow = &cache.k[u * d + hoff..u * d + hoff + dk];
                let qrow = &cache.q[t * d + hoff..t * d + hoff + dk];
                for i in 0..dk {
                    d_q[t * d + hoff + i] += ds * krow[i];
                    d_k[u * d + hoff + i] += ds * qrow[i];
                }
            }
        }
    }

    // QKV projections back to the ln1 output
    let wq = lo.wq.slice(params);
    let wk = lo.wk.slice(params);
    let wv = lo.wv.slice(params);
    let ln1_scale = lo.ln1_scale.slice(params);
    for t in 0..t_lat {
        let h = &cache.ln1.out[t * d..(t + 1) * d];
        let mut dh = vec![0.0; d];
        for (w, dproj, wref, bref) in
            [(wq, &d_q, lo.wq, lo.bq), (wk, &d_k, lo.wk, lo.bk), (wv, &d_v, lo.wv, lo.bv)]
        {
            let dy = &dproj[t * d..(t + 1) * d];
            outer_acc(dy, h, d, d, wref.slice_mut(grads));
            for i in 0..d {
                bref.slice_mut(grads)[i] += dy[i];
            }
            matvec_t_acc(w, dy, d, d, &mut dh);
        }
        let mut dx_row = vec![0.0; d];
        let (d_scale, d_bias) = ln_grad_slices(grads, lo.ln1_scale, lo.ln1_bias);
        layer_norm_backward_row(&cache.ln1, t, d, ln1_scale, &dh, d_scale, d_bias, &mut dx_row);
        for i in 0..d {
            d_x_in[t * d + i] += dx_row[i];
        }
    }

    d_x_in
}

/// Full encoder backward. `d_latents` is the direct gradient on the unmasked
/// latents (the contrastive target path), `d_contexts` on the transformer
/// output, `d_pooled` on the mean-pooled vector.
pub(crate) fn backward(
    params: &[f64],
    arch: &ArchConfig,
    cache: &ForwardCache,
    d_latents: &[f64],
    d_contexts: &[f64],
    d_pooled: &[f64],
    grads: &mut [f64],
) {
    let layout = ParamLayout::new(arch);
    let d = arch.model_dim;
    let t_lat = cache.t_lat;

    // contexts receive the pooling gradient spread uniformly
    let mut d_x = vec![0.0; t_lat * d];
    d_x.copy_from_slice(d_contexts);
    for t in 0..t_lat {
        for i in 0..d {
            d_x[t * d + i] += d_pooled[i] / t_lat as f64;
        }
    }

    for (cache_l, lo) in cache.layers.iter().zip(&layout.layers).rev() {
        d_x = layer_backward(cache_l, t_lat, arch, params, lo, &d_x, grads);
    }

    // split the bottom gradient between mask embedding and latents
    let mut d_z = vec![0.0; t_lat * d];
    d_z.copy_from_slice(d_latents);
    for t in 0..t_lat {
        if cache.masked[t] {
            let emb_grad = layout.mask_emb.slice_mut(grads);
            for i in 0..d {
                emb_grad[i] += d_x[t * d + i];
            }
        } else {
            for i in 0..d {
                d_z[t * d + i] += d_x[t * d + i];
            }
        }
    }

    // feature encoder
    let sd = arch.stacked_dim();
    for t in 0..t_lat {
        let mut d_pre = vec![0.0; d];
        for i in 0..d {
            d_pre[i] = d_z[t * d + i] * gelu_deriv(cache.pre[t * d + i]);
        }
        outer_acc(
            &d_pre,
            &cache.stacked[t * sd..(t + 1) * sd],
            d,
            sd,
            layout.fe_w.slice_mut(grads),
        );
        for i in 0..d {
            layout.fe_b.slice_mut(grads)[i] += d_pre[i];
        }
    }
}
