//! InfoNCE-style contrastive loss over masked latent positions.
//!
//! For each masked position t the context vector must identify the true
//! (unmasked) latent among K distractor latents, under temperature-scaled
//! cosine similarity after separate target/context projections.

use crate::error::{Result, SaptError};
use crate::math::{dot, matvec_t_acc, norm, outer_acc, softmax_inplace};
use crate::rng::rng_from_seed;
use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub num_distractors: usize,
    pub temperature: f64,
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_distractors < 1 || self.temperature <= 0.0 {
            return Err(SaptError::Contract(
                "contrastive: need num_distractors >= 1 and temperature > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Borrowed projection parameters (target d->proj and context d->proj).
#[derive(Clone, Copy)]
pub struct ProjectionView<'a> {
    pub tproj_w: &'a [f64],
    pub tproj_b: &'a [f64],
    pub cproj_w: &'a [f64],
    pub cproj_b: &'a [f64],
    pub model_dim: usize,
    pub proj_dim: usize,
}

/// Gradient sinks, all accumulated into (not overwritten).
pub struct ContrastiveGrads<'a> {
    pub d_latents: &'a mut [f64],
    pub d_contexts: &'a mut [f64],
    pub d_tproj_w: &'a mut [f64],
    pub d_tproj_b: &'a mut [f64],
    pub d_cproj_w: &'a mut [f64],
    pub d_cproj_b: &'a mut [f64],
}

fn project(view_w: &[f64], view_b: &[f64], x: &[f64], out_dim: usize, in_dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_dim];
    crate::math::affine(view_w, view_b, x, out_dim, in_dim, &mut y);
    y
}

/// Forward-only evaluation.
pub fn contrastive_loss(
    latents: &[f64],
    contexts: &[f64],
    t_lat: usize,
    mask: &BTreeSet<usize>,
    proj: ProjectionView<'_>,
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<f64> {
    contrastive_loss_with_grads(latents, contexts, t_lat, mask, proj, cfg, seed, None)
}

/// Loss plus (optionally) exact gradients with respect to latents, contexts,
/// and both projections. Distractors are drawn without replacement from the
/// other masked positions, falling back to unmasked positions when the
/// masked pool is too small; K is clamped to t_lat - 1.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_loss_with_grads(
    latents: &[f64],
    contexts: &[f64],
    t_lat: usize,
    mask: &BTreeSet<usize>,
    proj: ProjectionView<'_>,
    cfg: &ContrastiveConfig,
    seed: u64,
    mut grads: Option<&mut ContrastiveGrads<'_>>,
) -> Result<f64> {
    cfg.validate()?;
    if mask.is_empty() {
        return Err(SaptError::Contract("contrastive_loss: mask must be non-empty".into()));
    }
    if mask.iter().any(|&i| i >= t_lat) {
        return Err(SaptError::Contract("contrastive_loss: mask index out of range".into()));
    }
    if t_lat < 2 {
        return Err(SaptError::Contract(
            "contrastive_loss: need at least 2 latent positions".into(),
        ));
    }
    let d = proj.model_dim;
    let p = proj.proj_dim;
    let k_eff = cfg.num_distractors.min(t_lat - 1);

    // Projected targets for every position (any can serve as a distractor).
    let q: Vec<Vec<f64>> = (0..t_lat)
        .map(|i| project(proj.tproj_w, proj.tproj_b, &latents[i * d..(i + 1) * d], p, d))
        .collect();
    let unmasked: Vec<usize> = (0..t_lat).filter(|i| !mask.contains(i)).collect();

    let mut rng = rng_from_seed(seed);
    let mut total = 0.0;
    // dq accumulated per position across all anchor terms
    let mut dq_all = vec![0.0; t_lat * p];
    let mut dq_used = vec![false; t_lat];

    for &t in mask.iter() {
        let c_hat = project(proj.cproj_w, proj.cproj_b, &contexts[t * d..(t + 1) * d], p, d);

        let pool: Vec<usize> = mask.iter().cloned().filter(|&i| i != t).collect();
        let mut cands: Vec<usize> = vec![t];
        if pool.len() >= k_eff {
            let picks = index_sample(&mut rng, pool.len(), k_eff);
            cands.extend(picks.iter().map(|i| pool[i]));
        } else {
            cands.extend(pool.iter().cloned());
            let need = k_eff - pool.len();
            let extra: Vec<usize> = unmasked.iter().cloned().filter(|&i| i != t).collect();
            let take = need.min(extra.len());
            let picks = index_sample(&mut rng, extra.len(), take);
            cands.extend(picks.iter().map(|i| extra[i]));
        }

        let nc = norm(&c_hat);
        let sims: Vec<f64> = cands
            .iter()
            .map(|&j| {
                let nq = norm(&q[j]);
                if nc == 0.0 || nq == 0.0 {
                    0.0
                } else {
                    dot(&c_hat, &q[j]) / (nc * nq)
                }
            })
            .collect();

        let mut probs: Vec<f64> = sims.iter().map(|s| s / cfg.temperature).collect();
        softmax_inplace(&mut probs);
        total -= probs[0].ln();

        if let Some(g) = grads.as_deref_mut() {
            // d loss / d sim_j = (p_j - [j==0]) / temperature
            let mut d_chat = vec![0.0; p];
            for (j, (&pos, &s)) in cands.iter().zip(&sims).enumerate() {
                let mut dsim = probs[j] / cfg.temperature;
                if j == 0 {
                    dsim -= 1.0 / cfg.temperature;
                }
                let nq = norm(&q[pos]);
                if nc == 0.0 || nq == 0.0 {
                    continue;
                }
                let qv = &q[pos];
                for i in 0..p {
                    d_chat[i] += dsim * (qv[i] / (nc * nq) - s * c_hat[i] / (nc * nc));
                }
                let dq = &mut dq_all[pos * p..(pos + 1) * p];
                for i in 0..p {
                    dq[i] += dsim * (c_hat[i] / (nc * nq) - s * qv[i] / (nq * nq));
                }
                dq_used[pos] = true;
            }
            // context projection backward for this anchor
            let c_row = &contexts[t * d..(t + 1) * d];
            outer_acc(&d_chat, c_row, p, d, g.d_cproj_w);
            for i in 0..p {
                g.d_cproj_b[i] += d_chat[i];
            }
            matvec_t_acc(proj.cproj_w, &d_chat, p, d, &mut g.d_contexts[t * d..(t + 1) * d]);
        }
    }

    if let Some(g) = grads {
        for pos in 0..t_lat {
            if !dq_used[pos] {
                continue;
            }
            let dq = &dq_all[pos * p..(pos + 1) * p];
            let z_row = &latents[pos * d..(pos + 1) * d];
            outer_acc(dq, z_row, p, d, g.d_tproj_w);
            for i in 0..p {
                g.d_tproj_b[i] += dq[i];
            }
            matvec_t_acc(proj.tproj_w, dq, p, d, &mut g.d_latents[pos * d..(pos + 1) * d]);
        }
    }

    if !total.is_finite() {
        return Err(SaptError::Numerical("contrastive loss is non-finite".into()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_proj(d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        (w, vec![0.0; d])
    }

    fn view<'a>(
        tw: &'a [f64],
        tb: &'a [f64],
        cw: &'a [f64],
        cb: &'a [f64],
        d: usize,
    ) -> ProjectionView<'a> {
        ProjectionView {
            tproj_w: tw,
            tproj_b: tb,
            cproj_w: cw,
            cproj_b: cb,
            model_dim: d,
            proj_dim: d,
        }
    }

    #[test]
    fn uniform_similarities_give_ln_k_plus_one() {
        let d = 4;
        let t_lat = 8;
        // identical vectors everywhere -> every cosine is 1
        let latents: Vec<f64> = (0..t_lat).flat_map(|_| vec![0.3, -0.2, 0.5, 0.1]).collect();
        let contexts = latents.clone();
        let (w, b) = identity_proj(d);
        let mask: BTreeSet<usize> = (0..t_lat).collect();
        let cfg = ContrastiveConfig { num_distractors: 5, temperature: 0.1 };
        let loss =
            contrastive_loss(&latents, &contexts, t_lat, &mask, view(&w, &b, &w, &b, d), &cfg, 3)
                .unwrap();
        let expected = t_lat as f64 * (6f64).ln();
        assert!((loss - expected).abs() < 1e-12, "loss {loss}, expected {expected}");
    }

    /// Closed form frozen independently: cos(pos)=1, all 5 distractor
    /// cosines = -1, temperature 0.1 -> loss = -ln(e^10 / (e^10 + 5 e^-10)).
    #[test]
    fn antipodal_distractors_closed_form() {
        let d = 4;
        let t_lat = 7;
        let v = [0.5, -0.5, 0.5, -0.5];
        let mut latents = vec![0.0; t_lat * d];
        let mut contexts = vec![0.0; t_lat * d];
        latents[..d].copy_from_slice(&v);
        contexts[..d].copy_from_slice(&v);
        for t in 1..t_lat {
            for i in 0..d {
                latents[t * d + i] = -v[i];
            }
        }
        let (w, b) = identity_proj(d);
        let mask: BTreeSet<usize> = [0].into_iter().collect();
        let cfg = ContrastiveConfig { num_distractors: 5, temperature: 0.1 };
        let loss =
            contrastive_loss(&latents, &contexts, t_lat, &mask, view(&w, &b, &w, &b, d), &cfg, 9)
                .unwrap();
        let expected = (1.0 + 5.0 * (-20.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15, "loss {loss:e}, expected {expected:e}");
    }

    #[test]
    fn loss_is_nonnegative_and_deterministic() {
        let d = 3;
        let t_lat = 10;
        let mut rng = crate::rng::rng_from_seed(5);
        use rand::Rng;
        let latents: Vec<f64> = (0..t_lat * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let contexts: Vec<f64> = (0..t_lat * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (w, b) = identity_proj(d);
        let mask: BTreeSet<usize> = [1, 2, 5].into_iter().collect();
        let cfg = ContrastiveConfig { num_distractors: 4, temperature: 0.2 };
        let a =
            contrastive_loss(&latents, &contexts, t_lat, &mask, view(&w, &b, &w, &b, d), &cfg, 7)
                .unwrap();
        let c =
            contrastive_loss(&latents, &contexts, t_lat, &mask, view(&w, &b, &w, &b, d), &cfg, 7)
                .unwrap();
        assert_eq!(a, c);
        assert!(a >= 0.0);
    }

    #[test]
    fn invariant_to_common_rescale_of_projected_vectors() {
        let d = 3;
        let t_lat = 9;
        let mut rng = crate::rng::rng_from_seed(11);
        use rand::Rng;
        let latents: Vec<f64> = (0..t_lat * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let contexts: Vec<f64> = (0..t_lat * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (w, b) = identity_proj(d);
        let scaled_w: Vec<f64> = w.iter().map(|x| x * 3.7).collect();
        let scaled_b: Vec<f64> = b.iter().map(|x| x * 3.7).collect();
        let mask: BTreeSet<usize> = [0, 3, 4, 8].into_iter().collect();
        let cfg = ContrastiveConfig { num_distractors: 3, temperature: 0.1 };
        let a =
            contrastive_loss(&latents, &contexts, t_lat, &mask, view(&w, &b, &w, &b, d), &cfg, 13)
                .unwrap();
        let s = contrastive_loss(
            &latents,
            &contexts,
            t_lat,
            &mask,
            view(&scaled_w, &scaled_b, &scaled_w, &scaled_b, d),
            &cfg,
            13,
        )
        .unwrap();
        assert!((a - s).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_is_a_contract_violation() {
        let d = 2;
        let (w, b) = identity_proj(d);
        let mask = BTreeSet::new();
        let cfg = ContrastiveConfig { num_distractors: 2, temperature: 0.1 };
        let err =
            contrastive_loss(&[0.0; 8], &[0.0; 8], 4, &mask, view(&w, &b, &w, &b, d), &cfg, 1);
        assert!(matches!(err, Err(SaptError::Contract(_))));
    }

    /// Central finite differences over latents, contexts and projections.
    #[test]
    fn gradients_match_finite_differences() {
        let d = 3;
        let p = 2;
        let t_lat = 6;
        let mut rng = crate::rng::rng_from_seed(21);
        use rand::Rng;
        let latents: Vec<f64> = (0..t_lat * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let contexts: Vec<f64> = (0..t_lat * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tw: Vec<f64> = (0..p * d).map(|_| rng.gen_range(-0.7..0.7)).collect();
        let tb: Vec<f64> = (0..p).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let cw: Vec<f64> = (0..p * d).map(|_| rng.gen_range(-0.7..0.7)).collect();
        let cb: Vec<f64> = (0..p).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let mask: BTreeSet<usize> = [0, 2, 5].into_iter().collect();
        let cfg = ContrastiveConfig { num_distractors: 2, temperature: 0.15 };
        let seed = 31;

        let eval =
            |lat: &[f64], ctx: &[f64], tw: &[f64], tb: &[f64], cw: &[f64], cb: &[f64]| -> f64 {
                let v = ProjectionView {
                    tproj_w: tw,
                    tproj_b: tb,
                    cproj_w: cw,
                    cproj_b: cb,
                    model_dim: d,
                    proj_dim: p,
                };
                contrastive_loss(lat, ctx, t_lat, &mask, v, &cfg, seed).unwrap()
            };

        let mut dl = vec![0.0; latents.len()];
        let mut dc = vec![0.0; contexts.len()];
        let mut dtw = vec![0.0; tw.len()];
        let mut dtb = vec![0.0; tb.len()];
        let mut dcw = vec![0.0; cw.len()];
        let mut dcb = vec![0.0; cb.len()];
        {
            let mut g = ContrastiveGrads {
                d_latents: &mut dl,
                d_contexts: &mut dc,
                d_tproj_w: &mut dtw,
                d_tproj_b: &mut dtb,
                d_cproj_w: &mut dcw,
                d_cproj_b: &mut dcb,
            };
            let v = ProjectionView {
                tproj_w: &tw,
                tproj_b: &tb,
                cproj_w: &cw,
                cproj_b: &cb,
                model_dim: d,
                proj_dim: p,
            };
            contrastive_loss_with_grads(
                &latents,
                &contexts,
                t_lat,
                &mask,
                v,
                &cfg,
                seed,
                Some(&mut g),
            )
            .unwrap();
        }

        let h = 1e-6;
        let check = |analytic: &[f64], which: usize, base: &dyn Fn(usize, f64) -> f64| {
            for i in 0..analytic.len() {
                let fp = base(i, h);
                let fm = base(i, -h);
                let fd = (fp - fm) / (2.0 * h);
                let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
                assert!(err < 1e-5, "block {which} coord {i}: fd {fd}, analytic {}", analytic[i]);
            }
        };
        check(&dl, 0, &|i, eps| {
            let mut x = latents.clone();
            x[i] += eps;
            eval(&x, &contexts, &tw, &tb, &cw, &cb)
        });
        check(&dc, 1, &|i, eps| {
            let mut x = contexts.clone();
            x[i] += eps;
            eval(&latents, &x, &tw, &tb, &cw, &cb)
        });
        check(&dtw, 2, &|i, eps| {
            let mut x = tw.clone();
            x[i] += eps;
            eval(&latents, &contexts, &x, &tb, &cw, &cb)
        });
        check(&dcw, 3, &|i, eps| {
            let mut x = cw.clone();
            x[i] += eps;
            eval(&latents, &contexts, &tw, &tb, &x, &cb)
        });
        check(&dtb, 4, &|i, eps| {
            let mut x = tb.clone();
            x[i] += eps;
            eval(&latents, &contexts, &tw, &x, &cw, &cb)
        });
        check(&dcb, 5, &|i, eps| {
            let mut x = cb.clone();
            x[i] += eps;
            eval(&latents, &contexts, &tw, &tb, &cw, &x)
        });
    }
}
