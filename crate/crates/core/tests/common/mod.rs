//! Helpers shared by the gradient-check and acceptance suites.
#![allow(dead_code)]

use rand::Rng;
use sapt_core::corpus::LoadedUtterance;
use sapt_core::encoder::{loss_and_gradients, ArchConfig, ObjectiveSpec};

pub fn random_arch(rng: &mut impl Rng, num_classes: usize) -> ArchConfig {
    let num_heads = rng.gen_range(1..=2usize);
    let head_dim = rng.gen_range(2..=4usize);
    ArchConfig {
        feat_dim: rng.gen_range(3..=6),
        frame_stack: rng.gen_range(1..=2),
        model_dim: num_heads * head_dim,
        num_layers: rng.gen_range(0..=2),
        num_heads,
        ffn_dim: rng.gen_range(4..=10),
        num_classes,
        proj_dim: rng.gen_range(3..=6),
    }
}

pub fn random_batch(
    rng: &mut impl Rng,
    arch: &ArchConfig,
    n: usize,
    labeled: bool,
) -> Vec<LoadedUtterance> {
    (0..n)
        .map(|i| {
            let t = rng.gen_range(arch.frame_stack.max(4)..=12);
            LoadedUtterance {
                id: format!("u{i}"),
                features: (0..t * arch.feat_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                num_frames: t,
                feat_dim: arch.feat_dim,
                label: labeled.then(|| rng.gen_range(0..arch.num_classes)),
            }
        })
        .collect()
}

/// Max relative error between analytic gradients and central finite
/// differences (h = 1e-5) over up to `coords` randomly sampled coordinates.
pub fn max_fd_error(
    arch: &ArchConfig,
    params: &[f64],
    batch: &[LoadedUtterance],
    spec: &ObjectiveSpec,
    coords: usize,
    rng: &mut impl Rng,
) -> f64 {
    let (_, grads) = loss_and_gradients(params, arch, batch, spec).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let i = rng.gen_range(0..params.len());
        let mut p = params.to_vec();
        p[i] += h;
        let (lp, _) = loss_and_gradients(&p, arch, batch, spec).unwrap();
        p[i] -= 2.0 * h;
        let (lm, _) = loss_and_gradients(&p, arch, batch, spec).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        // The floor keeps finite-difference roundoff on coordinates whose
        // true gradient is ~0 (exact cancellations) from registering as a
        // relative error: central differences carry ~1e-10 absolute noise.
        let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-4);
        worst = worst.max(err);
    }
    worst
}
