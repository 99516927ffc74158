//! Span masking over the latent sequence.

use crate::rng::rng_from_seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    /// Probability that a latent index starts a masked span.
    pub mask_prob: f64,
    /// Frames per span, clipped at the sequence end.
    pub span: usize,
    pub seed: u64,
}

/// Each index independently starts a span with probability `mask_prob`; spans
/// cover [t, t+span) clipped at `t_lat`. If nothing was selected and
/// mask_prob > 0, one uniformly chosen span is forced so the loss is defined.
pub fn sample_mask(t_lat: usize, spec: &MaskSpec) -> BTreeSet<usize> {
    assert!(t_lat >= 1, "sample_mask: t_lat must be >= 1");
    assert!((0.0..=1.0).contains(&spec.mask_prob) && spec.span >= 1, "invalid MaskSpec");
    let mut rng = rng_from_seed(spec.seed);
    let mut masked = BTreeSet::new();
    for t in 0..t_lat {
        if rng.gen::<f64>() < spec.mask_prob {
            for u in t..(t + spec.span).min(t_lat) {
                masked.insert(u);
            }
        }
    }
    if masked.is_empty() && spec.mask_prob > 0.0 {
        let start = rng.gen_range(0..t_lat);
        for u in start..(start + spec.span).min(t_lat) {
            masked.insert(u);
        }
    }
    masked
}
