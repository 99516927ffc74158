//! Self-supervision machinery: span masking, the contrastive loss over
//! masked latents, and supervised cross-entropy.

mod contrastive;
mod mask;
mod xent;

pub use contrastive::{
    contrastive_loss, contrastive_loss_with_grads, ContrastiveConfig, ContrastiveGrads,
    ProjectionView,
};
pub use mask::{sample_mask, MaskSpec};
pub use xent::{cross_entropy, cross_entropy_with_grad};
