//! Canonical flat ordering of all trainable tensors.
//!
//! Order (this is the checkpoint contract, version 1):
//!   feature_encoder.weight (d x F*r), feature_encoder.bias (d),
//!   mask_embedding (d),
//!   for each layer l in 0..L:
//!     ln1.scale, ln1.bias,
//!     attn.wq.weight, attn.wq.bias, attn.wk.weight, attn.wk.bias,
//!     attn.wv.weight, attn.wv.bias, attn.wo.weight, attn.wo.bias,
//!     ln2.scale, ln2.bias,
//!     ffn.w1.weight (ffn x d), ffn.w1.bias, ffn.w2.weight (d x ffn), ffn.w2.bias,
//!   target_projection.weight (proj x d), target_projection.bias,
//!   context_projection.weight, context_projection.bias,
//!   classifier.weight (C x d), classifier.bias.
//!
//! All matrices are row-major out_dim x in_dim.

use super::ArchConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatRef {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MatRef {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.len()]
    }

    pub fn slice_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.offset..self.offset + self.len()]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerOffsets {
    pub ln1_scale: MatRef,
    pub ln1_bias: MatRef,
    pub wq: MatRef,
    pub bq: MatRef,
    pub wk: MatRef,
    pub bk: MatRef,
    pub wv: MatRef,
    pub bv: MatRef,
    pub wo: MatRef,
    pub bo: MatRef,
    pub ln2_scale: MatRef,
    pub ln2_bias: MatRef,
    pub w1: MatRef,
    pub b1: MatRef,
    pub w2: MatRef,
    pub b2: MatRef,
}

#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub fe_w: MatRef,
    pub fe_b: MatRef,
    pub mask_emb: MatRef,
    pub layers: Vec<LayerOffsets>,
    pub tproj_w: MatRef,
    pub tproj_b: MatRef,
    pub cproj_w: MatRef,
    pub cproj_b: MatRef,
    pub cls_w: MatRef,
    pub cls_b: MatRef,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(arch: &ArchConfig) -> Self {
        let d = arch.model_dim;
        let mut off = 0usize;
        let mut mat = |rows: usize, cols: usize| -> MatRef {
            let m = MatRef { offset: off, rows, cols };
            off += rows * cols;
            m
        };

        let fe_w = mat(d, arch.stacked_dim());
        let fe_b = mat(d, 1);
        let mask_emb = mat(d, 1);
        let mut layers = Vec::with_capacity(arch.num_layers);
        for _ in 0..arch.num_layers {
            layers.push(LayerOffsets {
                ln1_scale: mat(d, 1),
                ln1_bias: mat(d, 1),
                wq: mat(d, d),
                bq: mat(d, 1),
                wk: mat(d, d),
                bk: mat(d, 1),
                wv: mat(d, d),
                bv: mat(d, 1),
                wo: mat(d, d),
                bo: mat(d, 1),
                ln2_scale: mat(d, 1),
                ln2_bias: mat(d, 1),
                w1: mat(arch.ffn_dim, d),
                b1: mat(arch.ffn_dim, 1),
                w2: mat(d, arch.ffn_dim),
                b2: mat(d, 1),
            });
        }
        let tproj_w = mat(arch.proj_dim, d);
        let tproj_b = mat(arch.proj_dim, 1);
        let cproj_w = mat(arch.proj_dim, d);
        let cproj_b = mat(arch.proj_dim, 1);
        let cls_w = mat(arch.num_classes, d);
        let cls_b = mat(arch.num_classes, 1);

        ParamLayout {
            fe_w,
            fe_b,
            mask_emb,
            layers,
            tproj_w,
            tproj_b,
            cproj_w,
            cproj_b,
            cls_w,
            cls_b,
            total: off,
        }
    }

    /// Named segments in canonical order.
    pub fn segments(&self) -> Vec<(String, MatRef)> {
        let mut out = vec![
            ("feature_encoder.weight".to_string(), self.fe_w),
            ("feature_encoder.bias".to_string(), self.fe_b),
            ("mask_embedding".to_string(), self.mask_emb),
        ];
        for (l, lo) in self.layers.iter().enumerate() {
            for (suffix, m) in [
                ("ln1.scale", lo.ln1_scale),
                ("ln1.bias", lo.ln1_bias),
                ("attn.wq.weight", lo.wq),
                ("attn.wq.bias", lo.bq),
                ("attn.wk.weight", lo.wk),
                ("attn.wk.bias", lo.bk),
                ("attn.wv.weight", lo.wv),
                ("attn.wv.bias", lo.bv),
                ("attn.wo.weight", lo.wo),
                ("attn.wo.bias", lo.bo),
                ("ln2.scale", lo.ln2_scale),
                ("ln2.bias", lo.ln2_bias),
                ("ffn.w1.weight", lo.w1),
                ("ffn.w1.bias", lo.b1),
                ("ffn.w2.weight", lo.w2),
                ("ffn.w2.bias", lo.b2),
            ] {
                out.push((format!("layer{l}.{suffix}"), m));
            }
        }
        out.push(("target_projection.weight".to_string(), self.tproj_w));
        out.push(("target_projection.bias".to_string(), self.tproj_b));
        out.push(("context_projection.weight".to_string(), self.cproj_w));
        out.push(("context_projection.bias".to_string(), self.cproj_b));
        out.push(("classifier.weight".to_string(), self.cls_w));
        out.push(("classifier.bias".to_string(), self.cls_b));
        out
    }
}

/// Closed-form trainable-parameter count for an architecture.
pub fn param_count(arch: &ArchConfig) -> usize {
    let d = arch.model_dim;
    let per_layer = 2 * d // ln1
        + 4 * (d * d + d) // attention
        + 2 * d // ln2
        + (arch.ffn_dim * d + arch.ffn_dim) // w1
        + (d * arch.ffn_dim + d); // w2
    d * arch.stacked_dim() + d // feature encoder
        + d // mask embedding
        + arch.num_layers * per_layer
        + 2 * (arch.proj_dim * d + arch.proj_dim) // projections
        + arch.num_classes * d + arch.num_classes // classifier
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_tile_the_vector_exactly() {
        let arch = ArchConfig {
            feat_dim: 5,
            frame_stack: 3,
            model_dim: 8,
            num_layers: 3,
            num_heads: 2,
            ffn_dim: 12,
            num_classes: 4,
            proj_dim: 6,
        };
        let layout = ParamLayout::new(&arch);
        let mut expected_off = 0;
        for (_, m) in layout.segments() {
            assert_eq!(m.offset, expected_off);
            expected_off += m.len();
        }
        assert_eq!(expected_off, layout.total);
        assert_eq!(layout.total, param_count(&arch));
    }
}
