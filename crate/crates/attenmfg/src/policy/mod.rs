//! The attention policy: parameter layout, the spatial/temporal encoder, and
//! the masked pointer decoder.

pub mod ckpt;
mod decoder;
mod encoder;

pub use ckpt::{load_checkpoint, save_checkpoint, AdamState, Checkpoint, TrainState};
pub use decoder::{decode_sequence, rollout, rollout_features, DecodeMode, DecodedSequence, RolloutResult};
pub use encoder::{encode, feature_scale, input_matrix, EncoderOutput};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};

/// Feature channels fed to the input projection: scaled `chi`, scaled `y`,
/// period position, slot position.
pub const INPUT_CHANNELS: usize = 4;

/// Site-embedding vocabulary: depot plus the largest site count any
/// generator family produces, so one table serves every instance.
pub const SITE_VOCAB: usize = 11;

/// Architecture constants. `hidden` must be divisible by `heads`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyHyper {
    pub n_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub logit_clip: f64,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self { n_layers: 3, hidden: 128, heads: 8, logit_clip: 10.0 }
    }
}

impl PolicyHyper {
    pub fn is_valid(&self) -> bool {
        self.n_layers >= 1
            && self.hidden >= self.heads
            && self.heads >= 1
            && self.hidden % self.heads == 0
            && self.logit_clip > 0.0
    }

    /// Tensor manifest in checkpoint order: `(name, rows, cols)`.
    pub fn tensor_layout(&self) -> Vec<(String, usize, usize)> {
        let d = self.hidden;
        let mut out = vec![
            ("input_w".to_string(), INPUT_CHANNELS, d),
            ("input_b".to_string(), 1, d),
            ("site_embed".to_string(), SITE_VOCAB, d),
        ];
        for l in 0..self.n_layers {
            for part in ["spatial.wq", "spatial.wk", "spatial.wv", "temporal.wq", "temporal.wk", "temporal.wv"] {
                out.push((format!("enc{l}.{part}"), d, d));
            }
            out.push((format!("enc{l}.integrate.wi"), 2 * d, d));
        }
        out.push(("dec.w_cq".to_string(), 2 * d, d));
        out.push(("dec.w_ck".to_string(), d, d));
        out.push(("dec.w_cv".to_string(), d, d));
        out.push(("dec.w_p".to_string(), d, d));
        out
    }
}

// Tensor indices within the canonical layout.
pub(crate) mod layout {
    pub const INPUT_W: usize = 0;
    pub const INPUT_B: usize = 1;
    pub const SITE_EMBED: usize = 2;
    const PER_LAYER: usize = 7;

    pub fn spatial_qkv(layer: usize) -> [usize; 3] {
        let base = 3 + layer * PER_LAYER;
        [base, base + 1, base + 2]
    }

    pub fn temporal_qkv(layer: usize) -> [usize; 3] {
        let base = 3 + layer * PER_LAYER + 3;
        [base, base + 1, base + 2]
    }

    pub fn integrate(layer: usize) -> usize {
        3 + layer * PER_LAYER + 6
    }

    pub fn decoder(n_layers: usize) -> [usize; 4] {
        let base = 3 + n_layers * PER_LAYER;
        [base, base + 1, base + 2, base + 3]
    }

    pub fn n_tensors(n_layers: usize) -> usize {
        3 + n_layers * PER_LAYER + 4
    }
}

/// All learnable weights, stored in the canonical checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub hyper: PolicyHyper,
    tensors: Vec<Array2<f64>>,
}

impl PolicyParams {
    /// Seeded uniform init on `(-1/sqrt(D_h), 1/sqrt(D_h))` for every tensor.
    pub fn init(hyper: PolicyHyper, seed: u64) -> Self {
        assert!(hyper.is_valid(), "invalid hyperparameters: {hyper:?}");
        let bound = 1.0 / (hyper.hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = hyper
            .tensor_layout()
            .into_iter()
            .map(|(_, r, c)| Array2::from_shape_fn((r, c), |_| rng.random_range(-bound..bound)))
            .collect();
        Self { hyper, tensors }
    }

    /// All-zero weights: the policy that scores every choice identically.
    pub fn zeros(hyper: PolicyHyper) -> Self {
        assert!(hyper.is_valid(), "invalid hyperparameters: {hyper:?}");
        let tensors =
            hyper.tensor_layout().into_iter().map(|(_, r, c)| Array2::zeros((r, c))).collect();
        Self { hyper, tensors }
    }

    pub fn from_tensors(hyper: PolicyHyper, tensors: Vec<Array2<f64>>) -> Self {
        let layout = hyper.tensor_layout();
        debug_assert_eq!(layout.len(), layout::n_tensors(hyper.n_layers));
        assert_eq!(tensors.len(), layout.len());
        for ((_, r, c), t) in layout.iter().zip(&tensors) {
            assert_eq!(t.dim(), (*r, *c));
        }
        Self { hyper, tensors }
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.hyper.tensor_layout().into_iter().map(|(n, _, _)| n).collect()
    }

    /// Registers every tensor on a tape, returning the handles the encoder
    /// and decoder read.
    pub fn stage(&self, tape: &mut Tape) -> ParamNodes {
        let ids = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        ParamNodes { hyper: self.hyper, ids }
    }
}

/// Tape handles for one staged copy of the parameters.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub hyper: PolicyHyper,
    ids: Vec<NodeId>,
}

impl ParamNodes {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn input_w(&self) -> NodeId {
        self.ids[layout::INPUT_W]
    }

    pub fn input_b(&self) -> NodeId {
        self.ids[layout::INPUT_B]
    }

    pub fn site_embed(&self) -> NodeId {
        self.ids[layout::SITE_EMBED]
    }

    pub fn spatial_qkv(&self, layer: usize) -> [NodeId; 3] {
        layout::spatial_qkv(layer).map(|i| self.ids[i])
    }

    pub fn temporal_qkv(&self, layer: usize) -> [NodeId; 3] {
        layout::temporal_qkv(layer).map(|i| self.ids[i])
    }

    pub fn integrate(&self, layer: usize) -> NodeId {
        self.ids[layout::integrate(layer)]
    }

    /// `[w_cq, w_ck, w_cv, w_p]`.
    pub fn decoder(&self) -> [NodeId; 4] {
        layout::decoder(self.hyper.n_layers).map(|i| self.ids[i])
    }
}
