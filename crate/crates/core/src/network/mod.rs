//! The scoring network.
//!
//! A distance-aware graph-attention encoder embeds each protein from its own
//! residue features and intra-protein distances. The closest non-overlapping
//! inter-protein contacts are picked by non-maximum suppression, the two
//! embedding segments around each contact are tiled into a pair image and
//! reduced to a contact code by a small CNN, and an order-invariant
//! transformer over `[cls] ++ codes` yields one logit.

mod contacts;
mod model;
#[cfg(test)]
mod model_tests;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure::FEATURE_DIM;

pub use contacts::{build_interaction_descriptor, contact_nms, extract_segment, Contact, ContactSet};
pub(crate) use model::complex_logits;
#[cfg(test)]
pub(crate) use model::contact_codes;
pub use model::{
    distance_aware_attention, encode_contact, encode_protein, interaction_transformer, score_complex, Bound,
    ComponentInput, EncodedComponent, Scorer, ScoreResult, Side,
};
pub use weights::{
    init_weights, load_weights, load_weights_expecting, save_weights, weights_from_bytes, weights_to_bytes, ModelWeights,
    WEIGHTS_VERSION,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_heads: usize,
    /// Residues taken on each side of a contact centre (`L`).
    pub segment_half_len: usize,
    /// Maximum number of contacts per complex (`K`).
    pub max_contacts: usize,
    /// Å; bounds both the intra-protein neighbour graph and contact candidates.
    pub contact_cutoff: f64,
    pub d_contact: usize,
    pub n_tx_layers: usize,
    pub ffn_mult: usize,
    pub d_in: usize,
    /// Output channels of the three convolution blocks.
    pub cnn_channels: [usize; 3],
    pub head_hidden: usize,
    /// One encoder stack for receptor and ligand.
    pub shared_encoder: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_enc_layers: 2,
            n_heads: 4,
            segment_half_len: 10,
            max_contacts: 8,
            contact_cutoff: 16.0,
            d_contact: 128,
            n_tx_layers: 2,
            ffn_mult: 4,
            d_in: FEATURE_DIM,
            cnn_channels: [64, 128, 128],
            head_hidden: 64,
            shared_encoder: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("hyperparameters: {m}")));
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_contact == 0 || self.d_contact % self.n_heads != 0 {
            return bad(format!("d_contact {} not divisible by n_heads {}", self.d_contact, self.n_heads));
        }
        if self.max_contacts == 0 {
            return bad("max_contacts must be at least 1".into());
        }
        if !(self.contact_cutoff > 0.0 && self.contact_cutoff.is_finite()) {
            return bad(format!("contact_cutoff {} must be positive", self.contact_cutoff));
        }
        if self.ffn_mult == 0 || self.d_in == 0 || self.head_hidden == 0 || self.cnn_channels.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Side length of the pair image, `2L + 1`.
    pub fn segment_len(&self) -> usize {
        2 * self.segment_half_len + 1
    }

    /// Encoder-stack name prefix for one side of the complex.
    pub(crate) fn encoder_prefix(&self, side: Side) -> &'static str {
        match (self.shared_encoder, side) {
            (true, _) => "enc",
            (false, Side::Receptor) => "enc_rec",
            (false, Side::Ligand) => "enc_lig",
        }
    }

    /// Every tensor of the model with its shape, in file order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| out.push((name, shape));
        let d = self.d_model;
        let prefixes: &[&str] = if self.shared_encoder { &["enc"] } else { &["enc_rec", "enc_lig"] };
        for p in prefixes {
            push(format!("{p}.input.w"), vec![self.d_in, d]);
            push(format!("{p}.input.b"), vec![d]);
            for l in 0..self.n_enc_layers {
                block_layout(&mut push, &format!("{p}.{l}"), d, self.ffn_mult);
            }
        }
        let [c1, c2, c3] = self.cnn_channels;
        for (name, cin, cout) in [("cnn.conv1", 2 * d, c1), ("cnn.conv2", c1, c2), ("cnn.conv3", c2, c3)] {
            push(format!("{name}.w"), vec![3, 3, cin, cout]);
            push(format!("{name}.b"), vec![cout]);
        }
        push("cnn.proj.w".into(), vec![c3, self.d_contact]);
        push("cnn.proj.b".into(), vec![self.d_contact]);
        push("cls".into(), vec![self.d_contact]);
        for l in 0..self.n_tx_layers {
            block_layout(&mut push, &format!("tx.{l}"), self.d_contact, self.ffn_mult);
        }
        push("head.fc1.w".into(), vec![self.d_contact, self.head_hidden]);
        push("head.fc1.b".into(), vec![self.head_hidden]);
        push("head.fc2.w".into(), vec![self.head_hidden, 1]);
        push("head.fc2.b".into(), vec![1]);
        out
    }
}

fn block_layout(push: &mut impl FnMut(String, Vec<usize>), p: &str, d: usize, mult: usize) {
    for m in ["wq", "wk", "wv", "wo"] {
        push(format!("{p}.{m}"), vec![d, d]);
    }
    push(format!("{p}.bo"), vec![d]);
    push(format!("{p}.ln1.g"), vec![d]);
    push(format!("{p}.ln1.b"), vec![d]);
    push(format!("{p}.ffn1.w"), vec![d, mult * d]);
    push(format!("{p}.ffn1.b"), vec![mult * d]);
    push(format!("{p}.ffn2.w"), vec![mult * d, d]);
    push(format!("{p}.ffn2.b"), vec![d]);
    push(format!("{p}.ln2.g"), vec![d]);
    push(format!("{p}.ln2.b"), vec![d]);
}

/// Whether weight decay applies to a tensor: biases and layer-norm
/// parameters are exempt.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".b") || name.ends_with(".bo") || name.ends_with(".g"))
}
