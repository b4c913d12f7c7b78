//! Forward passes. Every stage is written once against [`Tape`], so the same
//! code serves f32 inference, f64 training and gradient checks.

use super::contacts::{contact_nms, segment_rows, Contact, ContactSet};
use super::weights::ModelWeights;
use super::HyperParams;
use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, neighbor_graph, Coord, RigidTransform};
use crate::structure::{build_protein_features, Protein, ResidueFeatures, SidecarRecord};
use crate::tensor::{Padding, Scalar, Tape, Tensor, Var};

/// Smallest distance used as an attention divisor; also stands in for `d_ii`.
const MIN_DIVISOR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Receptor,
    Ligand,
}

/// Model parameters recorded on a tape, looked up by tensor name.
pub struct Bound<'w, T: Scalar> {
    weights: &'w ModelWeights<T>,
    vars: Vec<Var>,
}

impl<'w, T: Scalar> Bound<'w, T> {
    pub fn bind(tape: &mut Tape<'w, T>, weights: &'w ModelWeights<T>) -> Self {
        let vars = weights.tensors().iter().map(|t| tape.param(t)).collect();
        Self { weights, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        let i = self
            .weights
            .position(name)
            .unwrap_or_else(|| panic!("no tensor named {name}"));
        self.vars[i]
    }

    /// Variables in weight-layout order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn hyper(&self) -> &'w HyperParams {
        &self.weights.hyper
    }
}

enum Attention<'m> {
    /// `⟨k_i, q_j⟩ / max(d_ij, 1)` over the neighbour graph.
    Distance { inv_dist: Var, mask: &'m [bool] },
    /// `⟨q_i, k_j⟩ / √d_head` over unmasked keys.
    Scaled { mask: &'m [bool] },
}

fn multi_head<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    b: &Bound<'a, T>,
    p: &str,
    x: Var,
    kind: &Attention<'_>,
    mut probs: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let heads = b.hyper().n_heads;
    let d = tape.shape(x)[1];
    let dh = d / heads;
    let q = tape.linear(x, b.var(&format!("{p}.wq")), None)?;
    let k = tape.linear(x, b.var(&format!("{p}.wk")), None)?;
    let v = tape.linear(x, b.var(&format!("{p}.wv")), None)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * dh, dh)?;
        let kh = tape.slice(k, 1, h * dh, dh)?;
        let vh = tape.slice(v, 1, h * dh, dh)?;
        let (logits, mask) = match kind {
            Attention::Distance { inv_dist, mask } => {
                let qt = tape.transpose(qh)?;
                let dots = tape.matmul(kh, qt)?;
                (tape.mul(dots, *inv_dist)?, *mask)
            }
            Attention::Scaled { mask } => {
                let kt = tape.transpose(kh)?;
                let dots = tape.matmul(qh, kt)?;
                (tape.scale(dots, T::of(1.0 / (dh as f64).sqrt())), *mask)
            }
        };
        let w = tape.masked_softmax(logits, 1, Some(mask))?;
        if let Some(p) = probs.as_deref_mut() {
            p.push(w);
        }
        outs.push(tape.matmul(w, vh)?);
    }
    let cat = tape.concat(&outs, 1)?;
    tape.linear(cat, b.var(&format!("{p}.wo")), Some(b.var(&format!("{p}.bo"))))
}

/// Post-norm residual block: `LN(x + attn(x))`, then `LN(h + ffn(h))`.
fn block<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    b: &Bound<'a, T>,
    p: &str,
    x: Var,
    kind: &Attention<'_>,
    probs: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let a = multi_head(tape, b, p, x, kind, probs)?;
    let r = tape.add(x, a)?;
    let h = tape.layer_norm(r, b.var(&format!("{p}.ln1.g")), b.var(&format!("{p}.ln1.b")), 1)?;
    let f = tape.linear(h, b.var(&format!("{p}.ffn1.w")), Some(b.var(&format!("{p}.ffn1.b"))))?;
    let f = tape.gelu(f);
    let f = tape.linear(f, b.var(&format!("{p}.ffn2.w")), Some(b.var(&format!("{p}.ffn2.b"))))?;
    let r = tape.add(h, f)?;
    tape.layer_norm(r, b.var(&format!("{p}.ln2.g")), b.var(&format!("{p}.ln2.b")), 1)
}

/// Inverse clamped distances and the neighbour mask of one protein.
pub(crate) fn graph_inputs<T: Scalar>(ca: &[Coord], cutoff: f64) -> Result<(Tensor<T>, Vec<bool>)> {
    let d = distance_matrix(ca, ca);
    let mask = neighbor_graph(&d, cutoff)?.mask();
    let n = ca.len();
    let inv = Tensor::new(
        vec![n, n],
        d.values().iter().map(|&v| T::of(1.0 / v.max(MIN_DIVISOR))).collect(),
    )?;
    Ok((inv, mask))
}

/// One distance-aware encoder block. `inv_dist` holds `1 / max(d_ij, 1)`
/// and `mask` the neighbour graph (with self-loops), both `n × n`.
pub fn distance_aware_attention<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    b: &Bound<'a, T>,
    layer: &str,
    x: Var,
    inv_dist: Var,
    mask: &[bool],
) -> Result<Var> {
    block(tape, b, layer, x, &Attention::Distance { inv_dist, mask }, None)
}

/// Embeds one protein: input projection, then the encoder blocks.
/// Returns `n × d_model`.
pub fn encode_protein<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    b: &Bound<'a, T>,
    side: Side,
    features: Var,
    ca: &[Coord],
) -> Result<Var> {
    encode_with_probs(tape, b, side, features, ca, None)
}

fn encode_with_probs<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    b: &Bound<'a, T>,
    side: Side,
    features: Var,
    ca: &[Coord],
    mut probs: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let h = b.hyper();
    let fs = tape.shape(features).to_vec();
    if ca.is_empty() || fs != [ca.len(), h.d_in] {
        return Err(Error::contract(format!(
            "encode_protein: features {fs:?} for {} residues (d_in {})",
            ca.len(),
            h.d_in
        )));
    }
    let (inv, mask) = graph_inputs::<T>(ca, h.contact_cutoff)?;
    let inv_dist = tape.constant(inv);
    let p = h.encoder_prefix(side);
    let mut x = tape.linear(features, b.var(&format!("{p}.input.w")), Some(b.var(&format!("{p}.input.b"))))?;
    let kind = Attention::Distance { inv_dist, mask: &mask };
    for l in 0..h.n_enc_layers {
        x = block(tape, b, &format!("{p}.{l}"), x, &kind, probs.as_deref_mut())?;
    }
    Ok(x)
}

/// Pooling halves the map only while it is at least 2×2.
fn maybe_pool<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
    let s = tape.shape(x);
    if s[1] >= 2 && s[2] >= 2 {
        tape.maxpool2d(x)
    } else {
        Ok(x)
    }
}

/// Everything after the first convolution: relu, pool, conv2, relu, pool,
/// conv3, relu, global mean pool, projection to `d_contact`.
fn cnn_tail<'a, T: Scalar>(tape: &mut Tape<'a, T>, b: &Bound<'a, T>, conv1: Var) -> Result<Var> {
    let x = tape.relu(conv1);
    let x = maybe_pool(tape, x)?;
    let x = tape.conv2d(x, b.var("cnn.conv2.w"), Some(b.var("cnn.conv2.b")), Padding::Same)?;
    let x = tape.relu(x);
    let x = maybe_pool(tape, x)?;
    let x = tape.conv2d(x, b.var("cnn.conv3.w"), Some(b.var("cnn.conv3.b")), Padding::Same)?;
    let x = tape.relu(x);
    let x = tape.global_mean_pool(x)?;
    tape.linear(x, b.var("cnn.proj.w"), Some(b.var("cnn.proj.b")))
}

/// Contact codes from explicit pair images `[n, S, T, 2d]` (or one `[S, T, 2d]`).
pub fn encode_contact<'a, T: Scalar>(tape: &mut Tape<'a, T>, b: &Bound<'a, T>, descriptor: Var) -> Result<Var> {
    let s = tape.shape(descriptor).to_vec();
    let x = match s.len() {
        3 => tape.reshape(descriptor, &[1, s[0], s[1], s[2]])?,
        4 => descriptor,
        _ => return Err(Error::contract(format!("encode_contact: descriptor shape {s:?}"))),
    };
    let c1 = tape.conv2d(x, b.var("cnn.conv1.w"), Some(b.var("cnn.conv1.b")), Padding::Same)?;
    cnn_tail(tape, b, c1)
}

/// Contact codes for a batch of complexes without materialising the pair
/// images. Each entry is `(receptor embeddings, ligand embeddings, contacts)`;
/// the result stacks the codes of all contacts in order, `[Σ contacts, d_contact]`.
pub(crate) fn contact_codes<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    b: &Bound<'a, T>,
    complexes: &[(Var, Var, &ContactSet)],
) -> Result<Option<Var>> {
    let h = b.hyper();
    let (hl, seg) = (h.segment_half_len, h.segment_len());
    let mut rec_parts = Vec::new();
    let mut lig_parts = Vec::new();
    let mut total = 0;
    for &(re, le, contacts) in complexes {
        if contacts.is_empty() {
            continue;
        }
        let (nr, nl) = (tape.shape(re)[0], tape.shape(le)[0]);
        let rrows: Vec<Option<usize>> = contacts.iter().flat_map(|c: &Contact| segment_rows(c.i, hl, nr)).collect();
        let lrows: Vec<Option<usize>> = contacts.iter().flat_map(|c: &Contact| segment_rows(c.j, hl, nl)).collect();
        rec_parts.push(tape.gather_rows(re, &rrows)?);
        lig_parts.push(tape.gather_rows(le, &lrows)?);
        total += contacts.len();
    }
    if total == 0 {
        return Ok(None);
    }
    let d = h.d_model;
    let r = tape.concat(&rec_parts, 0)?;
    let r = tape.reshape(r, &[total, seg, d])?;
    let l = tape.concat(&lig_parts, 0)?;
    let l = tape.reshape(l, &[total, seg, d])?;
    let c1 = tape.pair_conv2d(r, l, b.var("cnn.conv1.w"), Some(b.var("cnn.conv1.b")))?;
    Ok(Some(cnn_tail(tape, b, c1)?))
}

/// Order-invariant classifier over `[cls] ++ tokens`. `tokens` is
/// `[rows, d_contact]` of which the first `valid` rows are real contacts and
/// the rest padding; `slots` pads the sequence further with zero rows. Absent
/// slots are masked out as keys. Returns the logit, shape `[1]`.
pub fn interaction_transformer<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    b: &Bound<'a, T>,
    tokens: Var,
    valid: usize,
    slots: usize,
) -> Result<Var> {
    let h = b.hyper();
    let dc = h.d_contact;
    let ts = tape.shape(tokens).to_vec();
    if ts.len() != 2 || ts[1] != dc || valid > ts[0] {
        return Err(Error::contract(format!(
            "interaction_transformer: tokens {ts:?} with {valid} valid (d_contact {dc})"
        )));
    }
    let cls = tape.reshape(b.var("cls"), &[1, dc])?;
    let mut parts = vec![cls, tokens];
    let len = 1 + ts[0];
    if slots > len {
        parts.push(tape.constant(Tensor::zeros(vec![slots - len, dc])));
    }
    let x0 = tape.concat(&parts, 0)?;
    let n = len.max(slots);
    let mask: Vec<bool> = (0..n * n).map(|k| k % n <= valid).collect();
    let kind = Attention::Scaled { mask: &mask };
    let mut x = x0;
    for l in 0..h.n_tx_layers {
        x = block(tape, b, &format!("tx.{l}"), x, &kind, None)?;
    }
    let c = tape.slice(x, 0, 0, 1)?;
    let z = tape.linear(c, b.var("head.fc1.w"), Some(b.var("head.fc1.b")))?;
    let z = tape.relu(z);
    let z = tape.linear(z, b.var("head.fc2.w"), Some(b.var("head.fc2.b")))?;
    tape.reshape(z, &[1])
}

/// Logits for several complexes sharing one tape. Entries without contacts
/// yield `None`.
pub(crate) fn complex_logits<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    b: &Bound<'a, T>,
    complexes: &[(Var, Var, &ContactSet)],
) -> Result<Vec<Option<Var>>> {
    let slots = b.hyper().max_contacts + 1;
    let Some(codes) = contact_codes(tape, b, complexes)? else {
        return Ok(vec![None; complexes.len()]);
    };
    let mut offset = 0;
    let mut out = Vec::with_capacity(complexes.len());
    for (_, _, contacts) in complexes {
        if contacts.is_empty() {
            out.push(None);
            continue;
        }
        let tokens = tape.slice(codes, 0, offset, contacts.len())?;
        offset += contacts.len();
        out.push(Some(interaction_transformer(tape, b, tokens, contacts.len(), slots)?));
    }
    Ok(out)
}

/// One side of a complex as the network sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentInput {
    pub ca: Vec<Coord>,
    pub features: ResidueFeatures,
}

impl ComponentInput {
    pub fn new(ca: Vec<Coord>, features: ResidueFeatures) -> Result<Self> {
        if ca.is_empty() || ca.len() != features.len() {
            return Err(Error::contract(format!(
                "component with {} Cα and {} feature rows",
                ca.len(),
                features.len()
            )));
        }
        Ok(Self { ca, features })
    }

    pub fn from_protein(protein: &Protein, sidecar: Option<&[SidecarRecord]>) -> Result<Self> {
        Self::new(protein.ca_coords(), build_protein_features(protein, sidecar)?)
    }

    /// Rigidly moved coordinates with the same features.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            ca: self.ca.iter().map(|p| t.apply(p)).collect(),
            features: self.features.clone(),
        }
    }
}

/// Encoder output for one component. Embeddings depend only on internal
/// distances, so a rigidly moved copy reuses them.
#[derive(Clone, Debug)]
pub struct EncodedComponent<T: Scalar> {
    pub embeddings: Tensor<T>,
    pub ca: Vec<Coord>,
}

impl<T: Scalar> EncodedComponent<T> {
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            embeddings: self.embeddings.clone(),
            ca: self.ca.iter().map(|p| t.apply(p)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreResult {
    /// Probability that the model is acceptable or better; 0 without contacts.
    pub score: f64,
    pub logit: Option<f64>,
    pub contacts: ContactSet,
}

impl ScoreResult {
    pub fn no_contact(&self) -> bool {
        self.contacts.is_empty()
    }
}

/// Inference at a fixed precision. Immutable and shareable across threads.
#[derive(Clone, Debug)]
pub struct Scorer<T: Scalar> {
    weights: ModelWeights<T>,
}

impl<T: Scalar> Scorer<T> {
    pub fn new(weights: &ModelWeights<f64>) -> Self {
        Self {
            weights: weights.cast(),
        }
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.weights.hyper
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn encode(&self, comp: &ComponentInput, side: Side) -> Result<EncodedComponent<T>> {
        let mut tape = Tape::inference();
        let b = Bound::bind(&mut tape, &self.weights);
        let f = tape.constant(comp.features.matrix.cast());
        let e = encode_protein(&mut tape, &b, side, f, &comp.ca)?;
        Ok(EncodedComponent {
            embeddings: tape.value(e).clone(),
            ca: comp.ca.clone(),
        })
    }

    /// Per-head attention probabilities of every encoder layer, in order.
    pub fn attention_maps(&self, comp: &ComponentInput, side: Side) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::inference();
        let b = Bound::bind(&mut tape, &self.weights);
        let f = tape.constant(comp.features.matrix.cast());
        let mut probs = Vec::new();
        encode_with_probs(&mut tape, &b, side, f, &comp.ca, Some(&mut probs))?;
        Ok(probs.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    pub fn contacts(&self, rec_ca: &[Coord], lig_ca: &[Coord]) -> ContactSet {
        let h = self.hyper();
        let d = distance_matrix(rec_ca, lig_ca);
        contact_nms(&d, h.segment_half_len, h.max_contacts, h.contact_cutoff)
    }

    pub fn score_encoded(&self, rec: &EncodedComponent<T>, lig: &EncodedComponent<T>) -> Result<ScoreResult> {
        let contacts = self.contacts(&rec.ca, &lig.ca);
        if contacts.is_empty() {
            return Ok(ScoreResult {
                score: 0.0,
                logit: None,
                contacts,
            });
        }
        let mut tape = Tape::inference();
        let b = Bound::bind(&mut tape, &self.weights);
        let re = tape.param(&rec.embeddings);
        let le = tape.param(&lig.embeddings);
        let logits = complex_logits(&mut tape, &b, &[(re, le, &contacts)])?;
        let z = tape.value(logits[0].expect("contacts present")).item().as_f64();
        Ok(ScoreResult {
            score: crate::tensor::sigmoid(z),
            logit: Some(z),
            contacts,
        })
    }

    pub fn score(&self, rec: &ComponentInput, lig: &ComponentInput) -> Result<ScoreResult> {
        let r = self.encode(rec, Side::Receptor)?;
        let l = self.encode(lig, Side::Ligand)?;
        self.score_encoded(&r, &l)
    }
}

/// Scores one complex at the requested precision.
pub fn score_complex(
    rec: &ComponentInput,
    lig: &ComponentInput,
    weights: &ModelWeights,
    precision: crate::tensor::Precision,
) -> Result<ScoreResult> {
    match precision {
        crate::tensor::Precision::F32 => Scorer::<f32>::new(weights).score(rec, lig),
        crate::tensor::Precision::F64 => Scorer::<f64>::new(weights).score(rec, lig),
    }
}
