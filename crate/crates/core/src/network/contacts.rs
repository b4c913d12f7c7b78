//! Contact selection on the inter-protein distogram and the pair image
//! built around each contact.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Distogram;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Contact {
    /// Receptor residue index.
    pub i: usize,
    /// Ligand residue index.
    pub j: usize,
    /// Cα–Cα distance in Å.
    pub d: f64,
}

/// Up to `K` contacts, ascending by distance, whose receptor and ligand
/// segments are pairwise disjoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
}

impl ContactSet {
    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Contact> {
        self.contacts.iter()
    }
}

/// Greedy closest-first contact selection.
///
/// Candidates are cells with `D[i][j] < cutoff`, visited in ascending
/// `(d, i, j)` order. A candidate is rejected when its receptor or its ligand
/// index lies within `2L` of an accepted contact, i.e. when either segment
/// would overlap. Selection stops after `k` contacts.
pub fn contact_nms(d: &Distogram, half_len: usize, k: usize, cutoff: f64) -> ContactSet {
    let mut candidates: Vec<Contact> = Vec::new();
    for i in 0..d.rows() {
        for (j, &v) in d.row(i).iter().enumerate() {
            if v < cutoff {
                candidates.push(Contact { i, j, d: v });
            }
        }
    }
    candidates.sort_by(|a, b| a.d.total_cmp(&b.d).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
    let window = 2 * half_len;
    let mut accepted: Vec<Contact> = Vec::new();
    for c in candidates {
        if accepted.len() == k {
            break;
        }
        let overlaps = accepted
            .iter()
            .any(|a| a.i.abs_diff(c.i) <= window || a.j.abs_diff(c.j) <= window);
        if !overlaps {
            accepted.push(c);
        }
    }
    ContactSet { contacts: accepted }
}

/// Row indices `center−L ..= center+L`; positions past either terminus are `None`.
pub(crate) fn segment_rows(center: usize, half_len: usize, n: usize) -> impl Iterator<Item = Option<usize>> {
    (0..=2 * half_len).map(move |o| {
        let pos = (center + o).checked_sub(half_len)?;
        (pos < n).then_some(pos)
    })
}

/// The `(2L+1) × d` window of embedding rows around `center`, zero-padded at
/// the chain termini.
pub fn extract_segment<T: Scalar>(embeddings: &Tensor<T>, center: usize, half_len: usize) -> Result<Tensor<T>> {
    if embeddings.rank() != 2 || center >= embeddings.shape()[0] {
        return Err(Error::contract(format!(
            "extract_segment: centre {center} outside embeddings of shape {:?}",
            embeddings.shape()
        )));
    }
    let (n, d) = (embeddings.shape()[0], embeddings.shape()[1]);
    let mut data = Vec::with_capacity((2 * half_len + 1) * d);
    for row in segment_rows(center, half_len, n) {
        match row {
            Some(r) => data.extend_from_slice(embeddings.row(r)),
            None => data.extend(std::iter::repeat_n(T::zero(), d)),
        }
    }
    Tensor::new(vec![2 * half_len + 1, d], data)
}

/// Pair image `E[s][t] = [seg_r[s] ; seg_l[t]]`, shape `S × T × 2d`.
pub fn build_interaction_descriptor<T: Scalar>(seg_r: &Tensor<T>, seg_l: &Tensor<T>) -> Result<Tensor<T>> {
    if seg_r.rank() != 2 || seg_l.rank() != 2 || seg_r.shape()[1] != seg_l.shape()[1] {
        return Err(Error::contract(format!(
            "interaction descriptor: segments of shape {:?} and {:?}",
            seg_r.shape(),
            seg_l.shape()
        )));
    }
    let (s, t, d) = (seg_r.shape()[0], seg_l.shape()[0], seg_r.shape()[1]);
    let mut data = Vec::with_capacity(s * t * 2 * d);
    for a in 0..s {
        for b in 0..t {
            data.extend_from_slice(seg_r.row(a));
            data.extend_from_slice(seg_l.row(b));
        }
    }
    Tensor::new(vec![s, t, 2 * d], data)
}
