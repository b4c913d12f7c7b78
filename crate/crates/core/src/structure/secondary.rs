//! Secondary structure from the Cα trace alone.
//!
//! Helix windows require `d(i, i+3) ∈ [5.0, 6.4]` and `d(i, i+4) ∈ [5.7, 7.0]`;
//! four or more consecutive windows mark residues `i..=i+4` as helix. Strand
//! windows require `d(i, i+2) ∈ [6.4, 7.4]` and an extended pseudo-dihedral
//! over `i..=i+3`; three or more consecutive windows mark `i..=i+3` as strand.
//! Only pairwise distances and dihedrals are used, so the assignment is
//! invariant under rigid motion.

use super::{Coord, ResidueChain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SecondaryStructure {
    Helix,
    Strand,
    Coil,
}

impl SecondaryStructure {
    pub fn code(self) -> char {
        match self {
            SecondaryStructure::Helix => 'H',
            SecondaryStructure::Strand => 'E',
            SecondaryStructure::Coil => 'C',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'H' => Some(SecondaryStructure::Helix),
            'E' => Some(SecondaryStructure::Strand),
            'C' => Some(SecondaryStructure::Coil),
            _ => None,
        }
    }

    /// Column offset within the 3-state one-hot block.
    pub fn index(self) -> usize {
        self as usize
    }
}

const HELIX_I3: (f64, f64) = (5.0, 6.4);
const HELIX_I4: (f64, f64) = (5.7, 7.0);
const HELIX_MIN_RUN: usize = 4;
const STRAND_I2: (f64, f64) = (6.4, 7.4);
const STRAND_MIN_RUN: usize = 3;
/// Minimum |pseudo-dihedral| (degrees) for an extended strand window.
const STRAND_MIN_DIHEDRAL: f64 = 120.0;
const MIN_CHAIN: usize = 5;

fn within(d: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&d)
}

/// Dihedral angle in degrees; `None` for collinear input.
fn dihedral(p0: &Coord, p1: &Coord, p2: &Coord, p3: &Coord) -> Option<f64> {
    let b0 = p0 - p1;
    let b1 = p2 - p1;
    let b2 = p3 - p2;
    let n1 = b1.norm();
    if n1 == 0.0 {
        return None;
    }
    let b1n = b1 / n1;
    let v = b0 - b1n * b0.dot(&b1n);
    let w = b2 - b1n * b2.dot(&b1n);
    if v.norm() < 1e-9 || w.norm() < 1e-9 {
        return None;
    }
    let x = v.dot(&w);
    let y = b1n.cross(&v).dot(&w);
    Some(y.atan2(x).to_degrees())
}

fn mark_runs(windows: &[bool], min_run: usize, span: usize, labels: &mut [SecondaryStructure], what: SecondaryStructure) {
    let mut i = 0;
    while i < windows.len() {
        if !windows[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < windows.len() && windows[i] {
            i += 1;
        }
        if i - start >= min_run {
            for w in start..i {
                for l in &mut labels[w..=w + span] {
                    if *l == SecondaryStructure::Coil {
                        *l = what;
                    }
                }
            }
        }
    }
}

pub fn assign_secondary_structure(chain: &ResidueChain) -> Vec<SecondaryStructure> {
    assign_from_trace(&chain.ca_coords())
}

pub(crate) fn assign_from_trace(ca: &[Coord]) -> Vec<SecondaryStructure> {
    let n = ca.len();
    let mut labels = vec![SecondaryStructure::Coil; n];
    if n < MIN_CHAIN {
        return labels;
    }
    let d = |i: usize, j: usize| (ca[i] - ca[j]).norm();

    let helix: Vec<bool> = (0..n - 4)
        .map(|i| within(d(i, i + 3), HELIX_I3) && within(d(i, i + 4), HELIX_I4))
        .collect();
    mark_runs(&helix, HELIX_MIN_RUN, 4, &mut labels, SecondaryStructure::Helix);

    let strand: Vec<bool> = (0..n - 3)
        .map(|i| {
            within(d(i, i + 2), STRAND_I2)
                && dihedral(&ca[i], &ca[i + 1], &ca[i + 2], &ca[i + 3])
                    .is_some_and(|t| t.abs() >= STRAND_MIN_DIHEDRAL)
        })
        .collect();
    mark_runs(&strand, STRAND_MIN_RUN, 3, &mut labels, SecondaryStructure::Strand);
    labels
}
