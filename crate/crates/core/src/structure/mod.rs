//! Residue-level protein structures: PDB input/output, secondary structure,
//! solvent accessibility, per-residue features and rigid placement.

mod features;
mod pdb;
mod sasa;
mod secondary;
mod transforms;

use std::fmt;

use crate::error::{Error, Result};
pub use crate::geometry::{Coord, RigidTransform};

pub use features::{
    build_features, build_protein_features, read_feature_sidecar, write_feature_sidecar, ResidueFeatures,
    SidecarRecord, FEATURE_DIM,
};
pub use pdb::{parse_pdb, parse_pdb_with, write_pdb, ParseOptions};
pub use sasa::{compute_sasa, element_radius, residue_burial, residue_rsa, residue_sasa, sasa_spheres, SasaParams};
pub use secondary::{assign_secondary_structure, SecondaryStructure};
pub use transforms::{read_transform_table, write_transform_table, DecoyTransform, TRANSFORM_HEADER};

/// The 20 canonical amino acids plus an unknown bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AminoAcid {
    Ala,
    Arg,
    Asn,
    Asp,
    Cys,
    Gln,
    Glu,
    Gly,
    His,
    Ile,
    Leu,
    Lys,
    Met,
    Phe,
    Pro,
    Ser,
    Thr,
    Trp,
    Tyr,
    Val,
    Unk,
}

const THREE: [&str; 20] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET", "PHE", "PRO", "SER",
    "THR", "TRP", "TYR", "VAL",
];
const ONE: [char; 20] = [
    'A', 'R', 'N', 'D', 'C', 'Q', 'E', 'G', 'H', 'I', 'L', 'K', 'M', 'F', 'P', 'S', 'T', 'W', 'Y', 'V',
];

/// Theoretical maximum residue SASA in Å² (Tien et al. 2013), canonical order.
const MAX_SASA: [f64; 20] = [
    129.0, 274.0, 195.0, 193.0, 167.0, 225.0, 223.0, 104.0, 224.0, 197.0, 201.0, 236.0, 224.0, 240.0, 159.0, 155.0,
    172.0, 285.0, 263.0, 174.0,
];

impl AminoAcid {
    pub const CANONICAL: [AminoAcid; 20] = [
        AminoAcid::Ala,
        AminoAcid::Arg,
        AminoAcid::Asn,
        AminoAcid::Asp,
        AminoAcid::Cys,
        AminoAcid::Gln,
        AminoAcid::Glu,
        AminoAcid::Gly,
        AminoAcid::His,
        AminoAcid::Ile,
        AminoAcid::Leu,
        AminoAcid::Lys,
        AminoAcid::Met,
        AminoAcid::Phe,
        AminoAcid::Pro,
        AminoAcid::Ser,
        AminoAcid::Thr,
        AminoAcid::Trp,
        AminoAcid::Tyr,
        AminoAcid::Val,
    ];

    pub fn from_three_letter(code: &str) -> AminoAcid {
        THREE
            .iter()
            .position(|t| t.eq_ignore_ascii_case(code.trim()))
            .map_or(AminoAcid::Unk, |i| Self::CANONICAL[i])
    }

    pub fn from_one_letter(c: char) -> AminoAcid {
        ONE.iter()
            .position(|&o| o == c.to_ascii_uppercase())
            .map_or(AminoAcid::Unk, |i| Self::CANONICAL[i])
    }

    /// Column of the one-hot encoding; `None` for [`AminoAcid::Unk`].
    pub fn index(self) -> Option<usize> {
        (self != AminoAcid::Unk).then_some(self as usize)
    }

    pub fn three_letter(self) -> &'static str {
        self.index().map_or("UNK", |i| THREE[i])
    }

    pub fn one_letter(self) -> char {
        self.index().map_or('X', |i| ONE[i])
    }

    /// Normalisation denominator for relative accessibility. Unknown residues
    /// use the table mean.
    pub fn max_sasa(self) -> f64 {
        match self.index() {
            Some(i) => MAX_SASA[i],
            None => MAX_SASA.iter().sum::<f64>() / 20.0,
        }
    }
}

impl fmt::Display for AminoAcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.three_letter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub serial: u32,
    pub name: String,
    /// Upper-case element symbol; empty when it could not be determined.
    pub element: String,
    pub residue_index: usize,
    pub coords: Coord,
    pub altloc: char,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residue {
    pub aa: AminoAcid,
    /// Residue name as written in the file.
    pub name: String,
    pub seq_num: i32,
    pub icode: char,
    pub ca: Coord,
}

/// One polypeptide chain at residue resolution, with its atoms kept for
/// surface-area calculations.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidueChain {
    pub chain_id: char,
    pub residues: Vec<Residue>,
    pub atoms: Vec<Atom>,
    /// Residues skipped by the parser because they had no Cα.
    pub dropped_residues: usize,
}

impl ResidueChain {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn ca_coords(&self) -> Vec<Coord> {
        self.residues.iter().map(|r| r.ca).collect()
    }

    pub fn sequence(&self) -> String {
        self.residues.iter().map(|r| r.aa.one_letter()).collect()
    }

    /// Rigidly moves every atom and Cα; residue identities are untouched.
    pub fn transformed(&self, t: &RigidTransform) -> ResidueChain {
        let mut out = self.clone();
        for r in &mut out.residues {
            r.ca = t.apply(&r.ca);
        }
        for a in &mut out.atoms {
            a.coords = t.apply(&a.coords);
        }
        out
    }
}

/// One side of a complex: one or more chains treated as a single protein.
/// Residues are indexed by concatenating the chains in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Protein {
    pub chains: Vec<ResidueChain>,
}

impl Protein {
    pub fn new(chains: Vec<ResidueChain>) -> Result<Self> {
        if chains.is_empty() || chains.iter().all(ResidueChain::is_empty) {
            return Err(Error::EmptyStructure);
        }
        Ok(Self { chains })
    }

    /// Picks chains by identifier, in the order given.
    pub fn select(chains: &[ResidueChain], ids: &[char]) -> Result<Self> {
        let picked = ids
            .iter()
            .map(|id| {
                chains
                    .iter()
                    .find(|c| c.chain_id == *id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("chain {id} not found")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(picked)
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(ResidueChain::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn chain_ids(&self) -> Vec<char> {
        self.chains.iter().map(|c| c.chain_id).collect()
    }

    pub fn residues(&self) -> impl Iterator<Item = (char, &Residue)> {
        self.chains
            .iter()
            .flat_map(|c| c.residues.iter().map(move |r| (c.chain_id, r)))
    }

    pub fn ca_coords(&self) -> Vec<Coord> {
        self.chains.iter().flat_map(|c| c.residues.iter().map(|r| r.ca)).collect()
    }

    /// All atoms paired with the protein-wide residue index they belong to.
    pub fn atoms(&self) -> Vec<(usize, &Atom)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for c in &self.chains {
            out.extend(c.atoms.iter().map(|a| (offset + a.residue_index, a)));
            offset += c.len();
        }
        out
    }

    pub fn transformed(&self, t: &RigidTransform) -> Protein {
        Protein {
            chains: self.chains.iter().map(|c| c.transformed(t)).collect(),
        }
    }

    pub fn centroid(&self) -> Coord {
        let ca = self.ca_coords();
        ca.iter().sum::<Coord>() / ca.len() as f64
    }
}
