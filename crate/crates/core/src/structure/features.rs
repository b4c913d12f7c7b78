//! Per-residue input features: one-hot amino acid (20), one-hot secondary
//! structure (helix/strand/coil) and relative solvent accessibility.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::sasa::residue_sasa;
use super::secondary::assign_from_trace;
use super::{AminoAcid, Protein, ResidueChain, SasaParams, SecondaryStructure};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_DIM: usize = 24;
const SS_OFFSET: usize = 20;
const RSA_COLUMN: usize = 23;

/// `n_residues × 24` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidueFeatures {
    pub matrix: Tensor<f64>,
}

impl ResidueFeatures {
    pub fn from_parts(aa: &[AminoAcid], ss: &[SecondaryStructure], rsa: &[f64]) -> Result<Self> {
        if aa.len() != ss.len() || aa.len() != rsa.len() {
            return Err(Error::contract("feature parts differ in length"));
        }
        let mut data = vec![0.0; aa.len() * FEATURE_DIM];
        for (i, ((a, s), r)) in aa.iter().zip(ss).zip(rsa).enumerate() {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::Data(format!("RSA {r} outside [0, 1] at residue {i}")));
            }
            let row = &mut data[i * FEATURE_DIM..(i + 1) * FEATURE_DIM];
            if let Some(k) = a.index() {
                row[k] = 1.0;
            }
            row[SS_OFFSET + s.index()] = 1.0;
            row[RSA_COLUMN] = *r;
        }
        Ok(Self {
            matrix: Tensor::new(vec![aa.len(), FEATURE_DIM], data)?,
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rsa(&self, i: usize) -> f64 {
        self.matrix.row(i)[RSA_COLUMN]
    }

    pub fn secondary_structure(&self, i: usize) -> SecondaryStructure {
        let row = self.matrix.row(i);
        [SecondaryStructure::Helix, SecondaryStructure::Strand, SecondaryStructure::Coil]
            .into_iter()
            .find(|s| row[SS_OFFSET + s.index()] == 1.0)
            .unwrap_or(SecondaryStructure::Coil)
    }
}

/// Relative accessibility of every residue of `chains`, measured on all of
/// them together.
fn accessibility(chains: &[&ResidueChain]) -> Result<Vec<f64>> {
    let sasa = residue_sasa(chains, &SasaParams::default())?;
    Ok(chains
        .iter()
        .flat_map(|c| c.residues.iter())
        .zip(sasa)
        .map(|(r, s)| (s / r.aa.max_sasa()).min(1.0))
        .collect())
}

/// Features of a single chain, with accessibility measured on the isolated chain.
pub fn build_features(chain: &ResidueChain) -> Result<ResidueFeatures> {
    if chain.is_empty() {
        return Err(Error::EmptyStructure);
    }
    let ss = assign_from_trace(&chain.ca_coords());
    let rsa = accessibility(&[chain])?;
    let aa: Vec<AminoAcid> = chain.residues.iter().map(|r| r.aa).collect();
    ResidueFeatures::from_parts(&aa, &ss, &rsa)
}

/// Features of a (possibly multi-chain) protein. Secondary structure is
/// assigned per chain; accessibility is measured on the whole protein.
/// When `sidecar` is given, its SS/RSA values replace the computed ones and
/// must cover every residue.
pub fn build_protein_features(protein: &Protein, sidecar: Option<&[SidecarRecord]>) -> Result<ResidueFeatures> {
    let aa: Vec<AminoAcid> = protein.residues().map(|(_, r)| r.aa).collect();
    let (ss, rsa) = match sidecar {
        Some(records) => {
            let index: HashMap<(char, i32, char), &SidecarRecord> =
                records.iter().map(|r| ((r.chain_id, r.seq_num, r.icode), r)).collect();
            let mut ss = Vec::with_capacity(aa.len());
            let mut rsa = Vec::with_capacity(aa.len());
            for (chain, r) in protein.residues() {
                let rec = index.get(&(chain, r.seq_num, r.icode)).ok_or_else(|| {
                    Error::Data(format!(
                        "feature sidecar has no entry for chain {chain} residue {}{}",
                        r.seq_num,
                        r.icode.to_string().trim()
                    ))
                })?;
                ss.push(rec.ss);
                rsa.push(rec.rsa);
            }
            (ss, rsa)
        }
        None => {
            let ss = protein
                .chains
                .iter()
                .flat_map(|c| assign_from_trace(&c.ca_coords()))
                .collect();
            let chains: Vec<&ResidueChain> = protein.chains.iter().collect();
            (ss, accessibility(&chains)?)
        }
    };
    ResidueFeatures::from_parts(&aa, &ss, &rsa)
}

/// One row of the precomputed-feature sidecar TSV
/// (`chain_id seq_num icode ss rsa`; a blank insertion code is written `-`).
#[derive(Clone, Debug, PartialEq)]
pub struct SidecarRecord {
    pub chain_id: char,
    pub seq_num: i32,
    pub icode: char,
    pub ss: SecondaryStructure,
    pub rsa: f64,
}

pub fn read_feature_sidecar(text: &str) -> Result<Vec<SidecarRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') || line.starts_with("chain_id") {
            continue;
        }
        let err = |m: &str| Error::Data(format!("feature sidecar line {}: {m}", lineno + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(err("expected 5 tab-separated columns"));
        }
        let chain_id = cols[0].chars().next().ok_or_else(|| err("empty chain id"))?;
        let seq_num = cols[1].trim().parse().map_err(|_| err("bad seq_num"))?;
        let icode = match cols[2].trim() {
            "" | "-" => ' ',
            s => s.chars().next().unwrap(),
        };
        let ss = cols[3]
            .trim()
            .chars()
            .next()
            .and_then(SecondaryStructure::from_code)
            .ok_or_else(|| err("ss must be H, E or C"))?;
        let rsa: f64 = cols[4].trim().parse().map_err(|_| err("bad rsa"))?;
        if !(0.0..=1.0).contains(&rsa) {
            return Err(err("rsa outside [0, 1]"));
        }
        out.push(SidecarRecord {
            chain_id,
            seq_num,
            icode,
            ss,
            rsa,
        });
    }
    Ok(out)
}

pub fn write_feature_sidecar(protein: &Protein, features: &ResidueFeatures) -> String {
    let mut out = String::from("chain_id\tseq_num\ticode\tss\trsa\n");
    for (i, (chain, r)) in protein.residues().enumerate() {
        let icode = if r.icode == ' ' { '-' } else { r.icode };
        let _ = writeln!(
            out,
            "{chain}\t{}\t{icode}\t{}\t{:.4}",
            r.seq_num,
            features.secondary_structure(i).code(),
            features.rsa(i)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{Atom, Coord, Residue};
    use crate::synth;

    #[test]
    fn alanine_coil_row() {
        let f = ResidueFeatures::from_parts(&[AminoAcid::Ala], &[SecondaryStructure::Coil], &[0.3]).unwrap();
        let row = f.matrix.row(0);
        assert_eq!(row[0], 1.0);
        assert_eq!(row[22], 1.0);
        assert_eq!(row[23], 0.3);
        assert_eq!(row.iter().sum::<f64>(), 2.3);
    }

    #[test]
    fn unknown_residue_has_empty_one_hot() {
        let f = ResidueFeatures::from_parts(&[AminoAcid::Unk], &[SecondaryStructure::Helix], &[0.0]).unwrap();
        assert!(f.matrix.row(0)[..20].iter().all(|&v| v == 0.0));
        assert_eq!(f.matrix.row(0)[20], 1.0);
    }

    #[test]
    fn one_hot_blocks_sum_to_one() {
        let chain = synth::chain_from_trace('A', &synth::helix_trace(15, Coord::zeros()), "ACDEFGHIKLMNPQR");
        let f = build_features(&chain).unwrap();
        assert_eq!(f.matrix.shape(), &[15, FEATURE_DIM]);
        for i in 0..15 {
            let row = f.matrix.row(i);
            assert_eq!(row[..20].iter().sum::<f64>(), 1.0);
            assert_eq!(row[20..23].iter().sum::<f64>(), 1.0);
            assert!((0.0..=1.0).contains(&row[23]));
        }
        assert_eq!(build_features(&chain).unwrap(), f);
    }

    /// Builds an extended Gly-Gly-Gly backbone (N, CA, C, O) with ideal bond
    /// lengths, laid out in a plane.
    fn triglycine() -> ResidueChain {
        let mut atoms = Vec::new();
        let mut residues = Vec::new();
        let step = 3.8;
        for i in 0..3 {
            let x0 = i as f64 * step;
            let flip = if i % 2 == 0 { 1.0 } else { -1.0 };
            let n = Coord::new(x0 - 1.2, 0.6 * flip, 0.0);
            let ca = Coord::new(x0, 0.0, 0.0);
            let c = Coord::new(x0 + 1.3, 0.7 * flip, 0.0);
            let o = Coord::new(x0 + 1.4, 1.9 * flip, 0.0);
            for (name, el, p) in [("N", "N", n), ("CA", "C", ca), ("C", "C", c), ("O", "O", o)] {
                atoms.push(Atom {
                    serial: atoms.len() as u32 + 1,
                    name: name.into(),
                    element: el.into(),
                    residue_index: i,
                    coords: p,
                    altloc: ' ',
                });
            }
            residues.push(Residue {
                aa: AminoAcid::Gly,
                name: "GLY".into(),
                seq_num: i as i32 + 1,
                icode: ' ',
                ca,
            });
        }
        ResidueChain {
            chain_id: 'A',
            residues,
            atoms,
            dropped_residues: 0,
        }
    }

    #[test]
    fn exposed_glycine_rsa_is_high() {
        let chain = triglycine();
        let f = build_features(&chain).unwrap();
        let rsa = f.rsa(1);
        assert!(rsa > 0.5 && rsa <= 1.0, "middle glycine RSA {rsa}");
    }

    #[test]
    fn occluder_never_raises_rsa() {
        let chain = triglycine();
        let before = build_features(&chain).unwrap();
        let mut crowded = chain.clone();
        crowded.atoms.push(Atom {
            serial: 99,
            name: "CA".into(),
            element: "C".into(),
            residue_index: 2,
            coords: Coord::new(3.8, 2.5, 1.5),
            altloc: ' ',
        });
        let after = build_features(&crowded).unwrap();
        for i in 0..2 {
            assert!(after.rsa(i) <= before.rsa(i));
        }
    }

    #[test]
    fn sidecar_round_trip_and_override() {
        let chain = synth::chain_from_trace('B', &synth::helix_trace(8, Coord::zeros()), "AAAAGGGG");
        let protein = Protein::new(vec![chain]).unwrap();
        let f = build_protein_features(&protein, None).unwrap();
        let text = write_feature_sidecar(&protein, &f);
        let mut records = read_feature_sidecar(&text).unwrap();
        assert_eq!(records.len(), 8);
        records[0].ss = SecondaryStructure::Strand;
        records[0].rsa = 0.25;
        let g = build_protein_features(&protein, Some(&records)).unwrap();
        assert_eq!(g.secondary_structure(0), SecondaryStructure::Strand);
        assert_eq!(g.rsa(0), 0.25);
        records.pop();
        assert!(matches!(build_protein_features(&protein, Some(&records)), Err(Error::Data(_))));
    }
}
