//! Fixed-column PDB reader and writer (ATOM/HETATM records of the first model).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{AminoAcid, Atom, Coord, Residue, ResidueChain};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    /// Keep HETATM records of common modified amino acids (MSE, SEP, …),
    /// mapped to their parent residue type.
    pub keep_modified_residues: bool,
}

const MODIFIED: [(&str, AminoAcid); 6] = [
    ("MSE", AminoAcid::Met),
    ("SEP", AminoAcid::Ser),
    ("TPO", AminoAcid::Thr),
    ("PTR", AminoAcid::Tyr),
    ("HYP", AminoAcid::Pro),
    ("CSO", AminoAcid::Cys),
];

pub fn parse_pdb(text: &str) -> Result<Vec<ResidueChain>> {
    parse_pdb_with(text, &ParseOptions::default())
}

/// Columns are 1-based inclusive as in the PDB format description.
fn field(line: &str, from: usize, to: usize) -> &str {
    let bytes = line.as_bytes();
    if bytes.len() < from {
        return "";
    }
    let end = to.min(bytes.len());
    line.get(from - 1..end).unwrap_or("")
}

fn char_at(line: &str, col: usize) -> char {
    line.as_bytes().get(col - 1).map_or(' ', |&b| b as char)
}

fn element_of(line: &str, atom_name: &str) -> String {
    let e = field(line, 77, 78).trim();
    if !e.is_empty() {
        return e.to_ascii_uppercase();
    }
    // Columns 13-14 hold the element when the name is right-justified there.
    atom_name
        .trim()
        .chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_default()
}

struct PendingResidue {
    aa: AminoAcid,
    name: String,
    seq_num: i32,
    icode: char,
    atoms: Vec<Atom>,
}

pub fn parse_pdb_with(text: &str, opts: &ParseOptions) -> Result<Vec<ResidueChain>> {
    // chain id -> (first-seen order, residues keyed by (seq, icode))
    let mut chains: Vec<(char, BTreeMap<(i32, char), PendingResidue>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let record = field(line, 1, 6);
        if record.starts_with("ENDMDL") {
            break;
        }
        let is_atom = record == "ATOM  " || record.trim_end() == "ATOM";
        let is_het = record == "HETATM";
        if !is_atom && !is_het {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let res_name = field(line, 18, 20).trim().to_string();
        let aa = if is_het {
            if !opts.keep_modified_residues {
                continue;
            }
            match MODIFIED.iter().find(|(n, _)| *n == res_name) {
                Some((_, aa)) => *aa,
                None => continue,
            }
        } else {
            AminoAcid::from_three_letter(&res_name)
        };
        let altloc = char_at(line, 17);
        if altloc != ' ' && altloc != 'A' {
            continue;
        }
        let coord = |from, to, axis: &str| -> Result<f64> {
            let s = field(line, from, to).trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("malformed {axis} coordinate {s:?}")))
        };
        let coords = Coord::new(coord(31, 38, "x")?, coord(39, 46, "y")?, coord(47, 54, "z")?);
        let seq_str = field(line, 23, 26).trim();
        let seq_num: i32 = seq_str
            .parse()
            .map_err(|_| err(format!("malformed residue number {seq_str:?}")))?;
        let serial = field(line, 7, 11).trim().parse().unwrap_or(0);
        let name = field(line, 13, 16).trim().to_string();
        let element = element_of(line, field(line, 13, 16));
        let chain_id = char_at(line, 22);
        let icode = char_at(line, 27);

        let idx = match chains.iter().position(|(c, _)| *c == chain_id) {
            Some(i) => i,
            None => {
                chains.push((chain_id, BTreeMap::new()));
                chains.len() - 1
            }
        };
        let pending = chains[idx].1.entry((seq_num, icode)).or_insert_with(|| PendingResidue {
            aa,
            name: res_name.clone(),
            seq_num,
            icode,
            atoms: Vec::new(),
        });
        // A second copy of the same atom (e.g. blank and 'A' altlocs) is ignored.
        if pending.atoms.iter().any(|a| a.name == name) {
            continue;
        }
        pending.atoms.push(Atom {
            serial,
            name,
            element,
            residue_index: 0,
            coords,
            altloc,
        });
    }

    let mut out = Vec::new();
    for (chain_id, residues) in chains {
        let mut chain = ResidueChain {
            chain_id,
            residues: Vec::new(),
            atoms: Vec::new(),
            dropped_residues: 0,
        };
        for (_, p) in residues {
            let Some(ca) = p.atoms.iter().find(|a| a.name == "CA").map(|a| a.coords) else {
                chain.dropped_residues += 1;
                continue;
            };
            let index = chain.residues.len();
            chain.residues.push(Residue {
                aa: p.aa,
                name: p.name,
                seq_num: p.seq_num,
                icode: p.icode,
                ca,
            });
            chain.atoms.extend(p.atoms.into_iter().map(|mut a| {
                a.residue_index = index;
                a
            }));
        }
        if chain.dropped_residues > 0 {
            log::warn!(
                "chain {chain_id}: dropped {} residue(s) without a CA atom",
                chain.dropped_residues
            );
        }
        if !chain.residues.is_empty() {
            out.push(chain);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyStructure);
    }
    Ok(out)
}

/// Serialises chains as ATOM records. Chains without atom records (e.g.
/// built from Cα traces) are written as Cα-only.
pub fn write_pdb(chains: &[ResidueChain]) -> String {
    let mut out = String::new();
    let mut serial = 1u32;
    for chain in chains {
        let atoms: Vec<Atom> = if chain.atoms.is_empty() {
            chain
                .residues
                .iter()
                .enumerate()
                .map(|(i, r)| Atom {
                    serial: 0,
                    name: "CA".into(),
                    element: "C".into(),
                    residue_index: i,
                    coords: r.ca,
                    altloc: ' ',
                })
                .collect()
        } else {
            chain.atoms.clone()
        };
        for a in &atoms {
            let r = &chain.residues[a.residue_index];
            // Four-character names start in column 13, shorter ones in 14.
            let name = if a.name.len() >= 4 {
                a.name.clone()
            } else {
                format!(" {:<3}", a.name)
            };
            let _ = writeln!(
                out,
                "ATOM  {:>5} {:<4}{}{:>3} {}{:>4}{}   {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
                serial % 100_000,
                name,
                if a.altloc == 'A' { 'A' } else { ' ' },
                r.name,
                chain.chain_id,
                r.seq_num,
                r.icode,
                a.coords.x,
                a.coords.y,
                a.coords.z,
                1.0,
                0.0,
                a.element
            );
            serial += 1;
        }
        let _ = writeln!(out, "TER");
    }
    out.push_str("END\n");
    out
}
