//! Loading cases: base structures, features, decoys and external scores.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::{CaseSpec, DecoySource};
use crate::error::{Error, Result};
use crate::geometry::{kabsch, Coord, RigidTransform};
use crate::network::ComponentInput;
use crate::structure::{parse_pdb, read_feature_sidecar, read_transform_table, Protein};

/// How a decoy places the two components.
#[derive(Clone, Debug)]
pub enum Pose {
    /// The entry's base ligand moved rigidly; the receptor stays put.
    Transform(RigidTransform),
    /// A PDB file with both components, read on demand.
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct Decoy {
    /// Pooled id, unique within the case.
    pub id: String,
    /// Index into [`LoadedCase::entries`].
    pub entry: usize,
    pub pose: Pose,
}

/// One configured entry of a case with its base components.
#[derive(Clone, Debug)]
pub struct Entry {
    pub spec: CaseSpec,
    pub receptor: Protein,
    pub ligand: Protein,
    pub receptor_input: ComponentInput,
    pub ligand_input: ComponentInput,
}

#[derive(Clone, Debug)]
pub struct LoadedCase {
    pub case_id: String,
    pub entries: Vec<Entry>,
    /// Native receptor and ligand, when configured.
    pub native: Option<(Protein, Protein)>,
    pub decoys: Vec<Decoy>,
    /// Raw external scores: column → decoy id → value.
    pub external: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Receptor and ligand chains of a PDB file.
pub fn read_complex(path: &Path, spec: &CaseSpec) -> Result<(Protein, Protein)> {
    let chains = read_chains(path)?;
    let rec = Protein::select(&chains, &spec.receptor_chain_ids()).map_err(|e| in_file(path, e))?;
    let lig = Protein::select(&chains, &spec.ligand_chain_ids()).map_err(|e| in_file(path, e))?;
    Ok((rec, lig))
}

fn read_chains(path: &Path) -> Result<Vec<crate::structure::ResidueChain>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pdb(&text).map_err(|e| in_file(path, e))
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::Config(_) => e,
        other => Error::Data(format!("{}: {other}", path.display())),
    }
}

fn read_component(path: &Path, chains: &[char], features: Option<&Path>) -> Result<(Protein, ComponentInput)> {
    let protein = Protein::select(&read_chains(path)?, chains).map_err(|e| in_file(path, e))?;
    let sidecar = match features {
        Some(f) => {
            let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            Some(read_feature_sidecar(&text).map_err(|e| in_file(f, e))?)
        }
        None => None,
    };
    let input = ComponentInput::from_protein(&protein, sidecar.as_deref()).map_err(|e| in_file(path, e))?;
    Ok((protein, input))
}

/// `decoy_id, score` rows. Blank lines and `#` comments are skipped, and a
/// first row whose score is not a number is taken as a header.
pub fn read_score_table(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let cols: Vec<&str> = line.split(['\t', ',', ' ']).filter(|c| !c.is_empty()).collect();
        if cols.len() != 2 {
            return Err(err(format!("expected 2 columns, found {}", cols.len())));
        }
        let value = cols[1].parse::<f64>();
        if first && value.is_err() {
            first = false;
            continue;
        }
        first = false;
        let v = value
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(format!("malformed score {:?}", cols[1])))?;
        if !seen.insert(cols[0].to_string()) {
            return Err(err(format!("duplicate decoy id {}", cols[0])));
        }
        out.push((cols[0].to_string(), v));
    }
    Ok(out)
}

/// Loads and pools the given cases, in order of first appearance.
pub fn load_cases(specs: &[CaseSpec]) -> Result<Vec<LoadedCase>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&CaseSpec>> = BTreeMap::new();
    for s in specs {
        if !groups.contains_key(&s.case_id) {
            order.push(s.case_id.clone());
        }
        groups.entry(s.case_id.clone()).or_default().push(s);
    }
    order.iter().map(|id| load_case(id, &groups[id])).collect()
}

fn load_case(case_id: &str, specs: &[&CaseSpec]) -> Result<LoadedCase> {
    let natives: Vec<&PathBuf> = specs.iter().filter_map(|s| s.native.as_ref()).collect();
    if natives.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Config(format!("case {case_id}: pooled entries name different natives")));
    }
    let native = match natives.first() {
        Some(p) => Some(read_complex(p, specs[0])?),
        None => None,
    };
    let mut entries = Vec::with_capacity(specs.len());
    let mut decoys: Vec<Decoy> = Vec::new();
    let mut external: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (e, spec) in specs.iter().enumerate() {
        let (receptor, receptor_input) =
            read_component(spec.receptor_path()?, &spec.receptor_chain_ids(), spec.receptor_features.as_deref())?;
        let (ligand, ligand_input) =
            read_component(spec.ligand_path()?, &spec.ligand_chain_ids(), spec.ligand_features.as_deref())?;
        match &spec.decoys {
            DecoySource::Transforms(p) => {
                let text = std::fs::read_to_string(p).map_err(|err| Error::io(p, err))?;
                for d in read_transform_table(&text).map_err(|err| in_file(p, err))? {
                    decoys.push(Decoy {
                        id: spec.decoy_id(&d.model_id),
                        entry: e,
                        pose: Pose::Transform(d.transform),
                    });
                }
            }
            DecoySource::PdbDir(dir) => {
                let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(|err| Error::io(dir, err))?
                    .filter_map(|r| r.ok().map(|d| d.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pdb")))
                    .collect();
                files.sort();
                for f in files {
                    let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    decoys.push(Decoy {
                        id: spec.decoy_id(&stem),
                        entry: e,
                        pose: Pose::File(f),
                    });
                }
            }
        }
        for (col, path) in &spec.external_scores {
            let text = std::fs::read_to_string(path).map_err(|err| Error::io(path, err))?;
            let table = external.entry(col.clone()).or_default();
            for (id, v) in read_score_table(&text).map_err(|err| in_file(path, err))? {
                table.insert(spec.decoy_id(&id), v);
            }
        }
        entries.push(Entry {
            spec: (*spec).clone(),
            receptor,
            ligand,
            receptor_input,
            ligand_input,
        });
    }
    let mut ids: Vec<&str> = decoys.iter().map(|d| d.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("case {case_id}: duplicate decoy id {}", w[0])));
    }
    Ok(LoadedCase {
        case_id: case_id.to_string(),
        entries,
        native,
        decoys,
        external,
    })
}

impl LoadedCase {
    pub fn entry(&self, d: &Decoy) -> &Entry {
        &self.entries[d.entry]
    }

    /// Full receptor and ligand of a decoy.
    pub fn model(&self, d: &Decoy) -> Result<(Protein, Protein)> {
        let e = self.entry(d);
        match &d.pose {
            Pose::Transform(t) => Ok((e.receptor.clone(), e.ligand.transformed(t))),
            Pose::File(p) => {
                let (r, l) = read_complex(p, &e.spec)?;
                if r.len() != e.receptor.len() || l.len() != e.ligand.len() {
                    return Err(Error::Data(format!(
                        "{}: {} receptor and {} ligand residues, base structures have {} and {}",
                        p.display(),
                        r.len(),
                        l.len(),
                        e.receptor.len(),
                        e.ligand.len()
                    )));
                }
                Ok((r, l))
            }
        }
    }

    /// Receptor and ligand Cα of a decoy.
    pub fn model_ca(&self, d: &Decoy) -> Result<(Vec<Coord>, Vec<Coord>)> {
        let e = self.entry(d);
        match &d.pose {
            Pose::Transform(t) => Ok((e.receptor_input.ca.clone(), e.ligand_input.ca.iter().map(|p| t.apply(p)).collect())),
            Pose::File(_) => {
                let (r, l) = self.model(d)?;
                Ok((r.ca_coords(), l.ca_coords()))
            }
        }
    }

    /// The decoy as a rigid motion of the base ligand relative to the base
    /// receptor: explicit models are superposed on the base receptor first.
    pub fn ligand_transform(&self, d: &Decoy) -> Result<RigidTransform> {
        match &d.pose {
            Pose::Transform(t) => Ok(t.clone()),
            Pose::File(p) => {
                let e = self.entry(d);
                let (r, l) = self.model_ca(d)?;
                let onto_base = kabsch(&r, &e.receptor_input.ca)?.transform;
                let lig: Vec<Coord> = l.iter().map(|x| onto_base.apply(x)).collect();
                let fit = kabsch(&e.ligand_input.ca, &lig)?;
                if fit.rmsd > 0.5 {
                    log::warn!("{}: ligand differs from the base ligand by {:.2} Å after fitting", p.display(), fit.rmsd);
                }
                Ok(fit.transform)
            }
        }
    }

    /// External column names, sorted.
    pub fn columns(&self) -> Vec<String> {
        self.external.keys().cloned().collect()
    }

    pub fn native(&self) -> Result<&(Protein, Protein)> {
        self.native
            .as_ref()
            .ok_or_else(|| Error::Config(format!("case {}: no native structure configured", self.case_id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_tables() {
        let t = read_score_table("decoy_id\tscore\n# note\nd1\t-3.5\n\nd2 2e1\nd3,0\n").unwrap();
        assert_eq!(t, vec![("d1".into(), -3.5), ("d2".into(), 20.0), ("d3".into(), 0.0)]);
        assert_eq!(read_score_table("a 1\nb 2\n").unwrap().len(), 2);
        assert!(matches!(read_score_table("a 1\nb x\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_score_table("a 1\na 2\n"), Err(Error::Parse { .. })));
        assert!(matches!(read_score_table("a 1 2\n"), Err(Error::Parse { .. })));
        assert!(matches!(read_score_table("a 1\nb inf\n"), Err(Error::Parse { line: 2, .. })));
    }
}
