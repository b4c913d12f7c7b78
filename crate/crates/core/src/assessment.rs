//! Docking-model quality: CAPRI classes from ligand and interface RMSD,
//! SASA-based epitope metrics, and success and hit rates over ranked lists.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interface_residues_by_distance, kabsch, rmsd, Coord};
use crate::structure::{residue_burial, Protein, ResidueChain, SasaParams};

/// Cα–Cα distance defining native interface residues, Å.
pub const INTERFACE_CUTOFF: f64 = 10.0;
/// Area a residue must lose in the complex to count as interface, Å².
pub const BURIAL_TOLERANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CapriClass {
    Incorrect,
    Acceptable,
    Medium,
    High,
}

impl CapriClass {
    /// Acceptable or better.
    pub fn is_hit(self) -> bool {
        self >= CapriClass::Acceptable
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CapriClass::Incorrect => "incorrect",
            CapriClass::Acceptable => "acceptable",
            CapriClass::Medium => "medium",
            CapriClass::High => "high",
        }
    }
}

impl fmt::Display for CapriClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CapriClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "incorrect" => Ok(CapriClass::Incorrect),
            "acceptable" => Ok(CapriClass::Acceptable),
            "medium" => Ok(CapriClass::Medium),
            "high" => Ok(CapriClass::High),
            _ => Err(Error::Data(format!("unknown CAPRI class `{s}`"))),
        }
    }
}

/// Each tier is reached when either RMSD is under its threshold.
pub fn capri_classify(lrmsd: f64, irmsd: f64) -> CapriClass {
    if lrmsd < 1.0 || irmsd < 1.0 {
        CapriClass::High
    } else if lrmsd < 5.0 || irmsd < 2.0 {
        CapriClass::Medium
    } else if lrmsd < 10.0 || irmsd < 4.0 {
        CapriClass::Acceptable
    } else {
        CapriClass::Incorrect
    }
}

fn same_length(what: &str, model: &[Coord], native: &[Coord]) -> Result<()> {
    if model.len() != native.len() {
        return Err(Error::contract(format!(
            "{what}: model has {} residues, native {}",
            model.len(),
            native.len()
        )));
    }
    Ok(())
}

/// Ligand Cα RMSD after superposing the model receptor on the native one.
pub fn ligand_rmsd(model_rec: &[Coord], model_lig: &[Coord], native_rec: &[Coord], native_lig: &[Coord]) -> Result<f64> {
    same_length("ligand_rmsd receptor", model_rec, native_rec)?;
    same_length("ligand_rmsd ligand", model_lig, native_lig)?;
    let fit = kabsch(model_rec, native_rec)?;
    let moved: Vec<Coord> = model_lig.iter().map(|p| fit.transform.apply(p)).collect();
    rmsd(&moved, native_lig)
}

/// Residues within [`INTERFACE_CUTOFF`] of the partner in the native complex.
#[derive(Clone, Debug, PartialEq)]
pub struct NativeInterface {
    pub receptor: Vec<usize>,
    pub ligand: Vec<usize>,
}

impl NativeInterface {
    pub fn new(native_rec: &[Coord], native_lig: &[Coord]) -> Result<Self> {
        let (receptor, ligand) = interface_residues_by_distance(native_rec, native_lig, INTERFACE_CUTOFF);
        if receptor.is_empty() {
            return Err(Error::UndefinedInterface(format!(
                "no receptor/ligand Cα pair closer than {INTERFACE_CUTOFF} Å in the native complex"
            )));
        }
        Ok(Self { receptor, ligand })
    }

    fn gather(&self, rec: &[Coord], lig: &[Coord]) -> Vec<Coord> {
        self.receptor
            .iter()
            .map(|&i| rec[i])
            .chain(self.ligand.iter().map(|&j| lig[j]))
            .collect()
    }

    /// Cα RMSD over the interface residues after superposing them.
    pub fn rmsd(&self, model_rec: &[Coord], model_lig: &[Coord], native_rec: &[Coord], native_lig: &[Coord]) -> Result<f64> {
        same_length("interface_rmsd receptor", model_rec, native_rec)?;
        same_length("interface_rmsd ligand", model_lig, native_lig)?;
        let m = self.gather(model_rec, model_lig);
        let n = self.gather(native_rec, native_lig);
        Ok(kabsch(&m, &n)?.rmsd)
    }
}

/// Interface Cα RMSD with the interface taken from the native complex.
pub fn interface_rmsd(model_rec: &[Coord], model_lig: &[Coord], native_rec: &[Coord], native_lig: &[Coord]) -> Result<f64> {
    NativeInterface::new(native_rec, native_lig)?.rmsd(model_rec, model_lig, native_rec, native_lig)
}

/// Residues of `component` whose SASA is lower once `partner` is present,
/// by more than `tau` Å².
pub fn sasa_interface(component: &Protein, partner: &Protein, tau: f64) -> Result<Vec<usize>> {
    let comp: Vec<&ResidueChain> = component.chains.iter().collect();
    let part: Vec<&ResidueChain> = partner.chains.iter().collect();
    let lost = residue_burial(&comp, &part, &SasaParams::default())?;
    Ok(lost.iter().enumerate().filter_map(|(r, &a)| (a > tau).then_some(r)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpitopeMetrics {
    pub recall: f64,
    pub precision: f64,
    /// Both recall and precision at least 0.5.
    pub correct: bool,
}

/// Overlap of a predicted interface with the native one, both given as
/// residue indices of the same protein.
pub fn epitope_metrics(model: &[usize], native: &[usize]) -> Result<EpitopeMetrics> {
    let dedup = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (model, native) = (dedup(model), dedup(native));
    if native.is_empty() {
        return Err(Error::UndefinedInterface("native epitope is empty".into()));
    }
    let common = model.iter().filter(|r| native.binary_search(r).is_ok()).count() as f64;
    let recall = common / native.len() as f64;
    let precision = if model.is_empty() { 0.0 } else { common / model.len() as f64 };
    Ok(EpitopeMetrics {
        recall,
        precision,
        correct: recall >= 0.5 && precision >= 0.5,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecoyAssessment {
    pub lrmsd: f64,
    pub irmsd: f64,
    pub capri: CapriClass,
    pub epitope_recall: f64,
    pub epitope_precision: f64,
}

/// A native complex prepared for assessing many models of it.
pub struct Assessor {
    native_rec: Vec<Coord>,
    native_lig: Vec<Coord>,
    interface: NativeInterface,
    epitope: Vec<usize>,
}

impl Assessor {
    pub fn new(native_rec: &Protein, native_lig: &Protein) -> Result<Self> {
        let native_rec_ca = native_rec.ca_coords();
        let native_lig_ca = native_lig.ca_coords();
        let interface = NativeInterface::new(&native_rec_ca, &native_lig_ca)?;
        let epitope = sasa_interface(native_rec, native_lig, BURIAL_TOLERANCE)?;
        if epitope.is_empty() {
            return Err(Error::UndefinedInterface("no receptor residue is buried by the native ligand".into()));
        }
        Ok(Self {
            native_rec: native_rec_ca,
            native_lig: native_lig_ca,
            interface,
            epitope,
        })
    }

    pub fn interface(&self) -> &NativeInterface {
        &self.interface
    }

    /// Receptor residues buried by the ligand in the native complex.
    pub fn epitope(&self) -> &[usize] {
        &self.epitope
    }

    /// RMSDs and CAPRI class only.
    pub fn classify(&self, model_rec: &[Coord], model_lig: &[Coord]) -> Result<(f64, f64, CapriClass)> {
        let l = ligand_rmsd(model_rec, model_lig, &self.native_rec, &self.native_lig)?;
        let i = self.interface.rmsd(model_rec, model_lig, &self.native_rec, &self.native_lig)?;
        Ok((l, i, capri_classify(l, i)))
    }

    pub fn assess(&self, model_rec: &Protein, model_lig: &Protein) -> Result<DecoyAssessment> {
        let (lrmsd, irmsd, capri) = self.classify(&model_rec.ca_coords(), &model_lig.ca_coords())?;
        let predicted = sasa_interface(model_rec, model_lig, BURIAL_TOLERANCE)?;
        let epi = epitope_metrics(&predicted, &self.epitope)?;
        Ok(DecoyAssessment {
            lrmsd,
            irmsd,
            capri,
            epitope_recall: epi.recall,
            epitope_precision: epi.precision,
        })
    }
}

/// Order of `scores` from best to worst: higher score first, ties by id
/// ascending. NaN ranks last.
pub fn ranking<S: AsRef<str>>(ids: &[S], scores: &[f64]) -> Vec<usize> {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        key(scores[b])
            .total_cmp(&key(scores[a]))
            .then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    order
}

/// Hits among the first `n` entries of a ranked list.
pub fn hit_rate(ranked: &[CapriClass], n: usize) -> usize {
    ranked.iter().take(n).filter(|c| c.is_hit()).count()
}

/// Fraction of cases with at least one hit in their top `n`.
pub fn success_rate<C: AsRef<[CapriClass]>>(cases: &[C], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("success_rate: N must be at least 1"));
    }
    if cases.is_empty() {
        return Err(Error::Data("success rate over zero cases".into()));
    }
    let hits = cases.iter().filter(|c| hit_rate(c.as_ref(), n) > 0).count();
    Ok(hits as f64 / cases.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::structure::{residue_sasa, Atom};
    use crate::synth;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn capri_anchor_cases() {
        assert_eq!(capri_classify(3.0, 5.0), CapriClass::Medium);
        assert_eq!(capri_classify(12.0, 3.5), CapriClass::Acceptable);
        assert_eq!(capri_classify(12.0, 6.0), CapriClass::Incorrect);
        assert_eq!(capri_classify(0.5, 30.0), CapriClass::High);
        assert_eq!(capri_classify(4.0, 20.0), CapriClass::Medium);
        assert_eq!(capri_classify(10.0, 4.0), CapriClass::Incorrect);
        assert_eq!(capri_classify(9.999, 4.0), CapriClass::Acceptable);
    }

    proptest! {
        #[test]
        fn capri_is_monotone(l in 0.0f64..30.0, i in 0.0f64..30.0, dl in 0.0f64..10.0, di in 0.0f64..10.0) {
            let c = capri_classify(l, i);
            prop_assert!(capri_classify((l - dl).max(0.0), i) >= c);
            prop_assert!(capri_classify(l, (i - di).max(0.0)) >= c);
        }
    }

    #[test]
    fn class_names_round_trip() {
        for c in [CapriClass::Incorrect, CapriClass::Acceptable, CapriClass::Medium, CapriClass::High] {
            assert_eq!(c.as_str().parse::<CapriClass>().unwrap(), c);
        }
        assert!("great".parse::<CapriClass>().is_err());
    }

    fn native(seed: u64) -> (Vec<Coord>, Vec<Coord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = synth::globule(40, 10.0, Coord::zeros(), &mut rng);
        let lig = synth::globule(20, 8.0, Coord::new(14.0, 0.0, 0.0), &mut rng);
        (rec, lig)
    }

    fn moved(p: &[Coord], t: &RigidTransform) -> Vec<Coord> {
        p.iter().map(|x| t.apply(x)).collect()
    }

    #[test]
    fn rmsds_of_native_and_shifted_ligand() {
        let (r, l) = native(1);
        assert!(ligand_rmsd(&r, &l, &r, &l).unwrap() < 1e-9);
        assert!(interface_rmsd(&r, &l, &r, &l).unwrap() < 1e-9);
        let shift = RigidTransform::translation(Coord::new(0.0, 7.0, 0.0));
        assert!((ligand_rmsd(&r, &moved(&l, &shift), &r, &l).unwrap() - 7.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let away = RigidTransform::translation(Coord::new(100.0, 0.0, 0.0));
        let far = moved(&l, &away);
        assert!(interface_rmsd(&r, &far, &r, &l).unwrap() > 10.0);
        for _ in 0..20 {
            let t = synth::random_rigid_transform(&mut rng, 50.0);
            let (mr, ml) = (moved(&r, &t), moved(&far, &t));
            assert!((ligand_rmsd(&mr, &ml, &r, &l).unwrap() - 100.0).abs() < 1e-9);
            let base = interface_rmsd(&r, &far, &r, &l).unwrap();
            assert!((interface_rmsd(&mr, &ml, &r, &l).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_and_undefined_inputs() {
        let (r, l) = native(3);
        assert!(matches!(ligand_rmsd(&r[..2], &l, &r[..2], &l), Err(Error::Degenerate(2))));
        let far: Vec<Coord> = l.iter().map(|p| p + Coord::new(200.0, 0.0, 0.0)).collect();
        assert!(matches!(interface_rmsd(&r, &far, &r, &far), Err(Error::UndefinedInterface(_))));
        assert!(ligand_rmsd(&r, &l[..5], &r, &l).is_err());
    }

    /// Interface RMSD restated: gather the interface by brute force, then
    /// superpose and measure.
    #[test]
    fn interface_rmsd_matches_direct_restatement() {
        let (r, l) = native(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let t = synth::random_rigid_transform(&mut rng, 3.0);
            let ml = moved(&l, &t);
            let mut m = Vec::new();
            let mut n = Vec::new();
            for (i, p) in r.iter().enumerate() {
                if l.iter().any(|q| (p - q).norm() < 10.0) {
                    m.push(r[i]);
                    n.push(r[i]);
                }
            }
            for (j, q) in l.iter().enumerate() {
                if r.iter().any(|p| (p - q).norm() < 10.0) {
                    m.push(ml[j]);
                    n.push(l[j]);
                }
            }
            let direct = kabsch(&m, &n).unwrap().rmsd;
            assert!((interface_rmsd(&r, &ml, &r, &l).unwrap() - direct).abs() < 1e-12);
        }
    }

    fn helix_chain(id: char, origin: Coord) -> ResidueChain {
        let mut c = synth::chain_from_trace(id, &synth::helix_trace(12, origin), "LKAE");
        c.atoms = c
            .residues
            .iter()
            .enumerate()
            .map(|(i, r)| Atom {
                serial: i as u32 + 1,
                name: "CA".into(),
                element: "C".into(),
                residue_index: i,
                coords: r.ca,
                altloc: ' ',
            })
            .collect();
        c
    }

    #[test]
    fn burial_matches_full_recomputation() {
        let a = helix_chain('A', Coord::zeros());
        let b = helix_chain('B', Coord::new(6.0, 0.0, 0.0));
        let params = SasaParams::default();
        let lost = residue_burial(&[&a], &[&b], &params).unwrap();
        let alone = residue_sasa(&[&a], &params).unwrap();
        let together = residue_sasa(&[&a, &b], &params).unwrap();
        for r in 0..a.len() {
            assert!((lost[r] - (alone[r] - together[r])).abs() < 1e-9);
        }
        let pa = Protein::new(vec![a.clone()]).unwrap();
        let pb = Protein::new(vec![b]).unwrap();
        let iface = sasa_interface(&pa, &pb, BURIAL_TOLERANCE).unwrap();
        assert!(!iface.is_empty());
        for r in 0..a.len() {
            let facing = a.residues[r].ca.x > 0.5;
            if iface.contains(&r) {
                assert!(lost[r] > 0.1);
            }
            if !facing {
                assert!(!iface.contains(&r) || lost[r] > 0.1);
            }
        }
        let far = Protein::new(vec![helix_chain('B', Coord::new(100.0, 0.0, 0.0))]).unwrap();
        assert!(sasa_interface(&pa, &far, BURIAL_TOLERANCE).unwrap().is_empty());
        assert!(sasa_interface(&pa, &far, 0.0).unwrap().is_empty());
    }

    #[test]
    fn epitope_examples() {
        let m = epitope_metrics(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap();
        assert_eq!((m.recall, m.precision, m.correct), (1.0, 1.0, true));
        let m = epitope_metrics(&[1, 2], &[1, 2, 3, 4]).unwrap();
        assert_eq!((m.recall, m.precision, m.correct), (0.5, 1.0, true));
        let m = epitope_metrics(&[5, 6], &[1, 2]).unwrap();
        assert_eq!((m.recall, m.precision, m.correct), (0.0, 0.0, false));
        let m = epitope_metrics(&[], &[1, 2]).unwrap();
        assert_eq!((m.recall, m.precision, m.correct), (0.0, 0.0, false));
        assert!(matches!(epitope_metrics(&[1], &[]), Err(Error::UndefinedInterface(_))));
    }

    proptest! {
        #[test]
        fn epitope_bounds_and_size_identity(
            model in prop::collection::btree_set(0usize..30, 0..12),
            native in prop::collection::btree_set(0usize..30, 1..12),
        ) {
            let model: Vec<usize> = model.into_iter().collect();
            let native: Vec<usize> = native.into_iter().collect();
            let m = epitope_metrics(&model, &native).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.recall) && (0.0..=1.0).contains(&m.precision));
            if model.len() == native.len() {
                prop_assert_eq!(m.recall, m.precision);
            }
        }
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let ids = ["d3", "d1", "d2", "d0"];
        let scores = [0.5, 0.9, 0.5, f64::NAN];
        assert_eq!(ranking(&ids, &scores), vec![1, 2, 0, 3]);
    }

    #[test]
    fn success_and_hit_rate_counting() {
        use CapriClass::*;
        let mut a = vec![Incorrect; 20];
        a[2] = Acceptable;
        let mut b = vec![Incorrect; 20];
        b[11] = Medium;
        let cases = vec![a.clone(), b];
        assert_eq!(success_rate(&cases, 5).unwrap(), 0.5);
        assert_eq!(success_rate(&cases, 20).unwrap(), 1.0);
        assert!(success_rate(&cases, 0).is_err());
        assert!(success_rate::<Vec<CapriClass>>(&[], 1).is_err());
        assert_eq!(hit_rate(&a, 2), 0);
        let mut c = vec![Incorrect; 12];
        c[0] = Acceptable;
        c[3] = Acceptable;
        c[5] = Acceptable;
        c[9] = Medium;
        assert_eq!(hit_rate(&c, 10), 4);
        assert_eq!(hit_rate(&c, usize::MAX), 4);
    }

    proptest! {
        #[test]
        fn rates_are_monotone_and_bounded(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cases: Vec<Vec<CapriClass>> = (0..rng.random_range(1..6))
                .map(|_| (0..rng.random_range(0..30)).map(|_| capri_classify(rng.random_range(0.0..20.0), rng.random_range(0.0..8.0))).collect())
                .collect();
            let mut prev = 0.0;
            for n in 1..35 {
                let s = success_rate(&cases, n).unwrap();
                prop_assert!(s >= prev);
                prev = s;
                for c in &cases {
                    let h = hit_rate(c, n);
                    prop_assert!(h <= n && h <= c.iter().filter(|x| x.is_hit()).count());
                }
            }
        }
    }

    #[test]
    fn assessor_on_native_is_high() {
        let a = Protein::new(vec![helix_chain('A', Coord::zeros())]).unwrap();
        let b = Protein::new(vec![helix_chain('B', Coord::new(6.0, 0.0, 0.0))]).unwrap();
        let assessor = Assessor::new(&a, &b).unwrap();
        let d = assessor.assess(&a, &b).unwrap();
        assert_eq!(d.capri, CapriClass::High);
        assert!(d.lrmsd < 1e-9 && d.irmsd < 1e-9);
        assert_eq!((d.epitope_recall, d.epitope_precision), (1.0, 1.0));
        let away = b.transformed(&RigidTransform::translation(Coord::new(60.0, 0.0, 0.0)));
        let d = assessor.assess(&a, &away).unwrap();
        assert_eq!(d.capri, CapriClass::Incorrect);
        assert_eq!(d.epitope_recall, 0.0);
    }
}
