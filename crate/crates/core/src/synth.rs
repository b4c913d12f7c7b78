//! Synthetic structures for tests, benchmarks and demos: ideal Cα traces and
//! small receptor/ligand complexes with controllable interfaces.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assessment::NativeInterface;
use crate::geometry::{Coord, RigidTransform};
use crate::network::ComponentInput;
use crate::trainer::{LabeledDecoy, TrainingCase, TrainingSet};
use crate::structure::{AminoAcid, Residue, ResidueChain, ResidueFeatures, SecondaryStructure};

/// Ideal α-helix Cα trace along +z: radius 2.3 Å, 100° and 1.5 Å rise per residue.
pub fn helix_trace(n: usize, origin: Coord) -> Vec<Coord> {
    (0..n)
        .map(|i| {
            let t = (100.0 * i as f64).to_radians();
            origin + Coord::new(2.3 * t.cos(), 2.3 * t.sin(), 1.5 * i as f64)
        })
        .collect()
}

/// Planar zig-zag along +x with 3.8 Å steps and 6.8 Å between `i` and `i+2`.
pub fn strand_trace(n: usize, origin: Coord) -> Vec<Coord> {
    let half = (3.8f64 * 3.8 - 3.4 * 3.4).sqrt() / 2.0;
    (0..n)
        .map(|i| origin + Coord::new(3.4 * i as f64, if i % 2 == 0 { half } else { -half }, 0.0))
        .collect()
}

/// Cα-only chain numbered from 1. `sequence` is one-letter codes and is
/// cycled if shorter than the trace.
pub fn chain_from_trace(chain_id: char, trace: &[Coord], sequence: &str) -> ResidueChain {
    let seq: Vec<char> = if sequence.is_empty() { vec!['A'] } else { sequence.chars().collect() };
    let residues = trace
        .iter()
        .enumerate()
        .map(|(i, &ca)| {
            let aa = AminoAcid::from_one_letter(seq[i % seq.len()]);
            Residue {
                aa,
                name: aa.three_letter().to_string(),
                seq_num: i as i32 + 1,
                icode: ' ',
                ca,
            }
        })
        .collect();
    ResidueChain {
        chain_id,
        residues,
        atoms: Vec::new(),
        dropped_residues: 0,
    }
}

/// Compact random-walk Cα trace: 3.8 Å steps kept inside a sphere of
/// `radius` around `center`.
pub fn globule(n: usize, radius: f64, center: Coord, rng: &mut impl Rng) -> Vec<Coord> {
    let mut out = Vec::with_capacity(n);
    let mut p = center;
    for _ in 0..n {
        out.push(p);
        loop {
            let step = random_unit(rng) * 3.8;
            if (p + step - center).norm() <= radius {
                p += step;
                break;
            }
        }
    }
    out
}

pub fn random_unit(rng: &mut impl Rng) -> Coord {
    loop {
        let v = Coord::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Uniformly random rotation with a translation drawn from `[-t, t]³`.
pub fn random_rigid_transform(rng: &mut impl Rng, t: f64) -> RigidTransform {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ));
    RigidTransform {
        rotation: q.to_rotation_matrix().into_inner(),
        translation: Coord::new(rng.random_range(-t..t), rng.random_range(-t..t), rng.random_range(-t..t)),
    }
}

/// Random amino acids, secondary structure and accessibility.
pub fn random_features(n: usize, rng: &mut impl Rng) -> ResidueFeatures {
    let aa: Vec<AminoAcid> = (0..n).map(|_| AminoAcid::CANONICAL[rng.random_range(0..20)]).collect();
    let states = [SecondaryStructure::Helix, SecondaryStructure::Strand, SecondaryStructure::Coil];
    let ss: Vec<SecondaryStructure> = (0..n).map(|_| states[rng.random_range(0..3)]).collect();
    let rsa: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    ResidueFeatures::from_parts(&aa, &ss, &rsa).expect("consistent parts")
}

/// Random globular component of `n` residues around `center`.
pub fn random_component(n: usize, center: Coord, rng: &mut impl Rng) -> ComponentInput {
    let radius = 3.0 * (n as f64).cbrt() + 2.0;
    let ca = globule(n, radius, center, rng);
    ComponentInput::new(ca, random_features(n, rng)).expect("matching lengths")
}

/// Labelled synthetic training data: per case a compact receptor with a
/// ligand docked against it. Near-native poses (small perturbations of the
/// native) and poses swung round to the far side of the receptor are
/// labelled by assessment against the native, so positives and negatives are
/// geometrically separable by construction.
pub fn micro_corpus(seed: u64, n_cases: usize, pos_per_case: usize, neg_per_case: usize) -> crate::Result<TrainingSet> {
    use std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(n_cases);
    let mut decoys = Vec::new();
    for c in 0..n_cases {
        let receptor = random_component(40, Coord::zeros(), &mut rng);
        let mut ligand = random_component(20, Coord::zeros(), &mut rng);
        dock_along_x(&receptor.ca, &mut ligand.ca, 4.5);
        let interface = NativeInterface::new(&receptor.ca, &ligand.ca)?;
        let case = TrainingCase {
            case_id: format!("case{c:02}"),
            receptor,
            ligand,
        };
        let centroid = case.ligand.ca.iter().sum::<Coord>() / case.ligand.ca.len() as f64;
        let about = |rot: RigidTransform, pivot: Coord| {
            RigidTransform::translation(pivot).compose(&rot.compose(&RigidTransform::translation(-pivot)))
        };
        let near = |rng: &mut ChaCha8Rng| {
            let wobble = RigidTransform::from_euler_zyx(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                Coord::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            );
            about(wobble, centroid)
        };
        let far = |rng: &mut ChaCha8Rng| {
            let swing = RigidTransform::from_euler_zyx(rng.random_range(0.6 * PI..1.4 * PI), 0.0, 0.0, Coord::zeros());
            let wobble =
                RigidTransform::from_euler_zyx(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0, Coord::zeros());
            swing.compose(&about(wobble, centroid))
        };
        let wanted = std::iter::repeat_n(true, pos_per_case).chain(std::iter::repeat_n(false, neg_per_case));
        for (k, hit) in wanted.enumerate() {
            // Redraw until the assessment agrees with the intended label.
            let mut tries = 0;
            let decoy = loop {
                let t = if hit { near(&mut rng) } else { far(&mut rng) };
                let id = format!("{}_{k:03}", case.case_id);
                let d = LabeledDecoy::assess(c, &case, id, t, &case.receptor.ca, &case.ligand.ca, &interface)?;
                tries += 1;
                if d.positive() == hit || tries == 100 {
                    break d;
                }
            };
            decoys.push(decoy);
        }
        cases.push(case);
    }
    TrainingSet::new(cases, decoys)
}

/// Slides `ligand` along x, approaching from +x, until its closest Cα is
/// within about `gap` Å of `receptor`.
pub fn dock_along_x(receptor: &[Coord], ligand: &mut [Coord], gap: f64) {
    let min_dist = |shift: f64| {
        ligand
            .iter()
            .flat_map(|l| receptor.iter().map(move |r| (l + Coord::new(shift, 0.0, 0.0) - r).norm()))
            .fold(f64::INFINITY, f64::min)
    };
    let reach = |pts: &[Coord]| pts.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let mut shift = reach(receptor) + reach(ligand) + gap + 1.0;
    while min_dist(shift - 0.1) >= gap {
        shift -= 0.1;
    }
    for p in ligand.iter_mut() {
        p.x += shift;
    }
}

/// Shape of an on-disk synthetic case written by [`write_case_fixture`].
#[derive(Clone, Debug)]
pub struct CaseFixture {
    pub case_id: String,
    pub receptor_len: usize,
    pub ligand_len: usize,
    pub decoys: usize,
    /// Share of decoys drawn as small perturbations of the native.
    pub near_fraction: f64,
    /// Write every decoy as a PDB model instead of a transform table.
    pub pdb_models: bool,
    pub seed: u64,
}

impl CaseFixture {
    pub fn new(case_id: impl Into<String>, decoys: usize, seed: u64) -> Self {
        Self {
            case_id: case_id.into(),
            receptor_len: 40,
            ligand_len: 20,
            decoys,
            near_fraction: 0.3,
            pdb_models: false,
            seed,
        }
    }
}

/// Writes a Cα-only native complex (receptor chain A, ligand chain H), its
/// decoys and an external score column `ext` (higher is better, loosely
/// tracking closeness to the native) under `dir`, and returns the case
/// entry describing them. The first decoy is the native pose itself.
pub fn write_case_fixture(dir: &std::path::Path, f: &CaseFixture) -> crate::Result<crate::pipeline::CaseSpec> {
    use crate::error::Error;
    use crate::pipeline::{CaseSpec, DecoySource};
    use crate::structure::{write_pdb, write_transform_table, DecoyTransform};
    use std::f64::consts::PI;

    let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
    let radius = |n: usize| 3.0 * (n as f64).cbrt() + 2.0;
    let rec = globule(f.receptor_len, radius(f.receptor_len), Coord::zeros(), &mut rng);
    let mut lig = globule(f.ligand_len, radius(f.ligand_len), Coord::zeros(), &mut rng);
    dock_along_x(&rec, &mut lig, 4.5);
    let seq = |n: usize, rng: &mut ChaCha8Rng| -> String {
        (0..n).map(|_| AminoAcid::CANONICAL[rng.random_range(0..20)].one_letter()).collect()
    };
    let rec_chain = chain_from_trace('A', &rec, &seq(rec.len(), &mut rng));
    let lig_chain = chain_from_trace('H', &lig, &seq(lig.len(), &mut rng));
    let centroid = lig.iter().sum::<Coord>() / lig.len() as f64;

    let mut decoys = Vec::with_capacity(f.decoys);
    let mut ext = String::from("decoy_id\text\n");
    for k in 0..f.decoys {
        let t = if k == 0 {
            RigidTransform::identity()
        } else if rng.random_range(0.0..1.0) < f.near_fraction {
            let w = RigidTransform::from_euler_zyx(
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
                Coord::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)),
            );
            RigidTransform::translation(centroid).compose(&w.compose(&RigidTransform::translation(-centroid)))
        } else {
            let swing = RigidTransform::from_euler_zyx(
                rng.random_range(0.3 * PI..1.7 * PI),
                rng.random_range(-0.5..0.5),
                0.0,
                Coord::zeros(),
            );
            let spin = RigidTransform::from_euler_zyx(rng.random_range(-PI..PI), 0.0, 0.0, Coord::zeros());
            swing.compose(&RigidTransform::translation(centroid).compose(&spin.compose(&RigidTransform::translation(-centroid))))
        };
        let moved = t.apply(&centroid);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let id = format!("m{k:05}");
        ext.push_str(&format!("{id}\t{}\n", -(moved - centroid).norm() + 3.0 * noise));
        decoys.push(DecoyTransform { model_id: id, transform: t });
    }

    let io = |p: &std::path::Path, text: &str| std::fs::write(p, text).map_err(|e| Error::io(p, e));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let native = dir.join(format!("{}_native.pdb", f.case_id));
    io(&native, &write_pdb(&[rec_chain.clone(), lig_chain.clone()]))?;
    let scores = dir.join(format!("{}_ext.tsv", f.case_id));
    io(&scores, &ext)?;
    let source = if f.pdb_models {
        let models = dir.join(format!("{}_models", f.case_id));
        std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        for d in &decoys {
            let text = write_pdb(&[rec_chain.clone(), lig_chain.transformed(&d.transform)]);
            io(&models.join(format!("{}.pdb", d.model_id)), &text)?;
        }
        DecoySource::PdbDir(models)
    } else {
        let table = dir.join(format!("{}_decoys.tsv", f.case_id));
        io(&table, &write_transform_table(&decoys))?;
        DecoySource::Transforms(table)
    };
    Ok(CaseSpec {
        case_id: f.case_id.clone(),
        variant: None,
        native: Some(native),
        receptor: None,
        ligand: None,
        receptor_chains: "A".into(),
        ligand_chains: "H".into(),
        receptor_features: None,
        ligand_features: None,
        decoys: source,
        external_scores: [("ext".to_string(), scores)].into_iter().collect(),
        split: Default::default(),
    })
}

/// Two parallel strands side by side, 6 Å apart and lightly
/// jittered, long enough for two disjoint contacts at segment half-length
/// `half_len`. The set holds the native pose (positive) and the ligand moved
/// far away (negative).
pub fn two_contact_set(half_len: usize, seed: u64) -> crate::Result<TrainingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * (2 * half_len + 1) + 4;
    let jitter = |trace: Vec<Coord>, rng: &mut ChaCha8Rng| -> Vec<Coord> {
        trace
            .into_iter()
            .map(|p| p + Coord::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
            .collect()
    };
    let rec = jitter(strand_trace(n, Coord::zeros()), &mut rng);
    let lig = jitter(strand_trace(n, Coord::new(0.0, 0.0, 6.0)), &mut rng);
    let case = TrainingCase {
        case_id: "two_contact".into(),
        receptor: ComponentInput::new(rec, random_features(n, &mut rng))?,
        ligand: ComponentInput::new(lig, random_features(n, &mut rng))?,
    };
    let decoys = vec![
        LabeledDecoy::from_assessment(0, "native", RigidTransform::identity(), crate::assessment::CapriClass::High),
        LabeledDecoy::from_assessment(
            0,
            "far",
            RigidTransform::translation(Coord::new(0.0, 0.0, 200.0)),
            crate::assessment::CapriClass::Incorrect,
        ),
    ];
    TrainingSet::new(vec![case], decoys)
}
