//! Shrake–Rupley solvent-accessible surface area.

use std::collections::HashMap;

use super::{AminoAcid, Atom, Coord, ResidueChain};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SasaParams {
    pub probe_radius: f64,
    pub n_points: usize,
}

impl Default for SasaParams {
    fn default() -> Self {
        Self {
            probe_radius: 1.4,
            n_points: 960,
        }
    }
}

impl SasaParams {
    fn validate(&self) -> Result<()> {
        if !(self.probe_radius > 0.0) || self.n_points < 92 {
            return Err(Error::contract(format!(
                "SASA needs probe radius > 0 and at least 92 points, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Van der Waals radius (Å) by element symbol; unknown elements get 1.7.
pub fn element_radius(element: &str) -> f64 {
    match element {
        "C" => 1.7,
        "N" => 1.55,
        "O" => 1.52,
        "S" => 1.8,
        _ => 1.7,
    }
}

/// Golden-spiral points on the unit sphere, fixed in the lab frame.
fn sphere_points(n: usize) -> Vec<Coord> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            Coord::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Uniform grid over sphere centres for neighbour lookup.
struct CellGrid {
    size: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl CellGrid {
    fn new(centers: &[Coord], size: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, c) in centers.iter().enumerate() {
            cells.entry(Self::key(c, size)).or_default().push(i);
        }
        Self { size, cells }
    }

    fn key(c: &Coord, size: f64) -> (i64, i64, i64) {
        (
            (c.x / size).floor() as i64,
            (c.y / size).floor() as i64,
            (c.z / size).floor() as i64,
        )
    }

    fn around(&self, c: &Coord) -> impl Iterator<Item = usize> + '_ {
        let (x, y, z) = Self::key(c, self.size);
        (-1..=1).flat_map(move |dx| {
            (-1..=1).flat_map(move |dy| {
                (-1..=1).flat_map(move |dz| {
                    self.cells
                        .get(&(x + dx, y + dy, z + dz))
                        .into_iter()
                        .flatten()
                        .copied()
                })
            })
        })
    }
}

/// Per-sphere exposed area for spheres of the given van der Waals radii.
/// A surface point counts as exposed when it lies strictly outside every
/// other inflated sphere.
pub fn sasa_spheres(centers: &[Coord], radii: &[f64], params: &SasaParams) -> Result<Vec<f64>> {
    sasa_spheres_with(centers, radii, params, Exec::default())
}

pub(crate) fn sasa_spheres_with(centers: &[Coord], radii: &[f64], params: &SasaParams, exec: Exec) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..centers.len()).collect();
    sasa_spheres_subset(centers, radii, params, &all, exec)
}

/// Exposed area of the spheres listed in `subset` only, with every sphere
/// acting as an occluder. Values equal the corresponding entries of
/// [`sasa_spheres`].
pub(crate) fn sasa_spheres_subset(
    centers: &[Coord],
    radii: &[f64],
    params: &SasaParams,
    subset: &[usize],
    exec: Exec,
) -> Result<Vec<f64>> {
    params.validate()?;
    if centers.len() != radii.len() {
        return Err(Error::contract("sasa: one radius per centre required"));
    }
    if subset.iter().any(|&i| i >= centers.len()) {
        return Err(Error::contract("sasa: subset index out of range"));
    }
    if subset.is_empty() {
        return Ok(Vec::new());
    }
    let w = params.probe_radius;
    let max_r = radii.iter().copied().fold(0.0, f64::max);
    let grid = CellGrid::new(centers, 2.0 * (max_r + w));
    let unit = sphere_points(params.n_points);

    Ok(par::map(exec, subset, |&i| {
        let ri = radii[i] + w;
        let neighbors: Vec<(Coord, f64)> = grid
            .around(&centers[i])
            .filter(|&j| j != i)
            .filter_map(|j| {
                let rj = radii[j] + w;
                let d2 = (centers[j] - centers[i]).norm_squared();
                (d2 < (ri + rj) * (ri + rj)).then_some((centers[j], rj * rj))
            })
            .collect();
        let mut last = 0usize;
        let mut exposed = 0usize;
        for u in &unit {
            let p = centers[i] + u * ri;
            let buried = |(c, r2): &(Coord, f64)| (p - c).norm_squared() <= r2 + 1e-9;
            if !neighbors.is_empty() && buried(&neighbors[last]) {
                continue;
            }
            match neighbors.iter().position(buried) {
                Some(k) => last = k,
                None => exposed += 1,
            }
        }
        4.0 * std::f64::consts::PI * ri * ri * exposed as f64 / unit.len() as f64
    }))
}

/// Per-atom SASA in Å².
pub fn compute_sasa(atoms: &[Atom], params: &SasaParams) -> Result<Vec<f64>> {
    let centers: Vec<Coord> = atoms.iter().map(|a| a.coords).collect();
    let radii: Vec<f64> = atoms.iter().map(|a| element_radius(&a.element)).collect();
    sasa_spheres(&centers, &radii, params)
}

/// Spheres standing in for the residues of `chains`, residues indexed by
/// concatenating the chains. Chains without atom records get one
/// carbon-sized sphere per Cα.
struct ResidueSpheres {
    centers: Vec<Coord>,
    radii: Vec<f64>,
    owners: Vec<usize>,
    n_residues: usize,
}

impl ResidueSpheres {
    fn new(chains: &[&ResidueChain]) -> Self {
        let mut out = ResidueSpheres {
            centers: Vec::new(),
            radii: Vec::new(),
            owners: Vec::new(),
            n_residues: 0,
        };
        for chain in chains {
            let n = out.n_residues;
            if chain.atoms.is_empty() {
                for (i, r) in chain.residues.iter().enumerate() {
                    out.centers.push(r.ca);
                    out.radii.push(element_radius("C"));
                    out.owners.push(n + i);
                }
            } else {
                for a in &chain.atoms {
                    out.centers.push(a.coords);
                    out.radii.push(element_radius(&a.element));
                    out.owners.push(n + a.residue_index);
                }
            }
            out.n_residues += chain.len();
        }
        out
    }

    fn totals(&self, spheres: impl IntoIterator<Item = (usize, f64)>) -> Result<Vec<f64>> {
        let mut totals = vec![0.0; self.n_residues];
        for (k, a) in spheres {
            let r = self.owners[k];
            *totals
                .get_mut(r)
                .ok_or_else(|| Error::contract(format!("residue SASA: residue index {r} out of range")))? += a;
        }
        Ok(totals)
    }
}

/// Absolute SASA per residue (Å²) of `chains` measured together.
pub fn residue_sasa(chains: &[&ResidueChain], params: &SasaParams) -> Result<Vec<f64>> {
    let s = ResidueSpheres::new(chains);
    let sasa = sasa_spheres(&s.centers, &s.radii, params)?;
    s.totals(sasa.into_iter().enumerate())
}

/// SASA each residue of `component` loses (Å², ≥ 0 up to sampling) when
/// `partner` is added. Only spheres within reach of the partner are
/// measured; every other sphere loses nothing by construction.
pub fn residue_burial(component: &[&ResidueChain], partner: &[&ResidueChain], params: &SasaParams) -> Result<Vec<f64>> {
    let comp = ResidueSpheres::new(component);
    let other = ResidueSpheres::new(partner);
    if comp.centers.is_empty() || other.centers.is_empty() {
        return Ok(vec![0.0; comp.n_residues]);
    }
    let w = params.probe_radius;
    let max_r = comp.radii.iter().chain(&other.radii).copied().fold(0.0, f64::max);
    let grid = CellGrid::new(&other.centers, 2.0 * (max_r + w));
    let touching: Vec<usize> = (0..comp.centers.len())
        .filter(|&i| {
            grid.around(&comp.centers[i]).any(|j| {
                let reach = comp.radii[i] + other.radii[j] + 2.0 * w;
                (comp.centers[i] - other.centers[j]).norm_squared() < reach * reach
            })
        })
        .collect();
    let alone = sasa_spheres_subset(&comp.centers, &comp.radii, params, &touching, Exec::default())?;
    let mut centers = comp.centers.clone();
    centers.extend_from_slice(&other.centers);
    let mut radii = comp.radii.clone();
    radii.extend_from_slice(&other.radii);
    let together = sasa_spheres_subset(&centers, &radii, params, &touching, Exec::default())?;
    comp.totals(touching.iter().zip(alone.iter().zip(&together)).map(|(&k, (a, t))| (k, a - t)))
}

/// Relative accessibility per residue: summed atom SASA over the
/// theoretical maximum for the residue type, clamped to 1. `per_atom_sasa`
/// follows `chain.atoms`.
pub fn residue_rsa(chain: &ResidueChain, per_atom_sasa: &[f64]) -> Result<Vec<f64>> {
    let types: Vec<AminoAcid> = chain.residues.iter().map(|r| r.aa).collect();
    let owners: Vec<usize> = chain.atoms.iter().map(|a| a.residue_index).collect();
    rsa_from_atoms(&types, &owners, per_atom_sasa)
}

pub(crate) fn rsa_from_atoms(residue_types: &[AminoAcid], atom_residue: &[usize], atom_sasa: &[f64]) -> Result<Vec<f64>> {
    if atom_residue.len() != atom_sasa.len() {
        return Err(Error::contract("residue_rsa: one residue index per atom required"));
    }
    let mut totals = vec![0.0; residue_types.len()];
    for (&r, &a) in atom_residue.iter().zip(atom_sasa) {
        let slot = totals
            .get_mut(r)
            .ok_or_else(|| Error::contract(format!("residue_rsa: residue index {r} out of range")))?;
        *slot += a;
    }
    Ok(totals
        .iter()
        .zip(residue_types)
        .map(|(&s, aa)| (s / aa.max_sasa()).min(1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    fn carbon(at: Coord) -> Atom {
        Atom {
            serial: 1,
            name: "CA".into(),
            element: "C".into(),
            residue_index: 0,
            coords: at,
            altloc: ' ',
        }
    }

    #[test]
    fn isolated_atom_gets_full_sphere() {
        let full = 4.0 * PI * 3.1f64.powi(2);
        for n in [92, 500, 960] {
            let p = SasaParams { n_points: n, ..Default::default() };
            let a = compute_sasa(&[carbon(Coord::zeros())], &p).unwrap();
            assert!((a[0] - full).abs() < 1e-9);
        }
        assert!((full - 120.76).abs() < 0.01);
    }

    #[test]
    fn disjoint_and_coincident_pairs() {
        let full = 4.0 * PI * 3.1f64.powi(2);
        let p = SasaParams::default();
        let far = compute_sasa(&[carbon(Coord::zeros()), carbon(Coord::new(6.3, 0.0, 0.0))], &p).unwrap();
        assert!(far.iter().all(|a| (a - full).abs() < 1e-9));
        let same = compute_sasa(&[carbon(Coord::zeros()), carbon(Coord::zeros())], &p).unwrap();
        assert_eq!(same, vec![0.0, 0.0]);
    }

    #[test]
    fn empty_input_and_bad_params() {
        assert!(compute_sasa(&[], &SasaParams::default()).unwrap().is_empty());
        let bad = SasaParams { n_points: 10, ..Default::default() };
        assert!(compute_sasa(&[carbon(Coord::zeros())], &bad).is_err());
    }

    #[test]
    fn rotation_changes_area_by_less_than_two_percent() {
        let centers: Vec<Coord> = (0..12)
            .map(|i| Coord::new(1.5 * i as f64, (i as f64 * 0.7).sin() * 2.0, (i % 3) as f64))
            .collect();
        let radii: Vec<f64> = (0..12).map(|i| [1.7, 1.55, 1.52][i % 3]).collect();
        let params = SasaParams::default();
        let base = sasa_spheres(&centers, &radii, &params).unwrap();
        let tol = 0.02 * 4.0 * PI * 3.1f64.powi(2);
        for k in 0..20 {
            let t = RigidTransform::from_euler_zyx(0.31 * k as f64, 0.17 * k as f64 - 1.0, 0.5 + 0.23 * k as f64, Vector3::new(k as f64, -2.0, 5.0));
            let moved: Vec<Coord> = centers.iter().map(|c| t.apply(c)).collect();
            let got = sasa_spheres(&moved, &radii, &params).unwrap();
            for (a, b) in base.iter().zip(&got) {
                assert!((a - b).abs() < tol, "rotation {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rsa_clamps_and_zero() {
        let types = [AminoAcid::Gly, AminoAcid::Ala, AminoAcid::Unk];
        let rsa = rsa_from_atoms(&types, &[0, 1, 2], &[500.0, 0.0, 10.0]).unwrap();
        assert_eq!(rsa[0], 1.0);
        assert_eq!(rsa[1], 0.0);
        assert!((rsa[2] - 10.0 / AminoAcid::Unk.max_sasa()).abs() < 1e-12);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let centers: Vec<Coord> = (0..40).map(|i| Coord::new((i % 7) as f64 * 1.9, (i / 7) as f64 * 2.1, (i % 3) as f64)).collect();
        let radii = vec![1.7; 40];
        let p = SasaParams::default();
        let a = sasa_spheres_with(&centers, &radii, &p, Exec::Sequential).unwrap();
        let b = sasa_spheres_with(&centers, &radii, &p, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
