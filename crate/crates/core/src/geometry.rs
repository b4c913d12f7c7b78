//! Distance matrices, neighbour graphs, rigid transforms and superposition.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

/// Cartesian position in Å.
pub type Coord = Vector3<f64>;

/// Dense matrix of Euclidean distances between two point sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Distogram {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Distogram {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::contract(format!(
                "distogram {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::contract("distogram entries must be finite and non-negative"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transposed(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                values[j * self.rows + i] = self.get(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }
}

pub fn distance_matrix(a: &[Coord], b: &[Coord]) -> Distogram {
    let mut values = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            values.push((p - q).norm());
        }
    }
    Distogram {
        rows: a.len(),
        cols: b.len(),
        values,
    }
}

/// Residue contact graph of one protein. Every node carries a self-loop.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    pub cutoff: f64,
    neighbors: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Sorted neighbour indices of `i`, including `i` itself.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Row-major `n × n` adjacency mask.
    pub fn mask(&self) -> Vec<bool> {
        let n = self.neighbors.len();
        let mut m = vec![false; n * n];
        for (i, ns) in self.neighbors.iter().enumerate() {
            for &j in ns {
                m[i * n + j] = true;
            }
        }
        m
    }
}

/// Connects residues closer than `cutoff` (strict).
pub fn neighbor_graph(d: &Distogram, cutoff: f64) -> Result<NeighborGraph> {
    if !d.is_square() {
        return Err(Error::contract(format!(
            "neighbor graph needs a square distogram, got {}x{}",
            d.rows, d.cols
        )));
    }
    let neighbors = (0..d.rows)
        .map(|i| (0..d.cols).filter(|&j| i == j || d.get(i, j) < cutoff).collect())
        .collect();
    Ok(NeighborGraph { cutoff, neighbors })
}

/// Proper rigid motion `x ↦ R·x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality and handedness to 1e-6.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Intrinsic Z-Y-X Euler angles (radians): `R = Rz(a)·Ry(b)·Rx(c)`,
    /// rotating about the lab origin, followed by the translation.
    pub fn from_euler_zyx(a: f64, b: f64, c: f64, translation: Vector3<f64>) -> Self {
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), a);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), b);
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), c);
        Self {
            rotation: (rz * ry * rx).into_inner(),
            translation,
        }
    }

    /// Recovers `(a, b, c)` such that [`Self::from_euler_zyx`] reproduces the rotation.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        let r = &self.rotation;
        let b = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let a = r[(1, 0)].atan2(r[(0, 0)]);
        let c = r[(2, 1)].atan2(r[(2, 2)]);
        (a, b, c)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if ortho > 1e-6 || (det - 1.0).abs() > 1e-6 || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::contract(format!(
                "not a proper rigid transform (|RᵀR − I| = {ortho:.2e}, det = {det:.6})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: &Coord) -> Coord {
        self.rotation * p + self.translation
    }

    /// `self ∘ first`: applying the result equals applying `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Superposition {
    /// Maps the mobile set onto the target.
    pub transform: RigidTransform,
    pub rmsd: f64,
    /// Covariance was rank-deficient (collinear or coincident points); the
    /// rotation is one of many minimisers.
    pub degenerate: bool,
}

/// Least-squares superposition of `mobile` onto `target` (Kabsch).
pub fn kabsch(mobile: &[Coord], target: &[Coord]) -> Result<Superposition> {
    if mobile.len() != target.len() {
        return Err(Error::contract(format!(
            "kabsch: {} mobile vs {} target points",
            mobile.len(),
            target.len()
        )));
    }
    if mobile.len() < 3 {
        return Err(Error::Degenerate(mobile.len()));
    }
    let k = mobile.len() as f64;
    let cm = mobile.iter().sum::<Coord>() / k;
    let ct = target.iter().sum::<Coord>() / k;
    let mut h = Matrix3::zeros();
    for (p, q) in mobile.iter().zip(target) {
        h += (p - cm) * (q - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = ct - rotation * cm;
    let transform = RigidTransform {
        rotation,
        translation,
    };
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let degenerate = sv[0] == 0.0 || sv[1] <= 1e-10 * sv[0];
    let moved: Vec<Coord> = mobile.iter().map(|p| transform.apply(p)).collect();
    let rmsd = rmsd(&moved, target)?;
    Ok(Superposition {
        transform,
        rmsd,
        degenerate,
    })
}

/// Root-mean-square deviation without superposition.
pub fn rmsd(p: &[Coord], q: &[Coord]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::contract(format!(
            "rmsd: point sets of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let ss: f64 = p.iter().zip(q).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((ss / p.len() as f64).sqrt())
}

/// Indices of residues in `rec` and `lig` with a partner across the
/// interface closer than `cutoff` (strict), both sorted ascending.
pub fn interface_residues_by_distance(rec: &[Coord], lig: &[Coord], cutoff: f64) -> (Vec<usize>, Vec<usize>) {
    let c2 = cutoff * cutoff;
    let mut lig_hit = vec![false; lig.len()];
    let mut rec_idx = Vec::new();
    for (i, p) in rec.iter().enumerate() {
        let mut hit = false;
        for (j, q) in lig.iter().enumerate() {
            if (p - q).norm_squared() < c2 {
                hit = true;
                lig_hit[j] = true;
            }
        }
        if hit {
            rec_idx.push(i);
        }
    }
    let lig_idx = lig_hit
        .iter()
        .enumerate()
        .filter_map(|(j, &h)| h.then_some(j))
        .collect();
    (rec_idx, lig_idx)
}
