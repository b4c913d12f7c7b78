//! Greedy interface-RMSD clustering of docking models.

use std::sync::OnceLock;

use serde::Serialize;

use crate::assessment::{ranking, INTERFACE_CUTOFF};
use crate::error::{Error, Result};
use crate::geometry::{interface_residues_by_distance, kabsch, Coord};
use crate::par::{self, Exec};

pub const DEFAULT_THRESHOLD: f64 = 5.0;

/// Cα coordinates of one docking model. All models being compared share
/// residue indexing.
#[derive(Clone, Copy, Debug)]
pub struct DecoyView<'a> {
    pub receptor: &'a [Coord],
    pub ligand: &'a [Coord],
}

/// Interface RMSD between models, evaluated on demand.
///
/// Each model's interface is its residues with a cross-chain partner closer
/// than 10 Å. `distance(a, b)` superposes the Cα atoms of the union of both
/// interfaces and reports their RMSD, so it is symmetric. A model with an
/// empty interface is at infinite distance from every other model.
pub struct InterfaceRmsd<'a> {
    decoys: Vec<DecoyView<'a>>,
    interfaces: Vec<OnceLock<Option<(Vec<usize>, Vec<usize>)>>>,
    exec: Exec,
}

impl<'a> InterfaceRmsd<'a> {
    pub fn new(decoys: Vec<DecoyView<'a>>) -> Result<Self> {
        if let Some(first) = decoys.first() {
            let (nr, nl) = (first.receptor.len(), first.ligand.len());
            if let Some(k) = decoys.iter().position(|d| d.receptor.len() != nr || d.ligand.len() != nl) {
                return Err(Error::contract(format!(
                    "interface RMSD: model {k} has {}+{} residues, model 0 has {nr}+{nl}",
                    decoys[k].receptor.len(),
                    decoys[k].ligand.len()
                )));
            }
        }
        let interfaces = decoys.iter().map(|_| OnceLock::new()).collect();
        Ok(Self {
            decoys,
            interfaces,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn len(&self) -> usize {
        self.decoys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decoys.is_empty()
    }

    fn interface(&self, k: usize) -> Option<&(Vec<usize>, Vec<usize>)> {
        self.interfaces[k]
            .get_or_init(|| {
                let d = &self.decoys[k];
                let (r, l) = interface_residues_by_distance(d.receptor, d.ligand, INTERFACE_CUTOFF);
                (!r.is_empty()).then_some((r, l))
            })
            .as_ref()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let (a, b) = (a.min(b), a.max(b));
        let (Some((ra, la)), Some((rb, lb))) = (self.interface(a), self.interface(b)) else {
            return f64::INFINITY;
        };
        let (ri, li) = (sorted_union(ra, rb), sorted_union(la, lb));
        let gather = |d: &DecoyView| -> Vec<Coord> {
            ri.iter().map(|&i| d.receptor[i]).chain(li.iter().map(|&j| d.ligand[j])).collect()
        };
        let (pa, pb) = (gather(&self.decoys[a]), gather(&self.decoys[b]));
        kabsch(&pb, &pa).map_or(f64::INFINITY, |s| s.rmsd)
    }

    /// Distances from `a` to each of `others`, in order.
    pub fn distances_from(&self, a: usize, others: &[usize]) -> Vec<f64> {
        par::map(self.exec, others, |&b| self.distance(a, b))
    }

    /// All pairs `(a, b)` with `a < b`, row-major: `d(0,1), d(0,2), …, d(1,2), …`.
    pub fn condensed(&self) -> Vec<f64> {
        let n = self.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        par::map(self.exec, &pairs, |&(a, b)| self.distance(a, b))
    }
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cluster {
    /// Index of the best-scored member.
    pub representative: usize,
    pub representative_score: f64,
    /// Member indices in rank order, the representative first.
    pub members: Vec<usize>,
}

/// Score-seeded greedy clustering: the best-ranked unassigned model becomes
/// a representative and absorbs every unassigned model closer than
/// `threshold`, until none remain. Ranking is by score descending, ties by
/// id. Clusters come out in representative rank order.
pub fn greedy_cluster<S: AsRef<str>>(
    ids: &[S],
    scores: &[f64],
    metric: &InterfaceRmsd,
    threshold: f64,
) -> Result<Vec<Cluster>> {
    if ids.len() != scores.len() || ids.len() != metric.len() {
        return Err(Error::contract(format!(
            "greedy_cluster: {} ids, {} scores, {} models",
            ids.len(),
            scores.len(),
            metric.len()
        )));
    }
    let mut remaining: Vec<usize> = ranking(ids, scores);
    let mut clusters = Vec::new();
    while let Some((&rep, rest)) = remaining.split_first() {
        let d = metric.distances_from(rep, rest);
        let mut members = vec![rep];
        let mut left = Vec::with_capacity(rest.len());
        for (&k, dist) in rest.iter().zip(d) {
            if dist < threshold {
                members.push(k);
            } else {
                left.push(k);
            }
        }
        clusters.push(Cluster {
            representative: rep,
            representative_score: scores[rep],
            members,
        });
        remaining = left;
    }
    Ok(clusters)
}
