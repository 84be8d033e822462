use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard assignment of `n` instances to `k` disjoint clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterIndicator {
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl ClusterIndicator {
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidClusterCount("k = 0".into()));
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
            return Err(Error::InvalidClusterCount(format!(
                "cluster id {bad} with k = {k}"
            )));
        }
        Ok(Self { assignments, k })
    }

    /// Builds an indicator from arbitrary labels, numbering clusters by first
    /// appearance.
    pub fn from_labels<T: Ord + Clone>(labels: &[T]) -> Self {
        let mut seen = std::collections::BTreeMap::new();
        let assignments = labels
            .iter()
            .map(|l| {
                let next = seen.len();
                *seen.entry(l.clone()).or_insert(next)
            })
            .collect();
        Self {
            assignments,
            k: seen.len().max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// True when some cluster id in `0..k` has no members.
    pub fn is_degenerate(&self) -> bool {
        self.sizes().contains(&0)
    }

    /// The binary `n x k` matrix `I`, one 1 per row.
    pub fn as_binary(&self) -> Array2<f64> {
        let mut i = Array2::zeros((self.len(), self.k));
        for (row, &a) in self.assignments.iter().enumerate() {
            i[[row, a]] = 1.0;
        }
        i
    }

    /// Same partition with clusters renumbered by first appearance.
    pub fn canonical(&self) -> Self {
        let mut map = vec![usize::MAX; self.k];
        let mut next = 0;
        let assignments = self
            .assignments
            .iter()
            .map(|&a| {
                if map[a] == usize::MAX {
                    map[a] = next;
                    next += 1;
                }
                map[a]
            })
            .collect();
        Self {
            assignments,
            k: self.k,
        }
    }

    /// Whether both indicators describe the same partition, ignoring labels.
    pub fn same_partition(&self, other: &Self) -> bool {
        self.canonical().assignments == other.canonical().assignments
    }
}

/// Column-orthonormal indicator with `J_iu = 1/√|B_u|` on members of `B_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct VigorousIndicator {
    pub j: Array2<f64>,
}

impl VigorousIndicator {
    pub fn n(&self) -> usize {
        self.j.nrows()
    }

    pub fn k(&self) -> usize {
        self.j.ncols()
    }
}

pub fn to_vigorous(i: &ClusterIndicator) -> Result<VigorousIndicator> {
    let sizes = i.sizes();
    if let Some(u) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(u));
    }
    let scale: Vec<f64> = sizes.iter().map(|&s| 1.0 / (s as f64).sqrt()).collect();
    let mut j = Array2::zeros((i.len(), i.k));
    for (row, &a) in i.assignments.iter().enumerate() {
        j[[row, a]] = scale[a];
    }
    Ok(VigorousIndicator { j })
}
