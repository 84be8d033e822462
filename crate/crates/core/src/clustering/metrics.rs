//! Pair-counting and information-theoretic partition comparisons.
//!
//! NMI and AMI normalize by the arithmetic mean of the two entropies; AMI
//! subtracts the expected mutual information under the hypergeometric
//! (permutation) model.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::ClusterIndicator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetrics {
    pub ri: f64,
    pub ari: f64,
    pub nmi: f64,
    pub ami: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub silhouette: Option<f64>,
}

/// Contingency table between two labelings of the same instances.
#[derive(Debug, Clone)]
pub struct Contingency {
    pub table: Array2<u64>,
    pub rows: Vec<u64>,
    pub cols: Vec<u64>,
    pub n: u64,
}

impl Contingency {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch(a.len(), b.len()));
        }
        let ca = ClusterIndicator::from_labels(a);
        let cb = ClusterIndicator::from_labels(b);
        let mut table = Array2::zeros((ca.k, cb.k));
        for (&x, &y) in ca.assignments.iter().zip(&cb.assignments) {
            table[[x, y]] += 1;
        }
        let rows = table.rows().into_iter().map(|r| r.sum()).collect();
        let cols = table.columns().into_iter().map(|c| c.sum()).collect();
        Ok(Self {
            table,
            rows,
            cols,
            n: a.len() as u64,
        })
    }

    /// Pair confusion counts `(tp, fp, fn, tn)` over ordered pairs `i != j`.
    fn pair_confusion(&self) -> (f64, f64, f64, f64) {
        let n = self.n as f64;
        let sum_sq: f64 = self.table.iter().map(|&x| (x * x) as f64).sum();
        let row_sq: f64 = self.rows.iter().map(|&x| (x * x) as f64).sum();
        let col_sq: f64 = self.cols.iter().map(|&x| (x * x) as f64).sum();
        let tp = sum_sq - n;
        let fp = col_sq - sum_sq;
        let fn_ = row_sq - sum_sq;
        let tn = n * n - fp - fn_ - sum_sq;
        (tp, fp, fn_, tn)
    }

    fn entropy(counts: &[u64], n: f64) -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    fn mutual_info(&self) -> f64 {
        let n = self.n as f64;
        let mut mi = 0.0;
        for ((i, j), &nij) in self.table.indexed_iter() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * (n * nij / (self.rows[i] as f64 * self.cols[j] as f64)).ln();
        }
        mi.max(0.0)
    }

    fn expected_mutual_info(&self) -> f64 {
        let n = self.n as usize;
        let mut lnfact = vec![0.0f64; n + 1];
        for i in 1..=n {
            lnfact[i] = lnfact[i - 1] + (i as f64).ln();
        }
        let nf = n as f64;
        let mut emi = 0.0;
        for &a in &self.rows {
            let a = a as usize;
            for &b in &self.cols {
                let b = b as usize;
                let lo = (a + b).saturating_sub(n).max(1);
                let hi = a.min(b);
                for nij in lo..=hi {
                    let x = nij as f64;
                    let term = x / nf * (nf * x / (a as f64 * b as f64)).ln();
                    let log_p = lnfact[a] + lnfact[b] + lnfact[n - a] + lnfact[n - b]
                        - lnfact[n]
                        - lnfact[nij]
                        - lnfact[a - nij]
                        - lnfact[b - nij]
                        - lnfact[n + nij - a - b];
                    emi += term * log_p.exp();
                }
            }
        }
        emi
    }
}

pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = Contingency::new(a, b)?;
    let (tp, fp, fn_, tn) = c.pair_confusion();
    let total = tp + fp + fn_ + tn;
    Ok(if total == 0.0 { 1.0 } else { (tp + tn) / total })
}

pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = Contingency::new(a, b)?;
    let (tp, fp, fn_, tn) = c.pair_confusion();
    if fn_ == 0.0 && fp == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * (tp * tn - fn_ * fp) / ((tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn)))
}

pub fn normalized_mutual_info(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = Contingency::new(a, b)?;
    if c.rows.len() == c.cols.len() && c.rows.len() <= 1 {
        return Ok(1.0);
    }
    let n = c.n as f64;
    let mean_h = 0.5 * (Contingency::entropy(&c.rows, n) + Contingency::entropy(&c.cols, n));
    let mi = c.mutual_info();
    Ok(if mean_h > 0.0 { (mi / mean_h).min(1.0) } else { 0.0 })
}

pub fn adjusted_mutual_info(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = Contingency::new(a, b)?;
    if c.rows.len() == c.cols.len() && c.rows.len() <= 1 {
        return Ok(1.0);
    }
    let n = c.n as f64;
    let mean_h = 0.5 * (Contingency::entropy(&c.rows, n) + Contingency::entropy(&c.cols, n));
    let mi = c.mutual_info();
    let emi = c.expected_mutual_info();
    let mut denom = mean_h - emi;
    if denom < 0.0 {
        denom = denom.min(-f64::EPSILON);
    } else {
        denom = denom.max(f64::EPSILON);
    }
    Ok((mi - emi) / denom)
}

pub fn evaluate_partition(pred: &ClusterIndicator, truth: &ClusterIndicator) -> Result<PartitionMetrics> {
    let (p, t) = (&pred.assignments, &truth.assignments);
    Ok(PartitionMetrics {
        ri: rand_index(p, t)?,
        ari: adjusted_rand_index(p, t)?,
        nmi: normalized_mutual_info(p, t)?,
        ami: adjusted_mutual_info(p, t)?,
        silhouette: None,
    })
}

/// Mean silhouette over all points. Members of singleton clusters score 0,
/// as do points whose intra- and nearest inter-cluster distances are both 0.
pub fn silhouette(points: ArrayView2<f64>, ind: &ClusterIndicator) -> Result<f64> {
    let n = points.nrows();
    if n != ind.len() {
        return Err(Error::LengthMismatch(n, ind.len()));
    }
    if ind.k < 2 {
        return Err(Error::SingleCluster);
    }
    let sizes = ind.sizes();
    if let Some(u) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(u));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0f64; ind.k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            sums[ind.assignments[j]] += d;
        }
        let own = ind.assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..ind.k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Maps each label of `pred` to the `truth` label maximizing total overlap
/// (exhaustive over permutations for small k, greedy otherwise).
pub fn best_label_map(pred: &ClusterIndicator, truth: &ClusterIndicator) -> Result<Vec<usize>> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let (kp, kt) = (pred.k, truth.k);
    let mut overlap = Array2::<u64>::zeros((kp, kt));
    for (&p, &t) in pred.assignments.iter().zip(&truth.assignments) {
        overlap[[p, t]] += 1;
    }
    if kp == kt && kp <= 8 {
        let mut perm: Vec<usize> = (0..kt).collect();
        let mut best = (0u64, perm.clone());
        permute(&mut perm, 0, &mut |p| {
            let score: u64 = p.iter().enumerate().map(|(i, &j)| overlap[[i, j]]).sum();
            if score > best.0 {
                best = (score, p.to_vec());
            }
        });
        return Ok(best.1);
    }
    Ok((0..kp)
        .map(|i| {
            (0..kt)
                .max_by_key(|&j| (overlap[[i, j]], std::cmp::Reverse(j)))
                .unwrap_or(0)
        })
        .collect())
}

fn permute(p: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}
