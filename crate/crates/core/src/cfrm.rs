//! Spectral relational clustering: per-entity eigendecomposition of
//! `M[e]`, association matrices `A = J_rᵀ X J_c`, and greedy cluster chains.

use std::collections::BTreeSet;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, to_vigorous, ClusterIndicator, VigorousIndicator, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, trace_form, Which};
use crate::model::{DataMatrix, EntityMatrixGraph};

pub const DEFAULT_SWEEPS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    pub matrix_id: usize,
    pub a: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub matrix: usize,
    pub row_cluster: usize,
    pub col_cluster: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterChain {
    pub links: Vec<ChainLink>,
    /// Set when an unvisited adjacent matrix existed but every candidate
    /// block had zero association.
    pub stalled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CfrmInit {
    #[default]
    Random,
    KMeans,
}

/// Which indicators an entity step sees within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CfrmUpdate {
    /// Indicators from the end of the previous sweep.
    #[default]
    Jacobi,
    /// Indicators already refreshed earlier in the same sweep.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfrmOptions {
    pub init: CfrmInit,
    pub sweeps: usize,
    pub seed: u64,
    pub update: CfrmUpdate,
    pub restarts: usize,
}

impl Default for CfrmOptions {
    fn default() -> Self {
        Self {
            init: CfrmInit::Random,
            sweeps: DEFAULT_SWEEPS,
            seed: 0,
            update: CfrmUpdate::Jacobi,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// One entity update: `Tr(Cᵀ M C)` next to the sum of the `k` largest
/// eigenvalues it should equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub sweep: usize,
    pub entity: usize,
    pub trace: f64,
    pub eigen_sum: f64,
}

#[derive(Debug, Clone)]
pub struct CfrmResult {
    pub embeddings: Vec<Array2<f64>>,
    pub indicators: Vec<ClusterIndicator>,
    pub associations: Vec<AssociationMatrix>,
    /// `Σ_e Tr(J[e]ᵀ M[e] J[e])` after each sweep.
    pub trace_history: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub sweeps_run: usize,
    pub converged: bool,
}

fn indicator_for(js: &[Option<VigorousIndicator>], e: usize) -> Result<&VigorousIndicator> {
    js.get(e).and_then(Option::as_ref).ok_or(Error::MissingIndicator(e))
}

/// `Σ (X J_c)(X J_c)ᵀ` over matrices with `e` as row entity plus
/// `Σ (Xᵀ J_r)(Xᵀ J_r)ᵀ` over matrices with `e` as column entity.
pub fn build_m(g: &EntityMatrixGraph, js: &[Option<VigorousIndicator>], e: usize) -> Result<Array2<f64>> {
    if e >= g.n_entities() {
        return Err(Error::UnknownEntity(e));
    }
    let d = g.entities[e].count;
    let mut m_e = Array2::zeros((d, d));
    for &m in g.neighbors(e) {
        let x = &g.matrices[m];
        if x.rows == e {
            let jc = indicator_for(js, x.cols)?;
            let p = x.values.dot(&jc.j);
            m_e += &p.dot(&p.t());
        }
        if x.cols == e {
            let jr = indicator_for(js, x.rows)?;
            let p = x.values.t().dot(&jr.j);
            m_e += &p.dot(&p.t());
        }
    }
    Ok(m_e)
}

pub fn association(x: &DataMatrix, j_r: &VigorousIndicator, j_c: &VigorousIndicator) -> Result<AssociationMatrix> {
    Ok(AssociationMatrix {
        matrix_id: x.id,
        a: association_of(x.values.view(), j_r, j_c)?,
    })
}

pub fn association_of(x: ArrayView2<f64>, j_r: &VigorousIndicator, j_c: &VigorousIndicator) -> Result<Array2<f64>> {
    if x.nrows() != j_r.n() || x.ncols() != j_c.n() {
        return Err(Error::ShapeMismatch(format!(
            "X is {}x{} but indicators cover {} rows and {} columns",
            x.nrows(),
            x.ncols(),
            j_r.n(),
            j_c.n()
        )));
    }
    Ok(j_r.j.t().dot(&x).dot(&j_c.j))
}

fn random_indicator(d: usize, k: usize, seed: u64) -> Result<ClusterIndicator> {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..d).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    labels.shuffle(&mut rng);
    ClusterIndicator::new(labels, k)
}

/// Row-wise concatenation of every view of entity `e`.
pub fn concatenated_views(g: &EntityMatrixGraph, e: usize) -> Result<Array2<f64>> {
    let views: Vec<Array2<f64>> = g
        .neighbors(e)
        .iter()
        .map(|&m| g.view(e, m).map(|v| v.data))
        .collect::<Result<_>>()?;
    let refs: Vec<ArrayView2<f64>> = views.iter().map(|v| v.view()).collect();
    concatenate(Axis(1), &refs).map_err(|err| Error::ShapeMismatch(err.to_string()))
}

fn step_seed(seed: u64, sweep: usize, e: usize, n: usize) -> u64 {
    seed.wrapping_add(((sweep + 1) * n + e) as u64)
}

pub fn src_fit(g: &EntityMatrixGraph, opts: CfrmOptions) -> Result<CfrmResult> {
    if opts.sweeps == 0 {
        return Err(Error::Config("CFRM needs at least one sweep".into()));
    }
    let n = g.n_entities();
    let mut indicators = Vec::with_capacity(n);
    for e in 0..n {
        let ent = &g.entities[e];
        let ind = match opts.init {
            CfrmInit::Random => random_indicator(ent.count, ent.k, opts.seed.wrapping_add(e as u64))?,
            CfrmInit::KMeans => {
                let v = concatenated_views(g, e)?;
                kmeans(v.view(), ent.k, opts.seed.wrapping_add(e as u64), opts.restarts)?
            }
        };
        indicators.push(ind);
    }
    let mut js: Vec<Option<VigorousIndicator>> =
        indicators.iter().map(|i| to_vigorous(i).map(Some)).collect::<Result<_>>()?;

    let mut embeddings = vec![Array2::zeros((0, 0)); n];
    let mut trace_history = Vec::new();
    let mut steps = Vec::new();
    let mut converged = false;
    let mut sweeps_run = 0;
    for sweep in 0..opts.sweeps {
        let snapshot = js.clone();
        let mut m_cache = Vec::with_capacity(n);
        let mut changed = false;
        for e in 0..n {
            let source = match opts.update {
                CfrmUpdate::Jacobi => &snapshot,
                CfrmUpdate::GaussSeidel => &js,
            };
            let m_e = build_m(g, source, e)?;
            let eig = sym_eig(m_e.view(), g.entities[e].k, Which::Largest)?;
            let c = eig.vectors;
            steps.push(StepRecord {
                sweep,
                entity: e,
                trace: trace_form(c.view(), m_e.view()),
                eigen_sum: eig.values.sum(),
            });
            let ind = kmeans(c.view(), g.entities[e].k, step_seed(opts.seed, sweep, e, n), opts.restarts)?;
            if !ind.same_partition(&indicators[e]) {
                changed = true;
            }
            js[e] = Some(to_vigorous(&ind)?);
            indicators[e] = ind;
            embeddings[e] = c;
            m_cache.push(m_e);
        }
        let mut objective = 0.0;
        for (e, m_e) in m_cache.iter().enumerate() {
            objective += trace_form(indicator_for(&js, e)?.j.view(), m_e.view());
        }
        trace_history.push(objective);
        sweeps_run = sweep + 1;
        if !changed {
            converged = true;
            break;
        }
    }

    let associations = g
        .matrices
        .iter()
        .map(|x| association(x, indicator_for(&js, x.rows)?, indicator_for(&js, x.cols)?))
        .collect::<Result<_>>()?;
    Ok(CfrmResult {
        embeddings,
        indicators,
        associations,
        trace_history,
        steps,
        sweeps_run,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStart {
    pub matrix: usize,
    pub row_cluster: usize,
    pub col_cluster: usize,
}

/// Best partner cluster in row (`by_row`) or column of `a`, by absolute
/// value; first index wins ties.
fn strongest(a: &Array2<f64>, fixed: usize, by_row: bool) -> (usize, f64) {
    let line = if by_row { a.row(fixed) } else { a.column(fixed) };
    let mut best = (0, line[0]);
    for (i, &v) in line.iter().enumerate().skip(1) {
        if v.abs() > best.1.abs() {
            best = (i, v);
        }
    }
    best
}

/// Greedy walk from `start`: at each step look at unvisited matrices that
/// touch the current block's row entity, then its column entity, in
/// ascending matrix order, and follow the first one offering a nonzero
/// association from the shared cluster.
pub fn extract_chains(
    g: &EntityMatrixGraph,
    assocs: &[AssociationMatrix],
    start: ChainStart,
    max_len: usize,
) -> Result<ClusterChain> {
    let lookup = |m: usize| -> Result<&Array2<f64>> {
        let x = g.matrices.get(m).ok_or_else(|| Error::BadStart(format!("no matrix {m}")))?;
        let a = assocs
            .iter()
            .find(|a| a.matrix_id == m)
            .map(|a| &a.a)
            .ok_or_else(|| Error::BadStart(format!("no association for matrix {m}")))?;
        let want = (g.entities[x.rows].k, g.entities[x.cols].k);
        if a.dim() != want {
            return Err(Error::ShapeMismatch(format!(
                "association {m} is {:?}, expected {want:?}",
                a.dim()
            )));
        }
        Ok(a)
    };
    let a0 = lookup(start.matrix)?;
    if start.row_cluster >= a0.nrows() || start.col_cluster >= a0.ncols() {
        return Err(Error::BadStart(format!(
            "block ({}, {}) outside {}x{} association of matrix {}",
            start.row_cluster,
            start.col_cluster,
            a0.nrows(),
            a0.ncols(),
            start.matrix
        )));
    }
    if max_len == 0 {
        return Err(Error::BadStart("max_len = 0".into()));
    }
    let mut links = vec![ChainLink {
        matrix: start.matrix,
        row_cluster: start.row_cluster,
        col_cluster: start.col_cluster,
        strength: a0[[start.row_cluster, start.col_cluster]],
    }];
    let mut visited = BTreeSet::from([start.matrix]);
    let mut stalled = false;
    while links.len() < max_len {
        let last = *links.last().expect("chain is never empty");
        let x = &g.matrices[last.matrix];
        let mut saw_candidate = false;
        let mut next = None;
        'search: for (ent, cl) in [(x.rows, last.row_cluster), (x.cols, last.col_cluster)] {
            for &m in g.neighbors(ent) {
                if visited.contains(&m) {
                    continue;
                }
                saw_candidate = true;
                let a = lookup(m)?;
                let cand = &g.matrices[m];
                let link = if cand.rows == ent {
                    let (v, s) = strongest(a, cl, true);
                    ChainLink { matrix: m, row_cluster: cl, col_cluster: v, strength: s }
                } else {
                    let (u, s) = strongest(a, cl, false);
                    ChainLink { matrix: m, row_cluster: u, col_cluster: cl, strength: s }
                };
                if link.strength != 0.0 {
                    next = Some(link);
                    break 'search;
                }
            }
        }
        match next {
            Some(link) => {
                visited.insert(link.matrix);
                links.push(link);
            }
            None => {
                stalled = saw_candidate;
                break;
            }
        }
    }
    Ok(ClusterChain { links, stalled })
}
