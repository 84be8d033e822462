//! Deep collective matrix tri-factorization.
//!
//! Network layout per entity–matrix graph:
//! * one autoencoder per edge `(e, m)`, fed the view of matrix `m` whose rows
//!   are the instances of `e`;
//! * one fusion net per entity of degree > 1, over the concatenated means of
//!   its autoencoders in ascending matrix order;
//! * one clustering net per entity whose bias-free tail is reset every
//!   forward pass to the inverse Cholesky factor of its pre-tail Gram.
//!
//! Training alternates two passes per epoch. Pass 1 minimizes autoencoder
//! plus factor-reconstruction losses and updates encoders, decoders and
//! fusion nets. Pass 2 minimizes autoencoder plus trace losses and updates
//! encoders and clustering nets; the Laplacians it uses are built from
//! `U_r·U_cᵀ` and the current indicators and are treated as constants.
//!
//! Cost per epoch is dominated by the dense encoders (`Σ d_e·q·l` per layer)
//! and the `d_e x d_e` Laplacians (`d_e²·Σ k` to build and apply).

mod hpo;
mod train;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, to_vigorous, VigorousIndicator, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::linalg::{LaplacianKind, Sigma};
use crate::model::{DataType, EntityMatrixGraph};
use crate::neural::{vae_forward, Activation, DenseNet, ForwardCache, Noise, Vae};

pub use hpo::{hpo_search, HpoOutcome, ParamRange, SearchSpace, Trial};
pub use train::{
    apply_grads, infer, pass1, pass2, pass_combined, run_pass, train, train_with, DcmtfResult, EpochRecord,
    FrozenContext, NetGrads, PassKind, PassOutput, Routing,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcmtfHyper {
    /// Width of every latent mean and fused representation.
    pub l: usize,
    /// Reconstruction and trace losses are sums over whole matrices, so
    /// stable steps are small; scale down further for larger inputs.
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Hidden layers (width `2·l`) in every subnet.
    pub hidden_layers: usize,
    pub sigma: Sigma,
    /// Epochs between indicator refreshes.
    pub j_refresh: usize,
    /// Stop once `|ΔL1| + |ΔL2|` falls below this.
    pub convergence: f64,
    pub seed: u64,
    pub laplacian: LaplacianKind,
    pub kmeans_restarts: usize,
}

impl Default for DcmtfHyper {
    fn default() -> Self {
        Self {
            l: 50,
            lr: 3e-7,
            weight_decay: 1e-5,
            epochs: 200,
            hidden_layers: 1,
            sigma: Sigma::Auto,
            j_refresh: 1,
            convergence: 1e-6,
            seed: 0,
            laplacian: LaplacianKind::Unnormalized,
            kmeans_restarts: DEFAULT_RESTARTS,
        }
    }
}

impl DcmtfHyper {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::Config("l must be at least 1".into()));
        }
        if self.j_refresh == 0 {
            return Err(Error::Config("j_refresh must be at least 1".into()));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Config("kmeans_restarts must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("lr {} / weight_decay {}", self.lr, self.weight_decay)));
        }
        if !(self.convergence >= 0.0) {
            return Err(Error::Config(format!("convergence {}", self.convergence)));
        }
        if let Sigma::Fixed(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("sigma {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DcmtfVariant {
    #[default]
    Full,
    /// Deterministic autoencoders without the KL term.
    AeToFfn,
    /// No clustering nets; k-means runs on `U` directly.
    ClusterToKmeans,
    /// Both passes merged into one loss and one update per epoch.
    OnePhase,
}

/// Min-max scaling applied to a real matrix before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub min: f64,
    pub max: f64,
}

/// Training-time copies of the inputs: scaled matrices and per-edge views.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub matrices: Vec<Array2<f64>>,
    pub datatypes: Vec<DataType>,
    /// `None` for binary matrices, which are used as given.
    pub scaling: Vec<Option<Scaling>>,
    /// In `g.edges()` order; rows are the instances of the edge's entity.
    pub views: Vec<Array2<f64>>,
}

pub fn prepare_data(g: &EntityMatrixGraph) -> Result<TrainingData> {
    let mut matrices = Vec::with_capacity(g.n_matrices());
    let mut scaling = Vec::with_capacity(g.n_matrices());
    for x in &g.matrices {
        match x.datatype {
            DataType::Binary => {
                matrices.push(x.values.clone());
                scaling.push(None);
            }
            DataType::Real => {
                if x.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::DomainError(format!("matrix {} has non-finite entries", x.id)));
                }
                let min = x.values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = x.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = max - min;
                let scaled = if span > 0.0 {
                    x.values.mapv(|v| (v - min) / span)
                } else {
                    Array2::zeros(x.values.dim())
                };
                matrices.push(scaled);
                scaling.push(Some(Scaling { min, max }));
            }
        }
    }
    let views = g
        .edges()
        .iter()
        .map(|&(e, m)| {
            let x = &matrices[m];
            if g.matrices[m].rows == e {
                x.clone()
            } else {
                x.t().to_owned()
            }
        })
        .collect();
    Ok(TrainingData {
        matrices,
        datatypes: g.matrices.iter().map(|x| x.datatype).collect(),
        scaling,
        views,
    })
}

#[derive(Debug, Clone)]
pub struct EdgeNet {
    pub entity: usize,
    pub matrix: usize,
    pub vae: Vae,
}

#[derive(Debug, Clone)]
pub struct DcmtfNet {
    pub hyper: DcmtfHyper,
    pub variant: DcmtfVariant,
    /// One per edge, in `g.edges()` order.
    pub vaes: Vec<EdgeNet>,
    /// Per entity; present exactly when the degree exceeds 1.
    pub fusions: Vec<Option<DenseNet>>,
    /// Per entity; empty for [`DcmtfVariant::ClusterToKmeans`].
    pub clusterers: Vec<DenseNet>,
    pub current_j: Vec<VigorousIndicator>,
    neighbors: Vec<Vec<usize>>,
    /// Per entity, edge indices in neighbor order.
    edge_ids: Vec<Vec<usize>>,
}

fn stack(input: usize, hidden: usize, out: usize, layers: usize, rng: &mut ChaCha8Rng) -> Result<DenseNet> {
    let mut widths = vec![input];
    widths.extend(std::iter::repeat_n(hidden, layers));
    widths.push(out);
    let mut acts = vec![Activation::Tanh; layers];
    acts.push(Activation::Identity);
    DenseNet::new(&widths, &acts, rng)
}

pub fn construct(g: &EntityMatrixGraph, hyper: DcmtfHyper, variant: DcmtfVariant) -> Result<DcmtfNet> {
    hyper.validate()?;
    let data = prepare_data(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let l = hyper.l;
    let mut vaes = Vec::with_capacity(g.edges().len());
    for (i, &(e, m)) in g.edges().iter().enumerate() {
        let vae = Vae::new(
            data.views[i].ncols(),
            l,
            hyper.hidden_layers,
            g.matrices[m].datatype,
            variant != DcmtfVariant::AeToFfn,
            &mut rng,
        )?;
        vaes.push(EdgeNet { entity: e, matrix: m, vae });
    }
    let n = g.n_entities();
    let mut fusions = Vec::with_capacity(n);
    for e in 0..n {
        let deg = g.degree(e);
        fusions.push(if deg > 1 {
            Some(stack(deg * l, 2 * l, l, hyper.hidden_layers, &mut rng)?)
        } else {
            None
        });
    }
    let clusterers = if variant == DcmtfVariant::ClusterToKmeans {
        Vec::new()
    } else {
        (0..n)
            .map(|e| stack(l, 2 * l, g.entities[e].k, hyper.hidden_layers, &mut rng))
            .collect::<Result<_>>()?
    };
    let neighbors: Vec<Vec<usize>> = (0..n).map(|e| g.neighbors(e).to_vec()).collect();
    let edge_ids = neighbors
        .iter()
        .enumerate()
        .map(|(e, ms)| {
            ms.iter()
                .map(|&m| g.edges().iter().position(|&p| p == (e, m)).expect("neighbor has an edge"))
                .collect()
        })
        .collect();
    let mut net = DcmtfNet {
        hyper,
        variant,
        vaes,
        fusions,
        clusterers,
        current_j: Vec::new(),
        neighbors,
        edge_ids,
    };

    // indicators must exist before the first similarity computation
    let u = net.representations(&data)?;
    net.current_j = (0..n)
        .map(|e| {
            let ind = kmeans(u[e].view(), g.entities[e].k, hyper.seed.wrapping_add(e as u64), hyper.kmeans_restarts)?;
            to_vigorous(&ind)
        })
        .collect::<Result<_>>()?;
    Ok(net)
}

impl DcmtfNet {
    pub fn n_entities(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_fusions(&self) -> usize {
        self.fusions.iter().filter(|f| f.is_some()).count()
    }

    pub fn neighbors(&self, e: usize) -> &[usize] {
        &self.neighbors[e]
    }

    pub(crate) fn edge_ids(&self, e: usize) -> &[usize] {
        &self.edge_ids[e]
    }

    /// Deterministic `U[e]` for every entity.
    pub fn representations(&self, data: &TrainingData) -> Result<Vec<Array2<f64>>> {
        let mus: Vec<Array2<f64>> = self
            .vaes
            .iter()
            .zip(&data.views)
            .map(|(en, y)| vae_forward(&en.vae, y.view(), Noise::Deterministic).map(|o| o.mu))
            .collect::<Result<_>>()?;
        (0..self.n_entities())
            .map(|e| {
                let means: Vec<(usize, ArrayView2<f64>)> = self.neighbors[e]
                    .iter()
                    .zip(&self.edge_ids[e])
                    .map(|(&m, &i)| (m, mus[i].view()))
                    .collect();
                fuse(self, e, &means)
            })
            .collect()
    }

    /// Every trainable parameter: autoencoders (encoder then decoder) in edge
    /// order, fusion nets, clustering nets.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for en in &self.vaes {
            p.extend(en.vae.encoder.flat_params());
            p.extend(en.vae.decoder.flat_params());
        }
        for f in self.fusions.iter().flatten() {
            p.extend(f.flat_params());
        }
        for c in &self.clusterers {
            p.extend(c.flat_params());
        }
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        let mut off = 0;
        let mut take = |net: &mut DenseNet| -> Result<()> {
            let n = net.n_params();
            let chunk = p.get(off..off + n).ok_or_else(|| Error::ShapeMismatch("too few parameters".into()))?;
            net.set_flat_params(chunk)?;
            off += n;
            Ok(())
        };
        for en in &mut self.vaes {
            take(&mut en.vae.encoder)?;
            take(&mut en.vae.decoder)?;
        }
        for f in self.fusions.iter_mut().flatten() {
            take(f)?;
        }
        for c in &mut self.clusterers {
            take(c)?;
        }
        if off != p.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {off} parameters", p.len())));
        }
        Ok(())
    }

    /// Checkpoint: ordered `(name, shape, values)` list of every trainable
    /// array plus the current frozen tails.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for en in &self.vaes {
            let tag = format!("vae.e{}.m{}", en.entity, en.matrix);
            out.extend(en.vae.encoder.named_params(&format!("{tag}.encoder")));
            out.extend(en.vae.decoder.named_params(&format!("{tag}.decoder")));
        }
        for (e, f) in self.fusions.iter().enumerate() {
            if let Some(f) = f {
                out.extend(f.named_params(&format!("fusion.e{e}")));
            }
        }
        for (e, c) in self.clusterers.iter().enumerate() {
            out.extend(c.named_params(&format!("cluster.e{e}")));
            if let Some(t) = c.frozen_last() {
                out.push((format!("cluster.e{e}.frozen"), t.shape().to_vec(), t.iter().copied().collect()));
            }
        }
        out
    }
}

pub(crate) fn fuse_forward(
    net: &DcmtfNet,
    e: usize,
    means: &[ArrayView2<f64>],
) -> Result<(Array2<f64>, Option<ForwardCache>)> {
    match &net.fusions[e] {
        Some(f) => {
            let cat = concatenate(Axis(1), means).map_err(|err| Error::ShapeMismatch(err.to_string()))?;
            let (u, cache) = f.forward(cat.view())?;
            Ok((u, Some(cache)))
        }
        None => {
            let [mu] = means else {
                return Err(Error::ShapeMismatch(format!("{} means for a degree-1 entity", means.len())));
            };
            Ok((mu.to_owned(), None))
        }
    }
}

/// `U[e]` from the means of `e`'s autoencoders, tagged with their matrix ids
/// in ascending order.
pub fn fuse(net: &DcmtfNet, e: usize, means: &[(usize, ArrayView2<f64>)]) -> Result<Array2<f64>> {
    if e >= net.n_entities() {
        return Err(Error::UnknownEntity(e));
    }
    let got: Vec<usize> = means.iter().map(|(m, _)| *m).collect();
    if got != net.neighbors[e] {
        return Err(Error::NeighborOrder {
            expected: net.neighbors[e].clone(),
            got,
        });
    }
    let views: Vec<ArrayView2<f64>> = means.iter().map(|(_, v)| *v).collect();
    let widths_ok = views.iter().all(|v| v.ncols() == net.hyper.l);
    if !widths_ok {
        return Err(Error::ShapeMismatch(format!("means must be {} wide", net.hyper.l)));
    }
    Ok(fuse_forward(net, e, &views)?.0)
}

/// `P[e]`: for each matrix containing `e`, `X''·J_partner` (rows indexed by
/// `e`), concatenated column-wise in ascending matrix order.
pub fn similarity_inputs(
    g: &EntityMatrixGraph,
    x_recon: &[Array2<f64>],
    js: &[VigorousIndicator],
    e: usize,
) -> Result<Array2<f64>> {
    if x_recon.len() != g.n_matrices() {
        return Err(Error::ShapeMismatch(format!(
            "{} reconstructions for {} matrices",
            x_recon.len(),
            g.n_matrices()
        )));
    }
    let mut blocks = Vec::with_capacity(g.degree(e));
    for &m in g.neighbors(e) {
        let x = &g.matrices[m];
        let xr = &x_recon[m];
        if xr.dim() != x.values.dim() {
            return Err(Error::ShapeMismatch(format!("reconstruction {m} is {:?}", xr.dim())));
        }
        let block = if x.rows == e {
            let j = js.get(x.cols).ok_or(Error::MissingIndicator(x.cols))?;
            xr.dot(&j.j)
        } else {
            let j = js.get(x.rows).ok_or(Error::MissingIndicator(x.rows))?;
            xr.t().dot(&j.j)
        };
        blocks.push(block);
    }
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).map_err(|err| Error::ShapeMismatch(err.to_string()))
}
