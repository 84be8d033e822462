use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fuse_forward, similarity_inputs, DcmtfNet, DcmtfVariant, TrainingData};
use crate::cfrm::{association, AssociationMatrix};
use crate::clustering::{kmeans, to_vigorous, ClusterIndicator};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_similarity, laplacian_of, orthogonality_residual, orthogonalize, Orthogonalized};
use crate::model::EntityMatrixGraph;
use crate::neural::{
    loss_matrix_recon_of, loss_trace, vae_backward, vae_forward, vae_loss_terms, DenseGrads, Noise,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassKind {
    /// `L1 = L_A + L_R`.
    One,
    /// `L2 = L_A + L_C`.
    Two,
    /// `L_A + L_R + L_C`.
    Combined,
}

/// Which parameter groups an update touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Routing {
    pub encoders: bool,
    pub decoders: bool,
    pub fusions: bool,
    pub clusterers: bool,
}

impl Routing {
    pub fn for_pass(kind: PassKind) -> Self {
        match kind {
            PassKind::One => Self { encoders: true, decoders: true, fusions: true, clusterers: false },
            PassKind::Two => Self { encoders: true, decoders: false, fusions: false, clusterers: true },
            PassKind::Combined => Self { encoders: true, decoders: true, fusions: true, clusterers: true },
        }
    }
}

/// Gradients per parameter group; `None` marks a group the pass does not
/// update.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub encoders: Vec<DenseGrads>,
    pub decoders: Vec<Option<DenseGrads>>,
    pub fusions: Vec<Option<DenseGrads>>,
    pub clusterers: Vec<Option<DenseGrads>>,
}

impl NetGrads {
    /// Same order as [`DcmtfNet::flat_params`], zeros where a group is `None`.
    pub fn flatten(&self, net: &DcmtfNet) -> Vec<f64> {
        let mut out = Vec::new();
        let mut push = |g: Option<&DenseGrads>, n: usize| match g {
            Some(g) => out.extend(g.flatten()),
            None => out.extend(std::iter::repeat_n(0.0, n)),
        };
        for (i, en) in net.vaes.iter().enumerate() {
            push(Some(&self.encoders[i]), en.vae.encoder.n_params());
            push(self.decoders[i].as_ref(), en.vae.decoder.n_params());
        }
        for (e, f) in net.fusions.iter().enumerate() {
            if let Some(f) = f {
                push(self.fusions[e].as_ref(), f.n_params());
            }
        }
        for (e, c) in net.clusterers.iter().enumerate() {
            push(self.clusterers.get(e).and_then(Option::as_ref), c.n_params());
        }
        out
    }
}

/// Holds the Laplacians and orthogonalization maps fixed, so that a pass
/// is a smooth function of the parameters alone.
#[derive(Debug, Clone)]
pub struct FrozenContext {
    pub laplacians: Vec<Array2<f64>>,
    pub maps: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct PassOutput {
    pub kind: PassKind,
    pub value: f64,
    pub l_a: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub l_a_terms: Vec<f64>,
    pub l_r_terms: Vec<f64>,
    pub l_c_terms: Vec<f64>,
    pub ortho_residuals: Vec<f64>,
    pub u: Vec<Array2<f64>>,
    /// Orthonormal clustering outputs; empty when no trace term was used.
    pub c: Vec<Array2<f64>>,
    pub laplacians: Vec<Array2<f64>>,
    pub grads: NetGrads,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a ⊕ (b · golden)
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One forward/backward pass. Clustering tails are reset to fresh
/// orthogonalization maps unless `frozen` supplies them.
pub fn run_pass(
    net: &mut DcmtfNet,
    g: &EntityMatrixGraph,
    data: &TrainingData,
    kind: PassKind,
    noise_seed: u64,
    frozen: Option<&FrozenContext>,
) -> Result<PassOutput> {
    let n = net.n_entities();
    let l = net.hyper.l;

    let forwards: Vec<_> = net
        .vaes
        .par_iter()
        .zip(data.views.par_iter())
        .enumerate()
        .map(|(i, (en, y))| {
            let out = vae_forward(&en.vae, y.view(), Noise::Sampled(mix(noise_seed, i as u64)))?;
            let terms = vae_loss_terms(&en.vae, y.view(), &out)?;
            Ok((out, terms))
        })
        .collect::<Result<Vec<_>>>()?;
    let l_a_terms: Vec<f64> = forwards.iter().map(|(_, t)| t.value).collect();

    let mut u = Vec::with_capacity(n);
    let mut fusion_caches = Vec::with_capacity(n);
    for e in 0..n {
        let means: Vec<ArrayView2<f64>> = net.edge_ids(e).iter().map(|&i| forwards[i].0.mu.view()).collect();
        let (ue, cache) = fuse_forward(net, e, &means)?;
        u.push(ue);
        fusion_caches.push(cache);
    }
    let mut d_u: Vec<Array2<f64>> = u.iter().map(|x| Array2::zeros(x.dim())).collect();

    let mut l_r_terms = Vec::new();
    if kind != PassKind::Two {
        for (m, x) in g.matrices.iter().enumerate() {
            let lv = loss_matrix_recon_of(data.matrices[m].view(), data.datatypes[m], u[x.rows].view(), u[x.cols].view())?;
            d_u[x.rows] += &lv.grads.u_r;
            d_u[x.cols] += &lv.grads.u_c;
            l_r_terms.push(lv.value);
        }
    }

    let use_trace = kind != PassKind::One && !net.clusterers.is_empty();
    let mut l_c_terms = Vec::new();
    let mut ortho_residuals = Vec::new();
    let mut c_out = Vec::new();
    let mut laplacians = Vec::new();
    let mut clusterer_grads: Vec<Option<DenseGrads>> = vec![None; net.clusterers.len()];
    if use_trace {
        let x_recon: Vec<Array2<f64>> = g.matrices.iter().map(|x| u[x.rows].dot(&u[x.cols].t())).collect();
        for e in 0..n {
            let lap = match frozen {
                Some(ctx) => ctx.laplacians[e].clone(),
                None => {
                    let p = similarity_inputs(g, &x_recon, &net.current_j, e)?;
                    // identical rows carry no cluster structure: L = 0
                    match gaussian_similarity(p.view(), net.hyper.sigma) {
                        Ok(s) => laplacian_of(s.s.view(), net.hyper.laplacian).l,
                        Err(Error::DegenerateScale) => Array2::zeros((p.nrows(), p.nrows())),
                        Err(err) => return Err(err),
                    }
                }
            };
            let (ct, cache) = net.clusterers[e].forward_body(u[e].view())?;
            let ortho = match frozen {
                Some(ctx) => Orthogonalized { c: ct.dot(&ctx.maps[e]), h_inv_t: ctx.maps[e].clone(), jitter: 0.0 },
                None => orthogonalize(ct.view())?,
            };
            net.clusterers[e].set_frozen_last(Some(ortho.h_inv_t.clone()))?;
            let lt = loss_trace(&ortho, lap.view())?;
            let (grads, du) = net.clusterers[e].backward(lt.grads.view(), &cache)?;
            d_u[e] += &du;
            clusterer_grads[e] = Some(grads);
            l_c_terms.push(lt.value);
            ortho_residuals.push(orthogonality_residual(ortho.c.view()));
            c_out.push(ortho.c);
            laplacians.push(lap);
        }
    }

    let routing = Routing::for_pass(kind);
    let mut extra_mu: Vec<Option<Array2<f64>>> = vec![None; net.vaes.len()];
    let mut fusion_grads: Vec<Option<DenseGrads>> = vec![None; n];
    for e in 0..n {
        let ids = net.edge_ids(e).to_vec();
        match (&net.fusions[e], &fusion_caches[e]) {
            (Some(f), Some(cache)) => {
                let (grads, d_in) = f.backward(d_u[e].view(), cache)?;
                if routing.fusions {
                    fusion_grads[e] = Some(grads);
                }
                for (j, &i) in ids.iter().enumerate() {
                    extra_mu[i] = Some(d_in.slice(s![.., j * l..(j + 1) * l]).to_owned());
                }
            }
            _ => extra_mu[ids[0]] = Some(std::mem::take(&mut d_u[e])),
        }
    }

    let backs: Vec<_> = net
        .vaes
        .par_iter()
        .zip(forwards.par_iter())
        .zip(extra_mu.par_iter())
        .map(|((en, (out, terms)), extra)| vae_backward(&en.vae, out, terms, extra.as_ref().map(|x| x.view())))
        .collect::<Result<Vec<_>>>()?;
    let mut encoders = Vec::with_capacity(backs.len());
    let mut decoders = Vec::with_capacity(backs.len());
    for b in backs {
        encoders.push(b.encoder);
        decoders.push(routing.decoders.then_some(b.decoder));
    }

    let l_a: f64 = l_a_terms.iter().sum();
    let l_r: f64 = l_r_terms.iter().sum();
    let l_c: f64 = l_c_terms.iter().sum();
    let value = match kind {
        PassKind::One => l_a + l_r,
        PassKind::Two => l_a + l_c,
        PassKind::Combined => l_a + l_r + l_c,
    };
    if !value.is_finite() {
        return Err(Error::NumericalDivergence(format!("{kind:?} pass loss {value}")));
    }
    Ok(PassOutput {
        kind,
        value,
        l_a,
        l_r,
        l_c,
        l_a_terms,
        l_r_terms,
        l_c_terms,
        ortho_residuals,
        u,
        c: c_out,
        laplacians,
        grads: NetGrads {
            encoders,
            decoders,
            fusions: fusion_grads,
            clusterers: clusterer_grads,
        },
    })
}

pub fn pass1(net: &mut DcmtfNet, g: &EntityMatrixGraph, data: &TrainingData, noise_seed: u64) -> Result<PassOutput> {
    run_pass(net, g, data, PassKind::One, noise_seed, None)
}

pub fn pass2(net: &mut DcmtfNet, g: &EntityMatrixGraph, data: &TrainingData, noise_seed: u64) -> Result<PassOutput> {
    run_pass(net, g, data, PassKind::Two, noise_seed, None)
}

pub fn pass_combined(
    net: &mut DcmtfNet,
    g: &EntityMatrixGraph,
    data: &TrainingData,
    noise_seed: u64,
) -> Result<PassOutput> {
    run_pass(net, g, data, PassKind::Combined, noise_seed, None)
}

/// SGD on the groups present in `grads` and enabled by `routing`.
pub fn apply_grads(net: &mut DcmtfNet, grads: &NetGrads, routing: Routing) -> Result<()> {
    let (lr, wd) = (net.hyper.lr, net.hyper.weight_decay);
    for (i, en) in net.vaes.iter_mut().enumerate() {
        if routing.encoders {
            en.vae.encoder.apply_sgd(&grads.encoders[i], lr, wd)?;
        }
        if let (true, Some(d)) = (routing.decoders, &grads.decoders[i]) {
            en.vae.decoder.apply_sgd(d, lr, wd)?;
        }
    }
    if routing.fusions {
        for (f, gr) in net.fusions.iter_mut().zip(&grads.fusions) {
            if let (Some(f), Some(gr)) = (f, gr) {
                f.apply_sgd(gr, lr, wd)?;
            }
        }
    }
    if routing.clusterers {
        for (c, gr) in net.clusterers.iter_mut().zip(&grads.clusterers) {
            if let Some(gr) = gr {
                c.apply_sgd(gr, lr, wd)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    /// Autoencoder term of the first (or only) pass.
    pub l_a: f64,
    pub l_r: f64,
    pub l_c: f64,
    /// `‖CᵀC − I‖_F` per entity after orthogonalization.
    pub ortho_residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DcmtfResult {
    pub u: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
    pub indicators: Vec<ClusterIndicator>,
    pub associations: Vec<AssociationMatrix>,
    pub loss_history: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub converged: bool,
}

fn refresh_indicators(net: &mut DcmtfNet, g: &EntityMatrixGraph, points: &[Array2<f64>], epoch: usize) -> Result<()> {
    for (e, p) in points.iter().enumerate() {
        let seed = mix(net.hyper.seed, (epoch * points.len() + e) as u64);
        let ind = kmeans(p.view(), g.entities[e].k, seed, net.hyper.kmeans_restarts)?;
        net.current_j[e] = to_vigorous(&ind)?;
    }
    Ok(())
}

pub fn train(net: &mut DcmtfNet, g: &EntityMatrixGraph, data: &TrainingData) -> Result<DcmtfResult> {
    train_with(net, g, data, &mut |_| {})
}

/// Coordinate-descent training followed by [`infer`]; `on_epoch` sees every
/// record as it is produced.
pub fn train_with(
    net: &mut DcmtfNet,
    g: &EntityMatrixGraph,
    data: &TrainingData,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<DcmtfResult> {
    net.hyper.validate()?;
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut converged = false;
    for epoch in 0..net.hyper.epochs {
        let base = mix(net.hyper.seed, 2 * epoch as u64 + 1);
        let (record, points) = if net.variant == DcmtfVariant::OnePhase {
            let out = run_pass(net, g, data, PassKind::Combined, base, None)?;
            apply_grads(net, &out.grads, Routing::for_pass(PassKind::Combined))?;
            let rec = EpochRecord {
                epoch,
                l1: out.l_a + out.l_r,
                l2: out.l_a + out.l_c,
                l_a: out.l_a,
                l_r: out.l_r,
                l_c: out.l_c,
                ortho_residuals: out.ortho_residuals,
            };
            (rec, if out.c.is_empty() { out.u } else { out.c })
        } else {
            let p1 = run_pass(net, g, data, PassKind::One, base, None)?;
            apply_grads(net, &p1.grads, Routing::for_pass(PassKind::One))?;
            let p2 = run_pass(net, g, data, PassKind::Two, mix(base, 2), None)?;
            apply_grads(net, &p2.grads, Routing::for_pass(PassKind::Two))?;
            let rec = EpochRecord {
                epoch,
                l1: p1.value,
                l2: p2.value,
                l_a: p1.l_a,
                l_r: p1.l_r,
                l_c: p2.l_c,
                ortho_residuals: p2.ortho_residuals,
            };
            (rec, if p2.c.is_empty() { p2.u } else { p2.c })
        };
        if (epoch + 1) % net.hyper.j_refresh == 0 {
            refresh_indicators(net, g, &points, epoch)?;
        }
        on_epoch(&record);
        let delta = history
            .last()
            .map(|prev| (record.l1 - prev.l1).abs() + (record.l2 - prev.l2).abs());
        history.push(record);
        if delta.is_some_and(|d| d < net.hyper.convergence) {
            converged = true;
            break;
        }
    }
    let mut result = infer(net, g, data)?;
    result.epochs_run = history.len();
    result.loss_history = history;
    result.converged = converged;
    Ok(result)
}

/// Deterministic forward pass, k-means per entity, and associations from
/// the unscaled input matrices.
pub fn infer(net: &DcmtfNet, g: &EntityMatrixGraph, data: &TrainingData) -> Result<DcmtfResult> {
    let u = net.representations(data)?;
    let c: Vec<Array2<f64>> = if net.clusterers.is_empty() {
        u.clone()
    } else {
        net.clusterers
            .iter()
            .zip(&u)
            .map(|(cl, ue)| {
                let (ct, _) = cl.forward_body(ue.view())?;
                Ok(orthogonalize(ct.view())?.c)
            })
            .collect::<Result<_>>()?
    };
    let mut indicators = Vec::with_capacity(c.len());
    let mut js = Vec::with_capacity(c.len());
    for (e, ce) in c.iter().enumerate() {
        let ind = kmeans(ce.view(), g.entities[e].k, net.hyper.seed.wrapping_add(e as u64), net.hyper.kmeans_restarts)?;
        js.push(to_vigorous(&ind)?);
        indicators.push(ind);
    }
    let associations = g
        .matrices
        .iter()
        .map(|x| association(x, &js[x.rows], &js[x.cols]))
        .collect::<Result<_>>()?;
    Ok(DcmtfResult {
        u,
        c,
        indicators,
        associations,
        loss_history: Vec::new(),
        epochs_run: 0,
        converged: false,
    })
}
