use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{construct, prepare_data, train, DcmtfHyper, DcmtfResult, DcmtfVariant};
use crate::error::{Error, Result};
use crate::linalg::Sigma;
use crate::model::EntityMatrixGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRange {
    Fixed(f64),
    Choice(Vec<f64>),
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    /// Inclusive integer range.
    IntRange { lo: i64, hi: i64 },
}

impl ParamRange {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(match self {
            ParamRange::Fixed(v) => *v,
            ParamRange::Choice(vs) if vs.is_empty() => return Err(Error::Config("empty choice list".into())),
            ParamRange::Choice(vs) => vs[rng.random_range(0..vs.len())],
            ParamRange::Uniform { lo, hi } if lo < hi => rng.random_range(*lo..*hi),
            ParamRange::LogUniform { lo, hi } if *lo > 0.0 && lo < hi => rng.random_range(lo.ln()..hi.ln()).exp(),
            ParamRange::IntRange { lo, hi } if lo <= hi => rng.random_range(*lo..=*hi) as f64,
            ParamRange::Uniform { lo, hi } | ParamRange::LogUniform { lo, hi } if lo == hi => *lo,
            other => return Err(Error::Config(format!("invalid range {other:?}"))),
        })
    }
}

fn count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

/// Ranges over the tunable hyperparameters; `sigma` is a choice list
/// (empty keeps the base value). Everything else comes from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub base: DcmtfHyper,
    pub l: ParamRange,
    pub lr: ParamRange,
    pub weight_decay: ParamRange,
    pub epochs: ParamRange,
    pub hidden_layers: ParamRange,
    pub j_refresh: ParamRange,
    pub convergence: ParamRange,
    #[serde(default)]
    pub sigma: Vec<Sigma>,
}

impl SearchSpace {
    /// Every range pinned to `base`.
    pub fn fixed(base: DcmtfHyper) -> Self {
        Self {
            base,
            l: ParamRange::Fixed(base.l as f64),
            lr: ParamRange::Fixed(base.lr),
            weight_decay: ParamRange::Fixed(base.weight_decay),
            epochs: ParamRange::Fixed(base.epochs as f64),
            hidden_layers: ParamRange::Fixed(base.hidden_layers as f64),
            j_refresh: ParamRange::Fixed(base.j_refresh as f64),
            convergence: ParamRange::Fixed(base.convergence),
            sigma: Vec::new(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<DcmtfHyper> {
        let mut h = self.base;
        h.l = count(self.l.sample(rng)?);
        h.lr = self.lr.sample(rng)?;
        h.weight_decay = self.weight_decay.sample(rng)?;
        h.epochs = count(self.epochs.sample(rng)?);
        h.hidden_layers = count(self.hidden_layers.sample(rng)?);
        h.j_refresh = count(self.j_refresh.sample(rng)?);
        h.convergence = self.convergence.sample(rng)?;
        if !self.sigma.is_empty() {
            h.sigma = self.sigma[rng.random_range(0..self.sigma.len())];
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyper: DcmtfHyper,
    /// Last epoch's `L1 + L2`; `None` when the trial failed.
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HpoOutcome {
    pub best_index: usize,
    pub best_hyper: DcmtfHyper,
    pub best: DcmtfResult,
    pub trials: Vec<Trial>,
    /// Per trial, in trial order.
    pub results: Vec<Option<DcmtfResult>>,
}

fn final_loss(r: &DcmtfResult) -> f64 {
    r.loss_history.last().map_or(f64::INFINITY, |rec| rec.l1 + rec.l2)
}

/// Seeded random search. Configurations are drawn up front from `seed`;
/// trial `i` trains with seed `seed + i`. The lowest final `L1 + L2` wins,
/// earliest trial on ties.
pub fn hpo_search(
    g: &EntityMatrixGraph,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    variant: DcmtfVariant,
) -> Result<HpoOutcome> {
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hypers: Vec<DcmtfHyper> = (0..budget)
        .map(|i| {
            let mut h = space.sample(&mut rng)?;
            h.seed = seed.wrapping_add(i as u64);
            h.validate()?;
            Ok(h)
        })
        .collect::<Result<_>>()?;
    let data = prepare_data(g)?;
    let runs: Vec<Result<DcmtfResult>> = hypers
        .par_iter()
        .map(|&h| {
            let mut net = construct(g, h, variant)?;
            train(&mut net, g, &data)
        })
        .collect();

    let mut trials = Vec::with_capacity(budget);
    let mut results = Vec::with_capacity(budget);
    let mut best: Option<(usize, f64)> = None;
    for (i, (h, run)) in hypers.iter().zip(runs).enumerate() {
        match run {
            Ok(r) => {
                let loss = final_loss(&r);
                if loss.is_finite() && best.is_none_or(|(_, b)| loss < b) {
                    best = Some((i, loss));
                }
                trials.push(Trial { index: i, hyper: *h, final_loss: Some(loss), error: None });
                results.push(Some(r));
            }
            Err(e) if e.is_numerical() => {
                trials.push(Trial { index: i, hyper: *h, final_loss: None, error: Some(e.to_string()) });
                results.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    // a trial with zero epochs has no loss; fall back to the first success
    let best_index = match best {
        Some((i, _)) => i,
        None => results.iter().position(Option::is_some).ok_or(Error::AllTrialsDiverged)?,
    };
    Ok(HpoOutcome {
        best_index,
        best_hyper: hypers[best_index],
        best: results[best_index].clone().expect("best trial succeeded"),
        trials,
        results,
    })
}
