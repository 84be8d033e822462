//! Small feedforward engine with hand-written reverse mode: dense stacks,
//! variational autoencoders, the reconstruction and trace losses, plain SGD
//! and a finite-difference checker.

mod dense;
mod loss;
mod vae;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dense::{sigmoid, Activation, DenseGrads, DenseNet, ForwardCache, Layer, LayerGrad};
pub use loss::{loss_matrix_recon, loss_matrix_recon_of, loss_trace, FactorGrads};
pub use vae::{
    loss_vae, vae_backward, vae_flat_params, vae_forward, vae_loss_terms, vae_set_flat_params, Noise, Vae,
    VaeGrads, VaeLoss, VaeOutputs, PROB_CLAMP,
};

#[derive(Debug, Clone)]
pub struct LossValue<G> {
    pub value: f64,
    pub grads: G,
}

/// `p ← p − lr·(g + weight_decay·p)`, element by element in slice order.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    for (p, &g) in params.iter_mut().zip(grads) {
        dense::sgd_update(p, g, lr, weight_decay);
    }
}

pub const GRAD_CHECK_COORDS: usize = 200;

/// Largest relative error between the analytic gradient of `f` at `params`
/// and central differences, over at most [`GRAD_CHECK_COORDS`] coordinates
/// drawn with `seed`. The denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut f: F, params: &[f64], h: f64, seed: u64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length differs from parameters");
    let n = params.len();
    let coords: Vec<usize> = if n <= GRAD_CHECK_COORDS {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = sample(&mut rng, n, GRAD_CHECK_COORDS).into_vec();
        c.sort_unstable();
        c
    };
    let mut probe = params.to_vec();
    let mut worst = 0.0_f64;
    for i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe).0;
        probe[i] = orig - h;
        let minus = f(&probe).0;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
