use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dense::{Activation, DenseGrads, DenseNet, ForwardCache};
use super::LossValue;
use crate::error::{Error, Result};
use crate::model::DataType;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside BCE.
pub const PROB_CLAMP: f64 = 1e-7;

/// Encoder emits `[mu | logvar]`, `latent` columns each. A non-variational
/// instance decodes `mu` directly and carries no KL term.
#[derive(Debug, Clone)]
pub struct Vae {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub datatype: DataType,
    pub latent: usize,
    pub variational: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Sampled(u64),
    Deterministic,
}

#[derive(Debug, Clone)]
pub struct VaeOutputs {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    /// Standard normal draw; `None` when the latent is deterministic.
    pub xi: Option<Array2<f64>>,
    pub z: Array2<f64>,
    pub recon: Array2<f64>,
    enc_cache: ForwardCache,
    dec_cache: ForwardCache,
}

#[derive(Debug, Clone)]
pub struct VaeGrads {
    pub encoder: DenseGrads,
    pub decoder: DenseGrads,
}

/// Loss value split into its parts plus the partial derivatives needed by
/// [`vae_backward`].
#[derive(Debug, Clone)]
pub struct VaeLoss {
    pub value: f64,
    pub recon: f64,
    pub kl: f64,
    d_recon: Array2<f64>,
    d_mu: Array2<f64>,
    d_logvar: Array2<f64>,
}

impl Vae {
    /// Encoder `[input → 2l × hidden → 2l]` (ReLU hidden), decoder
    /// `[l → 2l × hidden → input]` ending in Sigmoid for binary data.
    pub fn new<R: Rng>(
        input: usize,
        latent: usize,
        hidden_layers: usize,
        datatype: DataType,
        variational: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || latent == 0 {
            return Err(Error::ShapeMismatch(format!("VAE with input {input} and latent {latent}")));
        }
        let hidden = vec![2 * latent; hidden_layers];
        let mut enc_w = vec![input];
        enc_w.extend(&hidden);
        enc_w.push(2 * latent);
        let mut enc_a = vec![Activation::Relu; hidden_layers];
        enc_a.push(Activation::Identity);

        let mut dec_w = vec![latent];
        dec_w.extend(&hidden);
        dec_w.push(input);
        let mut dec_a = vec![Activation::Relu; hidden_layers];
        dec_a.push(match datatype {
            DataType::Binary => Activation::Sigmoid,
            DataType::Real => Activation::Identity,
        });
        Self::from_parts(
            DenseNet::new(&enc_w, &enc_a, rng)?,
            DenseNet::new(&dec_w, &dec_a, rng)?,
            datatype,
            variational,
        )
    }

    pub fn from_parts(encoder: DenseNet, decoder: DenseNet, datatype: DataType, variational: bool) -> Result<Self> {
        let two_l = encoder.output_width();
        if two_l % 2 != 0 || two_l == 0 {
            return Err(Error::ShapeMismatch(format!("encoder emits {two_l} columns, need 2·latent")));
        }
        let latent = two_l / 2;
        if decoder.input_width() != latent || decoder.output_width() != encoder.input_width() {
            return Err(Error::ShapeMismatch("decoder does not mirror encoder".into()));
        }
        let want = match datatype {
            DataType::Binary => Activation::Sigmoid,
            DataType::Real => Activation::Identity,
        };
        if decoder.layers().last().map(|l| l.activation) != Some(want) {
            return Err(Error::ShapeMismatch(format!("{datatype:?} decoder must end in {want:?}")));
        }
        Ok(Self {
            encoder,
            decoder,
            datatype,
            latent,
            variational,
        })
    }

    pub fn apply_sgd(&mut self, grads: &VaeGrads, lr: f64, weight_decay: f64) -> Result<()> {
        self.encoder.apply_sgd(&grads.encoder, lr, weight_decay)?;
        self.decoder.apply_sgd(&grads.decoder, lr, weight_decay)
    }
}

pub fn vae_forward(v: &Vae, y: ArrayView2<f64>, noise: Noise) -> Result<VaeOutputs> {
    let (enc, enc_cache) = v.encoder.forward(y)?;
    let l = v.latent;
    let mu = enc.slice(s![.., ..l]).to_owned();
    let logvar = enc.slice(s![.., l..]).to_owned();
    let xi = match (v.variational, noise) {
        (true, Noise::Sampled(seed)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Some(Array2::from_shape_simple_fn(mu.dim(), || rng.sample(StandardNormal)))
        }
        _ => None,
    };
    let z = match &xi {
        Some(xi) => {
            let mut z = mu.clone();
            Zip::from(&mut z).and(&logvar).and(xi).for_each(|z, &lv, &e| *z += (0.5 * lv).exp() * e);
            z
        }
        None => mu.clone(),
    };
    let (recon, dec_cache) = v.decoder.forward(z.view())?;
    Ok(VaeOutputs {
        mu,
        logvar,
        xi,
        z,
        recon,
        enc_cache,
        dec_cache,
    })
}

/// Reconstruction term (MSE mean or BCE mean) plus, for variational
/// instances, `−½·mean(1 + logvar − mu² − exp(logvar))`.
pub fn vae_loss_terms(v: &Vae, y: ArrayView2<f64>, out: &VaeOutputs) -> Result<VaeLoss> {
    if y.dim() != out.recon.dim() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs reconstruction {:?}",
            y.dim(),
            out.recon.dim()
        )));
    }
    let n = y.len() as f64;
    let mut d_recon = Array2::zeros(y.dim());
    let recon = match v.datatype {
        DataType::Real => {
            let mut acc = 0.0;
            Zip::from(&mut d_recon).and(&out.recon).and(y).for_each(|d, &p, &t| {
                acc += (p - t) * (p - t);
                *d = 2.0 * (p - t) / n;
            });
            acc / n
        }
        DataType::Binary => {
            if out.recon.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::DomainError("binary reconstruction outside [0, 1]".into()));
            }
            bce(out.recon.view(), y, &mut d_recon)
        }
    };

    let mut d_mu = Array2::zeros(out.mu.dim());
    let mut d_logvar = Array2::zeros(out.logvar.dim());
    let kl = if v.variational {
        let m = out.mu.len() as f64;
        let mut acc = 0.0;
        Zip::from(&mut d_mu)
            .and(&mut d_logvar)
            .and(&out.mu)
            .and(&out.logvar)
            .for_each(|dm, dl, &mu, &lv| {
                acc += 1.0 + lv - mu * mu - lv.exp();
                *dm = mu / m;
                *dl = 0.5 * (lv.exp() - 1.0) / m;
            });
        -0.5 * acc / m
    } else {
        0.0
    };
    let value = recon + kl;
    if !value.is_finite() {
        return Err(Error::NumericalDivergence(format!("VAE loss {value}")));
    }
    Ok(VaeLoss {
        value,
        recon,
        kl,
        d_recon,
        d_mu,
        d_logvar,
    })
}

/// Mean BCE of probabilities `p` against targets; writes `∂/∂p` into `grad`.
fn bce(p: ArrayView2<f64>, y: ArrayView2<f64>, grad: &mut Array2<f64>) -> f64 {
    let n = y.len() as f64;
    let mut acc = 0.0;
    Zip::from(grad).and(p).and(y).for_each(|g, &p, &t| {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        *g = (pc - t) / (pc * (1.0 - pc)) / n;
    });
    acc / n
}

/// Backpropagates the VAE loss, plus any extra gradient arriving at `mu`
/// from downstream consumers of the means.
pub fn vae_backward(v: &Vae, out: &VaeOutputs, loss: &VaeLoss, extra_d_mu: Option<ArrayView2<f64>>) -> Result<VaeGrads> {
    let (decoder, dz) = v.decoder.backward(loss.d_recon.view(), &out.dec_cache)?;
    let mut d_mu = &dz + &loss.d_mu;
    if let Some(extra) = extra_d_mu {
        if extra.dim() != d_mu.dim() {
            return Err(Error::ShapeMismatch("gradient at mu has the wrong shape".into()));
        }
        d_mu += &extra;
    }
    let mut d_logvar = loss.d_logvar.clone();
    if let Some(xi) = &out.xi {
        Zip::from(&mut d_logvar)
            .and(&dz)
            .and(xi)
            .and(&out.logvar)
            .for_each(|dl, &g, &e, &lv| *dl += g * e * 0.5 * (0.5 * lv).exp());
    }
    let upstream = concatenate(Axis(1), &[d_mu.view(), d_logvar.view()])
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let (encoder, _) = v.encoder.backward(upstream.view(), &out.enc_cache)?;
    Ok(VaeGrads { encoder, decoder })
}

pub fn loss_vae(v: &Vae, y: ArrayView2<f64>, out: &VaeOutputs) -> Result<LossValue<VaeGrads>> {
    let terms = vae_loss_terms(v, y, out)?;
    let grads = vae_backward(v, out, &terms, None)?;
    Ok(LossValue {
        value: terms.value,
        grads,
    })
}

/// Every encoder then decoder parameter, in [`DenseNet::flat_params`] order.
pub fn vae_flat_params(v: &Vae) -> Vec<f64> {
    let mut p = v.encoder.flat_params();
    p.extend(v.decoder.flat_params());
    p
}

pub fn vae_set_flat_params(v: &mut Vae, p: &[f64]) -> Result<()> {
    let n = v.encoder.n_params();
    if p.len() != n + v.decoder.n_params() {
        return Err(Error::ShapeMismatch("VAE parameter count".into()));
    }
    v.encoder.set_flat_params(&p[..n])?;
    v.decoder.set_flat_params(&p[n..])
}

impl VaeGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut g = self.encoder.flatten();
        g.extend(self.decoder.flatten());
        g
    }
}
