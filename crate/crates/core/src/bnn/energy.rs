//! Black-box alpha-divergence energy with tied site factors and its
//! reparameterization gradients.

use ndarray::{s, Array2};
use rand::Rng;

use super::{ModelForm, WeightPosterior};
use crate::error::{Error, Result};
use crate::ndcore::{backward_batch, forward_batch};
use crate::rng::fill_normal;

/// A minibatch in model coordinates.
#[derive(Debug, Clone)]
pub struct EnergyBatch {
    /// Rows of standardized state followed by the one-hot action.
    pub features: Array2<f64>,
    /// One latent row per record; zero columns for models without latents.
    pub latents: Array2<f64>,
    pub targets: Array2<f64>,
    /// Per-record multipliers on the data term (importance weights).
    pub weights: Vec<f64>,
    /// Size of the data set the minibatch stands for.
    pub n_total: f64,
}

impl EnergyBatch {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Standard-normal draws shared between repeated evaluations.
#[derive(Debug, Clone)]
pub struct NoiseDraws {
    /// `K` vectors of weight noise, one entry per network parameter.
    pub weights: Vec<Vec<f64>>,
    /// `K` vectors of unit input noise, one entry per batch row.
    pub inputs: Vec<Vec<f64>>,
}

impl NoiseDraws {
    pub fn sample<R: Rng + ?Sized>(k: usize, param_count: usize, rows: usize, rng: &mut R) -> Self {
        let mut weights = Vec::with_capacity(k);
        let mut inputs = Vec::with_capacity(k);
        for _ in 0..k {
            let mut w = vec![0.0; param_count];
            fill_normal(rng, &mut w);
            let mut z = vec![0.0; rows];
            fill_normal(rng, &mut z);
            weights.push(w);
            inputs.push(z);
        }
        Self { weights, inputs }
    }
}

#[derive(Debug, Clone)]
pub struct EnergyEval {
    pub energy: f64,
    pub kl: f64,
    /// Gradient with respect to the flat posterior parameter vector.
    pub theta_grad: Vec<f64>,
    /// Gradient with respect to each record's latent row.
    pub latent_grad: Array2<f64>,
    /// Predicted delta averaged over the weight draws.
    pub mean_prediction: Array2<f64>,
}

fn kl_term(post: &WeightPosterior, grad: &mut [f64]) -> f64 {
    let n = post.param_count();
    let vp = post.prior.weight_variance;
    let mp = post.prior.weight_mean;
    let mut kl = 0.0;
    for i in 0..n {
        let m = post.theta()[i];
        let rho = post.theta()[n + i];
        let v = rho.exp();
        kl += 0.5 * ((v + (m - mp).powi(2)) / vp - 1.0 - rho + vp.ln());
        grad[i] += (m - mp) / vp;
        grad[n + i] += 0.5 * (v / vp - 1.0);
    }
    kl
}

/// Energy and gradients for explicit noise draws.
///
/// `E = KL(q || prior) - (N / B) sum_n w_n (1/alpha) log mean_k exp(alpha l_nk)`
/// with `l_nk` the Gaussian log-likelihood of record `n` under draw `k`.
pub fn alpha_energy(
    post: &WeightPosterior,
    batch: &EnergyBatch,
    alpha: f64,
    draws: &NoiseDraws,
) -> Result<EnergyEval> {
    let layout = post.layout();
    let b = batch.len();
    let d = layout.state_dim();
    let k = draws.weights.len();
    let lat = layout.latent_dim;
    if b == 0 || k == 0 {
        return Err(Error::InvalidArgument("energy needs a non-empty batch and draws".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1]")));
    }
    if batch.features.ncols() != layout.feature_width()
        || batch.targets.ncols() != d
        || batch.features.nrows() != b
        || batch.weights.len() != b
        || (layout.uses_latent() && batch.latents.dim() != (b, lat))
        || draws.inputs.iter().any(|z| z.len() != b)
        || draws.weights.iter().any(|w| w.len() != post.param_count())
    {
        return Err(Error::InvalidArgument("energy batch shapes are inconsistent".into()));
    }

    let n_params = post.param_count();
    let noise_lv = post.noise_log_variance();
    let inv_var: Vec<f64> = noise_lv.iter().map(|v| (-v).exp()).collect();
    let log_norm: f64 = noise_lv
        .iter()
        .map(|v| -0.5 * ((2.0 * std::f64::consts::PI).ln() + v))
        .sum();
    let z_sd = post.prior.input_noise_variance.sqrt();
    let fw = layout.feature_width();
    let li = layout.latent_inputs();

    // Forward every draw, keeping tapes for the reverse pass.
    let mut tapes = Vec::with_capacity(k);
    let mut preds = Vec::with_capacity(k);
    let mut weights_k = Vec::with_capacity(k);
    let mut loglik = Array2::<f64>::zeros((b, k));
    for kk in 0..k {
        let w = post.weights_from_noise(&draws.weights[kk]);
        let mut x = Array2::<f64>::zeros((b, layout.input_width()));
        x.slice_mut(s![.., ..fw]).assign(&batch.features);
        if li > 0 {
            x.slice_mut(s![.., fw..fw + li]).assign(&batch.latents);
        }
        for (n, z) in draws.inputs[kk].iter().enumerate() {
            x[[n, fw + li]] = z_sd * z;
        }
        let tape = forward_batch(post.spec(), &w, x)?;
        let out = tape.output();
        let pred = match layout.form {
            ModelForm::Linear => {
                let mut p = Array2::<f64>::zeros((b, d));
                for n in 0..b {
                    for i in 0..d {
                        p[[n, i]] = (0..lat).map(|j| batch.latents[[n, j]] * out[[n, j * d + i]]).sum();
                    }
                }
                p
            }
            _ => out.clone(),
        };
        for n in 0..b {
            let mut l = log_norm;
            for i in 0..d {
                l -= 0.5 * (batch.targets[[n, i]] - pred[[n, i]]).powi(2) * inv_var[i];
            }
            loglik[[n, kk]] = l;
        }
        tapes.push(tape);
        preds.push(pred);
        weights_k.push(w);
    }

    let scale = batch.n_total / b as f64;
    let ln_k = (k as f64).ln();
    let mut data_term = 0.0;
    // dE/dl_nk
    let mut coef = Array2::<f64>::zeros((b, k));
    for n in 0..b {
        let row = loglik.row(n);
        let top = row.iter().fold(f64::NEG_INFINITY, |a, &l| a.max(alpha * l));
        let sum: f64 = row.iter().map(|&l| (alpha * l - top).exp()).sum();
        let lse = top + sum.ln();
        data_term += batch.weights[n] * (lse - ln_k) / alpha;
        for kk in 0..k {
            let soft = (alpha * row[kk] - top).exp() / sum;
            coef[[n, kk]] = -scale * batch.weights[n] * soft;
        }
    }

    let mut theta_grad = vec![0.0; post.theta().len()];
    let kl = kl_term(post, &mut theta_grad);
    let energy = kl - scale * data_term;
    if !energy.is_finite() {
        return Err(Error::numerical("alpha energy", None));
    }

    let mut latent_grad = Array2::<f64>::zeros((b, if layout.uses_latent() { lat } else { 0 }));
    let mut mean_prediction = Array2::<f64>::zeros((b, d));
    let mut gw = vec![0.0; n_params];
    for kk in 0..k {
        let pred = &preds[kk];
        mean_prediction.scaled_add(1.0 / k as f64, pred);
        let mut g_pred = Array2::<f64>::zeros((b, d));
        for n in 0..b {
            let c = coef[[n, kk]];
            for i in 0..d {
                let r = batch.targets[[n, i]] - pred[[n, i]];
                g_pred[[n, i]] = c * r * inv_var[i];
                theta_grad[2 * n_params + i] += c * (-0.5 + 0.5 * r * r * inv_var[i]);
            }
        }
        let out = tapes[kk].output();
        let g_out = match layout.form {
            ModelForm::Linear => {
                let mut g = Array2::<f64>::zeros((b, lat * d));
                for n in 0..b {
                    for j in 0..lat {
                        for i in 0..d {
                            g[[n, j * d + i]] = g_pred[[n, i]] * batch.latents[[n, j]];
                            latent_grad[[n, j]] += g_pred[[n, i]] * out[[n, j * d + i]];
                        }
                    }
                }
                g
            }
            _ => g_pred,
        };
        gw.iter_mut().for_each(|g| *g = 0.0);
        let g_in = backward_batch(post.spec(), &weights_k[kk], &tapes[kk], &g_out, &mut gw)?;
        if li > 0 {
            latent_grad += &g_in.slice(s![.., fw..fw + li]);
        }
        let eps = &draws.weights[kk];
        let lv = post.log_variance();
        for i in 0..n_params {
            theta_grad[i] += gw[i];
            theta_grad[n_params + i] += gw[i] * 0.5 * (0.5 * lv[i]).exp() * eps[i];
        }
    }

    Ok(EnergyEval {
        energy,
        kl,
        theta_grad,
        latent_grad,
        mean_prediction,
    })
}

/// Energy with `k` fresh draws from `rng`.
pub fn alpha_energy_sampled<R: Rng + ?Sized>(
    post: &WeightPosterior,
    batch: &EnergyBatch,
    alpha: f64,
    k: usize,
    rng: &mut R,
) -> Result<EnergyEval> {
    let draws = NoiseDraws::sample(k, post.param_count(), batch.len(), rng);
    alpha_energy(post, batch, alpha, &draws)
}
