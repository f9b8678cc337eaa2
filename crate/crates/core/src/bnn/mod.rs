//! Bayesian neural network transition model with a factorized Gaussian
//! weight posterior, a stochastic scalar input and learned per-dimension
//! observation noise.
//!
//! The network predicts state differences in model coordinates. For most
//! domains these equal raw coordinates; HIV states are standardized with
//! statistics frozen at pretraining time.

mod energy;
mod train;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use energy::{alpha_energy, alpha_energy_sampled, EnergyBatch, EnergyEval, NoiseDraws};
pub use train::{train_bnn, LatentSource, SharedLatent, TrainReport};
pub(crate) use train::squared_errors;

use crate::envs::Domain;
use crate::error::{Error, Result};
use crate::ndcore::checkpoint::{read_f64_array, read_json, sidecar_path, write_f64_array, write_json};
use crate::ndcore::{forward, NetSpec, ParamVector};
use crate::rng::{fill_normal, normal};

/// How the latent embedding enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelForm {
    /// Latent vector concatenated to the network input.
    Embedded,
    /// Network emits one basis output per latent coordinate and state
    /// dimension; the prediction is their latent-weighted sum.
    Linear,
    /// No latent input at all.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub domain: Domain,
    pub form: ModelForm,
    pub latent_dim: usize,
}

impl ModelLayout {
    pub fn new(domain: Domain, form: ModelForm, latent_dim: usize) -> Self {
        Self {
            domain,
            form,
            latent_dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.domain.state_dim()
    }

    pub fn action_count(&self) -> usize {
        self.domain.action_count()
    }

    /// Width of the state and one-hot action block.
    pub fn feature_width(&self) -> usize {
        self.state_dim() + self.action_count()
    }

    /// Latent coordinates consumed by the network input.
    pub fn latent_inputs(&self) -> usize {
        match self.form {
            ModelForm::Embedded => self.latent_dim,
            _ => 0,
        }
    }

    pub fn uses_latent(&self) -> bool {
        self.form != ModelForm::Plain
    }

    pub fn input_width(&self) -> usize {
        self.feature_width() + self.latent_inputs() + 1
    }

    pub fn output_width(&self) -> usize {
        match self.form {
            ModelForm::Linear => self.latent_dim * self.state_dim(),
            _ => self.state_dim(),
        }
    }

    pub fn net_spec(&self, hidden: &[usize]) -> Result<NetSpec> {
        let mut widths = vec![self.input_width()];
        widths.extend_from_slice(hidden);
        widths.push(self.output_width());
        NetSpec::new(widths)
    }

    /// Maps one network output row to a predicted delta.
    pub fn combine(&self, out: &[f64], latent: &[f64]) -> Vec<f64> {
        let d = self.state_dim();
        match self.form {
            ModelForm::Linear => (0..d)
                .map(|i| (0..self.latent_dim).map(|k| latent[k] * out[k * d + i]).sum())
                .collect(),
            _ => out.to_vec(),
        }
    }
}

/// Affine per-dimension map between raw and model state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Per-dimension mean and standard deviation of `states`. Dimensions
    /// with (near) zero spread keep unit scale.
    pub fn fit(states: &[&[f64]]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot standardize an empty batch".into()))?;
        let dim = first.len();
        let n = states.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in states {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for s in states {
            for ((q, v), m) in scale.iter_mut().zip(s.iter()).zip(&mean) {
                *q += (v - m).powi(2) / n;
            }
        }
        for q in &mut scale {
            *q = q.sqrt();
            if *q < 1e-8 {
                *q = 1.0;
            }
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), q)| (v - m) / q)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub weight_mean: f64,
    pub weight_variance: f64,
    pub input_noise_variance: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            weight_mean: 0.0,
            weight_variance: (-10.0f64).exp(),
            input_noise_variance: 1.0,
        }
    }
}

/// Weight-prior variance as a function of completed pretraining passes:
/// multiplied by `growth_factor` after each of the first `growth_passes`
/// passes and never above `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSchedule {
    pub initial_variance: f64,
    pub growth_factor: f64,
    pub growth_passes: usize,
    pub cap: f64,
}

impl Default for PriorSchedule {
    fn default() -> Self {
        Self {
            initial_variance: (-10.0f64).exp(),
            growth_factor: 10.0,
            growth_passes: 4,
            cap: 1.0,
        }
    }
}

impl PriorSchedule {
    pub fn variance_after(&self, passes: usize) -> f64 {
        let grown = self.initial_variance
            * self
                .growth_factor
                .powi(passes.min(self.growth_passes) as i32);
        grown.min(self.cap)
    }

    pub fn final_variance(&self) -> f64 {
        self.variance_after(self.growth_passes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaConfig {
    pub alpha: f64,
    pub mc_samples: usize,
    pub predict_samples: usize,
    pub epochs: usize,
    pub draw_size: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
}

impl AlphaConfig {
    pub fn for_domain(domain: Domain) -> Self {
        let (alpha, learning_rate) = match domain {
            Domain::Nav2d => (0.5, 5e-5),
            Domain::Acrobot => (0.5, 2.5e-4),
            Domain::Hiv => (0.45, 2.5e-4),
        };
        Self {
            alpha,
            mc_samples: 10,
            predict_samples: 50,
            epochs: 100,
            draw_size: 160,
            minibatch: 32,
            learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.mc_samples == 0 || self.predict_samples == 0 || self.minibatch == 0 {
            return Err(Error::Config("sample counts and minibatch must be positive".into()));
        }
        if self.draw_size % self.minibatch != 0 {
            return Err(Error::Config(format!(
                "draw size {} is not a multiple of minibatch {}",
                self.draw_size, self.minibatch
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("BNN learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Initialization of a fresh posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorInit {
    pub log_variance: f64,
    pub noise_log_variance: f64,
}

impl Default for PosteriorInit {
    fn default() -> Self {
        Self {
            log_variance: -10.0,
            noise_log_variance: -4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Spread of the sampled deltas plus the observation noise.
    pub variance: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// Factorized Gaussian over network weights plus observation noise.
///
/// Parameters live in one flat vector laid out as
/// `[weight means | weight log-variances | noise log-variances]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPosterior {
    spec: NetSpec,
    layout: ModelLayout,
    theta: Vec<f64>,
    pub prior: PriorSpec,
    pub standardizer: Standardizer,
}

impl WeightPosterior {
    pub fn new<R: Rng + ?Sized>(
        layout: ModelLayout,
        hidden: &[usize],
        prior: PriorSpec,
        standardizer: Standardizer,
        init: PosteriorInit,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = layout.net_spec(hidden)?;
        if standardizer.mean.len() != layout.state_dim() {
            return Err(Error::InvalidArgument(
                "standardizer dimension does not match the state".into(),
            ));
        }
        let n = spec.param_count();
        let means = ParamVector::init_uniform(&spec, rng).into_vec();
        let mut theta = means;
        theta.extend(std::iter::repeat(init.log_variance).take(n));
        theta.extend(std::iter::repeat(init.noise_log_variance).take(layout.state_dim()));
        Ok(Self {
            spec,
            layout,
            theta,
            prior,
            standardizer,
        })
    }

    /// Builds a posterior from explicit arrays.
    pub fn from_parts(
        spec: NetSpec,
        layout: ModelLayout,
        mean: Vec<f64>,
        log_variance: Vec<f64>,
        noise_log_variance: Vec<f64>,
        prior: PriorSpec,
        standardizer: Standardizer,
    ) -> Result<Self> {
        let n = spec.param_count();
        if spec.input_width() != layout.input_width() || spec.output_width() != layout.output_width()
        {
            return Err(Error::InvalidArgument("network shape does not match the layout".into()));
        }
        if mean.len() != n || log_variance.len() != n || noise_log_variance.len() != layout.state_dim()
        {
            return Err(Error::InvalidArgument("posterior array lengths mismatch".into()));
        }
        let mut theta = mean;
        theta.extend(log_variance);
        theta.extend(noise_log_variance);
        if let Some(i) = crate::error::first_non_finite(&theta) {
            return Err(Error::numerical("posterior parameters", Some(i)));
        }
        Ok(Self {
            spec,
            layout,
            theta,
            prior,
            standardizer,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn mean(&self) -> &[f64] {
        &self.theta[..self.param_count()]
    }

    pub fn log_variance(&self) -> &[f64] {
        let n = self.param_count();
        &self.theta[n..2 * n]
    }

    pub fn noise_log_variance(&self) -> &[f64] {
        &self.theta[2 * self.param_count()..]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// One weight draw `mean + exp(log_var / 2) * eps`.
    pub fn weights_from_noise(&self, eps: &[f64]) -> Vec<f64> {
        self.mean()
            .iter()
            .zip(self.log_variance())
            .zip(eps)
            .map(|((m, r), e)| m + (0.5 * r).exp() * e)
            .collect()
    }

    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<ParamVector> {
        let mut eps = vec![0.0; self.param_count()];
        (0..k)
            .map(|_| {
                fill_normal(rng, &mut eps);
                ParamVector::from_vec(&self.spec, self.weights_from_noise(&eps))
                    .expect("length matches spec")
            })
            .collect()
    }

    /// Standardized state followed by the one-hot action.
    pub fn features(&self, state: &[f64], action: usize) -> Vec<f64> {
        let mut f = self.standardizer.apply(state);
        let mut onehot = vec![0.0; self.layout.action_count()];
        onehot[action] = 1.0;
        f.extend(onehot);
        f
    }

    /// Observed transition as a delta in model coordinates.
    pub fn target(&self, state: &[f64], next_state: &[f64]) -> Vec<f64> {
        self.layout
            .domain
            .state_delta(state, next_state)
            .iter()
            .zip(&self.standardizer.scale)
            .map(|(d, q)| d / q)
            .collect()
    }

    /// Raw next state from a model-coordinate delta.
    pub fn decode(&self, state: &[f64], delta: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(delta)
            .zip(&self.standardizer.scale)
            .map(|((s, d), q)| s + d * q)
            .collect()
    }

    fn network_input(&self, features: &[f64], latent: &[f64], z: f64) -> Vec<f64> {
        let mut x = features.to_vec();
        x.extend_from_slice(&latent[..self.layout.latent_inputs()]);
        x.push(z);
        x
    }

    fn check_latent(&self, latent: &[f64]) -> Result<()> {
        if self.layout.uses_latent() && latent.len() != self.layout.latent_dim {
            return Err(Error::InvalidArgument(format!(
                "latent of length {} for a model expecting {}",
                latent.len(),
                self.layout.latent_dim
            )));
        }
        Ok(())
    }

    /// Delta for one weight draw and one input-noise value.
    pub fn delta_with(&self, weights: &[f64], features: &[f64], latent: &[f64], z: f64) -> Result<Vec<f64>> {
        let out = forward(&self.spec, weights, &self.network_input(features, latent, z))?;
        Ok(self.layout.combine(&out, latent))
    }

    /// Predictive moments of the delta from `k` joint draws of weights and
    /// input noise.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        action: usize,
        latent: &[f64],
        rng: &mut R,
        k: usize,
    ) -> Result<Prediction> {
        if k == 0 {
            return Err(Error::InvalidArgument("prediction needs at least one sample".into()));
        }
        self.check_latent(latent)?;
        let features = self.features(state, action);
        let sd = self.prior.input_noise_variance.sqrt();
        let mut eps = vec![0.0; self.param_count()];
        let mut samples = Vec::with_capacity(k);
        for _ in 0..k {
            fill_normal(rng, &mut eps);
            let w = self.weights_from_noise(&eps);
            let z = sd * normal(rng);
            samples.push(self.delta_with(&w, &features, latent, z)?);
        }
        let d = self.layout.state_dim();
        let kf = k as f64;
        let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / kf).collect();
        let variance = (0..d)
            .map(|i| {
                let spread = samples.iter().map(|s| (s[i] - mean[i]).powi(2)).sum::<f64>() / kf;
                spread + self.noise_log_variance()[i].exp()
            })
            .collect();
        Ok(Prediction {
            mean,
            variance,
            samples,
        })
    }

    /// Next raw state from a single joint draw, without observation noise.
    pub fn sample_next_state<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        action: usize,
        latent: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let p = self.predict(state, action, latent, rng, 1)?;
        Ok(self.decode(state, &p.mean))
    }

    pub fn save(&self, header_path: &Path) -> Result<()> {
        let header = PosteriorHeader {
            layout: self.layout.clone(),
            layer_widths: self.spec.layer_widths().to_vec(),
            prior: self.prior,
            standardizer: self.standardizer.clone(),
            noise_log_variance: self.noise_log_variance().to_vec(),
            weight_count: self.param_count(),
            data_file: sidecar_name(header_path),
        };
        write_json(header_path, &header)?;
        write_f64_array(&sidecar_path(header_path), &self.theta[..2 * self.param_count()])
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let header: PosteriorHeader = read_json(header_path)?;
        let spec = NetSpec::new(header.layer_widths.clone())?;
        if spec.param_count() != header.weight_count {
            return Err(Error::Format {
                path: header_path.to_path_buf(),
                message: "weight count disagrees with layer widths".into(),
            });
        }
        let data = read_f64_array(&sidecar_path(header_path), 2 * header.weight_count)?;
        let (mean, logvar) = data.split_at(header.weight_count);
        Self::from_parts(
            spec,
            header.layout,
            mean.to_vec(),
            logvar.to_vec(),
            header.noise_log_variance,
            header.prior,
            header.standardizer,
        )
    }
}

fn sidecar_name(header_path: &Path) -> String {
    sidecar_path(header_path)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Serialize, Deserialize)]
struct PosteriorHeader {
    layout: ModelLayout,
    layer_widths: Vec<usize>,
    prior: PriorSpec,
    standardizer: Standardizer,
    noise_log_variance: Vec<f64>,
    weight_count: usize,
    data_file: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny(form: ModelForm) -> WeightPosterior {
        let layout = ModelLayout::new(Domain::Nav2d, form, 5);
        WeightPosterior::new(
            layout,
            &[6],
            PriorSpec::default(),
            Standardizer::identity(2),
            PosteriorInit::default(),
            &mut seeded(0),
        )
        .unwrap()
    }

    #[test]
    fn layout_widths() {
        let e = ModelLayout::new(Domain::Nav2d, ModelForm::Embedded, 5);
        assert_eq!(e.input_width(), 12);
        assert_eq!(e.output_width(), 2);
        let l = ModelLayout::new(Domain::Hiv, ModelForm::Linear, 5);
        assert_eq!(l.input_width(), 11);
        assert_eq!(l.output_width(), 30);
        let p = ModelLayout::new(Domain::Acrobot, ModelForm::Plain, 5);
        assert_eq!(p.input_width(), 8);
    }

    #[test]
    fn prior_schedule_grows_then_caps() {
        let s = PriorSchedule::default();
        assert_eq!(s.variance_after(0), (-10.0f64).exp());
        assert!((s.variance_after(1) / s.variance_after(0) - 10.0).abs() < 1e-12);
        assert_eq!(s.variance_after(4), s.variance_after(20));
        for p in 0..10 {
            assert!(s.variance_after(p + 1) >= s.variance_after(p));
            assert!(s.variance_after(p) <= 1.0);
        }
    }

    #[test]
    fn degenerate_variance_samples_equal_means() {
        let mut post = tiny(ModelForm::Embedded);
        let n = post.param_count();
        for v in &mut post.theta_mut()[n..2 * n] {
            *v = (1e-30f64).ln();
        }
        for w in post.sample_weights(&mut seeded(3), 4) {
            for (a, b) in w.as_slice().iter().zip(post.mean()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_network_predicts_no_change() {
        let mut post = tiny(ModelForm::Embedded);
        for v in post.theta_mut().iter_mut() {
            *v = 0.0;
        }
        let n = post.param_count();
        for v in &mut post.theta_mut()[n..2 * n] {
            *v = (1e-30f64).ln();
        }
        let p = post.predict(&[0.3, -0.2], 1, &[0.0; 5], &mut seeded(1), 20).unwrap();
        for (m, v) in p.mean.iter().zip(&p.variance) {
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
        let next = post.decode(&[0.3, -0.2], &p.mean);
        assert!((next[0] - 0.3).abs() < 1e-12 && (next[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn predict_rejects_zero_samples_and_bad_latent() {
        let post = tiny(ModelForm::Linear);
        assert!(post.predict(&[0.0, 0.0], 0, &[0.0; 5], &mut seeded(1), 0).is_err());
        assert!(post.predict(&[0.0, 0.0], 0, &[0.0; 3], &mut seeded(1), 1).is_err());
    }

    #[test]
    fn linear_combination() {
        let layout = ModelLayout::new(Domain::Nav2d, ModelForm::Linear, 2);
        // basis rows: k=0 -> (1, 2), k=1 -> (3, 4)
        let d = layout.combine(&[1.0, 2.0, 3.0, 4.0], &[0.5, -1.0]);
        assert_eq!(d, vec![0.5 - 3.0, 1.0 - 4.0]);
    }

    #[test]
    fn standardizer_fit() {
        let a = [1.0, 5.0];
        let b = [3.0, 5.0];
        let s = Standardizer::fit(&[&a, &b]).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("post.json");
        let post = tiny(ModelForm::Embedded);
        post.save(&path).unwrap();
        let back = WeightPosterior::load(&path).unwrap();
        let bits = |p: &WeightPosterior| p.theta().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&post), bits(&back));
        assert_eq!(post, back);
    }
}
