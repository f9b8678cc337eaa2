//! Independent reference computations shared by the unit-level suites and
//! the acceptance target.

use hipmdp::agent::{ddqn_target, td_loss, QNetworkPair};
use hipmdp::bnn::{
    alpha_energy, EnergyBatch, ModelForm, ModelLayout, NoiseDraws, PosteriorInit, PriorSpec, Standardizer,
    WeightPosterior,
};
use hipmdp::envs::integrate::rk4_step;
use hipmdp::envs::{hiv, Domain};
use hipmdp::ndcore::{forward, NetSpec, ParamVector};
use hipmdp::replay::{PrioritizedBuffer, ReplayConfig, Transition};
use hipmdp::rng::seeded;
use ndarray::Array2;
use rand::Rng;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// nav2d-shaped posterior with a two-dimensional latent and perturbed
/// variances.
pub fn energy_posterior(form: ModelForm, hidden: &[usize], seed: u64) -> WeightPosterior {
    let layout = ModelLayout::new(Domain::Nav2d, form, 2);
    let prior = PriorSpec {
        weight_variance: 0.5,
        ..PriorSpec::default()
    };
    let mut post = WeightPosterior::new(
        layout,
        hidden,
        prior,
        Standardizer::identity(2),
        PosteriorInit {
            log_variance: -3.0,
            noise_log_variance: -1.0,
        },
        &mut seeded(seed),
    )
    .unwrap();
    let mut rng = seeded(seed + 100);
    let n = post.param_count();
    for v in &mut post.theta_mut()[n..] {
        *v += 0.5 * (rng.random::<f64>() - 0.5);
    }
    post
}

pub fn energy_batch(rows: usize, seed: u64) -> EnergyBatch {
    let mut rng = seeded(seed);
    let mut features = Array2::zeros((rows, 6));
    let mut latents = Array2::zeros((rows, 2));
    let mut targets = Array2::zeros((rows, 2));
    for n in 0..rows {
        features[[n, 0]] = rng.random_range(-2.0..2.0);
        features[[n, 1]] = rng.random_range(-2.0..2.0);
        features[[n, 2 + rng.random_range(0..4)]] = 1.0;
        for j in 0..2 {
            latents[[n, j]] = rng.random_range(-1.0..1.0);
            targets[[n, j]] = rng.random_range(-0.5..0.5);
        }
    }
    EnergyBatch {
        features,
        latents,
        targets,
        weights: (0..rows).map(|n| 0.5 + 0.1 * n as f64).collect(),
        n_total: 40.0,
    }
}

/// Relative errors of the analytic parameter and latent gradients against
/// central differences with the noise draws held fixed. The latent error is
/// `None` for the latent-free form, where the finite differences must vanish.
pub fn energy_gradient_errors(form: ModelForm, alpha: f64) -> (f64, Option<f64>) {
    let post = energy_posterior(form, &[5, 4], 11);
    let b = energy_batch(3, 12);
    let draws = NoiseDraws::sample(4, post.param_count(), b.len(), &mut seeded(13));
    let eval = alpha_energy(&post, &b, alpha, &draws).unwrap();
    let h = 1e-6;

    let mut fd = vec![0.0; post.theta().len()];
    for (i, g) in fd.iter_mut().enumerate() {
        let mut up = post.clone();
        up.theta_mut()[i] += h;
        let mut down = post.clone();
        down.theta_mut()[i] -= h;
        let e_up = alpha_energy(&up, &b, alpha, &draws).unwrap().energy;
        let e_down = alpha_energy(&down, &b, alpha, &draws).unwrap().energy;
        *g = (e_up - e_down) / (2.0 * h);
    }
    let theta_err = rel_err(&eval.theta_grad, &fd);

    let mut fd_lat = Vec::new();
    for n in 0..b.len() {
        for j in 0..2 {
            let mut up = b.clone();
            up.latents[[n, j]] += h;
            let mut down = b.clone();
            down.latents[[n, j]] -= h;
            let e_up = alpha_energy(&post, &up, alpha, &draws).unwrap().energy;
            let e_down = alpha_energy(&post, &down, alpha, &draws).unwrap().energy;
            fd_lat.push((e_up - e_down) / (2.0 * h));
        }
    }
    let analytic: Vec<f64> = eval.latent_grad.iter().copied().collect();
    if form == ModelForm::Plain {
        assert!(analytic.is_empty());
        assert!(fd_lat.iter().all(|g| *g == 0.0));
        (theta_err, None)
    } else {
        (theta_err, Some(rel_err(&analytic, &fd_lat)))
    }
}

/// Variational free energy evaluated one record and one draw at a time.
pub fn free_energy_oracle(post: &WeightPosterior, b: &EnergyBatch, draws: &NoiseDraws) -> f64 {
    let n = post.param_count();
    let (m, lv) = (post.mean(), post.log_variance());
    let vp = post.prior.weight_variance;
    let mut kl = 0.0;
    for i in 0..n {
        let v = lv[i].exp();
        kl += 0.5 * (vp.ln() - lv[i]) + (v + m[i] * m[i]) / (2.0 * vp) - 0.5;
    }
    let noise = post.noise_log_variance();
    let k = draws.weights.len();
    let mut expected = 0.0;
    for row in 0..b.len() {
        let mut acc = 0.0;
        for kk in 0..k {
            let w: Vec<f64> = (0..n)
                .map(|i| m[i] + (lv[i] / 2.0).exp() * draws.weights[kk][i])
                .collect();
            let mut x: Vec<f64> = b.features.row(row).to_vec();
            x.extend(b.latents.row(row).iter());
            x.push(draws.inputs[kk][row]);
            let f = forward(post.spec(), &w, &x).unwrap();
            for d in 0..2 {
                let s2 = noise[d].exp();
                let r = b.targets[[row, d]] - f[d];
                acc += -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - r * r / (2.0 * s2);
            }
        }
        expected += b.weights[row] * acc / k as f64;
    }
    kl - b.n_total / b.len() as f64 * expected
}

/// Relative gap between the alpha energy at alpha = 1e-6 and the free
/// energy on a fixed 20-point set with shared draws.
pub fn small_alpha_gap() -> f64 {
    let post = energy_posterior(ModelForm::Embedded, &[6, 6], 21);
    let b = energy_batch(20, 22);
    let draws = NoiseDraws::sample(10, post.param_count(), b.len(), &mut seeded(23));
    let bb = alpha_energy(&post, &b, 1e-6, &draws).unwrap().energy;
    let vfe = free_energy_oracle(&post, &b, &draws);
    (bb - vfe).abs() / vfe.abs()
}

/// Relative error of the TD-loss gradient against central differences on a
/// small random network.
pub fn td_gradient_error() -> f64 {
    let spec = NetSpec::new(vec![3, 8, 6, 4]).unwrap();
    let mut rng = seeded(5);
    let mut params = ParamVector::init_uniform(&spec, &mut rng).into_vec();
    for v in &mut params {
        *v += 0.1 * (rng.random::<f64>() - 0.5);
    }
    let b = 5;
    let features: Vec<Vec<f64>> = (0..b).map(|_| (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
    let actions: Vec<usize> = (0..b).map(|_| rng.random_range(0..4)).collect();
    let targets: Vec<f64> = (0..b).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    let weights: Vec<f64> = (0..b).map(|_| 0.2 + rng.random::<f64>()).collect();

    let eval = td_loss(&spec, &params, &features, &actions, &targets, &weights).unwrap();
    let h = 1e-6;
    let mut fd = vec![0.0; params.len()];
    let mut p = params.clone();
    for i in 0..params.len() {
        p[i] = params[i] + h;
        let up = td_loss(&spec, &p, &features, &actions, &targets, &weights).unwrap().loss;
        p[i] = params[i] - h;
        let down = td_loss(&spec, &p, &features, &actions, &targets, &weights).unwrap().loss;
        p[i] = params[i];
        fd[i] = (up - down) / (2.0 * h);
    }
    rel_err(&eval.gradient, &fd)
}

/// Largest gap between buffer probabilities and term-by-term enumeration
/// over many random buffers of one to eight records.
pub fn sampler_enumeration_gap(trials: usize) -> f64 {
    let mut rng = seeded(77);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let len = rng.random_range(1..=8);
        let priorities: Vec<f64> = (0..len).map(|_| rng.random_range(1e-3..100.0)).collect();
        let mut b = PrioritizedBuffer::new(ReplayConfig::default());
        for (i, &p) in priorities.iter().enumerate() {
            b.push_with_priority(
                Transition {
                    state: vec![i as f64],
                    action: 0,
                    reward: 0.0,
                    next_state: vec![0.0],
                    done: false,
                    instance_id: 0,
                },
                p,
            );
        }
        let powered: Vec<f64> = priorities.iter().map(|p| p.powf(0.2)).collect();
        let total: f64 = powered.iter().sum();
        for (got, w) in b.probabilities().iter().zip(&powered) {
            worst = worst.max((got - w / total).abs());
        }
    }
    worst
}

/// Error ratios `err(n) / err(2n)` of the integrator on `y' = y` over one
/// unit of time.
pub fn rk4_error_ratios() -> Vec<f64> {
    let err = |n: usize| {
        let y = rk4_step(|y: &[f64; 1]| [y[0]], [1.0], 1.0, n).unwrap();
        (y[0] - 1.0f64.exp()).abs()
    };
    [8, 16, 32].iter().map(|&n| err(n) / err(2 * n)).collect()
}

/// Per-component `|dx/dt| / x` at the unhealthy steady state, from the
/// infection model written out directly with the baseline table.
pub fn hiv_steady_state_residuals() -> Vec<f64> {
    let p = |name: &str| hiv::BASELINE.iter().find(|(n, _)| *n == name).unwrap().1;
    let [t1, t2, t1s, t2s, v, e] = hiv::INITIAL_STATE;
    let infected = t1s + t2s;
    let d = [
        p("lambda1") - p("d1") * t1 - p("k1") * v * t1,
        p("lambda2") - p("d2") * t2 - p("k2") * v * t2,
        p("k1") * v * t1 - p("delta") * t1s - p("m1") * e * t1s,
        p("k2") * v * t2 - p("delta") * t2s - p("m2") * e * t2s,
        p("nt") * p("delta") * infected - p("c") * v - (p("rho1") * p("k1") * t1 + p("rho2") * p("k2") * t2) * v,
        p("lambda_e") + p("b_e") * infected / (infected + p("k_b")) * e
            - p("d_e") * infected / (infected + p("k_d")) * e
            - p("delta_e") * e,
    ];
    let library = hiv::derivs(&hiv::INITIAL_STATE, 0, &hiv::HivParams::default());
    for (a, b) in d.iter().zip(library) {
        assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "library derivative {b} vs oracle {a}");
    }
    d.iter().zip(hiv::INITIAL_STATE).map(|(dv, s)| (dv / s).abs()).collect()
}

/// Double-DQN targets on one-state tables against hand-computed values.
/// Returns the largest absolute deviation.
pub fn ddqn_fixture_gap() -> f64 {
    let table = |primary: [f64; 2], target: [f64; 2]| {
        let spec = NetSpec::new(vec![1, 2]).unwrap();
        let mut p = vec![0.0; spec.param_count()];
        let mut t = vec![0.0; spec.param_count()];
        for a in 0..2 {
            p[spec.weight_index(0, a, 0)] = primary[a];
            t[spec.weight_index(0, a, 0)] = target[a];
        }
        QNetworkPair::from_params(spec, p, t, 1e-3)
    };
    let cases = [
        // (primary, target, reward, done, gamma, expected)
        ([0.0, 3.0], [2.0, 0.0], 1.0, false, 0.99, 1.0),
        ([3.0, 0.0], [2.0, 0.0], 1.0, false, 0.99, 2.98),
        ([1.0, 1.0], [4.0, 8.0], 0.5, false, 0.5, 2.5),
        ([0.0, 3.0], [2.0, 0.0], -2.0, true, 0.99, -2.0),
    ];
    cases
        .iter()
        .map(|&(p, t, r, done, gamma, expected)| {
            let y = ddqn_target(&table(p, t), r, &[1.0], done, gamma).unwrap();
            (y - expected).abs()
        })
        .fold(0.0, f64::max)
}
