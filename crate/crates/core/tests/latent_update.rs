//! Latent updates against a planted embedding, and the isolation rules of
//! the tuning loop.

use hipmdp::bnn::{AlphaConfig, ModelForm, ModelLayout, PosteriorInit, PriorSpec, Standardizer, WeightPosterior};
use hipmdp::envs::Domain;
use hipmdp::latent::{tune_model, update_latent, LatentConfig, LatentPrior};
use hipmdp::ndcore::NetSpec;
use hipmdp::replay::{PrioritizedBuffer, ReplayConfig, Transition};
use hipmdp::rng::seeded;
use rand::Rng;

/// Linear-form model whose basis ignores the noise input, plus 100
/// transitions generated exactly by `planted`.
fn planted_problem(planted: &[f64]) -> (WeightPosterior, PrioritizedBuffer) {
    let layout = ModelLayout::new(Domain::Nav2d, ModelForm::Linear, planted.len());
    let mut post = WeightPosterior::new(
        layout.clone(),
        &[8],
        PriorSpec::default(),
        Standardizer::identity(2),
        PosteriorInit {
            log_variance: -20.0,
            noise_log_variance: -6.0,
        },
        &mut seeded(21),
    )
    .unwrap();
    let spec = NetSpec::new(post.spec().layer_widths().to_vec()).unwrap();
    let z_column = layout.input_width() - 1;
    for row in 0..8 {
        post.theta_mut()[spec.weight_index(0, row, z_column)] = 0.0;
    }
    let weights = post.mean().to_vec();
    let mut rng = seeded(22);
    let mut buffer = PrioritizedBuffer::new(ReplayConfig::default());
    for _ in 0..100 {
        let s = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let a = rng.random_range(0..4);
        let delta = post.delta_with(&weights, &post.features(&s, a), planted, 0.0).unwrap();
        buffer.push(Transition {
            state: s.to_vec(),
            action: a,
            reward: 0.0,
            next_state: vec![s[0] + delta[0], s[1] + delta[1]],
            done: false,
            instance_id: 0,
        });
    }
    (post, buffer)
}

fn alpha() -> AlphaConfig {
    AlphaConfig {
        mc_samples: 2,
        ..AlphaConfig::for_domain(Domain::Nav2d)
    }
}

#[test]
fn recovers_a_planted_embedding() {
    let planted = [0.8, -0.5, 1.2];
    let (post, mut buffer) = planted_problem(&planted);
    let before = post.theta().to_vec();
    let mut w = vec![0.0; 3];
    let cfg = LatentConfig {
        learning_rate: 1e-2,
        steps: 3000,
        minibatch: 32,
        rounds: 1,
    };
    update_latent(&mut w, &post, &mut buffer, &cfg, &alpha(), &mut seeded(23)).unwrap();
    let err: f64 = w.iter().zip(planted).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = planted.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err / norm < 0.05, "recovered {w:?}");
    assert!(post.theta() == before.as_slice());
}

#[test]
fn empty_schedules_change_nothing() {
    let (mut post, mut buffer) = planted_problem(&[0.1, 0.2, 0.3]);
    let before = post.theta().to_vec();
    let mut w = vec![0.4, 0.5, 0.6];
    let none = LatentConfig {
        steps: 0,
        rounds: 0,
        ..LatentConfig::default()
    };
    update_latent(&mut w, &post, &mut buffer, &none, &alpha(), &mut seeded(1)).unwrap();
    tune_model(&mut w, &mut post, &mut buffer, &none, &alpha(), &mut seeded(1)).unwrap();
    assert_eq!(w, vec![0.4, 0.5, 0.6]);
    assert!(post.theta() == before.as_slice());
}

#[test]
fn tuning_one_instance_leaves_other_latents_alone() {
    let (mut post, mut buffer) = planted_problem(&[0.3, 0.3, 0.3]);
    let mut latents = [vec![0.0; 3], vec![1.0, 2.0, 3.0]];
    let cfg = LatentConfig {
        steps: 5,
        rounds: 2,
        ..LatentConfig::default()
    };
    let small = AlphaConfig {
        epochs: 2,
        ..alpha()
    };
    let (first, rest) = latents.split_at_mut(1);
    tune_model(&mut first[0], &mut post, &mut buffer, &cfg, &small, &mut seeded(3)).unwrap();
    assert_eq!(rest[0], vec![1.0, 2.0, 3.0]);
    assert_ne!(first[0], vec![0.0; 3]);
}

#[test]
fn prior_draws_match_their_moments() {
    let prior = LatentPrior {
        mean: vec![0.5, -1.0],
        variance: vec![0.1, 0.0],
    };
    let mut rng = seeded(9);
    let n = 100_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let w = prior.sample(&mut rng);
        sum[0] += w[0];
        sum[1] += w[1];
        assert_eq!(w[1], -1.0);
    }
    let mean = sum[0] / n as f64;
    assert!((mean - 0.5).abs() < 3.0 * (0.1f64 / n as f64).sqrt());
    assert_eq!(prior.sample(&mut seeded(4)), prior.sample(&mut seeded(4)));
}
