//! Properties of the simulators that hold for every state and action.

use hipmdp::envs::{acrobot, hiv, nav2d, sample_instance, Domain, EnvConfig, Environment};
use hipmdp::rng::seeded;
use proptest::prelude::*;

proptest! {
    #[test]
    fn nav2d_stays_inside_the_box(
        class in 0u8..2,
        actions in prop::collection::vec(0usize..4, 1..100),
        seed in any::<u64>(),
    ) {
        let mut s = nav2d::reset(&mut seeded(seed));
        for a in actions {
            let r = nav2d::step(&s, a, class);
            prop_assert!(r.next_state.iter().all(|v| v.abs() <= nav2d::BOUND));
            if r.wall_hit {
                prop_assert_eq!(&r.next_state, &s);
                prop_assert_eq!(r.reward, nav2d::WALL_PENALTY);
            }
            if r.done {
                prop_assert_eq!(r.reward, nav2d::GOAL_REWARD);
                break;
            }
            s = r.next_state;
        }
    }

    #[test]
    fn nav2d_classes_mirror_at_start_center(action in 0usize..4) {
        let red = nav2d::displacement(&[-1.5, -1.5], action, 0);
        let blue = nav2d::displacement(&[-1.5, -1.5], action, 1);
        prop_assert!((red.0 + blue.0).abs() < 1e-15 && (red.1 + blue.1).abs() < 1e-15);
    }

    #[test]
    fn acrobot_velocities_and_angles_stay_in_range(
        actions in prop::collection::vec(0usize..3, 1..60),
        seed in any::<u64>(),
    ) {
        let p = acrobot::AcrobotParams::default();
        let mut s = acrobot::reset(&mut seeded(seed), 0.1);
        for a in actions {
            let r = acrobot::step(&s, a, &p).unwrap();
            let v = &r.next_state;
            prop_assert!(v[0].abs() <= std::f64::consts::PI && v[1].abs() <= std::f64::consts::PI);
            prop_assert!(v[2].abs() <= acrobot::MAX_VEL_1 && v[3].abs() <= acrobot::MAX_VEL_2);
            s = r.next_state;
            if r.done {
                break;
            }
        }
    }

    #[test]
    fn acrobot_deltas_wrap_into_half_turn(
        a in -3.14f64..3.14, b in -3.14f64..3.14, c in -3.14f64..3.14, d in -3.14f64..3.14,
    ) {
        let delta = Domain::Acrobot.state_delta(&[a, b, 0.0, 0.0], &[c, d, 1.0, -1.0]);
        prop_assert!(delta[0].abs() <= std::f64::consts::PI && delta[1].abs() <= std::f64::consts::PI);
        prop_assert_eq!(delta[2], 1.0);
    }

    #[test]
    fn hiv_states_remain_non_negative(actions in prop::collection::vec(0usize..4, 1..6)) {
        let p = hiv::HivParams::default();
        let mut s = hiv::INITIAL_STATE.to_vec();
        for a in actions {
            let r = hiv::step(&s, a, &p, 40).unwrap();
            prop_assert!(r.next_state.iter().all(|v| *v >= 0.0 && v.is_finite()));
            s = r.next_state;
        }
    }
}

#[test]
fn treatment_penalty_is_quadratic_in_efficacy() {
    let p = hiv::HivParams::default();
    let s = hiv::INITIAL_STATE;
    let rest = hiv::reward(&s, 0, &p);
    let (e1, e2) = p.efficacies(3);
    let both = hiv::reward(&s, 3, &p);
    assert!((rest - both - (2e4 * e1 * e1 + 2e3 * e2 * e2)).abs() < 1e-9);
}

#[test]
fn sampled_instances_are_valid_for_every_domain() {
    let cfg = EnvConfig {
        hiv_substeps: 50,
        ..EnvConfig::default()
    };
    for domain in Domain::ALL {
        for seed in 0..4 {
            let inst = sample_instance(domain, seed as usize, seed, &cfg).unwrap();
            let mut env = Environment::new(inst);
            let s = env.reset(&mut seeded(seed));
            assert_eq!(s.len(), domain.state_dim());
            let r = env.step(0).unwrap();
            assert!(r.next_state.iter().all(|v| v.is_finite()));
            assert_eq!(env.interactions(), 1);
        }
    }
}
