//! Two-link underactuated pendulum with torque at the elbow.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::integrate::rk4_step;
use super::StepResult;
use crate::error::Result;

pub const LC1: f64 = 0.5;
pub const LC2: f64 = 0.5;
pub const I1: f64 = 1.0;
pub const I2: f64 = 1.0;
pub const GRAVITY: f64 = 9.8;
pub const MAX_VEL_1: f64 = 4.0 * PI;
pub const MAX_VEL_2: f64 = 9.0 * PI;
pub const DT: f64 = 0.2;
pub const SUBSTEPS: usize = 4;
pub const GOAL_REWARD: f64 = 10.0;
pub const STEP_CAP: usize = 400;
pub const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcrobotParams {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
}

impl Default for AcrobotParams {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            m1: 1.0,
            m2: 1.0,
        }
    }
}

pub(crate) fn inertia_terms(theta2: f64, p: &AcrobotParams) -> (f64, f64) {
    let d1 = p.m1 * LC1 * LC1
        + p.m2 * (p.l1 * p.l1 + LC2 * LC2 + 2.0 * p.l1 * LC2 * theta2.cos())
        + I1
        + I2;
    let d2 = p.m2 * (LC2 * LC2 + p.l1 * LC2 * theta2.cos()) + I2;
    (d1, d2)
}

/// Time derivatives `(th1', th2', th1'', th2'')` under torque `torque`.
pub fn derivs(state: &[f64; 4], torque: f64, p: &AcrobotParams) -> [f64; 4] {
    let [th1, th2, dth1, dth2] = *state;
    let (d1, d2) = inertia_terms(th2, p);
    let phi2 = p.m2 * LC2 * GRAVITY * (th1 + th2 - PI / 2.0).cos();
    let phi1 = -p.m2 * p.l1 * LC2 * dth2 * dth2 * th2.sin()
        - 2.0 * p.m2 * p.l1 * LC2 * dth2 * dth1 * th2.sin()
        + (p.m1 * LC1 + p.m2 * p.l1) * GRAVITY * (th1 - PI / 2.0).cos()
        + phi2;
    let ddth2 = (torque + d2 / d1 * phi1 - p.m2 * p.l1 * LC2 * dth1 * dth1 * th2.sin() - phi2)
        / (p.m2 * LC2 * LC2 + I2 - d2 * d2 / d1);
    let ddth1 = -(d2 * ddth2 + phi1) / d1;
    [dth1, dth2, ddth1, ddth2]
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

pub fn tip_height(state: &[f64], p: &AcrobotParams) -> f64 {
    -p.l1 * state[0].cos() - p.l2 * (state[0] + state[1]).cos()
}

/// Reward of arriving in `state`, and whether the goal height is reached.
pub fn reward(state: &[f64], p: &AcrobotParams) -> (f64, bool) {
    let h = tip_height(state, p);
    if h >= p.l1 {
        (GOAL_REWARD, true)
    } else {
        (-0.05 * (h - p.l1).powi(2), false)
    }
}

/// Wraps angles and clamps velocities into the admissible box.
pub fn constrain(state: &mut [f64]) {
    state[0] = wrap_angle(state[0]);
    state[1] = wrap_angle(state[1]);
    state[2] = state[2].clamp(-MAX_VEL_1, MAX_VEL_1);
    state[3] = state[3].clamp(-MAX_VEL_2, MAX_VEL_2);
}

pub fn step(state: &[f64], action: usize, p: &AcrobotParams) -> Result<StepResult> {
    let torque = TORQUES[action.min(2)];
    let y0 = [state[0], state[1], state[2], state[3]];
    let y = rk4_step(|s| derivs(s, torque, p), y0, DT, SUBSTEPS)?;
    let mut next = y.to_vec();
    constrain(&mut next);
    let (r, done) = reward(&next, p);
    Ok(StepResult {
        next_state: next,
        reward: r,
        done,
        wall_hit: false,
    })
}

pub fn reset<R: Rng + ?Sized>(rng: &mut R, noise: f64) -> Vec<f64> {
    (0..4)
        .map(|_| if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_is_equilibrium() {
        let d = derivs(&[0.0; 4], 0.0, &AcrobotParams::default());
        for v in d {
            assert!(v.abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn d1_at_zero_elbow() {
        let (d1, _) = inertia_terms(0.0, &AcrobotParams::default());
        assert!((d1 - 4.5).abs() < 1e-12);
    }

    #[test]
    fn elbow_acceleration_odd_in_torque() {
        let p = AcrobotParams::default();
        let up = derivs(&[0.0; 4], 1.0, &p)[3];
        let down = derivs(&[0.0; 4], -1.0, &p)[3];
        assert!(up > 0.0);
        assert!((up + down).abs() < 1e-12);
    }

    #[test]
    fn hanging_reward_and_goal() {
        let p = AcrobotParams::default();
        let (r, done) = reward(&[0.0; 4], &p);
        assert!((r + 0.45).abs() < 1e-12 && !done);
        let (r, done) = reward(&[PI, 0.0, 0.0, 0.0], &p);
        assert_eq!(r, GOAL_REWARD);
        assert!(done);
    }

    #[test]
    fn wrapping_range() {
        for a in [-7.0, -PI, -3.0, 0.0, 3.0, PI, 7.0, 100.0] {
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI);
            assert!(((a - w) / (2.0 * PI)).fract().abs() < 1e-9 || ((a - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn step_respects_velocity_limits() {
        let p = AcrobotParams::default();
        let mut s = vec![0.1, -0.1, 0.0, 0.0];
        for t in 0..400 {
            let r = step(&s, [0, 2][(t / 7) % 2], &p).unwrap();
            s = r.next_state;
            assert!(s[2].abs() <= MAX_VEL_1 && s[3].abs() <= MAX_VEL_2);
            assert!(s[0] > -PI && s[0] <= PI);
        }
    }
}
