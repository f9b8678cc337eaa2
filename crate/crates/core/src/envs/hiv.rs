//! Six-compartment HIV infection model with two drug classes.
//!
//! State order: `(T1, T2, T1*, T2*, V, E)`, i.e. healthy and infected CD4+
//! T-cells, healthy and infected macrophages, free virus and cytotoxic
//! T-cells. Time unit is one day.

use serde::{Deserialize, Serialize};

use super::integrate::rk4_step;
use super::StepResult;
use crate::error::{Error, Result};

pub const TABLE_VERSION: &str = "hiv-params-v1";

/// Baseline physiology; the two efficacies are applied only while the
/// corresponding drug is administered.
pub const BASELINE: [(&str, f64); 22] = [
    ("lambda1", 1.0e4),
    ("d1", 0.01),
    ("eps1", 0.7),
    ("k1", 8.0e-7),
    ("lambda2", 31.98),
    ("d2", 0.01),
    ("f", 0.34),
    ("k2", 1.0e-4),
    ("delta", 0.7),
    ("m1", 1.0e-5),
    ("m2", 1.0e-5),
    ("eps2", 0.3),
    ("nt", 100.0),
    ("c", 13.0),
    ("rho1", 1.0),
    ("rho2", 1.0),
    ("lambda_e", 1.0),
    ("b_e", 0.3),
    ("k_b", 100.0),
    ("d_e", 0.25),
    ("k_d", 500.0),
    ("delta_e", 0.1),
];

const EPS1: usize = 2;
const EPS2: usize = 11;

/// Indices of the table entries that vary between patients.
pub fn is_physiological(index: usize) -> bool {
    index != EPS1 && index != EPS2
}

pub const INITIAL_STATE: [f64; 6] = [163573.0, 5.0, 11945.0, 46.0, 63919.0, 24.0];
pub const DAYS_PER_STEP: f64 = 5.0;
pub const DEFAULT_SUBSTEPS: usize = 1000;
pub const STEP_CAP: usize = 200;
pub const STATE_NAMES: [&str; 6] = ["T1", "T2", "T1s", "T2s", "V", "E"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HivParams {
    pub values: Vec<f64>,
}

impl Default for HivParams {
    fn default() -> Self {
        Self {
            values: BASELINE.iter().map(|(_, v)| *v).collect(),
        }
    }
}

impl HivParams {
    pub fn get(&self, name: &str) -> f64 {
        let i = BASELINE
            .iter()
            .position(|(n, _)| *n == name)
            .unwrap_or_else(|| panic!("unknown HIV parameter {name}"));
        self.values[i]
    }

    /// Drug efficacies `(eps1, eps2)` for action 0 (none), 1 (drug 1),
    /// 2 (drug 2) or 3 (both).
    pub fn efficacies(&self, action: usize) -> (f64, f64) {
        let e1 = self.values[EPS1];
        let e2 = self.values[EPS2];
        match action {
            0 => (0.0, 0.0),
            1 => (e1, 0.0),
            2 => (0.0, e2),
            _ => (e1, e2),
        }
    }
}

/// Right-hand side of the infection dynamics under efficacies `(eps1, eps2)`.
pub fn derivs_with_efficacy(state: &[f64; 6], eps: (f64, f64), p: &[f64]) -> [f64; 6] {
    let [t1, t2, t1s, t2s, v, e] = *state;
    let [lambda1, d1, _, k1, lambda2, d2, f, k2, delta, m1, m2, _, nt, c, rho1, rho2, lambda_e, b_e, k_b, d_e, k_d, delta_e] =
        <[f64; 22]>::try_from(p).expect("22 parameters");
    let (eps1, eps2) = eps;
    let infect1 = (1.0 - eps1) * k1 * v * t1;
    let infect2 = (1.0 - f * eps1) * k2 * v * t2;
    let infected = t1s + t2s;
    [
        lambda1 - d1 * t1 - infect1,
        lambda2 - d2 * t2 - infect2,
        infect1 - delta * t1s - m1 * e * t1s,
        infect2 - delta * t2s - m2 * e * t2s,
        (1.0 - eps2) * nt * delta * infected
            - c * v
            - ((1.0 - eps1) * rho1 * k1 * t1 + (1.0 - f * eps1) * rho2 * k2 * t2) * v,
        lambda_e + b_e * infected / (infected + k_b) * e
            - d_e * infected / (infected + k_d) * e
            - delta_e * e,
    ]
}

pub fn derivs(state: &[f64; 6], action: usize, p: &HivParams) -> [f64; 6] {
    derivs_with_efficacy(state, p.efficacies(action), &p.values)
}

pub fn reward(state: &[f64], action: usize, p: &HivParams) -> f64 {
    let (e1, e2) = p.efficacies(action);
    -0.1 * state[4] - 2.0e4 * e1 * e1 - 2.0e3 * e2 * e2 + 1.0e3 * state[5]
}

/// Integrates one five-day treatment interval and floors the state at zero.
/// Returns the raw (pre-floor) state alongside the step result.
pub fn step_raw(
    state: &[f64],
    action: usize,
    p: &HivParams,
    substeps: usize,
) -> Result<([f64; 6], StepResult)> {
    let y0: [f64; 6] = state
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("hiv state has {} entries", state.len())))?;
    let raw = rk4_step(|s| derivs(s, action, p), y0, DAYS_PER_STEP, substeps)?;
    let next: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let r = reward(&next, action, p);
    Ok((
        raw,
        StepResult {
            next_state: next,
            reward: r,
            done: false,
            wall_hit: false,
        },
    ))
}

pub fn step(state: &[f64], action: usize, p: &HivParams, substeps: usize) -> Result<StepResult> {
    step_raw(state, action, p, substeps).map(|(_, r)| r)
}

/// True when a 1000-day untreated rollout stays finite and non-negative.
pub fn passes_stability_filter(p: &HivParams, substeps: usize) -> bool {
    let mut s = INITIAL_STATE.to_vec();
    for _ in 0..STEP_CAP {
        match step_raw(&s, 0, p, substeps) {
            Ok((raw, r)) => {
                if raw.iter().any(|v| *v < 0.0) {
                    return false;
                }
                s = r.next_state;
            }
            Err(_) => return false,
        }
    }
    true
}
