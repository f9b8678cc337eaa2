//! Two-dimensional navigation with class-dependent wind, action orientation
//! and goal-wall placement.

use rand::Rng;

use super::StepResult;

pub const STEP_SIZE: f64 = 0.3;
pub const WIND: f64 = 0.23;
pub const BOUND: f64 = 2.0;
pub const GOAL_MIN: f64 = 1.0;
pub const GOAL_MAX: f64 = 1.5;
pub const START_MIN: f64 = -1.75;
pub const START_MAX: f64 = -1.25;
pub const STEP_COST: f64 = -0.1;
pub const WALL_PENALTY: f64 = -5.0;
pub const GOAL_REWARD: f64 = 1000.0;
pub const STEP_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Heading {
    pub fn from_index(action: usize) -> Heading {
        match action {
            0 => Heading::North,
            1 => Heading::East,
            2 => Heading::South,
            _ => Heading::West,
        }
    }

    fn components(self) -> (f64, f64) {
        match self {
            Heading::North => (0.0, 1.0),
            Heading::East => (1.0, 0.0),
            Heading::South => (0.0, -1.0),
            Heading::West => (-1.0, 0.0),
        }
    }
}

/// Free-space displacement ignoring walls and boundaries.
pub fn displacement(state: &[f64], action: usize, class: u8) -> (f64, f64) {
    let (ax, ay) = Heading::from_index(action).components();
    let theta = f64::from(class);
    let sign = if class == 0 { 1.0 } else { -1.0 };
    let dist = ((state[0] + 1.5).powi(2) + (state[1] + 1.5).powi(2)).sqrt();
    let dx = sign * STEP_SIZE * (ax - (1.0 - theta) * WIND * dist);
    let dy = sign * STEP_SIZE * (ay - theta * WIND * dist);
    (dx, dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

/// Open edge of the goal for a class; the other three edges block.
fn open_edge(class: u8) -> Edge {
    if class == 0 {
        Edge::Left
    } else {
        Edge::Bottom
    }
}

/// Liang-Barsky clip of the segment `p -> q` against the goal square.
/// Returns the entry parameter and the edge crossed first; a corner tie
/// resolves to the blocking edge.
fn goal_entry(p: (f64, f64), q: (f64, f64), open: Edge) -> Option<(f64, Edge)> {
    let d = (q.0 - p.0, q.1 - p.1);
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut edge = None;
    let checks = [
        (-d.0, p.0 - GOAL_MIN, Edge::Left),
        (d.0, GOAL_MAX - p.0, Edge::Right),
        (-d.1, p.1 - GOAL_MIN, Edge::Bottom),
        (d.1, GOAL_MAX - p.1, Edge::Top),
    ];
    for (pk, qk, e) in checks {
        if pk == 0.0 {
            if qk < 0.0 {
                return None;
            }
            continue;
        }
        let t = qk / pk;
        if pk < 0.0 {
            if t > t_enter || (t == t_enter && e != open) {
                t_enter = t;
                edge = Some(e);
            }
        } else if t < t_exit {
            t_exit = t;
        }
    }
    if t_enter > t_exit || !(0.0..=1.0).contains(&t_enter) {
        return None;
    }
    edge.map(|e| (t_enter, e))
}

fn inside_goal(x: f64, y: f64) -> bool {
    (GOAL_MIN..=GOAL_MAX).contains(&x) && (GOAL_MIN..=GOAL_MAX).contains(&y)
}

/// Applies walls, boundary and goal rules to a proposed move.
pub fn resolve(state: &[f64], proposed: (f64, f64), class: u8) -> StepResult {
    let p = (state[0], state[1]);
    let (qx, qy) = proposed;
    let blocked = || StepResult {
        next_state: state.to_vec(),
        reward: WALL_PENALTY,
        done: false,
        wall_hit: true,
    };
    if !qx.is_finite() || !qy.is_finite() {
        return blocked();
    }
    if let Some((t, edge)) = goal_entry(p, (qx, qy), open_edge(class)) {
        if edge != open_edge(class) {
            return blocked();
        }
        let next = if inside_goal(qx, qy) {
            vec![qx, qy]
        } else {
            vec![p.0 + t * (qx - p.0), p.1 + t * (qy - p.1)]
        };
        return StepResult {
            next_state: next,
            reward: GOAL_REWARD,
            done: true,
            wall_hit: false,
        };
    }
    if qx.abs() >= BOUND || qy.abs() >= BOUND {
        return blocked();
    }
    StepResult {
        next_state: vec![qx, qy],
        reward: STEP_COST,
        done: false,
        wall_hit: false,
    }
}

pub fn step(state: &[f64], action: usize, class: u8) -> StepResult {
    let (dx, dy) = displacement(state, action, class);
    resolve(state, (state[0] + dx, state[1] + dy), class)
}

pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    vec![
        rng.random_range(START_MIN..=START_MAX),
        rng.random_range(START_MIN..=START_MAX),
    ]
}
