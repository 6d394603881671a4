use rand::Rng as _;

use super::{EnvState, Status};
use crate::rng::Rng;

const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;
const MAX_SPEED: f64 = 0.07;
const MIN_X: f64 = -1.2;
const MAX_X: f64 = 0.6;

pub(super) const TIME_COST: f64 = -1.0;
const VELOCITY_WEIGHT: f64 = 10.0;
const HEIGHT_WEIGHT: f64 = 0.1;

pub(super) fn reset(rng: &mut Rng) -> Vec<f64> {
    vec![rng.random_range(-0.6..=-0.4), 0.0]
}

pub(super) fn step(v: &[f64], action: usize, flag_x: f64) -> (Vec<f64>, Status) {
    let (x, x_dot) = (v[0], v[1]);
    let push = (action as f64 - 1.0) * FORCE;
    let mut x_dot = (x_dot + push - GRAVITY * (3.0 * x).cos()).clamp(-MAX_SPEED, MAX_SPEED);
    let x = (x + x_dot).clamp(MIN_X, MAX_X);
    if x == MIN_X && x_dot < 0.0 {
        x_dot = 0.0;
    }
    let status = if x >= flag_x { Status::GoalReached } else { Status::Running };
    (vec![x, x_dot], status)
}

/// Normalized hill height in [0, 1].
pub(super) fn height_term(x: f64) -> f64 {
    HEIGHT_WEIGHT * ((3.0 * x).sin() * 0.45 + 0.55)
}

pub(super) fn shaping(next: &EnvState) -> f64 {
    let (x, x_dot) = (next.vars[0], next.vars[1]);
    TIME_COST + VELOCITY_WEIGHT * x_dot.abs() + height_term(x)
}

pub(super) fn observe(v: &[f64]) -> Vec<f64> {
    vec![(v[0] + 0.3) / 0.9, v[1] / MAX_SPEED]
}
