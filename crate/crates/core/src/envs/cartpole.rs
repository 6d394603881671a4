use rand::Rng as _;

use super::{EnvState, Status};
use crate::rng::Rng;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_LENGTH;
const FORCE: f64 = 10.0;
const TAU: f64 = 0.02;
const FAIL_ANGLE: f64 = 12.0 * std::f64::consts::PI / 180.0;
const FAIL_X: f64 = 2.4;

pub(super) fn reset(rng: &mut Rng) -> Vec<f64> {
    (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect()
}

pub(super) fn step(v: &[f64], action: usize) -> (Vec<f64>, Status) {
    let (x, x_dot, theta, theta_dot) = (v[0], v[1], v[2], v[3]);
    let force = if action == 1 { FORCE } else { -FORCE };
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;

    let next = vec![
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    ];
    let status = if next[0].abs() > FAIL_X || next[2].abs() > FAIL_ANGLE {
        Status::Failed
    } else {
        Status::Running
    };
    (next, status)
}

pub(super) fn precise(v: &[f64], max_angle: f64) -> bool {
    v[2].abs() <= max_angle
}

pub(super) fn shaping(next: &EnvState) -> f64 {
    if next.status == Status::Failed {
        0.0
    } else {
        1.0 - next.vars[2].abs()
    }
}

pub(super) fn observe(v: &[f64]) -> Vec<f64> {
    vec![v[0] / FAIL_X, v[1] / 2.0, v[2] / 0.1, v[3]]
}
