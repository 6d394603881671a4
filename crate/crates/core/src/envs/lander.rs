//! Point-mass lander with attitude, over flat ground at y = 0.
//!
//! Actions: 0 idle, 1 left side thruster, 2 main engine, 3 right side
//! thruster. The legs sit `LEG_HEIGHT` below the body centre; a leg is in
//! contact while the body rests at leg height with the craft nearly level.

use rand::Rng as _;

use super::{EnvState, Status};
use crate::rng::Rng;

pub(super) const LEG_HEIGHT: f64 = 0.1;
const GRAVITY: f64 = 1.6;
const DT: f64 = 0.05;
const MAIN_ACCEL: f64 = 4.0;
const SIDE_ACCEL: f64 = 0.8;
const SIDE_SPIN: f64 = 1.0;
// passive attitude restoring and damping
const ATTITUDE_STIFFNESS: f64 = 2.0;
const ATTITUDE_DAMPING: f64 = 1.0;
const CRASH_SPEED: f64 = 1.0;
const CRASH_TILT: f64 = 0.5;
const LEVEL_TILT: f64 = 0.2;
const GROUND_FRICTION: f64 = 0.8;
const REST_SPEED: f64 = 0.05;
const REST_SPIN: f64 = 0.1;
const MAX_ABS_X: f64 = 1.5;
const MAX_Y: f64 = 2.0;

pub(super) fn reset(rng: &mut Rng) -> Vec<f64> {
    vec![
        rng.random_range(-0.3..=0.3),
        1.2,
        rng.random_range(-0.1..=0.1),
        rng.random_range(-0.1..=0.1),
        rng.random_range(-0.05..=0.05),
        0.0,
        0.0,
        0.0,
    ]
}

fn at_rest(v: &[f64]) -> bool {
    v[6] > 0.5 && v[7] > 0.5 && v[2].abs() < REST_SPEED && v[5].abs() < REST_SPIN
}

pub(super) fn step(v: &[f64], action: usize) -> (Vec<f64>, Status) {
    let (mut x, mut y, mut vx, mut vy, mut theta, mut omega) = (v[0], v[1], v[2], v[3], v[4], v[5]);
    let (sin, cos) = theta.sin_cos();
    let mut ax = 0.0;
    let mut ay = -GRAVITY;
    let mut alpha = -ATTITUDE_STIFFNESS * theta - ATTITUDE_DAMPING * omega;
    match action {
        1 => {
            ax += SIDE_ACCEL * cos;
            ay += SIDE_ACCEL * sin;
            alpha -= SIDE_SPIN;
        }
        2 => {
            ax -= MAIN_ACCEL * sin;
            ay += MAIN_ACCEL * cos;
        }
        3 => {
            ax -= SIDE_ACCEL * cos;
            ay -= SIDE_ACCEL * sin;
            alpha += SIDE_SPIN;
        }
        _ => {}
    }
    vx += ax * DT;
    vy += ay * DT;
    omega += alpha * DT;
    x += vx * DT;
    y += vy * DT;
    theta += omega * DT;

    let (mut left, mut right) = (0.0, 0.0);
    if y <= LEG_HEIGHT {
        if vy < -CRASH_SPEED || theta.abs() > CRASH_TILT {
            return (vec![x, y.max(0.0), vx, vy, theta, omega, 0.0, 0.0], Status::Failed);
        }
        y = LEG_HEIGHT;
        vy = vy.max(0.0);
        vx *= GROUND_FRICTION;
        if theta.abs() < LEVEL_TILT {
            left = 1.0;
            right = 1.0;
        } else if theta > 0.0 {
            // tilted counter-clockwise: the right leg is the lower one
            right = 1.0;
        } else {
            left = 1.0;
        }
    }
    let next = vec![x, y, vx, vy, theta, omega, left, right];
    let status = if x.abs() > MAX_ABS_X || y > MAX_Y {
        Status::Failed
    } else if at_rest(&next) {
        Status::Rested
    } else {
        Status::Running
    };
    (next, status)
}

pub(super) fn landed_on_pad(v: &[f64], pad_half_width: f64) -> bool {
    at_rest(v) && v[0].abs() < pad_half_width
}

fn potential(v: &[f64]) -> f64 {
    let dist = (v[0] * v[0] + (v[1] - LEG_HEIGHT).powi(2)).sqrt();
    let speed = (v[2] * v[2] + v[3] * v[3]).sqrt();
    -dist - speed - v[4].abs() + 0.25 * (v[6] + v[7])
}

pub(super) fn shaping(state: &EnvState, next: &EnvState, pad_half_width: f64) -> f64 {
    let mut r = potential(&next.vars) - potential(&state.vars) - 0.01;
    match next.status {
        Status::Failed => r -= 1.0,
        Status::Rested if next.vars[0].abs() < pad_half_width => r += 1.0,
        _ => {}
    }
    r
}

pub(super) fn observe(v: &[f64]) -> Vec<f64> {
    vec![v[0] / MAX_ABS_X, (v[1] - LEG_HEIGHT) / 1.2, v[2], v[3], v[4] / CRASH_TILT, v[5], v[6], v[7]]
}
