//! Rigid-rod pendulum, θ = 0 upright.
//!
//! Integrated with an average-vector-field (discrete gradient) step: the
//! unforced update conserves mechanical energy up to the fixed-point
//! tolerance, and the speed clip can only remove energy.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::rng::Rng;

use super::Status;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const TORQUES: [f64; 3] = [-2.0, 0.0, 2.0];
const INERTIA: f64 = MASS * LENGTH * LENGTH / 3.0;
const HALF_WEIGHT_ARM: f64 = MASS * GRAVITY * LENGTH / 2.0;

pub(super) fn reset(rng: &mut Rng) -> Vec<f64> {
    vec![wrap(rng.random_range(PI - 0.5..=PI + 0.5)), rng.random_range(-0.2..=0.2)]
}

fn wrap(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

pub fn mechanical_energy(v: &[f64]) -> f64 {
    0.5 * INERTIA * v[1] * v[1] + HALF_WEIGHT_ARM * v[0].cos()
}

pub(super) fn step(v: &[f64], action: usize) -> (Vec<f64>, Status) {
    let (theta, theta_dot) = (v[0], v[1]);
    let torque = TORQUES[action];
    let momentum = INERTIA * theta_dot;
    // Potential U(θ) = w cos θ; the discrete gradient (U(θ+d) - U(θ)) / d
    // equals -w sin(θ + d/2) sinc(d/2).
    let new_momentum = |d: f64| momentum + DT * (HALF_WEIGHT_ARM * (theta + d / 2.0).sin() * sinc(d / 2.0) + torque);
    let mut d = DT * theta_dot;
    for _ in 0..100 {
        let next = DT * (momentum + new_momentum(d)) / (2.0 * INERTIA);
        let converged = (next - d).abs() <= 1e-15;
        d = next;
        if converged {
            break;
        }
    }
    let theta_dot = (new_momentum(d) / INERTIA).clamp(-MAX_SPEED, MAX_SPEED);
    (vec![wrap(theta + d), theta_dot], Status::Running)
}

pub(super) fn shaping(v: &[f64], action: usize) -> f64 {
    let theta = wrap(v[0]);
    let u = TORQUES[action];
    -(theta * theta + 0.1 * v[1] * v[1] + 0.001 * u * u)
}

pub(super) fn observe(v: &[f64]) -> Vec<f64> {
    vec![v[0].cos(), v[0].sin(), v[1] / MAX_SPEED]
}
