use std::f64::consts::PI;

use rand::Rng;

use crate::seeds::Stream;

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const HORIZON: u32 = 200;

/// Maps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = (theta + PI).rem_euclid(two_pi) - PI;
    if a <= -PI {
        a += two_pi;
    }
    a
}

/// One semi-implicit Euler step. Returns `(theta', theta_dot', reward)`.
/// The torque must already be clipped.
pub fn pendulum_dynamics(theta: f64, theta_dot: f64, u: f64) -> (f64, f64, f64) {
    let w = wrap_angle(theta);
    let reward = -(w * w + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
    let new_dot = (theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
    let new_theta = theta + new_dot * DT;
    (new_theta, new_dot, reward)
}

pub fn observe(state: &[f64], obs: &mut [f64]) {
    obs[0] = state[0].cos();
    obs[1] = state[0].sin();
    obs[2] = state[1];
}

pub fn sample_initial(rng: &mut Stream, state: &mut [f64]) {
    state[0] = rng.random_range(-PI..PI);
    state[1] = rng.random_range(-1.0..1.0);
}
