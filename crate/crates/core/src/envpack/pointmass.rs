use rand::Rng;

use crate::seeds::Stream;

pub const DT: f64 = 0.1;
pub const MAX_SPEED: f64 = 1.0;
pub const MAX_ACCEL: f64 = 1.0;
pub const GOAL_RADIUS: f64 = 0.05;
pub const SUCCESS_BONUS: f64 = 10.0;
pub const HORIZON: u32 = 100;

/// State layout: `[px, py, vx, vy, gx, gy]`.
pub const STATE_DIM: usize = 6;

/// Advances `state` in place with a clipped acceleration. Returns `(reward, success)`.
pub fn pointmass_dynamics(state: &mut [f64], accel: [f64; 2]) -> (f64, bool) {
    for k in 0..2 {
        state[2 + k] = (state[2 + k] + accel[k] * DT).clamp(-MAX_SPEED, MAX_SPEED);
        state[k] += state[2 + k] * DT;
    }
    let dx = state[0] - state[4];
    let dy = state[1] - state[5];
    let dist = (dx * dx + dy * dy).sqrt();
    let ctrl = accel[0] * accel[0] + accel[1] * accel[1];
    let success = dist < GOAL_RADIUS;
    let mut reward = -dist - 0.01 * ctrl;
    if success {
        reward += SUCCESS_BONUS;
    }
    (reward, success)
}

pub fn observe(state: &[f64], obs: &mut [f64]) {
    obs.copy_from_slice(&state[..STATE_DIM]);
}

pub fn sample_initial(rng: &mut Stream, state: &mut [f64]) {
    state[0] = rng.random_range(-1.0..1.0);
    state[1] = rng.random_range(-1.0..1.0);
    state[2] = 0.0;
    state[3] = 0.0;
    state[4] = rng.random_range(-1.0..1.0);
    state[5] = rng.random_range(-1.0..1.0);
}
