use crate::error::{Error, Result};

/// Per-environment Gaussian noise levels, linear in the env index from `sigma_min` to `sigma_max`.
pub fn mixed_exploration_stds(num_envs: usize, sigma_min: f64, sigma_max: f64) -> Result<Vec<f64>> {
    if sigma_min > sigma_max {
        return Err(Error::contract(format!(
            "sigma_min {sigma_min} exceeds sigma_max {sigma_max}"
        )));
    }
    if num_envs == 0 {
        return Err(Error::contract("mixed exploration needs at least one env"));
    }
    if num_envs == 1 {
        return Ok(vec![sigma_min]);
    }
    let span = sigma_max - sigma_min;
    let last = (num_envs - 1) as f64;
    Ok((0..num_envs)
        .map(|i| {
            if i == num_envs - 1 {
                sigma_max
            } else {
                sigma_min + (i as f64 / last) * span
            }
        })
        .collect())
}

/// Learning-rate controller driven by the observed approximate KL.
///
/// Above the threshold the rate is divided by `gain`; below half the threshold it
/// is multiplied by `gain`; in between it is unchanged. The result is clamped to
/// `[lr_min, lr_max]`.
pub fn kl_adapt_lr(
    current_lr: f64,
    observed_kl: f64,
    kl_threshold: f64,
    gain: f64,
    lr_bounds: (f64, f64),
) -> f64 {
    let lr = if observed_kl > kl_threshold {
        current_lr / gain
    } else if observed_kl < kl_threshold / 2.0 {
        current_lr * gain
    } else {
        current_lr
    };
    lr.clamp(lr_bounds.0, lr_bounds.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BOUNDS: (f64, f64) = (1e-6, 1e-2);

    #[test]
    fn three_env_linear_schedule() {
        assert_eq!(mixed_exploration_stds(3, 0.01, 1.0).unwrap(), vec![0.01, 0.505, 1.0]);
        assert_eq!(mixed_exploration_stds(2, 0.2, 0.7).unwrap(), vec![0.2, 0.7]);
        assert_eq!(mixed_exploration_stds(1, 0.2, 0.7).unwrap(), vec![0.2]);
        assert_eq!(mixed_exploration_stds(4, 0.3, 0.3).unwrap(), vec![0.3; 4]);
    }

    #[test]
    fn inverted_range_is_contract_error() {
        assert!(mixed_exploration_stds(3, 1.0, 0.1).is_err());
    }

    #[test]
    fn kl_controller_branches() {
        let lr = kl_adapt_lr(5e-4, 0.02, 0.016, 1.5, BOUNDS);
        assert!((lr - 3.333_333_333_333_333e-4).abs() < 1e-18);
        let lr = kl_adapt_lr(5e-4, 0.004, 0.016, 1.5, BOUNDS);
        assert!((lr - 7.5e-4).abs() < 1e-18);
        assert_eq!(kl_adapt_lr(5e-4, 0.016, 0.016, 1.5, BOUNDS), 5e-4);
        assert_eq!(kl_adapt_lr(5e-4, 0.008, 0.016, 1.5, BOUNDS), 5e-4);
    }

    #[test]
    fn kl_controller_clamps() {
        assert_eq!(kl_adapt_lr(9e-3, 0.0, 0.016, 1.5, BOUNDS), 1e-2);
        assert_eq!(kl_adapt_lr(1.2e-6, 1.0, 0.016, 1.5, BOUNDS), 1e-6);
    }
}
