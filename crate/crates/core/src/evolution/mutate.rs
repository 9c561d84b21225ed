//! The three hyperparameter mutation operators.

use rand::Rng;

use crate::agents::HyperSet;
use crate::evolution::space::HyperSpace;
use crate::seeds::Stream;

/// `v` times a factor drawn from `U(factor_min, factor_max)`, before clamping.
pub fn perturb_value(v: f64, factor_min: f64, factor_max: f64, rng: &mut Stream) -> f64 {
    let f = if factor_min == factor_max {
        factor_min
    } else {
        rng.random_range(factor_min..factor_max)
    };
    v * f
}

/// Multiplier applied by one DexPBT draw; exactly 1 when the value is left alone.
pub fn dexpbt_factor(beta_mut: f64, mu_min: f64, mu_max: f64, rng: &mut Stream) -> f64 {
    if rng.random::<f64>() >= beta_mut {
        return 1.0;
    }
    let mu = if mu_min == mu_max {
        mu_min
    } else {
        rng.random_range(mu_min..mu_max)
    };
    if rng.random::<bool>() {
        mu
    } else {
        1.0 / mu
    }
}

/// Multiplies every declared hyperparameter by an independent factor, clamps and repairs pairs.
pub fn mutate_perturb(h: &HyperSet, space: &HyperSpace, factor_min: f64, factor_max: f64, rng: &mut Stream) -> HyperSet {
    let mut out = h.clone();
    for (name, b) in &space.bounds {
        if let Ok(v) = h.get(name) {
            out.set(name, b.clamp(perturb_value(v, factor_min, factor_max, rng)));
        }
    }
    space.sort_pairs(&mut out);
    out
}

/// Redraws every declared hyperparameter uniformly in its scale.
pub fn mutate_resample(h: &HyperSet, space: &HyperSpace, rng: &mut Stream) -> HyperSet {
    let mut out = h.clone();
    for (name, b) in &space.bounds {
        out.set(name, b.sample(rng));
    }
    space.sort_pairs(&mut out);
    out
}

/// With probability `beta_mut` multiplies or divides each value by `μ ~ U(mu_min, mu_max)`.
pub fn mutate_dexpbt(h: &HyperSet, space: &HyperSpace, beta_mut: f64, mu_min: f64, mu_max: f64, rng: &mut Stream) -> HyperSet {
    let mut out = h.clone();
    for (name, b) in &space.bounds {
        if let Ok(v) = h.get(name) {
            let f = dexpbt_factor(beta_mut, mu_min, mu_max, rng);
            if f != 1.0 {
                out.set(name, b.clamp(v * f));
            }
        }
    }
    space.sort_pairs(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::hypers::{ENTROPY_COEFF, KL_THRESHOLD, SIGMA_MAX, SIGMA_MIN};
    use crate::agents::Algorithm;
    use crate::evolution::space::{HyperBound, Scale};
    use crate::seeds::seed_stream;

    #[test]
    fn perturbed_entropy_coeff_stays_in_factor_band() {
        let space = HyperSpace::for_algorithm(Algorithm::Ppo);
        let h = space.defaults();
        let mut rng = seed_stream(1, 0, 0, "mutate");
        for _ in 0..1000 {
            let m = mutate_perturb(&h, &space, 0.8, 1.2, &mut rng);
            let v = m.get(ENTROPY_COEFF).unwrap();
            assert!((0.0008..=0.0012).contains(&v) || v == 0.001, "{v}");
            space.check(&m).unwrap();
        }
    }

    #[test]
    fn upper_bound_clamps() {
        let space = HyperSpace::for_algorithm(Algorithm::Ppo);
        let h = space.defaults();
        let mut rng = seed_stream(2, 0, 0, "mutate");
        let m = mutate_perturb(&h, &space, 1.1, 1.2, &mut rng);
        assert_eq!(m.get(KL_THRESHOLD).unwrap(), 0.016);
    }

    #[test]
    fn unit_factors_are_identity() {
        let space = HyperSpace::for_algorithm(Algorithm::Ddpg);
        let h = space.defaults();
        let mut rng = seed_stream(3, 0, 0, "mutate");
        assert_eq!(mutate_perturb(&h, &space, 1.0, 1.0, &mut rng), h);
        assert_eq!(mutate_dexpbt(&h, &space, 0.0, 1.1, 1.5, &mut rng), h);
    }

    #[test]
    fn divide_branch_arithmetic() {
        assert!((0.016 / 1.25 - 0.0128_f64).abs() < 1e-15);
    }

    #[test]
    fn resample_covers_declared_range() {
        let space = HyperSpace::for_algorithm(Algorithm::Ppo);
        let h = space.defaults();
        let mut rng = seed_stream(4, 0, 0, "mutate");
        for _ in 0..1000 {
            let v = mutate_resample(&h, &space, &mut rng).get(KL_THRESHOLD).unwrap();
            assert!((0.008..=0.016).contains(&v));
        }
    }

    #[test]
    fn inverted_pairs_are_repaired() {
        let mut space = HyperSpace::for_algorithm(Algorithm::Ddpg);
        space.bounds.insert(SIGMA_MIN.into(), HyperBound::new(0.01, 0.8, Scale::Linear, 0.01));
        space.bounds.insert(SIGMA_MAX.into(), HyperBound::new(0.5, 1.0, Scale::Linear, 1.0));
        space.validate().unwrap();
        let mut rng = seed_stream(5, 0, 0, "mutate");
        for _ in 0..2000 {
            let m = mutate_resample(&space.defaults(), &space, &mut rng);
            space.check(&m).unwrap();
        }
        let mut h = space.defaults();
        h.set(SIGMA_MIN, 0.8);
        h.set(SIGMA_MAX, 0.6);
        space.sort_pairs(&mut h);
        space.check(&h).unwrap();
    }

    #[test]
    fn operators_are_deterministic_under_a_fixed_stream() {
        let space = HyperSpace::for_algorithm(Algorithm::Sac);
        let h = space.defaults();
        let a = mutate_dexpbt(&h, &space, 0.5, 1.1, 1.5, &mut seed_stream(6, 0, 0, "m"));
        let b = mutate_dexpbt(&h, &space, 0.5, 1.1, 1.5, &mut seed_stream(6, 0, 0, "m"));
        assert_eq!(a, b);
    }
}
