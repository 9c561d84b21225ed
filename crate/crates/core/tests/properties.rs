use proptest::prelude::*;

use pbrl::agents::Algorithm;
use pbrl::evolution::{rank_and_partition, EvolutionConfig, HyperSpace, MutationScheme};
use pbrl::seeds::seed_stream;

fn algorithm() -> impl Strategy<Value = Algorithm> {
    prop_oneof![
        Just(Algorithm::Ppo),
        Just(Algorithm::Sac),
        Just(Algorithm::Ddpg),
        Just(Algorithm::Surrogate)
    ]
}

fn scheme() -> impl Strategy<Value = MutationScheme> {
    prop_oneof![
        Just(MutationScheme::Perturb),
        Just(MutationScheme::Resample),
        Just(MutationScheme::Dexpbt)
    ]
}

proptest! {
    #[test]
    fn partition_covers_every_agent_once(fit in prop::collection::vec(-1e3f64..1e3, 2..64)) {
        let p = rank_and_partition(&fit);
        let q = (fit.len() / 4).max(1);
        prop_assert_eq!(p.sizes(), (q, fit.len() - 2 * q, q));
        let mut all: Vec<usize> = p.top.iter().chain(&p.mid).chain(&p.bottom).copied().collect();
        let ranked = all.clone();
        all.sort_unstable();
        prop_assert_eq!(all, (0..fit.len()).collect::<Vec<_>>());
        for w in ranked.windows(2) {
            prop_assert!(fit[w[0]] > fit[w[1]] || (fit[w[0]] == fit[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn boundaries_are_multiples_above_the_start(n_start in 0u64..5000, n_evo in 1u64..2000, hops in 0usize..5) {
        let cfg = EvolutionConfig { n_start, n_evo, ..EvolutionConfig::default() };
        let mut b = cfg.next_boundary(None);
        prop_assert!(b > n_start && b.is_multiple_of(n_evo) && b - n_evo <= n_start);
        for _ in 0..hops {
            let next = cfg.next_boundary(Some(b));
            prop_assert_eq!(next, b + n_evo);
            b = next;
        }
    }

    #[test]
    fn mutation_stays_in_bounds(alg in algorithm(), scheme in scheme(), seed in any::<u64>()) {
        let space = HyperSpace::for_algorithm(alg);
        let cfg = EvolutionConfig { scheme, ..EvolutionConfig::default() };
        let mut rng = seed_stream(seed, 0, 0, "prop");
        let mut h = space.defaults();
        for _ in 0..20 {
            h = cfg.mutate(&h, &space, &mut rng);
            prop_assert!(space.check(&h).is_ok(), "{:?}", space.check(&h));
        }
    }

    #[test]
    fn unit_map_is_monotone_and_bounded(alg in algorithm(), seed in any::<u64>()) {
        let space = HyperSpace::for_algorithm(alg);
        let mut rng = seed_stream(seed, 0, 0, "unit");
        for b in space.bounds.values() {
            let (x, y) = (b.sample(&mut rng), b.sample(&mut rng));
            let (ux, uy) = (b.unit(x), b.unit(y));
            prop_assert!((0.0..=1.0).contains(&ux));
            prop_assert!((x <= y) == (ux <= uy) || x == y);
        }
    }
}
