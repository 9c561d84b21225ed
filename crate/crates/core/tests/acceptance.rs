//! End-to-end acceptance checks, one line of outcome per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 3 5`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use pbrl::agents::critic::{twin_q_loss, TwinCritic};
use pbrl::agents::hypers::{SURROGATE_H1, SURROGATE_H2};
use pbrl::agents::ppo::{ppo_loss, PpoMinibatch};
use pbrl::agents::replay::ReplayBatch;
use pbrl::agents::sac::sac_actor_loss;
use pbrl::agents::{
    gae_advantages, kl_adapt_lr, mixed_exploration_stds, nstep_targets, Activation, Algorithm, HyperSet, Mlp,
    PolicyNetConfig, PpoConfig, ReplayStore,
};
use pbrl::cli::compare::{best_true_objective, compare_schemes};
use pbrl::envpack::EnvName;
use pbrl::evolution::mutate::{dexpbt_factor, mutate_dexpbt, mutate_perturb, mutate_resample, perturb_value};
use pbrl::evolution::events::parse_log;
use pbrl::evolution::{EventRecord, HyperSpace, MutationScheme};
use pbrl::ndmath::{gaussian_log_prob, Tape};
use pbrl::orchestrator::trainer::{latest_checkpoint, EVENTS_FILE, METRICS_DIR};
use pbrl::orchestrator::{Checkpoint, HyperInit, Mode, RunConfig, Trainer};
use pbrl::parallel::Parallelism;
use pbrl::seeds::{seed_stream, Stream};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FD_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

struct Shape {
    obs_dim: usize,
    act_dim: usize,
    hidden: Vec<usize>,
}

fn random_shape(k: usize, rng: &mut Stream) -> Shape {
    if k == 0 {
        return Shape {
            obs_dim: 4,
            act_dim: 2,
            hidden: vec![64, 64],
        };
    }
    let depth = rng.random_range(0..=2);
    Shape {
        obs_dim: rng.random_range(1..=5),
        act_dim: rng.random_range(1..=3),
        hidden: (0..depth).map(|_| rng.random_range(1..=64)).collect(),
    }
}

fn normals(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Central differences over every parameter of `nets`, compared with `analytic`.
fn fd_compare(nets: &mut [Mlp], analytic: &[f64], eval: &dyn Fn(&[Mlp]) -> f64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for j in 0..nets.len() {
        let nblocks = nets[j].blocks().len();
        for b in 0..nblocks {
            let len = nets[j].blocks()[b].len();
            for i in 0..len {
                let orig = nets[j].blocks()[b].values()[i];
                nets[j].blocks_mut()[b].1.values_mut()[i] = orig + FD_STEP;
                let up = eval(nets);
                nets[j].blocks_mut()[b].1.values_mut()[i] = orig - FD_STEP;
                let down = eval(nets);
                nets[j].blocks_mut()[b].1.values_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let e = rel_err(analytic[flat], numeric);
                if !e.is_finite() {
                    return Err(format!("non-finite gradient at net {j} block {b} index {i}"));
                }
                worst = worst.max(e);
                flat += 1;
            }
        }
    }
    ensure(flat == analytic.len(), || format!("{} analytic vs {flat} numeric entries", analytic.len()))?;
    Ok(worst)
}

fn grads_of(nets: &[Mlp]) -> Vec<f64> {
    nets.iter()
        .flat_map(|n| n.blocks())
        .flat_map(|b| b.grad.clone().unwrap_or_else(|| vec![0.0; b.len()]))
        .collect()
}

fn zero_grads(nets: &mut [Mlp]) {
    for n in nets.iter_mut() {
        for (_, b) in n.blocks_mut() {
            b.zero_grad();
        }
    }
}

fn twin_from(q1: Mlp, q2: Mlp, shape: &Shape, rng: &mut Stream) -> TwinCritic {
    let net = PolicyNetConfig {
        obs_dim: shape.obs_dim,
        act_dim: shape.act_dim,
        hidden_units: vec![1],
        activation: Activation::Tanh,
    };
    let mut c = TwinCritic::new(&net, rng);
    c.q1_target = q1.clone();
    c.q2_target = q2.clone();
    c.q1 = q1;
    c.q2 = q2;
    c
}

fn ppo_head(shape: &Shape, rng: &mut Stream) -> Result<f64, String> {
    let (od, ad, b) = (shape.obs_dim, shape.act_dim, 6);
    let actor = Mlp::new("actor", od, &shape.hidden, ad, Activation::Tanh, 1.0, rng);
    let critic = Mlp::new("critic", od, &shape.hidden, 1, Activation::Tanh, 1.0, rng);
    let std = 0.7;
    let obs = normals(rng, b * od);
    let means = actor.predict(&obs, b);
    let actions: Vec<f64> = means.iter().map(|m| m + std * { let z: f64 = StandardNormal.sample(rng); z }).collect();
    let stds = vec![std; ad];
    // Old log-probs put each ratio clearly inside or clearly outside the clip range.
    let offsets = [-0.5, -0.05, 0.0, 0.05, 0.5, 0.03];
    let old_log_probs = (0..b)
        .map(|r| {
            let lp = gaussian_log_prob(&actions[r * ad..(r + 1) * ad], &means[r * ad..(r + 1) * ad], &stds);
            lp + offsets[r]
        })
        .collect();
    let mb = PpoMinibatch {
        rows: b,
        obs,
        actions,
        old_log_probs,
        advantages: vec![1.0, -0.7, 0.4, 1.3, -1.1, -0.2],
        returns: normals(rng, b),
    };
    let eval = |nets: &[Mlp]| {
        let mut tape = Tape::new();
        let av = nets[0].bind(&mut tape, false);
        let cv = nets[1].bind(&mut tape, false);
        let t = ppo_loss(&mut tape, &nets[0], &av, &nets[1], &cv, &mb, std, 0.2, 1e-3, 0.5).expect("loss");
        tape.scalar(t.total)
    };
    let mut nets = vec![actor, critic];
    zero_grads(&mut nets);
    let mut tape = Tape::new();
    let av = nets[0].bind(&mut tape, true);
    let cv = nets[1].bind(&mut tape, true);
    let t = ppo_loss(&mut tape, &nets[0], &av, &nets[1], &cv, &mb, std, 0.2, 1e-3, 0.5).map_err(e2s)?;
    let g = tape.backward(t.total).map_err(e2s)?;
    nets[0].store_grads(&g, &av).map_err(e2s)?;
    nets[1].store_grads(&g, &cv).map_err(e2s)?;
    let analytic = grads_of(&nets);
    fd_compare(&mut nets, &analytic, &eval)
}

fn q_head(shape: &Shape, rng: &mut Stream) -> Result<f64, String> {
    let (od, ad, b) = (shape.obs_dim, shape.act_dim, 6);
    let q1 = Mlp::new("q1", od + ad, &shape.hidden, 1, Activation::Tanh, 1.0, rng);
    let q2 = Mlp::new("q2", od + ad, &shape.hidden, 1, Activation::Tanh, 1.0, rng);
    let inputs = normals(rng, b * (od + ad));
    let targets = normals(rng, b);
    let eval = |nets: &[Mlp]| {
        let c = twin_from(nets[0].clone(), nets[1].clone(), shape, &mut seed_stream(0, 0, 0, "fd"));
        let mut tape = Tape::new();
        let v1 = c.q1.bind(&mut tape, false);
        let v2 = c.q2.bind(&mut tape, false);
        let x = tape.constant_from(vec![b, od + ad], inputs.clone()).expect("shape");
        let l = twin_q_loss(&mut tape, &c, &v1, &v2, x, &targets).expect("loss");
        tape.scalar(l)
    };
    let mut nets = vec![q1, q2];
    zero_grads(&mut nets);
    let c = twin_from(nets[0].clone(), nets[1].clone(), shape, rng);
    let mut tape = Tape::new();
    let v1 = c.q1.bind(&mut tape, true);
    let v2 = c.q2.bind(&mut tape, true);
    let x = tape.constant_from(vec![b, od + ad], inputs.clone()).map_err(e2s)?;
    let l = twin_q_loss(&mut tape, &c, &v1, &v2, x, &targets).map_err(e2s)?;
    let g = tape.backward(l).map_err(e2s)?;
    nets[0].store_grads(&g, &v1).map_err(e2s)?;
    nets[1].store_grads(&g, &v2).map_err(e2s)?;
    let analytic = grads_of(&nets);
    fd_compare(&mut nets, &analytic, &eval)
}

fn sac_head(shape: &Shape, rng: &mut Stream) -> Result<f64, String> {
    let (od, ad, b) = (shape.obs_dim, shape.act_dim, 6);
    let actor = Mlp::new("actor", od, &shape.hidden, 2 * ad, Activation::Tanh, 0.5, rng);
    let q1 = Mlp::new("q1", od + ad, &shape.hidden, 1, Activation::Tanh, 1.0, rng);
    let q2 = Mlp::new("q2", od + ad, &shape.hidden, 1, Activation::Tanh, 1.0, rng);
    let critic = twin_from(q1, q2, shape, rng);
    let obs = normals(rng, b * od);
    let eps = normals(rng, b * ad);
    let (alpha, bound) = (0.3, 2.0);
    let eval = |nets: &[Mlp]| {
        let mut tape = Tape::new();
        let av = nets[0].bind(&mut tape, false);
        let l = sac_actor_loss(&mut tape, &nets[0], &av, &critic, &obs, &eps, alpha, bound).expect("loss");
        tape.scalar(l.loss)
    };
    let mut nets = vec![actor];
    zero_grads(&mut nets);
    let mut tape = Tape::new();
    let av = nets[0].bind(&mut tape, true);
    let l = sac_actor_loss(&mut tape, &nets[0], &av, &critic, &obs, &eps, alpha, bound).map_err(e2s)?;
    let g = tape.backward(l.loss).map_err(e2s)?;
    nets[0].store_grads(&g, &av).map_err(e2s)?;
    let analytic = grads_of(&nets);
    fd_compare(&mut nets, &analytic, &eval)
}

fn gradients_match_finite_differences() -> Outcome {
    let mut rng = seed_stream(2024, 0, 0, "shapes");
    let mut worst = [0.0f64; 3];
    for k in 0..10 {
        let shape = random_shape(k, &mut rng);
        let heads: [(&str, fn(&Shape, &mut Stream) -> Result<f64, String>); 3] =
            [("ppo", ppo_head), ("q-mse", q_head), ("sac-actor", sac_head)];
        for (h, (name, f)) in heads.iter().enumerate() {
            let mut r = seed_stream(2024, k as u64, h as u64, "fd");
            let e = f(&shape, &mut r)?;
            ensure(e <= FD_TOL, || {
                format!(
                    "{name} head on obs {} act {} hidden {:?}: max rel err {e:.3e}",
                    shape.obs_dim, shape.act_dim, shape.hidden
                )
            })?;
            worst[h] = worst[h].max(e);
        }
    }
    Ok(format!(
        "10 shapes x 3 heads; max rel err ppo {:.2e}, q-mse {:.2e}, sac-actor {:.2e}",
        worst[0], worst[1], worst[2]
    ))
}

// ---------------------------------------------------------------- 2

/// Advantage as the explicit forward sum `Σ_l (γλ)^l δ_{t+l}` cut at episode ends.
fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], boot: &[f64], n: usize, g: f64, l: f64) -> Vec<f64> {
    let t_len = r.len() / n;
    let value_after = |t: usize, e: usize| if t + 1 == t_len { boot[e] } else { v[(t + 1) * n + e] };
    let delta = |t: usize, e: usize| {
        let i = t * n + e;
        let next = if d[i] { 0.0 } else { value_after(t, e) };
        r[i] + g * next - v[i]
    };
    let mut out = vec![0.0; r.len()];
    for e in 0..n {
        for t in 0..t_len {
            let mut acc = 0.0;
            for k in t..t_len {
                acc += (g * l).powi((k - t) as i32) * delta(k, e);
                if d[k * n + e] {
                    break;
                }
            }
            out[t * n + e] = acc;
        }
    }
    out
}

/// `Σ_{k<K} γ^k r_{t+k}` plus `γ^K V(s_{t+K})` unless a true terminal came first.
fn nstep_oracle(rewards: &[f64], ends: &[(bool, bool)], t: usize, n: usize, gamma: f64, value: f64) -> f64 {
    let mut g = 0.0;
    for k in 0..n {
        g += gamma.powi(k as i32) * rewards[t + k];
        let (done, terminal) = ends[t + k];
        if done {
            return if terminal { g } else { g + gamma.powi(k as i32 + 1) * value };
        }
    }
    g + gamma.powi(n as i32) * value
}

fn oracles_agree_on_random_instances() -> Outcome {
    let mut rng = seed_stream(7, 0, 0, "oracles");
    let mut worst_gae: f64 = 0.0;
    let mut worst_nstep: f64 = 0.0;
    let mut segments = 0usize;
    for inst in 0..1000 {
        // GAE over time-major T×N arrays.
        let t_len = rng.random_range(1..=16);
        let n = rng.random_range(1..=3);
        let len = t_len * n;
        let r = normals(&mut rng, len);
        let v = normals(&mut rng, len);
        let d: Vec<bool> = (0..len).map(|_| rng.random_bool(0.2)).collect();
        let boot = normals(&mut rng, n);
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, ret) = gae_advantages(&r, &v, &d, &boot, n, gamma, lambda).map_err(e2s)?;
        let expect = gae_oracle(&r, &v, &d, &boot, n, gamma, lambda);
        for i in 0..len {
            worst_gae = worst_gae.max((adv[i] - expect[i]).abs()).max((ret[i] - expect[i] - v[i]).abs());
        }

        // n-step segments assembled by the replay store from one env's stream.
        let nstep = rng.random_range(1..=5);
        let steps = rng.random_range(1..=16);
        let rewards = normals(&mut rng, steps);
        let ends: Vec<(bool, bool)> = (0..steps)
            .map(|_| {
                let done = rng.random_bool(0.25);
                (done, done && rng.random_bool(0.5))
            })
            .collect();
        let value = |s: f64| 0.3 * s - 0.1 * s * s;
        let mut store = ReplayStore::new(64, 1, 1, nstep, 1).map_err(e2s)?;
        for t in 0..steps {
            let (done, terminal) = ends[t];
            store
                .push_step(0, &[t as f64], &[0.0], rewards[t], &[t as f64 + 1.0], done, terminal)
                .map_err(e2s)?;
        }
        let batch = ReplayBatch {
            size: store.fill,
            obs: store.obs.clone(),
            actions: store.actions.clone(),
            rewards: store.rewards.clone(),
            reward_counts: store.reward_counts.clone(),
            next_obs: store.next_obs.clone(),
            terminal: store.terminal.clone(),
            n_step: nstep,
        };
        let boot: Vec<f64> = batch.next_obs.iter().map(|s| value(*s)).collect();
        let got = nstep_targets(&batch, gamma, &boot);
        let mut seen = vec![false; steps];
        for (i, g) in got.iter().enumerate() {
            let t = batch.obs[i] as usize;
            seen[t] = true;
            // The state reached after min(n, steps to episode end) steps.
            let mut k = 0;
            while k < nstep && !(k > 0 && ends[t + k - 1].0) {
                k += 1;
                if t + k > steps {
                    return Err(format!("instance {inst}: segment at t={t} runs past the data"));
                }
            }
            let expect = nstep_oracle(&rewards, &ends, t, nstep, gamma, value((t + k) as f64));
            worst_nstep = worst_nstep.max((g - expect).abs());
        }
        // Every step except a trailing incomplete segment must be stored.
        let last_end = ends.iter().rposition(|e| e.0).map(|p| p + 1).unwrap_or(0);
        let complete = last_end + (steps - last_end).saturating_sub(nstep - 1);
        ensure(seen.iter().filter(|s| **s).count() == complete, || {
            format!("instance {inst}: {} segments stored, {complete} expected", got.len())
        })?;
        segments += got.len();
    }
    ensure(worst_gae <= 1e-10, || format!("gae max abs err {worst_gae:.3e}"))?;
    ensure(worst_nstep <= 1e-10, || format!("n-step max abs err {worst_nstep:.3e}"))?;
    Ok(format!(
        "1000 instances; gae max err {worst_gae:.1e}, n-step max err {worst_nstep:.1e} over {segments} segments"
    ))
}

// ---------------------------------------------------------------- 3

fn mixed_exploration_is_linear() -> Outcome {
    let mut worst: f64 = 0.0;
    for (lo, hi) in [(0.01, 1.0), (0.05, 0.5), (0.1, 0.1), (0.0, 3.0)] {
        for n in [1usize, 2, 3, 7, 1024] {
            let s = mixed_exploration_stds(n, lo, hi).map_err(e2s)?;
            ensure(s.len() == n, || format!("N={n}: {} stds", s.len()))?;
            ensure(s[0] == lo, || format!("N={n}: first std {} != {lo}", s[0]))?;
            if n == 1 {
                continue;
            }
            ensure(s[n - 1] == hi, || format!("N={n}: last std {} != {hi}", s[n - 1]))?;
            for (i, v) in s.iter().enumerate() {
                let expect = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                worst = worst.max((v - expect).abs() / f64::EPSILON / hi.max(1.0));
            }
        }
    }
    ensure(worst <= 4.0, || format!("deviation from the line of {worst:.1} ulp"))?;
    Ok(format!("endpoints exact, max deviation {worst:.1} ulp, N in {{1,2,3,7,1024}}"))
}

// ---------------------------------------------------------------- 4

/// Two-sided Kolmogorov–Smirnov statistic against U(0, 1).
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

fn mutation_distributions() -> Outcome {
    let mut rng = seed_stream(99, 0, 0, "mutation");
    // (a) perturbation factors before clamping.
    for h in [1e-4, 0.016, 0.5, -20.0] {
        for _ in 0..10_000 {
            let out = perturb_value(h, 0.8, 1.2, &mut rng);
            let (a, b) = (0.8 * h, 1.2 * h);
            ensure(out >= a.min(b) && out <= a.max(b), || format!("perturb({h}) = {out}"))?;
        }
    }
    let mut wide = HyperSpace::for_algorithm(Algorithm::Surrogate);
    for b in wide.bounds.values_mut() {
        b.lower = 1e-9;
        b.upper = 1e9;
    }
    let h0 = HyperSet::from_pairs([(SURROGATE_H1, 0.03), (SURROGATE_H2, 0.5)]);
    for _ in 0..10_000 {
        let out = mutate_perturb(&h0, &wide, 0.8, 1.2, &mut rng);
        for (k, v) in out.iter() {
            let f = v / h0.get(k).map_err(e2s)?;
            ensure((0.8..=1.2).contains(&f), || format!("perturb factor {f} for {k}"))?;
        }
    }

    // (b) DexPBT changed fraction and multiplier ranges.
    let space = HyperSpace::for_algorithm(Algorithm::Surrogate);
    let mut changed = 0usize;
    let mut total = 0usize;
    let in_range = |f: f64| (1.1..=1.5).contains(&f) || (1.0 / 1.5..=1.0 / 1.1).contains(&f);
    for _ in 0..10_000 {
        let out = mutate_dexpbt(&h0, &space, 0.5, 1.1, 1.5, &mut rng);
        for (k, v) in out.iter() {
            let f = v / h0.get(k).map_err(e2s)?;
            total += 1;
            if f != 1.0 {
                changed += 1;
                ensure(in_range(f), || format!("dexpbt multiplier {f}"))?;
            }
        }
        let f = dexpbt_factor(0.5, 1.1, 1.5, &mut rng);
        ensure(f == 1.0 || in_range(f), || format!("dexpbt factor {f}"))?;
    }
    let frac = changed as f64 / total as f64;
    ensure((frac - 0.5).abs() <= 0.02, || format!("dexpbt changed fraction {frac:.4}"))?;

    // (c) resampling is uniform in each declared scale.
    let crit = 1.628 / (10_000f64).sqrt();
    let mut worst_ks: f64 = 0.0;
    for alg in [Algorithm::Ppo, Algorithm::Sac, Algorithm::Ddpg, Algorithm::Surrogate] {
        let space = HyperSpace::for_algorithm(alg);
        let h = space.defaults();
        let mut draws: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for _ in 0..10_000 {
            let out = mutate_resample(&h, &space, &mut rng);
            for (k, v) in out.iter() {
                draws.entry(k.to_string()).or_default().push(space.get(k).map_err(e2s)?.unit(v));
            }
        }
        for (k, xs) in draws {
            let d = ks_uniform(xs);
            ensure(d < crit, || format!("{alg}.{k}: KS statistic {d:.4} >= {crit:.4}"))?;
            worst_ks = worst_ks.max(d);
        }
    }
    Ok(format!(
        "perturb within [0.8h, 1.2h]; dexpbt changed fraction {frac:.5} of {total}; resample max KS {worst_ks:.4} < {crit:.4}"
    ))
}

// ---------------------------------------------------------------- 5

struct Snapshot {
    digests: Vec<String>,
}

fn audit_event(records: &[EventRecord], pre: &Snapshot, post: &[String], space: &HyperSpace, t: &Trainer) -> Result<(), String> {
    let Some(EventRecord::Partition { top, mid, bottom, before, after, .. }) = records.first() else {
        return Err("event without a partition record".into());
    };
    ensure((top.len(), mid.len(), bottom.len()) == (2, 4, 2), || {
        format!("partition sizes ({}, {}, {})", top.len(), mid.len(), bottom.len())
    })?;
    ensure(before == &pre.digests, || "logged pre-event digests differ from observed".into())?;
    ensure(after == post, || "logged post-event digests differ from observed".into())?;
    for &i in top.iter().chain(mid) {
        ensure(post[i] == pre.digests[i], || format!("top/mid agent {i} changed"))?;
    }
    let replacements: Vec<_> = records[1..].iter().collect();
    ensure(replacements.len() == bottom.len(), || format!("{} replacements", replacements.len()))?;
    for r in replacements {
        let EventRecord::Replacement { child, parent, .. } = r else {
            return Err("non-replacement record after partition".into());
        };
        ensure(bottom.contains(child), || format!("child {child} not in bottom"))?;
        ensure(top.contains(parent), || format!("parent {parent} not in top"))?;
        ensure(post[*child] == pre.digests[*parent], || {
            format!("child {child} parameters differ from parent {parent} at event time")
        })?;
    }
    for a in &t.pop.agents {
        space.check(&a.hypers).map_err(e2s)?;
    }
    Ok(())
}

fn audited_run(cfg: RunConfig, dir: &Path) -> Result<usize, String> {
    let (n_start, n_evo) = (cfg.evolution.n_start, cfg.evolution.n_evo);
    let mut t = Trainer::new(cfg).map_err(e2s)?;
    let space = t.space().clone();
    let mut events = 0;
    let mut fired = Vec::new();
    while !t.finished() {
        t.train_step().map_err(e2s)?;
        let pre = Snapshot {
            digests: t.pop.agents.iter().map(|a| a.digest()).collect(),
        };
        let records = t.maybe_evolve().map_err(e2s)?;
        if records.is_empty() {
            continue;
        }
        let steps = t.pop.env_steps();
        ensure(steps > n_start, || format!("event at {steps} steps, before {n_start}"))?;
        fired.push(steps);
        let post: Vec<String> = t.pop.agents.iter().map(|a| a.digest()).collect();
        audit_event(&records, &pre, &post, &space, &t)?;
        events += 1;
    }
    t.save_checkpoint().map_err(e2s)?;
    drop(t);
    for w in fired.windows(2) {
        ensure(w[1] / n_evo > w[0] / n_evo, || format!("two events in one window: {w:?}"))?;
    }
    // The on-disk log tells the same story.
    let text = fs::read_to_string(dir.join(EVENTS_FILE)).map_err(e2s)?;
    let log = parse_log(&text).map_err(e2s)?;
    let logged: Vec<u64> = log
        .iter()
        .filter(|r| matches!(r, EventRecord::Partition { .. }))
        .map(|r| r.step())
        .collect();
    ensure(logged == fired, || format!("log steps {logged:?} vs observed {fired:?}"))?;
    ensure(log.iter().filter(|r| r.is_replacement()).count() == 2 * events, || {
        "replacement count in log".into()
    })?;
    ensure(events > 0, || "no events fired".into())?;
    Ok(events)
}

fn evolution_semantics_n8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e2s)?;

    let mut s = RunConfig::for_task(Algorithm::Surrogate, EnvName::Surrogate);
    s.run.population_size = 8;
    s.run.seed = Some(5);
    s.run.env_steps_per_agent = 1500;
    s.run.deterministic = true;
    s.run.out_dir = tmp.path().join("surrogate");
    let dir = s.run.out_dir.clone();
    let e1 = audited_run(s, &dir)?;

    let mut p = RunConfig::for_task(Algorithm::Ppo, EnvName::Pointmass);
    p.run.population_size = 8;
    p.run.envs_per_agent = 2;
    p.run.seed = Some(6);
    p.run.env_steps_per_agent = 2400;
    p.run.deterministic = true;
    p.ppo.hidden_units = vec![8];
    p.ppo.horizon = 8;
    p.ppo.minibatch_size = 16;
    p.ppo.epochs = 2;
    p.evolution.n_start = 400;
    p.evolution.n_evo = 400;
    p.run.out_dir = tmp.path().join("ppo");
    let dir = p.run.out_dir.clone();
    let e2 = audited_run(p, &dir)?;

    let mut d = RunConfig::for_task(Algorithm::Ddpg, EnvName::Pointmass);
    d.run.population_size = 8;
    d.run.envs_per_agent = 2;
    d.run.seed = Some(7);
    d.run.env_steps_per_agent = 1200;
    d.run.deterministic = true;
    d.offpolicy.hidden_units = vec![8];
    d.offpolicy.horizon = 4;
    d.offpolicy.warmup = 32;
    d.offpolicy.batch_size = 16;
    d.offpolicy.updates_per_step = 1;
    d.evolution.n_start = 200;
    d.evolution.n_evo = 200;
    d.run.out_dir = tmp.path().join("ddpg");
    let dir = d.run.out_dir.clone();
    let e3 = audited_run(d, &dir)?;

    Ok(format!(
        "{e1} surrogate, {e2} ppo and {e3} ddpg events audited: (2,4,2), copies bit-equal, others unchanged, hypers in bounds"
    ))
}

// ---------------------------------------------------------------- 6

fn kl_adaptive_lr_sequence() -> Outcome {
    let cfg = PpoConfig::default();
    let kls = [0.02, 0.02, 0.004, 0.01, 0.02];
    let hand = [1e-3 / 3.0, 2e-3 / 9.0, 1e-3 / 3.0, 1e-3 / 3.0, 2e-3 / 9.0];
    let printed = ["3.333e-4", "2.222e-4", "3.333e-4", "3.333e-4", "2.222e-4"];
    let mut lr = 5e-4;
    let mut got = Vec::new();
    for (i, kl) in kls.iter().enumerate() {
        lr = kl_adapt_lr(lr, *kl, 0.016, 1.5, (cfg.lr_min, cfg.lr_max));
        ensure(((lr - hand[i]) / hand[i]).abs() < 1e-12, || format!("step {i}: {lr:e} vs {:e}", hand[i]))?;
        ensure(format!("{lr:.3e}").replace("e-4", "e-4") == printed[i], || {
            format!("step {i}: {lr:.3e} vs {}", printed[i])
        })?;
        got.push(format!("{lr:.3e}"));
    }
    Ok(format!("trajectory [{}]", got.join(", ")))
}

// ---------------------------------------------------------------- 7

fn ppo_pendulum_learns() -> Outcome {
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in 0..4u64 {
        let mut cfg = RunConfig::for_task(Algorithm::Ppo, EnvName::Pendulum);
        cfg.run.mode = Mode::Baseline;
        cfg.run.population_size = 1;
        cfg.run.envs_per_agent = 4;
        cfg.run.env_steps_per_agent = 300_000;
        cfg.run.seed = Some(seed);
        cfg.run.deterministic = true;
        cfg.hypers.init = HyperInit::Default;
        let mut t = Trainer::in_memory(cfg).map_err(e2s)?;
        while !t.finished() {
            t.iterate().map_err(e2s)?;
        }
        // Baseline mode never clears the window, so it holds every training episode in order.
        let w = &t.pop.agents[0].fitness_window;
        let k = w.len() / 10;
        ensure(k > 0, || "no completed episodes".into())?;
        let initial = w[..k].iter().sum::<f64>() / k as f64;
        let last = w[w.len() - k..].iter().sum::<f64>() / k as f64;
        let frac = (last - initial) / (0.0 - initial);
        if frac >= 0.5 {
            passed += 1;
        }
        notes.push(format!("{initial:.0}->{last:.0} ({frac:.2})"));
    }
    let detail = format!("{passed}/4 seeds closed >= 50% of the gap: {}", notes.join(", "));
    ensure(passed >= 3, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn misinitialised_surrogate(seed: u64, mode: Mode) -> RunConfig {
    let mut cfg = RunConfig::for_task(Algorithm::Surrogate, EnvName::Surrogate);
    cfg.run.mode = mode;
    cfg.run.population_size = 4;
    cfg.run.seed = Some(seed);
    cfg.run.deterministic = true;
    for h in [SURROGATE_H1, SURROGATE_H2] {
        cfg.hypers.init_range.insert(h.to_string(), [1e-3, 3e-3]);
    }
    cfg
}

fn final_best(cfg: RunConfig) -> Result<f64, String> {
    let mut t = Trainer::in_memory(cfg).map_err(e2s)?;
    t.run().map_err(e2s)?;
    Ok(best_true_objective(&t.pop))
}

fn pbrl_beats_baseline() -> Outcome {
    let mut wins = 0;
    let (mut sum_p, mut sum_b) = (0.0, 0.0);
    for seed in 0..20 {
        let p = final_best(misinitialised_surrogate(seed, Mode::Pbrl))?;
        let b = final_best(misinitialised_surrogate(seed, Mode::Baseline))?;
        if p > b {
            wins += 1;
        }
        sum_p += p;
        sum_b += b;
    }
    let detail = format!(
        "pbrl best exceeded baseline best in {wins}/20 paired trials (mean {:.4} vs {:.4})",
        sum_p / 20.0,
        sum_b / 20.0
    );
    ensure(wins >= 14, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn scheme_harness_is_deterministic() -> Outcome {
    let base = misinitialised_surrogate(0, Mode::Pbrl);
    let seeds = [0, 1, 2];
    let a = compare_schemes(&base, &seeds, Parallelism::Sequential).map_err(e2s)?;
    let b = compare_schemes(&base, &seeds, Parallelism::Parallel).map_err(e2s)?;
    ensure(a == b, || "traces differ between repeated runs".into())?;
    ensure(a.traces.len() == 9, || format!("{} traces", a.traces.len()))?;
    for s in MutationScheme::ALL {
        ensure(a.summary.iter().any(|r| r.scheme == s), || format!("no summary for {s}"))?;
    }
    let tmp = tempfile::tempdir().map_err(e2s)?;
    a.write(tmp.path()).map_err(e2s)?;
    let svg = fs::read_to_string(tmp.path().join("schemes.svg")).map_err(e2s)?;
    let csv = fs::read_to_string(tmp.path().join("schemes.csv")).map_err(e2s)?;
    let table = fs::read_to_string(tmp.path().join("summary.txt")).map_err(e2s)?;
    ensure(svg.matches("<polygon").count() == 3, || "svg should hold three bands".into())?;
    for s in MutationScheme::ALL {
        ensure(svg.contains(s.as_str()) && csv.contains(s.as_str()) && table.contains(s.as_str()), || {
            format!("{s} missing from outputs")
        })?;
    }
    let finals: Vec<String> = a.summary.iter().map(|s| format!("{} {:.4}", s.scheme, s.final_mean)).collect();
    Ok(format!("3 schemes x 3 seeds reproduced exactly; final best {}", finals.join(", ")))
}

// ---------------------------------------------------------------- 10

fn metrics_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir.join(METRICS_DIR)).map_err(e2s)? {
        let e = e.map_err(e2s)?;
        out.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).map_err(e2s)?);
    }
    out.insert(EVENTS_FILE.into(), fs::read(dir.join(EVENTS_FILE)).map_err(e2s)?);
    Ok(out)
}

fn run_to(mut cfg: RunConfig, dir: &Path, steps: u64) -> Result<(), String> {
    cfg.run.out_dir = dir.to_path_buf();
    cfg.run.env_steps_per_agent = steps;
    Trainer::new(cfg).map_err(e2s)?.run().map_err(e2s)?;
    Ok(())
}

fn check_replay_and_resume(name: &str, cfg: RunConfig, root: &Path) -> Result<String, String> {
    let per_iter = cfg.agent_spec().steps_per_iteration();
    let full = 100 * per_iter;
    let (a, b, c, par) = (root.join(format!("{name}_a")), root.join(format!("{name}_b")), root.join(format!("{name}_c")), root.join(format!("{name}_par")));
    run_to(cfg.clone(), &a, full)?;
    run_to(cfg.clone(), &b, full)?;
    let ma = metrics_files(&a)?;
    ensure(ma == metrics_files(&b)?, || format!("{name}: repeated runs differ"))?;

    let mut pcfg = cfg.clone();
    pcfg.run.deterministic = false;
    let mut pt = Trainer::new(RunConfig {
        run: pbrl::orchestrator::RunSection {
            out_dir: par.clone(),
            env_steps_per_agent: full,
            ..pcfg.run.clone()
        },
        ..pcfg
    })
    .map_err(e2s)?;
    pt.set_parallelism(Parallelism::Parallel);
    pt.run().map_err(e2s)?;
    drop(pt);
    ensure(ma == metrics_files(&par)?, || format!("{name}: worker pool changed the results"))?;

    run_to(cfg.clone(), &c, 50 * per_iter)?;
    let ckpt = Checkpoint::load(&latest_checkpoint(&c).map_err(e2s)?).map_err(e2s)?;
    ensure(ckpt.population.iteration == 50, || format!("{name}: checkpoint at {}", ckpt.population.iteration))?;
    let mut rcfg = cfg.clone();
    rcfg.run.out_dir = c.clone();
    rcfg.run.env_steps_per_agent = full;
    Trainer::resume(rcfg, ckpt).map_err(e2s)?.run().map_err(e2s)?;
    ensure(ma == metrics_files(&c)?, || format!("{name}: 50+50 resume differs from 100 straight"))?;
    let end_a = fs::read(latest_checkpoint(&a).map_err(e2s)?).map_err(e2s)?;
    let end_c = fs::read(latest_checkpoint(&c).map_err(e2s)?).map_err(e2s)?;
    ensure(end_a == end_c, || format!("{name}: final checkpoints differ"))?;
    let events = String::from_utf8_lossy(&ma[EVENTS_FILE]).lines().filter(|l| l.starts_with("kind=partition")).count();
    Ok(format!("{name} ({events} events)"))
}

fn determinism_and_resume() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e2s)?;

    let mut p = RunConfig::for_task(Algorithm::Ppo, EnvName::Pendulum);
    p.run.seed = Some(11);
    p.run.envs_per_agent = 2;
    p.run.deterministic = true;
    p.ppo.hidden_units = vec![8];
    p.ppo.horizon = 8;
    p.ppo.minibatch_size = 8;
    p.ppo.epochs = 2;
    p.evolution.n_start = 320;
    p.evolution.n_evo = 320;

    let mut d = RunConfig::for_task(Algorithm::Ddpg, EnvName::Pointmass);
    d.run.seed = Some(12);
    d.run.envs_per_agent = 2;
    d.run.deterministic = true;
    d.offpolicy.hidden_units = vec![16];
    d.offpolicy.horizon = 4;
    d.offpolicy.warmup = 64;
    d.offpolicy.batch_size = 32;
    d.offpolicy.updates_per_step = 1;
    d.evolution.n_start = 160;
    d.evolution.n_evo = 160;

    let mut s = RunConfig::for_task(Algorithm::Sac, EnvName::Pendulum);
    s.run.seed = Some(13);
    s.run.envs_per_agent = 2;
    s.run.deterministic = true;
    s.offpolicy.hidden_units = vec![16];
    s.offpolicy.horizon = 4;
    s.offpolicy.warmup = 64;
    s.offpolicy.batch_size = 32;
    s.offpolicy.updates_per_step = 1;
    s.evolution.n_start = 160;
    s.evolution.n_evo = 160;

    let mut done = Vec::new();
    for (name, cfg) in [("ppo", p), ("ddpg", d), ("sac", s)] {
        done.push(check_replay_and_resume(name, cfg, tmp.path())?);
    }
    Ok(format!(
        "byte-identical metrics on replay, under the worker pool, and after 50+50 resume: {}",
        done.join(", ")
    ))
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("analytic gradients match finite differences", gradients_match_finite_differences),
        ("advantage and n-step targets match brute-force oracles", oracles_agree_on_random_instances),
        ("mixed exploration noise is linear with exact endpoints", mixed_exploration_is_linear),
        ("mutation operators have the declared distributions", mutation_distributions),
        ("evolution events audited on an 8-agent population", evolution_semantics_n8),
        ("KL-adaptive learning rate follows the hand-computed path", kl_adaptive_lr_sequence),
        ("single-agent PPO learns pendulum", ppo_pendulum_learns),
        ("population beats independent agents on the surrogate", pbrl_beats_baseline),
        ("mutation-scheme comparison is deterministic", scheme_harness_is_deterministic),
        ("deterministic replay and checkpoint resume", determinism_and_resume),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS [{secs:.1}s] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL [{secs:.1}s] {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
