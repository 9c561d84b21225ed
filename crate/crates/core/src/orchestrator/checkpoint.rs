//! Binary checkpoint: `PBRL` magic, LE version, tagged length-prefixed sections, 8-byte checksum.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::agents::critic::TwinCritic;
use crate::agents::replay::PendingStep;
use crate::agents::{
    Activation, AgentState, DdpgLearner, HyperSet, Learner, Mlp, PpoLearner, ReplayStore, SacLearner,
    SurrogateLearner,
};
use crate::envpack::{EnvBatch, EnvBatchState, EnvKind};
use crate::error::{Error, Result};
use crate::evolution::EventRecord;
use crate::ndmath::{AdamState, ParamTensor};
use crate::orchestrator::PopulationState;
use crate::seeds::{Stream, StreamState};

pub const MAGIC: &[u8; 4] = b"PBRL";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    /// Fingerprint of the run configuration that produced the state.
    pub config_hash: [u8; 32],
    pub population: PopulationState,
}

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let d = Sha256::digest(bytes);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&d[..CHECKSUM_LEN]);
    out
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        self.len(xs.len());
        xs.iter().for_each(|x| self.f64(*x));
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        self.bool(v.is_some());
        if let Some(v) = v {
            self.f64(v);
        }
    }
    fn stream(&mut self, rng: &Stream) {
        let s = StreamState::capture(rng);
        self.0.extend_from_slice(&s.seed);
        self.u64(s.stream);
        self.u128(s.word_pos);
    }
    fn streams(&mut self, rngs: &[Stream]) {
        self.len(rngs.len());
        rngs.iter().for_each(|r| self.stream(r));
    }
    fn tensor(&mut self, t: &ParamTensor) {
        self.len(t.shape().len());
        t.shape().iter().for_each(|d| self.len(*d));
        self.f64s(t.values());
        self.bool(t.requires_grad);
        self.bool(t.grad.is_some());
        if let Some(g) = &t.grad {
            self.f64s(g);
        }
    }
    fn mlp(&mut self, m: &Mlp) {
        self.str(m.name());
        self.u8(match m.activation() {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
        let blocks = m.blocks();
        self.len(blocks.len());
        blocks.iter().for_each(|b| self.tensor(b));
    }
    fn adam(&mut self, a: &AdamState) {
        self.u64(a.step);
        self.len(a.m.len());
        for (m, v) in a.m.iter().zip(&a.v) {
            self.f64s(m);
            self.f64s(v);
        }
    }
    fn critic(&mut self, c: &TwinCritic) {
        for m in [&c.q1, &c.q2, &c.q1_target, &c.q2_target] {
            self.mlp(m);
        }
        self.adam(&c.optimizer);
    }
    fn replay(&mut self, r: &ReplayStore) {
        for v in [r.capacity, r.obs_dim, r.act_dim, r.n_step, r.cursor, r.fill] {
            self.len(v);
        }
        self.f64s(&r.obs);
        self.f64s(&r.actions);
        self.f64s(&r.rewards);
        self.len(r.reward_counts.len());
        r.reward_counts.iter().for_each(|c| self.u32(*c));
        self.f64s(&r.next_obs);
        self.len(r.terminal.len());
        r.terminal.iter().for_each(|t| self.bool(*t));
        self.len(r.pending.len());
        for q in &r.pending {
            self.len(q.len());
            for p in q {
                self.f64s(&p.obs);
                self.f64s(&p.action);
                self.f64(p.reward);
            }
        }
    }
    fn hypers(&mut self, h: &HyperSet) {
        self.len(h.len());
        for (k, v) in h.iter() {
            self.str(k);
            self.f64(v);
        }
    }
    fn learner(&mut self, l: &Learner) {
        match l {
            Learner::Ppo(p) => {
                self.u8(0);
                self.mlp(&p.actor);
                self.mlp(&p.critic);
                self.adam(&p.optimizer);
                self.f64(p.current_lr);
            }
            Learner::Sac(s) => {
                self.u8(1);
                self.mlp(&s.actor);
                self.critic(&s.critic);
                self.adam(&s.actor_opt);
                self.tensor(&s.log_alpha);
                self.adam(&s.alpha_opt);
                self.replay(&s.replay);
                self.f64(s.action_bound);
            }
            Learner::Ddpg(d) => {
                self.u8(2);
                self.mlp(&d.actor);
                self.mlp(&d.actor_target);
                self.critic(&d.critic);
                self.adam(&d.actor_opt);
                self.replay(&d.replay);
                self.f64(d.action_bound);
            }
            Learner::Surrogate(s) => {
                self.u8(3);
                self.tensor(&s.theta);
                self.f64(s.lr);
            }
        }
    }
    fn env(&mut self, env: &Option<EnvBatch>) {
        let Some(env) = env else {
            self.u8(0);
            return;
        };
        self.u8(match env.kind() {
            EnvKind::Pendulum => 1,
            EnvKind::Pointmass => 2,
        });
        let s = &env.state;
        self.len(s.num_envs);
        self.f64s(&s.obs);
        self.f64s(&s.internal_state);
        self.len(s.step_counts.len());
        s.step_counts.iter().for_each(|c| self.u32(*c));
        self.f64s(&s.episode_returns_accum);
        self.streams(env.rngs());
    }
    fn agent(&mut self, a: &AgentState) {
        self.len(a.id);
        self.u64(a.env_steps);
        self.hypers(&a.hypers);
        self.f64s(&a.fitness_window);
        self.opt_f64(a.fitness_at_last_event);
        self.learner(&a.learner);
        self.env(&a.env);
        self.streams(&a.action_rngs);
        self.stream(&a.update_rng);
    }
    fn section(&mut self, tag: &[u8; 4], body: Enc) {
        self.0.extend_from_slice(tag);
        self.len(body.0.len());
        self.0.extend_from_slice(&body.0);
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf[0]` within the file.
    base: usize,
}

impl<'a> Dec<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: (self.base + self.pos) as u64,
            message: message.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("need {n} bytes, {} remain", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.arr()?))
    }
    /// A count or index; bounded by the remaining bytes to reject absurd lengths early.
    fn len(&mut self) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        if v > self.buf.len() as u64 * 8 + 1_000_000_000 {
            self.pos = at;
            return Err(self.err(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn count(&mut self, elem_bytes: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.len()?;
        if n.saturating_mul(elem_bytes) > self.buf.len() - self.pos {
            self.pos = at;
            return Err(self.err(format!("length {n} overruns the section")));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => {
                self.pos -= 1;
                Err(self.err(format!("invalid bool byte {b}")))
            }
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        let at = self.pos;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| {
            self.pos = at;
            self.err("invalid utf-8")
        })
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        Ok(if self.bool()? { Some(self.f64()?) } else { None })
    }
    fn stream(&mut self) -> Result<Stream> {
        let seed = self.arr::<32>()?;
        let stream = self.u64()?;
        let word_pos = self.u128()?;
        Ok(StreamState { seed, stream, word_pos }.restore())
    }
    fn streams(&mut self) -> Result<Vec<Stream>> {
        let n = self.count(56)?;
        (0..n).map(|_| self.stream()).collect()
    }
    fn wrap<T>(&self, at: usize, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            e @ Error::Checkpoint { .. } => e,
            other => Error::Checkpoint {
                offset: (self.base + at) as u64,
                message: other.to_string(),
            },
        })
    }
    fn tensor(&mut self) -> Result<ParamTensor> {
        let at = self.pos;
        let rank = self.count(8)?;
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let values = self.f64s()?;
        let requires_grad = self.bool()?;
        let grad = if self.bool()? { Some(self.f64s()?) } else { None };
        let mut t = self.wrap(at, ParamTensor::new(shape, values))?;
        t.requires_grad = requires_grad;
        if let Some(g) = grad {
            if g.len() != t.len() {
                return Err(self.err("gradient length differs from values"));
            }
            t.grad = Some(g);
        }
        Ok(t)
    }
    fn mlp(&mut self) -> Result<Mlp> {
        let at = self.pos;
        let name = self.str()?;
        let activation = match self.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            b => return Err(self.err(format!("unknown activation tag {b}"))),
        };
        let n = self.count(1)?;
        let blocks = (0..n).map(|_| self.tensor()).collect::<Result<Vec<_>>>()?;
        let requires: Vec<bool> = blocks.iter().map(|b| b.requires_grad).collect();
        let mut m = self.wrap(at, Mlp::from_blocks(blocks, activation, &name))?;
        for ((_, t), r) in m.blocks_mut().into_iter().zip(requires) {
            t.requires_grad = r;
        }
        Ok(m)
    }
    fn adam(&mut self) -> Result<AdamState> {
        let step = self.u64()?;
        let n = self.count(16)?;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(self.f64s()?);
            v.push(self.f64s()?);
        }
        Ok(AdamState { step, m, v })
    }
    fn critic(&mut self) -> Result<TwinCritic> {
        Ok(TwinCritic {
            q1: self.mlp()?,
            q2: self.mlp()?,
            q1_target: self.mlp()?,
            q2_target: self.mlp()?,
            optimizer: self.adam()?,
        })
    }
    fn replay(&mut self) -> Result<ReplayStore> {
        let at = self.pos;
        let capacity = self.len()?;
        let obs_dim = self.len()?;
        let act_dim = self.len()?;
        let n_step = self.len()?;
        let cursor = self.len()?;
        let fill = self.len()?;
        let obs = self.f64s()?;
        let actions = self.f64s()?;
        let rewards = self.f64s()?;
        let rc = self.count(4)?;
        let reward_counts = (0..rc).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let next_obs = self.f64s()?;
        let tn = self.count(1)?;
        let terminal = (0..tn).map(|_| self.bool()).collect::<Result<Vec<_>>>()?;
        let envs = self.count(8)?;
        let mut pending = Vec::with_capacity(envs);
        for _ in 0..envs {
            let k = self.count(24)?;
            let mut q = std::collections::VecDeque::with_capacity(k);
            for _ in 0..k {
                q.push_back(PendingStep {
                    obs: self.f64s()?,
                    action: self.f64s()?,
                    reward: self.f64()?,
                });
            }
            pending.push(q);
        }
        let stored = reward_counts.len();
        let consistent = capacity > 0
            && n_step > 0
            && fill <= capacity
            && stored == fill.max(cursor).min(capacity).max(stored.min(capacity))
            && obs.len() == stored * obs_dim
            && actions.len() == stored * act_dim
            && rewards.len() == stored * n_step
            && next_obs.len() == stored * obs_dim
            && terminal.len() == stored;
        if !consistent {
            self.pos = at;
            return Err(self.err("replay store arrays are inconsistent"));
        }
        Ok(ReplayStore {
            capacity,
            obs_dim,
            act_dim,
            n_step,
            obs,
            actions,
            rewards,
            reward_counts,
            next_obs,
            terminal,
            cursor,
            fill,
            pending,
        })
    }
    fn hypers(&mut self) -> Result<HyperSet> {
        let n = self.count(16)?;
        let mut h = HyperSet::new();
        for _ in 0..n {
            let k = self.str()?;
            h.set(&k, self.f64()?);
        }
        Ok(h)
    }
    fn learner(&mut self) -> Result<Learner> {
        Ok(match self.u8()? {
            0 => Learner::Ppo(PpoLearner {
                actor: self.mlp()?,
                critic: self.mlp()?,
                optimizer: self.adam()?,
                current_lr: self.f64()?,
            }),
            1 => Learner::Sac(SacLearner {
                actor: self.mlp()?,
                critic: self.critic()?,
                actor_opt: self.adam()?,
                log_alpha: self.tensor()?,
                alpha_opt: self.adam()?,
                replay: self.replay()?,
                action_bound: self.f64()?,
            }),
            2 => Learner::Ddpg(DdpgLearner {
                actor: self.mlp()?,
                actor_target: self.mlp()?,
                critic: self.critic()?,
                actor_opt: self.adam()?,
                replay: self.replay()?,
                action_bound: self.f64()?,
            }),
            3 => Learner::Surrogate(SurrogateLearner {
                theta: self.tensor()?,
                lr: self.f64()?,
            }),
            t => {
                self.pos -= 1;
                return Err(self.err(format!("unknown learner tag {t}")));
            }
        })
    }
    fn env(&mut self) -> Result<Option<EnvBatch>> {
        let at = self.pos;
        let kind = match self.u8()? {
            0 => return Ok(None),
            1 => EnvKind::Pendulum,
            2 => EnvKind::Pointmass,
            t => {
                self.pos -= 1;
                return Err(self.err(format!("unknown env tag {t}")));
            }
        };
        let num_envs = self.len()?;
        let obs = self.f64s()?;
        let internal_state = self.f64s()?;
        let sc = self.count(4)?;
        let step_counts = (0..sc).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let episode_returns_accum = self.f64s()?;
        let rngs = self.streams()?;
        let state = EnvBatchState {
            num_envs,
            obs,
            internal_state,
            step_counts,
            episode_returns_accum,
        };
        Ok(Some(self.wrap(at, EnvBatch::from_parts(kind, state, rngs))?))
    }
    fn agent(&mut self) -> Result<AgentState> {
        Ok(AgentState {
            id: self.len()?,
            env_steps: self.u64()?,
            hypers: self.hypers()?,
            fitness_window: self.f64s()?,
            fitness_at_last_event: self.opt_f64()?,
            learner: self.learner()?,
            env: self.env()?,
            action_rngs: self.streams()?,
            update_rng: self.stream()?,
        })
    }
    fn section(&mut self, tag: &[u8; 4]) -> Result<Dec<'a>> {
        let at = self.pos;
        let got = self.arr::<4>()?;
        if &got != tag {
            self.pos = at;
            return Err(self.err(format!(
                "expected section `{}`, found `{}`",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(&got)
            )));
        }
        let n = self.count(1)?;
        let start = self.pos;
        self.take(n)?;
        Ok(Dec {
            buf: &self.buf[start..start + n],
            pos: 0,
            base: self.base + start,
        })
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} unread bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn new(config_hash: [u8; 32], population: PopulationState) -> Self {
        Self {
            version: VERSION,
            config_hash,
            population,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.population;
        let mut out = Enc::default();
        out.0.extend_from_slice(MAGIC);
        out.u32(self.version);

        let mut meta = Enc::default();
        meta.0.extend_from_slice(&self.config_hash);
        meta.u64(p.iteration);
        meta.u64(p.events_fired);
        meta.bool(p.last_boundary.is_some());
        meta.u64(p.last_boundary.unwrap_or(0));
        meta.stream(&p.evolution_rng);
        meta.len(p.agents.len());
        out.section(b"META", meta);

        for a in &p.agents {
            let mut body = Enc::default();
            body.agent(a);
            out.section(b"AGNT", body);
        }

        let mut log = Enc::default();
        log.len(p.event_log.len());
        p.event_log.iter().for_each(|r| log.str(&r.to_line()));
        out.section(b"EVNT", log);

        let sum = checksum(&out.0);
        out.0.extend_from_slice(&sum);
        out.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |offset: usize, message: String| Error::Checkpoint {
            offset: offset as u64,
            message,
        };
        if bytes.len() < 8 + CHECKSUM_LEN {
            return Err(err(bytes.len(), format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(0, "bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(err(4, format!("unsupported version {version}, expected {VERSION}")));
        }
        let body_end = bytes.len() - CHECKSUM_LEN;
        if checksum(&bytes[..body_end]) != bytes[body_end..] {
            return Err(err(body_end, "checksum mismatch (file truncated or corrupted)".into()));
        }
        let mut d = Dec {
            buf: &bytes[..body_end],
            pos: 8,
            base: 0,
        };
        let mut meta = d.section(b"META")?;
        let config_hash = meta.arr::<32>()?;
        let iteration = meta.u64()?;
        let events_fired = meta.u64()?;
        let has_boundary = meta.bool()?;
        let boundary = meta.u64()?;
        let evolution_rng = meta.stream()?;
        let n = meta.len()?;
        meta.finish()?;
        let mut agents = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let mut s = d.section(b"AGNT")?;
            agents.push(s.agent()?);
            s.finish()?;
        }
        let mut ev = d.section(b"EVNT")?;
        let k = ev.count(8)?;
        let mut event_log = Vec::with_capacity(k);
        for _ in 0..k {
            let at = ev.pos;
            let line = ev.str()?;
            event_log.push(ev.wrap(at, EventRecord::parse_line(&line))?);
        }
        ev.finish()?;
        d.finish()?;
        Ok(Self {
            version,
            config_hash,
            population: PopulationState {
                agents,
                iteration,
                events_fired,
                last_boundary: has_boundary.then_some(boundary),
                evolution_rng,
                event_log,
            },
        })
    }

    /// Writes through a temporary file so a crash never leaves a half-written checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
