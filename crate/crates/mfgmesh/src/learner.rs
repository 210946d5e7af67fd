//! The outer training loop: collection, per-agent training, return
//! evaluation, and policy exchange, composed over a single continuing
//! environment run.
//!
//! One iteration `k` performs, in order:
//!
//! 1. empty every buffer, then take `M` synchronous system steps storing
//!    transitions (collection);
//! 2. per agent, `L` gradient steps on batches resampled from its own
//!    buffer (training); the policy is implicitly refreshed because it is
//!    always the softmax of the current Q-network;
//! 3. `E` further system steps accumulating `σ^i = Σ_e γ^e r^i_e`, each
//!    agent's estimate of its freshly trained policy's value;
//! 4. an architecture-specific exchange stage:
//!    * networked: `C_p` adoption rounds. Each round, every agent samples
//!      one member of `{self} ∪ neighbours` with probability
//!      `softmax(σ/τ^comm_k)` and copies that member's round-start
//!      `(σ, params)`; one environment step separates consecutive rounds.
//!    * centralised: agent 0's learner state overwrites everyone's, as if
//!      all agents shared one network.
//!    * independent: nothing; additionally the communication and
//!      visibility edge sets are empty for the entire run, so estimates
//!      reduce to each agent's own-cell count.
//!
//! `τ^comm_k` anneals linearly from its start to its end value across the
//! `K` iterations, so early adoption is near-greedy exploration across
//! policies and late adoption is near-argmax.
//!
//! Rewards always come from the exact empirical distribution; local
//! estimates only ever enter observations. Every stochastic choice draws
//! from a stream derived from (trial seed, purpose label, agent index),
//! so runs are bit-reproducible and variants differ only where the
//! algorithm differs.

use crate::env::{
    advance_entity, compute_reward, empirical_distribution, encode_observation, obs_len,
    step_agent, Action, Cell, EnvError, EnvState, GridConfig, ObservationMode,
};
use crate::graphs::{build_radius_agent_graph, build_visibility_graph, AgentGraph, StateVisGraph};
use crate::metrics::{self, MetricsRow};
use crate::mfest::{self, MfestError};
use crate::nn::{self, AdamState, MlpParams, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Estimate(#[from] MfestError),
    #[error("training requires a nonempty replay buffer (was collection run with M >= 1?)")]
    EmptyBuffer,
    #[error("invalid hyperparameter: {0}")]
    BadHyper(String),
}

/// How agents are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ArchitectureKind {
    /// Radius-limited parameter exchange with softmax adoption.
    Networked,
    /// One shared network: agent 0's state is pushed to all each iteration,
    /// and observations always use the exact distribution.
    Centralised,
    /// No communication or visibility edges at all.
    Independent,
}

/// Where step rewards come from. `Constant` replaces the task reward with
/// a fixed value, giving an environment in which no policy can outperform
/// any other; dynamics are unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardSource {
    Task,
    Constant(f64),
}

/// All training-loop hyperparameters. `Default` gives the standard
/// experiment values.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub architecture: ArchitectureKind,
    pub obs_mode: ObservationMode,
    pub comm_radius_fraction: f64,
    pub vis_radius_fraction: f64,
    /// Outer iterations K (the adoption temperature anneals across them).
    pub k_iters: usize,
    /// Collection steps per iteration M; also the buffer size.
    pub m_steps: usize,
    /// Training updates per iteration L.
    pub l_steps: usize,
    /// Return-evaluation steps E.
    pub e_steps: usize,
    /// Parameter-exchange rounds per iteration C_p.
    pub c_p: usize,
    /// Estimation gossip rounds per step C_e.
    pub c_e: usize,
    pub gamma: f64,
    pub tau_q: f64,
    /// Clip floor for the Munchausen log-policy term.
    pub cl: f64,
    pub batch_size: usize,
    pub adam_lr: f64,
    /// Target-network sync period within the L loop. The default `L - 1`
    /// means exactly one sync per iteration, taken at the start of the
    /// training phase, so the target holds the previous iteration's final
    /// parameters throughout.
    pub nu: usize,
    pub tau_comm_start: f64,
    pub tau_comm_end: f64,
    pub reward_source: RewardSource,
}

impl Default for Hyper {
    fn default() -> Hyper {
        Hyper {
            architecture: ArchitectureKind::Networked,
            obs_mode: ObservationMode::LocalOnly,
            comm_radius_fraction: 0.5,
            vis_radius_fraction: 0.5,
            k_iters: 100,
            m_steps: 50,
            l_steps: 50,
            e_steps: 20,
            c_p: 1,
            c_e: 1,
            gamma: 0.9,
            tau_q: 0.03,
            cl: -1.0,
            batch_size: 32,
            adam_lr: 0.01,
            nu: 49,
            tau_comm_start: 0.001,
            tau_comm_end: 1.0,
            reward_source: RewardSource::Task,
        }
    }
}

impl Hyper {
    fn validate(&self, _grid: &GridConfig) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::BadHyper(m));
        if !(0.0..=1.0).contains(&self.comm_radius_fraction) {
            return bad(format!("comm_radius_fraction {} outside [0,1]", self.comm_radius_fraction));
        }
        if !(0.0..=1.0).contains(&self.vis_radius_fraction) {
            return bad(format!("vis_radius_fraction {} outside [0,1]", self.vis_radius_fraction));
        }
        if self.tau_q <= 0.0 {
            return bad(format!("tau_q {} must be positive", self.tau_q));
        }
        if self.tau_comm_start <= 0.0 || self.tau_comm_end <= 0.0 {
            return bad("adoption temperatures must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0,1)", self.gamma));
        }
        if self.cl >= 0.0 {
            return bad(format!("cl {} must be negative", self.cl));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.nu == 0 {
            return bad("nu must be at least 1".into());
        }
        if self.architecture == ArchitectureKind::Centralised
            && self.obs_mode == ObservationMode::EstimatedMeanField
        {
            return bad(
                "centralised runs always use the exact distribution; estimated-mean-field \
                 observations are contradictory"
                    .into(),
            );
        }
        Ok(())
    }
}

/// One agent's mutable learning state.
#[derive(Debug, Clone)]
pub struct AgentLearner {
    pub params: MlpParams,
    pub target: MlpParams,
    pub adam: AdamState,
    /// Replay buffer; emptied at every iteration start, then filled with
    /// exactly M transitions by collection.
    pub buffer: Vec<Transition>,
    /// Discounted-return estimate of the current policy, rewritten each
    /// iteration and overwritten on adoption.
    pub sigma: f64,
}

// Stream labels; each (seed, label, index) triple owns one ChaCha stream.
const L_ENV_INIT: u64 = 1;
const L_WEIGHTS: u64 = 2;
const L_ACTION: u64 = 3;
const L_TRAIN: u64 = 4;
const L_ADOPT: u64 = 5;
const L_ENTITY: u64 = 6;
const L_EXPLOIT: u64 = 7;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

pub(crate) fn mix_seed(seed: u64, label: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(label)) ^ splitmix64(index))
}

/// Seed for the exploitability probe at iteration `k` of a run seeded
/// with `seed`; also used when probing a reloaded checkpoint.
pub(crate) fn exploit_seed(seed: u64, k: u64) -> u64 {
    mix_seed(seed, L_EXPLOIT, k)
}

fn derive_rng(seed: u64, label: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, label, index))
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if draw < w {
            return i;
        }
        draw -= w;
    }
    weights.len() - 1
}

/// The whole system: environment, one learner per agent, and the RNG
/// streams that make the run reproducible.
#[derive(Debug, Clone)]
pub struct Population {
    pub grid: GridConfig,
    pub hyper: Hyper,
    pub env: EnvState,
    pub learners: Vec<AgentLearner>,
    pub master_seed: u64,
    vis: StateVisGraph,
    action_rngs: Vec<ChaCha8Rng>,
    train_rngs: Vec<ChaCha8Rng>,
    adopt_rngs: Vec<ChaCha8Rng>,
    entity_rng: ChaCha8Rng,
}

impl Population {
    /// Fresh population: random initial placement and random per-agent
    /// network parameters, all derived from `seed`.
    pub fn new(grid: GridConfig, hyper: Hyper, seed: u64) -> Result<Population, LearnerError> {
        let mut env_rng = derive_rng(seed, L_ENV_INIT, 0);
        let env = EnvState::random(&grid, &mut env_rng);
        Population::with_env(grid, hyper, seed, env)
    }

    /// Fresh population with pinned initial agent (and entity) positions.
    pub fn with_initial_states(
        grid: GridConfig,
        hyper: Hyper,
        seed: u64,
        agents: Vec<Cell>,
        entity: Option<Cell>,
    ) -> Result<Population, LearnerError> {
        let env = EnvState::with_positions(&grid, agents, entity)?;
        Population::with_env(grid, hyper, seed, env)
    }

    /// Rebuilds a population around saved per-agent parameters (target
    /// networks resync and optimizer state starts fresh), e.g. when
    /// probing a checkpoint.
    pub fn from_saved_params(
        grid: GridConfig,
        hyper: Hyper,
        seed: u64,
        env: EnvState,
        params: Vec<MlpParams>,
    ) -> Result<Population, LearnerError> {
        let mut pop = Population::with_env(grid, hyper, seed, env)?;
        if params.len() != pop.grid.n_agents {
            return Err(LearnerError::BadHyper(format!(
                "{} parameter sets for {} agents",
                params.len(),
                pop.grid.n_agents
            )));
        }
        let input_len = obs_len(&pop.grid, pop.hyper.obs_mode);
        for (l, p) in pop.learners.iter_mut().zip(params) {
            if p.input_len() != input_len {
                return Err(LearnerError::BadHyper(format!(
                    "saved parameters expect inputs of length {} but observations have length {}",
                    p.input_len(),
                    input_len
                )));
            }
            l.target = nn::sync_target(&p);
            l.adam = AdamState::new(&p, pop.hyper.adam_lr);
            l.params = p;
        }
        Ok(pop)
    }

    fn with_env(
        grid: GridConfig,
        hyper: Hyper,
        seed: u64,
        env: EnvState,
    ) -> Result<Population, LearnerError> {
        grid.validate()?;
        hyper.validate(&grid)?;
        if env.agents.len() != grid.n_agents {
            return Err(LearnerError::BadHyper(format!(
                "environment holds {} agents but the grid declares {}",
                env.agents.len(),
                grid.n_agents
            )));
        }
        let n = grid.n_agents;
        let input_len = obs_len(&grid, hyper.obs_mode);
        let learners = (0..n)
            .map(|i| {
                let mut rng = derive_rng(seed, L_WEIGHTS, i as u64);
                let params = MlpParams::new_random(input_len, &mut rng);
                let target = nn::sync_target(&params);
                let adam = AdamState::new(&params, hyper.adam_lr);
                AgentLearner { params, target, adam, buffer: Vec::new(), sigma: 0.0 }
            })
            .collect();
        let vis = match hyper.architecture {
            ArchitectureKind::Independent => StateVisGraph::self_only(grid.n_states()),
            _ => build_visibility_graph(&grid, hyper.vis_radius_fraction),
        };
        Ok(Population {
            learners,
            vis,
            action_rngs: (0..n).map(|i| derive_rng(seed, L_ACTION, i as u64)).collect(),
            train_rngs: (0..n).map(|i| derive_rng(seed, L_TRAIN, i as u64)).collect(),
            adopt_rngs: (0..n).map(|i| derive_rng(seed, L_ADOPT, i as u64)).collect(),
            entity_rng: derive_rng(seed, L_ENTITY, 0),
            grid,
            hyper,
            env,
            master_seed: seed,
        })
    }

    /// Deep copy with fresh RNG streams derived from `seed`; used for
    /// evaluation side-runs that must not disturb the live run.
    pub fn fork_for_evaluation(&self, seed: u64) -> Population {
        let mut fork = self.clone();
        let n = self.grid.n_agents;
        fork.action_rngs = (0..n).map(|i| derive_rng(seed, L_ACTION, i as u64)).collect();
        fork.train_rngs = (0..n).map(|i| derive_rng(seed, L_TRAIN, i as u64)).collect();
        fork.adopt_rngs = (0..n).map(|i| derive_rng(seed, L_ADOPT, i as u64)).collect();
        fork.entity_rng = derive_rng(seed, L_ENTITY, 0);
        fork.master_seed = seed;
        fork
    }

    pub fn n_agents(&self) -> usize {
        self.grid.n_agents
    }

    /// The communication graph for the current positions (empty for
    /// independent learners).
    pub fn comm_graph(&self) -> AgentGraph {
        match self.hyper.architecture {
            ArchitectureKind::Independent => AgentGraph::empty(self.grid.n_agents),
            _ => build_radius_agent_graph(
                &self.env.agents,
                self.hyper.comm_radius_fraction,
                &self.grid,
            ),
        }
    }

    /// Each agent's observation of the current environment state.
    pub fn observations(&self, comm: &AgentGraph) -> Result<Vec<Vec<f64>>, LearnerError> {
        let grid = &self.grid;
        let mode = self.hyper.obs_mode;
        match mode {
            ObservationMode::LocalOnly => self
                .env
                .agents
                .iter()
                .map(|&a| Ok(encode_observation(a, &self.env, None, grid, mode)?))
                .collect(),
            ObservationMode::GlobalMeanField => {
                let mu = empirical_distribution(&self.env.agents, grid);
                self.env
                    .agents
                    .iter()
                    .map(|&a| Ok(encode_observation(a, &self.env, Some(&mu), grid, mode)?))
                    .collect()
            }
            ObservationMode::EstimatedMeanField => {
                let states: Vec<usize> =
                    self.env.agents.iter().map(|&a| grid.cell_index(a)).collect();
                let estimates =
                    mfest::estimate_all_visibility(&states, comm, &self.vis, self.hyper.c_e)?;
                self.env
                    .agents
                    .iter()
                    .zip(&estimates)
                    .map(|(&a, est)| Ok(encode_observation(a, &self.env, Some(est), grid, mode)?))
                    .collect()
            }
        }
    }

    /// One synchronous system step: observe, sample actions from each
    /// agent's softmax policy, collect rewards against the pre-step
    /// distribution, advance the entity and then the agents.
    pub fn env_step(&mut self) -> Result<(Vec<Vec<f64>>, Vec<usize>, Vec<f64>), LearnerError> {
        let comm = self.comm_graph();
        let obs = self.observations(&comm)?;
        let n = self.grid.n_agents;
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let q = self.learners[i].params.forward(&obs[i]);
            let pi = nn::policy_from_q(&q, self.hyper.tau_q);
            actions.push(sample_index(&pi, &mut self.action_rngs[i]));
        }
        let mu = empirical_distribution(&self.env.agents, &self.grid);
        let mut rewards = Vec::with_capacity(n);
        for i in 0..n {
            let r = match self.hyper.reward_source {
                RewardSource::Task => compute_reward(
                    i,
                    &self.env,
                    Action::from_index(actions[i]),
                    &mu,
                    &self.grid,
                )?,
                RewardSource::Constant(c) => c,
            };
            rewards.push(r);
        }
        if self.grid.task.has_entity() {
            let next = advance_entity(&self.env, &mu, &self.grid, &mut self.entity_rng)?;
            self.env.entity = Some(next);
        }
        for i in 0..n {
            self.env.agents[i] =
                step_agent(self.env.agents[i], Action::from_index(actions[i]), &self.grid);
        }
        self.env.time += 1;
        Ok((obs, actions, rewards))
    }

    /// Collection: empty every buffer, take M steps storing transitions.
    /// Returns each agent's reward sequence for the return metric.
    pub fn collect_phase(&mut self) -> Result<Vec<Vec<f64>>, LearnerError> {
        let n = self.grid.n_agents;
        for l in &mut self.learners {
            l.buffer.clear();
        }
        let mut reward_seqs = vec![Vec::with_capacity(self.hyper.m_steps); n];
        let mut pending: Option<(Vec<Vec<f64>>, Vec<usize>, Vec<f64>)> = None;
        for _ in 0..self.hyper.m_steps {
            let (obs, actions, rewards) = self.env_step()?;
            if let Some((p_obs, p_act, p_rew)) = pending.take() {
                self.store_transitions(p_obs, p_act, p_rew, &obs);
            }
            for (seq, &r) in reward_seqs.iter_mut().zip(&rewards) {
                seq.push(r);
            }
            pending = Some((obs, actions, rewards));
        }
        if let Some((p_obs, p_act, p_rew)) = pending.take() {
            let comm = self.comm_graph();
            let final_obs = self.observations(&comm)?;
            self.store_transitions(p_obs, p_act, p_rew, &final_obs);
        }
        Ok(reward_seqs)
    }

    fn store_transitions(
        &mut self,
        obs: Vec<Vec<f64>>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        next_obs: &[Vec<f64>],
    ) {
        for (i, ((o, a), r)) in obs.into_iter().zip(actions).zip(rewards).enumerate() {
            self.learners[i].buffer.push(Transition {
                obs: o,
                action: a,
                reward: r,
                next_obs: next_obs[i].clone(),
            });
        }
    }

    /// Training for one agent: L batches resampled (with replacement) from
    /// its buffer, a gradient step each, target syncs per the ν schedule.
    pub fn train_agent(&mut self, i: usize) -> Result<(), LearnerError> {
        let h = &self.hyper;
        let (l_steps, nu) = (h.l_steps, h.nu);
        let (batch_size, tau_q, cl, gamma) = (h.batch_size, h.tau_q, h.cl, h.gamma);
        let learner = &mut self.learners[i];
        let rng = &mut self.train_rngs[i];
        if l_steps == 0 {
            return Ok(());
        }
        if learner.buffer.is_empty() {
            return Err(LearnerError::EmptyBuffer);
        }
        // ν = L−1 is the once-per-iteration schedule: a single sync at the
        // phase start keeps the target at the previous iteration's final
        // parameters throughout. Shorter ν adds mid-phase syncs.
        let once_per_phase = nu + 1 == l_steps;
        for l in 0..l_steps {
            if l == 0 || (!once_per_phase && l % nu == 0) {
                learner.target = nn::sync_target(&learner.params);
            }
            let batch: Vec<Transition> = (0..batch_size)
                .map(|_| learner.buffer[rng.gen_range(0..learner.buffer.len())].clone())
                .collect();
            let (_, grads) =
                nn::loss_and_gradients(&learner.params, &learner.target, &batch, tau_q, cl, gamma);
            learner.adam.step(&mut learner.params, &grads);
        }
        Ok(())
    }

    /// Runs E live steps and sets each agent's σ to its discounted return
    /// over them.
    pub fn evaluate_sigma(&mut self) -> Result<Vec<f64>, LearnerError> {
        for l in &mut self.learners {
            l.sigma = 0.0;
        }
        let mut discount = 1.0;
        for _ in 0..self.hyper.e_steps {
            let (_, _, rewards) = self.env_step()?;
            for (l, &r) in self.learners.iter_mut().zip(&rewards) {
                l.sigma += discount * r;
            }
            discount *= self.hyper.gamma;
        }
        Ok(self.learners.iter().map(|l| l.sigma).collect())
    }

    /// One synchronous adoption round: every agent samples a member of
    /// `{self} ∪ neighbours` via `softmax(σ/τ)` over round-start values
    /// and copies the sampled member's round-start `(σ, params)`.
    pub fn adoption_round(&mut self, comm: &AgentGraph, tau_comm: f64) {
        assert!(tau_comm > 0.0, "adoption temperature must be positive");
        let snapshot: Vec<(f64, MlpParams)> =
            self.learners.iter().map(|l| (l.sigma, l.params.clone())).collect();
        for i in 0..self.grid.n_agents {
            let mut candidates = vec![i];
            candidates.extend_from_slice(comm.neighbors(i));
            let max_sigma =
                candidates.iter().map(|&j| snapshot[j].0).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = candidates
                .iter()
                .map(|&j| ((snapshot[j].0 - max_sigma) / tau_comm).exp())
                .collect();
            let pick = candidates[sample_index(&weights, &mut self.adopt_rngs[i])];
            if pick != i {
                let (sigma, params) = &snapshot[pick];
                self.learners[i].sigma = *sigma;
                self.learners[i].params = params.clone();
            }
        }
    }

    /// Adoption temperature at iteration `k`: linear from start to end
    /// across the K iterations (start when K = 1).
    pub fn tau_comm(&self, k: usize) -> f64 {
        let h = &self.hyper;
        if h.k_iters <= 1 {
            h.tau_comm_start
        } else {
            let frac = k as f64 / (h.k_iters - 1) as f64;
            h.tau_comm_start + (h.tau_comm_end - h.tau_comm_start) * frac
        }
    }

    /// One full iteration. Returns the (mean, population std) of the
    /// agents' discounted returns over the collection steps.
    pub fn run_iteration(&mut self, k: usize) -> Result<(f64, f64), LearnerError> {
        let reward_seqs = self.collect_phase()?;
        for i in 0..self.grid.n_agents {
            self.train_agent(i)?;
        }
        self.evaluate_sigma()?;
        match self.hyper.architecture {
            ArchitectureKind::Networked => {
                let tau = self.tau_comm(k);
                for _ in 0..self.hyper.c_p {
                    let comm = self.comm_graph();
                    self.adoption_round(&comm, tau);
                    // The step between rounds runs with just-adopted
                    // policies.
                    self.env_step()?;
                }
            }
            ArchitectureKind::Centralised => {
                let src = self.learners[0].clone();
                for l in &mut self.learners[1..] {
                    l.params = src.params.clone();
                    l.target = src.target.clone();
                    l.adam = src.adam.clone();
                }
            }
            ArchitectureKind::Independent => {}
        }
        Ok(metrics::average_discounted_return(&reward_seqs, self.hyper.gamma)
            .expect("collection emits equal-length reward sequences"))
    }
}

/// Trains a fresh population for K iterations, producing one metrics row
/// per iteration; exploitability is evaluated every
/// `exploitability_every` iterations (0 disables it) on a forked copy, so
/// it never disturbs the run.
pub fn run_training(
    grid: GridConfig,
    hyper: Hyper,
    seed: u64,
    exploitability_every: usize,
) -> Result<(Population, Vec<MetricsRow>), LearnerError> {
    let mut pop = Population::new(grid, hyper, seed)?;
    let k_iters = pop.hyper.k_iters;
    let mut rows = Vec::with_capacity(k_iters);
    for k in 0..k_iters {
        let started = Instant::now();
        let (mean_return, std_return) = pop.run_iteration(k)?;
        let exploitability = if exploitability_every > 0 && k % exploitability_every == 0 {
            Some(metrics::approximate_exploitability(&pop, exploit_seed(seed, k as u64))?)
        } else {
            None
        };
        rows.push(MetricsRow {
            k,
            mean_return,
            std_return,
            exploitability,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((pop, rows))
}
