//! Discrete-time stochastic simulator: N agents over P parallel paths, with
//! probabilistic migration toward the least-utilized path and loss-driven
//! congestion-window evolution.
//!
//! Step order, applied to the state at time `t`:
//!
//! 1. rank paths by utilization of the time-`t` loads; the rank `P-1` path
//!    is the migration target;
//! 2. every agent on another path independently migrates there with
//!    probability `rho`, scaling its window by `sigma` and resetting its
//!    continuity time — migrants take no increase and no decrease this step;
//! 3. every non-migrating agent applies the congestion-control rule against
//!    the time-`t` load of its time-`t` path: over capacity means a `gamma`
//!    decrease and a continuity reset, otherwise the window grows by
//!    `alpha(tau)` and the continuity time advances.
//!
//! With this order, departing load leaves a path at full weight, only the
//! remaining agents take a loss decrease, and a migrating agent escapes the
//! decrease entirely — its new window is `sigma * w`, not `sigma * gamma * w`.

use crate::model::{compute_ranks, ModelError, NetworkConfig, ProtocolParams};
use crate::trajectory::{PathStep, StepRecord, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Windows are clamped to this after any multiplicative operation, so a
/// hard-reset agent (`sigma = 0`) keeps a live flow and resumes growing.
pub const WINDOW_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("n_seeds must be at least 1")]
    NoSeeds,
    #[error("uniform-covering init would leave a path empty: {n_agents} agents on {n_paths} paths")]
    CoverageImpossible { n_agents: usize, n_paths: usize },
    #[error("init path {path} out of range ({n_paths} paths)")]
    PathOutOfRange { path: usize, n_paths: usize },
}

/// One flow: its congestion window, continuity time, and current path.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub window: f64,
    pub continuity: u32,
    pub path: usize,
}

/// Full agent population at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticState {
    pub time: u64,
    pub agents: Vec<AgentState>,
}

impl StochasticState {
    pub fn agent_counts(&self, n_paths: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_paths];
        for a in &self.agents {
            counts[a.path] += 1;
        }
        counts
    }

    pub fn loads(&self, n_paths: usize) -> Vec<f64> {
        let mut loads = vec![0.0; n_paths];
        for a in &self.agents {
            loads[a.path] += a.window;
        }
        loads
    }

    /// Population variance of the congestion windows.
    pub fn window_variance(&self) -> f64 {
        let n = self.agents.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mean = self.agents.iter().map(|a| a.window).sum::<f64>() / n;
        self.agents
            .iter()
            .map(|a| {
                let d = a.window - mean;
                d * d
            })
            .sum::<f64>()
            / n
    }
}

/// Initial placement of agents. All policies start every agent with a unit
/// window and zero continuity time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Round-robin across paths; paths may stay empty when N < P.
    #[default]
    Uniform,
    /// Round-robin, but every path must receive at least one agent.
    UniformCovering,
    /// The whole population starts on one path.
    AllOnPath(usize),
}

/// Places agents per the policy. Deterministic; assumes a valid config.
pub fn init_state(config: &NetworkConfig, policy: &InitPolicy) -> Result<StochasticState, SimError> {
    let path_of = |i: usize| -> Result<usize, SimError> {
        match policy {
            InitPolicy::Uniform => Ok(i % config.n_paths),
            InitPolicy::UniformCovering => {
                if config.n_agents < config.n_paths {
                    Err(SimError::CoverageImpossible {
                        n_agents: config.n_agents,
                        n_paths: config.n_paths,
                    })
                } else {
                    Ok(i % config.n_paths)
                }
            }
            InitPolicy::AllOnPath(p) => {
                if *p >= config.n_paths {
                    Err(SimError::PathOutOfRange {
                        path: *p,
                        n_paths: config.n_paths,
                    })
                } else {
                    Ok(*p)
                }
            }
        }
    };
    let mut agents = Vec::with_capacity(config.n_agents);
    for i in 0..config.n_agents {
        agents.push(AgentState {
            window: 1.0,
            continuity: 0,
            path: path_of(i)?,
        });
    }
    Ok(StochasticState { time: 0, agents })
}

/// What happened during one transition: which paths were over capacity at
/// the starting step, and how many agents moved in and out of each path.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvents {
    pub loss: Vec<bool>,
    pub in_migrants: Vec<u32>,
    pub out_migrants: Vec<u32>,
}

/// Advances the state by one step in place.
fn advance(
    state: &mut StochasticState,
    config: &NetworkConfig,
    params: &ProtocolParams,
    rng: &mut impl Rng,
) -> StepEvents {
    let n_paths = config.n_paths;
    let capacities = config.capacities();
    let loads = state.loads(n_paths);
    let ranks = compute_ranks(&loads, &capacities);
    let min_path = ranks.min_path();
    let overloaded: Vec<bool> = (0..n_paths).map(|p| loads[p] > capacities[p]).collect();

    let mut in_migrants = vec![0u32; n_paths];
    let mut out_migrants = vec![0u32; n_paths];
    for agent in &mut state.agents {
        let here = agent.path;
        if here != min_path && rng.gen_bool(params.rho) {
            out_migrants[here] += 1;
            in_migrants[min_path] += 1;
            agent.path = min_path;
            agent.window = (params.sigma * agent.window).max(WINDOW_FLOOR);
            agent.continuity = 0;
        } else if overloaded[here] {
            agent.window = (params.gamma * agent.window).max(WINDOW_FLOOR);
            agent.continuity = 0;
        } else {
            agent.window += params.alpha.eval(agent.continuity);
            agent.continuity += 1;
        }
    }
    state.time += 1;
    StepEvents {
        loss: overloaded,
        in_migrants,
        out_migrants,
    }
}

/// One step of the stochastic process, leaving the input untouched.
pub fn step(
    state: &StochasticState,
    config: &NetworkConfig,
    params: &ProtocolParams,
    rng: &mut impl Rng,
) -> (StochasticState, StepEvents) {
    let mut next = state.clone();
    let events = advance(&mut next, config, params, rng);
    (next, events)
}

fn record_of(
    state: &StochasticState,
    config: &NetworkConfig,
    events: Option<&StepEvents>,
) -> StepRecord {
    let n_paths = config.n_paths;
    let capacities = config.capacities();
    let loads = state.loads(n_paths);
    let counts = state.agent_counts(n_paths);
    let ranks = compute_ranks(&loads, &capacities);
    let paths = (0..n_paths)
        .map(|p| PathStep {
            rank: ranks.rank_of(p),
            agents: counts[p] as f64,
            load: loads[p],
            loss: f64::from(loads[p] > capacities[p]),
            in_migrants: events.map_or(0.0, |e| e.in_migrants[p] as f64),
            out_migrants: events.map_or(0.0, |e| e.out_migrants[p] as f64),
        })
        .collect();
    StepRecord {
        time: state.time,
        paths,
        window_variance: Some(state.window_variance()),
    }
}

/// Runs one seed for `horizon` steps. Identical inputs produce bit-identical
/// trajectories.
pub fn run_single(
    config: &NetworkConfig,
    params: &ProtocolParams,
    policy: &InitPolicy,
    horizon: u64,
    seed: u64,
) -> Result<Trajectory, SimError> {
    config.validate()?;
    params.validate()?;
    if horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_state(config, policy)?;
    let mut records = Vec::with_capacity(horizon as usize + 1);
    records.push(record_of(&state, config, None));
    for _ in 0..horizon {
        let events = advance(&mut state, config, params, &mut rng);
        records.push(record_of(&state, config, Some(&events)));
    }
    Ok(Trajectory { records })
}

/// A batch of independent runs plus their cross-seed mean, aggregated by
/// rank.
#[derive(Debug, Clone)]
pub struct RunSet {
    pub trajectories: Vec<Trajectory>,
    pub mean_by_rank: Trajectory,
}

/// Runs `n_seeds` independent trajectories in parallel. Per-seed generators
/// are derived from the base seed by offsetting it before the SplitMix64
/// expansion inside `seed_from_u64`, which yields uncorrelated streams.
pub fn run(
    config: &NetworkConfig,
    params: &ProtocolParams,
    policy: &InitPolicy,
    horizon: u64,
    base_seed: u64,
    n_seeds: usize,
) -> Result<RunSet, SimError> {
    if n_seeds == 0 {
        return Err(SimError::NoSeeds);
    }
    let trajectories: Result<Vec<Trajectory>, SimError> = (0..n_seeds)
        .into_par_iter()
        .map(|i| run_single(config, params, policy, horizon, base_seed.wrapping_add(i as u64)))
        .collect();
    let trajectories = trajectories?;
    let mean = crate::trajectory::mean_by_rank(&trajectories);
    Ok(RunSet {
        trajectories,
        mean_by_rank: mean,
    })
}
