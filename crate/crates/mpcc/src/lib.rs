//! Dynamics of joint path selection and congestion control over parallel
//! bottleneck paths.
//!
//! A population of agents runs a multi-path congestion control (MPCC)
//! protocol: each time step, agents on a suboptimal path migrate to the
//! least-utilized path with probability `rho`, scaling their congestion
//! window by the reset softness `sigma` on arrival, while everyone else
//! follows a generic loss-based rule (additive increase `alpha(tau)`,
//! multiplicative decrease `gamma`). The crate provides:
//!
//! * [`stochastic`] — the exact agent-level simulator,
//! * [`mean_field`] — the deterministic iterator of the expected dynamics,
//! * [`equilibrium`] — closed-form characterization of the periodic
//!   equilibria the system converges to, plus lossy oscillation bounds and
//!   the parameter-space consistency map,
//! * [`axioms`] — ratings for efficiency, loss avoidance, convergence,
//!   fairness and responsiveness, with a static no-selection baseline.

pub mod axioms;
pub mod equilibrium;
pub mod mean_field;
pub mod model;
pub mod stochastic;
pub mod trajectory;

pub use axioms::{
    compare_to_static, detect_onset, rate_ensemble, rate_equilibrium, rate_fairness,
    rate_with_window, static_baseline, AxiomRatings, Bound, BoundKind, EvidenceKind,
    FairnessEstimate, Metric, RatingError, StaticBaseline, StaticComparison,
};
pub use equilibrium::{
    agent_equilibrium, agent_trajectory, consistency_map, flow_equilibrium, flow_trajectory,
    lossy_bounds, AgentEquilibrium, CellStatus, ConsistencyCell, ConsistencyMap,
    EquilibriumError, FlowEquilibrium, LossyBounds, Regime,
};
pub use mean_field::{
    expected_additive_increase, init_expected, run_expected, step_expected, z_factor,
    ContinuityDistribution, ContinuityHistogram, ExpectedRun, MeanFieldError, MeanFieldInit,
    MeanFieldState, TAU_MAX,
};
pub use model::{
    compute_ranks, AlphaFunction, ModelError, NetworkConfig, ProtocolParams, RankVector,
};
pub use stochastic::{
    init_state, run, run_single, step, AgentState, InitPolicy, RunSet, SimError, StepEvents,
    StochasticState, WINDOW_FLOOR,
};
pub use trajectory::{mean_by_rank, PathStep, StepRecord, Trajectory};
