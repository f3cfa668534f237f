//! Shared domain types: protocol parameters, the additive-increase family,
//! network configuration, and utilization-based path ranking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failure for protocol or network parameters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("rho must be in [0, 1] (0 is the no-migration diagnostic mode), got {0}")]
    RhoOutOfRange(f64),
    #[error("sigma must be in [0, 1], got {0}")]
    SigmaOutOfRange(f64),
    #[error("gamma must be in (0, 1), got {0}")]
    GammaOutOfRange(f64),
    #[error("alpha: {0}")]
    InvalidAlpha(String),
    #[error("n_paths must be at least 2, got {0}")]
    TooFewPaths(usize),
    #[error("n_agents ({n_agents}) must be at least n_paths ({n_paths})")]
    TooFewAgents { n_agents: usize, n_paths: usize },
    #[error("capacities must be positive and finite")]
    InvalidCapacity,
    #[error("per_path_capacity has {got} entries, expected {expected}")]
    CapacityCount { got: usize, expected: usize },
}

/// Additive-increase schedule, evaluated at an agent's continuity time: the
/// number of consecutive steps it has stayed on its path without migrating
/// or losing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaFunction {
    /// Fixed increase per step.
    Constant { value: f64 },
    /// Unit increase per step, the classic Reno behavior.
    Reno,
    /// Exponential ramp capped at `cap`: `min(base^tau, cap)`.
    SlowStart { base: f64, cap: f64 },
    /// Explicit per-step values; the last entry repeats for all later
    /// continuity times.
    Table { values: Vec<f64> },
}

impl AlphaFunction {
    /// Increase granted after `tau` uninterrupted steps on a path.
    pub fn eval(&self, tau: u32) -> f64 {
        match self {
            AlphaFunction::Constant { value } => *value,
            AlphaFunction::Reno => 1.0,
            AlphaFunction::SlowStart { base, cap } => {
                // Past the saturation point the ramp is pinned to the cap;
                // this also keeps the exponent small enough for powi.
                if tau >= self.saturation_tau() {
                    self.eval_saturated()
                } else {
                    base.powi(tau as i32).min(*cap)
                }
            }
            AlphaFunction::Table { values } => {
                let idx = (tau as usize).min(values.len().saturating_sub(1));
                values[idx]
            }
        }
    }

    /// Largest increase the schedule can produce, over all continuity times.
    pub fn max_increase(&self) -> f64 {
        match self {
            AlphaFunction::Constant { value } => *value,
            AlphaFunction::Reno => 1.0,
            AlphaFunction::SlowStart { base, cap } => {
                if *base > 1.0 {
                    *cap
                } else {
                    1.0f64.min(*cap)
                }
            }
            AlphaFunction::Table { values } => values.iter().copied().fold(f64::MIN, f64::max),
        }
    }

    /// First continuity time at and beyond which the schedule is constant.
    pub(crate) fn saturation_tau(&self) -> u32 {
        match self {
            AlphaFunction::Constant { .. } | AlphaFunction::Reno => 0,
            AlphaFunction::SlowStart { base, cap } => {
                if *base <= 1.0 || *cap <= 1.0 {
                    return 0;
                }
                let mut value = 1.0;
                let mut tau = 0u32;
                while value < *cap && tau < 4096 {
                    value *= base;
                    tau += 1;
                }
                tau
            }
            AlphaFunction::Table { values } => values.len().saturating_sub(1) as u32,
        }
    }

    /// Schedule value in the saturated (constant) regime.
    pub(crate) fn eval_saturated(&self) -> f64 {
        match self {
            AlphaFunction::Constant { value } => *value,
            AlphaFunction::Reno => 1.0,
            AlphaFunction::SlowStart { base, cap } => {
                if *base > 1.0 {
                    *cap
                } else {
                    1.0f64.min(*cap)
                }
            }
            AlphaFunction::Table { values } => *values.last().expect("validated non-empty"),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidAlpha(msg));
        match self {
            AlphaFunction::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return bad(format!("constant value must be positive, got {value}"));
                }
            }
            AlphaFunction::Reno => {}
            AlphaFunction::SlowStart { base, cap } => {
                if !(base.is_finite() && *base > 1.0) {
                    return bad(format!("slow-start base must exceed 1, got {base}"));
                }
                if !(cap.is_finite() && *cap > 0.0) {
                    return bad(format!("slow-start cap must be positive, got {cap}"));
                }
            }
            AlphaFunction::Table { values } => {
                if values.is_empty() {
                    return bad("table must have at least one entry".into());
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return bad(format!("table entries must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }
}

/// The MPCC protocol tuple: responsiveness, reset softness, multiplicative
/// decrease, and the additive-increase schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    /// Per-step probability that an agent off the least-utilized path
    /// migrates to it. Zero disables migration entirely (the static
    /// diagnostic mode).
    pub rho: f64,
    /// Window scale applied on arrival after a migration; 0 is a hard reset.
    pub sigma: f64,
    /// Window scale applied after a loss event.
    pub gamma: f64,
    /// Additive-increase schedule.
    pub alpha: AlphaFunction,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.rho.is_finite() && (0.0..=1.0).contains(&self.rho)) {
            return Err(ModelError::RhoOutOfRange(self.rho));
        }
        if !(self.sigma.is_finite() && (0.0..=1.0).contains(&self.sigma)) {
            return Err(ModelError::SigmaOutOfRange(self.sigma));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ModelError::GammaOutOfRange(self.gamma));
        }
        self.alpha.validate()
    }
}

/// Network of `n_paths` parallel disjoint bottlenecks shared by `n_agents`
/// flows. Capacity is split evenly unless an explicit per-path list is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_agents: usize,
    pub n_paths: usize,
    pub total_capacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_path_capacity: Option<Vec<f64>>,
}

impl NetworkConfig {
    pub fn new(n_agents: usize, n_paths: usize, total_capacity: f64) -> Self {
        NetworkConfig {
            n_agents,
            n_paths,
            total_capacity,
            per_path_capacity: None,
        }
    }

    /// Bottleneck capacity of each path.
    pub fn capacities(&self) -> Vec<f64> {
        match &self.per_path_capacity {
            Some(caps) => caps.clone(),
            None => vec![self.total_capacity / self.n_paths as f64; self.n_paths],
        }
    }

    pub fn path_capacity(&self, path: usize) -> f64 {
        match &self.per_path_capacity {
            Some(caps) => caps[path],
            None => self.total_capacity / self.n_paths as f64,
        }
    }

    /// The common per-path capacity, if all paths share one.
    pub fn uniform_capacity(&self) -> Option<f64> {
        match &self.per_path_capacity {
            None => Some(self.total_capacity / self.n_paths as f64),
            Some(caps) => {
                let first = caps[0];
                caps.iter().all(|c| *c == first).then_some(first)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_paths < 2 {
            return Err(ModelError::TooFewPaths(self.n_paths));
        }
        if self.n_agents < self.n_paths {
            return Err(ModelError::TooFewAgents {
                n_agents: self.n_agents,
                n_paths: self.n_paths,
            });
        }
        if !(self.total_capacity.is_finite() && self.total_capacity > 0.0) {
            return Err(ModelError::InvalidCapacity);
        }
        if let Some(caps) = &self.per_path_capacity {
            if caps.len() != self.n_paths {
                return Err(ModelError::CapacityCount {
                    got: caps.len(),
                    expected: self.n_paths,
                });
            }
            if caps.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return Err(ModelError::InvalidCapacity);
            }
        }
        Ok(())
    }
}

/// Per-path ranks: rank 0 is the most utilized path, rank `P-1` the least.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankVector(Vec<usize>);

impl RankVector {
    pub fn rank_of(&self, path: usize) -> usize {
        self.0[path]
    }

    /// The least-utilized path (rank `P-1`), the migration target.
    pub fn min_path(&self) -> usize {
        self.path_with_rank(self.0.len() - 1)
            .expect("rank vector is a permutation")
    }

    pub fn path_with_rank(&self, rank: usize) -> Option<usize> {
        self.0.iter().position(|r| *r == rank)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ranks paths by descending utilization (load over capacity). Ties are
/// broken in favor of the lower path index, which keeps runs reproducible
/// and breaks perfectly symmetric starts deterministically.
pub fn compute_ranks(loads: &[f64], capacities: &[f64]) -> RankVector {
    debug_assert_eq!(loads.len(), capacities.len());
    let mut order: Vec<usize> = (0..loads.len()).collect();
    order.sort_by(|&a, &b| {
        let ua = loads[a] / capacities[a];
        let ub = loads[b] / capacities[b];
        ub.partial_cmp(&ua)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0usize; loads.len()];
    for (rank, &path) in order.iter().enumerate() {
        ranks[path] = rank;
    }
    RankVector(ranks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reno() -> AlphaFunction {
        AlphaFunction::Reno
    }

    #[test]
    fn alpha_reno_is_unit() {
        assert_eq!(reno().eval(7), 1.0);
        assert_eq!(reno().eval(0), 1.0);
        assert_eq!(reno().max_increase(), 1.0);
    }

    #[test]
    fn alpha_constant() {
        let a = AlphaFunction::Constant { value: 2.0 };
        assert_eq!(a.eval(0), 2.0);
        assert_eq!(a.eval(1000), 2.0);
        assert_eq!(a.max_increase(), 2.0);
    }

    #[test]
    fn alpha_slow_start_ramps_to_cap() {
        let a = AlphaFunction::SlowStart { base: 2.0, cap: 8.0 };
        assert_eq!(a.eval(0), 1.0);
        assert_eq!(a.eval(2), 4.0);
        assert_eq!(a.eval(3), 8.0);
        assert_eq!(a.eval(5), 8.0);
        assert_eq!(a.eval(1_000_000), 8.0);
        assert_eq!(a.max_increase(), 8.0);
        assert_eq!(a.saturation_tau(), 3);
    }

    #[test]
    fn alpha_table_repeats_tail() {
        let a = AlphaFunction::Table {
            values: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(a.eval(1), 2.0);
        assert_eq!(a.eval(2), 3.0);
        assert_eq!(a.eval(50), 3.0);
        assert_eq!(a.max_increase(), 3.0);
    }

    #[test]
    fn alpha_validation_rejects_nonpositive() {
        assert!(AlphaFunction::Constant { value: 0.0 }.validate().is_err());
        assert!(AlphaFunction::Table { values: vec![] }.validate().is_err());
        assert!(AlphaFunction::Table {
            values: vec![1.0, -2.0]
        }
        .validate()
        .is_err());
        assert!(AlphaFunction::SlowStart { base: 1.0, cap: 8.0 }.validate().is_err());
    }

    #[test]
    fn params_validation_bounds() {
        let ok = ProtocolParams {
            rho: 0.5,
            sigma: 0.0,
            gamma: 0.5,
            alpha: reno(),
        };
        assert!(ok.validate().is_ok());
        // rho = 0 is the explicit diagnostic mode.
        assert!(ProtocolParams { rho: 0.0, ..ok.clone() }.validate().is_ok());
        assert!(matches!(
            ProtocolParams { rho: 1.5, ..ok.clone() }.validate(),
            Err(ModelError::RhoOutOfRange(_))
        ));
        assert!(matches!(
            ProtocolParams { sigma: -0.1, ..ok.clone() }.validate(),
            Err(ModelError::SigmaOutOfRange(_))
        ));
        assert!(matches!(
            ProtocolParams { gamma: 1.0, ..ok }.validate(),
            Err(ModelError::GammaOutOfRange(_))
        ));
    }

    #[test]
    fn network_validation() {
        let ok = NetworkConfig::new(10, 2, 100.0);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.capacities(), vec![50.0, 50.0]);
        assert!(NetworkConfig::new(10, 1, 100.0).validate().is_err());
        assert!(NetworkConfig::new(1, 2, 100.0).validate().is_err());
        let mut hetero = NetworkConfig::new(10, 2, 100.0);
        hetero.per_path_capacity = Some(vec![60.0]);
        assert!(matches!(
            hetero.validate(),
            Err(ModelError::CapacityCount { got: 1, expected: 2 })
        ));
        hetero.per_path_capacity = Some(vec![60.0, 40.0]);
        assert!(hetero.validate().is_ok());
        assert_eq!(hetero.uniform_capacity(), None);
    }

    #[test]
    fn ranks_by_descending_load() {
        let ranks = compute_ranks(&[10.0, 7.0, 9.0], &[1.0, 1.0, 1.0]);
        assert_eq!(ranks.as_slice(), &[0, 2, 1]);
        assert_eq!(ranks.min_path(), 1);
    }

    #[test]
    fn ranks_tie_break_by_index() {
        let ranks = compute_ranks(&[5.0, 5.0], &[1.0, 1.0]);
        assert_eq!(ranks.as_slice(), &[0, 1]);
        assert_eq!(ranks.min_path(), 1);
    }

    #[test]
    fn ranks_use_utilization_not_raw_load() {
        let ranks = compute_ranks(&[8.0, 8.0], &[16.0, 8.0]);
        assert_eq!(ranks.as_slice(), &[1, 0]);
        assert_eq!(ranks.min_path(), 0);
    }

    proptest! {
        #[test]
        fn ranks_form_a_permutation(loads in proptest::collection::vec(0.0f64..1e6, 2..12)) {
            let caps = vec![1.0; loads.len()];
            let ranks = compute_ranks(&loads, &caps);
            let mut seen = vec![false; loads.len()];
            for &r in ranks.as_slice() {
                prop_assert!(r < loads.len());
                prop_assert!(!seen[r]);
                seen[r] = true;
            }
        }

        #[test]
        fn ranks_order_matches_strict_utilization(loads in proptest::collection::vec(0.0f64..1e6, 2..12)) {
            let caps = vec![1.0; loads.len()];
            let ranks = compute_ranks(&loads, &caps);
            for a in 0..loads.len() {
                for b in 0..loads.len() {
                    if loads[a] > loads[b] {
                        prop_assert!(ranks.rank_of(a) < ranks.rank_of(b));
                    }
                }
            }
        }
    }
}
