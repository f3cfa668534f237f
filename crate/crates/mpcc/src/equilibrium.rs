//! Closed-form characterization of the dynamic equilibria.
//!
//! On the cyclic pattern where path ranks rotate round-robin with period
//! `P`, the expected agent counts and (in the lossless case) the expected
//! loads per rank converge to unique fixed points. This module computes
//! those fixed points, the exponential trajectories toward them, oscillation
//! bounds for the lossy regime, and a parameter-space map flagging where the
//! assumed cyclic pattern is self-contradictory.

use crate::mean_field::expected_additive_increase;
use crate::model::{ModelError, NetworkConfig, ProtocolParams};
use serde::Serialize;
use thiserror::Error;

/// The hypothetical cycle stops contracting when its per-cycle factor
/// reaches 1; at reset softness 1 this happens identically, because migrated
/// load arrives at full weight. Classification uses a small tolerance so the
/// boundary is detected robustly in floating point.
const DIVERGENCE_TOL: f64 = 1e-9;

/// Slack for the non-increasing rank-order check: equalities (exact ties)
/// count as consistent.
const ORDER_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no dynamic equilibrium without migration (rho = 0)")]
    NoMigration,
    #[error("equilibrium analysis requires identical per-path capacities")]
    HeterogeneousCapacity,
    #[error(
        "hypothetical lossless cycle does not contract (factor {factor}): \
         no lossless equilibrium; lossy regime with unbounded hypothetical peak"
    )]
    Divergent { factor: f64 },
    #[error("lossy bounds are defined only in the lossy regime")]
    NotLossy,
    #[error("trajectory requires a contracting cycle (factor {factor} >= 1)")]
    NonContracting { factor: f64 },
    #[error("consistency grid values out of range: rho in (0, 1], sigma in [0, 1]")]
    InvalidGrid,
}

/// Expected agent count per rank on the equilibrium cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentEquilibrium {
    /// `per_rank[p]` is the expected agent count of the rank-`p` path.
    pub per_rank: Vec<f64>,
}

impl AgentEquilibrium {
    pub fn total(&self) -> f64 {
        self.per_rank.iter().sum()
    }
}

/// Closed-form agent equilibrium: the rank-`p` count is
/// `(1-rho)^p * rho * N / (1 - (1-rho)^P)`. At `rho = 1` this degenerates to
/// the whole population on the rank-0 path.
pub fn agent_equilibrium(
    n_agents: usize,
    n_paths: usize,
    rho: f64,
) -> Result<AgentEquilibrium, EquilibriumError> {
    if n_paths < 2 {
        return Err(ModelError::TooFewPaths(n_paths).into());
    }
    if !(rho.is_finite() && rho > 0.0 && rho <= 1.0) {
        if rho == 0.0 {
            return Err(EquilibriumError::NoMigration);
        }
        return Err(ModelError::RhoOutOfRange(rho).into());
    }
    let n = n_agents as f64;
    let q = 1.0 - rho;
    let denom = 1.0 - q.powi(n_paths as i32);
    let per_rank = (0..n_paths)
        .map(|p| q.powi(p as i32) * rho * n / denom)
        .collect();
    Ok(AgentEquilibrium { per_rank })
}

/// Agent count of a path `elapsed` steps after it held `a_start` agents,
/// interpolating the exponential approach to the equilibrium value.
pub fn agent_trajectory(a_start: f64, a_eq: f64, rho: f64, elapsed: f64) -> f64 {
    (a_start - a_eq) * (1.0 - rho).powf(elapsed) + a_eq
}

/// Whether the equilibrium peak respects the per-path capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Lossless,
    Lossy,
}

/// Oscillation bounds for the lossy regime: the minimum flow stays above
/// `gamma * (1-rho)^(P-1) * C_pi`, and the maximum stays below the value the
/// lossless cycle reaches one full period after sitting exactly at capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossyBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Shared ingredients of the flow analysis.
struct Hypothetical {
    agents: AgentEquilibrium,
    alpha_hat: Vec<f64>,
    z: f64,
    /// `1 + rho * sigma * z`, the per-step boost of the migration target.
    growth: f64,
    /// Per-cycle contraction, `growth * (1-rho)^(P-1)`.
    cycle_factor: f64,
    cap_per_path: f64,
    survive: f64,
}

fn hypothetical(
    config: &NetworkConfig,
    params: &ProtocolParams,
) -> Result<Hypothetical, EquilibriumError> {
    config.validate()?;
    params.validate()?;
    let cap_per_path = config
        .uniform_capacity()
        .ok_or(EquilibriumError::HeterogeneousCapacity)?;
    if params.rho == 0.0 {
        return Err(EquilibriumError::NoMigration);
    }
    let n_paths = config.n_paths;
    let agents = agent_equilibrium(config.n_agents, n_paths, params.rho)?;
    let alpha_hat: Vec<f64> = (0..n_paths)
        .map(|p| expected_additive_increase(p, params, n_paths))
        .collect();
    let a_last = agents.per_rank[n_paths - 1];
    // At rho = 1 the rank-(P-1) path is empty; no load survives migration, so
    // the inflow boost is irrelevant and the equilibrium flow collapses to 0.
    let z = if a_last > 0.0 {
        (agents.total() - a_last) / a_last
    } else {
        0.0
    };
    let growth = 1.0 + params.rho * params.sigma * z;
    let survive = (1.0 - params.rho).powi(n_paths as i32 - 1);
    Ok(Hypothetical {
        agents,
        alpha_hat,
        z,
        growth,
        cycle_factor: growth * survive,
        cap_per_path,
        survive,
    })
}

impl Hypothetical {
    fn contracts(&self) -> bool {
        self.cycle_factor < 1.0 - DIVERGENCE_TOL
    }

    /// Closed-form peak (rank-0) load of the hypothetical lossless cycle.
    fn peak(&self) -> f64 {
        let p = self.alpha_hat.len();
        let head: f64 = self.alpha_hat[..p - 1].iter().sum();
        let a_last = self.agents.per_rank[p - 1];
        (self.growth * head + self.alpha_hat[p - 1]) * a_last / (1.0 - self.cycle_factor)
    }

    /// Closed-form trough (rank-`P-1`) load of the hypothetical cycle;
    /// algebraically equal to pushing the peak through `P-1` off-target
    /// steps.
    fn trough(&self) -> f64 {
        let p = self.alpha_hat.len();
        let head: f64 = self.alpha_hat[..p - 1].iter().sum();
        let a_last = self.agents.per_rank[p - 1];
        (head + self.alpha_hat[p - 1] * self.survive) * a_last / (1.0 - self.cycle_factor)
    }

    /// One application of the hypothetical dynamics to a path currently at
    /// `rank` with load `load`.
    fn apply(&self, load: f64, rank: usize, rho: f64) -> f64 {
        let p = self.alpha_hat.len();
        if rank == p - 1 {
            self.growth * load + self.alpha_hat[rank] * self.agents.per_rank[rank]
        } else {
            (1.0 - rho) * (load + self.alpha_hat[rank] * self.agents.per_rank[rank])
        }
    }

    fn bounds(&self, params: &ProtocolParams) -> LossyBounds {
        let p = self.alpha_hat.len();
        let lower = params.gamma * self.survive * self.cap_per_path;
        let mut load = self.cap_per_path;
        for rank in 0..p {
            load = self.apply(load, rank, params.rho);
        }
        LossyBounds { lower, upper: load }
    }
}

/// The per-rank flow equilibrium of the hypothetical lossless cycle, its
/// regime classification against the per-path capacity, and (when lossy) the
/// oscillation bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowEquilibrium {
    /// `per_rank[p]` is the expected load of the rank-`p` path.
    pub per_rank: Vec<f64>,
    pub regime: Regime,
    /// Present exactly when the regime is lossy.
    pub bounds: Option<LossyBounds>,
    pub agents: AgentEquilibrium,
    pub alpha_hat: Vec<f64>,
    pub z: f64,
    /// Per-cycle contraction factor of deviations from the equilibrium.
    pub cycle_factor: f64,
    pub cap_per_path: f64,
}

impl FlowEquilibrium {
    /// Rank-0 (maximum) load of the cycle.
    pub fn peak(&self) -> f64 {
        self.per_rank[0]
    }

    /// Rank-(P-1) (minimum) load of the cycle.
    pub fn trough(&self) -> f64 {
        self.per_rank[self.per_rank.len() - 1]
    }

    /// Load of a path `elapsed` steps after it carried `l_start` at rank
    /// `rank`, interpolating the per-cycle contraction.
    pub fn trajectory(&self, rank: usize, l_start: f64, elapsed: f64) -> f64 {
        flow_trajectory(
            l_start,
            self.per_rank[rank],
            self.cycle_factor,
            self.per_rank.len(),
            elapsed,
        )
        .expect("constructed equilibria contract")
    }
}

/// Solves the one-cycle fixed point of the hypothetical lossless dynamics:
/// closed forms pin the rank-0 and rank-(P-1) loads, and forward substitution
/// fills the intermediate ranks. The regime is lossless exactly when the
/// peak fits within the per-path capacity.
pub fn flow_equilibrium(
    config: &NetworkConfig,
    params: &ProtocolParams,
) -> Result<FlowEquilibrium, EquilibriumError> {
    let hypo = hypothetical(config, params)?;
    if !hypo.contracts() {
        return Err(EquilibriumError::Divergent {
            factor: hypo.cycle_factor,
        });
    }
    let n_paths = config.n_paths;
    let mut per_rank = vec![0.0; n_paths];
    per_rank[0] = hypo.peak();
    for rank in 0..n_paths - 1 {
        per_rank[rank + 1] = hypo.apply(per_rank[rank], rank, params.rho);
    }
    debug_assert!(
        (per_rank[n_paths - 1] - hypo.trough()).abs()
            <= 1e-9 * hypo.trough().abs().max(1e-12),
        "forward substitution must land on the closed-form trough"
    );
    let regime = if per_rank[0] <= hypo.cap_per_path {
        Regime::Lossless
    } else {
        Regime::Lossy
    };
    let bounds = match regime {
        Regime::Lossless => None,
        Regime::Lossy => Some(hypo.bounds(params)),
    };
    Ok(FlowEquilibrium {
        per_rank,
        regime,
        bounds,
        agents: hypo.agents,
        alpha_hat: hypo.alpha_hat,
        z: hypo.z,
        cycle_factor: hypo.cycle_factor,
        cap_per_path: hypo.cap_per_path,
    })
}

/// Load of a path `elapsed` steps after it carried `l_start`, relaxing
/// toward `l_eq` with the given per-cycle factor.
pub fn flow_trajectory(
    l_start: f64,
    l_eq: f64,
    cycle_factor: f64,
    n_paths: usize,
    elapsed: f64,
) -> Result<f64, EquilibriumError> {
    if cycle_factor >= 1.0 {
        return Err(EquilibriumError::NonContracting {
            factor: cycle_factor,
        });
    }
    Ok((l_start - l_eq) * cycle_factor.powf(elapsed / n_paths as f64) + l_eq)
}

/// Oscillation bounds for a lossy configuration. Errors in the lossless
/// regime; a divergent hypothetical cycle is necessarily lossy and still has
/// finite bounds.
pub fn lossy_bounds(
    config: &NetworkConfig,
    params: &ProtocolParams,
) -> Result<LossyBounds, EquilibriumError> {
    let hypo = hypothetical(config, params)?;
    if hypo.contracts() && hypo.peak() <= hypo.cap_per_path {
        return Err(EquilibriumError::NotLossy);
    }
    Ok(hypo.bounds(params))
}

/// Verdict for one `(rho, sigma)` cell of the consistency map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// Hypothetical per-rank loads are non-increasing in rank: the assumed
    /// cyclic pattern is self-consistent.
    Consistent,
    /// Some rank carries more load than a better-ranked path: the assumed
    /// pattern contradicts itself.
    OrderViolation,
    /// The hypothetical cycle has no finite fixed point.
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyCell {
    pub rho: f64,
    pub sigma: f64,
    pub status: CellStatus,
    /// Hypothetical peak load; absent for divergent cells.
    pub peak: Option<f64>,
    /// Hypothetical trough load; absent for divergent cells.
    pub trough: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyMap {
    pub n_paths: usize,
    pub cells: Vec<ConsistencyCell>,
}

impl ConsistencyMap {
    /// Share of cells whose assumed cyclic pattern fails (order violations
    /// and divergent cells alike).
    pub fn inconsistent_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        let bad = self
            .cells
            .iter()
            .filter(|c| c.status != CellStatus::Consistent)
            .count();
        bad as f64 / self.cells.len() as f64
    }

    pub fn cells_with(&self, status: CellStatus) -> impl Iterator<Item = &ConsistencyCell> {
        self.cells.iter().filter(move |c| c.status == status)
    }

    /// CSV with columns `rho,sigma,P,consistent,Lhat0,LhatPm1`; divergent
    /// cells leave the load columns empty.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rho", "sigma", "P", "consistent", "Lhat0", "LhatPm1"])?;
        for cell in &self.cells {
            w.serialize((
                cell.rho,
                cell.sigma,
                self.n_paths,
                cell.status == CellStatus::Consistent,
                cell.peak,
                cell.trough,
            ))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the pattern-consistency check over a `(rho, sigma)` grid, with
/// the decrease factor and increase schedule taken from `base_params`. Cells
/// are emitted in row-major order, `rho` outer and `sigma` inner.
pub fn consistency_map(
    config: &NetworkConfig,
    base_params: &ProtocolParams,
    rho_values: &[f64],
    sigma_values: &[f64],
) -> Result<ConsistencyMap, EquilibriumError> {
    config.validate()?;
    if rho_values.is_empty()
        || sigma_values.is_empty()
        || rho_values.iter().any(|r| !(*r > 0.0 && *r <= 1.0))
        || sigma_values.iter().any(|s| !(0.0..=1.0).contains(s))
    {
        return Err(EquilibriumError::InvalidGrid);
    }
    let mut cells = Vec::with_capacity(rho_values.len() * sigma_values.len());
    for &rho in rho_values {
        for &sigma in sigma_values {
            let params = ProtocolParams {
                rho,
                sigma,
                ..base_params.clone()
            };
            let cell = match flow_equilibrium(config, &params) {
                Ok(fe) => {
                    let ordered = fe.per_rank.windows(2).all(|w| {
                        w[1] <= w[0] * (1.0 + ORDER_TOL) + ORDER_TOL
                    });
                    ConsistencyCell {
                        rho,
                        sigma,
                        status: if ordered {
                            CellStatus::Consistent
                        } else {
                            CellStatus::OrderViolation
                        },
                        peak: Some(fe.peak()),
                        trough: Some(fe.trough()),
                    }
                }
                Err(EquilibriumError::Divergent { .. }) => ConsistencyCell {
                    rho,
                    sigma,
                    status: CellStatus::Divergent,
                    peak: None,
                    trough: None,
                },
                Err(e) => return Err(e),
            };
            cells.push(cell);
        }
    }
    Ok(ConsistencyMap {
        n_paths: config.n_paths,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AlphaFunction;

    fn reno(rho: f64, sigma: f64) -> ProtocolParams {
        ProtocolParams {
            rho,
            sigma,
            gamma: 0.5,
            alpha: AlphaFunction::Reno,
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn agent_equilibrium_full_migration() {
        let eq = agent_equilibrium(99, 3, 1.0).unwrap();
        assert_eq!(eq.per_rank, vec![99.0, 0.0, 0.0]);
    }

    #[test]
    fn agent_equilibrium_worked_case() {
        let eq = agent_equilibrium(100, 2, 0.5).unwrap();
        assert!(close(eq.per_rank[0], 200.0 / 3.0, 1e-12));
        assert!(close(eq.per_rank[1], 100.0 / 3.0, 1e-12));
    }

    #[test]
    fn agent_equilibrium_small_rho_is_uniform() {
        let eq = agent_equilibrium(100, 4, 1e-6).unwrap();
        for value in &eq.per_rank {
            assert!((value - 25.0).abs() / 25.0 < 1e-3);
        }
    }

    #[test]
    fn agent_equilibrium_strictly_decreasing_and_conserving() {
        for &(n, p, rho) in &[(100usize, 2usize, 0.3), (500, 3, 0.7), (9999, 5, 0.05)] {
            let eq = agent_equilibrium(n, p, rho).unwrap();
            assert!((eq.total() - n as f64).abs() < 1e-9 * n as f64);
            for w in eq.per_rank.windows(2) {
                assert!(w[0] > w[1]);
            }
        }
    }

    #[test]
    fn agent_equilibrium_rejects_rho_zero() {
        assert!(matches!(
            agent_equilibrium(100, 2, 0.0),
            Err(EquilibriumError::NoMigration)
        ));
    }

    #[test]
    fn agent_trajectory_examples() {
        // Starting on the equilibrium stays there.
        assert_eq!(agent_trajectory(33.0, 33.0, 0.5, 17.0), 33.0);
        // Two steps at rho = 0.5 quarter the deviation.
        let a = agent_trajectory(50.0, 100.0 / 3.0, 0.5, 2.0);
        assert!(close(a, 37.5, 1e-12));
        // Long horizons land on the equilibrium (relative deviation).
        let a = agent_trajectory(50.0, 100.0 / 3.0, 0.3, 60.0);
        assert!((a - 100.0 / 3.0).abs() / (100.0 / 3.0) < 1e-9);
    }

    #[test]
    fn flow_equilibrium_worked_case() {
        let config = NetworkConfig::new(100, 2, 400.0);
        let fe = flow_equilibrium(&config, &reno(0.5, 0.0)).unwrap();
        assert!(close(fe.peak(), 400.0 / 3.0, 1e-12), "peak {}", fe.peak());
        assert!(close(fe.trough(), 100.0, 1e-12), "trough {}", fe.trough());
        assert_eq!(fe.regime, Regime::Lossless);
        assert!(fe.bounds.is_none());

        // Halving total capacity to 200 puts the 133.3 peak over the 100
        // per-path budget.
        let tight = NetworkConfig::new(100, 2, 200.0);
        let fe = flow_equilibrium(&tight, &reno(0.5, 0.0)).unwrap();
        assert_eq!(fe.regime, Regime::Lossy);
        assert!(fe.bounds.is_some());
    }

    #[test]
    fn hard_reset_drops_the_inflow_term() {
        // With sigma = 0 the peak reduces to (sum of alpha_hat) * a_min /
        // (1 - (1-rho)^(P-1)); check the reduction at a few points.
        for &(n, p, rho) in &[(100usize, 2usize, 0.5), (300, 3, 0.25), (80, 4, 0.6)] {
            let config = NetworkConfig::new(n, p, 1e12);
            let params = reno(rho, 0.0);
            let fe = flow_equilibrium(&config, &params).unwrap();
            let survive = (1.0 - rho).powi(p as i32 - 1);
            let total_alpha: f64 = fe.alpha_hat.iter().sum();
            let reduced = total_alpha * fe.agents.per_rank[p - 1] / (1.0 - survive);
            assert!(close(fe.peak(), reduced, 1e-12));
        }
    }

    #[test]
    fn lossy_bounds_formulas() {
        // gamma = 0.5, rho = 0.1, P = 3, per-path capacity 100: the trough
        // bound is 0.5 * 0.81 * 100 = 40.5.
        let config = NetworkConfig::new(100, 3, 300.0);
        let params = reno(0.1, 0.0);
        let fe = flow_equilibrium(&config, &params).unwrap();
        assert_eq!(fe.regime, Regime::Lossy);
        let bounds = lossy_bounds(&config, &params).unwrap();
        assert!(close(bounds.lower, 40.5, 1e-12));
        assert!(bounds.upper >= 100.0);
        assert_eq!(fe.bounds, Some(bounds));
    }

    #[test]
    fn lossy_bounds_reject_lossless_configs() {
        let config = NetworkConfig::new(100, 2, 400.0);
        assert!(matches!(
            lossy_bounds(&config, &reno(0.5, 0.0)),
            Err(EquilibriumError::NotLossy)
        ));
    }

    #[test]
    fn full_softness_diverges() {
        // sigma = 1 carries full windows across migrations: the cycle factor
        // is exactly 1 and no finite equilibrium exists.
        let config = NetworkConfig::new(100, 3, 1e9);
        match flow_equilibrium(&config, &reno(0.2, 1.0)) {
            Err(EquilibriumError::Divergent { factor }) => {
                assert!((factor - 1.0).abs() < 1e-9);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        // Divergent cells are necessarily lossy and still have bounds.
        let bounds = lossy_bounds(&config, &reno(0.2, 1.0)).unwrap();
        assert!(bounds.upper > bounds.lower);
    }

    #[test]
    fn heterogeneous_capacity_is_rejected() {
        let mut config = NetworkConfig::new(100, 2, 400.0);
        config.per_path_capacity = Some(vec![300.0, 100.0]);
        assert!(matches!(
            flow_equilibrium(&config, &reno(0.5, 0.0)),
            Err(EquilibriumError::HeterogeneousCapacity)
        ));
    }

    #[test]
    fn flow_trajectory_interpolates() {
        // Deviation 40 with factor 0.45 over two full cycles leaves
        // 40 * 0.2025 on top of the equilibrium.
        let got = flow_trajectory(140.0, 100.0, 0.45, 3, 6.0).unwrap();
        assert!(close(got, 100.0 + 40.0 * 0.2025, 1e-12));
        assert_eq!(flow_trajectory(100.0, 100.0, 0.45, 3, 9.0).unwrap(), 100.0);
        assert!(flow_trajectory(1.0, 2.0, 1.0, 3, 3.0).is_err());
    }

    #[test]
    fn consistency_worked_cells() {
        let config = NetworkConfig::new(100, 2, 400.0);
        let map = consistency_map(&config, &reno(0.5, 0.0), &[0.5, 1.0], &[0.0]).unwrap();
        assert_eq!(map.cells.len(), 2);
        // The worked lossless case is consistent; full migration collapses
        // every rank to zero load, which is consistent by construction.
        assert_eq!(map.cells[0].status, CellStatus::Consistent);
        assert_eq!(map.cells[1].status, CellStatus::Consistent);
    }

    #[test]
    fn consistency_csv_schema() {
        let config = NetworkConfig::new(100, 3, 1e9);
        let map = consistency_map(&config, &reno(0.5, 0.0), &[0.2], &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "rho,sigma,P,consistent,Lhat0,LhatPm1");
        // The sigma = 1 cell is divergent: flagged inconsistent, loads empty.
        let last = lines.nth(1).unwrap();
        assert!(last.starts_with("0.2,1.0,3,false,,"));
    }
}
