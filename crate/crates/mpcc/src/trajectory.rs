//! Per-step trajectory records shared by the stochastic simulator and the
//! expected-dynamics iterator, plus CSV export and cross-seed aggregation.

use std::io::Write;

/// One path's view of a single time step.
///
/// `in_migrants`/`out_migrants` count the migration that produced this state,
/// i.e. the moves decided during the transition from the previous step; the
/// initial record carries zeroes. `loss` is 1 when the path's load exceeds
/// its capacity at this step (the agents on it will decrease next), and may
/// be a fraction in cross-seed means.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub rank: usize,
    pub agents: f64,
    pub load: f64,
    pub loss: f64,
    pub in_migrants: f64,
    pub out_migrants: f64,
}

/// Snapshot of every path at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: u64,
    pub paths: Vec<PathStep>,
    /// Population variance of agent congestion windows at this step; absent
    /// for expected-dynamics trajectories, which track no per-agent state.
    pub window_variance: Option<f64>,
}

/// A full run: one record per step, including the initial state, so a run of
/// horizon `T` holds `T + 1` records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn n_paths(&self) -> usize {
        self.records.first().map_or(0, |r| r.paths.len())
    }

    /// Number of simulated steps (records minus the initial state).
    pub fn horizon(&self) -> u64 {
        self.records.len().saturating_sub(1) as u64
    }

    /// Loads at step `t` arranged by rank: slot `r` holds the load of the
    /// path that had rank `r` at that step.
    pub fn loads_by_rank(&self, t: usize) -> Vec<f64> {
        Self::by_rank(&self.records[t], |p| p.load)
    }

    /// Agent counts at step `t` arranged by rank.
    pub fn agents_by_rank(&self, t: usize) -> Vec<f64> {
        Self::by_rank(&self.records[t], |p| p.agents)
    }

    fn by_rank(record: &StepRecord, field: impl Fn(&PathStep) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; record.paths.len()];
        for p in &record.paths {
            out[p.rank] = field(p);
        }
        out
    }

    /// Writes the run as CSV with columns
    /// `t,path,rank,agents,load,loss_flag,in_migrants,out_migrants`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "t",
            "path",
            "rank",
            "agents",
            "load",
            "loss_flag",
            "in_migrants",
            "out_migrants",
        ])?;
        for record in &self.records {
            for (path, step) in record.paths.iter().enumerate() {
                w.serialize((
                    record.time,
                    path,
                    step.rank,
                    step.agents,
                    step.load,
                    step.loss,
                    step.in_migrants,
                    step.out_migrants,
                ))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Cross-seed mean trajectory, aggregated by rank: slot `r` of each output
/// record averages, over all input runs, the quantities of whichever path
/// held rank `r` at that step. Rank aggregation stays meaningful even when
/// seeds drift out of phase, which per-path averaging does not.
pub fn mean_by_rank(trajectories: &[Trajectory]) -> Trajectory {
    let Some(first) = trajectories.first() else {
        return Trajectory::default();
    };
    let n_steps = first.records.len();
    let n_paths = first.n_paths();
    debug_assert!(trajectories
        .iter()
        .all(|t| t.records.len() == n_steps && t.n_paths() == n_paths));
    let count = trajectories.len() as f64;

    let mut records = Vec::with_capacity(n_steps);
    for t in 0..n_steps {
        let mut paths = vec![
            PathStep {
                rank: 0,
                agents: 0.0,
                load: 0.0,
                loss: 0.0,
                in_migrants: 0.0,
                out_migrants: 0.0,
            };
            n_paths
        ];
        let mut var_sum = 0.0;
        let mut var_count = 0usize;
        for traj in trajectories {
            let record = &traj.records[t];
            for step in &record.paths {
                let slot = &mut paths[step.rank];
                slot.agents += step.agents;
                slot.load += step.load;
                slot.loss += step.loss;
                slot.in_migrants += step.in_migrants;
                slot.out_migrants += step.out_migrants;
            }
            if let Some(v) = record.window_variance {
                var_sum += v;
                var_count += 1;
            }
        }
        for (rank, slot) in paths.iter_mut().enumerate() {
            slot.rank = rank;
            slot.agents /= count;
            slot.load /= count;
            slot.loss /= count;
            slot.in_migrants /= count;
            slot.out_migrants /= count;
        }
        records.push(StepRecord {
            time: first.records[t].time,
            paths,
            window_variance: (var_count == trajectories.len()).then(|| var_sum / count),
        });
    }
    Trajectory { records }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(time: u64, loads: &[f64], ranks: &[usize]) -> StepRecord {
        StepRecord {
            time,
            paths: loads
                .iter()
                .zip(ranks)
                .map(|(&load, &rank)| PathStep {
                    rank,
                    agents: load,
                    load,
                    loss: 0.0,
                    in_migrants: 0.0,
                    out_migrants: 0.0,
                })
                .collect(),
            window_variance: Some(1.0),
        }
    }

    #[test]
    fn by_rank_reorders_paths() {
        let traj = Trajectory {
            records: vec![record(0, &[3.0, 9.0], &[1, 0])],
        };
        assert_eq!(traj.loads_by_rank(0), vec![9.0, 3.0]);
    }

    #[test]
    fn mean_by_rank_averages_rank_slots() {
        // Two runs with opposite rank layouts; rank slots must still align.
        let a = Trajectory {
            records: vec![record(0, &[10.0, 2.0], &[0, 1])],
        };
        let b = Trajectory {
            records: vec![record(0, &[4.0, 12.0], &[1, 0])],
        };
        let mean = mean_by_rank(&[a, b]);
        assert_eq!(mean.records[0].paths[0].load, 11.0);
        assert_eq!(mean.records[0].paths[1].load, 3.0);
        assert_eq!(mean.records[0].window_variance, Some(1.0));
    }

    #[test]
    fn csv_has_exact_header_and_row_count() {
        let traj = Trajectory {
            records: vec![
                record(0, &[1.0, 2.0], &[1, 0]),
                record(1, &[3.0, 4.0], &[1, 0]),
            ],
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,path,rank,agents,load,loss_flag,in_migrants,out_migrants"
        );
        assert_eq!(lines.count(), 4);
    }
}
