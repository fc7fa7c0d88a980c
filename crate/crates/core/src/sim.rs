//! Closed-loop slotted simulation, metrics, sweeps and the paired
//! scheduler/estimator comparison.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{pu_occupancy, sample_channel, slot_rng, stream, ChannelError, ChannelModelParams, OccupancyPolicy};
use crate::config::{validate_config, Mode, PerUser, ScenarioConfig, ValidationReport};
use crate::estimator::{update_estimate, EstimatorState};
use crate::flow_control::{actual_admission, virtual_admission};
use crate::model::{ControlAction, QueueState};
use crate::overlay::check_full_overlay;
use crate::queueing::{sample_arrivals, update_averages, update_queues, RunningAverages, SlotSample};
use crate::rates::slot_rates;
use crate::resource_alloc::{solve_allocation, DualStatus, SolverParams, UrgencyWeights};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration:\n{0}")]
    InvalidConfig(ValidationReport),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("unknown sweep parameter `{0}`")]
    UnknownParam(String),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A hard invariant broken during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    QueueBound {
        slot: u64,
        su: usize,
        queue: String,
        value: f64,
        cap: f64,
    },
    Infeasible {
        slot: u64,
        detail: String,
    },
    Negative {
        slot: u64,
    },
}

/// Everything recorded about one slot. Queue values are those at the start
/// of the slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub slot: u64,
    pub queues: QueueState,
    pub qhat: Vec<f64>,
    pub pu_idle: Vec<bool>,
    pub admit_open: Vec<f64>,
    pub admit_private: Vec<f64>,
    pub virt_open: Vec<f64>,
    pub virt_private: Vec<f64>,
    pub zeta: Vec<bool>,
    pub rate_open: Vec<f64>,
    pub rate_private: Vec<f64>,
    pub rate_pu: Vec<f64>,
    pub energy: f64,
    /// `sum_n theta_n T_p + phi_n T_o`
    pub utility: f64,
    pub dual_status: DualStatus,
    pub dual_iterations: usize,
    pub delta: f64,
}

impl SlotMetrics {
    pub fn su_sum_rate(&self) -> f64 {
        self.rate_open.iter().sum::<f64>() + self.rate_private.iter().sum::<f64>()
    }
}

/// Long-run averages over a window of slots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub t_o: Vec<f64>,
    pub t_p: Vec<f64>,
    pub r_o: Vec<f64>,
    pub r_p: Vec<f64>,
    pub r_pu: Vec<f64>,
    pub q_o: Vec<f64>,
    pub e: f64,
    pub su_sum_rate: f64,
    pub utility: f64,
}

impl TailStats {
    /// Little's-law open delay of SU `n`; `None` with no admissions.
    pub fn delay_o(&self, n: usize) -> Option<f64> {
        (self.t_o[n] > 0.0).then(|| self.q_o[n] / self.t_o[n])
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for part in [&self.t_o, &self.t_p, &self.r_o, &self.r_p, &self.r_pu, &self.q_o] {
            v.extend_from_slice(part);
        }
        v.extend([self.e, self.su_sum_rate, self.utility]);
        v
    }

    fn unflatten(&self, v: &[f64]) -> TailStats {
        let mut it = v.iter().copied();
        let mut take = |len: usize| (0..len).map(|_| it.next().unwrap_or(0.0)).collect::<Vec<_>>();
        let t_o = take(self.t_o.len());
        let t_p = take(self.t_p.len());
        let r_o = take(self.r_o.len());
        let r_p = take(self.r_p.len());
        let r_pu = take(self.r_pu.len());
        let q_o = take(self.q_o.len());
        let rest = take(3);
        TailStats {
            t_o,
            t_p,
            r_o,
            r_p,
            r_pu,
            q_o,
            e: rest[0],
            su_sum_rate: rest[1],
            utility: rest[2],
        }
    }

    /// Element-wise mean and standard error across runs.
    pub fn mean_and_se(runs: &[TailStats]) -> (TailStats, TailStats) {
        let Some(first) = runs.first() else {
            return (TailStats::default(), TailStats::default());
        };
        let flat: Vec<Vec<f64>> = runs.iter().map(TailStats::flatten).collect();
        let k = flat.len() as f64;
        let len = flat[0].len();
        let mean: Vec<f64> = (0..len).map(|i| flat.iter().map(|r| r[i]).sum::<f64>() / k).collect();
        let se: Vec<f64> = (0..len)
            .map(|i| {
                if flat.len() < 2 {
                    return 0.0;
                }
                let var = flat.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            })
            .collect();
        (first.unflatten(&mean), first.unflatten(&se))
    }
}

/// Least-squares slope of a series against its index, with its standard
/// error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub se: f64,
}

pub fn linear_trend(y: &[f64]) -> Trend {
    let n = y.len();
    if n < 3 {
        return Trend { slope: 0.0, se: 0.0 };
    }
    let nf = n as f64;
    let xm = (nf - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / nf;
    let sxx: f64 = (0..n).map(|i| (i as f64 - xm).powi(2)).sum();
    let sxy: f64 = y.iter().enumerate().map(|(i, v)| (i as f64 - xm) * (v - ym)).sum();
    let slope = sxy / sxx;
    let sse: f64 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (v - ym - slope * (i as f64 - xm)).powi(2))
        .sum();
    Trend {
        slope,
        se: (sse / (nf - 2.0) / sxx).sqrt(),
    }
}

/// Drift constant `B` of the Lyapunov bound.
pub fn drift_bound_b(cfg: &ScenarioConfig, r0_max: f64) -> f64 {
    let (qo, qp, mu, d) = (cfg.q_max_open, cfg.q_max_private, cfg.mu_max, cfg.d_max);
    let n = cfg.num_sus as f64;
    let frac = |b: f64, q: f64| if q > 0.0 { 1.0 - b / q } else { 0.0 };
    let per_su = 0.5 * qo * mu + frac(mu, qo) * mu * mu + frac(d, qp) * d * d + 0.5 * qp * d;
    let delay: f64 = (0..cfg.num_sus)
        .map(|i| 0.5 * (cfg.rho_of(i).powi(2) * mu * mu + qo * qo))
        .sum();
    0.5 * (cfg.d_max_pu.powi(2) + r0_max.powi(2) + cfg.p_max.powi(2) + cfg.p_avg.powi(2)) + n * per_su + delay
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDiagnostic {
    pub b: f64,
    pub v: f64,
    /// `B / V`; infinite at `V = 0`.
    pub gap: f64,
    pub c_max_open: f64,
    pub c_max_private: f64,
    pub r0_max: f64,
}

/// Closed-loop state of one run.
pub struct Simulator {
    cfg: ScenarioConfig,
    channel: ChannelModelParams,
    occupancy: OccupancyPolicy,
    solver: SolverParams,
    lambda_pu: Vec<f64>,
    slot: u64,
    queues: QueueState,
    estimator: EstimatorState,
    averages: RunningAverages,
}

/// Result of one slot.
pub struct SlotOutcome {
    pub metrics: SlotMetrics,
    pub violations: Vec<Violation>,
}

impl Simulator {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let report = validate_config(cfg);
        if !report.is_ok() {
            return Err(SimError::InvalidConfig(report));
        }
        Ok(Simulator {
            cfg: cfg.clone(),
            channel: ChannelModelParams::from_config(cfg),
            occupancy: OccupancyPolicy::from_config(cfg),
            solver: SolverParams::from_config(cfg),
            lambda_pu: cfg.lambda_pu.expand(cfg.num_pus),
            slot: 0,
            queues: QueueState::for_config(cfg),
            estimator: EstimatorState::new(cfg.num_pus, cfg.iota),
            averages: RunningAverages::new(cfg.num_sus, cfg.num_pus),
        })
    }

    pub fn queues(&self) -> &QueueState {
        &self.queues
    }

    pub fn estimator(&self) -> &EstimatorState {
        &self.estimator
    }

    pub fn averages(&self) -> &RunningAverages {
        &self.averages
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Observe, admit, allocate, transmit, then update every queue.
    pub fn run_slot(&mut self) -> Result<SlotOutcome, SimError> {
        let cfg = &self.cfg;
        let t = self.slot;
        let seed = cfg.rng_seed;
        let n_su = cfg.num_sus;

        let mut channel = sample_channel(&self.channel, seed, t);
        let sets = pu_occupancy(&self.occupancy, seed, t, &self.queues.pu)?;
        let pu_idle: Vec<bool> = sets.iter().map(Vec::is_empty).collect();
        channel
            .set_occupancy(sets, cfg.pbs_power)
            .map_err(|e| ChannelError::Invalid(e.to_string()))?;

        let arrivals = sample_arrivals(cfg, &mut slot_rng(seed, stream::ARRIVALS, t));
        let q = &self.queues;
        let mut action = ControlAction::idle(n_su, cfg.num_subcarriers);
        for n in 0..n_su {
            let (t_o, t_p) = actual_admission(q.open[n], q.private[n], arrivals.open[n], arrivals.private[n], cfg);
            let (mu_o, mu_p) = virtual_admission(
                n,
                q.virt_open[n],
                q.virt_private[n],
                q.delay[n],
                arrivals.open[n],
                arrivals.private[n],
                cfg,
            );
            action.admit_open[n] = t_o;
            action.admit_private[n] = t_p;
            action.virt_open[n] = mu_o;
            action.virt_private[n] = mu_p;
        }

        let weights = UrgencyWeights::from_queues(q, cfg);
        let pu_weights = match cfg.mode {
            Mode::Coca => q.pu.clone(),
            Mode::CocaE => self.estimator.qhat.clone(),
        };
        let alloc = solve_allocation(&channel, &weights, &pu_weights, q.power, cfg.p_max, &self.solver);
        alloc.apply_to(&mut action);

        let mut violations = Vec::new();
        let rates = match slot_rates(&channel, &action, cfg.p_max) {
            Ok(r) => r,
            Err(e) => {
                violations.push(Violation::Infeasible {
                    slot: t,
                    detail: e.to_string(),
                });
                let idle = ControlAction {
                    admit_open: action.admit_open.clone(),
                    admit_private: action.admit_private.clone(),
                    virt_open: action.virt_open.clone(),
                    virt_private: action.virt_private.clone(),
                    ..ControlAction::idle(n_su, cfg.num_subcarriers)
                };
                action = idle;
                slot_rates(&channel, &action, cfg.p_max).expect("idle action is feasible")
            }
        };

        let next = update_queues(q, &action, &rates, &arrivals, cfg);
        for n in 0..n_su {
            if next.open[n] > cfg.q_max_open {
                violations.push(Violation::QueueBound {
                    slot: t,
                    su: n,
                    queue: "open".into(),
                    value: next.open[n],
                    cap: cfg.q_max_open,
                });
            }
            if next.private[n] > cfg.q_max_private {
                violations.push(Violation::QueueBound {
                    slot: t,
                    su: n,
                    queue: "private".into(),
                    value: next.private[n],
                    cap: cfg.q_max_private,
                });
            }
        }
        if !next.all_nonnegative() {
            violations.push(Violation::Negative { slot: t });
        }

        let sample = SlotSample::new(&action, &rates, q);
        update_averages(&mut self.averages, &sample);

        let utility = (0..n_su)
            .map(|n| cfg.theta_of(n) * action.admit_private[n] + cfg.phi_of(n) * action.admit_open[n])
            .sum();
        let metrics = SlotMetrics {
            slot: t,
            queues: q.clone(),
            qhat: self.estimator.qhat.clone(),
            pu_idle,
            admit_open: action.admit_open,
            admit_private: action.admit_private,
            virt_open: action.virt_open,
            virt_private: action.virt_private,
            zeta: action.zeta,
            rate_open: rates.open,
            rate_private: rates.private,
            rate_pu: rates.pu.clone(),
            energy: rates.energy,
            utility,
            dual_status: alloc.status,
            dual_iterations: alloc.iterations,
            delta: alloc.delta,
        };

        let next_idle: Vec<bool> = next.pu.iter().map(|&x| x <= 0.0).collect();
        update_estimate(&mut self.estimator, &rates.pu, &next_idle, &self.lambda_pu);
        self.queues = next;
        self.slot += 1;
        Ok(SlotOutcome { metrics, violations })
    }
}

/// Full record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub slots: Vec<SlotMetrics>,
    pub averages: RunningAverages,
    pub violations: Vec<Violation>,
    pub final_queues: QueueState,
    pub final_qhat: Vec<f64>,
}

impl RunMetrics {
    pub fn non_converged(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.dual_status != DualStatus::Converged)
            .count()
    }

    /// Slots in the last `frac` of the run.
    pub fn tail_slots(&self, frac: f64) -> &[SlotMetrics] {
        let n = self.slots.len();
        let keep = ((n as f64) * frac.clamp(0.0, 1.0)).round() as usize;
        &self.slots[n - keep.min(n)..]
    }

    /// Averages over the last `frac` of the run.
    pub fn tail(&self, frac: f64) -> TailStats {
        let s = self.tail_slots(frac);
        let n_su = self.final_queues.open.len();
        let n_pu = self.final_queues.pu.len();
        if s.is_empty() {
            return TailStats {
                t_o: vec![0.0; n_su],
                t_p: vec![0.0; n_su],
                r_o: vec![0.0; n_su],
                r_p: vec![0.0; n_su],
                r_pu: vec![0.0; n_pu],
                q_o: vec![0.0; n_su],
                ..TailStats::default()
            };
        }
        let k = s.len() as f64;
        let mean_vec = |f: &dyn Fn(&SlotMetrics) -> &Vec<f64>, len: usize| -> Vec<f64> {
            (0..len).map(|i| s.iter().map(|m| f(m)[i]).sum::<f64>() / k).collect()
        };
        TailStats {
            t_o: mean_vec(&|m| &m.admit_open, n_su),
            t_p: mean_vec(&|m| &m.admit_private, n_su),
            r_o: mean_vec(&|m| &m.rate_open, n_su),
            r_p: mean_vec(&|m| &m.rate_private, n_su),
            r_pu: mean_vec(&|m| &m.rate_pu, n_pu),
            q_o: mean_vec(&|m| &m.queues.open, n_su),
            e: s.iter().map(|m| m.energy).sum::<f64>() / k,
            su_sum_rate: s.iter().map(SlotMetrics::su_sum_rate).sum::<f64>() / k,
            utility: s.iter().map(|m| m.utility).sum::<f64>() / k,
        }
    }

    /// A scalar series extracted from every slot.
    pub fn series<F: Fn(&SlotMetrics) -> f64>(&self, f: F) -> Vec<f64> {
        self.slots.iter().map(f).collect()
    }

    pub fn max_open_backlog(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|s| s.queues.open.iter().copied())
            .chain(self.final_queues.open.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn max_private_backlog(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|s| s.queues.private.iter().copied())
            .chain(self.final_queues.private.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn drift(&self, cfg: &ScenarioConfig) -> DriftDiagnostic {
        let max_of = |f: &dyn Fn(&SlotMetrics) -> f64| self.slots.iter().map(f).fold(0.0, f64::max);
        let c_max_open = max_of(&|s| s.rate_open.iter().copied().fold(0.0, f64::max));
        let c_max_private = max_of(&|s| s.rate_private.iter().copied().fold(0.0, f64::max));
        let r0_max = max_of(&|s| s.rate_pu.iter().copied().fold(0.0, f64::max));
        let b = drift_bound_b(cfg, r0_max);
        DriftDiagnostic {
            b,
            v: cfg.v,
            gap: if cfg.v > 0.0 { b / cfg.v } else { f64::INFINITY },
            c_max_open,
            c_max_private,
            r0_max,
        }
    }
}

/// Runs `cfg.slot_count` slots from empty queues.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunMetrics, SimError> {
    let mut sim = Simulator::new(cfg)?;
    let mut slots = Vec::with_capacity(cfg.slot_count as usize);
    let mut violations = Vec::new();
    for _ in 0..cfg.slot_count {
        let out = sim.run_slot()?;
        slots.push(out.metrics);
        violations.extend(out.violations);
    }
    Ok(RunMetrics {
        slots,
        averages: sim.averages.clone(),
        violations,
        final_queues: sim.queues.clone(),
        final_qhat: sim.estimator.qhat.clone(),
    })
}

/// Compact JSON-friendly digest of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub slot_count: usize,
    pub max_open_backlog: f64,
    pub max_private_backlog: f64,
    pub averages: RunningAverages,
    pub delay_open: Vec<Option<f64>>,
    pub tail: TailStats,
    pub tail_delay_open: Vec<Option<f64>>,
    pub non_converged_slots: usize,
    pub violations: usize,
    pub first_violations: Vec<Violation>,
    pub drift: DriftDiagnostic,
}

impl RunSummary {
    pub fn new(cfg: &ScenarioConfig, run: &RunMetrics) -> Self {
        let tail = run.tail(0.5);
        RunSummary {
            mode: cfg.mode,
            seed: cfg.rng_seed,
            slot_count: cfg.slot_count,
            max_open_backlog: run.max_open_backlog(),
            max_private_backlog: run.max_private_backlog(),
            averages: run.averages.clone(),
            delay_open: (0..cfg.num_sus).map(|n| run.averages.delay_o(n)).collect(),
            tail_delay_open: (0..cfg.num_sus).map(|n| tail.delay_o(n)).collect(),
            tail,
            non_converged_slots: run.non_converged(),
            violations: run.violations.len(),
            first_violations: run.violations.iter().take(20).cloned().collect(),
            drift: run.drift(cfg),
        }
    }
}

fn push_row(out: &mut String, slot: u64, entity: &str, metric: &str, value: f64) {
    let _ = writeln!(out, "{slot},{entity},{metric},{value}");
}

const CSV_HEADER: &str = "slot,entity,metric,value\n";

/// Queue trajectories in long format.
pub fn queues_csv(run: &RunMetrics) -> String {
    let mut out = String::from(CSV_HEADER);
    for s in &run.slots {
        let q = &s.queues;
        for (k, v) in q.pu.iter().enumerate() {
            push_row(&mut out, s.slot, &format!("pu{}", k + 1), "Q", *v);
        }
        for (k, v) in s.qhat.iter().enumerate() {
            push_row(&mut out, s.slot, &format!("pu{}", k + 1), "Qhat", *v);
        }
        for n in 0..q.open.len() {
            let e = format!("su{}", n + 1);
            push_row(&mut out, s.slot, &e, "Q_o", q.open[n]);
            push_row(&mut out, s.slot, &e, "Q_p", q.private[n]);
            push_row(&mut out, s.slot, &e, "X_o", q.virt_open[n]);
            push_row(&mut out, s.slot, &e, "X_p", q.virt_private[n]);
            push_row(&mut out, s.slot, &e, "Z", q.delay[n]);
        }
        push_row(&mut out, s.slot, "system", "Y", q.power);
    }
    out
}

/// Per-slot rates, admissions and solver state in long format.
pub fn rates_csv(run: &RunMetrics) -> String {
    let mut out = String::from(CSV_HEADER);
    for s in &run.slots {
        for (k, v) in s.rate_pu.iter().enumerate() {
            push_row(&mut out, s.slot, &format!("pu{}", k + 1), "R", *v);
        }
        for n in 0..s.rate_open.len() {
            let e = format!("su{}", n + 1);
            push_row(&mut out, s.slot, &e, "R_o", s.rate_open[n]);
            push_row(&mut out, s.slot, &e, "R_p", s.rate_private[n]);
            push_row(&mut out, s.slot, &e, "T_o", s.admit_open[n]);
            push_row(&mut out, s.slot, &e, "T_p", s.admit_private[n]);
            push_row(&mut out, s.slot, &e, "mu_o", s.virt_open[n]);
            push_row(&mut out, s.slot, &e, "mu_p", s.virt_private[n]);
            push_row(&mut out, s.slot, &e, "zeta", f64::from(u8::from(s.zeta[n])));
        }
        push_row(&mut out, s.slot, "system", "E", s.energy);
        push_row(&mut out, s.slot, "system", "utility", s.utility);
        push_row(&mut out, s.slot, "system", "delta", s.delta);
        push_row(&mut out, s.slot, "system", "dual_iterations", s.dual_iterations as f64);
        push_row(
            &mut out,
            s.slot,
            "system",
            "converged",
            f64::from(u8::from(s.dual_status == DualStatus::Converged)),
        );
    }
    out
}

/// Writes `queues.csv`, `rates.csv` and `summary.json` into `dir`.
pub fn write_run_artifacts(dir: &Path, cfg: &ScenarioConfig, run: &RunMetrics) -> Result<RunSummary, SimError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("queues.csv"), queues_csv(run))?;
    fs::write(dir.join("rates.csv"), rates_csv(run))?;
    let summary = RunSummary::new(cfg, run);
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialises"),
    )?;
    Ok(summary)
}

/// Thread pool honouring `COGSCHED_THREADS`.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("COGSCHED_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Seeds `base, base + 1, ...`.
pub fn seeds(base: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|i| base.wrapping_add(i)).collect()
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub mean: TailStats,
    pub se: TailStats,
    /// Per-seed stats in seed order, for paired comparisons.
    pub runs: Vec<TailStats>,
    pub violations: usize,
}

/// Applies `param = value` through the config override path. Per-user
/// fields also accept a 1-based index suffix (`theta_1`) that changes a
/// single user's entry.
pub fn with_param(cfg: &ScenarioConfig, param: &str, value: f64) -> Result<ScenarioConfig, SimError> {
    let key = param.to_ascii_lowercase();
    let table = match toml::Value::try_from(cfg) {
        Ok(toml::Value::Table(t)) => t,
        _ => return Err(SimError::UnknownParam(param.to_string())),
    };
    if let Some(current) = table.get(&key) {
        let text = match current {
            toml::Value::Integer(_) if value.fract() == 0.0 => format!("{}", value as i64),
            _ => format!("{value:?}"),
        };
        return Ok(cfg.with_override(&format!("{key}={text}"))?);
    }
    let indexed = key.rsplit_once('_').and_then(|(field, idx)| {
        let idx: usize = idx.parse().ok()?;
        let users = match field {
            "theta" | "phi" | "lambda_open" | "lambda_private" | "delay_bound" => cfg.num_sus,
            "lambda_pu" => cfg.num_pus,
            _ => return None,
        };
        (1..=users).contains(&idx).then(|| (field, idx - 1, users))
    });
    let Some((field, i, users)) = indexed else {
        return Err(SimError::UnknownParam(param.to_string()));
    };
    let current: PerUser = table[field]
        .clone()
        .try_into()
        .map_err(|_| SimError::UnknownParam(param.to_string()))?;
    let mut values = current.expand(users);
    values[i] = value;
    let list: Vec<String> = values.iter().map(|x| format!("{x:?}")).collect();
    Ok(cfg.with_override(&format!("{field}=[{}]", list.join(",")))?)
}

/// Runs every `(value, seed)` pair in parallel; metrics are averaged over
/// the last half of each run.
pub fn sweep(
    cfg: &ScenarioConfig,
    param: &str,
    values: &[f64],
    seed_list: &[u64],
) -> Result<Vec<SweepRow>, SimError> {
    let cfgs: Vec<ScenarioConfig> = values
        .iter()
        .map(|&v| with_param(cfg, param, v))
        .collect::<Result<_, _>>()?;
    for c in &cfgs {
        let report = validate_config(c);
        if !report.is_ok() {
            return Err(SimError::InvalidConfig(report));
        }
    }
    let jobs: Vec<(usize, u64)> = (0..cfgs.len())
        .flat_map(|i| seed_list.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<Result<(TailStats, usize), SimError>> = thread_pool().install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let c = ScenarioConfig {
                    rng_seed: seed,
                    ..cfgs[i].clone()
                };
                let run = run_scenario(&c)?;
                Ok((run.tail(0.5), run.violations.len()))
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(values.len());
    let mut it = results.into_iter();
    for &value in values {
        let mut runs = Vec::with_capacity(seed_list.len());
        let mut violations = 0;
        for _ in seed_list {
            let (t, v) = it.next().expect("one result per job")?;
            runs.push(t);
            violations += v;
        }
        let (mean, se) = TailStats::mean_and_se(&runs);
        rows.push(SweepRow {
            param: param.to_string(),
            value,
            mean,
            se,
            runs,
            violations,
        });
    }
    Ok(rows)
}

/// Paired-seed COCA vs COCA-E on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    /// Per-slot SU sum rate, COCA minus COCA-E.
    pub su_diff: Vec<f64>,
    /// Per-slot PU rate (all PUs), COCA minus COCA-E.
    pub pu_diff: Vec<f64>,
    /// Number of COCA-E slots with an idle PU whose estimate was not 0.
    pub idle_estimate_mismatches: usize,
    /// Number of COCA-E slots with an idle PU.
    pub idle_slots: usize,
    pub coca: TailStats,
    pub coca_e: TailStats,
}

pub fn paired_run(cfg: &ScenarioConfig, iota: f64) -> Result<PairedRun, SimError> {
    let a = run_scenario(&ScenarioConfig {
        mode: Mode::Coca,
        ..cfg.clone()
    })?;
    let b = run_scenario(&ScenarioConfig {
        mode: Mode::CocaE,
        iota,
        ..cfg.clone()
    })?;
    Ok(paired_from_runs(&a, &b))
}

fn paired_from_runs(a: &RunMetrics, b: &RunMetrics) -> PairedRun {
    let pu_sum = |s: &SlotMetrics| s.rate_pu.iter().sum::<f64>();
    let mut idle_slots = 0;
    let mut mismatches = 0;
    for s in &b.slots {
        for (k, &idle) in s.pu_idle.iter().enumerate() {
            if idle {
                idle_slots += 1;
                if s.qhat[k] != 0.0 {
                    mismatches += 1;
                }
            }
        }
    }
    PairedRun {
        su_diff: a.slots.iter().zip(&b.slots).map(|(x, y)| x.su_sum_rate() - y.su_sum_rate()).collect(),
        pu_diff: a.slots.iter().zip(&b.slots).map(|(x, y)| pu_sum(x) - pu_sum(y)).collect(),
        idle_estimate_mismatches: mismatches,
        idle_slots,
        coca: a.tail(0.5),
        coca_e: b.tail(0.5),
    }
}

/// Long-run paired differences for one slack value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IotaRow {
    pub iota: f64,
    /// Mean over seeds of tail `r_PU(COCA) - r_PU(COCA-E)` (summed over PUs).
    pub pu_diff: f64,
    pub pu_diff_se: f64,
    /// Mean over seeds of tail SU sum-rate difference.
    pub su_diff: f64,
    pub su_diff_se: f64,
    pub per_seed_pu_diff: Vec<f64>,
    pub per_seed_su_diff: Vec<f64>,
    pub idle_slots: usize,
    pub idle_estimate_mismatches: usize,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}

/// Slack sweep of the estimator variant against the exact scheduler. The
/// exact run does not depend on the slack and is shared per seed.
pub fn iota_sweep(cfg: &ScenarioConfig, iotas: &[f64], seed_list: &[u64]) -> Result<Vec<IotaRow>, SimError> {
    let report = validate_config(cfg);
    if !report.is_ok() {
        return Err(SimError::InvalidConfig(report));
    }
    let pool = thread_pool();
    let exact: Vec<Result<RunMetrics, SimError>> = pool.install(|| {
        seed_list
            .par_iter()
            .map(|&s| {
                run_scenario(&ScenarioConfig {
                    mode: Mode::Coca,
                    rng_seed: s,
                    ..cfg.clone()
                })
            })
            .collect()
    });
    let exact: Vec<RunMetrics> = exact.into_iter().collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..iotas.len())
        .flat_map(|i| (0..seed_list.len()).map(move |j| (i, j)))
        .collect();
    let paired: Vec<Result<PairedRun, SimError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, j)| {
                let b = run_scenario(&ScenarioConfig {
                    mode: Mode::CocaE,
                    iota: iotas[i],
                    rng_seed: seed_list[j],
                    ..cfg.clone()
                })?;
                Ok(paired_from_runs(&exact[j], &b))
            })
            .collect()
    });
    let mut it = paired.into_iter();
    let mut rows = Vec::new();
    for &iota in iotas {
        let mut pu = Vec::new();
        let mut su = Vec::new();
        let mut idle = 0;
        let mut mism = 0;
        for _ in seed_list {
            let p = it.next().expect("one result per job")?;
            pu.push(p.coca.r_pu.iter().sum::<f64>() - p.coca_e.r_pu.iter().sum::<f64>());
            su.push(p.coca.su_sum_rate - p.coca_e.su_sum_rate);
            idle += p.idle_slots;
            mism += p.idle_estimate_mismatches;
        }
        let (pm, ps) = mean_se(&pu);
        let (sm, ss) = mean_se(&su);
        rows.push(IotaRow {
            iota,
            pu_diff: pm,
            pu_diff_se: ps,
            su_diff: sm,
            su_diff_se: ss,
            per_seed_pu_diff: pu,
            per_seed_su_diff: su,
            idle_slots: idle,
            idle_estimate_mismatches: mism,
        });
    }
    Ok(rows)
}

/// Sweep table: one CSV row per value with per-user tail means.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let users = rows.first().map_or(0, |r| r.mean.r_o.len());
    let mut out = String::from("param,value,runs,violations,su_sum_rate,su_sum_rate_se,r_pu,r_pu_se,e,utility");
    for n in 1..=users {
        let _ = write!(out, ",r_o_{n},r_p_{n},t_o_{n},t_p_{n},delay_o_{n}");
    }
    out.push('\n');
    for r in rows {
        let pu: f64 = r.mean.r_pu.iter().sum();
        let pu_se = r.se.r_pu.iter().map(|x| x * x).sum::<f64>().sqrt();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.param,
            r.value,
            r.runs.len(),
            r.violations,
            r.mean.su_sum_rate,
            r.se.su_sum_rate,
            pu,
            pu_se,
            r.mean.e,
            r.mean.utility
        );
        for n in 0..users {
            let d = r.mean.delay_o(n).map_or(String::new(), |d| d.to_string());
            let _ = write!(out, ",{},{},{},{},{d}", r.mean.r_o[n], r.mean.r_p[n], r.mean.t_o[n], r.mean.t_p[n]);
        }
        out.push('\n');
    }
    out
}

/// Per-slot COCA minus COCA-E differences.
pub fn differences_csv(p: &PairedRun) -> String {
    let mut out = String::from("slot,su_sum_rate_diff,pu_rate_diff\n");
    for (t, (su, pu)) in p.su_diff.iter().zip(&p.pu_diff).enumerate() {
        let _ = writeln!(out, "{t},{su},{pu}");
    }
    out
}

pub fn iota_csv(rows: &[IotaRow]) -> String {
    let mut out = String::from("iota,pu_rate_diff,pu_rate_diff_se,su_sum_rate_diff,su_sum_rate_diff_se,idle_slots,idle_mismatches\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iota, r.pu_diff, r.pu_diff_se, r.su_diff, r.su_diff_se, r.idle_slots, r.idle_estimate_mismatches
        );
    }
    out
}

/// Overlay condition over `draws` sampled channels with every PU busy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayAudit {
    pub draws: usize,
    /// Draws on which the condition holds for every SU and occupied subcarrier.
    pub system_holds: usize,
    pub entries: usize,
    pub entries_holding: usize,
    pub low_sinr_draws: usize,
    /// Smallest `min(C1, C2) / cross` seen; at least 1 means the condition
    /// always held.
    pub worst_margin: f64,
}

pub fn overlay_audit(cfg: &ScenarioConfig, draws: usize) -> Result<OverlayAudit, SimError> {
    let report = validate_config(cfg);
    if !report.is_ok() {
        return Err(SimError::InvalidConfig(report));
    }
    let params = ChannelModelParams::from_config(cfg);
    let policy = OccupancyPolicy::from_config(cfg);
    let busy = vec![1.0; cfg.num_pus];
    let mut audit = OverlayAudit {
        draws,
        system_holds: 0,
        entries: 0,
        entries_holding: 0,
        low_sinr_draws: 0,
        worst_margin: f64::INFINITY,
    };
    for t in 0..draws as u64 {
        let mut ch = sample_channel(&params, cfg.rng_seed, t);
        let sets = pu_occupancy(&policy, cfg.rng_seed, t, &busy)?;
        ch.set_occupancy(sets, cfg.pbs_power)
            .map_err(|e| ChannelError::Invalid(e.to_string()))?;
        let r = check_full_overlay(&ch, cfg.p_max);
        audit.system_holds += usize::from(r.system_holds);
        audit.low_sinr_draws += usize::from(r.low_sinr);
        audit.entries += r.entries.len();
        for e in &r.entries {
            audit.entries_holding += usize::from(e.holds);
            let margin = if e.cross > 0.0 { e.c1.min(e.c2) / e.cross } else { f64::INFINITY };
            audit.worst_margin = audit.worst_margin.min(margin);
        }
    }
    Ok(audit)
}
