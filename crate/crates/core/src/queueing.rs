//! Queue recursions and running time averages.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::model::{ControlAction, QueueState};
use crate::rates::RateOutcome;

/// Packets arriving in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrivals {
    pub open: Vec<f64>,
    pub private: Vec<f64>,
    pub pu: Vec<f64>,
}

impl Arrivals {
    pub fn zeros(num_sus: usize, num_pus: usize) -> Self {
        Arrivals {
            open: vec![0.0; num_sus],
            private: vec![0.0; num_sus],
            pu: vec![0.0; num_pus],
        }
    }
}

/// Two-point draw: `bound` with probability `rate / bound`, else 0.
pub fn batch_bernoulli<R: Rng + ?Sized>(rate: f64, bound: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if bound > 0.0 && u < rate / bound {
        bound
    } else {
        0.0
    }
}

/// Draws every arrival of a slot from `rng`. Open, private and PU draws are
/// taken in that fixed order.
pub fn sample_arrivals<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Arrivals {
    let n = cfg.num_sus;
    let open = (0..n)
        .map(|i| batch_bernoulli(cfg.lambda_open.at(i), cfg.mu_max, rng))
        .collect();
    let private = (0..n)
        .map(|i| batch_bernoulli(cfg.lambda_private.at(i), cfg.d_max, rng))
        .collect();
    let pu = (0..cfg.num_pus)
        .map(|k| batch_bernoulli(cfg.lambda_pu.at(k), cfg.d_max_pu, rng))
        .collect();
    Arrivals { open, private, pu }
}

/// `[q - out]^+ + inflow`
#[inline]
pub fn step(q: f64, out: f64, inflow: f64) -> f64 {
    (q - out).max(0.0) + inflow
}

/// Applies every end-of-slot recursion. All right-hand sides use the state
/// at the start of the slot; Z takes the old open backlog.
pub fn update_queues(
    q: &QueueState,
    action: &ControlAction,
    rates: &RateOutcome,
    arrivals: &Arrivals,
    cfg: &ScenarioConfig,
) -> QueueState {
    let n = q.open.len();
    let pu = (0..q.pu.len())
        .map(|k| step(q.pu[k], rates.pu[k], arrivals.pu[k]))
        .collect();
    let open = (0..n)
        .map(|i| step(q.open[i], rates.open[i], action.admit_open[i]))
        .collect();
    let private = (0..n)
        .map(|i| step(q.private[i], rates.private[i], action.admit_private[i]))
        .collect();
    let virt_open = (0..n)
        .map(|i| step(q.virt_open[i], action.admit_open[i], action.virt_open[i]))
        .collect();
    let virt_private = (0..n)
        .map(|i| step(q.virt_private[i], action.admit_private[i], action.virt_private[i]))
        .collect();
    let power = step(q.power, cfg.p_avg, rates.energy);
    let delay = (0..n)
        .map(|i| step(q.delay[i], cfg.rho_of(i) * action.virt_open[i], q.open[i]))
        .collect();
    QueueState {
        pu,
        open,
        private,
        virt_open,
        virt_private,
        power,
        delay,
    }
}

/// Per-slot values folded into [`RunningAverages`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSample {
    pub admit_open: Vec<f64>,
    pub admit_private: Vec<f64>,
    pub rate_open: Vec<f64>,
    pub rate_private: Vec<f64>,
    pub virt_open: Vec<f64>,
    pub virt_private: Vec<f64>,
    pub energy: f64,
    pub rate_pu: Vec<f64>,
    pub queue_open: Vec<f64>,
}

impl SlotSample {
    pub fn new(action: &ControlAction, rates: &RateOutcome, queues: &QueueState) -> Self {
        SlotSample {
            admit_open: action.admit_open.clone(),
            admit_private: action.admit_private.clone(),
            rate_open: rates.open.clone(),
            rate_private: rates.private.clone(),
            virt_open: action.virt_open.clone(),
            virt_private: action.virt_private.clone(),
            energy: rates.energy,
            rate_pu: rates.pu.clone(),
            queue_open: queues.open.clone(),
        }
    }
}

/// Running means over the slots folded so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningAverages {
    pub slots: u64,
    pub t_o: Vec<f64>,
    pub t_p: Vec<f64>,
    pub r_o: Vec<f64>,
    pub r_p: Vec<f64>,
    pub nu_o: Vec<f64>,
    pub nu_p: Vec<f64>,
    pub e: f64,
    pub r_pu: Vec<f64>,
    pub q_o_avg: Vec<f64>,
}

fn fold(mean: &mut [f64], x: &[f64], w: f64) {
    for (m, v) in mean.iter_mut().zip(x) {
        *m += (v - *m) * w;
    }
}

impl RunningAverages {
    pub fn new(num_sus: usize, num_pus: usize) -> Self {
        let z = vec![0.0; num_sus];
        RunningAverages {
            slots: 0,
            t_o: z.clone(),
            t_p: z.clone(),
            r_o: z.clone(),
            r_p: z.clone(),
            nu_o: z.clone(),
            nu_p: z.clone(),
            e: 0.0,
            r_pu: vec![0.0; num_pus],
            q_o_avg: z,
        }
    }

    /// Average open-data delay by Little's law; `None` while nothing has
    /// been admitted.
    pub fn delay_o(&self, n: usize) -> Option<f64> {
        (self.t_o[n] > 0.0).then(|| self.q_o_avg[n] / self.t_o[n])
    }

    /// Weighted admitted throughput sum_n theta_n t_p + phi_n t_o.
    pub fn utility(&self, cfg: &ScenarioConfig) -> f64 {
        (0..self.t_o.len())
            .map(|n| cfg.theta_of(n) * self.t_p[n] + cfg.phi_of(n) * self.t_o[n])
            .sum()
    }
}

pub fn update_averages(avg: &mut RunningAverages, s: &SlotSample) {
    avg.slots += 1;
    let w = 1.0 / avg.slots as f64;
    fold(&mut avg.t_o, &s.admit_open, w);
    fold(&mut avg.t_p, &s.admit_private, w);
    fold(&mut avg.r_o, &s.rate_open, w);
    fold(&mut avg.r_p, &s.rate_private, w);
    fold(&mut avg.nu_o, &s.virt_open, w);
    fold(&mut avg.nu_p, &s.virt_private, w);
    fold(&mut avg.r_pu, &s.rate_pu, w);
    fold(&mut avg.q_o_avg, &s.queue_open, w);
    avg.e += (s.energy - avg.e) * w;
}
