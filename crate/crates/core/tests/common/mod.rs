//! Reference implementations shared by the integration and acceptance tests.
//!
//! Rates, objectives and searches here are written straight from the model
//! formulas and never call the library's rate or solver code, so they can
//! serve as oracles for it.

#![allow(dead_code)]

use std::path::PathBuf;

use cogsched::config::ScenarioConfig;
use cogsched::model::ChannelState;
use cogsched::overlay::StaticInstance;
use rand::Rng;


pub fn log2_1p(x: f64) -> f64 {
    (1.0 + x).ln() / 2f64.ln()
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(scenario_path(name), &[] as &[&str]).expect("scenario file loads")
}

// ----------------------------------------------------------------------------
// Statistics
// ----------------------------------------------------------------------------

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

/// Ordinary least-squares slope of `y` against its index and the slope's
/// standard error.
pub fn ols_slope(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let sse: f64 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (v - intercept - slope * i as f64).powi(2))
        .sum();
    (slope, (sse / (n - 2.0) / sxx).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    NonDecreasing,
    NonIncreasing,
}

/// Checks a trend across sweep points with paired seeds. `per_point[i][s]`
/// is the metric at sweep point `i` for seed `s`. A step counts as a
/// violation only when the mean paired difference goes the wrong way by more
/// than three standard errors (plus a 1e-9 relative floor for round-off).
pub fn paired_trend(per_point: &[Vec<f64>], dir: Direction) -> Result<(), String> {
    for i in 1..per_point.len() {
        let diffs: Vec<f64> = per_point[i]
            .iter()
            .zip(&per_point[i - 1])
            .map(|(b, a)| b - a)
            .collect();
        let (d, se) = mean_se(&diffs);
        let scale = mean(&per_point[i]).abs().max(mean(&per_point[i - 1]).abs());
        let slack = 3.0 * se + 1e-9 * scale;
        let bad = match dir {
            Direction::NonDecreasing => d < -slack,
            Direction::NonIncreasing => d > slack,
        };
        if bad {
            return Err(format!(
                "step {} -> {}: mean paired change {d:.6} (se {se:.6}) breaks {dir:?}",
                i - 1,
                i
            ));
        }
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// Slot objective
// ----------------------------------------------------------------------------

/// Inputs of the per-slot objective besides the channel.
#[derive(Debug, Clone)]
pub struct Weights {
    pub w_open: Vec<f64>,
    pub w_private: Vec<f64>,
    pub q_pu: Vec<f64>,
    pub y: f64,
}

/// Rates of one slot recomputed from the raw gains.
#[derive(Debug, Clone)]
pub struct RefRates {
    pub open: Vec<f64>,
    pub private: Vec<f64>,
    pub pu: Vec<f64>,
    pub energy: f64,
}

/// The eavesdropper of SU `n` on `m` is the other SU with the largest direct
/// gain (first index on ties).
pub fn reference_rates(ch: &ChannelState, power: &[Vec<f64>], assign: &[Vec<bool>], zeta: &[bool]) -> RefRates {
    let n_su = ch.su.len();
    let m_total = ch.su.first().map_or(0, Vec::len);
    let mut out = RefRates {
        open: vec![0.0; n_su],
        private: vec![0.0; n_su],
        pu: vec![0.0; ch.pu.len()],
        energy: 0.0,
    };
    for n in 0..n_su {
        let mut cap = 0.0;
        let mut sec = 0.0;
        for m in 0..m_total {
            if !assign[n][m] {
                continue;
            }
            let p = power[n][m];
            out.energy += p;
            let owner = (0..ch.pu.len()).find(|&k| ch.occupied[k].contains(&m));
            let p0 = owner.map_or(0.0, |k| ch.pbs_power[k][m]);
            let mut eve: Option<usize> = None;
            for j in (0..n_su).filter(|&j| j != n) {
                if eve.is_none_or(|e| ch.su[j][m] > ch.su[e][m]) {
                    eve = Some(j);
                }
            }
            let c = log2_1p(p * ch.su[n][m] / (1.0 + p0 * ch.pbs_to_su[n][m]));
            let ce = eve.map_or(0.0, |e| log2_1p(p * ch.su[e][m] / (1.0 + p0 * ch.pbs_to_su[e][m])));
            cap += c;
            sec += (c - ce).max(0.0);
        }
        out.private[n] = if zeta[n] { sec } else { 0.0 };
        out.open[n] = cap - out.private[n];
    }
    for (k, set) in ch.occupied.iter().enumerate() {
        for &m in set {
            let p = (0..n_su).filter(|&n| assign[n][m]).map(|n| power[n][m]).sum::<f64>();
            out.pu[k] += log2_1p(ch.pbs_power[k][m] * ch.pu[k][m] / (1.0 + ch.cbs_to_pu[k][m] * p));
        }
    }
    out
}

/// `sum_n (w_o R_o + w_p R_p) + sum_k Q_k R_k - Y E` from [`reference_rates`].
pub fn reference_objective(
    ch: &ChannelState,
    w: &Weights,
    power: &[Vec<f64>],
    assign: &[Vec<bool>],
    zeta: &[bool],
) -> f64 {
    let r = reference_rates(ch, power, assign, zeta);
    let su: f64 = (0..r.open.len())
        .map(|n| w.w_open[n] * r.open[n] + w.w_private[n] * r.private[n])
        .sum();
    let pu: f64 = r.pu.iter().zip(&w.q_pu).map(|(a, b)| a * b).sum();
    su + pu - w.y * r.energy
}

/// Best objective over every holder assignment, secrecy flag vector and
/// power vector drawn from `levels * p_max` with total at most `p_max`.
pub fn exhaustive_objective(ch: &ChannelState, w: &Weights, levels: &[f64], p_max: f64) -> f64 {
    let n_su = ch.su.len();
    let m_total = ch.su[0].len();
    let mut best = f64::NEG_INFINITY;
    let holders = n_su.pow(m_total as u32);
    let powers = levels.len().pow(m_total as u32);
    for hi in 0..holders {
        let mut assign = vec![vec![false; m_total]; n_su];
        let mut r = hi;
        for m in 0..m_total {
            assign[r % n_su][m] = true;
            r /= n_su;
        }
        for pi in 0..powers {
            let mut power = vec![vec![0.0; m_total]; n_su];
            let mut r = pi;
            let mut sum = 0.0;
            for m in 0..m_total {
                let p = levels[r % levels.len()] * p_max;
                r /= levels.len();
                sum += p;
                let n = (0..n_su).find(|&n| assign[n][m]).unwrap();
                power[n][m] = p;
            }
            if sum > p_max * (1.0 + 1e-12) {
                continue;
            }
            for zi in 0..(1usize << n_su) {
                let zeta: Vec<bool> = (0..n_su).map(|n| zi >> n & 1 == 1).collect();
                best = best.max(reference_objective(ch, w, &power, &assign, &zeta));
            }
        }
    }
    best
}

/// A random single-PU instance with `n` SUs and `m` subcarriers, each
/// subcarrier occupied with probability one half.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, m: usize) -> (ChannelState, Weights) {
    let log_uniform = |rng: &mut R, lo: f64, hi: f64| (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp();
    let su: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| log_uniform(rng, 0.5, 200.0)).collect()).collect();
    let pbs_to_su: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..30.0)).collect()).collect();
    let pu = vec![(0..m).map(|_| rng.random_range(20.0..500.0)).collect::<Vec<f64>>()];
    let cbs_to_pu = vec![(0..m).map(|_| rng.random_range(0.0..3.0)).collect::<Vec<f64>>()];
    let mut ch = ChannelState::from_gains(su, pu, cbs_to_pu, pbs_to_su).unwrap();
    let set: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
    let p0 = rng.random_range(0.05..1.0);
    ch.set_occupancy(vec![set], p0).unwrap();
    let w = Weights {
        w_open: (0..n).map(|_| rng.random_range(0.0..50.0)).collect(),
        w_private: (0..n).map(|_| rng.random_range(0.0..50.0)).collect(),
        q_pu: vec![rng.random_range(0.0..300.0)],
        y: rng.random_range(0.0..100.0),
    };
    (ch, w)
}

// ----------------------------------------------------------------------------
// Static overlay instances
// ----------------------------------------------------------------------------

/// Threshold constants written out from the closed form
/// `c(g, g_np) = g / ((1 + P0 g_np + Pmax g) log2(1 + Pmax g))`, `+inf` when
/// `Pmax g = 0`; returns `(c(b, b_np), c(a, a_np))`.
pub fn reference_constants(a: f64, b: f64, a_np: f64, b_np: f64, p0: f64, p_max: f64) -> (f64, f64) {
    let c = |g: f64, g_np: f64| {
        if p_max * g == 0.0 {
            return f64::INFINITY;
        }
        g / ((1.0 + p0 * g_np + g * p_max) * (1.0 + g * p_max).log2())
    };
    (c(b, b_np), c(a, a_np))
}

/// Static instance in the high-SINR regime with every subcarrier occupied
/// and the CBS -> PU cross link at a random fraction in `[0.5, 1)` of the
/// smallest overlay constant on that subcarrier. The PU rate target is the
/// smallest full-power PU rate over the power grid, so every allocation can
/// meet it with the PU always on.
pub fn condition_satisfying_instance<R: Rng>(
    rng: &mut R,
    levels: &[f64],
    constants: impl Fn(f64, f64, f64, f64, f64, f64) -> (f64, f64),
) -> StaticInstance {
    let n = rng.random_range(1..=2usize);
    let m = rng.random_range(2..=3usize);
    let su: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.5..3.0)).collect()).collect();
    let pbs_to_su: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.5..5.0)).collect()).collect();
    let pu: Vec<f64> = (0..m).map(|_| rng.random_range(20.0..60.0)).collect();
    let pbs_power: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.0)).collect();
    let p_max = 1.0;
    let mut cbs_to_pu = vec![0.0; m];
    for j in 0..m {
        let mut min_c = f64::INFINITY;
        for i in 0..n {
            let (b, b_np) = strongest_other(&su, &pbs_to_su, i, j);
            let (c1, c2) = constants(su[i][j], b, pbs_to_su[i][j], b_np, pbs_power[j], p_max);
            min_c = min_c.min(c1.min(c2));
        }
        let frac = 0.5 + 0.5 * rng.random::<f64>();
        cbs_to_pu[j] = if min_c.is_finite() { frac * min_c } else { 0.0 };
    }
    let mut inst = StaticInstance {
        su,
        pbs_to_su,
        pu,
        cbs_to_pu,
        pbs_power,
        occupied: vec![true; m],
        theta: (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
        phi: (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
        lambda_pu: 0.0,
        p_max,
    };
    inst.lambda_pu = min_full_power_pu_rate(&inst, levels);
    inst
}

fn strongest_other(su: &[Vec<f64>], cross: &[Vec<f64>], n: usize, m: usize) -> (f64, f64) {
    let mut best: Option<usize> = None;
    for j in (0..su.len()).filter(|&j| j != n) {
        if best.is_none_or(|b| su[j][m] > su[b][m]) {
            best = Some(j);
        }
    }
    best.map_or((0.0, 0.0), |j| (su[j][m], cross[j][m]))
}

/// Smallest PU rate over power vectors on the grid that use the whole budget.
pub fn min_full_power_pu_rate(inst: &StaticInstance, levels: &[f64]) -> f64 {
    let m = inst.pu.len();
    let mut best = f64::INFINITY;
    for pi in 0..levels.len().pow(m as u32) {
        let mut r = pi;
        let mut power = vec![0.0; m];
        for p in power.iter_mut() {
            *p = levels[r % levels.len()] * inst.p_max;
            r /= levels.len();
        }
        let total: f64 = power.iter().sum();
        if (total - inst.p_max).abs() > 1e-9 {
            continue;
        }
        let rate: f64 = (0..m)
            .map(|j| log2_1p(inst.pbs_power[j] * inst.pu[j] / (1.0 + inst.cbs_to_pu[j] * power[j])))
            .sum();
        best = best.min(rate);
    }
    best
}
