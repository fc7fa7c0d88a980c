//! Static full-overlay analysis: the per-link threshold constants, the
//! system-wide check, and a brute-force optimiser over the PU activity
//! fraction used to confirm the check on small static channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{eavesdroppers, ChannelState};

/// `(C1, C2)` for one SU on one occupied subcarrier. A constant whose
/// log term vanishes (zero gain) is `+inf`.
pub fn overlay_constants(a: f64, b: f64, a_np: f64, b_np: f64, p0: f64, p_max: f64) -> (f64, f64) {
    let c = |g: f64, cross: f64| {
        if g * p_max <= 0.0 {
            f64::INFINITY
        } else {
            g / ((1.0 + p0 * cross + g * p_max) * (g * p_max).ln_1p() / std::f64::consts::LN_2)
        }
    };
    (c(b, b_np), c(a, a_np))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayEntry {
    pub n: usize,
    pub m: usize,
    pub c1: f64,
    pub c2: f64,
    /// CBS -> PU cross C/I on `m`.
    pub cross: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayReport {
    pub entries: Vec<OverlayEntry>,
    /// The condition holds on every occupied subcarrier for every SU.
    pub system_holds: bool,
    /// Some occupied subcarrier has PU SNR `P0 * A0` below 10, outside the
    /// high-SINR regime the condition assumes.
    pub low_sinr: bool,
}

/// Evaluates the overlay condition on every PU-occupied subcarrier.
pub fn check_full_overlay(channel: &ChannelState, p_max: f64) -> OverlayReport {
    let mut entries = Vec::new();
    let mut low_sinr = false;
    for m in 0..channel.num_subcarriers() {
        let Some(k) = channel.owner(m) else { continue };
        let p0 = channel.pbs_power[k][m];
        if p0 * channel.pu[k][m] < 10.0 {
            low_sinr = true;
        }
        let cross = channel.cbs_to_pu[k][m];
        for n in 0..channel.num_sus() {
            let (c1, c2) = overlay_constants(
                channel.su[n][m],
                channel.eve[n][m],
                channel.pbs_to_su[n][m],
                channel.pbs_to_eve[n][m],
                p0,
                p_max,
            );
            entries.push(OverlayEntry {
                n,
                m,
                c1,
                c2,
                cross,
                holds: cross <= c1.min(c2),
            });
        }
    }
    OverlayReport {
        system_holds: entries.iter().all(|e| e.holds),
        entries,
        low_sinr,
    }
}

/// A time-invariant single-PU channel for the brute-force optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticInstance {
    /// SU direct C/I `[n][m]`.
    pub su: Vec<Vec<f64>>,
    /// PBS -> SU cross C/I `[n][m]`.
    pub pbs_to_su: Vec<Vec<f64>>,
    /// PU direct C/I per subcarrier.
    pub pu: Vec<f64>,
    /// CBS -> PU cross C/I per subcarrier.
    pub cbs_to_pu: Vec<f64>,
    /// PBS power per subcarrier.
    pub pbs_power: Vec<f64>,
    /// Whether the PU owns subcarrier `m`.
    pub occupied: Vec<bool>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Required PU rate.
    pub lambda_pu: f64,
    pub p_max: f64,
}

impl StaticInstance {
    pub fn num_sus(&self) -> usize {
        self.su.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.pu.len()
    }

    /// Equivalent [`ChannelState`] with the PU busy on its subcarriers.
    pub fn channel(&self) -> ChannelState {
        let m = self.num_subcarriers();
        let mut ch = ChannelState::from_gains(
            self.su.clone(),
            vec![self.pu.clone()],
            vec![self.cbs_to_pu.clone()],
            self.pbs_to_su.clone(),
        )
        .expect("static instance shapes");
        let set: Vec<usize> = (0..m).filter(|&j| self.occupied[j]).collect();
        ch.set_occupancy(vec![set], 0.0).expect("single PU");
        for j in 0..m {
            ch.pbs_power[0][j] = if self.occupied[j] { self.pbs_power[j] } else { 0.0 };
        }
        ch
    }

    /// PU rate with the PU always on, given the SU power on every subcarrier.
    pub fn pu_rate(&self, power: &[f64]) -> f64 {
        (0..self.num_subcarriers())
            .filter(|&m| self.occupied[m])
            .map(|m| (1.0 + self.pbs_power[m] * self.pu[m] / (1.0 + self.cbs_to_pu[m] * power[m])).log2())
            .sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OverlayError {
    #[error("no activity fraction and power allocation meets the PU rate")]
    Infeasible,
    #[error("instance too large for exhaustive search")]
    TooLarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayOptimum {
    pub kappa: f64,
    /// Power per subcarrier (held by `holder[m]`).
    pub power: Vec<f64>,
    pub holder: Vec<usize>,
    pub zeta: Vec<bool>,
    pub objective: f64,
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Weighted throughput `sum theta r_p + phi r_o` with the PU active a
/// fraction `kappa` of the time.
pub fn overlay_objective(
    inst: &StaticInstance,
    eve: &[Vec<f64>],
    eve_cross: &[Vec<f64>],
    holder: &[usize],
    power: &[f64],
    zeta: &[bool],
    kappa: f64,
) -> f64 {
    let n_su = inst.num_sus();
    let mut total = vec![0.0; n_su];
    let mut private = vec![0.0; n_su];
    for (m, (&n, &p)) in holder.iter().zip(power).enumerate() {
        let (a, b) = (inst.su[n][m], eve[n][m]);
        let clean = log2_1p(p * a);
        let clean_s = (clean - log2_1p(p * b)).max(0.0);
        if inst.occupied[m] {
            let p0 = inst.pbs_power[m];
            let hit = log2_1p(p * a / (1.0 + p0 * inst.pbs_to_su[n][m]));
            let hit_s = (hit - log2_1p(p * b / (1.0 + p0 * eve_cross[n][m]))).max(0.0);
            total[n] += kappa * hit + (1.0 - kappa) * clean;
            private[n] += kappa * hit_s + (1.0 - kappa) * clean_s;
        } else {
            total[n] += clean;
            private[n] += clean_s;
        }
    }
    (0..n_su)
        .map(|n| {
            let rp = if zeta[n] { private[n] } else { 0.0 };
            inst.theta[n] * rp + inst.phi[n] * (total[n] - rp)
        })
        .sum()
}

/// Uniform grid `0, 1/(k-1), ..., 1`.
pub fn unit_grid(points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

/// Exhaustive search over subcarrier holders, power levels
/// `power_levels * p_max` with total at most `p_max`, secrecy flags and the
/// activity fraction `kappa`. A point is admissible when `kappa * r_PU >=
/// lambda_pu`. Ties keep the smaller `kappa`.
pub fn static_overlay_oracle(
    inst: &StaticInstance,
    power_levels: &[f64],
    kappa_grid: &[f64],
) -> Result<OverlayOptimum, OverlayError> {
    let n_su = inst.num_sus();
    let m = inst.num_subcarriers();
    if n_su > 3 || m > 4 {
        return Err(OverlayError::TooLarge);
    }
    let (eve, eve_cross) = eavesdroppers(&inst.su, &inst.pbs_to_su);
    let mut kappas = kappa_grid.to_vec();
    kappas.sort_by(f64::total_cmp);

    let levels = power_levels.len();
    let mut best: Option<OverlayOptimum> = None;
    let holders_total = n_su.pow(m as u32);
    let powers_total = levels.pow(m as u32);
    let zetas_total = 1usize << n_su;
    let mut holder = vec![0; m];
    let mut power = vec![0.0; m];
    let mut zeta = vec![false; n_su];
    for pi in 0..powers_total {
        let mut r = pi;
        for p in power.iter_mut() {
            *p = power_levels[r % levels] * inst.p_max;
            r /= levels;
        }
        if power.iter().sum::<f64>() > inst.p_max * (1.0 + 1e-12) {
            continue;
        }
        let s = inst.pu_rate(&power);
        for &kappa in &kappas {
            if kappa * s < inst.lambda_pu * (1.0 - 1e-12) {
                continue;
            }
            for hi in 0..holders_total {
                let mut r = hi;
                for h in holder.iter_mut() {
                    *h = r % n_su;
                    r /= n_su;
                }
                for zi in 0..zetas_total {
                    for (n, z) in zeta.iter_mut().enumerate() {
                        *z = zi >> n & 1 == 1;
                    }
                    let u = overlay_objective(inst, &eve, &eve_cross, &holder, &power, &zeta, kappa);
                    let improves = match &best {
                        None => true,
                        Some(b) => {
                            let tol = 1e-12 * (1.0 + b.objective.abs());
                            u > b.objective + tol || (u >= b.objective - tol && kappa < b.kappa)
                        }
                    };
                    if improves {
                        best = Some(OverlayOptimum {
                            kappa,
                            power: power.clone(),
                            holder: holder.clone(),
                            zeta: zeta.clone(),
                            objective: u,
                        });
                    }
                }
            }
        }
    }
    best.ok_or(OverlayError::Infeasible)
}
