//! Instantaneous rate formulas. Rates are in rate units per slot on a
//! bandwidth-normalised subcarrier: log2(1 + SINR).

use serde::{Deserialize, Serialize};

use crate::model::{ChannelState, ControlAction, LinkView, ModelError};

/// Rate of a PU on one of its subcarriers under interference from the SU
/// transmitting there with power `p_interferer`.
pub fn pu_subcarrier_rate(pu_ci: f64, pbs_power: f64, cross_ci: f64, p_interferer: f64) -> f64 {
    (1.0 + pbs_power * pu_ci / (1.0 + cross_ci * p_interferer)).log2()
}

/// Same as [`pu_subcarrier_rate`] but 0 when the PU does not occupy `m`.
pub fn pu_rate_on(channel: &ChannelState, k: usize, m: usize, p_interferer: f64) -> f64 {
    if channel.owner(m) != Some(k) {
        return 0.0;
    }
    pu_subcarrier_rate(
        channel.pu[k][m],
        channel.pbs_power[k][m],
        channel.cbs_to_pu[k][m],
        p_interferer,
    )
}

/// Capacity of an SU link; PBS interference applies on occupied subcarriers.
pub fn su_subcarrier_capacity(a: f64, p: f64, a_np: f64, pbs_power: f64, occupied: bool) -> f64 {
    if occupied {
        (1.0 + p * a / (1.0 + pbs_power * a_np)).log2()
    } else {
        (1.0 + p * a).log2()
    }
}

/// Secrecy rate on one subcarrier: capacity minus the strongest
/// eavesdropper's rate, clamped at zero per subcarrier.
pub fn secrecy_subcarrier_rate(
    capacity: f64,
    b: f64,
    p: f64,
    b_np: f64,
    pbs_power: f64,
    occupied: bool,
) -> f64 {
    let eve = su_subcarrier_capacity(b, p, b_np, pbs_power, occupied);
    (capacity - eve).max(0.0)
}

/// (capacity, secrecy rate) of SU power `p` on a link.
pub fn link_rates(link: &LinkView, p: f64) -> (f64, f64) {
    let c = su_subcarrier_capacity(link.a, p, link.a_np, link.pbs_power, link.occupied);
    let s = secrecy_subcarrier_rate(c, link.b, p, link.b_np, link.pbs_power, link.occupied);
    (c, s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOutcome {
    /// R_k^PU.
    pub pu: Vec<f64>,
    /// C_n^m at the allocated power.
    pub capacity: Vec<Vec<f64>>,
    /// Secrecy rate per subcarrier at the allocated power.
    pub secrecy: Vec<Vec<f64>>,
    /// R_n^p = zeta_n * sum_m secrecy.
    pub private: Vec<f64>,
    /// R_n^o = sum_m C_n^m - R_n^p.
    pub open: Vec<f64>,
    /// Total transmit power E.
    pub energy: f64,
}

impl RateOutcome {
    pub fn su_total(&self, n: usize) -> f64 {
        self.open[n] + self.private[n]
    }
}

/// Evaluates every rate of a slot for a feasible action.
pub fn slot_rates(
    channel: &ChannelState,
    action: &ControlAction,
    p_max: f64,
) -> Result<RateOutcome, ModelError> {
    action.check_feasible(p_max)?;
    let n_su = channel.num_sus();
    let m_total = channel.num_subcarriers();
    if action.power.len() != n_su || action.zeta.len() != n_su {
        return Err(ModelError::Shape("action does not match channel".into()));
    }
    if action.power.iter().any(|row| row.len() != m_total) {
        return Err(ModelError::Shape("action does not match channel".into()));
    }

    let mut capacity = vec![vec![0.0; m_total]; n_su];
    let mut secrecy = vec![vec![0.0; m_total]; n_su];
    for n in 0..n_su {
        for m in 0..m_total {
            if !action.assign[n][m] {
                continue;
            }
            let (c, s) = link_rates(&channel.link(n, m), action.power[n][m]);
            capacity[n][m] = c;
            secrecy[n][m] = s;
        }
    }

    let mut pu = vec![0.0; channel.num_pus()];
    for (k, set) in channel.occupied.iter().enumerate() {
        for &m in set {
            let p = action.holder(m).map_or(0.0, |n| action.power[n][m]);
            pu[k] += pu_rate_on(channel, k, m, p);
        }
    }

    let private: Vec<f64> = (0..n_su)
        .map(|n| {
            if action.zeta[n] {
                secrecy[n].iter().sum()
            } else {
                0.0
            }
        })
        .collect();
    let open = (0..n_su)
        .map(|n| (capacity[n].iter().sum::<f64>() - private[n]).max(0.0))
        .collect();

    Ok(RateOutcome {
        pu,
        capacity,
        secrecy,
        private,
        open,
        energy: action.total_power(),
    })
}
