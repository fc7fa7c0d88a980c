//! Shared per-slot domain types: channel state, queue backlogs and the
//! control action the scheduler emits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("subcarrier {0} is claimed by more than one PU")]
    OverlappingOccupancy(usize),
    #[error("subcarrier {m} out of range (M = {num})")]
    SubcarrierOutOfRange { m: usize, num: usize },
    #[error("subcarrier {0} assigned to more than one SU")]
    MultipleAssignment(usize),
    #[error("SU {n} has power on unassigned subcarrier {m}")]
    PowerWithoutAssignment { n: usize, m: usize },
    #[error("total power {total} exceeds the peak limit {p_max}")]
    PeakPower { total: f64, p_max: f64 },
    #[error("negative or non-finite power {p} for SU {n} on subcarrier {m}")]
    BadPower { n: usize, m: usize, p: f64 },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// Relative slack allowed when checking the peak-power constraint against
/// floating-point sums.
pub const POWER_SLACK: f64 = 1e-9;

/// C/I values of every link in one slot plus the PU occupancy.
///
/// Indexing is `[user][subcarrier]`. `eve` and `pbs_to_eve` hold the C/I of
/// the strongest other SU (the most capable eavesdropper) and that SU's PBS
/// cross link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub su: Vec<Vec<f64>>,
    pub pu: Vec<Vec<f64>>,
    pub cbs_to_pu: Vec<Vec<f64>>,
    pub pbs_to_su: Vec<Vec<f64>>,
    pub eve: Vec<Vec<f64>>,
    pub pbs_to_eve: Vec<Vec<f64>>,
    /// Occupied subcarrier set of every PU.
    pub occupied: Vec<Vec<usize>>,
    /// PBS power `[k][m]`, zero off the occupied set.
    pub pbs_power: Vec<Vec<f64>>,
    owner: Vec<Option<usize>>,
}

/// Everything the per-(n, m) rate formulas need about one SU on one subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkView {
    pub a: f64,
    pub b: f64,
    pub a_np: f64,
    pub b_np: f64,
    /// PBS power on this subcarrier (0 when free).
    pub pbs_power: f64,
    pub occupied: bool,
}

impl ChannelState {
    /// Builds a state from direct and cross gains with every PU idle. The
    /// eavesdropper arrays are derived here.
    pub fn from_gains(
        su: Vec<Vec<f64>>,
        pu: Vec<Vec<f64>>,
        cbs_to_pu: Vec<Vec<f64>>,
        pbs_to_su: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let n = su.len();
        let m = su.first().map_or(0, Vec::len);
        let k = pu.len();
        let shape_ok = |v: &Vec<Vec<f64>>, rows: usize| v.len() == rows && v.iter().all(|r| r.len() == m);
        if !shape_ok(&su, n) || !shape_ok(&pbs_to_su, n) {
            return Err(ModelError::Shape("SU arrays must be N x M".into()));
        }
        if !shape_ok(&pu, k) || !shape_ok(&cbs_to_pu, k) {
            return Err(ModelError::Shape("PU arrays must be K x M".into()));
        }
        let (eve, pbs_to_eve) = eavesdroppers(&su, &pbs_to_su);
        Ok(ChannelState {
            su,
            pu,
            cbs_to_pu,
            pbs_to_su,
            eve,
            pbs_to_eve,
            occupied: vec![Vec::new(); k],
            pbs_power: vec![vec![0.0; m]; k],
            owner: vec![None; m],
        })
    }

    pub fn num_sus(&self) -> usize {
        self.su.len()
    }

    pub fn num_pus(&self) -> usize {
        self.pu.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.owner.len()
    }

    /// Installs the PU occupancy; sets must be disjoint and in range.
    pub fn set_occupancy(&mut self, sets: Vec<Vec<usize>>, power: f64) -> Result<(), ModelError> {
        let m_total = self.num_subcarriers();
        if sets.len() != self.num_pus() {
            return Err(ModelError::Shape("one occupancy set per PU".into()));
        }
        let mut owner = vec![None; m_total];
        let mut pbs = vec![vec![0.0; m_total]; sets.len()];
        for (k, set) in sets.iter().enumerate() {
            for &m in set {
                if m >= m_total {
                    return Err(ModelError::SubcarrierOutOfRange { m, num: m_total });
                }
                if owner[m].is_some() {
                    return Err(ModelError::OverlappingOccupancy(m));
                }
                owner[m] = Some(k);
                pbs[k][m] = power;
            }
        }
        self.owner = owner;
        self.pbs_power = pbs;
        self.occupied = sets;
        Ok(())
    }

    /// The PU transmitting on subcarrier `m`, if any.
    pub fn owner(&self, m: usize) -> Option<usize> {
        self.owner[m]
    }

    pub fn link(&self, n: usize, m: usize) -> LinkView {
        match self.owner[m] {
            Some(k) => LinkView {
                a: self.su[n][m],
                b: self.eve[n][m],
                a_np: self.pbs_to_su[n][m],
                b_np: self.pbs_to_eve[n][m],
                pbs_power: self.pbs_power[k][m],
                occupied: true,
            },
            None => LinkView {
                a: self.su[n][m],
                b: self.eve[n][m],
                a_np: self.pbs_to_su[n][m],
                b_np: self.pbs_to_eve[n][m],
                pbs_power: 0.0,
                occupied: false,
            },
        }
    }
}

/// For every (n, m): the largest C/I among the other SUs and the PBS cross
/// link of that SU. With a single SU there is no eavesdropper and both are 0.
pub fn eavesdroppers(su: &[Vec<f64>], pbs_to_su: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = su.len();
    let m = su.first().map_or(0, Vec::len);
    let mut eve = vec![vec![0.0; m]; n];
    let mut eve_cross = vec![vec![0.0; m]; n];
    for j in 0..m {
        // Top two users on this subcarrier; ties resolve to the lower index.
        let mut best: Option<usize> = None;
        let mut second: Option<usize> = None;
        for i in 0..n {
            match best {
                None => best = Some(i),
                Some(b) if su[i][j] > su[b][j] => {
                    second = best;
                    best = Some(i);
                }
                _ => match second {
                    None => second = Some(i),
                    Some(s) if su[i][j] > su[s][j] => second = Some(i),
                    _ => {}
                },
            }
        }
        for i in 0..n {
            let e = if Some(i) == best { second } else { best };
            if let Some(e) = e {
                eve[i][j] = su[e][j];
                eve_cross[i][j] = pbs_to_su[e][j];
            }
        }
    }
    (eve, eve_cross)
}

/// Actual and virtual backlogs at a slot boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    /// PU queues Q_k.
    pub pu: Vec<f64>,
    /// Open-data queues Q_n^o.
    pub open: Vec<f64>,
    /// Private-data queues Q_n^p.
    pub private: Vec<f64>,
    /// Virtual admission queues X_n^o.
    pub virt_open: Vec<f64>,
    /// Virtual admission queues X_n^p.
    pub virt_private: Vec<f64>,
    /// Power credit queue Y.
    pub power: f64,
    /// Delay credit queues Z_n.
    pub delay: Vec<f64>,
}

impl QueueState {
    pub fn zeros(num_sus: usize, num_pus: usize) -> Self {
        QueueState {
            pu: vec![0.0; num_pus],
            open: vec![0.0; num_sus],
            private: vec![0.0; num_sus],
            virt_open: vec![0.0; num_sus],
            virt_private: vec![0.0; num_sus],
            power: 0.0,
            delay: vec![0.0; num_sus],
        }
    }

    pub fn for_config(cfg: &ScenarioConfig) -> Self {
        Self::zeros(cfg.num_sus, cfg.num_pus)
    }

    pub fn all_nonnegative(&self) -> bool {
        let ok = |v: &[f64]| v.iter().all(|x| *x >= 0.0 && x.is_finite());
        ok(&self.pu)
            && ok(&self.open)
            && ok(&self.private)
            && ok(&self.virt_open)
            && ok(&self.virt_private)
            && ok(&self.delay)
            && self.power >= 0.0
    }
}

/// One slot's decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    /// Power `[n][m]` (W).
    pub power: Vec<Vec<f64>>,
    /// Subcarrier assignment `[n][m]`.
    pub assign: Vec<Vec<bool>>,
    /// Secure-transmission flags.
    pub zeta: Vec<bool>,
    pub admit_open: Vec<f64>,
    pub admit_private: Vec<f64>,
    pub virt_open: Vec<f64>,
    pub virt_private: Vec<f64>,
}

impl ControlAction {
    pub fn idle(num_sus: usize, num_subcarriers: usize) -> Self {
        ControlAction {
            power: vec![vec![0.0; num_subcarriers]; num_sus],
            assign: vec![vec![false; num_subcarriers]; num_sus],
            zeta: vec![false; num_sus],
            admit_open: vec![0.0; num_sus],
            admit_private: vec![0.0; num_sus],
            virt_open: vec![0.0; num_sus],
            virt_private: vec![0.0; num_sus],
        }
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().flatten().sum()
    }

    /// The SU holding subcarrier `m`, if any.
    pub fn holder(&self, m: usize) -> Option<usize> {
        self.assign.iter().position(|row| row[m])
    }

    /// Checks exclusive assignment and the peak-power limit.
    pub fn check_feasible(&self, p_max: f64) -> Result<(), ModelError> {
        let n = self.power.len();
        let m_total = self.power.first().map_or(0, Vec::len);
        if self.assign.len() != n || self.assign.iter().any(|r| r.len() != m_total) {
            return Err(ModelError::Shape("assign and power must both be N x M".into()));
        }
        for m in 0..m_total {
            if (0..n).filter(|&i| self.assign[i][m]).count() > 1 {
                return Err(ModelError::MultipleAssignment(m));
            }
            for i in 0..n {
                let p = self.power[i][m];
                if !(p.is_finite() && p >= 0.0) {
                    return Err(ModelError::BadPower { n: i, m, p });
                }
                if p > 0.0 && !self.assign[i][m] {
                    return Err(ModelError::PowerWithoutAssignment { n: i, m });
                }
            }
        }
        let total = self.total_power();
        if total > p_max * (1.0 + POWER_SLACK) {
            return Err(ModelError::PeakPower { total, p_max });
        }
        Ok(())
    }
}
