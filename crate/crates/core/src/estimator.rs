//! Over-estimated PU backlog kept at the CBS when the true PU queue is not
//! observable.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub qhat: Vec<f64>,
    pub iota: f64,
}

impl EstimatorState {
    pub fn new(num_pus: usize, iota: f64) -> Self {
        EstimatorState {
            qhat: vec![0.0; num_pus],
            iota: iota.max(0.0),
        }
    }
}

/// `Qhat <- [Qhat - R]^+ + lambda + iota`, or 0 for a PU seen idle.
pub fn update_estimate(state: &mut EstimatorState, pu_rate: &[f64], pu_idle: &[bool], lambda: &[f64]) {
    for (k, q) in state.qhat.iter_mut().enumerate() {
        *q = if pu_idle[k] {
            0.0
        } else {
            (*q - pu_rate[k]).max(0.0) + lambda[k] + state.iota
        };
    }
}
