//! Bang-bang admission rules for actual and virtual data.

use crate::config::ScenarioConfig;

/// Actual admissions `(T_o, T_p)` of one SU given its backlogs and arrivals.
pub fn actual_admission(
    q_open: f64,
    q_private: f64,
    d_open: f64,
    d_private: f64,
    cfg: &ScenarioConfig,
) -> (f64, f64) {
    let t_o = if q_open - cfg.q_max_open + cfg.mu_max >= 0.0 {
        0.0
    } else {
        d_open
    };
    let t_p = if q_private - cfg.q_max_private + cfg.d_max >= 0.0 {
        0.0
    } else {
        d_private
    };
    (t_o, t_p)
}

/// Virtual admissions `(mu_o, mu_p)` of SU `n`.
pub fn virtual_admission(
    n: usize,
    x_open: f64,
    x_private: f64,
    z: f64,
    d_open: f64,
    d_private: f64,
    cfg: &ScenarioConfig,
) -> (f64, f64) {
    let score_o = (cfg.q_max_open - cfg.mu_max) / cfg.q_max_open * x_open
        - cfg.rho_of(n) * z
        - cfg.v * cfg.phi_of(n);
    let score_p = (cfg.q_max_private - cfg.d_max) / cfg.q_max_private * x_private - cfg.v * cfg.theta_of(n);
    let mu_o = if score_o >= 0.0 { 0.0 } else { d_open };
    let mu_p = if score_p >= 0.0 { 0.0 } else { d_private };
    (mu_o, mu_p)
}
