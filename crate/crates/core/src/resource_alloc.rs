//! Per-slot resource allocation: secrecy flags, per-subcarrier power,
//! subcarrier assignment and the dual loop on the peak-power multiplier.
//!
//! For a price `c = Y + delta` every (SU, subcarrier) pair solves
//! `max_p g(p) - c p` on `[0, P_max]`, where `g` is the urgency-weighted rate
//! (plus the PU-protection term on occupied subcarriers). Free subcarriers
//! have a closed form; occupied ones use a precomputed grid and its upper
//! concave hull, so each dual iteration is a binary search per pair.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, StepRule};
use crate::model::{ChannelState, ControlAction, LinkView, ModelError, QueueState};
use crate::rates::slot_rates;

/// Transmission urgency of open and private data per SU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrgencyWeights {
    pub open: Vec<f64>,
    pub private: Vec<f64>,
}

impl UrgencyWeights {
    pub fn from_queues(q: &QueueState, cfg: &ScenarioConfig) -> Self {
        UrgencyWeights {
            open: (0..q.open.len())
                .map(|n| q.virt_open[n] * q.open[n] / cfg.q_max_open)
                .collect(),
            private: (0..q.private.len())
                .map(|n| q.virt_private[n] * q.private[n] / cfg.q_max_private)
                .collect(),
        }
    }
}

/// `zeta_n = 1` iff the private urgency is at least the open urgency.
pub fn secrecy_control(w_open: &[f64], w_private: &[f64]) -> Vec<bool> {
    w_open.iter().zip(w_private).map(|(o, p)| p >= o).collect()
}

/// Projected multiplier for the peak-power constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub delta: f64,
    pub iteration: usize,
    pub last_subgradient: f64,
}

impl DualState {
    pub fn new(delta: f64) -> Self {
        DualState {
            delta: delta.max(0.0),
            iteration: 0,
            last_subgradient: f64::NAN,
        }
    }

    /// `delta <- [delta - step * subgradient]^+`
    pub fn update(&mut self, subgradient: f64, step: f64) {
        self.delta = (self.delta - step * subgradient).max(0.0);
        self.iteration += 1;
        self.last_subgradient = subgradient;
    }

    /// Moves to an explicitly chosen multiplier (bracketing fallback).
    pub fn jump(&mut self, delta: f64, subgradient: f64) {
        self.delta = delta.max(0.0);
        self.iteration += 1;
        self.last_subgradient = subgradient;
    }
}

/// PU protection term `q * log2(1 + s / (1 + x p))` of an occupied subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuTerm {
    /// Queue weight Q_k (or its estimate).
    pub weight: f64,
    /// PBS power times PU direct C/I.
    pub signal: f64,
    /// CBS -> PU cross C/I.
    pub cross: f64,
}

impl PuTerm {
    pub fn rate(&self, p: f64) -> f64 {
        (1.0 + self.signal / (1.0 + self.cross * p)).log2()
    }
}

/// The per-pair utility `g(p)` before the power price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairObjective {
    /// SU C/I after PBS interference.
    pub a: f64,
    /// Eavesdropper C/I after PBS interference.
    pub b: f64,
    pub w_open: f64,
    pub w_private: f64,
    pub zeta: bool,
    pub pu: Option<PuTerm>,
}

impl PairObjective {
    pub fn new(link: &LinkView, w_open: f64, w_private: f64, zeta: bool, pu: Option<PuTerm>) -> Self {
        PairObjective {
            a: link.a / (1.0 + link.pbs_power * link.a_np),
            b: link.b / (1.0 + link.pbs_power * link.b_np),
            w_open,
            w_private,
            zeta,
            pu,
        }
    }

    fn secure(&self) -> bool {
        self.zeta && self.a > self.b
    }

    pub fn utility(&self, p: f64) -> f64 {
        self.su_utility(p) + self.pu_utility(p)
    }

    fn su_utility(&self, p: f64) -> f64 {
        let ca = (p * self.a).ln_1p() / LN_2;
        if self.secure() {
            let cb = (p * self.b).ln_1p() / LN_2;
            self.w_private * (ca - cb) + self.w_open * cb
        } else {
            self.w_open * ca
        }
    }

    fn pu_utility(&self, p: f64) -> f64 {
        self.pu.map_or(0.0, |t| t.weight * t.rate(p))
    }

    /// `g(p) - price * p`
    pub fn value(&self, p: f64, price: f64) -> f64 {
        self.utility(p) - price * p
    }

    /// SU part of `g'(0)`; an upper bound on the useful price when there is
    /// no PU term.
    fn marginal_at_zero(&self) -> f64 {
        if self.secure() {
            (self.w_private * self.a + (self.w_open - self.w_private) * self.b) / LN_2
        } else {
            self.w_open * self.a / LN_2
        }
    }
}

fn better(cand: (f64, f64), best: (f64, f64)) -> bool {
    cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0)
}

/// Real roots of `qa x^2 + qb x + qc = 0`, degenerating to the linear case.
fn real_roots(qa: f64, qb: f64, qc: f64) -> Vec<f64> {
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if qa.abs() <= 1e-14 * scale {
        if qb == 0.0 {
            return Vec::new();
        }
        return vec![-qc / qb];
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // Numerically stable pair.
    let t = -0.5 * (qb + qb.signum() * sq);
    if t == 0.0 {
        return vec![0.0];
    }
    vec![t / qa, qc / t]
}

/// Maximiser of `g(p) - price p` on `[0, p_max]` for a subcarrier with no
/// PU, plus the attained value. Candidates are both endpoints and every
/// stationary point in range; ties go to the smaller power.
pub fn best_free_power(obj: &PairObjective, price: f64, p_max: f64) -> (f64, f64) {
    debug_assert!(obj.pu.is_none());
    let mut best = (0.0, 0.0);
    let mut consider = |p: f64| {
        if (0.0..=p_max).contains(&p) {
            let cand = (p, obj.value(p, price));
            if better(cand, best) {
                best = cand;
            }
        }
    };
    consider(p_max);
    let k = price * LN_2;
    if obj.secure() {
        let (a, b, wo, wp) = (obj.a, obj.b, obj.w_open, obj.w_private);
        for r in real_roots(k * a * b, k * (a + b) - wo * a * b, k - wp * a - (wo - wp) * b) {
            consider(r);
        }
    } else if obj.w_open > 0.0 && obj.a > 0.0 && k > 0.0 {
        consider(obj.w_open / k - 1.0 / obj.a);
    }
    best
}

/// Power maximising `J_n^m` on a subcarrier with no PU.
pub fn power_free_subcarrier(
    link: &LinkView,
    w_open: f64,
    w_private: f64,
    zeta: bool,
    y: f64,
    delta: f64,
    p_max: f64,
) -> f64 {
    let obj = PairObjective::new(link, w_open, w_private, zeta, None);
    best_free_power(&obj, y + delta, p_max).0
}

/// Sampled utility of one pair on a power grid with quadratic spacing
/// (dense near zero, where most per-subcarrier powers fall) and the upper
/// concave hull of the samples.
#[derive(Debug, Clone)]
pub struct OccupiedGrid {
    powers: Vec<f64>,
    values: Vec<f64>,
    /// Grid indices of hull vertices, increasing.
    hull: Vec<usize>,
    /// Slope from hull vertex `j` to `j + 1`, decreasing.
    slopes: Vec<f64>,
}

impl OccupiedGrid {
    pub fn new(obj: &PairObjective, p_max: f64, points: usize) -> Self {
        let powers = Self::powers(p_max, points);
        let pu: Vec<f64> = powers.iter().map(|&p| obj.pu_utility(p)).collect();
        Self::with_pu_values(obj, powers, &pu)
    }

    /// Grid abscissae: `p_max * (i / (points - 1))^2`.
    pub fn powers(p_max: f64, points: usize) -> Vec<f64> {
        let points = points.max(2);
        let last = (points - 1) as f64;
        (0..points)
            .map(|i| {
                let u = i as f64 / last;
                p_max * u * u
            })
            .collect()
    }

    /// Builds the grid from precomputed PU-term samples, which depend only on
    /// the subcarrier and can be shared by every SU.
    fn with_pu_values(obj: &PairObjective, powers: Vec<f64>, pu: &[f64]) -> Self {
        let points = powers.len();
        let values: Vec<f64> = powers.iter().zip(pu).map(|(&p, &u)| obj.su_utility(p) + u).collect();
        let mut hull: Vec<usize> = Vec::with_capacity(points);
        for i in 0..points {
            while hull.len() >= 2 {
                let (h1, h2) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                // Drop h2 if it lies on or below the chord h1 -> i.
                let lhs = (values[h2] - values[h1]) * (powers[i] - powers[h1]);
                let rhs = (values[i] - values[h1]) * (powers[h2] - powers[h1]);
                if lhs <= rhs {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        let slopes = hull
            .windows(2)
            .map(|w| (values[w[1]] - values[w[0]]) / (powers[w[1]] - powers[w[0]]))
            .collect();
        OccupiedGrid {
            powers,
            values,
            hull,
            slopes,
        }
    }

    /// Largest useful price: above it the grid optimum is `p = 0`.
    pub fn max_slope(&self) -> f64 {
        self.slopes.first().copied().unwrap_or(0.0)
    }

    /// Grid index maximising `g - price p`, smallest on ties.
    pub fn best_index(&self, price: f64) -> usize {
        let j = self.slopes.partition_point(|&s| s > price);
        self.hull[j]
    }

    pub fn best(&self, price: f64) -> (f64, f64) {
        let i = self.best_index(price);
        let p = self.powers[i];
        (p, self.values[i] - price * p)
    }

    /// Grid points either side of index `i`.
    pub fn bracket(&self, i: usize) -> (f64, f64) {
        let lo = self.powers[i.saturating_sub(1)];
        let hi = self.powers[(i + 1).min(self.powers.len() - 1)];
        (lo, hi)
    }
}

/// Golden-section search of `f` on `[lo, hi]`, returning the better of the
/// result and `start`.
fn golden_refine<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, start: (f64, f64)) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if b - a <= 1e-12 * (1.0 + hi.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let p = if fc >= fd { c } else { d };
    let cand = (p, f(p));
    if cand.1 > start.1 {
        cand
    } else {
        start
    }
}

/// Grid optimum refined by golden-section search on the neighbouring cells.
pub fn refine_occupied(obj: &PairObjective, grid: &OccupiedGrid, price: f64, p_max: f64) -> (f64, f64) {
    let start = grid.best(price);
    let (lo, hi) = grid.bracket(grid.best_index(price));
    golden_refine(|p| obj.value(p, price), lo, hi.min(p_max), start)
}

/// Power maximising `J_n^m` on a subcarrier occupied by a PU.
#[allow(clippy::too_many_arguments)]
pub fn power_occupied_subcarrier(
    link: &LinkView,
    w_open: f64,
    w_private: f64,
    zeta: bool,
    pu: PuTerm,
    y: f64,
    delta: f64,
    p_max: f64,
    grid_points: usize,
) -> f64 {
    let obj = PairObjective::new(link, w_open, w_private, zeta, Some(pu));
    let grid = OccupiedGrid::new(&obj, p_max, grid_points);
    refine_occupied(&obj, &grid, y + delta, p_max).0
}

/// Each subcarrier goes to the SU with the largest `J`, ties to the lowest
/// index. Every subcarrier is assigned.
pub fn assign_subcarriers(j: &[Vec<f64>]) -> Vec<Vec<bool>> {
    let n_su = j.len();
    let m_total = j.first().map_or(0, Vec::len);
    let mut w = vec![vec![false; m_total]; n_su];
    for m in 0..m_total {
        if let Some(best) = argmax_column(j, m) {
            w[best][m] = true;
        }
    }
    w
}

fn argmax_column(j: &[Vec<f64>], m: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (n, row) in j.iter().enumerate() {
        match best {
            Some(b) if row[m] <= j[b][m] => {}
            _ => best = Some(n),
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualStatus {
    Converged,
    Stalled,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub step_rule: StepRule,
    pub step_size: f64,
    pub tolerance: f64,
    pub delta_init: f64,
    pub max_iterations: usize,
    pub grid_points: usize,
    pub record_trajectory: bool,
}

impl SolverParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        SolverParams {
            step_rule: cfg.step_rule,
            step_size: cfg.step_size,
            tolerance: cfg.dual_tolerance,
            delta_init: cfg.delta_init,
            max_iterations: cfg.max_dual_iterations,
            grid_points: cfg.power_grid_points,
            record_trajectory: false,
        }
    }
}

/// One dual iterate, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualStep {
    pub delta: f64,
    pub energy: f64,
    pub step: f64,
}

/// Output of [`solve_allocation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub power: Vec<Vec<f64>>,
    pub assign: Vec<Vec<bool>>,
    pub zeta: Vec<bool>,
    pub delta: f64,
    pub iterations: usize,
    pub status: DualStatus,
    /// Total transmitted power.
    pub energy: f64,
    /// Primal objective `sum g - Y E` of the emitted allocation.
    pub objective: f64,
    /// Whether the final power was scaled down to meet the peak limit.
    pub rescaled: bool,
    pub trajectory: Vec<DualStep>,
}

impl Allocation {
    /// Copies power, assignment and secrecy flags into an action.
    pub fn apply_to(&self, action: &mut ControlAction) {
        action.power = self.power.clone();
        action.assign = self.assign.clone();
        action.zeta = self.zeta.clone();
    }
}

enum Pair {
    Free(PairObjective),
    Occupied(PairObjective, OccupiedGrid),
}

impl Pair {
    fn objective(&self) -> &PairObjective {
        match self {
            Pair::Free(o) | Pair::Occupied(o, _) => o,
        }
    }

    fn best(&self, price: f64, p_max: f64) -> (f64, f64) {
        match self {
            Pair::Free(o) => best_free_power(o, price, p_max),
            Pair::Occupied(_, g) => g.best(price),
        }
    }

    fn max_price(&self) -> f64 {
        match self {
            Pair::Free(o) => o.marginal_at_zero(),
            Pair::Occupied(_, g) => g.max_slope(),
        }
    }
}

struct Iterate {
    power: Vec<Vec<f64>>,
    assign: Vec<Vec<bool>>,
    energy: f64,
}

struct Problem {
    pairs: Vec<Vec<Pair>>,
    y: f64,
    p_max: f64,
}

impl Problem {
    fn evaluate(&self, delta: f64) -> Iterate {
        let n_su = self.pairs.len();
        let m_total = self.pairs.first().map_or(0, Vec::len);
        let price = self.y + delta;
        let mut power = vec![vec![0.0; m_total]; n_su];
        let mut j = vec![vec![0.0; m_total]; n_su];
        for n in 0..n_su {
            for m in 0..m_total {
                let (p, v) = self.pairs[n][m].best(price, self.p_max);
                power[n][m] = p;
                j[n][m] = v;
            }
        }
        self.finish(power, &j)
    }

    fn finish(&self, mut power: Vec<Vec<f64>>, j: &[Vec<f64>]) -> Iterate {
        let assign = assign_subcarriers(j);
        let mut energy = 0.0;
        for (prow, arow) in power.iter_mut().zip(&assign) {
            for (p, &a) in prow.iter_mut().zip(arow) {
                if a {
                    energy += *p;
                } else {
                    *p = 0.0;
                }
            }
        }
        Iterate { power, assign, energy }
    }

    /// `sum g(p) - Y E` over assigned pairs.
    fn objective(&self, it: &Iterate) -> f64 {
        let mut u = 0.0;
        for (n, row) in self.pairs.iter().enumerate() {
            for (m, pair) in row.iter().enumerate() {
                if it.assign[n][m] {
                    u += pair.objective().utility(it.power[n][m]);
                }
            }
        }
        u - self.y * it.energy
    }

    /// Golden-section polish of occupied pairs at the final price; the
    /// assignment is recomputed with the refined values.
    fn refine(&self, delta: f64) -> Iterate {
        let n_su = self.pairs.len();
        let m_total = self.pairs.first().map_or(0, Vec::len);
        let price = self.y + delta;
        let mut power = vec![vec![0.0; m_total]; n_su];
        let mut j = vec![vec![0.0; m_total]; n_su];
        for n in 0..n_su {
            for m in 0..m_total {
                let (p, v) = match &self.pairs[n][m] {
                    Pair::Free(o) => best_free_power(o, price, self.p_max),
                    Pair::Occupied(o, g) => refine_occupied(o, g, price, self.p_max),
                };
                power[n][m] = p;
                j[n][m] = v;
            }
        }
        self.finish(power, &j)
    }

    /// Uniform scaling onto the peak-power limit.
    fn scale_to_limit(&self, mut it: Iterate) -> Iterate {
        // Rounding can leave the sum a few ulps above the limit.
        while it.energy > self.p_max {
            let s = (self.p_max / it.energy).min(1.0 - f64::EPSILON);
            for p in it.power.iter_mut().flatten() {
                *p *= s;
            }
            it.energy = it.power.iter().flatten().sum();
        }
        it
    }
}

/// Solves the slot allocation for fixed queue weights.
///
/// `pu_weights[k]` weighs PU `k`'s rate; under the estimator variant the
/// caller passes the estimated backlog. `y` is the power-credit backlog.
pub fn solve_allocation(
    channel: &ChannelState,
    weights: &UrgencyWeights,
    pu_weights: &[f64],
    y: f64,
    p_max: f64,
    params: &SolverParams,
) -> Allocation {
    let n_su = channel.num_sus();
    let m_total = channel.num_subcarriers();
    let zeta = secrecy_control(&weights.open, &weights.private);

    let grid_powers = OccupiedGrid::powers(p_max, params.grid_points);
    let mut pu_curves: Vec<Option<Vec<f64>>> = vec![None; m_total];
    let pairs: Vec<Vec<Pair>> = (0..n_su)
        .map(|n| {
            (0..m_total)
                .map(|m| {
                    let link = channel.link(n, m);
                    match channel.owner(m) {
                        None => Pair::Free(PairObjective::new(
                            &link,
                            weights.open[n],
                            weights.private[n],
                            zeta[n],
                            None,
                        )),
                        Some(k) => {
                            let pu = PuTerm {
                                weight: pu_weights[k],
                                signal: channel.pbs_power[k][m] * channel.pu[k][m],
                                cross: channel.cbs_to_pu[k][m],
                            };
                            let obj = PairObjective::new(
                                &link,
                                weights.open[n],
                                weights.private[n],
                                zeta[n],
                                Some(pu),
                            );
                            let curve = pu_curves[m].get_or_insert_with(|| {
                                grid_powers.iter().map(|&p| obj.pu_utility(p)).collect()
                            });
                            let grid = OccupiedGrid::with_pu_values(&obj, grid_powers.clone(), curve);
                            Pair::Occupied(obj, grid)
                        }
                    }
                })
                .collect()
        })
        .collect();
    let prob = Problem { pairs, y, p_max };

    let delta_scale = prob
        .pairs
        .iter()
        .flatten()
        .map(Pair::max_price)
        .fold(0.0, f64::max);
    let tol = params.tolerance * p_max;
    let mut dual = DualState::new(params.delta_init);
    let mut step = match params.step_rule {
        StepRule::Adaptive => params.step_size * delta_scale.max(1e-12) / p_max,
        StepRule::Constant => params.step_size,
    };
    let mut trajectory = Vec::new();
    let mut best_feasible: Option<(Iterate, f64, f64)> = None;
    let mut prev_sign = 0.0;
    // Largest multiplier seen with the budget exceeded, smallest seen within it.
    let mut lo = 0.0f64;
    let mut hi: Option<f64> = None;
    let status;
    loop {
        let it = prob.evaluate(dual.delta);
        let sub = p_max - it.energy;
        if params.record_trajectory {
            trajectory.push(DualStep {
                delta: dual.delta,
                energy: it.energy,
                step,
            });
        }
        if sub >= 0.0 {
            hi = Some(hi.map_or(dual.delta, |h| h.min(dual.delta)));
            let u = prob.objective(&it);
            if best_feasible.as_ref().is_none_or(|(_, bu, _)| u > *bu) {
                let copy = Iterate {
                    power: it.power.clone(),
                    assign: it.assign.clone(),
                    energy: it.energy,
                };
                best_feasible = Some((copy, u, dual.delta));
            }
        } else {
            lo = lo.max(dual.delta);
        }
        if sub.abs() <= tol || (dual.delta == 0.0 && sub >= 0.0) {
            status = DualStatus::Converged;
            break;
        }
        if dual.iteration >= params.max_iterations {
            status = DualStatus::IterationLimit;
            break;
        }
        match params.step_rule {
            StepRule::Constant => dual.update(sub, step),
            StepRule::Adaptive => {
                let sign = sub.signum();
                if prev_sign != 0.0 {
                    step *= if sign == prev_sign { 2.0 } else { 0.5 };
                }
                prev_sign = sign;
                let mut next = (dual.delta - step * sub).max(0.0);
                if let Some(h) = hi {
                    if h - lo <= 1e-12 * (1.0 + h) {
                        status = DualStatus::Stalled;
                        break;
                    }
                    if next <= lo || next >= h {
                        next = if lo > 0.0 && h > 4.0 * lo { (lo * h).sqrt() } else { 0.5 * (lo + h) };
                    }
                }
                dual.jump(next, sub);
            }
        }
    }

    let final_delta = dual.delta;
    let refined = prob.refine(final_delta);
    let rescaled = refined.energy > p_max;
    let refined = prob.scale_to_limit(refined);
    let refined_u = prob.objective(&refined);
    let (chosen, objective, delta, rescaled) = match best_feasible {
        Some((bf, bu, bd)) if bu > refined_u => (bf, bu, bd, false),
        _ => (refined, refined_u, final_delta, rescaled),
    };
    Allocation {
        energy: chosen.power.iter().flatten().sum(),
        power: chosen.power,
        assign: chosen.assign,
        zeta,
        delta,
        iterations: dual.iteration,
        status,
        objective,
        rescaled,
        trajectory,
    }
}

/// Slot objective `sum w_o R_o + w_p R_p + sum_k Q_k R_k - Y E` of an action.
pub fn mps_objective(
    channel: &ChannelState,
    action: &ControlAction,
    weights: &UrgencyWeights,
    pu_weights: &[f64],
    y: f64,
    p_max: f64,
) -> Result<f64, ModelError> {
    let r = slot_rates(channel, action, p_max)?;
    let su: f64 = (0..r.open.len())
        .map(|n| weights.open[n] * r.open[n] + weights.private[n] * r.private[n])
        .sum();
    let pu: f64 = r.pu.iter().zip(pu_weights).map(|(rate, q)| rate * q).sum();
    Ok(su + pu - y * r.energy)
}
