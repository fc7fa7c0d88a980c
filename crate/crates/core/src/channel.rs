//! Per-slot channel generation.
//!
//! Direct links (CBS -> SU, PBS -> PU) are block-faded: an exponential
//! (Rayleigh power) draw per subcarrier times one log-normal shadowing draw
//! per link, both fresh every slot. Cross links are long-scale only: a fixed
//! mean with optional log-normal jitter.
//!
//! Every draw comes from a ChaCha stream keyed by `(seed, purpose, slot)`, so
//! a slot's channel is a pure function of the seed and the slot index and
//! does not depend on what the scheduler did earlier.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PuPolicy, ScenarioConfig};
use crate::model::ChannelState;

/// Stream identifiers; one independent ChaCha stream per purpose.
pub mod stream {
    pub const CHANNEL: u64 = 1;
    pub const OCCUPANCY: u64 = 2;
    pub const ARRIVALS: u64 = 3;
}

/// RNG for `(seed, purpose, slot)`. Each slot owns 2^32 words of its stream.
pub fn slot_rng(seed: u64, purpose: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.set_word_pos(u128::from(slot) << 32);
    rng
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("PU blocks need {need} subcarriers but only {have} exist")]
    Oversubscribed { need: usize, have: usize },
    #[error("fixed policy needs one block size per PU")]
    BlockCount,
    #[error("invalid occupancy: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModelParams {
    pub num_subcarriers: usize,
    pub num_sus: usize,
    pub num_pus: usize,
    pub su_mean_ci: f64,
    pub pu_mean_ci: f64,
    pub shadowing_std_db: f64,
    pub cross_cbs_to_pu: f64,
    pub cross_pbs_to_su: f64,
    pub cross_jitter_db: f64,
}

impl ChannelModelParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        ChannelModelParams {
            num_subcarriers: cfg.num_subcarriers,
            num_sus: cfg.num_sus,
            num_pus: cfg.num_pus,
            su_mean_ci: cfg.su_mean_ci,
            pu_mean_ci: cfg.pu_mean_ci,
            shadowing_std_db: cfg.shadowing_std_db,
            cross_cbs_to_pu: cfg.cross_cbs_to_pu,
            cross_pbs_to_su: cfg.cross_pbs_to_su,
            cross_jitter_db: cfg.cross_jitter_db,
        }
    }
}

/// Shadowing factor in linear scale: 10^(X/10), X ~ N(0, std_db^2).
pub fn shadowing_factor<R: Rng + ?Sized>(std_db: f64, rng: &mut R) -> f64 {
    if std_db == 0.0 {
        return 1.0;
    }
    let x: f64 = rng.sample(StandardNormal);
    10f64.powf(std_db * x / 10.0)
}

/// Unit-mean exponential power gain (squared Rayleigh envelope).
pub fn rayleigh_power<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

fn direct_links<R: Rng + ?Sized>(
    rows: usize,
    m: usize,
    mean: f64,
    std_db: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let shadow = mean * shadowing_factor(std_db, rng);
            (0..m).map(|_| shadow * rayleigh_power(rng)).collect()
        })
        .collect()
}

fn cross_links<R: Rng + ?Sized>(
    rows: usize,
    m: usize,
    mean: f64,
    jitter_db: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..m).map(|_| mean * shadowing_factor(jitter_db, rng)).collect())
        .collect()
}

/// Draws the fading state of `slot`. All PUs are idle in the result; call
/// [`ChannelState::set_occupancy`] with the output of [`pu_occupancy`].
pub fn sample_channel(params: &ChannelModelParams, seed: u64, slot: u64) -> ChannelState {
    let mut rng = slot_rng(seed, stream::CHANNEL, slot);
    let m = params.num_subcarriers;
    let su = direct_links(params.num_sus, m, params.su_mean_ci, params.shadowing_std_db, &mut rng);
    let pu = direct_links(params.num_pus, m, params.pu_mean_ci, params.shadowing_std_db, &mut rng);
    let cbs_to_pu = cross_links(
        params.num_pus,
        m,
        params.cross_cbs_to_pu,
        params.cross_jitter_db,
        &mut rng,
    );
    let pbs_to_su = cross_links(
        params.num_sus,
        m,
        params.cross_pbs_to_su,
        params.cross_jitter_db,
        &mut rng,
    );
    ChannelState::from_gains(su, pu, cbs_to_pu, pbs_to_su).expect("generated shapes are consistent")
}

/// PBS occupancy descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPolicy {
    pub kind: PuPolicy,
    pub num_subcarriers: usize,
    pub blocks: Vec<usize>,
    pub fraction: f64,
}

impl OccupancyPolicy {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        OccupancyPolicy {
            kind: cfg.pu_policy,
            num_subcarriers: cfg.num_subcarriers,
            blocks: cfg.pu_subcarriers.clone(),
            fraction: cfg.pu_occupancy_fraction,
        }
    }

    pub fn fixed(num_subcarriers: usize, blocks: Vec<usize>) -> Self {
        OccupancyPolicy {
            kind: PuPolicy::Fixed,
            num_subcarriers,
            blocks,
            fraction: 0.0,
        }
    }
}

/// Subcarrier sets occupied by each PU in `slot`. A PU with an empty queue is
/// idle and occupies nothing.
pub fn pu_occupancy(
    policy: &OccupancyPolicy,
    seed: u64,
    slot: u64,
    pu_queues: &[f64],
) -> Result<Vec<Vec<usize>>, ChannelError> {
    let k = pu_queues.len();
    let m = policy.num_subcarriers;
    match policy.kind {
        PuPolicy::Fixed => {
            if policy.blocks.len() != k {
                return Err(ChannelError::BlockCount);
            }
            let need: usize = policy.blocks.iter().sum();
            if need > m {
                return Err(ChannelError::Oversubscribed { need, have: m });
            }
            let mut start = 0;
            Ok(policy
                .blocks
                .iter()
                .zip(pu_queues)
                .map(|(&len, &q)| {
                    let set: Vec<usize> = if q > 0.0 {
                        (start..start + len).collect()
                    } else {
                        Vec::new()
                    };
                    start += len;
                    set
                })
                .collect())
        }
        PuPolicy::Random => {
            let mut rng = slot_rng(seed, stream::OCCUPANCY, slot);
            let busy: Vec<usize> = (0..k).filter(|&i| pu_queues[i] > 0.0).collect();
            let mut sets = vec![Vec::new(); k];
            for j in 0..m {
                // Draw both numbers unconditionally so the stream layout does
                // not depend on which PUs are busy.
                let u: f64 = rng.random();
                let pick: usize = rng.random_range(0..k.max(1));
                if !busy.is_empty() && u < policy.fraction {
                    sets[busy[pick % busy.len()]].push(j);
                }
            }
            Ok(sets)
        }
    }
}
