//! Cross-layer online scheduling for OFDMA cognitive-radio downlinks carrying
//! open and private traffic, plus a slotted simulator to evaluate it.

pub mod channel;
pub mod config;
pub mod model;
pub mod rates;
pub mod queueing;
pub mod flow_control;
pub mod resource_alloc;
pub mod overlay;
pub mod estimator;
pub mod sim;
