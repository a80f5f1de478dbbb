//! Bundled example data.

use crate::error::Result;
use crate::network::FeedForwardNN;

/// Two-layer tanh state-feedback network (5 + 5 neurons) for the pendulum example.
pub const PENDULUM_NN_JSON: &str = include_str!("../assets/pendulum_tanh_2x5.json");

pub fn pendulum_network() -> Result<FeedForwardNN> {
    FeedForwardNN::from_json(PENDULUM_NN_JSON)
}
