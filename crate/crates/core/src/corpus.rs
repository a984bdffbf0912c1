//! Bundled example model.

/// Automotive turn-indicator controller with emergency flashing.
pub const TURN_INDICATOR: &str = include_str!("../corpus/turn_indicator.mbt");
