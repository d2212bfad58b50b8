//! Simulation engine for bias-controlled nonlinear opinion dynamics between a
//! robot and a human partner.
//!
//! The crate is organised bottom-up:
//!
//! * [`opinion`]: the coupled ODE pair, its Jacobian and bifurcation thresholds.
//! * [`bias`]: the dynamic robot-bias law that steers toward consensus.
//! * [`observer`]: hand/cursor motion to an observed human opinion.
//! * [`behavior`]: the robot arm's debounced action state machine.
//! * [`human`]: scripted and model-based synthetic participants.
//! * [`protocol`]: the eight-trial session, scoring and outcome classes.
//! * [`analysis`]: bias sweeps, nullclines and equilibria.
//! * [`stats`]: outcome tables and hypothesis tests.

pub mod analysis;
pub mod behavior;
pub mod bias;
pub mod config;
pub mod error;
pub mod geometry;
pub mod human;
pub mod observer;
pub mod opinion;
pub mod protocol;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{Point, Rect};

use serde::{Deserialize, Serialize};

/// One of the two buzzers. Red is the positive opinion direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Red,
    Blue,
}

impl Choice {
    pub fn sign(self) -> f64 {
        match self {
            Choice::Red => 1.0,
            Choice::Blue => -1.0,
        }
    }

    /// Maps a strictly signed value to a choice; zero has no choice.
    pub fn from_sign(v: f64) -> Option<Choice> {
        if v > 0.0 {
            Some(Choice::Red)
        } else if v < 0.0 {
            Some(Choice::Blue)
        } else {
            None
        }
    }

    pub fn opposite(self) -> Choice {
        match self {
            Choice::Red => Choice::Blue,
            Choice::Blue => Choice::Red,
        }
    }
}

impl std::fmt::Display for Choice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Choice::Red => "red",
            Choice::Blue => "blue",
        })
    }
}

/// `sgn` with `sgn(0) = 0`, unlike `f64::signum`.
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
