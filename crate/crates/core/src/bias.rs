//! Dynamic robot bias that pulls a dissensus pair into consensus on a
//! designated option.
//!
//! ```text
//! db_r/dt = sigma z_r sgn(z_h) + beta max(0, b* - |b_r|),   beta = -K sigma
//! ```
//!
//! The update runs only while the robot and the observed human disagree. It
//! stops for the rest of the trial on the first tick where they agree and the
//! current bias alone keeps the robot on the agreeing side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opinion::{check_bounded, rate_unchecked, AgentParams, OpinionState};
use crate::{sgn, Choice};

/// Bias magnitudes are confined to the analysed sweep range.
pub const BIAS_LIMIT: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasGains {
    pub sigma_mag: f64,
    pub k: f64,
    /// Bias magnitude the threshold term drives toward.
    pub b_star: f64,
}

impl Default for BiasGains {
    /// `b_star = u + 1`: with `b_star = u` the bias approaches `u` from below
    /// and never overcomes a saturated opposing human.
    fn default() -> Self {
        Self {
            sigma_mag: 0.1,
            k: 16.0,
            b_star: AgentParams::EXPERIMENT.u + 1.0,
        }
    }
}

impl BiasGains {
    pub fn validate(&self, robot: &AgentParams) -> Result<()> {
        if ![self.sigma_mag, self.k, self.b_star].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("bias gains"));
        }
        if self.sigma_mag < 0.0 || self.k <= 0.0 {
            return Err(Error::Config(format!(
                "bias gains need sigma_mag >= 0 and K > 0, got {} and {}",
                self.sigma_mag, self.k
            )));
        }
        if self.b_star < robot.u {
            return Err(Error::Config(format!(
                "b_star = {} is below the robot attention u = {}",
                self.b_star, robot.u
            )));
        }
        Ok(())
    }

    /// `beta = -K sigma` for the signed `sigma` of `option`.
    pub fn beta(&self, option: Choice) -> f64 {
        -self.k * signed_sigma(option, self)
    }
}

/// Red pulls with `-sigma_mag`, blue with `+sigma_mag`.
pub fn signed_sigma(option: Choice, g: &BiasGains) -> f64 {
    match option {
        Choice::Red => -g.sigma_mag,
        Choice::Blue => g.sigma_mag,
    }
}

pub fn bias_rate(b_r: f64, z_r: f64, sgn_zh: f64, option: Choice, g: &BiasGains) -> f64 {
    let sigma = signed_sigma(option, g);
    let beta = -g.k * sigma;
    sigma * z_r * sgn_zh + beta * (g.b_star - b_r.abs()).max(0.0)
}

/// The same law written with the gain factored out.
pub fn bias_rate_factored(b_r: f64, z_r: f64, sgn_zh: f64, option: Choice, g: &BiasGains) -> f64 {
    let sigma = signed_sigma(option, g);
    sigma * (z_r * sgn_zh - g.k * (g.b_star - b_r.abs()).max(0.0))
}

/// Per-trial controller: the target option and whether the bias is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasController {
    pub option: Choice,
    pub gains: BiasGains,
    pub frozen: bool,
}

impl BiasController {
    pub fn new(option: Choice, gains: BiasGains) -> Self {
        Self {
            option,
            gains,
            frozen: false,
        }
    }

    /// Advances the robot opinion and, until consensus is first seen, the
    /// bias. The human opinion is held at `observed_zh` for the step.
    pub fn step(
        &mut self,
        state: &OpinionState,
        p: &AgentParams,
        a_rh: f64,
        observed_zh: f64,
        dt: f64,
    ) -> Result<OpinionState> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Argument(format!("dt must be positive, got {dt}")));
        }
        if !state.is_finite() || !observed_zh.is_finite() {
            return Err(Error::Domain("consensus step input"));
        }
        if self.holds_consensus(state, p, a_rh, observed_zh) {
            self.frozen = true;
        }
        let zh = observed_zh;
        let (z_r, b_r) = if self.frozen {
            (rk4_scalar(state.z_r, |z| rate_unchecked(z, zh, p, a_rh, state.b_r), dt), state.b_r)
        } else {
            let s = sgn(zh);
            let f = |z: f64, b: f64| {
                (
                    rate_unchecked(z, zh, p, a_rh, b),
                    bias_rate(b, z, s, self.option, &self.gains),
                )
            };
            let (k1z, k1b) = f(state.z_r, state.b_r);
            let (k2z, k2b) = f(state.z_r + 0.5 * dt * k1z, state.b_r + 0.5 * dt * k1b);
            let (k3z, k3b) = f(state.z_r + 0.5 * dt * k2z, state.b_r + 0.5 * dt * k2b);
            let (k4z, k4b) = f(state.z_r + dt * k3z, state.b_r + dt * k3b);
            let z = state.z_r + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
            let b = state.b_r + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
            (z, b.clamp(-BIAS_LIMIT, BIAS_LIMIT))
        };
        let next = OpinionState {
            z_r,
            b_r,
            t: state.t + dt,
            ..*state
        };
        check_bounded(next.t, &[next.z_r])?;
        Ok(next)
    }

    /// Agreement that the bias can keep: the robot's opinion rate at
    /// `z_r = 0` already points to the observed side, so with this bias held
    /// fixed the robot cannot drift back across zero. A bare sign match is not
    /// enough: at trial start the bias nudges `z_r` off zero before the human
    /// has moved, and freezing there would lock in a negligible bias.
    pub fn holds_consensus(&self, state: &OpinionState, p: &AgentParams, a_rh: f64, observed_zh: f64) -> bool {
        state.z_r * observed_zh > 0.0 && rate_unchecked(0.0, observed_zh, p, a_rh, state.b_r) * observed_zh > 0.0
    }

    /// Rate the bias is currently changing at (zero once frozen).
    pub fn current_rate(&self, state: &OpinionState, observed_zh: f64) -> f64 {
        if self.frozen {
            0.0
        } else {
            bias_rate(state.b_r, state.z_r, sgn(observed_zh), self.option, &self.gains)
        }
    }
}

/// One RK4 step of a scalar autonomous ODE.
pub(crate) fn rk4_scalar(z: f64, f: impl Fn(f64) -> f64, dt: f64) -> f64 {
    let k1 = f(z);
    let k2 = f(z + 0.5 * dt * k1);
    let k3 = f(z + 0.5 * dt * k2);
    let k4 = f(z + dt * k3);
    z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}
