//! The JSON configuration shared by the CLI and the session service.
//!
//! Every section has defaults, so `{}` is a complete config; unknown keys
//! are rejected with the path of the offending field.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bias::BiasGains;
use crate::error::{Error, Result};
use crate::human::{GazeCue, GazeMap, ModelHumanConfig};
use crate::observer::{ObserverParams, Workspace};
use crate::opinion::{validate_dissensus, Adjacency, AgentParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSettings {
    /// Control and observation period (s).
    pub dt: f64,
    /// Countdown before each trial (s); not simulated, only announced.
    pub countdown: f64,
    /// Trials still running after this long end with a forced commit.
    pub trial_cap: f64,
    pub c_max: u32,
    /// Pause before the arm reverses (s).
    pub pause: f64,
    pub arm_speed: f64,
    /// A human sign change counts as a switch once it persists this long.
    pub switch_persistence: f64,
    /// Replacement gaze cues for trials 4 to 8.
    pub gaze_schedule: Option<Vec<GazeCue>>,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self {
            dt: 0.01,
            countdown: 1.0,
            trial_cap: 15.0,
            c_max: 3,
            pause: 0.1,
            arm_speed: 300.0,
            switch_persistence: 0.1,
            gaze_schedule: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub resolution: usize,
    /// The grid covers `[-range, range]` on both axes.
    pub range: f64,
    pub t_final: f64,
    pub dt: f64,
    /// Initial opinions; defaults to the unbiased dissensus equilibrium.
    pub z0: Option<[f64; 2]>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            resolution: 121,
            range: 6.0,
            t_final: 50.0,
            dt: 0.01,
            z0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabConfig {
    pub robot: AgentParams,
    pub human: AgentParams,
    pub gains: BiasGains,
    pub observer: ObserverParams,
    pub workspace: Workspace,
    pub protocol: ProtocolSettings,
    pub gaze_map: GazeMap,
    pub model_human: ModelHumanConfig,
    pub sweep: SweepSettings,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            robot: AgentParams::EXPERIMENT,
            human: AgentParams::EXPERIMENT,
            gains: BiasGains::default(),
            observer: ObserverParams::default(),
            workspace: Workspace::default(),
            protocol: ProtocolSettings::default(),
            gaze_map: GazeMap::default(),
            model_human: ModelHumanConfig::default(),
            sweep: SweepSettings::default(),
        }
    }
}

/// Largest eye rotation the gaze hardware allows in either axis.
pub const GAZE_LIMIT: f64 = FRAC_PI_2;

impl LabConfig {
    pub fn adjacency(&self) -> Adjacency {
        Adjacency::mutual()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: LabConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.human.validate()?;
        validate_dissensus(&self.robot, &self.adjacency())?;
        self.gains.validate(&self.robot)?;
        self.observer.validate()?;
        self.workspace.validate()?;
        self.gaze_map.validate()?;
        self.model_human.validate()?;
        let p = &self.protocol;
        if !(p.dt > 0.0 && p.dt.is_finite()) {
            return Err(Error::Config(format!("protocol.dt must be positive, got {}", p.dt)));
        }
        if !(p.trial_cap > p.dt) || !(p.countdown >= 0.0) || !(p.pause >= 0.0) {
            return Err(Error::Config("protocol timings must be non-negative with trial_cap > dt".into()));
        }
        if !(p.arm_speed > 0.0 && p.arm_speed.is_finite()) {
            return Err(Error::Config(format!("protocol.arm_speed must be positive, got {}", p.arm_speed)));
        }
        if p.c_max == 0 {
            return Err(Error::Config("protocol.c_max must be at least 1".into()));
        }
        if !(p.switch_persistence >= 0.0) {
            return Err(Error::Config("protocol.switch_persistence must be non-negative".into()));
        }
        if let Some(cues) = &p.gaze_schedule {
            if cues.len() != 5 {
                return Err(Error::Config(format!(
                    "protocol.gaze_schedule needs 5 cues (trials 4-8), got {}",
                    cues.len()
                )));
            }
            for (i, c) in cues.iter().enumerate() {
                validate_gaze(c).map_err(|e| Error::Config(format!("protocol.gaze_schedule[{i}]: {e}")))?;
            }
        }
        let s = &self.sweep;
        if s.resolution < 25 || !(s.range > 0.0) || !(s.t_final > 0.0) || !(s.dt > 0.0) {
            return Err(Error::Config(
                "sweep needs resolution >= 25 and positive range, t_final and dt".into(),
            ));
        }
        Ok(())
    }
}

pub fn validate_gaze(c: &GazeCue) -> Result<()> {
    if !(c.yaw.abs() <= GAZE_LIMIT && c.pitch.abs() <= GAZE_LIMIT) {
        return Err(Error::Config(format!(
            "gaze angles ({}, {}) exceed the +-{GAZE_LIMIT:.4} rad eye range",
            c.yaw, c.pitch
        )));
    }
    if c.target.is_none() != (c.level == crate::human::GazeLevel::Neutral) {
        return Err(Error::Config("only the neutral cue may omit a target".into()));
    }
    Ok(())
}
