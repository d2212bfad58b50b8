//! Synthetic participants: scripted trajectories and a model human whose
//! opinion follows the same dynamics as the robot's, nudged by gaze cues.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::Action;
use crate::bias::rk4_scalar;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::observer::Workspace;
use crate::opinion::{check_bounded, rate_unchecked, AgentParams};
use crate::protocol::TrialConfig;
use crate::{sgn, Choice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GazeLevel {
    Neutral,
    Minimal,
    Low,
    Moderate,
    Significant,
    Extreme,
}

impl GazeLevel {
    pub const ALL: [GazeLevel; 6] = [
        GazeLevel::Neutral,
        GazeLevel::Minimal,
        GazeLevel::Low,
        GazeLevel::Moderate,
        GazeLevel::Significant,
        GazeLevel::Extreme,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeCue {
    pub level: GazeLevel,
    /// Option the eyes point at; `None` for the neutral pose.
    pub target: Option<Choice>,
    pub yaw: f64,
    pub pitch: f64,
}

impl GazeCue {
    pub const NEUTRAL: GazeCue = GazeCue {
        level: GazeLevel::Neutral,
        target: None,
        yaw: 0.0,
        pitch: 0.0,
    };
}

/// Bias multipliers per gaze level, in units of the human attention `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GazeMap {
    pub neutral: f64,
    pub minimal: f64,
    pub low: f64,
    pub moderate: f64,
    pub significant: f64,
    pub extreme: f64,
}

impl Default for GazeMap {
    /// Minimal sits just under the consensus threshold, Low and above clear it.
    fn default() -> Self {
        Self {
            neutral: 0.0,
            minimal: 0.9,
            low: 1.1,
            moderate: 1.5,
            significant: 2.0,
            extreme: 2.5,
        }
    }
}

impl GazeMap {
    pub fn multiplier(&self, level: GazeLevel) -> f64 {
        match level {
            GazeLevel::Neutral => self.neutral,
            GazeLevel::Minimal => self.minimal,
            GazeLevel::Low => self.low,
            GazeLevel::Moderate => self.moderate,
            GazeLevel::Significant => self.significant,
            GazeLevel::Extreme => self.extreme,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m: Vec<f64> = GazeLevel::ALL.iter().map(|&l| self.multiplier(l)).collect();
        if !m.iter().all(|v| v.is_finite() && *v >= 0.0) || m.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(
                "gaze multipliers must be non-negative and non-decreasing".into(),
            ));
        }
        Ok(())
    }
}

pub fn gaze_to_bias(cue: &GazeCue, u: f64, map: &GazeMap) -> f64 {
    match cue.target {
        Some(c) => c.sign() * map.multiplier(cue.level) * u,
        None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptKind {
    Direct,
    MidSwitch,
    MultiSwitch,
    EarlyStrategicSwitch,
}

impl ScriptKind {
    pub const ALL: [ScriptKind; 4] = [
        ScriptKind::Direct,
        ScriptKind::MidSwitch,
        ScriptKind::MultiSwitch,
        ScriptKind::EarlyStrategicSwitch,
    ];

    /// Switch times used when a script does not give its own.
    pub fn default_switch_times(self) -> Vec<f64> {
        match self {
            ScriptKind::Direct => vec![],
            ScriptKind::MidSwitch => vec![1.2],
            ScriptKind::MultiSwitch => vec![0.5, 0.9, 1.3],
            ScriptKind::EarlyStrategicSwitch => vec![0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanScript {
    pub kind: ScriptKind,
    pub initial_target: Choice,
    pub switch_times: Vec<f64>,
    pub speed: f64,
    /// Lag between a scripted switch time and the change of heading.
    #[serde(default = "default_script_delay")]
    pub reaction_delay: f64,
}

fn default_script_delay() -> f64 {
    0.05
}

impl HumanScript {
    pub fn archetype(kind: ScriptKind, initial_target: Choice) -> Self {
        Self {
            kind,
            initial_target,
            switch_times: kind.default_switch_times(),
            speed: 250.0,
            reaction_delay: default_script_delay(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return Err(Error::Config(format!("script speed must be positive, got {}", self.speed)));
        }
        if !(self.reaction_delay >= 0.0) {
            return Err(Error::Config("script reaction delay must be non-negative".into()));
        }
        if self.switch_times.iter().any(|t| !(t.is_finite() && *t >= 0.0))
            || self.switch_times.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(
                "switch times must be non-negative and strictly increasing".into(),
            ));
        }
        let expected = match self.kind {
            ScriptKind::Direct => self.switch_times.is_empty(),
            ScriptKind::MidSwitch | ScriptKind::EarlyStrategicSwitch => self.switch_times.len() == 1,
            ScriptKind::MultiSwitch => self.switch_times.len() >= 2,
        };
        if !expected {
            return Err(Error::Config(format!(
                "{:?} script has {} switch times",
                self.kind,
                self.switch_times.len()
            )));
        }
        Ok(())
    }

    /// Target after all switches.
    pub fn final_target(&self) -> Choice {
        if self.switch_times.len() % 2 == 0 {
            self.initial_target
        } else {
            self.initial_target.opposite()
        }
    }
}

fn move_toward(p: Point, target: Point, len: f64) -> Point {
    let gap = p.distance(target);
    if gap <= len {
        target
    } else {
        p + (target - p) * (len / gap)
    }
}

/// Position of a scripted hand at time `t`: straight legs at constant speed
/// toward the current target's anchor, retargeting after each switch.
pub fn scripted_position(script: &HumanScript, t: f64, ws: &Workspace) -> Point {
    let mut pos = ws.human_start;
    let mut target = script.initial_target;
    let mut t_prev = 0.0;
    for &s in &script.switch_times {
        let flip = s + script.reaction_delay;
        if flip > t {
            break;
        }
        pos = move_toward(pos, ws.anchor(target), script.speed * (flip - t_prev));
        target = target.opposite();
        t_prev = flip;
    }
    move_toward(pos, ws.anchor(target), script.speed * (t - t_prev).max(0.0))
}

/// What the model human reads of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perception {
    /// The robot's internal opinion. A robot that barely holds its side is
    /// read as barely convinced, which is what lets a sub-threshold bias
    /// win once the robot has come round.
    FullState,
    /// Only the arm's direction, with unit magnitude.
    SignOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelHuman {
    pub params: AgentParams,
    pub z_h: f64,
    pub b_h: f64,
    pub perception: Perception,
}

pub fn model_human_step(h: &ModelHuman, robot_visible: f64, a_hr: f64, dt: f64) -> Result<ModelHuman> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("dt must be positive, got {dt}")));
    }
    if !(h.z_h.is_finite() && h.b_h.is_finite() && robot_visible.is_finite()) {
        return Err(Error::Domain("model human state"));
    }
    let z = rk4_scalar(
        h.z_h,
        |z| rate_unchecked(z, robot_visible, &h.params, a_hr, h.b_h),
        dt,
    );
    check_bounded(0.0, &[z])?;
    Ok(ModelHuman { z_h: z, ..*h })
}

/// One step of a hand driven by an opinion: toward red for positive, blue
/// for negative, at a speed scaled by conviction up to `z_sat`.
pub fn opinion_to_motion(z_h: f64, current: Point, ws: &Workspace, speed: f64, dt: f64, z_sat: f64) -> Point {
    let Some(c) = Choice::from_sign(z_h) else {
        return current;
    };
    let len = speed * dt * (z_h.abs() / z_sat).min(1.0);
    move_toward(current, ws.anchor(c), len)
}

/// The robot as seen by a human agent on one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotView {
    pub t: f64,
    pub z_r: f64,
    pub action: Action,
    pub direction: Option<Choice>,
    pub arm_pos: Point,
}

pub trait HumanAgent: Send {
    fn begin_trial(&mut self, trial: &TrialConfig, ws: &Workspace) -> Result<()>;

    /// Hand position at time `t` of the running trial, one tick of `dt`
    /// after the previous call.
    fn next_position(&mut self, t: f64, dt: f64, robot: &RobotView) -> Result<Point>;

    /// Internal opinion when the agent has one.
    fn opinion(&self) -> Option<f64> {
        None
    }
}

/// Plays a fixed script each trial. With `follow_gaze` the script is
/// re-aimed so that it ends on a cued option.
#[derive(Debug, Clone)]
pub struct ScriptedHuman {
    pub script: HumanScript,
    pub follow_gaze: bool,
    active: HumanScript,
    ws: Workspace,
}

impl ScriptedHuman {
    pub fn new(script: HumanScript, follow_gaze: bool) -> Result<Self> {
        script.validate()?;
        Ok(Self {
            active: script.clone(),
            script,
            follow_gaze,
            ws: Workspace::default(),
        })
    }
}

impl HumanAgent for ScriptedHuman {
    fn begin_trial(&mut self, trial: &TrialConfig, ws: &Workspace) -> Result<()> {
        self.ws = *ws;
        self.active = self.script.clone();
        if let (true, Some(cued)) = (self.follow_gaze, trial.gaze.target) {
            if self.active.final_target() != cued {
                self.active.initial_target = self.active.initial_target.opposite();
            }
        }
        Ok(())
    }

    fn next_position(&mut self, t: f64, _dt: f64, _robot: &RobotView) -> Result<Point> {
        Ok(scripted_position(&self.active, t, &self.ws))
    }
}

/// Population ranges from which each model participant is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelHumanConfig {
    pub perception: Perception,
    pub speed: [f64; 2],
    /// Time from the go cue until the hand starts to move.
    pub reaction_delay: [f64; 2],
    /// Lag with which the robot's arm is perceived.
    pub perception_delay: [f64; 2],
    /// Initial opinion is uniform in `[-z0_max, z0_max]`.
    pub z0_max: f64,
    /// Opinion magnitude that moves the hand at full speed.
    pub z_sat: f64,
    /// Keep heading for the same buzzer once past the commit line.
    pub commit_lock: bool,
}

impl Default for ModelHumanConfig {
    fn default() -> Self {
        Self {
            perception: Perception::FullState,
            speed: [200.0, 300.0],
            reaction_delay: [0.15, 0.45],
            perception_delay: [0.15, 0.35],
            z0_max: 0.5,
            z_sat: 0.02,
            commit_lock: true,
        }
    }
}

impl ModelHumanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("speed", self.speed),
            ("reaction_delay", self.reaction_delay),
            ("perception_delay", self.perception_delay),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] >= 0.0 && r[0] <= r[1]) {
                return Err(Error::Config(format!("model human {name} range must be ordered and non-negative")));
            }
        }
        if !(self.speed[0] > 0.0) {
            return Err(Error::Config("model human speed must be positive".into()));
        }
        if !(self.z_sat > 0.0 && self.z0_max >= 0.0) {
            return Err(Error::Config("model human needs z_sat > 0 and z0_max >= 0".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// A participant whose opinion obeys the coupled dynamics with the robot's
/// arm as the other agent, rendered into hand motion.
#[derive(Debug, Clone)]
pub struct ModelHumanAgent {
    pub state: ModelHuman,
    pub speed: f64,
    pub reaction_delay: f64,
    pub perception_delay: f64,
    cfg: ModelHumanConfig,
    gaze_map: GazeMap,
    a_hr: f64,
    rng: ChaCha8Rng,
    ws: Workspace,
    pos: Point,
    locked: Option<Choice>,
    seen: VecDeque<(f64, f64)>,
}

impl ModelHumanAgent {
    /// Draws participant `index` of a cohort seeded by `seed`.
    pub fn sample(
        params: AgentParams,
        a_hr: f64,
        cfg: ModelHumanConfig,
        gaze_map: GazeMap,
        seed: u64,
        index: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let speed = draw(&mut rng, cfg.speed);
        let reaction_delay = draw(&mut rng, cfg.reaction_delay);
        let perception_delay = draw(&mut rng, cfg.perception_delay);
        Ok(Self {
            state: ModelHuman {
                params,
                z_h: 0.0,
                b_h: 0.0,
                perception: cfg.perception,
            },
            speed,
            reaction_delay,
            perception_delay,
            cfg,
            gaze_map,
            a_hr,
            rng,
            ws: Workspace::default(),
            pos: Point::default(),
            locked: None,
            seen: VecDeque::new(),
        })
    }

    /// The robot signal as perceived `perception_delay` ago.
    fn perceived(&mut self, t: f64) -> f64 {
        let cutoff = t - self.perception_delay;
        while self.seen.len() > 1 && self.seen[1].0 <= cutoff + 1e-12 {
            self.seen.pop_front();
        }
        match self.seen.front() {
            Some(&(ts, v)) if ts <= cutoff + 1e-12 => v,
            _ => 0.0,
        }
    }
}

impl HumanAgent for ModelHumanAgent {
    fn begin_trial(&mut self, trial: &TrialConfig, ws: &Workspace) -> Result<()> {
        self.ws = *ws;
        self.pos = ws.human_start;
        self.locked = None;
        self.seen.clear();
        self.state.z_h = if self.cfg.z0_max > 0.0 {
            self.rng.random_range(-self.cfg.z0_max..=self.cfg.z0_max)
        } else {
            0.0
        };
        self.state.b_h = gaze_to_bias(&trial.gaze, self.state.params.u, &self.gaze_map);
        Ok(())
    }

    fn next_position(&mut self, t: f64, dt: f64, robot: &RobotView) -> Result<Point> {
        let visible = match self.state.perception {
            Perception::FullState => robot.z_r,
            Perception::SignOnly => robot.direction.map_or(0.0, Choice::sign),
        };
        self.seen.push_back((t, visible));
        let v = self.perceived(t);
        // The prior opinion launches the reach; updating starts with movement.
        if t < self.reaction_delay {
            return Ok(self.pos);
        }
        if dt > 0.0 {
            self.state = model_human_step(&self.state, v, self.a_hr, dt)
                .map_err(|e| Error::AgentFault(e.to_string()))?;
        }
        self.pos = match self.locked {
            Some(c) => move_toward(self.pos, self.ws.anchor(c), self.speed * dt),
            None => opinion_to_motion(self.state.z_h, self.pos, &self.ws, self.speed, dt, self.cfg.z_sat),
        };
        if self.cfg.commit_lock && self.locked.is_none() && self.pos.y <= self.ws.commit_line_y {
            self.locked = Choice::from_sign(sgn(self.state.z_h));
        }
        Ok(self.pos)
    }

    fn opinion(&self) -> Option<f64> {
        Some(self.state.z_h)
    }
}
