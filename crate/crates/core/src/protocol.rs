//! The eight-trial session: per-trial configuration, the tick loop that
//! wires observer, controller and arm together, scoring and outcomes.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{
    advance_arm, commit_nearest, decide_action, detect_press, update_debouncer, Action, ArmState,
    Debounce, Debouncer,
};
use crate::bias::{rk4_scalar, BiasController};
use crate::config::LabConfig;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::human::{GazeCue, GazeLevel, HumanAgent, RobotView};
use crate::observer::Observer;
use crate::opinion::{check_bounded, rate_unchecked, OpinionState};
use crate::{sgn, Choice};

pub const SCHEMA_VERSION: u32 = 1;
pub const TRIALS: usize = 8;
pub const MIN_TOTAL: i32 = -8;
pub const MAX_TOTAL: i32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dissensus,
    BiasConsensus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub match_points: i32,
    pub mismatch_points: i32,
    pub clicker_target: i64,
    pub clicker_points: i32,
    pub violation_penalty: i32,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self {
            match_points: 1,
            mismatch_points: -1,
            clicker_target: 10,
            clicker_points: 1,
            violation_penalty: -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub index: usize,
    pub mode: Mode,
    pub option: Option<Choice>,
    pub gaze: GazeCue,
    pub countdown: f64,
    pub rules: RuleSet,
}

/// Gaze cues for trials 4 to 8.
pub fn default_gaze_schedule() -> [GazeCue; 5] {
    let cue = |level, target, yaw, pitch| GazeCue {
        level,
        target: Some(target),
        yaw,
        pitch,
    };
    [
        cue(GazeLevel::Minimal, Choice::Blue, -0.47, 0.31),
        cue(GazeLevel::Low, Choice::Red, 0.53, -0.53),
        cue(GazeLevel::Moderate, Choice::Red, 0.62, -0.62),
        cue(GazeLevel::Significant, Choice::Blue, -0.72, 0.72),
        cue(GazeLevel::Extreme, Choice::Red, 1.09, -0.94),
    ]
}

pub fn trial_config(index: usize) -> Result<TrialConfig> {
    trial_config_with(index, &default_gaze_schedule(), 1.0)
}

/// Trials 1-3 hold the robot in dissensus with neutral eyes; trials 4-8 steer
/// toward the option the eyes point at.
pub fn trial_config_with(index: usize, schedule: &[GazeCue], countdown: f64) -> Result<TrialConfig> {
    if !(1..=TRIALS).contains(&index) {
        return Err(Error::Argument(format!("trial index must be 1..=8, got {index}")));
    }
    let (mode, gaze) = if index <= 3 {
        (Mode::Dissensus, GazeCue::NEUTRAL)
    } else {
        let cue = *schedule
            .get(index - 4)
            .ok_or_else(|| Error::Argument(format!("no gaze cue for trial {index}")))?;
        (Mode::BiasConsensus, cue)
    };
    let option = match mode {
        Mode::Dissensus => None,
        Mode::BiasConsensus => Some(gaze.target.ok_or_else(|| {
            Error::Config(format!("trial {index} steers toward the cue but the cue has no target"))
        })?),
    };
    Ok(TrialConfig {
        index,
        mode,
        option,
        gaze,
        countdown,
        rules: RuleSet::default(),
    })
}

pub fn session_schedule(lab: &LabConfig) -> Result<Vec<TrialConfig>> {
    let default = default_gaze_schedule();
    let cues: &[GazeCue] = lab.protocol.gaze_schedule.as_deref().unwrap_or(&default);
    (1..=TRIALS)
        .map(|i| trial_config_with(i, cues, lab.protocol.countdown))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    C,
    CH,
    D,
    DH,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::C, Outcome::CH, Outcome::D, Outcome::DH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_consensus(self) -> bool {
        matches!(self, Outcome::C | Outcome::CH)
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    HumanPress,
    Timeout,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub human: Point,
    pub z_hat: f64,
    /// Internal human opinion, when the human is a model.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub z_h: Option<f64>,
    pub z_r: f64,
    pub b_r: f64,
    pub b_rate: f64,
    pub arm: Point,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: TrialConfig,
    pub samples: Vec<Sample>,
    pub human_press: Option<Choice>,
    pub robot_press: Choice,
    pub robot_pressed_at: Option<f64>,
    pub end: EndReason,
    pub duration: f64,
    pub human_switch_count: u32,
    pub switched_after_commit: bool,
    pub commit_crossing_t: Option<f64>,
    pub bias_frozen_at: Option<f64>,
    #[serde(default)]
    pub clicker: Option<i64>,
    pub score_delta: i32,
    pub outcome: Outcome,
    pub violation: bool,
}

impl TrialRecord {
    pub fn final_bias(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.b_r)
    }
}

/// Counts persistent sign changes of the observed opinion. A change counts
/// once the new sign has held for `persistence` seconds; it is "after
/// commit" when it began at or after the commit-line crossing.
pub fn detect_switch(series: &[(f64, f64)], commit_crossing_t: Option<f64>, persistence: f64) -> Result<(u32, bool)> {
    if series.is_empty() {
        return Err(Error::Argument("empty opinion series".into()));
    }
    let mut committed = 0.0;
    let mut candidate: Option<(f64, f64)> = None;
    let (mut count, mut after) = (0u32, false);
    for &(t, z) in series {
        let s = sgn(z);
        if s == 0.0 {
            continue;
        }
        if committed == 0.0 {
            committed = s;
            continue;
        }
        if s == committed {
            candidate = None;
            continue;
        }
        let start = match candidate {
            Some((cs, ts)) if cs == s => ts,
            _ => {
                candidate = Some((s, t));
                t
            }
        };
        if t - start >= persistence - 1e-9 {
            count += 1;
            after |= commit_crossing_t.is_some_and(|c| start >= c);
            committed = s;
            candidate = None;
        }
    }
    Ok((count, after))
}

/// Outcome class and whether the switch rule was broken (more than one
/// switch is classified by final agreement and flagged).
pub fn classify_outcome(r: &TrialRecord) -> (Outcome, bool) {
    let agree = r.human_press == Some(r.robot_press);
    let outcome = match (r.human_switch_count, agree) {
        (0, true) => Outcome::C,
        (0, false) => Outcome::D,
        (_, true) => Outcome::CH,
        (_, false) => Outcome::DH,
    };
    (outcome, r.human_switch_count > 1)
}

pub fn score_trial(r: &TrialRecord) -> Result<i32> {
    let rules = &r.config.rules;
    let Some(human) = r.human_press else {
        return Err(Error::State("trial has no human press".into()));
    };
    let mut score = if human == r.robot_press {
        rules.match_points
    } else {
        rules.mismatch_points
    };
    if let Some(n) = r.clicker {
        score += if n == rules.clicker_target {
            rules.clicker_points
        } else {
            -rules.clicker_points
        };
    }
    if r.switched_after_commit || r.human_switch_count > 1 {
        score += rules.violation_penalty;
    }
    Ok(score)
}

/// Session totals are reported within the announced range.
pub fn clamp_total(raw: i32) -> i32 {
    raw.clamp(MIN_TOTAL, MAX_TOTAL)
}

/// Per-tick summary for live rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickInfo {
    pub t: f64,
    pub arm: Point,
    pub action: Action,
    pub z_r: f64,
    pub z_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tick {
    Running(TickInfo),
    Finished(Box<TrialRecord>),
}

/// Steps one trial at the control rate. Drivers feed the hand position each
/// tick; the runner owns all robot-side state.
#[derive(Debug, Clone)]
pub struct TrialRunner {
    pub config: TrialConfig,
    lab: LabConfig,
    observer: Observer,
    debouncer: Debouncer,
    arm: ArmState,
    state: OpinionState,
    controller: Option<BiasController>,
    samples: Vec<Sample>,
    last_z_hat: f64,
    robot_pressed_at: Option<f64>,
    bias_frozen_at: Option<f64>,
    clicker: Option<i64>,
    tick: u64,
    done: bool,
}

impl TrialRunner {
    pub fn new(config: TrialConfig, lab: &LabConfig) -> Result<Self> {
        let controller = match config.mode {
            Mode::Dissensus => None,
            Mode::BiasConsensus => {
                let option = config
                    .option
                    .ok_or_else(|| Error::Config("consensus trial without a target option".into()))?;
                Some(BiasController::new(option, lab.gains))
            }
        };
        Ok(Self {
            config,
            observer: Observer::new(lab.observer, lab.workspace),
            debouncer: Debouncer::new(lab.protocol.c_max)?,
            arm: ArmState::new(lab.workspace.robot_home, lab.protocol.arm_speed)?,
            state: OpinionState::default(),
            controller,
            samples: Vec::new(),
            last_z_hat: 0.0,
            robot_pressed_at: None,
            bias_frozen_at: None,
            clicker: None,
            tick: 0,
            done: false,
            lab: lab.clone(),
        })
    }

    /// Time of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.lab.protocol.dt
    }

    pub fn dt(&self) -> f64 {
        self.lab.protocol.dt
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn set_clicker(&mut self, n: i64) {
        self.clicker = Some(n);
    }

    pub fn robot_view(&self) -> RobotView {
        RobotView {
            t: self.time(),
            z_r: self.state.z_r,
            action: self.arm.action,
            direction: self.arm.visible_direction(),
            arm_pos: self.arm.pos,
        }
    }

    pub fn tick(&mut self, human: Point) -> Result<Tick> {
        self.tick_with(human, None)
    }

    /// One control period. The human press is checked before the robot moves.
    pub fn tick_with(&mut self, human: Point, z_h: Option<f64>) -> Result<Tick> {
        if self.done {
            return Err(Error::State("trial already finished".into()));
        }
        let t = self.time();
        let dt = self.lab.protocol.dt;
        let frame = self.observer.observe(t, human)?;
        let z_hat = frame.z_hat;
        self.last_z_hat = z_hat;

        if let Some(c) = detect_press(human, &self.lab.workspace) {
            self.push_sample(t, human, z_hat, z_h, 0.0);
            return Ok(Tick::Finished(Box::new(self.finish(Some(c), EndReason::HumanPress)?)));
        }

        let robot = &self.lab.robot;
        let a_rh = self.lab.adjacency().robot_edge();
        let b_rate;
        match &mut self.controller {
            None => {
                let z = rk4_scalar(self.state.z_r, |z| rate_unchecked(z, z_hat, robot, a_rh, 0.0), dt);
                check_bounded(t, &[z])?;
                self.state.z_r = z;
                self.state.t = t + dt;
                b_rate = 0.0;
            }
            Some(c) => {
                self.state = c.step(&self.state, robot, a_rh, z_hat, dt)?;
                if c.frozen && self.bias_frozen_at.is_none() {
                    self.bias_frozen_at = Some(t);
                }
                b_rate = c.current_rate(&self.state, z_hat);
            }
        }

        if self.arm.pressed().is_none() {
            let s = sgn(self.state.z_r);
            if s != 0.0 {
                let ev = update_debouncer(&mut self.debouncer, s as i8)?;
                if ev != Debounce::Hold {
                    self.arm = decide_action(&self.arm, ev, self.lab.protocol.pause)?;
                }
            }
            self.arm = advance_arm(&self.arm, dt, &self.lab.workspace)?;
            if self.arm.pressed().is_some() {
                self.robot_pressed_at = Some(t + dt);
            }
        }
        self.push_sample(t, human, z_hat, z_h, b_rate);
        self.tick += 1;

        if self.time() >= self.lab.protocol.trial_cap - 1e-9 {
            let forced = commit_nearest(human, &self.lab.workspace);
            return Ok(Tick::Finished(Box::new(self.finish(Some(forced), EndReason::Timeout)?)));
        }
        Ok(Tick::Running(TickInfo {
            t,
            arm: self.arm.pos,
            action: self.arm.action,
            z_r: self.state.z_r,
            z_hat,
        }))
    }

    fn push_sample(&mut self, t: f64, human: Point, z_hat: f64, z_h: Option<f64>, b_rate: f64) {
        self.samples.push(Sample {
            t,
            human,
            z_hat,
            z_h,
            z_r: self.state.z_r,
            b_r: self.state.b_r,
            b_rate,
            arm: self.arm.pos,
            action: self.arm.action,
        });
    }

    /// Ends the trial early, keeping what was recorded.
    pub fn abort(&mut self) -> Result<TrialRecord> {
        self.end_early(EndReason::Aborted)
    }

    /// Ends the trial as if the time cap had been reached, committing the
    /// hand to its nearest buzzer.
    pub fn force_timeout(&mut self) -> Result<TrialRecord> {
        self.end_early(EndReason::Timeout)
    }

    fn end_early(&mut self, end: EndReason) -> Result<TrialRecord> {
        if self.done {
            return Err(Error::State("trial already finished".into()));
        }
        let human = self.samples.last().map(|s| s.human);
        let press = human.map(|p| commit_nearest(p, &self.lab.workspace));
        self.finish(press, end)
    }

    fn finish(&mut self, human_press: Option<Choice>, end: EndReason) -> Result<TrialRecord> {
        self.done = true;
        let ws = &self.lab.workspace;
        let robot_press = self
            .arm
            .pressed()
            .unwrap_or_else(|| commit_nearest(self.arm.pos, ws));
        let commit_crossing_t = self
            .samples
            .iter()
            .find(|s| s.human.y <= ws.commit_line_y)
            .map(|s| s.t);
        let series: Vec<(f64, f64)> = self.samples.iter().map(|s| (s.t, s.z_hat)).collect();
        let (count, after) = if series.is_empty() {
            (0, false)
        } else {
            detect_switch(&series, commit_crossing_t, self.lab.protocol.switch_persistence)?
        };
        let mut record = TrialRecord {
            config: self.config,
            samples: std::mem::take(&mut self.samples),
            human_press,
            robot_press,
            robot_pressed_at: self.robot_pressed_at,
            end,
            duration: self.time(),
            human_switch_count: count,
            switched_after_commit: after,
            commit_crossing_t,
            bias_frozen_at: self.bias_frozen_at,
            clicker: self.clicker,
            score_delta: 0,
            outcome: Outcome::D,
            violation: false,
        };
        let (outcome, violation) = classify_outcome(&record);
        record.outcome = outcome;
        record.violation = violation || record.switched_after_commit;
        record.score_delta = if human_press.is_some() {
            score_trial(&record)?
        } else {
            0
        };
        Ok(record)
    }
}

/// Runs one trial to completion against a synthetic human.
pub fn run_trial(config: TrialConfig, human: &mut dyn HumanAgent, lab: &LabConfig) -> Result<TrialRecord> {
    human.begin_trial(&config, &lab.workspace)?;
    let mut runner = TrialRunner::new(config, lab)?;
    loop {
        let t = runner.time();
        let view = runner.robot_view();
        let p = human
            .next_position(t, runner.dt(), &view)
            .map_err(|e| Error::AgentFault(format!("trial {}: {e}", config.index)))?;
        if !p.is_finite() {
            return Err(Error::AgentFault(format!("trial {}: non-finite hand position", config.index)));
        }
        if let Tick::Finished(rec) = runner.tick_with(p, human.opinion())? {
            return Ok(*rec);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub participant_id: usize,
    pub trials: Vec<TrialRecord>,
    pub total_score: i32,
    /// Sum of trial scores before clamping to the reported range.
    pub raw_score: i32,
    pub aborted: bool,
}

impl SessionRecord {
    pub fn from_trials(participant_id: usize, trials: Vec<TrialRecord>, aborted: bool) -> Self {
        let raw: i32 = trials.iter().map(|t| t.score_delta).sum();
        Self {
            participant_id,
            trials,
            total_score: clamp_total(raw),
            raw_score: raw,
            aborted,
        }
    }

    pub fn outcomes(&self) -> Vec<Outcome> {
        self.trials.iter().map(|t| t.outcome).collect()
    }
}

pub fn run_participant(id: usize, human: &mut dyn HumanAgent, lab: &LabConfig) -> Result<SessionRecord> {
    let trials = session_schedule(lab)?
        .into_iter()
        .map(|cfg| run_trial(cfg, human, lab))
        .collect::<Result<Vec<_>>>()?;
    Ok(SessionRecord::from_trials(id, trials, false))
}

/// Independent sessions for `n` participants, in parallel. `make_human`
/// receives the participant index and the cohort seed.
pub fn run_session<F>(make_human: F, n: usize, seed: u64, lab: &LabConfig) -> Result<Vec<SessionRecord>>
where
    F: Fn(usize, u64) -> Result<Box<dyn HumanAgent>> + Sync,
{
    if n == 0 {
        return Err(Error::Argument("at least one participant is required".into()));
    }
    lab.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut human = make_human(i, seed)?;
            run_participant(i, human.as_mut(), lab)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrialLine {
    schema: u32,
    participant: usize,
    trial: TrialRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub schema: u32,
    pub participant: usize,
    pub total_score: i32,
    pub raw_score: i32,
    pub outcomes: Vec<Outcome>,
    pub aborted: bool,
}

impl SessionSummary {
    pub fn of(s: &SessionRecord) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            participant: s.participant_id,
            total_score: s.total_score,
            raw_score: s.raw_score,
            outcomes: s.outcomes(),
            aborted: s.aborted,
        }
    }
}

pub fn log_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.ndjson")),
        dir.join(format!("{name}.summary.json")),
    )
}

/// Writes one NDJSON line per trial plus a summary, both fsync'd.
pub fn write_session_log(dir: &Path, name: &str, s: &SessionRecord) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let (log, summary) = log_paths(dir, name);
    let mut f = File::create(&log)?;
    for t in &s.trials {
        let line = TrialLine {
            schema: SCHEMA_VERSION,
            participant: s.participant_id,
            trial: t.clone(),
        };
        let text = serde_json::to_string(&line).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(f, "{text}")?;
    }
    f.sync_all()?;
    let mut g = File::create(&summary)?;
    let text = serde_json::to_string_pretty(&SessionSummary::of(s)).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(g, "{text}")?;
    g.sync_all()?;
    Ok((log, summary))
}

/// Sessions read back from a log directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLogs {
    pub sessions: Vec<SessionRecord>,
    pub skipped_lines: usize,
}

/// Reads every `*.ndjson` log in `dir` (sorted by name). Malformed lines are
/// counted and skipped; aborted sessions are kept and flagged.
pub fn read_session_logs(dir: &Path) -> Result<LoadedLogs> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    paths.sort();
    let mut sessions = Vec::new();
    let mut skipped = 0;
    for path in paths {
        let mut trials = Vec::new();
        let mut participant = None;
        for line in BufReader::new(File::open(&path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TrialLine>(&line) {
                Ok(l) if l.schema == SCHEMA_VERSION => {
                    participant.get_or_insert(l.participant);
                    trials.push(l.trial);
                }
                _ => skipped += 1,
            }
        }
        let Some(id) = participant else { continue };
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let summary_path = path.with_file_name(format!("{stem}.summary.json"));
        let aborted = fs::read_to_string(&summary_path)
            .ok()
            .and_then(|s| serde_json::from_str::<SessionSummary>(&s).ok())
            .map_or(trials.len() < TRIALS, |s| s.aborted);
        sessions.push(SessionRecord::from_trials(id, trials, aborted));
    }
    Ok(LoadedLogs {
        sessions,
        skipped_lines: skipped,
    })
}
