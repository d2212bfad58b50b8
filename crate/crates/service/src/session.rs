//! Transport-free session state machine. The socket task feeds it client
//! messages and, in live mode, one `step` per control period; everything it
//! says back is returned as a list of messages.

use std::path::PathBuf;

use consensus_lab::config::LabConfig;
use consensus_lab::geometry::Point;
use consensus_lab::protocol::{
    clamp_total, session_schedule, write_session_log, SessionRecord, Tick, TrialConfig, TrialRecord, TrialRunner,
};
use consensus_lab::Error;

use crate::wire::{parse_client, ClientMessage, ErrorCode, ServerMessage};

/// A running trial with no client message for this long is timed out.
pub const INACTIVITY_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Lobby,
    /// Control periods left before the trial starts running.
    Countdown(u64),
    Running,
    Done,
}

pub struct SessionCore {
    id: u64,
    name: Option<String>,
    lab: LabConfig,
    schedule: Vec<TrialConfig>,
    phase: Phase,
    replay: bool,
    runner: Option<TrialRunner>,
    trials: Vec<TrialRecord>,
    cursor: Option<Point>,
    last_cursor_t: f64,
    /// Control periods elapsed since `Ready`; the session clock is `steps * dt`.
    steps: u64,
    last_activity: f64,
    pending_clicker: Option<i64>,
    store: Option<PathBuf>,
    aborted: bool,
    persisted: bool,
}

impl SessionCore {
    pub fn new(id: u64, lab: LabConfig, store: Option<PathBuf>) -> consensus_lab::Result<Self> {
        lab.validate()?;
        let schedule = session_schedule(&lab)?;
        Ok(Self {
            id,
            name: None,
            lab,
            schedule,
            phase: Phase::Lobby,
            replay: false,
            runner: None,
            trials: Vec::new(),
            cursor: None,
            last_cursor_t: f64::NEG_INFINITY,
            steps: 0,
            last_activity: 0.0,
            pending_clicker: None,
            store,
            aborted: false,
            persisted: false,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn schedule(&self) -> &[TrialConfig] {
        &self.schedule
    }

    pub fn dt(&self) -> f64 {
        self.lab.protocol.dt
    }

    pub fn clock(&self) -> f64 {
        self.steps as f64 * self.dt()
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn is_persisted(&self) -> bool {
        self.persisted
    }

    /// Whether the server timer should be stepping this session.
    pub fn is_live(&self) -> bool {
        !self.replay && matches!(self.phase, Phase::Countdown(_) | Phase::Running)
    }

    pub fn log_name(&self) -> String {
        let name: String = self
            .name
            .as_deref()
            .unwrap_or("anonymous")
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .take(40)
            .collect();
        format!("session-{:04}-{name}", self.id)
    }

    pub fn record(&self) -> SessionRecord {
        SessionRecord::from_trials(self.id as usize, self.trials.clone(), self.aborted)
    }

    fn score(&self) -> i32 {
        clamp_total(self.trials.iter().map(|t| t.score_delta).sum())
    }

    pub fn handle_line(&mut self, line: &str) -> Vec<ServerMessage> {
        match parse_client(line) {
            Ok(m) => self.handle(m),
            Err(e) => vec![e],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        self.last_activity = self.clock();
        let bad = |what: &str, phase: Phase| {
            vec![ServerMessage::error(ErrorCode::BadState, format!("{what} not allowed in {phase:?}"))]
        };
        match msg {
            ClientMessage::Hello { name, replay } => {
                if self.phase != Phase::Lobby || self.name.is_some() {
                    return bad("Hello", self.phase);
                }
                self.name = Some(name);
                self.replay = replay;
                Vec::new()
            }
            ClientMessage::Ready => {
                if self.phase != Phase::Lobby {
                    return bad("Ready", self.phase);
                }
                self.begin_countdown()
            }
            ClientMessage::Cursor { t, x, y } => {
                if !matches!(self.phase, Phase::Countdown(_) | Phase::Running) {
                    return bad("Cursor", self.phase);
                }
                if !(t.is_finite() && x.is_finite() && y.is_finite()) {
                    return vec![ServerMessage::error(ErrorCode::Parse, "cursor values must be finite")];
                }
                if t < self.last_cursor_t {
                    return vec![ServerMessage::error(
                        ErrorCode::Parse,
                        format!("cursor time {t} is before the previous {}", self.last_cursor_t),
                    )];
                }
                self.last_cursor_t = t;
                let mut out = Vec::new();
                if self.replay {
                    // ticks up to `t` still see the previous cursor
                    while matches!(self.phase, Phase::Countdown(_) | Phase::Running)
                        && (self.steps + 1) as f64 * self.dt() <= t + 1e-9
                    {
                        out.extend(self.step());
                    }
                }
                self.cursor = Some(Point::new(x, y));
                out
            }
            ClientMessage::ClickerCount { n } => match self.phase {
                Phase::Countdown(_) => {
                    self.pending_clicker = Some(n);
                    Vec::new()
                }
                Phase::Running => {
                    if let Some(r) = &mut self.runner {
                        r.set_clicker(n);
                    }
                    Vec::new()
                }
                p => bad("ClickerCount", p),
            },
            ClientMessage::Quit => self.abort(),
        }
    }

    fn begin_countdown(&mut self) -> Vec<ServerMessage> {
        let cfg = self.schedule[self.trials.len()];
        let steps = (cfg.countdown / self.dt()).round() as u64;
        self.phase = Phase::Countdown(steps);
        vec![ServerMessage::TrialStart {
            index: cfg.index,
            gaze_yaw: cfg.gaze.yaw,
            gaze_pitch: cfg.gaze.pitch,
            countdown_ms: (cfg.countdown * 1000.0).round() as u64,
        }]
    }

    /// Advances the session by one control period.
    pub fn step(&mut self) -> Vec<ServerMessage> {
        match self.phase {
            Phase::Lobby | Phase::Done => Vec::new(),
            Phase::Countdown(left) => {
                self.steps += 1;
                if left > 1 {
                    self.phase = Phase::Countdown(left - 1);
                    return Vec::new();
                }
                match self.start_trial() {
                    Ok(()) => Vec::new(),
                    Err(e) => self.fail(e),
                }
            }
            Phase::Running => {
                self.steps += 1;
                let idle = self.clock() - self.last_activity >= INACTIVITY_LIMIT;
                let pos = self.cursor.unwrap_or(self.lab.workspace.human_start);
                let Some(runner) = self.runner.as_mut() else {
                    return self.fail(Error::State("running without a trial".into()));
                };
                let result = if idle {
                    runner.force_timeout().map(|r| Tick::Finished(Box::new(r)))
                } else {
                    runner.tick(pos)
                };
                match result {
                    Ok(Tick::Running(info)) => vec![ServerMessage::Tick {
                        t: info.t,
                        arm_x: info.arm.x,
                        arm_y: info.arm.y,
                        action: info.action.label().to_string(),
                        score: self.score(),
                    }],
                    Ok(Tick::Finished(rec)) => self.end_trial(*rec),
                    Err(e) => self.fail(e),
                }
            }
        }
    }

    fn start_trial(&mut self) -> consensus_lab::Result<()> {
        let cfg = self.schedule[self.trials.len()];
        let mut runner = TrialRunner::new(cfg, &self.lab)?;
        if let Some(n) = self.pending_clicker.take() {
            runner.set_clicker(n);
        }
        self.runner = Some(runner);
        self.phase = Phase::Running;
        self.last_activity = self.clock();
        Ok(())
    }

    fn end_trial(&mut self, rec: TrialRecord) -> Vec<ServerMessage> {
        self.runner = None;
        let mut out = vec![ServerMessage::TrialEnd {
            human_press: rec.human_press,
            robot_press: rec.robot_press,
            outcome: rec.outcome,
            score_delta: rec.score_delta,
        }];
        self.trials.push(rec);
        if self.trials.len() < self.schedule.len() {
            out.extend(self.begin_countdown());
        } else {
            out.extend(self.finish());
        }
        out
    }

    /// Ends the session early (quit, disconnect or shutdown), keeping the
    /// partial record. Does nothing once the session is done.
    pub fn abort(&mut self) -> Vec<ServerMessage> {
        if self.phase == Phase::Done {
            return Vec::new();
        }
        if let Some(mut r) = self.runner.take() {
            if let Ok(rec) = r.abort() {
                self.trials.push(rec);
            }
        }
        self.aborted = true;
        self.finish()
    }

    fn fail(&mut self, e: Error) -> Vec<ServerMessage> {
        let mut out = vec![ServerMessage::error(ErrorCode::Internal, e.to_string())];
        out.extend(self.abort());
        out
    }

    fn finish(&mut self) -> Vec<ServerMessage> {
        self.phase = Phase::Done;
        let record = self.record();
        let mut out = Vec::new();
        if let Some(dir) = &self.store {
            match write_session_log(dir, &self.log_name(), &record) {
                Ok(_) => self.persisted = true,
                Err(e) => out.push(ServerMessage::error(ErrorCode::Storage, e.to_string())),
            }
        }
        out.push(ServerMessage::SessionEnd {
            total: record.total_score,
            outcomes: record.outcomes(),
        });
        out
    }
}
