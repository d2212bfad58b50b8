#![allow(dead_code)]

use consensus_lab::behavior::Action;
use consensus_lab::human::{HumanAgent, HumanScript, RobotView, ScriptKind, ScriptedHuman};
use consensus_lab::observer::Workspace;
use consensus_lab::protocol::trial_config;
use consensus_lab::{Choice, Point};
use consensus_lab_service::{ClientMessage, ServerMessage, SessionCore};

pub const DT: f64 = 0.01;

/// Stands in for the browser: sends cursor frames from a scripted human,
/// one per control period, with timestamps on the session clock.
pub struct ScriptClient {
    human: ScriptedHuman,
    ws: Workspace,
    step: u64,
    trial_t: Option<f64>,
    pub clicker: Option<i64>,
    pub sent: Vec<ClientMessage>,
    pub received: Vec<ServerMessage>,
}

impl ScriptClient {
    pub fn direct(target: Choice) -> Self {
        let script = HumanScript::archetype(ScriptKind::Direct, target);
        Self {
            human: ScriptedHuman::new(script, true).unwrap(),
            ws: Workspace::default(),
            step: 0,
            trial_t: None,
            clicker: None,
            sent: Vec::new(),
            received: Vec::new(),
        }
    }

    pub fn opening(&mut self, name: &str) -> Vec<ClientMessage> {
        let msgs = vec![
            ClientMessage::Hello { name: name.into(), replay: true },
            ClientMessage::Ready,
        ];
        self.sent.extend(msgs.clone());
        msgs
    }

    pub fn observe(&mut self, m: &ServerMessage) {
        match m {
            ServerMessage::TrialStart { index, .. } => {
                self.human.begin_trial(&trial_config(*index).unwrap(), &self.ws).unwrap();
                self.trial_t = None;
            }
            ServerMessage::Tick { t, .. } => self.trial_t = Some(*t),
            ServerMessage::TrialEnd { .. } => self.trial_t = None,
            _ => {}
        }
        self.received.push(m.clone());
    }

    pub fn done(&self) -> bool {
        self.received.iter().any(|m| matches!(m, ServerMessage::SessionEnd { .. }))
    }

    /// Messages for the next control period.
    pub fn next(&mut self) -> Vec<ClientMessage> {
        self.step += 1;
        let pos = match self.trial_t {
            None => self.ws.human_start,
            Some(t) => self.position(t + DT),
        };
        let mut msgs = vec![ClientMessage::Cursor { t: self.step as f64 * DT, x: pos.x, y: pos.y }];
        if let Some(n) = self.clicker {
            msgs.insert(0, ClientMessage::ClickerCount { n });
        }
        self.sent.extend(msgs.clone());
        msgs
    }

    fn position(&mut self, t: f64) -> Point {
        let view = RobotView {
            t,
            z_r: 0.0,
            action: Action::Stopped,
            direction: None,
            arm_pos: self.ws.robot_home,
        };
        self.human.next_position(t, DT, &view).unwrap()
    }

    pub fn trial_ends(&self) -> Vec<ServerMessage> {
        self.received
            .iter()
            .filter(|m| matches!(m, ServerMessage::TrialEnd { .. }))
            .cloned()
            .collect()
    }
}

/// Runs a whole session through a bare core, returning the client.
pub fn drive_core(core: &mut SessionCore, client: &mut ScriptClient, name: &str) {
    for m in client.opening(name) {
        for r in core.handle(m) {
            client.observe(&r);
        }
    }
    let mut guard = 0;
    while !client.done() {
        for m in client.next() {
            for r in core.handle(m) {
                client.observe(&r);
            }
        }
        guard += 1;
        assert!(guard < 200_000, "session did not finish");
    }
}

/// Feeds a recorded stream into a fresh core and returns its replies.
pub fn replay(core: &mut SessionCore, stream: &[ClientMessage]) -> Vec<ServerMessage> {
    stream.iter().flat_map(|m| core.handle(m.clone())).collect()
}
