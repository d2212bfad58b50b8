//! Single-line JSON messages exchanged over the session socket.

use consensus_lab::protocol::Outcome;
use consensus_lab::Choice;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ClientMessage {
    Hello {
        name: String,
        /// Drive the session clock from cursor timestamps instead of the
        /// server's 100 Hz timer, so a recorded stream replays exactly.
        #[serde(default)]
        replay: bool,
    },
    Ready,
    /// `t` is the client's session clock in seconds.
    Cursor { t: f64, x: f64, y: f64 },
    ClickerCount { n: i64 },
    Quit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ServerMessage {
    TrialStart {
        index: usize,
        gaze_yaw: f64,
        gaze_pitch: f64,
        countdown_ms: u64,
    },
    /// `t` is time since the trial started running.
    Tick {
        t: f64,
        arm_x: f64,
        arm_y: f64,
        action: String,
        score: i32,
    },
    TrialEnd {
        human_press: Option<Choice>,
        robot_press: Choice,
        outcome: Outcome,
        score_delta: i32,
    },
    SessionEnd { total: i32, outcomes: Vec<Outcome> },
    Error { code: ErrorCode, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Busy,
    BadState,
    Parse,
    Storage,
    Internal,
}

impl ServerMessage {
    pub fn error(code: ErrorCode, msg: impl Into<String>) -> Self {
        ServerMessage::Error { code, msg: msg.into() }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

impl ClientMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("client messages always serialize")
    }
}

/// Parses one client line. Unknown fields are ignored; an unknown `type` is a
/// parse error like any other malformed input.
pub fn parse_client(line: &str) -> Result<ClientMessage, ServerMessage> {
    serde_json::from_str(line).map_err(|e| ServerMessage::error(ErrorCode::Parse, e.to_string()))
}
