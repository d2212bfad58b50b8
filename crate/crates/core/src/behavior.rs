//! Robot arm behaviour: debounced direction changes, pause-then-pivot,
//! press detection and the nearest-buzzer commit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::observer::Workspace;
use crate::Choice;

/// Confirms a change of direction only after `c_max` consecutive opposing
/// signs, so single-frame flickers in `sgn(z_r)` are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Debouncer {
    /// Last sign fed in; 0 before the first observation.
    pub prev_sign: i8,
    /// Direction currently acted on; 0 before the first observation.
    pub committed: i8,
    pub change_count: u32,
    /// Stage of an unconfirmed change; at most one flag is set.
    pub transition_flags: [bool; 3],
    pub c_max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Debounce {
    /// First observation: start moving this way.
    Seeded(i8),
    /// Confirmed reversal toward this sign.
    Pivot(i8),
    Hold,
}

impl Debouncer {
    pub fn new(c_max: u32) -> Result<Self> {
        if c_max == 0 {
            return Err(Error::Config("c_max must be at least 1".into()));
        }
        Ok(Self {
            prev_sign: 0,
            committed: 0,
            change_count: 0,
            transition_flags: [false; 3],
            c_max,
        })
    }

    fn clear(&mut self) {
        self.change_count = 0;
        self.transition_flags = [false; 3];
    }
}

pub fn update_debouncer(d: &mut Debouncer, s: i8) -> Result<Debounce> {
    if s != 1 && s != -1 {
        return Err(Error::Argument(format!("debouncer sign must be +-1, got {s}")));
    }
    d.prev_sign = s;
    if d.committed == 0 {
        d.committed = s;
        return Ok(Debounce::Seeded(s));
    }
    if s == d.committed {
        d.clear();
        return Ok(Debounce::Hold);
    }
    d.change_count += 1;
    let stage = (d.change_count as usize - 1).min(2);
    d.transition_flags = [false; 3];
    d.transition_flags[stage] = true;
    if d.change_count >= d.c_max {
        d.committed = s;
        d.clear();
        return Ok(Debounce::Pivot(s));
    }
    Ok(Debounce::Hold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stopped,
    TowardRed,
    TowardBlue,
    Paused,
    Pressed(Choice),
}

impl Action {
    pub fn toward(c: Choice) -> Action {
        match c {
            Choice::Red => Action::TowardRed,
            Choice::Blue => Action::TowardBlue,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Action::Stopped => "stopped",
            Action::TowardRed => "toward_red",
            Action::TowardBlue => "toward_blue",
            Action::Paused => "paused",
            Action::Pressed(Choice::Red) => "pressed_red",
            Action::Pressed(Choice::Blue) => "pressed_blue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub pos: Point,
    pub speed: f64,
    pub action: Action,
    pub pause_left: f64,
    /// Direction to resume after the current pause.
    pub pending: Option<Choice>,
    /// Last direction actually moved in.
    pub heading: Option<Choice>,
}

impl ArmState {
    pub fn new(pos: Point, speed: f64) -> Result<Self> {
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(Error::Config(format!("arm speed must be positive, got {speed}")));
        }
        Ok(Self {
            pos,
            speed,
            action: Action::Stopped,
            pause_left: 0.0,
            pending: None,
            heading: None,
        })
    }

    pub fn pressed(&self) -> Option<Choice> {
        match self.action {
            Action::Pressed(c) => Some(c),
            _ => None,
        }
    }

    /// Direction the arm is visibly committed to, if any: the current or
    /// pre-pause heading, or the pressed buzzer.
    pub fn visible_direction(&self) -> Option<Choice> {
        match self.action {
            Action::TowardRed => Some(Choice::Red),
            Action::TowardBlue => Some(Choice::Blue),
            Action::Paused => self.heading,
            Action::Pressed(c) => Some(c),
            Action::Stopped => None,
        }
    }
}

/// Applies a debouncer event. Seeding starts motion directly; a pivot pauses
/// first. A pivot during a pause only replaces the pending direction.
pub fn decide_action(arm: &ArmState, event: Debounce, pause: f64) -> Result<ArmState> {
    if arm.pressed().is_some() {
        return Err(Error::State("arm has already pressed a buzzer".into()));
    }
    let mut next = *arm;
    match event {
        Debounce::Hold => {}
        Debounce::Seeded(s) => {
            let c = sign_choice(s);
            next.action = Action::toward(c);
            next.heading = Some(c);
        }
        Debounce::Pivot(s) => {
            let c = sign_choice(s);
            if arm.action != Action::Paused {
                next.pause_left = pause;
            }
            next.pending = Some(c);
            next.action = if pause > 0.0 || arm.action == Action::Paused {
                Action::Paused
            } else {
                next.heading = Some(c);
                Action::toward(c)
            };
        }
    }
    Ok(next)
}

fn sign_choice(s: i8) -> Choice {
    if s > 0 {
        Choice::Red
    } else {
        Choice::Blue
    }
}

/// Moves the arm one step. Arriving within one step of the target anchor
/// presses that buzzer; pressed arms never change again.
pub fn advance_arm(arm: &ArmState, dt: f64, ws: &Workspace) -> Result<ArmState> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("dt must be positive, got {dt}")));
    }
    let mut next = *arm;
    match arm.action {
        Action::Pressed(_) | Action::Stopped => {}
        Action::Paused => {
            next.pause_left = arm.pause_left - dt;
            // tolerate the drift of repeatedly subtracting dt
            if next.pause_left <= 1e-9 {
                next.pause_left = 0.0;
                if let Some(c) = next.pending.take() {
                    next.action = Action::toward(c);
                    next.heading = Some(c);
                }
            }
        }
        Action::TowardRed | Action::TowardBlue => {
            let c = if arm.action == Action::TowardRed {
                Choice::Red
            } else {
                Choice::Blue
            };
            let target = ws.anchor(c);
            let stride = arm.speed * dt;
            let gap = arm.pos.distance(target);
            if gap <= stride * (1.0 + 1e-9) {
                next.pos = target;
                next.action = Action::Pressed(c);
            } else {
                next.pos = arm.pos + (target - arm.pos) * (stride / gap);
            }
        }
    }
    Ok(next)
}

/// The buzzer whose closed box contains `p`, red first.
pub fn detect_press(p: Point, ws: &Workspace) -> Option<Choice> {
    if ws.red_box.contains(p) {
        Some(Choice::Red)
    } else if ws.blue_box.contains(p) {
        Some(Choice::Blue)
    } else {
        None
    }
}

/// Nearest anchor; ties go to red.
pub fn commit_nearest(arm_pos: Point, ws: &Workspace) -> Choice {
    let d_blue = arm_pos.distance(ws.anchor(Choice::Blue));
    let d_red = arm_pos.distance(ws.anchor(Choice::Red));
    if d_blue < d_red {
        Choice::Blue
    } else {
        Choice::Red
    }
}
