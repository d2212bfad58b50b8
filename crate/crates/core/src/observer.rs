//! Observed human opinion from hand or cursor motion.
//!
//! The direction of motion picks the option (rightward toward red, leftward
//! toward blue) and the distance to that option's buzzer sets conviction:
//!
//! ```text
//! z_hat = a cos(theta) tanh(k / dist)
//! ```

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};
use crate::Choice;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workspace {
    pub width: f64,
    pub height: f64,
    pub red_box: Rect,
    pub blue_box: Rect,
    /// Humans may not change target once above this line.
    pub commit_line_y: f64,
    pub human_start: Point,
    pub robot_home: Point,
}

impl Default for Workspace {
    /// 1280x720 with mirror-symmetric buzzers; each anchor is the inner
    /// bottom corner, the one a hand approaching from below reaches first.
    fn default() -> Self {
        Self {
            width: 1280.0,
            height: 720.0,
            red_box: Rect::new(Point::new(920.0, 260.0), Point::new(1160.0, 60.0)),
            blue_box: Rect::new(Point::new(360.0, 260.0), Point::new(120.0, 60.0)),
            commit_line_y: 400.0,
            human_start: Point::new(640.0, 680.0),
            robot_home: Point::new(640.0, 710.0),
        }
    }
}

impl Workspace {
    pub fn diag(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn buzzer(&self, c: Choice) -> &Rect {
        match c {
            Choice::Red => &self.red_box,
            Choice::Blue => &self.blue_box,
        }
    }

    pub fn anchor(&self, c: Choice) -> Point {
        self.buzzer(c).anchor()
    }

    pub fn in_bounds(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width && p.y <= self.height
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    /// Reflection about the vertical centre line.
    pub fn mirror(&self, p: Point) -> Point {
        Point::new(self.width - p.x, p.y)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.width, self.height, self.commit_line_y]
            .iter()
            .all(|v| v.is_finite())
            && self.red_box.corners.iter().all(|p| p.is_finite())
            && self.blue_box.corners.iter().all(|p| p.is_finite())
            && self.human_start.is_finite()
            && self.robot_home.is_finite();
        if !finite {
            return Err(Error::Domain("workspace"));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Config("workspace must have positive size".into()));
        }
        for (name, r) in [("red_box", &self.red_box), ("blue_box", &self.blue_box)] {
            if !r.corners.iter().all(|&p| self.in_bounds(p)) {
                return Err(Error::Config(format!("{name} lies outside the workspace")));
            }
        }
        if self.red_box.intersects(&self.blue_box) {
            return Err(Error::Config("buzzer boxes overlap".into()));
        }
        if !self.in_bounds(self.human_start) || !self.in_bounds(self.robot_home) {
            return Err(Error::Config("start positions lie outside the workspace".into()));
        }
        // Rightward motion from the start must lead to red, leftward to blue,
        // and both buzzers must be reached by moving up the screen.
        let s = self.human_start;
        if self.red_box.min().x <= s.x || self.blue_box.max().x >= s.x {
            return Err(Error::Config(
                "red buzzer must lie right of the human start and blue left of it".into(),
            ));
        }
        if self.red_box.max().y >= s.y || self.blue_box.max().y >= s.y {
            return Err(Error::Config("buzzers must lie above the human start".into()));
        }
        if self.buzzer(Choice::Red).contains(s) || self.buzzer(Choice::Blue).contains(s) {
            return Err(Error::Config("human starts inside a buzzer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverParams {
    pub a: f64,
    pub k: f64,
    pub eps_d: f64,
    pub eps_m: f64,
}

impl Default for ObserverParams {
    fn default() -> Self {
        Self {
            a: 8.0,
            k: 1.5,
            eps_d: 1e-3,
            eps_m: 1e-6,
        }
    }
}

impl ObserverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.k > 0.0 && self.eps_d > 0.0 && self.eps_m >= 0.0)
            || ![self.a, self.k, self.eps_d, self.eps_m].iter().all(|v| v.is_finite())
        {
            return Err(Error::Config(
                "observer needs a > 0, k > 0, eps_d > 0, eps_m >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub t: f64,
    pub p: Point,
    pub p_prev: Point,
    pub m: Point,
    /// `None` until the first frame with motion.
    pub theta: Option<f64>,
    pub dist: Option<f64>,
    pub z_hat: f64,
}

/// Mean of the detected hand landmarks.
pub fn hand_center(landmarks: &[Point]) -> Result<Point> {
    if landmarks.is_empty() {
        return Err(Error::Argument("no landmarks".into()));
    }
    if !landmarks.iter().all(|p| p.is_finite()) {
        return Err(Error::Domain("landmark"));
    }
    let n = landmarks.len() as f64;
    let (sx, sy) = landmarks
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    Ok(Point::new(sx / n, sy / n))
}

/// Direction of motion folded into `[0, pi)`, or `None` when the hand is
/// effectively still. Image coordinates: `y` grows downward.
pub fn movement_angle(p: Point, p_prev: Point, eps_m: f64) -> Option<f64> {
    let m = p - p_prev;
    if !(m.norm() >= eps_m) || m.norm() == 0.0 {
        return None;
    }
    let mut theta = (-m.y).atan2(m.x);
    if theta < 0.0 {
        theta += TAU;
    }
    if theta >= PI {
        // the lower half-plane folds onto the upper one by a half turn
        theta -= PI;
    }
    Some(theta.clamp(0.0, PI - f64::EPSILON))
}

/// Option a movement angle points at; `pi/2` itself counts as blue.
pub fn angle_choice(theta: f64) -> Choice {
    if theta < FRAC_PI_2 {
        Choice::Red
    } else {
        Choice::Blue
    }
}

/// Normalised distance from `p` to the anchor of the buzzer selected by
/// `theta`, clamped to `[eps_d, 1]`.
pub fn target_distance(p: Point, theta: f64, ws: &Workspace, eps_d: f64) -> f64 {
    let anchor = ws.anchor(angle_choice(theta));
    (p.distance(anchor) / ws.diag()).clamp(eps_d, 1.0)
}

pub fn observe_opinion(theta: f64, dist: f64, params: &ObserverParams) -> f64 {
    params.a * theta.cos() * (params.k / dist).tanh()
}

/// Stateful per-session observer holding the last position and angle.
#[derive(Debug, Clone)]
pub struct Observer {
    pub params: ObserverParams,
    pub ws: Workspace,
    prev: Option<Point>,
    theta: Option<f64>,
}

impl Observer {
    pub fn new(params: ObserverParams, ws: Workspace) -> Self {
        Self {
            params,
            ws,
            prev: None,
            theta: None,
        }
    }

    pub fn reset(&mut self) {
        self.prev = None;
        self.theta = None;
    }

    pub fn observe(&mut self, t: f64, p: Point) -> Result<ObservationFrame> {
        if !p.is_finite() || !t.is_finite() {
            return Err(Error::Domain("observed position"));
        }
        let p_prev = self.prev.unwrap_or(p);
        if let Some(theta) = movement_angle(p, p_prev, self.params.eps_m) {
            self.theta = Some(theta);
        }
        self.prev = Some(p);
        let (dist, z_hat) = match self.theta {
            Some(theta) => {
                let dist = target_distance(p, theta, &self.ws, self.params.eps_d);
                (Some(dist), observe_opinion(theta, dist, &self.params))
            }
            None => (None, 0.0),
        };
        Ok(ObservationFrame {
            t,
            p,
            p_prev,
            m: p - p_prev,
            theta: self.theta,
            dist,
            z_hat,
        })
    }
}

/// A timestamped recorded trajectory.
pub type Trajectory = Vec<(f64, Point)>;

/// Reads `t,x,y` or the 21-landmark variant `t,x1,y1,...,x21,y21`; landmark
/// rows are reduced to their centre.
pub fn read_trajectory<R: Read>(reader: R) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Argument(format!("trajectory header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let landmarks = match cols.as_slice() {
        ["t", "x", "y"] => false,
        _ if cols.len() == 43 && cols[0] == "t" => true,
        _ => {
            return Err(Error::Argument(format!(
                "unrecognised trajectory header: {}",
                cols.join(",")
            )))
        }
    };
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Argument(format!("trajectory row {}: {e}", line + 2)))?;
        let vals = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Argument(format!("trajectory row {}: {e}", line + 2)))?;
        let p = if landmarks {
            let pts: Vec<Point> = vals[1..].chunks(2).map(|c| Point::new(c[0], c[1])).collect();
            hand_center(&pts)?
        } else {
            Point::new(vals[1], vals[2])
        };
        out.push((vals[0], p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    const ORIGIN: Point = Point::new(0.0, 0.0);

    #[test]
    fn default_workspace_is_valid() {
        let ws = Workspace::default();
        ws.validate().unwrap();
        assert_abs_diff_eq!(ws.diag(), 1468.6047, epsilon = 1e-3);
    }

    #[test]
    fn overlapping_boxes_rejected() {
        let mut ws = Workspace::default();
        ws.blue_box = ws.red_box;
        assert!(ws.validate().is_err());
    }

    #[test]
    fn centres() {
        assert_eq!(hand_center(&[ORIGIN, Point::new(2.0, 2.0)]).unwrap(), Point::new(1.0, 1.0));
        let p = Point::new(3.5, -1.25);
        assert_eq!(hand_center(&[p]).unwrap(), p);
        assert_eq!(hand_center(&[p; 21]).unwrap(), p);
        assert!(hand_center(&[]).is_err());
    }

    #[test]
    fn axis_angles() {
        assert_eq!(movement_angle(Point::new(1.0, 0.0), ORIGIN, 1e-9), Some(0.0));
        assert_abs_diff_eq!(
            movement_angle(Point::new(0.0, -1.0), ORIGIN, 1e-9).unwrap(),
            FRAC_PI_2
        );
        assert_abs_diff_eq!(
            movement_angle(Point::new(-1.0, 1.0), ORIGIN, 1e-9).unwrap(),
            FRAC_PI_4,
            epsilon = 1e-12
        );
        assert_eq!(movement_angle(ORIGIN, ORIGIN, 1e-9), None);
    }

    /// Hand-worked folding table for the 16 compass directions (screen
    /// coordinates, so "N" is negative y). Angles in sixteenths of a turn.
    #[test]
    fn compass_folding_table() {
        let table: [(&str, f64, f64, f64); 16] = [
            ("E", 1.0, 0.0, 0.0),
            ("ENE", 2.0, -1.0, 1.0),
            ("NE", 1.0, -1.0, 2.0),
            ("NNE", 1.0, -2.0, 3.0),
            ("N", 0.0, -1.0, 4.0),
            ("NNW", -1.0, -2.0, 5.0),
            ("NW", -1.0, -1.0, 6.0),
            ("WNW", -2.0, -1.0, 7.0),
            ("W", -1.0, 0.0, 0.0),
            ("WSW", -2.0, 1.0, 1.0),
            ("SW", -1.0, 1.0, 2.0),
            ("SSW", -1.0, 2.0, 3.0),
            ("S", 0.0, 1.0, 4.0),
            ("SSE", 1.0, 2.0, 5.0),
            ("SE", 1.0, 1.0, 6.0),
            ("ESE", 2.0, 1.0, 7.0),
        ];
        for (name, dx, dy, sixteenth) in table {
            let m = Point::new(dx, dy);
            let want = sixteenth * PI / 8.0;
            // exact multiples of 22.5 degrees only for the axis and diagonal rows
            let got = movement_angle(m, ORIGIN, 1e-9).unwrap();
            let oracle = {
                let raw = (-dy).atan2(dx).rem_euclid(TAU);
                if raw >= PI { raw - PI } else { raw }
            };
            assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
            if dx.abs() == dy.abs() || dx == 0.0 || dy == 0.0 {
                assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            } else {
                assert!((got - want).abs() < PI / 16.0, "{name}: {got} vs {want}");
            }
            assert!((0.0..PI).contains(&got), "{name}");
        }
    }

    #[test]
    fn distances() {
        let ws = Workspace::default();
        let eps = 1e-3;
        assert_eq!(target_distance(ws.anchor(Choice::Red), 0.0, &ws, eps), eps);
        // from the far corner of a workspace whose anchor sits at the origin
        let mut w = ws;
        w.red_box = Rect::new(ORIGIN, Point::new(10.0, 10.0));
        assert_eq!(target_distance(Point::new(1280.0, 720.0), 0.0, &w, eps), 1.0);
        // pi/2 exactly selects blue
        let p = Point::new(640.0, 600.0);
        let d_blue = p.distance(ws.anchor(Choice::Blue)) / ws.diag();
        assert_abs_diff_eq!(target_distance(p, FRAC_PI_2, &ws, eps), d_blue);
        assert_eq!(angle_choice(FRAC_PI_2), Choice::Blue);
    }

    #[test]
    fn opinion_examples() {
        let params = ObserverParams::default();
        assert_abs_diff_eq!(observe_opinion(FRAC_PI_2, 0.3, &params), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(observe_opinion(0.0, 1.0, &params), 7.2412, epsilon = 1e-4);
        let near = observe_opinion(PI - 1e-9, params.eps_d, &params);
        // tanh(k / eps_d) rounds to 1, so the bound -a is met with equality
        assert!(near < -7.99 && near >= -8.0);
    }

    #[test]
    fn first_frame_and_still_frames() {
        let ws = Workspace::default();
        let mut obs = Observer::new(ObserverParams::default(), ws);
        let f0 = obs.observe(0.0, ws.human_start).unwrap();
        assert_eq!(f0.z_hat, 0.0);
        assert!(f0.theta.is_none());
        let f1 = obs.observe(0.01, ws.human_start + Point::new(2.0, -3.0)).unwrap();
        assert!(f1.z_hat > 0.0);
        let f2 = obs.observe(0.02, f1.p).unwrap();
        assert_eq!(f2.theta, f1.theta);
        assert_eq!(f2.z_hat, f1.z_hat);
    }

    #[test]
    fn trajectory_files() {
        let csv = "t,x,y\n0,1,2\n0.01,3,4\n";
        let tr = read_trajectory(csv.as_bytes()).unwrap();
        assert_eq!(tr, vec![(0.0, Point::new(1.0, 2.0)), (0.01, Point::new(3.0, 4.0))]);

        let mut header = vec!["t".to_string()];
        for i in 1..=21 {
            header.push(format!("x{i}"));
            header.push(format!("y{i}"));
        }
        let mut row = vec!["0.5".to_string()];
        for i in 0..21 {
            row.push(format!("{}", 10 + i));
            row.push("7".into());
        }
        let text = format!("{}\n{}\n", header.join(","), row.join(","));
        let tr = read_trajectory(text.as_bytes()).unwrap();
        assert_eq!(tr, vec![(0.5, Point::new(20.0, 7.0))]);

        assert!(read_trajectory("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_trajectory("t,x,y\n0,zz,1\n".as_bytes()).is_err());
    }

    fn run(obs: &mut Observer, pts: &[Point]) -> Vec<f64> {
        pts.iter()
            .enumerate()
            .map(|(i, &p)| obs.observe(i as f64 * 0.01, p).unwrap().z_hat)
            .collect()
    }

    fn path_strategy() -> impl Strategy<Value = Vec<Point>> {
        // off-axis steps: exactly horizontal motion folds both ways to zero
        let step = (-20.0..20.0f64, 0.5..20.0f64, any::<bool>())
            .prop_map(|(dx, dy, down)| Point::new(dx, if down { dy } else { -dy }));
        (100.0..1180.0f64, 100.0..700.0f64, prop::collection::vec(step, 1..60)).prop_map(
            |(x, y, steps)| {
                let mut p = Point::new(x, y);
                let mut out = vec![p];
                for s in steps {
                    p = p + s;
                    out.push(p);
                }
                out
            },
        )
    }

    proptest! {
        #[test]
        fn mirror_negates(path in path_strategy()) {
            let ws = Workspace::default();
            let mirrored: Vec<Point> = path.iter().map(|&p| ws.mirror(p)).collect();
            let a = run(&mut Observer::new(ObserverParams::default(), ws), &path);
            let b = run(&mut Observer::new(ObserverParams::default(), ws), &mirrored);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x + y).abs() < 1e-9, "{x} vs {y}");
            }
        }

        #[test]
        fn bounded_and_deterministic(path in path_strategy()) {
            let ws = Workspace::default();
            let a = run(&mut Observer::new(ObserverParams::default(), ws), &path);
            let b = run(&mut Observer::new(ObserverParams::default(), ws), &path);
            prop_assert_eq!(&a, &b);
            prop_assert!(a.iter().all(|z| z.abs() <= 8.0));
        }

        #[test]
        // below dist ~ 0.08 tanh(k / dist) rounds to exactly 1
        fn closer_is_stronger(d1 in 0.1..1.0f64, d2 in 0.1..1.0f64) {
            prop_assume!((d1 - d2).abs() > 1e-3);
            let params = ObserverParams::default();
            let (near, far) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(observe_opinion(0.0, near, &params) > observe_opinion(0.0, far, &params));
        }

        #[test]
        fn sign_follows_angle(theta in 0.0..PI, dist in 1e-3..=1.0f64) {
            prop_assume!((theta - FRAC_PI_2).abs() > 1e-9);
            let z = observe_opinion(theta, dist, &ObserverParams::default());
            prop_assert_eq!(z > 0.0, theta < FRAC_PI_2);
        }
    }
}
