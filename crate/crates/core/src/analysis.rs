//! Bias sweeps, nullcline contours and equilibria of the coupled pair.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SweepSettings;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::opinion::{jacobian, rate_unchecked, validate_dissensus, Adjacency, AgentParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Consensus,
    Dissensus,
    /// Still moving at the end of the horizon.
    Indeterminate,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Consensus => "consensus",
            Label::Dissensus => "dissensus",
            Label::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Bias values along each axis.
    pub axis: Vec<f64>,
    /// Row-major labels: `labels[i * n + j]` is `(b_r = axis[i], b_h = axis[j])`.
    pub labels: Vec<Label>,
    pub z0: [f64; 2],
}

impl SweepResult {
    pub fn resolution(&self) -> usize {
        self.axis.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, Label)> + '_ {
        let n = self.axis.len();
        self.labels
            .iter()
            .enumerate()
            .map(move |(k, &l)| (self.axis[k / n], self.axis[k % n], l))
    }

    pub fn step(&self) -> f64 {
        self.axis[1] - self.axis[0]
    }
}

#[inline]
fn rates(z_r: f64, z_h: f64, p: &AgentParams, b_r: f64, b_h: f64) -> (f64, f64) {
    (
        rate_unchecked(z_r, z_h, p, 1.0, b_r),
        rate_unchecked(z_h, z_r, p, 1.0, b_h),
    )
}

/// Integrates one cell and labels its end state.
pub fn classify_cell(p: &AgentParams, b_r: f64, b_h: f64, z0: [f64; 2], t_final: f64, dt: f64) -> Label {
    let (mut zr, mut zh) = (z0[0], z0[1]);
    let steps = (t_final / dt).round() as usize;
    for _ in 0..steps {
        let (k1r, k1h) = rates(zr, zh, p, b_r, b_h);
        let (k2r, k2h) = rates(zr + 0.5 * dt * k1r, zh + 0.5 * dt * k1h, p, b_r, b_h);
        let (k3r, k3h) = rates(zr + 0.5 * dt * k2r, zh + 0.5 * dt * k2h, p, b_r, b_h);
        let (k4r, k4h) = rates(zr + dt * k3r, zh + dt * k3h, p, b_r, b_h);
        zr += dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
        zh += dt / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h);
    }
    let (fr, fh) = rates(zr, zh, p, b_r, b_h);
    if !(zr.is_finite() && zh.is_finite()) || fr.abs().max(fh.abs()) > 1e-4 {
        Label::Indeterminate
    } else if zr * zh > 0.0 {
        Label::Consensus
    } else {
        Label::Dissensus
    }
}

/// The stable unbiased equilibrium with the robot on red and the human on blue.
pub fn dissensus_equilibrium(p: &AgentParams) -> Result<[f64; 2]> {
    let report = find_equilibria(p, &Adjacency::mutual(), 0.0, 0.0)?;
    report
        .points
        .iter()
        .find(|e| e.stability == Stability::Stable && e.z_r > 0.0 && e.z_h < 0.0)
        .map(|e| [e.z_r, e.z_h])
        .ok_or_else(|| Error::Config("no stable dissensus equilibrium at zero bias".into()))
}

pub fn sweep(p: &AgentParams, s: &SweepSettings) -> Result<SweepResult> {
    validate_dissensus(p, &Adjacency::mutual())?;
    if s.resolution < 25 {
        return Err(Error::Argument(format!("sweep resolution must be >= 25, got {}", s.resolution)));
    }
    if !(s.dt > 0.0 && s.t_final > 0.0 && s.range > 0.0) {
        return Err(Error::Argument("sweep needs positive dt, t_final and range".into()));
    }
    let z0 = match s.z0 {
        Some(z) => z,
        None => dissensus_equilibrium(p)?,
    };
    let n = s.resolution;
    let axis: Vec<f64> = (0..n)
        .map(|i| -s.range + 2.0 * s.range * i as f64 / (n - 1) as f64)
        .collect();
    let labels = (0..n * n)
        .into_par_iter()
        .map(|k| classify_cell(p, axis[k / n], axis[k % n], z0, s.t_final, s.dt))
        .collect();
    Ok(SweepResult { axis, labels, z0 })
}

/// The class the square rule predicts: consensus iff both biases exceed `u`
/// in magnitude with the same sign.
pub fn expected_label(b_r: f64, b_h: f64, u: f64) -> Label {
    if b_r.abs() > u && b_h.abs() > u && b_r * b_h > 0.0 {
        Label::Consensus
    } else {
        Label::Dissensus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareReport {
    pub checked: usize,
    pub excluded: usize,
    pub indeterminate: usize,
    pub mismatches: Vec<(f64, f64, Label)>,
    pub mismatch_fraction: f64,
}

impl SquareReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Distance from `(x, y)` to the boundary set of the rule: the square
/// `max(|b_r|, |b_h|) = u` and the rays bounding the two consensus corners.
fn boundary_distance(x: f64, y: f64, u: f64) -> f64 {
    let seg = |px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64| {
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (px - ax - t * dx).hypot(py - ay - t * dy)
    };
    let far = 1e9;
    let mut d = f64::INFINITY;
    for s in [1.0, -1.0] {
        // square sides
        d = d.min(seg(x, y, s * u, -u, s * u, u));
        d = d.min(seg(x, y, -u, s * u, u, s * u));
        // consensus corner rays
        d = d.min(seg(x, y, s * u, s * u, s * far, s * u));
        d = d.min(seg(x, y, s * u, s * u, s * u, s * far));
    }
    d
}

/// Compares a sweep against the square rule, skipping cells within one grid
/// step of its boundary.
pub fn verify_consensus_square(sweep: &SweepResult, u: f64) -> SquareReport {
    let step = sweep.step();
    let (mut checked, mut excluded, mut indeterminate) = (0, 0, 0);
    let mut mismatches = Vec::new();
    for (b_r, b_h, label) in sweep.cells() {
        if label == Label::Indeterminate {
            indeterminate += 1;
        }
        if boundary_distance(b_r, b_h, u) <= step * (1.0 + 1e-9) {
            excluded += 1;
            continue;
        }
        checked += 1;
        if label != expected_label(b_r, b_h, u) {
            mismatches.push((b_r, b_h, label));
        }
    }
    let mismatch_fraction = if checked == 0 { 0.0 } else { mismatches.len() as f64 / checked as f64 };
    SquareReport {
        checked,
        excluded,
        indeterminate,
        mismatches,
        mismatch_fraction,
    }
}

/// The equilibrium conditions divided through by `u`:
/// `D1 = tanh(alpha z_r + gamma z_h) - (d z_r - b_r) / u` and likewise `D2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullclineField {
    pub params: AgentParams,
    pub b_r: f64,
    pub b_h: f64,
}

impl NullclineField {
    pub fn delta1(&self, z_r: f64, z_h: f64) -> f64 {
        let p = &self.params;
        (p.alpha * z_r + p.gamma * z_h).tanh() - (p.d * z_r - self.b_r) / p.u
    }

    pub fn delta2(&self, z_r: f64, z_h: f64) -> f64 {
        let p = &self.params;
        (p.alpha * z_h + p.gamma * z_r).tanh() - (p.d * z_h - self.b_h) / p.u
    }

    pub fn eval(&self, which: Field, z: Point) -> f64 {
        match which {
            Field::Delta1 => self.delta1(z.x, z.y),
            Field::Delta2 => self.delta2(z.x, z.y),
        }
    }

    fn gradient(&self, which: Field, z: Point) -> Point {
        let p = &self.params;
        match which {
            Field::Delta1 => {
                let s = 1.0 / (p.alpha * z.x + p.gamma * z.y).cosh().powi(2);
                Point::new(p.alpha * s - p.d / p.u, p.gamma * s)
            }
            Field::Delta2 => {
                let s = 1.0 / (p.alpha * z.y + p.gamma * z.x).cosh().powi(2);
                Point::new(p.gamma * s, p.alpha * s - p.d / p.u)
            }
        }
    }

    /// One Newton step toward the zero set along the gradient.
    pub fn polish(&self, which: Field, z: Point) -> Point {
        let g = self.gradient(which, z);
        let n2 = g.x * g.x + g.y * g.y;
        if n2 == 0.0 || !n2.is_finite() {
            return z;
        }
        z - g * (self.eval(which, z) / n2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    Delta1,
    Delta2,
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Field::Delta1 => "delta1",
            Field::Delta2 => "delta2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contours {
    pub delta1: Vec<Vec<Point>>,
    pub delta2: Vec<Vec<Point>>,
    /// Grid spacing the contours were traced at.
    pub step: f64,
}

impl Contours {
    pub fn field(&self, which: Field) -> &[Vec<Point>] {
        match which {
            Field::Delta1 => &self.delta1,
            Field::Delta2 => &self.delta2,
        }
    }
}

/// Zero-level polylines of both fields over `[-extent, extent]^2` on an
/// `n x n` vertex grid (marching squares).
pub fn nullcline_zero_contours(field: &NullclineField, extent: f64, n: usize) -> Result<Contours> {
    if n < 2 || !(extent > 0.0) {
        return Err(Error::Argument("contour grid needs n >= 2 and positive extent".into()));
    }
    let step = 2.0 * extent / (n - 1) as f64;
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (n - 1) as f64;
    let trace = |which: Field| {
        let values: Vec<f64> = (0..n * n)
            .map(|k| field.eval(which, Point::new(coord(k % n), coord(k / n))))
            .collect();
        marching_squares(&values, n, &coord)
    };
    Ok(Contours {
        delta1: trace(Field::Delta1),
        delta2: trace(Field::Delta2),
        step,
    })
}

/// Edge key: `2 * vertex + 0` for the edge to the right of a vertex,
/// `+ 1` for the edge above it.
type EdgeKey = usize;

fn marching_squares(values: &[f64], n: usize, coord: &dyn Fn(usize) -> f64) -> Vec<Vec<Point>> {
    let v = |i: usize, j: usize| values[j * n + i];
    let pos = |x: f64| x >= 0.0;
    let crossing = |key: EdgeKey| -> Point {
        let vert = key / 2;
        let (i, j) = (vert % n, vert / n);
        let (i2, j2) = if key % 2 == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (v(i, j), v(i2, j2));
        let t = if a == b { 0.5 } else { a / (a - b) };
        Point::new(
            coord(i) + t * (coord(i2) - coord(i)),
            coord(j) + t * (coord(j2) - coord(j)),
        )
    };
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let (v00, v10, v11, v01) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
            let bottom = 2 * (j * n + i);
            let top = 2 * ((j + 1) * n + i);
            let left = 2 * (j * n + i) + 1;
            let right = 2 * (j * n + i + 1) + 1;
            let mut edges = Vec::with_capacity(4);
            if pos(v00) != pos(v10) {
                edges.push(bottom);
            }
            if pos(v10) != pos(v11) {
                edges.push(right);
            }
            if pos(v11) != pos(v01) {
                edges.push(top);
            }
            if pos(v01) != pos(v00) {
                edges.push(left);
            }
            match edges.len() {
                2 => segments.push((edges[0], edges[1])),
                4 => {
                    // saddle: the centre value decides which corners connect
                    let centre = 0.25 * (v00 + v10 + v11 + v01);
                    if pos(centre) == pos(v00) {
                        segments.push((bottom, right));
                        segments.push((top, left));
                    } else {
                        segments.push((bottom, left));
                        segments.push((right, top));
                    }
                }
                _ => {}
            }
        }
    }
    chain(&segments)
        .into_iter()
        .map(|keys| keys.into_iter().map(crossing).collect())
        .collect()
}

/// Joins segments sharing an edge crossing into polylines.
fn chain(segments: &[(EdgeKey, EdgeKey)]) -> Vec<Vec<EdgeKey>> {
    let mut adj: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        adj.entry(a).or_default().push(s);
        adj.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let walk = |start_seg: usize, from: EdgeKey, used: &mut Vec<bool>| -> Vec<EdgeKey> {
        let mut line = vec![from];
        let (mut seg, mut at) = (start_seg, from);
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            line.push(next);
            at = next;
            match adj[&at].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        line
    };
    // open chains first, starting from their ends, in a fixed order
    let mut ends: Vec<EdgeKey> = adj.iter().filter(|(_, s)| s.len() == 1).map(|(&k, _)| k).collect();
    ends.sort_unstable();
    for e in ends {
        let s = adj[&e][0];
        if !used[s] {
            lines.push(walk(s, e, &mut used));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            lines.push(walk(s, segments[s].0, &mut used));
        }
    }
    lines
}

fn segment_intersection(p1: Point, p2: Point, q1: Point, q2: Point) -> Option<Point> {
    let r = p2 - p1;
    let s = q2 - q1;
    let denom = r.x * s.y - r.y * s.x;
    if denom.abs() < 1e-300 {
        return None;
    }
    let qp = q1 - p1;
    let t = (qp.x * s.y - qp.y * s.x) / denom;
    let u = (qp.x * r.y - qp.y * r.x) / denom;
    let tol = 1e-12;
    if (-tol..=1.0 + tol).contains(&t) && (-tol..=1.0 + tol).contains(&u) {
        Some(p1 + r * t)
    } else {
        None
    }
}

/// Crossings of the two contour families, merged when closer than two grid
/// steps (a crossing on a cell edge is found from both neighbouring cells).
pub fn contour_intersections(c: &Contours) -> Vec<Point> {
    let cell = |p: Point| ((p.x / c.step).floor() as i64, (p.y / c.step).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<(Point, Point)>> = HashMap::new();
    for line in &c.delta2 {
        for w in line.windows(2) {
            let mid = (w[0] + w[1]) * 0.5;
            buckets.entry(cell(mid)).or_default().push((w[0], w[1]));
        }
    }
    let mut found: Vec<Point> = Vec::new();
    for line in &c.delta1 {
        for w in line.windows(2) {
            let (cx, cy) = cell((w[0] + w[1]) * 0.5);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let Some(segs) = buckets.get(&(cx + dx, cy + dy)) else { continue };
                    for &(q1, q2) in segs {
                        if let Some(x) = segment_intersection(w[0], w[1], q1, q2) {
                            if found.iter().all(|f| f.distance(x) > 2.0 * c.step) {
                                found.push(x);
                            }
                        }
                    }
                }
            }
        }
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Saddle,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Saddle => "saddle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub z_r: f64,
    pub z_h: f64,
    pub stability: Stability,
    /// Largest `|dz/dt|` at the point.
    pub residual: f64,
    /// Real parts of the Jacobian eigenvalues, larger first.
    pub eigen_re: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub b_r: f64,
    pub b_h: f64,
    pub points: Vec<Equilibrium>,
}

pub const DEDUP_TOL: f64 = 1e-4;

fn residual(z: [f64; 2], p: &AgentParams, adj: &Adjacency, b_r: f64, b_h: f64) -> [f64; 2] {
    [
        rate_unchecked(z[0], z[1], p, adj.robot_edge(), b_r),
        rate_unchecked(z[1], z[0], p, adj.human_edge(), b_h),
    ]
}

fn max_abs(v: [f64; 2]) -> f64 {
    v[0].abs().max(v[1].abs())
}

/// Damped Newton from one seed; `None` when it fails to converge.
fn newton(seed: [f64; 2], p: &AgentParams, adj: &Adjacency, b_r: f64, b_h: f64) -> Option<[f64; 2]> {
    let mut z = seed;
    let mut f = residual(z, p, adj, b_r, b_h);
    for _ in 0..200 {
        if max_abs(f) < 1e-13 {
            return Some(z);
        }
        let j = jacobian(z[0], z[1], p, adj).ok()?.entries;
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 {
            return None;
        }
        let dx = (f[0] * j[1][1] - f[1] * j[0][1]) / det;
        let dy = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        let mut lambda = 1.0;
        loop {
            let trial = [z[0] - lambda * dx, z[1] - lambda * dy];
            let ft = residual(trial, p, adj, b_r, b_h);
            if max_abs(ft) < max_abs(f) || lambda < 1e-6 {
                z = trial;
                f = ft;
                break;
            }
            lambda *= 0.5;
        }
        if !(z[0].is_finite() && z[1].is_finite()) || z[0].abs() > 1e3 || z[1].abs() > 1e3 {
            return None;
        }
    }
    (max_abs(f) < 1e-10).then_some(z)
}

/// All equilibria reachable by damped Newton from a 20x20 seed grid over
/// `[-3, 3]^2`, deduplicated and labelled by linear stability.
pub fn find_equilibria(p: &AgentParams, adj: &Adjacency, b_r: f64, b_h: f64) -> Result<EquilibriumReport> {
    if !(b_r.is_finite() && b_h.is_finite()) {
        return Err(Error::Domain("bias"));
    }
    p.validate()?;
    const SEEDS: usize = 20;
    let seed = |i: usize| -3.0 + 6.0 * i as f64 / (SEEDS - 1) as f64;
    let roots: Vec<Option<[f64; 2]>> = (0..SEEDS * SEEDS)
        .into_par_iter()
        .map(|k| newton([seed(k % SEEDS), seed(k / SEEDS)], p, adj, b_r, b_h))
        .collect();
    let mut unique: Vec<[f64; 2]> = Vec::new();
    for z in roots.into_iter().flatten() {
        if unique
            .iter()
            .all(|u| (u[0] - z[0]).abs().max((u[1] - z[1]).abs()) > DEDUP_TOL)
        {
            unique.push(z);
        }
    }
    if unique.is_empty() {
        return Err(Error::NoEquilibria);
    }
    unique.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let points = unique
        .into_iter()
        .map(|z| {
            let j = jacobian(z[0], z[1], p, adj)?;
            let mut re = [j.eigenvalues[0].re, j.eigenvalues[1].re];
            re.sort_by(|a, b| b.total_cmp(a));
            let stability = if re[0] < 0.0 {
                Stability::Stable
            } else if re[1] > 0.0 {
                Stability::Unstable
            } else {
                Stability::Saddle
            };
            Ok(Equilibrium {
                z_r: z[0],
                z_h: z[1],
                stability,
                residual: max_abs(residual(z, p, adj, b_r, b_h)),
                eigen_re: re,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumReport { b_r, b_h, points })
}
