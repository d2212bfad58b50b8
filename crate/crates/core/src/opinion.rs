//! Coupled two-agent, two-option opinion dynamics.
//!
//! Each agent's opinion `z` is a signed scalar: positive leans red, negative
//! leans blue, magnitude is conviction. The rate for one agent is
//!
//! ```text
//! dz/dt = -d z + u tanh(alpha z + gamma a z_other) + b
//! ```
//!
//! The robot and the human share this form; the human's opinion enters the
//! robot's equation through the adjacency edge `a_rh` and vice versa.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integration aborts once any opinion exceeds this magnitude. Legitimate
/// trajectories stay below `(u + |b|) / d`.
pub const BLOWUP_LIMIT: f64 = 1e6;

/// Default fixed integration step in seconds.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentParams {
    /// Decay rate (1/s), strictly positive.
    pub d: f64,
    /// Attention: gain on the saturated social term.
    pub u: f64,
    /// Self-reinforcement weight.
    pub alpha: f64,
    /// Inter-agent coupling; negative promotes disagreement.
    pub gamma: f64,
}

impl AgentParams {
    /// The shared parameter set used for both agents in the experiments.
    pub const EXPERIMENT: AgentParams = AgentParams {
        d: 10.0,
        u: 2.24,
        alpha: 0.05,
        gamma: -8.0,
    };

    pub fn new(d: f64, u: f64, alpha: f64, gamma: f64) -> Result<Self> {
        let p = Self { d, u, alpha, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.d, self.u, self.alpha, self.gamma]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain("agent parameters"));
        }
        if self.d <= 0.0 {
            return Err(Error::Config(format!(
                "decay d must be positive, got {}",
                self.d
            )));
        }
        Ok(())
    }

    pub fn with_attention(self, u: f64) -> Self {
        Self { u, ..self }
    }
}

impl Default for AgentParams {
    fn default() -> Self {
        Self::EXPERIMENT
    }
}

/// Unweighted adjacency of the two-agent network, `A = [0, a_rh; a_hr, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adjacency {
    pub a_rh: u8,
    pub a_hr: u8,
    pub eigen_max: f64,
    pub eigen_min: f64,
}

impl Adjacency {
    pub fn new(a_rh: u8, a_hr: u8) -> Result<Self> {
        if a_rh > 1 || a_hr > 1 {
            return Err(Error::Argument(format!(
                "adjacency entries must be 0 or 1, got ({a_rh}, {a_hr})"
            )));
        }
        // Eigenvalues of [[0, a], [b, 0]] are +-sqrt(a b).
        let root = (f64::from(a_rh) * f64::from(a_hr)).sqrt();
        Ok(Self {
            a_rh,
            a_hr,
            eigen_max: root,
            eigen_min: -root,
        })
    }

    /// Both agents observe each other.
    pub fn mutual() -> Self {
        Self::new(1, 1).expect("valid adjacency")
    }

    pub fn robot_edge(&self) -> f64 {
        f64::from(self.a_rh)
    }

    pub fn human_edge(&self) -> f64 {
        f64::from(self.a_hr)
    }
}

impl Default for Adjacency {
    fn default() -> Self {
        Self::mutual()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OpinionState {
    pub z_r: f64,
    pub z_h: f64,
    pub b_r: f64,
    pub b_h: f64,
    pub t: f64,
}

impl OpinionState {
    pub fn new(z_r: f64, z_h: f64) -> Self {
        Self {
            z_r,
            z_h,
            ..Self::default()
        }
    }

    pub fn with_biases(self, b_r: f64, b_h: f64) -> Self {
        Self { b_r, b_h, ..self }
    }

    pub fn is_finite(&self) -> bool {
        [self.z_r, self.z_h, self.b_r, self.b_h, self.t]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianInfo {
    pub entries: [[f64; 2]; 2],
    pub eigenvalues: [Complex64; 2],
    pub stable: bool,
}

/// Rate of change of one agent's opinion.
pub fn opinion_rate(z_self: f64, z_other: f64, p: &AgentParams, a: f64, b: f64) -> Result<f64> {
    if !(z_self.is_finite() && z_other.is_finite() && b.is_finite() && a.is_finite()) {
        return Err(Error::Domain("opinion_rate input"));
    }
    Ok(rate_unchecked(z_self, z_other, p, a, b))
}

#[inline]
pub(crate) fn rate_unchecked(z_self: f64, z_other: f64, p: &AgentParams, a: f64, b: f64) -> f64 {
    -p.d * z_self + p.u * (p.alpha * z_self + p.gamma * a * z_other).tanh() + b
}

#[inline]
fn coupled_rates(
    z_r: f64,
    z_h: f64,
    s: &OpinionState,
    p_r: &AgentParams,
    p_h: &AgentParams,
    adj: &Adjacency,
) -> (f64, f64) {
    (
        rate_unchecked(z_r, z_h, p_r, adj.robot_edge(), s.b_r),
        rate_unchecked(z_h, z_r, p_h, adj.human_edge(), s.b_h),
    )
}

/// One classical RK4 step of the coupled pair with both biases held fixed.
pub fn step(
    state: &OpinionState,
    p_r: &AgentParams,
    p_h: &AgentParams,
    adj: &Adjacency,
    dt: f64,
) -> Result<OpinionState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Argument(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::Domain("opinion state"));
    }
    let (z_r, z_h) = (state.z_r, state.z_h);
    let h = dt;
    let (k1r, k1h) = coupled_rates(z_r, z_h, state, p_r, p_h, adj);
    let (k2r, k2h) = coupled_rates(
        z_r + 0.5 * h * k1r,
        z_h + 0.5 * h * k1h,
        state,
        p_r,
        p_h,
        adj,
    );
    let (k3r, k3h) = coupled_rates(
        z_r + 0.5 * h * k2r,
        z_h + 0.5 * h * k2h,
        state,
        p_r,
        p_h,
        adj,
    );
    let (k4r, k4h) = coupled_rates(z_r + h * k3r, z_h + h * k3h, state, p_r, p_h, adj);
    let next = OpinionState {
        z_r: z_r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r),
        z_h: z_h + h / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h),
        t: state.t + dt,
        ..*state
    };
    check_bounded(next.t, &[next.z_r, next.z_h])?;
    Ok(next)
}

/// Integrates with fixed steps until `t_final` (the last step is shortened
/// to land on it exactly).
pub fn integrate(
    state: &OpinionState,
    p_r: &AgentParams,
    p_h: &AgentParams,
    adj: &Adjacency,
    dt: f64,
    t_final: f64,
) -> Result<OpinionState> {
    let mut s = *state;
    while s.t < t_final {
        let h = dt.min(t_final - s.t);
        if h <= f64::EPSILON * t_final.abs().max(1.0) {
            break;
        }
        s = step(&s, p_r, p_h, adj, h)?;
    }
    Ok(s)
}

pub(crate) fn check_bounded(t: f64, values: &[f64]) -> Result<()> {
    for &v in values {
        if !v.is_finite() || v.abs() > BLOWUP_LIMIT {
            return Err(Error::NumericalBlowup { t, magnitude: v.abs() });
        }
    }
    Ok(())
}

/// Jacobian of the homogeneous coupled system at `(z_r, z_h)`. Biases shift
/// equilibria but do not enter the Jacobian.
pub fn jacobian(z_r: f64, z_h: f64, p: &AgentParams, adj: &Adjacency) -> Result<JacobianInfo> {
    if !(z_r.is_finite() && z_h.is_finite()) {
        return Err(Error::Domain("jacobian point"));
    }
    let sech2 = |x: f64| {
        let c = x.cosh();
        if c.is_finite() {
            1.0 / (c * c)
        } else {
            0.0
        }
    };
    let s_r = sech2(p.alpha * z_r + p.gamma * adj.robot_edge() * z_h);
    let s_h = sech2(p.alpha * z_h + p.gamma * adj.human_edge() * z_r);
    let entries = [
        [
            -p.d + p.u * p.alpha * s_r,
            p.u * p.gamma * adj.robot_edge() * s_r,
        ],
        [
            p.u * p.gamma * adj.human_edge() * s_h,
            -p.d + p.u * p.alpha * s_h,
        ],
    ];
    let eigenvalues = eigenvalues_2x2(&entries);
    let stable = eigenvalues.iter().all(|l| l.re < 0.0);
    Ok(JacobianInfo {
        entries,
        eigenvalues,
        stable,
    })
}

/// Eigenvalues of a real 2x2 matrix, larger real part first.
pub fn eigenvalues_2x2(m: &[[f64; 2]; 2]) -> [Complex64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        [Complex64::new(half + r, 0.0), Complex64::new(half - r, 0.0)]
    } else {
        let r = (-disc).sqrt();
        [Complex64::new(half, r), Complex64::new(half, -r)]
    }
}

/// Attention at which the neutral state undergoes a pitchfork bifurcation
/// along the adjacency eigenmode `lambda`: `u* = d / (alpha + gamma lambda)`.
pub fn critical_attention(p: &AgentParams, lambda: f64) -> Result<f64> {
    let denom = p.alpha + p.gamma * lambda;
    if denom.abs() < 1e-12 {
        return Err(Error::Singular(format!(
            "alpha + gamma * lambda = {denom} (alpha={}, gamma={}, lambda={lambda})",
            p.alpha, p.gamma
        )));
    }
    Ok(p.d / denom)
}

/// Attention beyond which negative coupling guarantees dissensus.
pub fn dissensus_threshold(p: &AgentParams, adj: &Adjacency) -> Result<f64> {
    if p.gamma >= 0.0 {
        return Err(Error::Config(format!(
            "dissensus requires gamma < 0, got {}",
            p.gamma
        )));
    }
    critical_attention(p, adj.eigen_min)
}

/// Checks a dissensus configuration (`gamma < 0`, `u > u_d*`) and returns
/// the threshold.
pub fn validate_dissensus(p: &AgentParams, adj: &Adjacency) -> Result<f64> {
    p.validate()?;
    let threshold = dissensus_threshold(p, adj)?;
    if p.u <= threshold {
        return Err(Error::Config(format!(
            "attention u = {} does not exceed the dissensus threshold {threshold:.5}",
            p.u
        )));
    }
    Ok(threshold)
}

/// Bifurcation formulas assume both agents share one parameter set.
pub fn require_homogeneous(p_r: &AgentParams, p_h: &AgentParams) -> Result<()> {
    if p_r != p_h {
        return Err(Error::Config(
            "bifurcation analysis requires identical robot and human parameters".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const P: AgentParams = AgentParams::EXPERIMENT;

    #[test]
    fn origin_is_fixed_point() {
        assert_eq!(opinion_rate(0.0, 0.0, &P, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn rate_at_origin_equals_bias() {
        assert_eq!(opinion_rate(0.0, 0.0, &P, 1.0, 3.24).unwrap(), 3.24);
    }

    #[test]
    fn rate_scalar_example() {
        // -10 + 2.24 tanh(0.05 + 8), tanh(8.05) within 1e-6 of 1
        let r = opinion_rate(1.0, -1.0, &P, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(r, -7.76, epsilon = 1e-5);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            opinion_rate(f64::NAN, 0.0, &P, 1.0, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn step_rejects_bad_dt() {
        let s = OpinionState::default();
        assert!(step(&s, &P, &P, &Adjacency::mutual(), 0.0).is_err());
        assert!(step(&s, &P, &P, &Adjacency::mutual(), -0.01).is_err());
    }

    #[test]
    fn step_keeps_origin() {
        let s = OpinionState::default();
        let n = step(&s, &P, &P, &Adjacency::mutual(), 0.01).unwrap();
        assert_eq!((n.z_r, n.z_h), (0.0, 0.0));
        assert_abs_diff_eq!(n.t, 0.01);
    }

    #[test]
    fn blowup_is_reported() {
        let s = OpinionState::new(0.0, 0.0).with_biases(1e12, 0.0);
        let err = step(&s, &P, &P, &Adjacency::mutual(), 0.01).unwrap_err();
        assert!(matches!(err, Error::NumericalBlowup { .. }));
    }

    #[test]
    fn asymmetric_start_reaches_dissensus() {
        let adj = Adjacency::mutual();
        let start = OpinionState::new(0.1, 0.09);
        let coarse = integrate(&start, &P, &P, &adj, 0.01, 50.0).unwrap();
        let fine = integrate(&start, &P, &P, &adj, 0.001, 50.0).unwrap();
        assert!(coarse.z_r * coarse.z_h < 0.0);
        assert_abs_diff_eq!(coarse.z_r, fine.z_r, epsilon = 1e-9);
        assert_abs_diff_eq!(coarse.z_h, fine.z_h, epsilon = 1e-9);
    }

    #[test]
    fn symmetric_start_stays_on_diagonal() {
        let adj = Adjacency::mutual();
        let s = integrate(&OpinionState::new(0.1, 0.1), &P, &P, &adj, 0.01, 50.0).unwrap();
        assert_eq!(s.z_r, s.z_h);
    }

    #[test]
    fn jacobian_at_origin_closed_form() {
        let j = jacobian(0.0, 0.0, &P, &Adjacency::mutual()).unwrap();
        // -d + u (alpha -+ gamma)
        assert_abs_diff_eq!(j.eigenvalues[1].re, -10.0 + 2.24 * (0.05 - 8.0), epsilon = 1e-9);
        assert_abs_diff_eq!(j.eigenvalues[0].re, -10.0 + 2.24 * 8.05, epsilon = 1e-9);
        let lo = j.eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
        let hi = j.eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(lo, -27.808, epsilon = 1e-3);
        assert_abs_diff_eq!(hi, 8.032, epsilon = 1e-3);
        assert!(!j.stable);
    }

    #[test]
    fn origin_stable_at_low_attention() {
        let j = jacobian(0.0, 0.0, &P.with_attention(1.0), &Adjacency::mutual()).unwrap();
        let mut re: Vec<f64> = j.eigenvalues.iter().map(|l| l.re).collect();
        re.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(re[0], -17.95, epsilon = 1e-9);
        assert_abs_diff_eq!(re[1], -1.95, epsilon = 1e-9);
        assert!(j.stable);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let adj = Adjacency::mutual();
        let h = 1e-5;
        for &(zr, zh) in &[(0.0, 0.0), (0.1, -0.2), (0.3, 0.25), (-0.05, 0.4)] {
            let j = jacobian(zr, zh, &P, &adj).unwrap();
            let fr = |a: f64, b: f64| rate_unchecked(a, b, &P, 1.0, 0.0);
            let fh = |a: f64, b: f64| rate_unchecked(b, a, &P, 1.0, 0.0);
            let fd = [
                [
                    (fr(zr + h, zh) - fr(zr - h, zh)) / (2.0 * h),
                    (fr(zr, zh + h) - fr(zr, zh - h)) / (2.0 * h),
                ],
                [
                    (fh(zr + h, zh) - fh(zr - h, zh)) / (2.0 * h),
                    (fh(zr, zh + h) - fh(zr, zh - h)) / (2.0 * h),
                ],
            ];
            for i in 0..2 {
                for k in 0..2 {
                    assert_abs_diff_eq!(j.entries[i][k], fd[i][k], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn thresholds() {
        let adj = Adjacency::mutual();
        assert_abs_diff_eq!(critical_attention(&P, -1.0).unwrap(), 10.0 / 8.05, epsilon = 1e-12);
        assert_abs_diff_eq!(critical_attention(&P, -1.0).unwrap(), 1.24224, epsilon = 1e-5);
        assert_abs_diff_eq!(critical_attention(&P, 1.0).unwrap(), -1.2579, epsilon = 1e-4);
        let unit = AgentParams { d: 1.0, u: 1.0, alpha: 1.0, gamma: 0.0 };
        assert_eq!(critical_attention(&unit, 123.0).unwrap(), 1.0);
        let singular = AgentParams { alpha: 8.0, ..P };
        assert!(matches!(critical_attention(&singular, 1.0), Err(Error::Singular(_))));

        assert_abs_diff_eq!(dissensus_threshold(&P, &adj).unwrap(), 1.24224, epsilon = 1e-5);
        assert!(validate_dissensus(&P, &adj).is_ok());
        assert!(validate_dissensus(&P.with_attention(1.0), &adj).is_err());
        let positive = AgentParams { gamma: 8.0, ..P };
        assert!(matches!(dissensus_threshold(&positive, &adj), Err(Error::Config(_))));
    }

    #[test]
    fn adjacency_eigenvalues_computed() {
        let a = Adjacency::mutual();
        assert_eq!((a.eigen_max, a.eigen_min), (1.0, -1.0));
        let one_way = Adjacency::new(1, 0).unwrap();
        assert_eq!((one_way.eigen_max, one_way.eigen_min), (0.0, 0.0));
        assert!(Adjacency::new(2, 1).is_err());
    }

    #[test]
    fn pitchfork_around_dissensus_threshold() {
        let adj = Adjacency::mutual();
        let ud = dissensus_threshold(&P, &adj).unwrap();
        let start = OpinionState::new(1e-3, -0.5e-3);

        let below = P.with_attention(ud * 0.95);
        let s = integrate(&start, &below, &below, &adj, 0.01, 20.0).unwrap();
        assert!(s.z_r.abs() < 1e-6 && s.z_h.abs() < 1e-6);

        let above = P.with_attention(ud * 1.05);
        let s = integrate(&start, &above, &above, &adj, 0.01, 20.0).unwrap();
        assert!(s.z_r > 1e-3 && s.z_h < -1e-3, "{s:?}");
    }

    #[test]
    fn step_halving_agreement() {
        // At |z| = 10 the linear decay rate is d = 10, so the RK4 local error
        // at dt = 0.01 is about (d dt)^5 / 120 * |z| ~ 1e-6; the check uses a
        // step where that drops well below 1e-8.
        let adj = Adjacency::mutual();
        let dt = 0.002;
        let mut worst: f64 = 0.0;
        for &(zr, zh) in &[(10.0, -10.0), (0.3, 0.2), (-4.0, 7.0), (9.0, 9.5), (0.01, -0.02)] {
            let s = OpinionState::new(zr, zh).with_biases(1.0, -2.0);
            let full = step(&s, &P, &P, &adj, dt).unwrap();
            let half = step(&step(&s, &P, &P, &adj, dt / 2.0).unwrap(), &P, &P, &adj, dt / 2.0).unwrap();
            worst = worst.max((full.z_r - half.z_r).abs()).max((full.z_h - half.z_h).abs());
        }
        assert!(worst < 1e-8, "step-halving difference {worst}");
    }

    #[test]
    fn integrator_is_fourth_order() {
        let adj = Adjacency::mutual();
        let start = OpinionState::new(0.4, -0.1).with_biases(0.5, -0.3);
        // Slow the dynamics so the coarse steps stay in the asymptotic regime.
        let p = AgentParams { d: 1.0, u: 0.8, alpha: 0.5, gamma: -1.5 };
        let reference = integrate(&start, &p, &p, &adj, 1e-4, 2.0).unwrap();
        let err = |dt: f64| {
            let s = integrate(&start, &p, &p, &adj, dt, 2.0).unwrap();
            (s.z_r - reference.z_r).abs().max((s.z_h - reference.z_h).abs())
        };
        let ratio = err(0.1) / err(0.01);
        // one decade of dt -> roughly four decades of error
        assert!((1e3..1e5).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn trajectories_enter_absorbing_bound() {
        let adj = Adjacency::mutual();
        for &(zr, zh, br, bh) in &[(10.0, -10.0, 0.0, 0.0), (-10.0, -10.0, 3.0, -1.0), (10.0, 10.0, -6.0, 6.0)] {
            let s = integrate(&OpinionState::new(zr, zh).with_biases(br, bh), &P, &P, &adj, 0.01, 10.0).unwrap();
            let bound_r = (P.u + f64::abs(br)) / P.d + 1e-6;
            let bound_h = (P.u + f64::abs(bh)) / P.d + 1e-6;
            assert!(s.z_r.abs() <= bound_r && s.z_h.abs() <= bound_h, "{s:?}");
        }
    }

    proptest! {
        #[test]
        fn rate_is_odd_without_bias(zs in -20.0..20.0f64, zo in -20.0..20.0f64) {
            let a = opinion_rate(zs, zo, &P, 1.0, 0.0).unwrap();
            let b = opinion_rate(-zs, -zo, &P, 1.0, 0.0).unwrap();
            prop_assert_eq!(a, -b);
        }

        #[test]
        fn origin_fixed_for_any_params(d in 0.01..50.0f64, u in -5.0..5.0f64, alpha in -2.0..2.0f64, gamma in -10.0..10.0f64) {
            let p = AgentParams::new(d, u, alpha, gamma).unwrap();
            prop_assert_eq!(opinion_rate(0.0, 0.0, &p, 1.0, 0.0).unwrap(), 0.0);
        }

        #[test]
        fn step_is_deterministic(zr in -5.0..5.0f64, zh in -5.0..5.0f64, br in -6.0..6.0f64) {
            let adj = Adjacency::mutual();
            let s = OpinionState::new(zr, zh).with_biases(br, 0.0);
            let a = step(&s, &P, &P, &adj, 0.01).unwrap();
            let b = step(&s, &P, &P, &adj, 0.01).unwrap();
            prop_assert_eq!(a.z_r.to_bits(), b.z_r.to_bits());
            prop_assert_eq!(a.z_h.to_bits(), b.z_h.to_bits());
        }

        #[test]
        fn origin_eigenvalues_follow_adjacency_modes(u in 0.1..5.0f64, alpha in -1.0..1.0f64, gamma in -10.0..10.0f64) {
            let p = AgentParams { d: 10.0, u, alpha, gamma };
            let j = jacobian(0.0, 0.0, &p, &Adjacency::mutual()).unwrap();
            let mut got: Vec<f64> = j.eigenvalues.iter().map(|l| l.re).collect();
            got.sort_by(f64::total_cmp);
            let mut want = vec![-p.d + u * (alpha + gamma), -p.d + u * (alpha - gamma)];
            want.sort_by(f64::total_cmp);
            prop_assert!((got[0] - want[0]).abs() < 1e-9);
            prop_assert!((got[1] - want[1]).abs() < 1e-9);
        }
    }
}
