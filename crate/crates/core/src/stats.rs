//! Outcome tables and the tests run on them: Stuart-Maxwell marginal
//! homogeneity, chi-square goodness of fit and the one-sample t-test.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::protocol::{Outcome, SessionRecord, TRIALS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    /// `counts[trial][outcome.index()]`.
    pub counts: Vec<[u32; 4]>,
    pub n_participants: usize,
    /// Sessions left out because they did not finish all trials.
    pub excluded: usize,
}

impl OutcomeTable {
    pub fn count(&self, trial: usize, o: Outcome) -> u32 {
        self.counts[trial][o.index()]
    }

    /// Share of participants with outcome `o` in `trial`, in percent.
    pub fn percent(&self, trial: usize, o: Outcome) -> f64 {
        100.0 * self.count(trial, o) as f64 / self.n_participants as f64
    }

    pub fn consensus_percent(&self, trial: usize) -> f64 {
        self.percent(trial, Outcome::C) + self.percent(trial, Outcome::CH)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,C,CH,D,DH,pct_C,pct_CH,pct_D,pct_DH\n");
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(s, "{}", i + 1);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            for o in Outcome::ALL {
                let _ = write!(s, ",{:.2}", self.percent(i, o));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-trial outcome counts over the sessions that completed every trial.
pub fn outcome_frequencies(sessions: &[SessionRecord]) -> Result<OutcomeTable> {
    let complete: Vec<Vec<Outcome>> = sessions
        .iter()
        .map(|s| s.outcomes())
        .filter(|o| o.len() == TRIALS)
        .collect();
    if complete.is_empty() {
        return Err(Error::Argument("no complete sessions to tabulate".into()));
    }
    let mut counts = vec![[0u32; 4]; TRIALS];
    for outcomes in &complete {
        for (t, o) in outcomes.iter().enumerate() {
            counts[t][o.index()] += 1;
        }
    }
    Ok(OutcomeTable {
        counts,
        n_participants: complete.len(),
        excluded: sessions.len() - complete.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Trials 1 to 3.
    Control,
    /// Trials 4 to 8.
    Experiment,
}

impl Phase {
    pub fn trials(self) -> std::ops::Range<usize> {
        match self {
            Phase::Control => 0..3,
            Phase::Experiment => 3..TRIALS,
        }
    }
}

/// Severity used to break ties: disagreement beats agreement.
fn severity(o: Outcome) -> u8 {
    match o {
        Outcome::D => 3,
        Outcome::DH => 2,
        Outcome::CH => 1,
        Outcome::C => 0,
    }
}

/// The most frequent outcome, ties going to the more severe category.
pub fn modal_outcome(outcomes: &[Outcome]) -> Result<Outcome> {
    if outcomes.is_empty() {
        return Err(Error::Argument("no outcomes to take a mode of".into()));
    }
    let mut n = [0usize; 4];
    for o in outcomes {
        n[o.index()] += 1;
    }
    Ok(Outcome::ALL
        .into_iter()
        .max_by_key(|o| (n[o.index()], severity(*o)))
        .expect("four categories"))
}

/// Each complete session's modal outcome over the trials of `phase`.
pub fn majority_category(sessions: &[SessionRecord], phase: Phase) -> Result<Vec<Outcome>> {
    let picked: Vec<Outcome> = sessions
        .iter()
        .map(|s| s.outcomes())
        .filter(|o| o.len() == TRIALS)
        .map(|o| modal_outcome(&o[phase.trials()]))
        .collect::<Result<_>>()?;
    if picked.is_empty() {
        return Err(Error::Argument("no complete sessions".into()));
    }
    Ok(picked)
}

/// Square table of paired categories; rows are the first measurement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k < 2 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Argument("contingency table must be square with k >= 2".into()));
        }
        Ok(Self { counts })
    }

    /// Control-phase category against experiment-phase category, in
    /// C, CH, D, DH order.
    pub fn control_vs_experiment(sessions: &[SessionRecord]) -> Result<Self> {
        let rows = majority_category(sessions, Phase::Control)?;
        let cols = majority_category(sessions, Phase::Experiment)?;
        let mut counts = vec![vec![0u64; 4]; 4];
        for (r, c) in rows.iter().zip(&cols) {
            counts[r.index()][c.index()] += 1;
        }
        Ok(Self { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn to_csv(&self, labels: &[&str]) -> String {
        let mut s = String::from("control\\experiment");
        for l in labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (l, row) in labels.iter().zip(&self.counts) {
            s.push_str(l);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p: f64,
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::Argument(format!("chi-square needs df > 0, got {df}")));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new(df).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(dist.sf(x).clamp(0.0, 1.0))
}

/// Stuart-Maxwell test of marginal homogeneity.
///
/// Categories without any off-diagonal mass are dropped first; a table with
/// no disagreement at all has identical marginals and returns statistic 0
/// with p = 1.
pub fn stuart_maxwell(t: &ContingencyTable) -> Result<TestResult> {
    let k = t.k();
    let r = t.row_sums();
    let c = t.col_sums();
    let active: Vec<usize> = (0..k)
        .filter(|&i| r[i] + c[i] > 2 * t.counts[i][i])
        .collect();
    if active.len() < 2 {
        return Ok(TestResult { statistic: 0.0, df: 0.0, p: 1.0 });
    }
    let m = active.len() - 1;
    let keep = &active[..m];
    let d = DVector::from_iterator(m, keep.iter().map(|&i| r[i] as f64 - c[i] as f64));
    let s = DMatrix::from_fn(m, m, |a, b| {
        let (i, j) = (keep[a], keep[b]);
        if i == j {
            (r[i] + c[i] - 2 * t.counts[i][i]) as f64
        } else {
            -((t.counts[i][j] + t.counts[j][i]) as f64)
        }
    });
    let x = s
        .clone()
        .lu()
        .solve(&d)
        .ok_or_else(|| Error::TestUndefined("Stuart-Maxwell covariance is singular".into()))?;
    let statistic = d.dot(&x).max(0.0);
    let df = m as f64;
    Ok(TestResult {
        statistic,
        df,
        p: chi_square_sf(statistic, df)?,
    })
}

pub fn chi_square_gof(counts: &[f64], expected: &[f64]) -> Result<TestResult> {
    if counts.len() != expected.len() {
        return Err(Error::Argument(format!(
            "{} counts against {} expected values",
            counts.len(),
            expected.len()
        )));
    }
    if counts.len() < 2 {
        return Err(Error::Argument("goodness of fit needs at least 2 categories".into()));
    }
    if expected.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Argument("expected counts must be positive".into()));
    }
    if counts.iter().any(|&o| !(o >= 0.0 && o.is_finite())) {
        return Err(Error::Argument("observed counts must be non-negative".into()));
    }
    let statistic: f64 = counts.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (counts.len() - 1) as f64;
    Ok(TestResult {
        statistic,
        df,
        p: chi_square_sf(statistic, df)?,
    })
}

/// Two-sided one-sample t-test against `mu0`.
pub fn one_sample_t(values: &[f64], mu0: f64) -> Result<TestResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Argument("t-test needs at least 2 values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) || !mu0.is_finite() {
        return Err(Error::Domain("t-test input"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::TestUndefined("sample variance is zero".into()));
    }
    let t = (mean - mu0) / (var / n as f64).sqrt();
    let df = (n - 1) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Argument(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TestResult { statistic: t, df, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table(rows: &[&[u64]]) -> ContingencyTable {
        ContingencyTable::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    /// Stuart-Maxwell with the *first* active category dropped, inverted by
    /// hand: the statistic does not depend on which category is removed.
    fn oracle_drop_first(t: &ContingencyTable) -> f64 {
        let k = t.k();
        let r = t.row_sums();
        let c = t.col_sums();
        let active: Vec<usize> = (0..k).filter(|&i| r[i] + c[i] > 2 * t.counts[i][i]).collect();
        if active.len() < 2 {
            return 0.0;
        }
        let keep: Vec<usize> = active[1..].to_vec();
        let m = keep.len();
        let mut a = vec![vec![0.0; m + 1]; m];
        for (x, &i) in keep.iter().enumerate() {
            for (y, &j) in keep.iter().enumerate() {
                a[x][y] = if i == j {
                    (r[i] + c[i] - 2 * t.counts[i][i]) as f64
                } else {
                    -((t.counts[i][j] + t.counts[j][i]) as f64)
                };
            }
            a[x][m] = r[i] as f64 - c[i] as f64;
        }
        let d: Vec<f64> = a.iter().map(|row| row[m]).collect();
        // Gauss-Jordan with partial pivoting
        for col in 0..m {
            let piv = (col..m).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..m {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for z in col..=m {
                        a[row][z] -= f * a[col][z];
                    }
                }
            }
        }
        (0..m).map(|i| d[i] * a[i][m] / a[i][i]).sum()
    }

    /// Fleiss-Everitt closed form for 3x3 tables.
    fn fleiss_everitt(t: &ContingencyTable) -> f64 {
        let n = &t.counts;
        let r = t.row_sums();
        let c = t.col_sums();
        let d: Vec<f64> = (0..3).map(|i| r[i] as f64 - c[i] as f64).collect();
        let nb = |i: usize, j: usize| (n[i][j] + n[j][i]) as f64 / 2.0;
        let (n12, n13, n23) = (nb(0, 1), nb(0, 2), nb(1, 2));
        (n23 * d[0].powi(2) + n13 * d[1].powi(2) + n12 * d[2].powi(2))
            / (2.0 * (n12 * n13 + n12 * n23 + n13 * n23))
    }

    fn chi2_oracle(o: &[f64], e: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..o.len() {
            let diff = o[i] - e[i];
            s += diff * diff / e[i];
        }
        s
    }

    #[test]
    fn mcnemar_closed_form() {
        let r = stuart_maxwell(&table(&[&[10, 6], &[2, 10]])).unwrap();
        assert_eq!(r.statistic, 2.0);
        assert_eq!(r.df, 1.0);
        assert_relative_eq!(r.p, 0.157_299_207_050_285_3, max_relative = 1e-9);
    }

    #[test]
    fn symmetric_table_is_zero() {
        let r = stuart_maxwell(&table(&[&[5, 3, 1, 0], &[3, 4, 2, 0], &[1, 2, 7, 0], &[0, 0, 0, 0]])).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p, 1.0);
        let diag = stuart_maxwell(&table(&[&[5, 0], &[0, 4]])).unwrap();
        assert_eq!(diag.statistic, 0.0);
        assert_eq!(diag.p, 1.0);
    }

    #[test]
    fn matches_fleiss_everitt() {
        let t = table(&[&[20, 10, 5], &[3, 30, 15], &[0, 5, 40]]);
        let r = stuart_maxwell(&t).unwrap();
        assert_relative_eq!(r.statistic, fleiss_everitt(&t), max_relative = 1e-12);
        assert_eq!(r.df, 2.0);
    }

    #[test]
    fn inactive_category_dropped() {
        // DH never occurs, so df counts three categories
        let t = table(&[&[3, 0, 1, 0], &[0, 2, 0, 0], &[20, 10, 5, 0], &[0, 0, 0, 0]]);
        let r = stuart_maxwell(&t).unwrap();
        assert_eq!(r.df, 2.0);
        assert!(r.p < 0.001, "{r:?}");
    }

    #[test]
    fn gof_examples() {
        let r = chi_square_gof(&[34.0, 9.0, 8.0], &[17.0, 17.0, 17.0]).unwrap();
        assert_relative_eq!(r.statistic, 434.0 / 17.0, max_relative = 1e-12);
        assert_eq!(r.df, 2.0);
        assert_relative_eq!(r.p, (-r.statistic / 2.0).exp(), max_relative = 1e-10);
        let same = chi_square_gof(&[4.0, 5.0], &[4.0, 5.0]).unwrap();
        assert_eq!((same.statistic, same.p), (0.0, 1.0));
        assert!(chi_square_gof(&[1.0, 2.0], &[1.0]).is_err());
        assert!(chi_square_gof(&[1.0, 2.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn tail_matches_closed_forms() {
        // df = 2 is exp(-x/2); df = 4 adds a linear factor
        for x in [0.1, 1.0, 5.0, 20.0, 60.0] {
            assert_relative_eq!(chi_square_sf(x, 2.0).unwrap(), (-x / 2.0).exp(), max_relative = 1e-10);
            assert_relative_eq!(
                chi_square_sf(x, 4.0).unwrap(),
                (1.0 + x / 2.0) * (-x / 2.0).exp(),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn t_test_reproduces_q5() {
        let n = 51;
        let sd = (8.35 - 5.5) * (n as f64).sqrt() / 12.370;
        assert!((sd - 1.645).abs() < 1e-3);
        // symmetric sample with the exact mean and sd
        let half: Vec<f64> = (0..25).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut vals = vec![8.35];
        let scale = sd * ((n - 1) as f64 / 50.0).sqrt();
        for h in &half {
            vals.push(8.35 + h * scale);
            vals.push(8.35 - h * scale);
        }
        let r = one_sample_t(&vals, 5.5).unwrap();
        assert_relative_eq!(r.statistic, 12.370, max_relative = 1e-9);
        assert_eq!(r.df, 50.0);
        assert!(r.p < 1e-15);
    }

    #[test]
    fn t_test_edges() {
        let r = one_sample_t(&[5.5 + 1e-3, 5.5 - 1e-3, 5.5 + 1e-3, 5.5 - 1e-3], 5.5).unwrap();
        assert!(r.statistic.abs() < 1e-9);
        assert!(matches!(one_sample_t(&[2.0, 2.0, 2.0], 1.0), Err(Error::TestUndefined(_))));
        assert!(one_sample_t(&[1.0], 0.0).is_err());
    }

    #[test]
    fn trial_one_percentages() {
        let mut counts = vec![[0u32; 4]; TRIALS];
        counts[0] = [15, 0, 36, 0];
        let t = OutcomeTable { counts, n_participants: 51, excluded: 0 };
        assert!((t.percent(0, Outcome::D) - 70.59).abs() < 5e-3);
        assert!((t.percent(0, Outcome::C) - 29.41).abs() < 5e-3);
        assert!(t.to_csv().starts_with("trial,C,CH,D,DH"));
        assert!(outcome_frequencies(&[]).is_err());
    }

    #[test]
    fn modal_ties_prefer_disagreement() {
        use Outcome::*;
        assert_eq!(modal_outcome(&[D, D, C]).unwrap(), D);
        assert_eq!(modal_outcome(&[C, CH, C, C, C]).unwrap(), C);
        assert_eq!(modal_outcome(&[C, D]).unwrap(), D);
        assert_eq!(modal_outcome(&[C, CH]).unwrap(), CH);
        assert_eq!(modal_outcome(&[DH, CH]).unwrap(), DH);
        assert!(modal_outcome(&[]).is_err());
    }

    proptest! {
        #[test]
        fn random_tables_match_oracle(cells in proptest::collection::vec(0u64..30, 16)) {
            let t = ContingencyTable::new(cells.chunks(4).map(|r| r.to_vec()).collect()).unwrap();
            if let Ok(r) = stuart_maxwell(&t) {
                let o = oracle_drop_first(&t);
                prop_assert!((r.statistic - o).abs() <= 1e-9 * o.abs().max(1.0), "{} vs {}", r.statistic, o);
                prop_assert!(r.statistic >= 0.0);
                prop_assert!((0.0..=1.0).contains(&r.p));
            }
        }

        #[test]
        fn permutation_invariant(cells in proptest::collection::vec(0u64..30, 16), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
            let t = ContingencyTable::new(cells.chunks(4).map(|r| r.to_vec()).collect()).unwrap();
            let u = ContingencyTable::new(
                (0..4).map(|i| (0..4).map(|j| t.counts[perm[i]][perm[j]]).collect()).collect(),
            ).unwrap();
            match (stuart_maxwell(&t), stuart_maxwell(&u)) {
                (Ok(a), Ok(b)) => prop_assert!((a.statistic - b.statistic).abs() <= 1e-9 * a.statistic.max(1.0)),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }

        #[test]
        fn zero_iff_marginals_match(cells in proptest::collection::vec(0u64..6, 9)) {
            let t = ContingencyTable::new(cells.chunks(3).map(|r| r.to_vec()).collect()).unwrap();
            if let Ok(r) = stuart_maxwell(&t) {
                let same = t.row_sums() == t.col_sums();
                prop_assert_eq!(r.statistic.abs() < 1e-12, same);
            }
        }

        #[test]
        fn gof_matches_oracle_and_adds(
            o in proptest::collection::vec(0.0..100.0f64, 6),
            e in proptest::collection::vec(0.5..100.0f64, 6),
        ) {
            let whole = chi_square_gof(&o, &e).unwrap();
            prop_assert!((whole.statistic - chi2_oracle(&o, &e)).abs() <= 1e-9 * whole.statistic.max(1.0));
            let a = chi_square_gof(&o[..3], &e[..3]).unwrap();
            let b = chi_square_gof(&o[3..], &e[3..]).unwrap();
            prop_assert!((whole.statistic - a.statistic - b.statistic).abs() <= 1e-9 * whole.statistic.max(1.0));
            prop_assert!((0.0..=1.0).contains(&whole.p));
        }

        #[test]
        fn tail_monotone(x in 0.0..80.0f64, dx in 0.01..5.0f64, df in 1u32..10) {
            let a = chi_square_sf(x, df as f64).unwrap();
            let b = chi_square_sf(x + dx, df as f64).unwrap();
            prop_assert!(b <= a);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn t_matches_oracle(v in proptest::collection::vec(-10.0..10.0f64, 3..40), mu in -5.0..5.0f64) {
            if let Ok(r) = one_sample_t(&v, mu) {
                let n = v.len() as f64;
                let m = v.iter().sum::<f64>() / n;
                let ss: f64 = v.iter().map(|x| x * x).sum::<f64>() - n * m * m;
                let t = (m - mu) * n.sqrt() / (ss / (n - 1.0)).sqrt();
                prop_assert!((r.statistic - t).abs() <= 1e-9 * t.abs().max(1.0));
                prop_assert!((0.0..=1.0).contains(&r.p));
            }
        }
    }
}
