use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use consensus_lab::analysis::{
    contour_intersections, find_equilibria, nullcline_zero_contours, sweep as run_sweep, verify_consensus_square,
    EquilibriumReport, Field, NullclineField, SquareReport,
};
use consensus_lab::config::LabConfig;
use consensus_lab::human::{HumanAgent, HumanScript, ModelHumanAgent, ScriptKind, ScriptedHuman};
use consensus_lab::protocol::{read_session_logs, run_session, write_session_log, Outcome, SessionRecord, TRIALS};
use consensus_lab::stats::{outcome_frequencies, stuart_maxwell, ContingencyTable, OutcomeTable, TestResult};
use consensus_lab::Choice;
use consensus_lab_service::ServerConfig;
use serde::Serialize;

use crate::{CliError, EquilibriaArgs, HumanKind, ProtocolArgs, ServeArgs, StatsArgs, SweepArgs};

/// Equilibria and contours are searched over `[-EXTENT, EXTENT]^2`.
const EXTENT: f64 = 3.0;
const OUTCOME_LABELS: [&str; 4] = ["C", "CH", "D", "DH"];

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_file(path, &text)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub resolution: usize,
    pub range: f64,
    pub u: f64,
    pub z0: [f64; 2],
    #[serde(flatten)]
    pub report: SquareReport,
    #[serde(skip)]
    pub out: PathBuf,
}

impl fmt::Display for SweepSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.report;
        write!(
            f,
            "sweep {n}x{n} over [-{range}, {range}]^2: {} cells checked, {} near the boundary, {} mismatches ({}); wrote {}",
            r.checked,
            r.excluded,
            r.mismatches.len(),
            if r.passed() { "pass" } else { "FAIL" },
            self.out.display(),
            n = self.resolution,
            range = self.range,
        )
    }
}

/// Runs the bias sweep, writes `sweep.csv` and `sweep_report.json`, and fails
/// if any checked cell disagrees with the consensus square.
pub fn sweep(mut lab: LabConfig, args: &SweepArgs) -> Result<SweepSummary, CliError> {
    if let Some(n) = args.resolution {
        lab.sweep.resolution = n;
    }
    if let Some(r) = args.range {
        lab.sweep.range = r;
    }
    lab.validate()?;
    let started = Instant::now();
    let result = run_sweep(&lab.robot, &lab.sweep)?;
    tracing::info!(elapsed_s = started.elapsed().as_secs_f64(), "sweep integrated");
    let report = verify_consensus_square(&result, lab.robot.u);

    create_dir(&args.out)?;
    let mut csv = String::from("b_r,b_h,label\n");
    for (b_r, b_h, label) in result.cells() {
        let _ = writeln!(csv, "{b_r},{b_h},{label}");
    }
    write_file(&args.out.join("sweep.csv"), &csv)?;
    let summary = SweepSummary {
        resolution: result.resolution(),
        range: lab.sweep.range,
        u: lab.robot.u,
        z0: result.z0,
        report,
        out: args.out.clone(),
    };
    write_json(&args.out.join("sweep_report.json"), &summary)?;
    if !summary.report.passed() {
        return Err(CliError::Runtime(summary.to_string()));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriaSummary {
    #[serde(flatten)]
    pub report: EquilibriumReport,
    pub contour_intersections: Vec<[f64; 2]>,
    pub counts_agree: bool,
}

impl fmt::Display for EquilibriaSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "b_r = {}, b_h = {}", self.report.b_r, self.report.b_h)?;
        for e in &self.report.points {
            writeln!(
                f,
                "  ({:+.6}, {:+.6}) {:<8} residual {:.1e} eigen re [{:+.4}, {:+.4}]",
                e.z_r, e.z_h, e.stability, e.residual, e.eigen_re[0], e.eigen_re[1]
            )?;
        }
        write!(
            f,
            "{} equilibria, {} nullcline crossings",
            self.report.points.len(),
            self.contour_intersections.len()
        )
    }
}

/// Equilibria by Newton plus the nullcline picture at one bias pair; writes
/// `equilibria.json` and `nullclines.csv`.
pub fn equilibria(lab: &LabConfig, args: &EquilibriaArgs) -> Result<EquilibriaSummary, CliError> {
    if !(args.br.is_finite() && args.bh.is_finite()) {
        return Err(CliError::Usage("--br and --bh must be finite".into()));
    }
    if args.grid < 2 {
        return Err(CliError::Usage(format!("--grid must be at least 2, got {}", args.grid)));
    }
    let report = find_equilibria(&lab.robot, &lab.adjacency(), args.br, args.bh)?;
    let field = NullclineField {
        params: lab.robot,
        b_r: args.br,
        b_h: args.bh,
    };
    let contours = nullcline_zero_contours(&field, EXTENT, args.grid)?;
    let crossings: Vec<[f64; 2]> = contour_intersections(&contours).iter().map(|p| [p.x, p.y]).collect();
    let inside = report
        .points
        .iter()
        .filter(|e| e.z_r.abs() <= EXTENT && e.z_h.abs() <= EXTENT)
        .count();

    create_dir(&args.out)?;
    let mut csv = String::from("field,line,z_r,z_h\n");
    for which in [Field::Delta1, Field::Delta2] {
        for (i, line) in contours.field(which).iter().enumerate() {
            for p in line {
                let _ = writeln!(csv, "{which},{i},{},{}", p.x, p.y);
            }
        }
    }
    write_file(&args.out.join("nullclines.csv"), &csv)?;
    let summary = EquilibriaSummary {
        counts_agree: inside == crossings.len(),
        report,
        contour_intersections: crossings,
    };
    write_json(&args.out.join("equilibria.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct ProtocolSummary {
    pub sessions: Vec<SessionRecord>,
    pub table: OutcomeTable,
    pub out: PathBuf,
}

impl fmt::Display for ProtocolSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} participants, logs in {}", self.sessions.len(), self.out.display())?;
        write!(f, "{}", self.table.to_csv().trim_end())
    }
}

fn script_kind(kind: HumanKind) -> Option<ScriptKind> {
    match kind {
        HumanKind::Model => None,
        HumanKind::Direct => Some(ScriptKind::Direct),
        HumanKind::MidSwitch => Some(ScriptKind::MidSwitch),
        HumanKind::MultiSwitch => Some(ScriptKind::MultiSwitch),
        HumanKind::EarlyStrategicSwitch => Some(ScriptKind::EarlyStrategicSwitch),
    }
}

/// Session log name of participant `id`.
pub fn participant_log_name(id: usize) -> String {
    format!("participant-{id:03}")
}

/// Simulates the cohort and writes one log per participant plus
/// `outcomes.csv` and `contingency.csv`. Scripted participants start on red
/// or blue by index parity and follow the gaze cue; the seed only affects
/// model participants.
pub fn protocol(lab: &LabConfig, args: &ProtocolArgs) -> Result<ProtocolSummary, CliError> {
    if args.participants == 0 {
        return Err(CliError::Usage("--participants must be at least 1".into()));
    }
    let kind = script_kind(args.human);
    let a_hr = lab.adjacency().human_edge();
    let make = |i: usize, seed: u64| -> consensus_lab::Result<Box<dyn HumanAgent>> {
        Ok(match kind {
            None => Box::new(ModelHumanAgent::sample(
                lab.human,
                a_hr,
                lab.model_human,
                lab.gaze_map,
                seed,
                i as u64,
            )?),
            Some(k) => {
                let start = if i % 2 == 0 { Choice::Red } else { Choice::Blue };
                Box::new(ScriptedHuman::new(HumanScript::archetype(k, start), true)?)
            }
        })
    };
    let sessions = run_session(make, args.participants, args.seed, lab)?;
    create_dir(&args.out)?;
    for s in &sessions {
        write_session_log(&args.out, &participant_log_name(s.participant_id), s)?;
    }
    let table = outcome_frequencies(&sessions)?;
    write_file(&args.out.join("outcomes.csv"), &table.to_csv())?;
    let contingency = ContingencyTable::control_vs_experiment(&sessions)?;
    write_file(&args.out.join("contingency.csv"), &contingency.to_csv(&OUTCOME_LABELS))?;
    Ok(ProtocolSummary {
        sessions,
        table,
        out: args.out.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeRow {
    pub trial: usize,
    pub counts: [u32; 4],
    pub percent: [f64; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsSummary {
    pub sessions: usize,
    pub complete: usize,
    pub aborted: usize,
    pub skipped_lines: usize,
    pub outcomes: Vec<OutcomeRow>,
    /// Rows: control-phase modal outcome; columns: experiment phase.
    pub contingency: Vec<Vec<u64>>,
    pub stuart_maxwell: TestResult,
}

impl fmt::Display for StatsSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = serde_json::to_string_pretty(self).map_err(|_| fmt::Error)?;
        f.write_str(&text)
    }
}

/// Aggregates every session log in a directory. Malformed lines are skipped
/// and counted.
pub fn stats(args: &StatsArgs) -> Result<StatsSummary, CliError> {
    if !args.logs.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", args.logs.display())));
    }
    let loaded = read_session_logs(&args.logs).map_err(|e| io_err(&args.logs, e))?;
    if loaded.sessions.is_empty() {
        return Err(CliError::Usage(format!("no session logs in {}", args.logs.display())));
    }
    if loaded.skipped_lines > 0 {
        tracing::warn!(lines = loaded.skipped_lines, "skipped malformed log lines");
    }
    let sessions = &loaded.sessions;
    let table = outcome_frequencies(sessions)?;
    let contingency = ContingencyTable::control_vs_experiment(sessions)?;
    let sm = stuart_maxwell(&contingency)?;
    let outcomes = (0..TRIALS)
        .map(|i| OutcomeRow {
            trial: i + 1,
            counts: table.counts[i],
            percent: Outcome::ALL.map(|o| table.percent(i, o)),
        })
        .collect();
    let summary = StatsSummary {
        sessions: sessions.len(),
        complete: table.n_participants,
        aborted: sessions.iter().filter(|s| s.aborted).count(),
        skipped_lines: loaded.skipped_lines,
        outcomes,
        contingency: contingency.counts,
        stuart_maxwell: sm,
    };
    if let Some(path) = &args.out {
        write_json(path, &summary)?;
    }
    Ok(summary)
}

/// Blocks serving sessions until SIGINT or SIGTERM, then drains.
pub fn serve(lab: LabConfig, args: &ServeArgs) -> Result<(), CliError> {
    let (env_port, env_dir) = consensus_lab_service::env_settings().map_err(|e| CliError::Usage(e.to_string()))?;
    let port = args.port.unwrap_or(env_port);
    let data_dir = args.data_dir.clone().unwrap_or(env_dir);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let (listener, addr) = consensus_lab_service::bind(port)
            .await
            .map_err(|e| CliError::Usage(format!("cannot listen on port {port}: {e}")))?;
        tracing::info!(%addr, data_dir = %data_dir.display(), "serving");
        println!("listening on {addr}");
        consensus_lab_service::serve(listener, ServerConfig::new(lab, data_dir), interrupted())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
    tracing::info!("shutting down");
}
