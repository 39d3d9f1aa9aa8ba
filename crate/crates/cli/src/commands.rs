//! The five subcommands as library functions. Each writes fixed file names
//! under its output directory and returns a summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use ndt_core::io::{
    self, read_snapshot, write_csv, write_csv_header, write_snapshot, write_stream_file, Snapshot,
    TrainLogRow,
};
use ndt_core::netsim::{Manifest, Simulator};
use ndt_core::oda::{Annealer, TrainerState};
use ndt_core::session::{BaselineSession, TwinSession};
use ndt_core::triggers::TriggerMonitor;
use ndt_core::twin::HybridNdtModel;
use ndt_core::types::Observation;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const STREAM_FILE: &str = "stream.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const GRID_FILE: &str = "grid.csv";
pub const BASELINE_LOG_FILE: &str = "baseline_log.csv";
pub const COMPARE_FILE: &str = "compare.csv";

pub const LOG_HEADER: [&str; 7] = [
    "step",
    "t_sim",
    "lambda",
    "K",
    "running_mse",
    "running_class_err",
    "trigger_flags",
];
pub const EVENT_HEADER: [&str; 5] = ["t", "kind", "mode", "magnitude", "action_taken"];

fn prepare_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn echo_config(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    write_text(&out.join(CONFIG_FILE), &cfg.canonical()?)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> CliResult<()> {
    if rows.is_empty() {
        write_csv_header(path, header)?;
    } else {
        write_csv(path, rows)?;
    }
    Ok(())
}

/// Observation source: a stream file when given, otherwise the configured
/// scenario simulated on the fly.
pub fn load_stream(cfg: &RunConfig, stream: Option<&Path>) -> CliResult<Vec<Observation>> {
    match stream {
        Some(p) => Ok(io::read_stream(p)?),
        None => Ok(Simulator::new(&cfg.scenario)?.observations().collect()),
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<Manifest> {
    cfg.validate()?;
    prepare_out(out)?;
    let sim = Simulator::new(&cfg.scenario)?;
    let stream: Vec<Observation> = sim.observations().collect();
    write_stream_file(&out.join(STREAM_FILE), &stream)?;
    let manifest = sim.manifest();
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(&out.join(MANIFEST_FILE), &text)?;
    echo_config(cfg, out)?;
    log::info!(
        "wrote {} records to {}",
        stream.len(),
        out.join(STREAM_FILE).display()
    );
    Ok(manifest)
}

/// A session whose twin starts at equilibrium on `annealer`'s codevectors.
pub fn session_from(cfg: &RunConfig, annealer: Annealer) -> CliResult<TwinSession> {
    let twin = HybridNdtModel::new(
        annealer.effective_codevectors(),
        cfg.bounds(),
        cfg.twin.clone(),
    )?;
    Ok(TwinSession::new(
        annealer,
        twin,
        TriggerMonitor::new(cfg.triggers.clone()),
        cfg.scenario.workspace.clone(),
        cfg.run.out_of_bounds,
        cfg.run.mse_window,
    )?)
}

pub fn cold_annealer(cfg: &RunConfig) -> CliResult<Annealer> {
    Ok(Annealer::new(TrainerState::new(
        cfg.trainer.clone(),
        cfg.divergence(),
    )?))
}

/// Trains on the configured fault-free survey, if any.
pub fn pretrain(cfg: &RunConfig) -> CliResult<Option<Annealer>> {
    let Some(scenario) = cfg.pretrain_scenario() else {
        return Ok(None);
    };
    let mut session = session_from(cfg, cold_annealer(cfg)?)?;
    for obs in Simulator::new(&scenario)?.observations() {
        session.step(obs)?;
    }
    if !session.annealer.is_converged() {
        log::warn!(
            "pretraining ended before the schedule converged (lambda={}, K={})",
            session.annealer.lambda(),
            session.annealer.state.k()
        );
    }
    log::info!(
        "pretrained: K={} lambda={:.4} levels={}",
        session.annealer.state.k(),
        session.annealer.lambda(),
        session.levels.len()
    );
    Ok(Some(session.annealer))
}

/// Runs the full training loop over `stream` starting from `start`
/// (cold when `None`).
pub fn train_on<I>(cfg: &RunConfig, stream: I, start: Option<Annealer>) -> CliResult<TwinSession>
where
    I: IntoIterator<Item = Observation>,
{
    let annealer = match start {
        Some(a) => a,
        None => cold_annealer(cfg)?,
    };
    let mut session = session_from(cfg, annealer)?;
    for obs in stream {
        session.step(obs)?;
    }
    Ok(session)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub observations: usize,
    pub k: usize,
    pub lambda: f64,
    pub converged: bool,
    pub events: usize,
    pub updates_during_correction: u64,
}

pub fn train(
    cfg: &RunConfig,
    stream: Option<&Path>,
    snapshot: Option<&Path>,
    out: &Path,
) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let observations = load_stream(cfg, stream)?;
    let start = match snapshot {
        Some(p) => Some(read_snapshot(p, Some(&hash))?.0.annealer),
        None => pretrain(cfg)?,
    };
    let session = train_on(cfg, observations.iter().cloned(), start)?;
    prepare_out(out)?;
    let snap = Snapshot::new(hash, session.annealer.clone(), session.twin.clone());
    write_snapshot(&out.join(MODEL_FILE), &snap)?;
    let rows: Vec<TrainLogRow> = session
        .log
        .iter()
        .filter(|r| (r.step - 1) % cfg.run.log_every as u64 == 0 || !r.trigger_flags.is_empty())
        .cloned()
        .collect();
    write_rows(&out.join(TRAIN_LOG_FILE), &rows, &LOG_HEADER)?;
    write_rows(&out.join(EVENTS_FILE), &session.events, &EVENT_HEADER)?;
    echo_config(cfg, out)?;
    let summary = TrainSummary {
        observations: observations.len(),
        k: session.annealer.state.k(),
        lambda: session.annealer.lambda(),
        converged: session.annealer.is_converged(),
        events: session.events.len(),
        updates_during_correction: session.updates_during_correction,
    };
    log::info!(
        "trained on {} observations: K={} lambda={:.4} converged={} events={}",
        summary.observations,
        summary.k,
        summary.lambda,
        summary.converged,
        summary.events
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub x: f64,
    pub y: f64,
    pub mode: u32,
    pub region: usize,
    pub rsrp: f64,
    pub sinr: f64,
}

pub fn grid_rows(twin: &HybridNdtModel, res: usize) -> CliResult<Vec<GridRow>> {
    Ok(twin
        .evaluate_grid(res, res)?
        .into_iter()
        .map(|g| GridRow {
            x: g.x[0],
            y: g.x[1],
            mode: g.mode,
            region: g.region,
            rsrp: g.q[0],
            sinr: g.q[1],
        })
        .collect())
}

pub fn evaluate(snapshot: &Path, grid_res: usize, out: &Path) -> CliResult<usize> {
    if grid_res == 0 {
        return Err(CliError::Validation("--grid-res: must be positive".into()));
    }
    let (snap, _) = read_snapshot(snapshot, None)?;
    let rows = grid_rows(&snap.twin, grid_res)?;
    prepare_out(out)?;
    write_csv(&out.join(GRID_FILE), &rows)?;
    Ok(rows.len())
}

pub fn baseline_on<I>(cfg: &RunConfig, stream: I) -> CliResult<BaselineSession>
where
    I: IntoIterator<Item = Observation>,
{
    let mut session = BaselineSession::new(&cfg.baseline, cfg.bounds(), cfg.run.mse_window)?;
    for obs in stream {
        session.step(&obs)?;
    }
    Ok(session)
}

pub fn baseline(cfg: &RunConfig, stream: Option<&Path>, out: &Path) -> CliResult<usize> {
    cfg.validate()?;
    let observations = load_stream(cfg, stream)?;
    let session = baseline_on(cfg, observations)?;
    prepare_out(out)?;
    let rows: Vec<TrainLogRow> = session
        .log
        .iter()
        .filter(|r| (r.step - 1) % cfg.run.log_every as u64 == 0)
        .cloned()
        .collect();
    write_rows(&out.join(BASELINE_LOG_FILE), &rows, &LOG_HEADER)?;
    echo_config(cfg, out)?;
    Ok(session.log.len())
}

fn read_log(path: &Path) -> CliResult<Vec<TrainLogRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Runtime(format!("{}: {other:?}", path.display())),
    })?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if header.iter().ne(LOG_HEADER) {
        return Err(CliError::Validation(format!(
            "{}: not a training log (header {:?})",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display()))))
        .collect()
}

/// Mean running MSE over the last fifth of the rows that carry one.
pub fn converged_mse(rows: &[TrainLogRow]) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.running_mse).collect();
    if vals.is_empty() {
        return None;
    }
    let tail = &vals[vals.len() - (vals.len() / 5).max(1)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// First step from which the running MSE stays at or below `threshold` for
/// the rest of the log.
pub fn observations_to(rows: &[TrainLogRow], threshold: f64) -> Option<u64> {
    let mut first = None;
    for r in rows {
        match r.running_mse {
            Some(m) if m <= threshold => {
                first.get_or_insert(r.step);
            }
            _ => first = None,
        }
    }
    first
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub files: Vec<PathBuf>,
    pub thresholds: Vec<Option<f64>>,
    pub to_threshold: Vec<Option<u64>>,
}

/// Aligns the running-MSE curves of several logs by step. The last row,
/// keyed `summary`, holds each log's observations-to-threshold; the threshold
/// is `threshold` when given, else twice the log's converged MSE.
pub fn compare(logs: &[PathBuf], threshold: Option<f64>, out: &Path) -> CliResult<CompareSummary> {
    if logs.is_empty() {
        return Err(CliError::Validation(
            "compare: at least one log is required".into(),
        ));
    }
    let all: Vec<Vec<TrainLogRow>> = logs.iter().map(|p| read_log(p)).collect::<CliResult<_>>()?;
    let mut by_step: BTreeMap<u64, (f64, Vec<Option<f64>>)> = BTreeMap::new();
    for (i, rows) in all.iter().enumerate() {
        for r in rows {
            let entry = by_step
                .entry(r.step)
                .or_insert_with(|| (r.t_sim, vec![None; all.len()]));
            entry.1[i] = r.running_mse;
        }
    }
    let thresholds: Vec<Option<f64>> = all
        .iter()
        .map(|rows| threshold.or_else(|| converged_mse(rows).map(|m| 2.0 * m)))
        .collect();
    let to_threshold: Vec<Option<u64>> = all
        .iter()
        .zip(&thresholds)
        .map(|(rows, t)| t.and_then(|t| observations_to(rows, t)))
        .collect();

    prepare_out(out)?;
    let path = out.join(COMPARE_FILE);
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut header = vec!["step".to_string(), "t_sim".to_string()];
    header.extend((0..logs.len()).map(|i| format!("mse_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (step, (t, vals)) in &by_step {
        let mut rec = vec![step.to_string(), t.to_string()];
        rec.extend(vals.iter().map(|v| num(*v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let mut rec = vec!["summary".to_string(), String::new()];
    rec.extend(
        to_threshold
            .iter()
            .map(|n| n.map(|n| n.to_string()).unwrap_or_default()),
    );
    w.write_record(&rec).map_err(csv_err)?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(CompareSummary {
        files: logs.to_vec(),
        thresholds,
        to_threshold,
    })
}
