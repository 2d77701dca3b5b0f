//! Run orchestration: single runs, sweeps with repetitions, report
//! documents and run-directory artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    build_lifecycles, classify, latency_breakdown, throughput, PhaseBreakdown, StatusHistogram,
};
use crate::config::{Scenario, SweepSpec};
use crate::relayer::RelayErrorCounters;
use crate::sim::{run_scenario, RunResult};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Machine-readable per-run report document.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario_name: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub horizon_secs: f64,
    pub end_secs: f64,
    pub requested_transfers: u64,
    pub committed_transfers: u64,
    pub throughput_tfps: f64,
    pub status: StatusHistogram,
    pub breakdown: Option<PhaseBreakdown>,
    pub relayer_errors: Vec<RelayErrorCounters>,
    pub workload: crate::workload::WorkloadCounters,
    pub ledger_audits: Vec<crate::ibc::LedgerAudit>,
    pub acked_on_source: u64,
    pub mean_block_interval_ms: [f64; 2],
    pub events_dispatched: u64,
    pub trace_hash: Option<String>,
}

pub fn build_report(run: &RunResult) -> Report {
    let set = build_lifecycles(run);
    let status = classify(&set);
    let tfps = throughput(&set, run.horizon_time).unwrap_or(0.0);
    let breakdown = latency_breakdown(&set);
    let mean_interval = |blocks: &[crate::chain::BlockRecord]| -> f64 {
        let loaded: Vec<u64> =
            blocks.iter().skip(1).map(|b| b.interval_ms).collect();
        if loaded.is_empty() {
            0.0
        } else {
            loaded.iter().sum::<u64>() as f64 / loaded.len() as f64
        }
    };
    Report {
        scenario_name: run.scenario.name.clone(),
        scenario_digest: run.scenario.digest(),
        seed: run.scenario.seed,
        horizon_secs: run.horizon_time.as_secs_f64(),
        end_secs: run.end_time.as_secs_f64(),
        requested_transfers: run.workload_counters.requested,
        committed_transfers: run.packets.len() as u64,
        throughput_tfps: tfps,
        status,
        breakdown,
        relayer_errors: run.relayer_errors.clone(),
        workload: run.workload_counters.clone(),
        ledger_audits: run.audits.clone(),
        acked_on_source: run.acked_on_source,
        mean_block_interval_ms: [
            mean_interval(&run.blocks[0]),
            mean_interval(&run.blocks[1]),
        ],
        events_dispatched: run.events_dispatched,
        trace_hash: run.trace_hash.clone(),
    }
}

/// Execute one scenario and write its artifacts into `out_dir`:
/// scenario echo, line-delimited event logs, the report document and the
/// tabular series files.
pub fn run_to_dir(scenario: Scenario, out_dir: &Path) -> Result<Report, RunnerError> {
    scenario.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let run = run_scenario(scenario);
    let report = build_report(&run);
    write_artifacts(&run, &report, out_dir)?;
    Ok(report)
}

fn write_artifacts(run: &RunResult, report: &Report, dir: &Path) -> Result<(), RunnerError> {
    std::fs::write(dir.join("scenario.toml"), run.scenario.to_toml_string())?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;

    let mut relay = std::io::BufWriter::new(std::fs::File::create(dir.join("relayer.log"))?);
    for ev in &run.relay_log {
        let err = ev.error.map(|e| format!("{e:?}")).unwrap_or_default();
        writeln!(
            relay,
            "{} {} {} {} {} {} {}",
            ev.time_ms,
            ev.relayer,
            ev.step.label(),
            ev.seq,
            ev.tx_hash,
            if ev.ok { "ok" } else { "err" },
            err
        )?;
    }

    let mut wl = std::io::BufWriter::new(std::fs::File::create(dir.join("workload.log"))?);
    for ev in &run.workload_log {
        writeln!(
            wl,
            "{} {} {} {} {:?}",
            ev.time_ms, ev.account, ev.tx_hash, ev.msgs, ev.outcome
        )?;
    }

    for (i, blocks) in run.blocks.iter().enumerate() {
        let name = if i == 0 { "chain_source.log" } else { "chain_dest.log" };
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        for b in blocks {
            writeln!(
                f,
                "{} {} {} {} {} {} {} {} {}",
                b.height,
                b.timestamp_ms,
                b.tx_count,
                b.transfer_msgs,
                b.recv_msgs,
                b.ack_msgs,
                b.timeout_msgs,
                b.failed_msgs,
                b.interval_ms
            )?;
        }
    }

    // tabular series for plotting
    if let Some(b) = &report.breakdown {
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(dir.join("completion_curve.csv"))?);
        writeln!(f, "elapsed_secs,completed")?;
        for (t, c) in &b.completion_curve {
            writeln!(f, "{t:.3},{c}")?;
        }
    }
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(dir.join("block_intervals.csv"))?);
    writeln!(f, "chain,height,timestamp_ms,interval_ms,msgs")?;
    for (i, blocks) in run.blocks.iter().enumerate() {
        let chain = if i == 0 { "source" } else { "dest" };
        for b in blocks {
            let msgs = b.transfer_msgs + b.recv_msgs + b.ack_msgs + b.timeout_msgs;
            writeln!(f, "{chain},{},{},{},{msgs}", b.height, b.timestamp_ms, b.interval_ms)?;
        }
    }

    if let Some(trace) = &run.trace_text {
        std::fs::write(dir.join("trace.log"), trace)?;
    }
    Ok(())
}

/// Aggregate of repeated runs at one sweep value.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: u64,
    pub mean_tfps: f64,
    pub median_tfps: f64,
    pub q1_tfps: f64,
    pub q3_tfps: f64,
    pub mean_completed: f64,
    pub mean_total_latency_secs: f64,
    pub redundant_errors_mean: f64,
    pub submitted_fraction_mean: f64,
    pub reports: Vec<Report>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let pick = |q: f64| -> f64 {
        if sorted.is_empty() {
            return 0.0;
        }
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi {
            sorted[lo]
        } else {
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    };
    (pick(0.25), pick(0.5), pick(0.75))
}

/// Run a sweep: every (value, repetition) cell is an independent simulation;
/// cells execute in parallel worker threads.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport, RunnerError> {
    spec.validate()?;
    let cells: Vec<(u64, u32)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.repetitions).map(move |r| (v, r)))
        .collect();
    let reports: Vec<(u64, Report)> = cells
        .par_iter()
        .map(|&(value, rep)| {
            let sc = spec.scenario_for(value, rep);
            let run = run_scenario(sc);
            (value, build_report(&run))
        })
        .collect();

    let mut points = Vec::new();
    for &value in &spec.values {
        let mine: Vec<Report> =
            reports.iter().filter(|(v, _)| *v == value).map(|(_, r)| r.clone()).collect();
        let mut tfps: Vec<f64> = mine.iter().map(|r| r.throughput_tfps).collect();
        tfps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (q1, median, q3) = quartiles(&tfps);
        let mean = tfps.iter().sum::<f64>() / tfps.len() as f64;
        let mean_completed =
            mine.iter().map(|r| r.status.completed as f64).sum::<f64>() / mine.len() as f64;
        let mean_latency = mine
            .iter()
            .filter_map(|r| r.breakdown.as_ref().map(|b| b.last_completion_secs))
            .sum::<f64>()
            / mine.len() as f64;
        let redundant = mine
            .iter()
            .map(|r| {
                r.relayer_errors.iter().map(|e| e.redundant_packet).sum::<u64>() as f64
            })
            .sum::<f64>()
            / mine.len() as f64;
        let submitted_fraction = mine
            .iter()
            .map(|r| {
                if r.workload.requested == 0 {
                    0.0
                } else {
                    r.workload.submitted as f64 / r.workload.requested as f64
                }
            })
            .sum::<f64>()
            / mine.len() as f64;
        points.push(SweepPoint {
            value,
            mean_tfps: mean,
            median_tfps: median,
            q1_tfps: q1,
            q3_tfps: q3,
            mean_completed,
            mean_total_latency_secs: mean_latency,
            redundant_errors_mean: redundant,
            submitted_fraction_mean: submitted_fraction,
            reports: mine,
        });
    }
    Ok(SweepReport { axis: format!("{:?}", spec.axis), points })
}

/// Write the sweep aggregate plus one run directory per cell.
pub fn sweep_to_dir(spec: &SweepSpec, out_dir: &Path) -> Result<SweepReport, RunnerError> {
    std::fs::create_dir_all(out_dir)?;
    let report = run_sweep(spec)?;
    std::fs::write(out_dir.join("sweep.json"), serde_json::to_string_pretty(&report)?)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("sweep.csv"))?);
    writeln!(
        f,
        "value,mean_tfps,median_tfps,q1_tfps,q3_tfps,mean_completed,mean_total_latency_secs,redundant_errors_mean,submitted_fraction_mean"
    )?;
    for p in &report.points {
        writeln!(
            f,
            "{},{:.3},{:.3},{:.3},{:.3},{:.1},{:.3},{:.1},{:.4}",
            p.value,
            p.mean_tfps,
            p.median_tfps,
            p.q1_tfps,
            p.q3_tfps,
            p.mean_completed,
            p.mean_total_latency_secs,
            p.redundant_errors_mean,
            p.submitted_fraction_mean
        )?;
    }
    for p in &report.points {
        for (i, r) in p.reports.iter().enumerate() {
            let dir: PathBuf = out_dir.join(format!("value-{}-rep-{}", p.value, i));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(r)?)?;
        }
    }
    Ok(report)
}
