//! Ad-hoc calibration probe: prints achieved values for the reference
//! scenarios. Run with --nocapture; promoted assertions live in the
//! acceptance suite.

use ibcsim::presets;
use ibcsim::runner::build_report;
use ibcsim::sim::run_scenario;

#[test]
#[ignore]
fn probe_breakdown() {
    let run = run_scenario(presets::breakdown_burst());
    let r = build_report(&run);
    println!("committed={} completed={}", r.committed_transfers, r.status.completed);
    if let Some(b) = &r.breakdown {
        println!(
            "total={:.1}s phases T/R/A = {:.1}/{:.1}/{:.1}s ({:.1}/{:.1}/{:.1}%) pulls={:.1}% (t={:.1}s r={:.1}s) first={:.1} last={:.1}",
            b.total_secs, b.transfer_phase_secs, b.recv_phase_secs, b.ack_phase_secs,
            b.transfer_phase_pct, b.recv_phase_pct, b.ack_phase_pct,
            b.pull_pct, b.transfer_pull_secs, b.recv_pull_secs,
            b.first_completion_secs, b.last_completion_secs,
        );
    }
    println!("events={} horizon={:.0}s", r.events_dispatched, r.horizon_secs);
}

#[test]
#[ignore]
fn probe_spread() {
    for k in [1u64, 2, 4, 8, 16, 32, 64] {
        let run = run_scenario(presets::spread_burst(k));
        let r = build_report(&run);
        let last = r.breakdown.as_ref().map(|b| b.last_completion_secs).unwrap_or(0.0);
        println!(
            "spread {k:>2}: completed={} latency={last:.1}s (events {})",
            r.status.completed, r.events_dispatched
        );
    }
}

#[test]
#[ignore]
fn probe_throughput() {
    for rtt in [200u64, 0] {
        for rate in (20..=300).step_by(20) {
            let run = run_scenario(presets::relayer_throughput(rate, rtt, 1));
            let r = build_report(&run);
            println!(
                "rate {rate:>3} rtt {rtt:>3}: tfps={:.1} completed={} committed={} horizon={:.0}s",
                r.throughput_tfps, r.status.completed, r.committed_transfers, r.horizon_secs
            );
        }
        println!();
    }
}

#[test]
#[ignore]
fn probe_two_relayers() {
    for rate in (20..=300).step_by(20) {
        let run = run_scenario(presets::relayer_throughput(rate, 200, 2));
        let r = build_report(&run);
        let redundant: u64 = r.relayer_errors.iter().map(|e| e.redundant_packet).sum();
        println!(
            "2r rate {rate:>3}: tfps={:.1} completed={} redundant={} horizon={:.0}s",
            r.throughput_tfps, r.status.completed, redundant, r.horizon_secs
        );
    }
}

#[test]
#[ignore]
fn probe_commit_only() {
    for rate in [250u64, 500, 1000, 2000, 3000, 4000, 6000, 9000, 10000, 11000, 12000, 13000, 14000] {
        let run = run_scenario(presets::commit_only(rate));
        let r = build_report(&run);
        let last_loaded = run.blocks[0]
            .iter()
            .filter(|b| b.transfer_msgs > 0)
            .map(|b| b.timestamp_ms)
            .max()
            .unwrap_or(1);
        let tput = r.committed_transfers as f64 / (last_loaded as f64 / 1000.0);
        let frac = r.workload.submitted as f64 / r.workload.requested as f64;
        let commit_frac = r.committed_transfers as f64 / r.workload.submitted.max(1) as f64;
        println!(
            "commit {rate:>5}: requested={} submitted={:.1}% committed-of-submitted={:.1}% tput={tput:.0}/s events={}",
            r.workload.requested, 100.0 * frac, 100.0 * commit_frac, r.events_dispatched
        );
    }
}

#[test]
#[ignore]
fn probe_overflow() {
    for clear in [0u64, 4] {
        let run = run_scenario(presets::overflow_block(clear));
        let r = build_report(&run);
        println!(
            "overflow clear={clear}: committed={} completed={} timed_out={} stuck={} initiated={} partial={} errors={:?}",
            r.committed_transfers, r.status.completed, r.status.timed_out, r.status.stuck,
            r.status.initiated, r.status.partially_completed, r.relayer_errors,
        );
    }
}
