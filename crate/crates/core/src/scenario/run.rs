use sha1::{Digest, Sha1};

use crate::report::{Outcome, Report};
use crate::rendezvous::ProviderKind;

use super::{run_bootstrap_scenario, run_dht, run_matrix, run_pathing, run_ring, CheckRun, Scenario, ScenarioKind};

/// Command-line overrides of the scenario file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub max_virtual_time: Option<f64>,
    /// Keep every trace line, not just the running hash.
    pub keep_trace: bool,
}

pub struct RunOutput {
    pub report: Report,
    /// Empty unless `keep_trace` was set.
    pub trace_lines: Vec<String>,
}

/// One hash for several worlds: SHA-1 over their hashes, one per line.
fn combine(hashes: &[String]) -> String {
    match hashes {
        [one] => one.clone(),
        many => {
            let mut h = Sha1::new();
            for x in many {
                h.update(x.as_bytes());
                h.update(b"\n");
            }
            hex::encode(h.finalize())
        }
    }
}

fn check_report<R, O>(sc: &Scenario, seed: u64, run: &CheckRun<R, O>, ok: bool) -> Report {
    Report {
        scenario: sc.name.clone(),
        kind: sc.kind,
        seed,
        outcome: if ok { Outcome::Passed } else { Outcome::Failed },
        virtual_time: run.virtual_time,
        bootstrap: None,
        baseline: None,
        matrix: None,
        ring: None,
        dht: None,
        pathing: None,
        trace_hash: combine(&run.trace_hashes),
        trace_records: run.trace_records,
    }
}

pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> RunOutput {
    let seed = opts.seed.unwrap_or(sc.seed);
    let limit = opts.max_virtual_time.unwrap_or(sc.max_virtual_time);
    let keep = opts.keep_trace;
    match sc.kind {
        ScenarioKind::Bootstrap => {
            let plan = sc.peer_plan();
            let main = run_bootstrap_scenario(sc, &plan, seed, limit, keep);
            let mut hashes = vec![main.world.net().trace().hash_hex()];
            let mut records = main.world.net().trace().len();
            let mut lines = main.world.net().trace().lines().to_vec();
            let baseline = (sc.federation.baseline && sc.provider == ProviderKind::Presence).then(|| {
                let first = sc.federation.server_domains(sc.provider)[0].clone();
                let same: Vec<_> = plan.iter().cloned().map(|mut p| {
                    p.domain = Some(first.clone());
                    p
                }).collect();
                let b = run_bootstrap_scenario(sc, &same, seed, limit, keep);
                let t = b.world.net().trace();
                hashes.push(t.hash_hex());
                records += t.len();
                if keep {
                    lines.push("# same-domain baseline".into());
                    lines.extend(t.lines().iter().cloned());
                }
                b.report
            });
            let connected = main.report.all_connected && baseline.as_ref().is_none_or(|b| b.all_connected);
            let report = Report {
                scenario: sc.name.clone(),
                kind: sc.kind,
                seed,
                outcome: if connected { Outcome::Connected } else { Outcome::Timeout },
                virtual_time: (main.end - main.start).as_secs_f64(),
                bootstrap: Some(main.report),
                baseline,
                matrix: None,
                ring: None,
                dht: None,
                pathing: None,
                trace_hash: combine(&hashes),
                trace_records: records,
            };
            RunOutput { report, trace_lines: lines }
        }
        ScenarioKind::NatMatrix => {
            let run = run_matrix(sc, seed, keep);
            let pings = run.report.relay_pings;
            let ok = run.report.cells.iter().all(|c| c.connected && (c.direct || c.relay_confirmed(pings)));
            let mut report = check_report(sc, seed, &run, ok);
            report.matrix = Some(run.report);
            RunOutput { report, trace_lines: run.trace_lines }
        }
        ScenarioKind::Ring => {
            let run = run_ring(sc, seed, keep);
            let r = &run.report;
            let ok = r.near_mismatches + r.misrouted + r.undelivered == 0;
            let mut report = check_report(sc, seed, &run, ok);
            report.ring = Some(run.report);
            RunOutput { report, trace_lines: run.trace_lines }
        }
        ScenarioKind::Dht => {
            let run = run_dht(sc, seed, keep);
            let r = &run.report;
            let ok = r.multi_value_violations + r.expiry_violations + r.placement_violations == 0;
            let mut report = check_report(sc, seed, &run, ok);
            report.dht = Some(run.report);
            RunOutput { report, trace_lines: run.trace_lines }
        }
        ScenarioKind::Pathing => {
            let run = run_pathing(sc, seed, keep);
            let p = &run.report;
            let ok = p.all_connected
                && p.sockets_per_host == 1
                && p.frames_delivered >= sc.pathing.frames
                && p.cross_path + p.cross_namespace + p.wrong_destination + p.duplicate_bindings == 0;
            let mut report = check_report(sc, seed, &run, ok);
            report.pathing = Some(run.report);
            RunOutput { report, trace_lines: run.trace_lines }
        }
    }
}
