//! Run reports: a plain-text rendering and a JSON one with the same content.

use std::fmt::Write as _;

use serde::Serialize;

use crate::bootstrap::Phase;
use crate::rendezvous::ProviderKind;
use crate::scenario::{NatSpec, ScenarioKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// Every peer reached Connected.
    Connected,
    /// The time limit passed first.
    Timeout,
    /// A check scenario found no violations.
    Passed,
    Failed,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Connected => "connected",
            Outcome::Timeout => "timeout",
            Outcome::Passed => "passed",
            Outcome::Failed => "failed",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Connected | Outcome::Passed => 0,
            Outcome::Timeout | Outcome::Failed => 1,
        }
    }
}

/// Phase timestamps in virtual seconds since the peer started.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PhaseRow {
    pub reflection: Option<f64>,
    pub rendezvous: Option<f64>,
    pub relaying: Option<f64>,
    pub connected: Option<f64>,
}

impl PhaseRow {
    pub fn columns(&self) -> [Option<f64>; 4] {
        [self.reflection, self.rendezvous, self.relaying, self.connected]
    }

    /// Column means over the rows that have a value in that column.
    pub fn mean<'a>(rows: impl IntoIterator<Item = &'a PhaseRow>) -> PhaseRow {
        let mut sums = [(0.0, 0usize); 4];
        for r in rows {
            for (s, v) in sums.iter_mut().zip(r.columns()) {
                if let Some(v) = v {
                    s.0 += v;
                    s.1 += 1;
                }
            }
        }
        let m = sums.map(|(s, n)| (n > 0).then(|| s / n as f64));
        PhaseRow { reflection: m[0], rendezvous: m[1], relaying: m[2], connected: m[3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeerRow {
    pub name: String,
    pub nat: NatSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub alive: bool,
    pub phase: Phase,
    pub times: PhaseRow,
    /// Round-trip of the first ping answered over the first relayed link.
    pub first_relay_rtt_ms: Option<f64>,
    /// Mean round-trip of the pings in that probe.
    pub relay_ping_mean_ms: Option<f64>,
    pub relay_pings_sent: u32,
    pub relay_pings_received: u32,
    /// Most address requests this peer sent in any 10 s window (presence only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_requests_per_10s: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PairRow {
    pub a: String,
    pub b: String,
    /// `direct`, `tunneled`, `relayed`, or `none`.
    pub outcome: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub provider: ProviderKind,
    pub peers: Vec<PeerRow>,
    pub mean: PhaseRow,
    pub pairs: Vec<PairRow>,
    pub all_connected: bool,
    /// Every peer's timestamps are non-decreasing in phase order.
    pub phases_ordered: bool,
    /// Virtual seconds from start until every peer was connected at once.
    pub all_connected_at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MatrixRow {
    pub a: NatSpec,
    pub b: NatSpec,
    pub connected: bool,
    pub direct: bool,
    /// Final link class between the two peers.
    pub link: String,
    pub relay_pings_sent: u32,
    pub relay_pings_received: u32,
}

impl MatrixRow {
    /// A 10-ping (or configured) relay exchange with no loss.
    pub fn relay_confirmed(&self, pings: u32) -> bool {
        self.relay_pings_sent >= pings && self.relay_pings_received == self.relay_pings_sent
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MatrixReport {
    pub relay_pings: u32,
    pub cells: Vec<MatrixRow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RingRow {
    pub nodes: usize,
    pub near_mismatches: usize,
    pub keys: usize,
    pub misrouted: usize,
    pub undelivered: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RingReport {
    pub rings: Vec<RingRow>,
    pub near_mismatches: usize,
    pub misrouted: usize,
    pub undelivered: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DhtRow {
    pub nodes: usize,
    pub values_found: usize,
    pub holders: usize,
    pub on_closest: bool,
    pub expired_in_time: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DhtReport {
    pub runs: Vec<DhtRow>,
    pub multi_value_violations: usize,
    pub expiry_violations: usize,
    pub placement_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PathingReport {
    pub hosts: usize,
    pub overlays_per_host: usize,
    pub sockets_per_host: usize,
    pub all_connected: bool,
    pub frames_sent: usize,
    pub frames_delivered: usize,
    pub cross_path: usize,
    pub cross_namespace: usize,
    pub wrong_destination: usize,
    pub duplicate_bindings: usize,
    pub binding_checks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub outcome: Outcome,
    /// Virtual seconds simulated.
    pub virtual_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapReport>,
    /// Same run with every peer on one federation server.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BootstrapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ring: Option<RingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dht: Option<DhtReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pathing: Option<PathingReport>,
    /// SHA-1 over every trace record, hex.
    pub trace_hash: String,
    pub trace_records: u64,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} ({}), seed {}", self.scenario, self.kind.as_str(), self.seed);
        let _ = writeln!(out, "outcome {} after {:.3} virtual s", self.outcome.as_str(), self.virtual_time);
        if let Some(b) = &self.bootstrap {
            out.push('\n');
            write_bootstrap(&mut out, b);
        }
        if let Some(b) = &self.baseline {
            let _ = writeln!(out, "\nsame-domain baseline");
            write_bootstrap(&mut out, b);
        }
        if let Some(m) = &self.matrix {
            out.push('\n');
            write_matrix(&mut out, m);
        }
        if let Some(r) = &self.ring {
            let _ = writeln!(out, "\n{:>6} {:>6} {:>14} {:>6} {:>10} {:>12}", "ring", "nodes", "near-mismatch", "keys", "misrouted", "undelivered");
            for (i, row) in r.rings.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:>6} {:>6} {:>14} {:>6} {:>10} {:>12}",
                    i, row.nodes, row.near_mismatches, row.keys, row.misrouted, row.undelivered
                );
            }
            let _ = writeln!(
                out,
                "{:>6} {:>6} {:>14} {:>6} {:>10} {:>12}",
                "total", "", r.near_mismatches, "", r.misrouted, r.undelivered
            );
        }
        if let Some(d) = &self.dht {
            let _ = writeln!(out, "\n{} runs", d.runs.len());
            let _ = writeln!(out, "multi-value violations {}", d.multi_value_violations);
            let _ = writeln!(out, "expiry violations      {}", d.expiry_violations);
            let _ = writeln!(out, "placement violations   {}", d.placement_violations);
        }
        if let Some(p) = &self.pathing {
            let _ = writeln!(out, "\nhosts {}, overlays per host {}, sockets per host {}", p.hosts, p.overlays_per_host, p.sockets_per_host);
            let _ = writeln!(out, "all connected          {}", p.all_connected);
            let _ = writeln!(out, "frames sent/delivered  {}/{}", p.frames_sent, p.frames_delivered);
            let _ = writeln!(out, "cross-path             {}", p.cross_path);
            let _ = writeln!(out, "cross-namespace        {}", p.cross_namespace);
            let _ = writeln!(out, "wrong destination      {}", p.wrong_destination);
            let _ = writeln!(out, "duplicate bindings     {} over {} checks", p.duplicate_bindings, p.binding_checks);
        }
        let _ = writeln!(out, "\ntrace {} ({} records)", self.trace_hash, self.trace_records);
        out
    }
}

/// Spread of the mean Connected time over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub runs: usize,
    pub connected_runs: usize,
    pub mean_connected: Option<f64>,
    pub stddev_connected: Option<f64>,
    pub min_connected: Option<f64>,
    pub max_connected: Option<f64>,
}

impl SeedSummary {
    pub fn from_reports(reports: &[Report]) -> SeedSummary {
        let xs: Vec<f64> =
            reports.iter().filter_map(|r| r.bootstrap.as_ref()).filter_map(|b| b.mean.connected).collect();
        let n = xs.len() as f64;
        let mean = (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / n);
        let stddev = mean.map(|m| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt());
        SeedSummary {
            runs: reports.len(),
            connected_runs: reports.iter().filter(|r| r.outcome == Outcome::Connected).count(),
            mean_connected: mean,
            stddev_connected: stddev,
            min_connected: xs.iter().copied().reduce(f64::min),
            max_connected: xs.iter().copied().reduce(f64::max),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "{} runs, {} all-connected; mean Connected {} s, stddev {}, min {}, max {}\n",
            self.runs,
            self.connected_runs,
            cell(self.mean_connected),
            cell(self.stddev_connected),
            cell(self.min_connected),
            cell(self.max_connected)
        )
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn write_bootstrap(out: &mut String, b: &BootstrapReport) {
    let name_w = b.peers.iter().map(|p| p.name.len()).max().unwrap_or(4).max(4);
    let nat_w = b.peers.iter().map(|p| p.nat.as_str().len()).max().unwrap_or(3).max(3);
    let _ = writeln!(
        out,
        "{:<name_w$}  {:<nat_w$}  {:>10}  {:>10}  {:>10}  {:>10}",
        "peer", "nat", "Reflection", "Rendezvous", "Relaying", "Connected"
    );
    for p in &b.peers {
        let c = p.times.columns().map(cell);
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<nat_w$}  {:>10}  {:>10}  {:>10}  {:>10}",
            p.name,
            p.nat.as_str(),
            c[0],
            c[1],
            c[2],
            c[3]
        );
    }
    let c = b.mean.columns().map(cell);
    let _ = writeln!(out, "{:<name_w$}  {:<nat_w$}  {:>10}  {:>10}  {:>10}  {:>10}", "mean", "", c[0], c[1], c[2], c[3]);

    let _ = writeln!(out, "\nrelay probe (ms)");
    let _ = writeln!(out, "{:<name_w$}  {:>15}  {:>15}  {:>9}", "peer", "first-relay-rtt", "10-ping-mean", "received");
    for p in &b.peers {
        let rtt = p.first_relay_rtt_ms.map_or_else(|| "-".into(), |v| format!("{v:.3}"));
        let mean = p.relay_ping_mean_ms.map_or_else(|| "-".into(), |v| format!("{v:.3}"));
        let recv = format!("{}/{}", p.relay_pings_received, p.relay_pings_sent);
        let _ = writeln!(out, "{:<name_w$}  {:>15}  {:>15}  {:>9}", p.name, rtt, mean, recv);
    }
    if b.peers.iter().any(|p| p.max_requests_per_10s.is_some()) {
        let _ = writeln!(out, "\naddress requests, max per 10 s window");
        for p in &b.peers {
            let _ = writeln!(out, "{:<name_w$}  {}", p.name, p.max_requests_per_10s.unwrap_or(0));
        }
    }

    let _ = writeln!(out, "\npairs");
    let names: Vec<&str> = b.peers.iter().map(|p| p.name.as_str()).collect();
    let w = names.iter().map(|n| n.len()).max().unwrap_or(2).max(8);
    let _ = write!(out, "{:<name_w$}", "");
    for n in &names {
        let _ = write!(out, "  {n:<w$}");
    }
    out.push('\n');
    for a in &names {
        let _ = write!(out, "{a:<name_w$}");
        for b2 in &names {
            let v = if a == b2 {
                "-"
            } else {
                b.pairs
                    .iter()
                    .find(|p| (p.a == *a && p.b == *b2) || (p.a == *b2 && p.b == *a))
                    .map_or("none", |p| p.outcome.as_str())
            };
            let _ = write!(out, "  {v:<w$}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\nall connected {}, phases ordered {}", b.all_connected, b.phases_ordered);
}

fn write_matrix(out: &mut String, m: &MatrixReport) {
    let specs = NatSpec::ALL;
    let w = specs.iter().map(|s| s.as_str().len()).max().unwrap_or(6);
    let _ = writeln!(out, "direct / relay ({} pings, zero loss)", m.relay_pings);
    let _ = write!(out, "{:<w$}", "");
    for s in specs {
        let _ = write!(out, "  {:<w$}", s.as_str());
    }
    out.push('\n');
    for a in specs {
        let _ = write!(out, "{:<w$}", a.as_str());
        for b in specs {
            let v = match m.cells.iter().find(|c| c.a == a && c.b == b) {
                Some(c) => {
                    let direct = if c.direct { "direct" } else { "no" };
                    let relay = if c.relay_confirmed(m.relay_pings) { "relay" } else { "-" };
                    format!("{direct}/{relay}")
                }
                None => "?".into(),
            };
            let _ = write!(out, "  {v:<w$}");
        }
        out.push('\n');
    }
}
