//! Declarative scenarios: TOML files, validated in full before anything runs.
//!
//! Every key is optional except `schema` and `name`. Defaults:
//!
//! | key | default |
//! |-----|---------|
//! | `kind` | `"bootstrap"` |
//! | `seed` | `0` |
//! | `max_virtual_time` | `300.0` s, counted from the moment the peers start |
//! | `stop` | `"all-connected"` (or `"max-time"`) |
//! | `provider` | `"dht"` |
//! | `namespace` | `{ service = "svc", version = "1" }` |
//! | `public.size` | `32` public overlay nodes |
//! | `public.networks` | `4`: public nodes are spread over networks `1..=networks` |
//! | `public.seeds` | `3`: the first nodes, which every later node joins through |
//! | `public.warmup` | `60.0` s before the peers start |
//! | `public.nat_mix` | `[]`: NAT types for the last public nodes |
//! | `public.k` | `2` near links per side |
//! | `peers` | `[]`; each `[[peers]]` has `nat` (`"public"` or a NAT type), `count = 1`, `network = 0`, `domain` (presence only; first server when absent), `start = 0.0` s |
//! | `federation.servers` | `["alpha.example", "beta.example"]` with presence, else `[]` |
//! | `federation.client_latency_ms` | `25` between peers and every server |
//! | `federation.factor` | `3`: server-to-server latency is `factor * client_latency_ms` |
//! | `federation.roster` | `"clique"`: every peer subscribes to every other |
//! | `federation.baseline` | `false`: also run with every peer on the first server and report it |
//! | `timers.*` | see [`TimerSpec`] |
//! | `latency.*` | see [`LatencySpec`] |
//! | `churn` | `[]`; each `[[churn]]` kills the named peers at `at` s |
//! | `matrix`, `ring`, `dht`, `pathing` | parameters of the matching `kind` |

mod bootstrap;
mod checks;
mod run;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::identifiers::Namespace;
use crate::overlay::OverlayConfig;
use crate::rendezvous::presence::PresenceProviderConfig;
use crate::rendezvous::{DhtProviderConfig, ProviderKind};
use crate::simnet::{Attachment, NatType, NetConfig, NetworkId};

pub use bootstrap::{run_bootstrap_scenario, BootstrapRun};
pub use run::{run_scenario, RunOptions, RunOutput};
pub use checks::{run_dht, run_matrix, run_pathing, run_ring, CheckRun, DhtObservation, MatrixCell, RingObservation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    #[default]
    Bootstrap,
    NatMatrix,
    Ring,
    Dht,
    Pathing,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Bootstrap => "bootstrap",
            ScenarioKind::NatMatrix => "nat-matrix",
            ScenarioKind::Ring => "ring",
            ScenarioKind::Dht => "dht",
            ScenarioKind::Pathing => "pathing",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCondition {
    #[default]
    AllConnected,
    MaxTime,
}

/// Where a host sits: on the open network or behind its own NAT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NatSpec {
    Public,
    FullCone,
    RestrictedCone,
    PortRestrictedCone,
    Symmetric,
}

impl NatSpec {
    pub const ALL: [NatSpec; 5] =
        [NatSpec::Public, NatSpec::FullCone, NatSpec::RestrictedCone, NatSpec::PortRestrictedCone, NatSpec::Symmetric];

    pub fn nat_type(self) -> Option<NatType> {
        match self {
            NatSpec::Public => None,
            NatSpec::FullCone => Some(NatType::FullCone),
            NatSpec::RestrictedCone => Some(NatType::RestrictedCone),
            NatSpec::PortRestrictedCone => Some(NatType::PortRestrictedCone),
            NatSpec::Symmetric => Some(NatType::Symmetric),
        }
    }

    pub fn attachment(self) -> Attachment {
        self.nat_type().map_or(Attachment::Public, Attachment::NewNat)
    }

    pub fn as_str(self) -> &'static str {
        self.nat_type().map_or("public", NatType::as_str)
    }
}

impl From<NatType> for NatSpec {
    fn from(t: NatType) -> Self {
        match t {
            NatType::FullCone => NatSpec::FullCone,
            NatType::RestrictedCone => NatSpec::RestrictedCone,
            NatType::PortRestrictedCone => NatSpec::PortRestrictedCone,
            NatType::Symmetric => NatSpec::Symmetric,
        }
    }
}

impl fmt::Display for NatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub kind: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_virtual_time")]
    pub max_virtual_time: f64,
    #[serde(default)]
    pub stop: StopCondition,
    #[serde(default = "default_provider")]
    pub provider: ProviderKind,
    #[serde(default)]
    pub namespace: NamespaceSpec,
    #[serde(default)]
    pub public: PublicSpec,
    #[serde(default)]
    pub peers: Vec<PeerSpec>,
    #[serde(default)]
    pub federation: FederationSpec,
    #[serde(default)]
    pub timers: TimerSpec,
    #[serde(default)]
    pub latency: LatencySpec,
    #[serde(default)]
    pub churn: Vec<ChurnSpec>,
    #[serde(default)]
    pub matrix: MatrixSpec,
    #[serde(default)]
    pub ring: RingSpec,
    #[serde(default)]
    pub dht: DhtSpec,
    #[serde(default)]
    pub pathing: PathingSpec,
}

fn default_max_virtual_time() -> f64 {
    300.0
}

fn default_provider() -> ProviderKind {
    ProviderKind::Dht
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NamespaceSpec {
    pub service: String,
    pub version: String,
}

impl Default for NamespaceSpec {
    fn default() -> Self {
        NamespaceSpec { service: "svc".into(), version: "1".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PublicSpec {
    pub size: usize,
    pub networks: u16,
    pub seeds: usize,
    pub warmup: f64,
    pub nat_mix: Vec<NatType>,
    pub k: usize,
}

impl Default for PublicSpec {
    fn default() -> Self {
        PublicSpec { size: 32, networks: 4, seeds: 3, warmup: 60.0, nat_mix: Vec::new(), k: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerSpec {
    pub nat: NatSpec,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub network: u16,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub start: f64,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RosterSpec {
    #[default]
    Clique,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSpec {
    /// `None` picks two servers with the presence provider and none otherwise.
    pub servers: Option<Vec<String>>,
    pub client_latency_ms: u64,
    pub factor: u32,
    pub roster: RosterSpec,
    pub baseline: bool,
}

impl Default for FederationSpec {
    fn default() -> Self {
        FederationSpec { servers: None, client_latency_ms: 25, factor: 3, roster: RosterSpec::Clique, baseline: false }
    }
}

impl FederationSpec {
    pub fn server_domains(&self, provider: ProviderKind) -> Vec<String> {
        match (&self.servers, provider) {
            (Some(s), _) => s.clone(),
            (None, ProviderKind::Presence) => vec!["alpha.example".into(), "beta.example".into()],
            (None, ProviderKind::Dht) => Vec::new(),
        }
    }
}

/// Protocol timers, in seconds unless the name says otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimerSpec {
    /// Connectivity-check ping timeout.
    pub ping_timeout: f64,
    /// Pings in the probe over the first relayed link.
    pub relay_pings: u32,
    pub handshake_timeout: f64,
    pub handshake_retries: u32,
    pub punch_deadline: f64,
    pub punch_probe_interval: f64,
    pub link_ping_period: f64,
    pub link_ping_misses: u32,
    pub stabilize_period: f64,
    /// Gap between ConnectToMe retries for the same remote.
    pub ctm_retry: f64,
    /// Near links per side in each private overlay.
    pub private_k: usize,
    pub dht_ttl: u32,
    pub dht_query_period: f64,
    pub presence_request_period: f64,
    pub presence_request_fanout: usize,
}

impl Default for TimerSpec {
    fn default() -> Self {
        let o = OverlayConfig::default();
        let d = DhtProviderConfig::default();
        let p = PresenceProviderConfig::default();
        TimerSpec {
            ping_timeout: 3.0,
            relay_pings: 10,
            handshake_timeout: o.handshake_timeout.as_secs_f64(),
            handshake_retries: o.handshake_retries,
            punch_deadline: o.punch_deadline.as_secs_f64(),
            punch_probe_interval: o.probe_interval.as_secs_f64(),
            link_ping_period: o.ping_period.as_secs_f64(),
            link_ping_misses: o.ping_misses,
            stabilize_period: o.stabilize_period.as_secs_f64(),
            ctm_retry: o.ctm_retry.as_secs_f64(),
            private_k: 16,
            dht_ttl: d.ttl_secs,
            dht_query_period: d.query_period.as_secs_f64(),
            presence_request_period: p.request_period.as_secs_f64(),
            presence_request_fanout: p.request_fanout,
        }
    }
}

impl TimerSpec {
    pub fn overlay(&self, k: usize) -> OverlayConfig {
        OverlayConfig {
            k,
            handshake_timeout: secs(self.handshake_timeout),
            handshake_retries: self.handshake_retries,
            probe_interval: secs(self.punch_probe_interval),
            punch_deadline: secs(self.punch_deadline),
            ping_period: secs(self.link_ping_period),
            ping_misses: self.link_ping_misses,
            stabilize_period: secs(self.stabilize_period),
            ctm_retry: secs(self.ctm_retry),
            ..OverlayConfig::default()
        }
    }

    pub fn dht_provider(&self) -> DhtProviderConfig {
        DhtProviderConfig { ttl_secs: self.dht_ttl, query_period: secs(self.dht_query_period) }
    }

    pub fn presence_provider(&self) -> PresenceProviderConfig {
        PresenceProviderConfig {
            request_period: secs(self.presence_request_period),
            request_fanout: self.presence_request_fanout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyOverride {
    pub a: u16,
    pub b: u16,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencySpec {
    pub same_network_ms: f64,
    pub cross_network_ms: f64,
    pub lan_ms: f64,
    pub jitter_ms: f64,
    pub loss: f64,
    pub mapping_ttl: f64,
    pub overrides: Vec<LatencyOverride>,
}

impl Default for LatencySpec {
    fn default() -> Self {
        let n = NetConfig::default();
        LatencySpec {
            same_network_ms: ms(n.same_network_latency),
            cross_network_ms: ms(n.cross_network_latency),
            lan_ms: ms(n.lan_latency),
            jitter_ms: 0.0,
            loss: 0.0,
            mapping_ttl: n.mapping_ttl.as_secs_f64(),
            overrides: Vec::new(),
        }
    }
}

impl LatencySpec {
    pub fn net_config(&self, seed: u64, record_trace: bool) -> NetConfig {
        let mut c = NetConfig {
            same_network_latency: millis(self.same_network_ms),
            cross_network_latency: millis(self.cross_network_ms),
            lan_latency: millis(self.lan_ms),
            jitter: millis(self.jitter_ms),
            loss: self.loss,
            mapping_ttl: secs(self.mapping_ttl),
            seed,
            record_trace,
            ..NetConfig::default()
        };
        for o in &self.overrides {
            c.set_latency(NetworkId(o.a), NetworkId(o.b), millis(o.ms));
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnSpec {
    /// Seconds after the peers start.
    pub at: f64,
    /// Peer names (`p1`, `p2`, ...) to take off the network.
    pub kill: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixSpec {
    /// Per-cell limit in seconds.
    pub cell_time: f64,
    /// Extra time after both peers connect, so relay probes finish.
    pub settle: f64,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec { cell_time: 180.0, settle: 15.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingSpec {
    pub rings: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub keys: usize,
    /// Seconds between the last join and the near-list check.
    pub settle: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        RingSpec { rings: 100, min_nodes: 2, max_nodes: 64, keys: 1000, settle: 120.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DhtSpec {
    pub runs: usize,
    pub nodes: usize,
    pub ttl: u32,
    pub settle: f64,
}

impl Default for DhtSpec {
    fn default() -> Self {
        DhtSpec { runs: 100, nodes: 24, ttl: 30, settle: 90.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathingSpec {
    /// Hosts running the public overlay plus every private namespace.
    pub hosts: Vec<NatSpec>,
    pub namespaces: Vec<String>,
    /// Minimum audited frames to deliver.
    pub frames: usize,
    /// Frames each host sends per overlay per round.
    pub burst: usize,
}

impl Default for PathingSpec {
    fn default() -> Self {
        PathingSpec {
            hosts: vec![
                NatSpec::Public,
                NatSpec::FullCone,
                NatSpec::RestrictedCone,
                NatSpec::PortRestrictedCone,
                NatSpec::Symmetric,
                NatSpec::PortRestrictedCone,
            ],
            namespaces: vec!["alpha".into(), "beta".into()],
            frames: 10_000,
            burst: 10,
        }
    }
}

pub(crate) fn secs(s: f64) -> Duration {
    Duration::from_secs_f64(s.max(0.0))
}

fn millis(m: f64) -> Duration {
    Duration::from_secs_f64(m.max(0.0) / 1000.0)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// A load failure with the 1-based line it refers to.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{path}:{line}: {message}")]
pub struct ScenarioError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

/// A name for each peer in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct PeerPlan {
    pub name: String,
    pub nat: NatSpec,
    pub network: u16,
    pub domain: Option<String>,
    pub start: f64,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let label = path.display().to_string();
        let src = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError { path: label.clone(), line: 0, message: e.to_string() })?;
        Scenario::parse(&src, &label)
    }

    pub fn parse(src: &str, label: &str) -> Result<Scenario, ScenarioError> {
        let err = |line: usize, message: String| ScenarioError { path: label.to_string(), line, message };
        let sc: Scenario = toml::from_str(src).map_err(|e| {
            let line = e.span().map_or(1, |s| line_at(src, s.start));
            err(line, e.message().to_string())
        })?;
        sc.validate().map_err(|(loc, message)| err(loc.find(src), message))?;
        Ok(sc)
    }

    pub fn namespace(&self) -> Namespace {
        Namespace::new(&self.namespace.service, &self.namespace.version).expect("validated namespace")
    }

    /// Expands `[[peers]]` entries into named peers `p1..pN`.
    pub fn peer_plan(&self) -> Vec<PeerPlan> {
        let mut out = Vec::new();
        for spec in &self.peers {
            for _ in 0..spec.count {
                out.push(PeerPlan {
                    name: format!("p{}", out.len() + 1),
                    nat: spec.nat,
                    network: spec.network,
                    domain: spec.domain.clone(),
                    start: spec.start,
                });
            }
        }
        out
    }

    fn validate(&self) -> Result<(), (Loc, String)> {
        let top = |key: &'static str| Loc { table: None, index: 0, key };
        if self.schema != SCHEMA_VERSION {
            return Err((top("schema"), format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if self.name.trim().is_empty() {
            return Err((top("name"), "name must not be empty".into()));
        }
        if !(self.max_virtual_time.is_finite() && self.max_virtual_time > 0.0) {
            return Err((top("max_virtual_time"), "max_virtual_time must be a positive number of seconds".into()));
        }
        if let Err(e) = Namespace::new(&self.namespace.service, &self.namespace.version) {
            return Err((Loc { table: Some("namespace"), index: 0, key: "service" }, e.to_string()));
        }
        let public = |key| Loc { table: Some("public"), index: 0, key };
        if self.public.nat_mix.len() > self.public.size {
            return Err((public("nat_mix"), "nat_mix lists more NATs than public.size".into()));
        }
        let open = self.public.size - self.public.nat_mix.len();
        if self.public.size > 0 && !(1..=open).contains(&self.public.seeds) {
            return Err((public("seeds"), format!("seeds must be in 1..={open}, the public nodes without a NAT")));
        }
        if self.public.networks == 0 || self.public.networks > 9 {
            return Err((public("networks"), "networks must be in 1..=9".into()));
        }
        if self.public.k == 0 {
            return Err((public("k"), "k must be at least 1".into()));
        }
        if !(self.public.warmup >= 0.0 && self.public.warmup.is_finite()) {
            return Err((public("warmup"), "warmup must be a non-negative number of seconds".into()));
        }
        let domains = self.federation.server_domains(self.provider);
        let unique: BTreeSet<&String> = domains.iter().collect();
        let fed = |key| Loc { table: Some("federation"), index: 0, key };
        if unique.len() != domains.len() {
            return Err((fed("servers"), "federation server domains must be distinct".into()));
        }
        if self.provider == ProviderKind::Presence && domains.is_empty() {
            return Err((fed("servers"), "the presence provider needs at least one federation server".into()));
        }
        if self.federation.factor == 0 {
            return Err((fed("factor"), "factor must be at least 1".into()));
        }
        if self.kind == ScenarioKind::Bootstrap {
            if self.provider == ProviderKind::Dht && self.public.size == 0 {
                return Err((public("size"), "the dht provider needs a public overlay".into()));
            }
            let total: usize = self.peers.iter().map(|p| p.count).sum();
            if total == 0 {
                return Err((top("peers"), "a bootstrap scenario needs at least one peer".into()));
            }
        }
        for (i, p) in self.peers.iter().enumerate() {
            let at = |key| Loc { table: Some("peers"), index: i, key };
            if p.count == 0 {
                return Err((at("count"), "count must be at least 1".into()));
            }
            if p.network >= 10 {
                return Err((at("network"), "peer networks must be in 0..=9".into()));
            }
            if !(p.start >= 0.0 && p.start.is_finite()) {
                return Err((at("start"), "start must be a non-negative number of seconds".into()));
            }
            if let Some(d) = &p.domain {
                if self.provider != ProviderKind::Presence {
                    return Err((at("domain"), "domain only applies to the presence provider".into()));
                }
                if !domains.contains(d) {
                    return Err((at("domain"), format!("unknown federation server {d:?}")));
                }
            }
        }
        let names: BTreeSet<String> = self.peer_plan().into_iter().map(|p| p.name).collect();
        for (i, c) in self.churn.iter().enumerate() {
            let at = |key| Loc { table: Some("churn"), index: i, key };
            if !(c.at >= 0.0 && c.at.is_finite()) {
                return Err((at("at"), "at must be a non-negative number of seconds".into()));
            }
            if let Some(bad) = c.kill.iter().find(|n| !names.contains(*n)) {
                return Err((at("kill"), format!("no peer named {bad:?}")));
            }
        }
        let t = &self.timers;
        let timer = |key| Loc { table: Some("timers"), index: 0, key };
        let positive = [
            ("ping_timeout", t.ping_timeout),
            ("handshake_timeout", t.handshake_timeout),
            ("punch_deadline", t.punch_deadline),
            ("punch_probe_interval", t.punch_probe_interval),
            ("link_ping_period", t.link_ping_period),
            ("stabilize_period", t.stabilize_period),
            ("ctm_retry", t.ctm_retry),
            ("dht_query_period", t.dht_query_period),
            ("presence_request_period", t.presence_request_period),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err((timer(key), format!("{key} must be a positive number of seconds")));
            }
        }
        if t.private_k == 0 {
            return Err((timer("private_k"), "private_k must be at least 1".into()));
        }
        if !(crate::dht::MIN_TTL_SECS..=crate::dht::MAX_TTL_SECS).contains(&t.dht_ttl) {
            return Err((timer("dht_ttl"), "dht_ttl out of range".into()));
        }
        let l = &self.latency;
        let lat = |key| Loc { table: Some("latency"), index: 0, key };
        for (key, v) in [
            ("same_network_ms", l.same_network_ms),
            ("cross_network_ms", l.cross_network_ms),
            ("lan_ms", l.lan_ms),
            ("jitter_ms", l.jitter_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((lat(key), format!("{key} must be a non-negative number")));
            }
        }
        if !(0.0..1.0).contains(&l.loss) {
            return Err((lat("loss"), "loss must be in [0, 1)".into()));
        }
        if !(l.mapping_ttl > 0.0 && l.mapping_ttl.is_finite()) {
            return Err((lat("mapping_ttl"), "mapping_ttl must be positive".into()));
        }
        if l.overrides.iter().any(|o| !(o.ms >= 0.0 && o.ms.is_finite())) {
            return Err((lat("overrides"), "override latencies must be non-negative".into()));
        }
        let r = &self.ring;
        let ring = |key| Loc { table: Some("ring"), index: 0, key };
        if r.min_nodes < 2 || r.max_nodes < r.min_nodes {
            return Err((ring("min_nodes"), "need 2 <= min_nodes <= max_nodes".into()));
        }
        if self.dht.nodes < 3 {
            return Err((Loc { table: Some("dht"), index: 0, key: "nodes" }, "dht runs need at least 3 nodes".into()));
        }
        let p = &self.pathing;
        let path = |key| Loc { table: Some("pathing"), index: 0, key };
        if p.hosts.len() < 2 {
            return Err((path("hosts"), "pathing needs at least 2 hosts".into()));
        }
        let ns: BTreeSet<&String> = p.namespaces.iter().collect();
        if ns.len() != p.namespaces.len() || p.namespaces.is_empty() {
            return Err((path("namespaces"), "pathing needs distinct, non-empty namespaces".into()));
        }
        if p.burst == 0 {
            return Err((path("burst"), "burst must be at least 1".into()));
        }
        Ok(())
    }
}

/// Position of a key for error messages: `table` is the `[table]` or the
/// `index`-th `[[table]]`; `None` is the top level.
#[derive(Clone, Copy, Debug)]
struct Loc {
    table: Option<&'static str>,
    index: usize,
    key: &'static str,
}

impl Loc {
    /// Line of `key` in its table, else the table header, else line 1.
    fn find(self, src: &str) -> usize {
        let mut current: Option<String> = None;
        let mut seen = 0usize;
        let mut header_line = None;
        let mut in_target = self.table.is_none();
        for (n, raw) in src.lines().enumerate() {
            let line = raw.trim();
            if let Some(h) = line.strip_prefix('[') {
                let array = h.starts_with('[');
                let name = h.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
                in_target = false;
                if Some(name.as_str()) == self.table {
                    if array {
                        seen += 1;
                        in_target = seen == self.index + 1;
                    } else {
                        in_target = true;
                    }
                    if in_target {
                        header_line = Some(n + 1);
                    }
                }
                current = Some(name);
                continue;
            }
            if in_target && (self.table.is_some() || current.is_none()) {
                let key = line.split('=').next().unwrap_or("").trim();
                if key == self.key {
                    return n + 1;
                }
            }
        }
        header_line.unwrap_or(1)
    }
}

fn line_at(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema = 1\nname = \"t\"\n\n[[peers]]\nnat = \"symmetric\"\ncount = 2\n";

    #[test]
    fn defaults_fill_everything_but_schema_and_name() {
        let sc = Scenario::parse(MINIMAL, "t.toml").unwrap();
        assert_eq!(sc.kind, ScenarioKind::Bootstrap);
        assert_eq!(sc.public.size, 32);
        assert_eq!(sc.timers.ping_timeout, 3.0);
        assert_eq!(sc.timers.relay_pings, 10);
        assert_eq!(sc.federation.client_latency_ms, 25);
        assert_eq!(sc.federation.factor, 3);
        let names: Vec<String> = sc.peer_plan().into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["p1", "p2"]);
    }

    #[test]
    fn unknown_keys_are_rejected_at_their_line() {
        let src = format!("{MINIMAL}bogus = 3\n");
        let e = Scenario::parse(&src, "t.toml").unwrap_err();
        assert_eq!(e.line, 7, "{e}");
        assert!(e.message.contains("bogus"), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let src = "schema = 1\nname = \"t\"\n\n[[peers]]\nnat = \"public\"\n\n[[peers]]\nnat = \"full-cone\"\ncount = 0\n";
        let e = Scenario::parse(src, "t.toml").unwrap_err();
        assert_eq!((e.line, e.message.as_str()), (9, "count must be at least 1"));
        let e = Scenario::parse("schema = 2\nname = \"t\"\n", "t.toml").unwrap_err();
        assert_eq!(e.line, 1);
        assert_eq!(e.to_string(), "t.toml:1: unsupported schema 2, expected 1");
    }

    #[test]
    fn churn_must_name_known_peers() {
        let src = format!("{MINIMAL}\n[[churn]]\nat = 5.0\nkill = [\"p9\"]\n");
        let e = Scenario::parse(&src, "t.toml").unwrap_err();
        assert_eq!(e.line, 10, "{e}");
    }

    #[test]
    fn missing_name_is_a_parse_error() {
        let e = Scenario::parse("schema = 1\n", "t.toml").unwrap_err();
        assert!(e.message.contains("name"), "{e}");
    }
}
