use std::time::Duration;

use crate::identifiers::NodeId;
use crate::simnet::SimTime;

use super::table::LinkPath;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PunchState {
    Probing,
    Succeeded,
    Failed,
}

/// What started an attempt; decides its timer regime and the fallback on failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttemptKind {
    /// Plain handshake with a configured seed endpoint.
    Seed,
    /// Simultaneous probing of direct candidates after a ConnectToMe.
    Punch,
    /// Handshake over a relay transport.
    Relay,
    /// Handshake through a common neighbor.
    Tunnel,
}

/// One outstanding connection attempt.
///
/// Every `interval` a Hello goes to each candidate, until a handshake
/// completes or `deadline` passes. Candidates learnt from inbound probes
/// (peer-reflexive) are appended and probed immediately by the caller.
#[derive(Clone, Debug)]
pub struct PunchAttempt {
    pub nonce: u64,
    pub kind: AttemptKind,
    /// Unknown for seeds until the first HelloAck.
    pub target: Option<NodeId>,
    pub candidates: Vec<LinkPath>,
    pub interval: Duration,
    pub started: SimTime,
    pub deadline: SimTime,
    next_send: SimTime,
    pub state: PunchState,
}

impl PunchAttempt {
    pub fn new(
        nonce: u64,
        kind: AttemptKind,
        target: Option<NodeId>,
        candidates: Vec<LinkPath>,
        now: SimTime,
        interval: Duration,
        deadline: Duration,
    ) -> Self {
        PunchAttempt {
            nonce,
            kind,
            target,
            candidates,
            interval,
            started: now,
            deadline: now + deadline,
            next_send: now,
            state: PunchState::Probing,
        }
    }

    pub fn is_active(&self) -> bool {
        self.state == PunchState::Probing
    }

    /// Returns true if `path` was new.
    pub fn add_candidate(&mut self, path: LinkPath) -> bool {
        if self.candidates.contains(&path) {
            return false;
        }
        self.candidates.push(path);
        true
    }

    /// Moves to `Failed` at the deadline and returns the paths to probe now, if any.
    pub fn poll(&mut self, now: SimTime) -> Option<Vec<LinkPath>> {
        if !self.is_active() {
            return None;
        }
        if now >= self.deadline {
            self.state = PunchState::Failed;
            return None;
        }
        if now < self.next_send {
            return None;
        }
        self.next_send = now + self.interval;
        Some(self.candidates.clone())
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.is_active().then(|| self.next_send.min(self.deadline))
    }

    pub fn succeed(&mut self) {
        if self.is_active() {
            self.state = PunchState::Succeeded;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::Endpoint;
    use std::net::Ipv4Addr;

    fn direct(port: u16) -> LinkPath {
        LinkPath::Direct(Endpoint::new(Ipv4Addr::new(16, 0, 0, 1), port))
    }

    #[test]
    fn probes_every_interval_until_deadline() {
        let t0 = SimTime::from_secs(1);
        let mut p = PunchAttempt::new(
            1,
            AttemptKind::Punch,
            None,
            vec![direct(1), direct(2)],
            t0,
            Duration::from_millis(500),
            Duration::from_secs(10),
        );
        let mut rounds = 0;
        let mut t = t0;
        while p.is_active() {
            if let Some(paths) = p.poll(t) {
                assert_eq!(paths.len(), 2);
                rounds += 1;
            }
            t += Duration::from_millis(100);
        }
        // sends at 0, 0.5, ..., 9.5 s
        assert_eq!(rounds, 20);
        assert_eq!(p.state, PunchState::Failed);
    }

    #[test]
    fn success_is_terminal() {
        let mut p = PunchAttempt::new(
            1,
            AttemptKind::Punch,
            None,
            vec![direct(1)],
            SimTime::ZERO,
            Duration::from_millis(500),
            Duration::from_secs(10),
        );
        assert!(p.add_candidate(direct(9)));
        assert!(!p.add_candidate(direct(9)));
        p.succeed();
        assert_eq!(p.poll(SimTime::from_secs(20)), None);
        assert_eq!(p.state, PunchState::Succeeded);
        assert_eq!(p.next_deadline(), None);
    }
}
