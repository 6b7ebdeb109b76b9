use std::fmt;

use sha1::{Digest, Sha1};

use super::SimTime;

/// One trace line: `time|event-kind|src|dst|bytes|verdict`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: &'static str,
    pub src: String,
    pub dst: String,
    pub bytes: usize,
    pub verdict: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}|{}|{}|{}", self.time, self.kind, self.src, self.dst, self.bytes, self.verdict)
    }
}

/// Running SHA-1 over every record, with optional retention of the lines.
#[derive(Clone)]
pub struct Trace {
    hasher: Sha1,
    count: u64,
    keep: bool,
    lines: Vec<String>,
}

impl Trace {
    pub fn new(keep: bool) -> Self {
        Trace { hasher: Sha1::new(), count: 0, keep, lines: Vec::new() }
    }

    pub fn record(&mut self, rec: TraceRecord) {
        let line = rec.to_string();
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
        if self.keep {
            self.lines.push(line);
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Retained lines; empty unless retention was requested.
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

impl fmt::Debug for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trace").field("count", &self.count).field("hash", &self.hash_hex()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_covers_lines_in_order() {
        let rec = |kind| TraceRecord {
            time: SimTime::from_millis(25),
            kind,
            src: "a".into(),
            dst: "b".into(),
            bytes: 3,
            verdict: "ok".into(),
        };
        let mut t = Trace::new(true);
        t.record(rec("send"));
        assert_eq!(t.lines(), ["0.025000|send|a|b|3|ok"]);
        // sha1 of "0.025000|send|a|b|3|ok\n"
        let mut h = Sha1::new();
        h.update(b"0.025000|send|a|b|3|ok\n");
        assert_eq!(t.hash_hex(), hex::encode(h.finalize()));
        let mut u = Trace::new(false);
        u.record(rec("deliver"));
        u.record(rec("send"));
        let mut v = Trace::new(false);
        v.record(rec("send"));
        v.record(rec("deliver"));
        assert_ne!(u.hash_hex(), v.hash_hex());
    }
}
