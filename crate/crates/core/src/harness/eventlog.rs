use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, Digest};
use crate::protocol::Event;
use crate::sim::{Millis, NodeId};

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLine {
    pub at: Millis,
    pub node: NodeId,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("reading log: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// JSON-lines writer. The digest covers the exact bytes written.
#[derive(Default)]
pub struct EventLog {
    bytes: Vec<u8>,
    lines: u64,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: Millis, node: NodeId, event: &Event) {
        let line = LogLine {
            at,
            node,
            event: event.clone(),
        };
        serde_json::to_writer(&mut self.bytes, &line).expect("event serializes");
        self.bytes.push(b'\n');
        self.lines += 1;
    }

    pub fn len(&self) -> u64 {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }

    pub fn finish(self) -> (Vec<u8>, Digest) {
        let d = hash(&self.bytes);
        (self.bytes, d)
    }
}

pub fn log_digest(bytes: &[u8]) -> Digest {
    hash(bytes)
}

pub fn parse_log(bytes: &[u8]) -> Result<Vec<LogLine>, LogError> {
    let mut out = Vec::new();
    for (i, line) in bytes.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::Side;
    use crate::protocol::Phase;

    #[test]
    fn roundtrip_and_digest() {
        let mut log = EventLog::new();
        let e = Event::PhaseChange {
            session: hash(b"s"),
            side: Side::Subscriber,
            phase: Phase::Delegated,
            reason: None,
        };
        log.push(12, 3, &e);
        log.push(40, 1, &Event::InterMined { height: 1, block: hash(b"b"), txs: 0 });
        assert_eq!(log.len(), 2);
        let (bytes, d) = log.finish();
        assert_eq!(d, log_digest(&bytes));
        let lines = parse_log(&bytes).unwrap();
        assert_eq!(lines[0], LogLine { at: 12, node: 3, event: e });
        let first = std::str::from_utf8(&bytes).unwrap().lines().next().unwrap();
        assert!(first.contains("\"kind\":\"phase_change\""), "{first}");
    }

    #[test]
    fn parse_error_names_line() {
        let err = parse_log(b"{\"at\":1,\"node\":0,\"kind\":\"inter_reverted\",\"height\":1,\"block\":\"00\"}\nnot json\n");
        assert!(matches!(err, Err(LogError::Parse { line: 1 | 2, .. })));
    }
}
