use serde::{Deserialize, Serialize};

use super::{Millis, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Behavior {
    /// Conflicting versions of each outgoing message to odd-numbered peers.
    Equivocate,
    /// Emits nothing.
    Silent,
    /// Holds every outgoing message for `hold_ms` extra.
    Delay { hold_ms: Millis },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fault {
    Crash,
    Recover,
    Byzantine { behavior: Behavior },
    /// Splits the listed nodes into two groups that cannot reach each other.
    Partition { a: Vec<NodeId>, b: Vec<NodeId> },
    Heal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub at: Millis,
    /// Ignored for partition and heal.
    pub node: NodeId,
    pub fault: Fault,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub entries: Vec<FaultEntry>,
}

impl FaultSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: Millis, node: NodeId, fault: Fault) -> &mut Self {
        self.entries.push(FaultEntry { at, node, fault });
        self
    }

    /// Nodes that turn byzantine at some point.
    pub fn byzantine_nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .filter(|e| matches!(e.fault, Fault::Byzantine { .. }))
            .map(|e| e.node)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}
