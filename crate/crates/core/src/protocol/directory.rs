use std::collections::BTreeMap;
use std::sync::Arc;

use crate::crypto::{Address, Keyring};
use crate::ledger::ZoneId;
use crate::sim::{Millis, NodeId};

#[derive(Clone, Debug, Default)]
pub struct ZoneInfo {
    pub zone_id: ZoneId,
    pub validators: Vec<NodeId>,
    pub committee: Vec<Address>,
    pub f: usize,
    /// This zone's part of the global delegation list, in failover order.
    pub delegates: Vec<(NodeId, Address)>,
    /// Permissioned membership registry.
    pub members: Vec<Address>,
    /// Nodes that receive committed blocks (clients and delegates).
    pub observers: Vec<NodeId>,
}

impl ZoneInfo {
    pub fn is_member(&self, a: &Address) -> bool {
        self.members.contains(a)
    }
}

/// Static wiring shared by every node of one run.
#[derive(Clone, Debug)]
pub struct Directory {
    pub zones: BTreeMap<ZoneId, ZoneInfo>,
    /// Inter-ledger peers (miners, delegates, admin, auditor).
    pub full_nodes: Vec<NodeId>,
    pub admin: (NodeId, Address),
    /// Global delegation list; every contract carries this list.
    pub delegation_list: Vec<Address>,
    pub keyring: Arc<Keyring>,
    /// Silence after which a client abandons its delegate.
    pub request_timeout_ms: Millis,
    pub keepalive_ms: Millis,
    /// Deadline for a client's own domain transaction to commit.
    pub intra_timeout_ms: Millis,
}

impl Directory {
    pub fn zone(&self, z: ZoneId) -> &ZoneInfo {
        &self.zones[&z]
    }
}
