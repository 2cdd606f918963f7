//! Agent id to IPv4 address correspondence shared by both coordinators.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentAddress {
    pub agent_id: u32,
    pub address: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AddressMapError {
    #[error("agent id {0} mapped more than once")]
    DuplicateId(u32),
    #[error("address {0} mapped more than once")]
    DuplicateAddress(Ipv4Addr),
}

/// A bijection between agent ids and addresses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddressMap {
    entries: Vec<AgentAddress>,
    by_id: HashMap<u32, Ipv4Addr>,
    by_addr: HashMap<Ipv4Addr, u32>,
}

impl AddressMap {
    pub fn new(entries: impl IntoIterator<Item = AgentAddress>) -> Result<Self, AddressMapError> {
        let mut map = AddressMap::default();
        for e in entries {
            if map.by_id.insert(e.agent_id, e.address).is_some() {
                return Err(AddressMapError::DuplicateId(e.agent_id));
            }
            if map.by_addr.insert(e.address, e.agent_id).is_some() {
                return Err(AddressMapError::DuplicateAddress(e.address));
            }
            map.entries.push(e);
        }
        Ok(map)
    }

    pub fn address(&self, agent_id: u32) -> Option<Ipv4Addr> {
        self.by_id.get(&agent_id).copied()
    }

    pub fn agent(&self, address: Ipv4Addr) -> Option<u32> {
        self.by_addr.get(&address).copied()
    }

    pub fn contains_address(&self, address: Ipv4Addr) -> bool {
        self.by_addr.contains_key(&address)
    }

    pub fn addresses(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.entries.iter().map(|e| e.address)
    }

    pub fn entries(&self) -> &[AgentAddress] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(id: u32, last: u8) -> AgentAddress {
        AgentAddress {
            agent_id: id,
            address: Ipv4Addr::new(10, 0, 0, last),
        }
    }

    #[test]
    fn bijection_enforced() {
        let m = AddressMap::new([e(0, 1), e(1, 2)]).unwrap();
        assert_eq!(m.agent(Ipv4Addr::new(10, 0, 0, 2)), Some(1));
        assert_eq!(m.address(0), Some(Ipv4Addr::new(10, 0, 0, 1)));
        assert_eq!(
            AddressMap::new([e(0, 1), e(0, 2)]),
            Err(AddressMapError::DuplicateId(0))
        );
        assert_eq!(
            AddressMap::new([e(0, 1), e(1, 1)]),
            Err(AddressMapError::DuplicateAddress(Ipv4Addr::new(10, 0, 0, 1)))
        );
    }
}
