//! Shared identifier types used across every layer.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The three supply-chain tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Manufacturer,
    Distributor,
    Hospital,
}

impl AgentClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentClass::Manufacturer => "manufacturer",
            AgentClass::Distributor => "distributor",
            AgentClass::Hospital => "hospital",
        }
    }

    fn prefix(&self) -> char {
        match self {
            AgentClass::Manufacturer => 'm',
            AgentClass::Distributor => 'd',
            AgentClass::Hospital => 'h',
        }
    }
}

/// Identifies one agent within a scenario.
///
/// The canonical string form is `m0`, `d1`, `h2`, ... — a class prefix plus
/// the agent's index within its class. In the default topology distributor
/// and hospital index coincide with their region. The same string is used in
/// config files, CSV logs, audit records, and the policy wire protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId {
    pub class: AgentClass,
    pub index: u32,
}

impl AgentId {
    pub fn manufacturer(index: u32) -> Self {
        AgentId { class: AgentClass::Manufacturer, index }
    }

    pub fn distributor(index: u32) -> Self {
        AgentId { class: AgentClass::Distributor, index }
    }

    pub fn hospital(index: u32) -> Self {
        AgentId { class: AgentClass::Hospital, index }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class.prefix(), self.index)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid agent id {0:?}: expected m<N>, d<N> or h<N>")]
pub struct ParseAgentIdError(pub String);

impl FromStr for AgentId {
    type Err = ParseAgentIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let class = match chars.next() {
            Some('m') => AgentClass::Manufacturer,
            Some('d') => AgentClass::Distributor,
            Some('h') => AgentClass::Hospital,
            _ => return Err(ParseAgentIdError(s.to_string())),
        };
        let index = chars
            .as_str()
            .parse::<u32>()
            .map_err(|_| ParseAgentIdError(s.to_string()))?;
        Ok(AgentId { class, index })
    }
}

// Serialized as the canonical string form so agent ids can key JSON maps.
impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}
