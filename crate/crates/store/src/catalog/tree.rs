use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

/// Number of key bytes hashed at each routing level.
pub const ROUTE_SLICE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Depth below the root.
    pub max_level: u32,
    pub fanout: u32,
    pub node_threshold: u32,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_level: 2, fanout: 4, node_threshold: 3 }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_level == 0 || self.fanout == 0 || self.node_threshold == 0 {
            return Err(Error::InvalidConfig(format!("tree config {self:?} has a zero parameter")));
        }
        if self.leaf_count().is_none() {
            return Err(Error::InvalidConfig(format!("tree config {self:?} overflows")));
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> Option<u64> {
        u64::from(self.fanout).checked_pow(self.max_level)
    }

    /// Leaf path of `key`: one child index per level.
    pub fn leaf_of(&self, key: &[u8]) -> NodePath {
        NodePath::Tree((1..=self.max_level).map(|lvl| route(key, self, lvl)).collect())
    }

    /// Every node a read for `key` must visit, root excluded, top-down.
    pub fn path_of(&self, key: &[u8]) -> Vec<NodePath> {
        let leaf = self.leaf_of(key);
        let NodePath::Tree(parts) = leaf else { unreachable!() };
        (1..=parts.len()).map(|d| NodePath::Tree(parts[..d].to_vec())).collect()
    }

    pub fn children(&self, node: &NodePath) -> Vec<NodePath> {
        match node {
            NodePath::Tree(parts) if (parts.len() as u32) < self.max_level => (0..self.fanout)
                .map(|c| {
                    let mut p = parts.clone();
                    p.push(c);
                    NodePath::Tree(p)
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn is_leaf(&self, node: &NodePath) -> bool {
        matches!(node, NodePath::Tree(p) if p.len() as u32 == self.max_level)
    }

    /// A path that may hold segments under this config.
    pub fn check_placement(&self, node: &NodePath) -> Result<()> {
        match node {
            NodePath::Flat => Err(Error::InvalidNodePath("flat node under the tree strategy".into())),
            NodePath::Tree(p) if p.is_empty() => Err(Error::RootHoldsNoSegments),
            NodePath::Tree(p) => {
                if p.len() as u32 > self.max_level || p.iter().any(|&c| c >= self.fanout) {
                    Err(Error::InvalidNodePath(node.to_string()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Maximum segment count the tree holds at rest: `fanout^max_level × node_threshold`.
pub fn capacity(config: &TreeConfig) -> u64 {
    config.leaf_count().unwrap_or(u64::MAX).saturating_mul(u64::from(config.node_threshold))
}

/// Child index of `key` at `level` (1-based). Level 1 hashes the last 16 key
/// bytes, level 2 the first 16; keys shorter than 16 bytes are hashed whole.
/// Deeper levels alternate between the two slices.
pub fn route(key: &[u8], config: &TreeConfig, level: u32) -> u32 {
    debug_assert!(level >= 1);
    let slice = if key.len() <= ROUTE_SLICE {
        key
    } else if level % 2 == 1 {
        &key[key.len() - ROUTE_SLICE..]
    } else {
        &key[..ROUTE_SLICE]
    };
    let mut h = fnv1a64(slice);
    if level > 2 {
        h = fnv1a64(&[&h.to_le_bytes()[..], &level.to_le_bytes()[..]].concat());
    }
    (h % u64::from(config.fanout)) as u32
}

/// Location of a segment: a tree node (`root`, `root/2`, `root/2/1`) or the
/// single flat node used by the size-based strategy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodePath {
    Flat,
    Tree(Vec<u32>),
}

impl NodePath {
    pub fn root() -> Self {
        NodePath::Tree(Vec::new())
    }

    pub fn depth(&self) -> usize {
        match self {
            NodePath::Flat => 1,
            NodePath::Tree(p) => p.len(),
        }
    }

    pub fn is_ancestor_of(&self, other: &NodePath) -> bool {
        match (self, other) {
            (NodePath::Tree(a), NodePath::Tree(b)) => a.len() < b.len() && b.starts_with(a),
            _ => false,
        }
    }

    pub fn parent(&self) -> Option<NodePath> {
        match self {
            NodePath::Tree(p) if !p.is_empty() => Some(NodePath::Tree(p[..p.len() - 1].to_vec())),
            _ => None,
        }
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodePath::Flat => f.write_str("flat"),
            NodePath::Tree(parts) => {
                f.write_str("root")?;
                for p in parts {
                    write!(f, "/{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for NodePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "flat" {
            return Ok(NodePath::Flat);
        }
        let mut parts = s.split('/');
        if parts.next() != Some("root") {
            return Err(Error::InvalidNodePath(s.to_string()));
        }
        parts
            .map(|p| p.parse::<u32>().map_err(|_| Error::InvalidNodePath(s.to_string())))
            .collect::<Result<Vec<_>>>()
            .map(NodePath::Tree)
    }
}

impl Serialize for NodePath {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodePath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
