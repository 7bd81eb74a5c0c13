//! Random key predistribution.
//!
//! Every node receives a ring of `k` distinct key ids drawn from a pool of
//! `K`. Radio neighbors whose rings intersect share a direct secure link;
//! neighbors without a common key but joined by a chain of direct links get
//! a synthetic path key. Path-key ids start at `K` so they never collide
//! with pool keys.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{Adjacency, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyDistError {
    #[error("invalid key pool configuration: pool size {pool_size}, ring size {ring_size}")]
    InvalidConfig { pool_size: u64, ring_size: u64 },
    #[error("ring size {ring_size} exceeds pool size {pool_size}")]
    RingLargerThanPool { pool_size: u64, ring_size: u64 },
    #[error("node count must be at least 1")]
    NoNodes,
    #[error("node {0} appears in the adjacency but has no key ring")]
    MissingRing(NodeId),
}

/// Pool size `K` and ring size `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyPoolConfig {
    pub pool_size: u64,
    pub ring_size: u64,
}

impl KeyPoolConfig {
    pub fn new(pool_size: u64, ring_size: u64) -> Result<Self, KeyDistError> {
        let config = Self { pool_size, ring_size };
        config.validate()?;
        Ok(config)
    }

    /// A pool used for drawing rings needs `1 <= k <= K`.
    pub fn validate(&self) -> Result<(), KeyDistError> {
        if self.pool_size == 0 || self.ring_size == 0 || self.ring_size > self.pool_size {
            return Err(KeyDistError::InvalidConfig {
                pool_size: self.pool_size,
                ring_size: self.ring_size,
            });
        }
        Ok(())
    }

    fn check_probability_domain(&self) -> Result<(), KeyDistError> {
        if self.ring_size > self.pool_size {
            return Err(KeyDistError::RingLargerThanPool {
                pool_size: self.pool_size,
                ring_size: self.ring_size,
            });
        }
        if self.pool_size == 0 {
            return Err(KeyDistError::InvalidConfig {
                pool_size: self.pool_size,
                ring_size: self.ring_size,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRing {
    pub node_id: NodeId,
    pub key_ids: BTreeSet<u64>,
}

impl KeyRing {
    pub fn new(node_id: NodeId, key_ids: impl IntoIterator<Item = u64>) -> Self {
        Self {
            node_id,
            key_ids: key_ids.into_iter().collect(),
        }
    }

    /// Smallest key id held by both rings.
    pub fn smallest_common_key(&self, other: &KeyRing) -> Option<u64> {
        self.key_ids.intersection(&other.key_ids).next().copied()
    }

    pub fn shares_key_with(&self, other: &KeyRing) -> bool {
        self.smallest_common_key(other).is_some()
    }
}

/// Identifier of the key protecting a pair of nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Direct,
    Path,
    EndToEnd,
}

fn ordered(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Secure links after shared-key discovery and path-key establishment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureLinkGraph {
    pool_size: u64,
    direct_links: BTreeMap<(NodeId, NodeId), u64>,
    path_links: BTreeMap<(NodeId, NodeId), u64>,
    end_to_end: BTreeMap<(NodeId, NodeId), u64>,
    /// Component label of every node in the graph of direct links.
    direct_component: Vec<usize>,
    next_synthetic: u64,
}

impl SecureLinkGraph {
    pub fn direct_links(&self) -> impl Iterator<Item = ((NodeId, NodeId), PairKey)> + '_ {
        self.direct_links.iter().map(|(&p, &k)| (p, PairKey(k)))
    }

    pub fn path_links(&self) -> impl Iterator<Item = ((NodeId, NodeId), PairKey)> + '_ {
        self.path_links.iter().map(|(&p, &k)| (p, PairKey(k)))
    }

    pub fn direct_link_count(&self) -> usize {
        self.direct_links.len()
    }

    pub fn path_link_count(&self) -> usize {
        self.path_links.len()
    }

    pub fn pool_size(&self) -> u64 {
        self.pool_size
    }

    /// Key for the pair, whichever phase produced it.
    pub fn link_key(&self, u: NodeId, v: NodeId) -> Option<(PairKey, LinkKind)> {
        let pair = ordered(u, v);
        if let Some(&k) = self.direct_links.get(&pair) {
            return Some((PairKey(k), LinkKind::Direct));
        }
        if let Some(&k) = self.path_links.get(&pair) {
            return Some((PairKey(k), LinkKind::Path));
        }
        self.end_to_end
            .get(&pair)
            .map(|&k| (PairKey(k), LinkKind::EndToEnd))
    }

    /// True when `u` and `v` are joined by a chain of direct links.
    pub fn securely_connected(&self, u: NodeId, v: NodeId) -> bool {
        match (self.direct_component.get(u), self.direct_component.get(v)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    /// Returns the pair's key, assigning a fresh end-to-end key when the two
    /// nodes are not radio neighbors but a chain of direct links joins them.
    /// Cluster members that are several hops apart use these keys.
    pub fn end_to_end_key(&mut self, u: NodeId, v: NodeId) -> Option<PairKey> {
        if u == v {
            return None;
        }
        if let Some((key, _)) = self.link_key(u, v) {
            return Some(key);
        }
        if !self.securely_connected(u, v) {
            return None;
        }
        let id = self.fresh_id();
        self.end_to_end.insert(ordered(u, v), id);
        Some(PairKey(id))
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_synthetic;
        self.next_synthetic += 1;
        id
    }
}

/// Draws one ring per node, each uniformly without replacement from `[0, K)`.
pub fn draw_key_rings(
    config: KeyPoolConfig,
    node_count: usize,
    seed: u64,
) -> Result<Vec<KeyRing>, KeyDistError> {
    config.validate()?;
    if node_count == 0 {
        return Err(KeyDistError::NoNodes);
    }
    let pool = usize::try_from(config.pool_size).expect("pool size fits in usize");
    let ring = usize::try_from(config.ring_size).expect("ring size fits in usize");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..node_count)
        .map(|node_id| {
            let keys = rand::seq::index::sample(&mut rng, pool, ring);
            KeyRing::new(node_id, keys.into_iter().map(|k| k as u64))
        })
        .collect())
}

/// Shared-key discovery: adjacent pairs whose rings intersect get a direct
/// link keyed by the smallest common key id.
pub fn discover_shared_keys(
    rings: &[KeyRing],
    radio_adjacency: &Adjacency,
) -> Result<SecureLinkGraph, KeyDistError> {
    let by_node: BTreeMap<NodeId, &KeyRing> = rings.iter().map(|r| (r.node_id, r)).collect();
    for node in 0..radio_adjacency.len() {
        if radio_adjacency.degree(node) > 0 && !by_node.contains_key(&node) {
            return Err(KeyDistError::MissingRing(node));
        }
    }
    let pool_size = rings
        .iter()
        .flat_map(|r| r.key_ids.iter().next_back())
        .max()
        .map_or(0, |&m| m + 1);

    let mut direct_links = BTreeMap::new();
    for (u, v) in radio_adjacency.edges() {
        if let Some(key) = by_node[&u].smallest_common_key(by_node[&v]) {
            direct_links.insert((u, v), key);
        }
    }

    let node_count = radio_adjacency
        .len()
        .max(rings.iter().map(|r| r.node_id + 1).max().unwrap_or(0));
    let direct_component = components(node_count, direct_links.keys().copied());
    Ok(SecureLinkGraph {
        pool_size,
        direct_links,
        path_links: BTreeMap::new(),
        end_to_end: BTreeMap::new(),
        direct_component,
        next_synthetic: pool_size,
    })
}

/// Same as [`discover_shared_keys`] but with the synthetic id space anchored
/// at the configured pool size rather than the largest key seen.
pub fn discover_shared_keys_in_pool(
    rings: &[KeyRing],
    radio_adjacency: &Adjacency,
    config: KeyPoolConfig,
) -> Result<SecureLinkGraph, KeyDistError> {
    let mut graph = discover_shared_keys(rings, radio_adjacency)?;
    graph.pool_size = graph.pool_size.max(config.pool_size);
    graph.next_synthetic = graph.next_synthetic.max(config.pool_size);
    Ok(graph)
}

/// Path-key establishment: adjacent pairs without a direct link, but joined
/// by a multi-hop chain of direct links, receive a fresh synthetic key.
pub fn establish_path_keys(graph: &SecureLinkGraph, radio_adjacency: &Adjacency) -> SecureLinkGraph {
    let mut out = graph.clone();
    for (u, v) in radio_adjacency.edges() {
        if out.direct_links.contains_key(&(u, v)) || out.path_links.contains_key(&(u, v)) {
            continue;
        }
        if out.securely_connected(u, v) {
            let id = out.fresh_id();
            out.path_links.insert((u, v), id);
        }
    }
    out
}

fn components(node_count: usize, edges: impl Iterator<Item = (NodeId, NodeId)>) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..node_count).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru.max(rv)] = ru.min(rv);
        }
    }
    (0..node_count).map(|x| find(&mut parent, x)).collect()
}

/// `1 - ((K-k)!)^2 / ((K-2k)! K!)` as an exact rational, computed as
/// `1 - prod_{i<k} (K-k-i)/(K-i)`. When `2k > K` the rings must overlap and
/// the result is 1.
pub fn connectivity_probability_exact(config: KeyPoolConfig) -> Result<BigRational, KeyDistError> {
    config.check_probability_domain()?;
    let (pool, ring) = (config.pool_size, config.ring_size);
    if 2 * ring > pool {
        return Ok(BigRational::one());
    }
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..ring {
        num *= pool - ring - i;
        den *= pool - i;
    }
    let disjoint = BigRational::new(num.into(), den.into());
    Ok(BigRational::one() - disjoint)
}

/// Probability that two rings share at least one key.
pub fn connectivity_probability(config: KeyPoolConfig) -> Result<f64, KeyDistError> {
    let exact = connectivity_probability_exact(config)?;
    Ok(rational_to_f64(&exact))
}

/// Probability that an arbitrary node holds the key of a given link: `k / K`.
pub fn overhear_probability(config: KeyPoolConfig) -> Result<f64, KeyDistError> {
    config.check_probability_domain()?;
    Ok(config.ring_size as f64 / config.pool_size as f64)
}

pub(crate) fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    // Scale before converting so that huge numerators and denominators
    // do not overflow f64 individually.
    let scale = BigUint::one() << 64u32;
    let scaled = (r * BigRational::from_integer(scale.clone().into())).floor();
    scaled.to_integer().to_f64().unwrap_or(f64::NAN) / 18446744073709551616.0
}

/// Fraction of `pairs` independently drawn ring pairs that intersect.
pub fn empirical_connectivity(config: KeyPoolConfig, pairs: usize, seed: u64) -> Result<f64, KeyDistError> {
    config.validate()?;
    if pairs == 0 {
        return Ok(0.0);
    }
    let rings = draw_key_rings(config, 2 * pairs, seed)?;
    let hits = rings
        .chunks_exact(2)
        .filter(|pair| pair[0].shares_key_with(&pair[1]))
        .count();
    Ok(hits as f64 / pairs as f64)
}
