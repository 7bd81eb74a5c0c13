//! Deterministic round-based network simulator.
//!
//! All randomness is drawn from ChaCha8 streams derived from the run seed,
//! one stream per purpose (placement, election coins, keys, readings, ...),
//! so that changing one phase never perturbs another. Energy is tracked in
//! integer nanojoules so ledgers balance exactly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::attack::pick_malicious_seed;
use crate::ciagg::{
    classify_received, fuse_global, fuse_local, majority_verdict, should_broadcast, suppress_rebroadcast,
    CiConfig, CiError, Classification, GaussianEstimate, NeighborTable, NodeTables, Relay, TwoHopTable, Verdict,
    VerdictState,
};
use crate::cpda::{run_cluster, ClusterKeys, ClusterSeeds, CpdaError, CpdaMode, NodeSecret, OpCounters, ValueBounds};
use crate::graph::{Adjacency, NodeId};
use crate::keydist::{
    discover_shared_keys_in_pool, draw_key_rings, establish_path_keys, KeyDistError, KeyPoolConfig,
};

const NJ_PER_J: f64 = 1e9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    KeyDist(#[from] KeyDistError),
    #[error(transparent)]
    Cpda(#[from] CpdaError),
    #[error(transparent)]
    Ci(#[from] CiError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub node_count: usize,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    pub radio_range: f64,
    /// Seconds.
    pub sim_time: f64,
    pub sampling_period: f64,
    /// Joules per node.
    pub initial_energy: f64,
    /// Seconds on air per message.
    pub airtime: f64,
    /// Watts.
    pub tx_power: f64,
    pub rx_power: f64,
    pub sense_power: f64,
    pub leader_probability: f64,
    pub change_trigger: f64,
    pub temp_mean: f64,
    pub temp_sigma: f64,
    pub link_loss_probability: f64,
    pub rng_seed: u64,
    pub fault_fraction: f64,
    pub fault_offset_sigmas: f64,
    pub key_pool: KeyPoolConfig,
    pub bounds: ValueBounds,
    pub ci: CiConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            node_count: 160,
            area_side: 120.0,
            radio_range: 15.0,
            sim_time: 200.0,
            sampling_period: 0.5,
            initial_energy: 5.0,
            airtime: 0.001,
            tx_power: 0.75,
            rx_power: 0.25e-3,
            sense_power: 10e-3,
            leader_probability: 0.1,
            change_trigger: 0.02,
            temp_mean: 25.0,
            temp_sigma: 1.0,
            link_loss_probability: 0.0,
            rng_seed: 1,
            fault_fraction: 0.0,
            fault_offset_sigmas: 10.0,
            key_pool: KeyPoolConfig {
                pool_size: 1000,
                ring_size: 50,
            },
            bounds: ValueBounds::default(),
            ci: CiConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |key: &str, why: &str| Err(SimError::InvalidConfig(format!("{key}: {why}")));
        if self.node_count == 0 {
            return bad("node_count", "must be at least 1");
        }
        let positive = [
            ("area_side", self.area_side),
            ("radio_range", self.radio_range),
            ("sim_time", self.sim_time),
            ("sampling_period", self.sampling_period),
            ("initial_energy", self.initial_energy),
            ("airtime", self.airtime),
            ("tx_power", self.tx_power),
            ("rx_power", self.rx_power),
            ("sense_power", self.sense_power),
            ("temp_sigma", self.temp_sigma),
            ("fault_offset_sigmas", self.fault_offset_sigmas),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, "must be positive");
            }
        }
        if !self.temp_mean.is_finite() {
            return bad("temp_mean", "must be finite");
        }
        if !(0.0..=1.0).contains(&self.leader_probability) {
            return bad("p_c", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.change_trigger) {
            return bad("change_trigger", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.link_loss_probability) {
            return bad("link_loss", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.fault_fraction) {
            return bad("fault_fraction", "must lie in [0, 1)");
        }
        if self.bounds.value_bound < 1 {
            return bad("D", "must be at least 1");
        }
        if self.bounds.coeff_bound < 2 {
            return bad("R", "must be at least 2");
        }
        self.key_pool.validate()?;
        self.ci.validate()?;
        if self.costs().tx == 0 || self.costs().rx == 0 || self.costs().sense == 0 {
            return bad("airtime", "per-event energy rounds to zero nanojoules");
        }
        Ok(())
    }

    pub fn costs(&self) -> EnergyCosts {
        EnergyCosts {
            tx: joules_to_nj(self.tx_power * self.airtime),
            rx: joules_to_nj(self.rx_power * self.airtime),
            sense: joules_to_nj(self.sense_power * self.sampling_period),
        }
    }

    pub fn rounds(&self) -> usize {
        (self.sim_time / self.sampling_period).round() as usize
    }
}

fn joules_to_nj(j: f64) -> u64 {
    (j * NJ_PER_J).round() as u64
}

/// Independent random stream for one purpose of one run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids passed to [`stream_rng`].
pub mod streams {
    pub const PLACEMENT: u64 = 1;
    pub const COINS: u64 = 2;
    pub const KEYS: u64 = 3;
    pub const SECRETS: u64 = 4;
    pub const FAULTS: u64 = 5;
    pub const READINGS: u64 = 6;
    pub const LOSS: u64 = 7;
}

// ---------------------------------------------------------------- energy

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyCosts {
    pub tx: u64,
    pub rx: u64,
    pub sense: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyEvent {
    Tx,
    Rx,
    Sense,
}

impl EnergyEvent {
    fn index(self) -> usize {
        match self {
            EnergyEvent::Tx => 0,
            EnergyEvent::Rx => 1,
            EnergyEvent::Sense => 2,
        }
    }
}

/// Remaining energy per node plus totals per event type, nanojoules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnergyLedger {
    pub initial: u64,
    pub remaining: Vec<u64>,
    pub exhausted: Vec<bool>,
    /// Successful events per type: tx, rx, sense.
    pub events: [u64; 3],
    pub spent: [u64; 3],
}

impl EnergyLedger {
    pub fn new(node_count: usize, initial_nj: u64) -> Self {
        Self {
            initial: initial_nj,
            remaining: vec![initial_nj; node_count],
            exhausted: vec![initial_nj == 0; node_count],
            events: [0; 3],
            spent: [0; 3],
        }
    }

    pub fn total_spent(&self) -> u64 {
        self.spent.iter().sum()
    }

    pub fn spent_without_sensing(&self) -> u64 {
        self.spent[0] + self.spent[1]
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        !self.exhausted[node]
    }
}

/// Charges one event to `node`. A node that cannot pay is marked exhausted
/// and takes no further part; the event does not happen.
pub fn account_energy(ledger: &mut EnergyLedger, node: NodeId, event: EnergyEvent, costs: &EnergyCosts) -> bool {
    if ledger.exhausted[node] {
        return false;
    }
    let cost = match event {
        EnergyEvent::Tx => costs.tx,
        EnergyEvent::Rx => costs.rx,
        EnergyEvent::Sense => costs.sense,
    };
    if ledger.remaining[node] < cost {
        ledger.exhausted[node] = true;
        return false;
    }
    ledger.remaining[node] -= cost;
    ledger.events[event.index()] += 1;
    ledger.spent[event.index()] += cost;
    if ledger.remaining[node] == 0 {
        ledger.exhausted[node] = true;
    }
    true
}

// ---------------------------------------------------------------- messages

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Hello,
    Join,
    Seed,
    Shares,
    FValue,
    Data,
    Aggregate,
    Validation,
    Merge,
    Relay,
    Estimate,
    Request,
    Reply,
    Isolation,
}

impl MessageKind {
    pub const COUNT: usize = 14;
    pub const ALL: [MessageKind; Self::COUNT] = [
        MessageKind::Hello,
        MessageKind::Join,
        MessageKind::Seed,
        MessageKind::Shares,
        MessageKind::FValue,
        MessageKind::Data,
        MessageKind::Aggregate,
        MessageKind::Validation,
        MessageKind::Merge,
        MessageKind::Relay,
        MessageKind::Estimate,
        MessageKind::Request,
        MessageKind::Reply,
        MessageKind::Isolation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Hello => "hello",
            MessageKind::Join => "join",
            MessageKind::Seed => "seed",
            MessageKind::Shares => "shares",
            MessageKind::FValue => "f_value",
            MessageKind::Data => "data",
            MessageKind::Aggregate => "aggregate",
            MessageKind::Validation => "validation",
            MessageKind::Merge => "merge",
            MessageKind::Relay => "relay",
            MessageKind::Estimate => "estimate",
            MessageKind::Request => "request",
            MessageKind::Reply => "reply",
            MessageKind::Isolation => "isolation",
        }
    }

    /// Messages of the per-node aggregation schedule. Relays and cluster
    /// merge notices are infrastructure and are tallied apart.
    pub fn is_schedule(self) -> bool {
        matches!(
            self,
            MessageKind::Hello
                | MessageKind::Join
                | MessageKind::Seed
                | MessageKind::Shares
                | MessageKind::FValue
                | MessageKind::Data
                | MessageKind::Aggregate
                | MessageKind::Validation
        )
    }
}

/// Transmissions and per-receiver deliveries of one message kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindStats {
    pub sent: u64,
    pub attempted: u64,
    pub delivered: u64,
    pub lost: u64,
}

type PerKind = [u64; MessageKind::COUNT];

struct Radio {
    costs: EnergyCosts,
    ledger: EnergyLedger,
    kinds: [KindStats; MessageKind::COUNT],
    sent: Vec<PerKind>,
    received: Vec<PerKind>,
    loss: f64,
    rng: ChaCha8Rng,
}

impl Radio {
    fn new(cfg: &SimConfig) -> Self {
        let n = cfg.node_count;
        Self {
            costs: cfg.costs(),
            ledger: EnergyLedger::new(n, joules_to_nj(cfg.initial_energy)),
            kinds: [KindStats::default(); MessageKind::COUNT],
            sent: vec![[0; MessageKind::COUNT]; n],
            received: vec![[0; MessageKind::COUNT]; n],
            loss: cfg.link_loss_probability,
            rng: stream_rng(cfg.rng_seed, streams::LOSS),
        }
    }

    /// One transmission by `from`, heard by `receivers`. Returns the
    /// receivers that got it, or `None` if the sender could not transmit.
    fn transmit(
        &mut self,
        from: NodeId,
        kind: MessageKind,
        receivers: impl IntoIterator<Item = NodeId>,
    ) -> Option<Vec<NodeId>> {
        if !account_energy(&mut self.ledger, from, EnergyEvent::Tx, &self.costs) {
            return None;
        }
        let k = kind.index();
        self.kinds[k].sent += 1;
        self.sent[from][k] += 1;
        let mut got = Vec::new();
        for r in receivers {
            self.kinds[k].attempted += 1;
            let dropped = self.loss > 0.0 && self.rng.random::<f64>() < self.loss;
            if !dropped && account_energy(&mut self.ledger, r, EnergyEvent::Rx, &self.costs) {
                self.kinds[k].delivered += 1;
                self.received[r][k] += 1;
                got.push(r);
            } else {
                self.kinds[k].lost += 1;
            }
        }
        Some(got)
    }

    fn sense(&mut self, node: NodeId) -> bool {
        account_energy(&mut self.ledger, node, EnergyEvent::Sense, &self.costs)
    }
}

// ---------------------------------------------------------------- topology

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub positions: Vec<(f64, f64)>,
    pub adjacency: Adjacency,
    pub sink: NodeId,
    /// Nodes in the sink's connected component.
    pub reachable: Vec<bool>,
}

impl Topology {
    /// Builds a topology from explicit positions.
    pub fn from_positions(positions: Vec<(f64, f64)>, radio_range: f64, area_side: f64) -> Self {
        let n = positions.len();
        let mut adjacency = Adjacency::new(n);
        let r2 = radio_range * radio_range;
        for u in 0..n {
            for v in u + 1..n {
                let dx = positions[u].0 - positions[v].0;
                let dy = positions[u].1 - positions[v].1;
                if dx * dx + dy * dy <= r2 {
                    adjacency.add_edge(u, v);
                }
            }
        }
        let c = area_side / 2.0;
        let sink = (0..n)
            .min_by(|&a, &b| {
                let da = (positions[a].0 - c).powi(2) + (positions[a].1 - c).powi(2);
                let db = (positions[b].0 - c).powi(2) + (positions[b].1 - c).powi(2);
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        Self::from_adjacency(positions, adjacency, sink)
    }

    pub fn from_adjacency(positions: Vec<(f64, f64)>, adjacency: Adjacency, sink: NodeId) -> Self {
        let mut reachable = vec![false; adjacency.len()];
        if !adjacency.is_empty() {
            for v in adjacency.component_of(sink) {
                reachable[v] = true;
            }
        }
        Self {
            positions,
            adjacency,
            sink,
            reachable,
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn is_connected(&self) -> bool {
        self.reachable.iter().all(|&r| r)
    }

    pub fn reachable_count(&self) -> usize {
        self.reachable.iter().filter(|&&r| r).count()
    }
}

/// Uniform placement over the square; the sink is the node nearest the
/// centre. A disconnected graph is kept; callers work on the sink's
/// component and report the rest.
pub fn place_nodes(cfg: &SimConfig) -> Result<Topology, SimError> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.rng_seed, streams::PLACEMENT);
    let positions = (0..cfg.node_count)
        .map(|_| {
            (
                rng.random_range(0.0..cfg.area_side),
                rng.random_range(0.0..cfg.area_side),
            )
        })
        .collect();
    Ok(Topology::from_positions(positions, cfg.radio_range, cfg.area_side))
}

// ---------------------------------------------------------------- clusters

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    /// Cluster leader of every node; `None` if the query never reached it.
    pub leader_of: Vec<Option<NodeId>>,
    /// Neighbor through which a member joined; leaders have none.
    pub join_parent: Vec<Option<NodeId>>,
    /// Leader -> members, leader first then ascending ids.
    pub clusters: BTreeMap<NodeId, Vec<NodeId>>,
    /// Leaders that elected themselves and were later merged away.
    pub demoted: BTreeSet<NodeId>,
    /// Clusters left smaller than 3 by [`consolidate_clusters`] because no
    /// neighboring cluster exists.
    pub undersized: BTreeSet<NodeId>,
    /// Control transmissions in the order they happened.
    pub control: Vec<(NodeId, MessageKind)>,
    /// Rounds until the last JOIN went out.
    pub rounds: usize,
}

impl Clustering {
    pub fn is_leader(&self, node: NodeId) -> bool {
        self.leader_of[node] == Some(node)
    }

    pub fn leader_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn members(&self, leader: NodeId) -> &[NodeId] {
        self.clusters.get(&leader).map_or(&[], Vec::as_slice)
    }
}

/// Election coins: node `i` elects itself with probability `p_c`. The sink
/// is always a leader.
pub fn election_coins(node_count: usize, p_c: f64, seed: u64) -> Vec<bool> {
    let mut rng = stream_rng(seed, streams::COINS);
    (0..node_count).map(|_| rng.random::<f64>() < p_c).collect()
}

pub fn form_clusters(topology: &Topology, p_c: f64, seed: u64) -> Clustering {
    let coins = election_coins(topology.len(), p_c, seed);
    form_clusters_with_coins(topology, &coins)
}

#[derive(Clone, Copy)]
struct Heard {
    round: usize,
    sender: NodeId,
    from_leader: bool,
    cluster: NodeId,
}

/// HELLO/JOIN flood from the sink with fixed election outcomes.
///
/// A node decides on the round it first hears the query. A leader sends
/// HELLO in that round. A member listens one more round and then JOINs,
/// preferring a leader's HELLO over a member's JOIN, then the earliest
/// message, then the lowest sender id. Its JOIN carries the query onward,
/// so nodes out of reach of every leader still join over several hops.
pub fn form_clusters_with_coins(topology: &Topology, coins: &[bool]) -> Clustering {
    let n = topology.len();
    let adj = &topology.adjacency;
    let mut leader_of: Vec<Option<NodeId>> = vec![None; n];
    let mut join_parent: Vec<Option<NodeId>> = vec![None; n];
    let mut first_heard: Vec<Option<usize>> = vec![None; n];
    let mut heard: Vec<Vec<Heard>> = vec![Vec::new(); n];
    let mut control = Vec::new();
    if n == 0 {
        return Clustering {
            leader_of,
            join_parent,
            clusters: BTreeMap::new(),
            demoted: BTreeSet::new(),
            undersized: BTreeSet::new(),
            control,
            rounds: 0,
        };
    }

    let sink = topology.sink;
    leader_of[sink] = Some(sink);
    first_heard[sink] = Some(0);
    // (sender, kind, cluster) sent in the current round.
    let mut outgoing: Vec<(NodeId, MessageKind, NodeId)> = vec![(sink, MessageKind::Hello, sink)];
    control.push((sink, MessageKind::Hello));
    let mut waiting: BTreeSet<NodeId> = BTreeSet::new();
    let mut round = 0;
    let mut last_round = 0;
    while !outgoing.is_empty() || !waiting.is_empty() {
        round += 1;
        let mut next: Vec<(NodeId, MessageKind, NodeId)> = Vec::new();
        // Members that heard the query last round decide now, using what
        // arrives this round as well.
        let deciding: Vec<NodeId> = waiting
            .iter()
            .copied()
            .filter(|&v| first_heard[v] == Some(round - 1))
            .collect();
        outgoing.sort_by_key(|&(s, _, _)| s);
        for &(sender, kind, cluster) in &outgoing {
            for &v in adj.neighbors(sender) {
                heard[v].push(Heard {
                    round,
                    sender,
                    from_leader: kind == MessageKind::Hello,
                    cluster,
                });
                if first_heard[v].is_none() {
                    first_heard[v] = Some(round);
                    if coins[v] {
                        leader_of[v] = Some(v);
                        next.push((v, MessageKind::Hello, v));
                        control.push((v, MessageKind::Hello));
                    } else {
                        waiting.insert(v);
                    }
                }
            }
        }
        for v in deciding {
            waiting.remove(&v);
            let pick = heard[v]
                .iter()
                .min_by_key(|h| (!h.from_leader, h.round, h.sender))
                .copied()
                .expect("a waiting node has heard at least one message");
            leader_of[v] = Some(pick.cluster);
            join_parent[v] = Some(pick.sender);
            next.push((v, MessageKind::Join, pick.cluster));
            control.push((v, MessageKind::Join));
            last_round = round;
        }
        outgoing = next;
    }

    let mut clustering = Clustering {
        leader_of,
        join_parent,
        clusters: BTreeMap::new(),
        demoted: BTreeSet::new(),
        undersized: BTreeSet::new(),
        control,
        rounds: last_round,
    };
    rebuild_clusters(&mut clustering);
    clustering
}

/// Brings clusters of fewer than 3 nodes up to size where the topology
/// allows. A small cluster first takes over leaf members of adjacent
/// clusters that can spare them; if that is not enough it is folded into a
/// neighboring cluster. The sink's cluster never disappears; when it is
/// small it absorbs a neighbor instead. Clusters with no neighboring
/// cluster stay small and are listed in `undersized`.
pub fn consolidate_clusters(c: &mut Clustering, topology: &Topology) {
    merge_small_clusters(c, &topology.adjacency, topology.sink);
}

fn rebuild_clusters(c: &mut Clustering) {
    let mut clusters: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (v, l) in c.leader_of.iter().enumerate() {
        if let Some(l) = *l {
            clusters.entry(l).or_default().push(v);
        }
    }
    for (leader, members) in clusters.iter_mut() {
        members.retain(|v| v != leader);
        members.insert(0, *leader);
    }
    c.clusters = clusters;
}

fn merge_small_clusters(c: &mut Clustering, adj: &Adjacency, sink: NodeId) {
    loop {
        let small = c
            .clusters
            .iter()
            .find(|(l, m)| m.len() < 3 && !c.undersized.contains(l))
            .map(|(l, _)| *l);
        let Some(small) = small else { break };
        if recruit(c, adj, small) {
            continue;
        }
        let adjacent: BTreeSet<NodeId> = c.clusters[&small]
            .iter()
            .flat_map(|&v| adj.neighbors(v).iter().filter_map(|&u| c.leader_of[u]))
            .filter(|&l| l != small)
            .collect();
        let Some(&other) = adjacent.iter().next() else {
            c.undersized.insert(small);
            continue;
        };
        let (absorbed, into) = if small == sink { (other, small) } else { (small, other) };
        absorb(c, adj, absorbed, into);
        rebuild_clusters(c);
    }
}

/// Moves leaf members of clusters larger than 3 into cluster `small` until
/// it has 3 nodes. Returns whether it got there.
fn recruit(c: &mut Clustering, adj: &Adjacency, small: NodeId) -> bool {
    while c.clusters[&small].len() < 3 {
        let has_children: BTreeSet<NodeId> = c.join_parent.iter().flatten().copied().collect();
        let pick = c.clusters[&small]
            .iter()
            .flat_map(|&w| adj.neighbors(w).iter().map(move |&u| (u, w)))
            .filter(|&(u, _)| {
                c.leader_of[u].is_some_and(|d| d != small && d != u && c.clusters[&d].len() > 3)
                    && !has_children.contains(&u)
            })
            .min();
        let Some((u, w)) = pick else { return false };
        c.leader_of[u] = Some(small);
        c.join_parent[u] = Some(w);
        c.control.push((u, MessageKind::Merge));
        rebuild_clusters(c);
    }
    true
}

/// Moves every node of cluster `absorbed` into cluster `into`, re-rooting
/// the join tree at the boundary. Each moved node announces the change once.
fn absorb(c: &mut Clustering, adj: &Adjacency, absorbed: NodeId, into: NodeId) {
    let moving: BTreeSet<NodeId> = c.clusters[&absorbed].iter().copied().collect();
    let mut queue = VecDeque::new();
    let mut done = BTreeSet::new();
    for &v in &moving {
        if let Some(&u) = adj.neighbors(v).iter().find(|&&u| c.leader_of[u] == Some(into)) {
            c.join_parent[v] = Some(u);
            done.insert(v);
            queue.push_back(v);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in adj.neighbors(u) {
            if moving.contains(&v) && done.insert(v) {
                c.join_parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    for &v in &moving {
        c.leader_of[v] = Some(into);
        c.control.push((v, MessageKind::Merge));
    }
    c.demoted.insert(absorbed);
}

// ---------------------------------------------------------------- routing

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTree {
    /// BFS parent of every reachable node, towards the sink.
    pub bfs_parent: Vec<Option<NodeId>>,
    pub depth: Vec<Option<usize>>,
    /// Next leader up the tree, `None` for the sink.
    pub leader_parent: BTreeMap<NodeId, Option<NodeId>>,
    pub unreachable_leaders: Vec<NodeId>,
}

impl RoutingTree {
    /// Hops from `leader` to its parent leader.
    pub fn hops_to_parent(&self, leader: NodeId) -> Option<usize> {
        let parent = (*self.leader_parent.get(&leader)?)?;
        Some(self.depth[leader]? - self.depth[parent]?)
    }
}

/// BFS tree from the sink; each leader reports to the nearest leader (or
/// the sink) on its path to the root.
pub fn build_routing_tree(topology: &Topology, leaders: &[NodeId]) -> RoutingTree {
    let n = topology.len();
    let mut bfs_parent = vec![None; n];
    let mut depth = vec![None; n];
    if n > 0 {
        let mut queue = VecDeque::new();
        depth[topology.sink] = Some(0);
        queue.push_back(topology.sink);
        while let Some(u) = queue.pop_front() {
            for &v in topology.adjacency.neighbors(u) {
                if depth[v].is_none() {
                    depth[v] = Some(depth[u].unwrap_or(0) + 1);
                    bfs_parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
    }
    let is_leader: BTreeSet<NodeId> = leaders.iter().copied().collect();
    let mut leader_parent = BTreeMap::new();
    let mut unreachable_leaders = Vec::new();
    for &l in leaders {
        if depth[l].is_none() {
            unreachable_leaders.push(l);
            continue;
        }
        let mut up = bfs_parent[l];
        while let Some(p) = up {
            if is_leader.contains(&p) || p == topology.sink {
                break;
            }
            up = bfs_parent[p];
        }
        leader_parent.insert(l, up);
    }
    RoutingTree {
        bfs_parent,
        depth,
        leader_parent,
        unreachable_leaders,
    }
}

// ---------------------------------------------------------------- faults

/// Compromised nodes and how far their reports are shifted.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSet {
    pub nodes: BTreeSet<NodeId>,
    pub offset_sigmas: f64,
}

impl FaultSet {
    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    pub fn shift(&self, mean: f64, sigma: f64) -> f64 {
        mean + self.offset_sigmas * sigma
    }
}

/// `floor(fraction * N)` nodes chosen uniformly.
pub fn inject_faults(node_count: usize, fraction: f64, offset_sigmas: f64, seed: u64) -> Result<FaultSet, SimError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(SimError::InvalidConfig(format!(
            "fault_fraction: must lie in [0, 1), got {fraction}"
        )));
    }
    // Guard against 0.1 * 160 = 15.999...
    let count = (fraction * node_count as f64 + 1e-9).floor() as usize;
    let mut rng = stream_rng(seed, streams::FAULTS);
    let nodes = sample(&mut rng, node_count, count.min(node_count)).into_iter().collect();
    Ok(FaultSet { nodes, offset_sigmas })
}

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SimMode {
    TagPlain,
    Original,
    Efficient,
    Hardened,
    /// Hardened CPDA with one seed-inflating member in every cluster.
    HardenedWorst,
}

impl SimMode {
    pub const ALL: [SimMode; 5] = [
        SimMode::TagPlain,
        SimMode::Original,
        SimMode::Efficient,
        SimMode::Hardened,
        SimMode::HardenedWorst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimMode::TagPlain => "tag_plain",
            SimMode::Original => "original",
            SimMode::Efficient => "efficient",
            SimMode::Hardened => "hardened",
            SimMode::HardenedWorst => "hardened_worst",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    fn cpda(self) -> Option<CpdaMode> {
        match self {
            SimMode::TagPlain => None,
            SimMode::Original => Some(CpdaMode::Original),
            SimMode::Efficient => Some(CpdaMode::Efficient),
            SimMode::Hardened | SimMode::HardenedWorst => Some(CpdaMode::Hardened),
        }
    }

    /// Average schedule messages per node for leader fraction `p_c`.
    pub fn analytic_messages(self, p_c: f64) -> f64 {
        match self {
            SimMode::TagPlain => 2.0,
            SimMode::Original | SimMode::Hardened => 3.0 + p_c,
            SimMode::Efficient => 2.0 + p_c,
            SimMode::HardenedWorst => 5.0 + p_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mode: String,
    pub seed: u64,
    pub node_count: usize,
    /// Nodes that took part (the sink's component).
    pub participating_nodes: usize,
    pub leaders: usize,
    pub clusters: usize,
    pub plaintext_clusters: usize,
    pub aborted_clusters: usize,
    pub merged_clusters: usize,
    pub malicious_clusters: usize,
    pub unreached_nodes: usize,
    /// Cluster pairs without any secure link, forced to go in the clear.
    pub insecure_pairs: usize,
    pub kinds: [KindStats; MessageKind::COUNT],
    pub sent_per_node: Vec<PerKind>,
    pub received_per_node: Vec<PerKind>,
    pub ops: OpCounters,
    pub energy: EnergyLedger,
    pub sink_aggregate: Option<u64>,
    /// Direct sum of the readings in clusters that completed their round.
    pub true_aggregate: Option<u64>,
}

impl Metrics {
    pub fn kind(&self, kind: MessageKind) -> KindStats {
        self.kinds[kind.index()]
    }

    pub fn total_sent(&self) -> u64 {
        self.kinds.iter().map(|k| k.sent).sum()
    }

    /// Delivered over attempted deliveries; 1 when nothing was attempted.
    pub fn delivery_ratio(&self) -> f64 {
        let attempted: u64 = self.kinds.iter().map(|k| k.attempted).sum();
        let delivered: u64 = self.kinds.iter().map(|k| k.delivered).sum();
        if attempted == 0 {
            1.0
        } else {
            delivered as f64 / attempted as f64
        }
    }

    /// Schedule messages sent per participating node.
    pub fn avg_messages_per_node(&self) -> f64 {
        if self.participating_nodes == 0 {
            return 0.0;
        }
        let total: u64 = MessageKind::ALL
            .iter()
            .filter(|k| k.is_schedule())
            .map(|k| self.kinds[k.index()].sent)
            .sum();
        total as f64 / self.participating_nodes as f64
    }

    pub fn energy_spent_j(&self) -> f64 {
        self.energy.total_spent() as f64 / NJ_PER_J
    }
}

// ---------------------------------------------------------------- CPDA run

struct ClusterPlan<'a> {
    members: &'a [NodeId],
    join_parent: &'a [Option<NodeId>],
    children: &'a BTreeMap<NodeId, Vec<NodeId>>,
}

impl ClusterPlan<'_> {
    fn tree_neighbors(&self, v: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.children.get(&v).cloned().unwrap_or_default();
        if v != self.members[0] {
            out.extend(self.join_parent[v]);
        }
        out
    }

    fn leader(&self) -> NodeId {
        self.members[0]
    }
}

/// Floods `kind` from `origin` over the cluster's join tree. The origin's
/// transmission counts as `kind`, every forwarding hop as a relay.
fn cluster_broadcast(radio: &mut Radio, plan: &ClusterPlan<'_>, origin: NodeId, kind: MessageKind) {
    let mut queue = VecDeque::from([(origin, None::<NodeId>)]);
    while let Some((u, from)) = queue.pop_front() {
        let next: Vec<NodeId> = plan.tree_neighbors(u).into_iter().filter(|&v| Some(v) != from).collect();
        if next.is_empty() {
            continue;
        }
        let k = if u == origin { kind } else { MessageKind::Relay };
        if let Some(got) = radio.transmit(u, k, next) {
            queue.extend(got.into_iter().map(|v| (v, Some(u))));
        }
    }
}

/// Sends `kind` from `origin` along `path` (intermediate hops then the
/// destination). The first hop counts as `kind`, the rest as relays.
fn forward_along(radio: &mut Radio, origin: NodeId, path: &[NodeId], kind: MessageKind) -> bool {
    let mut at = origin;
    for (i, &next) in path.iter().enumerate() {
        let k = if i == 0 { kind } else { MessageKind::Relay };
        if radio.transmit(at, k, [next]).is_none_or(|got| got.is_empty()) {
            return false;
        }
        at = next;
    }
    true
}

fn cluster_unicast(radio: &mut Radio, plan: &ClusterPlan<'_>, origin: NodeId, kind: MessageKind) {
    let mut path = Vec::new();
    let mut at = plan.join_parent[origin];
    while let Some(v) = at {
        path.push(v);
        if v == plan.leader() {
            break;
        }
        at = plan.join_parent[v];
    }
    forward_along(radio, origin, &path, kind);
}

/// Honest seeds are distinct draws from `[1000, 2000)`.
const HONEST_SEED_RANGE: std::ops::Range<u64> = 1000..2000;

/// Runs one aggregation epoch: cluster formation, the per-cluster protocol
/// of `mode`, and converge-cast of cluster sums to the sink.
pub fn run_cpda_sim(cfg: &SimConfig, mode: SimMode) -> Result<Metrics, SimError> {
    let topology = place_nodes(cfg)?;
    let mut clustering = form_clusters(&topology, cfg.leader_probability, cfg.rng_seed);
    consolidate_clusters(&mut clustering, &topology);
    run_cpda_on(cfg, mode, &topology, &clustering)
}

/// As [`run_cpda_sim`] on a given topology and clustering.
pub fn run_cpda_on(
    cfg: &SimConfig,
    mode: SimMode,
    topology: &Topology,
    clustering: &Clustering,
) -> Result<Metrics, SimError> {
    cfg.validate()?;
    if topology.len() != cfg.node_count {
        return Err(SimError::InvalidConfig("topology size differs from node_count".into()));
    }
    let n = cfg.node_count;
    let adj = &topology.adjacency;
    let mut radio = Radio::new(cfg);
    for &(v, kind) in &clustering.control {
        radio.transmit(v, kind, adj.neighbors(v).to_vec());
    }

    let rings = draw_key_rings(cfg.key_pool, n, cfg.rng_seed ^ streams::KEYS)?;
    let direct = discover_shared_keys_in_pool(&rings, adj, cfg.key_pool)?;
    let mut links = establish_path_keys(&direct, adj);

    let faults = inject_faults(n, cfg.fault_fraction, cfg.fault_offset_sigmas, cfg.rng_seed)?;
    let mut rng = stream_rng(cfg.rng_seed, streams::SECRETS);
    let values: Vec<u64> = (0..n).map(|_| rng.random_range(0..cfg.bounds.value_bound)).collect();

    let leaders: Vec<NodeId> = clustering.clusters.keys().copied().collect();
    let tree = build_routing_tree(topology, &leaders);
    let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (v, p) in clustering.join_parent.iter().enumerate() {
        if let Some(p) = p {
            children.entry(*p).or_default().push(v);
        }
    }

    let mut ops = OpCounters::default();
    let mut cluster_sum: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut true_sum: u64 = 0;
    let (mut plaintext, mut aborted, mut malicious_clusters, mut insecure_pairs) = (0, 0, 0, 0);

    for (&leader, members) in &clustering.clusters {
        let plan = ClusterPlan {
            members,
            join_parent: &clustering.join_parent,
            children: &children,
        };
        let m = members.len();
        let cpda_mode = mode.cpda().filter(|_| m >= 3);
        let Some(cpda_mode) = cpda_mode else {
            if mode != SimMode::TagPlain {
                plaintext += 1;
            }
            for &v in &members[1..] {
                cluster_unicast(&mut radio, &plan, v, MessageKind::Data);
            }
            let s: u64 = members.iter().map(|&v| values[v]).sum();
            cluster_sum.insert(leader, s);
            true_sum += s;
            continue;
        };

        let secrets: Vec<NodeSecret> = members
            .iter()
            .map(|&v| {
                // Coefficients in [R/2, R) keep honest shares within the triangle bound.
                let mut s = NodeSecret::random_with_coeff_range(
                    &mut rng,
                    m,
                    1,
                    cfg.bounds.coeff_bound.div_ceil(2),
                    cfg.bounds.coeff_bound,
                );
                s.private_value = values[v].into();
                s
            })
            .collect();
        let honest = sample(&mut rng, (HONEST_SEED_RANGE.end - HONEST_SEED_RANGE.start) as usize, m);
        let mut seeds: Vec<BigInt> = honest
            .into_iter()
            .map(|s| BigInt::from(HONEST_SEED_RANGE.start + s as u64))
            .collect();
        let mut cheaters: Vec<usize> = (0..m).filter(|&i| faults.contains(members[i])).collect();
        if mode == SimMode::HardenedWorst && cheaters.is_empty() {
            cheaters.push(rng.random_range(1..m));
        }
        let big = pick_malicious_seed(cfg.bounds.value_bound, cfg.bounds.coeff_bound, m);
        for (k, &i) in cheaters.iter().enumerate() {
            seeds[i] = &big + k;
        }
        if !cheaters.is_empty() {
            malicious_clusters += 1;
        }

        let mut keys = ClusterKeys::default();
        for i in 0..m {
            for j in i + 1..m {
                match links.end_to_end_key(members[i], members[j]) {
                    Some(k) => keys.insert(i, j, k),
                    None => {
                        insecure_pairs += 1;
                        // No secure path: the pair falls back to an identity-derived key
                        // that offers no secrecy.
                        keys.insert(i, j, crate::keydist::PairKey(u64::MAX - (members[i] * n + members[j]) as u64));
                    }
                }
            }
        }

        // Message schedule up to the point where the round can abort.
        match cpda_mode {
            CpdaMode::Efficient => {
                cluster_broadcast(&mut radio, &plan, leader, MessageKind::Seed);
                for &v in &members[1..] {
                    cluster_unicast(&mut radio, &plan, v, MessageKind::Shares);
                }
            }
            CpdaMode::Original | CpdaMode::Hardened => {
                cluster_broadcast(&mut radio, &plan, leader, MessageKind::Seed);
                for &v in members.iter() {
                    cluster_broadcast(&mut radio, &plan, v, MessageKind::Shares);
                }
                for &v in &members[1..] {
                    cluster_unicast(&mut radio, &plan, v, MessageKind::FValue);
                }
            }
        }

        let cluster_seeds = ClusterSeeds::new(seeds)?;
        match run_cluster(&secrets, &cluster_seeds, cpda_mode, cfg.bounds, &keys, &mut ops) {
            Ok(result) => {
                let s = result
                    .recovered_sum
                    .to_u64()
                    .ok_or_else(|| CpdaError::CorruptedTranscript("cluster sum out of range".into()))?;
                cluster_sum.insert(leader, s);
                true_sum += members.iter().map(|&v| values[v]).sum::<u64>();
            }
            Err(CpdaError::ProtocolAbort { .. }) => {
                aborted += 1;
                for &v in members.iter() {
                    cluster_broadcast(&mut radio, &plan, v, MessageKind::Validation);
                    cluster_broadcast(&mut radio, &plan, v, MessageKind::Validation);
                }
                cluster_sum.insert(leader, 0);
            }
            Err(e) => return Err(e.into()),
        }
    }

    // Converge-cast, deepest leaders first.
    let mut order: Vec<NodeId> = leaders.iter().copied().filter(|l| tree.depth[*l].is_some()).collect();
    order.sort_by_key(|&l| (std::cmp::Reverse(tree.depth[l]), l));
    let mut carried = cluster_sum.clone();
    for l in order {
        let value = carried.get(&l).copied().unwrap_or(0);
        match tree.leader_parent.get(&l).copied().flatten() {
            Some(parent) => {
                let mut path = Vec::new();
                let mut at = tree.bfs_parent[l];
                while let Some(v) = at {
                    path.push(v);
                    if v == parent {
                        break;
                    }
                    at = tree.bfs_parent[v];
                }
                if forward_along(&mut radio, l, &path, MessageKind::Aggregate) {
                    *carried.entry(parent).or_default() += value;
                }
            }
            // The sink hands its total to the query application.
            None => {
                radio.transmit(l, MessageKind::Aggregate, []);
            }
        }
    }
    let sink_aggregate = carried.get(&topology.sink).copied();

    Ok(Metrics {
        mode: mode.name().to_string(),
        seed: cfg.rng_seed,
        node_count: n,
        participating_nodes: topology.reachable_count(),
        leaders: leaders.len(),
        clusters: clustering.clusters.len(),
        plaintext_clusters: plaintext,
        aborted_clusters: aborted,
        merged_clusters: clustering.demoted.len(),
        malicious_clusters,
        unreached_nodes: n - topology.reachable_count(),
        insecure_pairs,
        kinds: radio.kinds,
        sent_per_node: radio.sent,
        received_per_node: radio.received,
        ops,
        energy: radio.ledger,
        sink_aggregate,
        true_aggregate: Some(true_sum),
    })
}

// ---------------------------------------------------------------- CI run

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl DetectionCounts {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    /// Share of compromised nodes flagged; 1 when there are none.
    pub fn detection_rate(&self) -> f64 {
        ratio_or(self.true_positive, self.true_positive + self.false_negative, 1.0)
    }

    pub fn fn_rate(&self) -> f64 {
        ratio_or(self.false_negative, self.true_positive + self.false_negative, 0.0)
    }

    pub fn fp_rate(&self) -> f64 {
        ratio_or(self.false_positive, self.false_positive + self.true_negative, 0.0)
    }
}

fn ratio_or(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Detection quality of the secured arm next to the cost of both arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub detection_rate: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    /// Joules over the whole network, sensing included.
    pub energy_with_security: f64,
    pub energy_without_security: f64,
    /// Joules spent on the radio only.
    pub radio_energy_with_security: f64,
    pub radio_energy_without_security: f64,
    pub delivery_ratio_with_security: f64,
    pub delivery_ratio_without_security: f64,
}

impl DetectionMetrics {
    pub fn energy_increase(&self) -> f64 {
        self.energy_with_security / self.energy_without_security - 1.0
    }

    pub fn radio_energy_increase(&self) -> f64 {
        self.radio_energy_with_security / self.radio_energy_without_security - 1.0
    }
}

/// One arm of the CI experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CiOutcome {
    pub counts: DetectionCounts,
    pub metrics: Metrics,
    pub compromised: BTreeSet<NodeId>,
    /// Nodes that some honest neighbor judged malicious.
    pub flagged: BTreeSet<NodeId>,
    /// Last global estimate of every node that ever sensed.
    pub final_estimates: Vec<Option<GaussianEstimate>>,
    /// Highest honest reading in the last round.
    pub honest_max_last_reading: f64,
    pub suspicions: usize,
}

struct CiState<'a> {
    cfg: &'a SimConfig,
    adj: &'a Adjacency,
    faults: &'a FaultSet,
    radio: Radio,
    tables: BTreeMap<NodeId, NodeTables>,
    global: Vec<Option<GaussianEstimate>>,
    /// What compromised nodes currently claim.
    fake: Vec<Option<GaussianEstimate>>,
    verdicts: BTreeMap<(NodeId, NodeId), VerdictState>,
    flagged: BTreeSet<NodeId>,
    suspicions: usize,
}

impl CiState<'_> {
    /// What `node` tells others.
    fn report(&self, node: NodeId) -> Option<GaussianEstimate> {
        if self.faults.contains(node) {
            self.fake[node]
        } else {
            self.global[node]
        }
    }

    /// Judge `v` asks its other neighbors about `suspect` and rules on it.
    fn investigate(&mut self, v: NodeId, suspect: NodeId, received: &GaussianEstimate, own: GaussianEstimate) -> Verdict {
        self.suspicions += 1;
        let state = self.verdicts.entry((v, suspect)).or_default();
        let _ = state.transition(Verdict::Suspect);
        let askees: Vec<NodeId> = self.tables[&v]
            .neighbors
            .0
            .keys()
            .copied()
            .filter(|&u| u != suspect)
            .collect();
        let mut replies = vec![own];
        if let Some(got) = self.radio.transmit(v, MessageKind::Request, askees) {
            for u in got {
                let Some(rep) = self.report(u) else { continue };
                if self.radio.transmit(u, MessageKind::Reply, [v]).is_some_and(|b| !b.is_empty()) {
                    replies.push(rep);
                }
            }
        }
        let verdict = majority_verdict(received, &replies, &self.cfg.ci);
        if verdict != Verdict::Suspect {
            let state = self.verdicts.entry((v, suspect)).or_default();
            let _ = state.transition(verdict);
        }
        if verdict == Verdict::Malicious {
            self.flagged.insert(suspect);
            let hearers: Vec<NodeId> = self.adj.neighbors(v).iter().copied().filter(|&u| u != suspect).collect();
            let got = self.radio.transmit(v, MessageKind::Isolation, hearers).unwrap_or_default();
            for u in std::iter::once(v).chain(got) {
                if let Some(t) = self.tables.get_mut(&u) {
                    t.forget(suspect);
                }
            }
        }
        verdict
    }
}

/// Max aggregation with covariance-intersection estimates over the
/// Table-style network, optionally with 3-sigma detection and isolation.
///
/// Each round every live node senses; a reading that moved by more than
/// `change_trigger` (relative) since the last processed one is folded into
/// the global estimate. Estimates received last round are combined with
/// [`fuse_global`]. Compromised nodes claim the process mean shifted by
/// `fault_offset_sigmas` standard deviations. A node broadcasts when its estimate changed and some neighbor's recorded
/// estimate is more than `T` away; a change caused only by received
/// estimates is not rebroadcast when the two-hop table shows every
/// neighbor already heard the originator. Detection exchanges (request,
/// replies, isolation) complete within the round they start.
pub fn run_ci_sim(cfg: &SimConfig, fault_fraction: f64, security_enabled: bool) -> Result<CiOutcome, SimError> {
    let topology = place_nodes(cfg)?;
    let n = cfg.node_count;
    let adj = &topology.adjacency;
    let faults = inject_faults(n, fault_fraction, cfg.fault_offset_sigmas, cfg.rng_seed)?;
    let variance = cfg.temp_sigma * cfg.temp_sigma;
    let noise = Normal::new(cfg.temp_mean, cfg.temp_sigma)
        .map_err(|e| SimError::InvalidConfig(format!("temp_sigma: {e}")))?;
    let mut readings_rng = stream_rng(cfg.rng_seed, streams::READINGS);

    let tables = (0..n)
        .map(|v| {
            let two_hop = adj
                .neighbors(v)
                .iter()
                .map(|&u| (u, adj.neighbors(u).iter().copied().collect()))
                .collect();
            (
                v,
                NodeTables {
                    neighbors: NeighborTable::with_neighbors(adj.neighbors(v).iter().copied()),
                    two_hop: TwoHopTable(two_hop),
                },
            )
        })
        .collect();
    let mut st = CiState {
        cfg,
        adj,
        faults: &faults,
        radio: Radio::new(cfg),
        tables,
        global: vec![None; n],
        fake: vec![None; n],
        verdicts: BTreeMap::new(),
        flagged: BTreeSet::new(),
        suspicions: 0,
    };
    let mut last_processed = vec![0.0f64; n];
    let mut inbox: Vec<Vec<(NodeId, GaussianEstimate)>> = vec![Vec::new(); n];
    let mut honest_max_last_reading = f64::NEG_INFINITY;

    for round in 0..cfg.rounds() {
        // Drawn for every node so both arms see the same physical process.
        let readings: Vec<f64> = (0..n).map(|_| noise.sample(&mut readings_rng)).collect();
        honest_max_last_reading = (0..n)
            .filter(|v| !faults.contains(*v))
            .map(|v| readings[v])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut outbox: Vec<(NodeId, GaussianEstimate)> = Vec::new();
        for v in 0..n {
            let received = std::mem::take(&mut inbox[v]);
            if !st.radio.ledger.is_alive(v) {
                continue;
            }
            if faults.contains(v) {
                // A compromised node claims the process mean shifted by the
                // fault offset and pushes the claim whenever it differs from
                // what its neighbors last said.
                if st.radio.sense(v) {
                    let claim = faults.shift(cfg.temp_mean, cfg.temp_sigma);
                    st.fake[v] = Some(GaussianEstimate::new(claim, variance)?);
                }
                if let Some(t) = st.tables.get_mut(&v) {
                    for (origin, est) in received {
                        t.neighbors.record(origin, est, round as u64);
                    }
                }
                if let Some(claim) = st.fake[v] {
                    if should_broadcast(&claim, &st.tables[&v].neighbors, &cfg.ci) {
                        outbox.push((v, claim));
                    }
                }
                continue;
            }
            let mut changed_local = false;
            if st.radio.sense(v) {
                let r = readings[v];
                let local = GaussianEstimate::new(r, variance)?;
                match st.global[v] {
                    None => {
                        st.global[v] = Some(local);
                        last_processed[v] = r;
                        changed_local = true;
                    }
                    Some(g) if (r - last_processed[v]).abs() > cfg.change_trigger * last_processed[v].abs() => {
                        let fused = fuse_local(&g, &local, last_processed[v], &cfg.ci)?;
                        last_processed[v] = r;
                        if fused != g {
                            st.global[v] = Some(fused);
                            changed_local = true;
                        }
                    }
                    Some(_) => {}
                }
            }
            let Some(mut own) = st.global[v] else { continue };
            let judge = security_enabled;
            let mut changed_by = Vec::new();
            for (origin, est) in received {
                if !st.tables[&v].neighbors.0.contains_key(&origin) {
                    continue;
                }
                let accept = !judge
                    || classify_received(&own, &est, &cfg.ci) == Classification::Normal
                    || st.investigate(v, origin, &est, own) == Verdict::Normal;
                if !accept {
                    continue;
                }
                if let Some(t) = st.tables.get_mut(&v) {
                    t.neighbors.record(origin, est, round as u64);
                }
                let fused = fuse_global(&own, &est, &cfg.ci)?;
                if fused != own {
                    own = fused;
                    changed_by.push(origin);
                }
            }
            st.global[v] = Some(own);

            let Some(reported) = st.report(v) else { continue };
            let table = &st.tables[&v];
            let wants = should_broadcast(&reported, &table.neighbors, &cfg.ci)
                && (changed_local
                    || changed_by
                        .iter()
                        .any(|&o| suppress_rebroadcast(o, v, true, &table.two_hop) == Relay::Rebroadcast));
            if wants {
                outbox.push((v, reported));
            }
        }
        for (v, est) in outbox {
            if let Some(got) = st.radio.transmit(v, MessageKind::Estimate, adj.neighbors(v).to_vec()) {
                for r in got {
                    inbox[r].push((v, est));
                }
            }
        }
    }

    let mut counts = DetectionCounts::default();
    for v in 0..n {
        match (faults.contains(v), st.flagged.contains(&v)) {
            (true, true) => counts.true_positive += 1,
            (true, false) => counts.false_negative += 1,
            (false, true) => counts.false_positive += 1,
            (false, false) => counts.true_negative += 1,
        }
    }
    let metrics = Metrics {
        mode: if security_enabled { "ci_secure" } else { "ci_plain" }.to_string(),
        seed: cfg.rng_seed,
        node_count: n,
        participating_nodes: n,
        leaders: 0,
        clusters: 0,
        plaintext_clusters: 0,
        aborted_clusters: 0,
        merged_clusters: 0,
        malicious_clusters: 0,
        unreached_nodes: 0,
        insecure_pairs: 0,
        kinds: st.radio.kinds,
        sent_per_node: st.radio.sent,
        received_per_node: st.radio.received,
        ops: OpCounters::default(),
        energy: st.radio.ledger,
        sink_aggregate: None,
        true_aggregate: None,
    };
    Ok(CiOutcome {
        counts,
        metrics,
        compromised: faults.nodes.clone(),
        flagged: st.flagged,
        final_estimates: st.global,
        honest_max_last_reading,
        suspicions: st.suspicions,
    })
}

/// Runs the secured and the unsecured arm on the same network and faults.
pub fn run_ci_experiment(cfg: &SimConfig, fault_fraction: f64) -> Result<DetectionMetrics, SimError> {
    let secure = run_ci_sim(cfg, fault_fraction, true)?;
    let plain = run_ci_sim(cfg, fault_fraction, false)?;
    let j = |nj: u64| nj as f64 / NJ_PER_J;
    let c = secure.counts;
    Ok(DetectionMetrics {
        true_positive: c.true_positive,
        false_positive: c.false_positive,
        true_negative: c.true_negative,
        false_negative: c.false_negative,
        detection_rate: c.detection_rate(),
        fp_rate: c.fp_rate(),
        fn_rate: c.fn_rate(),
        energy_with_security: j(secure.metrics.energy.total_spent()),
        energy_without_security: j(plain.metrics.energy.total_spent()),
        radio_energy_with_security: j(secure.metrics.energy.spent_without_sensing()),
        radio_energy_without_security: j(plain.metrics.energy.spent_without_sensing()),
        delivery_ratio_with_security: secure.metrics.delivery_ratio(),
        delivery_ratio_without_security: plain.metrics.delivery_ratio(),
    })
}
