//! Secure max aggregation with covariance intersection.
//!
//! Every node keeps a Gaussian estimate `(mean, variance)` of the network
//! maximum. Two global estimates are fused by covariance intersection; a
//! fresh local reading is folded into the global estimate through a
//! step-weighted mixture that is moment-matched back to a Gaussian. Nodes
//! broadcast only when their estimate moved by more than a threshold for
//! some neighbor, skip rebroadcasts their two-hop table shows to be
//! redundant, and flag neighbors whose estimates sit more than `3 sigma`
//! away, isolating them on a majority verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use thiserror::Error;

use crate::graph::NodeId;

/// Half-width, in standard deviations, of the support of a Gaussian
/// component used by the step weights.
pub const SUPPORT_SIGMAS: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CiError {
    #[error("variance must be positive and finite, got {0}")]
    NonPositiveVariance(f64),
    #[error("mean must be finite, got {0}")]
    NonFiniteMean(f64),
    #[error("weighted mixture has no mass")]
    ZeroMass,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEstimate {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianEstimate {
    pub fn new(mean: f64, variance: f64) -> Result<Self, CiError> {
        let e = Self { mean, variance };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), CiError> {
        if !self.mean.is_finite() {
            return Err(CiError::NonFiniteMean(self.mean));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(CiError::NonPositiveVariance(self.variance));
        }
        Ok(())
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let z = (t - self.mean) / self.std_dev();
        (-0.5 * z * z).exp() / (self.std_dev() * (2.0 * PI).sqrt())
    }

    /// `mean - 3 sigma`, the lower edge of the effective support.
    pub fn lower_support(&self) -> f64 {
        self.mean - SUPPORT_SIGMAS * self.std_dev()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiConfig {
    /// Mean change that makes an estimate worth broadcasting.
    pub broadcast_threshold: f64,
    /// A fall of the global maximum below this is trusted to the local reading.
    pub fall_threshold: f64,
    pub detection_multiplier: f64,
    pub grid_points: usize,
    pub grid_span_sigmas: f64,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            broadcast_threshold: 0.5,
            fall_threshold: 1.0,
            detection_multiplier: 3.0,
            grid_points: 2048,
            grid_span_sigmas: 4.0,
        }
    }
}

impl CiConfig {
    pub fn validate(&self) -> Result<(), CiError> {
        let positive = [
            ("broadcast_threshold", self.broadcast_threshold),
            ("fall_threshold", self.fall_threshold),
            ("detection_multiplier", self.detection_multiplier),
            ("grid_span_sigmas", self.grid_span_sigmas),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CiError::InvalidConfig(format!("{name}: must be positive, got {v}")));
            }
        }
        if self.grid_points < 2 {
            return Err(CiError::InvalidConfig("grid_points: must be at least 2".into()));
        }
        Ok(())
    }
}

/// Weight `omega` on `a` that minimizes the fused variance: 1 if `a` has the
/// smaller (or equal) variance, else 0.
pub fn ci_weight(a: &GaussianEstimate, b: &GaussianEstimate) -> Result<f64, CiError> {
    a.validate()?;
    b.validate()?;
    Ok(if a.variance <= b.variance { 1.0 } else { 0.0 })
}

/// Scalar covariance intersection. The optimal `omega` is 0 or 1, so the
/// result is the lower-variance operand itself, `a` on ties; returning it
/// directly avoids the rounding of `1 / (1 / P)`.
pub fn ci_fuse(a: &GaussianEstimate, b: &GaussianEstimate) -> Result<GaussianEstimate, CiError> {
    Ok(if ci_weight(a, b)? == 1.0 { *a } else { *b })
}

/// `w1(t)`: 0 at or below `mean_l - 3 sigma_l`, 1 above.
pub fn step_weight_w1(t: f64, local: &GaussianEstimate) -> f64 {
    if t <= local.lower_support() {
        0.0
    } else {
        1.0
    }
}

/// `w2(t)`: 0 at or below `max(mean_l - 3 sigma_l, mean_g - 3 sigma_g)`, 1 above.
pub fn step_weight_w2(t: f64, local: &GaussianEstimate, global: &GaussianEstimate) -> f64 {
    if t <= local.lower_support().max(global.lower_support()) {
        0.0
    } else {
        1.0
    }
}

/// Which weighting `fuse_local` applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionCase {
    /// Identical means: plain sum of both densities.
    Tie,
    /// Local density in full, global density weighted by `w1`.
    LocalDominant,
    /// Global density in full, local density weighted by `w2`.
    GlobalDominant,
}

pub fn fusion_case(
    global: &GaussianEstimate,
    local: &GaussianEstimate,
    prev_local_mean: f64,
    cfg: &CiConfig,
) -> FusionCase {
    if local.mean == global.mean {
        FusionCase::Tie
    } else if local.mean > global.mean || (global.mean - prev_local_mean).abs() <= cfg.fall_threshold {
        FusionCase::LocalDominant
    } else {
        FusionCase::GlobalDominant
    }
}

struct Moments {
    mass: f64,
    first: f64,
    second: f64,
}

/// Trapezoid moments of a Gaussian density over `[lo, hi]`.
///
/// Grid values come from the exact ratio recurrence
/// `f(t + h) / f(t) = exp(-((t - mu) h + h^2 / 2) / sigma^2)`, whose ratio
/// itself shrinks by `exp(-h^2 / sigma^2)` per step, so only three
/// exponentials are evaluated. The walk starts next to the mean and moves
/// outwards, which keeps far tails from underflowing the start value.
fn trapezoid_moments(e: &GaussianEstimate, lo: f64, hi: f64, points: usize) -> Moments {
    let mut m = Moments {
        mass: 0.0,
        first: 0.0,
        second: 0.0,
    };
    if hi <= lo {
        return m;
    }
    let h = (hi - lo) / (points - 1) as f64;
    let var = e.variance;
    let last = points - 1;
    let k0 = (((e.mean - lo) / h).round().max(0.0) as usize).min(last);
    let t0 = lo + h * k0 as f64;
    let f0 = e.pdf(t0);
    let shrink = (-h * h / var).exp();
    let mut add = |k: usize, f: f64| {
        let t = lo + h * k as f64;
        let w = if k == 0 || k == last { 0.5 * h } else { h };
        let v = w * f;
        m.mass += v;
        m.first += v * t;
        m.second += v * t * t;
    };
    add(k0, f0);
    let (mut f, mut ratio) = (f0, (-((t0 - e.mean) * h + 0.5 * h * h) / var).exp());
    for k in k0 + 1..=last {
        f *= ratio;
        ratio *= shrink;
        add(k, f);
    }
    let (mut f, mut ratio) = (f0, (((t0 - e.mean) * h - 0.5 * h * h) / var).exp());
    for k in (0..k0).rev() {
        f *= ratio;
        ratio *= shrink;
        add(k, f);
    }
    m
}

/// Moment-matched Gaussian of `primary(t) + [t > cutoff] secondary(t)`.
///
/// Integrated with the trapezoid rule over
/// `[min(mean - span sigma), max(mean + span sigma)]`; the secondary term is
/// integrated from the cutoff so that the step never falls inside a panel.
fn weighted_mixture(
    primary: &GaussianEstimate,
    secondary: &GaussianEstimate,
    cutoff: f64,
    cfg: &CiConfig,
) -> Result<GaussianEstimate, CiError> {
    let span = cfg.grid_span_sigmas;
    let lo = (primary.mean - span * primary.std_dev()).min(secondary.mean - span * secondary.std_dev());
    let hi = (primary.mean + span * primary.std_dev()).max(secondary.mean + span * secondary.std_dev());
    let p = trapezoid_moments(primary, lo, hi, cfg.grid_points);
    let s = trapezoid_moments(secondary, cutoff.max(lo), hi, cfg.grid_points);
    let mass = p.mass + s.mass;
    if mass <= 0.0 || mass.is_nan() {
        return Err(CiError::ZeroMass);
    }
    let mean = (p.first + s.first) / mass;
    let variance = ((p.second + s.second) / mass - mean * mean).max(f64::MIN_POSITIVE);
    GaussianEstimate::new(mean, variance)
}

/// Folds a local observation into the global estimate of the maximum.
///
/// * local mean above global (or the global fell by no more than
///   `fall_threshold` from the previous local reading): `l + w1 g`.
/// * local mean below global otherwise: `g + w2 l`.
/// * identical means: `l + g`.
pub fn fuse_local(
    global: &GaussianEstimate,
    local: &GaussianEstimate,
    prev_local_mean: f64,
    cfg: &CiConfig,
) -> Result<GaussianEstimate, CiError> {
    fuse_with_case(global, local, fusion_case(global, local, prev_local_mean, cfg), cfg)
}

/// The mixture of [`fuse_local`] for an explicitly chosen case.
pub fn fuse_with_case(
    global: &GaussianEstimate,
    local: &GaussianEstimate,
    case: FusionCase,
    cfg: &CiConfig,
) -> Result<GaussianEstimate, CiError> {
    global.validate()?;
    local.validate()?;
    match case {
        FusionCase::Tie => weighted_mixture(local, global, f64::NEG_INFINITY, cfg),
        FusionCase::LocalDominant => weighted_mixture(local, global, local.lower_support(), cfg),
        FusionCase::GlobalDominant => {
            let cutoff = local.lower_support().max(global.lower_support());
            weighted_mixture(global, local, cutoff, cfg)
        }
    }
}

/// Combines a neighbor's global estimate with the own one.
///
/// Estimates whose means agree within the broadcast threshold describe the
/// same maximum and are fused by CI. A received estimate that is higher by
/// more than the threshold is adopted like a larger local reading (`w1`
/// mixture); one that is lower is absorbed with the own estimate dominant
/// (`w2` mixture), so a neighbor can never drag the maximum down.
pub fn fuse_global(
    own: &GaussianEstimate,
    received: &GaussianEstimate,
    cfg: &CiConfig,
) -> Result<GaussianEstimate, CiError> {
    let diff = received.mean - own.mean;
    if diff.abs() <= cfg.broadcast_threshold {
        ci_fuse(own, received)
    } else if diff > 0.0 {
        fuse_with_case(own, received, FusionCase::LocalDominant, cfg)
    } else {
        fuse_with_case(own, received, FusionCase::GlobalDominant, cfg)
    }
}

/// Last estimate heard from a neighbor and the round it arrived in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stamped {
    pub estimate: GaussianEstimate,
    pub round: u64,
}

/// Per-neighbor record of the latest received estimate; `None` until the
/// neighbor has been heard from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborTable(pub BTreeMap<NodeId, Option<Stamped>>);

impl NeighborTable {
    pub fn with_neighbors(neighbors: impl IntoIterator<Item = NodeId>) -> Self {
        Self(neighbors.into_iter().map(|n| (n, None)).collect())
    }

    pub fn record(&mut self, neighbor: NodeId, estimate: GaussianEstimate, round: u64) {
        if let Some(slot) = self.0.get_mut(&neighbor) {
            *slot = Some(Stamped { estimate, round });
        }
    }

    pub fn get(&self, neighbor: NodeId) -> Option<&Stamped> {
        self.0.get(&neighbor).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// For each neighbor, the set of that neighbor's neighbors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TwoHopTable(pub BTreeMap<NodeId, BTreeSet<NodeId>>);

impl TwoHopTable {
    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.keys().copied()
    }
}

/// True iff some neighbor's recorded mean differs from the new mean by more
/// than the threshold. A neighbor not yet heard from always needs the update.
pub fn should_broadcast(new: &GaussianEstimate, table: &NeighborTable, cfg: &CiConfig) -> bool {
    table.0.values().any(|entry| match entry {
        None => true,
        Some(s) => (new.mean - s.estimate.mean).abs() > cfg.broadcast_threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relay {
    Rebroadcast,
    Suppress,
}

/// After processing a broadcast from `origin`: rebroadcast only if the own
/// estimate changed and some own neighbor lies outside the origin's range.
pub fn suppress_rebroadcast(origin: NodeId, own: NodeId, changed: bool, two_hop: &TwoHopTable) -> Relay {
    if !changed {
        return Relay::Suppress;
    }
    let empty = BTreeSet::new();
    let covered = two_hop.0.get(&origin).unwrap_or(&empty);
    let uncovered = two_hop
        .neighbors()
        .any(|n| n != origin && n != own && !covered.contains(&n));
    if uncovered {
        Relay::Rebroadcast
    } else {
        Relay::Suppress
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Normal,
    Suspect,
}

/// Suspect iff the received mean is more than `multiplier` of the judge's
/// own standard deviations away from the judge's mean.
pub fn classify_received(own: &GaussianEstimate, received: &GaussianEstimate, cfg: &CiConfig) -> Classification {
    if (received.mean - own.mean).abs() > cfg.detection_multiplier * own.std_dev() {
        Classification::Suspect
    } else {
        Classification::Normal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Normal,
    Suspect,
    Malicious,
}

/// Malicious iff a strict majority of replies deviate from the suspect's mean
/// by more than `multiplier` of the replier's standard deviation. With no
/// replies the node stays suspect.
pub fn majority_verdict(suspect: &GaussianEstimate, replies: &[GaussianEstimate], cfg: &CiConfig) -> Verdict {
    if replies.is_empty() {
        return Verdict::Suspect;
    }
    let deviating = replies
        .iter()
        .filter(|r| (suspect.mean - r.mean).abs() > cfg.detection_multiplier * r.std_dev())
        .count();
    if 2 * deviating > replies.len() {
        Verdict::Malicious
    } else {
        Verdict::Normal
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("illegal verdict transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: Verdict,
    pub to: Verdict,
}

/// Verdict lifecycle: normal -> suspect -> {normal | malicious}; malicious
/// is terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerdictState(Option<Verdict>);

impl VerdictState {
    pub fn current(&self) -> Verdict {
        self.0.unwrap_or(Verdict::Normal)
    }

    pub fn transition(&mut self, to: Verdict) -> Result<Verdict, IllegalTransition> {
        let from = self.current();
        let legal = matches!(
            (from, to),
            (Verdict::Normal, Verdict::Normal)
                | (Verdict::Normal, Verdict::Suspect)
                | (Verdict::Suspect, Verdict::Suspect)
                | (Verdict::Suspect, Verdict::Normal)
                | (Verdict::Suspect, Verdict::Malicious)
                | (Verdict::Malicious, Verdict::Malicious)
        );
        if !legal {
            return Err(IllegalTransition { from, to });
        }
        self.0 = Some(to);
        Ok(to)
    }
}

/// A node's neighborhood state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeTables {
    pub neighbors: NeighborTable,
    pub two_hop: TwoHopTable,
}

impl NodeTables {
    /// Drops every trace of `node`. Returns whether anything changed.
    pub fn forget(&mut self, node: NodeId) -> bool {
        let mut changed = self.neighbors.0.remove(&node).is_some();
        changed |= self.two_hop.0.remove(&node).is_some();
        for set in self.two_hop.0.values_mut() {
            changed |= set.remove(&node);
        }
        changed
    }
}

/// Removes `node` from every table. Returns whether anything changed.
pub fn isolate(node: NodeId, tables: &mut BTreeMap<NodeId, NodeTables>) -> bool {
    tables.values_mut().fold(false, |acc, t| t.forget(node) | acc)
}
