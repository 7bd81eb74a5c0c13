//! Cluster-based private data aggregation over exact integers.
//!
//! Each of the `m` cluster members masks its private value `d` with a
//! random polynomial `d + r_1 s + ... + r_{m-1} s^{m-1}` and evaluates it at
//! every member's public seed `s`. The share for seed `j` is sent, encrypted
//! under the pair key, to the member that owns seed `j`. Summing the shares
//! that arrive at seed `j` gives
//! `F_j = sum(d) + R_1 s_j + ... + R_{m-1} s_j^{m-1}` where `R_i` are the
//! coefficient sums. Three variants recover `sum(d)`:
//!
//! * [`CpdaMode::Original`]: every member publishes its `F`, the leader solves
//!   the Vandermonde system.
//! * [`CpdaMode::Efficient`]: the leader picks a seed that dominates every
//!   other magnitude and peels `F_leader` apart by floor division.
//! * [`CpdaMode::Hardened`]: original CPDA gated by triangle checks on the
//!   seeds and on the shares received at each seed.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::keydist::PairKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CpdaError {
    #[error("seeds must be positive, found {0}")]
    NonPositiveSeed(BigInt),
    #[error("seed {0} appears more than once")]
    DuplicateSeed(BigInt),
    #[error("Vandermonde matrix is singular: seed {0} is repeated")]
    SingularMatrix(BigInt),
    #[error("expected {expected} values, got {actual}")]
    Arity { expected: usize, actual: usize },
    #[error("a CPDA cluster needs at least 3 members, got {0}")]
    ClusterTooSmall(usize),
    #[error("no secure link between cluster members {0} and {1}")]
    NoSecureLink(usize, usize),
    #[error("pair key missing for the transform")]
    MissingPairKey,
    #[error("corrupted transcript: {0}")]
    CorruptedTranscript(String),
    #[error("node {node}: secret outside the configured bounds ({detail})")]
    SecretOutOfBounds { node: usize, detail: String },
    #[error("protocol aborted by {check}: {violation}")]
    ProtocolAbort {
        check: ValidationCheck,
        violation: TriangleViolation,
    },
}

/// The public seeds `x, y, z, ...` of a cluster, leader first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSeeds(Vec<BigInt>);

impl ClusterSeeds {
    pub fn new(seeds: Vec<BigInt>) -> Result<Self, CpdaError> {
        for (i, s) in seeds.iter().enumerate() {
            if !s.is_positive() {
                return Err(CpdaError::NonPositiveSeed(s.clone()));
            }
            if seeds[..i].contains(s) {
                return Err(CpdaError::DuplicateSeed(s.clone()));
            }
        }
        Ok(Self(seeds))
    }

    pub fn from_u64(seeds: &[u64]) -> Result<Self, CpdaError> {
        Self::new(seeds.iter().map(|&s| BigInt::from(s)).collect())
    }

    pub fn as_slice(&self) -> &[BigInt] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Bounds on private values (`[0, D)`) and polynomial coefficients (`[1, R)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueBounds {
    pub value_bound: u64,
    pub coeff_bound: u64,
}

impl Default for ValueBounds {
    fn default() -> Self {
        Self {
            value_bound: 1000,
            coeff_bound: 1000,
        }
    }
}

/// A member's private reading and its masking coefficients `r_1..r_{m-1}`.
#[derive(Clone, PartialEq, Eq)]
pub struct NodeSecret {
    pub private_value: BigInt,
    pub coefficients: Vec<BigInt>,
}

impl fmt::Debug for NodeSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeSecret")
            .field("private_value", &self.private_value.to_string())
            .field(
                "coefficients",
                &self.coefficients.iter().map(ToString::to_string).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl NodeSecret {
    pub fn new(private_value: u64, coefficients: &[u64]) -> Self {
        Self {
            private_value: private_value.into(),
            coefficients: coefficients.iter().map(|&c| c.into()).collect(),
        }
    }

    /// Value in `[0, D)`, `m - 1` coefficients in `[1, R)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cluster_size: usize, bounds: ValueBounds) -> Self {
        Self::random_with_coeff_range(rng, cluster_size, bounds.value_bound, 1, bounds.coeff_bound)
    }

    /// Value in `[0, value_bound)`, coefficients in `[coeff_low, coeff_high)`.
    pub fn random_with_coeff_range<R: Rng + ?Sized>(
        rng: &mut R,
        cluster_size: usize,
        value_bound: u64,
        coeff_low: u64,
        coeff_high: u64,
    ) -> Self {
        let value = rng.random_range(0..value_bound.max(1));
        let coefficients: Vec<u64> = (1..cluster_size)
            .map(|_| rng.random_range(coeff_low..coeff_high.max(coeff_low + 1)))
            .collect();
        Self::new(value, &coefficients)
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len()
    }

    fn check_bounds(&self, node: usize, bounds: ValueBounds) -> Result<(), CpdaError> {
        let d = BigInt::from(bounds.value_bound);
        let r = BigInt::from(bounds.coeff_bound);
        if self.private_value.is_negative() || self.private_value >= d {
            return Err(CpdaError::SecretOutOfBounds {
                node,
                detail: format!("value {} not in [0, {d})", self.private_value),
            });
        }
        if let Some(c) = self.coefficients.iter().find(|c| **c < BigInt::one() || **c >= r) {
            return Err(CpdaError::SecretOutOfBounds {
                node,
                detail: format!("coefficient {c} not in [1, {r})"),
            });
        }
        Ok(())
    }
}

/// A member's shares, one per seed, in seed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareVector(pub Vec<BigInt>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FValue {
    pub seed_index: usize,
    pub value: BigInt,
}

/// Operation tallies for one or more protocol rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub add: u64,
    pub sub: u64,
    pub mul: u64,
    pub div: u64,
    pub exp: u64,
    pub enc: u64,
    pub mat_mul: u64,
    pub mat_inv: u64,
}

impl std::ops::AddAssign for OpCounters {
    fn add_assign(&mut self, o: Self) {
        self.add += o.add;
        self.sub += o.sub;
        self.mul += o.mul;
        self.div += o.div;
        self.exp += o.exp;
        self.enc += o.enc;
        self.mat_mul += o.mat_mul;
        self.mat_inv += o.mat_inv;
    }
}

impl std::iter::Sum for OpCounters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut acc, c| {
            acc += c;
            acc
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CpdaMode {
    Original,
    Efficient,
    Hardened,
}

impl CpdaMode {
    pub const ALL: [CpdaMode; 3] = [CpdaMode::Original, CpdaMode::Efficient, CpdaMode::Hardened];

    pub fn name(self) -> &'static str {
        match self {
            CpdaMode::Original => "original",
            CpdaMode::Efficient => "efficient",
            CpdaMode::Hardened => "hardened",
        }
    }
}

impl fmt::Display for CpdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(sum, R_1, ..., R_{m-1})` recovered from F-values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovered {
    pub sum: BigInt,
    pub coefficient_sums: Vec<BigInt>,
}

/// Everything that crossed the air during one cluster round, after decryption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterTranscript {
    /// Seeds actually used, leader first.
    pub seeds: Vec<BigInt>,
    /// `shares_at_seed[j][i]`: member `i`'s share evaluated at seed `j`.
    /// Efficient rounds only populate the leader's seed.
    pub shares_at_seed: Vec<Vec<BigInt>>,
    /// F-values in seed order (only the leader's in efficient rounds).
    pub f_values: Vec<FValue>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterResult {
    pub recovered_sum: BigInt,
    pub recovered_coefficient_sums: Vec<BigInt>,
    pub counters: OpCounters,
    pub mode: CpdaMode,
    pub transcript: ClusterTranscript,
}

/// Evaluates one member's masking polynomial at `seed`.
pub fn share_at(secret: &NodeSecret, seed: &BigInt, counters: &mut OpCounters) -> BigInt {
    let mut value = secret.private_value.clone();
    for (i, coeff) in secret.coefficients.iter().enumerate() {
        let power = i + 1;
        let term = if power == 1 {
            seed.clone()
        } else {
            counters.exp += 1;
            seed.pow(power as u32)
        };
        value += coeff * term;
        counters.mul += 1;
        counters.add += 1;
    }
    value
}

/// Shares of `secret` at every seed, in seed order.
pub fn compute_shares(secret: &NodeSecret, seeds: &ClusterSeeds, counters: &mut OpCounters) -> ShareVector {
    ShareVector(seeds.as_slice().iter().map(|s| share_at(secret, s, counters)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Encrypt,
    Decrypt,
}

fn keystream(key: PairKey) -> BigInt {
    let mut rng = ChaCha20Rng::seed_from_u64(key.0);
    let mut bytes = [0u8; 64];
    rng.fill_bytes(&mut bytes);
    BigInt::from_bytes_le(Sign::Plus, &bytes)
}

/// Keyed stand-in for pairwise encryption: XOR with a 512-bit keystream
/// derived from the pair key. It is an involution and NOT a cipher; only the
/// encryption count matters to the protocol accounting.
pub fn pairwise_transform(
    value: &BigInt,
    pair_key: Option<PairKey>,
    direction: Direction,
    counters: &mut OpCounters,
) -> Result<BigInt, CpdaError> {
    let key = pair_key.ok_or(CpdaError::MissingPairKey)?;
    if direction == Direction::Encrypt {
        counters.enc += 1;
    }
    Ok(value ^ keystream(key))
}

/// Sums the `m` shares that target one seed.
pub fn assemble_f(
    shares_at_seed: &[BigInt],
    seed_index: usize,
    cluster_size: usize,
    counters: &mut OpCounters,
) -> Result<FValue, CpdaError> {
    if shares_at_seed.len() != cluster_size {
        return Err(CpdaError::Arity {
            expected: cluster_size,
            actual: shares_at_seed.len(),
        });
    }
    counters.add += cluster_size.saturating_sub(1) as u64;
    Ok(FValue {
        seed_index,
        value: shares_at_seed.iter().sum(),
    })
}

/// Solves `G u = F` with `G[j][i] = seed_j^i` exactly.
///
/// Uses the Björck–Pereyra recurrences over rationals (Newton divided
/// differences, then conversion to the monomial basis), which is O(m^2) and
/// exact. Counted as one matrix inversion plus one matrix multiplication.
pub fn solve_vandermonde(
    seeds: &[BigInt],
    f_values: &[FValue],
    counters: &mut OpCounters,
) -> Result<Recovered, CpdaError> {
    let m = seeds.len();
    if f_values.len() != m || m == 0 {
        return Err(CpdaError::Arity {
            expected: m,
            actual: f_values.len(),
        });
    }
    for (i, s) in seeds.iter().enumerate() {
        if seeds[..i].contains(s) {
            return Err(CpdaError::SingularMatrix(s.clone()));
        }
    }
    let mut rhs: Vec<Option<BigRational>> = vec![None; m];
    for f in f_values {
        let slot = rhs.get_mut(f.seed_index).ok_or_else(|| {
            CpdaError::CorruptedTranscript(format!("F-value for unknown seed index {}", f.seed_index))
        })?;
        if slot.is_some() {
            return Err(CpdaError::CorruptedTranscript(format!(
                "two F-values for seed index {}",
                f.seed_index
            )));
        }
        *slot = Some(BigRational::from_integer(f.value.clone()));
    }
    let mut c: Vec<BigRational> = rhs.into_iter().map(|v| v.expect("all slots filled")).collect();
    let s: Vec<BigRational> = seeds.iter().map(|v| BigRational::from_integer(v.clone())).collect();

    for k in 0..m.saturating_sub(1) {
        for i in (k + 1..m).rev() {
            c[i] = (&c[i] - &c[i - 1]) / (&s[i] - &s[i - k - 1]);
        }
    }
    for k in (0..m.saturating_sub(1)).rev() {
        for i in k..m - 1 {
            let t = &s[k] * &c[i + 1];
            c[i] = &c[i] - t;
        }
    }
    counters.mat_inv += 1;
    counters.mat_mul += 1;

    let mut ints = Vec::with_capacity(m);
    for (i, v) in c.into_iter().enumerate() {
        if !v.is_integer() {
            return Err(CpdaError::CorruptedTranscript(format!(
                "component {i} of the solution is {v}, not an integer"
            )));
        }
        ints.push(v.to_integer());
    }
    let sum = ints.remove(0);
    Ok(Recovered {
        sum,
        coefficient_sums: ints,
    })
}

/// Peels `value = residue + q_1 base + ... + q_degree base^degree` apart by
/// repeated floor division from the top power down. Exact whenever every
/// lower-order part is smaller than the next power of `base`.
pub fn floor_decompose(value: &BigInt, base: &BigInt, degree: usize) -> (BigInt, Vec<BigInt>) {
    let mut rest = value.clone();
    let mut coeffs = vec![BigInt::zero(); degree];
    for power in (1..=degree).rev() {
        let p = base.pow(power as u32);
        let q = rest.div_floor(&p);
        rest -= &q * &p;
        coeffs[power - 1] = q;
    }
    (rest, coeffs)
}

/// Efficient recovery from the leader's F-value alone. `degree` is `m - 1`;
/// for a 3-member cluster this costs 2 divisions and 2 subtractions.
///
/// Correct only if the leader seed dominates: `sum < x` and every partial
/// remainder is below the next power of `x`. The callee cannot check this.
pub fn recover_by_division(f: &FValue, x: &BigInt, degree: usize, counters: &mut OpCounters) -> Recovered {
    let (sum, coefficient_sums) = floor_decompose(&f.value, x, degree);
    counters.div += degree as u64;
    counters.sub += degree as u64;
    Recovered { sum, coefficient_sums }
}

/// Leader seed used by efficient mode: `2 m (D + R m)`. Large enough that
/// `sum < m D < x` and `sum + R_1 x < x^2` for any honest cluster.
pub fn efficient_leader_seed(bounds: ValueBounds, cluster_size: usize) -> BigInt {
    let m = BigInt::from(cluster_size);
    let d = BigInt::from(bounds.value_bound);
    let r = BigInt::from(bounds.coeff_bound);
    BigInt::from(2) * &m * (d + r * &m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationCheck {
    Seeds,
    Shares { seed_index: usize },
}

impl fmt::Display for ValidationCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationCheck::Seeds => f.write_str("seed triangle check"),
            ValidationCheck::Shares { seed_index } => write!(f, "share triangle check at seed {seed_index}"),
        }
    }
}

/// Why a triangle check rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriangleViolation {
    TooFewValues(usize),
    /// `values[index]` is not strictly below the sum of the others.
    Dominant { index: usize, value: BigInt, others_sum: BigInt },
}

impl fmt::Display for TriangleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriangleViolation::TooFewValues(n) => write!(f, "need at least 3 values, got {n}"),
            TriangleViolation::Dominant {
                index,
                value,
                others_sum,
            } => write!(f, "value #{index} = {value} is not below the sum of the others ({others_sum})"),
        }
    }
}

fn triangle_check(values: &[BigInt]) -> Result<(), TriangleViolation> {
    if values.len() < 3 {
        return Err(TriangleViolation::TooFewValues(values.len()));
    }
    let total: BigInt = values.iter().sum();
    for (index, v) in values.iter().enumerate() {
        let others_sum = &total - v;
        if *v >= others_sum {
            return Err(TriangleViolation::Dominant {
                index,
                value: v.clone(),
                others_sum,
            });
        }
    }
    Ok(())
}

/// Every seed must be strictly less than the sum of the other seeds.
pub fn validate_seeds(seeds: &[BigInt]) -> Result<(), TriangleViolation> {
    triangle_check(seeds)
}

/// Every share targeted at one seed must be strictly less than the sum of
/// the others.
pub fn validate_shares(shares_at_one_seed: &[BigInt]) -> Result<(), TriangleViolation> {
    triangle_check(shares_at_one_seed)
}

/// Pair keys inside a cluster, indexed by member position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterKeys {
    keys: BTreeMap<(usize, usize), PairKey>,
}

impl ClusterKeys {
    /// Distinct keys for every pair, derived from `salt`. For standalone
    /// rounds that do not go through key predistribution.
    pub fn synthetic(cluster_size: usize, salt: u64) -> Self {
        let mut keys = BTreeMap::new();
        for i in 0..cluster_size {
            for j in i + 1..cluster_size {
                let id = salt
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add((i * cluster_size + j) as u64);
                keys.insert((i, j), PairKey(id));
            }
        }
        Self { keys }
    }

    pub fn insert(&mut self, i: usize, j: usize, key: PairKey) {
        self.keys.insert((i.min(j), i.max(j)), key);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<PairKey> {
        self.keys.get(&(i.min(j), i.max(j))).copied()
    }
}

/// Plays one complete cluster round. Member 0 is the leader.
pub fn run_cluster(
    secrets: &[NodeSecret],
    seeds: &ClusterSeeds,
    mode: CpdaMode,
    bounds: ValueBounds,
    keys: &ClusterKeys,
    counters: &mut OpCounters,
) -> Result<ClusterResult, CpdaError> {
    let m = secrets.len();
    if m < 3 {
        return Err(CpdaError::ClusterTooSmall(m));
    }
    if seeds.len() != m {
        return Err(CpdaError::Arity {
            expected: m,
            actual: seeds.len(),
        });
    }
    for s in secrets {
        if s.degree() != m - 1 {
            return Err(CpdaError::Arity {
                expected: m - 1,
                actual: s.degree(),
            });
        }
    }

    let mut round = OpCounters::default();
    let mut used_seeds = seeds.as_slice().to_vec();
    if mode == CpdaMode::Efficient {
        for (i, s) in secrets.iter().enumerate() {
            s.check_bounds(i, bounds)?;
        }
        used_seeds[0] = efficient_leader_seed(bounds, m);
        ClusterSeeds::new(used_seeds.clone())?;
    }
    if mode == CpdaMode::Hardened {
        validate_seeds(&used_seeds).map_err(|violation| CpdaError::ProtocolAbort {
            check: ValidationCheck::Seeds,
            violation,
        })?;
    }

    // Efficient rounds only need shares at the leader's seed.
    let targets: Vec<usize> = match mode {
        CpdaMode::Efficient => vec![0],
        _ => (0..m).collect(),
    };
    let mut shares_at_seed: Vec<Vec<BigInt>> = vec![Vec::new(); m];
    for (sender, secret) in secrets.iter().enumerate() {
        for &target in &targets {
            let share = share_at(secret, &used_seeds[target], &mut round);
            let delivered = if sender == target {
                share
            } else {
                let key = keys.get(sender, target).ok_or(CpdaError::NoSecureLink(sender, target))?;
                let wire = pairwise_transform(&share, Some(key), Direction::Encrypt, &mut round)?;
                pairwise_transform(&wire, Some(key), Direction::Decrypt, &mut round)?
            };
            shares_at_seed[target].push(delivered);
        }
    }

    if mode == CpdaMode::Hardened {
        for (seed_index, shares) in shares_at_seed.iter().enumerate() {
            validate_shares(shares).map_err(|violation| CpdaError::ProtocolAbort {
                check: ValidationCheck::Shares { seed_index },
                violation,
            })?;
        }
    }

    let mut f_values = Vec::with_capacity(targets.len());
    for &target in &targets {
        f_values.push(assemble_f(&shares_at_seed[target], target, m, &mut round)?);
        // Composing the coefficient sums R_1..R_{m-1} that F carries.
        round.add += (m - 1) as u64;
    }

    let recovered = match mode {
        CpdaMode::Efficient => recover_by_division(&f_values[0], &used_seeds[0], m - 1, &mut round),
        CpdaMode::Original | CpdaMode::Hardened => solve_vandermonde(&used_seeds, &f_values, &mut round)?,
    };
    *counters += round;
    Ok(ClusterResult {
        recovered_sum: recovered.sum,
        recovered_coefficient_sums: recovered.coefficient_sums,
        counters: round,
        mode,
        transcript: ClusterTranscript {
            seeds: used_seeds,
            shares_at_seed,
            f_values,
        },
    })
}

/// Full share exchange of original CPDA without validation or recovery.
/// Attack experiments use it to build transcripts with arbitrary seeds.
pub fn exchange(secrets: &[NodeSecret], seeds: &[BigInt]) -> ClusterTranscript {
    let mut scratch = OpCounters::default();
    let m = seeds.len();
    let shares_at_seed: Vec<Vec<BigInt>> = (0..m)
        .map(|j| secrets.iter().map(|s| share_at(s, &seeds[j], &mut scratch)).collect())
        .collect();
    let f_values = shares_at_seed
        .iter()
        .enumerate()
        .map(|(j, shares)| FValue {
            seed_index: j,
            value: shares.iter().sum(),
        })
        .collect();
    ClusterTranscript {
        seeds: seeds.to_vec(),
        shares_at_seed,
        f_values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    fn bigs(v: &[i64]) -> Vec<BigInt> {
        v.iter().map(|&x| big(x)).collect()
    }

    fn f_values(v: &[i64]) -> Vec<FValue> {
        v.iter()
            .enumerate()
            .map(|(i, &x)| FValue {
                seed_index: i,
                value: big(x),
            })
            .collect()
    }

    #[test]
    fn shares_of_zero_polynomial() {
        let secret = NodeSecret::new(0, &[0, 0]);
        let seeds = ClusterSeeds::from_u64(&[3, 8, 21]).unwrap();
        let mut c = OpCounters::default();
        assert_eq!(compute_shares(&secret, &seeds, &mut c).0, bigs(&[0, 0, 0]));
    }

    #[test]
    fn shares_hand_evaluated() {
        let secret = NodeSecret::new(5, &[2, 3]);
        let mut c = OpCounters::default();
        assert_eq!(share_at(&secret, &big(7), &mut c), big(166));
        let seeds = ClusterSeeds::from_u64(&[7, 11, 13]).unwrap();
        let mut c = OpCounters::default();
        assert_eq!(compute_shares(&secret, &seeds, &mut c).0, bigs(&[166, 390, 538]));
        assert_eq!((c.add, c.mul, c.exp), (6, 6, 3));
    }

    #[test]
    fn seeds_must_be_distinct_and_positive() {
        assert_eq!(ClusterSeeds::from_u64(&[2, 2, 3]), Err(CpdaError::DuplicateSeed(big(2))));
        assert_eq!(ClusterSeeds::from_u64(&[0, 2, 3]), Err(CpdaError::NonPositiveSeed(big(0))));
    }

    #[test]
    fn transform_round_trip() {
        let mut c = OpCounters::default();
        let v = big(123_456_789);
        let e = pairwise_transform(&v, Some(PairKey(4)), Direction::Encrypt, &mut c).unwrap();
        assert_ne!(e, v);
        let d = pairwise_transform(&e, Some(PairKey(4)), Direction::Decrypt, &mut c).unwrap();
        assert_eq!(d, v);
        assert_eq!(c.enc, 1);
        assert_eq!(
            pairwise_transform(&v, None, Direction::Encrypt, &mut c),
            Err(CpdaError::MissingPairKey)
        );
    }

    #[test]
    fn transform_distinct_keys_give_distinct_ciphertexts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut c = OpCounters::default();
        for _ in 0..100 {
            let v = BigInt::from(rng.random::<u64>());
            let (k1, k2) = (rng.random::<u64>(), rng.random::<u64>());
            if k1 == k2 {
                continue;
            }
            let e1 = pairwise_transform(&v, Some(PairKey(k1)), Direction::Encrypt, &mut c).unwrap();
            let e2 = pairwise_transform(&v, Some(PairKey(k2)), Direction::Encrypt, &mut c).unwrap();
            assert_ne!(e1, e2);
        }
    }

    #[test]
    fn assemble_examples() {
        let mut c = OpCounters::default();
        assert_eq!(assemble_f(&bigs(&[6, 0, 0]), 0, 3, &mut c).unwrap().value, big(6));
        assert_eq!(c.add, 2);
        // a=1,b=2,c=3, all r=1, x=1: each share is d + 1 + 1.
        let shares = bigs(&[3, 4, 5]);
        assert_eq!(assemble_f(&shares, 0, 3, &mut c).unwrap().value, big(12));
        assert_eq!(assemble_f(&bigs(&[5, 3, 4]), 0, 3, &mut c).unwrap().value, big(12));
        assert_eq!(
            assemble_f(&bigs(&[1, 2]), 0, 3, &mut c),
            Err(CpdaError::Arity { expected: 3, actual: 2 })
        );
    }

    #[test]
    fn vandermonde_examples() {
        let mut c = OpCounters::default();
        let r = solve_vandermonde(&bigs(&[1, 2, 3]), &f_values(&[6, 6, 6]), &mut c).unwrap();
        assert_eq!((r.sum, r.coefficient_sums), (big(6), bigs(&[0, 0])));
        let r = solve_vandermonde(&bigs(&[1, 2, 3]), &f_values(&[8, 12, 18]), &mut c).unwrap();
        assert_eq!((r.sum, r.coefficient_sums), (big(6), bigs(&[1, 1])));
        assert_eq!((c.mat_inv, c.mat_mul), (2, 2));
        assert_eq!(
            solve_vandermonde(&bigs(&[2, 2, 3]), &f_values(&[1, 2, 3]), &mut c),
            Err(CpdaError::SingularMatrix(big(2)))
        );
    }

    #[test]
    fn vandermonde_non_integer_is_corruption() {
        let mut c = OpCounters::default();
        let err = solve_vandermonde(&bigs(&[1, 2, 3]), &f_values(&[8, 12, 19]), &mut c).unwrap_err();
        assert!(matches!(err, CpdaError::CorruptedTranscript(_)));
    }

    #[test]
    fn vandermonde_respects_seed_index() {
        let mut c = OpCounters::default();
        let mut f = f_values(&[8, 12, 18]);
        f.reverse();
        let r = solve_vandermonde(&bigs(&[1, 2, 3]), &f, &mut c).unwrap();
        assert_eq!(r.sum, big(6));
    }

    #[test]
    fn division_examples() {
        let mut c = OpCounters::default();
        let f = FValue {
            seed_index: 0,
            value: big(30306),
        };
        let r = recover_by_division(&f, &big(100), 2, &mut c);
        assert_eq!((r.sum, r.coefficient_sums), (big(6), bigs(&[3, 3])));
        assert_eq!((c.div, c.sub), (2, 2));

        let f = FValue {
            seed_index: 0,
            value: big(41),
        };
        let r = recover_by_division(&f, &big(50), 2, &mut c);
        assert_eq!((r.sum, r.coefficient_sums), (big(41), bigs(&[0, 0])));

        // x = 2 violates the separation bound: 24 = 6 + 3*2 + 3*4 decodes wrongly.
        let f = FValue {
            seed_index: 0,
            value: big(24),
        };
        let r = recover_by_division(&f, &big(2), 2, &mut c);
        assert_eq!((r.sum.clone(), r.coefficient_sums.clone()), (big(0), bigs(&[0, 6])));
        assert_ne!((r.sum, r.coefficient_sums), (big(6), bigs(&[3, 3])));
    }

    #[test]
    fn seed_validation_examples() {
        assert_eq!(validate_seeds(&bigs(&[3, 4, 5])), Ok(()));
        match validate_seeds(&bigs(&[1, 2, 1000])) {
            Err(TriangleViolation::Dominant { index, value, .. }) => {
                assert_eq!((index, value), (2, big(1000)));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(validate_seeds(&bigs(&[1, 1, 2])).is_err());
        assert_eq!(validate_seeds(&bigs(&[1, 2])), Err(TriangleViolation::TooFewValues(2)));
    }

    #[test]
    fn share_validation_examples() {
        assert_eq!(validate_shares(&bigs(&[166, 170, 160])), Ok(()));
        assert!(matches!(
            validate_shares(&bigs(&[10, 12, 1_000_000_000])),
            Err(TriangleViolation::Dominant { index: 2, .. })
        ));
        assert!(validate_shares(&bigs(&[5, 5, 10])).is_err());
    }

    #[test]
    fn run_cluster_all_zero() {
        let secrets = vec![NodeSecret::new(0, &[1, 1]); 3];
        let seeds = ClusterSeeds::from_u64(&[101, 103, 107]).unwrap();
        for mode in CpdaMode::ALL {
            let mut c = OpCounters::default();
            let r = run_cluster(&secrets, &seeds, mode, ValueBounds::default(), &ClusterKeys::synthetic(3, 1), &mut c)
                .unwrap();
            assert_eq!(r.recovered_sum, big(0), "{mode}");
        }
    }

    #[test]
    fn run_cluster_original_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let secrets: Vec<NodeSecret> = [5u64, 4, 9]
            .iter()
            .map(|&d| NodeSecret::new(d, &[rng.random_range(1..100), rng.random_range(1..100)]))
            .collect();
        let seeds = ClusterSeeds::from_u64(&[101, 103, 107]).unwrap();
        let mut c = OpCounters::default();
        let r = run_cluster(
            &secrets,
            &seeds,
            CpdaMode::Original,
            ValueBounds::default(),
            &ClusterKeys::synthetic(3, 9),
            &mut c,
        )
        .unwrap();
        assert_eq!(r.recovered_sum, big(18));
        let r1: BigInt = secrets.iter().map(|s| &s.coefficients[0]).sum();
        assert_eq!(r.recovered_coefficient_sums[0], r1);
    }

    #[test]
    fn run_cluster_counters_match_tables() {
        let secrets = vec![
            NodeSecret::new(5, &[2, 3]),
            NodeSecret::new(4, &[7, 1]),
            NodeSecret::new(9, &[6, 8]),
        ];
        let seeds = ClusterSeeds::from_u64(&[101, 103, 107]).unwrap();
        let keys = ClusterKeys::synthetic(3, 2);
        let mut c = OpCounters::default();
        let r = run_cluster(&secrets, &seeds, CpdaMode::Original, ValueBounds::default(), &keys, &mut c).unwrap();
        let k = r.counters;
        assert_eq!((k.add, k.mul, k.enc, k.mat_mul, k.mat_inv), (30, 18, 6, 1, 1));
        assert_eq!(k.exp, 9);
        assert_eq!(c, k);

        let r = run_cluster(&secrets, &seeds, CpdaMode::Efficient, ValueBounds::default(), &keys, &mut c).unwrap();
        let k = r.counters;
        assert_eq!(
            k,
            OpCounters {
                add: 10,
                sub: 2,
                mul: 6,
                div: 2,
                exp: 3,
                enc: 2,
                mat_mul: 0,
                mat_inv: 0
            }
        );
        assert_eq!(r.recovered_sum, big(18));
    }

    #[test]
    fn hardened_aborts_on_large_seed() {
        let secrets = vec![NodeSecret::new(1, &[2, 3]); 3];
        let seeds = ClusterSeeds::from_u64(&[1, 2, 1000]).unwrap();
        let err = run_cluster(
            &secrets,
            &seeds,
            CpdaMode::Hardened,
            ValueBounds::default(),
            &ClusterKeys::synthetic(3, 0),
            &mut OpCounters::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CpdaError::ProtocolAbort {
                check: ValidationCheck::Seeds,
                ..
            }
        ));
    }

    #[test]
    fn hardened_aborts_on_skewed_shares() {
        let secrets = vec![
            NodeSecret::new(1, &[900_000, 800_000]),
            NodeSecret::new(2, &[3, 4]),
            NodeSecret::new(3, &[5, 6]),
        ];
        let seeds = ClusterSeeds::from_u64(&[10, 11, 12]).unwrap();
        let err = run_cluster(
            &secrets,
            &seeds,
            CpdaMode::Hardened,
            ValueBounds::default(),
            &ClusterKeys::synthetic(3, 0),
            &mut OpCounters::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CpdaError::ProtocolAbort {
                check: ValidationCheck::Shares { .. },
                ..
            }
        ));
    }

    #[test]
    fn run_cluster_needs_keys_and_members() {
        let secrets = vec![NodeSecret::new(1, &[2, 3]); 3];
        let seeds = ClusterSeeds::from_u64(&[4, 5, 6]).unwrap();
        let mut keys = ClusterKeys::default();
        keys.insert(0, 1, PairKey(1));
        let err = run_cluster(&secrets, &seeds, CpdaMode::Original, ValueBounds::default(), &keys, &mut OpCounters::default())
            .unwrap_err();
        assert_eq!(err, CpdaError::NoSecureLink(0, 2));
        let err = run_cluster(
            &secrets[..2],
            &ClusterSeeds::from_u64(&[4, 5]).unwrap(),
            CpdaMode::Original,
            ValueBounds::default(),
            &keys,
            &mut OpCounters::default(),
        )
        .unwrap_err();
        assert_eq!(err, CpdaError::ClusterTooSmall(2));
    }

    #[test]
    fn efficient_rejects_out_of_bound_secret() {
        let secrets = vec![NodeSecret::new(5000, &[2, 3]), NodeSecret::new(1, &[2, 3]), NodeSecret::new(1, &[2, 3])];
        let seeds = ClusterSeeds::from_u64(&[4, 5, 6]).unwrap();
        let err = run_cluster(
            &secrets,
            &seeds,
            CpdaMode::Efficient,
            ValueBounds::default(),
            &ClusterKeys::synthetic(3, 0),
            &mut OpCounters::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CpdaError::SecretOutOfBounds { node: 0, .. }));
    }

    #[test]
    fn larger_clusters_recover_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let bounds = ValueBounds::default();
        for m in [4usize, 7, 12] {
            let secrets: Vec<NodeSecret> = (0..m).map(|_| NodeSecret::random(&mut rng, m, bounds)).collect();
            let truth: BigInt = secrets.iter().map(|s| &s.private_value).sum();
            let seeds = ClusterSeeds::new((0..m).map(|i| BigInt::from(1000 + 37 * i)).collect()).unwrap();
            for mode in CpdaMode::ALL {
                let mut c = OpCounters::default();
                let r = run_cluster(&secrets, &seeds, mode, bounds, &ClusterKeys::synthetic(m, 3), &mut c);
                match (mode, r) {
                    (_, Ok(r)) => assert_eq!(r.recovered_sum, truth, "m={m} {mode}"),
                    (CpdaMode::Hardened, Err(CpdaError::ProtocolAbort { .. })) => {}
                    (_, Err(e)) => panic!("m={m} {mode}: {e}"),
                }
            }
        }
    }
}
