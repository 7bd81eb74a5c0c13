//! Insider attacks on original CPDA.
//!
//! All three attacks exploit the same weakness: when one evaluation point
//! dominates every value and coefficient it multiplies, a share evaluated at
//! that point can be peeled apart by floor division, exposing the sender's
//! masking coefficients and then its private value.
//!
//! Note: the two F equations an attacker sees, `F_j = S + R_1 s_j + R_2 s_j^2`,
//! only pin down the cluster sum `S`, never two individual values. The
//! attacks therefore take one victim's value from the division remainder
//! and the other from `S`, then check the result against every F-value they
//! hold.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::Signed;
use thiserror::Error;

use crate::cpda::{efficient_leader_seed, floor_decompose, ClusterTranscript, NodeSecret, ValueBounds};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("attack failed: {0}")]
    AttackFailed(String),
    #[error("malformed view: {0}")]
    MalformedView(String),
}

/// What a (possibly malicious) leader holds after an original-CPDA round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaderView {
    pub own: NodeSecret,
    /// The leader's seed `x`.
    pub seed: BigInt,
    /// Seeds of the members, in member order (`y, z, ...`).
    pub member_seeds: Vec<BigInt>,
    /// Shares the members sent at `x` (`v_A^B, v_A^C, ...`).
    pub received_shares: Vec<BigInt>,
    /// F-values the members reported (`F_B, F_C, ...`).
    pub received_f: Vec<BigInt>,
}

impl LeaderView {
    /// Leader is member 0 of the transcript.
    pub fn from_transcript(transcript: &ClusterTranscript, own: &NodeSecret) -> Result<Self, AttackError> {
        let m = transcript.seeds.len();
        if transcript.f_values.len() != m || transcript.shares_at_seed.first().map_or(0, Vec::len) != m {
            return Err(AttackError::MalformedView("transcript is not a full original round".into()));
        }
        Ok(Self {
            own: own.clone(),
            seed: transcript.seeds[0].clone(),
            member_seeds: transcript.seeds[1..].to_vec(),
            received_shares: transcript.shares_at_seed[0][1..].to_vec(),
            received_f: transcript.f_values[1..].iter().map(|f| f.value.clone()).collect(),
        })
    }
}

/// What a member holds after an original-CPDA round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberView {
    /// Position of this member in the cluster (leader is 0).
    pub index: usize,
    pub own: NodeSecret,
    /// All public seeds, leader first.
    pub seeds: Vec<BigInt>,
    /// Shares the other members sent at this member's seed, by member index.
    pub received_shares: BTreeMap<usize, BigInt>,
    /// This member's own F-value.
    pub own_f: BigInt,
    /// F-values broadcast in the clear by other members, by member index.
    pub overheard_f: BTreeMap<usize, BigInt>,
}

impl MemberView {
    pub fn from_transcript(
        transcript: &ClusterTranscript,
        index: usize,
        own: &NodeSecret,
    ) -> Result<Self, AttackError> {
        let m = transcript.seeds.len();
        if index == 0 || index >= m {
            return Err(AttackError::MalformedView(format!("member index {index} out of 1..{m}")));
        }
        let shares = transcript
            .shares_at_seed
            .get(index)
            .filter(|s| s.len() == m)
            .ok_or_else(|| AttackError::MalformedView("missing shares at member seed".into()))?;
        let f_of = |j: usize| {
            transcript
                .f_values
                .iter()
                .find(|f| f.seed_index == j)
                .map(|f| f.value.clone())
        };
        let own_f = f_of(index).ok_or_else(|| AttackError::MalformedView("missing own F-value".into()))?;
        // Members other than the leader broadcast their F unencrypted.
        let overheard_f = (1..m)
            .filter(|&j| j != index)
            .filter_map(|j| f_of(j).map(|v| (j, v)))
            .collect();
        Ok(Self {
            index,
            own: own.clone(),
            seeds: transcript.seeds.clone(),
            received_shares: shares
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != index)
                .map(|(j, v)| (j, v.clone()))
                .collect(),
            own_f,
            overheard_f,
        })
    }

    fn seed(&self) -> &BigInt {
        &self.seeds[self.index]
    }
}

/// Values and masking coefficients an attack claims for its victims, keyed
/// by cluster position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub values: BTreeMap<usize, BigInt>,
    pub coefficients: BTreeMap<usize, Vec<BigInt>>,
}

impl Recovery {
    pub fn value(&self, member: usize) -> Option<&BigInt> {
        self.values.get(&member)
    }
}

/// Seed a malicious participant announces: `2 m (D + R m)`. For any share
/// `d + r_1 x + r_2 x^2` with `d < m D` and `r_1 < m R`, `d + r_1 x < x^2`,
/// so floor division by `x^2` and then `x` is exact.
pub fn pick_malicious_seed(value_bound: u64, coeff_bound: u64, cluster_size: usize) -> BigInt {
    efficient_leader_seed(
        ValueBounds {
            value_bound,
            coeff_bound,
        },
        cluster_size,
    )
}

fn poly_tail(coeffs: &[BigInt], seed: &BigInt) -> BigInt {
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| c * seed.pow(i as u32 + 1))
        .sum()
}

fn add_into(acc: &mut [BigInt], coeffs: &[BigInt]) {
    for (a, c) in acc.iter_mut().zip(coeffs) {
        *a += c;
    }
}

fn ensure_nonnegative(what: &str, v: &BigInt) -> Result<(), AttackError> {
    if v.is_negative() {
        return Err(AttackError::AttackFailed(format!("{what} came out negative ({v})")));
    }
    Ok(())
}

fn ensure_all_nonnegative(what: &str, vs: &[BigInt]) -> Result<(), AttackError> {
    vs.iter().try_for_each(|v| ensure_nonnegative(what, v))
}

/// Cluster sum implied by one F equation once the coefficient sums are known.
fn implied_sum(f: &BigInt, seed: &BigInt, coefficient_sums: &[BigInt]) -> BigInt {
    f - poly_tail(coefficient_sums, seed)
}

fn check_consistency(
    expected_sum: &BigInt,
    equations: impl Iterator<Item = (BigInt, BigInt)>,
    coefficient_sums: &[BigInt],
) -> Result<(), AttackError> {
    for (f, seed) in equations {
        let s = implied_sum(&f, &seed, coefficient_sums);
        if &s != expected_sum {
            return Err(AttackError::AttackFailed(format!(
                "F equation at seed {seed} implies sum {s}, expected {expected_sum}"
            )));
        }
    }
    Ok(())
}

/// Malicious leader: with a dominating `x`, every received `v_A^j` splits
/// into the member's coefficients and value.
pub fn leader_attack(view: &LeaderView) -> Result<Recovery, AttackError> {
    let members = view.received_shares.len();
    if members < 2 || view.member_seeds.len() != members || view.received_f.len() != members {
        return Err(AttackError::MalformedView("leader view needs matching shares, seeds and F-values".into()));
    }
    let degree = view.own.coefficients.len();
    let mut coefficient_sums = view.own.coefficients.clone();
    let mut recovery = Recovery {
        values: BTreeMap::new(),
        coefficients: BTreeMap::new(),
    };
    for (k, share) in view.received_shares.iter().enumerate() {
        let (residue, coeffs) = floor_decompose(share, &view.seed, degree);
        ensure_all_nonnegative("a recovered coefficient", &coeffs)?;
        add_into(&mut coefficient_sums, &coeffs);
        recovery.coefficients.insert(k + 1, coeffs);
        recovery.values.insert(k + 1, residue);
    }

    // The last member's value comes from the first member's F equation.
    let sum = implied_sum(&view.received_f[0], &view.member_seeds[0], &coefficient_sums);
    let last = members;
    let others: BigInt = recovery
        .values
        .iter()
        .filter(|(&k, _)| k != last)
        .map(|(_, v)| v)
        .sum();
    let last_value = &sum - &view.own.private_value - others;
    ensure_nonnegative("the derived value", &last_value)?;
    recovery.values.insert(last, last_value);

    check_consistency(
        &sum,
        view.received_f.iter().cloned().zip(view.member_seeds.iter().cloned()),
        &coefficient_sums,
    )?;
    Ok(recovery)
}

/// Malicious member with a dominating seed `y`: its own F-value exposes the
/// coefficient sums, each non-leader share exposes that sender's
/// coefficients, and the leader's coefficients follow by subtraction.
pub fn member_attack(view: &MemberView) -> Result<Recovery, AttackError> {
    let y = view.seed();
    let degree = view.own.coefficients.len();
    if view.received_shares.len() < 2 || !view.received_shares.contains_key(&0) {
        return Err(AttackError::MalformedView("member view needs the leader's share and one more".into()));
    }
    let (_sum, coefficient_sums) = floor_decompose(&view.own_f, y, degree);
    ensure_all_nonnegative("a coefficient sum", &coefficient_sums)?;

    let mut recovery = Recovery {
        values: BTreeMap::new(),
        coefficients: BTreeMap::new(),
    };
    let mut leader_coeffs = coefficient_sums.clone();
    for (i, own) in view.own.coefficients.iter().enumerate() {
        leader_coeffs[i] -= own;
    }
    for (&k, share) in view.received_shares.iter().filter(|(&k, _)| k != 0) {
        let (residue, coeffs) = floor_decompose(share, y, degree);
        ensure_all_nonnegative("a recovered coefficient", &coeffs)?;
        for (i, c) in coeffs.iter().enumerate() {
            leader_coeffs[i] -= c;
        }
        recovery.values.insert(k, residue);
        recovery.coefficients.insert(k, coeffs);
    }
    ensure_all_nonnegative("a leader coefficient", &leader_coeffs)?;
    let leader_value = &view.received_shares[&0] - poly_tail(&leader_coeffs, y);
    ensure_nonnegative("the leader's value", &leader_value)?;
    recovery.values.insert(0, leader_value);
    recovery.coefficients.insert(0, leader_coeffs);
    Ok(recovery)
}

/// Honest-seed member attack: when the other members' masking terms are
/// separable at the attacker's own seed, their coefficients fall out of the
/// received shares by floor division, and the overheard F-values complete
/// the picture. Works when, for every victim, the value and linear-term
/// contribution stay below `y^2` (in particular `r_1 < y`).
pub fn large_coefficient_attack(view: &MemberView) -> Result<Recovery, AttackError> {
    let y = view.seed().clone();
    let degree = view.own.coefficients.len();
    if view.received_shares.len() < 2 || view.overheard_f.is_empty() {
        return Err(AttackError::MalformedView("need two received shares and an overheard F-value".into()));
    }
    let mut coefficient_sums = view.own.coefficients.clone();
    let mut recovery = Recovery {
        values: BTreeMap::new(),
        coefficients: BTreeMap::new(),
    };
    for (&k, share) in &view.received_shares {
        let (residue, coeffs) = floor_decompose(share, &y, degree);
        ensure_all_nonnegative("a recovered coefficient", &coeffs)?;
        add_into(&mut coefficient_sums, &coeffs);
        recovery.values.insert(k, residue);
        recovery.coefficients.insert(k, coeffs);
    }
    let sum = implied_sum(&view.own_f, &y, &coefficient_sums);
    let last = *view.received_shares.keys().next_back().expect("two shares present");
    let others: BigInt = recovery
        .values
        .iter()
        .filter(|(&k, _)| k != last)
        .map(|(_, v)| v)
        .sum();
    let last_value = &sum - &view.own.private_value - others;
    ensure_nonnegative("the derived value", &last_value)?;
    recovery.values.insert(last, last_value);

    check_consistency(
        &sum,
        view.overheard_f.iter().map(|(&j, f)| (f.clone(), view.seeds[j].clone())),
        &coefficient_sums,
    )?;
    Ok(recovery)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpda::{exchange, run_cluster, validate_shares, ClusterKeys, ClusterSeeds, CpdaError, CpdaMode, OpCounters};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    fn random_secret(rng: &mut ChaCha8Rng, value: u64, lo: u64, hi: u64) -> NodeSecret {
        NodeSecret::new(value, &[rng.random_range(lo..hi), rng.random_range(lo..hi)])
    }

    #[test]
    fn malicious_seed_formula() {
        assert_eq!(pick_malicious_seed(1, 1, 3), big(24));
        assert_eq!(pick_malicious_seed(1000, 1000, 3), big(24_000));
        assert_eq!(pick_malicious_seed(20, 10, 3), big(300));
    }

    #[test]
    fn bound_is_necessary() {
        // x = 2, d = 1, r1 = 3: 1 + 6 = 7 >= 4, so floor(v / x^2) overshoots.
        let v = big(1 + 3 * 2 + 5 * 4);
        let (residue, coeffs) = floor_decompose(&v, &big(2), 2);
        assert_ne!((residue, coeffs), (big(1), vec![big(3), big(5)]));
    }

    #[test]
    fn leader_attack_recovers_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_secret(&mut rng, 7, 1, 10);
        let b = random_secret(&mut rng, 4, 1, 10);
        let c = random_secret(&mut rng, 9, 1, 10);
        let x = pick_malicious_seed(10, 10, 3);
        let t = exchange(&[a.clone(), b.clone(), c.clone()], &[x, big(3), big(5)]);
        let rec = leader_attack(&LeaderView::from_transcript(&t, &a).unwrap()).unwrap();
        assert_eq!(rec.value(1), Some(&big(4)));
        assert_eq!(rec.value(2), Some(&big(9)));
        assert_eq!(rec.coefficients[&1], b.coefficients);
    }

    #[test]
    fn leader_attack_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let secrets = [
            random_secret(&mut rng, 3, 1, 10),
            random_secret(&mut rng, 0, 1, 10),
            random_secret(&mut rng, 0, 1, 10),
        ];
        let t = exchange(&secrets, &[pick_malicious_seed(10, 10, 3), big(3), big(5)]);
        let rec = leader_attack(&LeaderView::from_transcript(&t, &secrets[0]).unwrap()).unwrap();
        assert_eq!((rec.value(1), rec.value(2)), (Some(&big(0)), Some(&big(0))));
    }

    #[test]
    fn leader_attack_fails_without_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 1000;
        let mut mismatches = 0;
        for _ in 0..trials {
            let secrets: Vec<NodeSecret> = (0..3)
                .map(|_| {
                    let v = rng.random_range(0..1000);
                    random_secret(&mut rng, v, 7, 1000)
                })
                .collect();
            let t = exchange(&secrets, &[big(7), big(3), big(5)]);
            let view = LeaderView::from_transcript(&t, &secrets[0]).unwrap();
            let truth = (secrets[1].private_value.clone(), secrets[2].private_value.clone());
            match leader_attack(&view) {
                Ok(r) if (r.values[&1].clone(), r.values[&2].clone()) == truth => {}
                _ => mismatches += 1,
            }
        }
        assert!(mismatches as f64 >= 0.99 * trials as f64, "mismatches {mismatches}");
    }

    #[test]
    fn member_attack_recovers_leader_and_peer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_secret(&mut rng, 5, 1, 10);
        let b = random_secret(&mut rng, 4, 1, 10);
        let c = random_secret(&mut rng, 9, 1, 10);
        let y = pick_malicious_seed(20, 10, 3);
        let t = exchange(&[a.clone(), b.clone(), c.clone()], &[big(3), y, big(5)]);
        let rec = member_attack(&MemberView::from_transcript(&t, 1, &b).unwrap()).unwrap();
        assert_eq!(rec.value(0), Some(&big(5)));
        assert_eq!(rec.value(2), Some(&big(9)));
        assert_eq!(rec.coefficients[&0], a.coefficients);
    }

    #[test]
    fn member_attack_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let secrets = [
            random_secret(&mut rng, 0, 1, 10),
            random_secret(&mut rng, 4, 1, 10),
            random_secret(&mut rng, 0, 1, 10),
        ];
        let t = exchange(&secrets, &[big(3), pick_malicious_seed(20, 10, 3), big(5)]);
        let rec = member_attack(&MemberView::from_transcript(&t, 1, &secrets[1]).unwrap()).unwrap();
        assert_eq!((rec.value(0), rec.value(2)), (Some(&big(0)), Some(&big(0))));
    }

    #[test]
    fn hardened_mode_blocks_malicious_seed() {
        let secrets = vec![NodeSecret::new(5, &[2, 3]), NodeSecret::new(4, &[1, 1]), NodeSecret::new(9, &[4, 4])];
        let y = pick_malicious_seed(20, 10, 3);
        let seeds = ClusterSeeds::new(vec![big(3), y, big(5)]).unwrap();
        let err = run_cluster(
            &secrets,
            &seeds,
            CpdaMode::Hardened,
            ValueBounds::default(),
            &ClusterKeys::synthetic(3, 0),
            &mut OpCounters::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CpdaError::ProtocolAbort { .. }));
    }

    #[test]
    fn large_coefficient_attack_with_separable_victims() {
        // A's and C's quadratic coefficients dwarf B's; their linear terms
        // stay below y, which is what makes the split exact.
        let y = 1000u64;
        let a = NodeSecret::new(5, &[321, 1_000_003]);
        let b = NodeSecret::new(4, &[2, 7]);
        let c = NodeSecret::new(9, &[654, 999_001]);
        let seeds = [big(900), BigInt::from(y), big(1100)];
        let t = exchange(&[a.clone(), b.clone(), c.clone()], &seeds);
        let rec = large_coefficient_attack(&MemberView::from_transcript(&t, 1, &b).unwrap()).unwrap();
        assert_eq!((rec.value(0), rec.value(2)), (Some(&big(5)), Some(&big(9))));
        assert_eq!(rec.coefficients[&2], c.coefficients);
    }

    #[test]
    fn large_coefficient_attack_fails_with_comparable_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials = 500;
        let mut failures = 0;
        for _ in 0..trials {
            let secrets: Vec<NodeSecret> = (0..3)
                .map(|_| {
                    let v = rng.random_range(0..1000);
                    random_secret(&mut rng, v, 10, 1000)
                })
                .collect();
            let t = exchange(&secrets, &[big(8), big(7), big(9)]);
            let view = MemberView::from_transcript(&t, 1, &secrets[1]).unwrap();
            let ok = matches!(large_coefficient_attack(&view), Ok(r)
                if r.values[&0] == secrets[0].private_value && r.values[&2] == secrets[2].private_value);
            if !ok {
                failures += 1;
            }
        }
        assert!(failures as f64 >= 0.99 * trials as f64, "failures {failures}");
    }

    #[test]
    fn share_check_rejects_skewed_values() {
        // One member with outsized coefficients dominates the shares at any seed.
        let a = NodeSecret::new(5, &[700_000, 1_000_003]);
        let b = NodeSecret::new(4, &[2, 7]);
        let c = NodeSecret::new(9, &[3, 5]);
        let t = exchange(&[a, b, c], &[big(6), big(7), big(8)]);
        for shares in &t.shares_at_seed {
            assert!(validate_shares(shares).is_err());
        }
    }

    #[test]
    fn attacks_do_not_mutate_views() {
        let secrets = [NodeSecret::new(1, &[1, 2]), NodeSecret::new(2, &[3, 4]), NodeSecret::new(3, &[5, 6])];
        let t = exchange(&secrets, &[pick_malicious_seed(10, 10, 3), big(3), big(5)]);
        let view = LeaderView::from_transcript(&t, &secrets[0]).unwrap();
        let before = view.clone();
        let _ = leader_attack(&view);
        assert_eq!(view, before);
    }
}
