//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Reference values come from oracles written here (direct sums, binomial
//! counts, a fine-grid integrator), never from the library under test.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsnagg::attack::{large_coefficient_attack, leader_attack, member_attack, pick_malicious_seed, LeaderView, MemberView};
use wsnagg::ciagg::{ci_fuse, ci_weight, fuse_local, CiConfig, GaussianEstimate};
use wsnagg::cli::{execute, Command, RunSpec};
use wsnagg::cpda::{
    efficient_leader_seed, exchange, recover_by_division, run_cluster, solve_vandermonde, validate_seeds,
    validate_shares, ClusterKeys, ClusterSeeds, CpdaMode, NodeSecret, OpCounters, ValueBounds,
};
use wsnagg::keydist::{connectivity_probability_exact, empirical_connectivity, overhear_probability, KeyPoolConfig};
use wsnagg::netsim::{run_ci_sim, run_cpda_sim, CiOutcome, SimConfig, SimMode};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn big(v: u64) -> BigInt {
    BigInt::from(v)
}

fn distinct_seeds(rng: &mut ChaCha8Rng, lo: u64, hi: u64, n: usize) -> Vec<BigInt> {
    let mut out: Vec<BigInt> = Vec::with_capacity(n);
    while out.len() < n {
        let s = big(rng.random_range(lo..hi));
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn direct_sum(secrets: &[NodeSecret]) -> BigInt {
    secrets.iter().map(|s| &s.private_value).sum()
}

fn coefficient_sums(secrets: &[NodeSecret]) -> Vec<BigInt> {
    (0..secrets[0].coefficients.len())
        .map(|i| secrets.iter().map(|s| &s.coefficients[i]).sum())
        .collect()
}

const BOUNDS: ValueBounds = ValueBounds {
    value_bound: 1000,
    coeff_bound: 1000,
};

fn cpda_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut exact = 0;
    for i in 0..1000u64 {
        let secrets: Vec<NodeSecret> = (0..3).map(|_| NodeSecret::random(&mut rng, 3, BOUNDS)).collect();
        let seeds = ClusterSeeds::new(distinct_seeds(&mut rng, 1, 1_000_000, 3)).unwrap();
        let r = run_cluster(
            &secrets,
            &seeds,
            CpdaMode::Original,
            BOUNDS,
            &ClusterKeys::synthetic(3, i),
            &mut OpCounters::default(),
        )
        .unwrap();
        if r.recovered_sum == direct_sum(&secrets) {
            exact += 1;
        }
    }
    let t = start.elapsed();
    verdict(
        exact == 1000 && t < Duration::from_secs(5),
        format!("{exact}/1000 sums exact in {:.2}s", t.as_secs_f64()),
    )
}

fn recovery_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let floor = efficient_leader_seed(BOUNDS, 3);
    let mut agree = 0;
    for _ in 0..1000 {
        let secrets: Vec<NodeSecret> = (0..3).map(|_| NodeSecret::random(&mut rng, 3, BOUNDS)).collect();
        let x = &floor + big(rng.random_range(0..1_000_000));
        let mut seeds = vec![x.clone()];
        seeds.extend(distinct_seeds(&mut rng, 1, 100_000, 2));
        let t = exchange(&secrets, &seeds);
        let solved = solve_vandermonde(&seeds, &t.f_values, &mut OpCounters::default()).unwrap();
        let divided = recover_by_division(&t.f_values[0], &x, 2, &mut OpCounters::default());
        let truth = (direct_sum(&secrets), coefficient_sums(&secrets));
        if solved == divided && (divided.sum.clone(), divided.coefficient_sums.clone()) == truth {
            agree += 1;
        }
    }
    verdict(agree == 1000, format!("{agree}/1000 identical (sum, r1, r2), all equal to the direct sums"))
}

fn attack_reproduction() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let evil = pick_malicious_seed(BOUNDS.value_bound, BOUNDS.coeff_bound, 3);
    let (mut leader_ok, mut member_ok) = (0, 0);
    for _ in 0..1000 {
        let secrets: Vec<NodeSecret> = (0..3).map(|_| NodeSecret::random(&mut rng, 3, BOUNDS)).collect();
        let honest = distinct_seeds(&mut rng, 1, 10_000, 3);
        let v = |i: usize| Some(secrets[i].private_value.clone());

        let t = exchange(&secrets, &[evil.clone(), honest[1].clone(), honest[2].clone()]);
        let rec = leader_attack(&LeaderView::from_transcript(&t, &secrets[0]).unwrap());
        if matches!(&rec, Ok(r) if r.value(1).cloned() == v(1) && r.value(2).cloned() == v(2)) {
            leader_ok += 1;
        }

        let t = exchange(&secrets, &[honest[0].clone(), evil.clone(), honest[2].clone()]);
        let rec = member_attack(&MemberView::from_transcript(&t, 1, &secrets[1]).unwrap());
        if matches!(&rec, Ok(r) if r.value(0).cloned() == v(0) && r.value(2).cloned() == v(2)) {
            member_ok += 1;
        }
    }
    let t = start.elapsed();
    verdict(
        leader_ok == 1000 && member_ok == 1000 && t < Duration::from_secs(10),
        format!("leader {leader_ok}/1000, member {member_ok}/1000 in {:.2}s", t.as_secs_f64()),
    )
}

fn hardening() -> Verdict {
    let mut mismatches = 0;
    for a in 1..=30u64 {
        for b in 1..=30u64 {
            for c in 1..=30u64 {
                let dominated = a >= b + c || b >= a + c || c >= a + b;
                let rejected = validate_seeds(&[big(a), big(b), big(c)]).is_err();
                if dominated != rejected {
                    mismatches += 1;
                }
            }
        }
    }

    // Hardened generator: triangle-valid seeds, coefficients in [S, 2S).
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut accepted, mut skipped) = (0, 0);
    let mut wrong = [0usize; 4];
    while accepted < 1000 {
        let seeds = distinct_seeds(&mut rng, 1000, 2000, 3);
        assert!(validate_seeds(&seeds).is_ok());
        let s: u64 = seeds.iter().max().unwrap().try_into().unwrap();
        let secrets: Vec<NodeSecret> = (0..3)
            .map(|_| NodeSecret::random_with_coeff_range(&mut rng, 3, BOUNDS.value_bound, s, 2 * s))
            .collect();
        let t = exchange(&secrets, &seeds);
        if t.shares_at_seed.iter().any(|sh| validate_shares(sh).is_err()) {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let v = |i: usize| Some(secrets[i].private_value.clone());
        let truth = (direct_sum(&secrets), coefficient_sums(&secrets));
        let div = recover_by_division(&t.f_values[0], &seeds[0], 2, &mut OpCounters::default());
        if (div.sum, div.coefficient_sums) != truth {
            wrong[0] += 1;
        }
        let leader = leader_attack(&LeaderView::from_transcript(&t, &secrets[0]).unwrap());
        if !matches!(&leader, Ok(r) if r.value(1).cloned() == v(1) && r.value(2).cloned() == v(2)) {
            wrong[1] += 1;
        }
        let view = MemberView::from_transcript(&t, 1, &secrets[1]).unwrap();
        for (slot, rec) in [(2, member_attack(&view)), (3, large_coefficient_attack(&view))] {
            if !matches!(&rec, Ok(r) if r.value(0).cloned() == v(0) && r.value(2).cloned() == v(2)) {
                wrong[slot] += 1;
            }
        }
    }
    let min_wrong = *wrong.iter().min().unwrap();
    verdict(
        mismatches == 0 && min_wrong >= 990,
        format!(
            "seed check disagrees with the triangle oracle on {mismatches}/27000 triples; \
             wrong recoveries per 1000 (division, leader, member, large-coefficient) = {wrong:?}; \
             {skipped} instances rejected by the share check"
        ),
    )
}

fn message_overhead() -> Verdict {
    let mut worst = 0.0f64;
    let mut tag_exact = true;
    let mut lines = Vec::new();
    for p_c in [0.05, 0.1, 0.2] {
        for mode in [SimMode::TagPlain, SimMode::Original, SimMode::Efficient, SimMode::HardenedWorst] {
            let mut total = 0.0;
            for seed in 0..20 {
                let cfg = SimConfig {
                    rng_seed: seed,
                    leader_probability: p_c,
                    ..SimConfig::default()
                };
                let avg = run_cpda_sim(&cfg, mode).unwrap().avg_messages_per_node();
                if mode == SimMode::TagPlain && avg != 2.0 {
                    tag_exact = false;
                }
                total += avg;
            }
            let mean = total / 20.0;
            let target = match mode {
                SimMode::TagPlain => 2.0,
                SimMode::Original => 3.0 + p_c,
                SimMode::Efficient => 2.0 + p_c,
                _ => 5.0 + p_c,
            };
            worst = worst.max((mean - target).abs());
            lines.push(format!("{}@{p_c}={mean:.3}", mode.name()));
        }
    }
    verdict(
        tag_exact && worst <= 0.05,
        format!("max deviation {worst:.4}; {}", lines.join(" ")),
    )
}

fn operation_counts() -> Verdict {
    let secrets = vec![NodeSecret::new(5, &[2, 3]), NodeSecret::new(4, &[7, 1]), NodeSecret::new(9, &[6, 8])];
    let seeds = ClusterSeeds::from_u64(&[101, 103, 107]).unwrap();
    let keys = ClusterKeys::synthetic(3, 9);
    let o = run_cluster(&secrets, &seeds, CpdaMode::Original, BOUNDS, &keys, &mut OpCounters::default())
        .unwrap()
        .counters;
    let e = run_cluster(&secrets, &seeds, CpdaMode::Efficient, BOUNDS, &keys, &mut OpCounters::default())
        .unwrap()
        .counters;
    let original_ok = (o.add, o.mul, o.enc, o.mat_mul, o.mat_inv) == (30, 18, 6, 1, 1);
    let efficient_ok = (e.add, e.sub, e.mul, e.div, e.exp, e.enc) == (10, 2, 6, 2, 3, 2);
    verdict(
        original_ok && efficient_ok,
        format!(
            "original add={} mul={} enc={} mat_mul={} mat_inv={} (exp={} reported: one per squared seed per share, \
             where the operation table lists 3); efficient add={} sub={} mul={} div={} exp={} enc={}",
            o.add, o.mul, o.enc, o.mat_mul, o.mat_inv, o.exp, e.add, e.sub, e.mul, e.div, e.exp, e.enc
        ),
    )
}

fn binomial(n: u64, k: u64) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * big(n - i) / big(i + 1))
}

/// `1 - C(K-k, k) / C(K, k)`: probability two random k-subsets of K meet.
fn overlap_oracle(pool: u64, ring: u64) -> BigRational {
    if 2 * ring > pool {
        return BigRational::one();
    }
    BigRational::one() - BigRational::new(binomial(pool - ring, ring), binomial(pool, ring))
}

fn key_probabilities() -> Verdict {
    let exact = connectivity_probability_exact(KeyPoolConfig::new(10, 2).unwrap()).unwrap();
    let seventeen_45 = BigRational::new(big(17), big(45));
    let mut ok = exact == seventeen_45 && overlap_oracle(10, 2) == seventeen_45;
    let mut parts = vec![format!("p_connect(10,2) = {exact}")];
    for (i, k) in [20u64, 50, 100].into_iter().enumerate() {
        let cfg = KeyPoolConfig::new(1000, k).unwrap();
        let oracle = overlap_oracle(1000, k);
        let oracle_f = num_traits::ToPrimitive::to_f64(&oracle).unwrap();
        let emp = empirical_connectivity(cfg, 10_000, 700 + i as u64).unwrap();
        let overhear = overhear_probability(cfg).unwrap();
        ok &= (emp - oracle_f).abs() <= 0.02 && overhear == k as f64 / 1000.0;
        parts.push(format!("k={k}: empirical {emp:.4} vs {oracle_f:.4}, p_overhear {overhear}"));
    }
    verdict(ok, parts.join("; "))
}

fn ci_fusion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let (mut wrong_pick, mut worst_identity) = (0usize, 0.0f64);
    for i in 0..1_000_000 {
        let mean_a = rng.random_range(-100.0..100.0);
        let mean_b = rng.random_range(-100.0..100.0);
        let var_a = 10f64.powf(rng.random_range(-3.0..3.0));
        // Every 1000th case is an exact variance tie.
        let var_b = if i % 1000 == 0 { var_a } else { 10f64.powf(rng.random_range(-3.0..3.0)) };
        let a = GaussianEstimate::new(mean_a, var_a).unwrap();
        let b = GaussianEstimate::new(mean_b, var_b).unwrap();
        let c = ci_fuse(&a, &b).unwrap();
        let expected = if var_a <= var_b { a } else { b };
        if c != expected {
            wrong_pick += 1;
        }
        let w = ci_weight(&a, &b).unwrap();
        let lhs = 1.0 / c.variance;
        let rhs = w / a.variance + (1.0 - w) / b.variance;
        let mean_lhs = c.mean / c.variance;
        let mean_rhs = w * a.mean / a.variance + (1.0 - w) * b.mean / b.variance;
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
        worst_identity = worst_identity.max(rel(lhs, rhs)).max(rel(mean_lhs, mean_rhs));
    }
    verdict(
        wrong_pick == 0 && worst_identity <= 4.0 * f64::EPSILON,
        format!("{wrong_pick} wrong picks in 10^6; worst inverse-form relative error {worst_identity:.2e}"),
    )
}

fn gaussian_pdf(t: f64, mean: f64, var: f64) -> f64 {
    (-(t - mean) * (t - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Mixture moments on a 10^5-point trapezoid grid with plain step weights.
fn fuse_oracle(global: (f64, f64), local: (f64, f64), prev: f64, cfg: &CiConfig) -> (f64, f64) {
    let (mg, vg) = global;
    let (ml, vl) = local;
    let (sg, sl) = (vg.sqrt(), vl.sqrt());
    let local_heavy = ml >= mg || (mg - prev).abs() <= cfg.fall_threshold;
    let density = |t: f64| {
        if local_heavy {
            let w1 = if t <= ml - 3.0 * sl { 0.0 } else { 1.0 };
            gaussian_pdf(t, ml, vl) + w1 * gaussian_pdf(t, mg, vg)
        } else {
            let w2 = if t <= (ml - 3.0 * sl).max(mg - 3.0 * sg) { 0.0 } else { 1.0 };
            gaussian_pdf(t, mg, vg) + w2 * gaussian_pdf(t, ml, vl)
        }
    };
    let span = cfg.grid_span_sigmas;
    let lo = (ml - span * sl).min(mg - span * sg);
    let hi = (ml + span * sl).max(mg + span * sg);
    let n = 100_000;
    let h = (hi - lo) / (n - 1) as f64;
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let t = lo + i as f64 * h;
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let d = w * density(t);
        m0 += d;
        m1 += d * t;
        m2 += d * t * t;
    }
    let mean = m1 / m0;
    (mean, m2 / m0 - mean * mean)
}

fn fuse_local_oracle() -> Verdict {
    let cfg = CiConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let global = (rng.random_range(20.0..35.0), rng.random_range(0.2..4.0));
        let local = (rng.random_range(20.0..35.0), rng.random_range(0.2..4.0));
        let prev = global.0 + rng.random_range(-2.0..2.0);
        let got = fuse_local(
            &GaussianEstimate::new(global.0, global.1).unwrap(),
            &GaussianEstimate::new(local.0, local.1).unwrap(),
            prev,
            &cfg,
        )
        .unwrap();
        let (mean, var) = fuse_oracle(global, local, prev, &cfg);
        worst_mean = worst_mean.max(((got.mean - mean) / mean).abs());
        worst_var = worst_var.max(((got.variance - var) / var).abs());
    }
    verdict(
        worst_mean <= 1e-3 && worst_var <= 1e-3,
        format!("worst relative error over 100 pairs: mean {worst_mean:.2e}, variance {worst_var:.2e}"),
    )
}

struct Arm {
    outcomes: Vec<CiOutcome>,
    elapsed: Duration,
}

fn ci_arm(fraction: f64, security: bool) -> Arm {
    let start = Instant::now();
    let outcomes = (0..20)
        .map(|seed| {
            let cfg = SimConfig {
                rng_seed: seed,
                fault_offset_sigmas: 10.0,
                ..SimConfig::default()
            };
            run_ci_sim(&cfg, fraction, security).unwrap()
        })
        .collect();
    Arm {
        outcomes,
        elapsed: start.elapsed(),
    }
}

fn detection(arms: &[(f64, Arm, Arm)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (fraction, secure, plain) in arms {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for o in &secure.outcomes {
            tp += o.counts.true_positive;
            fp += o.counts.false_positive;
            tn += o.counts.true_negative;
            fn_ += o.counts.false_negative;
        }
        let detection = tp as f64 / (tp + fn_) as f64;
        let fp_rate = fp as f64 / (fp + tn) as f64;
        let fn_rate = fn_ as f64 / (tp + fn_) as f64;
        let slowest = secure.elapsed.max(plain.elapsed);
        ok &= detection >= 0.90 && fp_rate <= 0.05 && fn_rate <= 0.10 && slowest < Duration::from_secs(60);
        parts.push(format!(
            "{:.0}% faults: detection {detection:.3}, fp {fp_rate:.4}, fn {fn_rate:.4}, arms {:.1}s/{:.1}s",
            fraction * 100.0,
            secure.elapsed.as_secs_f64(),
            plain.elapsed.as_secs_f64()
        ));
    }
    verdict(ok, parts.join("; "))
}

fn energy_and_delivery(secure: &Arm, plain: &Arm) -> Verdict {
    let joules = |arm: &Arm| -> f64 { arm.outcomes.iter().map(|o| o.metrics.energy.total_spent() as f64 / 1e9).sum() };
    let (with, without) = (joules(secure), joules(plain));
    let seeds_higher = secure
        .outcomes
        .iter()
        .zip(&plain.outcomes)
        .filter(|(s, p)| s.metrics.energy.total_spent() > p.metrics.energy.total_spent())
        .count();
    let worst_dr = secure
        .outcomes
        .iter()
        .zip(&plain.outcomes)
        .map(|(s, p)| (s.metrics.delivery_ratio() - p.metrics.delivery_ratio()).abs())
        .fold(0.0, f64::max);
    verdict(
        with > without && worst_dr <= 0.02,
        format!(
            "20% faults, 20 seeds: {with:.1} J with security vs {without:.1} J without \
             (ratio {:.4}, reported only; higher on {seeds_higher}/20 seeds); max delivery-ratio gap {worst_dr:.4}",
            with / without
        ),
    )
}

fn determinism() -> Verdict {
    let mut identical = 0;
    let commands = [Command::Keydist, Command::Cpda, Command::Attack, Command::CiSim, Command::Overhead];
    for command in commands {
        let mut spec = RunSpec::new(command);
        spec.seed = Some(4242);
        spec.repetitions = 2;
        let a = execute(&spec).unwrap();
        let b = execute(&spec).unwrap();
        if a.csv == b.csv && !a.csv.is_empty() {
            identical += 1;
        }
    }
    verdict(
        identical == commands.len(),
        format!("{identical}/{} subcommands byte-identical across re-runs", commands.len()),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |n: u32, name: &'static str, v: Verdict| {
        println!("criterion {n:>2} {:<30} {} | {}", name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    record(1, "CPDA exactness", cpda_exactness());
    record(2, "recovery equivalence", recovery_equivalence());
    record(3, "attack reproduction", attack_reproduction());
    record(4, "hardening", hardening());
    record(5, "message overhead", message_overhead());
    record(6, "operation counts", operation_counts());
    record(7, "key-distribution probabilities", key_probabilities());
    record(8, "CI fusion", ci_fusion());
    record(9, "fuse_local oracle match", fuse_local_oracle());
    let arms: Vec<(f64, Arm, Arm)> = [0.1, 0.2]
        .into_iter()
        .map(|f| (f, ci_arm(f, true), ci_arm(f, false)))
        .collect();
    record(10, "detection effectiveness", detection(&arms));
    record(11, "energy and delivery ratio", energy_and_delivery(&arms[1].1, &arms[1].2));
    record(12, "determinism", determinism());

    let failed: Vec<u32> = results.iter().filter(|(_, _, v)| !v.pass).map(|(n, _, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
