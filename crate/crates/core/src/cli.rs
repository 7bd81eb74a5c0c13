//! Experiment runner behind the `wsnagg` binary.
//!
//! Config files are flat `key = value` lines. `#` starts a comment, blank
//! lines and `[section]` headers are ignored. Every key may appear at most
//! once; absent keys keep their defaults.
//!
//! CSV schemas (header row first, fixed column order):
//!
//! * `keydist`: `seed,K,k,analytic_p_connect,empirical_p_connect,p_overhear,pairs`
//! * `cpda`: `seed,mode,p_c,node_count,participating_nodes,leaders,clusters,`
//!   `plaintext_clusters,aborted_clusters,merged_clusters,malicious_clusters,`
//!   `insecure_pairs,avg_messages_per_node,analytic_messages,delivery_ratio,`
//!   `sink_aggregate,true_aggregate,add,sub,mul,div,exp,enc,mat_mul,mat_inv,energy_j`
//! * `attack`: `seed,trial,mode,attacker,true_values,recovered_values,success`
//! * `ci-sim`: `seed,fault_fraction,fault_offset_sigmas,true_positive,false_positive,`
//!   `true_negative,false_negative,detection_rate,fp_rate,fn_rate,`
//!   `energy_with_security_j,energy_without_security_j,energy_clean_baseline_j,`
//!   `energy_increase,radio_energy_with_security_j,radio_energy_without_security_j,`
//!   `delivery_ratio_with_security,delivery_ratio_without_security`
//! * `overhead`: `seed,p_c,mode,avg_messages_per_node,analytic_messages,abs_error`
//!
//! Every repetition reruns the same seed, so repeated rows are identical.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_bigint::BigInt;
use rand::Rng;
use thiserror::Error;

use crate::attack::{leader_attack, member_attack, pick_malicious_seed, LeaderView, MemberView};
use crate::cpda::{exchange, run_cluster, ClusterKeys, ClusterSeeds, CpdaError, CpdaMode, NodeSecret, OpCounters};
use crate::keydist::{connectivity_probability, empirical_connectivity, overhear_probability, KeyPoolConfig};
use crate::netsim::{run_ci_sim, run_cpda_sim, stream_rng, Metrics, SimConfig, SimError, SimMode};

/// Ring pairs sampled by `keydist`.
pub const KEYDIST_PAIRS: usize = 10_000;
/// Clusters attacked per repetition by `attack`.
pub const ATTACK_TRIALS: usize = 100;
const ATTACK_CLUSTER_SIZE: usize = 3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for {key}: {message}")]
    Validation { key: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation { .. } | CliError::Usage(_) | CliError::ConfigRead { .. } => {
                EXIT_CONFIG
            }
            CliError::Sim(SimError::InvalidConfig(_)) => EXIT_CONFIG,
            CliError::Sim(SimError::Cpda(CpdaError::ProtocolAbort { .. })) => EXIT_ABORT,
            _ => EXIT_FAILURE,
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Simulation parameters plus the protocol mode selected in the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub mode: Option<SimMode>,
}

pub const CONFIG_KEYS: [&str; 23] = [
    "node_count",
    "area_side",
    "radio_range",
    "sim_time",
    "sampling_period",
    "initial_energy",
    "airtime",
    "p_c",
    "change_trigger",
    "temp_mean",
    "temp_sigma",
    "link_loss",
    "seed",
    "mode",
    "fault_fraction",
    "fault_offset_sigmas",
    "K",
    "k",
    "D",
    "R",
    "broadcast_threshold",
    "fall_threshold",
    "detection_multiplier",
];

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let parse_err = |message: String| CliError::Parse { line: line_no, message };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value`, found `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(parse_err(format!("expected `key = value`, found `{line}`")));
        }
        if !CONFIG_KEYS.contains(&key) {
            return Err(parse_err(format!("unknown key `{key}`")));
        }
        if !seen.insert(key.to_string()) {
            return Err(parse_err(format!("duplicate key `{key}`")));
        }
        apply(&mut cfg, key, value).map_err(|e| match e {
            ValueError::Syntax(m) => parse_err(format!("{key}: {m}")),
            ValueError::Range(m) => invalid(key, m),
        })?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

enum ValueError {
    Syntax(String),
    Range(String),
}

fn number(value: &str) -> Result<f64, ValueError> {
    value
        .parse::<f64>()
        .map_err(|_| ValueError::Syntax(format!("`{value}` is not a number")))
}

fn integer(value: &str) -> Result<u64, ValueError> {
    let n = value
        .parse::<i128>()
        .map_err(|_| ValueError::Syntax(format!("`{value}` is not an integer")))?;
    u64::try_from(n).map_err(|_| ValueError::Range(format!("{n} is out of range")))
}

fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ValueError> {
    let s = &mut cfg.sim;
    match key {
        "node_count" => s.node_count = integer(value)? as usize,
        "area_side" => s.area_side = number(value)?,
        "radio_range" => s.radio_range = number(value)?,
        "sim_time" => s.sim_time = number(value)?,
        "sampling_period" => s.sampling_period = number(value)?,
        "initial_energy" => s.initial_energy = number(value)?,
        "airtime" => s.airtime = number(value)?,
        "p_c" => s.leader_probability = number(value)?,
        "change_trigger" => s.change_trigger = number(value)?,
        "temp_mean" => s.temp_mean = number(value)?,
        "temp_sigma" => s.temp_sigma = number(value)?,
        "link_loss" => s.link_loss_probability = number(value)?,
        "seed" => s.rng_seed = integer(value)?,
        "mode" => {
            cfg.mode = Some(SimMode::parse(value).ok_or_else(|| ValueError::Range(format!("unknown mode `{value}`")))?)
        }
        "fault_fraction" => s.fault_fraction = number(value)?,
        "fault_offset_sigmas" => s.fault_offset_sigmas = number(value)?,
        "K" => s.key_pool.pool_size = integer(value)?,
        "k" => s.key_pool.ring_size = integer(value)?,
        "D" => s.bounds.value_bound = integer(value)?,
        "R" => s.bounds.coeff_bound = integer(value)?,
        "broadcast_threshold" => s.ci.broadcast_threshold = number(value)?,
        "fall_threshold" => s.ci.fall_threshold = number(value)?,
        "detection_multiplier" => s.ci.detection_multiplier = number(value)?,
        _ => unreachable!("key list checked by the caller"),
    }
    Ok(())
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let pool = cfg.sim.key_pool;
    if pool.pool_size == 0 {
        return Err(invalid("K", "must be at least 1"));
    }
    if pool.ring_size == 0 || pool.ring_size > pool.pool_size {
        return Err(invalid("k", format!("must lie in [1, K = {}]", pool.pool_size)));
    }
    cfg.sim.validate().map_err(|e| match e {
        SimError::InvalidConfig(msg) | SimError::Ci(crate::ciagg::CiError::InvalidConfig(msg)) => {
            let (key, why) = msg.split_once(": ").unwrap_or(("config", msg.as_str()));
            invalid(key, why)
        }
        other => CliError::Sim(other),
    })
}

// ---------------------------------------------------------------- run spec

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Keydist,
    Cpda,
    Attack,
    CiSim,
    Overhead,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Keydist => "keydist",
            Command::Cpda => "cpda",
            Command::Attack => "attack",
            Command::CiSim => "ci-sim",
            Command::Overhead => "overhead",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub command: Command,
    /// `None` runs on defaults.
    pub config_path: Option<PathBuf>,
    /// `None` writes the CSV to standard output.
    pub output_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub repetitions: usize,
    pub mode: Option<String>,
}

impl RunSpec {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            config_path: None,
            output_path: None,
            seed: None,
            repetitions: 1,
            mode: None,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.repetitions == 0 {
            return Err(invalid("reps", "must be at least 1"));
        }
        for p in [&self.config_path, &self.output_path].into_iter().flatten() {
            if p.as_os_str().is_empty() {
                return Err(CliError::Usage("paths must be nonempty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "wsnagg", about = "Private aggregation and CI fusion experiments for sensor networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Key predistribution connectivity, analytic and sampled.
    Keydist(RunArgs),
    /// Network-wide CPDA rounds, one row per mode.
    Cpda(RunArgs),
    /// Leader and member seed attacks against captured transcripts.
    Attack(RunArgs),
    /// CI max estimation with and without malicious-node detection.
    CiSim(RunArgs),
    /// Simulated messages per node against the closed forms.
    Overhead(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long)]
    pub mode: Option<String>,
}

impl From<Cli> for RunSpec {
    fn from(cli: Cli) -> Self {
        let (command, a) = match cli.command {
            CliCommand::Keydist(a) => (Command::Keydist, a),
            CliCommand::Cpda(a) => (Command::Cpda, a),
            CliCommand::Attack(a) => (Command::Attack, a),
            CliCommand::CiSim(a) => (Command::CiSim, a),
            CliCommand::Overhead(a) => (Command::Overhead, a),
        };
        RunSpec {
            command,
            config_path: a.config,
            output_path: a.out,
            seed: a.seed,
            repetitions: a.reps,
            mode: a.mode,
        }
    }
}

/// Result of a successful run. `aborted` is set when some protocol round
/// was stopped by a hardening check; the CSV is complete either way.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub csv: Vec<u8>,
    pub rows: usize,
    pub aborted: bool,
    pub summary: String,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        if self.aborted {
            EXIT_ABORT
        } else {
            EXIT_OK
        }
    }
}

/// Runs `spec` and writes its CSV to the output path (or stdout).
pub fn run(spec: &RunSpec) -> Result<RunOutput, CliError> {
    let out = execute(spec)?;
    match &spec.output_path {
        Some(path) => std::fs::write(path, &out.csv).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?,
        None => std::io::stdout()
            .write_all(&out.csv)
            .map_err(|source| CliError::Io {
                path: "<stdout>".into(),
                source,
            })?,
    }
    Ok(out)
}

/// Runs `spec` without touching the output path.
pub fn execute(spec: &RunSpec) -> Result<RunOutput, CliError> {
    spec.validate()?;
    let mut cfg = match &spec.config_path {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = spec.seed {
        cfg.sim.rng_seed = seed;
    }
    if let Some(name) = &spec.mode {
        cfg.mode = Some(SimMode::parse(name).ok_or_else(|| invalid("mode", format!("unknown mode `{name}`")))?);
    }
    let mut table = Table::new(header(spec.command));
    let mut aborted = false;
    for _ in 0..spec.repetitions {
        aborted |= match spec.command {
            Command::Keydist => keydist_rows(&cfg, &mut table)?,
            Command::Cpda => cpda_rows(&cfg, &mut table)?,
            Command::Attack => attack_rows(&cfg, &mut table)?,
            Command::CiSim => ci_rows(&cfg, &mut table)?,
            Command::Overhead => overhead_rows(&cfg, &mut table)?,
        };
    }
    let rows = table.rows.len();
    let summary = format!(
        "{}: {} rows, seed {}, {} repetition(s){}",
        spec.command,
        rows,
        cfg.sim.rng_seed,
        spec.repetitions,
        if aborted { ", protocol abort observed" } else { "" }
    );
    Ok(RunOutput {
        csv: table.into_csv()?,
        rows,
        aborted,
        summary,
    })
}

pub fn header(command: Command) -> &'static [&'static str] {
    match command {
        Command::Keydist => &["seed", "K", "k", "analytic_p_connect", "empirical_p_connect", "p_overhear", "pairs"],
        Command::Cpda => &[
            "seed",
            "mode",
            "p_c",
            "node_count",
            "participating_nodes",
            "leaders",
            "clusters",
            "plaintext_clusters",
            "aborted_clusters",
            "merged_clusters",
            "malicious_clusters",
            "insecure_pairs",
            "avg_messages_per_node",
            "analytic_messages",
            "delivery_ratio",
            "sink_aggregate",
            "true_aggregate",
            "add",
            "sub",
            "mul",
            "div",
            "exp",
            "enc",
            "mat_mul",
            "mat_inv",
            "energy_j",
        ],
        Command::Attack => &["seed", "trial", "mode", "attacker", "true_values", "recovered_values", "success"],
        Command::CiSim => &[
            "seed",
            "fault_fraction",
            "fault_offset_sigmas",
            "true_positive",
            "false_positive",
            "true_negative",
            "false_negative",
            "detection_rate",
            "fp_rate",
            "fn_rate",
            "energy_with_security_j",
            "energy_without_security_j",
            "energy_clean_baseline_j",
            "energy_increase",
            "radio_energy_with_security_j",
            "radio_energy_without_security_j",
            "delivery_ratio_with_security",
            "delivery_ratio_without_security",
        ],
        Command::Overhead => &["seed", "p_c", "mode", "avg_messages_per_node", "analytic_messages", "abs_error"],
    }
}

struct Table {
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &'static [&'static str]) -> Self {
        Self { header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn into_csv(self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Io {
            path: "<csv buffer>".into(),
            source: e.into_error(),
        })
    }
}

macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$($v.to_string()),*] };
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn keydist_rows(cfg: &ExperimentConfig, t: &mut Table) -> Result<bool, CliError> {
    let pool: KeyPoolConfig = cfg.sim.key_pool;
    let keydist = |e| CliError::Sim(SimError::KeyDist(e));
    let analytic = connectivity_probability(pool).map_err(keydist)?;
    let empirical = empirical_connectivity(pool, KEYDIST_PAIRS, cfg.sim.rng_seed).map_err(keydist)?;
    let overhear = overhear_probability(pool).map_err(keydist)?;
    t.push(row![cfg.sim.rng_seed, pool.pool_size, pool.ring_size, analytic, empirical, overhear, KEYDIST_PAIRS]);
    Ok(false)
}

fn modes(cfg: &ExperimentConfig) -> Vec<SimMode> {
    cfg.mode.map_or_else(|| SimMode::ALL.to_vec(), |m| vec![m])
}

fn cpda_rows(cfg: &ExperimentConfig, t: &mut Table) -> Result<bool, CliError> {
    let mut aborted = false;
    for mode in modes(cfg) {
        let m: Metrics = run_cpda_sim(&cfg.sim, mode)?;
        aborted |= m.aborted_clusters > 0;
        let o = m.ops;
        t.push(row![
            m.seed,
            m.mode,
            cfg.sim.leader_probability,
            m.node_count,
            m.participating_nodes,
            m.leaders,
            m.clusters,
            m.plaintext_clusters,
            m.aborted_clusters,
            m.merged_clusters,
            m.malicious_clusters,
            m.insecure_pairs,
            m.avg_messages_per_node(),
            mode.analytic_messages(cfg.sim.leader_probability),
            m.delivery_ratio(),
            opt(m.sink_aggregate),
            opt(m.true_aggregate),
            o.add,
            o.sub,
            o.mul,
            o.div,
            o.exp,
            o.enc,
            o.mat_mul,
            o.mat_inv,
            m.energy_spent_j(),
        ]);
    }
    Ok(aborted)
}

fn overhead_rows(cfg: &ExperimentConfig, t: &mut Table) -> Result<bool, CliError> {
    let p_c = cfg.sim.leader_probability;
    for mode in modes(cfg) {
        let m = run_cpda_sim(&cfg.sim, mode)?;
        let avg = m.avg_messages_per_node();
        let analytic = mode.analytic_messages(p_c);
        t.push(row![cfg.sim.rng_seed, p_c, mode.name(), avg, analytic, (avg - analytic).abs()]);
    }
    Ok(false)
}

fn join(values: impl IntoIterator<Item = BigInt>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// One attacker per trial, alternating leader and member. Original mode
/// hands the transcript to the attack; hardened mode runs the validated
/// round, which aborts before any share is released.
fn attack_rows(cfg: &ExperimentConfig, t: &mut Table) -> Result<bool, CliError> {
    let mode = match cfg.mode {
        None | Some(SimMode::Original) => CpdaMode::Original,
        Some(SimMode::Hardened) | Some(SimMode::HardenedWorst) => CpdaMode::Hardened,
        Some(other) => return Err(invalid("mode", format!("attack supports original or hardened, not {}", other.name()))),
    };
    let b = cfg.sim.bounds;
    let seed = cfg.sim.rng_seed;
    let mut rng = stream_rng(seed, crate::netsim::streams::SECRETS);
    let mut aborted = false;
    for trial in 0..ATTACK_TRIALS {
        let secrets: Vec<NodeSecret> = (0..ATTACK_CLUSTER_SIZE).map(|_| NodeSecret::random(&mut rng, ATTACK_CLUSTER_SIZE, b)).collect();
        let mut seeds: Vec<BigInt> = (0..ATTACK_CLUSTER_SIZE).map(|_| BigInt::from(rng.random_range(1000u64..2000))).collect();
        dedup_seeds(&mut seeds);
        let attacker = if trial % 2 == 0 { 0 } else { 1 };
        seeds[attacker] = pick_malicious_seed(b.value_bound, b.coeff_bound, ATTACK_CLUSTER_SIZE);
        let truth: Vec<BigInt> = (0..ATTACK_CLUSTER_SIZE)
            .filter(|&i| i != attacker)
            .map(|i| secrets[i].private_value.clone())
            .collect();

        let recovered: Option<Vec<BigInt>> = match mode {
            CpdaMode::Hardened => {
                let cluster_seeds = ClusterSeeds::new(seeds.clone()).map_err(SimError::from)?;
                let keys = ClusterKeys::synthetic(ATTACK_CLUSTER_SIZE, seed ^ trial as u64);
                match run_cluster(&secrets, &cluster_seeds, CpdaMode::Hardened, b, &keys, &mut OpCounters::default()) {
                    Err(CpdaError::ProtocolAbort { .. }) => {
                        aborted = true;
                        None
                    }
                    Err(e) => return Err(SimError::from(e).into()),
                    Ok(r) => attack_transcript(&r.transcript, &secrets, attacker),
                }
            }
            _ => attack_transcript(&exchange(&secrets, &seeds), &secrets, attacker),
        };
        let success = recovered.as_ref() == Some(&truth);
        t.push(row![
            seed,
            trial,
            mode.name(),
            if attacker == 0 { "leader" } else { "member" },
            join(truth),
            recovered.map(join).unwrap_or_default(),
            success,
        ]);
    }
    Ok(aborted)
}

fn dedup_seeds(seeds: &mut [BigInt]) {
    for i in 1..seeds.len() {
        while seeds[..i].contains(&seeds[i]) {
            seeds[i] += 1;
        }
    }
}

/// Victim values recovered by the attacker at `attacker`, in member order.
fn attack_transcript(
    transcript: &crate::cpda::ClusterTranscript,
    secrets: &[NodeSecret],
    attacker: usize,
) -> Option<Vec<BigInt>> {
    let recovery = if attacker == 0 {
        leader_attack(&LeaderView::from_transcript(transcript, &secrets[0]).ok()?).ok()?
    } else {
        member_attack(&MemberView::from_transcript(transcript, attacker, &secrets[attacker]).ok()?).ok()?
    };
    (0..secrets.len())
        .filter(|&i| i != attacker)
        .map(|i| recovery.value(i).cloned())
        .collect()
}

fn ci_rows(cfg: &ExperimentConfig, t: &mut Table) -> Result<bool, CliError> {
    let s = &cfg.sim;
    let f = s.fault_fraction;
    let secure = run_ci_sim(s, f, true)?;
    let plain = run_ci_sim(s, f, false)?;
    let clean = run_ci_sim(s, 0.0, false)?;
    let j = |nj: u64| nj as f64 / 1e9;
    let c = secure.counts;
    let e_with = j(secure.metrics.energy.total_spent());
    let e_without = j(plain.metrics.energy.total_spent());
    t.push(row![
        s.rng_seed,
        f,
        s.fault_offset_sigmas,
        c.true_positive,
        c.false_positive,
        c.true_negative,
        c.false_negative,
        c.detection_rate(),
        c.fp_rate(),
        c.fn_rate(),
        e_with,
        e_without,
        j(clean.metrics.energy.total_spent()),
        e_with / e_without - 1.0,
        j(secure.metrics.energy.spent_without_sensing()),
        j(plain.metrics.energy.spent_without_sensing()),
        secure.metrics.delivery_ratio(),
        plain.metrics.delivery_ratio(),
    ]);
    Ok(false)
}
