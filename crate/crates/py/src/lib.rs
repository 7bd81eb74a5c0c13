//! Python bindings for the `wsnagg` aggregation library.

use num_bigint::BigInt;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wsnagg::attack::{self, LeaderView, MemberView};
use wsnagg::ciagg;
use wsnagg::cli;
use wsnagg::cpda::{self, ClusterKeys, ClusterSeeds, CpdaError, CpdaMode, NodeSecret, OpCounters, ValueBounds};
use wsnagg::keydist::{self, KeyPoolConfig};
use wsnagg::netsim::{self, SimError, SimMode};

create_exception!(pywsnagg, ProtocolAbort, PyException, "A hardened round rejected a seed or share set.");

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cpda_err(e: CpdaError) -> PyErr {
    match e {
        CpdaError::ProtocolAbort { .. } => ProtocolAbort::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::Cpda(c) => cpda_err(c),
        other => value_err(other),
    }
}

#[pyclass(name = "GaussianEstimate", module = "pywsnagg", from_py_object)]
#[derive(Clone, Copy)]
struct PyGaussian(ciagg::GaussianEstimate);

#[pymethods]
impl PyGaussian {
    #[new]
    fn new(mean: f64, variance: f64) -> PyResult<Self> {
        ciagg::GaussianEstimate::new(mean, variance).map(Self).map_err(value_err)
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.0.mean
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.0.variance
    }

    fn __repr__(&self) -> String {
        format!("GaussianEstimate(mean={}, variance={})", self.0.mean, self.0.variance)
    }
}

/// Scalar covariance intersection of two estimates.
#[pyfunction]
fn ci_fuse(a: PyGaussian, b: PyGaussian) -> PyResult<PyGaussian> {
    ciagg::ci_fuse(&a.0, &b.0).map(PyGaussian).map_err(value_err)
}

/// Moment-matched max fusion of a neighbor's global estimate with the local one.
#[pyfunction]
#[pyo3(signature = (global_estimate, local, prev_local_mean, fall_threshold = 1.0))]
fn fuse_local(global_estimate: PyGaussian, local: PyGaussian, prev_local_mean: f64, fall_threshold: f64) -> PyResult<PyGaussian> {
    let cfg = ciagg::CiConfig {
        fall_threshold,
        ..ciagg::CiConfig::default()
    };
    cfg.validate().map_err(value_err)?;
    ciagg::fuse_local(&global_estimate.0, &local.0, prev_local_mean, &cfg)
        .map(PyGaussian)
        .map_err(value_err)
}

#[pyclass(name = "SimConfig", module = "pywsnagg", from_py_object)]
#[derive(Clone)]
struct PySimConfig(netsim::SimConfig);

macro_rules! config_fields {
    ($($name:ident : $ty:ty => $($path:ident).+),* $(,)?; $($extra:item)*) => {
        #[pymethods]
        impl PySimConfig {
            $($extra)*

            $(
                #[getter]
                fn $name(&self) -> $ty {
                    self.0.$($path).+
                }
            )*
        }

        impl PySimConfig {
            fn set_field(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
                match key {
                    $(stringify!($name) => self.0.$($path).+ = value.extract()?,)*
                    other => return Err(value_err(format!("unknown field {other}"))),
                }
                Ok(())
            }
        }
    };
}

config_fields! {
    node_count: usize => node_count,
    area_side: f64 => area_side,
    radio_range: f64 => radio_range,
    sim_time: f64 => sim_time,
    sampling_period: f64 => sampling_period,
    leader_probability: f64 => leader_probability,
    link_loss_probability: f64 => link_loss_probability,
    rng_seed: u64 => rng_seed,
    fault_fraction: f64 => fault_fraction,
    fault_offset_sigmas: f64 => fault_offset_sigmas,
    pool_size: u64 => key_pool.pool_size,
    ring_size: u64 => key_pool.ring_size,
    broadcast_threshold: f64 => ci.broadcast_threshold;

    /// Defaults, overridden by keyword arguments named after the getters.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self(netsim::SimConfig::default());
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                cfg.set_field(&k.extract::<String>()?, &v)?;
            }
        }
        cfg.0.validate().map_err(sim_err)?;
        Ok(cfg)
    }

    /// Reads a `key = value` experiment file.
    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        cli::parse_config(&path).map(|c| Self(c.sim)).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

fn parse_sim_mode(mode: &str) -> PyResult<SimMode> {
    SimMode::parse(mode).ok_or_else(|| value_err(format!("unknown mode {mode}")))
}

fn parse_cpda_mode(mode: &str) -> PyResult<CpdaMode> {
    CpdaMode::ALL
        .into_iter()
        .find(|m| m.name() == mode)
        .ok_or_else(|| value_err(format!("unknown mode {mode}")))
}

fn ops_dict<'py>(py: Python<'py>, ops: &OpCounters) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in [
        ("add", ops.add),
        ("sub", ops.sub),
        ("mul", ops.mul),
        ("div", ops.div),
        ("exp", ops.exp),
        ("enc", ops.enc),
        ("mat_mul", ops.mat_mul),
        ("mat_inv", ops.mat_inv),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// One CPDA network run. Returns a dict of summary metrics.
#[pyfunction]
fn run_cpda_sim<'py>(py: Python<'py>, config: PySimConfig, mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let m = netsim::run_cpda_sim(&config.0, parse_sim_mode(mode)?).map_err(sim_err)?;
    let d = PyDict::new(py);
    d.set_item("mode", &m.mode)?;
    d.set_item("seed", m.seed)?;
    d.set_item("participating_nodes", m.participating_nodes)?;
    d.set_item("clusters", m.clusters)?;
    d.set_item("aborted_clusters", m.aborted_clusters)?;
    d.set_item("avg_messages_per_node", m.avg_messages_per_node())?;
    d.set_item("delivery_ratio", m.delivery_ratio())?;
    d.set_item("energy_j", m.energy_spent_j())?;
    d.set_item("sink_aggregate", m.sink_aggregate)?;
    d.set_item("true_aggregate", m.true_aggregate)?;
    d.set_item("ops", ops_dict(py, &m.ops)?)?;
    Ok(d)
}

/// Secured and unsecured CI runs at one fault fraction.
#[pyfunction]
fn run_ci_experiment<'py>(py: Python<'py>, config: PySimConfig, fault_fraction: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = netsim::run_ci_experiment(&config.0, fault_fraction).map_err(sim_err)?;
    let d = PyDict::new(py);
    d.set_item("tp", r.true_positive)?;
    d.set_item("fp", r.false_positive)?;
    d.set_item("tn", r.true_negative)?;
    d.set_item("fn", r.false_negative)?;
    d.set_item("detection_rate", r.detection_rate)?;
    d.set_item("fp_rate", r.fp_rate)?;
    d.set_item("fn_rate", r.fn_rate)?;
    d.set_item("energy_with_security_j", r.energy_with_security)?;
    d.set_item("energy_without_security_j", r.energy_without_security)?;
    d.set_item("delivery_ratio_with_security", r.delivery_ratio_with_security)?;
    d.set_item("delivery_ratio_without_security", r.delivery_ratio_without_security)?;
    Ok(d)
}

fn secrets(values: &[u64], coefficients: &[Vec<u64>]) -> PyResult<Vec<NodeSecret>> {
    if values.len() != coefficients.len() {
        return Err(value_err("values and coefficients differ in length"));
    }
    let m = values.len();
    values
        .iter()
        .zip(coefficients)
        .map(|(&v, c)| {
            if c.len() + 1 != m {
                return Err(value_err(format!("each member needs {} coefficients", m.saturating_sub(1))));
            }
            Ok(NodeSecret::new(v, c))
        })
        .collect()
}

/// Plays one cluster round; member 0 leads. Raises `ProtocolAbort` when a
/// hardened round rejects its inputs.
#[pyfunction]
#[pyo3(signature = (values, coefficients, seeds, mode = "original", key_salt = 0))]
fn run_cluster<'py>(
    py: Python<'py>,
    values: Vec<u64>,
    coefficients: Vec<Vec<u64>>,
    seeds: Vec<BigInt>,
    mode: &str,
    key_salt: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let s = secrets(&values, &coefficients)?;
    let seeds = ClusterSeeds::new(seeds).map_err(cpda_err)?;
    let mut ops = OpCounters::default();
    let r = cpda::run_cluster(
        &s,
        &seeds,
        parse_cpda_mode(mode)?,
        ValueBounds::default(),
        &ClusterKeys::synthetic(s.len(), key_salt),
        &mut ops,
    )
    .map_err(cpda_err)?;
    let d = PyDict::new(py);
    d.set_item("sum", r.recovered_sum)?;
    d.set_item("coefficient_sums", r.recovered_coefficient_sums)?;
    d.set_item("ops", ops_dict(py, &r.counters)?)?;
    Ok(d)
}

/// Runs an original round and lets member `attacker` (0 is the leader)
/// recover the others' private values. Returns `{member: value}`.
#[pyfunction]
fn attack_original_round(
    values: Vec<u64>,
    coefficients: Vec<Vec<u64>>,
    seeds: Vec<BigInt>,
    attacker: usize,
) -> PyResult<std::collections::BTreeMap<usize, BigInt>> {
    let s = secrets(&values, &coefficients)?;
    if attacker >= s.len() {
        return Err(value_err(format!("attacker {attacker} is not in the cluster")));
    }
    let t = cpda::exchange(&s, &seeds);
    let recovery = if attacker == 0 {
        attack::leader_attack(&LeaderView::from_transcript(&t, &s[0]).map_err(value_err)?)
    } else {
        attack::member_attack(&MemberView::from_transcript(&t, attacker, &s[attacker]).map_err(value_err)?)
    };
    recovery.map(|r| r.values).map_err(value_err)
}

/// Seed a malicious participant announces to make its round invertible.
#[pyfunction]
fn pick_malicious_seed(value_bound: u64, coeff_bound: u64, cluster_size: usize) -> BigInt {
    attack::pick_malicious_seed(value_bound, coeff_bound, cluster_size)
}

fn pool(pool_size: u64, ring_size: u64) -> PyResult<KeyPoolConfig> {
    KeyPoolConfig::new(pool_size, ring_size).map_err(value_err)
}

/// Probability that two rings of `ring_size` keys from a pool of
/// `pool_size` share a key, as `(numerator, denominator)`.
#[pyfunction]
fn connectivity_probability_exact(pool_size: u64, ring_size: u64) -> PyResult<(BigInt, BigInt)> {
    let p = keydist::connectivity_probability_exact(pool(pool_size, ring_size)?).map_err(value_err)?;
    Ok((p.numer().clone(), p.denom().clone()))
}

#[pyfunction]
fn connectivity_probability(pool_size: u64, ring_size: u64) -> PyResult<f64> {
    keydist::connectivity_probability(pool(pool_size, ring_size)?).map_err(value_err)
}

#[pyfunction]
fn overhear_probability(pool_size: u64, ring_size: u64) -> PyResult<f64> {
    keydist::overhear_probability(pool(pool_size, ring_size)?).map_err(value_err)
}

#[pyfunction]
fn empirical_connectivity(pool_size: u64, ring_size: u64, pairs: usize, seed: u64) -> PyResult<f64> {
    keydist::empirical_connectivity(pool(pool_size, ring_size)?, pairs, seed).map_err(value_err)
}

#[pymodule]
fn pywsnagg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ProtocolAbort", m.py().get_type::<ProtocolAbort>())?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PySimConfig>()?;
    m.add_function(wrap_pyfunction!(ci_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_local, m)?)?;
    m.add_function(wrap_pyfunction!(run_cpda_sim, m)?)?;
    m.add_function(wrap_pyfunction!(run_ci_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(attack_original_round, m)?)?;
    m.add_function(wrap_pyfunction!(pick_malicious_seed, m)?)?;
    m.add_function(wrap_pyfunction!(connectivity_probability_exact, m)?)?;
    m.add_function(wrap_pyfunction!(connectivity_probability, m)?)?;
    m.add_function(wrap_pyfunction!(overhear_probability, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_connectivity, m)?)?;
    Ok(())
}
