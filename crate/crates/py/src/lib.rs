//! Python module `pyxchain`: scenarios, simulation runs, checkers, threshold
//! signatures and the transaction encoding.
//!
//! Structured values cross the boundary as JSON strings, the same documents
//! the CLI reads and writes.

use atomic_xchain::scenario;
use atomic_xchain::sim::{self, check_liveness, check_safety, FaultSpec, FinalState, ScenarioConfig, Trace, Verdict};
use atomic_xchain::tsig::{
    self, GroupScalar, KeyShare, PedersenCommitments, SignatureShare, ThresholdConfig, ThresholdSignature,
};
use atomic_xchain::txcore::{self, CrosschainTransaction};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

/// `(index, secret_share, blinding_share)`.
type RawShare = (u32, u64, u64);

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn config_from(source: &str) -> PyResult<ScenarioConfig> {
    if source.trim_start().starts_with('{') {
        ScenarioConfig::from_json(source).map_err(value_error)
    } else {
        scenario::load(source).ok_or_else(|| value_error(format!("unknown scenario {source}")))
    }
}

/// Checker verdict.
#[pyclass(frozen, get_all)]
struct Check {
    passed: bool,
    violations: Vec<String>,
}

impl From<Verdict> for Check {
    fn from(v: Verdict) -> Self {
        Check {
            passed: v.pass,
            violations: v.violations,
        }
    }
}

#[pymethods]
impl Check {
    fn __bool__(&self) -> bool {
        self.passed
    }

    fn __repr__(&self) -> String {
        format!("Check(passed={}, violations={})", self.passed, self.violations.len())
    }
}

/// Outcome of one simulation run.
#[pyclass(frozen)]
struct RunResult {
    config: ScenarioConfig,
    out: sim::RunOutput,
}

#[pymethods]
impl RunResult {
    /// Trace as JSON lines.
    #[getter]
    fn trace(&self) -> String {
        self.out.trace.to_jsonl()
    }

    /// Final state as a JSON document.
    #[getter]
    fn final_state(&self) -> String {
        self.out.final_state.to_json()
    }

    #[getter]
    fn outside_assumptions(&self) -> bool {
        self.out.final_state.outside_assumptions
    }

    /// `(label, status, reason)` per submission.
    #[getter]
    fn submissions(&self) -> Vec<(String, String, Option<String>)> {
        self.out
            .final_state
            .submissions
            .iter()
            .map(|s| (s.label.clone(), format!("{:?}", s.status), s.reason.clone()))
            .collect()
    }

    /// Committed storage of one contract, or `None` if it is not deployed.
    fn storage(&self, chain: u64, address: u64) -> PyResult<Option<Vec<(u64, u64)>>> {
        let chain = txcore::ChainId::try_new(chain).ok_or_else(|| value_error("chain id must be positive"))?;
        let addr = txcore::Address::from_u64(address);
        Ok(self
            .out
            .final_state
            .storage(chain, addr)
            .map(|s| s.iter().map(|(&k, &v)| (k, v)).collect()))
    }

    fn safety(&self) -> Check {
        check_safety(&self.out.trace, &self.out.final_state).into()
    }

    fn liveness(&self) -> Check {
        check_liveness(&self.out.trace, &self.out.final_state, &self.config.params).into()
    }
}

/// `(name, description)` for every packaged scenario.
#[pyfunction]
fn list_scenarios() -> Vec<(&'static str, String)> {
    scenario::list()
}

/// Packaged scenario config as JSON.
#[pyfunction]
fn scenario_json(name: &str) -> PyResult<String> {
    config_from(name).map(|c| c.to_json())
}

/// Run a packaged scenario (by name) or a config given as JSON text.
#[pyfunction]
#[pyo3(signature = (scenario, seed=0, faults=Vec::new(), random_faults=false))]
fn run(scenario: &str, seed: u64, faults: Vec<String>, random_faults: bool) -> PyResult<RunResult> {
    let config = config_from(scenario)?;
    let mut specs = faults
        .iter()
        .map(|f| f.parse::<FaultSpec>().map_err(value_error))
        .collect::<PyResult<Vec<_>>>()?;
    if random_faults {
        specs.extend(sim::random_faults(&config, seed));
    }
    let out = sim::run_with_faults(&config, seed, &specs).map_err(value_error)?;
    Ok(RunResult { config, out })
}

/// Re-run both checkers over stored artifacts. Returns `(safety, liveness)`.
#[pyfunction]
fn check(trace: &str, final_state: &str, config: &str) -> PyResult<(Check, Check)> {
    let config = config_from(config)?;
    let trace = Trace::from_jsonl(trace).map_err(value_error)?;
    let state = FinalState::from_json(final_state).map_err(value_error)?;
    Ok((
        check_safety(&trace, &state).into(),
        check_liveness(&trace, &state, &config.params).into(),
    ))
}

/// Dealer key generation. Returns `(public_key, shares, commitments)` with
/// shares as `(index, secret_share, blinding_share)`.
#[pyfunction]
fn keygen(n: u32, m: u32, seed: u64) -> PyResult<(u64, Vec<RawShare>, Vec<u64>)> {
    let cfg = ThresholdConfig::new(n, m).map_err(value_error)?;
    let out = tsig::dealer_keygen(cfg, seed).map_err(value_error)?;
    let shares = out
        .shares
        .iter()
        .map(|s| (s.index, s.secret_share.value(), s.blinding_share.value()))
        .collect();
    let commitments = out.commitments.as_slice().iter().map(|c| c.value()).collect();
    Ok((out.public_key.value(), shares, commitments))
}

fn key_share(share: RawShare) -> KeyShare {
    KeyShare {
        index: share.0,
        secret_share: GroupScalar::new(share.1),
        blinding_share: GroupScalar::new(share.2),
    }
}

/// Signature share of `msg` under one key share.
#[pyfunction]
fn sign_share(share: RawShare, msg: &[u8]) -> u64 {
    tsig::sign_share(&key_share(share), msg).value.value()
}

/// Combine `(index, value)` signature shares into a threshold signature.
#[pyfunction]
fn combine(shares: Vec<(u32, u64)>, n: u32, m: u32) -> PyResult<u64> {
    let cfg = ThresholdConfig::new(n, m).map_err(value_error)?;
    let shares: Vec<SignatureShare> = shares
        .into_iter()
        .map(|(index, v)| SignatureShare {
            index,
            value: GroupScalar::new(v),
        })
        .collect();
    tsig::combine(&shares, cfg)
        .map(|s| s.value.value())
        .map_err(value_error)
}

#[pyfunction]
fn verify(public_key: u64, msg: &[u8], signature: u64) -> bool {
    let sig = ThresholdSignature {
        value: GroupScalar::new(signature),
    };
    tsig::verify(GroupScalar::new(public_key), msg, &sig)
}

/// Check a key share against the dealer's Pedersen commitments.
#[pyfunction]
fn verify_share(share: RawShare, commitments: Vec<u64>) -> bool {
    let commitments = PedersenCommitments::new(commitments.into_iter().map(GroupScalar::new).collect());
    tsig::verify_share(&key_share(share), &commitments)
}

/// Canonical bytes of a transaction given as JSON.
#[pyfunction]
fn encode_transaction<'py>(py: Python<'py>, tx_json: &str) -> PyResult<Bound<'py, PyBytes>> {
    let tx: CrosschainTransaction = serde_json::from_str(tx_json).map_err(value_error)?;
    Ok(PyBytes::new(py, &txcore::encode(&tx)))
}

/// Decode canonical bytes back to transaction JSON.
#[pyfunction]
fn decode_transaction(data: &[u8]) -> PyResult<String> {
    let tx = txcore::decode(data).map_err(value_error)?;
    serde_json::to_string(&tx).map_err(value_error)
}

/// Consistency violations of a nest given as JSON, one string each.
#[pyfunction]
fn validate_nesting(tx_json: &str) -> PyResult<Vec<String>> {
    let tx: CrosschainTransaction = serde_json::from_str(tx_json).map_err(value_error)?;
    txcore::validate_nesting(&tx)
        .iter()
        .map(|v| serde_json::to_string(v).map_err(value_error))
        .collect()
}

#[pymodule]
fn pyxchain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Check>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_json, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(keygen, m)?)?;
    m.add_function(wrap_pyfunction!(sign_share, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(verify_share, m)?)?;
    m.add_function(wrap_pyfunction!(encode_transaction, m)?)?;
    m.add_function(wrap_pyfunction!(decode_transaction, m)?)?;
    m.add_function(wrap_pyfunction!(validate_nesting, m)?)?;
    Ok(())
}
