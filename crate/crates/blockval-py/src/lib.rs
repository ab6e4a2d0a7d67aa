//! Python bindings: game structures, utility tables, exact valuations,
//! coefficient extraction, attack planning/execution, reward allocation,
//! block selection, and the config-driven experiment runner.
//!
//! Exceptions mirror the CLI's exit-code split: configuration problems raise
//! ValueError, numeric and runtime problems raise RuntimeError.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use blockval::attack::{
    empirical_values as empirical_values_rs, execute_attack as execute_attack_rs,
    plan_attack as plan_attack_rs, plan_attack_incomplete, AugmentedUtilityTable, DeltaOracle,
    SubsetPrior,
};
use blockval::downstream::{
    allocate_rewards as allocate_rewards_rs, select_blocks as select_blocks_rs,
    symmetric_percentage_change as spc_rs, valuation_error as valuation_error_rs, RewardScheme,
    SelectionStrategy,
};
use blockval::experiment::{run_experiment, ExperimentConfig, ReportFormat};
use blockval::valuation::extract_coefficients as extract_coefficients_rs;
use blockval::{Error, Mask, Metric};

fn to_py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_metric(id: &str) -> PyResult<Metric> {
    Metric::parse(id).map_err(PyValueError::new_err)
}

/// Ownership layout: how many blocks each client contributes.
#[pyclass(name = "GameStructure", frozen)]
struct PyGameStructure {
    inner: blockval::GameStructure,
}

#[pymethods]
impl PyGameStructure {
    #[new]
    fn new(blocks_per_client: Vec<usize>) -> PyResult<Self> {
        blockval::GameStructure::new(blocks_per_client)
            .map(|inner| PyGameStructure { inner })
            .map_err(to_py_err)
    }

    #[getter]
    fn num_clients(&self) -> usize {
        self.inner.num_clients()
    }

    #[getter]
    fn total_blocks(&self) -> usize {
        self.inner.total_blocks()
    }

    #[getter]
    fn num_subsets(&self) -> usize {
        self.inner.num_subsets()
    }

    /// Block indices owned by one client.
    fn client_blocks(&self, client: usize) -> PyResult<Vec<usize>> {
        if client >= self.inner.num_clients() {
            return Err(PyValueError::new_err(format!(
                "client {client} out of range 0..{}",
                self.inner.num_clients()
            )));
        }
        Ok(self.inner.client_mask(client).blocks().collect())
    }

    fn block_owner(&self, block: usize) -> PyResult<usize> {
        if block >= self.inner.total_blocks() {
            return Err(PyValueError::new_err(format!(
                "block {block} out of range 0..{}",
                self.inner.total_blocks()
            )));
        }
        Ok(self.inner.block_owner(block))
    }

    fn __repr__(&self) -> String {
        let counts: Vec<usize> = (0..self.inner.num_clients())
            .map(|i| self.inner.client_mask(i).len())
            .collect();
        format!("GameStructure({counts:?})")
    }
}

/// Exhaustive utility table: values[mask] = v(subset encoded by mask bits).
#[pyclass(name = "UtilityTable", frozen)]
struct PyUtilityTable {
    inner: blockval::UtilityTable,
}

#[pymethods]
impl PyUtilityTable {
    #[new]
    fn new(num_blocks: usize, values: Vec<f64>) -> PyResult<Self> {
        blockval::UtilityTable::new(num_blocks, values)
            .map(|inner| PyUtilityTable { inner })
            .map_err(to_py_err)
    }

    fn get(&self, mask: u64) -> PyResult<f64> {
        if mask as usize >= self.inner.values().len() {
            return Err(PyValueError::new_err(format!("mask {mask} out of range")));
        }
        Ok(self.inner.get(Mask(mask)))
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn grand(&self) -> f64 {
        self.inner.grand()
    }

    fn __len__(&self) -> usize {
        self.inner.values().len()
    }
}

/// Per-block and per-client values of one metric.
#[pyclass(name = "Valuation", frozen)]
struct PyValuation {
    inner: blockval::Valuation,
}

#[pymethods]
impl PyValuation {
    #[getter]
    fn metric(&self) -> String {
        self.inner.metric.clone()
    }

    #[getter]
    fn block_values(&self) -> Vec<f64> {
        self.inner.block_values.clone()
    }

    #[getter]
    fn client_values(&self) -> Vec<f64> {
        self.inner.client_values.clone()
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    /// Sum of every client's value except one.
    fn others(&self, client: usize) -> PyResult<f64> {
        if client >= self.inner.client_values.len() {
            return Err(PyValueError::new_err(format!("client {client} out of range")));
        }
        Ok(self.inner.others(client))
    }

    fn __repr__(&self) -> String {
        format!(
            "Valuation(metric={:?}, clients={:?})",
            self.inner.metric, self.inner.client_values
        )
    }
}

/// Exact linear coefficients of a metric on a fixed structure.
#[pyclass(name = "CoefficientTable", frozen)]
struct PyCoefficientTable {
    inner: blockval::CoefficientTable,
}

#[pymethods]
impl PyCoefficientTable {
    #[getter]
    fn metric(&self) -> String {
        self.inner.metric().to_string()
    }

    fn block_coeff(&self, block: usize, mask: u64) -> f64 {
        self.inner.block_coeff(block, Mask(mask))
    }

    fn client_coeff(&self, client: usize, mask: u64) -> f64 {
        self.inner.client_coeff(client, Mask(mask))
    }

    fn others_coeff(&self, client: usize, mask: u64) -> f64 {
        self.inner.others_coeff(client, Mask(mask))
    }
}

/// Per-subset actions of one attacker against one metric.
#[pyclass(name = "AttackPlan", frozen)]
struct PyAttackPlan {
    inner: blockval::attack::AttackPlan,
}

#[pymethods]
impl PyAttackPlan {
    #[getter]
    fn attacker(&self) -> usize {
        self.inner.attacker()
    }

    /// mask -> "honest" | "positive_augment" | "negative_augment".
    fn actions(&self) -> std::collections::BTreeMap<u64, String> {
        self.inner
            .iter()
            .map(|(m, a)| (m.0, a.name().to_string()))
            .collect()
    }

    fn is_all_honest(&self) -> bool {
        self.inner.is_all_honest()
    }

    #[getter]
    fn num_non_honest(&self) -> usize {
        self.inner.num_non_honest()
    }
}

#[pyfunction]
fn evaluate(
    metric: &str,
    table: &PyUtilityTable,
    structure: &PyGameStructure,
) -> PyResult<PyValuation> {
    let m = parse_metric(metric)?;
    m.evaluate(&table.inner, &structure.inner)
        .map(|inner| PyValuation { inner })
        .map_err(to_py_err)
}

#[pyfunction]
fn extract_coefficients(metric: &str, structure: &PyGameStructure) -> PyResult<PyCoefficientTable> {
    let m = parse_metric(metric)?;
    extract_coefficients_rs(m, &structure.inner)
        .map(|inner| PyCoefficientTable { inner })
        .map_err(to_py_err)
}

#[pyfunction]
fn plan_attack(
    coeffs: &PyCoefficientTable,
    attacker: usize,
    structure: &PyGameStructure,
) -> PyResult<PyAttackPlan> {
    plan_attack_rs(&coeffs.inner, attacker, &structure.inner)
        .map(|inner| PyAttackPlan { inner })
        .map_err(to_py_err)
}

/// Attack planning when the attacker only observes a subset of the scheduled
/// coalition: expected coefficients under a uniform prior over consistent
/// subsets decide each action.
#[pyfunction]
fn plan_attack_uniform(
    coeffs: &PyCoefficientTable,
    attacker: usize,
    structure: &PyGameStructure,
) -> PyResult<PyAttackPlan> {
    plan_attack_incomplete(
        &coeffs.inner,
        attacker,
        &structure.inner,
        &SubsetPrior::UniformConsistent,
    )
    .map(|inner| PyAttackPlan { inner })
    .map_err(to_py_err)
}

/// Executes a plan against the blind +-delta oracle: manipulated subsets move
/// by exactly +delta (positive augmentation) or -delta (negative).
#[pyfunction]
fn execute_attack_delta(
    plan: &PyAttackPlan,
    table: &PyUtilityTable,
    delta: f64,
) -> PyResult<PyUtilityTable> {
    let oracle = DeltaOracle::new(&table.inner, delta);
    execute_attack_rs(&plan.inner, &oracle)
        .map(|augmented| PyUtilityTable {
            inner: augmented.into_table(),
        })
        .map_err(to_py_err)
}

/// Values computed from the linear coefficient form on a (possibly attacked)
/// utility table, with the direct computation as a built-in cross-check.
#[pyfunction]
fn empirical_values(
    metric: &str,
    coeffs: &PyCoefficientTable,
    table: &PyUtilityTable,
) -> PyResult<PyValuation> {
    let m = parse_metric(metric)?;
    let augmented = AugmentedUtilityTable::new(table.inner.clone());
    empirical_values_rs(m, &coeffs.inner, &augmented)
        .map(|inner| PyValuation { inner })
        .map_err(to_py_err)
}

/// scheme: "balanced" or "proportional"; total is required for proportional.
#[pyfunction]
#[pyo3(signature = (valuation, scheme, total = None))]
fn allocate_rewards(
    valuation: &PyValuation,
    scheme: &str,
    total: Option<f64>,
) -> PyResult<Vec<f64>> {
    let scheme = match (scheme, total) {
        ("balanced", None) => RewardScheme::Balanced,
        ("proportional", Some(total)) => RewardScheme::Proportional { total },
        ("proportional", None) => {
            return Err(PyValueError::new_err(
                "proportional rewards need a total".to_string(),
            ))
        }
        (other, _) => {
            return Err(PyValueError::new_err(format!(
                "unknown scheme {other:?} (expected \"balanced\" or \"proportional\")"
            )))
        }
    };
    allocate_rewards_rs(&valuation.inner, scheme).map_err(to_py_err)
}

/// strategy: "top_k" (k required), "above_average", or "above_median".
#[pyfunction]
#[pyo3(signature = (valuation, strategy, k = None))]
fn select_blocks(valuation: &PyValuation, strategy: &str, k: Option<usize>) -> PyResult<Vec<usize>> {
    let strategy = match (strategy, k) {
        ("top_k", Some(k)) => SelectionStrategy::TopK { k },
        ("top_k", None) => {
            return Err(PyValueError::new_err("top_k selection needs k".to_string()))
        }
        ("above_average", _) => SelectionStrategy::AboveAverage,
        ("above_median", _) => SelectionStrategy::AboveMedian,
        (other, _) => {
            return Err(PyValueError::new_err(format!(
                "unknown strategy {other:?}"
            )))
        }
    };
    Ok(select_blocks_rs(&valuation.inner, strategy))
}

#[pyfunction]
fn symmetric_percentage_change(attacked: f64, truthful: f64) -> f64 {
    spc_rs(attacked, truthful)
}

#[pyfunction]
fn valuation_error(attacked: &PyValuation, truthful: &PyValuation) -> PyResult<f64> {
    valuation_error_rs(&attacked.inner, &truthful.inner).map_err(to_py_err)
}

/// Runs the full experiment described by a JSON config string and returns the
/// report as a JSON string. Optionally writes report files to out_dir.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir = None))]
fn run_experiment_json(config_json: &str, out_dir: Option<&str>) -> PyResult<String> {
    let config: ExperimentConfig = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    let report = run_experiment(&config).map_err(to_py_err)?;
    if let Some(dir) = out_dir {
        blockval::experiment::write_report(&report, std::path::Path::new(dir), ReportFormat::Both)
            .map_err(to_py_err)?;
    }
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Diagnostics for a JSON config string; empty list means runnable.
#[pyfunction]
fn validate_config_json(config_json: &str) -> PyResult<Vec<String>> {
    let config: ExperimentConfig = match serde_json::from_str(config_json) {
        Ok(c) => c,
        Err(e) => return Ok(vec![format!("config: {e}")]),
    };
    Ok(config.validate())
}

#[pymodule]
#[pyo3(name = "blockval")]
fn blockval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGameStructure>()?;
    m.add_class::<PyUtilityTable>()?;
    m.add_class::<PyValuation>()?;
    m.add_class::<PyCoefficientTable>()?;
    m.add_class::<PyAttackPlan>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(plan_attack, m)?)?;
    m.add_function(wrap_pyfunction!(plan_attack_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(execute_attack_delta, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_values, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_rewards, m)?)?;
    m.add_function(wrap_pyfunction!(select_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_percentage_change, m)?)?;
    m.add_function(wrap_pyfunction!(valuation_error, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_json, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config_json, m)?)?;
    Ok(())
}
