//! Python bindings. Reports cross the boundary as plain dicts.

use std::path::Path;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use lbp_core::estimands::{self, oracle};
use lbp_core::estimators::{self, EstimatorOptions, ObservedDataset};
use lbp_core::intervention::{self, MediatorPolicy, MediatorProfile, PolicyFit, Stratification};
use lbp_core::scenario::{self, resolve_structure, Scenario};
use lbp_core::scm::{self, Population, ScmSpec};

create_exception!(lbp, LbpError, PyException);
create_exception!(lbp, UndefinedEstimandError, LbpError);
create_exception!(lbp, PositivityError, LbpError);

fn err(e: lbp_core::Error) -> PyErr {
    match e.kind() {
        "undefined_estimand" => UndefinedEstimandError::new_err(e.to_string()),
        "positivity" => PositivityError::new_err(e.to_string()),
        _ => LbpError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(
    py: Python<'_>,
    value: &Bound<'_, PyAny>,
) -> PyResult<T> {
    let text: String = if let Ok(s) = value.extract::<String>() {
        s
    } else {
        py.import("json")?
            .call_method1("dumps", (value,))?
            .extract()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn strata_arg(
    py: Python<'_>,
    strata: Option<&Bound<'_, PyAny>>,
) -> PyResult<Option<Stratification>> {
    strata.map(|s| from_py(py, s)).transpose()
}

#[pyclass(name = "Scm", module = "lbp")]
struct PyScm {
    spec: ScmSpec,
}

#[pymethods]
impl PyScm {
    /// Build from a JSON string or a dict.
    #[new]
    fn new(py: Python<'_>, spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(PyScm {
            spec: from_py(py, spec)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyScm {
            spec: ScmSpec::load(path).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.spec.to_json()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Violations as strings; empty when the model is valid.
    fn validate(&self) -> Vec<String> {
        scm::validate_scm(&self.spec)
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    fn enumeration_eligible(&self) -> bool {
        scm::enumeration_eligible(&self.spec)
    }

    /// Natural-regime population as CSV text.
    fn simulate(&self, py: Python<'_>, n: u64, seed: u64) -> PyResult<String> {
        let pop = py
            .detach(|| scm::simulate_natural(&self.spec, n, seed))
            .map_err(err)?;
        Ok(pop.to_csv_string())
    }

    fn cte<'py>(&self, py: Python<'py>, n: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| estimands::conditional_total_effect(&self.spec, n, seed))
            .map_err(err)?;
        to_py(py, &r)
    }

    fn csde<'py>(
        &self,
        py: Python<'py>,
        policy: &PyPolicy,
        n: u64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| {
                estimands::conditional_stochastic_direct_effect(&self.spec, &policy.policy, n, seed)
            })
            .map_err(err)?;
        to_py(py, &r)
    }

    /// Controlled direct effect; `z1` and `z2` default to survival with
    /// birth at the first time point.
    #[pyo3(signature = (n, seed, z1=None, z2=None))]
    fn cde<'py>(
        &self,
        py: Python<'py>,
        n: u64,
        seed: u64,
        z1: Option<Vec<u8>>,
        z2: Option<Vec<u8>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let profile = profile(self.spec.horizon, z1, z2);
        let r = py
            .detach(|| estimands::controlled_direct_effect(&self.spec, &profile, n, seed))
            .map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (n, seed, a_ref=0))]
    fn nde_marginal<'py>(
        &self,
        py: Python<'py>,
        n: u64,
        seed: u64,
        a_ref: u8,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| estimands::nde_marginal(&self.spec, a_ref, n, seed))
            .map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (n, seed, a_ref=0))]
    fn nde_conditional<'py>(
        &self,
        py: Python<'py>,
        n: u64,
        seed: u64,
        a_ref: u8,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| estimands::nde_conditional(&self.spec, a_ref, n, seed))
            .map_err(err)?;
        to_py(py, &r)
    }

    /// Exact value of a contrast by enumeration. `kind` is one of `cte`,
    /// `csde`, `cde`, `nde_marginal`, `nde_conditional`.
    #[pyo3(signature = (kind, policy=None, a_ref=0, z1=None, z2=None))]
    fn exact<'py>(
        &self,
        py: Python<'py>,
        kind: &str,
        policy: Option<&PyPolicy>,
        a_ref: u8,
        z1: Option<Vec<u8>>,
        z2: Option<Vec<u8>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = &self.spec;
        let r = match kind {
            "cte" => oracle::exact_cte(spec),
            "csde" => {
                let policy = policy.ok_or_else(|| PyValueError::new_err("csde needs a policy"))?;
                oracle::exact_csde(spec, &policy.policy)
            }
            "cde" => oracle::exact_cde(spec, &profile(spec.horizon, z1, z2)),
            "nde_marginal" => oracle::exact_nde_marginal(spec, a_ref, None),
            "nde_conditional" => oracle::exact_nde_conditional(spec, a_ref, None),
            other => return Err(PyValueError::new_err(format!("unknown estimand {other:?}"))),
        }
        .map_err(err)?;
        to_py(py, &r)
    }

    /// Counterfactual mediator policy under `do(A = a_ref)`. Exact when
    /// `n_fit` is None, otherwise fitted on `n_fit` simulated individuals.
    #[pyo3(signature = (a_ref, conditional=false, n_fit=None, seed=0, strata=None))]
    fn derive_policy(
        &self,
        py: Python<'_>,
        a_ref: u8,
        conditional: bool,
        n_fit: Option<u64>,
        seed: u64,
        strata: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<PyPolicy> {
        let fit = n_fit.map_or(PolicyFit::exact(), PolicyFit::monte_carlo);
        let strata = match strata_arg(py, strata)? {
            Some(s) => s,
            None => Stratification::discrete_baseline(
                lbp_core::scm::CompiledScm::new(&self.spec)
                    .map_err(err)?
                    .layout(),
            ),
        };
        let policy = if conditional {
            intervention::derive_policy_conditional(&self.spec, a_ref, fit, seed, &strata)
        } else {
            intervention::derive_policy_marginal(&self.spec, a_ref, fit, seed, &strata)
        }
        .map_err(err)?;
        Ok(PyPolicy { policy })
    }

    fn __repr__(&self) -> String {
        format!("Scm(horizon={})", self.spec.horizon)
    }
}

fn profile(horizon: usize, z1: Option<Vec<u8>>, z2: Option<Vec<u8>>) -> MediatorProfile {
    let base = MediatorProfile::survival_and_birth(horizon);
    MediatorProfile {
        z1: z1.unwrap_or(base.z1),
        z2: z2.unwrap_or(base.z2),
    }
}

#[pyclass(name = "Policy", module = "lbp")]
struct PyPolicy {
    policy: MediatorPolicy,
}

#[pymethods]
impl PyPolicy {
    #[new]
    fn new(py: Python<'_>, policy: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(PyPolicy {
            policy: from_py(py, policy)?,
        })
    }

    /// Known policy from per-time death and birth hazards.
    #[staticmethod]
    #[pyo3(signature = (death, birth, death_blocks_birth=true))]
    fn from_hazards(death: Vec<f64>, birth: Vec<f64>, death_blocks_birth: bool) -> PyResult<Self> {
        Ok(PyPolicy {
            policy: MediatorPolicy::from_hazards(&death, &birth, death_blocks_birth)
                .map_err(err)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.policy.kind.label()
    }

    fn to_json(&self) -> String {
        self.policy.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Policy({})", self.policy.kind.label())
    }
}

#[pyclass(name = "Dataset", module = "lbp")]
struct PyDataset {
    data: ObservedDataset,
}

fn options(py: Python<'_>, opts: Option<&Bound<'_, PyDict>>) -> PyResult<EstimatorOptions> {
    match opts {
        Some(d) => from_py(py, d.as_any()),
        None => Ok(EstimatorOptions::default()),
    }
}

#[pymethods]
impl PyDataset {
    /// Parse observed data from CSV text in the simulation layout.
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(PyDataset {
            data: ObservedDataset::read_csv(text.as_bytes()).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            data: ObservedDataset::load(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn simulate(scm: &PyScm, n: u64, seed: u64) -> PyResult<Self> {
        let pop: Population = scm::simulate_natural(&scm.spec, n, seed).map_err(err)?;
        Ok(PyDataset {
            data: ObservedDataset::from_population(&pop).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.data.len()
    }

    fn arm_size(&self, a: u8) -> usize {
        self.data.arm_size(a)
    }

    #[pyo3(signature = (source_arm, strata=None))]
    fn fit_policy(
        &self,
        py: Python<'_>,
        source_arm: u8,
        strata: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<PyPolicy> {
        let strata = strata_arg(py, strata)?
            .unwrap_or_else(|| Stratification::discrete_baseline(self.data.layout()));
        Ok(PyPolicy {
            policy: estimators::fit_data_adaptive_policy(&self.data, source_arm, &strata)
                .map_err(err)?,
        })
    }

    #[pyo3(signature = (adjustment=None, options=None))]
    fn estimate_cte<'py>(
        &self,
        py: Python<'py>,
        adjustment: Option<&Bound<'_, PyAny>>,
        options: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let adjustment = strata_arg(py, adjustment)?
            .unwrap_or_else(|| Stratification::discrete_baseline(self.data.layout()));
        let opts = self::options(py, options)?;
        let r = py
            .detach(|| estimators::estimate_cte(&self.data, &adjustment, &opts))
            .map_err(err)?;
        to_py(py, &r)
    }

    /// CSDE by g-computation (`method="gcomp"`) or weighting
    /// (`method="ipw"`), with nuisance models shaped after `scm`.
    #[pyo3(signature = (scm, policy, method="gcomp", drop_covariates=Vec::new(), options=None))]
    fn estimate_csde<'py>(
        &self,
        py: Python<'py>,
        scm: &PyScm,
        policy: &PyPolicy,
        method: &str,
        drop_covariates: Vec<String>,
        options: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let structure = resolve_structure(&scm.spec, None, &drop_covariates).map_err(err)?;
        let opts = self::options(py, options)?;
        let r = match method {
            "gcomp" => py.detach(|| {
                estimators::estimate_csde_gcomp(&self.data, &policy.policy, &structure, &opts)
            }),
            "ipw" => py.detach(|| {
                estimators::estimate_csde_ipw(&self.data, &policy.policy, &structure, &opts)
            }),
            other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
        }
        .map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (policy, epsilon=0.05))]
    fn positivity<'py>(
        &self,
        py: Python<'py>,
        policy: &PyPolicy,
        epsilon: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r =
            estimators::positivity_diagnostics(&self.data, &policy.policy, epsilon).map_err(err)?;
        to_py(py, &r)
    }
}

#[pyclass(name = "Scenario", module = "lbp")]
struct PyScenario {
    scenario: Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyScenario {
            scenario: scenario::load_scenario(path).map_err(err)?,
        })
    }

    /// Parse from JSON text; relative `scm_file` paths resolve against `base`.
    #[staticmethod]
    #[pyo3(signature = (text, base="."))]
    fn from_json(text: &str, base: &str) -> PyResult<Self> {
        Ok(PyScenario {
            scenario: Scenario::from_json(text, "<string>", Path::new(base)).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.scenario.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.scenario.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.scenario.seed = seed;
    }

    fn digest(&self) -> String {
        self.scenario.digest()
    }

    fn scm(&self) -> PyScm {
        PyScm {
            spec: self.scenario.spec().clone(),
        }
    }

    fn run<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| scenario::run_scenario(&self.scenario))
            .map_err(err)?;
        to_py(py, &r)
    }

    fn diagnose<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| scenario::run_diagnostics(&self.scenario))
            .map_err(err)?;
        to_py(py, &r)
    }

    fn oracle<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| scenario::oracle_sidecar(&self.scenario))
            .map_err(err)?;
        to_py(py, &r)
    }
}

#[pymodule]
fn lbp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("LbpError", py.get_type::<LbpError>())?;
    m.add(
        "UndefinedEstimandError",
        py.get_type::<UndefinedEstimandError>(),
    )?;
    m.add("PositivityError", py.get_type::<PositivityError>())?;
    m.add("ENUMERATION_BUDGET", scm::ENUMERATION_BUDGET)?;
    m.add_class::<PyScm>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyScenario>()?;
    Ok(())
}
