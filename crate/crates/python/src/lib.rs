//! Python bindings for the comscribe analyzer.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use comscribe::decompose::{
    build_double_binary_tree, decompose_instance, ModelConfig, RingOrder, DEFAULT_TREE_THRESHOLD,
};
use comscribe::matrix::CommMatrix;
use comscribe::report::{self, RenderSpec, Scale};
use comscribe::trace::{
    AlgorithmChoice, AlgorithmKind, CollectiveInstance, CollectiveKind, Endpoint, TraceEvent,
};
use comscribe::workload::{
    generate_workload, gnmt_like_preset_scaled, resnet_like_preset, AuxPlan,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn endpoint_label(ep: Endpoint) -> String {
    match ep {
        Endpoint::Host => "host".into(),
        Endpoint::Gpu(g) => format!("gpu{g}"),
        Endpoint::NetAggregator => "net".into(),
    }
}

fn ring_order(ring: Option<Vec<u32>>) -> PyResult<Option<RingOrder>> {
    ring.map(RingOrder::new).transpose().map_err(value_err)
}

fn event_dict<'py>(py: Python<'py>, ev: &TraceEvent) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seq", ev.seq)?;
    d.set_item("ts", ev.timestamp_ns)?;
    d.set_item("kind", ev.kind.name())?;
    d.set_item("comm", &ev.comm_id)?;
    d.set_item("nranks", ev.n_ranks)?;
    d.set_item("rank", ev.rank)?;
    d.set_item("dev", ev.device)?;
    if let Some(c) = ev.collective {
        d.set_item("coll", c.name())?;
    }
    if let Some(a) = ev.algorithm {
        d.set_item("algo", a.name())?;
    }
    if let Some(r) = ev.root {
        d.set_item("root", r)?;
    }
    if let Some(p) = ev.peer {
        d.set_item("peer", p)?;
    }
    if let Some(c) = ev.count {
        d.set_item("count", c)?;
    }
    if let Some(t) = ev.dtype {
        d.set_item("dtype", t.name())?;
    }
    if let Some(k) = ev.copy_kind {
        d.set_item("ckind", k.name())?;
    }
    if let Some(s) = ev.copy_src {
        d.set_item("src", endpoint_label(s))?;
    }
    if let Some(s) = ev.copy_dst {
        d.set_item("dst", endpoint_label(s))?;
    }
    if let Some(b) = ev.bytes {
        d.set_item("bytes", b)?;
    }
    Ok(d)
}

/// Parses JSONL trace text into a list of dicts.
#[pyfunction]
fn parse_trace<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyList>> {
    let events = comscribe::trace::parse_trace_str(text).map_err(value_err)?;
    let list = PyList::empty(py);
    for ev in &events {
        list.append(event_dict(py, ev)?)?;
    }
    Ok(list)
}

/// Directed byte matrix with host at index 0 and GPU g at g + 1.
#[pyclass(name = "CommMatrix", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCommMatrix {
    inner: CommMatrix,
}

#[pymethods]
impl PyCommMatrix {
    #[new]
    #[pyo3(signature = (gpus, cells, aggregator = false))]
    fn new(gpus: u32, cells: Vec<Vec<u64>>, aggregator: bool) -> PyResult<Self> {
        Ok(PyCommMatrix {
            inner: CommMatrix::from_rows(gpus, aggregator, &cells).map_err(value_err)?,
        })
    }

    #[getter]
    fn gpus(&self) -> u32 {
        self.inner.gpus()
    }

    #[getter]
    fn aggregator(&self) -> bool {
        self.inner.has_aggregator()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels()
    }

    #[getter]
    fn cells(&self) -> Vec<Vec<u64>> {
        self.inner.rows()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<u64> {
        if row >= self.inner.dim() || col >= self.inner.dim() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(row, col))
    }

    fn total(&self) -> u64 {
        self.inner.total()
    }

    fn symmetrized(&self) -> PyResult<Self> {
        Ok(PyCommMatrix {
            inner: self.inner.symmetrized().map_err(value_err)?,
        })
    }

    fn to_csv(&self) -> String {
        report::matrix_to_csv(&self.inner)
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(PyCommMatrix {
            inner: report::matrix_from_csv(text).map_err(value_err)?,
        })
    }

    #[pyo3(signature = (scale = "log", cell_px = 40))]
    fn to_svg(&self, scale: &str, cell_px: u32) -> PyResult<String> {
        let spec = RenderSpec {
            scale: scale.parse::<Scale>().map_err(value_err)?,
            cell_px,
            ..RenderSpec::default()
        };
        report::render_heatmap(&self.inner, &spec).map_err(value_err)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "CommMatrix(gpus={}, total={})",
            self.inner.gpus(),
            self.inner.total()
        )
    }
}

#[pyclass(name = "Analysis", frozen)]
struct PyAnalysis {
    #[pyo3(get)]
    gpus: u32,
    #[pyo3(get)]
    combined: PyCommMatrix,
    #[pyo3(get)]
    per_primitive: BTreeMap<String, PyCommMatrix>,
    /// type key -> (calls, payload_bytes, wire_bytes)
    #[pyo3(get)]
    stats: BTreeMap<String, (u64, u64, u64)>,
    #[pyo3(get)]
    instances: usize,
    #[pyo3(get)]
    unmatched_events: usize,
    #[pyo3(get)]
    diagnostics: Vec<String>,
}

/// Analyzes one trace text, or several as one run.
#[pyfunction]
#[pyo3(signature = (traces, gpus = None, tree_threshold = DEFAULT_TREE_THRESHOLD, ring = None))]
fn analyze(
    traces: Vec<String>,
    gpus: Option<u32>,
    tree_threshold: u64,
    ring: Option<Vec<u32>>,
) -> PyResult<PyAnalysis> {
    let model = ModelConfig {
        tree_threshold,
        default_ring: ring_order(ring)?,
        ..ModelConfig::default()
    };
    let a = report::analyze_texts(&traces, &report::AnalyzeOptions { model, gpus })
        .map_err(value_err)?;
    Ok(PyAnalysis {
        gpus: a.gpus,
        combined: PyCommMatrix { inner: a.combined },
        per_primitive: a
            .per_primitive
            .into_iter()
            .map(|(t, m)| (t.key().to_string(), PyCommMatrix { inner: m }))
            .collect(),
        stats: a
            .stats
            .rows
            .iter()
            .map(|(t, s)| {
                (
                    t.key().to_string(),
                    (s.calls, s.payload_bytes, s.wire_bytes),
                )
            })
            .collect(),
        instances: a.instances,
        unmatched_events: a.unmatched_events,
        diagnostics: a.diagnostics.iter().map(ToString::to_string).collect(),
    })
}

/// Pairwise transfers `(src, dst, bytes)` of one synthetic collective with
/// rank r on GPU r.
#[pyfunction]
#[pyo3(signature = (collective, algo, ranks, nbytes, root = None, ring = None))]
fn decompose(
    collective: &str,
    algo: &str,
    ranks: u32,
    nbytes: u64,
    root: Option<u32>,
    ring: Option<Vec<u32>>,
) -> PyResult<Vec<(String, String, u64)>> {
    let collective: CollectiveKind = collective.parse().map_err(value_err)?;
    let algo: AlgorithmChoice = algo.parse().map_err(value_err)?;
    let inst = CollectiveInstance::synthetic(collective, algo, ranks, nbytes, root);
    let config = ModelConfig {
        default_ring: ring_order(ring)?,
        ..ModelConfig::default()
    };
    let dec = decompose_instance(&inst, &config).map_err(value_err)?;
    Ok(dec
        .transfers
        .iter()
        .map(|t| (endpoint_label(t.src), endpoint_label(t.dst), t.bytes))
        .collect())
}

/// Model vs step-simulator check; returns a dict with per-rank totals,
/// the check results and the printable report.
#[pyfunction]
#[pyo3(signature = (collective, algo, ranks, nbytes, root = None, ring = None))]
fn verify<'py>(
    py: Python<'py>,
    collective: &str,
    algo: &str,
    ranks: u32,
    nbytes: u64,
    root: Option<u32>,
    ring: Option<Vec<u32>>,
) -> PyResult<Bound<'py, PyDict>> {
    let collective: CollectiveKind = collective.parse().map_err(value_err)?;
    let algo: AlgorithmKind = algo.parse().map_err(value_err)?;
    let r = report::verify(collective, algo, ranks, nbytes, root, ring_order(ring)?)
        .map_err(value_err)?;
    let pairs = |v: &[comscribe::decompose::Traffic]| -> Vec<(u64, u64)> {
        v.iter().map(|t| (t.sent, t.recv)).collect()
    };
    let d = PyDict::new(py);
    d.set_item("passed", r.passed())?;
    d.set_item("model", pairs(&r.model))?;
    d.set_item("oracle", r.oracle.as_deref().map(pairs))?;
    d.set_item("expected", r.expected.as_ref().map(|e| pairs(&e.per_rank)))?;
    d.set_item("steps", r.oracle_steps)?;
    d.set_item("checks", r.checks.clone())?;
    d.set_item("report", r.to_string())?;
    Ok(d)
}

/// Parent lists of the two trees (None marks the root).
#[pyfunction]
fn double_binary_tree(ranks: u32) -> (Vec<Option<u32>>, Vec<Option<u32>>) {
    let [a, b] = build_double_binary_tree(ranks).trees;
    (a.parent, b.parent)
}

/// Synthetic training trace as JSONL text.
#[pyfunction]
#[pyo3(signature = (preset, gpus = 8, seed = 0, scale = None))]
fn generate(preset: &str, gpus: u32, seed: u64, scale: Option<f64>) -> PyResult<String> {
    let (cfg, aux) = match preset {
        "resnet-like" => (resnet_like_preset(gpus), AuxPlan::default()),
        "gnmt-like" => gnmt_like_preset_scaled(
            gpus,
            scale.unwrap_or(comscribe::workload::GNMT_DEFAULT_SCALE),
        ),
        other => return Err(PyValueError::new_err(format!("unknown preset `{other}`"))),
    };
    let events = generate_workload(&cfg, &aux, seed).map_err(value_err)?;
    comscribe::trace::write_trace_string(&events).map_err(value_err)
}

#[pymodule]
fn comscribe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCommMatrix>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_function(wrap_pyfunction!(parse_trace, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(double_binary_tree, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
