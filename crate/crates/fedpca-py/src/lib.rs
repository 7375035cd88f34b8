//! Python bindings for the contribution-scoring and aggregation primitives.
//!
//! Vectors cross the boundary as plain Python lists; signals are 1-based
//! integers in `{1..levels}`, matching the Rust API.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fedpca::aggregate::{
    fedavg_weights as fedavg_weights_fn, fedpca_weights as fedpca_weights_fn,
    weighted_mean_aggregate, weighted_median_aggregate, AggregationWeights,
};
use fedpca::experiment::{run_experiment, ExperimentConfig};
use fedpca::incentive::{reward as reward_fn, RewardScheme};
use fedpca::quantize::{
    dequantize as dequantize_fn, quantize as quantize_fn, QuantizerConfig, RoundingMode,
    SignalVector,
};
use fedpca::scoring::{
    compute_delta as compute_delta_fn, pca_score_keyed, required_sample_size as sample_size_fn,
    sign_matrix, DeltaMatrix, PcaConfig,
};
use fedpca::seeding::rng_for;
use fedpca::stats::{auc as auc_fn, ks_two_sample as ks_fn, spearman as spearman_fn};
use fedpca::strategy::{
    apply_strategy as apply_strategy_fn, is_uninformed as is_uninformed_fn, StrategyMatrix,
};

fn err(e: fedpca::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<RoundingMode> {
    match mode {
        "stochastic" => Ok(RoundingMode::Stochastic),
        "nearest" => Ok(RoundingMode::Nearest),
        other => Err(PyValueError::new_err(format!(
            "unknown rounding mode '{other}' (stochastic, nearest)"
        ))),
    }
}

fn signal_vector(signals: Vec<u16>, levels: u16) -> PyResult<SignalVector> {
    SignalVector::new(signals, levels).map_err(err)
}

fn delta_rows(m: &DeltaMatrix) -> Vec<Vec<f64>> {
    let h = m.levels() as usize;
    (0..h)
        .map(|a| m.entries()[a * h..(a + 1) * h].to_vec())
        .collect()
}

/// Quantize a continuous update onto `levels` grid points over
/// `[-x_max, x_max]`; returns 1-based signals.
#[pyfunction]
#[pyo3(signature = (update, levels, x_max, mode="stochastic", seed=0))]
fn quantize(
    update: Vec<f64>,
    levels: u16,
    x_max: f64,
    mode: &str,
    seed: u64,
) -> PyResult<Vec<u16>> {
    let cfg = QuantizerConfig::new(levels, x_max, parse_mode(mode)?).map_err(err)?;
    let mut rng = rng_for(seed, &[]);
    Ok(quantize_fn(&update, &cfg, &mut rng)
        .map_err(err)?
        .signals()
        .to_vec())
}

/// Map signals back to their grid values.
#[pyfunction]
fn dequantize(signals: Vec<u16>, levels: u16, x_max: f64) -> PyResult<Vec<f64>> {
    let cfg = QuantizerConfig::new(levels, x_max, RoundingMode::Stochastic).map_err(err)?;
    let sig = signal_vector(signals, levels)?;
    dequantize_fn(&sig, &cfg).map_err(err)
}

/// Estimate the delta matrices of a report pair on two disjoint parameter
/// index sets; returns `(delta_a, delta_b)` as nested lists.
#[pyfunction]
fn compute_delta(
    report_i: Vec<u16>,
    report_j: Vec<u16>,
    levels: u16,
    set_a: Vec<usize>,
    set_b: Vec<usize>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let i = signal_vector(report_i, levels)?;
    let j = signal_vector(report_j, levels)?;
    let (da, db) = compute_delta_fn(&i, &j, &set_a, &set_b).map_err(err)?;
    Ok((delta_rows(&da), delta_rows(&db)))
}

/// Entrywise strict-positivity indicator of a square delta matrix.
#[pyfunction]
fn sign_of_delta(delta: Vec<Vec<f64>>) -> PyResult<Vec<Vec<u32>>> {
    let h = delta.len();
    let mut entries = Vec::with_capacity(h * h);
    for row in &delta {
        if row.len() != h {
            return Err(PyValueError::new_err("delta matrix must be square"));
        }
        entries.extend_from_slice(row);
    }
    let m = DeltaMatrix::from_entries(h as u16, entries, 0).map_err(err)?;
    let s = sign_matrix(&m);
    Ok((1..=h as u16)
        .map(|a| (1..=h as u16).map(|b| s.get(a, b) as u32).collect())
        .collect())
}

/// Pairwise-correlated-agreement contributions, one per client, in input
/// order. Reports are lists of 1-based signals of equal length.
#[pyfunction]
#[pyo3(signature = (reports, levels, peers=5, bonus_size=1000, min_penalty_pool=2, seed=0))]
fn pca_score(
    reports: Vec<Vec<u16>>,
    levels: u16,
    peers: usize,
    bonus_size: usize,
    min_penalty_pool: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let reports: Vec<SignalVector> = reports
        .into_iter()
        .map(|r| signal_vector(r, levels))
        .collect::<PyResult<_>>()?;
    let keys: Vec<u64> = (0..reports.len() as u64).collect();
    let cfg = PcaConfig {
        peers,
        bonus_size,
        min_penalty_pool,
    };
    Ok(pca_score_keyed(&reports, &keys, &cfg, seed)
        .map_err(err)?
        .into_iter()
        .map(|s| s.q)
        .collect())
}

/// Recommended per-half sample count for epsilon-accurate delta estimation.
#[pyfunction]
fn required_sample_size(levels: u16, epsilon: f64, delta: f64) -> PyResult<u64> {
    sample_size_fn(levels, epsilon, delta).map_err(err)
}

/// Size-proportional aggregation weights.
#[pyfunction]
#[pyo3(name = "fedavg_weights")]
fn fedavg_weights(reported_sizes: Vec<u64>) -> PyResult<Vec<f64>> {
    Ok(fedavg_weights_fn(&reported_sizes)
        .map_err(err)?
        .as_slice()
        .to_vec())
}

/// Contribution-softmax aggregation weights.
#[pyfunction]
#[pyo3(name = "fedpca_weights")]
fn fedpca_weights(scores: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    Ok(fedpca_weights_fn(&scores, alpha)
        .map_err(err)?
        .as_slice()
        .to_vec())
}

fn weights_from(weights: Vec<f64>) -> PyResult<AggregationWeights> {
    AggregationWeights::new(weights).map_err(err)
}

/// Coordinatewise weighted mean of per-client updates.
#[pyfunction]
fn weighted_mean(updates: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Vec<f64>> {
    weighted_mean_aggregate(&updates, &weights_from(weights)?).map_err(err)
}

/// Per-coordinate lower weighted median of per-client updates.
#[pyfunction]
fn weighted_median(updates: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Vec<f64>> {
    weighted_median_aggregate(&updates, &weights_from(weights)?).map_err(err)
}

/// Sample reported signals through a column-stochastic strategy matrix
/// (rows: reported level, columns: true level).
#[pyfunction]
#[pyo3(signature = (signals, matrix, seed=0))]
fn apply_strategy(signals: Vec<u16>, matrix: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<u16>> {
    let f = StrategyMatrix::from_rows(&matrix).map_err(err)?;
    let sig = signal_vector(signals, f.levels())?;
    let mut rng = rng_for(seed, &[]);
    Ok(apply_strategy_fn(&sig, &f, &mut rng)
        .map_err(err)?
        .signals()
        .to_vec())
}

/// True iff the strategy ignores the true signal (every row constant).
#[pyfunction]
#[pyo3(signature = (matrix, tol=1e-9))]
fn is_uninformed(matrix: Vec<Vec<f64>>, tol: f64) -> PyResult<bool> {
    let f = StrategyMatrix::from_rows(&matrix).map_err(err)?;
    Ok(is_uninformed_fn(&f, tol))
}

/// Probability that a random positive outranks a random negative.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    auc_fn(&scores, &labels).map_err(err)
}

/// Spearman rank correlation; returns `(statistic, p_value)`.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    let v = spearman_fn(&x, &y).map_err(err)?;
    Ok((v.statistic, v.p_value))
}

/// Two-sample Kolmogorov-Smirnov test; returns `(statistic, p_value)`.
#[pyfunction]
fn ks_two_sample(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    let v = ks_fn(&x, &y).map_err(err)?;
    Ok((v.statistic, v.p_value))
}

/// Reward for a contribution under a scheme: "linear" (a*q + b) or
/// "exponential" (a*exp(q) + b).
#[pyfunction]
fn reward(q: f64, kind: &str, a: f64, b: f64) -> PyResult<f64> {
    let scheme = match kind {
        "linear" => RewardScheme::Linear { a, b },
        "exponential" => RewardScheme::Exponential { a, b },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown reward scheme '{other}' (linear, exponential)"
            )))
        }
    };
    reward_fn(q, &scheme).map_err(err)
}

/// Run a full experiment from a TOML config string; returns a JSON string
/// holding the round records and the run summary.
#[pyfunction]
fn run_experiment_toml(config: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml_str(config).map_err(err)?;
    let out = run_experiment(&cfg).map_err(err)?;
    let value = serde_json::json!({
        "records": out.records,
        "summary": out.summary,
    });
    serde_json::to_string(&value).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn fedpca_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(compute_delta, m)?)?;
    m.add_function(wrap_pyfunction!(sign_of_delta, m)?)?;
    m.add_function(wrap_pyfunction!(pca_score, m)?)?;
    m.add_function(wrap_pyfunction!(required_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(fedavg_weights, m)?)?;
    m.add_function(wrap_pyfunction!(fedpca_weights, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_mean, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_median, m)?)?;
    m.add_function(wrap_pyfunction!(apply_strategy, m)?)?;
    m.add_function(wrap_pyfunction!(is_uninformed, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_toml, m)?)?;
    Ok(())
}
