//! Aggregation rules: size-weighted averaging, contribution-softmax
//! weighting, and weighted coordinate-median variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Cumulative-weight comparisons tolerate representation error in weights
/// like 1/6 so ties resolve as they would in exact arithmetic.
const MEDIAN_CUM_TOL: f64 = 1e-9;

/// Selectable aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    Fedavg,
    Fedpca,
    Med,
    Medpca,
}

impl AggregationRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            AggregationRule::Fedavg => "fedavg",
            AggregationRule::Fedpca => "fedpca",
            AggregationRule::Med => "med",
            AggregationRule::Medpca => "medpca",
        }
    }
}

/// Normalized per-client aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    weights: Vec<f64>,
}

impl AggregationWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("weights"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Config("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Config(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("weights"));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// The shared model as held by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    parameters: Vec<f64>,
    round: u64,
}

impl GlobalModel {
    pub fn new(parameters: Vec<f64>) -> Result<Self> {
        if parameters.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        Ok(Self {
            parameters,
            round: 0,
        })
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }
}

/// Classic size-proportional weights: `w_i = n_i / sum(n_j)`.
pub fn fedavg_weights(reported_sizes: &[u64]) -> Result<AggregationWeights> {
    if reported_sizes.is_empty() {
        return Err(Error::EmptyInput("reported sizes"));
    }
    if reported_sizes.iter().any(|&n| n == 0) {
        return Err(Error::Config("reported data sizes must be positive".into()));
    }
    let total: u64 = reported_sizes.iter().sum();
    Ok(AggregationWeights {
        weights: reported_sizes
            .iter()
            .map(|&n| n as f64 / total as f64)
            .collect(),
    })
}

/// Contribution softmax: `w_i = exp(alpha * q_i) / sum_j exp(alpha * q_j)`,
/// computed with max subtraction. `alpha = 0` yields uniform weights.
pub fn fedpca_weights(scores: &[f64], alpha: f64) -> Result<AggregationWeights> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    if scores.iter().any(|q| !q.is_finite()) || !alpha.is_finite() {
        return Err(Error::Config("scores and alpha must be finite".into()));
    }
    let m = scores
        .iter()
        .map(|&q| alpha * q)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&q| (alpha * q - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(AggregationWeights {
        weights: exps.into_iter().map(|e| e / total).collect(),
    })
}

fn check_updates(updates: &[Vec<f64>], w: &AggregationWeights) -> Result<usize> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("updates"));
    }
    if updates.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: updates.len(),
            context: "updates vs weights",
        });
    }
    let dim = updates[0].len();
    for u in updates {
        if u.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: u.len(),
                context: "update length",
            });
        }
    }
    Ok(dim)
}

/// Coordinatewise weighted sum.
pub fn weighted_mean_aggregate(
    updates: &[Vec<f64>],
    w: &AggregationWeights,
) -> Result<Vec<f64>> {
    let dim = check_updates(updates, w)?;
    let mut out = vec![0.0; dim];
    for (u, &wi) in updates.iter().zip(w.as_slice()) {
        for (o, &v) in out.iter_mut().zip(u.iter()) {
            *o += wi * v;
        }
    }
    Ok(out)
}

/// Per coordinate, the smallest client value whose cumulative weight reaches
/// one half (lower weighted median). Uniform weights over an odd client count
/// reduce to the ordinary median.
pub fn weighted_median_aggregate(
    updates: &[Vec<f64>],
    w: &AggregationWeights,
) -> Result<Vec<f64>> {
    let dim = check_updates(updates, w)?;
    let n = updates.len();
    let mut out = vec![0.0; dim];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (p, o) in out.iter_mut().enumerate() {
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| {
            updates[a][p]
                .partial_cmp(&updates[b][p])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut cum = 0.0;
        let mut chosen = updates[order[n - 1]][p];
        for &c in &order {
            cum += w.as_slice()[c];
            if cum >= 0.5 - MEDIAN_CUM_TOL {
                chosen = updates[c][p];
                break;
            }
        }
        *o = chosen;
    }
    Ok(out)
}

/// Add an aggregated update to the model and advance the round counter.
pub fn apply_update(model: &GlobalModel, aggregated: &[f64]) -> Result<GlobalModel> {
    if aggregated.len() != model.len() {
        return Err(Error::LengthMismatch {
            expected: model.len(),
            actual: aggregated.len(),
            context: "aggregated update",
        });
    }
    Ok(GlobalModel {
        parameters: model
            .parameters
            .iter()
            .zip(aggregated.iter())
            .map(|(m, x)| m + x)
            .collect(),
        round: model.round + 1,
    })
}
