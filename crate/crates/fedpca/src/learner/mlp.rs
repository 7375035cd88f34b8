//! Two-layer perceptron (ReLU hidden layer, softmax output, inverted
//! dropout) trained with mini-batch SGD plus momentum. Parameters live in a
//! flat vector laid out as [W1, b1, W2, b2] so the federated layer can treat
//! a model as an opaque real vector.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::Dataset;
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Hidden-layer dropout rate at training time (inverted scaling).
    pub dropout: f64,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden < 1 {
            return Err(Error::Config("mlp needs at least 1 hidden unit".into()));
        }
        if self.input_dim < 1 || self.classes < 2 {
            return Err(Error::Config(
                "mlp needs a positive input dim and at least 2 classes".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Total number of weights and biases.
pub fn param_count(cfg: &MlpConfig) -> usize {
    cfg.input_dim * cfg.hidden + cfg.hidden + cfg.hidden * cfg.classes + cfg.classes
}

/// Scaled uniform init with fan-in scaling; biases start at zero.
pub fn init_params(cfg: &MlpConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, &[]);
    let mut params = vec![0.0; param_count(cfg)];
    let bound1 = 1.0 / (cfg.input_dim as f64).sqrt();
    for p in params.iter_mut().take(cfg.input_dim * cfg.hidden) {
        *p = rng.random_range(-bound1..bound1);
    }
    let w2_start = cfg.input_dim * cfg.hidden + cfg.hidden;
    let bound2 = 1.0 / (cfg.hidden as f64).sqrt();
    for p in params
        .iter_mut()
        .skip(w2_start)
        .take(cfg.hidden * cfg.classes)
    {
        *p = rng.random_range(-bound2..bound2);
    }
    Ok(params)
}

struct Views<'a> {
    w1: ArrayView2<'a, f64>,
    b1: &'a [f64],
    w2: ArrayView2<'a, f64>,
    b2: &'a [f64],
}

fn split_params<'a>(params: &'a [f64], cfg: &MlpConfig) -> Result<Views<'a>> {
    let expected = param_count(cfg);
    if params.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: params.len(),
            context: "mlp parameter vector",
        });
    }
    let n1 = cfg.input_dim * cfg.hidden;
    let n2 = n1 + cfg.hidden;
    let n3 = n2 + cfg.hidden * cfg.classes;
    Ok(Views {
        w1: ArrayView2::from_shape((cfg.input_dim, cfg.hidden), &params[..n1]).unwrap(),
        b1: &params[n1..n2],
        w2: ArrayView2::from_shape((cfg.hidden, cfg.classes), &params[n2..n3]).unwrap(),
        b2: &params[n3..],
    })
}

fn batch_matrix(data: &Dataset, rows: &[usize]) -> Array2<f64> {
    let dim = data.dim();
    let mut x = Array2::zeros((rows.len(), dim));
    for (r, &row) in rows.iter().enumerate() {
        for (c, &v) in data.feature(row).iter().enumerate() {
            x[[r, c]] = v as f64;
        }
    }
    x
}

/// Cross-entropy loss and gradient for one batch. `dropout_mask`, when
/// present, is the keep/drop pattern for the hidden activations (row-major
/// batch x hidden, entries 0 or 1) and is applied with inverted scaling.
pub fn loss_and_gradient(
    params: &[f64],
    cfg: &MlpConfig,
    x: &Array2<f64>,
    labels: &[u8],
    dropout_mask: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let v = split_params(params, cfg)?;
    let batch = x.nrows();
    if labels.len() != batch {
        return Err(Error::LengthMismatch {
            expected: batch,
            actual: labels.len(),
            context: "batch labels",
        });
    }
    if x.ncols() != cfg.input_dim {
        return Err(Error::LengthMismatch {
            expected: cfg.input_dim,
            actual: x.ncols(),
            context: "batch feature width",
        });
    }

    let b1 = Array1::from(v.b1.to_vec());
    let b2 = Array1::from(v.b2.to_vec());
    let z1 = x.dot(&v.w1) + &b1;
    let a1 = z1.mapv(|z| z.max(0.0));
    let keep = 1.0 - cfg.dropout;
    let h = match dropout_mask {
        Some(mask) => {
            if mask.len() != batch * cfg.hidden {
                return Err(Error::LengthMismatch {
                    expected: batch * cfg.hidden,
                    actual: mask.len(),
                    context: "dropout mask",
                });
            }
            let m = ArrayView2::from_shape((batch, cfg.hidden), mask).unwrap();
            (&a1 * &m) / keep
        }
        None => a1.clone(),
    };
    let z2 = h.dot(&v.w2) + &b2;

    // Row-wise softmax with max subtraction.
    let mut probs = z2;
    let mut loss = 0.0;
    for (r, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
        let label = labels[r] as usize;
        if label >= cfg.classes {
            return Err(Error::Dataset(format!(
                "label {label} outside class count {}",
                cfg.classes
            )));
        }
        loss -= row[label].max(1e-300).ln();
    }
    loss /= batch as f64;

    // Backward pass.
    let mut dz2 = probs;
    for (r, mut row) in dz2.axis_iter_mut(Axis(0)).enumerate() {
        row[labels[r] as usize] -= 1.0;
    }
    dz2.mapv_inplace(|v| v / batch as f64);

    let g_w2 = h.t().dot(&dz2);
    let g_b2 = dz2.sum_axis(Axis(0));
    let mut dh = dz2.dot(&v.w2.t());
    if let Some(mask) = dropout_mask {
        let m = ArrayView2::from_shape((batch, cfg.hidden), mask).unwrap();
        dh = (&dh * &m) / keep;
    }
    let dz1 = &dh * &z1.mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
    let g_w1 = x.t().dot(&dz1);
    let g_b1 = dz1.sum_axis(Axis(0));

    let mut grad = Vec::with_capacity(params.len());
    grad.extend(g_w1.iter());
    grad.extend(g_b1.iter());
    grad.extend(g_w2.iter());
    grad.extend(g_b2.iter());
    Ok((loss, grad))
}

/// Run local epochs of mini-batch SGD with momentum and return the
/// trained-minus-initial parameter delta.
pub fn local_train<R: Rng + ?Sized>(
    initial: &[f64],
    cfg: &MlpConfig,
    sgd: &SgdConfig,
    data: &Dataset,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    sgd.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    if data.dim() != cfg.input_dim {
        return Err(Error::LengthMismatch {
            expected: cfg.input_dim,
            actual: data.dim(),
            context: "dataset feature width",
        });
    }
    let mut params = initial.to_vec();
    split_params(&params, cfg)?;
    let mut velocity = vec![0.0; params.len()];
    let mut indices: Vec<usize> = (0..data.len()).collect();
    for _ in 0..sgd.local_epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(sgd.batch_size) {
            let x = batch_matrix(data, chunk);
            let labels: Vec<u8> = chunk.iter().map(|&i| data.label(i)).collect();
            let mask = if cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                Some(
                    (0..chunk.len() * cfg.hidden)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 } else { 0.0 })
                        .collect::<Vec<f64>>(),
                )
            } else {
                None
            };
            let (_, grad) = loss_and_gradient(&params, cfg, &x, &labels, mask.as_deref())?;
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                *v = sgd.momentum * *v + g;
                *p -= sgd.learning_rate * *v;
            }
        }
    }
    Ok(params
        .iter()
        .zip(initial.iter())
        .map(|(p, i)| p - i)
        .collect())
}

fn forward_logits(params: &[f64], cfg: &MlpConfig, data: &Dataset) -> Result<Array2<f64>> {
    cfg.validate()?;
    let v = split_params(params, cfg)?;
    if data.dim() != cfg.input_dim {
        return Err(Error::LengthMismatch {
            expected: cfg.input_dim,
            actual: data.dim(),
            context: "dataset feature width",
        });
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let b1 = Array1::from(v.b1.to_vec());
    let b2 = Array1::from(v.b2.to_vec());
    let mut logits = Array2::zeros((data.len(), cfg.classes));
    // Chunked forward keeps the activation working set small at MNIST scale.
    for chunk in rows.chunks(512) {
        let x = batch_matrix(data, chunk);
        let a1 = (x.dot(&v.w1) + &b1).mapv(|z| z.max(0.0));
        let z2 = a1.dot(&v.w2) + &b2;
        for (r, &row) in chunk.iter().enumerate() {
            for c in 0..cfg.classes {
                logits[[row, c]] = z2[[r, c]];
            }
        }
    }
    Ok(logits)
}

/// Fraction of argmax-correct predictions; dropout disabled.
pub fn evaluate(params: &[f64], cfg: &MlpConfig, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty test set".into()));
    }
    let logits = forward_logits(params, cfg, test)?;
    let mut correct = 0usize;
    for (r, row) in logits.axis_iter(Axis(0)).enumerate() {
        let mut best = 0usize;
        for c in 1..cfg.classes {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == test.label(r) as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Softmax probability of class 1 for every row; binary models only.
pub fn positive_scores(params: &[f64], cfg: &MlpConfig, data: &Dataset) -> Result<Vec<f64>> {
    if cfg.classes != 2 {
        return Err(Error::Config(format!(
            "positive_scores needs a binary model, got {} classes",
            cfg.classes
        )));
    }
    if data.is_empty() {
        return Err(Error::Dataset("cannot score an empty dataset".into()));
    }
    let logits = forward_logits(params, cfg, data)?;
    Ok(logits
        .axis_iter(Axis(0))
        .map(|row| {
            let m = row[0].max(row[1]);
            let e0 = (row[0] - m).exp();
            let e1 = (row[1] - m).exp();
            e1 / (e0 + e1)
        })
        .collect())
}
