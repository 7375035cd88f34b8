//! Client behaviors: honest training, free riding (random parameters without
//! training), noisy privacy-preserving uploads, and strategy-matrix
//! misreporting layered on top of honest training.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{local_train, Dataset, MlpConfig, SgdConfig};
use crate::quantize::{dequantize, quantize, QuantizerConfig};
use crate::strategy::{apply_strategy, StrategyMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClientBehavior {
    /// Trains locally and reports the true update.
    Honest,
    /// Uploads i.i.d. Gaussian(0, sigma^2) parameters without training.
    FreeRider { sigma: f64 },
    /// Trains locally then adds Gaussian(0, sigma^2) noise per coordinate.
    Noisy { sigma: f64 },
    /// Trains locally, quantizes, misreports through a strategy matrix, and
    /// uploads the dequantized result.
    Strategy { matrix: StrategyMatrix },
}

impl ClientBehavior {
    pub fn tag(&self) -> &'static str {
        match self {
            ClientBehavior::Honest => "honest",
            ClientBehavior::FreeRider { .. } => "free_rider",
            ClientBehavior::Noisy { .. } => "noisy",
            ClientBehavior::Strategy { .. } => "strategy",
        }
    }

    pub fn needs_data(&self) -> bool {
        !matches!(self, ClientBehavior::FreeRider { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ClientBehavior::FreeRider { sigma } | ClientBehavior::Noisy { sigma } => {
                if !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::Config(format!(
                        "behavior sigma must be nonnegative, got {sigma}"
                    )));
                }
            }
            ClientBehavior::Honest | ClientBehavior::Strategy { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: u64,
    pub behavior: ClientBehavior,
    /// Data size reported to the server; may differ from the true size.
    pub reported_size: u64,
}

impl ClientSpec {
    pub fn validate(&self) -> Result<()> {
        if self.reported_size < 1 {
            return Err(Error::Config(format!(
                "client {} reported_size must be at least 1",
                self.id
            )));
        }
        self.behavior.validate()
    }
}

/// Shared per-round training configuration.
pub struct TrainingContext<'a> {
    pub mlp: &'a MlpConfig,
    pub sgd: &'a SgdConfig,
    pub quantizer: &'a QuantizerConfig,
}

/// Produce the update a client uploads for the current global model.
/// Free riders need no data; every other behavior trains on `data`.
pub fn produce_update<R: Rng + ?Sized>(
    spec: &ClientSpec,
    model_params: &[f64],
    ctx: &TrainingContext,
    data: Option<&Dataset>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    spec.validate()?;
    match &spec.behavior {
        ClientBehavior::FreeRider { sigma } => {
            let normal = Normal::new(0.0, *sigma)
                .map_err(|e| Error::Config(format!("free rider noise: {e}")))?;
            Ok((0..model_params.len())
                .map(|_| normal.sample(rng))
                .collect())
        }
        behavior => {
            let data = data.ok_or_else(|| {
                Error::Config(format!(
                    "client {} ({}) requires local data",
                    spec.id,
                    behavior.tag()
                ))
            })?;
            let update = local_train(model_params, ctx.mlp, ctx.sgd, data, rng)?;
            match behavior {
                ClientBehavior::Honest => Ok(update),
                ClientBehavior::Noisy { sigma } => {
                    if *sigma == 0.0 {
                        return Ok(update);
                    }
                    let normal = Normal::new(0.0, *sigma)
                        .map_err(|e| Error::Config(format!("noisy client noise: {e}")))?;
                    Ok(update.into_iter().map(|u| u + normal.sample(rng)).collect())
                }
                ClientBehavior::Strategy { matrix } => {
                    let signals = quantize(&update, ctx.quantizer, rng)?;
                    let reported = apply_strategy(&signals, matrix, rng)?;
                    dequantize(&reported, ctx.quantizer)
                }
                ClientBehavior::FreeRider { .. } => unreachable!(),
            }
        }
    }
}
