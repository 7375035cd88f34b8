//! Reward schemes over contribution scores and an empirical audit of
//! informed incentive compatibility: one deviating client plays a battery of
//! strategies against truthful peers, and the audit reports whether truthful
//! reporting strictly beats every uninformed strategy and how close the best
//! informed strategy comes.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clients::ClientBehavior;
use crate::error::{Error, Result};
use crate::quantize::{quantize, QuantizerConfig, SignalVector};
use crate::scoring::{pca_score_keyed, PcaConfig};
use crate::seeding::{derive_seed, tag};
use crate::strategy::{apply_strategy, is_uninformed};

/// Positive, strictly increasing map from contribution to reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardScheme {
    /// `a * q + b`
    Linear { a: f64, b: f64 },
    /// `a * exp(q) + b`
    Exponential { a: f64, b: f64 },
}

impl RewardScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RewardScheme::Linear { a, b } => {
                if !(a > 0.0) {
                    return Err(Error::Config(format!(
                        "linear reward slope must be positive, got {a}"
                    )));
                }
                // Positive at the lowest contribution q = -1.
                if !(b - a > 0.0) {
                    return Err(Error::Config(format!(
                        "linear reward must stay positive on [-1,1]: a={a}, b={b}"
                    )));
                }
            }
            RewardScheme::Exponential { a, b } => {
                if !(a > 0.0) {
                    return Err(Error::Config(format!(
                        "exponential reward scale must be positive, got {a}"
                    )));
                }
                if !(a * (-1.0f64).exp() + b > 0.0) {
                    return Err(Error::Config(format!(
                        "exponential reward must stay positive on [-1,1]: a={a}, b={b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Evaluate a reward scheme at a contribution value.
pub fn reward(q: f64, scheme: &RewardScheme) -> Result<f64> {
    scheme.validate()?;
    if !q.is_finite() {
        return Err(Error::Config(format!("contribution must be finite, got {q}")));
    }
    Ok(match *scheme {
        RewardScheme::Linear { a, b } => a * q + b,
        RewardScheme::Exponential { a, b } => a * q.exp() + b,
    })
}

/// Synthetic correlated signal population: a shared consensus update plus
/// per-client Gaussian noise, quantized for scoring. Honest clients are
/// correlated through the consensus; an uninformed reporter is not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPopulation {
    pub clients: usize,
    pub params: usize,
    /// Consensus values are uniform in `[-amplitude, amplitude]`.
    pub consensus_amplitude: f64,
    /// Std of each client's own deviation from consensus.
    pub client_noise: f64,
    pub quantizer: QuantizerConfig,
}

impl SignalPopulation {
    pub fn validate(&self) -> Result<()> {
        self.quantizer.validate()?;
        if self.clients < 2 {
            return Err(Error::InsufficientClients {
                needed: 2,
                actual: self.clients,
            });
        }
        if self.params < 4 {
            return Err(Error::Config(format!(
                "population needs at least 4 parameters, got {}",
                self.params
            )));
        }
        if !(self.consensus_amplitude > 0.0) || !(self.client_noise >= 0.0) {
            return Err(Error::Config(
                "population noise parameters must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Continuous per-client updates before quantization.
    pub fn continuous_updates<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let consensus: Vec<f64> = (0..self.params)
            .map(|_| rng.random_range(-self.consensus_amplitude..self.consensus_amplitude))
            .collect();
        let noise = Normal::new(0.0, self.client_noise)
            .map_err(|e| Error::Config(format!("population noise: {e}")))?;
        Ok((0..self.clients)
            .map(|_| consensus.iter().map(|&c| c + noise.sample(rng)).collect())
            .collect())
    }
}

/// Per-strategy audit statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyStats {
    pub label: String,
    /// "truthful", "informed", or "uninformed".
    pub kind: String,
    pub mean_q: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Outcome of an incentive-compatibility audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcAuditReport {
    pub schema_version: u32,
    pub trials: usize,
    pub truthful: StrategyStats,
    pub entries: Vec<StrategyStats>,
    /// True iff the truthful mean beats every uninformed mean by more than
    /// three combined standard errors.
    pub truthful_dominates_uninformed: bool,
    /// Smallest (truthful - uninformed) margin, in combined-SE units.
    pub uninformed_margin_se: f64,
    /// Largest informed-strategy advantage over truthful (negative when
    /// every informed strategy trails truthful).
    pub informed_gap: f64,
}

fn classify(behavior: &ClientBehavior) -> &'static str {
    match behavior {
        ClientBehavior::Honest => "truthful",
        ClientBehavior::FreeRider { .. } => "uninformed",
        ClientBehavior::Noisy { .. } => "informed",
        ClientBehavior::Strategy { matrix } => {
            if is_uninformed(matrix, 1e-9) {
                "uninformed"
            } else {
                "informed"
            }
        }
    }
}

struct Accumulator {
    sum: f64,
    sumsq: f64,
    n: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            sum: 0.0,
            sumsq: 0.0,
            n: 0,
        }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sumsq += v * v;
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn std_error(&self) -> f64 {
        let n = self.n as f64;
        let var = ((self.sumsq / n) - self.mean().powi(2)).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }
}

/// The deviator's reported signals for one trial.
fn deviator_signals<R: Rng + ?Sized>(
    behavior: &ClientBehavior,
    own_update: &[f64],
    qc: &QuantizerConfig,
    rng: &mut R,
) -> Result<SignalVector> {
    match behavior {
        ClientBehavior::Honest => quantize(own_update, qc, rng),
        ClientBehavior::FreeRider { sigma } => {
            let noise = Normal::new(0.0, *sigma)
                .map_err(|e| Error::Config(format!("free rider noise: {e}")))?;
            let fake: Vec<f64> = (0..own_update.len()).map(|_| noise.sample(rng)).collect();
            quantize(&fake, qc, rng)
        }
        ClientBehavior::Noisy { sigma } => {
            let noise = Normal::new(0.0, *sigma)
                .map_err(|e| Error::Config(format!("noisy deviation: {e}")))?;
            let noised: Vec<f64> = own_update.iter().map(|&u| u + noise.sample(rng)).collect();
            quantize(&noised, qc, rng)
        }
        ClientBehavior::Strategy { matrix } => {
            let truthful = quantize(own_update, qc, rng)?;
            apply_strategy(&truthful, matrix, rng)
        }
    }
}

/// Mean contribution of a single deviating client (client 0) over seeded
/// trials, one battery entry at a time, against truthful peers. Trials share
/// the population and scoring randomness across entries, so differences
/// between entries come from the deviation alone.
pub fn ic_audit<R: RngCore + ?Sized>(
    population: &SignalPopulation,
    pca: &PcaConfig,
    battery: &[(String, ClientBehavior)],
    trials: usize,
    rng: &mut R,
) -> Result<IcAuditReport> {
    population.validate()?;
    pca.validate()?;
    if trials < 30 {
        return Err(Error::Config(format!(
            "audit needs at least 30 trials, got {trials}"
        )));
    }
    if battery.is_empty() {
        return Err(Error::EmptyInput("strategy battery"));
    }
    for (_, b) in battery {
        b.validate()?;
    }
    if population.clients < pca.peers + 2 {
        return Err(Error::Config(format!(
            "population of {} clients cannot host a deviator plus {} peers \
             with a truthful majority",
            population.clients, pca.peers
        )));
    }
    let kinds: Vec<&'static str> = battery.iter().map(|(_, b)| classify(b)).collect();
    if !kinds.iter().any(|&k| k == "uninformed") {
        return Err(Error::Config(
            "battery needs at least one uninformed strategy".into(),
        ));
    }
    if !kinds.iter().any(|&k| k == "informed" || k == "truthful") {
        return Err(Error::Config(
            "battery needs at least one informed strategy".into(),
        ));
    }

    let master = rng.next_u64();
    let mut truthful_acc = Accumulator::new();
    let mut accs: Vec<Accumulator> = battery.iter().map(|_| Accumulator::new()).collect();
    let keys: Vec<u64> = (0..population.clients as u64).collect();

    for trial in 0..trials as u64 {
        let mut pop_rng =
            crate::seeding::rng_for(master, &[tag::AUDIT, trial, 0]);
        let updates = population.continuous_updates(&mut pop_rng)?;
        // Peers report truthfully.
        let mut reports: Vec<SignalVector> = Vec::with_capacity(population.clients);
        for u in &updates {
            reports.push(quantize(u, &population.quantizer, &mut pop_rng)?);
        }
        let score_seed = derive_seed(master, &[tag::AUDIT, trial, 1]);

        // Truthful baseline for client 0 (its own quantized update).
        let q = pca_score_keyed(&reports, &keys, pca, score_seed)?[0].q;
        truthful_acc.push(q);

        for (e, (_, behavior)) in battery.iter().enumerate() {
            let mut dev_rng =
                crate::seeding::rng_for(master, &[tag::AUDIT, trial, 2, e as u64]);
            let deviated = deviator_signals(
                behavior,
                &updates[0],
                &population.quantizer,
                &mut dev_rng,
            )?;
            let mut trial_reports = reports.clone();
            trial_reports[0] = deviated;
            let q = pca_score_keyed(&trial_reports, &keys, pca, score_seed)?[0].q;
            accs[e].push(q);
        }
    }

    let truthful = StrategyStats {
        label: "truthful".into(),
        kind: "truthful".into(),
        mean_q: truthful_acc.mean(),
        std_error: truthful_acc.std_error(),
        trials,
    };
    let entries: Vec<StrategyStats> = battery
        .iter()
        .zip(&accs)
        .zip(&kinds)
        .map(|(((label, _), acc), kind)| StrategyStats {
            label: label.clone(),
            kind: (*kind).into(),
            mean_q: acc.mean(),
            std_error: acc.std_error(),
            trials,
        })
        .collect();

    let mut margin = f64::INFINITY;
    for e in entries.iter().filter(|e| e.kind == "uninformed") {
        let combined = (truthful.std_error.powi(2) + e.std_error.powi(2)).sqrt();
        let m = (truthful.mean_q - e.mean_q) / combined.max(1e-300);
        margin = margin.min(m);
    }
    let informed_gap = entries
        .iter()
        .filter(|e| e.kind == "informed")
        .map(|e| e.mean_q - truthful.mean_q)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(IcAuditReport {
        schema_version: 1,
        trials,
        truthful,
        entries,
        truthful_dominates_uninformed: margin > 3.0,
        uninformed_margin_se: margin,
        informed_gap: if informed_gap.is_finite() {
            informed_gap
        } else {
            0.0
        },
    })
}

/// The default strategy battery: truthful identity, uniform-random reports,
/// a constant report, a level permutation, and Gaussian noise.
pub fn default_battery(levels: u16, noisy_sigma: f64) -> Vec<(String, ClientBehavior)> {
    use crate::strategy::StrategyMatrix;
    let mut perm: Vec<u16> = (1..=levels).collect();
    perm.rotate_left(1);
    vec![
        (
            "identity".into(),
            ClientBehavior::Strategy {
                matrix: StrategyMatrix::identity(levels),
            },
        ),
        (
            "uniform_random".into(),
            ClientBehavior::Strategy {
                matrix: StrategyMatrix::uniform(levels),
            },
        ),
        (
            "constant".into(),
            ClientBehavior::Strategy {
                matrix: StrategyMatrix::constant(levels, 1).expect("level 1 exists"),
            },
        ),
        (
            "level_permutation".into(),
            ClientBehavior::Strategy {
                matrix: StrategyMatrix::permutation(levels, &perm).expect("valid rotation"),
            },
        ),
        (
            "gaussian_noise".into(),
            ClientBehavior::Noisy { sigma: noisy_sigma },
        ),
    ]
}
