//! Experiment configuration: TOML-loadable description of the dataset,
//! client population, learner, quantizer, scorer, and aggregation rule.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::AggregationRule;
use crate::clients::{ClientBehavior, ClientSpec};
use crate::error::{Error, Result};
use crate::incentive::RewardScheme;
use crate::learner::{mnist_dataset, shard_partition, synth_dataset, Dataset};
use crate::quantize::{QuantizerConfig, RoundingMode};
use crate::scoring::PcaConfig;
use crate::seeding::{rng_for, tag};
use crate::strategy::StrategyMatrix;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "FEDPCA_DATA";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum DatasetConfig {
    /// MNIST from IDX files in `dir` (or `$FEDPCA_DATA`, or `data/mnist`).
    Mnist {
        dir: Option<PathBuf>,
        #[serde(default = "default_shards_per_client")]
        shards_per_client: usize,
    },
    /// Gaussian class clusters with a label-skew knob.
    Synthetic {
        #[serde(default = "default_synth_dims")]
        dims: usize,
        #[serde(default = "default_synth_classes")]
        classes: u16,
        #[serde(default = "default_heterogeneity")]
        heterogeneity: f64,
        #[serde(default = "default_samples_per_client")]
        samples_per_client: usize,
        #[serde(default = "default_test_size")]
        test_size: usize,
    },
}

fn default_shards_per_client() -> usize {
    2
}
fn default_synth_dims() -> usize {
    16
}
fn default_synth_classes() -> u16 {
    4
}
fn default_heterogeneity() -> f64 {
    0.7
}
fn default_samples_per_client() -> usize {
    200
}
fn default_test_size() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategistGroup {
    pub count: usize,
    /// Dense row-major strategy matrix; row r holds P(report r+1 | true a).
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub honest: usize,
    #[serde(default)]
    pub free_riders: usize,
    #[serde(default = "default_sigma1")]
    pub free_rider_sigma: f64,
    #[serde(default)]
    pub noisy: usize,
    #[serde(default = "default_sigma2")]
    pub noisy_sigma: f64,
    #[serde(default)]
    pub strategists: Vec<StrategistGroup>,
    /// Overrides the true local data size reported by every client.
    #[serde(default)]
    pub reported_size: Option<u64>,
    /// Overrides the size reported by free riders only.
    #[serde(default)]
    pub free_rider_reported_size: Option<u64>,
}

fn default_sigma1() -> f64 {
    0.01
}
fn default_sigma2() -> f64 {
    0.05
}

impl PopulationConfig {
    pub fn total(&self) -> usize {
        self.honest
            + self.free_riders
            + self.noisy
            + self.strategists.iter().map(|g| g.count).sum::<usize>()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
}

fn default_hidden() -> usize {
    100
}
fn default_dropout() -> f64 {
    0.5
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.5
}
fn default_batch_size() -> usize {
    10
}
fn default_local_epochs() -> usize {
    5
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            dropout: default_dropout(),
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            batch_size: default_batch_size(),
            local_epochs: default_local_epochs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSection {
    #[serde(default = "default_levels")]
    pub levels: u16,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_mode")]
    pub mode: RoundingMode,
    /// When true, clients upload raw updates and the server quantizes only
    /// for scoring; when false, uploads themselves are quantized and the
    /// aggregate is built from the dequantized signals.
    #[serde(default)]
    pub server_side_only: bool,
}

fn default_levels() -> u16 {
    8
}
fn default_x_max() -> f64 {
    0.1
}
fn default_mode() -> RoundingMode {
    RoundingMode::Stochastic
}

impl Default for QuantizerSection {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            x_max: default_x_max(),
            mode: default_mode(),
            server_side_only: false,
        }
    }
}

impl QuantizerSection {
    pub fn quantizer(&self) -> Result<QuantizerConfig> {
        QuantizerConfig::new(self.levels, self.x_max, self.mode)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaSection {
    #[serde(default = "default_peers")]
    pub peers: usize,
    #[serde(default = "default_bonus_size")]
    pub bonus_size: usize,
    #[serde(default = "default_min_penalty_pool")]
    pub min_penalty_pool: usize,
}

fn default_peers() -> usize {
    5
}
fn default_bonus_size() -> usize {
    1000
}
fn default_min_penalty_pool() -> usize {
    2
}

impl Default for PcaSection {
    fn default() -> Self {
        Self {
            peers: default_peers(),
            bonus_size: default_bonus_size(),
            min_penalty_pool: default_min_penalty_pool(),
        }
    }
}

impl PcaSection {
    pub fn pca(&self) -> PcaConfig {
        PcaConfig {
            peers: self.peers,
            bonus_size: self.bonus_size,
            min_penalty_pool: self.min_penalty_pool,
        }
    }
}

/// Settings for the incentive audit subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    #[serde(default = "default_audit_clients")]
    pub clients: usize,
    #[serde(default = "default_audit_params")]
    pub params: usize,
    #[serde(default = "default_x_max")]
    pub consensus_amplitude: f64,
    #[serde(default = "default_audit_noise")]
    pub client_noise: f64,
    #[serde(default = "default_audit_trials")]
    pub trials: usize,
    #[serde(default = "default_sigma2")]
    pub noisy_sigma: f64,
}

fn default_audit_clients() -> usize {
    12
}
fn default_audit_params() -> usize {
    6000
}
fn default_audit_noise() -> f64 {
    0.02
}
fn default_audit_trials() -> usize {
    50
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            clients: default_audit_clients(),
            params: default_audit_params(),
            consensus_amplitude: default_x_max(),
            client_noise: default_audit_noise(),
            trials: default_audit_trials(),
            noisy_sigma: default_sigma2(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    pub rounds: u64,
    pub clients_per_round: usize,
    pub aggregation: AggregationRule,
    /// Contribution-to-weight temperature; defaults to 10 for MNIST and 100
    /// for synthetic data.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub dataset: DatasetConfig,
    pub population: PopulationConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub quantizer: QuantizerSection,
    #[serde(default)]
    pub pca: PcaSection,
    #[serde(default)]
    pub reward: Option<RewardScheme>,
    #[serde(default)]
    pub audit: Option<AuditSection>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_schema_version() -> u32 {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::TomlParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn effective_alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.dataset {
            DatasetConfig::Mnist { .. } => 10.0,
            DatasetConfig::Synthetic { .. } => 100.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        let n = self.population.total();
        if n == 0 {
            return Err(Error::Config("population is empty".into()));
        }
        if self.clients_per_round < 1 || self.clients_per_round > n {
            return Err(Error::Config(format!(
                "clients_per_round {} must lie in 1..={n}",
                self.clients_per_round
            )));
        }
        if let Some(alpha) = self.alpha {
            if !alpha.is_finite() {
                return Err(Error::Config(format!("alpha must be finite, got {alpha}")));
            }
        }
        self.quantizer.quantizer()?;
        self.pca.pca().validate()?;
        if self.clients_per_round < self.pca.peers + 1 {
            return Err(Error::Config(format!(
                "clients_per_round {} cannot support {} peers per client",
                self.clients_per_round, self.pca.peers
            )));
        }
        match &self.dataset {
            DatasetConfig::Mnist {
                shards_per_client, ..
            } => {
                if *shards_per_client < 1 {
                    return Err(Error::Config("shards_per_client must be positive".into()));
                }
            }
            DatasetConfig::Synthetic {
                dims,
                classes,
                heterogeneity,
                samples_per_client,
                test_size,
            } => {
                if *dims < 1 || *classes < 2 || *samples_per_client < 1 || *test_size < 1 {
                    return Err(Error::Config(
                        "synthetic dataset sizes must be positive with at least 2 classes"
                            .into(),
                    ));
                }
                if !(0.0..=1.0).contains(heterogeneity) {
                    return Err(Error::Config(format!(
                        "heterogeneity must lie in [0,1], got {heterogeneity}"
                    )));
                }
            }
        }
        for group in &self.population.strategists {
            StrategyMatrix::from_rows(&group.matrix)?;
        }
        if let Some(reward) = &self.reward {
            reward.validate()?;
        }
        Ok(())
    }

    /// Expand the population section into per-client specs, ids 0..n.
    pub fn client_specs(&self, true_sizes: &[usize]) -> Result<Vec<ClientSpec>> {
        let n = self.population.total();
        if true_sizes.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: true_sizes.len(),
                context: "per-client data sizes",
            });
        }
        let p = &self.population;
        let mut behaviors: Vec<ClientBehavior> = Vec::with_capacity(n);
        behaviors.extend((0..p.honest).map(|_| ClientBehavior::Honest));
        behaviors.extend((0..p.free_riders).map(|_| ClientBehavior::FreeRider {
            sigma: p.free_rider_sigma,
        }));
        behaviors.extend((0..p.noisy).map(|_| ClientBehavior::Noisy {
            sigma: p.noisy_sigma,
        }));
        for group in &p.strategists {
            let matrix = StrategyMatrix::from_rows(&group.matrix)?;
            behaviors.extend((0..group.count).map(|_| ClientBehavior::Strategy {
                matrix: matrix.clone(),
            }));
        }
        behaviors
            .into_iter()
            .enumerate()
            .map(|(id, behavior)| {
                let mut size = p.reported_size.unwrap_or(true_sizes[id].max(1) as u64);
                if matches!(behavior, ClientBehavior::FreeRider { .. }) {
                    if let Some(fr) = p.free_rider_reported_size {
                        size = fr;
                    }
                }
                let spec = ClientSpec {
                    id: id as u64,
                    behavior,
                    reported_size: size,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    /// Build the per-client training sets and the global test set.
    pub fn prepare_data(&self) -> Result<(Vec<Dataset>, Dataset)> {
        let n = self.population.total();
        let mut rng = rng_for(self.seed, &[tag::DATA]);
        match &self.dataset {
            DatasetConfig::Synthetic {
                dims,
                classes,
                heterogeneity,
                samples_per_client,
                test_size,
            } => synth_dataset(
                n,
                *dims,
                *classes,
                *heterogeneity,
                *samples_per_client,
                *test_size,
                &mut rng,
            ),
            DatasetConfig::Mnist {
                dir,
                shards_per_client,
            } => {
                let dir = resolve_data_dir(dir.as_deref())?;
                let train = mnist_dataset(
                    idx_path(&dir, "train-images-idx3-ubyte")?,
                    idx_path(&dir, "train-labels-idx1-ubyte")?,
                    "mnist-train",
                )?;
                let test = mnist_dataset(
                    idx_path(&dir, "t10k-images-idx3-ubyte")?,
                    idx_path(&dir, "t10k-labels-idx1-ubyte")?,
                    "mnist-test",
                )?;
                let shards = n * shards_per_client;
                let clients = shard_partition(&train, shards, *shards_per_client, n, &mut rng)?;
                Ok((clients, test))
            }
        }
    }
}

/// Resolution order: explicit config dir, `$FEDPCA_DATA`, then `data/mnist`
/// searched upward from the working directory (so crate-relative test runs
/// find the workspace copy).
pub fn resolve_data_dir(configured: Option<&Path>) -> Result<PathBuf> {
    if let Some(d) = configured {
        return Ok(d.to_path_buf());
    }
    if let Ok(env_dir) = std::env::var(DATA_DIR_ENV) {
        if !env_dir.is_empty() {
            return Ok(PathBuf::from(env_dir));
        }
    }
    let mut dir = std::env::current_dir()?;
    loop {
        let candidate = dir.join("data/mnist");
        if candidate.is_dir() {
            return Ok(candidate);
        }
        if !dir.pop() {
            return Ok(PathBuf::from("data/mnist"));
        }
    }
}

fn idx_path(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Dataset(format!(
        "missing {name} (or {name}.gz) in {}; run scripts/fetch_mnist.sh or set ${DATA_DIR_ENV}",
        dir.display()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 7
        rounds = 3
        clients_per_round = 4
        aggregation = "fedpca"

        [dataset]
        kind = "synthetic"
        dims = 8
        classes = 3

        [population]
        honest = 5
        free_riders = 1

        [pca]
        peers = 2
        bonus_size = 20
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.population.total(), 6);
        assert_eq!(cfg.learner.batch_size, 10);
        assert_eq!(cfg.quantizer.levels, 8);
        assert_eq!(cfg.pca.min_penalty_pool, 2);
        assert_eq!(cfg.effective_alpha(), 100.0);
        assert_eq!(cfg.population.free_rider_sigma, 0.01);
    }

    #[test]
    fn mnist_alpha_defaults_to_ten() {
        let text = r#"
            seed = 1
            rounds = 1
            clients_per_round = 6
            aggregation = "fedavg"

            [dataset]
            kind = "mnist"

            [population]
            honest = 10
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.effective_alpha(), 10.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let too_many = MINIMAL.replace("clients_per_round = 4", "clients_per_round = 9");
        assert!(ExperimentConfig::from_toml_str(&too_many).is_err());
        let zero_rounds = MINIMAL.replace("rounds = 3", "rounds = 0");
        assert!(ExperimentConfig::from_toml_str(&zero_rounds).is_err());
        let unknown = format!("{MINIMAL}\nbogus_field = 3\n");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
    }

    #[test]
    fn strategy_matrices_load_from_dense_rows() {
        let text = r#"
            seed = 7
            rounds = 1
            clients_per_round = 3
            aggregation = "med"

            [dataset]
            kind = "synthetic"

            [population]
            honest = 2

            [[population.strategists]]
            count = 1
            matrix = [[0.0, 1.0], [1.0, 0.0]]

            [quantizer]
            levels = 2

            [pca]
            peers = 2
            bonus_size = 5
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let specs = cfg.client_specs(&[10, 10, 10]).unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[2].behavior.tag(), "strategy");

        let bad = text.replace("[1.0, 0.0]", "[0.9, 0.0]");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn client_specs_honor_reported_size_overrides() {
        let text = r#"
            seed = 7
            rounds = 1
            clients_per_round = 3
            aggregation = "fedavg"

            [dataset]
            kind = "synthetic"

            [population]
            honest = 2
            free_riders = 1
            free_rider_reported_size = 9999

            [pca]
            peers = 2
            bonus_size = 5
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let specs = cfg.client_specs(&[100, 200, 0]).unwrap();
        assert_eq!(specs[0].reported_size, 100);
        assert_eq!(specs[1].reported_size, 200);
        assert_eq!(specs[2].reported_size, 9999);
    }
}
