//! The seeded simulation loop: client selection, local updates, quantized
//! scoring, weighted aggregation, evaluation, and per-round logging; plus
//! axis sweeps and i.i.d. diagnostics on recorded signal histories.

mod config;
mod record;

pub use config::{
    AuditSection, DatasetConfig, ExperimentConfig, LearnerConfig, PcaSection,
    PopulationConfig, QuantizerSection, StrategistGroup, DATA_DIR_ENV,
};
pub use record::{
    write_diagnostics_csv, write_records_jsonl, write_summary_csv, write_sweep_csv,
    BehaviorSummary, ClientRound, DiagnosticRow, DiagnosticsReport, RoundRecord, RunSummary,
    SweepRow, SweepTable, SCHEMA_VERSION,
};

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::aggregate::{
    apply_update, fedavg_weights, fedpca_weights, weighted_mean_aggregate,
    weighted_median_aggregate, AggregationRule, AggregationWeights, GlobalModel,
};
use crate::clients::{produce_update, ClientSpec, TrainingContext};
use crate::error::{Error, Result};
use crate::learner::{evaluate, init_params, positive_scores, Dataset, MlpConfig, SgdConfig};
use crate::quantize::{dequantize, quantize, QuantizerConfig, SignalVector};
use crate::scoring::pca_score_keyed;
use crate::seeding::{derive_seed, rng_for, tag};
use crate::stats::{ks_two_sample, spearman};

/// Signal history of one client across the rounds it was selected.
#[derive(Debug, Clone)]
pub struct ClientSignalHistory {
    pub client: u64,
    pub rounds: Vec<u64>,
    pub signals: Vec<SignalVector>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record every selected client's quantized signals per round.
    pub capture_signals: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
    pub signal_history: Vec<ClientSignalHistory>,
}

struct Prepared {
    specs: Vec<ClientSpec>,
    data: Vec<Dataset>,
    test: Dataset,
    mlp: MlpConfig,
    sgd: SgdConfig,
    quantizer: QuantizerConfig,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (data, test) = cfg.prepare_data()?;
    let sizes: Vec<usize> = data.iter().map(|d| d.len()).collect();
    let specs = cfg.client_specs(&sizes)?;
    let mlp = MlpConfig {
        input_dim: test.dim(),
        hidden: cfg.learner.hidden,
        classes: test.classes() as usize,
        dropout: cfg.learner.dropout,
        seed: derive_seed(cfg.seed, &[tag::INIT]),
    };
    let sgd = SgdConfig {
        learning_rate: cfg.learner.learning_rate,
        momentum: cfg.learner.momentum,
        batch_size: cfg.learner.batch_size,
        local_epochs: cfg.learner.local_epochs,
    };
    let quantizer = cfg.quantizer.quantizer()?;
    Ok(Prepared {
        specs,
        data,
        test,
        mlp,
        sgd,
        quantizer,
    })
}

struct ClientRoundOutput {
    id: u64,
    reported: Vec<f64>,
    signals: SignalVector,
}

/// Run one experiment, invoking `on_round` as each round record is produced.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<RunOutput> {
    let prep = prepare(cfg)?;
    let n = prep.specs.len();
    let k = cfg.clients_per_round;
    let alpha = cfg.effective_alpha();
    let rule = cfg.aggregation;
    let binary = prep.test.classes() == 2;

    let mut model = GlobalModel::new(init_params(&prep.mlp)?)?;
    let mut records: Vec<RoundRecord> = Vec::with_capacity(cfg.rounds as usize);
    let mut history: BTreeMap<u64, ClientSignalHistory> = BTreeMap::new();

    // Per-behavior accumulation for the summary.
    let mut weight_sums: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let mut select_rng = rng_for(cfg.seed, &[tag::SELECT, round]);
        let mut selected: Vec<usize> = sample(&mut select_rng, n, k).into_iter().collect();
        selected.sort_unstable();

        let outputs: Result<Vec<ClientRoundOutput>> = selected
            .par_iter()
            .map(|&c| {
                let spec = &prep.specs[c];
                let ctx = TrainingContext {
                    mlp: &prep.mlp,
                    sgd: &prep.sgd,
                    quantizer: &prep.quantizer,
                };
                let mut crng = rng_for(cfg.seed, &[tag::CLIENT, round, spec.id]);
                let raw = produce_update(
                    spec,
                    model.parameters(),
                    &ctx,
                    Some(&prep.data[c]),
                    &mut crng,
                )?;
                let mut qrng = rng_for(cfg.seed, &[tag::QUANT, round, spec.id]);
                let signals = quantize(&raw, &prep.quantizer, &mut qrng)?;
                let reported = if cfg.quantizer.server_side_only {
                    raw
                } else {
                    dequantize(&signals, &prep.quantizer)?
                };
                Ok(ClientRoundOutput {
                    id: spec.id,
                    reported,
                    signals,
                })
            })
            .collect();
        let outputs = outputs?;

        let ids: Vec<u64> = outputs.iter().map(|o| o.id).collect();
        let signals: Vec<SignalVector> = outputs.iter().map(|o| o.signals.clone()).collect();
        let scores = pca_score_keyed(
            &signals,
            &ids,
            &cfg.pca.pca(),
            derive_seed(cfg.seed, &[tag::SCORE, round]),
        )?;
        let qs: Vec<f64> = scores.iter().map(|s| s.q).collect();

        let weights: AggregationWeights = match rule {
            AggregationRule::Fedavg => {
                let sizes: Vec<u64> = selected
                    .iter()
                    .map(|&c| prep.specs[c].reported_size)
                    .collect();
                fedavg_weights(&sizes)?
            }
            AggregationRule::Fedpca | AggregationRule::Medpca => fedpca_weights(&qs, alpha)?,
            AggregationRule::Med => AggregationWeights::uniform(k)?,
        };

        let updates: Vec<Vec<f64>> = outputs.into_iter().map(|o| o.reported).collect();
        let aggregated = match rule {
            AggregationRule::Fedavg | AggregationRule::Fedpca => {
                weighted_mean_aggregate(&updates, &weights)?
            }
            AggregationRule::Med | AggregationRule::Medpca => {
                weighted_median_aggregate(&updates, &weights)?
            }
        };
        if aggregated.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { round });
        }
        model = apply_update(&model, &aggregated)?;

        let accuracy = evaluate(model.parameters(), &prep.mlp, &prep.test)?;
        let auc = if binary {
            let scores01 = positive_scores(model.parameters(), &prep.mlp, &prep.test)?;
            let labels: Vec<bool> = prep.test.labels().iter().map(|&l| l == 1).collect();
            Some(crate::stats::auc(&scores01, &labels)?)
        } else {
            None
        };

        if opts.capture_signals {
            for (pos, &c) in selected.iter().enumerate() {
                let entry = history
                    .entry(prep.specs[c].id)
                    .or_insert_with(|| ClientSignalHistory {
                        client: prep.specs[c].id,
                        rounds: Vec::new(),
                        signals: Vec::new(),
                    });
                entry.rounds.push(round);
                entry.signals.push(signals[pos].clone());
            }
        }

        let mut selected_rows = Vec::with_capacity(k);
        for (pos, &c) in selected.iter().enumerate() {
            let spec = &prep.specs[c];
            let tag = spec.behavior.tag().to_string();
            let w = weights.as_slice()[pos];
            let q = qs[pos];
            let acc = weight_sums.entry(tag.clone()).or_insert((0, 0.0, 0.0));
            acc.0 += 1;
            acc.1 += w;
            acc.2 += q;
            selected_rows.push(ClientRound {
                id: spec.id,
                behavior: tag,
                q,
                weight: w,
                reported_size: spec.reported_size,
            });
        }

        let record = RoundRecord {
            schema_version: SCHEMA_VERSION,
            round,
            rule: rule.as_str().to_string(),
            selected: selected_rows,
            accuracy,
            auc,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_round(&record);
        records.push(record);
    }

    let mut population_counts: BTreeMap<String, usize> = BTreeMap::new();
    for spec in &prep.specs {
        *population_counts
            .entry(spec.behavior.tag().to_string())
            .or_default() += 1;
    }
    let behaviors: Vec<BehaviorSummary> = population_counts
        .into_iter()
        .map(|(behavior, clients)| {
            let (samples, w, q) = weight_sums
                .get(&behavior)
                .copied()
                .unwrap_or((0, 0.0, 0.0));
            BehaviorSummary {
                behavior,
                clients,
                samples,
                mean_weight: if samples > 0 { w / samples as f64 } else { 0.0 },
                mean_q: if samples > 0 { q / samples as f64 } else { 0.0 },
            }
        })
        .collect();

    let last = records.last().expect("at least one round");
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        rounds: cfg.rounds,
        rule: rule.as_str().to_string(),
        final_accuracy: last.accuracy,
        final_auc: last.auc,
        behaviors,
    };

    Ok(RunOutput {
        records,
        summary,
        signal_history: history.into_values().collect(),
    })
}

/// Run one experiment and collect all round records.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment_with(cfg, &RunOptions::default(), |_| {})
}

/// Sweepable configuration axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    FreeRiderFraction,
    Sigma2,
    Alpha,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::FreeRiderFraction => "free_rider_fraction",
            SweepAxis::Sigma2 => "sigma2",
            SweepAxis::Alpha => "alpha",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "free_rider_fraction" | "free-rider-fraction" => Ok(SweepAxis::FreeRiderFraction),
            "sigma2" => Ok(SweepAxis::Sigma2),
            "alpha" => Ok(SweepAxis::Alpha),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}' (free_rider_fraction, sigma2, alpha)"
            ))),
        }
    }
}

fn apply_axis(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::FreeRiderFraction => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!(
                    "free rider fraction must lie in [0,1], got {value}"
                )));
            }
            let n = base.population.total();
            let others = base.population.noisy
                + base
                    .population
                    .strategists
                    .iter()
                    .map(|g| g.count)
                    .sum::<usize>();
            let riders = (value * n as f64).round() as usize;
            if riders + others > n {
                return Err(Error::Config(format!(
                    "free rider fraction {value} leaves no room for the {others} \
                     other strategic clients in a population of {n}"
                )));
            }
            cfg.population.free_riders = riders;
            cfg.population.honest = n - riders - others;
        }
        SweepAxis::Sigma2 => {
            if base.population.noisy == 0 {
                return Err(Error::Config(
                    "sigma2 sweep needs noisy clients in the base population".into(),
                ));
            }
            if !(value >= 0.0) {
                return Err(Error::Config(format!(
                    "sigma2 must be nonnegative, got {value}"
                )));
            }
            cfg.population.noisy_sigma = value;
        }
        SweepAxis::Alpha => {
            if !value.is_finite() {
                return Err(Error::Config(format!("alpha must be finite, got {value}")));
            }
            cfg.alpha = Some(value);
        }
    }
    Ok(cfg)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One run per (value, seed) with seeds derived from the base seed; rows
/// report mean and spread of the strategic-client weight and final accuracy.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds_per_value: usize,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    if seeds_per_value == 0 {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (vi, &value) in values.iter().enumerate() {
        let cfg = apply_axis(base, axis, value)?;
        let mut strategic = Vec::with_capacity(seeds_per_value);
        let mut accuracy = Vec::with_capacity(seeds_per_value);
        for si in 0..seeds_per_value {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = derive_seed(base.seed, &[tag::SWEEP, vi as u64, si as u64]);
            let out = run_experiment(&run_cfg)?;
            if let Some(w) = out.summary.strategic_mean_weight() {
                strategic.push(w);
            }
            accuracy.push(out.summary.final_accuracy);
        }
        let (acc_mean, acc_std) = mean_std(&accuracy);
        let (sw_mean, sw_std) = if strategic.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&strategic);
            (Some(m), Some(s))
        };
        rows.push(SweepRow {
            schema_version: SCHEMA_VERSION,
            axis: axis.as_str().to_string(),
            value,
            seeds: seeds_per_value,
            mean_strategic_weight: sw_mean,
            std_strategic_weight: sw_std,
            mean_final_accuracy: acc_mean,
            std_final_accuracy: acc_std,
        });
    }
    Ok(SweepTable {
        axis: axis.as_str().to_string(),
        rows,
    })
}

/// Run the configured experiment capturing signals, then test sampled
/// parameter pairs of the best-covered client's history for independence
/// (Spearman) and identical distribution (KS).
pub fn iid_diagnostics(cfg: &ExperimentConfig, pairs: usize) -> Result<DiagnosticsReport> {
    if pairs == 0 {
        return Err(Error::Config("diagnostics need at least one pair".into()));
    }
    let opts = RunOptions {
        capture_signals: true,
    };
    let out = run_experiment_with(cfg, &opts, |_| {})?;
    let best = out
        .signal_history
        .iter()
        .max_by_key(|h| (h.rounds.len(), std::cmp::Reverse(h.client)))
        .ok_or(Error::EmptyInput("signal history"))?;
    let n_rounds = best.rounds.len();
    if n_rounds < 3 {
        return Err(Error::Config(format!(
            "client {} was selected in only {n_rounds} rounds; diagnostics need \
             at least 3 (increase rounds or clients_per_round)",
            best.client
        )));
    }
    let n_params = best.signals[0].len();
    let column = |p: usize| -> Vec<f64> {
        best.signals.iter().map(|s| s.get(p) as f64).collect()
    };

    let mut rng = rng_for(cfg.seed, &[tag::DIAG]);
    let mut rows = Vec::with_capacity(pairs);
    let mut skipped = 0usize;
    let mut attempts = 0usize;
    while rows.len() < pairs && attempts < pairs * 20 {
        attempts += 1;
        let picked = sample(&mut rng, n_params, 2);
        let (pa, pb) = (picked.index(0), picked.index(1));
        let xa = column(pa);
        let xb = column(pb);
        let sp = match spearman(&xa, &xb) {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let ks = ks_two_sample(&xa, &xb)?;
        rows.push(DiagnosticRow {
            schema_version: SCHEMA_VERSION,
            param_a: pa,
            param_b: pb,
            spearman_statistic: sp.statistic,
            spearman_p: sp.p_value,
            ks_statistic: ks.statistic,
            ks_p: ks.p_value,
        });
    }
    if rows.is_empty() {
        return Err(Error::Config(
            "every sampled parameter pair had constant signals; nothing to test".into(),
        ));
    }
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let median_spearman_p = median(rows.iter().map(|r| r.spearman_p).collect());
    let median_ks_p = median(rows.iter().map(|r| r.ks_p).collect());
    Ok(DiagnosticsReport {
        schema_version: SCHEMA_VERSION,
        client: best.client,
        history_len: n_rounds,
        rows,
        skipped_constant: skipped,
        median_spearman_p,
        median_ks_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(rule: &str) -> ExperimentConfig {
        let text = format!(
            r#"
            seed = 11
            rounds = 3
            clients_per_round = 5
            aggregation = "{rule}"

            [dataset]
            kind = "synthetic"
            dims = 6
            classes = 3
            heterogeneity = 0.5
            samples_per_client = 40
            test_size = 200

            [population]
            honest = 6
            free_riders = 2

            [learner]
            hidden = 8
            dropout = 0.0
            batch_size = 8
            local_epochs = 2

            [pca]
            peers = 2
            bonus_size = 20
        "#
        );
        ExperimentConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn run_emits_one_record_per_round_with_unit_weight_sums() {
        let cfg = tiny_config("fedpca");
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 3);
        for r in &out.records {
            assert_eq!(r.selected.len(), 5);
            let wsum: f64 = r.selected.iter().map(|c| c.weight).sum();
            assert!((wsum - 1.0).abs() < 1e-9);
            for c in &r.selected {
                assert!(c.q >= -1.0 && c.q <= 1.0);
            }
            assert!(r.accuracy >= 0.0 && r.accuracy <= 1.0);
        }
        assert_eq!(out.summary.rounds, 3);
    }

    #[test]
    fn identical_config_and_seed_reproduce_records_exactly() {
        let cfg = tiny_config("fedpca");
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        // Byte-identical up to wall-clock timing, which is not part of the
        // deterministic payload.
        let strip = |records: &[RoundRecord]| -> Vec<RoundRecord> {
            records
                .iter()
                .map(|r| RoundRecord {
                    wall_ms: 0,
                    ..r.clone()
                })
                .collect()
        };
        let ja = serde_json::to_vec(&strip(&a.records)).unwrap();
        let jb = serde_json::to_vec(&strip(&b.records)).unwrap();
        assert_eq!(ja, jb);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn single_client_round_applies_that_update() {
        let text = r#"
            seed = 5
            rounds = 1
            clients_per_round = 1
            aggregation = "fedavg"

            [dataset]
            kind = "synthetic"
            dims = 4
            classes = 2
            samples_per_client = 20
            test_size = 50

            [population]
            honest = 1

            [learner]
            hidden = 4
            dropout = 0.0
            local_epochs = 1

            [quantizer]
            server_side_only = true

            [pca]
            peers = 1
            bonus_size = 5
        "#;
        // A single client cannot have a peer; expect a config rejection.
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(err.is_config(), "{err}");
    }

    #[test]
    fn alpha_zero_fedpca_matches_fedavg_with_equal_sizes() {
        let mut fedpca_cfg = tiny_config("fedpca");
        fedpca_cfg.alpha = Some(0.0);
        fedpca_cfg.population.reported_size = Some(40);
        let mut fedavg_cfg = tiny_config("fedavg");
        fedavg_cfg.population.reported_size = Some(40);

        let a = run_experiment(&fedpca_cfg).unwrap();
        let b = run_experiment(&fedavg_cfg).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.accuracy, rb.accuracy);
            for (ca, cb) in ra.selected.iter().zip(&rb.selected) {
                assert_eq!(ca.id, cb.id);
                assert!((ca.weight - cb.weight).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binary_synthetic_runs_report_auc() {
        let text = r#"
            seed = 9
            rounds = 2
            clients_per_round = 4
            aggregation = "medpca"

            [dataset]
            kind = "synthetic"
            dims = 5
            classes = 2
            samples_per_client = 30
            test_size = 100

            [population]
            honest = 5

            [learner]
            hidden = 6
            dropout = 0.0
            local_epochs = 1

            [pca]
            peers = 2
            bonus_size = 10
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let out = run_experiment(&cfg).unwrap();
        for r in &out.records {
            let auc = r.auc.expect("binary run reports auc");
            assert!((0.0..=1.0).contains(&auc));
        }
        assert!(out.summary.final_auc.is_some());
    }

    #[test]
    fn sweep_rows_cover_every_value() {
        let mut cfg = tiny_config("fedpca");
        cfg.rounds = 2;
        let table = run_sweep(&cfg, SweepAxis::FreeRiderFraction, &[0.0, 0.25], 2).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].seeds, 2);
        // All-honest point has no strategic clients.
        assert!(table.rows[0].mean_strategic_weight.is_none());
        assert!(table.rows[1].mean_strategic_weight.is_some());
        assert!(run_sweep(&cfg, SweepAxis::FreeRiderFraction, &[], 2).is_err());
        // Sigma2 sweep without noisy clients is rejected.
        assert!(run_sweep(&cfg, SweepAxis::Sigma2, &[0.01], 1).is_err());
    }

    #[test]
    fn diagnostics_report_covers_requested_pairs() {
        let mut cfg = tiny_config("fedpca");
        cfg.rounds = 8;
        cfg.clients_per_round = 7;
        let report = iid_diagnostics(&cfg, 6).unwrap();
        assert!(report.history_len >= 3);
        assert_eq!(report.rows.len(), 6);
        for row in &report.rows {
            assert!(row.spearman_p >= 0.0 && row.spearman_p <= 1.0);
            assert!(row.ks_p >= 0.0 && row.ks_p <= 1.0);
            assert!(row.ks_statistic >= 0.0 && row.ks_statistic <= 1.0);
        }
    }

    #[test]
    fn diagnostics_accept_iid_signals_from_free_riders() {
        // A free-rider-only population uploads i.i.d. Gaussian coordinates,
        // so the recorded signals satisfy the null by construction.
        let text = r#"
            seed = 21
            rounds = 24
            clients_per_round = 6
            aggregation = "med"

            [dataset]
            kind = "synthetic"
            dims = 4
            classes = 2
            samples_per_client = 10
            test_size = 50

            [population]
            honest = 0
            free_riders = 7
            free_rider_sigma = 0.05

            [learner]
            hidden = 4
            dropout = 0.0
            local_epochs = 1

            [quantizer]
            levels = 8
            x_max = 0.1
            server_side_only = true

            [pca]
            peers = 2
            bonus_size = 10
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let report = iid_diagnostics(&cfg, 12).unwrap();
        assert!(report.history_len >= 10, "history {}", report.history_len);
        assert!(
            report.median_spearman_p > 0.05,
            "median spearman p {} under the null",
            report.median_spearman_p
        );
        assert!(
            report.median_ks_p > 0.05,
            "median ks p {} under the null",
            report.median_ks_p
        );
    }
}
