use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedpca::experiment::{
    iid_diagnostics, run_experiment_with, run_sweep, write_diagnostics_csv,
    write_records_jsonl, write_summary_csv, write_sweep_csv, ExperimentConfig, RunOptions,
    SweepAxis,
};
use fedpca::incentive::{default_battery, ic_audit, SignalPopulation};
use fedpca::seeding::{rng_for, tag};

#[derive(Parser)]
#[command(
    name = "fedpca",
    about = "Federated-learning simulator with data-free contribution scoring",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output` field or `runs/`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the aggregation rule: fedavg, fedpca, med, or medpca.
    #[arg(long)]
    rule: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write records.jsonl plus summary.csv.
    Simulate(CommonArgs),
    /// Run one experiment per axis value (x seeds) and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep axis: free_rider_fraction, sigma2, or alpha.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Seeds per value.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Test recorded signals for the i.i.d. assumption; writes diagnostics.csv.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of random parameter pairs to test.
        #[arg(long, default_value_t = 20)]
        pairs: usize,
    },
    /// Audit incentive compatibility of the scoring; writes audit.json.
    Audit {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, fedpca::Error> {
    let mut cfg = ExperimentConfig::from_toml_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(rule) = &common.rule {
        cfg.aggregation = match rule.as_str() {
            "fedavg" => fedpca::aggregate::AggregationRule::Fedavg,
            "fedpca" => fedpca::aggregate::AggregationRule::Fedpca,
            "med" => fedpca::aggregate::AggregationRule::Med,
            "medpca" => fedpca::aggregate::AggregationRule::Medpca,
            other => {
                return Err(fedpca::Error::Config(format!(
                    "unknown rule '{other}' (fedavg, fedpca, med, medpca)"
                )))
            }
        };
    }
    Ok(cfg)
}

fn out_dir(common: &CommonArgs, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn ensure_dir(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)
}

fn simulate(common: &CommonArgs) -> Result<(), fedpca::Error> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg);
    ensure_dir(&dir)?;
    println!(
        "simulate: rule={} rounds={} k={} seed={}",
        cfg.aggregation.as_str(),
        cfg.rounds,
        cfg.clients_per_round,
        cfg.seed
    );
    let out = run_experiment_with(&cfg, &RunOptions::default(), |r| {
        println!(
            "round {:>4}  accuracy {:.4}{}  [{} ms]",
            r.round,
            r.accuracy,
            r.auc.map(|a| format!("  auc {a:.4}")).unwrap_or_default(),
            r.wall_ms
        );
    })?;
    write_records_jsonl(&out.records, dir.join("records.jsonl"))?;
    write_summary_csv(&out.summary, dir.join("summary.csv"))?;
    println!("final accuracy: {:.4}", out.summary.final_accuracy);
    for b in &out.summary.behaviors {
        println!(
            "behavior {:>12}: {:>3} clients, mean weight {:.5}, mean q {:+.4}",
            b.behavior, b.clients, b.mean_weight, b.mean_q
        );
    }
    println!("wrote {}", dir.join("records.jsonl").display());
    println!("wrote {}", dir.join("summary.csv").display());
    Ok(())
}

fn sweep(
    common: &CommonArgs,
    axis: &str,
    values: &[f64],
    seeds: usize,
) -> Result<(), fedpca::Error> {
    let cfg = load_config(common)?;
    let axis = SweepAxis::parse(axis)?;
    let dir = out_dir(common, &cfg);
    ensure_dir(&dir)?;
    println!(
        "sweep: axis={} values={values:?} seeds={seeds}",
        axis.as_str()
    );
    let table = run_sweep(&cfg, axis, values, seeds)?;
    for row in &table.rows {
        println!(
            "{} = {:<8} strategic weight {}  accuracy {:.4} +/- {:.4}",
            row.axis,
            row.value,
            row.mean_strategic_weight
                .map(|m| format!(
                    "{m:.5} +/- {:.5}",
                    row.std_strategic_weight.unwrap_or(0.0)
                ))
                .unwrap_or_else(|| "n/a".into()),
            row.mean_final_accuracy,
            row.std_final_accuracy
        );
    }
    write_sweep_csv(&table, dir.join("sweep.csv"))?;
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(())
}

fn diagnose(common: &CommonArgs, pairs: usize) -> Result<(), fedpca::Error> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg);
    ensure_dir(&dir)?;
    let report = iid_diagnostics(&cfg, pairs)?;
    println!(
        "diagnose: client {} over {} rounds, {} pairs ({} skipped as constant)",
        report.client,
        report.history_len,
        report.rows.len(),
        report.skipped_constant
    );
    println!(
        "median spearman p = {:.4}, median ks p = {:.4}",
        report.median_spearman_p, report.median_ks_p
    );
    write_diagnostics_csv(&report, dir.join("diagnostics.csv"))?;
    println!("wrote {}", dir.join("diagnostics.csv").display());
    Ok(())
}

fn audit(common: &CommonArgs, trials: Option<usize>) -> Result<(), fedpca::Error> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg);
    ensure_dir(&dir)?;
    let section = cfg.audit.clone().unwrap_or_default();
    let population = SignalPopulation {
        clients: section.clients,
        params: section.params,
        consensus_amplitude: section.consensus_amplitude,
        client_noise: section.client_noise,
        quantizer: cfg.quantizer.quantizer()?,
    };
    let battery = default_battery(cfg.quantizer.levels, section.noisy_sigma);
    let trials = trials.unwrap_or(section.trials);
    let mut rng = rng_for(cfg.seed, &[tag::AUDIT]);
    let report = ic_audit(&population, &cfg.pca.pca(), &battery, trials, &mut rng)?;
    println!(
        "audit: {} trials on {} clients x {} params",
        report.trials, population.clients, population.params
    );
    println!(
        "truthful mean q = {:+.4} (se {:.4})",
        report.truthful.mean_q, report.truthful.std_error
    );
    for e in &report.entries {
        println!(
            "  {:<18} [{:>10}] mean q {:+.4} (se {:.4})",
            e.label, e.kind, e.mean_q, e.std_error
        );
    }
    println!(
        "truthful_dominates_uninformed = {} (margin {:.1} se)",
        report.truthful_dominates_uninformed, report.uninformed_margin_se
    );
    println!("informed_gap = {:+.4}", report.informed_gap);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| fedpca::Error::Serialize(e.to_string()))?;
    std::fs::write(dir.join("audit.json"), json)?;
    println!("wrote {}", dir.join("audit.json").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(common) => simulate(common),
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
        } => sweep(common, axis, values, *seeds),
        Command::Diagnose { common, pairs } => diagnose(common, *pairs),
        Command::Audit { common, trials } => audit(common, *trials),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
