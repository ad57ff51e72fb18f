use std::path::PathBuf;

use anyhow::Context;
use arft_cli::commands::{ablate, analyze, feature_selection_baselines, gen_synth, sweep, SweepAxis};
use arft_cli::pipeline::{evaluate_files, RunManifest};
use arft_cli::report::{f3, format_table};
use arft_cli::{resolve_config, run, Overrides};
use arft_core::data::{SynthConfig, DEFAULT_ALPHA, DEFAULT_RHO_ABS_MIN};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arft", version, about = "Cross-project aging-related bug prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON). A run manifest works too.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Spearman correlation analysis of one project's metrics.
    Analyze {
        data: PathBuf,
        /// Label column to exclude from the metrics.
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long, default_value_t = DEFAULT_RHO_ABS_MIN)]
        rho_min: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a synthetic source/target pair with a truth file.
    GenSynth {
        /// Generator config (JSON); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_source: Option<usize>,
        #[arg(long)]
        n_target: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        positive_rate: Option<f64>,
        #[arg(long)]
        shift_strength: Option<f64>,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Train and predict for each seed; evaluate when truth is configured.
    Run(Common),
    /// Run the four ablation variants under identical seeds.
    Ablate(Common),
    /// Sweep head count or focal gamma.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated grid; the standard grid for the axis otherwise.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Filter feature selection with a linear focal-loss classifier.
    Baselines(Common),
    /// Join predictions with ground truth.
    Evaluate {
        /// Run directory holding a manifest; every seed is evaluated.
        #[arg(long, conflicts_with = "predictions")]
        run_dir: Option<PathBuf>,
        /// Single predictions file.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "experiment")]
        experiment: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_manifest(m: &RunManifest) {
    match &m.aggregate {
        Some(a) => println!(
            "{} [{}] PD={} PF={} Bal={} (std {}) over {} seeds",
            m.experiment,
            m.variant,
            f3(a.pd_mean),
            f3(a.pf_mean),
            f3(a.bal_mean),
            f3(a.bal_std),
            a.runs
        ),
        None => println!("{} [{}] predictions written for {} seeds", m.experiment, m.variant, m.seeds.len()),
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Analyze { data, label_column, rho_min, alpha, out } => {
            let report = analyze(&data, label_column.as_deref(), rho_min, alpha, &out)?;
            println!("{}", report.summary_line());
        }
        Command::GenSynth { config, seed, n_source, n_target, p, positive_rate, shift_strength, label_column, out } => {
            let mut cfg: SynthConfig = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?)?,
                None => SynthConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.n_source = n_source.unwrap_or(cfg.n_source);
            cfg.n_target = n_target.unwrap_or(cfg.n_target);
            cfg.p = p.unwrap_or(cfg.p);
            cfg.positive_rate = positive_rate.unwrap_or(cfg.positive_rate);
            cfg.shift_strength = shift_strength.unwrap_or(cfg.shift_strength);
            let files = gen_synth(&cfg, &label_column, &out)?;
            println!("wrote {}, {} and {}", files.source.display(), files.target.display(), files.truth.display());
        }
        Command::Run(c) => {
            let cfg = resolve_config(c.config.as_deref(), &c.overrides)?;
            for m in run(&cfg, &c.out)? {
                print_manifest(&m);
            }
        }
        Command::Ablate(c) => {
            let cfg = resolve_config(c.config.as_deref(), &c.overrides)?;
            print!("{}", ablate(&cfg, &c.out)?.table());
        }
        Command::Sweep { common: c, axis, values } => {
            let cfg = resolve_config(c.config.as_deref(), &c.overrides)?;
            let values = values.unwrap_or_else(|| axis.default_values());
            print!("{}", sweep(&cfg, axis, &values, &c.out)?.table());
        }
        Command::Baselines(c) => {
            let cfg = resolve_config(c.config.as_deref(), &c.overrides)?;
            print!("{}", feature_selection_baselines(&cfg, &c.out)?.table());
        }
        Command::Evaluate { run_dir, predictions, truth, experiment, seed } => match (run_dir, predictions) {
            (Some(dir), _) => {
                let mut m = RunManifest::load(&dir)?;
                m.evaluate(&dir, &truth)?;
                print_manifest(&m);
            }
            (None, Some(pred)) => {
                let r = evaluate_files(&pred, &truth, &experiment, "", seed)?;
                let c = r.confusion;
                let header: Vec<String> = ["experiment", "TP", "FN", "FP", "TN", "PD", "PF", "Bal"].map(String::from).to_vec();
                let row = vec![
                    r.experiment.clone(),
                    c.tp.to_string(),
                    c.fn_.to_string(),
                    c.fp.to_string(),
                    c.tn.to_string(),
                    f3(r.pd),
                    f3(r.pf),
                    f3(r.bal),
                ];
                print!("{}", format_table(&header, &[row]));
            }
            (None, None) => anyhow::bail!("evaluate needs --run-dir or --predictions"),
        },
    }
    Ok(())
}
