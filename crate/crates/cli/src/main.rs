use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepact_cli::commands::{self, FEATURES_FILE, MODEL_FILE};
use deepact_cli::config::{RunConfig, DATA_DIR_ENV};
use deepact_cli::{exit_code, EXIT_CONFIG};

/// Activity recognition from triaxial accelerometer data with deep belief
/// networks and optional HMM decoding.
///
/// Typical run:
///   deepact --config wisdm.toml ingest
///   deepact --config wisdm.toml train
///   deepact --config wisdm.toml eval
#[derive(Parser)]
#[command(name = "deepact", version)]
struct Cli {
    /// TOML config or a previous run manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Skip RBM pretraining.
    #[arg(long, global = true)]
    no_pretrain: bool,
    /// Enable HMM estimation and sequence decoding.
    #[arg(long, global = true)]
    hmm: bool,
    /// Gaussian noise added to raw samples, in g.
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
    /// Dataset file or directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Feature file (default: <out>/features.csv).
    #[arg(long, global = true)]
    features: Option<PathBuf>,
    /// Model file (default: <out>/model.dbn).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Window the dataset, extract spectra and write the feature file.
    Ingest,
    /// Pretrain and fine-tune a network.
    Train,
    /// Frame-wise metrics on the test split.
    Eval,
    /// HMM estimation and Viterbi decoding of the test recordings.
    Decode,
    /// Accuracy over a grid of depths and widths.
    Sweep {
        /// Comma-separated depths.
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<usize>>,
        /// Comma-separated widths.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
    },
    /// Summarize a model, HMM or feature file.
    Inspect { path: PathBuf },
}

fn config(cli: &Cli) -> deepact::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) => RunConfig::default().with_data_dir(Path::new(&dir)),
            None => RunConfig::default(),
        },
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.pipeline.threads = t;
    }
    if cli.no_pretrain {
        cfg.pipeline.pretrain = false;
    }
    if cli.hmm {
        cfg.pipeline.hmm = true;
    }
    if let Some(s) = cli.noise_sigma {
        cfg.pipeline.noise_sigma = s;
    }
    if let Some(d) = &cli.data {
        cfg.dataset.path = d.clone();
    }
    if let Command::Sweep { depths, widths } = &cli.command {
        if let Some(d) = depths {
            cfg.sweep.depths = d.clone();
        }
        if let Some(w) = widths {
            cfg.sweep.widths = w.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> deepact::Result<String> {
    if let Command::Inspect { path } = &cli.command {
        return commands::cmd_inspect(path);
    }
    let cfg = config(cli)?;
    let features = cli.features.clone().unwrap_or_else(|| cli.out.join(FEATURES_FILE));
    let model = cli.model.clone().unwrap_or_else(|| cli.out.join(MODEL_FILE));
    Ok(match &cli.command {
        Command::Ingest => commands::cmd_ingest(&cfg, &cli.out)?.render(),
        Command::Train => {
            let s = commands::cmd_train(&cfg, &features, &cli.out)?;
            let mut text = format!(
                "model\t{}\nmanifest\t{}\npretrained\t{}\nwidths\t{:?}\ntrain_windows\t{}\n",
                s.model_path.display(),
                s.manifest_path.display(),
                s.pretrained,
                s.widths,
                s.train_rows
            );
            if let Some(e) = s.final_epoch {
                text.push_str(&format!("final_loss\t{:.6}\nfinal_train_accuracy\t{:.4}\n", e.loss, e.accuracy));
            }
            text
        }
        Command::Eval => commands::cmd_eval(&cfg, &model, &features, &cli.out)?.report,
        Command::Decode => {
            let s = commands::cmd_decode(&cfg, &model, &features, &cli.out)?;
            format!(
                "segments\t{}\nwindows\t{}\nframewise_accuracy\t{:.4}\nviterbi_accuracy\t{:.4}\n",
                s.segments, s.windows, s.framewise_accuracy, s.viterbi_accuracy
            )
        }
        Command::Sweep { .. } => {
            let cells = commands::cmd_sweep(&cfg, &features, &cli.out)?;
            let mut text = String::from("depth\twidth\ttrain_accuracy\ttest_accuracy\n");
            for c in cells {
                text.push_str(&format!("{}\t{}\t{:.4}\t{:.4}\n", c.depth, c.width, c.train_accuracy, c.test_accuracy));
            }
            text
        }
        Command::Inspect { .. } => unreachable!("handled above"),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
