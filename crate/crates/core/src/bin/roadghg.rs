use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roadghg::pipeline::{cmd_evaluate, cmd_predict, cmd_speed, cmd_synth, cmd_train, RunConfig};
use roadghg::Result;

#[derive(Parser)]
#[command(name = "roadghg", version, about = "Traffic counts, LA AADT and road GHG emissions from satellite vehicle detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML run configuration; relative paths resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["historical", "estimated"])]
    speed_source: Option<String>,
    #[arg(long, global = true, value_parser = ["motorways", "a-roads", "minor-roads"])]
    road_type: Option<String>,
    /// Predict overall AADT and apportion it by detected vehicle types.
    #[arg(long, global = true)]
    no_vehicle_type: bool,
    /// Log progress (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(flatten)]
    keys: KeyFlags,
}

/// Remaining configuration keys, each overridable on the command line.
#[derive(Args)]
struct KeyFlags {
    #[arg(long, global = true)]
    history_dir: Option<String>,
    #[arg(long, global = true)]
    test_history_dir: Option<String>,
    #[arg(long, global = true)]
    ground_truth: Option<String>,
    #[arg(long, global = true)]
    emissions_truth: Option<String>,
    #[arg(long, global = true)]
    factors: Option<String>,
    #[arg(long, global = true)]
    detections_dir: Option<String>,
    #[arg(long, global = true)]
    rasters_dir: Option<String>,
    #[arg(long, global = true)]
    weights_dir: Option<String>,
    #[arg(long, global = true, value_parser = ["interval", "daily"])]
    historical_speed: Option<String>,
    #[arg(long, global = true)]
    confidence_threshold: Option<String>,
    /// Comma-separated hidden layer widths, e.g. 32,32.
    #[arg(long, global = true)]
    hidden_layers: Option<String>,
    #[arg(long, global = true)]
    learning_rate: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    max_epochs: Option<String>,
    #[arg(long, global = true)]
    patience: Option<String>,
    #[arg(long, global = true)]
    val_fraction: Option<String>,
    #[arg(long, global = true)]
    min_area_px: Option<String>,
    #[arg(long, global = true)]
    min_compactness: Option<String>,
    #[arg(long, global = true)]
    min_rectangularity: Option<String>,
    #[arg(long, global = true)]
    intensity_quantile: Option<String>,
    #[arg(long, global = true)]
    max_displacement_m: Option<String>,
    #[arg(long, global = true)]
    sparse_share: Option<String>,
    #[arg(long, global = true)]
    synth_days: Option<String>,
}

impl KeyFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let quoted = |v: &Option<String>| v.as_ref().map(|s| format!("{s:?}"));
        let raw = |v: &Option<String>| v.clone();
        let list = |v: &Option<String>| v.as_ref().map(|s| format!("[{s}]"));
        [
            ("history_dir", quoted(&self.history_dir)),
            ("test_history_dir", quoted(&self.test_history_dir)),
            ("ground_truth", quoted(&self.ground_truth)),
            ("emissions_truth", quoted(&self.emissions_truth)),
            ("factors", quoted(&self.factors)),
            ("detections_dir", quoted(&self.detections_dir)),
            ("rasters_dir", quoted(&self.rasters_dir)),
            ("weights_dir", quoted(&self.weights_dir)),
            ("historical_speed", quoted(&self.historical_speed)),
            ("confidence_threshold", raw(&self.confidence_threshold)),
            ("hidden_layers", list(&self.hidden_layers)),
            ("learning_rate", raw(&self.learning_rate)),
            ("batch_size", raw(&self.batch_size)),
            ("max_epochs", raw(&self.max_epochs)),
            ("patience", raw(&self.patience)),
            ("val_fraction", raw(&self.val_fraction)),
            ("min_area_px", raw(&self.min_area_px)),
            ("min_compactness", raw(&self.min_compactness)),
            ("min_rectangularity", raw(&self.min_rectangularity)),
            ("intensity_quantile", raw(&self.intensity_quantile)),
            ("max_displacement_m", raw(&self.max_displacement_m)),
            ("sparse_share", raw(&self.sparse_share)),
            ("synth_days", raw(&self.synth_days)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one AADT model per count site.
    Train,
    /// Detections to counts, AADT and emissions.
    Predict,
    /// Error tables against ground truth for the last predict run.
    Evaluate,
    /// Live mean speed for every raster.
    Speed,
    /// Write a synthetic two-direction fixture to the output directory.
    Synth,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for (key, value) in cli.keys.pairs() {
        cfg.set(key, &value)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = &cli.speed_source {
        cfg.speed_source = s.parse()?;
    }
    if let Some(r) = &cli.road_type {
        cfg.road_type = r.parse()?;
    }
    if cli.no_vehicle_type {
        cfg.no_vehicle_type = true;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8> {
    let cfg = build_config(cli)?;
    match cli.command {
        Command::Train => {
            for site in cmd_train(&cfg)? {
                let best = site.log.best();
                println!(
                    "{} ({}): best epoch {} of {}, validation MAPE {:.4} -> {}",
                    site.site_id,
                    site.la_name,
                    site.log.best_epoch,
                    site.log.epochs.len(),
                    best.map(|e| e.val_mape).unwrap_or(f64::NAN),
                    site.weights.display()
                );
            }
        }
        Command::Predict => {
            let out = cmd_predict(&cfg)?;
            for r in &out.emissions {
                println!("{r}");
            }
            println!("outputs written to {}", cfg.output_dir.display());
        }
        Command::Evaluate => {
            let s = cmd_evaluate(&cfg)?;
            for r in s.aadt_rows.iter().chain(&s.emissions_rows) {
                println!("{:<24} {:<12} rmse {:>14.3} mape {:.4}", r.label, r.group, r.rmse, r.mape);
            }
            println!("tables written to {}", cfg.output_dir.display());
        }
        Command::Speed => {
            let batch = cmd_speed(&cfg)?;
            println!("{batch}");
            if batch.failed > 0 {
                return Ok(3);
            }
        }
        Command::Synth => {
            let m = cmd_synth(&cfg)?;
            println!("fixture written to {}; run config {}", m.root.display(), m.config.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
