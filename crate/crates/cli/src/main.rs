use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdd_core::config::RunConfig;
use fdd_core::metrics::{comparison_table, EvalReport};
use fdd_core::pipeline::{
    evaluate_flat, evaluate_hierarchical, ingest_dir, read_archives, simulate_to_dir, train_mode, tune_mode,
    write_archives, Mode,
};
use fdd_core::prbs::{design_band, format_sequence};
use fdd_core::{FddError, Result, TrainedModel};

/// Fault detection and diagnosis with recurrent autoencoders.
#[derive(Parser)]
#[command(name = "fdd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every surrogate scenario into data files.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Window and split raw data files into archives.
    Ingest {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on ingested archives.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Successive-halving hyperparameter search.
    Tune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score trained models on the test archive.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding the trained model files.
        #[arg(long)]
        models: PathBuf,
        /// Route through level 1 and level 2 instead of the flat model.
        #[arg(long)]
        hierarchical: bool,
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        prbs: Switch,
        #[arg(long)]
        out: PathBuf,
    },
    /// Excitation signal tools.
    Prbs {
        #[command(subcommand)]
        command: PrbsCommand,
    },
    /// Print one report, or compare several side by side.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Print the confusion matrix too.
        #[arg(long)]
        confusion: bool,
    },
}

#[derive(Subcommand)]
enum PrbsCommand {
    /// Derive the band and sequence plan from the loop time constants.
    Design {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        tau_ol: Option<f64>,
        #[arg(long)]
        tau_cl: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Directory written by `ingest`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: CliMode,
    /// Train level 2 on the excited windows.
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    prbs: Switch,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Flat,
    Level1,
    Level2,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::Flat => Mode::Flat,
            CliMode::Level1 => Mode::Level1,
            CliMode::Level2 => Mode::Level2,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn model_stem(mode: Mode, prbs: bool) -> &'static str {
    match (mode, prbs) {
        (Mode::Flat, _) => "flat",
        (Mode::Level1, _) => "level1",
        (Mode::Level2, false) => "level2",
        (Mode::Level2, true) => "level2_prbs",
    }
}

fn load_model(dir: &Path, stem: &str) -> Result<TrainedModel> {
    let path = dir.join(format!("{stem}.model"));
    let f = fs::File::open(&path).map_err(|e| FddError::Input(format!("cannot open {}: {e}", path.display())))?;
    TrainedModel::read_from(BufReader::new(f))
}

fn dataset_id(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = RunConfig::load(&config.config)?;
            let s = simulate_to_dir(&cfg, &out)?;
            println!("wrote {} records to {}", s.records.len(), out.display());
            if let Some(p) = s.plan {
                println!("excitation on {}: amplitude {}, period {} samples", p.target, p.amplitude, p.period() * p.clock_samples);
            }
        }
        Command::Ingest { config, input, out } => {
            let cfg = RunConfig::load(&config.config)?;
            let ing = ingest_dir(&cfg, &input)?;
            for f in &ing.transposed {
                println!("transposed {f}");
            }
            write_archives(&out, &ing.splits, &ing.class_names)?;
            let s = &ing.splits;
            println!(
                "{} records: {} train, {} validation, {} test windows{}",
                ing.files.len(),
                s.train.len(),
                s.val.len(),
                s.test.len(),
                if s.excited.is_some() { " (with excited twins)" } else { "" }
            );
        }
        Command::Train { run, out } => {
            let cfg = RunConfig::load(&run.config.config)?;
            let (splits, _) = read_archives(&run.data)?;
            let mode = Mode::from(run.mode);
            let prbs = run.prbs == Switch::On;
            let model = train_mode(&cfg, &splits, mode, prbs)?;
            fs::create_dir_all(&out)?;
            let stem = model_stem(mode, prbs);
            model.write_to(BufWriter::new(fs::File::create(out.join(format!("{stem}.model")))?))?;
            fs::write(out.join(format!("{stem}_history.csv")), model.history_table())?;
            let last = model.history.last();
            println!(
                "{stem}: {} epochs, kept epoch {}, final loss {}",
                model.history.len(),
                model.best_epoch,
                last.map_or(f64::NAN, |r| r.loss)
            );
        }
        Command::Tune { run, out } => {
            let cfg = RunConfig::load(&run.config.config)?;
            let (splits, _) = read_archives(&run.data)?;
            let mode = Mode::from(run.mode);
            let prbs = run.prbs == Switch::On;
            let r = tune_mode(&cfg, &splits, mode, prbs)?;
            fs::create_dir_all(&out)?;
            let stem = model_stem(mode, prbs);
            fs::write(out.join(format!("{stem}_tune.csv")), r.log_table())?;
            let json = serde_json::to_string_pretty(&r).map_err(|e| FddError::Input(e.to_string()))?;
            fs::write(out.join(format!("{stem}_tune.json")), json)?;
            let b = &r.best;
            println!(
                "best trial {}: learning_rate {}, encoder {:?}, decoder {:?}, batch {}, epochs {}",
                r.best_trial, b.learning_rate, b.encoder, b.decoder, b.batch_size, b.epochs
            );
        }
        Command::Evaluate {
            config,
            data,
            models,
            hierarchical,
            prbs,
            out,
        } => {
            let cfg = RunConfig::load(&config.config)?;
            let (splits, names) = read_archives(&data)?;
            let prbs = prbs == Switch::On;
            let id = dataset_id(&data);
            let (report, stem) = if hierarchical {
                let l1 = load_model(&models, "level1")?;
                let l2 = load_model(&models, model_stem(Mode::Level2, prbs))?;
                let r = evaluate_hierarchical(&cfg, l1, l2, &splits, prbs, &names, &id)?;
                (r, if prbs { "hierarchical_prbs" } else { "hierarchical" })
            } else {
                let m = load_model(&models, "flat")?;
                (evaluate_flat(&cfg, &m, &splits.test, &names, &id)?, "flat")
            };
            fs::create_dir_all(&out)?;
            fs::write(out.join(format!("{stem}_report.json")), report.to_json())?;
            fs::write(out.join(format!("{stem}_confusion.tsv")), report.confusion_table())?;
            print!("{}", report.render());
        }
        Command::Prbs {
            command: PrbsCommand::Design { config, tau_ol, tau_cl, out },
        } => {
            let cfg = RunConfig::load(&config.config)?;
            let mut spec = cfg
                .prbs
                .clone()
                .ok_or_else(|| FddError::Input("config has no [prbs] section".into()))?;
            spec.tau_ol = tau_ol.unwrap_or(spec.tau_ol);
            spec.tau_cl = tau_cl.unwrap_or(spec.tau_cl);
            let plant = cfg.plant();
            let band = design_band(spec.tau_ol, spec.tau_cl, spec.safety, std::f64::consts::PI / plant.sample_time)?;
            let plan = spec.plan(&plant)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("prbs_plan.toml"), plan.to_text())?;
            fs::write(out.join("prbs_sequence.txt"), format_sequence(&plan.sequence()?))?;
            let (lo, hi) = plan.band_edges();
            println!("band: [{}, {}] rad/s", band.omega_low, band.omega_high);
            println!(
                "plan: register {} taps {:?}, clock {} samples, period {} ticks, amplitude {}",
                plan.register_length,
                plan.taps,
                plan.clock_samples,
                plan.period(),
                plan.amplitude
            );
            println!("excited band: [{lo}, {hi}] rad/s");
        }
        Command::Report { reports, confusion } => {
            let loaded: Vec<EvalReport> = reports
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p)
                        .map_err(|e| FddError::Input(format!("cannot read {}: {e}", p.display())))?;
                    EvalReport::from_json(&text)
                })
                .collect::<Result<_>>()?;
            if let [one] = loaded.as_slice() {
                print!("{}", one.render());
            } else {
                print!("{}", comparison_table(&loaded)?);
            }
            if confusion {
                for r in &loaded {
                    println!("\n{}", r.model_id);
                    print!("{}", r.confusion_table());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 2 } else { 1 })
        }
    }
}
