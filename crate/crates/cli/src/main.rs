//! `stepcount` command-line driver.
//!
//! Exit codes: 0 success, 1 environment/IO failure, 2 usage error,
//! 3 bad input data or configuration, 4 training diverged.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stepcount::experiment::{
    audit_dataset, evaluate_full, load_group, render_report, run_experiment, train_full, write_report,
    ExperimentConfig, ExperimentReport, Protocol, ReportFormat, TrainedModel,
};
use stepcount::ingest::{CsvOptions, WalkerGroup};
use stepcount::neural::{load_checkpoint, save_checkpoint};
use stepcount::synth::{generate_cohort, CohortSpec};
use stepcount::Error;

#[derive(Parser)]
#[command(name = "stepcount", version, about = "Step counting from phone motion data with a two-layer LSTM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated cohort (CSV + XML pairs).
    Synth(SynthArgs),
    /// Parse a sensor CSV and its annotation and summarize the usable spans.
    Check(CheckArgs),
    /// Train one model on all usable data of a group and save a checkpoint.
    Train(TrainArgs),
    /// Score a saved checkpoint on a group's data.
    Eval(EvalArgs),
    /// Run a cross-validation protocol from a JSON config.
    Experiment(ExperimentArgs),
    /// Re-render a saved report.json.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    Sighted,
    LongCane,
    GuideDog,
}

impl From<Group> for WalkerGroup {
    fn from(g: Group) -> Self {
        match g {
            Group::Sighted => WalkerGroup::Sighted,
            Group::LongCane => WalkerGroup::LongCane,
            Group::GuideDog => WalkerGroup::GuideDog,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
    Plotdata,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Table => ReportFormat::Table,
            Format::Plotdata => ReportFormat::PlotData,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Cohort description (participants, profiles, seed) as JSON; the
    /// flags below are ignored when given.
    #[arg(long, alias = "spec")]
    profiles: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sighted")]
    group: Group,
    #[arg(long, default_value_t = 5)]
    participants: usize,
    #[arg(long, default_value_t = 6)]
    paths: usize,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 25.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CheckArgs {
    /// Directory of `<stem>.csv` / `<stem>.xml` pairs.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "timestamp")]
    timestamp_column: String,
}

#[derive(Args)]
struct DataArgs {
    /// Experiment config JSON. Everything that affects results lives here.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of `<stem>.csv` / `<stem>.xml` pairs (overrides `data_root`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    group: Option<Group>,
    /// Run without the thread pool (results are identical).
    #[arg(long)]
    sequential: bool,
}

impl DataArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data_root = d.clone();
        }
        if let Some(g) = self.group {
            cfg.group = g.into();
        }
        if self.sequential {
            cfg.train.execution = stepcount::par::Execution::Sequential;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Write the report JSON here instead of printing a table.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Mixed k-fold with this many folds (overrides the config protocol).
    #[arg(long, conflicts_with = "leave_one_out")]
    kfold: Option<usize>,
    /// Leave-one-person-out, rotating the test participant.
    #[arg(long)]
    leave_one_out: bool,
    /// With --leave-one-out, also rotate a validation participant.
    #[arg(long, requires = "leave_one_out")]
    validation: bool,
    /// Directory for report.json, report.txt, metrics.csv and loss.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json written by `experiment` or `eval`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Write files here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path, e)
}

fn emit(report: &ExperimentReport, format: Format, out: Option<&Path>) -> Result<(), Error> {
    let files = render_report(report, format.into())?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            for (name, body) in files {
                let p = dir.join(name);
                std::fs::write(&p, body).map_err(|e| io_err(&p, e))?;
                eprintln!("wrote {}", p.display());
            }
        }
        None => {
            for (name, body) in files {
                if matches!(format, Format::Plotdata) {
                    println!("# {name}");
                }
                print!("{body}");
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(a) => {
            let spec = match &a.profiles {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                    serde_json::from_str(&text)?
                }
                None => CohortSpec {
                    paths_per_participant: a.paths,
                    duration_s: a.duration,
                    sample_rate: a.rate,
                    ..CohortSpec::uniform(a.group.into(), a.participants, a.seed)
                },
            };
            let n = generate_cohort(&spec, &a.out)?;
            println!("wrote {n} walks to {}", a.out.display());
        }
        Command::Check(a) => {
            let opts = CsvOptions {
                timestamp_column: a.timestamp_column,
            };
            let audit = audit_dataset(&a.data, &opts)?;
            println!("file\tparticipant\tpath\tgroup\tsamples\tperiod_s\tsteps\tspans\tusable_s\tscored_steps");
            for w in &audit {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{}\t{:.2}\t{}",
                    w.file,
                    w.participant_id,
                    w.path_id,
                    w.group,
                    w.samples,
                    w.sample_period,
                    w.annotated_steps,
                    w.usable_spans,
                    w.usable_seconds,
                    w.scored_steps
                );
            }
            for g in [WalkerGroup::Sighted, WalkerGroup::LongCane, WalkerGroup::GuideDog] {
                let walks: Vec<_> = audit.iter().filter(|w| w.group == g).collect();
                if walks.is_empty() {
                    continue;
                }
                let people: BTreeSet<&str> = walks.iter().map(|w| w.participant_id.as_str()).collect();
                println!(
                    "# {g}: {} walks, {} participants, {:.1} usable s, {} scored steps",
                    walks.len(),
                    people.len(),
                    walks.iter().map(|w| w.usable_seconds).sum::<f64>(),
                    walks.iter().map(|w| w.scored_steps).sum::<usize>()
                );
            }
        }
        Command::Train(a) => {
            let cfg = a.data.resolve()?;
            let data = load_group(&cfg)?;
            let trained = train_full(&data, &cfg.train)?;
            save_checkpoint(&a.out, &trained.checkpoint(&cfg.train))?;
            let last = trained.loss_trace.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained on {} windows for {} steps, final loss {last:.6}; saved {}",
                trained.train_windows,
                trained.loss_trace.len(),
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let cfg = a.data.resolve()?;
            let trained = TrainedModel::from_checkpoint(load_checkpoint(&a.model)?)?;
            let mut cfg = cfg;
            cfg.train.timesteps = trained.timesteps;
            let data = load_group(&cfg)?;
            let report = evaluate_full(&trained, &data, &cfg)?;
            match a.out {
                Some(path) => {
                    std::fs::write(&path, report.to_json()?).map_err(|e| io_err(&path, e))?;
                    eprintln!("wrote {}", path.display());
                }
                None => emit(&report, a.format, None)?,
            }
        }
        Command::Experiment(a) => {
            let mut cfg = a.data.resolve()?;
            if let Some(k) = a.kfold {
                cfg.protocol = Protocol::Mixed { k };
            } else if a.leave_one_out {
                cfg.protocol = Protocol::LeaveOneOut {
                    test_participant: None,
                    validation: a.validation,
                };
            }
            cfg.validate()?;
            if let Some(out) = a.out {
                cfg.output_dir = out;
            }
            let report = run_experiment(&cfg)?;
            for p in write_report(&report, &cfg.output_dir)? {
                eprintln!("wrote {}", p.display());
            }
            emit(&report, Format::Table, None)?;
            if report.mean_test.is_none() {
                return Err(Error::NoValidSegments);
            }
        }
        Command::Report(a) => {
            let text = std::fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
            let report = ExperimentReport::from_json(&text)?;
            emit(&report, a.format, a.out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_divergence() {
                4
            } else if e.is_data_error() {
                3
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}
