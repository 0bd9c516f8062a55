use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use tsa_core::dataset::{build_dataset, enumerate_scenarios, BuildConfig, Dataset, GridConfig};
use tsa_core::grid::{load_network, FaultSpec, Network};
use tsa_core::labeling::{find_cct, label_trace, margin_for, CctSearchConfig, Criterion};
use tsa_core::monitor::{run_stream, write_replay, Monitor};
use tsa_core::nn::Model;
use tsa_core::tds::{clearing_time_s, simulate, solve_equilibrium, Scenario};
use tsa_core::train::{evaluate, log_csv, summarize_reports, train, TrainConfig};

/// Bad input from the user: exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "tsa", version, about = "Transient stability assessment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and label a scenario grid into a dataset.
    Generate(GenerateArgs),
    /// Simulate and label a single fault scenario.
    Label(LabelArgs),
    /// Train the model on a dataset.
    Train(TrainArgs),
    /// Evaluate checkpoints on a dataset split.
    Eval(EvalArgs),
    /// Assess a stream of voltage snapshots.
    Monitor(MonitorArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GridPreset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct NetworkArg {
    /// Network file; the bundled 39-bus case when omitted.
    #[arg(long)]
    network: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    net: NetworkArg,
    /// TOML file with `seed`, `[grid]` and `[train]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    grid: Option<GridPreset>,
    #[arg(long, value_delimiter = ',')]
    lines: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    locations: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    motor_shares: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    cycles: Option<Vec<u32>>,
    /// Feature window in steps.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Only list the scenarios.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    net: NetworkArg,
    #[arg(long)]
    line: usize,
    #[arg(long, default_value_t = 0.5)]
    location: f64,
    #[arg(long, default_value_t = 0.6)]
    motor_share: f64,
    #[arg(long)]
    cycles: f64,
    /// Skip the critical clearing time searches.
    #[arg(long)]
    no_cct: bool,
    /// Write the trace in binary form.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the trace as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the trace as a monitor stream.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file written by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    min_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint; repeat the flag to aggregate several.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// Split seed used for training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitPart,
    /// Also write the metrics as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    #[command(flatten)]
    net: NetworkArg,
    #[arg(long)]
    model: PathBuf,
    /// Stream file; standard input when omitted or `-`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Event output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    grid: Option<GridConfig>,
    train: Option<TrainConfig>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
}

fn network(arg: &NetworkArg) -> Result<Network> {
    match &arg.network {
        None => Ok(Network::new_england_39()),
        Some(p) if !p.exists() => Err(usage(format!("network file not found: {}", p.display()))),
        Some(p) => load_network(p).map_err(|e| usage(format!("cannot load network {}: {e}", p.display()))),
    }
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if !p.is_file() {
        return Err(usage(format!("{what} not found: {}", p.display())));
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let net = network(&a.net)?;
    let file = read_config(a.config.as_deref())?;
    let mut grid = match (a.grid, file.grid) {
        (Some(GridPreset::Paper), _) => GridConfig::paper(&net),
        (Some(GridPreset::Desk), _) | (None, None) => GridConfig::desk(),
        (None, Some(g)) => g,
    };
    if let Some(v) = a.lines {
        grid.lines = v;
    }
    if let Some(v) = a.locations {
        grid.location_fractions = v;
    }
    if let Some(v) = a.motor_shares {
        grid.motor_fractions = v;
    }
    if let Some(v) = a.cycles {
        grid.clearing_cycles = v;
    }
    if let Some(w) = a.window {
        grid.window_steps = w;
    }
    grid.validate(&net).map_err(|e| usage(e.to_string()))?;
    let seed = a.seed.or(file.seed).unwrap_or(0);

    if a.dry_run {
        let scenarios = enumerate_scenarios(&grid);
        let mut out = BufWriter::new(io::stdout().lock());
        writeln!(out, "scenarios = {}", scenarios.len())?;
        writeln!(out, "id,line,location_fraction,motor_fraction,clearing_cycles")?;
        for s in scenarios {
            writeln!(out, "{},{},{},{},{}", s.id, s.line, s.location_fraction, s.motor_fraction, s.clearing_cycles)?;
        }
        return Ok(());
    }

    let cfg = BuildConfig::new(grid, &net, seed);
    log::info!("building {} scenarios", cfg.grid.scenario_count());
    let built = build_dataset(&net, &cfg)?;
    for f in &built.failures {
        log::warn!("scenario {} failed: {}", f.id, f.message);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    built.dataset.save(a.out.join("dataset.tsd"))?;
    write_file(&a.out.join("labels.csv"), built.dataset.labels_csv())?;
    write_file(&a.out.join("manifest.txt"), built.manifest.to_text())?;
    println!("samples = {}", built.dataset.len());
    println!("failures = {}", built.failures.len());
    println!("dataset = {}", a.out.join("dataset.tsd").display());
    Ok(())
}

fn cmd_label(a: LabelArgs) -> Result<()> {
    let net = network(&a.net)?;
    let fault = FaultSpec::bolted(a.line, a.location);
    net.validate_fault(&fault).map_err(|e| usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&a.motor_share) || !(a.cycles > 0.0) {
        return Err(usage("motor share must lie in [0, 1] and cycles must be positive"));
    }
    let eq = solve_equilibrium(&net, a.motor_share)?;
    let trace = simulate(&net, &Scenario::new(fault, a.motor_share, a.cycles), &eq)?;
    let labels = label_trace(&trace)?;
    println!("tas_stable = {}", labels.tas_stable);
    println!("tvs_stable = {}", labels.tvs_stable);
    println!("tsi_deg = {}", labels.tsi_deg);
    println!("v_min_pu = {}", labels.v_min_pu);
    println!("violation_duration_s = {}", labels.violation_duration_s);
    println!("diverged = {}", trace.diverged);
    println!("islanded = {}", trace.islanded);
    if !a.no_cct {
        let cfg = CctSearchConfig::default_for(net.nominal_hz);
        let t_clear = clearing_time_s(a.cycles, net.nominal_hz);
        for (name, c) in [("tas", Criterion::Tas), ("tvs", Criterion::Tvs)] {
            let r = find_cct(&net, fault, &eq, c, &cfg)?;
            let m = margin_for(&r, t_clear)?;
            println!("{name}_cct_s = {}", r.t_cct_s);
            println!("{name}_bracket = {:?}", r.bracket);
            println!("{name}_margin_or_degree = {}", m.signed());
        }
    }
    if let Some(p) = &a.trace {
        trace.write_binary(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))?;
    }
    if let Some(p) = &a.csv {
        write_file(p, trace.to_csv())?;
    }
    if let Some(p) = &a.replay {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_replay(&trace, Some(a.line), BufWriter::new(f))?;
    }
    Ok(())
}

fn load_dataset(p: &Path) -> Result<Dataset> {
    require_file(p, "dataset")?;
    Dataset::load(p).with_context(|| format!("reading dataset {}", p.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = read_config(a.config.as_deref())?;
    let mut cfg = file.train.unwrap_or_default();
    if let Some(s) = a.seed.or(file.seed) {
        cfg.seed = s;
    }
    if let Some(v) = a.repeats {
        cfg.repeats = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.min_epochs {
        cfg.min_epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.threshold {
        cfg.accuracy_threshold = v;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let ds = load_dataset(&a.data)?;
    let split = ds.split(cfg.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let mut reports = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let run = TrainConfig { seed: cfg.seed + r as u64, ..cfg.clone() };
        let suffix = if cfg.repeats == 1 { String::new() } else { format!("_{r}") };
        let outcome = train(&ds, &split, &run)?;
        let ckpt = a.out.join(format!("model{suffix}.tsm"));
        outcome.model.save(&ckpt)?;
        write_file(&a.out.join(format!("train_log{suffix}.csv")), log_csv(&outcome.log))?;
        let report = evaluate(&outcome.model, &ds, &split.test_ids)?;
        write_file(&a.out.join(format!("eval{suffix}.txt")), report.to_text())?;
        println!(
            "run {r}: seed {} stop {:?} after {} epochs, best epoch {}, test accuracy tas {:.4} tvs {:.4}",
            run.seed,
            outcome.stop,
            outcome.log.len(),
            outcome.best_epoch,
            report.tas.metrics.accuracy,
            report.tvs.metrics.accuracy
        );
        println!("checkpoint = {}", ckpt.display());
        reports.push(report);
    }
    if cfg.repeats > 1 {
        let summary = summarize_reports(&reports);
        write_file(&a.out.join("summary.txt"), &summary)?;
        print!("{summary}");
    } else {
        print!("{}", reports[0].to_text());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let split = ds.split(a.seed)?;
    let ids: Vec<usize> = match a.split {
        SplitPart::Train => split.train_ids,
        SplitPart::Val => split.val_ids,
        SplitPart::Test => split.test_ids,
        SplitPart::All => (0..ds.len()).collect(),
    };
    let mut reports = Vec::with_capacity(a.model.len());
    for p in &a.model {
        require_file(p, "checkpoint")?;
        let model = Model::load(p).with_context(|| format!("reading checkpoint {}", p.display()))?;
        let report = evaluate(&model, &ds, &ids).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        reports.push(report);
    }
    if reports.len() == 1 {
        print!("{}", reports[0].to_text());
    } else {
        print!("{}", summarize_reports(&reports));
    }
    if let Some(p) = &a.csv {
        write_file(p, reports.iter().map(|r| r.to_csv()).collect::<String>())?;
    }
    Ok(())
}

fn cmd_monitor(a: MonitorArgs) -> Result<()> {
    let net = network(&a.net)?;
    require_file(&a.model, "checkpoint")?;
    let model = Model::load(&a.model).with_context(|| format!("reading checkpoint {}", a.model.display()))?;
    let window = model.config.input_dim / 2;
    let mut mon = Monitor::new(model, &net, window).map_err(|e| usage(e.to_string()))?;
    let out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let summary = match a.input.as_deref() {
        Some(p) if p != Path::new("-") => {
            require_file(p, "stream")?;
            run_stream(&mut mon, BufReader::new(File::open(p)?), out)?
        }
        _ => run_stream(&mut mon, io::stdin().lock(), out)?,
    };
    log::info!("{} events, {} lines skipped", summary.events, summary.skipped);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Label(a) => cmd_label(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Monitor(a) => cmd_monitor(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
