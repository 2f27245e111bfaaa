use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairm2s::config;
use fairm2s::data::{
    generate_synthetic, load_dataset, save_dataset, BiasSpec, Composition, DatasetHeader,
};
use fairm2s::harness::{
    load_source, run_ablations, run_grid, summarize, DataSource, ExperimentSpec, Prepared,
    ResultRow, Summary,
};
use fairm2s::meta::{evaluate, train, AdaptingModel, MetaLearner};
use fairm2s::metrics::AggregateReport;
use fairm2s::model_io::ModelFile;
use fairm2s::parallel::Executor;
use fairm2s::{Error, Result};

mod pareto;

/// Fairness-aware meta-learning for few-shot classification.
#[derive(Parser, Debug)]
#[command(name = "fairm2s", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic biased dataset.
    Gen(GenArgs),
    /// Meta-train a model from a run configuration.
    Train(TrainArgs),
    /// Evaluate a trained model on sampled few-shot tasks.
    Eval(EvalArgs),
    /// Run the loss-weight grid over shots and seeds.
    Grid(SweepArgs),
    /// Run the six ablation arms over shots and seeds.
    Ablate(SweepArgs),
    /// Tag results as dominated or non-dominated on (accuracy, Eopp).
    Pareto(ParetoArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    t: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    groups: usize,
    #[arg(long, default_value_t = 0.8)]
    delta: f64,
    #[arg(long, default_value_t = 0.7)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest; overrides the configuration's data source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset manifest; defaults to the data source stored in the model.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    shots: usize,
    #[arg(long, default_value_t = 100)]
    tasks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Also append the CSV row to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Results CSV; existing cells are kept and skipped.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct ParetoArgs {
    /// A results CSV or a previous pareto output.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Grid(a) => cmd_sweep(&a, false),
        Command::Ablate(a) => cmd_sweep(&a, true),
        Command::Pareto(a) => pareto::run(&a.results, &a.out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Malformed { .. } | Error::Data(_) => 2,
        _ => 3,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let header = DatasetHeader::new(a.t, a.d, a.groups);
    let bias = BiasSpec {
        delta: a.delta,
        group_ratio: a.ratio,
        label_skew: vec![0.5; a.groups],
        seed: a.seed,
        ..BiasSpec::default()
    };
    if a.n == 0 || a.t == 0 || a.d == 0 || a.groups == 0 {
        return Err(Error::Config("n, t, d and groups must be positive".into()));
    }
    bias.validate(a.groups)?;
    let records = generate_synthetic(a.n, &header, &bias)?;
    let header = DatasetHeader {
        n_participants: records.len(),
        ..header
    };
    let manifest = save_dataset(&header, &records, &a.out)?;
    println!("{}", manifest.display());
    println!(
        "sequence length {}, feature dim {}",
        header.seq_len, header.input_dim
    );
    print!("{}", Composition::of(&records, header.n_groups));
    Ok(())
}

fn load_spec(
    path: &Path,
    data: Option<&PathBuf>,
    threads: Option<usize>,
) -> Result<ExperimentSpec> {
    let mut spec = config::load_config(path)?;
    if let Some(m) = data {
        spec.data = DataSource::Manifest(m.clone());
    }
    if let Some(t) = threads {
        spec.base.threads = t;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut spec = load_spec(&a.config, a.data.as_ref(), a.threads)?;
    let (header, records) = load_source(&spec.data)?;
    let data = Prepared::from_records(header, &records, spec.test_fraction, spec.split_seed)?;
    spec.backbone = data.backbone(&spec.backbone);
    let learner = MetaLearner::new(spec.backbone, spec.base.clone(), data.header.n_groups)?;

    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let log_path = a.out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    let mut log_err = None;
    let outcome = train(&learner, &data.train, Some(&data.test), &mut |entry| {
        let line = serde_json::to_string(entry).expect("log entries serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        eprintln!(
            "epoch {:>4}  query loss {:.4}  tasks {} ({} failed)",
            entry.epoch, entry.mean_query_loss, entry.tasks_used, entry.tasks_failed
        );
    })?;
    if let Some(e) = log_err {
        return Err(io_err(&log_path, e));
    }

    let model = ModelFile {
        seq_len: data.header.seq_len,
        input_dim: data.header.input_dim,
        n_groups: data.header.n_groups,
        theta: outcome.state.theta,
        adversary: outcome.state.adversary,
        standardizer: data.standardizer,
        spec,
    };
    let model_path = a.out.join("model.fm2s");
    model.save(&model_path)?;
    println!("{}", model_path.display());
    println!("{}", log_path.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if ![1, 3, 5].contains(&a.shots) {
        return Err(Error::Config(format!(
            "--shots must be 1, 3 or 5, got {}",
            a.shots
        )));
    }
    if a.tasks == 0 {
        return Err(Error::Config("--tasks must be positive".into()));
    }
    let model = ModelFile::load(&a.model)?;
    let (header, records) = match &a.data {
        Some(m) => load_dataset(m)?,
        None => load_source(&model.spec.data)?,
    };
    model.check_header(&header)?;
    let split = fairm2s::data::split_participants(
        &records,
        model.spec.test_fraction,
        model.spec.split_seed,
    )?;
    let (_, test) = split.pools(&records);
    let test = model.standardizer.apply_all(&test);

    let mut meta = model.spec.base.clone();
    meta.shots = a.shots;
    let learner = MetaLearner::new(model.spec.backbone, meta, model.n_groups)?;
    let predictor = AdaptingModel {
        learner: &learner,
        theta: &model.theta,
    };
    let exec = Executor::with_threads(a.threads);
    let ev = evaluate(
        &predictor,
        &test,
        model.n_groups,
        a.shots,
        learner.config().query_size,
        a.tasks,
        a.seed,
        &exec,
    )?;
    print_report(&ev.aggregate, a.shots);
    if let Some(path) = &a.csv {
        append_report(path, &ev.aggregate, a.shots)?;
    }
    Ok(())
}

fn print_report(report: &AggregateReport, shots: usize) {
    println!("{shots}-shot over {} tasks", report.n_tasks);
    print!("{report}");
    println!("shots,{}", AggregateReport::CSV_HEADER);
    println!("{shots},{}", report.to_csv_row());
}

fn append_report(path: &Path, report: &AggregateReport, shots: usize) -> Result<()> {
    let fresh = path.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(&format!("shots,{}\n", AggregateReport::CSV_HEADER));
    }
    text.push_str(&format!("{shots},{}\n", report.to_csv_row()));
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

fn cmd_sweep(a: &SweepArgs, ablate: bool) -> Result<()> {
    let spec = load_spec(&a.config, a.data.as_ref(), a.threads)?;
    let mut on_row = |r: &ResultRow| {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        eprintln!(
            "{} shot {} seed {}: acc {} eopp {} ({:.1}s) {}",
            r.config_id,
            r.shot,
            r.seed,
            fmt(r.accuracy),
            fmt(r.eopp),
            r.wall_time_s,
            if r.status == fairm2s::harness::Status::Ok {
                ""
            } else {
                "FAILED"
            }
        );
    };
    let rows = if ablate {
        run_ablations(&spec, &a.results, &mut on_row)?
    } else {
        run_grid(&spec, &a.results, &mut on_row)?
    };
    print_summary(&summarize(&rows));
    Ok(())
}

fn print_summary(summary: &Summary) {
    println!(
        "config_id,shot,accuracy_mean,accuracy_std,eopp_mean,eopp_std,di_mean,eodd_mean,failed"
    );
    for r in &summary.rows {
        println!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            r.config_id,
            r.shot,
            r.accuracy.mean,
            r.accuracy.std,
            r.eopp.mean,
            r.eopp.std,
            r.di.mean,
            r.eodd.mean,
            r.failed
        );
    }
    for (shot, front) in &summary.pareto {
        let tags: Vec<&str> = front.iter().map(|p| p.tag.as_str()).collect();
        println!("# {shot}-shot non-dominated: {}", tags.join(" "));
    }
}
