//! `imp`: simulate datasets, train and apply invariant-matching models, and
//! run the synthetic benchmark.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid spec, schema or
//! argument, 3 I/O failure, 4 fewer than two training environments,
//! 5 an environment with too few rows, 6 benchmark aborted.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use invariant_matching::data::{self, EnvDataset, EnvLabel};
use invariant_matching::engine::{self, ImpModel, DEFAULT_ALPHA_QUANTILE};
use invariant_matching::experiments::{self, Method};
use invariant_matching::scm::{self, GenConfig, ScmSpec};
use invariant_matching::{Error, Result};

#[derive(Parser)]
#[command(
    name = "imp",
    version,
    about = "Invariant matching under response interventions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model specification and list violated requirements.
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Write a model specification file.
    Spec {
        #[arg(long, value_enum)]
        kind: SpecKind,
        /// Toy model: comma-separated a(u) values, one environment each.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 2.0], allow_negative_numbers = true)]
        a: Vec<f64>,
        /// Random model: number of predictors.
        #[arg(long, default_value_t = 10)]
        d: usize,
        /// Random model: number of environments.
        #[arg(long, default_value_t = 5)]
        envs: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample every environment of a specification to CSV.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        n_per_env: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit all candidates on a training CSV and save the selected ones.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA_QUANTILE)]
        alpha_quantile: f64,
        #[arg(long)]
        max_subset_size: Option<usize>,
    },
    /// Predict the response of a test CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark preset and write the per-model report.
    Bench {
        #[arg(long, default_value = "A")]
        preset: String,
        #[arg(long)]
        n_models: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_subset_size: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SpecKind {
    Toy,
    Random,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidSpec(_)
        | Error::Schema(_)
        | Error::Json(_)
        | Error::DimensionMismatch { .. }
        | Error::LengthMismatch { .. }
        | Error::NonFiniteInput
        | Error::MissingResponse(_)
        | Error::UnknownPreset(_)
        | Error::InvalidArgument(_)
        | Error::TooManyCandidates(_) => 2,
        Error::Csv(c) if c.is_io_error() => 3,
        Error::Csv(_) => 2,
        Error::Io(_) => 3,
        Error::NoEnvironmentVariation(_) => 4,
        Error::InsufficientSamples(_) => 5,
        Error::ExperimentAborted { .. } => 6,
        _ => 1,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_datasets(path: &Path) -> Result<Vec<EnvDataset>> {
    data::read_csv(open(path)?)
}

fn load_spec(path: &Path) -> Result<ScmSpec> {
    ScmSpec::from_json(&fs::read_to_string(path)?)
}

fn cmd_validate(spec: &Path) -> Result<()> {
    let spec = load_spec(spec)?;
    let violations = scm::validate(&spec);
    if violations.is_empty() {
        println!("ok: d = {}, {} environments", spec.d, spec.alpha.len());
        return Ok(());
    }
    Err(Error::InvalidSpec(violations))
}

fn cmd_spec(kind: SpecKind, a: &[f64], d: usize, envs: u32, seed: u64, out: &Path) -> Result<()> {
    println!("seed: {seed}");
    let spec = match kind {
        SpecKind::Toy => scm::toy_scm((1u32..).zip(a.iter().copied())),
        SpecKind::Random => {
            let labels: Vec<EnvLabel> = (1..=envs).map(EnvLabel::from).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            scm::random_scm(d, &labels, &GenConfig::default(), &mut rng)?
        }
    };
    let mut w = create(out)?;
    w.write_all(spec.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    println!(
        "wrote {} (d = {}, {} environments)",
        out.display(),
        spec.d,
        spec.alpha.len()
    );
    Ok(())
}

fn cmd_simulate(spec: &Path, out: &Path, n: usize, seed: u64) -> Result<()> {
    let spec = load_spec(spec)?;
    let violations = scm::validate(&spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations));
    }
    println!("seed: {seed}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let datasets = spec
        .env_labels()
        .map(|u| scm::sample(&spec, u, n, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    for ds in &datasets {
        let path = out.join(format!("env_{}.csv", ds.env));
        let mut w = create(&path)?;
        data::write_csv(&mut w, std::slice::from_ref(ds))?;
        w.flush()?;
        println!("{}: {} rows", path.display(), ds.n());
    }
    let path = out.join("pooled.csv");
    let mut w = create(&path)?;
    data::write_csv(&mut w, &datasets)?;
    w.flush()?;
    println!("{}: {} rows", path.display(), data::pooled_rows(&datasets));
    Ok(())
}

fn cmd_train(data_path: &Path, model_path: &Path, q: f64, cap: Option<usize>) -> Result<()> {
    let train = read_datasets(data_path)?;
    let model = engine::train(&train, q, cap)?;
    let mut w = create(model_path)?;
    w.write_all(model.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    println!("candidates: {}", model.n_candidates);
    println!("epsilon: {}", model.epsilon);
    println!("selected: {}", model.selected.len());
    for c in &model.selected {
        println!("  {} rss = {}", c.feature, c.train_rss);
    }
    Ok(())
}

fn cmd_predict(model_path: &Path, data_path: &Path, out: &Path) -> Result<()> {
    let model = ImpModel::from_json(&fs::read_to_string(model_path)?)?;
    let test = read_datasets(data_path)?;
    let pred = engine::predict(&model, &test)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["env", "y_hat"])?;
    for (label, v) in data::pooled_labels(&test).iter().zip(pred.iter()) {
        w.write_record([label.as_str(), &v.to_string()])?;
    }
    w.flush()?;
    println!("wrote {} predictions to {}", pred.len(), out.display());
    if test.iter().all(|ds| ds.y.is_some()) {
        let rss = engine::evaluate_rss(&pred, &data::pooled_y(&test)?)?;
        println!("mean RSS: {rss}");
    }
    Ok(())
}

fn cmd_bench(
    preset: &str,
    n_models: Option<usize>,
    seed: u64,
    cap: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut config = experiments::preset(preset)?;
    config.seed = seed;
    config.max_subset_size = cap;
    if let Some(n) = n_models {
        config.n_models = n;
    }
    println!("seed: {seed}");
    let report = experiments::run_experiment(&config)?;
    fs::create_dir_all(out)?;
    let csv_path = out.join(format!("rss_{preset}.csv"));
    let mut w = create(&csv_path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let json_path = out.join(format!("summary_{preset}.json"));
    let mut w = create(&json_path)?;
    w.write_all(report.summary_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    for m in Method::ALL {
        let s = report.summary(m);
        println!(
            "{m}: median {} variance {} ({} models)",
            s.median, s.variance, s.count
        );
    }
    if !report.failures.is_empty() {
        println!("failed models: {}", report.failures.len());
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn configure_threads() {
    let Ok(v) = std::env::var("IMP_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not set thread count: {e}");
            }
        }
        _ => log::warn!("ignoring IMP_THREADS={v}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { spec } => cmd_validate(&spec),
        Command::Spec {
            kind,
            a,
            d,
            envs,
            seed,
            out,
        } => cmd_spec(kind, &a, d, envs, seed, &out),
        Command::Simulate {
            spec,
            out,
            n_per_env,
            seed,
        } => cmd_simulate(&spec, &out, n_per_env, seed),
        Command::Train {
            data,
            model,
            alpha_quantile,
            max_subset_size,
        } => cmd_train(&data, &model, alpha_quantile, max_subset_size),
        Command::Predict { model, data, out } => cmd_predict(&model, &data, &out),
        Command::Bench {
            preset,
            n_models,
            seed,
            max_subset_size,
            out,
        } => cmd_bench(&preset, n_models, seed, max_subset_size, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Error::InvalidSpec(v) = &e {
                let codes: Vec<&str> = v.iter().map(|v| v.code()).collect();
                eprintln!("error: invalid specification: {}", codes.join(", "));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
