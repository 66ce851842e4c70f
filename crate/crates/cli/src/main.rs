use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::Rng;

use fmax_core::discover::{discover_partition, write_report_csv, CiOptions, DEFAULT_ALPHA};
use fmax_core::estimate::{train_estimator, TrainOptions, TrainedEstimator};
use fmax_core::factor::{f_gfm, FactorStats};
use fmax_core::harness::{diagnostics_csv, results_csv, run_experiment, summarize, summary_csv, ExperimentConfig, Method};
use fmax_core::io::{read_dataset_csv, write_dataset_csv, write_labels_csv};
use fmax_core::oracle::{brute_force_maximizer, exact_p_matrix, expected_f};
use fmax_core::rng::stream;
use fmax_core::synth::{ancestral_sample, sample_cpts, scenario_structure, Dataset, ScenarioId};
use fmax_core::{gfm, Error, JointLabelDistribution, LabelPartition};

const ORACLE_MAX_LABELS: usize = 10;
const ORACLE_DEVIATION: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "fmax", version, about = "Bayes-optimal F-measure prediction for multi-label data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from one of the benchmark networks.
    Generate {
        /// Scenario 1-4 (or DAG1-DAG4).
        #[arg(long)]
        dag: ScenarioId,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for data.csv, bn.json and partition.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the per-block probability models.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `single`, `discover`, or a partition JSON file.
        #[arg(long, default_value = "single")]
        partition: String,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Comma-separated ridge strengths tried by cross-validation.
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict label vectors for every row of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a label partition with pairwise independence tests.
    Discover {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV with one line per tested pair.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a comparison sweep over scenarios, sizes and methods.
    Experiment(ExperimentArgs),
    /// Compare GFM and F-GFM against exhaustive search on random joints.
    OracleCheck {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    scenarios: Option<Vec<ScenarioId>>,
    #[arg(long, value_delimiter = ',')]
    train_sizes: Option<Vec<usize>>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Score this many test inputs under the true distribution.
    #[arg(long)]
    truth_inputs: Option<usize>,
    #[arg(long)]
    record_timing: bool,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Per-row flag counts, true-distribution scores and errors.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Usage(_) => 1,
        Failure::Core(Error::Capacity(_) | Error::Config(_)) => 1,
        Failure::Core(Error::Inconsistent { .. } | Error::Numerical(_)) => 3,
        Failure::Core(_) => 2,
    }
}

fn write_atomic(path: &Path, contents: &str) -> CliResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn read_data(path: &Path) -> CliResult<Dataset> {
    Ok(read_dataset_csv(BufReader::new(File::open(path)?))?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn generate(dag: ScenarioId, n: usize, seed: u64, out: &Path) -> CliResult {
    let (skeleton, partition) = scenario_structure(dag);
    let bn = sample_cpts(&skeleton, &mut stream(seed, &[0]))?;
    let data = ancestral_sample(&bn, n, &mut stream(seed, &[1]));
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("data.csv"), &write_dataset_csv(&data)?)?;
    write_atomic(&out.join("bn.json"), &serde_json::to_string_pretty(&bn)?)?;
    write_atomic(&out.join("partition.json"), &serde_json::to_string_pretty(&partition)?)?;
    Ok(())
}

fn train(
    data: &Path,
    partition: &str,
    alpha: f64,
    lambda_grid: Option<Vec<f64>>,
    seed: u64,
    out: &Path,
) -> CliResult {
    let data = read_data(data)?;
    if data.n_labels() == 0 {
        return Err(Error::Dimension("dataset has no label columns".into()).into());
    }
    let partition = match partition {
        "single" => LabelPartition::single(data.n_labels()),
        "discover" => {
            check_alpha(alpha)?;
            discover_partition(&data, alpha, &CiOptions::default())?.0
        }
        file => read_json::<LabelPartition>(Path::new(file))?,
    };
    let mut options = TrainOptions { seed, ..Default::default() };
    if let Some(grid) = lambda_grid {
        if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Failure::Usage("--lambda-grid needs finite non-negative values".into()));
        }
        options.lambda_grid = grid;
    }
    let model = train_estimator(&data, &partition, &options)?;
    write_atomic(out, &serde_json::to_string_pretty(&model)?)
}

fn predict(model: &Path, data: &Path, out: &Path) -> CliResult {
    let model: TrainedEstimator = read_json(model)?;
    let data = read_data(data)?;
    if data.n_features() != model.n_features {
        return Err(Error::Dimension(format!(
            "model expects {} features, data has {}",
            model.n_features, data.n_features()
        ))
        .into());
    }
    let mut rows = Vec::with_capacity(data.len());
    let mut flagged = 0usize;
    for r in 0..data.len() {
        let (pred, flag) = model.predict_flagged(data.x(r))?;
        flagged += usize::from(flag);
        rows.push(pred.h.as_slice().to_vec());
    }
    if flagged > 0 {
        eprintln!("warning: {flagged} rows implied a negative d_0 beyond tolerance and were clamped");
    }
    write_atomic(out, &write_labels_csv(model.partition.m(), &rows)?)
}

fn check_alpha(alpha: f64) -> CliResult {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn discover(data: &Path, alpha: f64, out: &Path, report: Option<&Path>) -> CliResult {
    check_alpha(alpha)?;
    let data = read_data(data)?;
    let (partition, tests) = discover_partition(&data, alpha, &CiOptions::default())?;
    write_atomic(out, &serde_json::to_string_pretty(&partition)?)?;
    if let Some(path) = report {
        write_atomic(path, &write_report_csv(&tests))?;
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> CliResult {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => read_json(path).map_err(|e| match e {
            Failure::Core(Error::Json(j)) => Failure::Usage(format!("bad config: {j}")),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.scenarios {
        cfg.scenarios = v;
    }
    if let Some(v) = args.train_sizes {
        cfg.train_sizes = v;
    }
    if let Some(v) = args.test_size {
        cfg.test_size = v;
    }
    if let Some(v) = args.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.methods {
        cfg.methods = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.lambda_grid {
        cfg.lambda_grid = v;
    }
    if let Some(v) = args.truth_inputs {
        cfg.truth_inputs = v;
    }
    cfg.record_timing |= args.record_timing;
    cfg.validate()?;

    let rows = run_experiment(&cfg)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} rows failed; see the diagnostics output", rows.len());
    }
    write_atomic(&args.out, &results_csv(&rows))?;
    if let Some(path) = &args.summary {
        write_atomic(path, &summary_csv(&summarize(&rows)?))?;
    }
    if let Some(path) = &args.diagnostics {
        write_atomic(path, &diagnostics_csv(&rows))?;
    }
    Ok(())
}

/// Random partition of `0..m` into contiguous runs of a shuffled order.
fn random_partition<R: Rng>(m: usize, rng: &mut R) -> fmax_core::Result<LabelPartition> {
    let mut labels: Vec<usize> = (0..m).collect();
    labels.shuffle(rng);
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < m {
        let len = rng.random_range(1..=m - start);
        blocks.push(labels[start..start + len].to_vec());
        start += len;
    }
    LabelPartition::new(m, blocks)
}

fn oracle_check(m: usize, trials: usize, seed: u64) -> CliResult {
    if m == 0 {
        return Err(Failure::Usage("--m must be at least 1".into()));
    }
    if m > ORACLE_MAX_LABELS {
        return Err(Error::Capacity(format!("--m {m} exceeds the {ORACLE_MAX_LABELS}-label oracle bound")).into());
    }
    let (mut gfm_dev, mut fgfm_dev) = (0.0f64, 0.0f64);
    for t in 0..trials {
        let mut rng = stream(seed, &[m as u64, t as u64]);

        let dense = JointLabelDistribution::random(m, &mut rng)?;
        let best = brute_force_maximizer(&dense)?.expected_f;
        let (p, p_zero) = exact_p_matrix(&dense);
        let pred = gfm(&p, p_zero)?;
        gfm_dev = gfm_dev.max((expected_f(&dense, &pred.h)? - best).abs()).max((pred.expected_f - best).abs());

        let partition = random_partition(m, &mut rng)?;
        let factors = partition
            .blocks()
            .iter()
            .map(|b| JointLabelDistribution::random(b.len(), &mut rng))
            .collect::<fmax_core::Result<Vec<_>>>()?;
        let joint = JointLabelDistribution::from_factors(&partition, &factors)?;
        let best = brute_force_maximizer(&joint)?.expected_f;
        let stats = partition
            .blocks()
            .iter()
            .zip(&factors)
            .map(|(b, f)| FactorStats::new(b.clone(), exact_p_matrix(f).0))
            .collect::<fmax_core::Result<Vec<_>>>()?;
        let pred = f_gfm(&partition, &stats)?;
        fgfm_dev = fgfm_dev.max((expected_f(&joint, &pred.h)? - best).abs()).max((pred.expected_f - best).abs());
    }
    let worst = gfm_dev.max(fgfm_dev);
    println!("m={m} trials={trials} seed={seed}");
    println!("gfm max deviation: {gfm_dev:e}");
    println!("f-gfm max deviation: {fgfm_dev:e}");
    if worst > ORACLE_DEVIATION {
        return Err(Error::Numerical(format!("deviation {worst:e} exceeds {ORACLE_DEVIATION:e}")).into());
    }
    println!("ok");
    Ok(())
}

fn configure_threads() -> CliResult {
    if let Ok(v) = std::env::var("FMAX_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("FMAX_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::Generate { dag, n, seed, out } => generate(dag, n, seed, &out),
        Command::Train { data, partition, alpha, lambda_grid, seed, out } => {
            train(&data, &partition, alpha, lambda_grid, seed, &out)
        }
        Command::Predict { model, data, out } => predict(&model, &data, &out),
        Command::Discover { data, alpha, out, report } => discover(&data, alpha, &out, report.as_deref()),
        Command::Experiment(args) => experiment(args),
        Command::OracleCheck { m, trials, seed } => oracle_check(m, trials, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
