//! Synthetic comparison sweeps of GFM and F-GFM.
//!
//! Each `(scenario, repetition)` pair draws a fresh network and its data
//! from streams derived from `(seed, scenario, repetition)`, so adding or
//! removing methods never changes the data and all methods are compared on
//! the same samples. Smaller training sets are prefixes of the largest one.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discover::{discover_partition, CiOptions, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::estimate::{train_estimator, EstimatorOptions, TrainOptions, TrainedEstimator, DEFAULT_LAMBDA_GRID};
use crate::factor::LabelPartition;
use crate::gfm::{f_measure, gfm, LabelVector};
use crate::oracle::{brute_force_maximizer, exact_p_matrix, expected_f};
use crate::rng::{derive_seed, stream};
use crate::synth::{ancestral_sample, exact_conditional, sample_cpts, scenario_structure, BayesNetSpec, ScenarioId};

const STREAM_NETWORK: u64 = 0;
const STREAM_TEST: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_FIT: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// One block holding all labels.
    #[serde(rename = "GFM")]
    Gfm,
    /// The scenario's true partition.
    #[serde(rename = "FGFM_true")]
    FgfmTrue,
    /// A partition discovered on the training set.
    #[serde(rename = "FGFM_ilf")]
    FgfmIlf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gfm, Method::FgfmTrue, Method::FgfmIlf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gfm => "GFM",
            Self::FgfmTrue => "FGFM_true",
            Self::FgfmIlf => "FGFM_ilf",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenarios: Vec<ScenarioId>,
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub lambda_grid: Vec<f64>,
    /// How many leading test inputs to also score under the true
    /// conditional distribution (0 disables it).
    pub truth_inputs: usize,
    /// Record wall-clock times; off keeps result files reproducible.
    pub record_timing: bool,
    pub estimator: EstimatorOptions,
    pub ci: CiOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioId::ALL.to_vec(),
            train_sizes: vec![50, 100, 200, 500, 1000],
            test_size: 2000,
            repetitions: 20,
            seed: 0,
            methods: Method::ALL.to_vec(),
            alpha: DEFAULT_ALPHA,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            truth_inputs: 0,
            record_timing: false,
            estimator: EstimatorOptions::default(),
            ci: CiOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.scenarios.is_empty() {
            return bad("no scenarios");
        }
        if self.methods.is_empty() {
            return bad("no methods");
        }
        if self.train_sizes.is_empty() || self.train_sizes.contains(&0) {
            return bad("train sizes must be non-empty and positive");
        }
        if self.test_size == 0 || self.repetitions == 0 {
            return bad("test size and repetitions must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return bad("ridge grid must be non-empty, finite and non-negative");
        }
        Ok(())
    }
}

/// True-distribution scores averaged over the evaluated test inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    /// Expected F of the method's predictions.
    pub method_f: f64,
    /// Expected F of the Bayes-optimal predictions.
    pub envelope_f: f64,
    pub inputs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: ScenarioId,
    pub method: Method,
    pub train_size: usize,
    pub repetition: usize,
    /// Mean per-instance F-measure on the test set; NaN when `error` is set.
    pub mean_f: f64,
    pub wall_time_ms: f64,
    /// Test instances whose estimated matrix implied `d_0` below the
    /// estimator tolerance; their predictions use the clamped value.
    pub flagged: usize,
    pub truth: Option<TruthScore>,
    pub error: Option<String>,
}

/// Anything that maps a feature vector to a label prediction.
pub trait Predictor {
    fn predict_labels(&self, x: &[u8]) -> Result<LabelVector>;
}

impl Predictor for TrainedEstimator {
    fn predict_labels(&self, x: &[u8]) -> Result<LabelVector> {
        self.predict(x).map(|p| p.h)
    }
}

/// Exhaustive maximizer under the network's true conditional.
pub struct BruteForcePredictor<'a>(pub &'a BayesNetSpec);

impl Predictor for BruteForcePredictor<'_> {
    fn predict_labels(&self, x: &[u8]) -> Result<LabelVector> {
        brute_force_maximizer(&exact_conditional(self.0, x)?).map(|p| p.h)
    }
}

/// GFM fed the exact P matrix of the network's true conditional.
pub struct ExactGfmPredictor<'a>(pub &'a BayesNetSpec);

impl Predictor for ExactGfmPredictor<'_> {
    fn predict_labels(&self, x: &[u8]) -> Result<LabelVector> {
        let (p, p_zero) = exact_p_matrix(&exact_conditional(self.0, x)?);
        gfm(&p, p_zero).map(|p| p.h)
    }
}

/// Expected F of a predictor's output at `x` under the true `p(y | x)`.
pub fn evaluate_on_truth(bn: &BayesNetSpec, predictor: &dyn Predictor, x: &[u8]) -> Result<f64> {
    let dist = exact_conditional(bn, x)?;
    expected_f(&dist, &predictor.predict_labels(x)?)
}

struct Repetition {
    bn: BayesNetSpec,
    partition: LabelPartition,
    train: crate::synth::Dataset,
    test: crate::synth::Dataset,
}

fn draw_repetition(cfg: &ExperimentConfig, scenario: ScenarioId, rep: usize) -> Result<Repetition> {
    let path = |purpose: u64| [u64::from(scenario.index()), rep as u64, purpose];
    let (skeleton, partition) = scenario_structure(scenario);
    let bn = sample_cpts(&skeleton, &mut stream(cfg.seed, &path(STREAM_NETWORK)))?;
    let test = ancestral_sample(&bn, cfg.test_size, &mut stream(cfg.seed, &path(STREAM_TEST)));
    let max_train = cfg.train_sizes.iter().copied().max().unwrap_or(0);
    let train = ancestral_sample(&bn, max_train, &mut stream(cfg.seed, &path(STREAM_TRAIN)));
    Ok(Repetition { bn, partition, train, test })
}

struct Scored {
    mean_f: f64,
    flagged: usize,
    truth: Option<TruthScore>,
}

fn score(est: &TrainedEstimator, rep: &Repetition, truth_inputs: usize) -> Result<Scored> {
    let mut cache: HashMap<Vec<u8>, (LabelVector, bool)> = HashMap::new();
    let mut total = 0.0;
    let mut flagged = 0;
    for r in 0..rep.test.len() {
        let x = rep.test.x(r);
        if !cache.contains_key(x) {
            let (pred, flag) = est.predict_flagged(x)?;
            cache.insert(x.to_vec(), (pred.h, flag));
        }
        let (h, flag) = &cache[x];
        flagged += usize::from(*flag);
        total += f_measure(&LabelVector::new(rep.test.y(r).to_vec())?, h)?;
    }
    let mean_f = total / rep.test.len() as f64;

    let inputs = truth_inputs.min(rep.test.len());
    if inputs == 0 {
        return Ok(Scored { mean_f, flagged, truth: None });
    }
    let (mut method_f, mut envelope_f) = (0.0, 0.0);
    for r in 0..inputs {
        let x = rep.test.x(r);
        let dist = exact_conditional(&rep.bn, x)?;
        method_f += expected_f(&dist, &cache[x].0)?;
        envelope_f += brute_force_maximizer(&dist)?.expected_f;
    }
    let n = inputs as f64;
    let truth = Some(TruthScore { method_f: method_f / n, envelope_f: envelope_f / n, inputs });
    Ok(Scored { mean_f, flagged, truth })
}

fn run_repetition(cfg: &ExperimentConfig, scenario: ScenarioId, rep_index: usize) -> Vec<ResultRow> {
    let base = ResultRow {
        scenario,
        method: cfg.methods[0],
        train_size: 0,
        repetition: rep_index,
        mean_f: f64::NAN,
        wall_time_ms: 0.0,
        flagged: 0,
        truth: None,
        error: None,
    };
    let rep = match draw_repetition(cfg, scenario, rep_index) {
        Ok(r) => r,
        Err(e) => {
            return cfg
                .train_sizes
                .iter()
                .flat_map(|&n| cfg.methods.iter().map(move |&m| (n, m)))
                .map(|(n, m)| ResultRow { method: m, train_size: n, error: Some(e.to_string()), ..base.clone() })
                .collect();
        }
    };

    let mut rows = Vec::new();
    for &size in &cfg.train_sizes {
        let train = rep.train.prefix(size);
        let options = TrainOptions {
            lambda_grid: cfg.lambda_grid.clone(),
            folds: crate::estimate::DEFAULT_FOLDS,
            seed: derive_seed(cfg.seed, &[u64::from(scenario.index()), rep_index as u64, STREAM_FIT, size as u64]),
            estimator: cfg.estimator,
        };
        let mut fitted: HashMap<LabelPartition, TrainedEstimator> = HashMap::new();
        for &method in &cfg.methods {
            let started = Instant::now();
            let outcome = (|| -> Result<Scored> {
                let partition = match method {
                    Method::Gfm => LabelPartition::single(rep.train.n_labels()),
                    Method::FgfmTrue => rep.partition.clone(),
                    Method::FgfmIlf => discover_partition(&train, cfg.alpha, &cfg.ci)?.0,
                };
                if !fitted.contains_key(&partition) {
                    let est = train_estimator(&train, &partition, &options)?;
                    fitted.insert(partition.clone(), est);
                }
                score(&fitted[&partition], &rep, cfg.truth_inputs)
            })();
            let wall_time_ms = if cfg.record_timing { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            let row = ResultRow { method, train_size: size, wall_time_ms, ..base.clone() };
            rows.push(match outcome {
                Ok(s) => ResultRow { mean_f: s.mean_f, flagged: s.flagged, truth: s.truth, ..row },
                Err(e) => ResultRow { error: Some(e.to_string()), ..row },
            });
        }
    }
    rows
}

fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (a.scenario, a.method, a.train_size, a.repetition).cmp(&(b.scenario, b.method, b.train_size, b.repetition))
    });
}

/// Runs the sweep on the current rayon pool. Rows are sorted by
/// `(scenario, method, train_size, repetition)`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let jobs: Vec<(ScenarioId, usize)> = cfg
        .scenarios
        .iter()
        .flat_map(|&s| (0..cfg.repetitions).map(move |r| (s, r)))
        .collect();
    let mut rows: Vec<ResultRow> = jobs
        .into_par_iter()
        .flat_map_iter(|(s, r)| run_repetition(cfg, s, r))
        .collect();
    sort_rows(&mut rows);
    Ok(rows)
}

/// [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<ResultRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: ScenarioId,
    pub method: Method,
    pub train_size: usize,
    pub mean_f: f64,
    pub stderr: f64,
    pub n_reps: usize,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per `(scenario, method, train_size)` mean and standard error over
/// repetitions; rows with errors are skipped.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::Config("nothing to summarize".into()));
    }
    let mut groups: BTreeMap<(ScenarioId, Method, usize), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        groups.entry((r.scenario, r.method, r.train_size)).or_default().push(r.mean_f);
    }
    Ok(groups
        .into_iter()
        .map(|((scenario, method, train_size), values)| {
            let (mean_f, stderr) = mean_and_stderr(&values);
            SummaryRow { scenario, method, train_size, mean_f, stderr, n_reps: values.len() }
        })
        .collect())
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("scenario,method,train_size,repetition,mean_f,wall_time_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.10},{:.3}\n",
            r.scenario,
            r.method.name(),
            r.train_size,
            r.repetition,
            r.mean_f,
            r.wall_time_ms
        ));
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("scenario,method,train_size,mean_f,stderr,n_reps\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.10},{:.10},{}\n",
            r.scenario,
            r.method.name(),
            r.train_size,
            r.mean_f,
            r.stderr,
            r.n_reps
        ));
    }
    out
}

/// Per-row diagnostics: flagged instance counts, true-distribution scores
/// when computed, and error messages.
pub fn diagnostics_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("scenario,method,train_size,repetition,flagged,truth_f,envelope_f,truth_inputs,error\n");
    for r in rows {
        let (truth_f, envelope_f, inputs) = match r.truth {
            Some(t) => (format!("{:.10}", t.method_f), format!("{:.10}", t.envelope_f), t.inputs),
            None => (String::new(), String::new(), 0),
        };
        let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.method.name(),
            r.train_size,
            r.repetition,
            r.flagged,
            truth_f,
            envelope_f,
            inputs,
            error
        ));
    }
    out
}
