//! Two-step estimation of per-block P matrices.
//!
//! For a block of `m_k` labels, one multinomial model predicts the block's
//! positive count `s` (classes `0..=m_k`) from the features, and one binary
//! model per label predicts `y_i` from the features plus `s`. The chain rule
//! `p(y_i = 1, s | x) = p(s | x) p(y_i = 1 | s, x)` combines them.

pub mod logistic;
pub mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{f_gfm_clamped, f_gfm_with, FactorStats, FgfmOptions, LabelPartition};
use crate::gfm::{gfm_from_p_only_with_tolerance, PMatrix, Prediction, ESTIMATED_TOLERANCE};
use crate::rng::derive_seed;
use crate::synth::Dataset;

pub use logistic::{
    fit_binary, fit_multinomial, select_lambda, BinaryModel, BinaryTask, MulticlassTask,
    MultinomialModel,
};

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];
pub const DEFAULT_FOLDS: usize = 3;

const MAX_SATURATED_FEATURES: usize = 12;

/// How binary features become model covariates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// The raw 0/1 values.
    #[default]
    Linear,
    /// One indicator per feature pattern (`2^d` columns).
    Saturated,
}

impl FeatureMap {
    pub fn dim(self, n_features: usize) -> Result<usize> {
        match self {
            Self::Linear => Ok(n_features),
            Self::Saturated if n_features <= MAX_SATURATED_FEATURES => Ok(1 << n_features),
            Self::Saturated => Err(Error::Capacity(format!(
                "saturated encoding of {n_features} features (max {MAX_SATURATED_FEATURES})"
            ))),
        }
    }

    pub fn encode_into(self, x: &[u8], out: &mut Vec<f64>) {
        match self {
            Self::Linear => out.extend(x.iter().map(|&v| f64::from(v))),
            Self::Saturated => {
                let pattern = x.iter().enumerate().fold(0usize, |acc, (j, &v)| acc | (usize::from(v) << j));
                let start = out.len();
                out.resize(start + (1 << x.len()), 0.0);
                out[start + pattern] = 1.0;
            }
        }
    }
}

/// How the block count enters the per-label models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountEncoding {
    /// A single numeric covariate `s`.
    #[default]
    Numeric,
    /// Indicators for `s = 0..=m_k`.
    OneHot,
}

impl CountEncoding {
    fn dim(self, block_len: usize) -> usize {
        match self {
            Self::Numeric => 1,
            Self::OneHot => block_len + 1,
        }
    }

    fn encode_into(self, s: usize, block_len: usize, out: &mut Vec<f64>) {
        match self {
            Self::Numeric => out.push(s as f64),
            Self::OneHot => {
                let start = out.len();
                out.resize(start + block_len + 1, 0.0);
                out[start + s] = 1.0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub feature_map: FeatureMap,
    pub count_encoding: CountEncoding,
    /// Rescale `p(y_i = 1 | s, x)` so that the labels' probabilities sum to
    /// `s` at every level, which makes each block's P matrix imply exactly
    /// the multinomial count distribution.
    pub rescale: bool,
    /// Allowed negative slack on a recovered `d_0` at prediction time.
    pub tolerance: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            feature_map: FeatureMap::Linear,
            count_encoding: CountEncoding::Numeric,
            rescale: true,
            tolerance: ESTIMATED_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub estimator: EstimatorOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            estimator: EstimatorOptions::default(),
        }
    }
}

fn block_count(y: &[u8], block: &[usize]) -> usize {
    block.iter().map(|&i| usize::from(y[i])).sum()
}

fn check_block(data: &Dataset, block: &[usize]) -> Result<()> {
    if block.is_empty() || block.iter().any(|&i| i >= data.n_labels()) {
        return Err(Error::Dimension(format!(
            "block {block:?} out of range for {} labels",
            data.n_labels()
        )));
    }
    Ok(())
}

/// `(x, y) -> (x, s)` where `s` counts the block's positive labels.
pub fn reduce_to_count_task(data: &Dataset, block: &[usize], map: FeatureMap) -> Result<MulticlassTask> {
    check_block(data, block)?;
    let mut task = MulticlassTask::new(map.dim(data.n_features())?, block.len() + 1);
    let mut x = Vec::new();
    for r in 0..data.len() {
        x.clear();
        map.encode_into(data.x(r), &mut x);
        task.push(&x, block_count(data.y(r), block));
    }
    Ok(task)
}

/// `(x, y) -> ((x, s), y_label)` with `s` the block count.
pub fn reduce_to_label_task(
    data: &Dataset,
    block: &[usize],
    label: usize,
    map: FeatureMap,
    encoding: CountEncoding,
) -> Result<BinaryTask> {
    check_block(data, block)?;
    if !block.contains(&label) {
        return Err(Error::Dimension(format!("label {} is not in block {block:?}", label + 1)));
    }
    let mut task = BinaryTask::new(map.dim(data.n_features())? + encoding.dim(block.len()));
    let mut x = Vec::new();
    for r in 0..data.len() {
        x.clear();
        map.encode_into(data.x(r), &mut x);
        encoding.encode_into(block_count(data.y(r), block), block.len(), &mut x);
        task.push(&x, data.y(r)[label]);
    }
    Ok(task)
}

/// Chain rule: `p[i][s] = count_probs[s] * label_probs[i][s]` for `s >= 1`.
///
/// `count_probs` has `m + 1` entries and each `label_probs[i]` has `m + 1`
/// entries indexed by `s` (entry 0 is ignored).
pub fn p_matrix_from_conditionals(count_probs: &[f64], label_probs: &[Vec<f64>]) -> Result<PMatrix> {
    let m = label_probs.len();
    if count_probs.len() != m + 1 || label_probs.iter().any(|r| r.len() != m + 1) {
        return Err(Error::Dimension("conditional tables do not match block size".into()));
    }
    let mut entries = Vec::with_capacity(m * m);
    for row in label_probs {
        entries.extend((1..=m).map(|s| count_probs[s] * row[s]));
    }
    PMatrix::new(m, entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockModel {
    pub labels: Vec<usize>,
    pub count_model: MultinomialModel,
    pub count_lambda: f64,
    pub label_models: Vec<BinaryModel>,
    pub label_lambdas: Vec<f64>,
}

/// Per-block models for a label partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedEstimator {
    pub partition: LabelPartition,
    pub n_features: usize,
    pub options: EstimatorOptions,
    pub blocks: Vec<BlockModel>,
}

/// Fits one count model and one label model per block label, each with its
/// own cross-validated ridge strength.
///
/// The fold seed of model `j` in block `k` is derived from
/// `(options.seed, k, j)`, with `j = 0` for the count model.
pub fn train_estimator(
    data: &Dataset,
    partition: &LabelPartition,
    options: &TrainOptions,
) -> Result<TrainedEstimator> {
    if partition.m() != data.n_labels() {
        return Err(Error::Dimension(format!(
            "partition over {} labels for data with {}",
            partition.m(),
            data.n_labels()
        )));
    }
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let est = &options.estimator;
    let mut blocks = Vec::with_capacity(partition.len());
    for (k, block) in partition.blocks().iter().enumerate() {
        let count_task = reduce_to_count_task(data, block, est.feature_map)?;
        let seed = derive_seed(options.seed, &[k as u64, 0]);
        let count_lambda = select_lambda(&count_task, &options.lambda_grid, options.folds, seed)?;
        let count_model = fit_multinomial(&count_task, count_lambda)?;

        let mut label_models = Vec::with_capacity(block.len());
        let mut label_lambdas = Vec::with_capacity(block.len());
        for (j, &label) in block.iter().enumerate() {
            let task = reduce_to_label_task(data, block, label, est.feature_map, est.count_encoding)?;
            let seed = derive_seed(options.seed, &[k as u64, j as u64 + 1]);
            let lambda = select_lambda(&task, &options.lambda_grid, options.folds, seed)?;
            label_models.push(fit_binary(&task, lambda)?);
            label_lambdas.push(lambda);
        }
        blocks.push(BlockModel {
            labels: block.clone(),
            count_model,
            count_lambda,
            label_models,
            label_lambdas,
        });
    }
    Ok(TrainedEstimator {
        partition: partition.clone(),
        n_features: data.n_features(),
        options: *est,
        blocks,
    })
}

impl TrainedEstimator {
    pub fn n_labels(&self) -> usize {
        self.partition.m()
    }

    fn check_x(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Dimension(format!(
                "{} feature values for a model trained on {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Estimated P matrix of block `k` at `x`, rows in block order.
    pub fn estimate_p_matrix(&self, k: usize, x: &[u8]) -> Result<PMatrix> {
        self.check_x(x)?;
        let block = self
            .blocks
            .get(k)
            .ok_or_else(|| Error::Dimension(format!("block {k} of {}", self.blocks.len())))?;
        let m = block.labels.len();
        let opts = &self.options;
        let mut base = Vec::new();
        opts.feature_map.encode_into(x, &mut base);
        let count_probs = block.count_model.predict_proba(&base);

        let mut label_probs = vec![vec![0.0; m + 1]; m];
        let mut aug = Vec::with_capacity(base.len() + m + 1);
        for s in 1..=m {
            aug.clear();
            aug.extend_from_slice(&base);
            opts.count_encoding.encode_into(s, m, &mut aug);
            for (row, model) in label_probs.iter_mut().zip(&block.label_models) {
                row[s] = model.predict(&aug);
            }
            if opts.rescale {
                let mut column: Vec<f64> = label_probs.iter().map(|r| r[s]).collect();
                rescale_to_sum(&mut column, s as f64);
                label_probs.iter_mut().zip(column).for_each(|(r, v)| r[s] = v);
            }
        }
        p_matrix_from_conditionals(&count_probs, &label_probs)
    }

    pub fn factor_stats(&self, x: &[u8]) -> Result<Vec<FactorStats>> {
        (0..self.blocks.len())
            .map(|k| FactorStats::new(self.blocks[k].labels.clone(), self.estimate_p_matrix(k, x)?))
            .collect()
    }

    /// F-measure maximizing prediction at `x`, labels in original order.
    /// Fails when a recovered `d_0` falls below `-tolerance`.
    pub fn predict(&self, x: &[u8]) -> Result<Prediction> {
        let stats = self.factor_stats(x)?;
        f_gfm_with(&self.partition, &stats, &FgfmOptions { tolerance: self.options.tolerance })
    }

    /// Prediction that clamps instead of failing. The flag is set when a
    /// recovered `d_0` fell below `-tolerance`.
    pub fn predict_flagged(&self, x: &[u8]) -> Result<(Prediction, bool)> {
        let stats = self.factor_stats(x)?;
        let (pred, min_d0) = f_gfm_clamped(&self.partition, &stats)?;
        Ok((pred, min_d0 < -self.options.tolerance))
    }
}

/// Scales `v` proportionally so it sums to `target`, capping entries at 1
/// and spreading the excess over the rest. Needs `target <= v.len()`.
fn rescale_to_sum(v: &mut [f64], target: f64) {
    let mut capped = vec![false; v.len()];
    loop {
        let fixed = capped.iter().filter(|&&c| c).count() as f64;
        let free: f64 = v.iter().zip(&capped).filter(|(_, &c)| !c).map(|(x, _)| x).sum();
        let want = target - fixed;
        if free <= 0.0 {
            let open = capped.iter().filter(|&&c| !c).count() as f64;
            if open == 0.0 {
                return;
            }
            v.iter_mut().zip(&capped).filter(|(_, &c)| !c).for_each(|(x, _)| *x = want / open);
            return;
        }
        let factor = want / free;
        let mut changed = false;
        for (x, c) in v.iter_mut().zip(capped.iter_mut()) {
            if !*c {
                *x *= factor;
                if *x >= 1.0 {
                    *x = 1.0;
                    *c = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

/// Baseline estimating `p_is` directly with one `(m + 1)`-class model per
/// label on the target `y_i * s_y`. Its matrices are often inconsistent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectEstimator {
    pub n_features: usize,
    pub feature_map: FeatureMap,
    pub models: Vec<MultinomialModel>,
    pub lambdas: Vec<f64>,
}

pub fn train_direct(data: &Dataset, options: &TrainOptions) -> Result<DirectEstimator> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let m = data.n_labels();
    let map = options.estimator.feature_map;
    let all: Vec<usize> = (0..m).collect();
    let mut models = Vec::with_capacity(m);
    let mut lambdas = Vec::with_capacity(m);
    for i in 0..m {
        let mut task = MulticlassTask::new(map.dim(data.n_features())?, m + 1);
        let mut x = Vec::new();
        for r in 0..data.len() {
            x.clear();
            map.encode_into(data.x(r), &mut x);
            let y = data.y(r);
            task.push(&x, usize::from(y[i]) * block_count(y, &all));
        }
        let seed = derive_seed(options.seed, &[u64::MAX, i as u64]);
        let lambda = select_lambda(&task, &options.lambda_grid, options.folds, seed)?;
        models.push(fit_multinomial(&task, lambda)?);
        lambdas.push(lambda);
    }
    Ok(DirectEstimator { n_features: data.n_features(), feature_map: map, models, lambdas })
}

impl DirectEstimator {
    pub fn p_matrix(&self, x: &[u8]) -> Result<PMatrix> {
        if x.len() != self.n_features {
            return Err(Error::Dimension("feature count differs from training".into()));
        }
        let mut base = Vec::new();
        self.feature_map.encode_into(x, &mut base);
        let m = self.models.len();
        let mut entries = Vec::with_capacity(m * m);
        for model in &self.models {
            entries.extend_from_slice(&model.predict_proba(&base)[1..]);
        }
        PMatrix::new(m, entries)
    }

    pub fn predict(&self, x: &[u8], tolerance: f64) -> Result<Prediction> {
        gfm_from_p_only_with_tolerance(&self.p_matrix(x)?, tolerance)
    }
}
