//! Label-factor discovery by pairwise conditional-independence tests.
//!
//! This is a simplified stand-in for a full irreducible-label-factor search:
//! every label pair is tested for dependence given the features, dependent
//! pairs become graph edges, and the connected components are the blocks.
//! Discovered partitions are an approximation; controlled experiments can
//! pass the true partition instead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimate::logistic::{binary_nll, fit_binary, BinaryModel, BinaryTask};
use crate::estimate::FeatureMap;
use crate::factor::LabelPartition;
use crate::synth::Dataset;

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Score test of `y_i` against `y_j` within each feature pattern, with
    /// hypergeometric variances, summed over patterns; one degree of
    /// freedom per pattern where both labels vary.
    #[default]
    StratifiedScore,
    /// Likelihood ratio of nested logistic models for `y_j` given the
    /// features, with and without `y_i`; one degree of freedom.
    LogisticLrt,
    /// G-test of `y_i` against `y_j` within each feature pattern, summed
    /// over patterns.
    StratifiedG,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiOptions {
    pub method: CiMethod,
    /// Covariate encoding of the features in the logistic test; the
    /// stratified tests always condition on the full feature pattern.
    pub feature_map: FeatureMap,
    /// Ridge strength of the logistic fits.
    pub lambda: f64,
    /// Below this many rows a pair is declared dependent without testing.
    pub min_samples: usize,
}

impl Default for CiOptions {
    fn default() -> Self {
        Self {
            method: CiMethod::StratifiedScore,
            feature_map: FeatureMap::Saturated,
            lambda: 0.01,
            min_samples: 20,
        }
    }
}

/// Outcome of one pairwise test; `i`, `j` are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiTestResult {
    pub i: usize,
    pub j: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub dependent: bool,
    /// Set when the sample was too small to test.
    pub insufficient: bool,
}

impl CiTestResult {
    fn decide(mut self, alpha: f64) -> Self {
        self.dependent = self.insufficient || self.p_value < alpha;
        self
    }
}

fn chi_square_sf(statistic: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    dist.sf(statistic.max(0.0)).clamp(0.0, 1.0)
}

fn encode_features(data: &Dataset, map: FeatureMap) -> Result<Vec<Vec<f64>>> {
    map.dim(data.n_features())?;
    Ok((0..data.len())
        .map(|r| {
            let mut x = Vec::new();
            map.encode_into(data.x(r), &mut x);
            x
        })
        .collect())
}

fn label_task(encoded: &[Vec<f64>], data: &Dataset, target: usize, extra: Option<usize>) -> BinaryTask {
    let dim = encoded.first().map_or(0, Vec::len) + usize::from(extra.is_some());
    let mut task = BinaryTask::new(dim);
    let mut x = Vec::with_capacity(dim);
    for (r, base) in encoded.iter().enumerate() {
        x.clear();
        x.extend_from_slice(base);
        if let Some(e) = extra {
            x.push(f64::from(data.y(r)[e]));
        }
        task.push(&x, data.y(r)[target]);
    }
    task
}

fn check_pair(data: &Dataset, i: usize, j: usize) -> Result<()> {
    if i == j {
        return Err(Error::Config(format!("independence test of label {} with itself", i + 1)));
    }
    if i >= data.n_labels() || j >= data.n_labels() {
        return Err(Error::Dimension(format!("label pair ({}, {}) out of range", i + 1, j + 1)));
    }
    Ok(())
}

fn insufficient(i: usize, j: usize) -> CiTestResult {
    CiTestResult { i, j, statistic: 0.0, p_value: 0.0, dependent: true, insufficient: true }
}

/// Tests `y_i` against `y_j` given the features.
pub fn ci_test(data: &Dataset, i: usize, j: usize, alpha: f64, options: &CiOptions) -> Result<CiTestResult> {
    check_pair(data, i, j)?;
    if data.len() < options.min_samples {
        return Ok(insufficient(i, j));
    }
    let result = match options.method {
        CiMethod::LogisticLrt => {
            let encoded = encode_features(data, options.feature_map)?;
            let restricted = fit_restricted(&encoded, data, j, options.lambda)?;
            lrt(&encoded, data, i, j, &restricted, options.lambda)?
        }
        CiMethod::StratifiedScore => stratified(data, i, j, StratumStatistic::Score),
        CiMethod::StratifiedG => stratified(data, i, j, StratumStatistic::G),
    };
    Ok(result.decide(alpha))
}

struct Restricted {
    nll: f64,
}

fn fit_restricted(encoded: &[Vec<f64>], data: &Dataset, j: usize, lambda: f64) -> Result<Restricted> {
    let task = label_task(encoded, data, j, None);
    let model: BinaryModel = fit_binary(&task, lambda)?;
    Ok(Restricted { nll: binary_nll(&model, &task) })
}

fn lrt(
    encoded: &[Vec<f64>],
    data: &Dataset,
    i: usize,
    j: usize,
    restricted: &Restricted,
    lambda: f64,
) -> Result<CiTestResult> {
    let task = label_task(encoded, data, j, Some(i));
    let model = fit_binary(&task, lambda)?;
    let statistic = (2.0 * (restricted.nll - binary_nll(&model, &task))).max(0.0);
    if !statistic.is_finite() {
        return Err(Error::Numerical(format!("LR statistic for pair ({}, {})", i + 1, j + 1)));
    }
    Ok(CiTestResult {
        i,
        j,
        statistic,
        p_value: chi_square_sf(statistic, 1.0),
        dependent: false,
        insufficient: false,
    })
}

#[derive(Clone, Copy)]
enum StratumStatistic {
    Score,
    G,
}

fn stratified(data: &Dataset, i: usize, j: usize, kind: StratumStatistic) -> CiTestResult {
    let nf = data.n_features();
    let mut tables = vec![[[0.0f64; 2]; 2]; 1 << nf.min(20)];
    for r in 0..data.len() {
        let pattern = data.x(r).iter().enumerate().fold(0usize, |acc, (k, &v)| acc | (usize::from(v) << k));
        let y = data.y(r);
        tables[pattern][usize::from(y[i])][usize::from(y[j])] += 1.0;
    }
    let mut statistic = 0.0;
    let mut df = 0.0;
    for t in &tables {
        let rows = [t[0][0] + t[0][1], t[1][0] + t[1][1]];
        let cols = [t[0][0] + t[1][0], t[0][1] + t[1][1]];
        let n = rows[0] + rows[1];
        if rows.contains(&0.0) || cols.contains(&0.0) {
            continue;
        }
        df += 1.0;
        match kind {
            StratumStatistic::Score => {
                let cross = t[0][0] * t[1][1] - t[0][1] * t[1][0];
                statistic += (n - 1.0) * cross * cross / (rows[0] * rows[1] * cols[0] * cols[1]);
            }
            StratumStatistic::G => {
                for a in 0..2 {
                    for b in 0..2 {
                        let o = t[a][b];
                        if o > 0.0 {
                            statistic += 2.0 * o * (o * n / (rows[a] * cols[b])).ln();
                        }
                    }
                }
            }
        }
    }
    let statistic = statistic.max(0.0);
    CiTestResult {
        i,
        j,
        statistic,
        p_value: chi_square_sf(statistic, df),
        dependent: false,
        insufficient: false,
    }
}

/// Runs the test on every pair `i < j`, in lexicographic pair order.
pub fn pairwise_tests(data: &Dataset, alpha: f64, options: &CiOptions) -> Result<Vec<CiTestResult>> {
    let m = data.n_labels();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    if data.len() < options.min_samples {
        return Ok(pairs.into_iter().map(|(i, j)| insufficient(i, j)).collect());
    }
    match options.method {
        CiMethod::StratifiedScore | CiMethod::StratifiedG => {
            let kind = match options.method {
                CiMethod::StratifiedG => StratumStatistic::G,
                _ => StratumStatistic::Score,
            };
            Ok(pairs.into_iter().map(|(i, j)| stratified(data, i, j, kind).decide(alpha)).collect())
        }
        CiMethod::LogisticLrt => {
            let encoded = encode_features(data, options.feature_map)?;
            let restricted: Vec<Restricted> = (0..m)
                .into_par_iter()
                .map(|j| fit_restricted(&encoded, data, j, options.lambda))
                .collect::<Result<_>>()?;
            pairs
                .into_par_iter()
                .map(|(i, j)| {
                    lrt(&encoded, data, i, j, &restricted[j], options.lambda).map(|r| r.decide(alpha))
                })
                .collect()
        }
    }
}

/// Connected components of the dependence graph at level `alpha`. Blocks
/// are sorted and ordered by their smallest label.
pub fn partition_from_tests(m: usize, tests: &[CiTestResult], alpha: f64) -> Result<LabelPartition> {
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    for t in tests {
        if t.i >= m || t.j >= m {
            return Err(Error::Dimension("test pair outside label range".into()));
        }
        if t.insufficient || t.p_value < alpha {
            let (a, b) = (find(&mut parent, t.i), find(&mut parent, t.j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut root_block = vec![usize::MAX; m];
    for label in 0..m {
        let root = find(&mut parent, label);
        if root_block[root] == usize::MAX {
            root_block[root] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[root_block[root]].push(label);
    }
    LabelPartition::new(m, blocks)
}

/// Discovered partition plus the per-pair test report.
pub fn discover_partition(
    data: &Dataset,
    alpha: f64,
    options: &CiOptions,
) -> Result<(LabelPartition, Vec<CiTestResult>)> {
    if data.n_labels() == 0 {
        return Err(Error::Dimension("discovery needs at least one label".into()));
    }
    let tests = pairwise_tests(data, alpha, options)?;
    let partition = partition_from_tests(data.n_labels(), &tests, alpha)?;
    Ok((partition, tests))
}

/// CSV report with 1-based labels: `i,j,statistic,p_value,dependent`.
pub fn write_report_csv(tests: &[CiTestResult]) -> String {
    let mut out = String::from("i,j,statistic,p_value,dependent\n");
    for t in tests {
        out.push_str(&format!(
            "{},{},{:.6},{:.6e},{}\n",
            t.i + 1,
            t.j + 1,
            t.statistic,
            t.p_value,
            u8::from(t.dependent)
        ));
    }
    out
}
