//! Dense joint label distributions and brute-force F-measure maximization.
//!
//! Outcome `y` is stored at index `sum_i y_i 2^i` (label `i`, 0-based, is
//! bit `i`). Everything here is exact enumeration, so it is only usable for
//! small label counts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{DVector, LabelPartition};
use crate::gfm::{LabelVector, PMatrix, Prediction};
use crate::rng::sample_simplex;

/// Largest label count a dense table may hold.
pub const MAX_LABELS: usize = 16;

const SUM_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLabelDistribution {
    m: usize,
    probs: Vec<f64>,
}

impl JointLabelDistribution {
    pub fn new(m: usize, probs: Vec<f64>) -> Result<Self> {
        if m == 0 || m > MAX_LABELS {
            return Err(Error::Capacity(format!("dense table with {m} labels (1..={MAX_LABELS})")));
        }
        if probs.len() != 1 << m {
            return Err(Error::Dimension(format!(
                "{} probabilities for {m} labels",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Domain("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Domain(format!("probabilities sum to {total}")));
        }
        Ok(Self { m, probs })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        let n = 1usize.checked_shl(m as u32).unwrap_or(0);
        Self::new(m, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(y: &LabelVector) -> Result<Self> {
        let m = y.len();
        if m > MAX_LABELS {
            return Err(Error::Capacity(format!("dense table with {m} labels")));
        }
        let mut probs = vec![0.0; 1 << m];
        probs[y.pattern() as usize] = 1.0;
        Self::new(m, probs)
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(1, vec![1.0 - p, p])
    }

    /// Uniform draw from the simplex over all `2^m` outcomes.
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || m > MAX_LABELS {
            return Err(Error::Capacity(format!("dense table with {m} labels")));
        }
        Self::new(m, sample_simplex(1 << m, rng))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, y: &LabelVector) -> f64 {
        self.probs[y.pattern() as usize]
    }

    /// `p(y = 0)`.
    pub fn p_zero(&self) -> f64 {
        self.probs[0]
    }

    /// Marginal over `labels`; label `labels[j]` becomes bit `j`.
    pub fn marginal(&self, labels: &[usize]) -> Result<Self> {
        if labels.is_empty() || labels.iter().any(|&i| i >= self.m) {
            return Err(Error::Dimension("marginal label set out of range".into()));
        }
        let mut probs = vec![0.0; 1 << labels.len()];
        for (pattern, &p) in self.probs.iter().enumerate() {
            let sub = labels
                .iter()
                .enumerate()
                .fold(0usize, |acc, (j, &i)| acc | (((pattern >> i) & 1) << j));
            probs[sub] += p;
        }
        Ok(Self { m: labels.len(), probs })
    }

    /// Direct tabulation of `p(s_y = s)`.
    pub fn count_distribution(&self) -> DVector {
        let mut d = vec![0.0; self.m + 1];
        for (pattern, &p) in self.probs.iter().enumerate() {
            d[pattern.count_ones() as usize] += p;
        }
        DVector::new(d).expect("non-empty")
    }

    /// Total-variation distance to another table over the same labels.
    pub fn tv_distance(&self, other: &Self) -> Result<f64> {
        if self.m != other.m {
            return Err(Error::Dimension("tv distance across label counts".into()));
        }
        Ok(0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    /// Joint over the labels of `partition`, independent across blocks:
    /// `factors[k]` is the distribution of `partition.blocks()[k]` in block
    /// order.
    pub fn from_factors(partition: &LabelPartition, factors: &[Self]) -> Result<Self> {
        let m = partition.m();
        if m > MAX_LABELS {
            return Err(Error::Capacity(format!("dense table with {m} labels")));
        }
        if factors.len() != partition.len()
            || partition.blocks().iter().zip(factors).any(|(b, f)| b.len() != f.m)
        {
            return Err(Error::Dimension("factors do not match partition blocks".into()));
        }
        let mut probs = vec![1.0; 1 << m];
        for (pattern, p) in probs.iter_mut().enumerate() {
            for (block, f) in partition.blocks().iter().zip(factors) {
                let sub = block
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (j, &i)| acc | (((pattern >> i) & 1) << j));
                *p *= f.probs[sub];
            }
        }
        Self::new(m, probs)
    }
}

fn f_from_counts(both: u32, total: u32) -> f64 {
    if total == 0 {
        1.0
    } else {
        2.0 * f64::from(both) / f64::from(total)
    }
}

/// `E_y[F(y, h)]` by summing over all `2^m` outcomes.
pub fn expected_f(dist: &JointLabelDistribution, h: &LabelVector) -> Result<f64> {
    if h.len() != dist.m {
        return Err(Error::Dimension(format!(
            "prediction of length {} for {} labels",
            h.len(),
            dist.m
        )));
    }
    Ok(expected_f_pattern(dist, h.pattern() as usize))
}

fn expected_f_pattern(dist: &JointLabelDistribution, h: usize) -> f64 {
    let h_ones = h.count_ones();
    dist.probs
        .iter()
        .enumerate()
        .map(|(y, &p)| {
            if p == 0.0 {
                0.0
            } else {
                p * f_from_counts((y & h).count_ones(), y.count_ones() + h_ones)
            }
        })
        .sum()
}

/// Exhaustive maximizer over all `2^m` predictions; ties go to the smaller
/// bit pattern.
pub fn brute_force_maximizer(dist: &JointLabelDistribution) -> Result<Prediction> {
    if dist.m > MAX_LABELS {
        return Err(Error::Capacity(format!("brute force over {} labels", dist.m)));
    }
    let mut best = (0usize, expected_f_pattern(dist, 0));
    for h in 1..(1usize << dist.m) {
        let v = expected_f_pattern(dist, h);
        if v > best.1 {
            best = (h, v);
        }
    }
    Ok(Prediction {
        h: LabelVector::from_pattern(best.0 as u64, dist.m),
        expected_f: best.1,
    })
}

/// Exact `p_is = p(y_i = 1, s_y = s)` and `p(y = 0)`.
pub fn exact_p_matrix(dist: &JointLabelDistribution) -> (PMatrix, f64) {
    let m = dist.m;
    let mut entries = vec![0.0; m * m];
    for (y, &p) in dist.probs.iter().enumerate().skip(1) {
        let col = y.count_ones() as usize - 1;
        for i in (0..m).filter(|i| (y >> i) & 1 == 1) {
            entries[i * m + col] += p;
        }
    }
    let p = PMatrix::new(m, entries).expect("marginals of a distribution lie in [0, 1]");
    (p, dist.probs[0])
}

/// Joint of the concatenated labels: the first factor's labels come first.
pub fn product_joint(factors: &[JointLabelDistribution]) -> Result<JointLabelDistribution> {
    let m: usize = factors.iter().map(|f| f.m).sum();
    if m > MAX_LABELS {
        return Err(Error::Capacity(format!("product over {m} labels")));
    }
    let mut next = 0;
    let blocks = factors
        .iter()
        .map(|f| {
            let b: Vec<usize> = (next..next + f.m).collect();
            next += f.m;
            b
        })
        .collect();
    JointLabelDistribution::from_factors(&LabelPartition::new(m, blocks)?, factors)
}
