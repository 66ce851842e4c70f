//! Label factors: count-distribution recovery, merging of per-factor P
//! matrices and the factorized maximizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfm::{gfm, PMatrix, Prediction, EXACT_TOLERANCE};
use crate::LabelVector;

/// Disjoint, non-empty label blocks covering `0..m` (stored 0-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PartitionRecord", into = "PartitionRecord")]
pub struct LabelPartition {
    m: usize,
    blocks: Vec<Vec<usize>>,
}

impl LabelPartition {
    pub fn new(m: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; m];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::Partition("empty block".into()));
            }
            for &i in block {
                if i >= m {
                    return Err(Error::Partition(format!("label {} outside 1..={m}", i + 1)));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Partition(format!("label {} appears twice", i + 1)));
                }
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::Partition(format!("label {} not covered", i + 1)));
        }
        Ok(Self { m, blocks })
    }

    /// One block holding every label (plain GFM).
    pub fn single(m: usize) -> Self {
        Self { m, blocks: vec![(0..m).collect()] }
    }

    pub fn singletons(m: usize) -> Self {
        Self { m, blocks: (0..m).map(|i| vec![i]).collect() }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Sorts labels inside each block and orders blocks by their first label.
    pub fn canonical(&self) -> Self {
        let mut blocks: Vec<Vec<usize>> = self
            .blocks
            .iter()
            .map(|b| {
                let mut b = b.clone();
                b.sort_unstable();
                b
            })
            .collect();
        blocks.sort();
        Self { m: self.m, blocks }
    }

    /// True if every block of `self` lies inside a block of `coarser`.
    pub fn refines(&self, coarser: &LabelPartition) -> bool {
        let mut owner = vec![usize::MAX; coarser.m];
        for (b, block) in coarser.blocks.iter().enumerate() {
            for &i in block {
                owner[i] = b;
            }
        }
        self.m == coarser.m
            && self.blocks.iter().all(|block| block.iter().all(|&i| owner[i] == owner[block[0]]))
    }
}

/// 1-based JSON form: `{"m": 3, "blocks": [[2], [1, 3]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub m: usize,
    pub blocks: Vec<Vec<usize>>,
}

impl TryFrom<PartitionRecord> for LabelPartition {
    type Error = Error;

    fn try_from(rec: PartitionRecord) -> Result<Self> {
        let blocks = rec
            .blocks
            .into_iter()
            .map(|b| {
                b.into_iter()
                    .map(|i| {
                        i.checked_sub(1)
                            .ok_or_else(|| Error::Partition("label indices are 1-based".into()))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        LabelPartition::new(rec.m, blocks)
    }
}

impl From<LabelPartition> for PartitionRecord {
    fn from(p: LabelPartition) -> Self {
        PartitionRecord {
            m: p.m,
            blocks: p.blocks.into_iter().map(|b| b.into_iter().map(|i| i + 1).collect()).collect(),
        }
    }
}

/// Distribution of the positive-label count: `entries[s] = p(s_y = s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DVector {
    entries: Vec<f64>,
}

impl DVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Dimension("d vector needs at least one entry".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite d entry".into()));
        }
        Ok(Self { entries })
    }

    /// The count distribution of an empty label set.
    pub fn unit() -> Self {
        Self { entries: vec![1.0] }
    }

    pub fn m(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn get(&self, s: usize) -> f64 {
        self.entries[s]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }

    /// Negative entries set to zero, then rescaled to sum to one.
    pub fn clamped(&self) -> Self {
        if self.entries.iter().all(|&v| v >= 0.0) {
            return self.clone();
        }
        let mut entries: Vec<f64> = self.entries.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = entries.iter().sum();
        if total > 0.0 {
            entries.iter_mut().for_each(|v| *v /= total);
        } else {
            entries.iter_mut().for_each(|v| *v = 0.0);
            entries[0] = 1.0;
        }
        Self { entries }
    }

    /// Distribution of the sum of two independent counts.
    pub fn convolve(&self, other: &DVector) -> DVector {
        let mut entries = vec![0.0; self.entries.len() + other.entries.len() - 1];
        for (a, &x) in self.entries.iter().enumerate() {
            for (b, &y) in other.entries.iter().enumerate() {
                entries[a + b] += x * y;
            }
        }
        DVector { entries }
    }
}

/// `d_s = (1/s) sum_i p_is` for `s >= 1` and `d_0 = 1 - sum_{s>=1} d_s`.
pub fn recover_d(p: &PMatrix) -> Result<DVector> {
    recover_d_with_tolerance(p, EXACT_TOLERANCE)
}

/// As [`recover_d`]; fails only when `d_0 < -tolerance`. The returned vector
/// is not clamped.
pub fn recover_d_with_tolerance(p: &PMatrix, tolerance: f64) -> Result<DVector> {
    let m = p.m();
    let mut entries = vec![0.0; m + 1];
    for i in 0..m {
        for (col, &v) in p.row(i).iter().enumerate() {
            entries[col + 1] += v;
        }
    }
    for (s, e) in entries.iter_mut().enumerate().skip(1) {
        *e /= s as f64;
    }
    entries[0] = 1.0 - entries[1..].iter().sum::<f64>();
    if entries[0] < -tolerance {
        return Err(Error::Inconsistent { d0: entries[0], tolerance });
    }
    Ok(DVector { entries })
}

/// P matrix of the union of two independent label sets.
///
/// Rows `0..m1` belong to the first set, rows `m1..m1+m2` to the second.
/// `d1` and `d2` are the count distributions of the two sets.
pub fn merge(p1: &PMatrix, d1: &DVector, p2: &PMatrix, d2: &DVector) -> Result<PMatrix> {
    merge_counted(p1, d1, p2, d2).map(|(p, _)| p)
}

/// [`merge`] plus the number of multiply-adds performed.
pub fn merge_counted(
    p1: &PMatrix,
    d1: &DVector,
    p2: &PMatrix,
    d2: &DVector,
) -> Result<(PMatrix, u64)> {
    let (m1, m2) = (p1.m(), p2.m());
    if d1.m() != m1 || d2.m() != m2 {
        return Err(Error::Dimension(format!(
            "merge: d vectors of size {}, {} for matrices of size {m1}, {m2}",
            d1.entries.len(),
            d2.entries.len()
        )));
    }
    let m = m1 + m2;
    let mut out = PMatrix::zeros(m);
    let mut ops = 0u64;
    convolve_rows(p1, d2, 0, m, out.entries_mut(), &mut ops);
    convolve_rows(p2, d1, m1, m, out.entries_mut(), &mut ops);
    Ok((out, ops))
}

// out[offset + i][s1 + s2] += p[i][s1] * d[s2], with s1 >= 1.
fn convolve_rows(
    p: &PMatrix,
    d: &DVector,
    offset: usize,
    m: usize,
    out: &mut [f64],
    ops: &mut u64,
) {
    for i in 0..p.m() {
        let dst = &mut out[(offset + i) * m..(offset + i + 1) * m];
        for (c1, &v) in p.row(i).iter().enumerate() {
            for (s2, &w) in d.entries.iter().enumerate() {
                dst[c1 + s2] += v * w;
            }
            *ops += d.entries.len() as u64;
        }
    }
}

/// A block of labels and its local P matrix, rows in block order.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorStats {
    pub block: Vec<usize>,
    pub p: PMatrix,
}

impl FactorStats {
    pub fn new(block: Vec<usize>, p: PMatrix) -> Result<Self> {
        if block.len() != p.m() {
            return Err(Error::Dimension(format!(
                "block of {} labels with a {}x{} P matrix",
                block.len(),
                p.m(),
                p.m()
            )));
        }
        Ok(Self { block, p })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FgfmOptions {
    /// How far below zero a recovered `d_0` may fall before it is an error.
    pub tolerance: f64,
}

impl Default for FgfmOptions {
    fn default() -> Self {
        Self { tolerance: EXACT_TOLERANCE }
    }
}

/// The global P matrix rebuilt from factor statistics.
#[derive(Clone, Debug)]
pub struct Assembled {
    /// Rows in merge order, see `order`.
    pub p: PMatrix,
    /// Count distribution recovered from `p`, unclamped.
    pub d: DVector,
    /// `order[r]` is the original label index of row `r`.
    pub order: Vec<usize>,
    /// Multiply-adds and entry reads spent on merges and d recoveries.
    pub ops: u64,
    /// Smallest `d_0` met in any recovery, before clamping.
    pub min_d0: f64,
}

impl Assembled {
    /// The global P matrix with rows in original label order.
    pub fn p_in_label_order(&self) -> PMatrix {
        let mut inverse = vec![0; self.order.len()];
        for (r, &label) in self.order.iter().enumerate() {
            inverse[label] = r;
        }
        self.p.permute_rows(&inverse).expect("order is a permutation")
    }
}

/// Folds the factor statistics together block by block.
///
/// Each new block is placed first and the accumulated rows follow it, so the
/// row order is tracked explicitly in [`Assembled::order`]. Recovered count
/// vectors are clamped to non-negative values before they enter a merge.
pub fn assemble(
    partition: &LabelPartition,
    stats: &[FactorStats],
    options: &FgfmOptions,
) -> Result<Assembled> {
    if stats.len() != partition.len() {
        return Err(Error::Partition(format!(
            "{} factor statistics for {} blocks",
            stats.len(),
            partition.len()
        )));
    }
    let mut acc_p = PMatrix::zeros(0);
    let mut acc_d = DVector::unit();
    let mut order: Vec<usize> = Vec::with_capacity(partition.m());
    let mut ops = 0u64;
    let mut min_d0 = f64::INFINITY;
    for (block, st) in partition.blocks().iter().zip(stats) {
        if &st.block != block {
            return Err(Error::Partition(format!(
                "factor statistics for block {:?} do not match partition block {:?}",
                st.block, block
            )));
        }
        let mk = st.p.m() as u64;
        let dk = recover_d_with_tolerance(&st.p, options.tolerance)?;
        min_d0 = min_d0.min(dk.get(0));
        ops += mk * mk;
        let (merged, merge_ops) = merge_counted(&st.p, &dk.clamped(), &acc_p, &acc_d.clamped())?;
        ops += merge_ops;
        let mut next_order = block.clone();
        next_order.extend_from_slice(&order);
        order = next_order;
        let m = merged.m() as u64;
        acc_d = recover_d_with_tolerance(&merged, options.tolerance)?;
        min_d0 = min_d0.min(acc_d.get(0));
        ops += m * m;
        acc_p = merged;
    }
    Ok(Assembled { p: acc_p, d: acc_d, order, ops, min_d0 })
}

/// Factorized maximizer with exact-path tolerance.
pub fn f_gfm(partition: &LabelPartition, stats: &[FactorStats]) -> Result<Prediction> {
    f_gfm_with(partition, stats, &FgfmOptions::default())
}

/// Factorized maximizer: assemble the global P matrix, run GFM on it with
/// the recovered `d_0` (clamped at zero) and map the prediction back to the
/// original label order.
pub fn f_gfm_with(
    partition: &LabelPartition,
    stats: &[FactorStats],
    options: &FgfmOptions,
) -> Result<Prediction> {
    predict_assembled(partition, &assemble(partition, stats, options)?)
}

/// Like [`f_gfm_with`] but never rejects an inconsistent matrix: every
/// recovered `d` is clamped, and the smallest raw `d_0` is returned so the
/// caller can flag it.
pub fn f_gfm_clamped(partition: &LabelPartition, stats: &[FactorStats]) -> Result<(Prediction, f64)> {
    let assembled = assemble(partition, stats, &FgfmOptions { tolerance: f64::INFINITY })?;
    Ok((predict_assembled(partition, &assembled)?, assembled.min_d0))
}

fn predict_assembled(partition: &LabelPartition, assembled: &Assembled) -> Result<Prediction> {
    let out = gfm(&assembled.p, assembled.d.get(0).clamp(0.0, 1.0))?;
    let mut bits = vec![0u8; partition.m()];
    for (r, &label) in assembled.order.iter().enumerate() {
        bits[label] = out.h.get(r);
    }
    Ok(Prediction { h: LabelVector::new(bits)?, expected_f: out.expected_f })
}

/// Number of free P-matrix parameters under a partition: `sum_k m_k^2`.
pub fn parameter_count(partition: &LabelPartition) -> usize {
    partition.blocks().iter().map(|b| b.len() * b.len()).sum()
}

/// Worst-case operation envelope for rebuilding P from `n` equal blocks of
/// `m / n` labels: `(m/n + 2)^3 (n^2 - 1)`.
pub fn merge_cost_bound(m: usize, n: usize) -> f64 {
    let size = m as f64 / n as f64;
    (size + 2.0).powi(3) * ((n * n) as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn single_label(p: f64) -> (PMatrix, DVector) {
        let pm = PMatrix::new(1, vec![p]).unwrap();
        let d = recover_d(&pm).unwrap();
        (pm, d)
    }

    #[test]
    fn recover_d_examples() {
        assert_eq!(recover_d(&PMatrix::zeros(3)).unwrap().entries(), &[1.0, 0.0, 0.0, 0.0]);
        let d = recover_d(&PMatrix::new(1, vec![0.3]).unwrap()).unwrap();
        assert!(close(d.get(0), 0.7, 1e-15) && close(d.get(1), 0.3, 1e-15));
        let d = recover_d(&PMatrix::new(2, vec![0.25; 4]).unwrap()).unwrap();
        assert_eq!(d.entries(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn recover_d_flags_negative_d0() {
        let p = PMatrix::new(1, vec![1.0]).unwrap();
        assert!(recover_d(&p).is_ok());
        let p = PMatrix::new(2, vec![0.8, 0.0, 0.8, 0.0]).unwrap();
        let err = recover_d(&p).unwrap_err();
        assert!(matches!(err, Error::Inconsistent { d0, .. } if close(d0, -0.6, 1e-12)));
    }

    #[test]
    fn merge_with_empty_accumulator_is_identity() {
        let p1 = PMatrix::new(2, vec![0.1, 0.2, 0.3, 0.2]).unwrap();
        let d1 = recover_d(&p1).unwrap();
        let merged = merge(&p1, &d1, &PMatrix::zeros(0), &DVector::unit()).unwrap();
        assert_eq!(merged, p1);
    }

    #[test]
    fn merge_two_fair_labels() {
        let (p, d) = single_label(0.5);
        let merged = merge(&p, &d, &p, &d).unwrap();
        assert_eq!(merged.entries(), &[0.25; 4]);
    }

    #[test]
    fn merge_two_skewed_labels() {
        let (p1, d1) = single_label(0.7);
        let (p2, d2) = single_label(0.2);
        let merged = merge(&p1, &d1, &p2, &d2).unwrap();
        let expect = [0.56, 0.14, 0.06, 0.14];
        for (a, b) in merged.entries().iter().zip(expect) {
            assert!(close(*a, b, 1e-15), "{a} vs {b}");
        }
    }

    #[test]
    fn merge_rejects_mismatched_d() {
        let (p, _) = single_label(0.5);
        assert!(merge(&p, &DVector::unit(), &p, &DVector::unit()).is_err());
    }

    #[test]
    fn merge_op_count_matches_bounded_convolution() {
        for (m1, m2) in [(1, 1), (2, 3), (4, 4), (6, 2), (1, 7)] {
            let p1 = PMatrix::zeros(m1);
            let p2 = PMatrix::zeros(m2);
            let d1 = recover_d(&p1).unwrap();
            let d2 = recover_d(&p2).unwrap();
            let (_, ops) = merge_counted(&p1, &d1, &p2, &d2).unwrap();
            assert_eq!(ops, ((m2 + 1) * m1 * m1 + (m1 + 1) * m2 * m2) as u64);
            // with d recovery of both inputs
            let total = ops + (m1 * m1 + m2 * m2) as u64;
            assert_eq!(total, ((m2 + 2) * m1 * m1 + (m1 + 2) * m2 * m2) as u64);
        }
    }

    #[test]
    fn f_gfm_single_block_matches_gfm() {
        let p = PMatrix::new(2, vec![0.3, 0.1, 0.05, 0.1]).unwrap();
        let d = recover_d(&p).unwrap();
        let partition = LabelPartition::single(2);
        let stats = [FactorStats::new(vec![0, 1], p.clone()).unwrap()];
        assert_eq!(f_gfm(&partition, &stats).unwrap(), gfm(&p, d.get(0)).unwrap());
    }

    #[test]
    fn f_gfm_two_independent_labels() {
        let partition = LabelPartition::singletons(2);
        let stats = [
            FactorStats::new(vec![0], PMatrix::new(1, vec![0.7]).unwrap()).unwrap(),
            FactorStats::new(vec![1], PMatrix::new(1, vec![0.2]).unwrap()).unwrap(),
        ];
        let out = f_gfm(&partition, &stats).unwrap();
        assert_eq!(out.h.as_slice(), &[1, 0]);
        // E[F] of h = (1,0): p(y1=1,y2=0) * 1 + p(1,1) * 2/3
        assert!(close(out.expected_f, 0.56 + 0.14 * 2.0 / 3.0, 1e-12));
    }

    #[test]
    fn f_gfm_rejects_mismatched_stats() {
        let partition = LabelPartition::singletons(2);
        let stats = [FactorStats::new(vec![1], PMatrix::new(1, vec![0.7]).unwrap()).unwrap()];
        assert!(matches!(f_gfm(&partition, &stats), Err(Error::Partition(_))));
        let stats = [
            FactorStats::new(vec![1], PMatrix::new(1, vec![0.7]).unwrap()).unwrap(),
            FactorStats::new(vec![0], PMatrix::new(1, vec![0.2]).unwrap()).unwrap(),
        ];
        assert!(matches!(f_gfm(&partition, &stats), Err(Error::Partition(_))));
    }

    #[test]
    fn parameter_count_examples() {
        let pairs = LabelPartition::new(8, (0..4).map(|k| vec![2 * k, 2 * k + 1]).collect()).unwrap();
        assert_eq!(parameter_count(&pairs), 16);
        assert_eq!(parameter_count(&LabelPartition::singletons(8)), 8);
        let worst = LabelPartition::new(8, vec![vec![0, 1, 2, 3, 4, 5, 6], vec![7]]).unwrap();
        assert_eq!(parameter_count(&worst), 50);
    }

    #[test]
    fn partition_validation() {
        assert!(LabelPartition::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(LabelPartition::new(3, vec![vec![0, 1]]).is_err());
        assert!(LabelPartition::new(3, vec![vec![0, 1, 2], vec![]]).is_err());
        assert!(LabelPartition::new(3, vec![vec![0, 1, 3]]).is_err());
    }

    #[test]
    fn partition_json_is_one_based() {
        let p = LabelPartition::new(3, vec![vec![1], vec![0, 2]]).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"m":3,"blocks":[[2],[1,3]]}"#);
        assert_eq!(serde_json::from_str::<LabelPartition>(&json).unwrap(), p);
        assert!(serde_json::from_str::<LabelPartition>(r#"{"m":1,"blocks":[[0]]}"#).is_err());
    }

    #[test]
    fn refinement() {
        let fine = LabelPartition::singletons(4);
        let coarse = LabelPartition::new(4, vec![vec![0, 3], vec![1, 2]]).unwrap();
        assert!(fine.refines(&coarse));
        assert!(!coarse.refines(&fine));
        assert!(coarse.refines(&LabelPartition::single(4)));
    }

    #[test]
    fn clamped_d_is_a_distribution() {
        let d = DVector::new(vec![-0.1, 0.6, 0.5]).unwrap().clamped();
        assert!(close(d.sum(), 1.0, 1e-15));
        assert!(d.entries().iter().all(|&v| v >= 0.0));
        assert!(close(d.get(1), 0.6 / 1.1, 1e-15));
    }
}
