//! F-measure evaluation and the exact general F-measure maximizer.
//!
//! Label indices are stored 0-based. The count axis of [`PMatrix`],
//! [`DeltaMatrix`] and [`WMatrix`] is stored so that column `c` holds the
//! value for `s = c + 1` (or `k = c + 1`); documentation and file formats
//! speak of `s` and `k` as counts starting at 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::recover_d_with_tolerance;

/// Tolerance used when a P matrix comes from exact marginalization.
pub const EXACT_TOLERANCE: f64 = 1e-9;
/// Default tolerance for P matrices assembled from fitted models.
pub const ESTIMATED_TOLERANCE: f64 = 0.05;

const ENTRY_SLACK: f64 = 1e-9;

/// A binary label assignment or prediction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Dimension("label vector must have at least one entry".into()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Domain(format!("label entries must be 0 or 1, got {b}")));
        }
        Ok(Self(bits))
    }

    pub fn zeros(m: usize) -> Self {
        assert!(m >= 1, "label vector must have at least one entry");
        Self(vec![0; m])
    }

    /// Little-endian bit pattern: label `i` is bit `i`.
    pub fn from_pattern(pattern: u64, m: usize) -> Self {
        assert!((1..=64).contains(&m));
        Self((0..m).map(|i| ((pattern >> i) & 1) as u8).collect())
    }

    pub fn pattern(&self) -> u64 {
        assert!(self.0.len() <= 64);
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | (u64::from(b) << i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of positive labels.
    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }
}

impl TryFrom<Vec<u8>> for LabelVector {
    type Error = Error;

    fn try_from(bits: Vec<u8>) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<LabelVector> for Vec<u8> {
    fn from(v: LabelVector) -> Self {
        v.0
    }
}

/// `F(y, h) = 2 (y . h) / (y . y + h . h)`, with `0/0 = 1`.
pub fn f_measure(y: &LabelVector, h: &LabelVector) -> Result<f64> {
    if y.len() != h.len() {
        return Err(Error::Dimension(format!(
            "f_measure on vectors of length {} and {}",
            y.len(),
            h.len()
        )));
    }
    let (mut both, mut total) = (0usize, 0usize);
    for (&a, &b) in y.as_slice().iter().zip(h.as_slice()) {
        both += usize::from(a & b);
        total += usize::from(a) + usize::from(b);
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * both as f64 / total as f64
    })
}

/// The `m x m` matrix of `p(y_i = 1, s_y = s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl PMatrix {
    /// Builds a matrix from row-major entries (row `i`, column `s - 1`).
    ///
    /// Only range and finiteness are checked here; estimated matrices may
    /// violate the coupling between rows, see [`PMatrix::check_consistency`].
    pub fn new(m: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != m * m {
            return Err(Error::Dimension(format!(
                "P matrix with m = {m} needs {} entries, got {}",
                m * m,
                entries.len()
            )));
        }
        if let Some(v) = entries
            .iter()
            .find(|v| !v.is_finite() || **v < -ENTRY_SLACK || **v > 1.0 + ENTRY_SLACK)
        {
            return Err(Error::Domain(format!("P matrix entry {v} outside [0, 1]")));
        }
        Ok(Self { m, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension("P matrix rows must all have length m".into()));
        }
        Self::new(m, rows.concat())
    }

    pub fn zeros(m: usize) -> Self {
        Self { m, entries: vec![0.0; m * m] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Entry for label `i` (0-based) and count column `col` (`s = col + 1`).
    pub fn get(&self, i: usize, col: usize) -> f64 {
        self.entries[i * self.m + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    /// Reorders label rows: row `r` of the result is row `perm[r]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.m {
            return Err(Error::Dimension("permutation length differs from m".into()));
        }
        let mut entries = Vec::with_capacity(self.entries.len());
        for &r in perm {
            entries.extend_from_slice(self.row(r));
        }
        Ok(Self { m: self.m, entries })
    }

    /// Checks that no label's mass exceeds the level mass and that the
    /// implied count distribution is a sub-distribution.
    pub fn check_consistency(&self, tolerance: f64) -> Result<()> {
        let mut total = 0.0;
        for col in 0..self.m {
            let s = (col + 1) as f64;
            let level: f64 = (0..self.m).map(|i| self.get(i, col)).sum::<f64>() / s;
            for i in 0..self.m {
                if self.get(i, col) > level + tolerance {
                    return Err(Error::Domain(format!(
                        "p[{}][{}] = {} exceeds level mass {level}",
                        i + 1,
                        col + 1,
                        self.get(i, col)
                    )));
                }
            }
            total += level;
        }
        if total > 1.0 + tolerance {
            return Err(Error::Inconsistent { d0: 1.0 - total, tolerance });
        }
        Ok(())
    }
}

/// JSON form of a P matrix: `{"m", "entries", "p_zero"}` with 1-based
/// semantics (row `i` is label `i`, column `s` is count `s`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PMatrixRecord {
    pub m: usize,
    pub entries: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_zero: Option<f64>,
}

impl PMatrixRecord {
    pub fn new(p: &PMatrix, p_zero: Option<f64>) -> Self {
        Self { m: p.m, entries: p.entries.clone(), p_zero }
    }

    pub fn into_parts(self) -> Result<(PMatrix, Option<f64>)> {
        let p = PMatrix::new(self.m, self.entries)?;
        Ok((p, self.p_zero))
    }
}

/// `w[s][k] = 2 / (s + k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl WMatrix {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Entry for `s = row + 1`, `k = col + 1`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.m + col]
    }
}

pub fn build_w(m: usize) -> WMatrix {
    let mut entries = Vec::with_capacity(m * m);
    for s in 1..=m {
        for k in 1..=m {
            entries.push(2.0 / (s + k) as f64);
        }
    }
    WMatrix { m, entries }
}

/// `delta[i][k]`, the expected-F contribution of label `i` to a prediction
/// with `k` positives.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl DeltaMatrix {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Entry for label `i` and `k = col + 1`.
    pub fn get(&self, i: usize, col: usize) -> f64 {
        self.entries[i * self.m + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }
}

/// `Delta = P W`, naive cubic product.
pub fn compute_delta(p: &PMatrix) -> DeltaMatrix {
    let m = p.m();
    let w = build_w(m);
    let mut entries = vec![0.0; m * m];
    for i in 0..m {
        let row = p.row(i);
        let out = &mut entries[i * m..(i + 1) * m];
        for (s, &pis) in row.iter().enumerate() {
            if pis == 0.0 {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o += pis * w.get(s, k);
            }
        }
    }
    DeltaMatrix { m, entries }
}

/// An F-measure maximizing prediction and its expected F.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub h: LabelVector,
    pub expected_f: f64,
}

/// Exact expected-F maximizer from `P` and `p(y = 0)`.
///
/// For each `k` the best prediction with `k` positives takes the `k` largest
/// `delta[., k]` (ties to the lower label index); the best `k` wins, ties to
/// the smaller `k`.
pub fn gfm(p: &PMatrix, p_zero: f64) -> Result<Prediction> {
    let m = p.m();
    if m == 0 {
        return Err(Error::Dimension("GFM needs at least one label".into()));
    }
    if !p_zero.is_finite() || !(-ENTRY_SLACK..=1.0 + ENTRY_SLACK).contains(&p_zero) {
        return Err(Error::Domain(format!("p(y = 0) = {p_zero} outside [0, 1]")));
    }
    let delta = compute_delta(p);

    let mut best_k = 0usize;
    let mut best_value = p_zero;
    let mut best_labels: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (0..m).collect();
    for col in 0..m {
        let k = col + 1;
        order.sort_by(|&a, &b| {
            delta
                .get(b, col)
                .total_cmp(&delta.get(a, col))
                .then(a.cmp(&b))
        });
        let value: f64 = order[..k].iter().map(|&i| delta.get(i, col)).sum();
        if value > best_value {
            best_value = value;
            best_k = k;
            best_labels = order[..k].to_vec();
        }
    }
    debug_assert_eq!(best_labels.len(), best_k);

    let mut bits = vec![0u8; m];
    for i in best_labels {
        bits[i] = 1;
    }
    Ok(Prediction { h: LabelVector(bits), expected_f: best_value })
}

/// The inner maximizers `h^(1) .. h^(m)` with their values, for inspection.
pub fn inner_solutions(p: &PMatrix) -> Vec<(LabelVector, f64)> {
    let m = p.m();
    let delta = compute_delta(p);
    let mut order: Vec<usize> = (0..m).collect();
    (0..m)
        .map(|col| {
            order.sort_by(|&a, &b| {
                delta.get(b, col).total_cmp(&delta.get(a, col)).then(a.cmp(&b))
            });
            let mut bits = vec![0u8; m];
            let mut value = 0.0;
            for &i in &order[..=col] {
                bits[i] = 1;
                value += delta.get(i, col);
            }
            (LabelVector(bits), value)
        })
        .collect()
}

/// GFM with `p(y = 0)` recovered from `P` itself.
pub fn gfm_from_p_only(p: &PMatrix) -> Result<Prediction> {
    gfm_from_p_only_with_tolerance(p, EXACT_TOLERANCE)
}

/// As [`gfm_from_p_only`]; a recovered `d_0` in `[-tolerance, 0)` is clamped to 0.
pub fn gfm_from_p_only_with_tolerance(p: &PMatrix, tolerance: f64) -> Result<Prediction> {
    let d = recover_d_with_tolerance(p, tolerance)?;
    gfm(p, d.get(0).clamp(0.0, 1.0))
}
