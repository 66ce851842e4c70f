//! Bayesian-network benchmark problems over binary features and labels.
//!
//! Nodes are ordered features first, then labels, and every parent index is
//! smaller than its child's index, so node order is a topological order. A
//! CPT row holds `p(node = 1 | parents)`; rows are indexed by the parent
//! assignment read as a binary number with the first listed parent as the
//! most significant bit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::LabelPartition;
use crate::oracle::{JointLabelDistribution, MAX_LABELS};
use crate::rng::sample_simplex;

pub const N_FEATURES: usize = 6;
pub const N_LABELS: usize = 8;
/// Features `X1..X4` feed every label; `X5`, `X6` are isolated.
pub const N_RELEVANT_FEATURES: usize = 4;

/// Binary feature and label matrices, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    n_features: usize,
    n_labels: usize,
    features: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(n_features: usize, n_labels: usize, features: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if n_features == 0 && n_labels == 0 {
            return Err(Error::Dimension("dataset without columns".into()));
        }
        let rows = if n_features > 0 { features.len() / n_features } else { labels.len() / n_labels.max(1) };
        if features.len() != rows * n_features || labels.len() != rows * n_labels {
            return Err(Error::Dimension("feature and label row counts differ".into()));
        }
        if features.iter().chain(&labels).any(|&v| v > 1) {
            return Err(Error::Domain("dataset entries must be 0 or 1".into()));
        }
        Ok(Self { n_features, n_labels, features, labels })
    }

    pub fn empty(n_features: usize, n_labels: usize) -> Self {
        Self { n_features, n_labels, features: Vec::new(), labels: Vec::new() }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn len(&self) -> usize {
        if self.n_features > 0 {
            self.features.len() / self.n_features
        } else {
            self.labels.len() / self.n_labels.max(1)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, row: usize) -> &[u8] {
        &self.features[row * self.n_features..(row + 1) * self.n_features]
    }

    pub fn y(&self, row: usize) -> &[u8] {
        &self.labels[row * self.n_labels..(row + 1) * self.n_labels]
    }

    pub fn push(&mut self, x: &[u8], y: &[u8]) -> Result<()> {
        if x.len() != self.n_features || y.len() != self.n_labels {
            return Err(Error::Dimension("row width differs from dataset".into()));
        }
        if x.iter().chain(y).any(|&v| v > 1) {
            return Err(Error::Domain("dataset entries must be 0 or 1".into()));
        }
        self.features.extend_from_slice(x);
        self.labels.extend_from_slice(y);
        Ok(())
    }

    /// First `n` rows.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            n_features: self.n_features,
            n_labels: self.n_labels,
            features: self.features[..n * self.n_features].to_vec(),
            labels: self.labels[..n * self.n_labels].to_vec(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let mut out = Self::empty(self.n_features, self.n_labels);
        for &r in rows {
            out.features.extend_from_slice(self.x(r));
            out.labels.extend_from_slice(self.y(r));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "DAG1")]
    Dag1,
    #[serde(rename = "DAG2")]
    Dag2,
    #[serde(rename = "DAG3")]
    Dag3,
    #[serde(rename = "DAG4")]
    Dag4,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [Self::Dag1, Self::Dag2, Self::Dag3, Self::Dag4];

    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            1 => Ok(Self::Dag1),
            2 => Ok(Self::Dag2),
            3 => Ok(Self::Dag3),
            4 => Ok(Self::Dag4),
            _ => Err(Error::Config(format!("unknown scenario DAG{i} (expected 1..=4)"))),
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Self::Dag1 => 1,
            Self::Dag2 => 2,
            Self::Dag3 => 3,
            Self::Dag4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dag1 => "DAG1",
            Self::Dag2 => "DAG2",
            Self::Dag3 => "DAG3",
            Self::Dag4 => "DAG4",
        }
    }

    fn block_sizes(self) -> &'static [usize] {
        match self {
            Self::Dag1 => &[2, 2, 2, 2],
            Self::Dag2 => &[4, 4],
            Self::Dag3 => &[6, 2],
            Self::Dag4 => &[8],
        }
    }

    /// The label factor decomposition this structure encodes.
    pub fn partition(self) -> LabelPartition {
        let mut next = 0;
        let blocks = self
            .block_sizes()
            .iter()
            .map(|&size| {
                let b: Vec<usize> = (next..next + size).collect();
                next += size;
                b
            })
            .collect();
        LabelPartition::new(N_LABELS, blocks).expect("static partition")
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("DAG").trim_start_matches("dag");
        digits
            .parse::<u32>()
            .map_err(|_| Error::Config(format!("unknown scenario {s:?}")))
            .and_then(Self::from_index)
    }
}

/// Graph structure without CPTs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BayesNetSkeleton {
    pub names: Vec<String>,
    pub parents: Vec<Vec<usize>>,
    pub n_features: usize,
    pub n_labels: usize,
}

impl BayesNetSkeleton {
    fn validate(&self) -> Result<()> {
        let n = self.n_features + self.n_labels;
        if self.names.len() != n || self.parents.len() != n {
            return Err(Error::Dimension("node lists disagree with feature/label counts".into()));
        }
        for (node, pa) in self.parents.iter().enumerate() {
            if pa.iter().any(|&p| p >= node) {
                return Err(Error::Config(format!(
                    "node {} has a parent that does not precede it",
                    self.names[node]
                )));
            }
            if pa.len() > 24 {
                return Err(Error::Capacity(format!("node {} has {} parents", self.names[node], pa.len())));
            }
        }
        Ok(())
    }
}

/// A fully specified network over binary nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BayesNetRecord", into = "BayesNetRecord")]
pub struct BayesNetSpec {
    skeleton: BayesNetSkeleton,
    cpts: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BayesNetRecord {
    nodes: Vec<String>,
    n_features: usize,
    n_labels: usize,
    parents: Vec<Vec<usize>>,
    cpts: Vec<Vec<f64>>,
}

impl TryFrom<BayesNetRecord> for BayesNetSpec {
    type Error = Error;

    fn try_from(r: BayesNetRecord) -> Result<Self> {
        BayesNetSpec::new(
            BayesNetSkeleton {
                names: r.nodes,
                parents: r.parents,
                n_features: r.n_features,
                n_labels: r.n_labels,
            },
            r.cpts,
        )
    }
}

impl From<BayesNetSpec> for BayesNetRecord {
    fn from(bn: BayesNetSpec) -> Self {
        BayesNetRecord {
            nodes: bn.skeleton.names,
            n_features: bn.skeleton.n_features,
            n_labels: bn.skeleton.n_labels,
            parents: bn.skeleton.parents,
            cpts: bn.cpts,
        }
    }
}

impl BayesNetSpec {
    pub fn new(skeleton: BayesNetSkeleton, cpts: Vec<Vec<f64>>) -> Result<Self> {
        skeleton.validate()?;
        if cpts.len() != skeleton.parents.len() {
            return Err(Error::Dimension("one CPT per node required".into()));
        }
        for (node, (pa, rows)) in skeleton.parents.iter().zip(&cpts).enumerate() {
            if rows.len() != 1 << pa.len() {
                return Err(Error::Dimension(format!(
                    "node {} has {} CPT rows, expected {}",
                    skeleton.names[node],
                    rows.len(),
                    1usize << pa.len()
                )));
            }
            if rows.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Domain(format!("CPT of {} outside [0, 1]", skeleton.names[node])));
            }
        }
        Ok(Self { skeleton, cpts })
    }

    pub fn skeleton(&self) -> &BayesNetSkeleton {
        &self.skeleton
    }

    pub fn n_features(&self) -> usize {
        self.skeleton.n_features
    }

    pub fn n_labels(&self) -> usize {
        self.skeleton.n_labels
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.skeleton.parents[node]
    }

    pub fn cpt(&self, node: usize) -> &[f64] {
        &self.cpts[node]
    }

    /// `p(node = 1 | parents)` given values of all earlier nodes.
    pub fn p_one(&self, node: usize, values: &[u8]) -> f64 {
        let row = self.skeleton.parents[node]
            .iter()
            .fold(0usize, |acc, &p| (acc << 1) | usize::from(values[p]));
        self.cpts[node][row]
    }
}

/// Structure of a benchmark scenario and its true label partition.
///
/// `X1..X4` are parents of every label, `X5` and `X6` are isolated, and
/// inside each label block there is an edge `Yi -> Yj` for every `i < j`.
/// A label's parents are listed as `X1..X4` followed by its in-block
/// predecessors in index order.
pub fn scenario_structure(id: ScenarioId) -> (BayesNetSkeleton, LabelPartition) {
    let partition = id.partition();
    let mut names: Vec<String> = (1..=N_FEATURES).map(|i| format!("X{i}")).collect();
    names.extend((1..=N_LABELS).map(|i| format!("Y{i}")));
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); N_FEATURES];
    for label in 0..N_LABELS {
        let block = partition.blocks().iter().find(|b| b.contains(&label)).expect("cover");
        let mut pa: Vec<usize> = (0..N_RELEVANT_FEATURES).collect();
        pa.extend(block.iter().filter(|&&j| j < label).map(|&j| N_FEATURES + j));
        parents.push(pa);
    }
    let skeleton = BayesNetSkeleton { names, parents, n_features: N_FEATURES, n_labels: N_LABELS };
    (skeleton, partition)
}

/// Draws every CPT row uniformly from the two-outcome simplex, node by node
/// and row by row in storage order.
pub fn sample_cpts<R: Rng + ?Sized>(skeleton: &BayesNetSkeleton, rng: &mut R) -> Result<BayesNetSpec> {
    let cpts = skeleton
        .parents
        .iter()
        .map(|pa| (0..1usize << pa.len()).map(|_| sample_simplex(2, rng)[1]).collect())
        .collect();
    BayesNetSpec::new(skeleton.clone(), cpts)
}

/// `n` rows of forward sampling in node order.
pub fn ancestral_sample<R: Rng + ?Sized>(bn: &BayesNetSpec, n: usize, rng: &mut R) -> Dataset {
    let (nf, nl) = (bn.n_features(), bn.n_labels());
    let mut features = Vec::with_capacity(n * nf);
    let mut labels = Vec::with_capacity(n * nl);
    let mut values = vec![0u8; nf + nl];
    for _ in 0..n {
        for node in 0..nf + nl {
            let u: f64 = rng.random();
            values[node] = u8::from(u < bn.p_one(node, &values));
        }
        features.extend_from_slice(&values[..nf]);
        labels.extend_from_slice(&values[nf..]);
    }
    Dataset { n_features: nf, n_labels: nl, features, labels }
}

/// True `p(y | x)` by enumerating all label assignments.
///
/// Labels may only have features and earlier labels as parents, which holds
/// for every network with the features-then-labels node order.
pub fn exact_conditional(bn: &BayesNetSpec, x: &[u8]) -> Result<JointLabelDistribution> {
    let (nf, nl) = (bn.n_features(), bn.n_labels());
    if nl > MAX_LABELS {
        return Err(Error::Capacity(format!("exact conditional over {nl} labels")));
    }
    if x.len() != nf {
        return Err(Error::Dimension(format!("{} feature values for {nf} features", x.len())));
    }
    let mut values = vec![0u8; nf + nl];
    values[..nf].copy_from_slice(x);
    let mut probs = vec![0.0; 1 << nl];
    for (pattern, slot) in probs.iter_mut().enumerate() {
        let mut p = 1.0;
        for j in 0..nl {
            let bit = ((pattern >> j) & 1) as u8;
            values[nf + j] = bit;
            let q = bn.p_one(nf + j, &values);
            p *= if bit == 1 { q } else { 1.0 - q };
        }
        *slot = p;
    }
    // Rescale away the rounding drift of the product sums.
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    JointLabelDistribution::new(nl, probs)
}
