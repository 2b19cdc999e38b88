//! Gradient-boosted trees for the blackout / no-blackout decision.
//!
//! Trees are grown level by level with exact greedy splits on logistic
//! loss. A sample goes left when `x < threshold`; thresholds are always a
//! value observed on the right-hand side of the split.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{is_blackout, SampleSet};
use crate::grid::{Grid, GridState};

pub const FOREST_VERSION: &str = "blackout-gbt v1";

const GAIN_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("no training samples")]
    Empty,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("sample {0} has a non-positive or non-finite weight")]
    NonPositiveWeight(usize),
    #[error("feature vector has {got} entries, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("line id {0} does not exist")]
    InvalidLine(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub gamma: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub n_rounds: usize,
    /// Rounds without a validation F1 improvement before stopping.
    pub early_stopping_rounds: usize,
    pub decision_threshold: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            max_depth: 8,
            min_child_weight: 1.0,
            gamma: 1.0,
            lambda: 1.0,
            n_rounds: 200,
            early_stopping_rounds: 20,
            decision_threshold: 0.5,
        }
    }
}

pub fn feature_length(n_buses: usize, n_lines: usize) -> usize {
    2 * n_buses + 3 * n_lines
}

/// Bus loads, bus generations, line resistances, line reactances, then the
/// multi-hot failure mask.
pub fn featurize(grid: &Grid, state: &GridState, failures: &[usize]) -> Result<Vec<f64>, GbtError> {
    let mut x = Vec::with_capacity(feature_length(grid.n_buses(), grid.n_lines()));
    x.extend_from_slice(&state.load);
    x.extend_from_slice(&state.generation);
    x.extend(grid.lines.iter().map(|l| l.resistance));
    x.extend(grid.lines.iter().map(|l| l.reactance));
    let mut mask = vec![0.0; grid.n_lines()];
    for &f in failures {
        *mask.get_mut(f).ok_or(GbtError::InvalidLine(f))? = 1.0;
    }
    x.extend(mask);
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatSample {
    pub features: Vec<f64>,
    pub label: bool,
    pub weight: f64,
}

/// `1 + mw / positive_mean`.
pub fn blackout_weight(mw: f64, positive_mean: f64) -> f64 {
    1.0 + mw / positive_mean
}

/// Mean blackout size over the blackout samples among `indices`.
pub fn positive_mean_mw(set: &SampleSet, indices: &[usize]) -> Option<f64> {
    let positives: Vec<f64> =
        indices.iter().map(|&i| set.samples[i].blackout_mw).filter(|&mw| is_blackout(mw)).collect();
    if positives.is_empty() {
        None
    } else {
        Some(positives.iter().sum::<f64>() / positives.len() as f64)
    }
}

/// Flat samples for `indices`. With `positive_mean` every sample is
/// weighted by [`blackout_weight`]; otherwise weights are 1.
pub fn flat_samples(
    grid: &Grid,
    set: &SampleSet,
    indices: &[usize],
    positive_mean: Option<f64>,
) -> Result<Vec<FlatSample>, GbtError> {
    indices
        .par_iter()
        .map(|&i| {
            let s = &set.samples[i];
            Ok(FlatSample {
                features: featurize(grid, set.state_of(s), &s.failures)?,
                label: is_blackout(s.blackout_mw),
                weight: positive_mean.map_or(1.0, |m| blackout_weight(s.blackout_mw, m)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
        /// Hessian sum of the training samples reaching the node.
        cover: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Loss reduction before the `gamma` penalty.
        gain: f64,
        cover: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    node = if x[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Leaf { cover, .. } | TreeNode::Split { cover, .. } => *cover,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Weighted mean logistic loss on the training set after the round.
    pub train_loss: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedForest {
    pub version: String,
    pub n_features: usize,
    /// Log-odds added to every prediction.
    pub base_score: f64,
    pub params: GbtParams,
    pub trees: Vec<TreeNode>,
    pub history: Vec<RoundLog>,
}

impl BoostedForest {
    pub fn margin(&self, x: &[f64]) -> Result<f64, GbtError> {
        if x.len() != self.n_features {
            return Err(GbtError::Length { expected: self.n_features, got: x.len() });
        }
        Ok(self.base_score + self.trees.iter().map(|t| t.leaf_value(x)).sum::<f64>())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), GbtError> {
        serde_json::to_writer(out, self).map_err(|e| GbtError::Checkpoint(e.to_string()))
    }

    pub fn read<R: Read>(input: R) -> Result<Self, GbtError> {
        let forest: Self = serde_json::from_reader(input).map_err(|e| GbtError::Checkpoint(e.to_string()))?;
        if forest.version != FOREST_VERSION {
            return Err(GbtError::Checkpoint(format!("unsupported version `{}`", forest.version)));
        }
        Ok(forest)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Probability of a blackout and the thresholded class.
pub fn predict_gbt(forest: &BoostedForest, x: &[f64]) -> Result<(f64, bool), GbtError> {
    let p = sigmoid(forest.margin(x)?);
    Ok((p, p >= forest.params.decision_threshold))
}

fn logistic_loss(margin: f64, label: bool) -> f64 {
    // log(1 + e^{-z}) for positives, log(1 + e^{z}) for negatives, stably
    let z = if label { -margin } else { margin };
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Weighted mean logistic loss of `margins`.
pub fn weighted_logistic_loss(samples: &[FlatSample], margins: &[f64]) -> f64 {
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    samples.iter().zip(margins).map(|(s, &m)| s.weight * logistic_loss(m, s.label)).sum::<f64>() / total
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    /// Higher gain wins; ties go to the lower feature, then lower threshold.
    /// Gains within a relative 1e-12 count as tied, so rounding from the
    /// summation order cannot decide between equally good splits.
    fn beats(&self, other: &Candidate) -> bool {
        let tol = GAIN_TIE_TOLERANCE * self.gain.abs().max(other.gain.abs());
        if (self.gain - other.gain).abs() > tol {
            return self.gain > other.gain;
        }
        self.feature < other.feature || (self.feature == other.feature && self.threshold < other.threshold)
    }
}

enum Slot {
    Open { depth: usize, grad: f64, hess: f64 },
    Leaf { value: f64, cover: f64 },
    Split { feature: usize, threshold: f64, gain: f64, cover: f64, left: usize, right: usize },
}

struct Columns {
    /// Column-major feature values.
    values: Vec<Vec<f64>>,
    /// Per feature, sample indices ordered by (value, index).
    order: Vec<Vec<usize>>,
}

impl Columns {
    fn new(samples: &[FlatSample], n_features: usize) -> Self {
        let values: Vec<Vec<f64>> =
            (0..n_features).map(|f| samples.iter().map(|s| s.features[f]).collect()).collect();
        let order = values
            .par_iter()
            .map(|col| {
                let mut idx: Vec<usize> = (0..col.len()).collect();
                idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { values, order }
    }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Best split per open node for one feature, indexed by node slot.
fn scan_feature(
    f: usize,
    cols: &Columns,
    node_of: &[Option<usize>],
    slots: &[Slot],
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
) -> Vec<Option<(Candidate, f64)>> {
    let mut left = vec![(0.0f64, 0.0f64, f64::NAN, false); slots.len()];
    let mut best: Vec<Option<(Candidate, f64)>> = vec![None; slots.len()];
    let col = &cols.values[f];
    for &s in &cols.order[f] {
        let Some(k) = node_of[s] else { continue };
        let Slot::Open { grad: g_total, hess: h_total, .. } = slots[k] else { continue };
        let x = col[s];
        let (gl, hl, last, seen) = left[k];
        if seen && x > last {
            let (gr, hr) = (g_total - gl, h_total - hl);
            if hl >= params.min_child_weight && hr >= params.min_child_weight {
                let gain = 0.5
                    * (score(gl, hl, params.lambda) + score(gr, hr, params.lambda)
                        - score(g_total, h_total, params.lambda));
                let cand = Candidate { gain, feature: f, threshold: x };
                if best[k].map_or(true, |(b, _)| cand.beats(&b)) {
                    best[k] = Some((cand, hl));
                }
            }
        }
        left[k] = (gl + grad[s], hl + hess[s], x, true);
    }
    best
}

fn grow_tree(cols: &Columns, grad: &[f64], hess: &[f64], params: &GbtParams) -> TreeNode {
    let n = grad.len();
    let mut node_of: Vec<Option<usize>> = vec![Some(0); n];
    let mut slots = vec![Slot::Open { depth: 0, grad: grad.iter().sum(), hess: hess.iter().sum() }];
    let leaf = |g: f64, h: f64| Slot::Leaf { value: -params.learning_rate * g / (h + params.lambda), cover: h };

    loop {
        let open: Vec<usize> = (0..slots.len()).filter(|&k| matches!(slots[k], Slot::Open { .. })).collect();
        if open.is_empty() {
            break;
        }
        // nodes at the depth limit cannot split
        for &k in &open {
            if let Slot::Open { depth, grad: g, hess: h } = slots[k] {
                if depth >= params.max_depth {
                    slots[k] = leaf(g, h);
                }
            }
        }
        let per_feature: Vec<Vec<Option<(Candidate, f64)>>> = (0..cols.values.len())
            .into_par_iter()
            .map(|f| scan_feature(f, cols, &node_of, &slots, grad, hess, params))
            .collect();

        let mut split_to: Vec<Option<(usize, f64, usize, usize)>> = vec![None; slots.len()];
        for &k in &open {
            let Slot::Open { depth, grad: g, hess: h } = slots[k] else { continue };
            let mut best: Option<Candidate> = None;
            for found in per_feature.iter().filter_map(|v| v[k]) {
                if best.map_or(true, |b| found.0.beats(&b)) {
                    best = Some(found.0);
                }
            }
            match best {
                Some(c) if c.gain - params.gamma >= 0.0 => {
                    let (left, right) = (slots.len(), slots.len() + 1);
                    slots.push(Slot::Open { depth: depth + 1, grad: 0.0, hess: 0.0 });
                    slots.push(Slot::Open { depth: depth + 1, grad: 0.0, hess: 0.0 });
                    slots[k] = Slot::Split { feature: c.feature, threshold: c.threshold, gain: c.gain, cover: h, left, right };
                    split_to[k] = Some((c.feature, c.threshold, left, right));
                }
                _ => slots[k] = leaf(g, h),
            }
        }
        split_to.resize(slots.len(), None);

        // route samples and total the children in sample order
        for s in 0..n {
            let Some(k) = node_of[s] else { continue };
            match split_to[k] {
                Some((feature, threshold, left, right)) => {
                    let child = if cols.values[feature][s] < threshold { left } else { right };
                    node_of[s] = Some(child);
                    if let Slot::Open { grad: g, hess: h, .. } = &mut slots[child] {
                        *g += grad[s];
                        *h += hess[s];
                    }
                }
                None => node_of[s] = None,
            }
        }
    }
    assemble(&slots, 0)
}

fn assemble(slots: &[Slot], k: usize) -> TreeNode {
    match slots[k] {
        Slot::Leaf { value, cover } => TreeNode::Leaf { value, cover },
        Slot::Split { feature, threshold, gain, cover, left, right } => TreeNode::Split {
            feature,
            threshold,
            gain,
            cover,
            left: Box::new(assemble(slots, left)),
            right: Box::new(assemble(slots, right)),
        },
        Slot::Open { .. } => unreachable!("every slot is closed before assembly"),
    }
}

fn check_samples(samples: &[FlatSample]) -> Result<usize, GbtError> {
    let first = samples.first().ok_or(GbtError::Empty)?;
    let n_features = first.features.len();
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != n_features {
            return Err(GbtError::Length { expected: n_features, got: s.features.len() });
        }
        if !(s.weight > 0.0 && s.weight.is_finite()) {
            return Err(GbtError::NonPositiveWeight(i));
        }
    }
    Ok(n_features)
}

/// Boosts on `train`. When `val` is nonempty, training stops once the
/// validation F1 has not improved for `early_stopping_rounds` rounds and
/// the forest is cut back to its best round.
pub fn train_gbt(train: &[FlatSample], val: &[FlatSample], params: &GbtParams) -> Result<BoostedForest, GbtError> {
    let n_features = check_samples(train)?;
    if !train.iter().any(|s| s.label) || train.iter().all(|s| s.label) {
        return Err(GbtError::SingleClass);
    }
    if let Some(s) = val.iter().find(|s| s.features.len() != n_features) {
        return Err(GbtError::Length { expected: n_features, got: s.features.len() });
    }
    let total_w: f64 = train.iter().map(|s| s.weight).sum();
    let pos_w: f64 = train.iter().filter(|s| s.label).map(|s| s.weight).sum();
    let rate = pos_w / total_w;
    let base_score = (rate / (1.0 - rate)).ln();

    let cols = Columns::new(train, n_features);
    let mut margins = vec![base_score; train.len()];
    let mut val_margins = vec![base_score; val.len()];
    let mut forest = BoostedForest {
        version: FOREST_VERSION.to_string(),
        n_features,
        base_score,
        params: *params,
        trees: Vec::new(),
        history: Vec::new(),
    };
    let mut best: Option<(f64, usize)> = None;

    for round in 1..=params.n_rounds {
        let (grad, hess): (Vec<f64>, Vec<f64>) = train
            .iter()
            .zip(&margins)
            .map(|(s, &m)| {
                let p = sigmoid(m);
                let y = if s.label { 1.0 } else { 0.0 };
                (s.weight * (p - y), s.weight * p * (1.0 - p))
            })
            .unzip();
        let tree = grow_tree(&cols, &grad, &hess, params);
        for (m, s) in margins.iter_mut().zip(train) {
            *m += tree.leaf_value(&s.features);
        }
        for (m, s) in val_margins.iter_mut().zip(val) {
            *m += tree.leaf_value(&s.features);
        }
        forest.trees.push(tree);

        let val_f1 = if val.is_empty() {
            None
        } else {
            let preds: Vec<bool> = val_margins.iter().map(|&m| sigmoid(m) >= params.decision_threshold).collect();
            let labels: Vec<bool> = val.iter().map(|s| s.label).collect();
            Some(classifier_metrics(&preds, &labels)?.f1.unwrap_or(0.0))
        };
        let train_loss = weighted_logistic_loss(train, &margins);
        forest.history.push(RoundLog { round, train_loss, val_f1 });
        log::debug!("round {round}: loss {train_loss:.6} val_f1 {val_f1:?}");

        if let Some(f1) = val_f1 {
            if best.map_or(true, |(b, _)| f1 > b) {
                best = Some((f1, round));
            } else if round - best.unwrap().1 >= params.early_stopping_rounds {
                break;
            }
        }
    }
    if let Some((_, round)) = best {
        forest.trees.truncate(round);
    }
    Ok(forest)
}

/// Confusion-matrix summary. Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no predictions")]
    Empty,
    #[error("{predictions} predictions for {labels} labels")]
    Length { predictions: usize, labels: usize },
}

impl From<MetricsError> for GbtError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Empty => GbtError::Empty,
            MetricsError::Length { predictions, labels } => GbtError::Length { expected: labels, got: predictions },
        }
    }
}

pub fn classifier_metrics(predictions: &[bool], labels: &[bool]) -> Result<ClassifierMetrics, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::Length { predictions: predictions.len(), labels: labels.len() });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fne) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(ClassifierMetrics {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fne,
        accuracy: (tp + tn) as f64 / predictions.len() as f64,
        precision,
        recall,
        f1,
    })
}

/// One-row CSV of the metrics; undefined ratios are left empty.
pub fn write_metrics_csv<W: Write>(metrics: &ClassifierMetrics, out: W) -> Result<(), csv::Error> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"])?;
    w.write_record([
        metrics.accuracy.to_string(),
        opt(metrics.precision),
        opt(metrics.recall),
        opt(metrics.f1),
        metrics.true_positives.to_string(),
        metrics.false_positives.to_string(),
        metrics.true_negatives.to_string(),
        metrics.false_negatives.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}
