//! Classifier and regressor composition, and error reporting.
//!
//! * `R`: the mixed regressor alone.
//! * `CR`: classifier first; negatives are 0 MW, positives go to the
//!   blackout-only regressor.
//! * `CVR`: as `CR`, but a negative whose mixed-regressor estimate is above
//!   the verification threshold is sent to the blackout-only regressor.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{is_blackout, SampleSet};
use crate::gbt::{classifier_metrics, featurize, predict_gbt, BoostedForest, ClassifierMetrics, GbtError};
use crate::gnn::{predict_samples, GnnError, GnnModel};
use crate::grid::Grid;
use crate::influence::AugmentedTopology;

pub const DEFAULT_VERIFICATION_MW: f64 = 100.0;
pub const SEVERE_LOW_MW: f64 = 10.0;
pub const SEVERE_HIGH_MW: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    R,
    CR,
    CVR,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_uppercase().as_str() {
            "R" => Some(Variant::R),
            "CR" => Some(Variant::CR),
            "CVR" => Some(Variant::CVR),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::R => "R",
            Variant::CR => "CR",
            Variant::CVR => "CVR",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Forest(BoostedForest),
    /// Reads the true label; only usable through [`evaluate_model`].
    Perfect,
}

/// 1 iff the true blackout size is a blackout.
pub fn perfect_classifier(true_mw: f64) -> bool {
    is_blackout(true_mw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub model: GnnModel,
    pub topology: AugmentedTopology,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub variant: Variant,
    pub classifier: Option<Classifier>,
    pub mixed_gnn: Option<Regressor>,
    pub blackout_gnn: Option<Regressor>,
    pub verification_threshold: f64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("variant {variant} needs a {component}")]
    MissingComponent { variant: Variant, component: &'static str },
    #[error("verification threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("the perfect classifier reads labels and is only available during evaluation")]
    PerfectOutsideEvaluation,
    #[error("empty evaluation set")]
    Empty,
    #[error("{predictions} predictions for {labels} labels")]
    Length { predictions: usize, labels: usize },
    #[error("severe-error thresholds need low < high, got {low} and {high}")]
    SevereThresholds { low: f64, high: f64 },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineModel {
    pub fn new(
        variant: Variant,
        classifier: Option<Classifier>,
        mixed_gnn: Option<Regressor>,
        blackout_gnn: Option<Regressor>,
        verification_threshold: f64,
    ) -> Result<Self, PipelineError> {
        let model = Self { variant, classifier, mixed_gnn, blackout_gnn, verification_threshold };
        model.check()?;
        Ok(model)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let missing = |component| Err(PipelineError::MissingComponent { variant: self.variant, component });
        let needs_mixed = matches!(self.variant, Variant::R | Variant::CVR);
        let needs_classified = matches!(self.variant, Variant::CR | Variant::CVR);
        if needs_mixed && self.mixed_gnn.is_none() {
            return missing("mixed regressor");
        }
        if needs_classified && self.classifier.is_none() {
            return missing("classifier");
        }
        if needs_classified && self.blackout_gnn.is_none() {
            return missing("blackout-only regressor");
        }
        if self.verification_threshold.is_nan() || self.verification_threshold <= 0.0 {
            return Err(PipelineError::Threshold(self.verification_threshold));
        }
        Ok(())
    }

    /// `R+`, `CVR`, ...: the variant name, with `+` when a regressor in use
    /// has statistical edges.
    pub fn label(&self) -> String {
        let augmented = |r: &Option<Regressor>| r.as_ref().is_some_and(|r| !r.topology.statistical_edges.is_empty());
        let plus = match self.variant {
            Variant::R => augmented(&self.mixed_gnn),
            Variant::CR => augmented(&self.blackout_gnn),
            Variant::CVR => augmented(&self.mixed_gnn) || augmented(&self.blackout_gnn),
        };
        format!("{}{}", self.variant, if plus { "+" } else { "" })
    }

    /// Estimates in MW for `indices` of `set`. The perfect classifier is
    /// rejected here.
    pub fn predict(&self, grid: &Grid, set: &SampleSet, indices: &[usize]) -> Result<Vec<f64>, PipelineError> {
        if matches!(self.classifier, Some(Classifier::Perfect)) && self.variant != Variant::R {
            return Err(PipelineError::PerfectOutsideEvaluation);
        }
        Ok(self.run(grid, set, indices)?.0)
    }

    /// Estimates and, for the classified variants, the class decisions.
    fn run(&self, grid: &Grid, set: &SampleSet, indices: &[usize]) -> Result<(Vec<f64>, Option<Vec<bool>>), PipelineError> {
        self.check()?;
        let regress = |r: &Option<Regressor>, which: &[usize]| -> Result<Vec<f64>, PipelineError> {
            let r = r.as_ref().expect("checked by PipelineModel::check");
            Ok(predict_samples(&r.model, grid, set, &r.topology, which)?)
        };
        if self.variant == Variant::R {
            return Ok((regress(&self.mixed_gnn, indices)?, None));
        }

        let positive: Vec<bool> = match self.classifier.as_ref().expect("checked") {
            Classifier::Perfect => indices.iter().map(|&i| perfect_classifier(set.samples[i].blackout_mw)).collect(),
            Classifier::Forest(forest) => indices
                .iter()
                .map(|&i| {
                    let s = &set.samples[i];
                    let x = featurize(grid, set.state_of(s), &s.failures)?;
                    Ok(predict_gbt(forest, &x)?.1)
                })
                .collect::<Result<_, GbtError>>()?,
        };

        let mut route_to_blackout = positive.clone();
        if self.variant == Variant::CVR {
            let negatives: Vec<usize> = (0..indices.len()).filter(|&k| !positive[k]).collect();
            let which: Vec<usize> = negatives.iter().map(|&k| indices[k]).collect();
            let mixed = regress(&self.mixed_gnn, &which)?;
            for (&k, &mw) in negatives.iter().zip(&mixed) {
                if mw > self.verification_threshold {
                    route_to_blackout[k] = true;
                }
            }
        }
        let routed: Vec<usize> = (0..indices.len()).filter(|&k| route_to_blackout[k]).collect();
        let which: Vec<usize> = routed.iter().map(|&k| indices[k]).collect();
        let estimates = regress(&self.blackout_gnn, &which)?;
        let mut out = vec![0.0; indices.len()];
        for (&k, &mw) in routed.iter().zip(&estimates) {
            out[k] = mw;
        }
        Ok((out, Some(positive)))
    }
}

/// Single-scenario routing rule given the component outputs, which are only
/// evaluated when needed.
pub fn route(
    variant: Variant,
    classifier_positive: impl FnOnce() -> bool,
    mixed: impl FnOnce() -> f64,
    blackout: impl FnOnce() -> f64,
    verification_threshold: f64,
) -> f64 {
    match variant {
        Variant::R => mixed(),
        Variant::CR => {
            if classifier_positive() {
                blackout()
            } else {
                0.0
            }
        }
        Variant::CVR => {
            if classifier_positive() || mixed() > verification_threshold {
                blackout()
            } else {
                0.0
            }
        }
    }
}

/// Count, MAE and MedAE of absolute errors; the ratios are `None` when the
/// set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mae: Option<f64>,
    pub medae: Option<f64>,
}

impl ErrorStats {
    pub fn of(abs_errors: &[f64]) -> Self {
        if abs_errors.is_empty() {
            return Self { count: 0, mae: None, medae: None };
        }
        let mut sorted = abs_errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Self { count: n, mae: Some(abs_errors.iter().sum::<f64>() / n as f64), medae: Some(median) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SevereSet {
    pub stats: ErrorStats,
    /// Percentage of all evaluated samples.
    pub incidence_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SevereErrors {
    pub low_mw: f64,
    pub high_mw: f64,
    /// Predicted below `low` while the truth is above `high`.
    pub under: SevereSet,
    /// Truth below `low` while the prediction is above `high`.
    pub over: SevereSet,
}

pub fn is_severe_under(predicted: f64, truth: f64, low: f64, high: f64) -> bool {
    predicted < low && truth > high
}

pub fn is_severe_over(predicted: f64, truth: f64, low: f64, high: f64) -> bool {
    truth < low && predicted > high
}

pub fn severe_errors(predictions: &[f64], labels: &[f64], low: f64, high: f64) -> Result<SevereErrors, PipelineError> {
    if predictions.len() != labels.len() {
        return Err(PipelineError::Length { predictions: predictions.len(), labels: labels.len() });
    }
    if !(low < high) {
        return Err(PipelineError::SevereThresholds { low, high });
    }
    let n = predictions.len();
    let collect = |member: fn(f64, f64, f64, f64) -> bool| {
        let errors: Vec<f64> = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &y)| member(p, y, low, high))
            .map(|(p, y)| (p - y).abs())
            .collect();
        let incidence_pct = if n == 0 { 0.0 } else { 100.0 * errors.len() as f64 / n as f64 };
        SevereSet { stats: ErrorStats::of(&errors), incidence_pct }
    };
    Ok(SevereErrors { low_mw: low, high_mw: high, under: collect(is_severe_under), over: collect(is_severe_over) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub all: ErrorStats,
    /// Samples whose true size is a blackout.
    pub blackout: ErrorStats,
    pub non_blackout: ErrorStats,
    pub severe: SevereErrors,
    pub classifier: Option<ClassifierMetrics>,
}

/// Error report of `predictions` against the true sizes in `labels`.
pub fn evaluate(
    variant: &str,
    predictions: &[f64],
    labels: &[f64],
    classifier_decisions: Option<&[bool]>,
    low: f64,
    high: f64,
) -> Result<EvalReport, PipelineError> {
    if predictions.len() != labels.len() {
        return Err(PipelineError::Length { predictions: predictions.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(PipelineError::Empty);
    }
    let errors: Vec<f64> = predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).collect();
    let pick = |want: bool| -> Vec<f64> {
        errors.iter().zip(labels).filter(|&(_, &y)| is_blackout(y) == want).map(|(&e, _)| e).collect()
    };
    let truth: Vec<bool> = labels.iter().map(|&y| is_blackout(y)).collect();
    let classifier = match classifier_decisions {
        Some(d) => Some(classifier_metrics(d, &truth).map_err(GbtError::from)?),
        None => None,
    };
    Ok(EvalReport {
        variant: variant.to_string(),
        all: ErrorStats::of(&errors),
        blackout: ErrorStats::of(&pick(true)),
        non_blackout: ErrorStats::of(&pick(false)),
        severe: severe_errors(predictions, labels, low, high)?,
        classifier,
    })
}

/// Runs the pipeline on `indices` and reports its errors. Returns the
/// report and the per-sample estimates.
pub fn evaluate_model(
    model: &PipelineModel,
    grid: &Grid,
    set: &SampleSet,
    indices: &[usize],
    low: f64,
    high: f64,
) -> Result<(EvalReport, Vec<f64>), PipelineError> {
    if indices.is_empty() {
        return Err(PipelineError::Empty);
    }
    let (predictions, decisions) = model.run(grid, set, indices)?;
    let labels: Vec<f64> = indices.iter().map(|&i| set.samples[i].blackout_mw).collect();
    let report = evaluate(&model.label(), &predictions, &labels, decisions.as_deref(), low, high)?;
    Ok((report, predictions))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Rows `all`, `blackout`, `non_blackout`, `severe_under`,
    /// `severe_over`; undefined values are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variant", "category", "count", "incidence_pct", "mae_mw", "medae_mw"])?;
        let rows = [
            ("all", self.all, None),
            ("blackout", self.blackout, None),
            ("non_blackout", self.non_blackout, None),
            ("severe_under", self.severe.under.stats, Some(self.severe.under.incidence_pct)),
            ("severe_over", self.severe.over.stats, Some(self.severe.over.incidence_pct)),
        ];
        for (name, stats, incidence) in rows {
            w.write_record([
                self.variant.clone(),
                name.to_string(),
                stats.count.to_string(),
                opt(incidence),
                opt(stats.mae),
                opt(stats.medae),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), PipelineError> {
        serde_json::to_writer_pretty(out, self).map_err(std::io::Error::from)?;
        Ok(())
    }
}

/// `scenario,predicted_mw,true_mw` rows for parity plots.
pub fn write_parity<W: Write>(indices: &[usize], predictions: &[f64], labels: &[f64], out: W) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "predicted_mw", "true_mw"])?;
    for ((i, p), y) in indices.iter().zip(predictions).zip(labels) {
        w.write_record([i.to_string(), p.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
