//! Tracing accuracy, robustness to frame perturbations, loss ablations and
//! CSV reports.
//!
//! Each held-out video contributes [`QueryProtocol::clips_per_video`] seeded
//! clips, and each clip is one query. Clip start offsets depend only on the
//! protocol seed and the video, so every perturbation is scored on the same
//! frames.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::code::Activation;
use crate::dataset::frames::read_frames;
use crate::dataset::{perturb, sample_clip, FeatureSequence, Perturbation, VideoFeatures, VideoRef};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::index::{encode_clip, trace, TraceIndex};
use crate::loss::LossTerms;
use crate::seed;
use crate::trainer::{fit, FeatureBank, TrainConfig, TrainHistory, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryProtocol {
    pub clips_per_video: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for QueryProtocol {
    fn default() -> Self {
        QueryProtocol { clips_per_video: 4, stride: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub group_id: u32,
    pub label: String,
    pub clip: FeatureSequence,
}

/// Seeded clips of one video's descriptors.
pub fn video_queries(
    group_id: u32,
    label: &str,
    feats: &VideoFeatures,
    t: usize,
    protocol: &QueryProtocol,
) -> Result<Vec<Query>> {
    let key = seed::derive(protocol.seed, &[u64::from(group_id)]);
    (0..protocol.clips_per_video)
        .map(|c| {
            Ok(Query {
                group_id,
                label: label.to_string(),
                clip: sample_clip(feats, t, protocol.stride, seed::derive(key, &[c as u64]))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryOutcome {
    pub label: String,
    pub true_group: u32,
    pub traced_group: u32,
    pub distance: u32,
    pub runner_up_distance: u32,
}

pub fn trace_queries(idx: &TraceIndex, params: &EncoderParams, queries: &[Query]) -> Result<Vec<QueryOutcome>> {
    if queries.is_empty() {
        return Err(Error::Empty("no queries"));
    }
    queries
        .par_iter()
        .map(|q| {
            let r = trace(idx, &encode_clip(params, &q.clip)?)?;
            Ok(QueryOutcome {
                label: q.label.clone(),
                true_group: q.group_id,
                traced_group: r.group_id,
                distance: r.distance,
                runner_up_distance: r.runner_up_distance,
            })
        })
        .collect()
}

/// Fraction of queries traced to their own group.
pub fn top1_accuracy(idx: &TraceIndex, params: &EncoderParams, queries: &[Query]) -> Result<f64> {
    Ok(accuracy(&trace_queries(idx, params, queries)?))
}

fn accuracy(outcomes: &[QueryOutcome]) -> f64 {
    let hits = outcomes.iter().filter(|o| o.true_group == o.traced_group).count();
    hits as f64 / outcomes.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub condition: String,
    pub k: usize,
    pub accuracy: f64,
    pub mean_distance: f64,
    pub max_distance: u32,
    /// One row per query, in query order.
    pub confusion: Vec<QueryOutcome>,
}

impl ConditionResult {
    pub fn from_outcomes(condition: &str, k: usize, outcomes: Vec<QueryOutcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Empty("no query outcomes"));
        }
        let mean_distance = outcomes.iter().map(|o| f64::from(o.distance)).sum::<f64>() / outcomes.len() as f64;
        Ok(ConditionResult {
            condition: condition.to_string(),
            k,
            accuracy: accuracy(&outcomes),
            mean_distance,
            max_distance: outcomes.iter().map(|o| o.distance).max().unwrap_or(0),
            confusion: outcomes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ConditionResult>,
}

impl EvalReport {
    pub fn row(&self, condition: &str) -> Option<&ConditionResult> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    /// Accuracy lost relative to the unperturbed row, if present.
    pub fn drop(&self, condition: &str) -> Option<f64> {
        Some(self.row("original")?.accuracy - self.row(condition)?.accuracy)
    }

    pub fn robustness_csv(&self) -> String {
        let mut out = String::from("perturbation,k,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.condition, r.k, r.accuracy);
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("perturbation,query,true_group,traced_group,distance,runner_up\n");
        for r in &self.rows {
            for o in &r.confusion {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.condition, o.label, o.true_group, o.traced_group, o.distance, o.runner_up_distance
                );
            }
        }
        out
    }
}

/// The six table rows: unperturbed, detail, Gaussian blur, box blur, median
/// and crop, with the given magnitudes.
pub fn standard_perturbations(kernel: usize, sigma: f64, crop: f64, detail: f64) -> Vec<Perturbation> {
    vec![
        Perturbation::Identity,
        Perturbation::Detail { amount: detail },
        Perturbation::GaussianBlur { sigma, kernel },
        Perturbation::BoxBlur { kernel },
        Perturbation::Median { kernel },
        Perturbation::Crop { fraction: crop },
    ]
}

/// Top-1 accuracy on the test videos under each perturbation. Frames are
/// perturbed before descriptor extraction; the model and index are shared.
pub fn robustness_suite(
    idx: &TraceIndex,
    params: &EncoderParams,
    test: &[(u32, VideoRef)],
    perturbations: &[Perturbation],
    protocol: &QueryProtocol,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("robustness suite: no test videos"));
    }
    for p in perturbations {
        p.validate()?;
    }
    let videos = test
        .iter()
        .map(|(g, v)| Ok((*g, v.label.clone(), read_frames(&v.path)?)))
        .collect::<Result<Vec<_>>>()?;
    let t = params.cfg.t;
    let mut report = EvalReport::default();
    for p in perturbations {
        let queries = videos
            .iter()
            .map(|(g, label, frames)| {
                let feats = VideoFeatures::from_frames(&perturb(frames, p)?)?;
                video_queries(*g, label, &feats, t, protocol)
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        let outcomes = trace_queries(idx, params, &queries)?;
        report.rows.push(ConditionResult::from_outcomes(p.name(), idx.k(), outcomes)?);
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub terms: LossTerms,
    pub activation: Activation,
    pub outcome: TrainOutcome,
}

/// Trains once per activation with the chosen loss terms, all else equal.
pub fn ablation_run(
    bank: &FeatureBank,
    cfg: &TrainConfig,
    terms: LossTerms,
    activations: &[Activation],
) -> Result<Vec<AblationRun>> {
    activations
        .iter()
        .map(|&activation| {
            let c = TrainConfig { terms, activation, ..*cfg };
            Ok(AblationRun { terms, activation, outcome: fit(bank, &c)? })
        })
        .collect()
}

pub fn ablation_file_name(terms: LossTerms, activation: Activation) -> String {
    format!("ablation_{}_{}.csv", terms.name(), activation.name())
}

pub enum Report<'a> {
    Robustness(&'a EvalReport),
    Ablation {
        terms: LossTerms,
        activation: Activation,
        history: &'a TrainHistory,
    },
}

/// Writes one CSV per report and returns the paths in input order.
pub fn report_emit(reports: &[Report], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(reports.len());
    for r in reports {
        let (name, body) = match r {
            Report::Robustness(e) => ("robustness.csv".to_string(), e.robustness_csv()),
            Report::Ablation { terms, activation, history } => {
                (ablation_file_name(*terms, *activation), history.to_csv())
            }
        };
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
