//! Agreement between the attributions of two models on the same pairs.
//!
//! The first model is attributed in exact mode, the second in its default
//! mode. For every pair and tapped layer the flattened token matrices are
//! compared by rank and linear correlation and by top-k overlap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{defined, PlotData, Probe, ProbeError, ProbeReport};
use crate::attribution::{attribute_pair, AttributionRequest, Mode, Reduce};
use crate::encoder::SiameseEncoder;
use crate::metrics::{jaccard_topk, median, pearson, spearman};
use crate::training::PairRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementParams {
    pub model_exact: String,
    pub model_tuned: String,
    pub layers: Vec<usize>,
    pub steps: usize,
    pub top_k: Vec<usize>,
    /// Aggregates are also reported over pairs whose mean score exceeds this.
    pub score_threshold: f64,
}

impl AgreementParams {
    /// Layers `1..L` (every block output except the last), 100 steps,
    /// `k ∈ {3, 10}`, score threshold 0.5.
    pub fn new(
        model_exact: impl Into<String>,
        model_tuned: impl Into<String>,
        num_layers: usize,
    ) -> Self {
        Self {
            model_exact: model_exact.into(),
            model_tuned: model_tuned.into(),
            layers: (1..num_layers.max(2)).collect(),
            steps: AttributionRequest::DEFAULT_STEPS,
            top_k: vec![3, 10],
            score_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKOverlap {
    pub k_requested: usize,
    /// `k` clamped to the number of cells.
    pub k: usize,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAgreement {
    pub layer: usize,
    /// `None` when either matrix is constant.
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub top_k: Vec<TopKOverlap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub a: String,
    pub b: String,
    pub score_exact: f64,
    pub score_tuned: f64,
    pub mean_score: f64,
    pub layers: Vec<LayerAgreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub stdev: f64,
    pub median: f64,
}

fn moments(values: &[f64]) -> Option<Moments> {
    let n = values.len();
    let med = median(values)?;
    let mean = values.iter().sum::<f64>() / n as f64;
    let stdev = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Moments {
        count: n,
        mean,
        stdev,
        median: med,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub pairs: usize,
    pub spearman: Option<Moments>,
    pub pearson: Option<Moments>,
    /// One entry per requested `k`, in request order.
    pub jaccard: Vec<Option<Moments>>,
    /// Pairs whose correlations were undefined.
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer: usize,
    pub all: AgreementStats,
    pub above_threshold: AgreementStats,
}

fn stats<'r>(per_pair: impl Iterator<Item = &'r LayerAgreement>, ks: usize) -> AgreementStats {
    let items: Vec<&LayerAgreement> = per_pair.collect();
    let rho: Vec<f64> = items.iter().filter_map(|l| l.spearman).collect();
    let r: Vec<f64> = items.iter().filter_map(|l| l.pearson).collect();
    let jaccard = (0..ks)
        .map(|i| {
            let v: Vec<f64> = items.iter().map(|l| l.top_k[i].jaccard).collect();
            moments(&v)
        })
        .collect();
    AgreementStats {
        pairs: items.len(),
        spearman: moments(&rho),
        pearson: moments(&r),
        jaccard,
        undefined: items
            .iter()
            .filter(|l| l.spearman.is_none() || l.pearson.is_none())
            .count(),
    }
}

pub(crate) struct AgreementProbe;

impl Probe for AgreementProbe {
    const NAME: &'static str = "agreement";
    type Params = AgreementParams;
    type Record = AgreementRecord;
    type Aggregates = Vec<LayerAggregate>;

    fn aggregate(
        params: &AgreementParams,
        records: &[AgreementRecord],
    ) -> Result<(Vec<LayerAggregate>, Vec<PlotData>), ProbeError> {
        let ks = params.top_k.len();
        let mut aggregates = Vec::new();
        let mut plots = Vec::new();
        for (li, &layer) in params.layers.iter().enumerate() {
            let all = records
                .iter()
                .map(|r| {
                    r.layers
                        .get(li)
                        .filter(|l| l.layer == layer)
                        .ok_or(ProbeError::Mismatch {
                            what: "layer records",
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let high: Vec<&LayerAgreement> = records
                .iter()
                .zip(&all)
                .filter(|(r, _)| r.mean_score > params.score_threshold)
                .map(|(_, l)| *l)
                .collect();
            aggregates.push(LayerAggregate {
                layer,
                all: stats(all.iter().copied(), ks),
                above_threshold: stats(high.into_iter(), ks),
            });
            let (x, y): (Vec<f64>, Vec<f64>) = records
                .iter()
                .zip(&all)
                .filter_map(|(r, l)| l.spearman.map(|s| (r.mean_score, s)))
                .unzip();
            plots.push(PlotData::scatter(
                &format!("spearman_vs_score_layer_{layer}"),
                "mean score",
                "spearman",
                x,
                y,
            ));
        }
        Ok((aggregates, plots))
    }
}

/// Compares `exact` (attributed in exact mode) with `tuned` (attributed in
/// its default mode) at every layer in `params.layers`.
pub fn agreement_probe(
    exact: &SiameseEncoder,
    tuned: &SiameseEncoder,
    pairs: &[PairRecord],
    params: &AgreementParams,
) -> Result<ProbeReport, ProbeError> {
    if pairs.is_empty() {
        return Err(ProbeError::Empty("pairs"));
    }
    if params.layers.is_empty() {
        return Err(ProbeError::Parameter("no layers requested".into()));
    }
    if params.top_k.contains(&0) {
        return Err(ProbeError::Parameter(
            "top-k sizes must be at least 1".into(),
        ));
    }
    if exact.vocab() != tuned.vocab() {
        return Err(ProbeError::TokenizerMismatch);
    }
    let tuned_mode = AttributionRequest::for_model(tuned).mode;
    let request = |mode: Mode, layer: usize| AttributionRequest {
        layer,
        steps: params.steps,
        mode,
        reduce: Reduce::Token,
    };
    for &layer in &params.layers {
        request(Mode::Exact, layer).validate(exact)?;
        request(tuned_mode, layer).validate(tuned)?;
    }
    let records = pairs
        .par_iter()
        .map(|p| {
            let ta = exact.tokenize(&p.a);
            let tb = exact.tokenize(&p.b);
            let mut layers = Vec::with_capacity(params.layers.len());
            let mut scores = (0.0, 0.0);
            for &layer in &params.layers {
                let re = attribute_pair(exact, &ta, &tb, &request(Mode::Exact, layer))?;
                let rt = attribute_pair(tuned, &ta, &tb, &request(tuned_mode, layer))?;
                scores = (re.score, rt.score);
                let (x, y) = (re.matrix.data(), rt.matrix.data());
                let top_k = params
                    .top_k
                    .iter()
                    .map(|&k_requested| {
                        let k = k_requested.min(x.len());
                        Ok(TopKOverlap {
                            k_requested,
                            k,
                            jaccard: jaccard_topk(&re.matrix, &rt.matrix, k)?,
                        })
                    })
                    .collect::<Result<_, ProbeError>>()?;
                layers.push(LayerAgreement {
                    layer,
                    spearman: defined(spearman(x, y))?,
                    pearson: defined(pearson(x, y))?,
                    top_k,
                });
            }
            Ok(AgreementRecord {
                a: p.a.clone(),
                b: p.b.clone(),
                score_exact: scores.0,
                score_tuned: scores.1,
                mean_score: (scores.0 + scores.1) / 2.0,
                layers,
            })
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    AgreementProbe::report(params, &records, Vec::new())
}
