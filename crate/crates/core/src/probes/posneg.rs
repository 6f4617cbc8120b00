//! Sums of the positive and of the negative cells of attribution matrices.
//!
//! The score bound is the largest value the attributions can legitimately
//! sum to: 1 in exact mode, 2 in approximate mode (the score plus the
//! near-one reference term).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fraction, summary, AttributionSettings, PlotData, Probe, ProbeError, ProbeReport};
use crate::attribution::{attribute_pair, Mode, Reduce};
use crate::encoder::SiameseEncoder;
use crate::metrics::{DistributionSummary, Thresholds};
use crate::numerics::Tensor;
use crate::training::PairRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosNegParams {
    pub model: String,
    pub attribution: AttributionSettings,
}

impl PosNegParams {
    pub fn score_bound(&self) -> f64 {
        match self.attribution.mode {
            Mode::Exact => 1.0,
            Mode::Approximate => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosNegRecord {
    pub a: String,
    pub b: String,
    pub score: f64,
    pub positive: f64,
    /// Sum of negative cells (≤ 0).
    pub negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosNegAggregates {
    pub pairs: usize,
    pub score_bound: f64,
    pub fraction_positive_above_bound: f64,
    pub positive: Option<DistributionSummary>,
    pub negative: Option<DistributionSummary>,
}

/// `(Σ positive cells, Σ negative cells)`.
pub fn positive_negative(m: &Tensor) -> (f64, f64) {
    m.data().iter().fold(
        (0.0, 0.0),
        |(p, n), &v| {
            if v > 0.0 {
                (p + v, n)
            } else {
                (p, n + v)
            }
        },
    )
}

pub(crate) struct PosNegProbe;

impl Probe for PosNegProbe {
    const NAME: &'static str = "posneg";
    type Params = PosNegParams;
    type Record = PosNegRecord;
    type Aggregates = PosNegAggregates;

    fn aggregate(
        params: &PosNegParams,
        records: &[PosNegRecord],
    ) -> Result<(PosNegAggregates, Vec<PlotData>), ProbeError> {
        let bound = params.score_bound();
        let pos: Vec<f64> = records.iter().map(|r| r.positive).collect();
        let neg: Vec<f64> = records.iter().map(|r| r.negative).collect();
        let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
        let thresholds = Thresholds {
            below: vec![bound],
            ..Thresholds::default()
        };
        let aggregates = PosNegAggregates {
            pairs: records.len(),
            score_bound: bound,
            fraction_positive_above_bound: fraction(&pos, |v| v > bound),
            positive: summary(&pos, &thresholds)?,
            negative: summary(&neg, &Thresholds::default())?,
        };
        let plots = vec![
            PlotData::scatter(
                "positive_vs_score",
                "score",
                "positive sum",
                scores.clone(),
                pos,
            ),
            PlotData::scatter("negative_vs_score", "score", "negative sum", scores, neg),
        ];
        Ok((aggregates, plots))
    }
}

/// Token-level positive and negative sums for every pair.
pub fn pos_neg_probe(
    model: &SiameseEncoder,
    pairs: &[PairRecord],
    params: &PosNegParams,
) -> Result<ProbeReport, ProbeError> {
    if pairs.is_empty() {
        return Err(ProbeError::Empty("pairs"));
    }
    let request = params.attribution.request(Reduce::Token);
    request.validate(model)?;
    let records = pairs
        .par_iter()
        .map(|p| {
            let r = attribute_pair(
                model,
                &model.tokenize(&p.a),
                &model.tokenize(&p.b),
                &request,
            )?;
            let (positive, negative) = positive_negative(&r.matrix);
            Ok(PosNegRecord {
                a: p.a.clone(),
                b: p.b.clone(),
                score: r.score,
                positive,
                negative,
            })
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    PosNegProbe::report(params, &records, Vec::new())
}
