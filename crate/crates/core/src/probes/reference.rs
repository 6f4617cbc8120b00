//! Sizes of the reference similarities and the reference term.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fraction, PlotData, Probe, ProbeError, ProbeReport};
use crate::encoder::{make_reference, SiameseEncoder};
use crate::metrics::{summarize, DistributionSummary, Thresholds};
use crate::training::PairRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceParams {
    pub model: String,
    /// Half-width of the band around zero for reference similarities.
    pub band: f64,
    /// Ceiling for reference terms.
    pub ceiling: f64,
}

impl ReferenceParams {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            band: 0.1,
            ceiling: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub a: String,
    pub b: String,
    pub score: f64,
    /// `f(a, r_b)`.
    pub ref_sim_a: f64,
    /// `f(b, r_a)`.
    pub ref_sim_b: f64,
    /// `f(r_a, r_b)`.
    pub ref_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAggregates {
    /// `f(a, r_b)` and `f(b, r_a)` pooled.
    pub reference_similarities: DistributionSummary,
    pub reference_terms: DistributionSummary,
    pub fraction_similarities_within_band: f64,
    pub fraction_terms_below_ceiling: f64,
}

pub(crate) struct ReferenceProbe;

impl Probe for ReferenceProbe {
    const NAME: &'static str = "reference";
    type Params = ReferenceParams;
    type Record = ReferenceRecord;
    type Aggregates = ReferenceAggregates;

    fn aggregate(
        params: &ReferenceParams,
        records: &[ReferenceRecord],
    ) -> Result<(ReferenceAggregates, Vec<PlotData>), ProbeError> {
        if records.is_empty() {
            return Err(ProbeError::Empty("pairs"));
        }
        let sims: Vec<f64> = records
            .iter()
            .flat_map(|r| [r.ref_sim_a, r.ref_sim_b])
            .collect();
        let terms: Vec<f64> = records.iter().map(|r| r.ref_term).collect();
        let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
        let sim_summary = summarize(
            &sims,
            &Thresholds {
                within: vec![params.band],
                ..Thresholds::default()
            },
        )?;
        let term_summary = summarize(
            &terms,
            &Thresholds {
                below: vec![params.ceiling],
                ..Thresholds::default()
            },
        )?;
        let plots = vec![
            PlotData::histogram("reference_similarities", "f(x, r)", &sim_summary.histogram),
            PlotData::histogram("reference_terms", "f(r_a, r_b)", &term_summary.histogram),
            PlotData::scatter(
                "reference_term_vs_score",
                "score",
                "f(r_a, r_b)",
                scores,
                terms.clone(),
            ),
        ];
        let aggregates = ReferenceAggregates {
            fraction_similarities_within_band: fraction(&sims, |v| v.abs() <= params.band),
            fraction_terms_below_ceiling: fraction(&terms, |v| v < params.ceiling),
            reference_similarities: sim_summary,
            reference_terms: term_summary,
        };
        Ok((aggregates, plots))
    }
}

/// Measures `f(a, r_b)`, `f(b, r_a)` and `f(r_a, r_b)` for every pair.
pub fn reference_probe(
    model: &SiameseEncoder,
    pairs: &[PairRecord],
    params: &ReferenceParams,
) -> Result<ProbeReport, ProbeError> {
    if pairs.is_empty() {
        return Err(ProbeError::Empty("pairs"));
    }
    let records = pairs
        .par_iter()
        .map(|p| {
            let ta = model.tokenize(&p.a);
            let tb = model.tokenize(&p.b);
            let ea = model.embedding(&ta)?;
            let eb = model.embedding(&tb)?;
            let ra = model.embedding(&make_reference(&ta))?;
            let rb = model.embedding(&make_reference(&tb))?;
            Ok(ReferenceRecord {
                a: p.a.clone(),
                b: p.b.clone(),
                score: model.score(&ea, &eb),
                ref_sim_a: model.score(&ea, &rb),
                ref_sim_b: model.score(&eb, &ra),
                ref_term: model.score(&ra, &rb),
            })
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    ReferenceProbe::report(params, &records, Vec::new())
}
