//! Attribution between an adjective and its synonym or opposite.
//!
//! Every `(anchor, synonym, opposite)` triplet yields two predicate
//! sentence pairs, `this {noun} is {anchor}.` against the synonym and the
//! opposite. The adjective–adjective cell of the word-level block-sum matrix
//! is recorded for both.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fraction, summary, unit_of_word, AttributionSettings, PlotData, Probe, ProbeError, ProbeReport,
};
use crate::attribution::{attribute_pair, AttributionRequest, Reduce};
use crate::encoder::{split_words, SiameseEncoder};
use crate::metrics::{mean, DistributionSummary, Thresholds};
use crate::training::{adjective_pairs, PairRecord, PROBE_NOUN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjectiveParams {
    pub model: String,
    pub attribution: AttributionSettings,
    pub noun: String,
    pub triplets: Vec<(String, String, String)>,
}

impl AdjectiveParams {
    /// The bundled triplets with the default noun.
    pub fn new(model: impl Into<String>, attribution: AttributionSettings) -> Self {
        Self {
            model: model.into(),
            attribution,
            noun: PROBE_NOUN.to_string(),
            triplets: crate::training::default_triplets(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjectiveRecord {
    pub anchor: String,
    pub synonym: String,
    pub opposite: String,
    pub synonym_score: f64,
    pub opposite_score: f64,
    pub synonym_cell: f64,
    pub opposite_cell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjectiveAggregates {
    pub triplets: usize,
    pub mean_synonym: Option<f64>,
    pub mean_opposite: Option<f64>,
    pub fraction_synonym_negative: f64,
    pub fraction_opposite_negative: f64,
    pub synonym_cells: Option<DistributionSummary>,
    pub opposite_cells: Option<DistributionSummary>,
}

pub(crate) struct AdjectiveProbe;

impl Probe for AdjectiveProbe {
    const NAME: &'static str = "adjectives";
    type Params = AdjectiveParams;
    type Record = AdjectiveRecord;
    type Aggregates = AdjectiveAggregates;

    fn aggregate(
        _params: &AdjectiveParams,
        records: &[AdjectiveRecord],
    ) -> Result<(AdjectiveAggregates, Vec<PlotData>), ProbeError> {
        let syn: Vec<f64> = records.iter().map(|r| r.synonym_cell).collect();
        let opp: Vec<f64> = records.iter().map(|r| r.opposite_cell).collect();
        let thresholds = Thresholds {
            below: vec![0.0],
            ..Thresholds::default()
        };
        let synonym_cells = summary(&syn, &thresholds)?;
        let opposite_cells = summary(&opp, &thresholds)?;
        let mut plots = Vec::new();
        for (name, s) in [
            ("synonym_cells", &synonym_cells),
            ("opposite_cells", &opposite_cells),
        ] {
            if let Some(s) = s {
                plots.push(PlotData::histogram(
                    name,
                    "adjective attribution",
                    &s.histogram,
                ));
            }
        }
        Ok((
            AdjectiveAggregates {
                triplets: records.len(),
                mean_synonym: mean(&syn),
                mean_opposite: mean(&opp),
                fraction_synonym_negative: fraction(&syn, |v| v < 0.0),
                fraction_opposite_negative: fraction(&opp, |v| v < 0.0),
                synonym_cells,
                opposite_cells,
            },
            plots,
        ))
    }
}

fn word_index(sentence: &str, word: &str) -> Option<usize> {
    split_words(sentence)
        .iter()
        .rposition(|w| w == &word.to_lowercase())
}

/// Adjective–adjective cell of `pair` and the pair's score.
fn adjective_cell(
    model: &SiameseEncoder,
    pair: &PairRecord,
    words: (&str, &str),
    triplet: &(String, String, String),
    request: &AttributionRequest,
) -> Result<(f64, f64), ProbeError> {
    let locate = |sentence: &str, word: &str| {
        word_index(sentence, word).ok_or_else(|| ProbeError::AdjectiveNotFound {
            anchor: triplet.0.clone(),
            synonym: triplet.1.clone(),
            opposite: triplet.2.clone(),
            missing: word.to_string(),
            sentence: sentence.to_string(),
        })
    };
    let wa = locate(&pair.a, words.0)?;
    let wb = locate(&pair.b, words.1)?;
    let ta = model.tokenize(&pair.a);
    let tb = model.tokenize(&pair.b);
    let (row, col) = (unit_of_word(&ta, wa), unit_of_word(&tb, wb));
    let result = attribute_pair(model, &ta, &tb, request)?;
    let m = result.conserving_matrix();
    let cols = m.dims2().expect("word matrix").1;
    Ok((m.data()[row * cols + col], result.score))
}

/// Synonym and opposite adjective attributions for every triplet.
pub fn adjective_probe(
    model: &SiameseEncoder,
    params: &AdjectiveParams,
) -> Result<ProbeReport, ProbeError> {
    if params.triplets.is_empty() {
        return Err(ProbeError::Empty("triplets"));
    }
    let request = params.attribution.request(Reduce::Word);
    request.validate(model)?;
    let pairs = adjective_pairs(&params.triplets, &params.noun);
    let records = params
        .triplets
        .par_iter()
        .zip(&pairs)
        .map(|(t, (syn_pair, opp_pair))| {
            let (synonym_cell, synonym_score) =
                adjective_cell(model, syn_pair, (&t.0, &t.1), t, &request)?;
            let (opposite_cell, opposite_score) =
                adjective_cell(model, opp_pair, (&t.0, &t.2), t, &request)?;
            Ok(AdjectiveRecord {
                anchor: t.0.clone(),
                synonym: t.1.clone(),
                opposite: t.2.clone(),
                synonym_score,
                opposite_score,
                synonym_cell,
                opposite_cell,
            })
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    AdjectiveProbe::report(params, &records, Vec::new())
}
