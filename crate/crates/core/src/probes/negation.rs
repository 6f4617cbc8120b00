//! How much attribution a single `not` receives.
//!
//! Each sentence is paired with its copy without the `not`. On the
//! word-level block-sum matrix the `not` row total is the attribution to the
//! negation across all partners; the largest-magnitude cell of that row is
//! emitted as well.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fraction, summary, unit_of_word, AttributionSettings, PlotData, Probe, ProbeError, ProbeReport,
};
use crate::attribution::{attribute_texts, Reduce};
use crate::encoder::{split_words, SiameseEncoder};
use crate::metrics::{DistributionSummary, Thresholds};

pub const NEGATION_WORD: &str = "not";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationParams {
    pub model: String,
    pub attribution: AttributionSettings,
    /// Cut points for the CDF of `|not total| / |score|`.
    pub share_thresholds: Vec<f64>,
}

impl NegationParams {
    pub fn new(model: impl Into<String>, attribution: AttributionSettings) -> Self {
        Self {
            model: model.into(),
            attribution,
            share_thresholds: vec![0.08, 0.14],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationRecord {
    pub sentence: String,
    pub without_not: String,
    /// Word index of the `not` in `sentence`.
    pub not_word: usize,
    /// Unit label the model sees for it (`not`, or `[UNK]` when unknown).
    pub not_unit: String,
    pub score: f64,
    /// Sum of the whole word-level matrix.
    pub total: f64,
    pub not_row_total: f64,
    /// Sum of every other row.
    pub rest_total: f64,
    pub not_max_cell: f64,
    pub not_max_partner: String,
    /// `|not_row_total| / |score|`; absent when the score is 0.
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationAggregates {
    pub sentences: usize,
    pub fraction_negative: f64,
    pub not_totals: Option<DistributionSummary>,
    pub shares: Option<DistributionSummary>,
}

/// The sentence without its only `not`, and that word's index; `None`
/// unless the sentence has exactly one.
pub fn remove_not(sentence: &str) -> Option<(String, usize)> {
    let words = split_words(sentence);
    let hits: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| *w == NEGATION_WORD)
        .map(|(i, _)| i)
        .collect();
    let [index] = hits[..] else {
        return None;
    };
    let rest: Vec<&str> = words
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != index)
        .map(|(_, w)| w.as_str())
        .collect();
    Some((rest.join(" "), index))
}

pub(crate) struct NegationProbe;

impl Probe for NegationProbe {
    const NAME: &'static str = "negation";
    type Params = NegationParams;
    type Record = NegationRecord;
    type Aggregates = NegationAggregates;

    fn aggregate(
        params: &NegationParams,
        records: &[NegationRecord],
    ) -> Result<(NegationAggregates, Vec<PlotData>), ProbeError> {
        let totals: Vec<f64> = records.iter().map(|r| r.not_row_total).collect();
        let shares: Vec<f64> = records.iter().filter_map(|r| r.share).collect();
        let share_summary = summary(
            &shares,
            &Thresholds {
                below: params.share_thresholds.clone(),
                ..Thresholds::default()
            },
        )?;
        let total_summary = summary(
            &totals,
            &Thresholds {
                below: vec![0.0],
                ..Thresholds::default()
            },
        )?;
        let mut plots = vec![PlotData::cdf("share_cdf", "|not total| / |score|", &shares)];
        if let Some(s) = &total_summary {
            plots.push(PlotData::histogram("not_totals", "not total", &s.histogram));
        }
        Ok((
            NegationAggregates {
                sentences: records.len(),
                fraction_negative: fraction(&totals, |v| v < 0.0),
                not_totals: total_summary,
                shares: share_summary,
            },
            plots,
        ))
    }
}

fn negation_record(
    model: &SiameseEncoder,
    sentence: &str,
    params: &NegationParams,
) -> Result<Option<NegationRecord>, ProbeError> {
    let Some((without_not, not_word)) = remove_not(sentence) else {
        return Ok(None);
    };
    let tokens = model.tokenize(sentence);
    let row = unit_of_word(&tokens, not_word);
    let result = attribute_texts(
        model,
        sentence,
        &without_not,
        &params.attribution.request(Reduce::Word),
    )?;
    let m = result.conserving_matrix();
    let (rows, cols) = m.dims2().expect("word matrix");
    let cells = m.data();
    let not_cells = &cells[row * cols..(row + 1) * cols];
    let not_row_total: f64 = not_cells.iter().sum();
    let rest_total: f64 = (0..rows)
        .filter(|&i| i != row)
        .map(|i| cells[i * cols..(i + 1) * cols].iter().sum::<f64>())
        .sum();
    let (max_col, &not_max_cell) = not_cells
        .iter()
        .enumerate()
        .max_by(|(i, x), (j, y)| x.abs().total_cmp(&y.abs()).then(j.cmp(i)))
        .expect("non-empty row");
    Ok(Some(NegationRecord {
        sentence: sentence.to_string(),
        without_not,
        not_word,
        not_unit: result.tokens_a[row].clone(),
        score: result.score,
        total: m.sum(),
        not_row_total,
        rest_total,
        not_max_cell,
        not_max_partner: result.tokens_b[max_col].clone(),
        share: (result.score != 0.0).then(|| not_row_total.abs() / result.score.abs()),
    }))
}

/// Attribution to the `not` of each sentence against its `not`-free copy.
/// Sentences without exactly one `not` are skipped with a warning.
pub fn negation_probe(
    model: &SiameseEncoder,
    sentences: &[String],
    params: &NegationParams,
) -> Result<ProbeReport, ProbeError> {
    if sentences.is_empty() {
        return Err(ProbeError::Empty("sentences"));
    }
    params.attribution.request(Reduce::Word).validate(model)?;
    let outcomes = sentences
        .par_iter()
        .map(|s| negation_record(model, s, params))
        .collect::<Result<Vec<_>, ProbeError>>()?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, (sentence, outcome)) in sentences.iter().zip(outcomes).enumerate() {
        match outcome {
            Some(r) => records.push(r),
            None => warnings.push(format!(
                "sentence {i} {sentence:?} does not contain exactly one {NEGATION_WORD:?}; skipped"
            )),
        }
    }
    NegationProbe::report(params, &records, warnings)
}
