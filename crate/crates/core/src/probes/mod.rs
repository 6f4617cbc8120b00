//! Batch studies over datasets and trained models, each emitting a
//! [`ProbeReport`].
//!
//! Every report stores its per-item records next to the aggregates and plot
//! series computed from them; [`verify_report`] recomputes both from the
//! records and checks they match. Per-pair work runs on the rayon pool and
//! is collected in input order, so reports are byte-identical across runs
//! and thread counts.

mod adjectives;
mod agreement;
mod lexical;
mod negation;
mod plot;
mod posneg;
mod reference;
mod syntactic;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use adjectives::{adjective_probe, AdjectiveAggregates, AdjectiveParams, AdjectiveRecord};
pub use agreement::{
    agreement_probe, AgreementParams, AgreementRecord, AgreementStats, LayerAggregate,
    LayerAgreement, Moments, TopKOverlap,
};
pub use lexical::{
    lexical_probe, LexicalAggregates, LexicalParams, LexicalRecord, Observation, TokenStat,
};
pub use negation::{
    negation_probe, remove_not, NegationAggregates, NegationParams, NegationRecord, NEGATION_WORD,
};
pub use plot::{plot_csv, plot_svg, PlotData, PlotKind};
pub use posneg::{pos_neg_probe, positive_negative, PosNegAggregates, PosNegParams, PosNegRecord};
pub use reference::{reference_probe, ReferenceAggregates, ReferenceParams, ReferenceRecord};
pub use syntactic::{
    parse_roles, read_roles, syntactic_probe, top_cells, top_role_pairs, RolePairCount,
    RoleSentence, SyntacticAggregates, SyntacticParams, SyntacticRecord, TopCell,
};

use crate::attribution::{AttributionError, AttributionRequest, Mode, Reduce};
use crate::encoder::{word_units, EncoderError, SiameseEncoder, TokenSeq};
use crate::metrics::{summarize, DistributionSummary, MetricsError, Thresholds};
use crate::numerics::NumericsError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no {0} to probe")]
    Empty(&'static str),
    #[error("models use different vocabularies")]
    TokenizerMismatch,
    #[error("triplet ({anchor}, {synonym}, {opposite}): adjective {missing:?} not found in {sentence:?}")]
    AdjectiveNotFound {
        anchor: String,
        synonym: String,
        opposite: String,
        missing: String,
        sentence: String,
    },
    #[error("role file line {line}: {detail}")]
    Roles { line: usize, detail: String },
    #[error("invalid probe parameter: {0}")]
    Parameter(String),
    #[error("unknown probe {0:?}")]
    UnknownProbe(String),
    #[error("schema version {found} unsupported (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("report {what} differ from recomputation")]
    Mismatch { what: &'static str },
}

/// Structured result of one probe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub schema_version: u32,
    pub probe: String,
    pub parameters: Value,
    pub records: Vec<Value>,
    pub aggregates: Value,
    pub plot_data: Vec<PlotData>,
    pub warnings: Vec<String>,
}

impl ProbeReport {
    pub fn to_json(&self) -> Result<String, ProbeError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ProbeError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Typed view of the records.
    pub fn records_as<R: DeserializeOwned>(&self) -> Result<Vec<R>, ProbeError> {
        self.records
            .iter()
            .map(|r| Ok(serde_json::from_value(r.clone())?))
            .collect()
    }

    pub fn aggregates_as<A: DeserializeOwned>(&self) -> Result<A, ProbeError> {
        Ok(serde_json::from_value(self.aggregates.clone())?)
    }

    pub fn parameters_as<P: DeserializeOwned>(&self) -> Result<P, ProbeError> {
        Ok(serde_json::from_value(self.parameters.clone())?)
    }
}

/// A probe's typed pieces: parameters, per-item records and the pure
/// aggregation from records to aggregates and plot series.
pub(crate) trait Probe {
    const NAME: &'static str;
    type Params: Serialize + DeserializeOwned;
    type Record: Serialize + DeserializeOwned;
    type Aggregates: Serialize;

    fn aggregate(
        params: &Self::Params,
        records: &[Self::Record],
    ) -> Result<(Self::Aggregates, Vec<PlotData>), ProbeError>;

    fn report(
        params: &Self::Params,
        records: &[Self::Record],
        warnings: Vec<String>,
    ) -> Result<ProbeReport, ProbeError> {
        let (aggregates, plot_data) = Self::aggregate(params, records)?;
        Ok(ProbeReport {
            schema_version: SCHEMA_VERSION,
            probe: Self::NAME.to_string(),
            parameters: serde_json::to_value(params)?,
            records: records
                .iter()
                .map(serde_json::to_value)
                .collect::<Result<_, _>>()?,
            aggregates: serde_json::to_value(aggregates)?,
            plot_data,
            warnings,
        })
    }

    fn verify(report: &ProbeReport) -> Result<(), ProbeError> {
        let params: Self::Params = report.parameters_as()?;
        let records: Vec<Self::Record> = report.records_as()?;
        let (aggregates, plot_data) = Self::aggregate(&params, &records)?;
        if serde_json::to_value(aggregates)? != report.aggregates {
            return Err(ProbeError::Mismatch { what: "aggregates" });
        }
        if plot_data != report.plot_data {
            return Err(ProbeError::Mismatch { what: "plot data" });
        }
        Ok(())
    }
}

/// Recomputes a report's aggregates and plot series from its records.
pub fn verify_report(report: &ProbeReport) -> Result<(), ProbeError> {
    if report.schema_version != SCHEMA_VERSION {
        return Err(ProbeError::Schema {
            found: report.schema_version,
        });
    }
    match report.probe.as_str() {
        reference::ReferenceProbe::NAME => reference::ReferenceProbe::verify(report),
        agreement::AgreementProbe::NAME => agreement::AgreementProbe::verify(report),
        posneg::PosNegProbe::NAME => posneg::PosNegProbe::verify(report),
        negation::NegationProbe::NAME => negation::NegationProbe::verify(report),
        adjectives::AdjectiveProbe::NAME => adjectives::AdjectiveProbe::verify(report),
        lexical::LexicalProbe::NAME => lexical::LexicalProbe::verify(report),
        syntactic::SyntacticProbe::NAME => syntactic::SyntacticProbe::verify(report),
        other => Err(ProbeError::UnknownProbe(other.to_string())),
    }
}

/// Layer, step count and mode shared by the attribution-based probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionSettings {
    pub layer: usize,
    pub steps: usize,
    pub mode: Mode,
}

impl AttributionSettings {
    /// The model's default request.
    pub fn for_model(model: &SiameseEncoder) -> Self {
        let req = AttributionRequest::for_model(model);
        Self {
            layer: req.layer,
            steps: req.steps,
            mode: req.mode,
        }
    }

    pub fn request(&self, reduce: Reduce) -> AttributionRequest {
        AttributionRequest {
            layer: self.layer,
            steps: self.steps,
            mode: self.mode,
            reduce,
        }
    }
}

/// Fraction of `values` satisfying `pred`; 0 for an empty list.
pub(crate) fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64
}

/// A correlation, or `None` when it is undefined for constant input.
pub(crate) fn defined(r: Result<f64, MetricsError>) -> Result<Option<f64>, ProbeError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::Degenerate(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Summary of `values`, or `None` when there are none.
pub(crate) fn summary(
    values: &[f64],
    thresholds: &Thresholds,
) -> Result<Option<DistributionSummary>, ProbeError> {
    if values.is_empty() {
        Ok(None)
    } else {
        Ok(Some(summarize(values, thresholds)?))
    }
}

/// Index of word `w`'s unit in the word-level matrix of `tokens`.
pub(crate) fn unit_of_word(tokens: &TokenSeq, w: usize) -> usize {
    let span = tokens.word_spans[w];
    word_units(tokens.len(), &tokens.word_spans)
        .iter()
        .position(|&u| u == span)
        .expect("every word span is a unit")
}
