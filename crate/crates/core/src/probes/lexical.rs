//! Attribution between identical tokens on the two sides.
//!
//! Every token-level cell whose row and column hold the same token is an
//! observation for that token. Tokens seen at least `min_count` times are
//! ranked by their mean observation, highest first; with two models the
//! ranks are compared by Spearman correlation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{defined, AttributionSettings, PlotData, Probe, ProbeError, ProbeReport};
use crate::attribution::{attribute_pair, Reduce};
use crate::encoder::SiameseEncoder;
use crate::metrics::spearman;
use crate::training::PairRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalParams {
    pub models: Vec<String>,
    /// One per model.
    pub attribution: Vec<AttributionSettings>,
    pub min_count: usize,
}

impl LexicalParams {
    pub const DEFAULT_MIN_COUNT: usize = 30;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub token: String,
    pub row: usize,
    pub col: usize,
    /// One value per model.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalRecord {
    pub a: String,
    pub b: String,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStat {
    pub token: String,
    pub count: usize,
    pub mean: f64,
    pub stdev: f64,
    /// 1 = highest mean.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalAggregates {
    pub observations: usize,
    /// Per model, ordered by rank.
    pub tables: Vec<Vec<TokenStat>>,
    /// Spearman correlation of the first two models' token means.
    pub rank_agreement: Option<f64>,
}

impl LexicalAggregates {
    /// `rank / n` of `token` in model `m`'s table.
    pub fn relative_rank(&self, m: usize, token: &str) -> Option<f64> {
        let table = self.tables.get(m)?;
        let stat = table.iter().find(|s| s.token == token)?;
        Some(stat.rank as f64 / table.len() as f64)
    }
}

fn table(per_token: &BTreeMap<&str, Vec<f64>>, min_count: usize) -> Vec<TokenStat> {
    let mut stats: Vec<TokenStat> = per_token
        .iter()
        .filter(|(_, v)| v.len() >= min_count)
        .map(|(&token, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let stdev = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            TokenStat {
                token: token.to_string(),
                count: v.len(),
                mean,
                stdev,
                rank: 0,
            }
        })
        .collect();
    stats.sort_by(|x, y| {
        y.mean
            .total_cmp(&x.mean)
            .then_with(|| x.token.cmp(&y.token))
    });
    for (i, s) in stats.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    stats
}

pub(crate) struct LexicalProbe;

impl Probe for LexicalProbe {
    const NAME: &'static str = "lexical";
    type Params = LexicalParams;
    type Record = LexicalRecord;
    type Aggregates = LexicalAggregates;

    fn aggregate(
        params: &LexicalParams,
        records: &[LexicalRecord],
    ) -> Result<(LexicalAggregates, Vec<PlotData>), ProbeError> {
        let n_models = params.models.len();
        let mut tables = Vec::with_capacity(n_models);
        for m in 0..n_models {
            let mut per_token: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for obs in records.iter().flat_map(|r| &r.observations) {
                let v = *obs.values.get(m).ok_or(ProbeError::Mismatch {
                    what: "observation values",
                })?;
                per_token.entry(obs.token.as_str()).or_default().push(v);
            }
            tables.push(table(&per_token, params.min_count));
        }
        let rank_agreement = match &tables[..] {
            [t0, t1, ..] => {
                let by_token: BTreeMap<&str, f64> =
                    t1.iter().map(|s| (s.token.as_str(), s.mean)).collect();
                let (x, y): (Vec<f64>, Vec<f64>) = t0
                    .iter()
                    .filter_map(|s| by_token.get(s.token.as_str()).map(|&m1| (s.mean, m1)))
                    .unzip();
                if x.len() >= 2 {
                    defined(spearman(&x, &y))?
                } else {
                    None
                }
            }
            _ => None,
        };
        let plots = tables
            .iter()
            .enumerate()
            .map(|(m, t)| {
                PlotData::new(
                    &format!("token_means_model_{m}"),
                    super::PlotKind::Bars,
                    "rank",
                    "mean attribution",
                    t.iter().map(|s| s.rank as f64).collect(),
                    t.iter().map(|s| s.mean).collect(),
                )
                .with_labels(t.iter().map(|s| s.token.clone()).collect())
            })
            .collect();
        Ok((
            LexicalAggregates {
                observations: records.iter().map(|r| r.observations.len()).sum(),
                tables,
                rank_agreement,
            },
            plots,
        ))
    }
}

/// Same-token cells for every pair under one or two models sharing a
/// vocabulary.
pub fn lexical_probe(
    models: &[&SiameseEncoder],
    pairs: &[PairRecord],
    params: &LexicalParams,
) -> Result<ProbeReport, ProbeError> {
    if pairs.is_empty() {
        return Err(ProbeError::Empty("pairs"));
    }
    if models.is_empty()
        || models.len() != params.attribution.len()
        || models.len() != params.models.len()
    {
        return Err(ProbeError::Parameter(
            "need one model id and one attribution setting per model".into(),
        ));
    }
    if params.min_count == 0 {
        return Err(ProbeError::Parameter("min_count must be at least 1".into()));
    }
    if models.iter().any(|m| m.vocab() != models[0].vocab()) {
        return Err(ProbeError::TokenizerMismatch);
    }
    let requests: Vec<_> = params
        .attribution
        .iter()
        .map(|s| s.request(Reduce::Token))
        .collect();
    for (m, r) in models.iter().zip(&requests) {
        r.validate(m)?;
    }
    let vocab = models[0].vocab();
    let records = pairs
        .par_iter()
        .map(|p| {
            let ta = models[0].tokenize(&p.a);
            let tb = models[0].tokenize(&p.b);
            let matrices = models
                .iter()
                .zip(&requests)
                .map(|(m, r)| Ok(attribute_pair(m, &ta, &tb, r)?.matrix))
                .collect::<Result<Vec<_>, ProbeError>>()?;
            let cols = tb.len();
            let mut observations = Vec::new();
            for (i, &ia) in ta.ids.iter().enumerate() {
                for (j, &ib) in tb.ids.iter().enumerate() {
                    if ia == ib {
                        observations.push(Observation {
                            token: vocab.token(ia).to_string(),
                            row: i,
                            col: j,
                            values: matrices.iter().map(|m| m.data()[i * cols + j]).collect(),
                        });
                    }
                }
            }
            Ok(LexicalRecord {
                a: p.a.clone(),
                b: p.b.clone(),
                observations,
            })
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    let (aggregates, _) = LexicalProbe::aggregate(params, &records)?;
    let warnings = if aggregates.tables.iter().all(Vec::is_empty) {
        vec![format!("no token reaches min_count = {}", params.min_count)]
    } else {
        Vec::new()
    };
    LexicalProbe::report(params, &records, warnings)
}
