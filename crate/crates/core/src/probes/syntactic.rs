//! Which syntactic roles meet in the strongest attributions.
//!
//! Role annotations come from an external file with one sentence per line:
//! `word|word|...<TAB>role|role|...`. For each annotated pair the top
//! `⌈percent/100 · cells⌉` cells of the word-level block-sum matrix (CLS and
//! EOS excluded, ties by cell index) contribute their role pairs. Counts are
//! aggregated over unordered role pairs; records keep the ordered pairs.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    unit_of_word, AttributionSettings, PlotData, PlotKind, Probe, ProbeError, ProbeReport,
};
use crate::attribution::{attribute_pair, Reduce};
use crate::encoder::{split_words, SiameseEncoder};
use crate::metrics::top_k_cells;
use crate::numerics::Tensor;
use crate::training::PairRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSentence {
    pub words: Vec<String>,
    pub roles: Vec<String>,
}

/// Parses role-annotation lines; blank lines are skipped. Word and role
/// counts are not checked here.
pub fn parse_roles(input: impl BufRead) -> Result<Vec<RoleSentence>, ProbeError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ProbeError::Io {
            path: format!("role file line {}", i + 1),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((words, roles)) = line.split_once('\t') else {
            return Err(ProbeError::Roles {
                line: i + 1,
                detail: "expected words and roles separated by a tab".into(),
            });
        };
        if roles.contains('\t') {
            return Err(ProbeError::Roles {
                line: i + 1,
                detail: "more than two tab-separated columns".into(),
            });
        }
        let split = |s: &str| s.split('|').map(|w| w.trim().to_string()).collect();
        out.push(RoleSentence {
            words: split(words),
            roles: split(roles),
        });
    }
    Ok(out)
}

pub fn read_roles(path: impl AsRef<Path>) -> Result<Vec<RoleSentence>, ProbeError> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| ProbeError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    parse_roles(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntacticParams {
    pub models: Vec<String>,
    /// One per model.
    pub attribution: Vec<AttributionSettings>,
    pub top_percent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCell {
    pub row: usize,
    pub col: usize,
    pub value: f64,
    pub role_a: String,
    pub role_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntacticRecord {
    pub a: String,
    pub b: String,
    /// Per model, in rank order.
    pub top: Vec<Vec<TopCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolePairCount {
    /// `role_a ≤ role_b`.
    pub role_a: String,
    pub role_b: String,
    /// Per model.
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntacticAggregates {
    pub pairs: usize,
    /// Top cells per model.
    pub totals: Vec<usize>,
    /// Every unordered role pair seen by any model, ordered by role names.
    pub role_pairs: Vec<RolePairCount>,
}

/// `⌈percent · cells / 100⌉` top cells by value, ties by index.
pub fn top_cells(m: &Tensor, percent: usize) -> Vec<usize> {
    let k = (m.len() * percent).div_ceil(100);
    top_k_cells(m, k)
}

/// Ordered role pairs of the top cells of a word-by-word matrix.
pub fn top_role_pairs(
    m: &Tensor,
    roles_a: &[String],
    roles_b: &[String],
    percent: usize,
) -> Vec<(String, String)> {
    let cols = roles_b.len();
    top_cells(m, percent)
        .into_iter()
        .map(|c| (roles_a[c / cols].clone(), roles_b[c % cols].clone()))
        .collect()
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

pub(crate) struct SyntacticProbe;

impl Probe for SyntacticProbe {
    const NAME: &'static str = "syntactic";
    type Params = SyntacticParams;
    type Record = SyntacticRecord;
    type Aggregates = SyntacticAggregates;

    fn aggregate(
        params: &SyntacticParams,
        records: &[SyntacticRecord],
    ) -> Result<(SyntacticAggregates, Vec<PlotData>), ProbeError> {
        let n_models = params.models.len();
        let mut counts: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        let mut totals = vec![0; n_models];
        for r in records {
            if r.top.len() != n_models {
                return Err(ProbeError::Mismatch {
                    what: "per-model top cells",
                });
            }
            for (m, cells) in r.top.iter().enumerate() {
                for c in cells {
                    counts
                        .entry(unordered(&c.role_a, &c.role_b))
                        .or_insert_with(|| vec![0; n_models])[m] += 1;
                    totals[m] += 1;
                }
            }
        }
        let role_pairs: Vec<RolePairCount> = counts
            .into_iter()
            .map(|((role_a, role_b), counts)| RolePairCount {
                frequencies: counts
                    .iter()
                    .zip(&totals)
                    .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
                    .collect(),
                role_a,
                role_b,
                counts,
            })
            .collect();
        let labels: Vec<String> = role_pairs
            .iter()
            .map(|p| format!("{}-{}", p.role_a, p.role_b))
            .collect();
        let plots = (0..n_models)
            .map(|m| {
                PlotData::new(
                    &format!("role_pairs_model_{m}"),
                    PlotKind::Bars,
                    "role pair",
                    "frequency",
                    (0..role_pairs.len()).map(|i| i as f64).collect(),
                    role_pairs.iter().map(|p| p.frequencies[m]).collect(),
                )
                .with_labels(labels.clone())
            })
            .collect();
        Ok((
            SyntacticAggregates {
                pairs: records.len(),
                totals,
                role_pairs,
            },
            plots,
        ))
    }
}

/// Word-by-word block of a word-level matrix, CLS and EOS units dropped.
fn word_block(
    model: &SiameseEncoder,
    pair: &PairRecord,
    request: &crate::attribution::AttributionRequest,
) -> Result<Tensor, ProbeError> {
    let ta = model.tokenize(&pair.a);
    let tb = model.tokenize(&pair.b);
    let result = attribute_pair(model, &ta, &tb, request)?;
    let m = result.conserving_matrix();
    let cols = m.dims2().expect("word matrix").1;
    let rows_a: Vec<usize> = (0..ta.word_spans.len())
        .map(|w| unit_of_word(&ta, w))
        .collect();
    let cols_b: Vec<usize> = (0..tb.word_spans.len())
        .map(|w| unit_of_word(&tb, w))
        .collect();
    let data = rows_a
        .iter()
        .flat_map(|&i| cols_b.iter().map(move |&j| m.data()[i * cols + j]))
        .collect();
    Ok(Tensor::new(vec![rows_a.len(), cols_b.len()], data)?)
}

fn key(words: &[String]) -> String {
    words
        .iter()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Role pairs of the top attributions of every annotated pair. Pairs with
/// an unannotated sentence or a role count that differs from the word count
/// are skipped with a warning.
pub fn syntactic_probe(
    models: &[&SiameseEncoder],
    pairs: &[PairRecord],
    annotations: &[RoleSentence],
    params: &SyntacticParams,
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
    if params.top_percent == 0 || params.top_percent > 100 {
        return Err(ProbeError::Parameter(
            "top_percent must lie in 1..=100".into(),
        ));
    }
    let requests: Vec<_> = params
        .attribution
        .iter()
        .map(|s| s.request(Reduce::Word))
        .collect();
    for (m, r) in models.iter().zip(&requests) {
        r.validate(m)?;
    }
    let roles: BTreeMap<String, &RoleSentence> =
        annotations.iter().map(|s| (key(&s.words), s)).collect();
    let mut warnings = Vec::new();
    let mut jobs = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let lookup = |text: &str| -> Result<&RoleSentence, String> {
            let words = split_words(text);
            let s = roles
                .get(&key(&words))
                .ok_or_else(|| format!("pair {i}: no role annotation for {text:?}; skipped"))?;
            if s.roles.len() != words.len() {
                return Err(format!(
                    "pair {i}: {} roles for {} words in {text:?}; skipped",
                    s.roles.len(),
                    words.len()
                ));
            }
            Ok(s)
        };
        match (lookup(&p.a), lookup(&p.b)) {
            (Ok(ra), Ok(rb)) => jobs.push((p, ra, rb)),
            (Err(e), _) | (_, Err(e)) => warnings.push(e),
        }
    }
    let records = jobs
        .par_iter()
        .map(|(p, ra, rb)| {
            let top = models
                .iter()
                .zip(&requests)
                .map(|(m, req)| {
                    let block = word_block(m, p, req)?;
                    let cols = rb.roles.len();
                    Ok(top_cells(&block, params.top_percent)
                        .into_iter()
                        .map(|c| TopCell {
                            row: c / cols,
                            col: c % cols,
                            value: block.data()[c],
                            role_a: ra.roles[c / cols].clone(),
                            role_b: rb.roles[c % cols].clone(),
                        })
                        .collect())
                })
                .collect::<Result<Vec<_>, ProbeError>>()?;
            Ok(SyntacticRecord {
                a: p.a.clone(),
                b: p.b.clone(),
                top,
            })
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    SyntacticProbe::report(params, &records, warnings)
}
