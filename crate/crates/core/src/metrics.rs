//! Correlations, top-k overlap and distribution summaries.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("correlation undefined: {0} has zero variance")]
    Degenerate(&'static str),
    #[error("matrix shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("k = {k} outside 1..={cells}")]
    BadK { k: usize, cells: usize },
    #[error("no values to summarize")]
    Empty,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    for v in [x, y] {
        if let Some(p) = v.iter().position(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(p));
        }
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::Degenerate("first argument"));
    }
    if syy == 0.0 {
        return Err(MetricsError::Degenerate("second argument"));
    }
    // sqrt of the product is exact for identical inputs; the split form
    // only guards against overflow and underflow
    let denom = match (sxx * syy).sqrt() {
        d if d.is_finite() && d > 0.0 => d,
        _ => sxx.sqrt() * syy.sqrt(),
    };
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// Pearson correlation of fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

/// Flat indices of the `k` largest cells, ties broken by lower index.
pub fn top_k_cells(m: &Tensor, k: usize) -> Vec<usize> {
    let data = m.data();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// `|top_k(m1) ∩ top_k(m2)| / |top_k(m1) ∪ top_k(m2)|` over cell positions.
pub fn jaccard_topk(m1: &Tensor, m2: &Tensor, k: usize) -> Result<f64, MetricsError> {
    if m1.shape() != m2.shape() {
        return Err(MetricsError::ShapeMismatch(
            m1.shape().to_vec(),
            m2.shape().to_vec(),
        ));
    }
    let cells = m1.len();
    if k == 0 || k > cells {
        return Err(MetricsError::BadK { k, cells });
    }
    let a: BTreeSet<usize> = top_k_cells(m1, k).into_iter().collect();
    let b: BTreeSet<usize> = top_k_cells(m2, k).into_iter().collect();
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    Ok(inter as f64 / union as f64)
}

/// Cut points reported by [`summarize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Thresholds {
    /// Report the fraction of values strictly below each of these.
    pub below: Vec<f64>,
    /// Report the fraction of values with `|v| ≤ w` for each half-width.
    pub within: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stdev: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
    /// Fraction below each threshold, thresholds ascending.
    pub cumulative: Vec<Fraction>,
    /// Fraction within each symmetric band around zero, widths ascending.
    pub within: Vec<Fraction>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Moments, a 20-bin histogram and threshold fractions of `values`.
pub fn summarize(
    values: &[f64],
    thresholds: &Thresholds,
) -> Result<DistributionSummary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(p));
    }
    // Sorting first makes every statistic independent of input order.
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let stdev = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let (min, max) = (sorted[0], sorted[n - 1]);

    let width = (max - min) / HISTOGRAM_BINS as f64;
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| {
            if i == HISTOGRAM_BINS {
                max
            } else {
                min + width * i as f64
            }
        })
        .collect();
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &v in &sorted {
        let bin = if width > 0.0 {
            (((v - min) / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }

    let mut below = thresholds.below.clone();
    below.sort_by(f64::total_cmp);
    let cumulative = below
        .into_iter()
        .map(|t| Fraction {
            threshold: t,
            fraction: sorted.partition_point(|&v| v < t) as f64 / n as f64,
        })
        .collect();
    let mut widths = thresholds.within.clone();
    widths.sort_by(f64::total_cmp);
    let within = widths
        .into_iter()
        .map(|w| Fraction {
            threshold: w,
            fraction: sorted.iter().filter(|v| v.abs() <= w).count() as f64 / n as f64,
        })
        .collect();

    Ok(DistributionSummary {
        count: n,
        mean,
        stdev,
        min,
        max,
        histogram: Histogram { edges, counts },
        cumulative,
        within,
    })
}

/// Median of finite values; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
