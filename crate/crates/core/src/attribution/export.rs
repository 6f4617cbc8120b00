//! JSON record, CSV matrix and SVG heatmap output for one attribution.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use super::{AttributionResult, Mode, Reduce};
use crate::numerics::Tensor;

/// Flat, self-describing form of an [`AttributionResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub tokens_a: Vec<String>,
    pub tokens_b: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sum_matrix: Option<Vec<Vec<f64>>>,
    pub s: f64,
    pub ref_sim_a: f64,
    pub ref_sim_b: f64,
    pub ref_term: f64,
    pub attribution_sum: f64,
    pub attribution_error: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub approximate_check: Option<f64>,
    pub steps: usize,
    pub layer: usize,
    pub mode: Mode,
    pub reduce: Reduce,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = t.dims2().expect("matrix");
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

impl From<&AttributionResult> for AttributionRecord {
    fn from(r: &AttributionResult) -> Self {
        Self {
            tokens_a: r.tokens_a.clone(),
            tokens_b: r.tokens_b.clone(),
            matrix: rows(&r.matrix),
            sum_matrix: r.sum_matrix.as_ref().map(rows),
            s: r.score,
            ref_sim_a: r.ref_sim_a,
            ref_sim_b: r.ref_sim_b,
            ref_term: r.ref_term,
            attribution_sum: r.total(),
            attribution_error: r.attribution_error,
            approximate_check: r.approximate_check,
            steps: r.steps,
            layer: r.layer,
            mode: r.mode,
            reduce: r.reduce,
        }
    }
}

impl AttributionRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes") + "\n"
    }

    /// Recomputes the error from the stored cells and boundary terms.
    pub fn recompute_error(&self) -> f64 {
        let cells = self.sum_matrix.as_ref().unwrap_or(&self.matrix);
        let total: f64 = cells.iter().flatten().sum();
        (total - (self.s - self.ref_sim_a - self.ref_sim_b + self.ref_term)).abs()
    }
}

/// Matrix as CSV: a header of column labels, then one labelled row per
/// row label. Feature-level matrices are labelled `token:feature`.
pub fn write_matrix_csv<W: io::Write>(
    result: &AttributionResult,
    out: W,
) -> Result<(), csv::Error> {
    let (r, c) = result.matrix.dims2().expect("matrix");
    let row_labels = labels(&result.tokens_a, r);
    let col_labels = labels(&result.tokens_b, c);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(col_labels);
    w.write_record(&header)?;
    for (i, label) in row_labels.into_iter().enumerate() {
        let mut rec = vec![label];
        rec.extend(result.matrix.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn labels(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() == n || tokens.is_empty() {
        return tokens.to_vec();
    }
    let per = n / tokens.len();
    (0..n)
        .map(|i| format!("{}:{}", tokens[i / per.max(1)], i % per.max(1)))
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Red for positive, blue for negative, white at zero; intensity relative
/// to the largest absolute cell.
fn color(v: f64, max_abs: f64) -> String {
    let t = if max_abs > 0.0 {
        (v / max_abs).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    let (r, g, b) = if t >= 0.0 {
        (255, fade(t), fade(t))
    } else {
        (fade(-t), fade(-t), 255)
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmap of the matrix with the prediction, boundary terms and
/// attribution error written underneath.
pub fn heatmap_svg(result: &AttributionResult) -> String {
    const CELL: usize = 36;
    const LEFT: usize = 110;
    const TOP: usize = 110;
    let (r, c) = result.matrix.dims2().expect("matrix");
    let row_labels = labels(&result.tokens_a, r);
    let col_labels = labels(&result.tokens_b, c);
    let max_abs = result.matrix.max_abs();
    let width = LEFT + c * CELL + 20;
    let height = TOP + r * CELL + 90;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    for (j, label) in col_labels.iter().enumerate() {
        let x = LEFT + j * CELL + CELL / 2;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            TOP - 6,
            TOP - 6,
            escape(label)
        );
    }
    for (i, label) in row_labels.iter().enumerate() {
        let y = TOP + i * CELL;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            y + CELL / 2 + 4,
            escape(label)
        );
        for j in 0..c {
            let v = result.matrix.get2(i, j);
            let x = LEFT + j * CELL;
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#dddddd"><title>{v:.6}</title></rect>"##,
                color(v, max_abs)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{v:.2}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 3
            );
        }
    }
    let base = TOP + r * CELL + 24;
    let lines = [
        format!(
            "s = {:.4}   sum = {:.4}   error = {:.2e}",
            result.score,
            result.total(),
            result.attribution_error
        ),
        format!(
            "f(a, r_b) = {:.4}   f(b, r_a) = {:.4}   f(r_a, r_b) = {:.4}",
            result.ref_sim_a, result.ref_sim_b, result.ref_term
        ),
        format!(
            "mode = {:?}   layer = {}   N = {}",
            result.mode, result.layer, result.steps
        ),
    ];
    for (k, line) in lines.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="10" y="{}">{}</text>"#,
            base + k * 18,
            escape(line)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
