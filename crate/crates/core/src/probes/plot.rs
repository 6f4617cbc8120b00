//! Plot-data blocks and their CSV and SVG renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ProbeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Scatter,
    /// Step line, e.g. an empirical CDF.
    Line,
    /// One bar per `x`; `labels` names the bars when present.
    Bars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub name: String,
    pub kind: PlotKind,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl PlotData {
    pub fn scatter(name: &str, x_label: &str, y_label: &str, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self::new(name, PlotKind::Scatter, x_label, y_label, x, y)
    }

    pub fn new(
        name: &str,
        kind: PlotKind,
        x_label: &str,
        y_label: &str,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(x.len(), y.len());
        Self {
            name: name.to_string(),
            kind,
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            x,
            y,
            labels: Vec::new(),
        }
    }

    /// Empirical CDF of `values`: sorted values against `i / n`.
    pub fn cdf(name: &str, x_label: &str, values: &[f64]) -> Self {
        let mut x = values.to_vec();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let y = (1..=x.len()).map(|i| i as f64 / n).collect();
        Self::new(name, PlotKind::Line, x_label, "cumulative fraction", x, y)
    }

    /// Bars at the centres of a summary histogram's bins.
    pub fn histogram(name: &str, x_label: &str, h: &crate::metrics::Histogram) -> Self {
        let x = h.edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        let y = h.counts.iter().map(|&c| c as f64).collect();
        Self::new(name, PlotKind::Bars, x_label, "count", x, y)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = labels;
        self
    }
}

/// `x,y[,label]` rows with a header.
pub fn plot_csv(plot: &PlotData) -> Result<String, ProbeError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let labelled = !plot.labels.is_empty();
    let io = |e: csv::Error| ProbeError::Io {
        path: plot.name.clone(),
        source: e.into(),
    };
    if labelled {
        w.write_record([plot.x_label.as_str(), plot.y_label.as_str(), "label"])
            .map_err(io)?;
    } else {
        w.write_record([plot.x_label.as_str(), plot.y_label.as_str()])
            .map_err(io)?;
    }
    for i in 0..plot.x.len() {
        let mut row = vec![plot.x[i].to_string(), plot.y[i].to_string()];
        if labelled {
            row.push(plot.labels[i].clone());
        }
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| ProbeError::Io {
        path: plot.name.clone(),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn extent(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Minimal standalone SVG of one plot block.
pub fn plot_svg(plot: &PlotData) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 56.0;
    let (x0, x1) = extent(&plot.x);
    let (y0, y1) = match plot.kind {
        PlotKind::Bars => extent(&[plot.y.as_slice(), &[0.0]].concat()),
        _ => extent(&plot.y),
    };
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(&plot.name)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{M} {M} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 14.0,
        escape(&plot.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&plot.y_label)
    );
    for (v, x, y, anchor) in [
        (x0, sx(x0), H - M + 14.0, "start"),
        (x1, sx(x1), H - M + 14.0, "end"),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3}</text>"#
        );
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#,
            M - 4.0
        );
    }
    match plot.kind {
        PlotKind::Scatter => {
            for (&x, &y) in plot.x.iter().zip(&plot.y) {
                let _ = writeln!(
                    s,
                    r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#2166ac" fill-opacity="0.6"/>"##,
                    sx(x),
                    sy(y)
                );
            }
        }
        PlotKind::Line => {
            let mut d = String::new();
            for (i, (&x, &y)) in plot.x.iter().zip(&plot.y).enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2} {:.2} ",
                    if i == 0 { "M" } else { "L" },
                    sx(x),
                    sy(y)
                );
            }
            let _ = writeln!(
                s,
                r##"<path d="{}" fill="none" stroke="#2166ac"/>"##,
                d.trim_end()
            );
        }
        PlotKind::Bars => {
            let n = plot.x.len().max(1) as f64;
            let bw = (W - 2.0 * M) / n * 0.8;
            for (i, &y) in plot.y.iter().enumerate() {
                let cx = if plot.labels.is_empty() {
                    sx(plot.x[i])
                } else {
                    M + (i as f64 + 0.5) / n * (W - 2.0 * M)
                };
                let (top, bottom) = (sy(y.max(0.0)), sy(y.min(0.0)));
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#2166ac"/>"##,
                    cx - bw / 2.0,
                    top,
                    bw,
                    (bottom - top).max(0.5)
                );
                if let Some(label) = plot.labels.get(i) {
                    let _ = writeln!(
                        s,
                        r#"<text x="{cx:.2}" y="{}" text-anchor="end" transform="rotate(-60 {cx:.2} {})">{}</text>"#,
                        H - M + 12.0,
                        H - M + 12.0,
                        escape(label)
                    );
                }
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
