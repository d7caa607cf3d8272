//! Trace CSV files and SVG convergence plots.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::TraceRecord;

pub const CSV_HEADER: [&str; 5] = ["iter", "rel_error", "f_gap", "bits_cum", "time_ms"];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    iter: usize,
    rel_error: f64,
    f_gap: f64,
    bits_cum: f64,
    time_ms: f64,
}

/// A labelled series of records, possibly averaged over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub iter: Vec<usize>,
    pub rel_error: Vec<f64>,
    pub f_gap: Vec<f64>,
    pub bits_cum: Vec<f64>,
    pub time_ms: Vec<f64>,
}

impl Series {
    pub fn from_records(label: &str, records: &[TraceRecord]) -> Self {
        Self {
            label: label.to_string(),
            iter: records.iter().map(|r| r.iter).collect(),
            rel_error: records.iter().map(|r| r.rel_error).collect(),
            f_gap: records.iter().map(|r| r.f_gap).collect(),
            bits_cum: records.iter().map(|r| r.bits_cum as f64).collect(),
            time_ms: records.iter().map(|r| r.time_ms).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.iter.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iter.is_empty()
    }

    /// Pointwise mean over equally indexed records, truncated to the
    /// shortest input.
    pub fn mean(label: &str, runs: &[&[TraceRecord]]) -> Self {
        let len = runs.iter().map(|r| r.len()).min().unwrap_or(0);
        let k = runs.len() as f64;
        let avg = |f: &dyn Fn(&TraceRecord) -> f64| -> Vec<f64> {
            (0..len).map(|i| runs.iter().map(|r| f(&r[i])).sum::<f64>() / k).collect()
        };
        Self {
            label: label.to_string(),
            iter: if len > 0 { runs[0][..len].iter().map(|r| r.iter).collect() } else { Vec::new() },
            rel_error: avg(&|r| r.rel_error),
            f_gap: avg(&|r| r.f_gap),
            bits_cum: avg(&|r| r.bits_cum as f64),
            time_ms: avg(&|r| r.time_ms),
        }
    }

    /// First index with `rel_error <= threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.rel_error.iter().position(|&e| e <= threshold)
    }
}

pub fn write_csv(path: &Path, series: &Series) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for i in 0..series.len() {
        let bits = series.bits_cum[i];
        let bits_text = if bits.fract() == 0.0 { format!("{}", bits as u64) } else { format!("{bits}") };
        w.write_record([
            series.iter[i].to_string(),
            format!("{:e}", series.rel_error[i]),
            format!("{:e}", series.f_gap[i]),
            bits_text,
            format!("{}", series.time_ms[i]),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path, label: &str) -> Result<Series> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::MalformedLine { line: 1, reason: format!("unexpected trace header in {}", path.display()) });
    }
    let mut s = Series {
        label: label.to_string(),
        iter: Vec::new(),
        rel_error: Vec::new(),
        f_gap: Vec::new(),
        bits_cum: Vec::new(),
        time_ms: Vec::new(),
    };
    for (i, row) in r.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedLine { line: i + 2, reason: e.to_string() })?;
        s.iter.push(row.iter);
        s.rel_error.push(row.rel_error);
        s.f_gap.push(row.f_gap);
        s.bits_cum.push(row.bits_cum);
        s.time_ms.push(row.time_ms);
    }
    Ok(s)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::MalformedPayload(format!("{other:?}")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XAxis {
    Iters,
    Mbytes,
    Time,
}

impl std::str::FromStr for XAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iters" => Ok(Self::Iters),
            "mbytes" => Ok(Self::Mbytes),
            "time" => Ok(Self::Time),
            other => Err(Error::InvalidParameter(format!("unknown x axis `{other}`"))),
        }
    }
}

impl XAxis {
    fn values(self, s: &Series) -> Vec<f64> {
        match self {
            Self::Iters => s.iter.iter().map(|&i| i as f64).collect(),
            Self::Mbytes => s.bits_cum.iter().map(|b| b / 8e6).collect(),
            Self::Time => s.time_ms.iter().map(|t| t / 1e3).collect(),
        }
    }

    fn title(self) -> &'static str {
        match self {
            Self::Iters => "iterations",
            Self::Mbytes => "communicated megabytes",
            Self::Time => "time (s)",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Self::Iters => "iters",
            Self::Mbytes => "mbytes",
            Self::Time => "time",
        }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const MAX_POINTS: usize = 1500;
const Y_FLOOR: f64 = 1e-16;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders relative error (log scale) against the chosen axis.
pub fn render_svg(series: &[Series], x_axis: XAxis) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyTraces);
    }
    let xs: Vec<Vec<f64>> = series.iter().map(|s| x_axis.values(s)).collect();
    let x_max = xs.iter().flatten().copied().fold(0.0, f64::max).max(1e-12);
    let x_min = xs.iter().flatten().copied().fold(f64::INFINITY, f64::min).min(x_max).max(0.0);
    let ys = series.iter().flat_map(|s| s.rel_error.iter()).map(|&e| e.max(Y_FLOOR));
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let dec_lo = y_lo.log10().floor();
    let mut dec_hi = y_hi.log10().ceil();
    if dec_hi <= dec_lo {
        dec_hi = dec_lo + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let px = |x: f64| LEFT + (x - x_min) / span * pw;
    let py = |y: f64| TOP + (dec_hi - y.max(Y_FLOOR).log10()) / (dec_hi - dec_lo) * ph;

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();

    let step = ((dec_hi - dec_lo) / 8.0).ceil().max(1.0);
    let mut dec = dec_hi;
    while dec >= dec_lo {
        let y = py(10f64.powf(dec));
        writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            dec as i64
        )
        .unwrap();
        dec -= step;
    }
    for t in 0..=5 {
        let xv = x_min + span * t as f64 / 5.0;
        let x = px(xv);
        let label = if x_axis == XAxis::Iters { format!("{}", xv.round() as i64) } else { format!("{xv:.3}") };
        writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        x_axis.title()
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">relative error</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    )
    .unwrap();

    for (k, (s, x)) in series.iter().zip(&xs).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let stride = s.len().div_ceil(MAX_POINTS).max(1);
        let mut points = String::new();
        for i in (0..s.len()).step_by(stride).chain(std::iter::once(s.len().saturating_sub(1))) {
            if i < s.len() {
                write!(points, "{:.2},{:.2} ", px(x[i]), py(s.rel_error[i])).unwrap();
            }
        }
        writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.trim_end()
        )
        .unwrap();
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let y = TOP + 14.0 + 16.0 * k as f64;
        let x = LEFT + pw - 170.0;
        writeln!(
            out,
            r#"<g class="legend"><line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{y:.2}">{}</text></g>"#,
            y - 4.0,
            x + 20.0,
            y - 4.0,
            x + 26.0,
            escape(&s.label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_svg_plot(series: &[Series], x_axis: XAxis, path: &Path) -> Result<()> {
    let svg = render_svg(series, x_axis)?;
    std::fs::write(path, svg)?;
    Ok(())
}
