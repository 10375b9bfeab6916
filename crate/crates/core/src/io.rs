//! File formats: CSV time series in, JSON result documents, labeled matrix
//! CSVs and SVG heatmaps out.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ExcoError, Result};
use crate::evt::{ChiMatrix, SignalMatrix};
use crate::signal::{PersistenceMatrix, WindowOutcome};

pub const RESULT_FORMAT: &str = "exco-result";
pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Read a comma-separated file whose first row holds the channel labels and
/// every following row one sample per channel.
pub fn read_csv(path: impl AsRef<Path>, sample_rate_hz: f64) -> Result<SignalMatrix> {
    let file = fs::File::open(path.as_ref())?;
    parse_csv(file, sample_rate_hz)
}

/// [`read_csv`] over any reader.
pub fn parse_csv<R: std::io::Read>(reader: R, sample_rate_hz: f64) -> Result<SignalMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let to_parse = |line: u64, e: csv::Error| ExcoError::Parse {
        line,
        message: e.to_string(),
    };
    let headers = rdr.headers().map_err(|e| to_parse(1, e))?.clone();
    let channels: Vec<String> = headers.iter().map(str::to_string).collect();
    if channels.is_empty() || channels.iter().any(String::is_empty) {
        return Err(ExcoError::Parse {
            line: 1,
            message: "header must name every column".into(),
        });
    }
    let mut seen = HashSet::new();
    for c in &channels {
        if !seen.insert(c) {
            return Err(ExcoError::Parse {
                line: 1,
                message: format!("duplicate channel label {c:?}"),
            });
        }
    }
    let d = channels.len();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            to_parse(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d {
            return Err(ExcoError::Parse {
                line,
                message: format!("expected {d} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| ExcoError::Parse {
                line,
                message: format!("column {:?}: {cell:?} is not a number", channels[j]),
            })?;
            if !v.is_finite() {
                return Err(ExcoError::Parse {
                    line,
                    message: format!("column {:?}: non-finite value {cell:?}", channels[j]),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(ExcoError::InvalidInput(
            "file has a header but no samples".into(),
        ));
    }
    let samples = Array2::from_shape_vec((rows, d), data)
        .map_err(|e| ExcoError::InvalidInput(e.to_string()))?;
    SignalMatrix::new(samples, channels, sample_rate_hz)
}

/// Write samples in the format accepted by [`read_csv`]. Values use the
/// shortest representation that parses back to the same number.
pub fn write_signal_csv(x: &SignalMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    wtr.write_record(x.channels()).map_err(csv_io)?;
    let mut buf = Vec::with_capacity(x.n_channels());
    for row in x.samples().rows() {
        buf.clear();
        buf.extend(row.iter().map(|v| format!("{v}")));
        wtr.write_record(&buf).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> ExcoError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ExcoError::Io(io),
        other => ExcoError::InvalidInput(format!("{other:?}")),
    }
}

/// Provenance and configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMetadata {
    pub tool_version: String,
    pub command: String,
    #[serde(default)]
    pub input_path: Option<String>,
    pub seed: u64,
    /// Echo of every setting needed to reproduce the run.
    pub config: serde_json::Value,
}

/// Everything a clustering run produces, in one self-describing document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub format: String,
    pub schema_version: u32,
    pub metadata: ResultMetadata,
    pub channels: Vec<String>,
    pub sample_rate_hz: f64,
    pub windows: Vec<WindowOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<ChiMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence: Option<PersistenceMatrix>,
}

impl ResultDocument {
    pub fn new(metadata: ResultMetadata, channels: Vec<String>, sample_rate_hz: f64) -> Self {
        Self {
            format: RESULT_FORMAT.to_string(),
            schema_version: RESULT_SCHEMA_VERSION,
            metadata,
            channels,
            sample_rate_hz,
            windows: Vec::new(),
            chi: None,
            persistence: None,
        }
    }
}

pub fn write_result(doc: &ResultDocument, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_result(path: impl AsRef<Path>) -> Result<ResultDocument> {
    let text = fs::read_to_string(path)?;
    let doc: ResultDocument = serde_json::from_str(&text).map_err(|e| ExcoError::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    if doc.format != RESULT_FORMAT {
        return Err(ExcoError::Parse {
            line: 1,
            message: format!("not a result document (format {:?})", doc.format),
        });
    }
    Ok(doc)
}

/// A square matrix with one label per row and column.
pub trait LabeledMatrix {
    fn labels(&self) -> &[String];
    fn rows(&self) -> &[Vec<f64>];
}

impl LabeledMatrix for ChiMatrix {
    fn labels(&self) -> &[String] {
        &self.channels
    }
    fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

impl LabeledMatrix for PersistenceMatrix {
    fn labels(&self) -> &[String] {
        &self.channels
    }
    fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Plain labeled matrix, e.g. one read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl LabeledMatrix for NamedMatrix {
    fn labels(&self) -> &[String] {
        &self.labels
    }
    fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Header row (empty corner cell, then labels) followed by one labeled row
/// per channel, values with six decimals.
pub fn format_matrix_csv(m: &dyn LabeledMatrix) -> String {
    let mut out = String::new();
    for label in m.labels() {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (label, row) in m.labels().iter().zip(m.rows()) {
        out.push_str(label);
        for v in row {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(m: &dyn LabeledMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_matrix_csv(m))?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<NamedMatrix> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(ExcoError::Parse {
        line: 1,
        message: "empty matrix file".into(),
    })?;
    let labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let mut values = Vec::with_capacity(labels.len());
    for (i, line) in lines {
        let mut cells = line.split(',');
        let name = cells.next().unwrap_or_default();
        if labels.get(values.len()).map(String::as_str) != Some(name) {
            return Err(ExcoError::Parse {
                line: i as u64 + 1,
                message: format!("unexpected row label {name:?}"),
            });
        }
        let row = cells
            .map(|c| {
                c.parse::<f64>().map_err(|_| ExcoError::Parse {
                    line: i as u64 + 1,
                    message: format!("{c:?} is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != labels.len() {
            return Err(ExcoError::Parse {
                line: i as u64 + 1,
                message: format!("expected {} values, found {}", labels.len(), row.len()),
            });
        }
        values.push(row);
    }
    if values.len() != labels.len() {
        return Err(ExcoError::Parse {
            line: values.len() as u64 + 2,
            message: "matrix is not square".into(),
        });
    }
    Ok(NamedMatrix { labels, values })
}

const LIGHT: [f64; 3] = [247.0, 251.0, 255.0];
const DARK: [f64; 3] = [8.0, 48.0, 107.0];
const CELL: usize = 24;

/// Linear color scale from light (0) to dark (1), as `#rrggbb`.
pub fn scale_color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let c: Vec<u8> = LIGHT
        .iter()
        .zip(DARK)
        .map(|(l, d)| (l + (d - l) * v).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG 1.1 heatmap of a matrix with entries in `[0, 1]`: one `rect` of
/// class `cell` per entry, row and column labels, and a color legend.
pub fn heatmap_svg(m: &dyn LabeledMatrix, title: &str) -> Result<String> {
    let labels = m.labels();
    let rows = m.rows();
    let d = labels.len();
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(ExcoError::InvalidInput(
            "heatmap matrix must be square".into(),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(ExcoError::Range(format!(
                    "entry ({i}, {j}) = {v} lies outside [0, 1]"
                )));
            }
        }
    }
    let label_w = 8 * labels.iter().map(|l| l.chars().count()).max().unwrap_or(1) + 12;
    let left = label_w;
    let top = 40 + label_w;
    let grid = d * CELL;
    let legend_x = left + grid + 30;
    let width = legend_x + 70;
    let height = top + grid.max(120) + 20;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<defs><linearGradient id="scale" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        scale_color(0.0),
        scale_color(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2,
        escape(title)
    );
    let _ = writeln!(s, r#"<g class="cells">"#);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>{} / {}: {v:.6}</title></rect>"#,
                left + j * CELL,
                top + i * CELL,
                scale_color(v),
                escape(&labels[i]),
                escape(&labels[j])
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="row-labels" text-anchor="end">"#);
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            left - 4,
            top + i * CELL + CELL / 2 + 4,
            escape(l)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="column-labels">"#);
    for (j, l) in labels.iter().enumerate() {
        let x = left + j * CELL + CELL / 2 + 4;
        let y = top - 4;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" transform="rotate(-90 {x} {y})">{}</text>"#,
            escape(l)
        );
    }
    let _ = writeln!(s, "</g>");
    let legend_h = 100;
    let _ = writeln!(s, r#"<g class="legend">"#);
    let _ = writeln!(
        s,
        r#"<rect class="legend-bar" x="{legend_x}" y="{top}" width="14" height="{legend_h}" fill="url(#scale)" stroke="black"/>"#
    );
    for (v, frac) in [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)] {
        let y = top as f64 + frac * legend_h as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}">{v:.1}</text>"#,
            legend_x + 20,
            y + 4.0
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

pub fn render_heatmap_svg(
    m: &dyn LabeledMatrix,
    path: impl AsRef<Path>,
    title: &str,
) -> Result<()> {
    let svg = heatmap_svg(m, title)?;
    fs::write(path, svg)?;
    Ok(())
}
