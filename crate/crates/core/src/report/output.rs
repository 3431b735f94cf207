use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::heatmap::{render_heatmap, RenderSpec};
use super::{Analysis, AnalyzeError};
use crate::matrix::{CommMatrix, CommType, StatsSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            _ => Err(format!("unknown format `{s}` (csv|json|both)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub format: OutputFormat,
    /// Also write one matrix (and heatmap) per communication type.
    pub split: bool,
    /// Write M + Mᵀ instead of the directed matrix.
    pub symmetrize: bool,
    pub render: RenderSpec,
    /// Digest of the input trace(s), recorded in the JSON matrices.
    pub trace_digest: Option<String>,
}

/// JSON form of a matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixDocument {
    pub gpus: u32,
    pub aggregator: bool,
    pub labels: Vec<String>,
    pub symmetrized: bool,
    /// Communication type key, or null for the combined matrix.
    pub primitive: Option<String>,
    pub trace_digest: Option<String>,
    pub cells: Vec<Vec<u64>>,
}

pub fn matrix_to_csv(m: &CommMatrix) -> String {
    let mut out = String::from("src/dst");
    for label in m.labels() {
        out.push(',');
        out.push_str(&label);
    }
    out.push('\n');
    for (label, row) in m.labels().iter().zip(m.rows()) {
        out.push_str(label);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV written by [`matrix_to_csv`].
pub fn matrix_from_csv(text: &str) -> Result<CommMatrix, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or("empty matrix file")?
        .split(',')
        .collect();
    if header.first().map(|h| h.trim()) != Some("src/dst") {
        return Err("header must start with `src/dst`".into());
    }
    let labels: Vec<&str> = header[1..].iter().map(|s| s.trim()).collect();
    let (gpus, aggregator) = shape_from_labels(&labels)?;
    let mut rows = Vec::with_capacity(labels.len());
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',').map(str::trim);
        let label = fields.next().unwrap_or_default();
        if labels.get(i) != Some(&label) {
            return Err(format!("row {} has label `{label}`", i + 1));
        }
        let row = fields
            .map(|f| {
                f.parse::<u64>()
                    .map_err(|_| format!("row {}: bad value `{f}`", i + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    CommMatrix::from_rows(gpus, aggregator, &rows)
}

fn shape_from_labels(labels: &[&str]) -> Result<(u32, bool), String> {
    let aggregator = labels.last() == Some(&"net");
    let numeric = &labels[..labels.len() - usize::from(aggregator)];
    if numeric.is_empty() {
        return Err("matrix needs at least the host row".into());
    }
    for (i, l) in numeric.iter().enumerate() {
        if *l != i.to_string() {
            return Err(format!("unexpected label `{l}` at column {}", i + 1));
        }
    }
    Ok((numeric.len() as u32 - 1, aggregator))
}

pub fn matrix_to_json(
    m: &CommMatrix,
    symmetrized: bool,
    primitive: Option<CommType>,
    trace_digest: Option<&str>,
) -> String {
    let doc = MatrixDocument {
        gpus: m.gpus(),
        aggregator: m.has_aggregator(),
        labels: m.labels(),
        symmetrized,
        primitive: primitive.map(|p| p.key().to_string()),
        trace_digest: trace_digest.map(str::to_string),
        cells: m.rows(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("matrix document serializes");
    s.push('\n');
    s
}

pub fn matrix_from_json(text: &str) -> Result<CommMatrix, String> {
    let doc: MatrixDocument = serde_json::from_str(text).map_err(|e| e.to_string())?;
    CommMatrix::from_rows(doc.gpus, doc.aggregator, &doc.cells)
}

pub fn stats_to_csv(stats: &StatsSummary) -> String {
    let mut out = String::from("type,calls,payload_bytes,wire_bytes\n");
    for ty in CommType::ALL {
        let s = stats.get(ty);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            ty.key(),
            s.calls,
            s.payload_bytes,
            s.wire_bytes
        );
    }
    out
}

#[derive(Serialize)]
struct StatsRow<'a> {
    #[serde(rename = "type")]
    ty: &'a str,
    label: &'a str,
    calls: u64,
    payload_bytes: u64,
    wire_bytes: u64,
}

pub fn stats_to_json(stats: &StatsSummary) -> String {
    let rows: Vec<StatsRow> = CommType::ALL
        .iter()
        .map(|ty| {
            let s = stats.get(*ty);
            StatsRow {
                ty: ty.key(),
                label: ty.label(),
                calls: s.calls,
                payload_bytes: s.payload_bytes,
                wire_bytes: s.wire_bytes,
            }
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("stats serialize");
    s.push('\n');
    s
}

/// Human-readable version of the statistics, one row per type.
pub fn stats_table(stats: &StatsSummary) -> String {
    let mut out = format!(
        "{:<20} {:>10} {:>20} {:>20}\n",
        "type", "calls", "payload bytes", "wire bytes"
    );
    for ty in CommType::ALL {
        let s = stats.get(ty);
        let _ = writeln!(
            out,
            "{:<20} {:>10} {:>20} {:>20}",
            ty.label(),
            s.calls,
            s.payload_bytes,
            s.wire_bytes
        );
    }
    out
}

fn diagnostics_text(analysis: &Analysis) -> String {
    let mut out = format!(
        "instances: {}\np2p pairs: {}\nunmatched events: {}\n",
        analysis.instances, analysis.p2p_pairs, analysis.unmatched_events
    );
    for d in &analysis.diagnostics {
        let _ = writeln!(out, "{d}");
    }
    out
}

/// Renders every output file in memory first, then writes them into `dir`.
/// Nothing is written when rendering fails. Returns the written paths.
pub fn write_outputs(
    analysis: &Analysis,
    dir: &Path,
    opts: &OutputOptions,
) -> Result<Vec<PathBuf>, AnalyzeError> {
    opts.render.validate()?;
    let digest = opts.trace_digest.as_deref();
    let mut files: Vec<(String, String)> = Vec::new();

    let mut matrices: Vec<(Option<CommType>, &CommMatrix)> = vec![(None, &analysis.combined)];
    if opts.split {
        matrices.extend(analysis.per_primitive.iter().map(|(t, m)| (Some(*t), m)));
    }
    for (ty, m) in matrices {
        let m = if opts.symmetrize {
            m.symmetrized()?
        } else {
            m.clone()
        };
        let stem = match ty {
            Some(t) => format!("matrix_{}", t.key()),
            None => "matrix".to_string(),
        };
        if opts.format.csv() {
            files.push((format!("{stem}.csv"), matrix_to_csv(&m)));
        }
        if opts.format.json() {
            files.push((
                format!("{stem}.json"),
                matrix_to_json(&m, opts.symmetrize, ty, digest),
            ));
        }
        let svg_name = match ty {
            Some(t) => format!("heatmap_{}.svg", t.key()),
            None => "heatmap.svg".to_string(),
        };
        files.push((svg_name, render_heatmap(&m, &opts.render)?));
    }
    if opts.format.csv() {
        files.push(("stats.csv".into(), stats_to_csv(&analysis.stats)));
    }
    if opts.format.json() {
        files.push(("stats.json".into(), stats_to_json(&analysis.stats)));
    }
    files.push(("diagnostics.txt".into(), diagnostics_text(analysis)));

    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
