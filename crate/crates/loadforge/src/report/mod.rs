//! Report rendering: ratio and totals tables, bar charts, and ingest of
//! externally produced rows so third-party tool results can sit in the same
//! table as measured runs.

mod recount;

pub use recount::{recount_log, time_series, TimeBucket};

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use thiserror::Error;

use crate::metrics::{RatioValue, RunTally};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSource {
    Measured,
    Ingested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableFormat {
    #[default]
    Markdown,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ChartMetric {
    #[default]
    Ratio,
    Total,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("duplicate row label {0:?}")]
    DuplicateLabel(String),
    #[error("row {label:?} has a non-finite ratio; cannot chart the ratio metric")]
    NonFiniteMetric { label: String },
    #[error("payload {payload:?} is not in the expected map")]
    UnknownPayload { payload: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labeled table row. Measured rows come from tallies and always satisfy
/// `total == success + failure`; ingested rows keep their stated total and a
/// consistency flag instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub label: String,
    pub duration_s: u32,
    pub success: u64,
    pub failure: u64,
    pub total: u64,
    pub ratio: RatioValue,
    pub source: RowSource,
    pub consistent: bool,
}

impl ReportRow {
    pub fn measured(label: impl Into<String>, tally: &RunTally) -> ReportRow {
        ReportRow {
            label: label.into(),
            duration_s: tally.duration_s,
            success: tally.success,
            failure: tally.failure,
            total: tally.total,
            ratio: tally.ratio,
            source: RowSource::Measured,
            consistent: true,
        }
    }

    /// Store an external row verbatim. The ratio is always recomputed from
    /// the counts; a stated total that disagrees with them is kept but
    /// flagged.
    pub fn ingested(
        label: impl Into<String>,
        duration_s: u32,
        success: u64,
        failure: u64,
        total: Option<u64>,
    ) -> ReportRow {
        let derived = RunTally::from_counts(success, failure, duration_s.max(1));
        let stated = total.unwrap_or(derived.total);
        ReportRow {
            label: label.into(),
            duration_s,
            success,
            failure,
            total: stated,
            ratio: derived.ratio,
            source: RowSource::Ingested,
            consistent: stated == success + failure,
        }
    }
}

/// Ordered rows plus the consistency warnings they produced.
#[derive(Debug, Clone)]
pub struct ReportDocument {
    pub rows: Vec<ReportRow>,
    pub generated_at: SystemTime,
    pub notes: Vec<String>,
}

impl ReportDocument {
    pub fn new(rows: Vec<ReportRow>) -> Result<ReportDocument, ReportError> {
        for (i, row) in rows.iter().enumerate() {
            if rows[..i].iter().any(|r| r.label == row.label) {
                return Err(ReportError::DuplicateLabel(row.label.clone()));
            }
        }
        let notes = rows
            .iter()
            .filter(|r| !r.consistent)
            .map(|r| {
                format!(
                    "{}: total {} does not equal success + failure ({})",
                    r.label,
                    r.total,
                    r.success + r.failure
                )
            })
            .collect();
        Ok(ReportDocument {
            rows,
            generated_at: SystemTime::now(),
            notes,
        })
    }
}

fn time_cell(duration_s: u32) -> String {
    format!("{duration_s} seconds")
}

fn render_table(header: &[&str], rows: Vec<Vec<String>>, format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str(&format!("| {} |\n", header.join(" | ")));
            out.push_str(&format!("|{}\n", " --- |".repeat(header.len())));
            for row in rows {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
        }
        TableFormat::Csv => {
            out.push_str(&header.join(","));
            out.push('\n');
            for row in rows {
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    out
}

/// Name,Time,Success,Failure,Ratio — ratio with exactly two decimals.
pub fn render_ratio_table(doc: &ReportDocument, format: TableFormat) -> String {
    let rows = doc
        .rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                time_cell(r.duration_s),
                r.success.to_string(),
                r.failure.to_string(),
                r.ratio.to_string(),
            ]
        })
        .collect();
    render_table(&["Name", "Time", "Success", "Failure", "Ratio"], rows, format)
}

/// Name,Time,Success,Failure,Total — ingested totals render verbatim.
pub fn render_totals_table(doc: &ReportDocument, format: TableFormat) -> String {
    let rows = doc
        .rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                time_cell(r.duration_s),
                r.success.to_string(),
                r.failure.to_string(),
                r.total.to_string(),
            ]
        })
        .collect();
    render_table(&["Name", "Time", "Success", "Failure", "Total"], rows, format)
}

const CHART_BAR_SLOT: f64 = 90.0;
const CHART_BAR_WIDTH: f64 = 54.0;
const CHART_PLOT_HEIGHT: f64 = 300.0;
const CHART_MARGIN_LEFT: f64 = 60.0;
const CHART_MARGIN_RIGHT: f64 = 20.0;
const CHART_PLOT_TOP: f64 = 40.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render a self-contained SVG bar chart of the chosen metric, one labeled
/// bar per row, linear scale from zero. Output depends only on the rows.
pub fn render_ratio_chart(doc: &ReportDocument, metric: ChartMetric) -> Result<String, ReportError> {
    let mut values = Vec::with_capacity(doc.rows.len());
    for row in &doc.rows {
        let value = match metric {
            ChartMetric::Ratio => match row.ratio {
                RatioValue::Finite(v) => v.hundredths() as f64 / 100.0,
                RatioValue::Infinite => {
                    return Err(ReportError::NonFiniteMetric {
                        label: row.label.clone(),
                    })
                }
            },
            ChartMetric::Total => row.total as f64,
        };
        values.push(value);
    }

    let title = match metric {
        ChartMetric::Ratio => "Failure-to-Success Ratio",
        ChartMetric::Total => "Total Requests",
    };
    let n = doc.rows.len();
    let width = CHART_MARGIN_LEFT + CHART_BAR_SLOT * n as f64 + CHART_MARGIN_RIGHT;
    let baseline = CHART_PLOT_TOP + CHART_PLOT_HEIGHT;
    let height = baseline + 60.0;
    let max = values.iter().cloned().fold(0.0f64, f64::max);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        xml_escape(title)
    ));
    // axes
    svg.push_str(&format!(
        "  <line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\" stroke=\"#333\"/>\n",
        l = CHART_MARGIN_LEFT,
        t = CHART_PLOT_TOP,
        b = baseline
    ));
    svg.push_str(&format!(
        "  <line x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"#333\"/>\n",
        l = CHART_MARGIN_LEFT,
        b = baseline,
        r = width - CHART_MARGIN_RIGHT
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
        CHART_MARGIN_LEFT - 6.0,
        CHART_PLOT_TOP + 4.0,
        format_metric(max, metric)
    ));

    for (i, (row, &value)) in doc.rows.iter().zip(values.iter()).enumerate() {
        let bar_height = if max > 0.0 {
            value / max * CHART_PLOT_HEIGHT
        } else {
            0.0
        };
        let x = CHART_MARGIN_LEFT + CHART_BAR_SLOT * i as f64 + (CHART_BAR_SLOT - CHART_BAR_WIDTH) / 2.0;
        let y = baseline - bar_height;
        let center = x + CHART_BAR_WIDTH / 2.0;
        svg.push_str(&format!(
            "  <rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{CHART_BAR_WIDTH:.0}\" height=\"{bar_height:.2}\" fill=\"#4472c4\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{center:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            y - 5.0,
            format_metric(value, metric)
        ));
        svg.push_str(&format!(
            "  <text x=\"{center:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            baseline + 16.0,
            xml_escape(&row.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn format_metric(value: f64, metric: ChartMetric) -> String {
    match metric {
        ChartMetric::Ratio => format!("{value:.2}"),
        ChartMetric::Total => format!("{value:.0}"),
    }
}

const MANIFEST_HEADER: [&str; 5] = ["name", "time_s", "success", "failure", "total"];

/// Read ingest rows from a manifest CSV with header
/// `name,time_s,success,failure[,total]`. An empty total cell means "derive".
pub fn ingest_manifest(path: &Path) -> Result<Vec<ReportRow>, ReportError> {
    let raw = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(raw.as_bytes());
    let parse_err = |line: u64, message: String| ReportError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let with_total = match headers.len() {
        4 if headers == MANIFEST_HEADER[..4] => false,
        5 if headers == MANIFEST_HEADER => true,
        _ => {
            return Err(parse_err(
                1,
                format!("expected header `{}` (total optional)", MANIFEST_HEADER.join(",")),
            ))
        }
    };
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let expected_fields = if with_total { 5 } else { 4 };
        if record.len() != expected_fields {
            return Err(parse_err(
                line,
                format!("expected {expected_fields} fields, got {}", record.len()),
            ));
        }
        let name = record.get(0).unwrap_or("");
        if name.is_empty() {
            return Err(parse_err(line, "name must be non-empty".into()));
        }
        let duration_s: u32 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, "time_s must be an integer".into()))?;
        let success: u64 = record
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, "success must be a non-negative integer".into()))?;
        let failure: u64 = record
            .get(3)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, "failure must be a non-negative integer".into()))?;
        let total = if with_total {
            let cell = record.get(4).unwrap_or("");
            if cell.is_empty() {
                None
            } else {
                Some(cell.parse().map_err(|_| {
                    parse_err(line, "total must be a non-negative integer".into())
                })?)
            }
        } else {
            None
        };
        rows.push(ReportRow::ingested(name, duration_s, success, failure, total));
    }
    Ok(rows)
}

/// Write via a temp file in the same directory plus rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    std::io::Write::write_all(&mut tmp, contents)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Fixed2;
    use std::io::Write;

    fn paper_rows() -> Vec<ReportRow> {
        [
            ("XDoser", 1870, 8311, 10181),
            ("Hulk", 1856, 7646, 9502),
            ("Slowloris", 1898, 7902, 9544),
            ("LOIC", 1888, 8315, 9790),
            ("XOIC", 1887, 8319, 10206),
            ("Tor's Hammer", 1857, 8102, 9959),
            ("PyLoris", 1901, 8312, 10213),
        ]
        .into_iter()
        .map(|(name, s, f, t)| ReportRow::ingested(name, 25, s, f, Some(t)))
        .collect()
    }

    #[test]
    fn measured_row_renders_like_the_tool_table() {
        let tally = RunTally::from_counts(1870, 8311, 25);
        let doc = ReportDocument::new(vec![ReportRow::measured("XDoser", &tally)]).unwrap();
        let csv = render_ratio_table(&doc, TableFormat::Csv);
        assert_eq!(
            csv,
            "Name,Time,Success,Failure,Ratio\nXDoser,25 seconds,1870,8311,4.44\n"
        );
        let totals = render_totals_table(&doc, TableFormat::Csv);
        assert!(totals.ends_with("XDoser,25 seconds,1870,8311,10181\n"));
    }

    #[test]
    fn zero_success_renders_inf() {
        let tally = RunTally::from_counts(0, 5, 10);
        let doc = ReportDocument::new(vec![ReportRow::measured("dead", &tally)]).unwrap();
        let csv = render_ratio_table(&doc, TableFormat::Csv);
        assert!(csv.contains("dead,10 seconds,0,5,inf"));
        let err = render_ratio_chart(&doc, ChartMetric::Ratio).unwrap_err();
        assert!(matches!(err, ReportError::NonFiniteMetric { label } if label == "dead"));
    }

    #[test]
    fn inconsistent_ingested_rows_get_notes() {
        let doc = ReportDocument::new(paper_rows()).unwrap();
        assert_eq!(doc.notes.len(), 2);
        assert!(doc.notes[0].contains("Slowloris") && doc.notes[0].contains("9800"));
        assert!(doc.notes[1].contains("LOIC") && doc.notes[1].contains("10203"));
        // stated totals render verbatim in the totals table
        let totals = render_totals_table(&doc, TableFormat::Csv);
        assert!(totals.contains("Slowloris,25 seconds,1898,7902,9544"));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let rows = vec![
            ReportRow::ingested("X", 25, 1, 2, None),
            ReportRow::ingested("X", 25, 3, 4, None),
        ];
        assert!(matches!(
            ReportDocument::new(rows),
            Err(ReportError::DuplicateLabel(label)) if label == "X"
        ));
    }

    #[test]
    fn chart_marks_the_tallest_bar_correctly() {
        let doc = ReportDocument::new(paper_rows()).unwrap();
        let svg = render_ratio_chart(&doc, ChartMetric::Ratio).unwrap();
        // XDoser has the max ratio 4.44: its bar uses the full plot height
        assert!(svg.contains("height=\"300.00\""));
        assert!(svg.contains(">4.44<"));
        assert!(svg.contains(">Tor&#39;s Hammer<") || svg.contains(">Tor's Hammer<"));

        let svg_total = render_ratio_chart(&doc, ChartMetric::Total).unwrap();
        assert!(svg_total.contains(">10213<"));

        // determinism
        assert_eq!(svg, render_ratio_chart(&doc, ChartMetric::Ratio).unwrap());
    }

    #[test]
    fn ratio_csv_roundtrips_numeric_fields() {
        let doc = ReportDocument::new(paper_rows()).unwrap();
        let text = render_ratio_table(&doc, TableFormat::Csv);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        for (record, row) in reader.records().zip(doc.rows.iter()) {
            let record = record.unwrap();
            assert_eq!(record.get(0).unwrap(), row.label);
            assert_eq!(record.get(1).unwrap(), format!("{} seconds", row.duration_s));
            assert_eq!(record.get(2).unwrap(), row.success.to_string());
            assert_eq!(record.get(3).unwrap(), row.failure.to_string());
            assert_eq!(record.get(4).unwrap(), row.ratio.to_string());
        }
    }

    #[test]
    fn manifest_ingest_and_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "name,time_s,success,failure,total").unwrap();
        writeln!(f, "XDoser,25,1870,8311,10181").unwrap();
        writeln!(f, "Derived,25,10,20,").unwrap();
        f.flush().unwrap();
        let rows = ingest_manifest(f.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].total, 10181);
        assert!(rows[0].consistent);
        assert_eq!(rows[1].total, 30);
        assert_eq!(rows[1].ratio, RatioValue::Finite(Fixed2::from_hundredths(200)));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "name,time_s,success,failure").unwrap();
        writeln!(g, "NoTotal,25,2,2").unwrap();
        g.flush().unwrap();
        let rows = ingest_manifest(g.path()).unwrap();
        assert_eq!(rows[0].total, 4);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "name,time_s,success,failure,total").unwrap();
        writeln!(bad, "X,25,many,8311,10181").unwrap();
        bad.flush().unwrap();
        let err = ingest_manifest(bad.path()).unwrap_err();
        assert!(matches!(err, ReportError::Parse { line: 2, .. }), "{err}");

        let mut wrong = tempfile::NamedTempFile::new().unwrap();
        writeln!(wrong, "tool,seconds,wins").unwrap();
        wrong.flush().unwrap();
        assert!(matches!(
            ingest_manifest(wrong.path()),
            Err(ReportError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.md");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
    }
}
