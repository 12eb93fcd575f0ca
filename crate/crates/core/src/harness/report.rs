use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, ExperimentReport, OutputFormat, ReplicateRow};
use crate::error::{Error, Result};

pub const CSV_FILE: &str = "replicates.csv";
pub const JSON_FILE: &str = "report.json";
pub const SVG_FILE: &str = "kl_vs_lambda.svg";

fn write_csv(path: &Path, rows: &[ReplicateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse a file written by [`emit_report`] back into rows.
pub fn read_rows_csv(path: &Path) -> Result<Vec<ReplicateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { lo, hi }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

/// Log-log plot of mean KL and the oracle right-hand side against λ.
fn render_svg(report: &ExperimentReport) -> String {
    let floor = 1e-12;
    let mut aggs: Vec<_> = report.aggregates.iter().filter(|a| a.lambda > 0.0).collect();
    aggs.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let xs: Vec<f64> = aggs.iter().map(|a| a.lambda.log10()).collect();
    let series = [
        ("mean KL", "#1f77b4", aggs.iter().map(|a| a.mean_kl.max(floor).log10()).collect::<Vec<_>>()),
        (
            "oracle RHS",
            "#d62728",
            aggs.iter().map(|a| a.bound_report.oracle_rhs_total.max(floor).log10()).collect(),
        ),
    ];
    let xa = Axis::fit(xs.iter().copied());
    let ya = Axis::fit(series.iter().flat_map(|s| s.2.iter().copied()));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">log10 lambda [{:.3}, {:.3}]</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 20.0,
        xa.lo,
        xa.hi
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" transform="rotate(-90 15 {:.2})" text-anchor="middle" font-size="12">log10 value [{:.3}, {:.3}]</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        ya.lo,
        ya.hi
    );
    for (i, (name, colour, ys)) in series.iter().enumerate() {
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| format!("{:.2},{:.2}", xa.map(*x, x0, x1), ya.map(*y, y0, y1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{colour}" stroke-width="2" fill="none"/>"#,
            points.join(" ")
        );
        let ly = y1 + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{colour}" font-size="12">{name}</text>"#,
            x0 + 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write the requested report files into `config.output_dir` and return
/// their paths. Reruns with the same inputs produce identical bytes.
pub fn emit_report(report: &ExperimentReport, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    if config.formats.is_empty() {
        return Err(Error::Config("at least one output format is required".into()));
    }
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut formats = config.formats.clone();
    formats.sort();
    formats.dedup();
    let mut written = Vec::with_capacity(formats.len());
    for f in formats {
        let path = match f {
            OutputFormat::Csv => {
                let path = dir.join(CSV_FILE);
                write_csv(&path, &report.rows)?;
                path
            }
            OutputFormat::Json => {
                let path = dir.join(JSON_FILE);
                let text = serde_json::to_string_pretty(report)?;
                fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
                path
            }
            OutputFormat::Svg => {
                let path = dir.join(SVG_FILE);
                fs::write(&path, render_svg(report)).map_err(|e| Error::io(&path, e))?;
                path
            }
        };
        written.push(path);
    }
    Ok(written)
}
