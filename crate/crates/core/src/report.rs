//! Verification reports and their CSV / SVG emitters.
//!
//! CSV schema (UTF-8, header row, RFC-4180 quoting), one row per report:
//!
//! ```text
//! suite,name,observed,comparison,threshold,pass,std_error,bound,config_hash,details
//! ```
//!
//! `details` is a `key=value` list joined by `;`. Wall time is deliberately
//! not part of the CSV so that identical runs produce identical bytes; it is
//! written to `timings.txt` instead.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};

/// Acceptance rule applied to the observed value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Check {
    /// observed <= limit
    AtMost(f64),
    /// observed < limit
    Below(f64),
    /// observed >= limit
    AtLeast(f64),
    /// observed is finite
    Finite,
}

impl Check {
    pub fn accepts(&self, observed: f64) -> bool {
        match *self {
            Check::AtMost(limit) => observed <= limit,
            Check::Below(limit) => observed < limit,
            Check::AtLeast(limit) => observed >= limit,
            Check::Finite => observed.is_finite(),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Check::AtMost(_) => "<=",
            Check::Below(_) => "<",
            Check::AtLeast(_) => ">=",
            Check::Finite => "finite",
        }
    }

    fn threshold(&self) -> Option<f64> {
        match *self {
            Check::AtMost(v) | Check::Below(v) | Check::AtLeast(v) => Some(v),
            Check::Finite => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub suite: String,
    pub name: String,
    pub observed: f64,
    pub check: Check,
    pub std_error: Option<f64>,
    /// The estimate being probed, in words.
    pub bound: String,
    pub details: Vec<(String, f64)>,
    /// (x, y) points for the SVG summary, e.g. ratio vs grid size.
    pub series: Vec<(f64, f64)>,
    pub wall_time: Duration,
    pub config_hash: String,
}

impl VerificationReport {
    pub fn new(name: impl Into<String>, observed: f64, check: Check) -> Self {
        Self {
            suite: String::new(),
            name: name.into(),
            observed,
            check,
            std_error: None,
            bound: String::new(),
            details: Vec::new(),
            series: Vec::new(),
            wall_time: Duration::ZERO,
            config_hash: String::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.check.accepts(self.observed)
    }

    pub fn with_bound(mut self, bound: impl Into<String>) -> Self {
        self.bound = bound.into();
        self
    }

    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }

    pub fn with_detail(mut self, key: impl Into<String>, value: f64) -> Self {
        self.details.push((key.into(), value));
        self
    }

    pub fn with_series(mut self, series: Vec<(f64, f64)>) -> Self {
        self.series = series;
        self
    }

    pub fn detail(&self, key: &str) -> Option<f64> {
        self.details.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Shortest round-trip representation; stable across platforms.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn to_csv(reports: &[VerificationReport]) -> String {
    let mut out = String::from(
        "suite,name,observed,comparison,threshold,pass,std_error,bound,config_hash,details\r\n",
    );
    for r in reports {
        let details = r
            .details
            .iter()
            .map(|(k, v)| format!("{k}={}", num(*v)))
            .collect::<Vec<_>>()
            .join(";");
        let fields = [
            csv_field(&r.suite),
            csv_field(&r.name),
            num(r.observed),
            r.check.label().to_string(),
            r.check.threshold().map(num).unwrap_or_default(),
            r.passed().to_string(),
            r.std_error.map(num).unwrap_or_default(),
            csv_field(&r.bound),
            csv_field(&r.config_hash),
            csv_field(&details),
        ];
        out.push_str(&fields.join(","));
        out.push_str("\r\n");
    }
    out
}

/// Names of failing reports, in report order.
pub fn failing(reports: &[VerificationReport]) -> Vec<String> {
    reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    SvgSummary,
}

/// Writes the requested artefacts into `dir` and returns the paths written.
///
/// Besides the main file, a `status.txt` lists the overall outcome and the
/// names of failing reports.
pub fn emit_report(
    reports: &[VerificationReport],
    format: ReportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if dir.as_os_str().is_empty() {
        return Err(Error::invalid("output directory path is empty"));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let path = dir.join("reports.csv");
            fs::write(&path, to_csv(reports))?;
            written.push(path);
        }
        ReportFormat::SvgSummary => {
            let path = dir.join("summary.svg");
            fs::write(&path, svg_summary(reports))?;
            written.push(path);
        }
    }
    let status = dir.join("status.txt");
    let failed = failing(reports);
    let mut text = format!("reports={}\nfailed={}\n", reports.len(), failed.len());
    for name in &failed {
        let _ = writeln!(text, "FAIL {name}");
    }
    fs::write(&status, text)?;
    written.push(status);
    Ok(written)
}

pub fn write_timings(reports: &[VerificationReport], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut text = String::new();
    for r in reports {
        let _ = writeln!(
            text,
            "{}\t{}\t{:.3}s",
            r.suite,
            r.name,
            r.wall_time.as_secs_f64()
        );
    }
    let path = dir.join("timings.txt");
    fs::write(&path, text)?;
    Ok(path)
}

/// One panel per report that carries a series; each panel is a polyline with
/// markers, x and y scaled to the panel.
pub fn svg_summary(reports: &[VerificationReport]) -> String {
    let plotted: Vec<&VerificationReport> =
        reports.iter().filter(|r| !r.series.is_empty()).collect();
    let (pw, ph, margin) = (320.0, 200.0, 40.0);
    let cols = 3usize;
    let rows = plotted.len().div_ceil(cols).max(1);
    let width = cols as f64 * (pw + margin) + margin;
    let height = rows as f64 * (ph + 2.0 * margin) + margin;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (idx, r) in plotted.iter().enumerate() {
        let ox = margin + (idx % cols) as f64 * (pw + margin);
        let oy = margin + (idx / cols) as f64 * (ph + 2.0 * margin);
        let xs = r.series.iter().map(|p| p.0);
        let ys = r.series.iter().map(|p| p.1).filter(|y| y.is_finite());
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        let sx = |x: f64| ox + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| oy + ph - (y - y0) / (y1 - y0) * ph;
        let colour = if r.passed() { "#1b7837" } else { "#b2182b" };
        let _ = writeln!(
            svg,
            "<rect x=\"{ox}\" y=\"{oy}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#999\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{ox}\" y=\"{}\">{}</text>",
            oy - 6.0,
            xml_escape(&r.name)
        );
        let points: Vec<String> = r
            .series
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        for &(x, y) in r.series.iter().filter(|p| p.1.is_finite()) {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{colour}\"/>",
                sx(x),
                sy(y)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{ox}\" y=\"{}\">x: {} .. {}   y: {:.4} .. {:.4}</text>",
            oy + ph + 14.0,
            num(x0),
            num(x1),
            y0,
            y1
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        let pad = 0.5 * hi.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_passing_report_is_one_row() {
        let r = VerificationReport::new("mass", 1e-12, Check::AtMost(1e-8));
        let csv = to_csv(&[r]);
        let lines: Vec<&str> = csv.trim_end().split("\r\n").collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].contains(",true,"));
    }

    #[test]
    fn quoting_follows_rfc4180() {
        let r = VerificationReport::new("a,\"b\"", 1.0, Check::Finite);
        let csv = to_csv(&[r]);
        assert!(csv.contains("\"a,\"\"b\"\"\""));
    }

    #[test]
    fn svg_has_one_marker_per_point() {
        let r = VerificationReport::new("ratio", 1.0, Check::Finite).with_series(vec![
            (64.0, 1.0),
            (128.0, 1.1),
            (256.0, 1.12),
        ]);
        let svg = svg_summary(&[r]);
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn status_lists_failures() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![
            VerificationReport::new("good", 0.0, Check::AtMost(1.0)),
            VerificationReport::new("bad", 2.0, Check::AtMost(1.0)),
        ];
        emit_report(&reports, ReportFormat::Csv, dir.path()).unwrap();
        let status = std::fs::read_to_string(dir.path().join("status.txt")).unwrap();
        assert!(status.contains("failed=1"));
        assert!(status.contains("FAIL bad"));
        assert!(!status.contains("FAIL good"));
    }

    #[test]
    fn empty_output_dir_rejected() {
        assert!(emit_report(&[], ReportFormat::Csv, Path::new("")).is_err());
    }
}
