//! Plain CSV plot data, with optional minimal SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::experiment::files;
use super::report::{read_rows_csv, read_telemetry_csv, ReportRow};
use crate::error::{Error, Result};
use crate::reweight::LossWeightTrace;

pub const KTL_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    WeightVsLoss,
    KtlHistogram,
    BetaCurves,
    Telemetry,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::WeightVsLoss,
        PlotKind::KtlHistogram,
        PlotKind::BetaCurves,
        PlotKind::Telemetry,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PlotKind::WeightVsLoss => "weight_vs_loss",
            PlotKind::KtlHistogram => "ktl_histogram",
            PlotKind::BetaCurves => "beta_curves",
            PlotKind::Telemetry => "telemetry",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown plot kind `{s}`")))
    }
}

pub fn write_ktl_csv(path: &Path, ktl: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["ktl"])?;
    for v in ktl {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ktl_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad ktl value `{}`", &rec[0])))
        })
        .collect()
}

/// Counts over `KTL_BINS` equal bins of (0,1]; bin `i` is `(i/B, (i+1)/B]`.
pub fn ktl_histogram(values: &[f64]) -> Result<Vec<usize>> {
    let mut counts = vec![0; KTL_BINS];
    for &v in values {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::Metric(format!("KTL value {v} outside (0,1]")));
        }
        let bin = ((v * KTL_BINS as f64).ceil() as usize).clamp(1, KTL_BINS) - 1;
        counts[bin] += 1;
    }
    Ok(counts)
}

fn missing(kind: PlotKind, what: &str) -> Error {
    Error::Input(format!("{}: {what} not found; enable it in the config", kind.name()))
}

fn rows_in(dir: &Path) -> Result<Vec<ReportRow>> {
    let sweep = dir.join("sweep.csv");
    if sweep.exists() {
        read_rows_csv(&sweep)
    } else {
        read_rows_csv(&dir.join(files::EPOCHS_CSV))
    }
}

/// Writes `<kind>.csv` (and `<kind>.svg` when asked) into `out` from the
/// artifacts of a run or sweep directory. Returns the written paths.
pub fn emit_plot_data(dir: &Path, kind: PlotKind, out: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let source = match kind {
        PlotKind::WeightVsLoss => Some(files::TRACE),
        PlotKind::KtlHistogram => Some(files::KTL),
        PlotKind::Telemetry => Some(files::TELEMETRY),
        PlotKind::BetaCurves => None,
    };
    if let Some(name) = source.filter(|n| !dir.join(n).exists()) {
        return Err(missing(kind, name));
    }
    std::fs::create_dir_all(out)?;
    let csv_path = out.join(format!("{}.csv", kind.name()));
    let mut w = csv::Writer::from_path(&csv_path)?;
    let (series, scatter, labels): (Vec<Series>, bool, (&str, &str)) = match kind {
        PlotKind::WeightVsLoss => {
            let path = dir.join(files::TRACE);
            let trace = LossWeightTrace::read_csv(&path)?;
            w.write_record(["nll", "weight"])?;
            let pts: Vec<(f64, f64)> = trace.records.iter().map(|r| (r.nll, r.weight)).collect();
            for (x, y) in &pts {
                w.write_record([x.to_string(), y.to_string()])?;
            }
            (vec![("tokens".into(), pts)], true, ("nll", "weight"))
        }
        PlotKind::KtlHistogram => {
            let path = dir.join(files::KTL);
            let counts = ktl_histogram(&read_ktl_csv(&path)?)?;
            w.write_record(["bin_lo", "bin_hi", "count"])?;
            let mut pts = Vec::new();
            for (i, c) in counts.iter().enumerate() {
                let (lo, hi) = (i as f64 / KTL_BINS as f64, (i + 1) as f64 / KTL_BINS as f64);
                w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
                pts.push((hi, *c as f64));
            }
            (vec![("count".into(), pts)], false, ("ktl", "count"))
        }
        PlotKind::BetaCurves => {
            let mut rows = rows_in(dir).map_err(|_| missing(kind, "sweep.csv or report.csv"))?;
            rows.sort_by(|a, b| {
                (&a.criterion, a.epoch)
                    .cmp(&(&b.criterion, b.epoch))
                    .then(a.beta.total_cmp(&b.beta))
            });
            w.write_record(["criterion", "epoch", "beta", "es_retain", "es_unlearn"])?;
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            let last_epoch = rows.iter().map(|r| r.epoch).max().unwrap_or(0);
            for r in &rows {
                w.write_record([
                    r.criterion.clone(),
                    r.epoch.to_string(),
                    r.beta.to_string(),
                    opt(r.es_retain),
                    opt(r.es_unlearn),
                ])?;
                if let (true, Some(es)) = (r.epoch == last_epoch, r.es_retain) {
                    curves.entry(r.criterion.clone()).or_default().push((r.beta, es));
                }
            }
            (curves.into_iter().collect(), false, ("beta", "es_retain"))
        }
        PlotKind::Telemetry => {
            let path = dir.join(files::TELEMETRY);
            let t = read_telemetry_csv(&path)?;
            w.write_record(["step", "forget_loss", "retain_loss", "grad_norm"])?;
            for s in &t {
                w.write_record([
                    s.step.to_string(),
                    s.forget_loss.to_string(),
                    s.retain_loss.to_string(),
                    s.grad_norm.to_string(),
                ])?;
            }
            let pick = |f: fn(&crate::objectives::StepTelemetry) -> f64| t.iter().map(|s| (s.step as f64, f(s))).collect();
            (
                vec![
                    ("forget_loss".into(), pick(|s| s.forget_loss)),
                    ("grad_norm".into(), pick(|s| s.grad_norm)),
                ],
                false,
                ("step", "value"),
            )
        }
    };
    w.flush()?;
    let mut written = vec![csv_path];
    if svg {
        let path = out.join(format!("{}.svg", kind.name()));
        std::fs::write(&path, render_svg(kind.name(), &series, scatter, labels))?;
        written.push(path);
    }
    Ok(written)
}

type Series = (String, Vec<(f64, f64)>);

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// A bare-bones line or scatter chart.
pub fn render_svg(title: &str, series: &[(String, Vec<(f64, f64)>)], scatter: bool, labels: (&str, &str)) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let sx = |x: f64| m + (x - x0) / span(x0, x1) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / span(y0, y1) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m},{m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{} [{x0:.3}, {x1:.3}]</text>"#, w / 2.0, h - 8.0, labels.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{} [{y0:.3}, {y1:.3}]</text>"#, h / 2.0, h / 2.0, labels.1);
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite = p.iter().filter(|(x, y)| x.is_finite() && y.is_finite());
        if scatter {
            for &(x, y) in finite {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" fill-opacity="0.5"/>"#, sx(x), sy(y));
            }
        } else {
            let d: Vec<String> = finite.map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, d.join(" "));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#, w - m - 90.0, m + 14.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_cover_unit_interval() {
        let v = [0.05, 0.1, 0.1000001, 0.5, 1.0, 0.95];
        let c = ktl_histogram(&v).unwrap();
        assert_eq!(c.iter().sum::<usize>(), v.len());
        assert_eq!(c[0], 2);
        assert_eq!(c[1], 1);
        assert_eq!(c[9], 2);
        assert!(ktl_histogram(&[0.0]).is_err());
    }

    #[test]
    fn missing_trace_is_reported_per_kind() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [PlotKind::WeightVsLoss, PlotKind::KtlHistogram, PlotKind::Telemetry] {
            let err = emit_plot_data(dir.path(), kind, &dir.path().join("plots"), false).unwrap_err();
            assert!(err.to_string().contains(kind.name()));
        }
    }

    #[test]
    fn ktl_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.csv");
        let v = vec![0.25, 1.0, 1.0 / 3.0];
        write_ktl_csv(&p, &v).unwrap();
        assert_eq!(read_ktl_csv(&p).unwrap(), v);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = render_svg("t", &[("a".into(), vec![(0.0, 1.0), (1.0, 2.0)])], false, ("x", "y"));
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("polyline"));
    }
}
