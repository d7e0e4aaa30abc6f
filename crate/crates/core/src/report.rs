//! SVG figures and summary tables built from metrics files.
//!
//! Output depends only on the parsed records, so the same file always
//! renders to the same bytes. Every polyline carries a class naming what it
//! plots (`rank layer-3`, `acc test`, `norm run-1`, ...), which keeps the
//! documents easy to inspect programmatically.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::detect::{classify_run, ClassifyParams, PhaseReport, Series};
use crate::error::{Error, Result};
use crate::instrument::tunnel_length;
use crate::runner::MetricsFile;

/// Line colors, assigned to layers (or runs) in order and reused cyclically.
pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939",
];

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 240.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const GAP: f64 = 60.0;

/// `dir/name` for a metrics file at `dir/metrics.jsonl`.
pub fn sibling_path(metrics: &Path, name: &str) -> PathBuf {
    metrics.parent().unwrap_or(Path::new(".")).join(name)
}

pub fn train_accuracy(file: &MetricsFile) -> Result<Series> {
    column(file, |r| r.train_acc)
}

pub fn test_accuracy(file: &MetricsFile) -> Result<Series> {
    column(file, |r| r.test_acc)
}

pub fn weight_norms(file: &MetricsFile) -> Result<Series> {
    column(file, |r| r.weight_norm)
}

/// One rank curve per hidden layer, input side first.
pub fn layer_ranks(file: &MetricsFile) -> Result<Vec<Series>> {
    let layers = file.records.first().map_or(0, |r| r.per_layer_rank.len());
    (0..layers)
        .map(|l| {
            column(file, |r| {
                r.per_layer_rank.get(l).map_or(f64::NAN, |&x| x as f64)
            })
        })
        .collect()
}

/// Probe accuracy per hidden layer over the records that carry probes.
pub fn layer_probes(file: &MetricsFile) -> Result<Vec<Series>> {
    let probed: Vec<_> = file
        .records
        .iter()
        .filter_map(|r| Some((r.step, r.per_layer_probe_acc.as_ref()?)))
        .collect();
    let layers = probed.first().map_or(0, |(_, p)| p.len());
    (0..layers)
        .map(|l| {
            Series::new(
                probed.iter().map(|(s, _)| *s).collect(),
                probed
                    .iter()
                    .map(|(_, p)| p.get(l).copied().unwrap_or(f64::NAN))
                    .collect(),
            )
        })
        .collect()
}

fn column(file: &MetricsFile, f: impl Fn(&crate::runner::MetricsRecord) -> f64) -> Result<Series> {
    Series::new(file.steps(), file.records.iter().map(f).collect())
}

/// Regime analysis of one run with the given thresholds.
pub fn phase_report_with(file: &MetricsFile, params: &ClassifyParams) -> Result<PhaseReport> {
    classify_run(
        &train_accuracy(file)?,
        &test_accuracy(file)?,
        &layer_ranks(file)?,
        params,
    )
}

pub fn phase_report(file: &MetricsFile) -> Result<PhaseReport> {
    phase_report_with(file, &ClassifyParams::default())
}

/// Maps log₁₀(step) and a value range onto one panel.
struct Panel {
    top: f64,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Panel {
    fn plot_width() -> f64 {
        WIDTH - LEFT - RIGHT
    }

    fn x(&self, step: u64) -> f64 {
        let lx = (step.max(1) as f64).log10();
        let span = self.x_hi - self.x_lo;
        let t = if span > 0.0 {
            (lx - self.x_lo) / span
        } else {
            0.5
        };
        LEFT + t * Panel::plot_width()
    }

    fn y(&self, v: f64) -> f64 {
        let span = self.y_hi - self.y_lo;
        let t = if span > 0.0 {
            (v - self.y_lo) / span
        } else {
            0.5
        };
        self.top + (1.0 - t) * PANEL_HEIGHT
    }

    fn frame(&self, out: &mut String, title: &str, y_label: &str) {
        let _ = writeln!(
            out,
            r##"<rect class="frame" x="{LEFT:.2}" y="{:.2}" width="{:.2}" height="{PANEL_HEIGHT:.2}" fill="none" stroke="#000"/>"##,
            self.top,
            Panel::plot_width()
        );
        let _ = writeln!(
            out,
            r#"<text class="title" x="{LEFT:.2}" y="{:.2}" font-size="13">{}</text>"#,
            self.top - 8.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text class="ylabel" x="12" y="{:.2}" font-size="11" transform="rotate(-90 12 {:.2})" text-anchor="middle">{}</text>"#,
            self.top + PANEL_HEIGHT / 2.0,
            self.top + PANEL_HEIGHT / 2.0,
            escape(y_label)
        );
        for (v, label) in [(self.y_lo, self.y_lo), (self.y_hi, self.y_hi)] {
            let _ = writeln!(
                out,
                r#"<text class="ytick" x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                LEFT - 4.0,
                self.y(v) + 3.0,
                trim_number(label)
            );
        }
        let first = self.x_lo.ceil() as i32;
        let last = self.x_hi.floor() as i32;
        for k in first..=last {
            let x = LEFT
                + (k as f64 - self.x_lo) / (self.x_hi - self.x_lo).max(1e-12) * Panel::plot_width();
            let _ = writeln!(
                out,
                r##"<line class="xtick" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ccc"/>"##,
                self.top,
                self.top + PANEL_HEIGHT
            );
            let _ = writeln!(
                out,
                r#"<text class="xtick" x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">1e{k}</text>"#,
                self.top + PANEL_HEIGHT + 14.0
            );
        }
    }

    fn polyline(&self, out: &mut String, class: &str, color: &str, s: &Series) {
        let points: Vec<String> = s
            .steps()
            .iter()
            .zip(s.values())
            .filter(|(_, v)| v.is_finite())
            .map(|(&t, &v)| format!("{:.2},{:.2}", self.x(t), self.y(v)))
            .collect();
        if points.is_empty() {
            return;
        }
        let _ = writeln!(
            out,
            r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
    }

    fn vertical(&self, out: &mut String, class: &str, step: u64) {
        let x = self.x(step);
        let _ = writeln!(
            out,
            r##"<line class="{class}" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="4 3"/>"##,
            self.top,
            self.top + PANEL_HEIGHT
        );
    }
}

fn legend(out: &mut String, top: f64, row: usize, color: &str, label: &str) {
    let x = WIDTH - RIGHT + 12.0;
    let y = top + 12.0 + 14.0 * row as f64;
    let _ = writeln!(
        out,
        r#"<line class="legend" x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#,
        x + 18.0
    );
    let _ = writeln!(
        out,
        r#"<text class="legend" x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
        x + 22.0,
        y + 3.0,
        escape(label)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn trim_number(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn log_range(steps: impl Iterator<Item = u64>) -> (f64, f64) {
    let (lo, hi) = steps.fold((u64::MAX, 0), |(a, b), s| (a.min(s), b.max(s)));
    if hi == 0 {
        (0.0, 1.0)
    } else {
        ((lo.max(1) as f64).log10(), (hi.max(1) as f64).log10())
    }
}

fn open_svg(out: &mut String, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
}

fn warning(out: &mut String, y: f64, text: &str) {
    let _ = writeln!(
        out,
        r##"<text class="warning" x="{LEFT:.2}" y="{y:.2}" font-size="12" fill="#b00">warning: {}</text>"##,
        escape(text)
    );
}

/// Three stacked panels on a log-step axis: per-layer feature rank, train
/// and test accuracy, per-layer probe accuracy. Missing data leaves a panel
/// empty and adds a warning line instead of failing.
pub fn render_run_figure(file: &MetricsFile) -> String {
    let height = TOP + 3.0 * (PANEL_HEIGHT + GAP);
    let mut out = String::new();
    open_svg(&mut out, height);
    let (x_lo, x_hi) = log_range(file.records.iter().map(|r| r.step));
    let panel = |row: usize, y_lo: f64, y_hi: f64| Panel {
        top: TOP + row as f64 * (PANEL_HEIGHT + GAP),
        x_lo,
        x_hi,
        y_lo,
        y_hi,
    };
    let mut warnings = Vec::new();
    if file.records.is_empty() {
        warnings.push("no metrics records".to_string());
    }

    let ranks = layer_ranks(file).unwrap_or_else(|e| {
        warnings.push(format!("rank curves unavailable: {e}"));
        Vec::new()
    });
    let max_rank = file
        .records
        .iter()
        .flat_map(|r| r.per_layer_rank.iter().copied())
        .max()
        .unwrap_or(0)
        .max(file.config().width) as f64;
    let p = panel(0, 0.0, max_rank);
    p.frame(&mut out, "feature rank per hidden layer", "rank");
    for (l, s) in ranks.iter().enumerate() {
        let color = PALETTE[l % PALETTE.len()];
        p.polyline(&mut out, &format!("rank layer-{}", l + 1), color, s);
        legend(&mut out, p.top, l, color, &format!("layer {}", l + 1));
    }

    let p = panel(1, 0.0, 1.0);
    p.frame(&mut out, "accuracy", "accuracy");
    match (train_accuracy(file), test_accuracy(file)) {
        (Ok(train), Ok(test)) => {
            p.polyline(&mut out, "acc train", PALETTE[0], &train);
            p.polyline(&mut out, "acc test", PALETTE[1], &test);
            legend(&mut out, p.top, 0, PALETTE[0], "train");
            legend(&mut out, p.top, 1, PALETTE[1], "test");
            if let Ok(report) = phase_report(file) {
                if let Some(t) = report.t_train_sat {
                    p.vertical(&mut out, "train-sat", t);
                }
                if let Some(t) = report.t_test_sat {
                    p.vertical(&mut out, "test-sat", t);
                }
            }
        }
        (Err(e), _) | (_, Err(e)) => warnings.push(format!("accuracy curves unavailable: {e}")),
    }

    let p = panel(2, 0.0, 1.0);
    p.frame(
        &mut out,
        "linear probe test accuracy per hidden layer",
        "accuracy",
    );
    match layer_probes(file) {
        Ok(probes) if !probes.is_empty() => {
            for (l, s) in probes.iter().enumerate() {
                let color = PALETTE[l % PALETTE.len()];
                p.polyline(&mut out, &format!("probe layer-{}", l + 1), color, s);
                legend(&mut out, p.top, l, color, &format!("layer {}", l + 1));
            }
        }
        Ok(_) => warnings.push("no probe records".into()),
        Err(e) => warnings.push(format!("probe curves unavailable: {e}")),
    }

    for (i, w) in warnings.iter().enumerate() {
        warning(&mut out, height - 8.0 - 16.0 * i as f64, w);
    }
    out.push_str("</svg>\n");
    out
}

/// Weight norm and one layer's rank for several runs of the same depth,
/// overlaid. `layer` is a 0-based hidden-layer index and defaults to the
/// last hidden layer (the input of the output layer).
pub fn render_norm_comparison(files: &[&MetricsFile], layer: Option<usize>) -> Result<String> {
    if files.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least two runs to compare, got {}",
            files.len()
        )));
    }
    let depth = files[0].config().depth;
    if let Some(f) = files.iter().find(|f| f.config().depth != depth) {
        return Err(Error::Argument(format!(
            "runs have different depths ({depth} and {})",
            f.config().depth
        )));
    }
    let hidden = depth - 1;
    let layer = layer.unwrap_or(hidden - 1);
    if layer >= hidden {
        return Err(Error::Argument(format!(
            "layer {layer} out of range for {hidden} hidden layers"
        )));
    }

    let height = TOP + 2.0 * (PANEL_HEIGHT + GAP);
    let mut out = String::new();
    open_svg(&mut out, height);
    let (x_lo, x_hi) = log_range(files.iter().flat_map(|f| f.records.iter().map(|r| r.step)));
    let norms = files
        .iter()
        .map(|f| weight_norms(f))
        .collect::<Result<Vec<_>>>()?;
    let ranks = files
        .iter()
        .map(|f| Ok(layer_ranks(f)?.get(layer).cloned()))
        .collect::<Result<Vec<_>>>()?;

    let max_norm = norms
        .iter()
        .flat_map(|s| s.values().iter().copied())
        .fold(0.0, f64::max);
    let p = Panel {
        top: TOP,
        x_lo,
        x_hi,
        y_lo: 0.0,
        y_hi: max_norm,
    };
    p.frame(&mut out, "weight norm", "L2 norm");
    for (k, s) in norms.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        p.polyline(&mut out, &format!("norm run-{}", k + 1), color, s);
        let f = files[k].config();
        legend(
            &mut out,
            p.top,
            k,
            color,
            &format!("run {} (n={})", k + 1, f.n_train),
        );
    }

    let max_rank = files.iter().map(|f| f.config().width).max().unwrap_or(1) as f64;
    let p = Panel {
        top: TOP + PANEL_HEIGHT + GAP,
        x_lo,
        x_hi,
        y_lo: 0.0,
        y_hi: max_rank,
    };
    p.frame(
        &mut out,
        &format!("feature rank, hidden layer {}", layer + 1),
        "rank",
    );
    let mut missing = Vec::new();
    for (k, s) in ranks.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        match s {
            Some(s) => p.polyline(&mut out, &format!("rank run-{}", k + 1), color, s),
            None => missing.push(k + 1),
        }
        legend(&mut out, p.top, k, color, &format!("run {}", k + 1));
    }
    if !missing.is_empty() {
        warning(
            &mut out,
            height - 8.0,
            &format!("no rank data for runs {missing:?}"),
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "run",
    "digest",
    "regime",
    "t_train_sat",
    "t_test_sat",
    "grok_gap_ratio",
    "surges",
    "tunnel_length",
    "final_test_acc",
    "final_step",
];

/// Tab-separated table, one row per run, with a header line.
pub fn summarize(runs: &[(String, &MetricsFile)]) -> Result<String> {
    summarize_with(runs, &ClassifyParams::default())
}

pub fn summarize_with(runs: &[(String, &MetricsFile)], params: &ClassifyParams) -> Result<String> {
    let mut out = SUMMARY_HEADER.join("\t");
    out.push('\n');
    let opt = |v: Option<u64>| v.map_or("-".to_string(), |v| v.to_string());
    for (name, file) in runs {
        let report = phase_report_with(file, params)?;
        let last = file.last();
        let tunnel = last.map_or(0, |r| {
            tunnel_length(&r.per_layer_rank, file.config().tunnel_threshold)
        });
        let row = [
            name.clone(),
            file.header.digest.clone(),
            report.regime.to_string(),
            opt(report.t_train_sat),
            opt(report.t_test_sat),
            report
                .grok_gap_ratio
                .map_or("-".into(), |r| format!("{r:.2}")),
            report.surges.len().to_string(),
            tunnel.to_string(),
            format!("{:.4}", report.final_test_acc),
            opt(last.map(|r| r.step)),
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    Ok(out)
}
