//! CSV tables and minimal SVG line charts.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;
use crate::net_ir::CountReport;
use crate::pim_map::{MappingReport, SweepTable};
use crate::robustness::EvalReport;

/// Formats `v` with six significant digits in the style of C's `%g`:
/// trailing zeros trimmed, exponent form below 1e-4 or from 1e6 upward.
pub fn sig6(v: f64) -> String {
    const P: i32 = 6;
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    // Exponent after rounding to P significant digits.
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const COUNT_HEADER: [&str; 6] = [
    "layer_id",
    "kind",
    "num_weights",
    "num_macs",
    "num_input_activations",
    "num_output_activations",
];

pub fn write_counts<W: Write>(out: W, report: &CountReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COUNT_HEADER)?;
    for l in &report.layers {
        let c = &l.counts;
        w.write_record([
            l.id.clone(),
            l.kind.to_string(),
            c.num_weights.to_string(),
            c.num_macs.to_string(),
            c.num_input_activations.to_string(),
            c.num_output_activations.to_string(),
        ])?;
    }
    let t = &report.total;
    w.write_record([
        "TOTAL".to_string(),
        String::new(),
        t.num_weights.to_string(),
        t.num_macs.to_string(),
        t.num_input_activations.to_string(),
        t.num_output_activations.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub const MAPPING_HEADER: [&str; 8] = [
    "layer_id",
    "rows",
    "cols",
    "passes",
    "utilization",
    "input_reads",
    "output_writes",
    "psum_updates",
];

fn write_mapping_rows<W: Write>(w: &mut csv::Writer<W>, rep: &MappingReport) -> Result<()> {
    let (rows, cols) = (rep.array.rows.to_string(), rep.array.cols.to_string());
    for l in &rep.layers {
        w.write_record([
            l.id.clone(),
            rows.clone(),
            cols.clone(),
            l.passes.to_string(),
            sig6(l.utilization),
            l.input_reads.to_string(),
            l.output_writes.to_string(),
            l.psum_updates.to_string(),
        ])?;
    }
    let t = &rep.total;
    w.write_record([
        "TOTAL".to_string(),
        rows,
        cols,
        t.passes.to_string(),
        sig6(t.utilization),
        t.input_reads.to_string(),
        t.output_writes.to_string(),
        t.psum_updates.to_string(),
    ])?;
    Ok(())
}

/// Mapping CSV: one row per weighted layer, then a `TOTAL` row whose
/// utilization is the pass-weighted mean.
pub fn write_mapping<W: Write>(out: W, report: &MappingReport) -> Result<()> {
    write_sweep(
        out,
        &SweepTable {
            rows: vec![report.clone()],
        },
    )
}

pub fn write_sweep<W: Write>(out: W, table: &SweepTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MAPPING_HEADER)?;
    for rep in &table.rows {
        write_mapping_rows(&mut w, rep)?;
    }
    w.flush()?;
    Ok(())
}

pub const EVAL_HEADER: [&str; 5] = [
    "axis_value",
    "accuracy_mean",
    "accuracy_std",
    "trials",
    "master_seed",
];

pub fn write_eval<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_HEADER)?;
    for r in &report.rows {
        w.write_record([
            sig6(r.axis_value),
            sig6(r.accuracy_mean),
            sig6(r.accuracy_std),
            r.trials.to_string(),
            r.master_seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Renders a CSV writer into a string.
pub fn to_string<F>(f: F) -> Result<String>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Plot x on a log2 axis (array sizes).
    pub log_x: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let (w, h) = (640.0, 420.0);
        let (left, right, top, bottom) = (80.0, 20.0, 40.0, 60.0);
        let tx = |x: f64| {
            if self.log_x {
                x.max(f64::MIN_POSITIVE).log2()
            } else {
                x
            }
        };
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in pts {
            x0 = x0.min(tx(x));
            x1 = x1.max(tx(x));
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        y0 = y0.min(0.0);
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        let px = |x: f64| left + (tx(x) - x0) / (x1 - x0) * (w - left - right);
        let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            w / 2.0,
            escape(&self.title)
        );
        // axes
        let _ = writeln!(
            svg,
            r#"<polyline points="{left},{top} {left},{} {},{}" fill="none" stroke="black"/>"#,
            h - bottom,
            w - right,
            h - bottom
        );
        for i in 0..=4 {
            let yv = y0 + (y1 - y0) * i as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                left - 6.0,
                py(yv) + 4.0,
                sig6(yv)
            );
        }
        let mut xs: Vec<f64> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        for x in xs {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                px(x),
                h - bottom + 18.0,
                sig6(x)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + (w - left - right) / 2.0,
            h - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let points: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                points.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                w - right - 150.0,
                top + 16.0 * (i as f64 + 1.0),
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Latency, input-read and utilization charts over array size (square side
/// or row count on the x axis).
pub fn sweep_charts(table: &SweepTable) -> Vec<(&'static str, Chart)> {
    let name = table
        .rows
        .first()
        .map(|r| r.network.clone())
        .unwrap_or_default();
    let series = |f: &dyn Fn(&MappingReport) -> f64| {
        vec![Series {
            label: name.clone(),
            points: table
                .rows
                .iter()
                .map(|r| (r.array.rows as f64, f(r)))
                .collect(),
        }]
    };
    let chart = |title: &str, y: &str, s| Chart {
        title: title.into(),
        x_label: "array rows".into(),
        y_label: y.into(),
        log_x: true,
        series: s,
    };
    vec![
        (
            "latency",
            chart(
                "Estimated latency",
                "passes",
                series(&|r| r.total.passes as f64),
            ),
        ),
        (
            "reads",
            chart(
                "Input activation reads",
                "reads",
                series(&|r| r.total.input_reads as f64),
            ),
        ),
        (
            "utilization",
            chart(
                "Mean array utilization",
                "utilization",
                series(&|r| r.total.utilization),
            ),
        ),
    ]
}

pub fn eval_chart(title: &str, x_label: &str, label: &str, report: &EvalReport) -> Chart {
    Chart {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "accuracy".into(),
        log_x: false,
        series: vec![Series {
            label: label.into(),
            points: report
                .rows
                .iter()
                .map(|r| (r.axis_value, r.accuracy_mean))
                .collect(),
        }],
    }
}
