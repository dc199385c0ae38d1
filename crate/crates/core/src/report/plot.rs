use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{CurvePoint, RateKind, Subgroup};

const PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
    "#7f7f7f", "#bcbd22", "#393b79", "#637939",
];
const DASHES: [&str; 3] = ["", "6 3", "2 3"];

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 80.0;
const LEGEND_ROW: f64 = 18.0;

/// Smallest of 1, 2 or 5 times a power of ten that is at least `v`.
fn nice_ceiling(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|&c| c >= v * (1.0 - 1e-12))
        .unwrap_or(10.0 * mag)
        .min(1.0)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Series<'a> {
    subgroup: Subgroup,
    points: Vec<&'a CurvePoint>,
}

fn group(curve: &[CurvePoint]) -> Vec<Series<'_>> {
    let mut out: Vec<Series> = Vec::new();
    for p in curve {
        match out.iter_mut().find(|s| s.subgroup == p.subgroup) {
            Some(s) => s.points.push(p),
            None => out.push(Series {
                subgroup: p.subgroup,
                points: vec![p],
            }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.normalized_level.total_cmp(&b.normalized_level));
    }
    out
}

fn panel(svg: &mut String, series: &[Series], kind: RateKind, x0: f64) {
    let ymax = nice_ceiling(
        series
            .iter()
            .flat_map(|s| &s.points)
            .filter_map(|p| p.estimate(kind))
            .map(|e| e.hi)
            .fold(0.0, f64::max),
    );
    let px = |x: f64| x0 + (x + 1.0) / 2.0 * PANEL_W;
    let py = |y: f64| MARGIN_T + PANEL_H - y / ymax * PANEL_H;

    let _ = writeln!(
        svg,
        r##"<rect x="{x0}" y="{MARGIN_T}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=4 {
        let x = -1.0 + 0.5 * i as f64;
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{x}</text>"##,
            px(x),
            MARGIN_T + PANEL_H + 16.0
        );
        let y = ymax * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{x0}" y2="{:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
            x0 - 4.0,
            py(y),
            py(y),
            x0 - 6.0,
            py(y) + 4.0,
            (y * 1e6).round() / 1e6
        );
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{0:.1}" y1="{MARGIN_T}" x2="{0:.1}" y2="{1:.1}" stroke="#555" stroke-dasharray="5 4"/>"##,
        px(0.0),
        MARGIN_T + PANEL_H
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"##,
        x0 + PANEL_W / 2.0,
        MARGIN_T - 10.0,
        kind.name().to_uppercase()
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">normalized level</text>"##,
        x0 + PANEL_W / 2.0,
        MARGIN_T + PANEL_H + 34.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = DASHES[(i / PALETTE.len()) % DASHES.len()];
        let defined: Vec<(f64, f64, f64, f64)> = s
            .points
            .iter()
            .filter_map(|p| p.estimate(kind).map(|e| (p.normalized_level, e.mean, e.lo, e.hi)))
            .collect();
        let _ = writeln!(svg, r#"<g class="series" data-subgroup="{}">"#, escape(&s.subgroup.to_string()));
        if defined.len() > 1 {
            let pts: Vec<String> = defined
                .iter()
                .map(|&(x, y, _, _)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="{dash}"/>"#,
                pts.join(" ")
            );
        }
        for &(x, y, lo, hi) in &defined {
            let (cx, cy) = (px(x), py(y));
            let _ = writeln!(
                svg,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
                py(lo),
                py(hi),
                cx - 3.0,
                py(lo),
                cx + 3.0,
                py(lo),
                cx - 3.0,
                py(hi),
                cx + 3.0,
                py(hi)
            );
            let _ = writeln!(svg, r#"<circle class="marker" cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{color}"/>"#);
        }
        svg.push_str("</g>\n");
    }
}

/// Renders FPR and FNR panels side by side, one series per subgroup, with
/// interval bars and a dashed rule at the baseline. Undefined points are left
/// out and counted in the legend.
pub fn render_plot(curve: &[CurvePoint]) -> Result<String> {
    if curve.is_empty() {
        return Err(Error::usage("cannot plot an empty curve"));
    }
    let series = group(curve);
    let width = MARGIN_L + 2.0 * PANEL_W + GAP + 20.0;
    let legend_top = MARGIN_T + PANEL_H + 56.0;
    let height = legend_top + LEGEND_ROW * series.len() as f64 + 10.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let title = curve[0].factor.name();
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="16" font-size="15" text-anchor="middle">{title}</text>"#,
        width / 2.0
    );
    panel(&mut svg, &series, RateKind::Fpr, MARGIN_L);
    panel(&mut svg, &series, RateKind::Fnr, MARGIN_L + PANEL_W + GAP);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = legend_top + LEGEND_ROW * i as f64;
        let missing: Vec<String> = [RateKind::Fpr, RateKind::Fnr]
            .into_iter()
            .filter_map(|k| {
                let n = s.points.iter().filter(|p| p.estimate(k).is_none()).count();
                (n > 0).then(|| format!("{n} {} point{} undefined", k.name().to_uppercase(), if n == 1 { "" } else { "s" }))
            })
            .collect();
        let note = if missing.is_empty() {
            String::new()
        } else {
            format!(" ({}, omitted)", missing.join("; "))
        };
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN_L}" y="{:.1}" width="12" height="12" fill="{color}"/><text class="legend" x="{:.1}" y="{:.1}" font-size="12">{}{}</text>"#,
            y - 10.0,
            MARGIN_L + 18.0,
            y,
            escape(&s.subgroup.to_string()),
            note
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(curve: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let svg = render_plot(curve)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
