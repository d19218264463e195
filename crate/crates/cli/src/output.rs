use std::fmt::Write as _;
use std::io;
use std::path::Path;

use soco::sim::{ExperimentRun, RegretRecord};

/// Shortest exact-enough rendering: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn record_row(r: &RegretRecord) -> [String; 8] {
    [
        r.t.to_string(),
        fmt_f64(r.inst_risk),
        fmt_f64(r.cum_risk),
        fmt_f64(r.comparator_cum_risk),
        fmt_f64(r.regret),
        fmt_f64(r.theorem_bound_value),
        r.clip_events.to_string(),
        r.weights_snapshot
            .as_ref()
            .map(|w| w.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";"))
            .unwrap_or_default(),
    ]
}

pub fn write_records(path: &Path, records: &[RegretRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RegretRecord::FIELDS)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    w.flush()
}

pub fn write_summary(path: &Path, runs: &[ExperimentRun]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "terminal_regret", "bound_value", "exceeded"])?;
    for run in runs {
        let (regret, bound) = (run.terminal_regret(), run.terminal_bound());
        w.write_record([run.seed.to_string(), fmt_f64(regret), fmt_f64(bound), (regret > bound).to_string()])?;
    }
    w.flush()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median regret with its 10%-90% band across seeds, against `log10 t`.
pub fn regret_svg(runs: &[ExperimentRun]) -> String {
    let (w, h, pad) = (720.0, 420.0, 60.0);
    let horizon = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
    let mut ts: Vec<usize> = (0..=300)
        .map(|i| (10f64.powf(i as f64 / 300.0 * (horizon.max(1) as f64).log10())).round() as usize)
        .filter(|&t| t >= 1 && t <= horizon)
        .collect();
    ts.dedup();
    let bands: Vec<(f64, f64, f64, f64)> = ts
        .iter()
        .map(|&t| {
            let mut v: Vec<f64> = runs.iter().map(|r| r.records[t - 1].regret).collect();
            v.sort_by(f64::total_cmp);
            ((t as f64).log10(), quantile(&v, 0.1), quantile(&v, 0.5), quantile(&v, 0.9))
        })
        .collect();

    let x_max = (horizon.max(10) as f64).log10();
    let (mut y_min, mut y_max) = bands.iter().fold((0.0f64, 0.0f64), |(lo, hi), b| (lo.min(b.1), hi.max(b.3)));
    if y_max - y_min < 1e-12 {
        y_max += 1.0;
        y_min -= 1.0;
    }
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y_min) / (y_max - y_min) * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {top} V{bottom} H{right}" stroke="black" fill="none"/>"#,
        top = pad,
        bottom = h - pad,
        right = w - pad
    );
    for k in 0..=(x_max.floor() as i32) {
        let x = sx(k as f64);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-size="12" text-anchor="middle">1e{k}</text>"#,
            h - pad + 18.0
        );
    }
    for (label, y) in [(y_min, sy(y_min)), (y_max, sy(y_max))] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" font-size="12" text-anchor="end">{label:.3}</text>"#,
            pad - 6.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">t (log scale)</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.1}" font-size="13" transform="rotate(-90 15 {:.1})" text-anchor="middle">regret</text>"#,
        h / 2.0,
        h / 2.0
    );

    if !bands.is_empty() {
        let upper: Vec<String> = bands.iter().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.3))).collect();
        let lower: Vec<String> = bands.iter().rev().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.1))).collect();
        let _ = writeln!(
            svg,
            r##"<polygon points="{} {}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##,
            upper.join(" "),
            lower.join(" ")
        );
        let median: Vec<String> = bands.iter().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.2))).collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
            median.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}
