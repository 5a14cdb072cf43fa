//! Minimal self-contained SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::harness::metrics::MetricsRow;
use crate::market::SimConfig;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub values: Vec<f64>,
    /// Drawn thin and translucent; used for unsmoothed values.
    pub faint: bool,
}

fn bounds(series: &[Series<'_>], extra: &[f64]) -> (f64, f64) {
    let all = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .chain(extra.iter().copied())
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders `series` against their index. `guides` are horizontal reference
/// lines drawn dashed.
pub fn line_chart(title: &str, x_label: &str, series: &[Series<'_>], guides: &[(&str, f64)]) -> String {
    let len = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let (lo, hi) = bounds(series, &guides.iter().map(|g| g.1).collect::<Vec<_>>());
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let x = |i: usize| MARGIN + pw * i as f64 / (len - 1) as f64;
    let y = |v: f64| MARGIN + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            MARGIN - 6.0,
            y(v) + 4.0
        );
        let i = (len - 1) * k / 4;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{i}</text>"#,
            x(i),
            HEIGHT - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    for (name, v) in guides {
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="#888" stroke-dasharray="5,4"/><text x="{}" y="{:.1}" fill="#666">{name}</text>"##,
            WIDTH - MARGIN,
            y(*v),
            y(*v),
            WIDTH - MARGIN - 60.0,
            y(*v) - 4.0
        );
    }
    let mut legend = 0;
    for ser in series {
        let pts: Vec<String> = ser
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v)))
            .collect();
        let (width, opacity) = if ser.faint { (0.8, 0.3) } else { (1.8, 1.0) };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="{width}" stroke-opacity="{opacity}" points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
        if !ser.faint {
            let ly = MARGIN + 14.0 + 16.0 * legend as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                MARGIN + 10.0,
                MARGIN + 30.0,
                ser.color,
                MARGIN + 36.0,
                ly + 4.0,
                ser.name
            );
            legend += 1;
        }
    }
    s.push_str("</svg>\n");
    s
}

fn col(rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

/// Profit and price charts of one seed's metrics.
pub fn write_run_plots(dir: &Path, rows: &[MetricsRow], sim: &SimConfig) -> Result<()> {
    let profits = line_chart(
        "End-of-episode profit",
        "epoch",
        &[
            Series { name: "U raw", color: "#1f77b4", values: col(rows, |r| r.profit_u), faint: true },
            Series { name: "L raw", color: "#d62728", values: col(rows, |r| r.profit_l), faint: true },
            Series { name: "U (EMA)", color: "#1f77b4", values: col(rows, |r| r.profit_u_ema), faint: false },
            Series { name: "L (EMA)", color: "#d62728", values: col(rows, |r| r.profit_l_ema), faint: false },
        ],
        &[],
    );
    fs::write(dir.join("profits.svg"), profits)?;

    type Pick = fn(&MetricsRow) -> f64;
    let platforms: [(&str, Pick, Pick, Pick, Pick); 2] = [
        ("u", |r| r.mean_r_u, |r| r.mean_c_u, |r| r.mean_r_u_ema, |r| r.mean_c_u_ema),
        ("l", |r| r.mean_r_l, |r| r.mean_c_l, |r| r.mean_r_l_ema, |r| r.mean_c_l_ema),
    ];
    for (label, rate, comm, rate_ema, comm_ema) in platforms {
        let chart = line_chart(
            &format!("Mean rate and commission, platform {}", label.to_uppercase()),
            "epoch",
            &[
                Series { name: "rate raw", color: "#2ca02c", values: col(rows, rate), faint: true },
                Series { name: "commission raw", color: "#9467bd", values: col(rows, comm), faint: true },
                Series { name: "rate (EMA)", color: "#2ca02c", values: col(rows, rate_ema), faint: false },
                Series { name: "commission (EMA)", color: "#9467bd", values: col(rows, comm_ema), faint: false },
            ],
            &[("gas cost", sim.gas_cost), ("transit", sim.transit_rate)],
        );
        fs::write(dir.join(format!("prices_{label}.svg")), chart)?;
    }
    Ok(())
}
