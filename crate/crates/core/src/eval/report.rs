use std::fmt::Write;

use super::metrics::MetricsReport;
use crate::error::{Error, Result};

pub const METRICS_CSV_HEADER: &str = "technique,horizon_min,mae,rmse,mape,n";

pub fn metrics_csv(reports: &[MetricsReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_CSV_HEADER.split(','))
        .map_err(|e| Error::Io(e.into()))?;
    for r in reports {
        for row in &r.rows {
            let m = &row.metrics;
            w.write_record([
                r.technique.clone(),
                row.horizon_min.to_string(),
                format!("{:.6}", m.mae),
                format!("{:.6}", m.rmse),
                format!("{:.6}", m.mape),
                m.n.to_string(),
            ])
            .map_err(|e| Error::Io(e.into()))?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mae,
    Rmse,
    Mape,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mae, Metric::Rmse, Metric::Mape];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Mape => "mape",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Mae => "MAE (mph)",
            Metric::Rmse => "RMSE (mph)",
            Metric::Mape => "MAPE (%)",
        }
    }

    fn pick(self, m: &super::Metrics) -> f64 {
        match self {
            Metric::Mae => m.mae,
            Metric::Rmse => m.rmse,
            Metric::Mape => m.mape,
        }
    }
}

const PALETTE: [&str; 6] = ["#1f4e9c", "#e07b00", "#2a8a3a", "#8e3bb0", "#c0392b", "#4aa3c9"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG line chart of one metric against horizon, one line per technique.
pub fn metric_chart_svg(reports: &[MetricsReport], metric: Metric) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 170.0, 30.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let hmax = reports
        .iter()
        .flat_map(|r| &r.rows)
        .map(|r| r.horizon_min)
        .max()
        .unwrap_or(60)
        .max(5) as f64;
    let vmax = reports
        .iter()
        .flat_map(|r| &r.rows)
        .map(|r| metric.pick(&r.metrics))
        .fold(0.0f64, f64::max);
    let vmax = if vmax > 0.0 { vmax * 1.1 } else { 1.0 };
    let x = |m: f64| left + pw * m / hmax;
    let y = |v: f64| top + ph * (1.0 - v / vmax);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    for i in 0..=5 {
        let v = vmax * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{4:.2}</text>"##,
            y(v),
            left + pw,
            left - 6.0,
            y(v) + 4.0,
            v
        );
    }
    let mut ticks: Vec<u32> = reports.iter().flat_map(|r| &r.rows).map(|r| r.horizon_min).collect();
    ticks.sort_unstable();
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#,
            x(t as f64),
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Horizon (min)</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        metric.label()
    );
    for (k, r) in reports.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = r
            .rows
            .iter()
            .map(|row| format!("{:.1},{:.1}", x(row.horizon_min as f64), y(metric.pick(&row.metrics))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (px, py) = p.split_once(',').expect("formatted point");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
        }
        let ly = top + 10.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{ly:.1}" x2="{1:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{2:.1}" y="{3:.1}">{4}</text>"#,
            left + pw + 15.0,
            left + pw + 35.0,
            left + pw + 40.0,
            ly + 4.0,
            escape(&r.technique)
        );
    }
    s.push_str("</svg>\n");
    s
}
