//! Static SVG line plots from a `run.csv`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const PANEL: f64 = 300.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::config("empty csv"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config(format!("csv line {}: {e}", k + 2)))?;
            if row.len() != header.len() {
                return Err(Error::config(format!("csv line {} has {} fields", k + 2, row.len())));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn is_state(name: &str) -> bool {
    let base = name.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    let stem = &name[..name.len() - base.len()];
    matches!(stem, "truth" | "est" | "kalman" | "grid")
        && !name.ends_with("_vel")
        && !name.ends_with("_var")
        && (name.ends_with("_pos") || !name.contains('_') || name.ends_with("_x1"))
}

fn is_probability(name: &str) -> bool {
    name.starts_with("beta_") || name.starts_with("pi_") || name.starts_with("wonham_")
}

struct Panel<'a> {
    top: f64,
    x: (f64, f64),
    y: (f64, f64),
    out: &'a mut String,
}

impl Panel<'_> {
    fn px(&self, t: f64) -> f64 {
        MARGIN + (t - self.x.0) / (self.x.1 - self.x.0).max(f64::MIN_POSITIVE) * (WIDTH - 2.0 * MARGIN)
    }
    fn py(&self, v: f64) -> f64 {
        self.top + PANEL - (v - self.y.0) / (self.y.1 - self.y.0).max(f64::MIN_POSITIVE) * PANEL
    }

    fn frame(&mut self, title: &str) {
        let (l, r) = (MARGIN, WIDTH - MARGIN);
        let (t, b) = (self.top, self.top + PANEL);
        let _ = writeln!(
            self.out,
            r#"<rect x="{l}" y="{t}" width="{}" height="{PANEL}" fill="none" stroke="black"/>"#,
            r - l
        );
        let _ = writeln!(
            self.out,
            r#"<text x="{l}" y="{}" font-size="13">{title}</text>"#,
            t - 6.0
        );
        for (v, y) in [(self.y.0, b), (self.y.1, t)] {
            let _ = writeln!(
                self.out,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{v:.3}</text>"#,
                l - 4.0,
                y + 4.0
            );
        }
        for (v, x) in [(self.x.0, l), (self.x.1, r)] {
            let _ = writeln!(
                self.out,
                r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{v:.3}</text>"#,
                b + 14.0
            );
        }
    }

    fn line(&mut self, t: &[f64], v: &[f64], color: &str, dashed: bool) {
        let pts: Vec<String> = t
            .iter()
            .zip(v)
            .filter(|(_, y)| y.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", self.px(a), self.py(b)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            self.out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            pts.join(" ")
        );
    }

    fn dots(&mut self, t: &[f64], v: &[f64], color: &str) {
        for (&a, &b) in t.iter().zip(v) {
            if b.is_finite() && b >= self.y.0 && b <= self.y.1 {
                let _ = writeln!(
                    self.out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{color}" fill-opacity="0.4"/>"#,
                    self.px(a),
                    self.py(b)
                );
            }
        }
    }

    fn legend(&mut self, names: &[(String, &str)]) {
        for (k, (name, color)) in names.iter().enumerate() {
            let y = self.top + 14.0 + 14.0 * k as f64;
            let x = WIDTH - MARGIN + 6.0;
            let _ = writeln!(
                self.out,
                r#"<text x="{x}" y="{y}" font-size="10" fill="{color}">{name}</text>"#
            );
        }
    }
}

fn range(series: &[Vec<f64>]) -> (f64, f64) {
    let (lo, hi) = series
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-9);
    (lo - pad, hi + pad)
}

/// Renders the state panel (trajectories solid, truth dashed, measurements
/// as dots) and, when present, the association-probability panel.
pub fn render_svg(table: &Table) -> Result<String> {
    let time = table
        .column("time")
        .ok_or_else(|| Error::config("csv has no time column"))?;
    let state: Vec<&String> = table.header.iter().filter(|h| is_state(h)).collect();
    let meas: Vec<&String> = table.header.iter().filter(|h| h.starts_with("meas_")).collect();
    let probs: Vec<&String> = table.header.iter().filter(|h| is_probability(h)).collect();
    let panels = if probs.is_empty() { 1.0 } else { 2.0 };
    let height = panels * (PANEL + MARGIN) + MARGIN;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" viewBox="0 0 {} {height}">"#,
        WIDTH + 80.0,
        WIDTH + 80.0
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let x = (
        time.first().copied().unwrap_or(0.0),
        time.last().copied().unwrap_or(1.0),
    );

    let state_series: Vec<Vec<f64>> = state.iter().filter_map(|h| table.column(h)).collect();
    let mut panel = Panel {
        top: MARGIN,
        x,
        y: range(&state_series),
        out: &mut out,
    };
    panel.frame("state");
    for m in &meas {
        if let Some(v) = table.column(m) {
            panel.dots(&time, &v, "#7f7f7f");
        }
    }
    let mut legend = Vec::new();
    for (k, (name, v)) in state.iter().zip(&state_series).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        panel.line(&time, v, color, name.starts_with("truth"));
        legend.push(((*name).clone(), color));
    }
    panel.legend(&legend);

    if !probs.is_empty() {
        let mut panel = Panel {
            top: 2.0 * MARGIN + PANEL,
            x,
            y: (0.0, 1.0),
            out: &mut out,
        };
        panel.frame("association probability");
        let mut legend = Vec::new();
        for (k, name) in probs.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            if let Some(v) = table.column(name) {
                panel.line(&time, &v, color, name.starts_with("wonham"));
            }
            legend.push(((*name).clone(), color));
        }
        panel.legend(&legend);
    }
    out.push_str("</svg>\n");
    Ok(out)
}
