use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::harness::{MetricRow, MetricsTable};
use crate::error::Result;

/// Figure families; each becomes one SVG with a panel per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    Precision,
    Coherence,
    Coverage,
    Power,
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::Precision, Figure::Coherence, Figure::Coverage, Figure::Power];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Precision => "precision",
            Figure::Coherence => "coherence",
            Figure::Coverage => "coverage",
            Figure::Power => "power",
        }
    }

    fn y_label(self) -> &'static str {
        match self {
            Figure::Precision => "precision gain (RR/CR variance)",
            Figure::Coherence => "coherence gain (RR/CR mean sq. difference)",
            Figure::Coverage => "coverage",
            Figure::Power => "power",
        }
    }

    /// `(series name, dashed)` for a row, or `None` if it is not plotted.
    fn series(self, row: &MetricRow) -> Option<(String, bool)> {
        match (self, row.metric.as_str()) {
            (Figure::Precision, "precision_gain") | (Figure::Coherence, "coherence_gain") => Some((row.estimator.clone(), false)),
            (Figure::Precision, "precision_target") | (Figure::Coherence, "coherence_target") => {
                Some((format!("{} (asymptotic)", row.estimator), true))
            }
            (Figure::Coverage, "coverage") | (Figure::Power, "power") => Some((format!("{} {}", row.estimator, row.design), false)),
            _ => None,
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Figure::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| format!("unknown figure family '{s}'"))
    }
}

const HEADER: [&str; 8] = ["setting", "n", "scenario", "design", "estimator", "metric", "value", "note"];

/// Tidy CSV, one row per metric cell; undefined values are written as `NA`.
pub fn write_csv<W: Write>(table: &MetricsTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in &table.rows {
        let value = r.value.map_or_else(|| "NA".to_string(), |v| v.to_string());
        w.write_record([&r.setting, &r.n.to_string(), &r.scenario.to_string(), &r.design, &r.estimator, &r.metric, &value, &r.note])?;
    }
    w.flush()?;
    Ok(())
}

type Panel = BTreeMap<(String, bool), Vec<(f64, f64)>>;

fn collect(table: &MetricsTable, fig: Figure) -> BTreeMap<u8, Panel> {
    let mut panels: BTreeMap<u8, Panel> = BTreeMap::new();
    for r in &table.rows {
        if let (Some(key), Some(v)) = (fig.series(r), r.value) {
            panels.entry(r.scenario).or_default().entry(key).or_default().push((r.n as f64, v));
        }
    }
    for panel in panels.values_mut() {
        for pts in panel.values_mut() {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
    panels
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];
const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 50.0;

fn render(fig: Figure, setting: &str, panels: &BTreeMap<u8, Panel>) -> String {
    let all = || panels.values().flat_map(|p| p.values().flatten());
    let (mut x0, mut x1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (mut y0, mut y1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if x1 - x0 < 1e-9 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    if y1 - y0 < 1e-9 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let mut names: Vec<&String> = panels.values().flat_map(|p| p.keys().map(|k| &k.0)).collect();
    names.sort();
    names.dedup();
    let colour = |name: &str| {
        let base = name.trim_end_matches(" (asymptotic)");
        let i = names.iter().position(|n| n.as_str() == base).unwrap_or(0);
        PALETTE[i % PALETTE.len()]
    };

    let width = MARGIN + panels.len() as f64 * (PANEL_W + MARGIN);
    let legend_h = 16.0 * names.len() as f64;
    let height = PANEL_H + 2.0 * MARGIN + legend_h + 20.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="18" font-size="13">{} ({setting})</text>"#, fig.name());
    for (p, (scenario, panel)) in panels.iter().enumerate() {
        let left = MARGIN + p as f64 * (PANEL_W + MARGIN);
        let top = MARGIN;
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * PANEL_W;
        let sy = |y: f64| top + PANEL_H - (y - y0) / (y1 - y0) * PANEL_H;
        let _ = writeln!(s, r#"<g class="panel" data-scenario="{scenario}">"#);
        let _ = writeln!(s, r#"<rect x="{left:.1}" y="{top:.1}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Scenario {scenario}</text>"#, left + PANEL_W / 2.0, top - 6.0);
        for t in 0..=4 {
            let yv = y0 + (y1 - y0) * t as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, left - 4.0, sy(yv) + 4.0);
            let xv = x0 + (x1 - x0) * t as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.0}</text>"#, sx(xv), top + PANEL_H + 14.0);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n</text>"#, left + PANEL_W / 2.0, top + PANEL_H + 30.0);
        for ((name, dashed), pts) in panel {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline data-series="{name}" fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                colour(name),
                coords.join(" ")
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        MARGIN + PANEL_H / 2.0,
        MARGIN + PANEL_H / 2.0,
        fig.y_label()
    );
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + PANEL_H + 50.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"/>"#, MARGIN + 20.0, colour(name));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{name}</text>"#, MARGIN + 26.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `metrics.csv` and one `<family>.svg` per requested family that has
/// data. Returns the paths written.
pub fn emit_report(table: &MetricsTable, out_dir: &Path, figures: &[Figure]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("metrics.csv");
    write_csv(table, std::fs::File::create(&csv_path)?)?;
    let mut written = vec![csv_path];
    let setting = table.rows.first().map_or("", |r| r.setting.as_str());
    for &fig in figures {
        let panels = collect(table, fig);
        if panels.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{}.svg", fig.name()));
        std::fs::write(&path, render(fig, setting, &panels))?;
        written.push(path);
    }
    Ok(written)
}
