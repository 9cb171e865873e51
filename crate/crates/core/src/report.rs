//! Static report bundle: every figure is an SVG next to the CSV it was
//! drawn from.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::features::{sig9, FEATURE_NAMES};
use crate::migration::MigrationMatrix;
use crate::space::DensityMap;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct StudentPoint {
    pub student_id: String,
    pub cluster: String,
    pub pc1: f64,
    pub pc2: f64,
    pub career: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportInputs {
    /// Cluster names in cluster-index order.
    pub labels: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub students: Vec<StudentPoint>,
    pub densities: Vec<DensityMap>,
    pub notices: Vec<String>,
    pub matrix: MigrationMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionRow {
    pub label: String,
    pub count: usize,
    pub share: f64,
}

pub fn composition(inputs: &ReportInputs) -> Vec<CompositionRow> {
    let mut counts: BTreeMap<&str, usize> = inputs.labels.iter().map(|l| (l.as_str(), 0)).collect();
    for s in &inputs.students {
        *counts.entry(s.cluster.as_str()).or_default() += 1;
    }
    let total = inputs.students.len().max(1) as f64;
    let mut rows: Vec<CompositionRow> = inputs
        .labels
        .iter()
        .map(|l| CompositionRow {
            label: l.clone(),
            count: counts[l.as_str()],
            share: counts[l.as_str()] as f64 / total,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.label.cmp(&b.label)));
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareRow {
    pub career: String,
    pub cluster: String,
    pub count: usize,
    pub share: f64,
}

/// Cluster composition of each career; shares within a career sum to one.
pub fn program_shares(inputs: &ReportInputs) -> Vec<ShareRow> {
    let mut by_career: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for s in &inputs.students {
        if let Some(c) = &s.career {
            *by_career
                .entry(c.as_str())
                .or_default()
                .entry(s.cluster.as_str())
                .or_default() += 1;
        }
    }
    let mut rows = Vec::new();
    for (career, counts) in by_career {
        let total: usize = counts.values().sum();
        for label in &inputs.labels {
            let n = counts.get(label.as_str()).copied().unwrap_or(0);
            rows.push(ShareRow {
                career: career.to_string(),
                cluster: label.clone(),
                count: n,
                share: n as f64 / total as f64,
            });
        }
    }
    rows
}

fn color_of(labels: &[String], label: &str) -> &'static str {
    let i = labels.iter().position(|l| l == label).unwrap_or(0);
    PALETTE[i % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}" fill-opacity="0.6"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{}</text>"#,
            esc(s)
        );
    }

    fn finish(self, title: &str, stamp: Option<u64>) -> Vec<u8> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(out, "<title>{}</title>", esc(title));
        if let Some(t) = stamp {
            let _ = writeln!(out, "<!-- generated at unix time {t} -->");
        }
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out.into_bytes()
    }
}

/// White to dark blue.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(255.0, 8.0),
        lerp(255.0, 48.0),
        lerp(255.0, 107.0)
    )
}

fn csv_bytes<F>(f: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let _ = f(&mut w);
        let _ = w.flush();
    }
    buf
}

fn composition_files(inputs: &ReportInputs, stamp: Option<u64>) -> [(String, Vec<u8>); 2] {
    let rows = composition(inputs);
    let csv = csv_bytes(|w| {
        w.write_record(["cluster", "students", "share"])?;
        for r in &rows {
            w.write_record([r.label.clone(), r.count.to_string(), sig9(r.share)])?;
        }
        Ok(())
    });
    let bar_h = 28.0;
    let left = 130.0;
    let width = 420.0;
    let mut svg = Svg::new(left + width + 120.0, 40.0 + bar_h * rows.len() as f64 + 20.0);
    svg.text(10.0, 22.0, 14.0, "start", "Cluster composition");
    let max = rows.iter().map(|r| r.count).max().unwrap_or(1).max(1) as f64;
    for (i, r) in rows.iter().enumerate() {
        let y = 40.0 + bar_h * i as f64;
        svg.text(left - 8.0, y + bar_h * 0.65, 12.0, "end", &r.label);
        svg.rect(
            left,
            y + 4.0,
            width * r.count as f64 / max,
            bar_h - 8.0,
            color_of(&inputs.labels, &r.label),
        );
        svg.text(
            left + width * r.count as f64 / max + 6.0,
            y + bar_h * 0.65,
            11.0,
            "start",
            &format!("{} ({:.1}%)", r.count, 100.0 * r.share),
        );
    }
    [
        ("composition.csv".into(), csv),
        ("composition.svg".into(), svg.finish("Cluster composition", stamp)),
    ]
}

fn centroid_files(inputs: &ReportInputs, stamp: Option<u64>) -> [(String, Vec<u8>); 2] {
    let csv = csv_bytes(|w| {
        let mut header = vec!["cluster".to_string()];
        header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (label, c) in inputs.labels.iter().zip(&inputs.centroids) {
            let mut rec = vec![label.clone()];
            rec.extend(c.iter().map(|v| sig9(*v)));
            w.write_record(&rec)?;
        }
        Ok(())
    });
    let cell_w = 90.0;
    let cell_h = 26.0;
    let left = 130.0;
    let top = 110.0;
    let mut svg = Svg::new(
        left + cell_w * FEATURE_NAMES.len() as f64 + 20.0,
        top + cell_h * inputs.labels.len() as f64 + 20.0,
    );
    svg.text(10.0, 22.0, 14.0, "start", "Cluster centroids");
    for (j, name) in FEATURE_NAMES.iter().enumerate() {
        let x = left + cell_w * (j as f64 + 0.5);
        let _ = writeln!(
            svg.body,
            r#"<text x="{x:.2}" y="{:.2}" font-size="11" font-family="sans-serif" transform="rotate(-35 {x:.2} {:.2})">{}</text>"#,
            top - 8.0,
            top - 8.0,
            esc(name)
        );
    }
    for (i, (label, c)) in inputs.labels.iter().zip(&inputs.centroids).enumerate() {
        let y = top + cell_h * i as f64;
        svg.text(left - 8.0, y + cell_h * 0.65, 12.0, "end", label);
        for (j, v) in c.iter().enumerate() {
            let x = left + cell_w * j as f64;
            svg.rect(x, y, cell_w - 2.0, cell_h - 2.0, &ramp(*v));
            svg.text(x + cell_w / 2.0, y + cell_h * 0.65, 11.0, "middle", &format!("{v:.2}"));
        }
    }
    [
        ("centroids.csv".into(), csv),
        ("centroids.svg".into(), svg.finish("Cluster centroids", stamp)),
    ]
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    left: f64,
    top: f64,
    size: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0).max(f64::MIN_POSITIVE) * self.size
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.size - (y - self.y.0) / (self.y.1 - self.y.0).max(f64::MIN_POSITIVE) * self.size
    }
}

fn scatter_files(inputs: &ReportInputs, sample: &[usize], stamp: Option<u64>) -> [(String, Vec<u8>); 2] {
    let csv = csv_bytes(|w| {
        w.write_record(["student_id", "pc1", "pc2", "cluster_label"])?;
        for &i in sample {
            let s = &inputs.students[i];
            w.write_record([s.student_id.clone(), sig9(s.pc1), sig9(s.pc2), s.cluster.clone()])?;
        }
        Ok(())
    });
    let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
    for &i in sample {
        let s = &inputs.students[i];
        x = (x.0.min(s.pc1), x.1.max(s.pc1));
        y = (y.0.min(s.pc2), y.1.max(s.pc2));
    }
    if sample.is_empty() {
        x = (0.0, 1.0);
        y = (0.0, 1.0);
    }
    let frame = Frame {
        x,
        y,
        left: 50.0,
        top: 40.0,
        size: 500.0,
    };
    let mut svg = Svg::new(720.0, 600.0);
    svg.text(10.0, 22.0, 14.0, "start", "Educational space");
    let _ = writeln!(
        svg.body,
        r##"<rect x="50" y="40" width="500" height="500" fill="none" stroke="#444"/>"##
    );
    for &i in sample {
        let s = &inputs.students[i];
        svg.circle(
            frame.px(s.pc1),
            frame.py(s.pc2),
            1.6,
            color_of(&inputs.labels, &s.cluster),
        );
    }
    svg.text(300.0, 570.0, 12.0, "middle", "PC1 (academic performance)");
    let _ = writeln!(
        svg.body,
        r#"<text x="20" y="290" font-size="12" font-family="sans-serif" text-anchor="middle" transform="rotate(-90 20 290)">PC2 (socioeconomic background)</text>"#
    );
    for (i, l) in inputs.labels.iter().enumerate() {
        let y = 50.0 + 18.0 * i as f64;
        svg.rect(565.0, y, 10.0, 10.0, color_of(&inputs.labels, l));
        svg.text(580.0, y + 9.0, 11.0, "start", l);
    }
    [
        ("scatter.csv".into(), csv),
        ("scatter.svg".into(), svg.finish("Educational space", stamp)),
    ]
}

fn density_files(inputs: &ReportInputs, stamp: Option<u64>) -> [(String, Vec<u8>); 2] {
    let vmax = inputs.densities.iter().map(DensityMap::max).fold(0.0, f64::max);
    let csv = csv_bytes(|w| {
        w.write_record(["career", "students", "bandwidth_x", "bandwidth_y", "max_density"])?;
        for d in &inputs.densities {
            w.write_record([
                d.label.clone(),
                d.n_points.to_string(),
                sig9(d.bandwidth.0),
                sig9(d.bandwidth.1),
                sig9(d.max()),
            ])?;
        }
        Ok(())
    });
    let cols = 4usize;
    let panel = 180.0;
    let gap = 30.0;
    let rows = inputs.densities.len().div_ceil(cols).max(1);
    let notice_h = 16.0 * inputs.notices.len() as f64;
    let mut svg = Svg::new(
        gap + cols as f64 * (panel + gap),
        50.0 + rows as f64 * (panel + gap + 10.0) + notice_h + 10.0,
    );
    svg.text(
        10.0,
        22.0,
        14.0,
        "start",
        "Career density in the educational space (shared scale)",
    );
    // coarse cells keep the file small; the full grid is in the per-career CSV
    let step = 4usize;
    for (p, d) in inputs.densities.iter().enumerate() {
        let left = gap + (p % cols) as f64 * (panel + gap);
        let top = 50.0 + (p / cols) as f64 * (panel + gap + 10.0);
        svg.text(
            left + panel / 2.0,
            top - 4.0,
            11.0,
            "middle",
            &format!("{} (n={})", d.label, d.n_points),
        );
        let g = d.grid_size;
        let cells = g.div_ceil(step);
        let cw = panel / cells as f64;
        for by in 0..cells {
            for bx in 0..cells {
                let mut acc = 0.0;
                let mut m = 0usize;
                for iy in by * step..((by + 1) * step).min(g) {
                    for ix in bx * step..((bx + 1) * step).min(g) {
                        acc += d.cell(ix, iy);
                        m += 1;
                    }
                }
                let v = acc / m as f64;
                if v <= 0.0 || vmax <= 0.0 {
                    continue;
                }
                svg.rect(
                    left + bx as f64 * cw,
                    top + panel - (by + 1) as f64 * cw,
                    cw + 0.05,
                    cw + 0.05,
                    &ramp(v / vmax),
                );
            }
        }
        let _ = writeln!(
            svg.body,
            r##"<rect x="{left:.2}" y="{top:.2}" width="{panel}" height="{panel}" fill="none" stroke="#444"/>"##
        );
    }
    let base = 50.0 + rows as f64 * (panel + gap + 10.0);
    for (i, n) in inputs.notices.iter().enumerate() {
        svg.text(10.0, base + 16.0 * i as f64, 11.0, "start", n);
    }
    [
        ("densities.csv".into(), csv),
        ("densities.svg".into(), svg.finish("Career densities", stamp)),
    ]
}

fn share_files(inputs: &ReportInputs, stamp: Option<u64>) -> [(String, Vec<u8>); 2] {
    let rows = program_shares(inputs);
    let csv = csv_bytes(|w| {
        w.write_record(["career", "cluster", "students", "share"])?;
        for r in &rows {
            w.write_record([r.career.clone(), r.cluster.clone(), r.count.to_string(), sig9(r.share)])?;
        }
        Ok(())
    });
    let mut careers: Vec<&str> = rows.iter().map(|r| r.career.as_str()).collect();
    careers.dedup();
    let bar_h = 24.0;
    let left = 190.0;
    let width = 480.0;
    let mut svg = Svg::new(left + width + 150.0, 40.0 + bar_h * careers.len().max(1) as f64 + 20.0);
    svg.text(10.0, 22.0, 14.0, "start", "Cluster shares by program");
    for (i, career) in careers.iter().enumerate() {
        let y = 40.0 + bar_h * i as f64;
        svg.text(left - 8.0, y + bar_h * 0.65, 11.0, "end", career);
        let mut x = left;
        for r in rows.iter().filter(|r| r.career == *career) {
            let w = width * r.share;
            svg.rect(x, y + 3.0, w, bar_h - 6.0, color_of(&inputs.labels, &r.cluster));
            x += w;
        }
    }
    for (i, l) in inputs.labels.iter().enumerate() {
        let y = 40.0 + 18.0 * i as f64;
        svg.rect(left + width + 15.0, y, 10.0, 10.0, color_of(&inputs.labels, l));
        svg.text(left + width + 30.0, y + 9.0, 11.0, "start", l);
    }
    [
        ("program_shares.csv".into(), csv),
        (
            "program_shares.svg".into(),
            svg.finish("Cluster shares by program", stamp),
        ),
    ]
}

fn heatmap_files(inputs: &ReportInputs, stamp: Option<u64>) -> [(String, Vec<u8>); 2] {
    let m = &inputs.matrix;
    let mut csv = Vec::new();
    let _ = crate::migration::write_matrix(&mut csv, m);
    let cell = 28.0;
    let left = 70.0;
    let top = 60.0;
    let mut svg = Svg::new(
        left + cell * m.columns.len() as f64 + 20.0,
        top + cell * m.rows.len() as f64 + 40.0,
    );
    svg.text(10.0, 22.0, 14.0, "start", "Home region to campus region (row shares)");
    for (j, c) in m.columns.iter().enumerate() {
        svg.text(
            left + cell * (j as f64 + 0.5),
            top - 6.0,
            10.0,
            "middle",
            &c.to_string(),
        );
    }
    for (i, (home, counts)) in m.rows.iter().zip(&m.counts).enumerate() {
        let y = top + cell * i as f64;
        let total: u64 = counts.iter().sum();
        svg.text(
            left - 6.0,
            y + cell * 0.65,
            10.0,
            "end",
            &format!("{home} ({:.0}%)", 100.0 * m.out_rate[i]),
        );
        for (j, &n) in counts.iter().enumerate() {
            let share = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            svg.rect(left + cell * j as f64, y, cell - 1.0, cell - 1.0, &ramp(share.sqrt()));
        }
    }
    [
        ("migration_heatmap.csv".into(), csv),
        ("migration_heatmap.svg".into(), svg.finish("Migration heatmap", stamp)),
    ]
}

/// Render the whole bundle as `(relative path, bytes)` pairs.
pub fn build_report(
    inputs: &ReportInputs,
    seed: u64,
    scatter_sample: usize,
    stamp: Option<u64>,
) -> Vec<(String, Vec<u8>)> {
    let sample = crate::pipeline::plot_sample(inputs.students.len(), scatter_sample, seed);
    let mut out = Vec::new();
    out.extend(composition_files(inputs, stamp));
    out.extend(centroid_files(inputs, stamp));
    out.extend(scatter_files(inputs, &sample, stamp));
    out.extend(density_files(inputs, stamp));
    out.extend(share_files(inputs, stamp));
    out.extend(heatmap_files(inputs, stamp));
    let mut notes = String::new();
    for n in &inputs.notices {
        notes.push_str(n);
        notes.push('\n');
    }
    out.push(("notices.txt".into(), notes.into_bytes()));
    out
}

/// Full density grid, one row per cell.
pub fn write_grid<W: std::io::Write>(writer: W, d: &DensityMap) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ix", "iy", "pc1", "pc2", "density"])?;
    let g = d.grid_size;
    let dx = (d.bounds.x.1 - d.bounds.x.0) / g as f64;
    let dy = (d.bounds.y.1 - d.bounds.y.0) / g as f64;
    for iy in 0..g {
        for ix in 0..g {
            w.write_record([
                ix.to_string(),
                iy.to_string(),
                sig9(d.bounds.x.0 + (ix as f64 + 0.5) * dx),
                sig9(d.bounds.y.0 + (iy as f64 + 0.5) * dy),
                sig9(d.cell(ix, iy)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum MatrixReadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad value `{0}`")]
    Value(String),
}

/// Inverse of [`crate::migration::write_matrix`].
pub fn read_matrix<R: std::io::Read>(reader: R) -> Result<MigrationMatrix, MatrixReadError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let bad = |s: &str| MatrixReadError::Value(s.to_string());
    let columns = header
        .iter()
        .skip(2)
        .map(|h| h.strip_prefix("to_").and_then(|c| c.parse().ok()).ok_or_else(|| bad(h)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut m = MigrationMatrix {
        rows: Vec::new(),
        columns,
        counts: Vec::new(),
        out_rate: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        m.rows.push(rec[0].parse().map_err(|_| bad(&rec[0]))?);
        m.out_rate.push(rec[1].parse().map_err(|_| bad(&rec[1]))?);
        m.counts.push(
            rec.iter()
                .skip(2)
                .map(|v| v.parse().map_err(|_| bad(v)))
                .collect::<Result<Vec<u64>, _>>()?,
        );
    }
    Ok(m)
}
