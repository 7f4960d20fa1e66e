use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mds::Atlas2D;
use crate::dataset::CLASS_NAMES;
use crate::error::{LxlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

const PALETTE: [&str; 8] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const SIZE: f64 = 480.0;
const MARGIN: f64 = 20.0;
const LEGEND: f64 = 110.0;

/// SVG scatter with one `circle.point` per atlas point and a legend entry per class.
pub fn scatter_svg(atlas: &Atlas2D) -> String {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &atlas.coords {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (0..2).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let scale = if span > 0.0 { (SIZE - 2.0 * MARGIN) / span } else { 0.0 };
    let place = |v: f64, a: usize| MARGIN + (v - lo[a]) * scale;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{SIZE}" viewBox="0 0 {} {SIZE}">"#,
        SIZE + LEGEND,
        SIZE + LEGEND
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for ((p, &l), id) in atlas.coords.iter().zip(&atlas.labels).zip(&atlas.ids) {
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{:.3}" cy="{:.3}" r="3" fill="{}" fill-opacity="0.8"><title>{}</title></circle>"#,
            place(p[0], 0),
            SIZE - place(p[1], 1),
            PALETTE[l % PALETTE.len()],
            xml_escape(id)
        );
    }
    let classes: BTreeSet<usize> = atlas.labels.iter().copied().collect();
    for (row, l) in classes.into_iter().enumerate() {
        let y = MARGIN + 18.0 * row as f64;
        let name = CLASS_NAMES.get(l).map_or_else(|| format!("class{l}"), |n| n.to_string());
        let _ = writeln!(
            s,
            r#"<g class="legend"><rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-size="12" font-family="sans-serif">{name}</text></g>"#,
            SIZE + 10.0,
            y,
            PALETTE[l % PALETTE.len()],
            SIZE + 26.0,
            y + 9.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes `id,x,y,label` rows to `csv_path` and the scatter plot to `svg_path`.
pub fn export_scatter(atlas: &Atlas2D, csv_path: &Path, svg_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path).map_err(csv_error)?;
    for ((id, p), &label) in atlas.ids.iter().zip(&atlas.coords).zip(&atlas.labels) {
        w.serialize(ScatterRow {
            id: id.clone(),
            x: p[0],
            y: p[1],
            label,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    std::fs::write(svg_path, scatter_svg(atlas))?;
    Ok(())
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

fn csv_error(e: csv::Error) -> LxlError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => LxlError::Io(io),
            other => LxlError::Format(format!("csv: {other:?}")),
        }
    } else {
        LxlError::Format(format!("csv: {e}"))
    }
}
