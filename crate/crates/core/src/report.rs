//! Static SVG renders: encoder maps colored by a metadata attribute, and
//! dendrograms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::distance::{DendrogramChild, DendrogramNode};
use crate::embedding::EncoderRecord;
use crate::error::{Error, Result};
use crate::prediction::ScoreTable;
use crate::projection::MapLayout;
use crate::scalar::Scalar;

/// Cyclic categorical palette. Grays are kept out so that they stay free for
/// the reserved buckets below.
pub const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22",
    "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2",
    "#dbdb8d", "#9edae5", "#393b79", "#637939",
];
pub const OTHER_COLOR: &str = "#7f7f7f";
pub const UNKNOWN_COLOR: &str = "#c7c7c7";
pub const LEGEND_CAP: usize = 20;
pub const OTHER_LABEL: &str = "other";
pub const UNKNOWN_LABEL: &str = "unknown";

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 220.0;
const MARKER_RADIUS: f64 = 4.0;

/// Axis-aligned crop window in layout coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

impl std::str::FromStr for BoundingBox {
    type Err = Error;

    /// `x_min,x_max,y_min,y_max`.
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parameter(format!("bad crop box {s:?}: {e}")))?;
        match v[..] {
            [x_min, x_max, y_min, y_max] if x_min < x_max && y_min < y_max => Ok(BoundingBox {
                x_min,
                x_max,
                y_min,
                y_max,
            }),
            _ => Err(Error::Parameter(format!(
                "crop box {s:?} must be x_min,x_max,y_min,y_max with min < max"
            ))),
        }
    }
}

pub struct PlotSpec<'a, T: Scalar> {
    pub layout: &'a MapLayout<T>,
    pub records: &'a [EncoderRecord],
    pub color_by: String,
    pub highlight: Vec<String>,
    pub title: String,
    pub crop: Option<BoundingBox>,
}

/// 32-bit FNV-1a.
fn fnv1a(s: &str) -> u32 {
    s.bytes()
        .fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

/// Colors for up to [`LEGEND_CAP`] values. Each value starts at its hashed
/// palette slot; values are placed in sorted order and move to the next free
/// slot on collision, so distinct values never share a color.
pub fn assign_colors(values: &BTreeSet<&str>) -> BTreeMap<String, &'static str> {
    let mut used = [false; PALETTE.len()];
    let mut out = BTreeMap::new();
    for v in values.iter().take(PALETTE.len()) {
        let mut slot = fnv1a(v) as usize % PALETTE.len();
        while used[slot] {
            slot = (slot + 1) % PALETTE.len();
        }
        used[slot] = true;
        out.insert(v.to_string(), PALETTE[slot]);
    }
    out
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Maps `[lo, hi]` onto `[a, b]`; a degenerate range maps to the midpoint.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

struct Legend {
    entries: Vec<(String, &'static str, usize)>,
    color_of: BTreeMap<String, &'static str>,
}

fn build_legend(labels: &[Option<String>]) -> Legend {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels.iter().flatten() {
        *counts.entry(l).or_default() += 1;
    }
    let mut by_count: Vec<(&str, usize)> = counts.iter().map(|(k, v)| (*k, *v)).collect();
    by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let kept: BTreeSet<&str> = by_count.iter().take(LEGEND_CAP).map(|e| e.0).collect();
    let color_of = assign_colors(&kept);
    let mut entries: Vec<(String, &'static str, usize)> = kept
        .iter()
        .map(|v| (v.to_string(), color_of[*v], counts[v]))
        .collect();
    let other: usize = by_count.iter().skip(LEGEND_CAP).map(|e| e.1).sum();
    if other > 0 {
        entries.push((OTHER_LABEL.into(), OTHER_COLOR, other));
    }
    let unknown = labels.iter().filter(|l| l.is_none()).count();
    if unknown > 0 {
        entries.push((UNKNOWN_LABEL.into(), UNKNOWN_COLOR, unknown));
    }
    Legend { entries, color_of }
}

/// Standalone SVG map with one marker per encoder.
pub fn scatter_svg<T: Scalar>(spec: &PlotSpec<'_, T>) -> Result<String> {
    if !EncoderRecord::ATTRIBUTES.contains(&spec.color_by.as_str()) {
        return Err(Error::Parameter(format!(
            "cannot color by {:?}; expected one of {:?}",
            spec.color_by,
            EncoderRecord::ATTRIBUTES
        )));
    }
    let layout = spec.layout;
    let ids: BTreeSet<&str> = layout.ids.iter().map(String::as_str).collect();
    let mut by_id: BTreeMap<&str, &EncoderRecord> = BTreeMap::new();
    for r in spec.records {
        if !ids.contains(r.encoder_id.as_str()) {
            return Err(Error::Validation(format!(
                "record {} does not appear in the layout",
                r.encoder_id
            )));
        }
        by_id.insert(&r.encoder_id, r);
    }
    for h in &spec.highlight {
        if !ids.contains(h.as_str()) {
            return Err(Error::Validation(format!("highlighted id {h} is not in the layout")));
        }
    }
    let highlight: BTreeSet<&str> = spec.highlight.iter().map(String::as_str).collect();

    let points: Vec<(usize, f64, f64)> = (0..layout.len())
        .map(|i| {
            let (x, y) = layout.point(i);
            (i, x.as_f64(), y.as_f64())
        })
        .filter(|&(_, x, y)| spec.crop.is_none_or(|b| b.contains(x, y)))
        .collect();
    let labels: Vec<Option<String>> = points
        .iter()
        .map(|&(i, _, _)| {
            by_id
                .get(layout.ids[i].as_str())
                .map(|r| r.attribute(&spec.color_by))
                .transpose()
                .map(Option::flatten)
        })
        .collect::<Result<_>>()?;
    let legend = build_legend(&labels);

    let (x_lo, x_hi, y_lo, y_hi) = match spec.crop {
        Some(b) => (b.x_min, b.x_max, b.y_min, b.y_max),
        None => points.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(_, x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        ),
    };
    let plot_right = WIDTH - LEGEND_WIDTH - MARGIN;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text class="title" x="{MARGIN}" y="24" font-family="sans-serif" font-size="16">{}</text>"#,
        xml_escape(&spec.title)
    );
    let _ = writeln!(s, r#"<g class="markers">"#);
    for (&(i, x, y), label) in points.iter().zip(&labels) {
        let (value, color) = match label {
            None => (UNKNOWN_LABEL, UNKNOWN_COLOR),
            Some(v) => (v.as_str(), legend.color_of.get(v).copied().unwrap_or(OTHER_COLOR)),
        };
        let px = scale(x, x_lo, x_hi, MARGIN, plot_right);
        // SVG y grows downward
        let py = scale(y, y_lo, y_hi, HEIGHT - MARGIN, MARGIN + 20.0);
        let id = xml_escape(&layout.ids[i]);
        let hl = highlight.contains(layout.ids[i].as_str());
        let (r, stroke) = if hl {
            (MARKER_RADIUS * 2.0, r#" stroke="black" stroke-width="1.5""#)
        } else {
            (MARKER_RADIUS, "")
        };
        let _ = writeln!(
            s,
            r#"<circle class="marker" data-id="{id}" data-value="{}" cx="{px:.3}" cy="{py:.3}" r="{r}" fill="{color}"{stroke}><title>{id}</title></circle>"#,
            xml_escape(value)
        );
        if hl {
            let _ = writeln!(
                s,
                r#"<text class="highlight-label" x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11">{id}</text>"#,
                px + r + 2.0,
                py - r
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="legend">"#);
    let lx = WIDTH - LEGEND_WIDTH;
    let _ = writeln!(
        s,
        r#"<text x="{lx}" y="{}" font-family="sans-serif" font-size="12" font-weight="bold">{}</text>"#,
        MARGIN + 10.0,
        xml_escape(&spec.color_by)
    );
    for (k, (label, color, count)) in legend.entries.iter().enumerate() {
        let y = MARGIN + 30.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry" data-value="{v}"><rect x="{lx}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{v} ({count})</text></g>"#,
            y - 10.0,
            lx + 18.0,
            y,
            v = xml_escape(label)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_scatter<T: Scalar>(spec: &PlotSpec<'_, T>, path: &Path) -> Result<()> {
    let svg = scatter_svg(spec)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// `<prefix>_<color_by>.svg`.
pub fn plot_file_name(prefix: &str, color_by: &str) -> String {
    format!("{prefix}_{color_by}.svg")
}

struct DendroLayout {
    leaf_x: BTreeMap<usize, f64>,
    out: String,
}

/// Height on the drawing axis.
fn axis_height<T: Scalar>(h: T, log: bool) -> f64 {
    let h = h.as_f64();
    if log {
        h.ln_1p()
    } else {
        h
    }
}

/// Standalone SVG dendrogram. Leaves run left to right in traversal order;
/// with `log_heights` the vertical axis is `ln(1 + h)`.
pub fn dendrogram_svg<T: Scalar>(root: &DendrogramNode<T>, log_heights: bool) -> String {
    let leaves = root.leaves();
    let n = leaves.len();
    let top = axis_height(root.merge_height, log_heights);
    let label_band = 140.0;
    let width = (MARGIN * 2.0 + 18.0 * n as f64).max(400.0);
    let height = HEIGHT;
    let base = height - label_band;
    let y_of = |h: f64| scale(h, 0.0, top, base, MARGIN);
    let step = (width - 2.0 * MARGIN) / n.max(1) as f64;

    let mut layout = DendroLayout {
        leaf_x: BTreeMap::new(),
        out: String::new(),
    };
    for i in 0..n {
        layout.leaf_x.insert(i, MARGIN + step * (i as f64 + 0.5));
    }

    fn walk<T: Scalar>(
        c: &DendrogramChild<T>,
        next_leaf: &mut usize,
        l: &mut DendroLayout,
        log: bool,
        y_of: &dyn Fn(f64) -> f64,
    ) -> (f64, f64) {
        match c {
            DendrogramChild::Leaf(_) => {
                let x = l.leaf_x[next_leaf];
                *next_leaf += 1;
                (x, y_of(0.0))
            }
            DendrogramChild::Node(node) => draw(node, next_leaf, l, log, y_of),
        }
    }

    fn draw<T: Scalar>(
        node: &DendrogramNode<T>,
        next_leaf: &mut usize,
        l: &mut DendroLayout,
        log: bool,
        y_of: &dyn Fn(f64) -> f64,
    ) -> (f64, f64) {
        let (lx, ly) = walk(&node.left, next_leaf, l, log, y_of);
        let (rx, ry) = walk(&node.right, next_leaf, l, log, y_of);
        let y = y_of(axis_height(node.merge_height, log));
        let _ = writeln!(
            l.out,
            r#"<path class="link" d="M{lx:.3},{ly:.3} V{y:.3} H{rx:.3} V{ry:.3}" fill="none" stroke="black" stroke-width="1"/>"#
        );
        let x = (lx + rx) / 2.0;
        let _ = writeln!(
            l.out,
            r#"<circle class="junction" data-height="{}" cx="{x:.3}" cy="{y:.3}" r="1.5" fill="black"/>"#,
            node.merge_height
        );
        (x, y)
    }

    let mut next = 0;
    draw(root, &mut next, &mut layout, log_heights, &y_of);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height}" viewBox="0 0 {width:.0} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let axis = if log_heights { "ln(1 + height)" } else { "height" };
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="8" y="{:.1}" font-family="sans-serif" font-size="11">{axis}</text>"#,
        MARGIN - 12.0
    );
    s.push_str(&layout.out);
    for (i, id) in leaves.iter().enumerate() {
        let x = layout.leaf_x[&i];
        let y = base + 6.0;
        let _ = writeln!(
            s,
            r#"<text class="leaf" data-id="{id}" x="{x:.3}" y="{y:.3}" font-family="sans-serif" font-size="10" transform="rotate(90 {x:.3} {y:.3})">{id}</text>"#,
            id = xml_escape(id)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_dendrogram<T: Scalar>(
    root: &DendrogramNode<T>,
    log_heights: bool,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, dendrogram_svg(root, log_heights)).map_err(|e| Error::io(path, e))
}

/// Per-encoder mean of min-max normalized task scores. Tasks whose scores are
/// all equal carry no ranking information and are left out.
pub fn minmax_average(scores: &ScoreTable) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for table in scores.tasks.values() {
        let lo = table.values().copied().fold(f64::INFINITY, f64::min);
        let hi = table.values().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            continue;
        }
        for (id, &v) in table {
            let e = sums.entry(id.clone()).or_default();
            e.0 += (v - lo) / (hi - lo);
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(id, (s, n))| (id, s / n as f64))
        .collect()
}
