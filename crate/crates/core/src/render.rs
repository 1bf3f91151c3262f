//! Static SVG figures: grouped bar profiles, city pulse heatmaps and
//! provenance choropleths.
//!
//! Output is a pure function of the inputs (no timestamps, no random ids),
//! so identical data renders to identical bytes.
//!
//! Colors interpolate linearly per 8-bit channel between two endpoints:
//! `channel = round(lo + (hi - lo) * v)` with `v` clamped to `[0, 1]` and
//! halves rounded away from zero.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::geomap::{CommuneGeometry, CommuneId};
use crate::population::CityPulseMatrix;

pub const WHITE: [u8; 3] = [255, 255, 255];
/// Heatmap endpoint for value 1.
pub const DARK_BLUE: [u8; 3] = [8, 48, 107];
/// Choropleth endpoint for the scale maximum.
pub const DARK_RED: [u8; 3] = [103, 0, 13];
/// Outline of the commune a choropleth is about.
pub const ACCENT: &str = "#7b2cbf";

const HOUR_COLORS: [&str; 4] = ["#f4a259", "#e76f51", "#2a9d8f", "#264653"];
const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

pub fn interpolate(lo: [u8; 3], hi: [u8; 3], v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    std::array::from_fn(|i| {
        let (a, b) = (f64::from(lo[i]), f64::from(hi[i]));
        (a + (b - a) * v).round() as u8
    })
}

pub fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub fn heat_color(v: f64) -> String {
    hex(interpolate(WHITE, DARK_BLUE, v))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
}

/// One cluster of bars in a grouped bar chart.
#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    /// `(series label, value)`; series are colored by position.
    pub bars: Vec<(String, f64)>,
}

/// Grouped bar chart with a y axis in thousands of people.
pub fn profile_svg(title: &str, groups: &[BarGroup]) -> String {
    const BAR: f64 = 14.0;
    const GAP: f64 = 12.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 40.0;
    const PLOT_H: f64 = 240.0;
    let per_group = groups.iter().map(|g| g.bars.len()).max().unwrap_or(0) as f64;
    let group_w = per_group * BAR + GAP;
    let width = LEFT + groups.len() as f64 * group_w + 140.0;
    let height = TOP + PLOT_H + 50.0;
    let max = groups
        .iter()
        .flat_map(|g| g.bars.iter().map(|b| b.1))
        .fold(0.0_f64, f64::max);
    let axis_max = nice_ceiling(max);

    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(out, "<text x=\"{LEFT:.1}\" y=\"20\" {FONT} font-weight=\"bold\">{}</text>", escape(title));
    for i in 0..=4 {
        let v = axis_max * f64::from(i) / 4.0;
        let y = TOP + PLOT_H - PLOT_H * f64::from(i) / 4.0;
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT:.1}\" y1=\"{y:.2}\" x2=\"{:.1}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            width - 140.0
        );
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.2}\" {FONT} text-anchor=\"end\">{v:.1}</text>", LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{:.1}\" {FONT} transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\">people (thousands)</text>",
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    );
    for (gi, g) in groups.iter().enumerate() {
        let x0 = LEFT + GAP / 2.0 + gi as f64 * group_w;
        for (bi, (series, v)) in g.bars.iter().enumerate() {
            let h = if axis_max > 0.0 { PLOT_H * v / axis_max } else { 0.0 };
            let _ = writeln!(
                out,
                "<rect class=\"bar\" x=\"{:.2}\" y=\"{:.2}\" width=\"{BAR:.2}\" height=\"{h:.2}\" fill=\"{}\"><title>{}, {}: {v}</title></rect>",
                x0 + bi as f64 * BAR,
                TOP + PLOT_H - h,
                HOUR_COLORS[bi % HOUR_COLORS.len()],
                escape(&g.label),
                escape(series)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.1}\" {FONT} text-anchor=\"middle\">{}</text>",
            x0 + per_group * BAR / 2.0,
            TOP + PLOT_H + 16.0,
            escape(&g.label)
        );
    }
    if let Some(first) = groups.first() {
        for (bi, (series, _)) in first.bars.iter().enumerate() {
            let y = TOP + 16.0 * bi as f64;
            let x = width - 130.0;
            let _ = writeln!(
                out,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{}</text>",
                HOUR_COLORS[bi % HOUR_COLORS.len()],
                x + 14.0,
                y + 9.0,
                escape(series)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Smallest of 1, 2, 2.5, 5 times a power of ten that is at least `v`.
fn nice_ceiling(v: f64) -> f64 {
    if v <= 0.0 || !v.is_finite() {
        return 1.0;
    }
    let p = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .into_iter()
        .map(|m| m * p)
        .find(|&c| c >= v)
        .unwrap_or(10.0 * p)
}

/// City pulse heatmap: rows are where people are, columns where they live.
pub fn heatmap_svg(cpm: &CityPulseMatrix) -> String {
    const CELL: f64 = 24.0;
    const LEFT: f64 = 50.0;
    const TOP: f64 = 60.0;
    let n = cpm.commune_ids.len() as f64;
    let width = LEFT + n * CELL + 90.0;
    let height = TOP + (n * CELL).max(120.0) + 20.0;
    let mut out = String::new();
    header(&mut out, width, height);
    let kind = if cpm.normalized { "row-normalized" } else { "people" };
    let _ = writeln!(
        out,
        "<text x=\"{LEFT:.1}\" y=\"18\" {FONT} font-weight=\"bold\">City pulse {}_{} ({kind})</text>",
        cpm.slot.day_group, cpm.slot.hour_group
    );
    let _ = writeln!(out, "<text x=\"{LEFT:.1}\" y=\"34\" {FONT}>columns: home commune; rows: present commune</text>");
    for (j, id) in cpm.commune_ids.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} text-anchor=\"middle\">{id}</text>",
            LEFT + (j as f64 + 0.5) * CELL,
            TOP - 6.0
        );
    }
    for (i, (id, row)) in cpm.commune_ids.iter().zip(&cpm.matrix).enumerate() {
        let y = TOP + i as f64 * CELL;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} text-anchor=\"end\">{id}</text>",
            LEFT - 6.0,
            y + CELL / 2.0 + 4.0
        );
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" fill=\"{}\"><title>{id} from {}: {v}</title></rect>",
                LEFT + j as f64 * CELL,
                heat_color(v),
                cpm.commune_ids[j]
            );
        }
    }
    // Legend: ten steps from 0 to 1.
    let lx = LEFT + n * CELL + 20.0;
    for k in 0..10 {
        let v = (9 - k) as f64 / 9.0;
        let _ = writeln!(
            out,
            "<rect class=\"legend\" x=\"{lx:.1}\" y=\"{:.1}\" width=\"14\" height=\"12\" fill=\"{}\"/>",
            TOP + k as f64 * 12.0,
            heat_color(v)
        );
    }
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" {FONT}>1</text>", lx + 18.0, TOP + 10.0);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" {FONT}>0</text>", lx + 18.0, TOP + 118.0);
    out.push_str("</svg>\n");
    out
}

/// SVG path data for a commune, vertices printed in their shortest exact
/// decimal form so they parse back to the input coordinates.
pub fn commune_path(geom: &CommuneGeometry) -> String {
    let mut d = String::new();
    for poly in &geom.polygons {
        for ring in std::iter::once(&poly.exterior).chain(&poly.holes) {
            for (k, [x, y]) in ring.iter().enumerate() {
                let _ = write!(d, "{}{x} {y} ", if k == 0 { "M" } else { "L" });
            }
            d.push_str("Z ");
        }
    }
    d.trim_end().to_string()
}

fn bounds(geoms: &[CommuneGeometry]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in geoms.iter().flat_map(|g| &g.polygons) {
        let pb = p.bbox();
        b = [b[0].min(pb[0]), b[1].min(pb[1]), b[2].max(pb[2]), b[3].max(pb[3])];
    }
    b
}

/// Map shading each commune by `values` (thousands of people) on a
/// `[0, scale_max]` ramp, with `target` outlined in the accent color.
pub fn choropleth_svg(
    title: &str,
    geoms: &[CommuneGeometry],
    values: &BTreeMap<CommuneId, f64>,
    target: CommuneId,
    scale_max: f64,
) -> String {
    const MAP_W: f64 = 420.0;
    const MARGIN: f64 = 20.0;
    const TOP: f64 = 30.0;
    let [x0, y0, x1, y1] = bounds(geoms);
    let span = (x1 - x0).max(y1 - y0);
    let s = if span > 0.0 && span.is_finite() { MAP_W / span } else { 1.0 };
    let map_h = if y1 > y0 { (y1 - y0) * s } else { MAP_W };
    let width = MAP_W + 2.0 * MARGIN;
    let height = TOP + map_h + 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(out, "<text x=\"{MARGIN:.1}\" y=\"18\" {FONT} font-weight=\"bold\">{}</text>", escape(title));
    let _ = writeln!(
        out,
        "<g transform=\"matrix({s} 0 0 {} {} {})\">",
        -s,
        MARGIN - x0 * s,
        TOP + MARGIN + y1 * s
    );
    let mut outline = String::new();
    for g in geoms {
        let v = values.get(&g.id).copied().unwrap_or(0.0);
        let frac = if scale_max > 0.0 { v / scale_max } else { 0.0 };
        let fill = hex(interpolate(WHITE, DARK_RED, frac));
        let line = format!(
            "<path class=\"commune\" data-commune=\"{}\" d=\"{}\" fill=\"{fill}\" fill-rule=\"evenodd\" stroke=\"{}\" stroke-width=\"{}\" vector-effect=\"non-scaling-stroke\"><title>{}: {v}</title></path>",
            g.id,
            commune_path(g),
            if g.id == target { ACCENT } else { "#777777" },
            if g.id == target { 3 } else { 1 },
            escape(&g.name)
        );
        // Target drawn last so its outline is on top.
        if g.id == target {
            outline = line;
        } else {
            let _ = writeln!(out, "{line}");
        }
    }
    if !outline.is_empty() {
        let _ = writeln!(out, "{outline}");
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Stand-alone color scale for choropleths sharing `scale_max`.
pub fn legend_svg(scale_max: f64) -> String {
    const STEPS: usize = 10;
    let mut out = String::new();
    header(&mut out, 120.0, 40.0 + STEPS as f64 * 16.0);
    let _ = writeln!(out, "<text x=\"8\" y=\"16\" {FONT}>thousands</text>");
    for k in 0..STEPS {
        let v = (STEPS - 1 - k) as f64 / (STEPS - 1) as f64;
        let y = 26.0 + k as f64 * 16.0;
        let _ = writeln!(
            out,
            "<rect class=\"legend\" x=\"8\" y=\"{y:.1}\" width=\"18\" height=\"16\" fill=\"{}\"/><text x=\"32\" y=\"{:.1}\" {FONT}>{:.2}</text>",
            hex(interpolate(WHITE, DARK_RED, v)),
            y + 12.0,
            v * scale_max
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomap::Polygon;
    use crate::timegrid::{DayGroup, HourGroup, TimeSlot};

    #[test]
    fn color_rule() {
        assert_eq!(heat_color(0.0), "#ffffff");
        assert_eq!(heat_color(1.0), "#08306b");
        // 255 - 247 / 2 = 131.5 -> 132, 255 - 207 / 2 = 151.5 -> 152, 255 - 148 / 2 = 181
        assert_eq!(heat_color(0.5), "#8498b5");
        assert_eq!(heat_color(2.0), "#08306b");
        assert_eq!(heat_color(f64::NAN), "#ffffff");
    }

    #[test]
    fn nice_axis() {
        assert_eq!(nice_ceiling(0.0), 1.0);
        assert_eq!(nice_ceiling(7.3), 10.0);
        assert_eq!(nice_ceiling(1.9), 2.0);
        assert_eq!(nice_ceiling(230.0), 250.0);
    }

    fn cpm(matrix: Vec<Vec<f64>>) -> CityPulseMatrix {
        CityPulseMatrix {
            slot: TimeSlot::new(DayGroup::MonThu, HourGroup::Noon),
            normalized: true,
            commune_ids: (1..=matrix.len() as u32).map(CommuneId).collect(),
            matrix,
        }
    }

    fn cell_fills(svg: &str) -> Vec<String> {
        svg.lines()
            .filter(|l| l.contains("class=\"cell\""))
            .map(|l| {
                let i = l.find("fill=\"").unwrap() + 6;
                l[i..i + 7].to_string()
            })
            .collect()
    }

    #[test]
    fn identity_heatmap_is_dark_on_diagonal_only() {
        let svg = heatmap_svg(&cpm(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]));
        let fills = cell_fills(&svg);
        for (k, f) in fills.iter().enumerate() {
            let want = if k % 4 == 0 { "#08306b" } else { "#ffffff" };
            assert_eq!(f, want, "cell {k}");
        }
    }

    #[test]
    fn uniform_heatmap_is_one_tone() {
        let fills = cell_fills(&heatmap_svg(&cpm(vec![vec![0.5, 0.5], vec![0.5, 0.5]])));
        assert_eq!(fills, vec!["#8498b5"; 4]);
    }

    #[test]
    fn heatmap_golden() {
        let svg = heatmap_svg(&cpm(vec![vec![0.75, 0.25], vec![0.0, 1.0]]));
        assert_eq!(svg, include_str!("../tests/golden/heatmap_2x2.svg"));
    }

    #[test]
    fn bars_count() {
        let groups: Vec<BarGroup> = (0..3)
            .map(|g| BarGroup {
                label: format!("{g}"),
                bars: HourGroup::ALL.iter().map(|h| (h.to_string(), 1.5)).collect(),
            })
            .collect();
        let svg = profile_svg("t", &groups);
        assert_eq!(svg.matches("class=\"bar\"").count(), 12);
        assert_eq!(profile_svg("t", &groups), svg);
    }

    fn unit(id: u32, x: f64) -> CommuneGeometry {
        CommuneGeometry {
            id: CommuneId(id),
            name: format!("C{id} <x>"),
            polygons: vec![Polygon::new(
                vec![[x, 0.1], [x + 1.0, 0.1], [x + 1.0, 1.3], [x, 1.3], [x, 0.1]],
                vec![],
            )
            .unwrap()],
        }
    }

    #[test]
    fn path_round_trips_vertices() {
        let g = unit(1, -58.123456789012345);
        let d = commune_path(&g);
        let nums: Vec<f64> = d
            .split(['M', 'L', 'Z', ' '])
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().unwrap())
            .collect();
        let want: Vec<f64> = g.polygons[0].exterior.iter().flatten().copied().collect();
        assert_eq!(nums, want);
    }

    #[test]
    fn choropleth_shades_only_nonzero() {
        let geoms = vec![unit(1, 0.0), unit(2, 1.0), unit(3, 2.0)];
        let values: BTreeMap<CommuneId, f64> =
            [(CommuneId(1), 0.0), (CommuneId(2), 4.0), (CommuneId(3), 0.0)].into();
        let svg = choropleth_svg("x", &geoms, &values, CommuneId(2), 4.0);
        let fills: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains("class=\"commune\""))
            .map(|l| {
                let i = l.find("fill=\"").unwrap() + 6;
                &l[i..i + 7]
            })
            .collect();
        assert_eq!(fills, vec!["#ffffff", "#ffffff", "#67000d"]);
        assert!(svg.contains(ACCENT));
        assert!(svg.contains("C1 &lt;x&gt;"));
        assert_eq!(legend_svg(4.0), legend_svg(4.0));
        assert_ne!(legend_svg(4.0), legend_svg(5.0));
    }
}
