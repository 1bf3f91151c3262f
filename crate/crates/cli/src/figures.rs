//! Figure subcommands. Each SVG gets a CSV companion holding the exact
//! plotted values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use citypulse::geomap::{load_commune_geometry, CommuneId};
use citypulse::pipeline::{read_cpm_json, read_ep_csv, read_provenance, write_lines};
use citypulse::population::day_profile;
use citypulse::render::{choropleth_svg, heatmap_svg, legend_svg, profile_svg, BarGroup};
use citypulse::timegrid::{DayGroup, HourGroup, TimeSlot};
use citypulse::Error;

fn figs_dir(out: &Path) -> PathBuf {
    out.join("figs")
}

fn save(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("{}", parent.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("{}", path.display()))
}

pub fn profile(out: &Path, day: DayGroup, commune: Option<CommuneId>) -> Result<Vec<PathBuf>> {
    let table = read_ep_csv(&out.join("ep.csv"))?;
    let mut rows = vec!["day_group,hour_group,commune_id,thousands".to_string()];
    let (stem, title, groups) = match commune {
        None => {
            let series = day_profile(&table, day, None)?;
            let mut groups = Vec::new();
            for s in &series {
                for (h, v) in &s.points {
                    rows.push(format!("{day},{h},{},{v}", s.commune));
                }
                groups.push(BarGroup {
                    label: s.commune.to_string(),
                    bars: s.points.iter().map(|(h, v)| (h.to_string(), *v)).collect(),
                });
            }
            (
                format!("profile_{day}"),
                format!("People present by commune, {day} (thousands)"),
                groups,
            )
        }
        Some(c) => {
            let mut by_hour: BTreeMap<HourGroup, Vec<(String, f64)>> = BTreeMap::new();
            for d in DayGroup::ALL {
                for s in day_profile(&table, d, Some(c))? {
                    for (h, v) in s.points {
                        rows.push(format!("{d},{h},{c},{v}"));
                        by_hour.entry(h).or_default().push((d.to_string(), v));
                    }
                }
            }
            let groups = by_hour
                .into_iter()
                .map(|(h, bars)| BarGroup { label: h.to_string(), bars })
                .collect();
            (
                format!("profile_commune_{c}"),
                format!("People present in commune {c} (thousands)"),
                groups,
            )
        }
    };
    let svg = figs_dir(out).join(format!("{stem}.svg"));
    let csv = figs_dir(out).join(format!("{stem}.csv"));
    save(&svg, &profile_svg(&title, &groups))?;
    write_lines("profile data", &csv, &rows)?;
    Ok(vec![svg, csv])
}

pub fn heatmap(out: &Path, slot: TimeSlot) -> Result<Vec<PathBuf>> {
    let cpm = read_cpm_json(&out.join("cpm").join(format!("{}.json", slot.key())))?;
    let mut rows = vec!["present_commune,home_commune,value".to_string()];
    for (i, row) in cpm.matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            rows.push(format!("{},{},{v}", cpm.commune_ids[i], cpm.commune_ids[j]));
        }
    }
    let svg = figs_dir(out).join(format!("heatmap_{}.svg", slot.key()));
    let csv = figs_dir(out).join(format!("heatmap_{}.csv", slot.key()));
    save(&svg, &heatmap_svg(&cpm))?;
    write_lines("heatmap data", &csv, &rows)?;
    Ok(vec![svg, csv])
}

pub fn choropleth(
    out: &Path,
    geometry: &Path,
    slot: TimeSlot,
    targets: &[CommuneId],
    scale_max: Option<f64>,
) -> Result<Vec<PathBuf>> {
    let geoms = load_commune_geometry(geometry)?;
    let provenance = out.join("provenance.csv");
    let mut maps = Vec::new();
    for &t in targets {
        if !geoms.iter().any(|g| g.id == t) {
            return Err(Error::UnknownCommune(t).into());
        }
        let thousands: BTreeMap<CommuneId, f64> = read_provenance(&provenance, slot, t)?
            .into_iter()
            .map(|(c, v)| (c, v / 1000.0))
            .collect();
        maps.push((t, thousands));
    }
    let max = scale_max.unwrap_or_else(|| {
        maps.iter()
            .flat_map(|(_, m)| m.values().copied())
            .fold(0.0, f64::max)
    });
    let mut written = Vec::new();
    for (t, values) in &maps {
        let stem = format!("choropleth_{}_{t}", slot.key());
        let title = format!("Homes of people in commune {t}, {slot} (thousands)");
        let svg = figs_dir(out).join(format!("{stem}.svg"));
        let csv = figs_dir(out).join(format!("{stem}.csv"));
        save(&svg, &choropleth_svg(&title, &geoms, values, *t, max))?;
        let mut rows = vec!["home_commune,thousands".to_string()];
        for g in &geoms {
            rows.push(format!("{},{}", g.id, values.get(&g.id).copied().unwrap_or(0.0)));
        }
        write_lines("choropleth data", &csv, &rows)?;
        written.push(svg);
        written.push(csv);
    }
    let legend = figs_dir(out).join(format!("choropleth_{}_legend.svg", slot.key()));
    save(&legend, &legend_svg(max))?;
    written.push(legend);
    Ok(written)
}
