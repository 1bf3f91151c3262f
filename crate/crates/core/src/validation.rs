//! Agreement between working-day estimates and an origin-destination survey.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomap::CommuneId;
use crate::ingest::SurveyTable;
use crate::population::EpTable;
use crate::timegrid::{DayGroup, HourGroup, TimeSlot};

/// Description of the metric, written into every report.
pub const METRIC: &str =
    "mean absolute relative difference |estimate - survey| / survey over compared cells, MonThu day group";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiff {
    pub commune: CommuneId,
    pub hour_group: HourGroup,
    pub estimate: f64,
    pub survey: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub metric: String,
    /// Sorted by `rel_diff`, largest first.
    pub cells: Vec<CellDiff>,
    pub average_rel_diff: f64,
    pub max_cell: Option<(CommuneId, HourGroup, f64)>,
    /// Survey cells equal to zero, left out of the comparison.
    pub skipped_zero: usize,
}

/// Compares the `MonThu` estimates with every survey cell.
pub fn compare(estimates: &EpTable, survey: &SurveyTable) -> Result<DiffReport> {
    if survey.estimate.is_empty() {
        return Err(Error::Config("survey has no cells".into()));
    }
    let mut cells = Vec::with_capacity(survey.estimate.len());
    let mut skipped_zero = 0;
    for (&(commune, hour_group), &expected) in &survey.estimate {
        let slot = TimeSlot::new(DayGroup::MonThu, hour_group);
        if !estimates.slots.contains_key(&slot) {
            return Err(Error::Config(format!("no estimate for slot {slot}")));
        }
        let estimate = estimates
            .get(slot, commune)
            .ok_or(Error::UnknownCommune(commune))?;
        if expected == 0.0 {
            skipped_zero += 1;
            continue;
        }
        cells.push(CellDiff {
            commune,
            hour_group,
            estimate,
            survey: expected,
            rel_diff: (estimate - expected).abs() / expected,
        });
    }
    // Stable sort keeps (commune, hour) order among equal differences.
    cells.sort_by(|a, b| b.rel_diff.total_cmp(&a.rel_diff));
    let average_rel_diff = if cells.is_empty() {
        0.0
    } else {
        cells.iter().map(|c| c.rel_diff).sum::<f64>() / cells.len() as f64
    };
    let max_cell = cells.first().map(|c| (c.commune, c.hour_group, c.rel_diff));
    Ok(DiffReport {
        metric: METRIC.to_string(),
        cells,
        average_rel_diff,
        max_cell,
        skipped_zero,
    })
}

impl DiffReport {
    /// CSV body with a leading metric comment and a trailing summary comment.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# metric: {}\ncommune_id,hour_group,estimate,survey,rel_diff\n", self.metric);
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.3},{:.3},{:.6}\n",
                c.commune, c.hour_group, c.estimate, c.survey, c.rel_diff
            ));
        }
        out.push_str(&format!(
            "# summary: cells={} average_rel_diff={:.6} skipped_zero={}",
            self.cells.len(),
            self.average_rel_diff,
            self.skipped_zero
        ));
        if let Some((c, h, d)) = self.max_cell {
            out.push_str(&format!(" max_cell={c}/{h}/{d:.6}"));
        }
        out.push('\n');
        out
    }
}
