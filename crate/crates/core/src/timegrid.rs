//! Weekly time grid: four day groups by four hour groups.
//!
//! Hour groups are half-open intervals of the local clock. The night group
//! runs from 20:00 to 05:00 and belongs to the day on which it starts, so a
//! call at 02:30 on a Saturday counts as Friday night.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

pub const NUM_SLOTS: usize = 16;

/// Hour at which the night group ends and the morning group starts.
pub const DAY_START_HOUR: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DayGroup {
    MonThu,
    Friday,
    Saturday,
    Sunday,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HourGroup {
    Morning,
    Noon,
    Afternoon,
    Night,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeSlot {
    pub day_group: DayGroup,
    pub hour_group: HourGroup,
}

impl DayGroup {
    pub const ALL: [DayGroup; 4] = [
        DayGroup::MonThu,
        DayGroup::Friday,
        DayGroup::Saturday,
        DayGroup::Sunday,
    ];

    pub fn of_weekday(day: Weekday) -> Self {
        match day {
            Weekday::Mon | Weekday::Tue | Weekday::Wed | Weekday::Thu => DayGroup::MonThu,
            Weekday::Fri => DayGroup::Friday,
            Weekday::Sat => DayGroup::Saturday,
            Weekday::Sun => DayGroup::Sunday,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            DayGroup::MonThu => "MonThu",
            DayGroup::Friday => "Friday",
            DayGroup::Saturday => "Saturday",
            DayGroup::Sunday => "Sunday",
        }
    }

    /// Calendar weekdays belonging to this group.
    pub fn weekdays(self) -> &'static [Weekday] {
        match self {
            DayGroup::MonThu => &[Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu],
            DayGroup::Friday => &[Weekday::Fri],
            DayGroup::Saturday => &[Weekday::Sat],
            DayGroup::Sunday => &[Weekday::Sun],
        }
    }
}

impl HourGroup {
    pub const ALL: [HourGroup; 4] = [
        HourGroup::Morning,
        HourGroup::Noon,
        HourGroup::Afternoon,
        HourGroup::Night,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            HourGroup::Morning => "Morning",
            HourGroup::Noon => "Noon",
            HourGroup::Afternoon => "Afternoon",
            HourGroup::Night => "Night",
        }
    }

    /// Start and end hour measured from midnight of the owning day. Night
    /// ends past 24, on the following calendar day.
    pub fn hours(self) -> (u32, u32) {
        match self {
            HourGroup::Morning => (5, 11),
            HourGroup::Noon => (11, 15),
            HourGroup::Afternoon => (15, 20),
            HourGroup::Night => (20, 24 + DAY_START_HOUR),
        }
    }

    /// Group of a clock hour in `0..24`.
    pub fn of_hour(hour: u32) -> Self {
        match hour {
            5..=10 => HourGroup::Morning,
            11..=14 => HourGroup::Noon,
            15..=19 => HourGroup::Afternoon,
            _ => HourGroup::Night,
        }
    }
}

impl TimeSlot {
    pub const fn new(day_group: DayGroup, hour_group: HourGroup) -> Self {
        TimeSlot {
            day_group,
            hour_group,
        }
    }

    /// Dense index in `0..16`: day group major, hour group minor.
    pub fn index(self) -> usize {
        self.day_group.index() * 4 + self.hour_group.index()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= NUM_SLOTS {
            return None;
        }
        Some(TimeSlot::new(
            DayGroup::ALL[index / 4],
            HourGroup::ALL[index % 4],
        ))
    }

    /// `<day>_<hour>`, used for file names.
    pub fn key(self) -> String {
        format!("{}_{}", self.day_group.label(), self.hour_group.label())
    }
}

/// All 16 slots, day groups outer, hour groups inner.
pub fn all_slots() -> [TimeSlot; NUM_SLOTS] {
    std::array::from_fn(|i| TimeSlot::from_index(i).unwrap())
}

/// Classifies a city-local timestamp. Times before 05:00 belong to the night
/// of the previous calendar day.
pub fn classify_timestamp(ts: NaiveDateTime) -> TimeSlot {
    let hour = ts.hour();
    let weekday = if hour < DAY_START_HOUR {
        ts.weekday().pred()
    } else {
        ts.weekday()
    };
    TimeSlot::new(DayGroup::of_weekday(weekday), HourGroup::of_hour(hour))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} {label:?}")]
pub struct UnknownLabel {
    kind: &'static str,
    pub label: String,
}

impl FromStr for DayGroup {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DayGroup::ALL
            .into_iter()
            .find(|d| d.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownLabel {
                kind: "day group",
                label: s.to_string(),
            })
    }
}

impl FromStr for HourGroup {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HourGroup::ALL
            .into_iter()
            .find(|h| h.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownLabel {
                kind: "hour group",
                label: s.to_string(),
            })
    }
}

impl FromStr for TimeSlot {
    type Err = UnknownLabel;

    /// Parses `<day>_<hour>` or `<day>,<hour>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (day, hour) = s.split_once(['_', ',', ':']).ok_or_else(|| UnknownLabel {
            kind: "slot",
            label: s.to_string(),
        })?;
        Ok(TimeSlot::new(day.parse()?, hour.parse()?))
    }
}

impl fmt::Display for DayGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for HourGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for TimeSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.day_group, self.hour_group)
    }
}
