//! Readers for the CDR stream, census table and survey table.
//!
//! The CDR reader is single pass: it hands out records (or batches of raw
//! lines for parallel parsing) and never buffers more than one batch.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomap::{csv_rows, CommuneId};
use crate::io_util::{clean_header, open_input};
use crate::timegrid::HourGroup;

pub const CDR_HEADER: &str = "caller,callee,timestamp,duration,antenna";
const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdrRecord {
    pub caller: String,
    pub callee: String,
    pub timestamp: NaiveDateTime,
    pub duration: u64,
    pub antenna: String,
}

/// A malformed CDR line. Recoverable: the stream skips it.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct LineError {
    pub line: u64,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub total_lines: u64,
    pub parsed: u64,
    pub dropped_parse: u64,
    pub dropped_unmapped_antenna: u64,
}

impl IngestStats {
    pub fn observe<T, E>(&mut self, result: &Result<T, E>) {
        self.total_lines += 1;
        match result {
            Ok(_) => self.parsed += 1,
            Err(_) => self.dropped_parse += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampFormat {
    /// `YYYY-MM-DDTHH:MM:SS`
    Iso,
    /// Seconds since the Unix epoch.
    Epoch,
}

impl TimestampFormat {
    /// Guesses the format from one timestamp field.
    pub fn detect(field: &str) -> Self {
        let f = field.trim();
        let digits = f.strip_prefix('-').unwrap_or(f);
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            TimestampFormat::Epoch
        } else {
            TimestampFormat::Iso
        }
    }
}

/// Parses CDR lines once the file's timestamp format is known.
#[derive(Debug, Clone, Copy)]
pub struct CdrParser {
    pub format: TimestampFormat,
    /// Shift applied to every timestamp, for data not recorded in city time.
    pub utc_offset: TimeDelta,
}

impl CdrParser {
    pub fn new(format: TimestampFormat) -> Self {
        CdrParser {
            format,
            utc_offset: TimeDelta::zero(),
        }
    }

    pub fn with_offset_seconds(mut self, seconds: i64) -> Self {
        self.utc_offset = TimeDelta::seconds(seconds);
        self
    }

    pub fn parse(&self, line: &str, line_no: u64) -> Result<CdrRecord, LineError> {
        let err = |msg: String| LineError { line: line_no, msg };
        let mut it = line.trim_end_matches(['\r', '\n']).split(',');
        let mut next = || it.next();
        let (Some(caller), Some(callee), Some(ts), Some(duration), Some(antenna), None) =
            (next(), next(), next(), next(), next(), next())
        else {
            return Err(err("expected 5 fields".into()));
        };
        if caller.is_empty() || callee.is_empty() {
            return Err(err("empty caller or callee".into()));
        }
        if antenna.is_empty() {
            return Err(err("empty antenna".into()));
        }
        let timestamp = self
            .parse_timestamp(ts)
            .ok_or_else(|| err(format!("invalid timestamp {ts:?}")))?;
        let duration = duration
            .trim()
            .parse::<u64>()
            .map_err(|_| err(format!("invalid duration {duration:?}")))?;
        Ok(CdrRecord {
            caller: caller.to_string(),
            callee: callee.to_string(),
            timestamp,
            duration,
            antenna: antenna.to_string(),
        })
    }

    fn parse_timestamp(&self, field: &str) -> Option<NaiveDateTime> {
        let ts = match self.format {
            TimestampFormat::Iso => NaiveDateTime::parse_from_str(field.trim(), ISO_FORMAT).ok()?,
            TimestampFormat::Epoch => {
                DateTime::from_timestamp(field.trim().parse().ok()?, 0)?.naive_utc()
            }
        };
        ts.checked_add_signed(self.utc_offset)
    }
}

/// Streaming reader over a CDR CSV file.
///
/// Iterating yields records in file order; malformed lines come out as
/// [`LineError`]s and are tallied in [`CdrReader::stats`].
pub struct CdrReader {
    lines: Box<dyn BufRead + Send>,
    path: PathBuf,
    line_no: u64,
    parser: Option<CdrParser>,
    offset_seconds: i64,
    stats: IngestStats,
    buf: String,
}

impl CdrReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut lines = open_input("cdr", path)?;
        let mut header = String::new();
        lines
            .read_line(&mut header)
            .map_err(|e| Error::io("cdr", path, e))?;
        if !header.is_empty() && clean_header(&header) != CDR_HEADER {
            return Err(Error::parse(
                "cdr",
                1,
                format!("expected header {CDR_HEADER:?}, got {:?}", header.trim()),
            ));
        }
        Ok(CdrReader {
            lines,
            path: path.to_path_buf(),
            line_no: 1,
            parser: None,
            offset_seconds: 0,
            stats: IngestStats::default(),
            buf: String::new(),
        })
    }

    /// Shifts every timestamp by a fixed number of seconds.
    pub fn with_offset_seconds(mut self, seconds: i64) -> Self {
        self.offset_seconds = seconds;
        self
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    /// Parser for this file, fixed by the first data row. `None` before any
    /// data row has been read.
    pub fn parser(&self) -> Option<CdrParser> {
        self.parser
    }

    /// Reads up to `max` non-blank data lines into `batch` (cleared first),
    /// paired with their 1-based line numbers. Returns the number read; 0
    /// means end of file. Lines returned here are not counted in
    /// [`CdrReader::stats`]; the caller reports parse outcomes through
    /// [`IngestStats::observe`].
    pub fn read_batch(&mut self, batch: &mut Vec<(u64, String)>, max: usize) -> Result<usize> {
        batch.clear();
        while batch.len() < max {
            match self.next_line()? {
                Some(line) => batch.push((self.line_no, line)),
                None => break,
            }
        }
        Ok(batch.len())
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        loop {
            self.buf.clear();
            let n = self
                .lines
                .read_line(&mut self.buf)
                .map_err(|e| Error::io("cdr", &self.path, e))?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let line = self.buf.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            if self.parser.is_none() {
                let ts = line.split(',').nth(2).unwrap_or("");
                self.parser = Some(
                    CdrParser::new(TimestampFormat::detect(ts))
                        .with_offset_seconds(self.offset_seconds),
                );
            }
            return Ok(Some(line.to_string()));
        }
    }
}

impl Iterator for CdrReader {
    type Item = Result<Result<CdrRecord, LineError>>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.next_line() {
            Ok(Some(line)) => line,
            Ok(None) => return None,
            Err(e) => return Some(Err(e)),
        };
        let parsed = self.parser.expect("set by next_line").parse(&line, self.line_no);
        self.stats.observe(&parsed);
        Some(Ok(parsed))
    }
}

/// Census population per commune.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusTable {
    pub pop: BTreeMap<CommuneId, u64>,
}

impl CensusTable {
    pub fn total(&self) -> u64 {
        self.pop.values().sum()
    }

    pub fn get(&self, commune: CommuneId) -> Option<u64> {
        self.pop.get(&commune).copied()
    }

    /// Checks the table against the communes under analysis: every commune
    /// needs an entry and no extra communes are allowed.
    pub fn check_covers(&self, communes: &[CommuneId]) -> Result<()> {
        let missing: Vec<CommuneId> = communes
            .iter()
            .copied()
            .filter(|c| !self.pop.contains_key(c))
            .collect();
        if !missing.is_empty() {
            return Err(Error::CensusIncomplete { missing });
        }
        if let Some(&extra) = self.pop.keys().find(|c| !communes.contains(c)) {
            return Err(Error::CensusUnknownCommune(extra));
        }
        Ok(())
    }
}

/// Reads a `commune_id,population` CSV. Completeness against the commune set
/// is checked separately by [`CensusTable::check_covers`].
pub fn load_census(path: &Path) -> Result<CensusTable> {
    const WHAT: &str = "census";
    let mut table = CensusTable::default();
    for row in csv_rows(WHAT, path, &["commune_id", "population"])? {
        let (line, fields) = row?;
        let commune: CommuneId = fields[0]
            .parse()
            .map_err(|_| Error::parse(WHAT, line, format!("invalid commune id {:?}", fields[0])))?;
        let pop: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(WHAT, line, format!("invalid population {:?}", fields[1])))?;
        if pop <= 0 {
            return Err(Error::NonPositivePopulation { commune, line });
        }
        if table.pop.insert(commune, pop as u64).is_some() {
            return Err(Error::parse(WHAT, line, format!("duplicate commune {commune}")));
        }
    }
    Ok(table)
}

/// Survey estimates of people present per commune and hour group on a
/// typical working day, stored in absolute persons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveyTable {
    pub estimate: BTreeMap<(CommuneId, HourGroup), f64>,
}

/// Reads `commune_id,hour_group,people` (absolute persons) or
/// `commune_id,hour_group,people_thousands`.
pub fn load_survey(path: &Path) -> Result<SurveyTable> {
    const WHAT: &str = "survey";
    let mut lines = open_input(WHAT, path)?.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(WHAT, path, e))?,
        None => return Err(Error::parse(WHAT, 1, "missing header")),
    };
    let scale = match clean_header(&header) {
        "commune_id,hour_group,people" => 1.0,
        "commune_id,hour_group,people_thousands" => 1000.0,
        other => {
            return Err(Error::parse(
                WHAT,
                1,
                format!("expected header \"commune_id,hour_group,people\", got {other:?}"),
            ))
        }
    };
    let mut table = SurveyTable::default();
    for (i, line) in lines.enumerate() {
        let line_no = i as u64 + 2;
        let line = line.map_err(|e| Error::io(WHAT, path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [commune, hour, people] = fields[..] else {
            return Err(Error::parse(WHAT, line_no, "expected 3 fields"));
        };
        let commune: CommuneId = commune
            .parse()
            .map_err(|_| Error::parse(WHAT, line_no, format!("invalid commune id {commune:?}")))?;
        let hour: HourGroup = hour.parse().map_err(|_| Error::UnknownHourGroup {
            label: hour.to_string(),
            line: line_no,
        })?;
        let people: f64 = people
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| Error::parse(WHAT, line_no, format!("invalid people value {people:?}")))?;
        if table.estimate.insert((commune, hour), people * scale).is_some() {
            return Err(Error::DuplicateSurveyCell {
                commune,
                hour: hour.to_string(),
                line: line_no,
            });
        }
    }
    Ok(table)
}
