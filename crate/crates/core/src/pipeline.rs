//! End-to-end run: ingest, map, aggregate, filter, home detection, scaling
//! and expected population for every slot, plus the report files.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomap::{
    build_antenna_map, load_antenna_map, load_antennas, load_commune_geometry, AntennaCommuneMap,
    CommuneId, CommuneIndex,
};
use crate::ingest::{load_census, load_survey, CdrReader, CensusTable, IngestStats};
use crate::io_util::{clean_header, create_output, open_input, write_file};
use crate::ldm::{filter_users, Accumulator, CountSides, UserCounts, UserSet};
use crate::population::{
    assign_homes, city_pulse_matrix, expected_population_all, scaling_factors, CityPulseMatrix,
    EpTable, HomeAssignment, PopulationEstimate, ScalingFactors,
};
use crate::timegrid::{classify_timestamp, DayGroup, HourGroup, TimeSlot};
use crate::validation::{compare, DiffReport};

const BATCH_LINES: usize = 1 << 16;

#[derive(Debug, Clone)]
pub enum AntennaSource {
    /// `antenna_id,lon,lat` registry, mapped through the commune geometry.
    Registry(PathBuf),
    /// Precomputed `antenna_id,commune_id` map.
    Map(PathBuf),
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub cdr: PathBuf,
    pub antennas: AntennaSource,
    /// Required with a registry; optional with a precomputed map, in which
    /// case the census defines the commune set.
    pub geometry: Option<PathBuf>,
    pub census: PathBuf,
    pub survey: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub tau: u32,
    pub seed: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
    pub sides: CountSides,
    pub utc_offset_seconds: i64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            tau: 1,
            seed: 0,
            threads: 0,
            sides: CountSides::CallerOnly,
            utc_offset_seconds: 0,
        }
    }
}

/// Everything downstream of the aggregated counts.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub users: UserSet,
    pub homes: HomeAssignment,
    pub factors: ScalingFactors,
    /// One estimate per slot, in slot order.
    pub estimates: Vec<PopulationEstimate>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub communes: CommuneIndex,
    pub antenna_map: AntennaCommuneMap,
    pub ingest: IngestStats,
    pub counts: UserCounts,
    pub census: CensusTable,
    pub analysis: Analysis,
    pub validation: Option<DiffReport>,
}

/// Filter, homes, scaling and all 16 estimates from aggregated counts.
pub fn analyze(
    counts: &UserCounts,
    communes: &CommuneIndex,
    census: &CensusTable,
    tau: u32,
    seed: u64,
) -> Result<Analysis> {
    census.check_covers(communes.ids())?;
    let users = filter_users(counts, tau)?;
    let homes = assign_homes(counts, &users, seed)?;
    let factors = scaling_factors(census, communes, &homes)?;
    let estimates = expected_population_all(counts, &homes, &factors);
    Ok(Analysis {
        users,
        homes,
        factors,
        estimates,
    })
}

pub fn run(inputs: &PipelineInputs, opts: &PipelineOptions) -> Result<PipelineOutput> {
    with_threads(opts.threads, || run_inner(inputs, opts))
}

/// Runs `f` on a dedicated pool of `threads` workers (global pool for 0).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn run_inner(inputs: &PipelineInputs, opts: &PipelineOptions) -> Result<PipelineOutput> {
    let geometry = inputs
        .geometry
        .as_deref()
        .map(load_commune_geometry)
        .transpose()?;
    let census = load_census(&inputs.census)?;
    let antenna_map = match (&inputs.antennas, &geometry) {
        (AntennaSource::Registry(path), Some(geoms)) => build_antenna_map(&load_antennas(path)?, geoms)?,
        (AntennaSource::Registry(_), None) => {
            return Err(Error::Config("an antenna registry needs commune geometry".into()))
        }
        (AntennaSource::Map(path), _) => load_antenna_map(path)?,
    };
    let communes = match &geometry {
        Some(g) => CommuneIndex::new(g.iter().map(|c| c.id))?,
        None => CommuneIndex::new(census.pop.keys().copied())?,
    };
    census.check_covers(communes.ids())?;
    let survey = inputs.survey.as_deref().map(load_survey).transpose()?;
    let dense = antenna_map.dense(&communes)?;
    let (counts, ingest) = aggregate_cdr(&inputs.cdr, &dense, communes.len(), opts)?;
    let analysis = analyze(&counts, &communes, &census, opts.tau, opts.seed)?;
    let validation = survey
        .map(|s| compare(&EpTable::from_estimates(&analysis.estimates), &s))
        .transpose()?;
    Ok(PipelineOutput {
        communes,
        antenna_map,
        ingest,
        counts,
        census,
        analysis,
        validation,
    })
}

struct Event {
    caller: String,
    callee: String,
    slot: TimeSlot,
    commune: Option<usize>,
}

/// Streams a CDR file into per-user count tensors. Lines are parsed in
/// parallel one batch at a time; memory is bounded by the batch size plus
/// the tensors.
pub fn aggregate_cdr(
    path: &Path,
    antennas: &HashMap<String, usize>,
    n_communes: usize,
    opts: &PipelineOptions,
) -> Result<(UserCounts, IngestStats)> {
    let mut reader = CdrReader::open(path)?.with_offset_seconds(opts.utc_offset_seconds);
    let mut stats = IngestStats::default();
    let mut acc = Accumulator::new(n_communes);
    let mut batch = Vec::with_capacity(BATCH_LINES);
    while reader.read_batch(&mut batch, BATCH_LINES)? > 0 {
        let parser = reader.parser().expect("set once a line is read");
        let events: Vec<Result<Event, _>> = batch
            .par_iter()
            .map(|(line_no, line)| {
                parser.parse(line, *line_no).map(|r| Event {
                    slot: classify_timestamp(r.timestamp),
                    commune: antennas.get(&r.antenna).copied(),
                    caller: r.caller,
                    callee: r.callee,
                })
            })
            .collect();
        for ev in events {
            stats.observe(&ev);
            let Ok(ev) = ev else { continue };
            let Some(commune) = ev.commune else {
                stats.dropped_unmapped_antenna += 1;
                continue;
            };
            acc.add(&ev.caller, ev.slot, commune);
            if opts.sides == CountSides::CallerAndCallee {
                acc.add(&ev.callee, ev.slot, commune);
            }
        }
    }
    Ok((acc.finish(), stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorExtreme {
    pub commune: CommuneId,
    pub factor: f64,
}

/// Run summary written to `stats.json`. Holds nothing that varies between
/// runs with the same inputs and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub communes: usize,
    pub antennas_mapped: usize,
    pub antennas_unmapped: usize,
    pub ingest: IngestStats,
    pub users_observed: usize,
    pub users_filtered: usize,
    pub tau: u32,
    pub seed: u64,
    pub tie_count: usize,
    pub census_total: u64,
    pub scaling_factor_min: Option<FactorExtreme>,
    pub scaling_factor_max: Option<FactorExtreme>,
    pub residents: BTreeMap<CommuneId, u64>,
}

impl PipelineOutput {
    pub fn stats(&self, opts: &PipelineOptions) -> RunStats {
        let f = &self.analysis.factors;
        let range = f.range();
        RunStats {
            communes: self.communes.len(),
            antennas_mapped: self.antenna_map.mapping.len(),
            antennas_unmapped: self.antenna_map.unmapped.len(),
            ingest: self.ingest,
            users_observed: self.counts.len(),
            users_filtered: self.analysis.users.len(),
            tau: opts.tau,
            seed: opts.seed,
            tie_count: self.analysis.homes.tie_count,
            census_total: self.census.total(),
            scaling_factor_min: range.map(|((commune, factor), _)| FactorExtreme { commune, factor }),
            scaling_factor_max: range.map(|(_, (commune, factor))| FactorExtreme { commune, factor }),
            residents: f.communes.iter().copied().zip(f.residents.iter().copied()).collect(),
        }
    }

    /// Writes `ep.csv`, `provenance.csv`, `cpm/<day>_<hour>.json`,
    /// `stats.json` and, with a survey, `validation.csv` and
    /// `validation.json`.
    pub fn write(&self, dir: &Path, opts: &PipelineOptions) -> Result<()> {
        let est = &self.analysis.estimates;
        write_file("ep report", &dir.join("ep.csv"), ep_csv(est).as_bytes())?;
        write_file("provenance report", &dir.join("provenance.csv"), provenance_csv(est).as_bytes())?;
        for e in est {
            let cpm = city_pulse_matrix(e, true);
            let path = dir.join("cpm").join(format!("{}.json", e.slot.key()));
            write_file("cpm", &path, &to_json(&cpm))?;
        }
        write_file("stats", &dir.join("stats.json"), &to_json(&self.stats(opts)))?;
        if let Some(report) = &self.validation {
            write_file("validation", &dir.join("validation.csv"), report.to_csv().as_bytes())?;
            write_file("validation", &dir.join("validation.json"), &to_json(report))?;
        }
        Ok(())
    }
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report types serialize");
    out.push(b'\n');
    out
}

pub fn ep_csv(estimates: &[PopulationEstimate]) -> String {
    let mut out = String::from("day_group,hour_group,commune_id,people\n");
    for e in estimates {
        for (c, v) in e.communes.iter().zip(&e.ep) {
            out.push_str(&format!(
                "{},{},{c},{v:.3}\n",
                e.slot.day_group, e.slot.hour_group
            ));
        }
    }
    out
}

pub fn provenance_csv(estimates: &[PopulationEstimate]) -> String {
    let mut out = String::from("day_group,hour_group,present_commune,home_commune,people\n");
    for e in estimates {
        for (i, present) in e.communes.iter().enumerate() {
            for (j, home) in e.communes.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{present},{home},{:.3}\n",
                    e.slot.day_group,
                    e.slot.hour_group,
                    e.by_home(i, j)
                ));
            }
        }
    }
    out
}

fn read_rows(
    what: &'static str,
    path: &Path,
    header: &str,
    mut f: impl FnMut(u64, &[&str]) -> Result<()>,
) -> Result<()> {
    let mut lines = open_input(what, path)?.lines();
    match lines.next() {
        Some(Ok(h)) if clean_header(&h) == header => {}
        Some(Err(e)) => return Err(Error::io(what, path, e)),
        _ => return Err(Error::parse(what, 1, format!("expected header {header:?}"))),
    }
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(what, path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        f(i as u64 + 2, &fields)?;
    }
    Ok(())
}

fn parse_slot(what: &'static str, line: u64, day: &str, hour: &str) -> Result<TimeSlot> {
    let day: DayGroup = day.parse().map_err(|e| Error::parse(what, line, format!("{e}")))?;
    let hour: HourGroup = hour.parse().map_err(|e| Error::parse(what, line, format!("{e}")))?;
    Ok(TimeSlot::new(day, hour))
}

fn parse_field<T: std::str::FromStr>(what: &'static str, line: u64, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(what, line, format!("invalid value {s:?}")))
}

/// Reads an `ep.csv` report back into a table.
pub fn read_ep_csv(path: &Path) -> Result<EpTable> {
    const WHAT: &str = "ep report";
    let mut cells: BTreeMap<(TimeSlot, CommuneId), f64> = BTreeMap::new();
    read_rows(WHAT, path, "day_group,hour_group,commune_id,people", |line, f| {
        let [day, hour, commune, people] = f else {
            return Err(Error::parse(WHAT, line, "expected 4 fields"));
        };
        let slot = parse_slot(WHAT, line, day, hour)?;
        cells.insert((slot, parse_field(WHAT, line, commune)?), parse_field(WHAT, line, people)?);
        Ok(())
    })?;
    let communes = CommuneIndex::new(cells.keys().map(|k| k.1))?;
    let mut slots: BTreeMap<TimeSlot, Vec<f64>> = BTreeMap::new();
    for ((slot, commune), v) in cells {
        let row = slots.entry(slot).or_insert_with(|| vec![0.0; communes.len()]);
        row[communes.index_of(commune).expect("collected above")] = v;
    }
    Ok(EpTable {
        communes: communes.ids().to_vec(),
        slots,
    })
}

/// People present in `present` during `slot`, by home commune, read from a
/// `provenance.csv` report.
pub fn read_provenance(path: &Path, slot: TimeSlot, present: CommuneId) -> Result<BTreeMap<CommuneId, f64>> {
    const WHAT: &str = "provenance report";
    let mut out = BTreeMap::new();
    let mut seen_present = false;
    read_rows(
        WHAT,
        path,
        "day_group,hour_group,present_commune,home_commune,people",
        |line, f| {
            let [day, hour, p, home, people] = f else {
                return Err(Error::parse(WHAT, line, "expected 5 fields"));
            };
            if parse_slot(WHAT, line, day, hour)? != slot {
                return Ok(());
            }
            if parse_field::<CommuneId>(WHAT, line, p)? != present {
                return Ok(());
            }
            seen_present = true;
            out.insert(parse_field(WHAT, line, home)?, parse_field(WHAT, line, people)?);
            Ok(())
        },
    )?;
    if !seen_present {
        return Err(Error::UnknownCommune(present));
    }
    Ok(out)
}

pub fn read_cpm_json(path: &Path) -> Result<CityPulseMatrix> {
    let reader = open_input("cpm", path)?;
    serde_json::from_reader(reader).map_err(|source| Error::Json { what: "cpm", source })
}

/// Writes the optional `user,day_group,hour_group,commune_id,count` dump.
pub fn write_tensor_dump(out: &PipelineOutput, path: &Path) -> Result<()> {
    out.counts.write_dump(&out.communes, path)
}

/// Writes arbitrary text rows, creating parent directories.
pub fn write_lines(what: &'static str, path: &Path, lines: &[String]) -> Result<()> {
    let mut out = create_output(what, path)?;
    let res = lines.iter().try_for_each(|l| writeln!(out, "{l}")).and_then(|_| out.flush());
    res.map_err(|e| Error::io(what, path, e))
}
