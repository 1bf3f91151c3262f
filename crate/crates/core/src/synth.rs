//! Synthetic CDR scenarios with planted homes and mobility.
//!
//! Each commune is a unit square on a grid with one antenna at its centroid.
//! Every user lives in one commune; in each slot they place a Poisson number
//! of calls at communes drawn from the kernel row of their (home, slot).
//! Census populations are planted resident counts times a fixed factor, so
//! the expected city pulse of every slot is known in closed form.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::geomap::CommuneId;
use crate::ingest::{CdrRecord, CensusTable, CDR_HEADER};
use crate::io_util::{create_output, write_file};
use crate::population::CityPulseMatrix;
use crate::seed::{mix64, substream};
use crate::timegrid::{all_slots, DayGroup, HourGroup, TimeSlot, NUM_SLOTS};

const ISO: &str = "%Y-%m-%dT%H:%M:%S";
const USERS_PER_WRITE: usize = 1024;

/// Probability of being in each commune, per (home commune, slot):
/// `rows[home][slot][commune]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MobilityKernel {
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl MobilityKernel {
    /// Everyone stays home in every slot.
    pub fn stay_home(n: usize) -> Self {
        Self::home_biased(n, 1.0)
    }

    /// Mass `stay` at home, the rest spread evenly over the other communes.
    pub fn home_biased(n: usize, stay: f64) -> Self {
        let away = if n > 1 { (1.0 - stay) / (n - 1) as f64 } else { 0.0 };
        let row = |home: usize| -> Vec<f64> {
            (0..n).map(|c| if c == home { stay } else { away }).collect()
        };
        MobilityKernel {
            rows: (0..n).map(|h| vec![row(h); NUM_SLOTS]).collect(),
        }
    }

    /// Random rows with mass at least `min_home` at home, drawn from `seed`.
    pub fn random(n: usize, min_home: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|home| {
                (0..NUM_SLOTS)
                    .map(|_| {
                        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                        let total: f64 = w.iter().sum();
                        let stay = min_home + (1.0 - min_home) * rng.random::<f64>();
                        let mut row: Vec<f64> = w.iter().map(|x| (1.0 - stay) * x / total).collect();
                        row[home] += stay;
                        renormalize(&mut row);
                        row
                    })
                    .collect()
            })
            .collect();
        MobilityKernel { rows }
    }

    pub fn set_slot(&mut self, slot: TimeSlot, home: usize, row: Vec<f64>) {
        self.rows[home][slot.index()] = row;
    }

    pub fn row(&self, home: usize, slot: TimeSlot) -> &[f64] {
        &self.rows[home][slot.index()]
    }
}

fn renormalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= total);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_communes: usize,
    /// Planted residents per commune, commune `i + 1` at index `i`.
    pub users_per_commune: Vec<usize>,
    pub calls_per_slot_lambda: f64,
    pub mobility_kernel: MobilityKernel,
    /// Forces at least one call per user and slot.
    pub guarantee_min_calls: bool,
    /// Census population per planted resident.
    pub census_factor: u64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(
        n_communes: usize,
        users_per_commune: usize,
        lambda: f64,
        kernel: MobilityKernel,
        seed: u64,
    ) -> Self {
        ScenarioConfig {
            n_communes,
            users_per_commune: vec![users_per_commune; n_communes],
            calls_per_slot_lambda: lambda,
            mobility_kernel: kernel,
            guarantee_min_calls: true,
            census_factor: 50,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_communes;
        let fail = |msg: String| Err(Error::Config(msg));
        if n == 0 {
            return fail("scenario needs at least one commune".into());
        }
        if self.users_per_commune.len() != n {
            return fail(format!(
                "users_per_commune has {} entries for {n} communes",
                self.users_per_commune.len()
            ));
        }
        if !(self.calls_per_slot_lambda > 0.0 && self.calls_per_slot_lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.calls_per_slot_lambda));
        }
        if self.census_factor == 0 {
            return fail("census_factor must be positive".into());
        }
        let k = &self.mobility_kernel.rows;
        if k.len() != n || k.iter().any(|r| r.len() != NUM_SLOTS) {
            return fail(format!("kernel must be {n} x {NUM_SLOTS} rows"));
        }
        for (home, per_slot) in k.iter().enumerate() {
            for (s, row) in per_slot.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != n || row.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                    return fail(format!(
                        "kernel row for home {} slot {} does not sum to 1 (sum {sum})",
                        home + 1,
                        TimeSlot::from_index(s).unwrap().key()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.users_per_commune.iter().sum()
    }

    pub fn commune_ids(&self) -> Vec<CommuneId> {
        (1..=self.n_communes as u32).map(CommuneId).collect()
    }

    pub fn census(&self) -> CensusTable {
        CensusTable {
            pop: self
                .users_per_commune
                .iter()
                .enumerate()
                .map(|(i, &u)| (CommuneId(i as u32 + 1), u as u64 * self.census_factor))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub homes: BTreeMap<String, CommuneId>,
    pub census: CensusTable,
    /// Row-normalized planted mixing matrix per slot, in slot order.
    pub expected_cpm: Vec<CityPulseMatrix>,
    /// Planted expected presence per slot and commune.
    pub expected_ep: Vec<Vec<f64>>,
}

/// Paths written by [`generate`].
#[derive(Debug, Clone)]
pub struct ScenarioFiles {
    pub cdr: PathBuf,
    pub antennas: PathBuf,
    pub antenna_map: PathBuf,
    pub geometry: PathBuf,
    pub census: PathBuf,
    pub survey: PathBuf,
    pub truth: PathBuf,
}

impl ScenarioFiles {
    pub fn in_dir(dir: &Path) -> Self {
        ScenarioFiles {
            cdr: dir.join("cdr.csv"),
            antennas: dir.join("antennas.csv"),
            antenna_map: dir.join("antenna_map.csv"),
            geometry: dir.join("communes.geojson"),
            census: dir.join("census.csv"),
            survey: dir.join("survey.csv"),
            truth: dir.join("truth.json"),
        }
    }
}

/// A validated scenario that can emit its records in memory or to files.
pub struct Scenario {
    config: ScenarioConfig,
    homes: Vec<usize>,
    user_ids: Vec<String>,
    cdfs: Vec<Vec<f64>>,
    days: [Vec<NaiveDate>; 4],
    poisson: Poisson<f64>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let homes: Vec<usize> = config
            .users_per_commune
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let key = mix64(config.seed);
        let user_ids = (0..homes.len() as u64)
            .map(|k| format!("{:016x}", mix64(k ^ key)))
            .collect();
        let cdfs = config
            .mobility_kernel
            .rows
            .iter()
            .flat_map(|per_slot| {
                per_slot.iter().map(|row| {
                    row.iter()
                        .scan(0.0, |acc, &p| {
                            *acc += p;
                            Some(*acc)
                        })
                        .collect()
                })
            })
            .collect();
        let poisson = Poisson::new(config.calls_per_slot_lambda)
            .map_err(|e| Error::Config(format!("lambda: {e}")))?;
        Ok(Scenario {
            homes,
            user_ids,
            cdfs,
            days: study_days(),
            poisson,
            config,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn n_users(&self) -> usize {
        self.homes.len()
    }

    pub fn user_id(&self, k: usize) -> &str {
        &self.user_ids[k]
    }

    /// Planted home (dense commune index) of user `k`.
    pub fn home(&self, k: usize) -> usize {
        self.homes[k]
    }

    /// All calls of user `k`, reproducible from the scenario seed alone.
    pub fn user_records(&self, k: usize) -> Vec<CdrRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(self.config.seed, k as u64));
        let n = self.config.n_communes;
        let home = self.homes[k];
        let mut out = Vec::new();
        for slot in all_slots() {
            let mut calls = self.poisson.sample(&mut rng) as usize;
            if self.config.guarantee_min_calls {
                calls = calls.max(1);
            }
            let cdf = &self.cdfs[home * NUM_SLOTS + slot.index()];
            for _ in 0..calls {
                let u: f64 = rng.random();
                let commune = cdf.partition_point(|&c| c <= u).min(n - 1);
                let timestamp = self.draw_time(slot, &mut rng);
                let callee = rng.random_range(0..self.n_users());
                out.push(CdrRecord {
                    caller: self.user_ids[k].clone(),
                    callee: self.user_ids[callee].clone(),
                    timestamp,
                    duration: rng.random_range(1..600),
                    antenna: antenna_id(commune),
                });
            }
        }
        out
    }

    fn draw_time(&self, slot: TimeSlot, rng: &mut ChaCha8Rng) -> NaiveDateTime {
        let days = &self.days[slot.day_group.index()];
        let day = days[rng.random_range(0..days.len())];
        let (start, end) = slot.hour_group.hours();
        let second = rng.random_range(i64::from(start) * 3600..i64::from(end) * 3600);
        day.and_hms_opt(0, 0, 0).unwrap() + TimeDelta::seconds(second)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let n = self.config.n_communes;
        let census = self.config.census();
        let pops: Vec<f64> = census.pop.values().map(|&p| p as f64).collect();
        let mut expected_cpm = Vec::with_capacity(NUM_SLOTS);
        let mut expected_ep = Vec::with_capacity(NUM_SLOTS);
        for slot in all_slots() {
            let mut matrix = vec![vec![0.0; n]; n];
            for (present, row) in matrix.iter_mut().enumerate() {
                for (home, cell) in row.iter_mut().enumerate() {
                    *cell = pops[home] * self.config.mobility_kernel.row(home, slot)[present];
                }
            }
            expected_ep.push(matrix.iter().map(|r| r.iter().sum()).collect());
            for row in &mut matrix {
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    row.iter_mut().for_each(|v| *v /= sum);
                }
            }
            expected_cpm.push(CityPulseMatrix {
                slot,
                normalized: true,
                commune_ids: self.config.commune_ids(),
                matrix,
            });
        }
        GroundTruth {
            homes: self
                .user_ids
                .iter()
                .zip(&self.homes)
                .map(|(u, &h)| (u.clone(), CommuneId(h as u32 + 1)))
                .collect(),
            census,
            expected_cpm,
            expected_ep,
        }
    }

    /// Writes every scenario file into `dir` and returns their paths with
    /// the ground truth.
    pub fn write(&self, dir: &Path) -> Result<(ScenarioFiles, GroundTruth)> {
        let files = ScenarioFiles::in_dir(dir);
        self.write_cdr(&files.cdr)?;
        write_file("antennas", &files.antennas, self.antennas_csv().as_bytes())?;
        write_file("antenna map", &files.antenna_map, self.antenna_map_csv().as_bytes())?;
        let geometry = serde_json::to_vec_pretty(&self.geometry()).expect("json");
        write_file("geometry", &files.geometry, &geometry)?;
        let truth = self.ground_truth();
        let mut census = String::from("commune_id,population\n");
        for (c, p) in &truth.census.pop {
            census.push_str(&format!("{c},{p}\n"));
        }
        write_file("census", &files.census, census.as_bytes())?;
        let mut survey = String::from("commune_id,hour_group,people\n");
        for c in 0..self.config.n_communes {
            for h in HourGroup::ALL {
                let slot = TimeSlot::new(DayGroup::MonThu, h);
                survey.push_str(&format!("{},{h},{:.3}\n", c + 1, truth.expected_ep[slot.index()][c]));
            }
        }
        write_file("survey", &files.survey, survey.as_bytes())?;
        let json = serde_json::to_vec_pretty(&truth).expect("json");
        write_file("truth", &files.truth, &json)?;
        Ok((files, truth))
    }

    pub fn write_cdr(&self, path: &Path) -> Result<()> {
        let mut out = create_output("cdr", path)?;
        let io = |e| Error::io("cdr", path, e);
        writeln!(out, "{CDR_HEADER}").map_err(io)?;
        let users: Vec<usize> = (0..self.n_users()).collect();
        for chunk in users.chunks(USERS_PER_WRITE) {
            let text: Vec<String> = chunk
                .par_iter()
                .map(|&k| {
                    let mut s = String::new();
                    for r in self.user_records(k) {
                        s.push_str(&format!(
                            "{},{},{},{},{}\n",
                            r.caller,
                            r.callee,
                            r.timestamp.format(ISO),
                            r.duration,
                            r.antenna
                        ));
                    }
                    s
                })
                .collect();
            for s in text {
                out.write_all(s.as_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    fn cell_origin(&self, commune: usize) -> (f64, f64) {
        let cols = (self.config.n_communes as f64).sqrt().ceil() as usize;
        ((commune % cols) as f64, (commune / cols) as f64)
    }

    fn antennas_csv(&self) -> String {
        let mut s = String::from("antenna_id,lon,lat\n");
        for c in 0..self.config.n_communes {
            let (x, y) = self.cell_origin(c);
            s.push_str(&format!("{},{},{}\n", antenna_id(c), x + 0.5, y + 0.5));
        }
        s
    }

    fn antenna_map_csv(&self) -> String {
        let mut s = String::from("antenna_id,commune_id\n");
        for c in 0..self.config.n_communes {
            s.push_str(&format!("{},{}\n", antenna_id(c), c + 1));
        }
        s
    }

    pub fn geometry(&self) -> serde_json::Value {
        let features: Vec<serde_json::Value> = (0..self.config.n_communes)
            .map(|c| {
                let (x, y) = self.cell_origin(c);
                json!({
                    "type": "Feature",
                    "properties": {"commune": c + 1, "name": format!("Commune {}", c + 1)},
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[[x, y], [x + 1.0, y], [x + 1.0, y + 1.0], [x, y + 1.0], [x, y]]]
                    }
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }
}

/// Convenience wrapper: validate, write files, return ground truth.
pub fn generate(config: ScenarioConfig, dir: &Path) -> Result<(ScenarioFiles, GroundTruth)> {
    Scenario::new(config)?.write(dir)
}

pub fn antenna_id(commune: usize) -> String {
    format!("A{:03}", commune + 1)
}

/// Study period, 2011-11-01 to 2012-03-30, split by the day group of each
/// date.
fn study_days() -> [Vec<NaiveDate>; 4] {
    let start = NaiveDate::from_ymd_opt(2011, 11, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2012, 3, 30).unwrap();
    let mut days: [Vec<NaiveDate>; 4] = Default::default();
    for d in start.iter_days().take_while(|d| *d <= end) {
        days[DayGroup::of_weekday(d.weekday()).index()].push(d);
    }
    days
}
