//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances are fixed constants below.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use chrono::{Datelike, NaiveDate, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use citypulse::geomap::{load_commune_geometry, CommuneId, CommuneIndex};
use citypulse::ingest::SurveyTable;
use citypulse::ldm::{accumulate, filter_users, normalize, Accumulator, CountSides, UserCounts};
use citypulse::pipeline::{self, analyze, AntennaSource, PipelineInputs, PipelineOptions};
use citypulse::population::{city_pulse_matrix, day_profile, EpTable};
use citypulse::render::{choropleth_svg, heatmap_svg, profile_svg, BarGroup};
use citypulse::synth::{antenna_id, MobilityKernel, Scenario, ScenarioConfig};
use citypulse::timegrid::{all_slots, classify_timestamp, DayGroup, HourGroup, TimeSlot};
use citypulse::validation::compare;

const CONSERVATION_TOL: f64 = 1e-9;
const CONSERVATION_SECONDS: f64 = 10.0;
const MARGINAL_TOL: f64 = 1e-9;
const STOCHASTIC_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-12;
const ORACLE_INSTANCES: u64 = 50;
const RECOVERY_SEEDS: u64 = 20;
const RECOVERY_CPM_TOL: f64 = 0.02;
const SURVEY_BAND: (f64, f64) = (0.015, 0.035);
const THROUGHPUT_LINES: usize = 1_000_000;
const THROUGHPUT_SECONDS: f64 = 60.0;
/// Peak heap at 1M lines over peak heap at 200k lines, same user base.
const MEMORY_RATIO_MAX: f64 = 1.5;

// Counting allocator for the memory criterion.
struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size > layout.size() {
                let now = LIVE.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                LIVE.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("conservation", conservation),
        ("marginal identity", marginal_identity),
        ("row-stochastic LDMs", row_stochastic),
        ("brute-force oracle", oracle_equivalence),
        ("stay-home degeneracy", stay_home),
        ("planted-truth recovery", planted_recovery),
        ("determinism across thread counts", determinism),
        ("filter semantics", filter_semantics),
        ("validation metric", validation_metric),
        ("throughput and memory", throughput),
        ("timegrid exhaustiveness", timegrid),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn antennas(n: usize) -> HashMap<String, usize> {
    (0..n).map(|c| (antenna_id(c), c)).collect()
}

/// Aggregates a scenario in memory, users in parallel chunks merged in order.
fn counts_of(s: &Scenario, skip: impl Fn(usize, &citypulse::ingest::CdrRecord) -> bool + Sync) -> UserCounts {
    let n = s.config().n_communes;
    let map = antennas(n);
    let users: Vec<usize> = (0..s.n_users()).collect();
    let parts: Vec<Accumulator> = users
        .par_chunks(512)
        .map(|chunk| {
            let mut acc = Accumulator::new(n);
            for &k in chunk {
                let recs: Vec<_> = s.user_records(k).into_iter().filter(|r| !skip(k, r)).collect();
                accumulate(&mut acc, &recs, &map, CountSides::CallerOnly);
            }
            acc
        })
        .collect();
    let mut acc = Accumulator::new(n);
    for p in parts {
        acc.merge(p);
    }
    acc.finish()
}

fn all_counts(s: &Scenario) -> UserCounts {
    counts_of(s, |_, _| false)
}

fn index(s: &Scenario) -> CommuneIndex {
    CommuneIndex::new(s.config().commune_ids()).unwrap()
}

fn scenario(cfg: ScenarioConfig) -> Scenario {
    Scenario::new(cfg).expect("valid scenario")
}

/// Random kernel whose weekday-night rows keep everyone at home, so every
/// commune is guaranteed residents.
fn resident_kernel(n: usize, min_home: f64, seed: u64) -> MobilityKernel {
    let mut k = MobilityKernel::random(n, min_home, seed);
    for home in 0..n {
        let mut row = vec![0.0; n];
        row[home] = 1.0;
        k.set_slot(TimeSlot::new(DayGroup::MonThu, HourGroup::Night), home, row);
    }
    k
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

// 1
fn conservation() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (n, users) in [(3, 200), (15, 100), (50, 40)] {
        let s = scenario(ScenarioConfig::new(n, users, 3.0, resident_kernel(n, 0.3, n as u64), n as u64));
        let counts = all_counts(&s);
        let census = s.config().census();
        let a = analyze(&counts, &index(&s), &census, 1, 1).map_err(|e| e.to_string())?;
        let total = census.total() as f64;
        for e in &a.estimates {
            worst = worst.max((e.total() - total).abs() / total);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= CONSERVATION_TOL, || format!("relative error {worst:e} > {CONSERVATION_TOL:e}"))?;
    ensure(secs < CONSERVATION_SECONDS, || format!("took {secs:.1}s"))?;
    Ok(format!("3/15/50 communes, worst relative error {worst:.1e}"))
}

// 2
fn marginal_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for (n, seed) in [(3, 7), (15, 8), (50, 9)] {
        let s = scenario(ScenarioConfig::new(n, 40, 3.0, resident_kernel(n, 0.2, seed), seed));
        let counts = all_counts(&s);
        let a = analyze(&counts, &index(&s), &s.config().census(), 1, 2).map_err(|e| e.to_string())?;
        for e in &a.estimates {
            for c in 0..n {
                let row: f64 = (0..n).map(|h| e.by_home(c, h)).sum();
                worst = worst.max(rel(row, e.ep[c]));
                cells += 1;
            }
        }
    }
    ensure(worst <= MARGINAL_TOL, || format!("relative error {worst:e}"))?;
    Ok(format!("{cells} cells, worst relative error {worst:.1e}"))
}

// 3
fn row_stochastic() -> Outcome {
    let n = 8;
    let mut cfg = ScenarioConfig::new(n, 60, 1.5, MobilityKernel::random(n, 0.3, 3), 3);
    cfg.guarantee_min_calls = false;
    let s = scenario(cfg);
    let counts = all_counts(&s);
    let kept = filter_users(&counts, 1).map_err(|e| e.to_string())?;
    let (mut stochastic_rows, mut zero_rows) = (0, 0);
    for (u, t) in counts.tensors.iter().enumerate() {
        let ldm = normalize(t);
        for slot in all_slots() {
            let row = ldm.row(slot);
            if t.row_sum(slot) == 0 {
                ensure(!kept.contains(u), || format!("user {} kept with an empty slot", counts.users[u]))?;
                ensure(row.iter().all(|&v| v.to_bits() == 0), || format!("user {} {slot}: empty row not zero", counts.users[u]))?;
                zero_rows += 1;
            } else {
                let sum: f64 = row.iter().sum();
                ensure((sum - 1.0).abs() <= STOCHASTIC_TOL, || {
                    format!("user {} {slot}: row sums to {sum}", counts.users[u])
                })?;
                if kept.contains(u) {
                    stochastic_rows += 1;
                }
            }
        }
    }
    ensure(kept.len() * 16 == stochastic_rows, || "filtered user with empty row".into())?;
    ensure(zero_rows > 0 && kept.len() < counts.len(), || "scenario exercised no empty rows".into())?;
    Ok(format!(
        "{} of {} users kept, {stochastic_rows} rows sum to 1, {zero_rows} empty rows exactly zero",
        kept.len(),
        counts.len()
    ))
}

// 4: brute force straight from the CDR text.

struct Micro {
    dir: tempfile::TempDir,
    communes: Vec<u32>,
}

fn slot_time(rng: &mut ChaCha8Rng, day: usize, hour: usize) -> chrono::NaiveDateTime {
    // Anchor dates: Mon 2012-01-02 .. Sun 2012-01-29.
    let base = NaiveDate::from_ymd_opt(2012, 1, 2).unwrap();
    let date = loop {
        let d = base + TimeDelta::days(rng.random_range(0..28));
        let wd = d.weekday().num_days_from_monday() as usize;
        if [0, 0, 0, 0, 1, 2, 3][wd] == day {
            break d;
        }
    };
    let (lo, hi) = [(5, 11), (11, 15), (15, 20), (20, 29)][hour];
    let secs = rng.random_range(lo * 3600..hi * 3600);
    date.and_hms_opt(0, 0, 0).unwrap() + TimeDelta::seconds(secs)
}

fn write_micro(seed: u64) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let mut ids: Vec<u32> = (1..=20).collect();
    for i in 0..n {
        let j = rng.random_range(i..ids.len());
        ids.swap(i, j);
    }
    let communes: Vec<u32> = ids[..n].to_vec();
    // Antennas: one or two per commune, one blank in the map, one absent.
    let mut map_lines = vec!["antenna_id,commune_id".to_string()];
    let mut ants: Vec<(String, usize)> = Vec::new();
    for (i, &c) in communes.iter().enumerate() {
        for k in 0..rng.random_range(1..=2) {
            let a = format!("t{c}_{k}");
            map_lines.push(format!("{a},{c}"));
            ants.push((a, i));
        }
    }
    map_lines.push("blank,".into());
    let ant_of = |rng: &mut ChaCha8Rng, commune: usize| -> String {
        let own: Vec<&String> = ants.iter().filter(|(_, c)| *c == commune).map(|(a, _)| a).collect();
        own[rng.random_range(0..own.len())].clone()
    };
    let n_users = rng.random_range(n..=10);
    let users: Vec<String> = (0..n_users).map(|u| format!("u{seed}x{u}")).collect();
    let mut calls: Vec<(usize, chrono::NaiveDateTime, String)> = Vec::new();
    let mut budget = 100usize;
    for (u, _) in users.iter().enumerate() {
        if u < n {
            // Anchor resident: every slot once plus two weekday nights at home.
            for slot in 0..16 {
                let c = rng.random_range(0..n);
                let a = ant_of(&mut rng, c);
                calls.push((u, slot_time(&mut rng, slot / 4, slot % 4), a));
            }
            for _ in 0..2 {
                let a = ant_of(&mut rng, u);
                calls.push((u, slot_time(&mut rng, 0, 3), a));
            }
            budget -= 18;
        } else if budget >= 16 && rng.random_bool(0.5) {
            for slot in 0..16 {
                let c = rng.random_range(0..n);
                let a = ant_of(&mut rng, c);
                calls.push((u, slot_time(&mut rng, slot / 4, slot % 4), a));
            }
            budget -= 16;
        }
    }
    // Remaining budget: random calls, biased toward weekday nights for ties.
    let extra = rng.random_range(0..=budget);
    for _ in 0..extra {
        let u = rng.random_range(0..n_users);
        let mut slot = if rng.random_bool(0.4) { 3 } else { rng.random_range(0..16) };
        if u < n && slot == 3 {
            // Keep each anchor's weekday-night majority at home.
            slot = rng.random_range(4..16);
        }
        let a = match rng.random_range(0..20) {
            0 => "blank".to_string(),
            1 => "ghost".to_string(),
            _ => {
                let c = rng.random_range(0..n);
                ant_of(&mut rng, c)
            }
        };
        calls.push((u, slot_time(&mut rng, slot / 4, slot % 4), a));
    }
    // Shuffle so nothing depends on record order.
    for i in (1..calls.len()).rev() {
        let j = rng.random_range(0..=i);
        calls.swap(i, j);
    }
    let mut cdr = vec!["caller,callee,timestamp,duration,antenna".to_string()];
    for (u, ts, a) in &calls {
        let callee = &users[rng.random_range(0..n_users)];
        cdr.push(format!("{},{callee},{},{},{a}", users[*u], ts.format("%Y-%m-%dT%H:%M:%S"), rng.random_range(1..900)));
    }
    if rng.random_bool(0.3) {
        cdr.push(format!("{},x,not-a-time,5,{}", users[0], ants[0].0));
    }
    let census: Vec<String> = std::iter::once("commune_id,population".to_string())
        .chain(communes.iter().map(|c| format!("{c},{}", rng.random_range(1..=50))))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cdr.csv"), cdr.join("\n") + "\n").unwrap();
    std::fs::write(dir.path().join("map.csv"), map_lines.join("\n") + "\n").unwrap();
    std::fs::write(dir.path().join("census.csv"), census.join("\n") + "\n").unwrap();
    Micro { dir, communes }
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Slot index (day * 4 + hour) of `YYYY-MM-DDTHH:MM:SS`.
fn oracle_slot(ts: &str) -> Option<usize> {
    let b = ts.as_bytes();
    if b.len() != 19 || b[10] != b'T' {
        return None;
    }
    let num = |r: std::ops::Range<usize>| ts.get(r)?.parse::<i64>().ok();
    let (y, mo, d, h) = (num(0..4)?, num(5..7)?, num(8..10)?, num(11..13)?);
    let mut days = days_from_civil(y, mo, d);
    if h < 5 {
        days -= 1;
    }
    // 1970-01-01 was a Thursday; Monday = 0.
    let weekday = (days + 3).rem_euclid(7);
    let day = match weekday {
        0..=3 => 0,
        4 => 1,
        5 => 2,
        _ => 3,
    };
    let hour = match h {
        5..=10 => 0,
        11..=14 => 1,
        15..=19 => 2,
        _ => 3,
    };
    Some(day * 4 + hour)
}

struct OracleResult {
    kept: BTreeSet<String>,
    maximizers: BTreeMap<String, Vec<u32>>,
    counts: BTreeMap<String, Vec<Vec<u64>>>,
}

fn oracle_counts(dir: &Path) -> OracleResult {
    let map: HashMap<String, u32> = std::fs::read_to_string(dir.join("map.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter_map(|l| {
            let (a, c) = l.split_once(',')?;
            let c: u32 = c.parse().ok()?;
            (c != 0).then(|| (a.to_string(), c))
        })
        .collect();
    let mut communes: Vec<u32> = map.values().copied().collect();
    communes.sort_unstable();
    communes.dedup();
    let mut counts: BTreeMap<String, Vec<Vec<u64>>> = BTreeMap::new();
    for line in std::fs::read_to_string(dir.join("cdr.csv")).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let Some(slot) = oracle_slot(f[2]) else { continue };
        let Some(c) = map.get(f[4]) else { continue };
        let ci = communes.binary_search(c).unwrap();
        counts.entry(f[0].to_string()).or_insert_with(|| vec![vec![0; communes.len()]; 16])[slot][ci] += 1;
    }
    let kept: BTreeSet<String> = counts
        .iter()
        .filter(|(_, t)| t.iter().all(|row| row.iter().sum::<u64>() >= 1))
        .map(|(u, _)| u.clone())
        .collect();
    let maximizers = kept
        .iter()
        .map(|u| {
            let row = &counts[u][3];
            let best = *row.iter().max().unwrap();
            let m = (0..row.len()).filter(|&i| row[i] == best).map(|i| communes[i]).collect();
            (u.clone(), m)
        })
        .collect();
    OracleResult { kept, maximizers, counts }
}

fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ties = 0;
    for seed in 0..ORACLE_INSTANCES {
        let m = write_micro(seed);
        let dir = m.dir.path();
        let inputs = PipelineInputs {
            cdr: dir.join("cdr.csv"),
            antennas: AntennaSource::Map(dir.join("map.csv")),
            geometry: None,
            census: dir.join("census.csv"),
            survey: None,
        };
        let opts = PipelineOptions { seed, ..PipelineOptions::default() };
        let out = pipeline::run(&inputs, &opts).map_err(|e| format!("instance {seed}: {e}"))?;
        let o = oracle_counts(dir);
        let kept: BTreeSet<String> = out.analysis.users.members.iter().map(|&u| out.counts.users[u].clone()).collect();
        ensure(kept == o.kept, || format!("instance {seed}: filtered users differ"))?;
        // The pipeline's home must be one of the oracle's maximizers.
        let mut home: BTreeMap<String, u32> = BTreeMap::new();
        for (&u, &h) in out.analysis.homes.users.iter().zip(&out.analysis.homes.home) {
            let user = &out.counts.users[u];
            let chosen = out.communes.id(h).0;
            let allowed = &o.maximizers[user];
            ensure(allowed.contains(&chosen), || format!("instance {seed}: {user} home {chosen} not in {allowed:?}"))?;
            ties += (allowed.len() > 1) as usize;
            home.insert(user.clone(), chosen);
        }
        let census: BTreeMap<u32, f64> = std::fs::read_to_string(dir.join("census.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let (c, p) = l.split_once(',').unwrap();
                (c.parse().unwrap(), p.parse().unwrap())
            })
            .collect();
        let n = m.communes.len();
        let mut ids = m.communes.clone();
        ids.sort_unstable();
        let mut residents = vec![0.0; n];
        for h in home.values() {
            residents[ids.binary_search(h).unwrap()] += 1.0;
        }
        for slot in 0..16 {
            let mut by_home = vec![vec![0.0; n]; n];
            for (user, h) in &home {
                let hi = ids.binary_search(h).unwrap();
                let factor = census[h] / residents[hi];
                let row = &o.counts[user][slot];
                let total: u64 = row.iter().sum();
                for c in 0..n {
                    by_home[c][hi] += row[c] as f64 / total as f64 * factor;
                }
            }
            let est = &out.analysis.estimates[slot];
            for (c, row) in by_home.iter().enumerate() {
                let ep: f64 = row.iter().sum();
                worst = worst.max((ep - est.ep[c]).abs());
                for (h, v) in row.iter().enumerate() {
                    worst = worst.max((v - est.by_home(c, h)).abs());
                }
            }
        }
    }
    ensure(worst <= ORACLE_TOL, || format!("absolute difference {worst:e}"))?;
    Ok(format!("{ORACLE_INSTANCES} instances, {ties} tied homes, worst absolute difference {worst:.1e}"))
}

// 5
fn stay_home() -> Outcome {
    for (n, users) in [(3, 20), (12, 15)] {
        let s = scenario(ScenarioConfig::new(n, users, 4.0, MobilityKernel::stay_home(n), 5));
        let counts = all_counts(&s);
        let census = s.config().census();
        let a = analyze(&counts, &index(&s), &census, 1, 0).map_err(|e| e.to_string())?;
        for e in &a.estimates {
            for (c, id) in e.communes.iter().enumerate() {
                let want = census.pop[id] as f64;
                ensure(e.ep[c] == want, || format!("{}: commune {id} {} != {want}", e.slot, e.ep[c]))?;
            }
            let cpm = city_pulse_matrix(e, true);
            for (i, row) in cpm.matrix.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    ensure(v == want, || format!("{}: cpm[{i}][{j}] = {v}", e.slot))?;
                }
            }
        }
    }
    Ok("EP equals census and CPM is the identity, exactly, for all 16 slots".into())
}

// 6
fn planted_recovery() -> Outcome {
    const NIGHT_HOME: f64 = 0.95;
    let n = 3;
    let mut worst: f64 = 0.0;
    let mut users = 0;
    for seed in 0..RECOVERY_SEEDS {
        let mut kernel = MobilityKernel::random(n, 0.2, 1000 + seed);
        for day in DayGroup::ALL {
            for home in 0..n {
                let mut row = vec![(1.0 - NIGHT_HOME) / (n - 1) as f64; n];
                row[home] = NIGHT_HOME;
                kernel.set_slot(TimeSlot::new(day, HourGroup::Night), home, row);
            }
        }
        let s = scenario(ScenarioConfig::new(n, 2000, 20.0, kernel, seed));
        let truth = s.ground_truth();
        let counts = all_counts(&s);
        let communes = index(&s);
        let a = analyze(&counts, &communes, &truth.census, 1, seed).map_err(|e| e.to_string())?;
        ensure(a.homes.users.len() == s.n_users(), || format!("seed {seed}: users filtered out"))?;
        for (&u, &h) in a.homes.users.iter().zip(&a.homes.home) {
            let user = &counts.users[u];
            ensure(truth.homes[user] == communes.id(h), || format!("seed {seed}: {user} home mismatch"))?;
        }
        users += a.homes.users.len();
        for (e, planted) in a.estimates.iter().zip(&truth.expected_cpm) {
            let est = city_pulse_matrix(e, true);
            for (r_est, r_planted) in est.matrix.iter().zip(&planted.matrix) {
                for (x, y) in r_est.iter().zip(r_planted) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    ensure(worst <= RECOVERY_CPM_TOL, || format!("L-inf CPM error {worst:.4} > {RECOVERY_CPM_TOL}"))?;
    Ok(format!("{users} homes recovered over {RECOVERY_SEEDS} seeds, L-inf CPM error {worst:.4}"))
}

// 7
fn run_to_dir(files: &citypulse::synth::ScenarioFiles, threads: usize, dir: &Path) -> Result<(), String> {
    let inputs = PipelineInputs {
        cdr: files.cdr.clone(),
        antennas: AntennaSource::Registry(files.antennas.clone()),
        geometry: Some(files.geometry.clone()),
        census: files.census.clone(),
        survey: Some(files.survey.clone()),
    };
    let opts = PipelineOptions { threads, seed: 77, ..PipelineOptions::default() };
    let out = pipeline::run(&inputs, &opts).map_err(|e| e.to_string())?;
    out.write(dir, &opts).map_err(|e| e.to_string())?;
    pipeline::write_tensor_dump(&out, &dir.join("tensors.csv")).map_err(|e| e.to_string())?;
    let figs = dir.join("figs");
    std::fs::create_dir_all(&figs).unwrap();
    let geoms = load_commune_geometry(&files.geometry).map_err(|e| e.to_string())?;
    let table = EpTable::from_estimates(&out.analysis.estimates);
    for e in &out.analysis.estimates {
        let key = e.slot.key();
        std::fs::write(figs.join(format!("heatmap_{key}.svg")), heatmap_svg(&city_pulse_matrix(e, true))).unwrap();
        let target = 0;
        let values: BTreeMap<CommuneId, f64> = (0..e.n()).map(|h| (e.communes[h], e.by_home(target, h) / 1000.0)).collect();
        let max = values.values().copied().fold(0.0, f64::max);
        let svg = choropleth_svg(&key, &geoms, &values, e.communes[target], max);
        std::fs::write(figs.join(format!("choropleth_{key}.svg")), svg).unwrap();
    }
    for day in DayGroup::ALL {
        let groups: Vec<BarGroup> = day_profile(&table, day, None)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|s| BarGroup {
                label: s.commune.to_string(),
                bars: s.points.iter().map(|(h, v)| (h.to_string(), *v)).collect(),
            })
            .collect();
        std::fs::write(figs.join(format!("profile_{day}.svg")), profile_svg(&day.to_string(), &groups)).unwrap();
    }
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::new(12, 400, 2.0, MobilityKernel::random(12, 0.4, 17), 17);
    cfg.guarantee_min_calls = false;
    let (files, _) = scenario(cfg).write(&tmp.path().join("in")).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("t1"), tmp.path().join("t8"));
    run_to_dir(&files, 1, &a)?;
    run_to_dir(&files, 8, &b)?;
    let (ta, tb) = (tree(&a), tree(&b));
    ensure(ta.keys().eq(tb.keys()), || "file lists differ".into())?;
    for (path, bytes) in &ta {
        ensure(&tb[path] == bytes, || format!("{} differs", path.display()))?;
    }
    let size: usize = ta.values().map(Vec::len).sum();
    Ok(format!("{} files, {size} bytes identical with 1 and 8 threads", ta.len()))
}

// 8
fn filter_semantics() -> Outcome {
    let n = 6;
    let s = scenario(ScenarioConfig::new(n, 50, 2.0, MobilityKernel::random(n, 0.3, 4), 4));
    let counts = all_counts(&s);
    let kept = filter_users(&counts, 1).map_err(|e| e.to_string())?;
    ensure(kept.len() == counts.len(), || format!("kept {} of {}", kept.len(), counts.len()))?;

    let victim = 17;
    let friday_morning = TimeSlot::new(DayGroup::Friday, HourGroup::Morning);
    let pruned = counts_of(&s, |k, r| k == victim && classify_timestamp(r.timestamp) == friday_morning);
    let kept = filter_users(&pruned, 1).map_err(|e| e.to_string())?;
    let dropped: Vec<&String> = (0..pruned.len()).filter(|&u| !kept.contains(u)).map(|u| &pruned.users[u]).collect();
    ensure(dropped == [&s.user_id(victim).to_string()], || format!("dropped {dropped:?}"))?;

    let mut checked = 0;
    for seed in 0..10 {
        let mut cfg = ScenarioConfig::new(4, 40, 3.0, MobilityKernel::random(4, 0.3, seed), seed);
        cfg.guarantee_min_calls = seed % 2 == 0;
        let counts = all_counts(&scenario(cfg));
        for tau in 1..6 {
            let lo = filter_users(&counts, tau).map_err(|e| e.to_string())?;
            let hi = filter_users(&counts, tau + 1).map_err(|e| e.to_string())?;
            ensure(hi.members.iter().all(|&u| lo.contains(u)), || format!("seed {seed}: tau {} not a subset", tau + 1))?;
            checked += 1;
        }
    }
    Ok(format!("tau=1 keeps all, one Friday-Morning deletion drops exactly that user, {checked} subset checks"))
}

// 9
fn validation_metric() -> Outcome {
    let n = 250;
    let mut cfg = ScenarioConfig::new(n, 4, 2.0, resident_kernel(n, 0.5, 9), 9);
    cfg.census_factor = 400;
    let s = scenario(cfg);
    let counts = all_counts(&s);
    let a = analyze(&counts, &index(&s), &s.config().census(), 1, 9).map_err(|e| e.to_string())?;
    let table = EpTable::from_estimates(&a.estimates);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut survey = SurveyTable::default();
    for &c in &table.communes {
        for h in HourGroup::ALL {
            let ep = table.get(TimeSlot::new(DayGroup::MonThu, h), c).unwrap();
            survey.estimate.insert((c, h), ep * (1.0 + rng.random_range(-0.05..0.05)));
        }
    }
    let report = compare(&table, &survey).map_err(|e| e.to_string())?;
    let avg = report.average_rel_diff;
    ensure(report.cells.len() == 1000, || format!("{} cells", report.cells.len()))?;
    ensure(avg >= SURVEY_BAND.0 && avg <= SURVEY_BAND.1, || format!("average {avg:.4} outside {SURVEY_BAND:?}"))?;
    Ok(format!("1000 cells, average relative difference {avg:.4}"))
}

// 10
fn throughput() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let n = 20;
    let per_commune = 150;
    let users = n * per_commune;
    let run = |lines: usize, tag: &str| -> Result<(Duration, usize, u64), String> {
        // Slight overshoot so the Poisson total clears `lines`.
        let lambda = 1.01 * lines as f64 / (users * 16) as f64;
        let cfg = ScenarioConfig::new(n, per_commune, lambda, MobilityKernel::random(n, 0.3, 10), 10);
        let (files, _) = scenario(cfg).write(&tmp.path().join(tag)).map_err(|e| e.to_string())?;
        let inputs = PipelineInputs {
            cdr: files.cdr,
            antennas: AntennaSource::Registry(files.antennas),
            geometry: Some(files.geometry),
            census: files.census,
            survey: None,
        };
        let opts = PipelineOptions::default();
        let base = LIVE.load(Ordering::Relaxed);
        PEAK.store(base, Ordering::Relaxed);
        let start = Instant::now();
        let out = pipeline::run(&inputs, &opts).map_err(|e| e.to_string())?;
        out.write(&tmp.path().join(format!("{tag}-out")), &opts).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let peak = PEAK.load(Ordering::Relaxed) - base;
        Ok((elapsed, peak, out.ingest.parsed))
    };
    let (_, small_peak, small_lines) = run(THROUGHPUT_LINES / 5, "small")?;
    let (elapsed, big_peak, big_lines) = run(THROUGHPUT_LINES, "big")?;
    let secs = elapsed.as_secs_f64();
    let ratio = big_peak as f64 / small_peak as f64;
    let detail = format!(
        "{big_lines} lines in {secs:.1}s; peak heap {:.1} MiB at {big_lines} lines vs {:.1} MiB at {small_lines} (ratio {ratio:.2})",
        big_peak as f64 / 1048576.0,
        small_peak as f64 / 1048576.0
    );
    ensure(big_lines >= THROUGHPUT_LINES as u64, || format!("only {big_lines} lines generated"))?;
    ensure(secs < THROUGHPUT_SECONDS, || detail.clone())?;
    ensure(ratio < MEMORY_RATIO_MAX, || detail.clone())?;
    Ok(detail)
}

// 11
fn timegrid() -> Outcome {
    let monday = NaiveDate::from_ymd_opt(2011, 11, 7).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut per_slot = [0u32; 16];
    for m in 0..10_080 {
        let ts = monday + TimeDelta::minutes(m);
        let slot = classify_timestamp(ts);
        let want = oracle_slot(&ts.format("%Y-%m-%dT%H:%M:%S").to_string()).unwrap();
        ensure(slot.index() == want, || format!("{ts}: {slot}"))?;
        per_slot[slot.index()] += 1;
    }
    ensure(per_slot.iter().sum::<u32>() == 10_080, || "minutes lost".into())?;
    ensure(per_slot.iter().all(|&m| m > 0), || "empty slot".into())?;
    Ok("10080 minutes, each in exactly one of 16 slots; 00:00-05:00 goes to the previous day".into())
}
