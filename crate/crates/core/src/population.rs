//! Home detection, census scaling and expected population.
//!
//! All sums over users run over fixed-size shards merged in shard order, so
//! results are bit-identical for any thread count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomap::{CommuneId, CommuneIndex};
use crate::ingest::CensusTable;
use crate::ldm::{normalize_row, CountTensor, LocationDistributionMatrix, UserCounts, UserSet};
use crate::seed::{fnv1a, substream};
use crate::timegrid::{all_slots, DayGroup, HourGroup, TimeSlot};

/// Slot whose counts decide a user's home.
pub const HOME_SLOT: TimeSlot = TimeSlot::new(DayGroup::MonThu, HourGroup::Night);

const SHARD: usize = 2048;

/// Home commune (dense index) of a filtered user and whether the argmax was
/// tied. Ties are broken uniformly at random from a stream derived from
/// `seed` and the user id, so the outcome depends on nothing else.
pub fn detect_home(counts: &CountTensor, user: &str, seed: u64) -> Result<(usize, bool)> {
    let row = counts.row(HOME_SLOT);
    let best = row.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return Err(Error::UnfilteredUser(user.to_string()));
    }
    let maximizers: Vec<usize> = row
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c == best)
        .map(|(i, _)| i)
        .collect();
    if maximizers.len() == 1 {
        return Ok((maximizers[0], false));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, fnv1a(user.as_bytes())));
    Ok((maximizers[rng.random_range(0..maximizers.len())], true))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeAssignment {
    /// Filtered user indices into the [`UserCounts`], ascending.
    pub users: Vec<usize>,
    /// Dense commune index of each user's home, aligned with `users`.
    pub home: Vec<usize>,
    pub tie_count: usize,
    pub tie_users: Vec<String>,
}

impl HomeAssignment {
    pub fn home_counts(&self, n_communes: usize) -> Vec<u64> {
        let mut out = vec![0; n_communes];
        for &h in &self.home {
            out[h] += 1;
        }
        out
    }
}

pub fn assign_homes(counts: &UserCounts, set: &UserSet, seed: u64) -> Result<HomeAssignment> {
    let results: Vec<(usize, bool)> = set
        .members
        .par_iter()
        .map(|&u| detect_home(&counts.tensors[u], &counts.users[u], seed))
        .collect::<Result<_>>()?;
    let tie_users: Vec<String> = set
        .members
        .iter()
        .zip(&results)
        .filter(|(_, r)| r.1)
        .map(|(&u, _)| counts.users[u].clone())
        .collect();
    Ok(HomeAssignment {
        users: set.members.clone(),
        home: results.iter().map(|r| r.0).collect(),
        tie_count: tie_users.len(),
        tie_users,
    })
}

/// Census expansion factor per commune: population over sampled residents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactors {
    pub communes: Vec<CommuneId>,
    pub factors: Vec<f64>,
    pub population: Vec<u64>,
    pub residents: Vec<u64>,
}

impl ScalingFactors {
    pub fn get(&self, commune: CommuneId) -> Option<f64> {
        let i = self.communes.binary_search(&commune).ok()?;
        Some(self.factors[i])
    }

    /// Smallest and largest factor with their communes.
    pub fn range(&self) -> Option<((CommuneId, f64), (CommuneId, f64))> {
        let pairs = self.communes.iter().copied().zip(self.factors.iter().copied());
        let min = pairs.clone().min_by(|a, b| a.1.total_cmp(&b.1))?;
        let max = pairs.max_by(|a, b| a.1.total_cmp(&b.1))?;
        Some((min, max))
    }
}

pub fn scaling_factors(
    census: &CensusTable,
    communes: &CommuneIndex,
    homes: &HomeAssignment,
) -> Result<ScalingFactors> {
    census.check_covers(communes.ids())?;
    let residents = homes.home_counts(communes.len());
    let empty: Vec<CommuneId> = residents
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0)
        .map(|(i, _)| communes.id(i))
        .collect();
    if !empty.is_empty() {
        return Err(Error::NoResidentSample(empty));
    }
    let population: Vec<u64> = communes
        .ids()
        .iter()
        .map(|&c| census.get(c).expect("checked by check_covers"))
        .collect();
    let factors = population
        .iter()
        .zip(&residents)
        .map(|(&p, &n)| p as f64 / n as f64)
        .collect();
    Ok(ScalingFactors {
        communes: communes.ids().to_vec(),
        factors,
        population,
        residents,
    })
}

/// Expected people per commune in one slot, also split by home commune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub slot: TimeSlot,
    pub communes: Vec<CommuneId>,
    /// People present, per commune.
    pub ep: Vec<f64>,
    /// Row-major `N x N`: `[present][home]`.
    pub ep_by_home: Vec<f64>,
}

impl PopulationEstimate {
    pub fn n(&self) -> usize {
        self.communes.len()
    }

    pub fn by_home(&self, present: usize, home: usize) -> f64 {
        self.ep_by_home[present * self.n() + home]
    }

    pub fn total(&self) -> f64 {
        self.ep.iter().sum()
    }
}

/// Expected population in `slot` from precomputed LDMs aligned with
/// `homes.users`.
pub fn expected_population(
    ldms: &[LocationDistributionMatrix],
    homes: &HomeAssignment,
    factors: &ScalingFactors,
    slot: TimeSlot,
) -> PopulationEstimate {
    assert_eq!(ldms.len(), homes.users.len());
    estimate_with(homes, factors, slot, |k, out| {
        out.copy_from_slice(ldms[k].row(slot));
    })
}

/// Same as [`expected_population`], normalizing count rows on the fly
/// instead of holding every LDM in memory.
pub fn expected_population_from_counts(
    counts: &UserCounts,
    homes: &HomeAssignment,
    factors: &ScalingFactors,
    slot: TimeSlot,
) -> PopulationEstimate {
    estimate_with(homes, factors, slot, |k, out| {
        normalize_row(counts.tensors[homes.users[k]].row(slot), out);
    })
}

/// Estimates for all 16 slots in slot order.
pub fn expected_population_all(
    counts: &UserCounts,
    homes: &HomeAssignment,
    factors: &ScalingFactors,
) -> Vec<PopulationEstimate> {
    all_slots()
        .into_iter()
        .map(|s| expected_population_from_counts(counts, homes, factors, s))
        .collect()
}

fn estimate_with<F>(
    homes: &HomeAssignment,
    factors: &ScalingFactors,
    slot: TimeSlot,
    fill_row: F,
) -> PopulationEstimate
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let n = factors.communes.len();
    // Per-home sums of location probabilities, `[present][home]`.
    let partials: Vec<Vec<f64>> = (0..homes.users.len())
        .collect::<Vec<_>>()
        .par_chunks(SHARD)
        .map(|shard| {
            let mut acc = vec![0.0; n * n];
            let mut row = vec![0.0; n];
            for &k in shard {
                fill_row(k, &mut row);
                let h = homes.home[k];
                for (c, &p) in row.iter().enumerate() {
                    acc[c * n + h] += p;
                }
            }
            acc
        })
        .collect();
    let mut mass = vec![0.0; n * n];
    for part in partials {
        for (m, p) in mass.iter_mut().zip(part) {
            *m += p;
        }
    }
    // F_h * S = pop_h * (S / n_h); equal to summing P * F per user, and exact
    // when every resident sits at one commune.
    let mut ep_by_home = mass;
    for c in 0..n {
        for h in 0..n {
            let cell = &mut ep_by_home[c * n + h];
            let residents = factors.residents[h];
            *cell = if residents == 0 {
                0.0
            } else {
                factors.population[h] as f64 * (*cell / residents as f64)
            };
        }
    }
    let ep = ep_by_home.chunks(n.max(1)).map(|r| r.iter().sum()).collect();
    PopulationEstimate {
        slot,
        communes: factors.communes.clone(),
        ep,
        ep_by_home,
    }
}

/// Row-normalizable presence-by-home matrix for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityPulseMatrix {
    pub slot: TimeSlot,
    pub normalized: bool,
    pub commune_ids: Vec<CommuneId>,
    /// `matrix[i][j]`: people present in commune `i` living in commune `j`.
    pub matrix: Vec<Vec<f64>>,
}

pub fn city_pulse_matrix(estimate: &PopulationEstimate, normalize_rows: bool) -> CityPulseMatrix {
    let n = estimate.n();
    let mut matrix: Vec<Vec<f64>> = estimate
        .ep_by_home
        .chunks(n.max(1))
        .map(<[f64]>::to_vec)
        .collect();
    if normalize_rows {
        for row in &mut matrix {
            let sum: f64 = row.iter().sum();
            if sum != 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }
    CityPulseMatrix {
        slot: estimate.slot,
        normalized: normalize_rows,
        commune_ids: estimate.communes.clone(),
        matrix,
    }
}

/// Expected presence per commune for a set of slots, without the
/// provenance split. This is what `ep.csv` holds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpTable {
    pub communes: Vec<CommuneId>,
    pub slots: BTreeMap<TimeSlot, Vec<f64>>,
}

impl EpTable {
    pub fn from_estimates(estimates: &[PopulationEstimate]) -> Self {
        EpTable {
            communes: estimates.first().map(|e| e.communes.clone()).unwrap_or_default(),
            slots: estimates.iter().map(|e| (e.slot, e.ep.clone())).collect(),
        }
    }

    pub fn get(&self, slot: TimeSlot, commune: CommuneId) -> Option<f64> {
        let i = self.communes.binary_search(&commune).ok()?;
        self.slots.get(&slot).map(|v| v[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSeries {
    pub commune: CommuneId,
    pub day_group: DayGroup,
    /// Morning to night, in thousands of people.
    pub points: Vec<(HourGroup, f64)>,
}

/// Presence per hour group for one day group, in thousands, for all
/// communes or a single one.
pub fn day_profile(
    table: &EpTable,
    day_group: DayGroup,
    commune: Option<CommuneId>,
) -> Result<Vec<ProfileSeries>> {
    let selected: Vec<CommuneId> = match commune {
        Some(c) if table.communes.binary_search(&c).is_ok() => vec![c],
        Some(c) => return Err(Error::UnknownCommune(c)),
        None => table.communes.clone(),
    };
    selected
        .into_iter()
        .map(|c| {
            let points = HourGroup::ALL
                .into_iter()
                .map(|h| {
                    table
                        .get(TimeSlot::new(day_group, h), c)
                        .map(|v| (h, v / 1000.0))
                        .ok_or_else(|| {
                            Error::Config(format!("no estimate for ({day_group}, {h})"))
                        })
                })
                .collect::<Result<_>>()?;
            Ok(ProfileSeries {
                commune: c,
                day_group,
                points,
            })
        })
        .collect()
}
