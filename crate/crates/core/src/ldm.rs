//! Per-user call counts, location distribution matrices and the
//! observation filter.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geomap::CommuneIndex;
use crate::ingest::CdrRecord;
use crate::io_util::create_output;
use crate::timegrid::{classify_timestamp, TimeSlot, NUM_SLOTS};

/// Call counts of one user, dense `16 x N` (slot major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTensor {
    n_communes: usize,
    counts: Vec<u32>,
}

impl CountTensor {
    pub fn zeros(n_communes: usize) -> Self {
        CountTensor {
            n_communes,
            counts: vec![0; NUM_SLOTS * n_communes],
        }
    }

    /// Builds a tensor from a slot-major flat array of length `16 * n_communes`.
    pub fn from_flat(n_communes: usize, counts: Vec<u32>) -> Self {
        assert_eq!(counts.len(), NUM_SLOTS * n_communes);
        CountTensor { n_communes, counts }
    }

    pub fn n_communes(&self) -> usize {
        self.n_communes
    }

    pub fn row(&self, slot: TimeSlot) -> &[u32] {
        let start = slot.index() * self.n_communes;
        &self.counts[start..start + self.n_communes]
    }

    pub fn row_mut(&mut self, slot: TimeSlot) -> &mut [u32] {
        let start = slot.index() * self.n_communes;
        &mut self.counts[start..start + self.n_communes]
    }

    pub fn get(&self, slot: TimeSlot, commune: usize) -> u32 {
        self.row(slot)[commune]
    }

    pub fn add(&mut self, slot: TimeSlot, commune: usize, n: u32) {
        self.row_mut(slot)[commune] += n;
    }

    pub fn row_sum(&self, slot: TimeSlot) -> u64 {
        self.row(slot).iter().map(|&c| u64::from(c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn as_flat(&self) -> &[u32] {
        &self.counts
    }
}

/// Row-stochastic-or-zero call proportions of one user, dense `16 x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationDistributionMatrix {
    n_communes: usize,
    probs: Vec<f64>,
}

impl LocationDistributionMatrix {
    pub fn row(&self, slot: TimeSlot) -> &[f64] {
        let start = slot.index() * self.n_communes;
        &self.probs[start..start + self.n_communes]
    }

    pub fn n_communes(&self) -> usize {
        self.n_communes
    }
}

/// Divides each slot row by its sum; rows with no calls stay all-zero.
pub fn normalize(counts: &CountTensor) -> LocationDistributionMatrix {
    let n = counts.n_communes;
    let mut probs = vec![0.0; counts.counts.len()];
    for (src, dst) in counts.counts.chunks(n.max(1)).zip(probs.chunks_mut(n.max(1))) {
        normalize_row(src, dst);
    }
    LocationDistributionMatrix { n_communes: n, probs }
}

/// Writes the proportions of one count row into `out`, or zeros when the
/// row is empty.
pub fn normalize_row(counts: &[u32], out: &mut [f64]) {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        out.fill(0.0);
        return;
    }
    let total = total as f64;
    for (p, &c) in out.iter_mut().zip(counts) {
        *p = f64::from(c) / total;
    }
}

/// Builds per-user count tensors with a compact user-id interning table.
///
/// Partial accumulators over any split of the input merge by entrywise
/// addition into the same result as a single pass.
#[derive(Debug, Clone)]
pub struct Accumulator {
    n_communes: usize,
    index: HashMap<String, u32>,
    users: Vec<String>,
    counts: Vec<u32>,
}

impl Accumulator {
    pub fn new(n_communes: usize) -> Self {
        Accumulator {
            n_communes,
            index: HashMap::new(),
            users: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn n_communes(&self) -> usize {
        self.n_communes
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    fn slot_of(&mut self, user: &str) -> usize {
        let stride = NUM_SLOTS * self.n_communes;
        let id = match self.index.get(user) {
            Some(&id) => id as usize,
            None => {
                let id = self.users.len();
                self.index.insert(user.to_string(), id as u32);
                self.users.push(user.to_string());
                self.counts.resize(self.counts.len() + stride, 0);
                id
            }
        };
        id * stride
    }

    pub fn add(&mut self, user: &str, slot: TimeSlot, commune: usize) {
        self.add_n(user, slot, commune, 1);
    }

    pub fn add_n(&mut self, user: &str, slot: TimeSlot, commune: usize, n: u32) {
        debug_assert!(commune < self.n_communes);
        let base = self.slot_of(user);
        self.counts[base + slot.index() * self.n_communes + commune] += n;
    }

    pub fn merge(&mut self, other: Accumulator) {
        assert_eq!(self.n_communes, other.n_communes);
        let stride = NUM_SLOTS * self.n_communes;
        for (user, chunk) in other.users.iter().zip(other.counts.chunks(stride.max(1))) {
            let base = self.slot_of(user);
            for (dst, &src) in self.counts[base..base + stride].iter_mut().zip(chunk) {
                *dst += src;
            }
        }
    }

    /// Final tensors ordered by user id.
    pub fn finish(self) -> UserCounts {
        let stride = NUM_SLOTS * self.n_communes;
        let mut pairs: Vec<(String, CountTensor)> = self
            .users
            .into_iter()
            .enumerate()
            .map(|(i, u)| {
                let counts = self.counts[i * stride..(i + 1) * stride].to_vec();
                (u, CountTensor::from_flat(self.n_communes, counts))
            })
            .collect();
        pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let (users, tensors) = pairs.into_iter().unzip();
        UserCounts {
            n_communes: self.n_communes,
            users,
            tensors,
        }
    }
}

/// Count tensors of every observed user, sorted by user id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserCounts {
    pub n_communes: usize,
    pub users: Vec<String>,
    pub tensors: Vec<CountTensor>,
}

impl UserCounts {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn get(&self, user: &str) -> Option<&CountTensor> {
        self.users
            .binary_search_by(|u| u.as_str().cmp(user))
            .ok()
            .map(|i| &self.tensors[i])
    }

    pub fn total_calls(&self) -> u64 {
        self.tensors.iter().map(CountTensor::total).sum()
    }

    /// Writes nonzero cells as `user,day_group,hour_group,commune_id,count`.
    pub fn write_dump(&self, communes: &CommuneIndex, path: &Path) -> Result<()> {
        let mut out = create_output("tensor dump", path)?;
        let res = (|| {
            writeln!(out, "user,day_group,hour_group,commune_id,count")?;
            for (user, t) in self.users.iter().zip(&self.tensors) {
                for slot in crate::timegrid::all_slots() {
                    for (c, &n) in t.row(slot).iter().enumerate() {
                        if n > 0 {
                            writeln!(
                                out,
                                "{user},{},{},{},{n}",
                                slot.day_group,
                                slot.hour_group,
                                communes.id(c)
                            )?;
                        }
                    }
                }
            }
            out.flush()
        })();
        res.map_err(|e| Error::io("tensor dump", path, e))
    }
}

/// Which side of a call contributes location evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountSides {
    #[default]
    CallerOnly,
    CallerAndCallee,
}

/// Folds records into `acc`. Returns the number of records dropped for an
/// antenna outside every commune (or absent from the map).
pub fn accumulate<'a>(
    acc: &mut Accumulator,
    records: impl IntoIterator<Item = &'a CdrRecord>,
    antennas: &HashMap<String, usize>,
    sides: CountSides,
) -> u64 {
    let mut dropped = 0;
    for r in records {
        let Some(&commune) = antennas.get(&r.antenna) else {
            dropped += 1;
            continue;
        };
        let slot = classify_timestamp(r.timestamp);
        acc.add(&r.caller, slot, commune);
        if sides == CountSides::CallerAndCallee {
            acc.add(&r.callee, slot, commune);
        }
    }
    dropped
}

/// Indices into a [`UserCounts`] of users observed at least `tau` times in
/// every slot, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UserSet {
    pub members: Vec<usize>,
}

impl UserSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, user: usize) -> bool {
        self.members.binary_search(&user).is_ok()
    }
}

pub fn passes_filter(t: &CountTensor, tau: u32) -> bool {
    crate::timegrid::all_slots()
        .into_iter()
        .all(|s| t.row_sum(s) >= u64::from(tau))
}

pub fn filter_users(counts: &UserCounts, tau: u32) -> Result<UserSet> {
    if tau < 1 {
        return Err(Error::Config(format!("tau must be at least 1, got {tau}")));
    }
    let members = counts
        .tensors
        .iter()
        .enumerate()
        .filter(|(_, t)| passes_filter(t, tau))
        .map(|(i, _)| i)
        .collect();
    Ok(UserSet { members })
}
