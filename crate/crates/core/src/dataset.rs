//! Interaction logs, leave-one-out splits, head/tail partitions and
//! negative sampling.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;

use crate::error::{GraspError, Result};
use crate::rng::Rng;

/// Default minimum sequence length kept by [`load_interactions`].
pub const DEFAULT_MIN_USER_LEN: usize = 3;
/// Default minimum item frequency kept by [`load_interactions`].
pub const DEFAULT_MIN_ITEM_FREQ: usize = 3;

/// Per-user chronologically ordered item sequences over dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    sequences: Vec<Vec<usize>>,
    item_frequency: Vec<usize>,
    user_raw_ids: Vec<String>,
    item_raw_ids: Vec<String>,
}

#[derive(Debug, Clone)]
struct RawEvent {
    user: String,
    item: String,
    timestamp: i64,
}

impl InteractionDataset {
    /// Builds a dataset directly from dense sequences. Raw ids are the
    /// decimal dense ids.
    pub fn from_sequences(sequences: Vec<Vec<usize>>, item_count: usize) -> Result<Self> {
        let mut item_frequency = vec![0; item_count];
        for seq in &sequences {
            for &item in seq {
                if item >= item_count {
                    return Err(GraspError::Lookup {
                        what: "item",
                        id: item,
                        size: item_count,
                    });
                }
                item_frequency[item] += 1;
            }
        }
        Ok(Self {
            user_raw_ids: (0..sequences.len()).map(|u| u.to_string()).collect(),
            item_raw_ids: (0..item_count).map(|i| i.to_string()).collect(),
            sequences,
            item_frequency,
        })
    }

    pub fn user_count(&self) -> usize {
        self.sequences.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_frequency.len()
    }

    pub fn sequence(&self, user: usize) -> &[usize] {
        &self.sequences[user]
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    pub fn item_frequency(&self) -> &[usize] {
        &self.item_frequency
    }

    pub fn user_frequency(&self) -> Vec<usize> {
        self.sequences.iter().map(Vec::len).collect()
    }

    pub fn interaction_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn user_raw_id(&self, user: usize) -> &str {
        &self.user_raw_ids[user]
    }

    pub fn item_raw_id(&self, item: usize) -> &str {
        &self.item_raw_ids[item]
    }

    pub fn user_raw_ids(&self) -> &[String] {
        &self.user_raw_ids
    }

    pub fn item_raw_ids(&self) -> &[String] {
        &self.item_raw_ids
    }

    /// Sorted, deduplicated set of items the user interacted with.
    pub fn history(&self, user: usize) -> Vec<usize> {
        let mut h = self.sequences[user].clone();
        h.sort_unstable();
        h.dedup();
        h
    }

    /// Writes the log as `user<TAB>item<TAB>timestamp`, using raw ids and
    /// the sequence position as timestamp.
    pub fn write_interactions(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (u, seq) in self.sequences.iter().enumerate() {
            for (t, &item) in seq.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{}", self.user_raw_ids[u], self.item_raw_ids[item], t);
            }
        }
        fs::write(path, out).map_err(|e| GraspError::io(path, e))
    }

    /// Persists `user_ids.tsv` and `item_ids.tsv` (`raw_id<TAB>dense_id`).
    pub fn write_id_maps(&self, dir: &Path) -> Result<()> {
        for (name, ids) in [
            ("user_ids.tsv", &self.user_raw_ids),
            ("item_ids.tsv", &self.item_raw_ids),
        ] {
            let path = dir.join(name);
            let mut out = String::new();
            for (dense, raw) in ids.iter().enumerate() {
                let _ = writeln!(out, "{raw}\t{dense}");
            }
            fs::write(&path, out).map_err(|e| GraspError::io(&path, e))?;
        }
        Ok(())
    }
}

/// Reads a `raw_id<TAB>dense_id` map back into a vector indexed by dense id.
pub fn read_id_map(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| GraspError::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (raw, dense) = line.split_once('\t').ok_or(GraspError::Parse {
            line: n + 1,
            msg: "expected raw_id<TAB>dense_id".into(),
        })?;
        let dense: usize = dense.trim().parse().map_err(|_| GraspError::Parse {
            line: n + 1,
            msg: format!("bad dense id {dense:?}"),
        })?;
        pairs.push((dense, raw.to_string()));
    }
    pairs.sort();
    for (expected, (dense, _)) in pairs.iter().enumerate() {
        if *dense != expected {
            return Err(GraspError::Parse {
                line: 0,
                msg: format!("dense ids are not contiguous at {expected}"),
            });
        }
    }
    Ok(pairs.into_iter().map(|(_, raw)| raw).collect())
}

/// Integers order numerically and before non-integers; the rest order
/// lexicographically. Makes dense ids of an all-integer log follow the raw ids.
fn raw_id_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn parse_log(text: &str) -> Result<Vec<RawEvent>> {
    let mut events = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(GraspError::Parse {
                line: n + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(GraspError::Parse {
                line: n + 1,
                msg: "empty user or item id".into(),
            });
        }
        let timestamp = fields[2].trim().parse::<i64>().map_err(|_| GraspError::Parse {
            line: n + 1,
            msg: format!("timestamp {:?} is not an integer", fields[2]),
        })?;
        events.push(RawEvent {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            timestamp,
        });
    }
    Ok(events)
}

/// Drops users and items below the thresholds until nothing changes.
fn filter_to_fixpoint(mut events: Vec<RawEvent>, min_user_len: usize, min_item_freq: usize) -> Vec<RawEvent> {
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for e in &events {
            *user_counts.entry(&e.user).or_default() += 1;
            *item_counts.entry(&e.item).or_default() += 1;
        }
        let keep: Vec<bool> = events
            .iter()
            .map(|e| user_counts[e.user.as_str()] >= min_user_len && item_counts[e.item.as_str()] >= min_item_freq)
            .collect();
        if keep.iter().all(|&k| k) {
            return events;
        }
        let mut flags = keep.into_iter();
        events.retain(|_| flags.next().unwrap());
    }
}

fn events_to_dataset(events: Vec<RawEvent>) -> Result<InteractionDataset> {
    if events.is_empty() {
        return Err(GraspError::EmptyDataset);
    }
    let mut users: Vec<String> = events.iter().map(|e| e.user.clone()).collect();
    let mut items: Vec<String> = events.iter().map(|e| e.item.clone()).collect();
    for ids in [&mut users, &mut items] {
        ids.sort_by(|a, b| raw_id_cmp(a, b));
        ids.dedup();
    }
    let user_index: HashMap<&str, usize> = users.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let item_index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut timed: Vec<Vec<(i64, usize)>> = vec![Vec::new(); users.len()];
    for e in &events {
        timed[user_index[e.user.as_str()]].push((e.timestamp, item_index[e.item.as_str()]));
    }
    let sequences: Vec<Vec<usize>> = timed
        .into_iter()
        .map(|mut seq| {
            // stable: equal timestamps keep file order
            seq.sort_by_key(|&(ts, _)| ts);
            seq.into_iter().map(|(_, item)| item).collect()
        })
        .collect();
    let mut ds = InteractionDataset::from_sequences(sequences, items.len())?;
    ds.user_raw_ids = users;
    ds.item_raw_ids = items;
    Ok(ds)
}

/// Parses a `user<TAB>item<TAB>timestamp` log, filters sparse users/items to
/// a fixpoint and re-indexes ids densely from 0.
pub fn load_interactions(path: &Path, min_user_len: usize, min_item_freq: usize) -> Result<InteractionDataset> {
    let text = fs::read_to_string(path).map_err(|e| GraspError::io(path, e))?;
    parse_interactions(&text, min_user_len, min_item_freq)
}

/// [`load_interactions`] on in-memory text.
pub fn parse_interactions(text: &str, min_user_len: usize, min_item_freq: usize) -> Result<InteractionDataset> {
    let events = parse_log(text)?;
    events_to_dataset(filter_to_fixpoint(events, min_user_len, min_item_freq))
}

/// One user's leave-one-out partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub user: usize,
    pub train_prefix: Vec<usize>,
    pub valid_target: usize,
    pub test_target: usize,
}

impl UserSplit {
    /// Model input and target for the requested evaluation phase.
    pub fn eval_input(&self, phase: Phase) -> (Vec<usize>, usize) {
        match phase {
            Phase::Valid => (self.train_prefix.clone(), self.valid_target),
            Phase::Test => {
                let mut input = self.train_prefix.clone();
                input.push(self.valid_target);
                (input, self.test_target)
            }
        }
    }
}

/// Which held-out target an evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Valid,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Valid => "valid",
            Phase::Test => "test",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = GraspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" | "validation" => Ok(Phase::Valid),
            "test" => Ok(Phase::Test),
            other => Err(GraspError::Argument(format!("unknown split {other:?} (valid|test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaveOneOutSplit {
    pub users: Vec<UserSplit>,
    /// Users with fewer than three interactions.
    pub excluded: usize,
}

impl LeaveOneOutSplit {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

pub fn split_leave_one_out(ds: &InteractionDataset) -> LeaveOneOutSplit {
    let mut users = Vec::new();
    let mut excluded = 0;
    for (user, seq) in ds.sequences().iter().enumerate() {
        let n = seq.len();
        if n < 3 {
            excluded += 1;
            continue;
        }
        users.push(UserSplit {
            user,
            train_prefix: seq[..n - 2].to_vec(),
            valid_target: seq[n - 2],
            test_target: seq[n - 1],
        });
    }
    LeaveOneOutSplit { users, excluded }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Head,
    Tail,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Head => "head",
            Group::Tail => "tail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLabels {
    pub user_group: Vec<Group>,
    pub item_group: Vec<Group>,
    pub user_threshold: usize,
    pub item_threshold: usize,
}

/// Smallest frequency still in the head: the frequency of the
/// ceil(ratio * n)-th member in descending order.
pub fn head_threshold(frequencies: &[usize], ratio: f64) -> Result<usize> {
    if frequencies.is_empty() {
        return Err(GraspError::EmptyPopulation);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(GraspError::Argument(format!(
            "head ratio must be in (0,1), got {ratio}"
        )));
    }
    let n = frequencies.len();
    // guard against 0.2 * 15 = 3.0000000000000004
    let head = ((ratio * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut sorted = frequencies.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sorted[head.min(n) - 1])
}

fn label(frequencies: &[usize], threshold: usize) -> Vec<Group> {
    frequencies
        .iter()
        .map(|&f| if f >= threshold { Group::Head } else { Group::Tail })
        .collect()
}

/// Pareto head/tail partition of users and items by interaction frequency.
/// Ties at the threshold go to the head.
pub fn partition_head_tail(ds: &InteractionDataset, ratio: f64) -> Result<GroupLabels> {
    let user_freq = ds.user_frequency();
    let user_threshold = head_threshold(&user_freq, ratio)?;
    let item_threshold = head_threshold(ds.item_frequency(), ratio)?;
    Ok(GroupLabels {
        user_group: label(&user_freq, user_threshold),
        item_group: label(ds.item_frequency(), item_threshold),
        user_threshold,
        item_threshold,
    })
}

/// Draws `count` distinct items uniformly from those absent from the user's
/// full sequence.
pub fn sample_negatives(ds: &InteractionDataset, user: usize, count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if user >= ds.user_count() {
        return Err(GraspError::Lookup {
            what: "user",
            id: user,
            size: ds.user_count(),
        });
    }
    let history = ds.history(user);
    let m = ds.item_count();
    let available = m - history.len();
    if count > available {
        return Err(GraspError::SamplingInfeasible {
            user,
            requested: count,
            available,
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if 2 * count <= available {
        // sparse regime: rejection sampling
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let item = rng.random_range(0..m);
            if history.binary_search(&item).is_err() && chosen.insert(item) {
                out.push(item);
            }
        }
        Ok(out)
    } else {
        let complement: Vec<usize> = (0..m).filter(|i| history.binary_search(i).is_err()).collect();
        Ok(index::sample(rng, available, count)
            .into_iter()
            .map(|i| complement[i])
            .collect())
    }
}

/// One uniform non-history item; draws are independent (with replacement).
pub(crate) fn sample_one_negative(history: &[usize], item_count: usize, rng: &mut Rng) -> usize {
    debug_assert!(history.len() < item_count);
    loop {
        let item = rng.random_range(0..item_count);
        if history.binary_search(&item).is_err() {
            return item;
        }
    }
}
