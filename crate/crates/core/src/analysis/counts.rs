//! Per-trial coincidence counting.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eventlog::{BlockInfo, DetectionEvent, Detector, EventLog, GroupKey};
use crate::model::{AnalyzerSettings, Port};

/// Coincidences for one setting and storage time. Index order is
/// (T1,T2), (T1,R2), (R1,T2), (R1,R2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoincidenceCounts {
    pub c_tt: u64,
    pub c_tr: u64,
    pub c_rt: u64,
    pub c_rr: u64,
    pub n_trials: u64,
    pub key: GroupKey,
}

impl CoincidenceCounts {
    pub fn total(&self) -> u64 {
        self.c_tt + self.c_tr + self.c_rt + self.c_rr
    }

    pub fn settings(&self) -> AnalyzerSettings {
        self.key.settings()
    }

    pub fn tau_us(&self) -> f64 {
        self.key.tau_us()
    }
}

/// Everything the estimators need from one (θ1, θ2, τ) group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupTally {
    pub key: GroupKey,
    pub n_trials: u64,
    /// Field-1 × field-2 event pairs inside the window, by port pair.
    pub coincidences: [u64; 4],
    /// Trials with a click on each detector (T1, R1, T2, R2).
    pub singles: [u64; 4],
    pub field1_trials: u64,
    pub field2_trials: u64,
    /// Trials with at least one in-window coincidence.
    pub joint_trials: u64,
}

impl GroupTally {
    pub fn empty(key: GroupKey, n_trials: u64) -> Self {
        Self {
            key,
            n_trials,
            coincidences: [0; 4],
            singles: [0; 4],
            field1_trials: 0,
            field2_trials: 0,
            joint_trials: 0,
        }
    }

    pub fn counts(&self) -> CoincidenceCounts {
        let [c_tt, c_tr, c_rt, c_rr] = self.coincidences;
        CoincidenceCounts {
            c_tt,
            c_tr,
            c_rt,
            c_rr,
            n_trials: self.n_trials,
            key: self.key,
        }
    }

    pub fn coincidence(&self, field1: Port, field2: Port) -> u64 {
        self.coincidences[2 * field1.index() + field2.index()]
    }

    pub fn single(&self, d: Detector) -> u64 {
        self.singles[d.index()]
    }

    /// Adds one trial's clicks. `pairs` lists the in-window (field-1,
    /// field-2) detector pairs.
    fn add_trial(&mut self, detectors: &[Detector], pairs: impl Iterator<Item = (Detector, Detector)>) {
        let mut mask = 0u8;
        for d in detectors {
            mask |= 1 << d.index();
        }
        for d in Detector::ALL {
            if mask & (1 << d.index()) != 0 {
                self.singles[d.index()] += 1;
            }
        }
        self.field1_trials += (mask & 0b0011 != 0) as u64;
        self.field2_trials += (mask & 0b1100 != 0) as u64;
        let mut any = false;
        for (a, b) in pairs {
            self.coincidences[2 * a.port().index() + b.port().index()] += 1;
            any = true;
        }
        self.joint_trials += any as u64;
    }

    fn add_mask(&mut self, mask: u8) {
        let dets: Vec<Detector> = Detector::ALL
            .into_iter()
            .filter(|d| mask & (1 << d.index()) != 0)
            .collect();
        let f1: Vec<Detector> = dets.iter().copied().filter(|d| d.field() == 1).collect();
        let f2: Vec<Detector> = dets.iter().copied().filter(|d| d.field() == 2).collect();
        self.add_trial(&dets, f1.iter().flat_map(|a| f2.iter().map(move |b| (*a, *b))));
    }
}

/// Trial counts per group from the header blocks.
fn group_trials(blocks: &[BlockInfo]) -> BTreeMap<GroupKey, u64> {
    let mut out = BTreeMap::new();
    for b in blocks {
        *out.entry(b.key).or_insert(0) += b.n_trials;
    }
    out
}

fn block_of(blocks: &[BlockInfo], trial_index: u64) -> Option<&BlockInfo> {
    let i = blocks.partition_point(|b| b.first_trial + b.n_trials <= trial_index);
    blocks.get(i).filter(|b| b.contains(trial_index))
}

/// Events grouped per trial, checked against the header blocks.
fn trials_of(log: &EventLog) -> Result<Vec<&[DetectionEvent]>> {
    if !log.is_sorted() {
        let at = log
            .events
            .windows(2)
            .position(|w| (w[0].time_ns, w[0].detector) > (w[1].time_ns, w[1].detector))
            .unwrap_or(0);
        return Err(Error::data(
            0,
            format!("events not sorted by time at record {}", at + 2),
        ));
    }
    let mut blocks = log.header.blocks.clone();
    blocks.sort_by_key(|b| b.first_trial);
    for (i, e) in log.events.iter().enumerate() {
        let block = block_of(&blocks, e.trial_index)
            .ok_or_else(|| Error::data(0, format!("record {}: trial {} not in any block", i + 1, e.trial_index)))?;
        if block.key != e.key {
            return Err(Error::data(
                0,
                format!(
                    "record {}: settings differ from block of trial {}",
                    i + 1,
                    e.trial_index
                ),
            ));
        }
    }
    if log.events.windows(2).any(|w| w[1].trial_index < w[0].trial_index) {
        return Err(Error::data(0, "trials interleave in time"));
    }
    Ok(log.events.chunk_by(|a, b| a.trial_index == b.trial_index).collect())
}

/// Tallies every (θ1, θ2, τ) group of the log. A field-1 and a field-2 event
/// of one trial coincide when their separation lies in [τ, τ + window];
/// `None` accepts any pair in the trial. Groups without trials are omitted.
pub fn count_coincidences(log: &EventLog, window_ns: Option<u64>) -> Result<Vec<GroupTally>> {
    if window_ns == Some(0) {
        return Err(Error::invalid("coincidence window must be > 0"));
    }
    let mut tallies: BTreeMap<GroupKey, GroupTally> = group_trials(&log.header.blocks)
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .map(|(k, n)| (k, GroupTally::empty(k, n)))
        .collect();
    for trial in trials_of(log)? {
        let key = trial[0].key;
        let tau = key.tau_ns as i128;
        let in_window = |a: &DetectionEvent, b: &DetectionEvent| match window_ns {
            None => true,
            Some(w) => {
                let dt = b.time_ns as i128 - a.time_ns as i128;
                dt >= tau && dt <= tau + w as i128
            }
        };
        let f1: Vec<&DetectionEvent> = trial.iter().filter(|e| e.detector.field() == 1).collect();
        let f2: Vec<&DetectionEvent> = trial.iter().filter(|e| e.detector.field() == 2).collect();
        let dets: Vec<Detector> = trial.iter().map(|e| e.detector).collect();
        let tally = tallies.get_mut(&key).expect("checked against blocks");
        tally.add_trial(
            &dets,
            f1.iter().flat_map(|a| {
                f2.iter()
                    .filter(move |b| in_window(a, b))
                    .map(move |b| (a.detector, b.detector))
            }),
        );
    }
    Ok(tallies.into_values().collect())
}

/// Accidental-coincidence null: every group's field-2 clicks are moved to
/// distinct uniformly chosen trials of the same group, then re-tallied with
/// the whole trial as the window.
pub fn shuffled_tallies(log: &EventLog, seed: u64) -> Result<Vec<GroupTally>> {
    let trials = trials_of(log)?;
    let mut masks: BTreeMap<GroupKey, HashMap<u64, u8>> = BTreeMap::new();
    for trial in trials {
        let m = masks
            .entry(trial[0].key)
            .or_default()
            .entry(trial[0].trial_index)
            .or_insert(0);
        for e in trial {
            *m |= 1 << e.detector.index();
        }
    }
    let mut blocks = log.header.blocks.clone();
    blocks.sort_by_key(|b| b.first_trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (key, n_trials) in group_trials(&blocks) {
        if n_trials == 0 {
            continue;
        }
        let group_blocks: Vec<&BlockInfo> = blocks.iter().filter(|b| b.key == key).collect();
        let nth_trial = |mut pos: u64| {
            for b in &group_blocks {
                if pos < b.n_trials {
                    return b.first_trial + pos;
                }
                pos -= b.n_trials;
            }
            unreachable!("position within group")
        };
        let mut trial_masks = masks.remove(&key).unwrap_or_default();
        let mut moved = Vec::new();
        for m in trial_masks.values_mut() {
            if *m & 0b1100 != 0 {
                moved.push(*m & 0b1100);
                *m &= 0b0011;
            }
        }
        moved.sort_unstable();
        let n = usize::try_from(n_trials).map_err(|_| Error::invalid("group too large to shuffle"))?;
        for (pos, m) in sample(&mut rng, n, moved.len()).into_iter().zip(moved) {
            *trial_masks.entry(nth_trial(pos as u64)).or_insert(0) |= m;
        }
        let mut tally = GroupTally::empty(key, n_trials);
        let mut ordered: Vec<(u64, u8)> = trial_masks.into_iter().collect();
        ordered.sort_unstable();
        for (_, m) in ordered {
            if m != 0 {
                tally.add_mask(m);
            }
        }
        out.push(tally);
    }
    Ok(out)
}
