//! Time-stamped detection records and their text file format.
//!
//! ```text
//! format_version = 1
//! run_id = 3f2a9c0d5e7b1184
//! seed = 7
//! config.p_excitation = 0.036
//! ...
//! block = theta1_mdeg=-22500 theta2_mdeg=0 tau_ns=400 first_trial=0 n_trials=110000
//! end_header
//! trial_index,time_ns,detector,theta1_mdeg,theta2_mdeg,tau_ns
//! 118,4036030,T1,-22500,0,400
//! ```
//!
//! Angles are integer millidegrees and times integer nanoseconds, so a log
//! written twice from the same seed is byte-identical.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{AnalyzerSettings, Port};

pub const FORMAT_VERSION: u32 = 1;
const END_HEADER: &str = "end_header";
const COLUMNS: &str = "trial_index,time_ns,detector,theta1_mdeg,theta2_mdeg,tau_ns";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    T1,
    R1,
    T2,
    R2,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::T1, Detector::R1, Detector::T2, Detector::R2];

    pub fn new(field: u8, port: Port) -> Self {
        match (field, port) {
            (1, Port::Transmitted) => Detector::T1,
            (1, Port::Reflected) => Detector::R1,
            (_, Port::Transmitted) => Detector::T2,
            (_, Port::Reflected) => Detector::R2,
        }
    }

    /// 1 for the heralding photon, 2 for the retrieved photon.
    pub fn field(self) -> u8 {
        match self {
            Detector::T1 | Detector::R1 => 1,
            Detector::T2 | Detector::R2 => 2,
        }
    }

    pub fn port(self) -> Port {
        match self {
            Detector::T1 | Detector::T2 => Port::Transmitted,
            Detector::R1 | Detector::R2 => Port::Reflected,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Detector::T1 => "T1",
            Detector::R1 => "R1",
            Detector::T2 => "T2",
            Detector::R2 => "R2",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "T1" => Ok(Detector::T1),
            "R1" => Ok(Detector::R1),
            "T2" => Ok(Detector::T2),
            "R2" => Ok(Detector::R2),
            _ => Err(format!("unknown detector `{s}`")),
        }
    }
}

pub fn to_mdeg(deg: f64) -> i64 {
    (deg * 1e3).round() as i64
}

pub fn from_mdeg(mdeg: i64) -> f64 {
    mdeg as f64 * 1e-3
}

/// Identifies one (θ1, θ2, τ) group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub theta1_mdeg: i64,
    pub theta2_mdeg: i64,
    pub tau_ns: u64,
}

impl GroupKey {
    pub fn new(settings: AnalyzerSettings, tau_us: f64) -> Self {
        Self {
            theta1_mdeg: to_mdeg(settings.theta1),
            theta2_mdeg: to_mdeg(settings.theta2),
            tau_ns: (tau_us * 1e3).round() as u64,
        }
    }

    pub fn settings(&self) -> AnalyzerSettings {
        AnalyzerSettings::new(from_mdeg(self.theta1_mdeg), from_mdeg(self.theta2_mdeg))
    }

    pub fn tau_us(&self) -> f64 {
        self.tau_ns as f64 * 1e-3
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "theta1={}deg theta2={}deg tau={}us",
            from_mdeg(self.theta1_mdeg),
            from_mdeg(self.theta2_mdeg),
            self.tau_us()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionEvent {
    pub trial_index: u64,
    pub time_ns: u64,
    pub detector: Detector,
    pub key: GroupKey,
}

/// A contiguous range of trials run at one (setting, τ).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockInfo {
    pub key: GroupKey,
    pub first_trial: u64,
    pub n_trials: u64,
}

impl BlockInfo {
    pub fn contains(&self, trial_index: u64) -> bool {
        trial_index >= self.first_trial && trial_index - self.first_trial < self.n_trials
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogHeader {
    pub format_version: u32,
    pub run_id: String,
    pub seed: u64,
    /// Configuration echo, in file order.
    pub config: Vec<(String, String)>,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLog {
    pub header: LogHeader,
    pub events: Vec<DetectionEvent>,
}

/// Stable 16-hex-digit identifier of a configuration echo and seed.
pub fn run_id(config: &[(String, String)], seed: u64) -> String {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    for (k, v) in config {
        feed(k.as_bytes());
        feed(b"=");
        feed(v.as_bytes());
        feed(b"\n");
    }
    feed(&seed.to_le_bytes());
    format!("{:016x}", crate::rng::splitmix64(h))
}

impl EventLog {
    /// Sorted by time, ties broken by detector order T1, R1, T2, R2.
    pub fn is_sorted(&self) -> bool {
        self.events
            .windows(2)
            .all(|w| (w[0].time_ns, w[0].detector) <= (w[1].time_ns, w[1].detector))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(256 + 40 * self.events.len());
        let h = &self.header;
        let _ = writeln!(s, "format_version = {}", h.format_version);
        let _ = writeln!(s, "run_id = {}", h.run_id);
        let _ = writeln!(s, "seed = {}", h.seed);
        for (k, v) in &h.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        for b in &h.blocks {
            let _ = writeln!(
                s,
                "block = theta1_mdeg={} theta2_mdeg={} tau_ns={} first_trial={} n_trials={}",
                b.key.theta1_mdeg, b.key.theta2_mdeg, b.key.tau_ns, b.first_trial, b.n_trials
            );
        }
        s.push_str(END_HEADER);
        s.push('\n');
        s.push_str(COLUMNS);
        s.push('\n');
        for e in &self.events {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.trial_index, e.time_ns, e.detector, e.key.theta1_mdeg, e.key.theta2_mdeg, e.key.tau_ns
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut version = None;
        let mut run_id = None;
        let mut seed = None;
        let mut config = Vec::new();
        let mut blocks = Vec::new();
        let mut saw_end = false;
        for (n, line) in lines.by_ref() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == END_HEADER {
                saw_end = true;
                break;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::data(n, "expected `key = value` in header"))?;
            if version.is_none() && key != "format_version" {
                return Err(Error::data(n, "header must start with format_version"));
            }
            match key {
                "format_version" => {
                    let v: u32 = value.parse().map_err(|_| Error::data(n, "bad format_version"))?;
                    if v != FORMAT_VERSION {
                        return Err(Error::VersionMismatch {
                            found: v,
                            expected: FORMAT_VERSION,
                        });
                    }
                    version = Some(v);
                }
                "run_id" => run_id = Some(value.to_string()),
                "seed" => seed = Some(value.parse().map_err(|_| Error::data(n, "bad seed"))?),
                "block" => blocks.push(parse_block(n, value)?),
                _ => match key.strip_prefix("config.") {
                    Some(k) => config.push((k.to_string(), value.to_string())),
                    None => return Err(Error::data(n, format!("unknown header key `{key}`"))),
                },
            }
        }
        if !saw_end {
            return Err(Error::data(0, "missing end_header line"));
        }
        let header = LogHeader {
            format_version: version.ok_or_else(|| Error::data(0, "missing format_version"))?,
            run_id: run_id.ok_or_else(|| Error::data(0, "missing run_id"))?,
            seed: seed.ok_or_else(|| Error::data(0, "missing seed"))?,
            config,
            blocks,
        };
        let mut events = Vec::new();
        let mut saw_columns = false;
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !saw_columns {
                if line != COLUMNS {
                    return Err(Error::data(n, format!("expected column line `{COLUMNS}`")));
                }
                saw_columns = true;
                continue;
            }
            events.push(parse_record(n, line)?);
        }
        Ok(Self { header, events })
    }
}

fn parse_block(n: usize, value: &str) -> Result<BlockInfo> {
    let mut fields = [None::<i64>; 5];
    const NAMES: [&str; 5] = ["theta1_mdeg", "theta2_mdeg", "tau_ns", "first_trial", "n_trials"];
    for item in value.split_whitespace() {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::data(n, format!("bad block field `{item}`")))?;
        let i = NAMES
            .iter()
            .position(|name| *name == k)
            .ok_or_else(|| Error::data(n, format!("unknown block field `{k}`")))?;
        fields[i] = Some(v.parse().map_err(|_| Error::data(n, format!("bad integer `{v}`")))?);
    }
    let get = |i: usize| fields[i].ok_or_else(|| Error::data(n, format!("block missing {}", NAMES[i])));
    let unsigned = |i: usize| -> Result<u64> {
        u64::try_from(get(i)?).map_err(|_| Error::data(n, format!("{} must be >= 0", NAMES[i])))
    };
    Ok(BlockInfo {
        key: GroupKey {
            theta1_mdeg: get(0)?,
            theta2_mdeg: get(1)?,
            tau_ns: unsigned(2)?,
        },
        first_trial: unsigned(3)?,
        n_trials: unsigned(4)?,
    })
}

fn parse_record(n: usize, line: &str) -> Result<DetectionEvent> {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != 6 {
        return Err(Error::data(n, format!("expected 6 fields, found {}", f.len())));
    }
    let int = |i: usize, name: &str| -> Result<i64> {
        f[i].parse()
            .map_err(|_| Error::data(n, format!("bad {name} `{}`", f[i])))
    };
    let uint = |i: usize, name: &str| -> Result<u64> {
        f[i].parse()
            .map_err(|_| Error::data(n, format!("bad {name} `{}`", f[i])))
    };
    Ok(DetectionEvent {
        trial_index: uint(0, "trial_index")?,
        time_ns: uint(1, "time_ns")?,
        detector: f[2].parse().map_err(|e: String| Error::data(n, e))?,
        key: GroupKey {
            theta1_mdeg: int(3, "theta1_mdeg")?,
            theta2_mdeg: int(4, "theta2_mdeg")?,
            tau_ns: uint(5, "tau_ns")?,
        },
    })
}
