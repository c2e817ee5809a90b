//! Run configuration: a flat `key = value` text format with explicit units.
//!
//! ```text
//! preset = bell
//! p_excitation = 0.02
//! tau = 0us, 5us, 10us
//! k = 12kHz
//! analyzer = chsh, 0deg:0deg
//! ```
//!
//! Every dimensioned key requires a unit suffix; bare numbers are accepted
//! only for dimensionless quantities and counts. A preset line (if present)
//! is applied first, whatever its position, and other keys override it.
//! [`ExperimentConfig::echo`] writes the canonical form, which parses back to
//! an identical configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::decoherence::{k_from_gradient, DecoherenceParams, CS_LANDE_GROUND};
use crate::error::{Error, Result};
use crate::model::{cesium_eta, AnalyzerSettings, ChshSettings, MixingAngle};
use crate::scheduler::TimingConfig;
use crate::simulator::SweepAxis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStatistics {
    /// Poisson pair number with mean `p_excitation`.
    Poisson,
    /// Single-mode thermal (geometric) pair number with mean `p_excitation`.
    Thermal,
    /// Exactly one pair with probability `p_excitation`, otherwise none.
    Single,
}

impl PairStatistics {
    fn as_str(self) -> &'static str {
        match self {
            PairStatistics::Poisson => "poisson",
            PairStatistics::Thermal => "thermal",
            PairStatistics::Single => "single",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticsConfig {
    pub p_excitation: f64,
    pub eta1: f64,
    pub eta2_base: f64,
    pub bg1: f64,
    pub bg2: f64,
    pub pair_statistics: PairStatistics,
    /// Also scale the stored two-qubit coherence by d(τ), on top of the
    /// d(τ)² retrieval-efficiency loss. Off by default.
    pub coherence_dephasing: bool,
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("p_excitation", self.p_excitation),
            ("eta1", self.eta1),
            ("eta2_base", self.eta2_base),
            ("bg1", self.bg1),
            ("bg2", self.bg2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, format!("{v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Above this the excitation is no longer perturbative.
    pub fn is_strong_excitation(&self) -> bool {
        self.p_excitation > 0.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaChoice {
    /// From the Clebsch-Gordan branching table.
    Branching,
    Fixed(MixingAngle),
}

impl EtaChoice {
    pub fn resolve(self) -> MixingAngle {
        match self {
            EtaChoice::Branching => cesium_eta(),
            EtaChoice::Fixed(eta) => eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub timing: TimingConfig,
    /// Storage times scanned, μs. `timing.tau_us` is ignored by the simulator.
    pub taus_us: Vec<f64>,
    pub optics: OpticsConfig,
    pub decoherence: DecoherenceParams,
    pub eta: EtaChoice,
    pub phase_deg: f64,
    pub settings: Vec<AnalyzerSettings>,
    /// MOT windows per (setting, τ) block.
    pub windows: u64,
}

impl ExperimentConfig {
    /// CHSH run: 1100 × 2 μs trials with repump, τ = 0.4 μs, calibrated to
    /// p1 ≈ 1e-4, ḡ12 ≈ 60 and pc ≈ 6 %.
    pub fn bell() -> Self {
        let timing = TimingConfig::bell_test();
        let mut settings = ChshSettings::canonical().settings().to_vec();
        settings.push(AnalyzerSettings::new(0.0, 0.0));
        Self {
            taus_us: vec![timing.tau_us],
            timing,
            optics: OpticsConfig {
                p_excitation: 0.036,
                eta1: 0.0028,
                eta2_base: 0.058,
                bg1: 1e-6,
                bg2: 1e-5,
                pair_statistics: PairStatistics::Poisson,
                coherence_dephasing: false,
            },
            decoherence: DecoherenceParams::new(12.0, vec![1.0, 1.0]).expect("valid defaults"),
            eta: EtaChoice::Branching,
            phase_deg: 0.0,
            settings,
            windows: 100,
        }
    }

    /// Storage scan: 1400 × 1.45 μs trials without repump, g12 at θ1=θ2=0
    /// for τ up to 20.7 μs, with pc ≈ 6 % at τ = 0.
    pub fn storage() -> Self {
        let taus_us = vec![0.0, 5.0, 10.0, 15.0, 20.7];
        Self {
            timing: TimingConfig {
                tau_us: 20.7,
                ..TimingConfig::storage_scan()
            },
            taus_us,
            optics: OpticsConfig {
                p_excitation: 0.021,
                eta1: 0.0048,
                eta2_base: 0.0635,
                ..Self::bell().optics
            },
            settings: vec![AnalyzerSettings::new(0.0, 0.0)],
            windows: 200,
            ..Self::bell()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "bell" => Some(Self::bell()),
            "storage" => Some(Self::storage()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taus_us.is_empty() {
            return Err(Error::config("tau", "at least one storage time required"));
        }
        for &tau in &self.taus_us {
            TimingConfig {
                tau_us: tau,
                ..self.timing.clone()
            }
            .validate()?;
        }
        self.optics.validate()?;
        self.decoherence
            .validate()
            .map_err(|e| Error::config("k", e.to_string()))?;
        if self.settings.is_empty() {
            return Err(Error::config("analyzer", "at least one setting required"));
        }
        if self.windows == 0 {
            return Err(Error::config("windows", "must be > 0"));
        }
        if !self.phase_deg.is_finite() {
            return Err(Error::config("phase", "must be finite"));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if map.insert(k.as_str(), v.as_str()).is_some() {
                return Err(Error::config(k, "duplicate key"));
            }
        }
        let mut cfg = match map.remove("preset") {
            Some(name) => Self::preset(name)
                .ok_or_else(|| Error::config("preset", format!("unknown preset `{name}` (bell, storage)")))?,
            None => Self::bell(),
        };
        let mut gradient = (None, None);
        for (&key, &value) in &map {
            cfg.set(key, value, &mut gradient)?;
        }
        match gradient {
            (Some(l), Some(b)) => {
                if map.contains_key("k") {
                    let derived = k_from_gradient(l, b, CS_LANDE_GROUND);
                    if (derived - cfg.decoherence.k_khz).abs() > 1e-6 * derived.abs().max(1e-12) {
                        return Err(Error::config(
                            "k",
                            format!(
                                "{} kHz conflicts with gradient-derived {derived} kHz",
                                cfg.decoherence.k_khz
                            ),
                        ));
                    }
                }
                cfg.decoherence = DecoherenceParams::from_gradient(l, b, cfg.decoherence.xi.clone())
                    .map_err(|e| Error::config("field_gradient", e.to_string()))?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::config(
                    "field_gradient",
                    "ensemble_length and field_gradient must be given together",
                ))
            }
        }
        cfg.timing.tau_us = cfg.taus_us.iter().cloned().fold(0.0, f64::max);
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, gradient: &mut (Option<f64>, Option<f64>)) -> Result<()> {
        let t = &mut self.timing;
        let o = &mut self.optics;
        match key {
            "mot_rate" => t.mot_rate_hz = quantity(key, value, Dim::Frequency, 0)?,
            "mot_off_window" => t.mot_off_window_ms = quantity(key, value, Dim::Time, -3)?,
            "field_decay_wait" => t.field_decay_wait_ms = quantity(key, value, Dim::Time, -3)?,
            "trials_per_window" => t.trials_per_window = count(key, value)?,
            "trial_period" => t.trial_period_us = quantity(key, value, Dim::Time, -6)?,
            "write_read_delay" => t.write_read_delay_ns = quantity(key, value, Dim::Time, -9)?,
            "pulse_duration" => t.pulse_duration_ns = quantity(key, value, Dim::Time, -9)?,
            "repump_duration" => t.repump_duration_us = quantity(key, value, Dim::Time, -6)?,
            "tau_max" => t.tau_max_us = quantity(key, value, Dim::Time, -6)?,
            "tau" => {
                self.taus_us = list(value)
                    .map(|v| quantity(key, v, Dim::Time, -6))
                    .collect::<Result<_>>()?
            }
            "p_excitation" => o.p_excitation = quantity(key, value, Dim::None, 0)?,
            "eta1" => o.eta1 = quantity(key, value, Dim::None, 0)?,
            "eta2_base" => o.eta2_base = quantity(key, value, Dim::None, 0)?,
            "bg1" => o.bg1 = quantity(key, value, Dim::None, 0)?,
            "bg2" => o.bg2 = quantity(key, value, Dim::None, 0)?,
            "pair_statistics" => {
                o.pair_statistics = match value {
                    "poisson" => PairStatistics::Poisson,
                    "thermal" => PairStatistics::Thermal,
                    "single" => PairStatistics::Single,
                    _ => return Err(Error::config(key, "expected poisson, thermal or single")),
                }
            }
            "coherence_dephasing" => {
                o.coherence_dephasing = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::config(key, "expected true or false")),
                }
            }
            "k" => self.decoherence.k_khz = quantity(key, value, Dim::Frequency, 3)?,
            "xi" => {
                self.decoherence.xi = list(value)
                    .map(|v| quantity(key, v, Dim::None, 0))
                    .collect::<Result<_>>()?
            }
            "ensemble_length" => gradient.0 = Some(quantity(key, value, Dim::Length, 0)?),
            "field_gradient" => gradient.1 = Some(quantity(key, value, Dim::Gradient, 0)?),
            "eta" => {
                self.eta = if value == "auto" {
                    EtaChoice::Branching
                } else {
                    let rad = match value.strip_suffix("rad") {
                        Some(num) => quantity(key, num, Dim::None, 0)?,
                        None => quantity(key, value, Dim::Angle, 0)?.to_radians(),
                    };
                    EtaChoice::Fixed(MixingAngle::new(rad).map_err(|e| Error::config(key, e.to_string()))?)
                }
            }
            "phase" => self.phase_deg = quantity(key, value, Dim::Angle, 0)?,
            "analyzer" => self.settings = parse_analyzer(value)?,
            "windows" => self.windows = count(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Canonical `key = value` lines, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let t = &self.timing;
        let o = &self.optics;
        let mut out: Vec<(&str, String)> = vec![
            ("mot_rate", format!("{}Hz", t.mot_rate_hz)),
            ("mot_off_window", format!("{}ms", t.mot_off_window_ms)),
            ("field_decay_wait", format!("{}ms", t.field_decay_wait_ms)),
            ("trials_per_window", t.trials_per_window.to_string()),
            ("trial_period", format!("{}us", t.trial_period_us)),
            ("write_read_delay", format!("{}ns", t.write_read_delay_ns)),
            ("pulse_duration", format!("{}ns", t.pulse_duration_ns)),
            ("repump_duration", format!("{}us", t.repump_duration_us)),
            ("tau_max", format!("{}us", t.tau_max_us)),
            ("tau", join(self.taus_us.iter().map(|v| format!("{v}us")))),
            ("p_excitation", o.p_excitation.to_string()),
            ("eta1", o.eta1.to_string()),
            ("eta2_base", o.eta2_base.to_string()),
            ("bg1", o.bg1.to_string()),
            ("bg2", o.bg2.to_string()),
            ("pair_statistics", o.pair_statistics.as_str().to_string()),
            ("coherence_dephasing", o.coherence_dephasing.to_string()),
        ];
        match self.decoherence.gradient {
            Some((l, b)) => {
                out.push(("ensemble_length", format!("{l}m")));
                out.push(("field_gradient", format!("{b}T/m")));
            }
            None => out.push(("k", format!("{}kHz", self.decoherence.k_khz))),
        }
        out.push(("xi", join(self.decoherence.xi.iter().map(|v| v.to_string()))));
        out.push((
            "eta",
            match self.eta {
                EtaChoice::Branching => "auto".to_string(),
                EtaChoice::Fixed(e) => format!("{}rad", e.radians()),
            },
        ));
        out.push(("phase", format!("{}deg", self.phase_deg)));
        out.push((
            "analyzer",
            join(self.settings.iter().map(|s| format!("{}deg:{}deg", s.theta1, s.theta2))),
        ));
        out.push(("windows", self.windows.to_string()));
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn echo_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.echo() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Timing with a specific storage time.
    pub fn timing_for(&self, tau_us: f64) -> TimingConfig {
        TimingConfig {
            tau_us,
            ..self.timing.clone()
        }
    }
}

/// Parses a sweep grid: `p_excitation=0.01,0.02,...` or `tau=0us,5us,...`.
pub fn parse_sweep_axis(spec: &str) -> Result<SweepAxis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("axis", format!("`{spec}`: expected <name>=<v1>,<v2>,...")))?;
    let key = key.trim();
    let axis = match key {
        "p_excitation" => SweepAxis::Excitation(
            list(values)
                .map(|v| quantity(key, v, Dim::None, 0))
                .collect::<Result<_>>()?,
        ),
        "tau" => SweepAxis::Tau(
            list(values)
                .map(|v| quantity(key, v, Dim::Time, -6))
                .collect::<Result<_>>()?,
        ),
        _ => {
            return Err(Error::config(
                "axis",
                format!("unknown axis `{key}` (p_excitation, tau)"),
            ))
        }
    };
    if axis.values().is_empty() {
        return Err(Error::config(key, "empty grid"));
    }
    Ok(axis)
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(", ")
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_analyzer(value: &str) -> Result<Vec<AnalyzerSettings>> {
    let mut out = Vec::new();
    for item in list(value) {
        if item == "chsh" {
            out.extend(ChshSettings::canonical().settings());
        } else if let Some(rest) = item.strip_prefix("fringe") {
            let theta1 = quantity("analyzer", rest.trim(), Dim::Angle, 0)?;
            out.extend((0..8).map(|i| AnalyzerSettings::new(theta1, 22.5 * i as f64)));
        } else {
            let (a, b) = item.split_once(':').ok_or_else(|| {
                Error::config(
                    "analyzer",
                    format!("`{item}`: expected theta1:theta2, chsh or fringe <angle>"),
                )
            })?;
            out.push(AnalyzerSettings::new(
                quantity("analyzer", a.trim(), Dim::Angle, 0)?,
                quantity("analyzer", b.trim(), Dim::Angle, 0)?,
            ));
        }
    }
    if out.is_empty() {
        return Err(Error::config("analyzer", "no settings given"));
    }
    Ok(out)
}

fn count<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("`{value}` is not a non-negative integer")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    None,
    /// Seconds.
    Time,
    /// Hz.
    Frequency,
    /// Degrees.
    Angle,
    /// Metres.
    Length,
    /// Tesla per metre.
    Gradient,
}

/// Parses `<number><unit>` and expresses it in 10^`target_exp` of the SI
/// base of `dim` (degrees for angles). Decimal rescaling multiplies or divides
/// by an exact power of ten, so `0.4us` becomes exactly `400` ns.
fn quantity(key: &str, value: &str, dim: Dim, target_exp: i32) -> Result<f64> {
    let value = value.trim();
    let split = value
        .char_indices()
        .find(|&(i, c)| {
            let exponent = matches!(c, 'e' | 'E')
                && value[i + 1..].starts_with(|n: char| n.is_ascii_digit() || n == '-' || n == '+');
            !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+') || exponent)
        })
        .map(|(i, _)| i)
        .unwrap_or(value.len());
    let (num, unit) = value.split_at(split);
    let x: f64 = num
        .parse()
        .map_err(|_| Error::config(key, format!("`{value}` is not a number")))?;
    if !x.is_finite() {
        return Err(Error::config(key, "must be finite"));
    }
    let unit = unit.trim();
    let exp = match (dim, unit) {
        (Dim::None, "") => 0,
        (Dim::None, _) => return Err(Error::config(key, format!("dimensionless, unexpected unit `{unit}`"))),
        (_, "") => {
            return Err(Error::config(
                key,
                format!("`{value}` needs a unit ({})", units_hint(dim)),
            ))
        }
        (Dim::Angle, "rad") => return Ok(x.to_degrees()),
        (Dim::Time, "s") => 0,
        (Dim::Time, "ms") => -3,
        (Dim::Time, "us" | "μs" | "µs") => -6,
        (Dim::Time, "ns") => -9,
        (Dim::Frequency, "Hz") => 0,
        (Dim::Frequency, "kHz") => 3,
        (Dim::Frequency, "MHz") => 6,
        (Dim::Angle, "deg") => 0,
        (Dim::Length, "m") => 0,
        (Dim::Length, "cm") => -2,
        (Dim::Length, "mm") => -3,
        (Dim::Gradient, "T/m") => 0,
        (Dim::Gradient, "mT/m") => -3,
        (Dim::Gradient, "G/cm") => -2,
        _ => {
            return Err(Error::config(
                key,
                format!("unknown unit `{unit}` ({})", units_hint(dim)),
            ))
        }
    };
    let shift = exp - target_exp;
    let pow = 10f64.powi(shift.abs());
    Ok(if shift >= 0 { x * pow } else { x / pow })
}

fn units_hint(dim: Dim) -> &'static str {
    match dim {
        Dim::None => "none",
        Dim::Time => "s, ms, us, ns",
        Dim::Frequency => "Hz, kHz, MHz",
        Dim::Angle => "deg, rad",
        Dim::Length => "m, cm, mm",
        Dim::Gradient => "T/m, mT/m, G/cm",
    }
}
