//! Monte Carlo event generation.
//!
//! Each trial draws a pair number, detects field 1 from the marginal of the
//! two-qubit state, collapses field 2 on the observed field-1 port and reads
//! it out with the storage-time-dependent efficiency. Independent background
//! clicks are added per detector and clicks on one detector coalesce.
//!
//! Most trials produce nothing. A trial is "quiet" when it has no pair and no
//! background click, which happens with a known probability; quiet trials are
//! decided from one uniform and never touch the full generator, and the rest
//! are sampled exactly conditioned on not being quiet.

use std::cell::Cell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{count_coincidences, GroupTally};
use crate::config::{ExperimentConfig, OpticsConfig, PairStatistics};
use crate::decoherence::{coherence_table, dephasing_factor, CoherenceTable};
use crate::error::{Error, Result};
use crate::eventlog::{run_id, BlockInfo, DetectionEvent, Detector, EventLog, GroupKey, LogHeader, FORMAT_VERSION};
use crate::model::{
    apply_dephasing, cg_branching_weights, field2_port_probability, ideal_state, AnalyzerSettings, Port, TwoQubitState,
    CS_FE, CS_FG, CS_FS,
};
use crate::rng::{derive_seed, TrialStream};
use crate::scheduler::{Scheduler, TraceSink};

/// Set of detectors that clicked in one trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TrialClicks(u8);

impl TrialClicks {
    pub fn insert(&mut self, d: Detector) {
        self.0 |= 1 << d.index();
    }

    pub fn contains(self, d: Detector) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn field1(self) -> bool {
        self.0 & 0b0011 != 0
    }

    pub fn field2(self) -> bool {
        self.0 & 0b1100 != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Detector> {
        Detector::ALL.into_iter().filter(move |d| self.contains(*d))
    }
}

/// Field-2 readout at one storage time.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Readout {
    efficiency: f64,
    /// P(T2) given field 1 was seen in T or R.
    transmitted_given: [f64; 2],
    /// P(T2) with field 1 unobserved.
    transmitted_marginal: f64,
}

impl Readout {
    fn new(state: &TwoQubitState, settings: AnalyzerSettings, efficiency: f64) -> Self {
        let p_t = |rho2| field2_port_probability(&rho2, settings.theta2, Port::Transmitted).clamp(0.0, 1.0);
        Self {
            efficiency,
            transmitted_given: Port::BOTH.map(|port| p_t(state.field2_state(Some((settings.theta1, port))))),
            transmitted_marginal: p_t(state.field2_state(None)),
        }
    }
}

/// Per-block sampling tables: one setting, one storage time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialModel {
    stats: PairStatistics,
    p: f64,
    eta1: f64,
    bg: [f64; 4],
    field1_transmitted: f64,
    heralded: Readout,
    unheralded: Readout,
}

impl TrialModel {
    /// `d_heralded` and `d_unheralded` are the dephasing factors at the
    /// latched storage time and at the plain write-read delay.
    pub fn new(
        optics: &OpticsConfig,
        state: &TwoQubitState,
        settings: AnalyzerSettings,
        d_heralded: f64,
        d_unheralded: f64,
    ) -> Result<Self> {
        optics.validate()?;
        let readout = |d: f64| -> Result<Readout> {
            let efficiency = optics.eta2_base * d * d;
            Ok(if optics.coherence_dephasing {
                Readout::new(&apply_dephasing(state, d)?, settings, efficiency)
            } else {
                Readout::new(state, settings, efficiency)
            })
        };
        Ok(Self {
            stats: optics.pair_statistics,
            p: optics.p_excitation,
            eta1: optics.eta1,
            bg: [optics.bg1, optics.bg1, optics.bg2, optics.bg2],
            field1_transmitted: state
                .field1_probability(settings.theta1, Port::Transmitted)
                .clamp(0.0, 1.0),
            heralded: readout(d_heralded)?,
            unheralded: readout(d_unheralded)?,
        })
    }

    /// Probability of at least one pair.
    fn pair_probability(&self) -> f64 {
        match self.stats {
            PairStatistics::Poisson => -(-self.p).exp_m1(),
            PairStatistics::Thermal => self.p / (1.0 + self.p),
            PairStatistics::Single => self.p,
        }
    }

    /// Probability of no pair and no background click.
    pub fn quiet_probability(&self) -> f64 {
        self.bg
            .iter()
            .fold(1.0 - self.pair_probability(), |acc, b| acc * (1.0 - b))
    }

    fn pairs_at_least_one(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self.stats {
            PairStatistics::Single => 1,
            PairStatistics::Thermal => {
                let r = self.p / (1.0 + self.p);
                let u: f64 = 1.0 - rng.random::<f64>();
                1 + (u.ln() / r.ln()).floor() as u32
            }
            PairStatistics::Poisson => {
                // Inverse CDF of the zero-truncated Poisson.
                let norm = -(-self.p).exp_m1();
                let mut u = rng.random::<f64>() * norm;
                let mut k = 1u32;
                let mut pk = (-self.p).exp() * self.p;
                while u >= pk && k < 1000 {
                    u -= pk;
                    k += 1;
                    pk *= self.p / k as f64;
                }
                k
            }
        }
    }

    fn pairs(&self, rng: &mut ChaCha8Rng) -> u32 {
        if rng.random::<f64>() < self.pair_probability() {
            self.pairs_at_least_one(rng)
        } else {
            0
        }
    }

    /// One trial with no conditioning.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> TrialClicks {
        let n = self.pairs(rng);
        let mut bg = [false; 4];
        for (slot, &b) in bg.iter_mut().zip(&self.bg) {
            *slot = rng.random::<f64>() < b;
        }
        self.finish(n, bg, rng)
    }

    /// One trial conditioned on having a pair or a background click.
    pub fn sample_active(&self, rng: &mut ChaCha8Rng) -> TrialClicks {
        let q = [self.pair_probability(), self.bg[0], self.bg[1], self.bg[2], self.bg[3]];
        let mut u = rng.random::<f64>() * (1.0 - self.quiet_probability());
        let mut none_before = 1.0;
        let mut first = q.iter().rposition(|&x| x > 0.0).unwrap_or(0);
        for (j, &qj) in q.iter().enumerate() {
            let mass = none_before * qj;
            if u < mass {
                first = j;
                break;
            }
            u -= mass;
            none_before *= 1.0 - qj;
        }
        let n = if first == 0 { self.pairs_at_least_one(rng) } else { 0 };
        let mut bg = [false; 4];
        for (i, slot) in bg.iter_mut().enumerate() {
            let j = i + 1;
            *slot = match j.cmp(&first) {
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => true,
                std::cmp::Ordering::Greater => rng.random::<f64>() < self.bg[i],
            };
        }
        self.finish(n, bg, rng)
    }

    fn finish(&self, n: u32, bg: [bool; 4], rng: &mut ChaCha8Rng) -> TrialClicks {
        let mut clicks = TrialClicks::default();
        let mut field1_ports = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let seen = if rng.random::<f64>() < self.eta1 {
                let port = if rng.random::<f64>() < self.field1_transmitted {
                    Port::Transmitted
                } else {
                    Port::Reflected
                };
                clicks.insert(Detector::new(1, port));
                Some(port)
            } else {
                None
            };
            field1_ports.push(seen);
        }
        for (d, &on) in Detector::ALL.iter().zip(&bg).take(2) {
            if on {
                clicks.insert(*d);
            }
        }
        let readout = if clicks.field1() {
            &self.heralded
        } else {
            &self.unheralded
        };
        for &seen in &field1_ports {
            if rng.random::<f64>() < readout.efficiency {
                let p_t = match seen {
                    Some(port) => readout.transmitted_given[port.index()],
                    None => readout.transmitted_marginal,
                };
                let port = if rng.random::<f64>() < p_t {
                    Port::Transmitted
                } else {
                    Port::Reflected
                };
                clicks.insert(Detector::new(2, port));
            }
        }
        for (d, &on) in Detector::ALL.iter().zip(&bg).skip(2) {
            if on {
                clicks.insert(*d);
            }
        }
        clicks
    }
}

/// Samples one trial from the state and settings, with field-2 readout scaled
/// by d(τ)² (d = 1 when the trial is not heralded).
pub fn sample_trial(
    optics: &OpticsConfig,
    state: &TwoQubitState,
    settings: AnalyzerSettings,
    d_tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrialClicks> {
    Ok(TrialModel::new(optics, state, settings, d_tau, 1.0)?.sample(rng))
}

/// Coherence table of the configured level scheme.
pub fn cesium_coherence(config: &ExperimentConfig) -> Result<CoherenceTable> {
    let branching = cg_branching_weights(CS_FG, CS_FE, CS_FS)?;
    coherence_table(
        &branching,
        config.decoherence.lande_ground,
        config.decoherence.lande_storage,
    )
}

/// Generation state shared by one run.
struct Generator<'a> {
    config: &'a ExperimentConfig,
    state: TwoQubitState,
    coherence: CoherenceTable,
    seed: u64,
}

const CHUNK: u64 = 4096;

impl Generator<'_> {
    fn model(&self, settings: AnalyzerSettings, tau_us: f64) -> Result<TrialModel> {
        let d = |t: f64| dephasing_factor(t, &self.config.decoherence, &self.coherence);
        let unlatched_us = self.config.timing.write_read_delay_ns * 1e-3;
        TrialModel::new(
            &self.config.optics,
            &self.state,
            settings,
            d(tau_us.max(unlatched_us))?,
            d(unlatched_us)?,
        )
    }

    fn sample_chunk(&self, model: &TrialModel, quiet: f64, start: u64) -> Vec<Option<TrialClicks>> {
        (start..start + CHUNK)
            .into_par_iter()
            .map(|k| {
                let stream = TrialStream::new(self.seed, k);
                (stream.gate() >= quiet).then(|| model.sample_active(&mut stream.rng()))
            })
            .collect()
    }

    /// Runs one block; returns the next free trial index and start time.
    fn block(
        &self,
        key: GroupKey,
        first_trial: u64,
        start_ns: u64,
        events: &mut Vec<DetectionEvent>,
        sink: &mut impl TraceSink,
    ) -> Result<(u64, u64)> {
        let tau_us = key.tau_us();
        let sched = Scheduler::new(&self.config.timing_for(tau_us))?;
        let model = self.model(key.settings(), tau_us)?;
        let quiet = model.quiet_probability();
        let mut buffer: Vec<Option<TrialClicks>> = Vec::new();
        let mut base = first_trial;
        let current = Cell::new(TrialClicks::default());
        let end = sched.run_windows(
            first_trial,
            start_ns,
            self.config.windows,
            sink,
            |k| {
                if k < base || k >= base + buffer.len() as u64 {
                    base = k;
                    buffer = self.sample_chunk(&model, quiet, k);
                }
                let outcome = buffer[(k - base) as usize];
                if let Some(c) = outcome {
                    current.set(c);
                }
                outcome.map(TrialClicks::field1)
            },
            |s| {
                let clicks = current.get();
                for d in clicks.iter() {
                    let time_ns = if d.field() == 1 {
                        s.herald_ns.expect("field-1 click implies a herald")
                    } else {
                        s.read_ns
                    };
                    events.push(DetectionEvent {
                        trial_index: s.trial_index,
                        time_ns,
                        detector: d,
                        key,
                    });
                }
            },
        );
        let next_start = end.window_start_ns + sched.cycle_ns();
        Ok((end.next_trial, next_start.max(end.clock_ns + 1)))
    }
}

/// Simulates every (τ, setting) block of `config` in order, `config.windows`
/// MOT windows each. Deterministic in `seed` whatever the thread count.
pub fn simulate_run(config: &ExperimentConfig, seed: u64) -> Result<EventLog> {
    simulate_run_traced(config, seed, &mut ())
}

/// As [`simulate_run`], also streaming the scheduler actions into `sink`.
pub fn simulate_run_traced(config: &ExperimentConfig, seed: u64, sink: &mut impl TraceSink) -> Result<EventLog> {
    config.validate()?;
    let eta = config.eta.resolve();
    let label_p = config.optics.p_excitation.clamp(1e-12, 1.0 - 1e-12);
    let generator = Generator {
        config,
        state: ideal_state(eta, config.phase_deg.to_radians(), label_p)?,
        coherence: cesium_coherence(config)?,
        seed,
    };
    let mut events = Vec::new();
    let mut blocks = Vec::new();
    let mut trial = 0u64;
    let mut clock = 0u64;
    for &tau in &config.taus_us {
        for &settings in &config.settings {
            let key = GroupKey::new(settings, tau);
            let (next_trial, next_clock) = generator.block(key, trial, clock, &mut events, sink)?;
            blocks.push(BlockInfo {
                key,
                first_trial: trial,
                n_trials: next_trial - trial,
            });
            trial = next_trial;
            clock = next_clock;
        }
    }
    let echo = config.echo();
    Ok(EventLog {
        header: LogHeader {
            format_version: FORMAT_VERSION,
            run_id: run_id(&echo, seed),
            seed,
            config: echo,
            blocks,
        },
        events,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Values of `p_excitation`.
    Excitation(Vec<f64>),
    /// Storage times in μs; each point scans one τ.
    Tau(Vec<f64>),
}

impl SweepAxis {
    pub fn values(&self) -> &[f64] {
        match self {
            SweepAxis::Excitation(v) | SweepAxis::Tau(v) => v,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Excitation(_) => "p_excitation",
            SweepAxis::Tau(_) => "tau_us",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub seed: u64,
    pub run_id: String,
    pub n_events: usize,
    pub groups: Vec<GroupTally>,
}

/// One run per grid point, seeded by `derive_seed(seed, index)`; only the
/// per-group tallies are kept.
pub fn sweep(config: &ExperimentConfig, axis: &SweepAxis, seed: u64) -> Result<Vec<SweepPoint>> {
    if axis.values().is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    axis.values()
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut c = config.clone();
            match axis {
                SweepAxis::Excitation(_) => c.optics.p_excitation = value,
                SweepAxis::Tau(_) => {
                    c.taus_us = vec![value];
                    c.timing.tau_us = value;
                }
            }
            let point_seed = derive_seed(seed, i as u64);
            let log = simulate_run(&c, point_seed)?;
            Ok(SweepPoint {
                axis_value: value,
                seed: point_seed,
                run_id: log.header.run_id.clone(),
                n_events: log.events.len(),
                groups: count_coincidences(&log, None)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cesium_eta;
    use rand::SeedableRng;

    fn optics(p: f64, stats: PairStatistics) -> OpticsConfig {
        OpticsConfig {
            p_excitation: p,
            eta1: 0.3,
            eta2_base: 0.4,
            bg1: 0.01,
            bg2: 0.02,
            pair_statistics: stats,
            coherence_dephasing: false,
        }
    }

    fn model(o: &OpticsConfig) -> TrialModel {
        let state = ideal_state(cesium_eta(), 0.0, 0.5).unwrap();
        TrialModel::new(o, &state, AnalyzerSettings::new(10.0, 30.0), 0.9, 1.0).unwrap()
    }

    #[test]
    fn clicks_bitset() {
        let mut c = TrialClicks::default();
        assert!(c.is_empty());
        c.insert(Detector::R2);
        assert!(c.field2() && !c.field1());
        c.insert(Detector::T1);
        assert_eq!(c.iter().collect::<Vec<_>>(), [Detector::T1, Detector::R2]);
    }

    #[test]
    fn nothing_without_light() {
        let mut o = optics(0.0, PairStatistics::Poisson);
        o.bg1 = 0.0;
        o.bg2 = 0.0;
        let m = model(&o);
        assert_eq!(m.quiet_probability(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(m.sample(&mut rng).is_empty());
        }
    }

    /// Gated sampling (quiet or active-conditioned) reproduces plain sampling.
    #[test]
    fn gated_sampling_matches_direct() {
        for stats in [PairStatistics::Poisson, PairStatistics::Thermal, PairStatistics::Single] {
            let m = model(&optics(0.2, stats));
            let n = 200_000;
            let mut direct = [0f64; 16];
            let mut gated = [0f64; 16];
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for k in 0..n {
                direct[m.sample(&mut rng).0 as usize] += 1.0;
                let s = TrialStream::new(3, k);
                let c = if s.gate() < m.quiet_probability() {
                    TrialClicks::default()
                } else {
                    m.sample_active(&mut s.rng())
                };
                gated[c.0 as usize] += 1.0;
            }
            for i in 0..16 {
                let (a, b) = (direct[i], gated[i]);
                let sigma = (a + b).sqrt().max(1.0);
                assert!((a - b).abs() < 5.0 * sigma, "{stats:?} mask {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_truncated_pair_numbers() {
        let m = model(&optics(0.5, PairStatistics::Poisson));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mean = (0..n).map(|_| m.pairs_at_least_one(&mut rng) as f64).sum::<f64>() / n as f64;
        // E[n | n ≥ 1] = p / (1 − e^{−p})
        let expect = 0.5 / (1.0 - (-0.5f64).exp());
        assert!((mean - expect).abs() < 0.01, "{mean} vs {expect}");
        let t = model(&optics(0.5, PairStatistics::Thermal));
        let mean = (0..n).map(|_| t.pairs_at_least_one(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.5).abs() < 0.01, "{mean}");
    }
}
