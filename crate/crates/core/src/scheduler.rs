//! Trial timing and the conditional "memory start" latch.
//!
//! Each MOT cycle switches the trap field off, waits for it to decay and then
//! runs a train of write/read trials. A field-1 detection while the herald
//! gate is open latches the sequence: no pulses for τ, then one read.
//!
//! The machine is event driven. [`Input::Tick`] jumps the clock to the current
//! phase deadline; [`Input::Herald`] reports a field-1 detection.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::TrialStream;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingConfig {
    pub mot_rate_hz: f64,
    pub mot_off_window_ms: f64,
    pub field_decay_wait_ms: f64,
    pub trials_per_window: u32,
    pub trial_period_us: f64,
    pub write_read_delay_ns: f64,
    pub pulse_duration_ns: f64,
    pub repump_duration_us: f64,
    pub tau_us: f64,
    pub tau_max_us: f64,
}

impl TimingConfig {
    /// 1100 trials of 2 μs with 1 μs repump.
    pub fn bell_test() -> Self {
        Self {
            mot_rate_hz: 40.0,
            mot_off_window_ms: 6.0,
            field_decay_wait_ms: 3.8,
            trials_per_window: 1100,
            trial_period_us: 2.0,
            write_read_delay_ns: 400.0,
            pulse_duration_ns: 30.0,
            repump_duration_us: 1.0,
            tau_us: 0.4,
            tau_max_us: 40.0,
        }
    }

    /// 1400 trials of 1.45 μs, no repump between trials.
    pub fn storage_scan() -> Self {
        Self {
            trials_per_window: 1400,
            trial_period_us: 1.45,
            repump_duration_us: 0.0,
            ..Self::bell_test()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mot_rate", self.mot_rate_hz),
            ("mot_off_window", self.mot_off_window_ms),
            ("field_decay_wait", self.field_decay_wait_ms),
            ("trial_period", self.trial_period_us),
            ("write_read_delay", self.write_read_delay_ns),
            ("pulse_duration", self.pulse_duration_ns),
            ("tau_max", self.tau_max_us),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be > 0, got {v}")));
            }
        }
        if !(self.repump_duration_us >= 0.0) {
            return Err(Error::config("repump_duration", "must be >= 0"));
        }
        if !(self.tau_us >= 0.0) {
            return Err(Error::config("tau", "must be >= 0"));
        }
        if self.tau_us > self.tau_max_us {
            return Err(Error::config(
                "tau",
                format!("{} us exceeds tau_max {} us", self.tau_us, self.tau_max_us),
            ));
        }
        if self.trials_per_window == 0 {
            return Err(Error::config("trials_per_window", "must be > 0"));
        }
        let t = Timing::from_config(self);
        if t.budget_ns > ms_to_ns(self.mot_off_window_ms) - ms_to_ns(self.field_decay_wait_ms) {
            return Err(Error::config(
                "trials_per_window",
                "trials_per_window * trial_period exceeds mot_off_window - field_decay_wait",
            ));
        }
        if t.repump_ns + t.delay_ns + 2 * t.pulse_ns + 1 > t.period_ns {
            return Err(Error::config(
                "trial_period",
                "too short for repump + write/read delay + pulses",
            ));
        }
        if ms_to_ns(self.mot_off_window_ms) > t.cycle_ns {
            return Err(Error::config("mot_rate", "MOT cycle shorter than the off window"));
        }
        Ok(())
    }
}

fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round() as u64
}

pub(crate) fn us_to_ns(us: f64) -> u64 {
    (us * 1e3).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Timing {
    cycle_ns: u64,
    decay_ns: u64,
    budget_ns: u64,
    period_ns: u64,
    delay_ns: u64,
    pulse_ns: u64,
    repump_ns: u64,
    tau_ns: u64,
}

impl Timing {
    fn from_config(c: &TimingConfig) -> Self {
        let period_ns = us_to_ns(c.trial_period_us);
        Self {
            cycle_ns: (1e9 / c.mot_rate_hz).round() as u64,
            decay_ns: ms_to_ns(c.field_decay_wait_ms),
            budget_ns: period_ns * c.trials_per_window as u64,
            period_ns,
            delay_ns: c.write_read_delay_ns.round() as u64,
            pulse_ns: c.pulse_duration_ns.round() as u64,
            repump_ns: us_to_ns(c.repump_duration_us),
            tau_ns: us_to_ns(c.tau_us),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    MotOffWait,
    Repump,
    WritePulse,
    AwaitHerald,
    Latched { until_ns: u64 },
    ReadPulse,
    InterTrial,
    MotOn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Write,
    Read,
    LatchStart,
    LatchEnd,
    Repump,
    MotOn,
    MotOff,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Write => "WRITE",
            Action::Read => "READ",
            Action::LatchStart => "LATCH_START",
            Action::LatchEnd => "LATCH_END",
            Action::Repump => "REPUMP",
            Action::MotOn => "MOT_ON",
            Action::MotOff => "MOT_OFF",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub clock_ns: u64,
    pub action: Action,
    pub trial_index: u64,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.clock_ns, self.action, self.trial_index)
    }
}

pub trait TraceSink {
    fn record(&mut self, rec: TraceRecord);

    /// Whether records are kept; quiet trials are fast-forwarded otherwise.
    fn enabled(&self) -> bool {
        true
    }
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, rec: TraceRecord) {
        self.push(rec);
    }
}

/// Discards everything.
impl TraceSink for () {
    fn record(&mut self, _: TraceRecord) {}

    fn enabled(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    Tick,
    Herald { at_ns: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScheduleStats {
    pub trials: u64,
    pub write_pulses: u64,
    pub read_pulses: u64,
    pub repumps: u64,
    pub successes: u64,
    pub latches: u64,
    /// Heralds that arrived with the gate closed.
    pub stray_heralds: u64,
    /// Summed duration of all trials including latch pauses.
    pub trial_time_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulerState {
    pub phase: Phase,
    /// Index of the current (or most recently finished) trial.
    pub trial_index: u64,
    pub next_trial: u64,
    pub clock_ns: u64,
    pub deadline_ns: u64,
    pub window_index: u64,
    pub window_start_ns: u64,
    pub sequence_start_ns: u64,
    pub trial_start_ns: u64,
    pub write_ns: u64,
    pub herald_ns: Option<u64>,
    pub read_ns: u64,
    pub stats: ScheduleStats,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: SchedulerState,
    pub actions: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    config: TimingConfig,
    t: Timing,
}

impl Scheduler {
    pub fn new(config: &TimingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            t: Timing::from_config(config),
        })
    }

    pub fn config(&self) -> &TimingConfig {
        &self.config
    }

    pub fn tau_ns(&self) -> u64 {
        self.t.tau_ns
    }

    pub fn cycle_ns(&self) -> u64 {
        self.t.cycle_ns
    }

    /// Opens window 0 at `start_ns` (MOT field switched off).
    pub fn start(&self, first_trial: u64, start_ns: u64, sink: &mut impl TraceSink) -> SchedulerState {
        sink.record(TraceRecord {
            clock_ns: start_ns,
            action: Action::MotOff,
            trial_index: first_trial,
        });
        SchedulerState {
            phase: Phase::MotOffWait,
            trial_index: first_trial,
            next_trial: first_trial,
            clock_ns: start_ns,
            deadline_ns: start_ns + self.t.decay_ns,
            window_index: 0,
            window_start_ns: start_ns,
            sequence_start_ns: start_ns + self.t.decay_ns,
            trial_start_ns: start_ns,
            write_ns: start_ns,
            herald_ns: None,
            read_ns: start_ns,
            stats: ScheduleStats::default(),
        }
    }

    /// Pure transition: returns the successor state and the emitted actions.
    pub fn step(&self, state: &SchedulerState, input: Input) -> Transition {
        let mut next = *state;
        let mut actions = Vec::new();
        self.apply(&mut next, input, &mut actions);
        Transition { state: next, actions }
    }

    pub fn apply(&self, s: &mut SchedulerState, input: Input, sink: &mut impl TraceSink) {
        match input {
            Input::Herald { at_ns } => self.herald(s, at_ns, sink),
            Input::Tick => self.tick(s, sink),
        }
    }

    fn emit(&self, s: &SchedulerState, at: u64, action: Action, sink: &mut impl TraceSink) {
        sink.record(TraceRecord {
            clock_ns: at,
            action,
            trial_index: s.trial_index,
        });
    }

    fn herald(&self, s: &mut SchedulerState, at: u64, sink: &mut impl TraceSink) {
        if s.phase != Phase::AwaitHerald || at < s.clock_ns || at >= s.deadline_ns {
            s.stats.stray_heralds += 1;
            return;
        }
        s.clock_ns = at;
        s.herald_ns = Some(at);
        s.stats.successes += 1;
        if self.t.tau_ns == 0 {
            self.fire_read(s, at, sink);
        } else {
            self.emit(s, at, Action::LatchStart, sink);
            s.stats.latches += 1;
            let until_ns = at + self.t.tau_ns;
            s.phase = Phase::Latched { until_ns };
            s.deadline_ns = until_ns;
        }
    }

    fn tick(&self, s: &mut SchedulerState, sink: &mut impl TraceSink) {
        let now = s.deadline_ns;
        s.clock_ns = now;
        match s.phase {
            Phase::MotOffWait => {
                s.sequence_start_ns = now;
                self.begin_trial(s, now, sink);
            }
            Phase::Repump => self.fire_write(s, now, sink),
            Phase::WritePulse => {
                s.phase = Phase::AwaitHerald;
                s.deadline_ns = s.write_ns + self.t.delay_ns;
            }
            Phase::AwaitHerald => self.fire_read(s, now, sink),
            Phase::Latched { until_ns } => {
                self.emit(s, until_ns, Action::LatchEnd, sink);
                self.fire_read(s, until_ns + 1, sink);
            }
            Phase::ReadPulse => {
                let extension = if s.herald_ns.is_some() { self.t.tau_ns } else { 0 };
                let end = (s.trial_start_ns + self.t.period_ns + extension).max(now);
                s.stats.trial_time_ns += end - s.trial_start_ns;
                s.phase = Phase::InterTrial;
                s.deadline_ns = end;
            }
            Phase::InterTrial => {
                if now + self.t.period_ns <= s.sequence_start_ns + self.t.budget_ns {
                    self.begin_trial(s, now, sink);
                } else {
                    self.emit(s, now, Action::MotOn, sink);
                    s.phase = Phase::MotOn;
                    s.deadline_ns = (s.window_start_ns + self.t.cycle_ns).max(now + 1);
                }
            }
            Phase::MotOn => {
                s.window_index += 1;
                s.window_start_ns = now;
                self.emit(s, now, Action::MotOff, sink);
                s.phase = Phase::MotOffWait;
                s.deadline_ns = now + self.t.decay_ns;
            }
        }
    }

    fn begin_trial(&self, s: &mut SchedulerState, now: u64, sink: &mut impl TraceSink) {
        s.trial_index = s.next_trial;
        s.next_trial += 1;
        s.trial_start_ns = now;
        s.herald_ns = None;
        s.stats.trials += 1;
        if self.t.repump_ns > 0 {
            self.emit(s, now, Action::Repump, sink);
            s.stats.repumps += 1;
            s.phase = Phase::Repump;
            s.deadline_ns = now + self.t.repump_ns;
        } else {
            self.fire_write(s, now, sink);
        }
    }

    fn fire_write(&self, s: &mut SchedulerState, now: u64, sink: &mut impl TraceSink) {
        s.write_ns = now;
        s.clock_ns = now;
        self.emit(s, now, Action::Write, sink);
        s.stats.write_pulses += 1;
        s.phase = Phase::WritePulse;
        s.deadline_ns = now + self.t.pulse_ns;
    }

    fn fire_read(&self, s: &mut SchedulerState, at: u64, sink: &mut impl TraceSink) {
        s.read_ns = at;
        s.clock_ns = at;
        self.emit(s, at, Action::Read, sink);
        s.stats.read_pulses += 1;
        s.phase = Phase::ReadPulse;
        s.deadline_ns = at + self.t.pulse_ns;
    }

    /// True when the next tick would start a trial in the current window.
    pub fn can_begin_trial(&self, s: &SchedulerState) -> bool {
        match s.phase {
            Phase::MotOffWait => true,
            Phase::InterTrial => s.deadline_ns + self.t.period_ns <= s.sequence_start_ns + self.t.budget_ns,
            _ => false,
        }
    }

    /// Runs up to `max` herald-free trials in closed form. Only valid at a
    /// trial boundary; returns how many trials were consumed (limited by the
    /// window budget). Emits no trace records.
    pub fn skip_quiet_trials(&self, s: &mut SchedulerState, max: u64) -> u64 {
        let start = match s.phase {
            Phase::MotOffWait | Phase::InterTrial => s.deadline_ns,
            _ => return 0,
        };
        let seq_start = if s.phase == Phase::MotOffWait {
            start
        } else {
            s.sequence_start_ns
        };
        let end = seq_start + self.t.budget_ns;
        let slots = end.saturating_sub(start) / self.t.period_ns;
        let n = max.min(slots);
        if n == 0 {
            return 0;
        }
        let last_start = start + (n - 1) * self.t.period_ns;
        s.sequence_start_ns = seq_start;
        s.trial_index = s.next_trial + n - 1;
        s.next_trial += n;
        s.trial_start_ns = last_start;
        s.write_ns = last_start + self.t.repump_ns;
        s.read_ns = s.write_ns + self.t.delay_ns;
        s.clock_ns = s.read_ns + self.t.pulse_ns;
        s.herald_ns = None;
        s.phase = Phase::InterTrial;
        s.deadline_ns = start + n * self.t.period_ns;
        s.stats.trials += n;
        s.stats.write_pulses += n;
        s.stats.read_pulses += n;
        if self.t.repump_ns > 0 {
            s.stats.repumps += n;
        }
        s.stats.trial_time_ns += n * self.t.period_ns;
        n
    }

    /// Drives `windows` MOT windows. `heralds(k)` says whether trial `k` has
    /// anything to simulate (`None` = quiet) and whether it heralds;
    /// `on_trial` sees the state after every non-quiet trial completes.
    pub fn run_windows<S, H, F>(
        &self,
        first_trial: u64,
        start_ns: u64,
        windows: u64,
        sink: &mut S,
        mut heralds: H,
        mut on_trial: F,
    ) -> SchedulerState
    where
        S: TraceSink,
        H: FnMut(u64) -> Option<bool>,
        F: FnMut(&SchedulerState),
    {
        let fast = !sink.enabled();
        let mut s = self.start(first_trial, start_ns, sink);
        if windows == 0 {
            return s;
        }
        loop {
            if !self.can_begin_trial(&s) {
                debug_assert_eq!(s.phase, Phase::InterTrial);
                self.tick(&mut s, sink);
                if s.window_index + 1 >= windows {
                    break;
                }
                self.tick(&mut s, sink);
                continue;
            }
            let k = s.next_trial;
            match heralds(k) {
                None if fast => {
                    self.skip_quiet_trials(&mut s, 1);
                }
                kind => {
                    while s.phase != Phase::AwaitHerald {
                        self.tick(&mut s, sink);
                    }
                    if kind == Some(true) {
                        let at = s.clock_ns;
                        self.herald(&mut s, at, sink);
                    }
                    while s.phase != Phase::InterTrial {
                        self.tick(&mut s, sink);
                    }
                    if kind.is_some() {
                        on_trial(&s);
                    }
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSummary {
    pub stats: ScheduleStats,
    pub windows: u64,
    pub elapsed_ns: u64,
}

impl ScheduleSummary {
    /// Mean trial time spent per herald, μs.
    pub fn mean_time_per_success_us(&self) -> Option<f64> {
        (self.stats.successes > 0).then(|| self.stats.trial_time_ns as f64 / self.stats.successes as f64 * 1e-3)
    }
}

/// Schedules `windows` MOT windows with an independent herald probability
/// `p1` per trial.
pub fn run_schedule(
    config: &TimingConfig,
    p1: f64,
    seed: u64,
    windows: u64,
    sink: &mut impl TraceSink,
) -> Result<ScheduleSummary> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(Error::invalid(format!("herald probability {p1} outside [0, 1]")));
    }
    let sched = Scheduler::new(config)?;
    let end = sched.run_windows(
        0,
        0,
        windows,
        sink,
        |k| (TrialStream::new(seed, k).gate() < p1).then_some(true),
        |_| {},
    );
    Ok(ScheduleSummary {
        stats: end.stats,
        windows,
        elapsed_ns: end.clock_ns,
    })
}

/// Repetition-rate gain of conditional latching over padding every trial to
/// `tau_max`: (τ_max / p1) / (period / p1 + τ).
pub fn rate_gain(p1: f64, trial_period_us: f64, tau_max_us: f64, tau_us: f64) -> Result<f64> {
    if !(p1 > 0.0 && p1 <= 1.0) {
        return Err(Error::invalid(format!("p1 = {p1} outside (0, 1]")));
    }
    if !(trial_period_us > 0.0 && tau_max_us > 0.0 && tau_us >= 0.0) {
        return Err(Error::invalid("durations must be positive"));
    }
    // (τ_max / p1) / (period / p1 + τ), with p1 cleared from both terms.
    Ok(tau_max_us / (trial_period_us + p1 * tau_us))
}

/// Checks the structural invariants of an emitted trace: strictly increasing
/// time, one read per trial, latches of length τ, no writes while latched.
pub fn validate_trace(trace: &[TraceRecord], tau_ns: u64) -> std::result::Result<(), String> {
    let mut latched_since: Option<u64> = None;
    let mut reads_this_trial = 0u32;
    let mut current_trial: Option<u64> = None;
    let mut pending_read_after_latch = false;
    for (i, w) in trace.windows(2).enumerate() {
        if w[1].clock_ns <= w[0].clock_ns {
            return Err(format!("timestamps not increasing at record {}", i + 1));
        }
    }
    for rec in trace {
        if current_trial != Some(rec.trial_index) && !matches!(rec.action, Action::MotOn | Action::MotOff) {
            if current_trial.is_some() && reads_this_trial != 1 {
                return Err(format!("trial {:?} had {reads_this_trial} reads", current_trial));
            }
            current_trial = Some(rec.trial_index);
            reads_this_trial = 0;
        }
        match rec.action {
            Action::LatchStart => {
                if latched_since.is_some() {
                    return Err(format!("nested latch at {}", rec.clock_ns));
                }
                latched_since = Some(rec.clock_ns);
            }
            Action::LatchEnd => {
                let start = latched_since
                    .take()
                    .ok_or_else(|| format!("latch end without start at {}", rec.clock_ns))?;
                if (rec.clock_ns - start).abs_diff(tau_ns) > 1 {
                    return Err(format!("latch of {} ns, expected {tau_ns}", rec.clock_ns - start));
                }
                pending_read_after_latch = true;
                continue;
            }
            Action::Write | Action::Repump if latched_since.is_some() => {
                return Err(format!("pulse inside latch at {}", rec.clock_ns));
            }
            Action::Read => {
                if latched_since.is_some() {
                    return Err(format!("read inside latch at {}", rec.clock_ns));
                }
                reads_this_trial += 1;
            }
            _ => {}
        }
        if pending_read_after_latch {
            if rec.action != Action::Read {
                return Err(format!("latch not followed by read at {}", rec.clock_ns));
            }
            pending_read_after_latch = false;
        }
    }
    if latched_since.is_some() || pending_read_after_latch {
        return Err("trace ends inside a latch".into());
    }
    if current_trial.is_some() && reads_this_trial != 1 {
        return Err(format!("final trial had {reads_this_trial} reads"));
    }
    Ok(())
}
