//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::f64::consts::{FRAC_PI_4, SQRT_2};
use std::time::Instant;

use membell::analysis::{
    analyze_log, analyze_tallies, average_g12, chsh_s, correlation_from_counts, decay_points, estimate_g12, fit_decay,
    fit_smax, predict_s_decay, shuffled_tallies, visibility_from_g12, DecayModel, DecayPoint, LmOptions, PortSelection,
};
use membell::config::{ExperimentConfig, PairStatistics};
use membell::decoherence::dephasing_amplitude;
use membell::eventlog::{Detector, GroupKey};
use membell::model::{
    apply_dephasing, born_coincidence_probs, cesium_eta, cg_branching_weights, chsh_max_canonical, effective_eta,
    ideal_state, AnalyzerSettings, ChshSettings, MixingAngle,
};
use membell::scheduler::{rate_gain, run_schedule, TimingConfig};
use membell::simulator::{cesium_coherence, sample_trial, simulate_run, sweep, SweepAxis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Bell-type run with high detection efficiency and no dark counts, so that
/// g12 and V are set by the excitation probability alone.
fn efficient_bell() -> ExperimentConfig {
    let mut c = ExperimentConfig::bell();
    c.optics.eta1 = 0.25;
    c.optics.eta2_base = 0.25;
    c.optics.bg1 = 0.0;
    c.optics.bg2 = 0.0;
    c
}

fn ideal_chsh() -> Outcome {
    let cs = chsh_max_canonical(MixingAngle::new(0.86 * FRAC_PI_4).unwrap());
    let max = chsh_max_canonical(MixingAngle::new(FRAC_PI_4).unwrap());
    check(
        (cs - 2.79).abs() <= 0.005 && (max - 2.0 * SQRT_2).abs() <= 1e-9,
        format!("S(0.86 pi/4) = {cs:.5}, S(pi/4) - 2 sqrt2 = {:.1e}", max - 2.0 * SQRT_2),
    )
}

fn branching_anchor() -> Outcome {
    let eta = effective_eta(&cg_branching_weights(4, 4, 3).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let ratio = eta.radians() / FRAC_PI_4;
    check((0.84..=0.88).contains(&ratio), format!("eta = {ratio:.4} pi/4"))
}

fn born_oracle() -> Outcome {
    let mut c = ExperimentConfig::bell();
    c.optics.pair_statistics = PairStatistics::Single;
    c.optics.p_excitation = 1.0;
    c.optics.eta1 = 1.0;
    c.optics.eta2_base = 1.0;
    c.optics.bg1 = 0.0;
    c.optics.bg2 = 0.0;
    let state = ideal_state(cesium_eta(), 0.3, 0.5).map_err(|e| e.to_string())?;
    let mut angles = ChaCha8Rng::seed_from_u64(2024);
    let chi2 = ChiSquared::new(3.0).unwrap();
    let trials = 100_000u64;
    let mut worst = f64::INFINITY;
    for pair in 0..20u64 {
        let settings = AnalyzerSettings::new(angles.random_range(-90.0..90.0), angles.random_range(-90.0..90.0));
        let probs = born_coincidence_probs(&state, settings).as_array();
        let mut observed = [0u64; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + pair);
        for _ in 0..trials {
            let clicks = sample_trial(&c.optics, &state, settings, 1.0, &mut rng).map_err(|e| e.to_string())?;
            let p1 = if clicks.contains(Detector::T1) { 0 } else { 1 };
            let p2 = if clicks.contains(Detector::T2) { 0 } else { 1 };
            observed[2 * p1 + p2] += 1;
        }
        // Channels with vanishing probability must stay empty; the rest enter χ².
        let mut stat = 0.0;
        let mut dof = 0usize;
        for (o, p) in observed.iter().zip(probs) {
            let expected = p * trials as f64;
            if expected < 1e-9 {
                if *o > 0 {
                    return Err(format!("pair {pair}: {o} counts in a zero-probability channel"));
                }
                continue;
            }
            stat += (*o as f64 - expected).powi(2) / expected;
            dof += 1;
        }
        let dist = if dof == 4 {
            chi2
        } else {
            ChiSquared::new((dof.max(2) - 1) as f64).unwrap()
        };
        worst = worst.min(1.0 - dist.cdf(stat));
    }
    check(
        worst > 0.001,
        format!("smallest chi2 p-value over 20 angle pairs = {worst:.4}"),
    )
}

fn fig2_analog() -> Outcome {
    let mut c = efficient_bell();
    c.windows = 5000;
    let grid = vec![0.035, 0.05, 0.08, 0.12, 0.2, 0.3, 0.45, 0.7, 1.0];
    let points = sweep(&c, &SweepAxis::Excitation(grid), 11).map_err(|e| e.to_string())?;
    let mut data = Vec::new();
    for p in &points {
        let a = analyze_tallies(&p.run_id, p.groups.clone());
        let tau_ns = a.groups[0].tally.key.tau_ns;
        let g = a.mean_g12_at(tau_ns).ok_or("no g12 at theta = 0")?;
        let s = a.bell.first().ok_or("no CHSH estimate")?.estimate;
        data.push((g.value, s.s_value, s.sigma));
    }
    let gmin = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let gmax = data.iter().map(|d| d.0).fold(0.0, f64::max);
    let fit = fit_smax(&data).map_err(|e| e.to_string())?;
    let ideal = chsh_max_canonical(cesium_eta());
    let crossing = fit.threshold_g12().unwrap_or(f64::NAN);
    // Crossing of the measured points themselves, by linear interpolation.
    let mut sorted = data.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let measured_crossing = sorted
        .windows(2)
        .find(|w| w[0].1 < 2.0 && w[1].1 >= 2.0)
        .map(|w| w[0].0 + (2.0 - w[0].1) * (w[1].0 - w[0].0) / (w[1].1 - w[0].1))
        .unwrap_or(f64::NAN);
    check(
        gmin <= 3.5
            && gmax >= 55.0
            && (fit.smax.value - ideal).abs() <= 0.10
            && (6.0..=8.0).contains(&crossing),
        format!(
            "g12 span [{gmin:.2}, {gmax:.1}], Smax = {:.4} +- {:.4} (ideal {ideal:.4}), S=2 at g12 = {crossing:.2} (points: {measured_crossing:.2})",
            fit.smax.value, fit.smax.sigma
        ),
    )
}

fn visibility_relation() -> Outcome {
    let mut c = efficient_bell();
    c.optics.p_excitation = 0.036;
    c.windows = 3000;
    c.settings = (0..8).map(|i| AnalyzerSettings::new(0.0, 22.5 * i as f64)).collect();
    let log = simulate_run(&c, 5).map_err(|e| e.to_string())?;
    let a = analyze_log(&log, None).map_err(|e| e.to_string())?;
    let g = a
        .mean_g12_at(a.groups[0].tally.key.tau_ns)
        .ok_or("no g12 at theta = 0")?;
    let fit = a.fringes.first().ok_or("no fringe fit")?.fit;
    let v = fit.visibility.value;
    let predicted = visibility_from_g12(g.value);
    check(
        (50.0..=65.0).contains(&g.value) && (v - predicted).abs() <= 0.04 && (0.926..=0.98).contains(&v),
        format!(
            "g12 = {:.1} +- {:.1}, V = {v:.4} +- {:.4}, (g-1)/(g+1) = {predicted:.4}",
            g.value, g.sigma, fit.visibility.sigma
        ),
    )
}

fn fig3_analog() -> Outcome {
    let mut c = ExperimentConfig::storage();
    c.windows = 60_000;
    let log = simulate_run(&c, 17).map_err(|e| e.to_string())?;
    let a = analyze_log(&log, None).map_err(|e| e.to_string())?;
    let configs = decay_points(&a.decay_table()).map_err(|e| e.to_string())?;
    let model = DecayModel::new(cesium_coherence(&c).map_err(|e| e.to_string())?, 1.0).map_err(|e| e.to_string())?;
    let fit = fit_decay(&configs, &model, LmOptions::default()).map_err(|e| e.to_string())?;
    let s = predict_s_decay(&fit, &model, 2.74, &[0.0, 20.7]);
    let pc0 = a
        .groups
        .iter()
        .find(|g| g.tally.key == GroupKey::new(AnalyzerSettings::new(0.0, 0.0), 0.0))
        .and_then(|g| g.pairs)
        .ok_or("no tau = 0 group")?
        .p_c;
    let (d0, _) = dephasing_amplitude(0.0, fit.k_fit, &model.table);
    let (d1, _) = dephasing_amplitude(20.7, fit.k_fit, &model.table);
    let pc_end = 0.06 * (d1 / d0).powi(2);
    check(
        pc0.z_from(0.06).abs() <= 3.0 && s[1].s > 2.0 && (0.004..=0.014).contains(&pc_end),
        format!(
            "K = {:.2} +- {:.2} kHz, simulated pc(0) = {:.2} +- {:.2}%, model pc(20.7 us) = {:.2}%, S(0) = {:.3}, S(20.7 us) = {:.3}",
            fit.k_fit,
            fit.k_sigma(),
            100.0 * pc0.value,
            100.0 * pc0.sigma,
            100.0 * pc_end,
            s[0].s,
            s[1].s
        ),
    )
}

fn decay_round_trip() -> Outcome {
    let c = ExperimentConfig::storage();
    let model = DecayModel::new(cesium_coherence(&c).map_err(|e| e.to_string())?, 1.0).map_err(|e| e.to_string())?;
    let (k, xi) = (12.0, [80.0, 120.0]);
    let taus = [0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.7];
    let mut worst_k = 0.0f64;
    let mut worst_xi = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let configs: Vec<Vec<DecayPoint>> = xi
            .iter()
            .map(|&x| {
                taus.iter()
                    .map(|&t| {
                        let g = model.g12(t, k, x);
                        DecayPoint {
                            tau_us: t,
                            g12: g * (1.0 + 0.02 * noise.sample(&mut rng)),
                            sigma: 0.02 * g,
                        }
                    })
                    .collect()
            })
            .collect();
        let fit = fit_decay(&configs, &model, LmOptions::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        worst_k = worst_k.max((fit.k_fit / k - 1.0).abs());
        for (f, x) in fit.xi_fit.iter().zip(xi) {
            worst_xi = worst_xi.max((f / x - 1.0).abs());
        }
    }
    check(
        worst_k <= 0.10 && worst_xi <= 0.10,
        format!(
            "largest relative error over 20 seeds: K {:.2}%, xi {:.2}%",
            100.0 * worst_k,
            100.0 * worst_xi
        ),
    )
}

fn scheduler_gain() -> Outcome {
    let gain = rate_gain(1e-4, 2.0, 40.0, 0.0).map_err(|e| e.to_string())?;
    let gain_latched = rate_gain(1e-4, 2.0, 40.0, 20.0).map_err(|e| e.to_string())?;
    let mut timing = TimingConfig::bell_test();
    timing.tau_us = 20.0;
    timing.tau_max_us = 40.0;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (p1, windows) in [(1e-4, 100_000u64), (1e-3, 20_000), (1e-2, 2_000)] {
        let summary = run_schedule(&timing, p1, 99, windows, &mut ()).map_err(|e| e.to_string())?;
        let measured = summary.mean_time_per_success_us().ok_or("no successes")?;
        let closed = timing.trial_period_us / p1 + timing.tau_us;
        let rel = (measured / closed - 1.0).abs();
        worst = worst.max(rel);
        parts.push(format!(
            "p1={p1:e}: {measured:.1} vs {closed:.1} us ({} heralds)",
            summary.stats.successes
        ));
    }
    check(
        gain >= 20.0 && worst <= 0.05,
        format!(
            "gain = {gain:.4} (tau = 20 us: {gain_latched:.3}); {}",
            parts.join("; ")
        ),
    )
}

fn error_calibration() -> Outcome {
    // Ideal signs at the canonical settings, common |E| = 2.7 / 4.
    let state = ideal_state(cesium_eta(), 0.0, 0.5).map_err(|e| e.to_string())?;
    let settings = ChshSettings::canonical().settings();
    let magnitude = 2.7 / 4.0;
    // Coincidences per setting that give σ_S = 0.1 with Poisson errors.
    let n = (4.0 * (1.0 - magnitude * magnitude) / 0.01_f64).round();
    let means: Vec<[f64; 4]> = settings
        .iter()
        .map(|s| {
            let sign = born_coincidence_probs(&state, *s).correlation().signum();
            let e = sign * magnitude;
            let same = n * (1.0 + e) / 4.0;
            let diff = n * (1.0 - e) / 4.0;
            [same, diff, diff, same]
        })
        .collect();
    let estimate = |counts: &[[u64; 4]]| {
        let es: Vec<_> = counts
            .iter()
            .map(|c| correlation_from_counts(c[0], c[1], c[2], c[3]).unwrap())
            .collect();
        chsh_s([es[0], es[1], es[2], es[3]])
    };
    // Integer counts: round the like and unlike totals, then split them.
    let rounded: Vec<[u64; 4]> = means
        .iter()
        .map(|m| {
            let same = (m[0] + m[3]).round() as u64;
            let diff = (m[1] + m[2]).round() as u64;
            [same - same / 2, diff - diff / 2, diff / 2, same / 2]
        })
        .collect();
    let nominal = estimate(&rounded);
    // Spread of S over Poisson redraws of the same mean counts.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws: Vec<f64> = (0..4000)
        .map(|_| {
            let counts: Vec<[u64; 4]> = means
                .iter()
                .map(|m| m.map(|x| Poisson::new(x).unwrap().sample(&mut rng) as u64))
                .collect();
            estimate(&counts).s_value
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let spread = (draws.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
    let z = nominal.violation_sigmas();
    check(
        (nominal.s_value - 2.7).abs() < 0.02
            && (nominal.sigma - 0.1).abs() < 0.005
            && (z - 7.0).abs() < 0.5
            && (spread / nominal.sigma - 1.0).abs() < 0.1,
        format!(
            "{n} coincidences/setting: S = {:.3} +- {:.4}, {z:.2} sigma; Monte Carlo spread {spread:.4}",
            nominal.s_value, nominal.sigma
        ),
    )
}

fn null_tests() -> Outcome {
    let mut background = ExperimentConfig::bell();
    background.optics.p_excitation = 0.0;
    background.optics.bg1 = 0.01;
    background.optics.bg2 = 0.02;
    background.windows = 200;
    let log = simulate_run(&background, 21).map_err(|e| e.to_string())?;
    let a = analyze_log(&log, None).map_err(|e| e.to_string())?;
    let mut worst_bg = 0.0f64;
    for g in &a.groups {
        let p = g.pairs.ok_or("background group without pairs")?;
        worst_bg = worst_bg.max(p.g12.z_from(1.0).abs());
    }

    let mut signal = efficient_bell();
    signal.windows = 500;
    let log = simulate_run(&signal, 22).map_err(|e| e.to_string())?;
    let mut worst_shuffle = 0.0f64;
    let mut shuffled_mean = 0.0;
    for t in shuffled_tallies(&log, 23).map_err(|e| e.to_string())? {
        let p = estimate_g12(&t, PortSelection::Any).map_err(|e| e.to_string())?;
        worst_shuffle = worst_shuffle.max(p.g12.z_from(1.0).abs());
        shuffled_mean = average_g12(&t).map(|m| m.value).unwrap_or(shuffled_mean);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut states = 0;
    for _ in 0..500 {
        let eta = MixingAngle::new(rng.random_range(0.0..std::f64::consts::FRAC_PI_2)).unwrap();
        let state =
            ideal_state(eta, rng.random_range(-3.2..3.2), rng.random_range(1e-6..0.999)).map_err(|e| e.to_string())?;
        state.validate().map_err(|e| e.to_string())?;
        apply_dephasing(&state, rng.random_range(0.0..=1.0))
            .and_then(|s| s.validate())
            .map_err(|e| e.to_string())?;
        states += 2;
    }
    check(
        worst_bg <= 3.0 && worst_shuffle <= 3.0,
        format!(
            "background-only max |g12-1|/sigma = {worst_bg:.2}; shuffled max = {worst_shuffle:.2} (last mean g12 {shuffled_mean:.3}); {states} density matrices valid"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("ideal-state CHSH", ideal_chsh),
        ("branching mixing angle", branching_anchor),
        ("Born-oracle sampling", born_oracle),
        ("S vs g12 sweep", fig2_analog),
        ("visibility relation", visibility_relation),
        ("storage-time decay", fig3_analog),
        ("decay-fit round trip", decay_round_trip),
        ("scheduler gain", scheduler_gain),
        ("error calibration", error_calibration),
        ("null tests", null_tests),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
