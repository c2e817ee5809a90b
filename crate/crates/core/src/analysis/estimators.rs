//! Point estimates with Poisson / binomial errors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::counts::{CoincidenceCounts, GroupTally};
use crate::error::{Error, Result};
use crate::eventlog::Detector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    /// Distance from `target` in units of sigma.
    pub fn z_from(&self, target: f64) -> f64 {
        (self.value - target) / self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationEstimate {
    pub e_value: f64,
    pub sigma: f64,
}

/// E from four coincidence counts, each treated as an independent Poisson
/// variable: σ_E = 2·√(N₊N₋(N₊+N₋)) / N².
pub fn correlation_from_counts(tt: u64, tr: u64, rt: u64, rr: u64) -> Result<CorrelationEstimate> {
    let plus = (tt + rr) as f64;
    let minus = (tr + rt) as f64;
    let n = plus + minus;
    if n == 0.0 {
        return Err(Error::UndefinedEstimate("no coincidences".into()));
    }
    Ok(CorrelationEstimate {
        e_value: (plus - minus) / n,
        sigma: 2.0 * (plus * minus * n).sqrt() / (n * n),
    })
}

pub fn correlation_e(c: &CoincidenceCounts) -> Result<CorrelationEstimate> {
    correlation_from_counts(c.c_tt, c.c_tr, c.c_rt, c.c_rr)
}

/// Standard deviation of E over `resamples` Poisson redraws of the counts.
pub fn bootstrap_sigma_e(c: &CoincidenceCounts, resamples: usize, seed: u64) -> Result<f64> {
    correlation_e(c)?;
    if resamples < 2 {
        return Err(Error::invalid("need at least two resamples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |mean: u64, rng: &mut ChaCha8Rng| -> u64 {
        if mean == 0 {
            0
        } else {
            Poisson::new(mean as f64).expect("positive mean").sample(rng) as u64
        }
    };
    let mut values = Vec::with_capacity(resamples);
    while values.len() < resamples {
        let (a, b, d, e) = (
            draw(c.c_tt, &mut rng),
            draw(c.c_tr, &mut rng),
            draw(c.c_rt, &mut rng),
            draw(c.c_rr, &mut rng),
        );
        if let Ok(est) = correlation_from_counts(a, b, d, e) {
            values.push(est.e_value);
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellEstimate {
    /// |S|.
    pub s_value: f64,
    /// S = E₁ + E₂ + E₃ − E₄ before taking the magnitude.
    pub s_signed: f64,
    pub sigma: f64,
    pub correlations: [CorrelationEstimate; 4],
    pub smax_model: Option<f64>,
}

impl BellEstimate {
    /// Violation of the local bound 2 in standard deviations.
    pub fn violation_sigmas(&self) -> f64 {
        (self.s_value - 2.0) / self.sigma
    }
}

/// Correlations in the order of [`crate::model::ChshSettings::settings`].
pub fn chsh_s(e: [CorrelationEstimate; 4]) -> BellEstimate {
    let s = e[0].e_value + e[1].e_value + e[2].e_value - e[3].e_value;
    BellEstimate {
        s_value: s.abs(),
        s_signed: s,
        sigma: e.iter().map(|x| x.sigma * x.sigma).sum::<f64>().sqrt(),
        correlations: e,
        smax_model: None,
    }
}

/// Which detectors define "a click" for the pair statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortSelection {
    /// Either port of each field.
    Any,
    /// T1 with T2: one polarization configuration at θ1 = θ2 = 0.
    Transmitted,
    /// R1 with R2: the other configuration.
    Reflected,
}

impl PortSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            PortSelection::Any => "any",
            PortSelection::Transmitted => "TT",
            PortSelection::Reflected => "RR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStatistics {
    pub selection: PortSelection,
    pub n_trials: u64,
    pub n1: u64,
    pub n2: u64,
    pub n12: u64,
    pub p1: Estimate,
    pub p2: Estimate,
    pub p12: Estimate,
    pub g12: Estimate,
    pub p_c: Estimate,
    /// (g12 − 1) / (g12 + 1).
    pub visibility_model: Estimate,
}

impl PairStatistics {
    /// g12 above 2 indicates a nonclassical field pair.
    pub fn is_nonclassical(&self) -> bool {
        self.g12.value > 2.0
    }
}

pub fn visibility_from_g12(g12: f64) -> f64 {
    (g12 - 1.0) / (g12 + 1.0)
}

/// Inverse of [`visibility_from_g12`].
pub fn g12_for_visibility(v: f64) -> f64 {
    (1.0 + v) / (1.0 - v)
}

fn binomial(k: u64, n: u64) -> Estimate {
    let p = k as f64 / n as f64;
    Estimate::new(p, (p * (1.0 - p) / n as f64).sqrt())
}

/// p1, p2, p12, g12 = p12/(p1·p2), p_c = p12/p1 and the visibility implied
/// by g12, from trial counts. σ(g12) propagates the three counts as
/// independent Poisson variables (a zero joint count contributes as one).
pub fn pair_statistics_from_counts(
    n_trials: u64,
    n1: u64,
    n2: u64,
    n12: u64,
    selection: PortSelection,
) -> Result<PairStatistics> {
    if n_trials == 0 {
        return Err(Error::UndefinedEstimate("no trials".into()));
    }
    if n1 == 0 {
        return Err(Error::UndefinedEstimate("no field-1 events".into()));
    }
    if n2 == 0 {
        return Err(Error::UndefinedEstimate("no field-2 events, g12 undefined".into()));
    }
    if n12 > n1.min(n2) || n1.max(n2) > n_trials {
        return Err(Error::invalid("inconsistent counts"));
    }
    let (p1, p2, p12) = (binomial(n1, n_trials), binomial(n2, n_trials), binomial(n12, n_trials));
    let g = p12.value / (p1.value * p2.value);
    let rel = (1.0 / n12.max(1) as f64 + 1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt();
    let g_sigma = if n12 == 0 {
        // g12 of a single joint count.
        n_trials as f64 / (n1 as f64 * n2 as f64)
    } else {
        g * rel
    };
    let g12 = Estimate::new(g, g_sigma);
    Ok(PairStatistics {
        selection,
        n_trials,
        n1,
        n2,
        n12,
        p1,
        p2,
        p12,
        g12,
        p_c: binomial(n12, n1),
        visibility_model: Estimate::new(visibility_from_g12(g), 2.0 * g_sigma / (g + 1.0).powi(2)),
    })
}

pub fn estimate_g12(tally: &GroupTally, selection: PortSelection) -> Result<PairStatistics> {
    let (n1, n2, n12) = match selection {
        PortSelection::Any => (tally.field1_trials, tally.field2_trials, tally.joint_trials),
        PortSelection::Transmitted => (
            tally.single(Detector::T1),
            tally.single(Detector::T2),
            tally.coincidences[0],
        ),
        PortSelection::Reflected => (
            tally.single(Detector::R1),
            tally.single(Detector::R2),
            tally.coincidences[3],
        ),
    };
    pair_statistics_from_counts(tally.n_trials, n1, n2, n12, selection)
}

/// ḡ12: arithmetic mean of the TT and RR configurations.
pub fn average_g12(tally: &GroupTally) -> Result<Estimate> {
    let a = estimate_g12(tally, PortSelection::Transmitted)?.g12;
    let b = estimate_g12(tally, PortSelection::Reflected)?.g12;
    Ok(Estimate::new(
        0.5 * (a.value + b.value),
        0.5 * (a.sigma * a.sigma + b.sigma * b.sigma).sqrt(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    /// Amplitude of E(θ2) = V·cos 2(θ2 − θ0), clamped to [0, 1].
    pub visibility: Estimate,
    pub theta0_deg: f64,
    /// Amplitude before clamping.
    pub raw_amplitude: f64,
}

/// Weighted linear least squares of E(θ2) = a·cos 2θ2 + b·sin 2θ2; V = √(a²+b²).
/// Needs four or more points spanning at least 90° of θ2. Points with zero
/// sigma make the fit unweighted.
pub fn fringe_visibility(points: &[(f64, CorrelationEstimate)]) -> Result<FringeFit> {
    if points.len() < 4 {
        return Err(Error::IllConditioned(format!("{} fringe points, need 4", points.len())));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 90.0 - 1e-9 {
        return Err(Error::IllConditioned(format!("θ2 spans {}°, need 90°", hi - lo)));
    }
    let unweighted = points.iter().any(|p| !(p.1.sigma > 0.0));
    let (mut scc, mut scs, mut sss, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (theta, e) in points {
        let w = if unweighted { 1.0 } else { 1.0 / (e.sigma * e.sigma) };
        let (s, c) = (2.0 * theta.to_radians()).sin_cos();
        scc += w * c * c;
        scs += w * c * s;
        sss += w * s * s;
        syc += w * e.e_value * c;
        sys += w * e.e_value * s;
    }
    let det = scc * sss - scs * scs;
    if det.abs() < 1e-12 * (scc * sss).max(1e-300) {
        return Err(Error::IllConditioned("fringe design matrix is singular".into()));
    }
    let a = (sss * syc - scs * sys) / det;
    let b = (scc * sys - scs * syc) / det;
    let (var_a, var_b, cov_ab) = (sss / det, scc / det, -scs / det);
    let amp = a.hypot(b);
    let mut var_v = if amp > 0.0 {
        (a * a * var_a + b * b * var_b + 2.0 * a * b * cov_ab) / (amp * amp)
    } else {
        0.5 * (var_a + var_b)
    };
    if unweighted {
        // Scale by the residual variance instead of supplied errors.
        let rss: f64 = points
            .iter()
            .map(|(t, e)| {
                let (s, c) = (2.0 * t.to_radians()).sin_cos();
                (e.e_value - a * c - b * s).powi(2)
            })
            .sum();
        var_v *= rss / (points.len() - 2) as f64;
    }
    Ok(FringeFit {
        visibility: Estimate::new(amp.clamp(0.0, 1.0), var_v.sqrt()),
        theta0_deg: 0.5 * b.atan2(a).to_degrees(),
        raw_amplitude: amp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::GroupKey;
    use crate::model::{born_coincidence_probs, cesium_eta, ideal_state, AnalyzerSettings};

    fn counts(tt: u64, tr: u64, rt: u64, rr: u64) -> CoincidenceCounts {
        CoincidenceCounts {
            c_tt: tt,
            c_tr: tr,
            c_rt: rt,
            c_rr: rr,
            n_trials: 1000,
            key: GroupKey {
                theta1_mdeg: 0,
                theta2_mdeg: 0,
                tau_ns: 0,
            },
        }
    }

    #[test]
    fn correlation_examples() {
        assert_eq!(correlation_e(&counts(100, 0, 0, 100)).unwrap().e_value, 1.0);
        assert_eq!(correlation_e(&counts(50, 50, 50, 50)).unwrap().e_value, 0.0);
        let e = correlation_e(&counts(90, 10, 10, 90)).unwrap();
        assert!((e.e_value - 0.8).abs() < 1e-12);
        // 2·√(180·20·200)/200²
        assert!((e.sigma - 2.0 * (180.0f64 * 20.0 * 200.0).sqrt() / 40_000.0).abs() < 1e-15);
        assert!((e.sigma - 0.042).abs() < 5e-4);
        assert!(matches!(
            correlation_e(&counts(0, 0, 0, 0)),
            Err(Error::UndefinedEstimate(_))
        ));
    }

    #[test]
    fn bootstrap_agrees_with_propagation() {
        let c = counts(900, 100, 100, 900);
        let analytic = correlation_e(&c).unwrap().sigma;
        let boot = bootstrap_sigma_e(&c, 4000, 11).unwrap();
        assert!((boot / analytic - 1.0).abs() < 0.06, "{boot} vs {analytic}");
    }

    #[test]
    fn antisymmetric_under_port_swap() {
        let a = correlation_e(&counts(70, 20, 15, 40)).unwrap();
        let b = correlation_e(&counts(20, 70, 40, 15)).unwrap();
        assert!((a.e_value + b.e_value).abs() < 1e-15);
        assert!((a.sigma - b.sigma).abs() < 1e-15);
    }

    #[test]
    fn chsh_examples() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let e = |v| CorrelationEstimate {
            e_value: v,
            sigma: 0.01,
        };
        let s = chsh_s([e(r), e(r), e(r), e(-r)]);
        assert!((s.s_value - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((s.sigma - 0.02).abs() < 1e-15);
        assert_eq!(chsh_s([e(0.0); 4]).s_value, 0.0);
        let neg = chsh_s([e(-r), e(-r), e(-r), e(r)]);
        assert!(neg.s_signed < 0.0 && neg.s_value > 2.8);
    }

    #[test]
    fn seven_sigma_margin() {
        // S = 2.7 with σ_S = 0.1.
        let e = |v| CorrelationEstimate {
            e_value: v,
            sigma: 0.05,
        };
        let s = chsh_s([e(0.675), e(0.675), e(0.675), e(-0.675)]);
        assert!((s.s_value - 2.7).abs() < 1e-12);
        assert!((s.violation_sigmas() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn pair_statistics_arithmetic() {
        // p1 = 1e-4, p2 = 1e-3, p12 = 6e-6 over 1e8 trials.
        let s = pair_statistics_from_counts(100_000_000, 10_000, 100_000, 600, PortSelection::Any).unwrap();
        assert!((s.p_c.value - 0.06).abs() < 1e-12);
        assert!((s.g12.value - 60.0).abs() < 1e-9);
        assert!((s.visibility_model.value - 59.0 / 61.0).abs() < 1e-12);
        assert!(s.p12.value <= s.p1.value.min(s.p2.value));
        assert!(s.is_nonclassical());
        assert!(pair_statistics_from_counts(10, 1, 0, 0, PortSelection::Any).is_err());
        assert!(pair_statistics_from_counts(10, 2, 2, 3, PortSelection::Any).is_err());
        let classical = pair_statistics_from_counts(10_000, 100, 100, 2, PortSelection::Any).unwrap();
        assert!(!classical.is_nonclassical());
    }

    #[test]
    fn visibility_inversions() {
        assert!((g12_for_visibility(visibility_from_g12(57.0)) - 57.0).abs() < 1e-9);
        assert!((visibility_from_g12(57.0) - 0.9655).abs() < 1e-4);
        assert!((g12_for_visibility(2.0 / 2.74) - 6.4).abs() < 0.05);
    }

    fn born_fringe(theta1: f64) -> Vec<(f64, CorrelationEstimate)> {
        let state = ideal_state(cesium_eta(), 0.0, 0.5).unwrap();
        (0..8)
            .map(|i| {
                let t2 = 22.5 * i as f64;
                let p = born_coincidence_probs(&state, AnalyzerSettings::new(theta1, t2));
                (
                    t2,
                    CorrelationEstimate {
                        e_value: p.correlation(),
                        sigma: 0.0,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn fringe_of_ideal_states() {
        let f = fringe_visibility(&born_fringe(0.0)).unwrap();
        assert!((f.visibility.value - 1.0).abs() < 1e-12);
        let f = fringe_visibility(&born_fringe(-45.0)).unwrap();
        assert!((f.visibility.value - cesium_eta().sin_2eta()).abs() < 1e-12);
        assert!((f.visibility.value - 0.976).abs() < 0.002);
    }

    #[test]
    fn fringe_needs_span_and_points() {
        let pts = born_fringe(0.0);
        assert!(matches!(fringe_visibility(&pts[..3]), Err(Error::IllConditioned(_))));
        let narrow: Vec<_> = (0..5).map(|i| (10.0 * i as f64, pts[0].1)).collect();
        assert!(matches!(fringe_visibility(&narrow), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn weighted_fringe_with_noise() {
        let pts: Vec<_> = (0..8)
            .map(|i| {
                let t = 22.5 * i as f64;
                let e = 0.9 * (2.0 * (t - 10.0f64).to_radians()).cos() + if i % 2 == 0 { 0.01 } else { -0.01 };
                (
                    t,
                    CorrelationEstimate {
                        e_value: e,
                        sigma: 0.02,
                    },
                )
            })
            .collect();
        let f = fringe_visibility(&pts).unwrap();
        assert!((f.visibility.value - 0.9).abs() < 0.02);
        assert!((f.theta0_deg - 10.0).abs() < 1.0);
        assert!(f.visibility.sigma > 0.005 && f.visibility.sigma < 0.02);
    }
}
