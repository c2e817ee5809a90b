//! Storage-time decay from inhomogeneous Zeeman broadening.
//!
//! A residual field gradient shifts the stored spin-wave coherence
//! |g, m_g⟩ ↔ |s, m_s⟩ by an amount that varies linearly along the ensemble.
//! With detunings spread uniformly over `K · multiplier`, each coherence
//! averages to a sinc, and the retrieved amplitude is their population-weighted
//! sum.

use crate::error::{Error, Result};
use crate::model::BranchingTable;

/// μ_B / h in Hz per tesla.
pub const BOHR_MAGNETON_HZ_PER_T: f64 = 1.399_624_493_61e10;

/// Landé factors of Cs 6S½ F=4 and F=3.
pub const CS_LANDE_GROUND: f64 = 0.25;
pub const CS_LANDE_STORAGE: f64 = -0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoherenceParams {
    /// Broadening scale K in kHz.
    pub k_khz: f64,
    /// Scaling ξ, one per polarization configuration.
    pub xi: Vec<f64>,
    pub lande_ground: f64,
    pub lande_storage: f64,
    /// Ensemble length (m) and field gradient (T/m), when K was derived from them.
    pub gradient: Option<(f64, f64)>,
}

impl DecoherenceParams {
    pub fn new(k_khz: f64, xi: Vec<f64>) -> Result<Self> {
        let p = Self {
            k_khz,
            xi,
            lande_ground: CS_LANDE_GROUND,
            lande_storage: CS_LANDE_STORAGE,
            gradient: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// K = μ_B g_Fg L b / h.
    pub fn from_gradient(length_m: f64, gradient_t_per_m: f64, xi: Vec<f64>) -> Result<Self> {
        let k_khz = k_from_gradient(length_m, gradient_t_per_m, CS_LANDE_GROUND);
        let p = Self {
            k_khz,
            xi,
            lande_ground: CS_LANDE_GROUND,
            lande_storage: CS_LANDE_STORAGE,
            gradient: Some((length_m, gradient_t_per_m)),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_khz >= 0.0 && self.k_khz.is_finite()) {
            return Err(Error::invalid(format!("K = {} kHz must be >= 0", self.k_khz)));
        }
        if self.xi.is_empty() || self.xi.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("every xi must be > 0"));
        }
        if self.lande_ground == 0.0 {
            return Err(Error::invalid("ground-state Landé factor must be non-zero"));
        }
        if let Some((l, b)) = self.gradient {
            let derived = k_from_gradient(l, b, self.lande_ground);
            let scale = derived.abs().max(self.k_khz.abs()).max(f64::MIN_POSITIVE);
            if (derived - self.k_khz).abs() / scale > 1e-6 {
                return Err(Error::invalid(format!(
                    "K = {} kHz disagrees with gradient-derived {derived} kHz",
                    self.k_khz
                )));
            }
        }
        Ok(())
    }
}

pub fn k_from_gradient(length_m: f64, gradient_t_per_m: f64, lande_ground: f64) -> f64 {
    (BOHR_MAGNETON_HZ_PER_T * lande_ground * length_m * gradient_t_per_m).abs() * 1e-3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceEntry {
    pub weight: f64,
    pub freq_multiplier: f64,
    pub m_ground: i32,
    pub m_storage: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceTable {
    pub entries: Vec<CoherenceEntry>,
}

impl CoherenceTable {
    pub fn single(m_ground: i32, m_storage: i32, lande_ground: f64, lande_storage: f64) -> Self {
        Self {
            entries: vec![CoherenceEntry {
                weight: 1.0,
                freq_multiplier: multiplier(m_ground, m_storage, lande_ground, lande_storage),
                m_ground,
                m_storage,
            }],
        }
    }
}

fn multiplier(m_ground: i32, m_storage: i32, g_ground: f64, g_storage: f64) -> f64 {
    (m_ground as f64 * g_ground - m_storage as f64 * g_storage).abs() / g_ground.abs()
}

/// One entry per populated (m_g, m_s) coherence of the branching table.
pub fn coherence_table(branching: &BranchingTable, lande_ground: f64, lande_storage: f64) -> Result<CoherenceTable> {
    if lande_ground == 0.0 {
        return Err(Error::invalid("ground-state Landé factor must be non-zero"));
    }
    let mut entries = Vec::new();
    for e in &branching.entries {
        for (w, m_s) in [(e.p_plus, e.final_m_plus()), (e.p_minus, e.final_m_minus())] {
            if w > 0.0 {
                entries.push(CoherenceEntry {
                    weight: w,
                    freq_multiplier: multiplier(e.m_f, m_s, lande_ground, lande_storage),
                    m_ground: e.m_f,
                    m_storage: m_s,
                });
            }
        }
    }
    let total: f64 = entries.iter().map(|e| e.weight).sum();
    if total <= 0.0 {
        return Err(Error::invalid("branching table has no weight"));
    }
    for e in &mut entries {
        e.weight /= total;
    }
    Ok(CoherenceTable { entries })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn sinc_derivative(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        -x / 3.0 + x * x * x / 30.0
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

/// Signed weighted sinc sum and its derivative with respect to K (per kHz).
pub fn dephasing_amplitude(tau_us: f64, k_khz: f64, table: &CoherenceTable) -> (f64, f64) {
    // kHz · μs = 1e-3
    let scale = std::f64::consts::PI * tau_us * 1e-3;
    let mut f = 0.0;
    let mut df = 0.0;
    for e in &table.entries {
        let a = scale * e.freq_multiplier;
        f += e.weight * sinc(a * k_khz);
        df += e.weight * sinc_derivative(a * k_khz) * a;
    }
    (f, df)
}

/// d(τ) = |Σ wᵢ sinc(π K mᵢ τ)|, τ in μs.
pub fn dephasing_factor(tau_us: f64, params: &DecoherenceParams, table: &CoherenceTable) -> Result<f64> {
    if !(tau_us >= 0.0) {
        return Err(Error::invalid(format!("storage time {tau_us} us must be >= 0")));
    }
    Ok(dephasing_at(tau_us, params.k_khz, table))
}

pub(crate) fn dephasing_at(tau_us: f64, k_khz: f64, table: &CoherenceTable) -> f64 {
    dephasing_amplitude(tau_us, k_khz, table).0.abs().min(1.0)
}

/// base · d(τ)².
pub fn retrieval_efficiency(tau_us: f64, params: &DecoherenceParams, table: &CoherenceTable, base: f64) -> Result<f64> {
    if !(base > 0.0 && base <= 1.0) {
        return Err(Error::invalid(format!("base efficiency {base} outside (0, 1]")));
    }
    Ok(base * dephasing_factor(tau_us, params, table)?.powi(2))
}

/// ξ · base_p12 · d(τ)² for polarization configuration `config`.
pub fn p12_theory(
    tau_us: f64,
    params: &DecoherenceParams,
    table: &CoherenceTable,
    base_p12: f64,
    config: usize,
) -> Result<f64> {
    let xi = params
        .xi
        .get(config)
        .ok_or_else(|| Error::invalid(format!("no xi for configuration {config}")))?;
    Ok(xi * base_p12 * dephasing_factor(tau_us, params, table)?.powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cg_branching_weights;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cs_table() -> CoherenceTable {
        let b = cg_branching_weights(4, 4, 3).unwrap();
        coherence_table(&b, CS_LANDE_GROUND, CS_LANDE_STORAGE).unwrap()
    }

    fn params(k: f64) -> DecoherenceParams {
        DecoherenceParams::new(k, vec![1.0, 1.0]).unwrap()
    }

    /// Direct average of exp(iφ) over detunings spread along the ensemble.
    fn averaged_amplitude(tau_us: f64, k_khz: f64, table: &CoherenceTable, zs: &[f64]) -> f64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for e in &table.entries {
            for z in zs {
                let phase = 2.0 * std::f64::consts::PI * k_khz * 1e3 * e.freq_multiplier * z * tau_us * 1e-6;
                re += e.weight * phase.cos();
                im += e.weight * phase.sin();
            }
        }
        let n = zs.len() as f64;
        (re / n).hypot(im / n)
    }

    #[test]
    fn multipliers() {
        let clock = CoherenceTable::single(0, 0, 0.25, -0.25);
        assert_eq!(clock.entries[0].freq_multiplier, 0.0);
        for m in -3..=3 {
            let t = CoherenceTable::single(m, m, 0.25, -0.25);
            assert_abs_diff_eq!(t.entries[0].freq_multiplier, 2.0 * (m as f64).abs(), epsilon = 1e-15);
        }
    }

    #[test]
    fn cesium_table_is_normalized() {
        let t = cs_table();
        assert_eq!(t.entries.len(), 13);
        assert_abs_diff_eq!(t.entries.iter().map(|e| e.weight).sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(t.entries.iter().all(|e| e.freq_multiplier >= 0.0));
        // σ+ from m=3 stores |g,3⟩↔|s,3⟩, the fastest coherence.
        let fastest = t.entries.iter().map(|e| e.freq_multiplier).fold(0.0, f64::max);
        assert_eq!(fastest, 6.0);
    }

    #[test]
    fn trivial_limits() {
        let t = cs_table();
        assert_eq!(dephasing_factor(0.0, &params(12.0), &t).unwrap(), 1.0);
        for tau in [0.0, 5.0, 40.0, 1000.0] {
            assert_eq!(dephasing_factor(tau, &params(0.0), &t).unwrap(), 1.0);
        }
        assert!(dephasing_factor(-1.0, &params(12.0), &t).is_err());
    }

    #[test]
    fn closed_form_matches_midpoint_average() {
        let t = cs_table();
        let n = 10_000;
        let zs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect();
        let d = dephasing_factor(20.7, &params(12.0), &t).unwrap();
        assert_abs_diff_eq!(d, averaged_amplitude(20.7, 12.0, &t, &zs), epsilon = 1e-4);
        assert_abs_diff_eq!(d, 0.3316, epsilon = 5e-4);
    }

    #[test]
    fn closed_form_matches_stratified_monte_carlo() {
        let t = cs_table();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let zs: Vec<f64> = (0..n)
            .map(|i| (i as f64 + rng.random::<f64>()) / n as f64 - 0.5)
            .collect();
        for tau in [3.0, 10.0, 20.7, 33.0] {
            let d = dephasing_factor(tau, &params(12.0), &t).unwrap();
            assert_abs_diff_eq!(d, averaged_amplitude(tau, 12.0, &t, &zs), epsilon = 1e-3);
        }
    }

    #[test]
    fn first_lobe_is_monotone() {
        let t = cs_table();
        let p = params(12.0);
        let mut last = 1.0;
        for i in 1..=200 {
            let d = dephasing_factor(i as f64 * 0.1, &p, &t).unwrap();
            assert!(d <= last + 1e-15);
            last = d;
        }
    }

    #[test]
    fn retrieval_decay_matches_conditional_probability_drop() {
        let t = cs_table();
        let p = params(12.0);
        assert_eq!(retrieval_efficiency(0.0, &p, &t, 0.06).unwrap(), 0.06);
        let late = retrieval_efficiency(20.7, &p, &t, 0.06).unwrap();
        assert!((0.004..0.014).contains(&late), "pc(20.7us) = {late}");
        assert_abs_diff_eq!(late / 0.06, 0.12, epsilon = 0.015);
        assert!(retrieval_efficiency(1.0, &p, &t, 0.0).is_err());
    }

    #[test]
    fn p12_scaling_cancels_in_ratios() {
        let t = cs_table();
        let a = DecoherenceParams::new(12.0, vec![1.0, 7.5]).unwrap();
        assert_eq!(p12_theory(0.0, &a, &t, 2.0, 1).unwrap(), 15.0);
        for tau in [1.0, 5.0, 12.0, 21.0] {
            let r0 = p12_theory(tau, &a, &t, 2.0, 0).unwrap() / p12_theory(0.0, &a, &t, 2.0, 0).unwrap();
            let r1 = p12_theory(tau, &a, &t, 2.0, 1).unwrap() / p12_theory(0.0, &a, &t, 2.0, 1).unwrap();
            assert_abs_diff_eq!(r0, r1, epsilon = 1e-14);
        }
        let flat = DecoherenceParams::new(0.0, vec![1.0]).unwrap();
        assert_eq!(p12_theory(30.0, &flat, &t, 3.0, 0).unwrap(), 3.0);
        assert!(p12_theory(0.0, &flat, &t, 3.0, 1).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let t = cs_table();
        for (tau, k) in [(5.0, 12.0), (20.7, 12.0), (15.0, 3.0), (10.0, 0.0)] {
            let (_, df) = dephasing_amplitude(tau, k, &t);
            let h = 1e-5;
            let fd = (dephasing_amplitude(tau, k + h, &t).0 - dephasing_amplitude(tau, k - h, &t).0) / (2.0 * h);
            assert_abs_diff_eq!(df, fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn gradient_derived_k() {
        // 0.1143 G/cm over 3 mm gives about 12 kHz.
        let p = DecoherenceParams::from_gradient(3e-3, 1.1431e-3, vec![1.0]).unwrap();
        assert_abs_diff_eq!(p.k_khz, 12.0, epsilon = 0.01);
        let mut bad = p.clone();
        bad.k_khz = 13.0;
        assert!(bad.validate().is_err());
        assert!(DecoherenceParams::new(-1.0, vec![1.0]).is_err());
        assert!(DecoherenceParams::new(1.0, vec![0.0]).is_err());
    }
}
