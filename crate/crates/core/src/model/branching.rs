//! Zeeman-resolved Raman branching for a σ+ write pulse and the mixing angle
//! that summarises it.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// ⟨j1 m1; j2 m2 | j m⟩ for integer angular momenta (Racah formula).
pub fn clebsch_gordan(j1: i32, m1: i32, j2: i32, m2: i32, j: i32, m: i32) -> f64 {
    if m1 + m2 != m
        || m1.abs() > j1
        || m2.abs() > j2
        || m.abs() > j
        || j < (j1 - j2).abs()
        || j > j1 + j2
        || j1 < 0
        || j2 < 0
    {
        return 0.0;
    }
    let f = |n: i32| factorial(n as u32);
    let prefactor = ((2 * j + 1) as f64 * f(j + j1 - j2) * f(j - j1 + j2) * f(j1 + j2 - j) / f(j1 + j2 + j + 1)).sqrt();
    let norm = (f(j + m) * f(j - m) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2)).sqrt();

    let k_min = 0.max(j2 - j - m1).max(j1 - j + m2);
    let k_max = (j1 + j2 - j).min(j1 - m1).min(j2 + m2);
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign
            / (f(k) * f(j1 + j2 - j - k) * f(j1 - m1 - k) * f(j2 + m2 - k) * f(j - j2 + m1 + k) * f(j - j1 - m2 + k));
    }
    prefactor * norm * sum
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn dipole_allowed(a: i32, b: i32) -> bool {
    (a - b).abs() <= 1 && !(a == 0 && b == 0)
}

/// Raman weights for one initial ground sublevel `m_f`.
///
/// `p_plus` ends in |s, m_f⟩ after σ+ emission, `p_minus` ends in |s, m_f + 2⟩
/// after σ− emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchingEntry {
    pub m_f: i32,
    pub p_plus: f64,
    pub p_minus: f64,
}

impl BranchingEntry {
    pub fn final_m_plus(&self) -> i32 {
        self.m_f
    }

    pub fn final_m_minus(&self) -> i32 {
        self.m_f + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchingTable {
    pub entries: Vec<BranchingEntry>,
    pub fg: i32,
    pub fe: i32,
    pub fs: i32,
}

impl BranchingTable {
    pub fn entry(&self, m_f: i32) -> Option<&BranchingEntry> {
        self.entries.iter().find(|e| e.m_f == m_f)
    }

    pub fn total_plus(&self) -> f64 {
        self.entries.iter().map(|e| e.p_plus).sum()
    }

    pub fn total_minus(&self) -> f64 {
        self.entries.iter().map(|e| e.p_minus).sum()
    }

    pub fn total(&self) -> f64 {
        self.total_plus() + self.total_minus()
    }
}

/// Branching weights for σ+ excitation |fg, m⟩ → |fe, m+1⟩ followed by
/// spontaneous Raman decay into |fs⟩, starting from an unpolarized ground
/// manifold. Weights are |CG_exc|²·|CG_decay|², normalised to unit total.
pub fn cg_branching_weights(fg: i32, fe: i32, fs: i32) -> Result<BranchingTable> {
    if fg < 0 || fe < 0 || fs < 0 {
        return Err(Error::invalid("angular momentum labels must be non-negative"));
    }
    if !dipole_allowed(fg, fe) {
        return Err(Error::invalid(format!("F={fe} is not dipole-reachable from F={fg}")));
    }
    if !dipole_allowed(fe, fs) {
        return Err(Error::invalid(format!(
            "F={fe} cannot decay to F={fs} by a dipole transition"
        )));
    }

    let mut entries = Vec::with_capacity((2 * fg + 1) as usize);
    for m_f in -fg..=fg {
        let m_e = m_f + 1;
        let excitation = clebsch_gordan(fg, m_f, 1, 1, fe, m_e).powi(2);
        // Emission amplitude |fe, m_e⟩ → |fs, m_s⟩ + photon(q) is ⟨fs m_s; 1 q | fe m_e⟩.
        let decay = |m_s: i32, q: i32| {
            if m_s.abs() > fs {
                0.0
            } else {
                clebsch_gordan(fs, m_s, 1, q, fe, m_e).powi(2)
            }
        };
        entries.push(BranchingEntry {
            m_f,
            p_plus: excitation * decay(m_e - 1, 1),
            p_minus: excitation * decay(m_e + 1, -1),
        });
    }

    let total: f64 = entries.iter().map(|e| e.p_plus + e.p_minus).sum();
    if total <= 0.0 {
        return Err(Error::invalid("no allowed Raman pathway for these levels"));
    }
    for e in &mut entries {
        e.p_plus /= total;
        e.p_minus /= total;
    }
    Ok(BranchingTable { entries, fg, fe, fs })
}

/// Amplitude imbalance between the σ+ and σ− Raman pathways.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MixingAngle(f64);

impl MixingAngle {
    pub fn new(radians: f64) -> Result<Self> {
        if !(0.0..=FRAC_PI_2).contains(&radians) {
            return Err(Error::invalid(format!("mixing angle {radians} rad outside [0, pi/2]")));
        }
        Ok(Self(radians))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn cos2(self) -> f64 {
        self.0.cos().powi(2)
    }

    /// sin 2η, the entanglement (concurrence) of the ideal pure state.
    pub fn sin_2eta(self) -> f64 {
        (2.0 * self.0).sin()
    }
}

/// η = arccos √(Σp+ / Σ(p+ + p−)).
pub fn effective_eta(table: &BranchingTable) -> Result<MixingAngle> {
    let total = table.total();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::invalid("branching table has no weight"));
    }
    let cos2 = (table.total_plus() / total).clamp(0.0, 1.0);
    MixingAngle::new(cos2.sqrt().acos())
}
