//! Two-qubit polarization state of fields 1 and 2 and its Born-rule
//! detection statistics.
//!
//! Basis order is {H1H2, H1V2, V1H2, V1V2} after the quarter-wave plates map
//! σ+ → H and σ− → V. The field-2 analyzer's transmitted port projects onto
//! θ2 + 90°, which absorbs the orthogonal polarization of the retrieved photon
//! so that θ1 = θ2 = 0 is the point of maximal correlation.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};
use num_complex::Complex64;

use super::branching::MixingAngle;
use crate::error::{Error, Result};

pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const EIGEN_FLOOR: f64 = -1e-10;

const H1V2: usize = 1;
const V1H2: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Port {
    Transmitted,
    Reflected,
}

impl Port {
    pub const BOTH: [Port; 2] = [Port::Transmitted, Port::Reflected];

    pub fn index(self) -> usize {
        match self {
            Port::Transmitted => 0,
            Port::Reflected => 1,
        }
    }
}

/// One analyzer setting (θ1, θ2), degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzerSettings {
    pub theta1: f64,
    pub theta2: f64,
}

impl AnalyzerSettings {
    pub fn new(theta1: f64, theta2: f64) -> Self {
        Self { theta1, theta2 }
    }
}

/// The four CHSH settings (θ1, θ1′, θ2, θ2′), degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshSettings {
    pub theta1: f64,
    pub theta1p: f64,
    pub theta2: f64,
    pub theta2p: f64,
}

impl ChshSettings {
    pub fn canonical() -> Self {
        Self {
            theta1: -22.5,
            theta1p: 22.5,
            theta2: 0.0,
            theta2p: 45.0,
        }
    }

    /// Settings in the order S = E₁ + E₂ + E₃ − E₄.
    pub fn settings(&self) -> [AnalyzerSettings; 4] {
        [
            AnalyzerSettings::new(self.theta1, self.theta2),
            AnalyzerSettings::new(self.theta1p, self.theta2),
            AnalyzerSettings::new(self.theta1, self.theta2p),
            AnalyzerSettings::new(self.theta1p, self.theta2p),
        ]
    }
}

impl Default for ChshSettings {
    fn default() -> Self {
        Self::canonical()
    }
}

/// Port projection vector (real) for field 1 at angle `theta` in degrees.
pub fn field1_vector(theta: f64, port: Port) -> Vector2<f64> {
    let t = theta.to_radians();
    match port {
        Port::Transmitted => Vector2::new(t.cos(), t.sin()),
        Port::Reflected => Vector2::new(-t.sin(), t.cos()),
    }
}

/// Field-2 projection vector: the transmitted port sits at θ2 + 90°.
pub fn field2_vector(theta: f64, port: Port) -> Vector2<f64> {
    field1_vector(theta + 90.0, port)
}

/// Joint Born probabilities indexed `[port1][port2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceProbs {
    pub tt: f64,
    pub tr: f64,
    pub rt: f64,
    pub rr: f64,
}

impl CoincidenceProbs {
    pub fn get(&self, p1: Port, p2: Port) -> f64 {
        match (p1, p2) {
            (Port::Transmitted, Port::Transmitted) => self.tt,
            (Port::Transmitted, Port::Reflected) => self.tr,
            (Port::Reflected, Port::Transmitted) => self.rt,
            (Port::Reflected, Port::Reflected) => self.rr,
        }
    }

    pub fn sum(&self) -> f64 {
        self.tt + self.tr + self.rt + self.rr
    }

    pub fn correlation(&self) -> f64 {
        (self.tt + self.rr - self.tr - self.rt) / self.sum()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tt, self.tr, self.rt, self.rr]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4<Complex64>,
    pair_probability: f64,
}

impl TwoQubitState {
    /// Wraps an arbitrary matrix after checking it is a density matrix.
    pub fn from_density_matrix(rho: Matrix4<Complex64>, pair_probability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pair_probability) {
            return Err(Error::invalid("pair probability outside [0, 1]"));
        }
        let state = Self { rho, pair_probability };
        state.validate()?;
        Ok(state)
    }

    pub fn maximally_mixed(pair_probability: f64) -> Self {
        Self {
            rho: Matrix4::identity().map(|z: Complex64| z * 0.25),
            pair_probability,
        }
    }

    pub fn rho(&self) -> &Matrix4<Complex64> {
        &self.rho
    }

    pub fn pair_probability(&self) -> f64 {
        self.pair_probability
    }

    pub fn coherence(&self) -> Complex64 {
        self.rho[(H1V2, V1H2)]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.rho);
        eig.eigenvalues.iter().copied().collect()
    }

    /// Hermitian, unit trace and positive semidefinite at the crate tolerances.
    pub fn validate(&self) -> Result<()> {
        let herm = (self.rho - self.rho.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm > HERMITICITY_TOL {
            return Err(Error::invalid(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = self.rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::invalid(format!("density matrix trace {tr}")));
        }
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < EIGEN_FLOOR {
            return Err(Error::invalid(format!("density matrix has eigenvalue {min:e}")));
        }
        Ok(())
    }

    fn expectation(&self, v: &Vector4<f64>) -> f64 {
        let vc = v.map(|x| Complex64::new(x, 0.0));
        (vc.adjoint() * self.rho * vc)[(0, 0)].re
    }

    /// Born probability for one port pair.
    pub fn port_probability(&self, settings: AnalyzerSettings, p1: Port, p2: Port) -> f64 {
        let v = field1_vector(settings.theta1, p1).kronecker(&field2_vector(settings.theta2, p2));
        self.expectation(&Vector4::from_column_slice(v.as_slice()))
    }

    /// Field-1 marginal probability of `port` at `theta1`.
    pub fn field1_probability(&self, theta1: f64, port: Port) -> f64 {
        let a = field1_vector(theta1, port);
        let mut p = 0.0;
        for b in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    p += a[i] * a[j] * self.rho[(2 * i + b, 2 * j + b)].re;
                }
            }
        }
        p
    }

    /// Reduced state of field 2 after field 1 was found in `port` at
    /// `theta1`; `None` leaves field 1 unobserved (partial trace).
    pub fn field2_state(&self, conditioned_on: Option<(f64, Port)>) -> Matrix2<Complex64> {
        let mut out = Matrix2::zeros();
        match conditioned_on {
            None => {
                for b in 0..2 {
                    for bp in 0..2 {
                        out[(b, bp)] = self.rho[(b, bp)] + self.rho[(2 + b, 2 + bp)];
                    }
                }
            }
            Some((theta1, port)) => {
                let a = field1_vector(theta1, port);
                for b in 0..2 {
                    for bp in 0..2 {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for i in 0..2 {
                            for j in 0..2 {
                                acc += self.rho[(2 * i + b, 2 * j + bp)] * (a[i] * a[j]);
                            }
                        }
                        out[(b, bp)] = acc;
                    }
                }
                let tr = out.trace().re;
                if tr > 0.0 {
                    out /= Complex64::new(tr, 0.0);
                }
            }
        }
        out
    }
}

/// Probability that a single-qubit field-2 state exits `port` at `theta2`.
pub fn field2_port_probability(rho2: &Matrix2<Complex64>, theta2: f64, port: Port) -> f64 {
    let b = field2_vector(theta2, port).map(|x| Complex64::new(x, 0.0));
    (b.adjoint() * rho2 * b)[(0, 0)].re
}

/// |ψ⟩ = cos η |H1V2⟩ + e^{iφ} sin η |V1H2⟩, φ in radians.
pub fn ideal_state(eta: MixingAngle, phase: f64, p: f64) -> Result<TwoQubitState> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("pair probability {p} outside (0, 1)")));
    }
    let mut psi = Vector4::<Complex64>::zeros();
    psi[H1V2] = Complex64::new(eta.radians().cos(), 0.0);
    psi[V1H2] = Complex64::from_polar(eta.radians().sin(), phase);
    Ok(TwoQubitState {
        rho: psi * psi.adjoint(),
        pair_probability: p,
    })
}

/// Scales the H1V2 ↔ V1H2 coherence by `d`.
pub fn apply_dephasing(state: &TwoQubitState, d: f64) -> Result<TwoQubitState> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::invalid(format!("dephasing factor {d} outside [0, 1]")));
    }
    let mut rho = state.rho;
    rho[(H1V2, V1H2)] *= d;
    rho[(V1H2, H1V2)] *= d;
    Ok(TwoQubitState {
        rho,
        pair_probability: state.pair_probability,
    })
}

pub fn born_coincidence_probs(state: &TwoQubitState, settings: AnalyzerSettings) -> CoincidenceProbs {
    use Port::*;
    CoincidenceProbs {
        tt: state.port_probability(settings, Transmitted, Transmitted),
        tr: state.port_probability(settings, Transmitted, Reflected),
        rt: state.port_probability(settings, Reflected, Transmitted),
        rr: state.port_probability(settings, Reflected, Reflected),
    }
}

/// Signed S = E₁ + E₂ + E₃ − E₄ from Born probabilities.
pub fn chsh_from_state(state: &TwoQubitState, chsh: &ChshSettings) -> f64 {
    let e: Vec<f64> = chsh
        .settings()
        .iter()
        .map(|s| born_coincidence_probs(state, *s).correlation())
        .collect();
    e[0] + e[1] + e[2] - e[3]
}

/// |S| of the ideal state at the canonical settings: √2 (1 + sin 2η).
pub fn chsh_max_canonical(eta: MixingAngle) -> f64 {
    std::f64::consts::SQRT_2 * (1.0 + eta.sin_2eta())
}

/// Wootters concurrence.
pub fn concurrence(state: &TwoQubitState) -> f64 {
    let i = Complex64::new(0.0, 1.0);
    let sy = Matrix2::new(Complex64::new(0.0, 0.0), -i, i, Complex64::new(0.0, 0.0));
    let syy = sy.kronecker(&sy);
    let rho = state.rho;
    let rho_tilde = syy * rho.conjugate() * syy;

    let eig = SymmetricEigen::new(rho);
    let sqrt_vals = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    let sqrt_rho = eig.eigenvectors * Matrix4::from_diagonal(&sqrt_vals) * eig.eigenvectors.adjoint();
    let m = sqrt_rho * rho_tilde * sqrt_rho;
    let m = (m + m.adjoint()).map(|z| z * 0.5);
    let mut l: Vec<f64> = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    l.sort_by(|a, b| b.total_cmp(a));
    (l[0] - l[1] - l[2] - l[3]).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn eta(x: f64) -> MixingAngle {
        MixingAngle::new(x).unwrap()
    }

    #[test]
    fn ideal_state_is_valid_and_rank_one() {
        let s = ideal_state(eta(0.86 * FRAC_PI_4), 0.3, 0.01).unwrap();
        s.validate().unwrap();
        let mut ev = s.eigenvalues();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
        for (k, z) in s.rho().iter().enumerate() {
            let (r, c) = (k % 4, k / 4);
            if !matches!(r, 1 | 2) || !matches!(c, 1 | 2) {
                assert_eq!(z.norm(), 0.0);
            }
        }
    }

    #[test]
    fn concurrence_examples() {
        let bell = ideal_state(eta(FRAC_PI_4), 0.0, 0.5).unwrap();
        assert_abs_diff_eq!(concurrence(&bell), 1.0, epsilon = 1e-7);

        let product = ideal_state(eta(0.0), 0.0, 0.5).unwrap();
        assert_abs_diff_eq!(concurrence(&product), 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(product.rho()[(1, 1)].re, 1.0, epsilon = 1e-15);

        let cs = eta(0.86 * FRAC_PI_4);
        let s = ideal_state(cs, 0.0, 0.5).unwrap();
        assert_abs_diff_eq!(concurrence(&s), (2.0 * 0.86 * FRAC_PI_4).sin(), epsilon = 1e-7);
        assert_abs_diff_eq!(concurrence(&s), 0.976, epsilon = 1e-3);

        let half = apply_dephasing(&bell, 0.5).unwrap();
        assert_abs_diff_eq!(concurrence(&half), 0.5, epsilon = 1e-7);
    }

    #[test]
    fn dephasing_identity_and_bounds() {
        let s = ideal_state(eta(0.7), 1.1, 0.2).unwrap();
        assert_eq!(apply_dephasing(&s, 1.0).unwrap(), s);
        assert!(apply_dephasing(&s, 1.5).is_err());
        assert!(apply_dephasing(&s, -0.1).is_err());
        let d0 = apply_dephasing(&s, 0.0).unwrap();
        d0.validate().unwrap();
        assert_eq!(d0.coherence().norm(), 0.0);
        for k in 0..4 {
            assert_eq!(d0.rho()[(k, k)], s.rho()[(k, k)]);
        }
    }

    #[test]
    fn born_at_zero_zero() {
        let e = eta(0.86 * FRAC_PI_4);
        let s = ideal_state(e, 0.0, 0.1).unwrap();
        let p = born_coincidence_probs(&s, AnalyzerSettings::new(0.0, 0.0));
        assert_abs_diff_eq!(p.tt, e.cos2(), epsilon = 1e-14);
        assert_abs_diff_eq!(p.rr, 1.0 - e.cos2(), epsilon = 1e-14);
        assert_abs_diff_eq!(p.tr, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.rt, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn mixed_state_is_flat() {
        let m = TwoQubitState::maximally_mixed(0.1);
        m.validate().unwrap();
        let p = born_coincidence_probs(&m, AnalyzerSettings::new(12.0, -70.0));
        for x in p.as_array() {
            assert_abs_diff_eq!(x, 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn canonical_chsh_values() {
        assert_abs_diff_eq!(chsh_max_canonical(eta(FRAC_PI_4)), 2.0 * SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(chsh_max_canonical(eta(0.0)), SQRT_2, epsilon = 1e-12);
        let cs = chsh_max_canonical(eta(0.86 * FRAC_PI_4));
        assert!((cs - 2.79).abs() < 0.005, "S = {cs}");

        for x in [0.0, 0.86 * FRAC_PI_4, FRAC_PI_4] {
            let s = ideal_state(eta(x), 0.0, 0.5).unwrap();
            assert_abs_diff_eq!(
                chsh_from_state(&s, &ChshSettings::canonical()),
                chsh_max_canonical(eta(x)),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn dephased_visibility_at_minus_45() {
        // E(−45°, θ2) = d sin 2η sin 2θ2: the fringe vanishes when d = 0.
        let e = eta(0.86 * FRAC_PI_4);
        let s = ideal_state(e, 0.0, 0.1).unwrap();
        let s0 = apply_dephasing(&s, 0.0).unwrap();
        for th in [0.0, 22.5, 45.0, 90.0, 135.0] {
            let c = born_coincidence_probs(&s0, AnalyzerSettings::new(-45.0, th)).correlation();
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-14);
        }
        let c = born_coincidence_probs(&s, AnalyzerSettings::new(-45.0, 45.0)).correlation();
        assert_abs_diff_eq!(c.abs(), e.sin_2eta(), epsilon = 1e-12);
    }

    #[test]
    fn collapse_matches_joint_probabilities() {
        let s = apply_dephasing(&ideal_state(eta(0.6), 0.4, 0.1).unwrap(), 0.7).unwrap();
        let (t1, t2) = (17.0, -52.0);
        for p1 in Port::BOTH {
            let m1 = s.field1_probability(t1, p1);
            let rho2 = s.field2_state(Some((t1, p1)));
            for p2 in Port::BOTH {
                let joint = s.port_probability(AnalyzerSettings::new(t1, t2), p1, p2);
                assert_abs_diff_eq!(m1 * field2_port_probability(&rho2, t2, p2), joint, epsilon = 1e-13);
            }
        }
        let marginal = s.field2_state(None);
        assert_abs_diff_eq!(marginal.trace().re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ideal_state(eta(0.3), 0.0, 0.0).is_err());
        assert!(ideal_state(eta(0.3), 0.0, 1.0).is_err());
        let mut bad = Matrix4::<Complex64>::zeros();
        bad[(0, 0)] = Complex64::new(1.2, 0.0);
        bad[(1, 1)] = Complex64::new(-0.2, 0.0);
        assert!(TwoQubitState::from_density_matrix(bad, 0.1).is_err());
    }
}
