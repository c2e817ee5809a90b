//! Model fits: S = Smax·V(g12) and the (K, ξ) storage-time decay.

use nalgebra::{DMatrix, DVector};

use super::estimators::{visibility_from_g12, Estimate};
use crate::decoherence::{dephasing_amplitude, CoherenceTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmaxFit {
    pub smax: Estimate,
    /// √(Σ (S − Smax·V)²) over the points, unweighted.
    pub residual_norm: f64,
    pub chi2: f64,
    pub points: usize,
}

impl SmaxFit {
    /// g12 at which Smax·V(g12) = 2, if Smax exceeds 2.
    pub fn threshold_g12(&self) -> Option<f64> {
        threshold_g12(self.smax.value)
    }
}

/// (Smax + 2) / (Smax − 2).
pub fn threshold_g12(smax: f64) -> Option<f64> {
    (smax > 2.0).then(|| (smax + 2.0) / (smax - 2.0))
}

/// One-parameter weighted least squares of S = Smax·(g12 − 1)/(g12 + 1) over
/// `(g12, S, σ_S)` points. With any σ ≤ 0 the fit is unweighted and the
/// uncertainty comes from the residual scatter.
pub fn fit_smax(points: &[(f64, f64, f64)]) -> Result<SmaxFit> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!(
            "{} distinct g12 values, need 3",
            distinct.len()
        )));
    }
    if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::invalid("non-finite point"));
    }
    let unweighted = points.iter().any(|p| !(p.2 > 0.0));
    let w = |s: f64| if unweighted { 1.0 } else { 1.0 / (s * s) };
    let (mut svv, mut svs) = (0.0, 0.0);
    for &(g, s, sig) in points {
        let v = visibility_from_g12(g);
        svv += w(sig) * v * v;
        svs += w(sig) * v * s;
    }
    if svv <= 0.0 {
        return Err(Error::IllConditioned("all points at g12 = 1".into()));
    }
    let smax = svs / svv;
    let mut rss = 0.0;
    let mut chi2 = 0.0;
    for &(g, s, sig) in points {
        let r = s - smax * visibility_from_g12(g);
        rss += r * r;
        chi2 += w(sig) * r * r;
    }
    let sigma = if unweighted {
        (rss / (points.len() - 1) as f64 / svv).sqrt()
    } else {
        (1.0 / svv).sqrt()
    };
    Ok(SmaxFit {
        smax: Estimate::new(smax, sigma),
        residual_norm: rss.sqrt(),
        chi2,
        points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPoint {
    pub tau_us: f64,
    pub g12: f64,
    pub sigma: f64,
}

/// g12(τ) = ξ_c · base · d(τ; K)² for configuration c.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayModel {
    pub table: CoherenceTable,
    pub base: f64,
}

impl DecayModel {
    pub fn new(table: CoherenceTable, base: f64) -> Result<Self> {
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::invalid(format!("model base {base} must be > 0")));
        }
        Ok(Self { table, base })
    }

    pub fn g12(&self, tau_us: f64, k_khz: f64, xi: f64) -> f64 {
        let (f, _) = dephasing_amplitude(tau_us, k_khz, &self.table);
        xi * self.base * f * f
    }

    /// Value and partial derivatives with respect to K and ξ.
    fn eval(&self, tau_us: f64, k_khz: f64, xi: f64) -> (f64, f64, f64) {
        let (f, df) = dephasing_amplitude(tau_us, k_khz, &self.table);
        let d2 = f * f;
        (xi * self.base * d2, xi * self.base * 2.0 * f * df, self.base * d2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub k_fit: f64,
    pub xi_fit: Vec<f64>,
    /// Parameter covariance in the order (K, ξ₁, ξ₂, …).
    pub covariance: DMatrix<f64>,
    /// √(Σ r²) of the weighted residuals at the solution.
    pub residual_norm: f64,
    pub iterations: usize,
    /// ½ Σ r² after each accepted step, starting from the initial guess.
    pub cost_history: Vec<f64>,
}

impl DecayFit {
    pub fn k_sigma(&self) -> f64 {
        self.covariance[(0, 0)].max(0.0).sqrt()
    }

    pub fn xi_sigma(&self, config: usize) -> f64 {
        self.covariance[(config + 1, config + 1)].max(0.0).sqrt()
    }

    /// ḡ12(τ): the configurations' model values averaged arithmetically.
    pub fn mean_g12(&self, model: &DecayModel, tau_us: f64) -> f64 {
        let sum: f64 = self.xi_fit.iter().map(|&xi| model.g12(tau_us, self.k_fit, xi)).sum();
        sum / self.xi_fit.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub tolerance: f64,
    pub initial_lambda: f64,
    /// Upper end of the initial K grid scan, kHz.
    pub k_scan_max: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-12,
            initial_lambda: 1e-3,
            k_scan_max: 100.0,
        }
    }
}

struct Problem<'a> {
    model: &'a DecayModel,
    /// (configuration, point)
    points: Vec<(usize, DecayPoint)>,
    configs: usize,
}

impl Problem<'_> {
    fn residuals(&self, params: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points
                .iter()
                .map(|(c, p)| (self.model.g12(p.tau_us, params[0], params[c + 1]) - p.g12) / p.sigma),
        )
    }

    fn cost(&self, params: &[f64]) -> f64 {
        0.5 * self.residuals(params).norm_squared()
    }

    fn jacobian(&self, params: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.points.len(), self.configs + 1);
        for (row, (c, p)) in self.points.iter().enumerate() {
            let (_, dk, dxi) = self.model.eval(p.tau_us, params[0], params[c + 1]);
            j[(row, 0)] = dk / p.sigma;
            j[(row, c + 1)] = dxi / p.sigma;
        }
        j
    }

    /// Weighted linear ξ per configuration at fixed K.
    fn best_xi(&self, k: f64) -> Vec<f64> {
        (0..self.configs)
            .map(|c| {
                let (mut num, mut den) = (0.0, 0.0);
                for (_, p) in self.points.iter().filter(|(cc, _)| *cc == c) {
                    let (_, _, basis) = self.model.eval(p.tau_us, k, 1.0);
                    let w = 1.0 / (p.sigma * p.sigma);
                    num += w * basis * p.g12;
                    den += w * basis * basis;
                }
                if den > 0.0 {
                    (num / den).max(f64::MIN_POSITIVE)
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// Damped least squares for a shared K and one ξ per configuration.
///
/// The start point comes from a K grid scan with ξ solved linearly; each
/// Levenberg-Marquardt step is accepted only if it lowers the cost, so the
/// recorded cost history never increases. K is kept ≥ 0 and ξ > 0.
pub fn fit_decay(configs: &[Vec<DecayPoint>], model: &DecayModel, options: LmOptions) -> Result<DecayFit> {
    if configs.is_empty() {
        return Err(Error::invalid("no configurations"));
    }
    let mut taus: Vec<f64> = configs.iter().flatten().map(|p| p.tau_us).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    if taus.len() < 4 {
        return Err(Error::invalid(format!("{} distinct τ values, need 4", taus.len())));
    }
    if taus[0] > 1.0 {
        return Err(Error::invalid("a τ ≈ 0 point is required"));
    }
    for p in configs.iter().flatten() {
        if !(p.sigma > 0.0 && p.g12.is_finite() && p.tau_us >= 0.0) {
            return Err(Error::invalid("every point needs σ > 0 and τ ≥ 0"));
        }
    }
    if configs.iter().any(|c| c.is_empty()) {
        return Err(Error::invalid("a configuration has no points"));
    }
    let problem = Problem {
        model,
        points: configs
            .iter()
            .enumerate()
            .flat_map(|(c, pts)| pts.iter().map(move |p| (c, *p)))
            .collect(),
        configs: configs.len(),
    };
    let n_params = configs.len() + 1;

    let mut params = vec![0.0; n_params];
    let mut best = f64::INFINITY;
    let steps = 400;
    for i in 0..=steps {
        let k = options.k_scan_max * i as f64 / steps as f64;
        let xi = problem.best_xi(k);
        let mut trial = vec![k];
        trial.extend(xi);
        let c = problem.cost(&trial);
        if c < best {
            best = c;
            params = trial;
        }
    }

    let mut cost = problem.cost(&params);
    let mut history = vec![cost];
    let mut lambda = options.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let r = problem.residuals(&params);
        let j = problem.jacobian(&params);
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * &r;
        if grad.amax() < 1e-14 * (1.0 + cost) || cost < 1e-28 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for d in 0..n_params {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut candidate: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            candidate[0] = candidate[0].max(0.0);
            for xi in &mut candidate[1..] {
                *xi = xi.max(f64::MIN_POSITIVE);
            }
            let new_cost = problem.cost(&candidate);
            if new_cost < cost {
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                params = candidate;
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if rel < options.tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            cost,
            params,
        });
    }
    let j = problem.jacobian(&params);
    let covariance = (j.transpose() * &j)
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::IllConditioned(e.to_string()))?;
    Ok(DecayFit {
        k_fit: params[0],
        xi_fit: params[1..].to_vec(),
        covariance,
        residual_norm: (2.0 * cost).sqrt(),
        iterations,
        cost_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SPrediction {
    pub tau_us: f64,
    pub mean_g12: f64,
    pub s: f64,
}

/// S(τ) = Smax·(ḡ12(τ) − 1)/(ḡ12(τ) + 1), with ḡ12 from the fitted model and
/// the visibility floored at 0.
pub fn predict_s_decay(fit: &DecayFit, model: &DecayModel, smax: f64, taus_us: &[f64]) -> Vec<SPrediction> {
    taus_us
        .iter()
        .map(|&tau_us| {
            let g = fit.mean_g12(model, tau_us);
            SPrediction {
                tau_us,
                mean_g12: g,
                s: smax * visibility_from_g12(g).max(0.0),
            }
        })
        .collect()
}
