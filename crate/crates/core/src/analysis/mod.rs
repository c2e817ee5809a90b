//! From event logs to observables: coincidences, E, S, g12, visibility and
//! the model fits.

mod counts;
mod estimators;
mod fits;
mod records;

pub use counts::{count_coincidences, shuffled_tallies, CoincidenceCounts, GroupTally};
pub use estimators::{
    average_g12, bootstrap_sigma_e, chsh_s, correlation_e, correlation_from_counts, estimate_g12, fringe_visibility,
    g12_for_visibility, pair_statistics_from_counts, visibility_from_g12, BellEstimate, CorrelationEstimate, Estimate,
    FringeFit, PairStatistics, PortSelection,
};
pub use fits::{
    fit_decay, fit_smax, predict_s_decay, threshold_g12, DecayFit, DecayModel, DecayPoint, LmOptions, SPrediction,
    SmaxFit,
};
pub use records::{format_records, parse_records, Record, Table};

use std::collections::BTreeMap;

use crate::error::Result;
use crate::eventlog::{from_mdeg, EventLog, GroupKey};
use crate::model::ChshSettings;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub tally: GroupTally,
    pub correlation: Option<CorrelationEstimate>,
    pub pairs: Option<PairStatistics>,
    pub pairs_tt: Option<PairStatistics>,
    pub pairs_rr: Option<PairStatistics>,
    pub mean_g12: Option<Estimate>,
}

impl GroupResult {
    pub fn from_tally(tally: GroupTally) -> Self {
        Self {
            correlation: correlation_e(&tally.counts()).ok(),
            pairs: estimate_g12(&tally, PortSelection::Any).ok(),
            pairs_tt: estimate_g12(&tally, PortSelection::Transmitted).ok(),
            pairs_rr: estimate_g12(&tally, PortSelection::Reflected).ok(),
            mean_g12: average_g12(&tally).ok(),
            tally,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellResult {
    pub tau_ns: u64,
    pub estimate: BellEstimate,
    pub n_trials: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringeResult {
    pub theta1_mdeg: i64,
    pub tau_ns: u64,
    pub points: usize,
    pub fit: FringeFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogAnalysis {
    pub run_id: String,
    pub groups: Vec<GroupResult>,
    pub bell: Vec<BellResult>,
    pub fringes: Vec<FringeResult>,
}

/// CHSH estimates for every τ at which all four canonical settings were run.
pub fn bell_estimates(groups: &[GroupResult]) -> Vec<BellResult> {
    let by_key: BTreeMap<GroupKey, &GroupResult> = groups.iter().map(|g| (g.tally.key, g)).collect();
    let mut taus: Vec<u64> = groups.iter().map(|g| g.tally.key.tau_ns).collect();
    taus.dedup();
    taus.sort_unstable();
    taus.dedup();
    let canonical = ChshSettings::canonical().settings();
    let mut out = Vec::new();
    for tau_ns in taus {
        let found: Option<Vec<&GroupResult>> = canonical
            .iter()
            .map(|s| {
                let mut key = GroupKey::new(*s, 0.0);
                key.tau_ns = tau_ns;
                by_key.get(&key).copied()
            })
            .collect();
        let Some(found) = found else { continue };
        let Some(es) = found.iter().map(|g| g.correlation).collect::<Option<Vec<_>>>() else {
            continue;
        };
        out.push(BellResult {
            tau_ns,
            estimate: chsh_s([es[0], es[1], es[2], es[3]]),
            n_trials: found.iter().map(|g| g.tally.n_trials).sum(),
        });
    }
    out
}

/// Fringe fits for every (θ1, τ) with enough θ2 coverage.
pub fn fringe_estimates(groups: &[GroupResult]) -> Vec<FringeResult> {
    let mut series: BTreeMap<(i64, u64), Vec<(f64, CorrelationEstimate)>> = BTreeMap::new();
    for g in groups {
        if let Some(e) = g.correlation {
            let k = g.tally.key;
            series
                .entry((k.theta1_mdeg, k.tau_ns))
                .or_default()
                .push((from_mdeg(k.theta2_mdeg), e));
        }
    }
    series
        .into_iter()
        .filter_map(|((theta1_mdeg, tau_ns), points)| {
            fringe_visibility(&points).ok().map(|fit| FringeResult {
                theta1_mdeg,
                tau_ns,
                points: points.len(),
                fit,
            })
        })
        .collect()
}

pub fn analyze_tallies(run_id: &str, tallies: Vec<GroupTally>) -> LogAnalysis {
    let groups: Vec<GroupResult> = tallies.into_iter().map(GroupResult::from_tally).collect();
    LogAnalysis {
        run_id: run_id.to_string(),
        bell: bell_estimates(&groups),
        fringes: fringe_estimates(&groups),
        groups,
    }
}

/// Analyzes every group with at least one detection; a log without events
/// yields no groups.
pub fn analyze_log(log: &EventLog, window_ns: Option<u64>) -> Result<LogAnalysis> {
    let tallies = count_coincidences(log, window_ns)?
        .into_iter()
        .filter(|t| t.singles.iter().any(|&n| n > 0))
        .collect();
    Ok(analyze_tallies(&log.header.run_id, tallies))
}

fn settings_text(key: &GroupKey) -> String {
    format!(
        "theta1={}deg theta2={}deg",
        from_mdeg(key.theta1_mdeg),
        from_mdeg(key.theta2_mdeg)
    )
}

fn tau_text(tau_ns: u64) -> f64 {
    tau_ns as f64 * 1e-3
}

impl LogAnalysis {
    /// One block per observable with value, sigma, n_trials and settings.
    pub fn records(&self) -> Vec<Record> {
        let mut out = vec![Record::new("summary")
            .field("run_id", &self.run_id)
            .field("groups", self.groups.len())
            .field("result", if self.groups.is_empty() { "no groups" } else { "ok" })];
        for g in &self.groups {
            let k = &g.tally.key;
            let c = g.tally.counts();
            out.push(
                Record::new("counts")
                    .field("settings", settings_text(k))
                    .field("tau_us", tau_text(k.tau_ns))
                    .field("n_trials", c.n_trials)
                    .field("c_tt", c.c_tt)
                    .field("c_tr", c.c_tr)
                    .field("c_rt", c.c_rt)
                    .field("c_rr", c.c_rr),
            );
            if let Some(e) = g.correlation {
                out.push(
                    Record::new("E")
                        .field("settings", settings_text(k))
                        .field("tau_us", tau_text(k.tau_ns))
                        .field("n_trials", c.n_trials)
                        .field("value", e.e_value)
                        .field("sigma", e.sigma),
                );
            }
            for p in [g.pairs, g.pairs_tt, g.pairs_rr].into_iter().flatten() {
                out.push(
                    Record::new("g12")
                        .field("settings", settings_text(k))
                        .field("tau_us", tau_text(k.tau_ns))
                        .field("ports", p.selection.as_str())
                        .field("n_trials", p.n_trials)
                        .field("p1", p.p1.value)
                        .field("p2", p.p2.value)
                        .field("p12", p.p12.value)
                        .field("value", p.g12.value)
                        .field("sigma", p.g12.sigma)
                        .field("pc", p.p_c.value)
                        .field("pc_sigma", p.p_c.sigma)
                        .field("visibility_model", p.visibility_model.value)
                        .field("visibility_model_sigma", p.visibility_model.sigma),
                );
            }
            if let Some(m) = g.mean_g12 {
                out.push(
                    Record::new("g12_mean")
                        .field("settings", settings_text(k))
                        .field("tau_us", tau_text(k.tau_ns))
                        .field("n_trials", c.n_trials)
                        .field("value", m.value)
                        .field("sigma", m.sigma),
                );
            }
        }
        for b in &self.bell {
            out.push(
                Record::new("S")
                    .field("settings", "chsh")
                    .field("tau_us", tau_text(b.tau_ns))
                    .field("n_trials", b.n_trials)
                    .field("value", b.estimate.s_value)
                    .field("sigma", b.estimate.sigma)
                    .field("violation_sigmas", b.estimate.violation_sigmas()),
            );
        }
        for f in &self.fringes {
            out.push(
                Record::new("V")
                    .field("settings", format!("theta1={}deg", from_mdeg(f.theta1_mdeg)))
                    .field("tau_us", tau_text(f.tau_ns))
                    .field("points", f.points)
                    .field("value", f.fit.visibility.value)
                    .field("sigma", f.fit.visibility.sigma)
                    .field("theta0_deg", f.fit.theta0_deg),
            );
        }
        out
    }

    /// g12 against τ per polarization configuration (0 = TT, 1 = RR), from
    /// the θ1 = θ2 = 0 groups.
    pub fn decay_table(&self) -> Table {
        let mut t = Table::new("g12 vs tau", &["tau_us", "g12", "sigma", "config"]);
        for g in self
            .groups
            .iter()
            .filter(|g| g.tally.key.theta1_mdeg == 0 && g.tally.key.theta2_mdeg == 0)
        {
            for (config, p) in [(0.0, g.pairs_tt), (1.0, g.pairs_rr)] {
                if let Some(p) = p {
                    if p.n12 > 0 {
                        t.push(vec![g.tally.key.tau_us(), p.g12.value, p.g12.sigma, config]);
                    }
                }
            }
        }
        t
    }

    /// ḡ12 at θ1 = θ2 = 0 for a given τ.
    pub fn mean_g12_at(&self, tau_ns: u64) -> Option<Estimate> {
        self.groups
            .iter()
            .find(|g| {
                g.tally.key
                    == GroupKey {
                        theta1_mdeg: 0,
                        theta2_mdeg: 0,
                        tau_ns,
                    }
            })
            .and_then(|g| g.mean_g12)
    }
}

/// Splits a decay table into per-configuration point lists.
pub fn decay_points(table: &Table) -> Result<Vec<Vec<DecayPoint>>> {
    let col = |name: &str| {
        table.column(name).ok_or_else(|| crate::Error::Data {
            line: 0,
            message: format!("table lacks column `{name}`"),
        })
    };
    let (tau, g, s) = (col("tau_us")?, col("g12")?, col("sigma")?);
    let config = table.column("config").unwrap_or_else(|| vec![0.0; tau.len()]);
    let mut by_config: BTreeMap<u64, Vec<DecayPoint>> = BTreeMap::new();
    for i in 0..tau.len() {
        by_config.entry(config[i].round() as u64).or_default().push(DecayPoint {
            tau_us: tau[i],
            g12: g[i],
            sigma: s[i],
        });
    }
    Ok(by_config.into_values().collect())
}
