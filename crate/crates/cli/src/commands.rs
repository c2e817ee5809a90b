use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use membell::analysis::{
    analyze_log, analyze_tallies, decay_points, fit_decay, fit_smax, format_records, predict_s_decay,
    visibility_from_g12, DecayFit, DecayModel, DecayPoint, LmOptions, LogAnalysis, Record, SmaxFit, Table,
};
use membell::config::{parse_sweep_axis, ExperimentConfig};
use membell::eventlog::{run_id, EventLog};
use membell::scheduler::TraceRecord;
use membell::simulator::{cesium_coherence, simulate_run_traced, sweep as run_sweep, SweepAxis};

use crate::output::{write_atomic, RunManifest};
use crate::FitModel;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let config = ExperimentConfig::parse(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    warn_strong_excitation(config.optics.p_excitation);
    Ok(config)
}

fn warn_strong_excitation(p: f64) {
    if p > 0.1 {
        eprintln!("warning: p_excitation = {p} > 0.1, multi-pair emission dominates and g12 is low");
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn simulate(
    config_path: &Path,
    seed: u64,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
    out_dir: &Path,
) -> Result<()> {
    let config = load_config(config_path)?;
    let mut records: Vec<TraceRecord> = Vec::new();
    let log = match trace {
        Some(_) => simulate_run_traced(&config, seed, &mut records)?,
        None => simulate_run_traced(&config, seed, &mut ())?,
    };
    let out = out.unwrap_or_else(|| out_dir.join(format!("{}.log", log.header.run_id)));
    write_atomic(&out, &log.to_text())?;
    let mut manifest = RunManifest::new(&log.header.run_id).input(config_path).output(&out);
    if let Some(path) = &trace {
        let mut text = String::from("clock_ns,action,trial_index\n");
        for r in &records {
            text.push_str(&r.to_string());
            text.push('\n');
        }
        write_atomic(path, &text)?;
        manifest = manifest.output(path);
    }
    manifest.seed = Some(seed);
    manifest.config = log.header.config.clone();
    manifest.append()?;
    eprintln!(
        "{}: {} events in {} blocks",
        out.display(),
        log.events.len(),
        log.header.blocks.len()
    );
    Ok(())
}

pub fn analyze(log_path: &Path, window: Option<u64>, out: Option<PathBuf>, table: Option<PathBuf>) -> Result<()> {
    let log = EventLog::parse(&read(log_path)?).with_context(|| format!("in {}", log_path.display()))?;
    let analysis = analyze_log(&log, window)?;
    emit(&format_records(&analysis.records()), out.as_deref())?;
    if let Some(path) = &table {
        write_atomic(path, &analysis.decay_table().to_string())?;
    }
    if out.is_some() || table.is_some() {
        let mut manifest = RunManifest::new(&log.header.run_id).input(log_path);
        for path in out.iter().chain(table.iter()) {
            manifest = manifest.output(path);
        }
        manifest.seed = Some(log.header.seed);
        manifest.config = log.header.config.clone();
        manifest.append()?;
    }
    Ok(())
}

const SWEEP_COLUMNS: [&str; 11] = [
    "g12",
    "g12_sigma",
    "g12_tt",
    "g12_tt_sigma",
    "g12_rr",
    "g12_rr_sigma",
    "pc",
    "pc_sigma",
    "s",
    "s_sigma",
    "n_trials",
];

/// One sweep-table row: g12 and pc from the θ1 = θ2 = 0 group, S from the
/// CHSH groups; NaN where the run has no such group.
fn sweep_row(x: f64, analysis: &LogAnalysis) -> Vec<f64> {
    let nan = f64::NAN;
    let mut row = vec![x];
    let zero = analysis
        .groups
        .iter()
        .find(|g| g.tally.key.theta1_mdeg == 0 && g.tally.key.theta2_mdeg == 0);
    let pair = |e: Option<(f64, f64)>| e.map_or([nan, nan], |(v, s)| [v, s]);
    row.extend(pair(zero.and_then(|g| g.mean_g12).map(|e| (e.value, e.sigma))));
    row.extend(pair(zero.and_then(|g| g.pairs_tt).map(|p| (p.g12.value, p.g12.sigma))));
    row.extend(pair(zero.and_then(|g| g.pairs_rr).map(|p| (p.g12.value, p.g12.sigma))));
    row.extend(pair(zero.and_then(|g| g.pairs).map(|p| (p.p_c.value, p.p_c.sigma))));
    row.extend(pair(
        analysis.bell.first().map(|b| (b.estimate.s_value, b.estimate.sigma)),
    ));
    row.push(analysis.groups.iter().map(|g| g.tally.n_trials).sum::<u64>() as f64);
    row
}

pub fn sweep(config_path: &Path, seed: u64, axis_spec: &str, out: Option<PathBuf>, out_dir: &Path) -> Result<()> {
    let config = load_config(config_path)?;
    let axis = parse_sweep_axis(axis_spec)?;
    if let SweepAxis::Excitation(ps) = &axis {
        if let Some(&p) = ps.iter().find(|&&p| p > 0.1) {
            warn_strong_excitation(p);
        }
    }
    let points = run_sweep(&config, &axis, seed)?;
    let mut columns = vec![axis.name()];
    columns.extend(SWEEP_COLUMNS);
    let mut table = Table::new(format!("sweep {}", axis.name()), &columns);
    for p in &points {
        table.push(sweep_row(p.axis_value, &analyze_tallies(&p.run_id, p.groups.clone())));
    }
    let mut echo = config.echo();
    echo.push(("sweep".into(), axis_spec.trim().into()));
    let id = run_id(&echo, seed);
    let out = out.unwrap_or_else(|| out_dir.join(format!("sweep-{}-{seed}.txt", axis.name())));
    write_atomic(&out, &table.to_string())?;
    let mut manifest = RunManifest::new(id).input(config_path).output(&out);
    manifest.seed = Some(seed);
    manifest.config = echo;
    manifest.append()?;
    eprintln!("{}: {} points", out.display(), points.len());
    Ok(())
}

fn column(table: &Table, names: &[&str]) -> Result<Vec<f64>> {
    names.iter().find_map(|n| table.column(n)).ok_or_else(|| {
        membell::Error::Data {
            line: 0,
            message: format!("table lacks column `{}`", names[0]),
        }
        .into()
    })
}

fn smax_points(table: &Table) -> Result<Vec<(f64, f64, f64)>> {
    let g = column(table, &["g12"])?;
    let s = column(table, &["s"])?;
    let sigma = column(table, &["sigma", "s_sigma"])?;
    Ok((0..g.len())
        .map(|i| (g[i], s[i], sigma[i]))
        .filter(|p| p.0.is_finite() && p.1.is_finite() && p.2.is_finite())
        .collect())
}

/// Decay points from either an analysis g12 table or a τ sweep table.
fn decay_configs(table: &Table) -> Result<Vec<Vec<DecayPoint>>> {
    let usable = |p: &DecayPoint| p.tau_us.is_finite() && p.g12.is_finite() && p.sigma.is_finite() && p.sigma > 0.0;
    let configs = if table.column("g12_tt").is_some() {
        let tau = column(table, &["tau_us"])?;
        ["g12_tt", "g12_rr"]
            .iter()
            .map(|name| {
                let g = column(table, &[name])?;
                let s = column(table, &[&format!("{name}_sigma")])?;
                Ok((0..tau.len())
                    .map(|i| DecayPoint {
                        tau_us: tau[i],
                        g12: g[i],
                        sigma: s[i],
                    })
                    .collect())
            })
            .collect::<Result<Vec<Vec<DecayPoint>>>>()?
    } else {
        decay_points(table)?
    };
    Ok(configs
        .into_iter()
        .map(|c| c.into_iter().filter(usable).collect::<Vec<_>>())
        .filter(|c| !c.is_empty())
        .collect())
}

fn decay_model() -> Result<DecayModel> {
    Ok(DecayModel::new(cesium_coherence(&ExperimentConfig::storage())?, 1.0)?)
}

fn smax_record(fit: &SmaxFit) -> Record {
    Record::new("fit")
        .field("model", "smax")
        .field("smax", fit.smax.value)
        .field("sigma", fit.smax.sigma)
        .field("chi2", fit.chi2)
        .field("residual_norm", fit.residual_norm)
        .field("points", fit.points)
        .field("threshold_g12", fit.threshold_g12().unwrap_or(f64::NAN))
}

fn decay_record(fit: &DecayFit, points: usize) -> Record {
    let mut r = Record::new("fit")
        .field("model", "decay")
        .field("k_khz", fit.k_fit)
        .field("k_sigma", fit.k_sigma());
    for (i, xi) in fit.xi_fit.iter().enumerate() {
        r = r
            .field(format!("xi_{}", i + 1), xi)
            .field(format!("xi_{}_sigma", i + 1), fit.xi_sigma(i));
    }
    r.field("residual_norm", fit.residual_norm)
        .field("iterations", fit.iterations)
        .field("points", points)
}

pub fn fit(table_path: &Path, model: FitModel, out: Option<PathBuf>) -> Result<()> {
    let table = Table::parse(&read(table_path)?).with_context(|| format!("in {}", table_path.display()))?;
    let record = match model {
        FitModel::Smax => smax_record(&fit_smax(&smax_points(&table)?)?),
        FitModel::Decay => {
            let configs = decay_configs(&table)?;
            let points = configs.iter().map(Vec::len).sum();
            decay_record(&fit_decay(&configs, &decay_model()?, LmOptions::default())?, points)
        }
    };
    emit(&record.to_string(), out.as_deref())?;
    if let Some(path) = &out {
        RunManifest::new(format!("fit-{}", record.get("model").unwrap_or("?")))
            .input(table_path)
            .output(path)
            .append()?;
    }
    Ok(())
}

pub const FIG2_FILE: &str = "fig2_s_vs_g12.txt";
pub const FIG3_FILE: &str = "fig3_vs_tau.txt";
pub const REPORT_FILE: &str = "report.txt";

/// Sweep tables found in `dir`, by axis, in file-name order.
fn sweep_tables(dir: &Path) -> Result<(Vec<Table>, Vec<Table>)> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let (mut excitation, mut tau) = (Vec::new(), Vec::new());
    for path in names {
        let Ok(text) = fs::read_to_string(&path) else { continue };
        let Ok(table) = Table::parse(&text) else { continue };
        match table.title.as_str() {
            "sweep p_excitation" => excitation.push(table),
            "sweep tau_us" => tau.push(table),
            _ => {}
        }
    }
    Ok((excitation, tau))
}

pub fn report(dir: &Path, out: Option<PathBuf>, default_smax: f64) -> Result<()> {
    let (excitation, tau) = sweep_tables(dir)?;
    if excitation.is_empty() && tau.is_empty() {
        return Err(membell::Error::Data {
            line: 0,
            message: format!("no sweep tables in {}", dir.display()),
        }
        .into());
    }
    let out = out.unwrap_or_else(|| dir.to_path_buf());
    let mut records = Vec::new();
    let mut written = Vec::new();
    let mut smax = default_smax;

    if !excitation.is_empty() {
        let mut points = Vec::new();
        for t in &excitation {
            points.extend(smax_points(t)?);
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let fit = fit_smax(&points).ok();
        if let Some(f) = &fit {
            smax = f.smax.value;
            records.push(smax_record(f));
        }
        let mut table = Table::new("S vs g12", &["g12", "s", "sigma", "s_model"]);
        for &(g, s, sigma) in &points {
            let model = fit.map_or(f64::NAN, |f| f.smax.value * visibility_from_g12(g));
            table.push(vec![g, s, sigma, model]);
        }
        let path = out.join(FIG2_FILE);
        write_atomic(&path, &table.to_string())?;
        written.push(path);
    }

    if !tau.is_empty() {
        let model = decay_model()?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut configs = vec![Vec::new(), Vec::new()];
        for t in &tau {
            let x = column(t, &["tau_us"])?;
            let cols: Vec<Vec<f64>> = [
                "g12_tt",
                "g12_tt_sigma",
                "g12_rr",
                "g12_rr_sigma",
                "g12",
                "s",
                "s_sigma",
            ]
            .iter()
            .map(|n| column(t, &[n]))
            .collect::<Result<_>>()?;
            for i in 0..x.len() {
                rows.push(std::iter::once(x[i]).chain(cols.iter().map(|c| c[i])).collect());
            }
            for (c, configs) in decay_configs(t)?.into_iter().zip(configs.iter_mut()) {
                configs.extend(c);
            }
        }
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        configs.retain(|c| !c.is_empty());
        let fit = match fit_decay(&configs, &model, LmOptions::default()) {
            Ok(f) => {
                records.push(decay_record(&f, configs.iter().map(Vec::len).sum()).field("smax_used", smax));
                Some(f)
            }
            Err(e) => {
                eprintln!("warning: no decay model in the report: {e}");
                None
            }
        };
        let taus: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let predictions = fit.as_ref().map(|f| predict_s_decay(f, &model, smax, &taus));
        let mut table = Table::new(
            "S and g12 vs tau",
            &[
                "tau_us",
                "g12_tt",
                "g12_tt_sigma",
                "g12_rr",
                "g12_rr_sigma",
                "g12_mean",
                "s",
                "s_sigma",
                "g12_model",
                "s_model",
            ],
        );
        for (i, mut row) in rows.into_iter().enumerate() {
            match &predictions {
                Some(p) => row.extend([p[i].mean_g12, p[i].s]),
                None => row.extend([f64::NAN, f64::NAN]),
            }
            table.push(row);
        }
        let path = out.join(FIG3_FILE);
        write_atomic(&path, &table.to_string())?;
        written.push(path);
    }

    let path = out.join(REPORT_FILE);
    write_atomic(&path, &format_records(&records))?;
    written.push(path);
    let mut manifest = RunManifest::new("report").input(dir);
    for p in &written {
        manifest = manifest.output(p);
        eprintln!("wrote {}", p.display());
    }
    manifest.append()?;
    Ok(())
}
