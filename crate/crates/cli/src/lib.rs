//! Command-line front end: ingestion, model specs and one subcommand per
//! library operation. Every run writes its artifacts and a `manifest.json`
//! into the output directory.

pub mod args;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;
use hawkes::analytics::{causality_rates, correlation_time_domain};
use hawkes::estimate::{
    fit_contrast, fit_em_nonparametric, fit_em_parametric, fit_mle, fit_moments, fit_wiener_hopf, goodness_of_fit, BetaMode,
    ContrastConfig, EmConfig, EstimationResult, MleConfig, MomentConfig, MomentFamily, NonparametricEmConfig,
    QuadratureConfig,
};
use hawkes::finance::{
    epps_covariation, him_impact_curve, reflexivity_report, signature_plot, HimConfig, MetaOrderProfile, PricePath,
    ReflexivityConfig, ReflexivityMethod,
};
use hawkes::ingest::{ingest_reader, IngestConfig, InputFormat, TiePolicy};
use hawkes::{Algorithm, EventSequence, HawkesError, HawkesModel, SimConfig};

use args::*;
use error::{CliError, Result};
use manifest::{Recorder, RunManifest};

/// Parses arguments, runs, and maps the outcome onto an exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn config_json<T: serde::Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

pub fn run(command: Command) -> Result<RunManifest> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Stats(a) => stats(a),
        Command::Gof(a) => gof(a),
        Command::Reflexivity(a) => reflexivity(a),
        Command::Signature(a) => signature(a),
        Command::Epps(a) => epps(a),
        Command::Impact(a) => impact(a),
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad number {x:?} in --{what}"))))
        .collect()
}

fn parse_pair(s: &str, what: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(CliError::Usage(format!("--{what} expects two component indices, got {s:?}"))),
        },
        _ => Err(CliError::Usage(format!("--{what} expects two component indices, got {s:?}"))),
    }
}

fn read_model(rec: &mut Recorder, path: &std::path::Path) -> Result<HawkesModel> {
    let bytes = rec.read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Hawkes(HawkesError::Input("model spec is not UTF-8".into())))?;
    Ok(HawkesModel::from_spec_str(&text)?)
}

fn read_events(rec: &mut Recorder, a: &EventArgs) -> Result<EventSequence> {
    let bytes = rec.read_input(&a.events)?;
    let mut cfg = IngestConfig::from_path(&a.events);
    if let Some(f) = a.format {
        cfg.format = match f {
            FormatArg::Csv => InputFormat::Csv,
            FormatArg::Ndjson => InputFormat::Ndjson,
        };
    }
    if let Some(l) = &a.labels {
        cfg.labels = IngestConfig::parse_labels(l).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    cfg.time_scale = a.time_scale;
    if let Some(s) = &a.session {
        let v = parse_list(s, "session")?;
        if v.len() != 2 {
            return Err(CliError::Usage("--session expects start,end".into()));
        }
        cfg.session = Some((v[0], v[1]));
    }
    if let Some(amplitude) = a.jitter {
        cfg.ties = TiePolicy::Jitter { amplitude, seed: a.jitter_seed };
    }
    cfg.dejitter = a.dejitter;
    cfg.horizon = a.horizon;
    cfg.dim = a.dim;
    let (events, report) = ingest_reader(bytes.as_slice(), &cfg)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let mut text = serde_json::to_vec_pretty(&report).expect("report serializes");
    text.push(b'\n');
    rec.write("ingest.json", &text)?;
    Ok(events)
}

fn simulate(a: SimulateArgs) -> Result<RunManifest> {
    let mut rec = Recorder::new(&a.out.out)?;
    let model = read_model(&mut rec, &a.model)?;
    let algorithm = match a.algorithm {
        AlgorithmArg::Thinning => Algorithm::Thinning,
        AlgorithmArg::TimeChange => Algorithm::TimeChange,
        AlgorithmArg::Cluster => Algorithm::Cluster,
    };
    let cfg = SimConfig::new(a.seed, a.horizon).with_algorithm(algorithm).with_burn_in(a.burn_in);
    let sim = hawkes::simulate::simulate(&model, &cfg)?;
    rec.write_with("events.csv", |w| sim.events.write_csv(w))?;
    if let Some(g) = &sim.genealogy {
        rec.write_with("genealogy.csv", |w| g.write_csv(w))?;
    }
    rec.finish("simulate", config_json(&a), Some(a.seed))
}

fn beta_mode(s: &str) -> Result<BetaMode> {
    match s {
        "free" => Ok(BetaMode::Free),
        "shared" => Ok(BetaMode::Shared),
        other => other
            .parse::<f64>()
            .map(BetaMode::Fixed)
            .map_err(|_| CliError::Usage(format!("--beta expects free, shared or a number, got {other:?}"))),
    }
}

fn require_support(a: &FitArgs) -> Result<f64> {
    a.support.ok_or_else(|| CliError::Usage(format!("--support is required for --method {:?}", a.method)))
}

fn fit(a: FitArgs) -> Result<RunManifest> {
    let mut rec = Recorder::new(&a.out.out)?;
    let events = read_events(&mut rec, &a.input)?;
    let conflict = |what: &str| CliError::Usage(format!("--family {:?} is not available {what}", a.family));
    let res: EstimationResult = match a.method {
        MethodArg::Mle => {
            let mut cfg = match a.family {
                FamilyArg::Exponential => MleConfig::exponential(beta_mode(&a.beta)?),
                FamilyArg::PowerLaw => MleConfig::power_law(),
                _ => return Err(conflict("for --method mle")),
            };
            if let Some(n) = a.max_iterations {
                cfg = cfg.with_max_iterations(n);
            }
            fit_mle(&events, &cfg)?
        }
        MethodArg::Em => match a.family {
            FamilyArg::Exponential => {
                let mut cfg = EmConfig { beta: beta_mode(&a.beta)?, ..Default::default() };
                if let Some(n) = a.max_iterations {
                    cfg.max_iterations = n;
                }
                fit_em_parametric(&events, &cfg)?
            }
            FamilyArg::Histogram => {
                let mut cfg = NonparametricEmConfig::uniform(require_support(&a)?, a.bins).with_smoothing(a.penalty);
                if let Some(n) = a.max_iterations {
                    cfg.max_iterations = n;
                }
                fit_em_nonparametric(&events, &cfg)?
            }
            _ => return Err(conflict("for --method em")),
        },
        MethodArg::WienerHopf => {
            fit_wiener_hopf(&events, &QuadratureConfig::new(require_support(&a)?).with_nodes(a.nodes))?
        }
        MethodArg::Contrast => {
            let mut cfg = ContrastConfig::uniform(require_support(&a)?, a.bins).with_penalty(a.penalty);
            if let Some(n) = a.max_iterations {
                cfg.max_iterations = n;
            }
            fit_contrast(&events, &cfg)?
        }
        MethodArg::Moments => {
            let family = match a.family {
                FamilyArg::Exponential => MomentFamily::Univariate,
                FamilyArg::SymmetricBivariate => MomentFamily::SymmetricBivariate,
                _ => return Err(conflict("for --method moments")),
            };
            fit_moments(&events, &MomentConfig::new(family))?
        }
    };
    for w in &res.warnings {
        log::warn!("{w}");
    }
    rec.write("model.txt", res.to_spec_string().as_bytes())?;
    rec.write_with("parameters.csv", |w| {
        writeln!(w, "name,value,stderr")?;
        for p in &res.parameters {
            let se = p.std_error.map(|s| format!("{s:.12e}")).unwrap_or_default();
            writeln!(w, "{},{:.12e},{se}", p.name, p.value)?;
        }
        Ok(())
    })?;
    rec.write_with("diagnostics.csv", |w| res.write_diagnostics_csv(w))?;
    let summary = serde_json::json!({
        "method": res.method,
        "converged": res.converged,
        "iterations": res.iterations,
        "log_likelihood": res.log_likelihood,
        "branching_ratio": res.branching_ratio(),
        "near_critical": res.near_critical,
        "warnings": res.warnings,
    });
    let mut text = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    text.push(b'\n');
    rec.write("fit.json", &text)?;
    rec.finish("fit", config_json(&a), None)
}

fn matrix_csv(w: &mut Vec<u8>, name: &str, rows: &[Vec<f64>]) -> hawkes::Result<()> {
    writeln!(w, "{name},i,j,value")?;
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            writeln!(w, "{name},{i},{j},{v:.12e}")?;
        }
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<RunManifest> {
    let mut rec = Recorder::new(&a.out.out)?;
    let model = read_model(&mut rec, &a.model)?;
    let lambda = hawkes::analytics::mean_intensity(&model)?;
    rec.write_with("mean_intensity.csv", |w| {
        writeln!(w, "component,lambda")?;
        for (i, l) in lambda.iter().enumerate() {
            writeln!(w, "{i},{l:.12e}")?;
        }
        Ok(())
    })?;
    let max_lag = a.max_lag.unwrap_or(10.0 * model.kernels().time_scale());
    if !(max_lag.is_finite() && max_lag > 0.0) || a.lag_points < 2 {
        return Err(CliError::Usage("--max-lag must be > 0 and --lag-points >= 2".into()));
    }
    let lags: Vec<f64> = (0..a.lag_points).map(|k| max_lag * k as f64 / (a.lag_points - 1) as f64).collect();
    let cov = correlation_time_domain(&model, &lags)?;
    rec.write_with("covariance.csv", |w| cov.write_csv(w))?;
    let diffusion = hawkes::analytics::diffusion_coefficients(&model)?;
    let rows: Vec<Vec<f64>> = diffusion.row_iter().map(|r| r.iter().copied().collect()).collect();
    rec.write_with("diffusion.csv", |w| matrix_csv(w, "diffusion", &rows))?;
    if model.kernels().is_non_negative() {
        let c = causality_rates(&model)?;
        rec.write_with("causality.csv", |w| {
            matrix_csv(w, "direct", &c.direct)?;
            for (i, r) in c.ancestor.iter().enumerate() {
                for (j, v) in r.iter().enumerate() {
                    writeln!(w, "ancestor,{i},{j},{v:.12e}")?;
                }
            }
            for (i, v) in c.exogenous.iter().enumerate() {
                writeln!(w, "exogenous,{i},{i},{v:.12e}")?;
            }
            Ok(())
        })?;
    } else {
        log::warn!("causality tables skipped: the model has negative kernel values");
    }
    rec.finish("stats", config_json(&a), None)
}

fn gof(a: GofArgs) -> Result<RunManifest> {
    let mut rec = Recorder::new(&a.out.out)?;
    let model = read_model(&mut rec, &a.model)?;
    let events = read_events(&mut rec, &a.input)?;
    let g = goodness_of_fit(&model, &events)?;
    rec.write_with("residuals.csv", |w| g.write_csv(w))?;
    rec.write_with("ks.csv", |w| {
        writeln!(w, "component,n,statistic,p_value")?;
        for (i, k) in g.per_component.iter().enumerate() {
            if let Some(k) = k {
                writeln!(w, "{i},{},{:.12e},{:.12e}", k.n, k.statistic, k.p_value)?;
            }
        }
        writeln!(w, "pooled,{},{:.12e},{:.12e}", g.pooled.n, g.pooled.statistic, g.pooled.p_value)?;
        Ok(())
    })?;
    if g.pooled.p_value < 0.01 {
        log::warn!("time-change residuals reject the model (pooled KS p = {:.3e})", g.pooled.p_value);
    }
    rec.finish("gof", config_json(&a), None)
}

fn reflexivity(a: ReflexivityArgs) -> Result<RunManifest> {
    let mut rec = Recorder::new(&a.out.out)?;
    let events = read_events(&mut rec, &a.input)?;
    let methods = a
        .methods
        .split(',')
        .map(|m| ReflexivityMethod::parse(m.trim()).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let cfg = ReflexivityConfig { methods, variance_windows: a.windows, ..Default::default() };
    let r = reflexivity_report(&events, &cfg)?;
    for w in &r.warnings {
        log::warn!("{w}");
    }
    rec.write_with("reflexivity.csv", |w| r.write_csv(w))?;
    rec.finish("reflexivity", config_json(&a), None)
}

fn signature(a: SignatureArgs) -> Result<RunManifest> {
    let mut rec = Recorder::new(&a.out.out)?;
    let events = read_events(&mut rec, &a.input)?;
    let taus = parse_list(&a.scales.taus, "taus")?;
    let path = PricePath::from_sequence(&events, a.up, a.down, 0, a.scales.tick)?;
    let c = signature_plot(&path, &taus, events.horizon())?;
    rec.write_with("signature.csv", |w| c.write_csv(w))?;
    rec.finish("signature", config_json(&a), None)
}

fn epps(a: EppsArgs) -> Result<RunManifest> {
    let mut rec = Recorder::new(&a.out.out)?;
    let events = read_events(&mut rec, &a.input)?;
    let taus = parse_list(&a.scales.taus, "taus")?;
    let (au, ad) = parse_pair(&a.asset_a, "asset-a")?;
    let (bu, bd) = parse_pair(&a.asset_b, "asset-b")?;
    let pa = PricePath::from_sequence(&events, au, ad, 0, a.scales.tick)?;
    let pb = PricePath::from_sequence(&events, bu, bd, 0, a.scales.tick)?;
    let c = epps_covariation(&pa, &pb, &taus, events.horizon())?;
    rec.write_with("epps.csv", |w| c.write_csv(w))?;
    rec.finish("epps", config_json(&a), None)
}

fn impact(a: ImpactArgs) -> Result<RunManifest> {
    let mut rec = Recorder::new(&a.out.out)?;
    let bytes = rec.read_input(&a.config)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Hawkes(HawkesError::Input("config is not UTF-8".into())))?;
    let cfg = HimConfig::from_spec_str(&text)?;
    let meta = MetaOrderProfile::new(parse_list(&a.breaks, "breaks")?, parse_list(&a.rates, "rates")?)?;
    if !(a.until.is_finite() && a.until > 0.0) || a.grid_points == 0 {
        return Err(CliError::Usage("--until must be > 0 and --grid-points >= 1".into()));
    }
    let grid: Vec<f64> = (1..=a.grid_points).map(|k| a.until * k as f64 / a.grid_points as f64).collect();
    let curve = him_impact_curve(&cfg, &meta, a.paths, a.seed, &grid)?;
    rec.write_with("impact.csv", |w| curve.write_csv(w))?;
    rec.write_with("impact_drift.csv", |w| curve.write_drift_csv(w))?;
    rec.finish("impact", config_json(&a), Some(a.seed))
}
