use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use nalgebra::DVector;
use tfilter::bench::{
    default_drone_p0, drone_scale_table, nominal_model, run_benchmark, sign_test, simulate_drone,
    simulate_scalar_walk, BenchmarkConfig, DroneScenario, ScalarWalkConfig, StrategyKind,
};
use tfilter::calibration::{build_scale_table, scale_table_for_model, ScaleFactorTable};
use tfilter::gaussian::{kf_run, rts_smooth, KfOptions};
use tfilter::grid::{grid_moments, run_oracle, GridDensity, GridSpec, OracleNoise};
use tfilter::io::{self, Table};
use tfilter::model::LinearModel;
use tfilter::montecarlo::{mc_run, ModelFn, NonlinearModel};
use tfilter::student::{simplistic_run, tf_run, ts_smooth, ApproximationStrategy, TBelief};

use crate::{BenchmarkArgs, CalibrateArgs, CliError, EstimateArgs, FilterKind, Scenario, ScenarioArgs, SimulateArgs, Strategy};

type CliResult<T> = Result<T, CliError>;

const ORACLE_WIDENINGS: usize = 4;

fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::ScalarWalk => "scalar-walk",
        Scenario::Drone => "drone",
    }
}

fn filter_name(f: FilterKind) -> &'static str {
    match f {
        FilterKind::Kf => "kf",
        FilterKind::KfClairvoyant => "kf-clairvoyant",
        FilterKind::T => "t",
        FilterKind::TSimplistic => "t-simplistic",
        FilterKind::McT => "mc-t",
        FilterKind::GridOracle => "grid-oracle",
    }
}

fn strategy_kind(s: Strategy) -> StrategyKind {
    match s {
        Strategy::Conservative => StrategyKind::Conservative,
        Strategy::Kld => StrategyKind::Kld,
        Strategy::Moment => StrategyKind::Moment,
    }
}

fn parse_outlier(s: &str) -> CliResult<(usize, f64)> {
    let parsed = s.split_once(':').and_then(|(k, o)| Some((k.trim().parse().ok()?, o.trim().parse().ok()?)));
    parsed.ok_or_else(|| CliError::Config(format!("outlier {s:?} is not of the form k:offset")))
}

fn scalar_config(a: &ScenarioArgs) -> CliResult<ScalarWalkConfig> {
    if a.no_events {
        return config_err("--no-events applies to the drone scenario only");
    }
    let mut c = ScalarWalkConfig { seed: a.seed, ..Default::default() };
    if let Some(steps) = a.steps {
        c.steps = steps;
    }
    if let Some(nu) = a.dof {
        (c.prior_dof, c.gamma, c.delta) = (nu, nu, nu);
    }
    if let Some(q) = a.q {
        c.q = q;
    }
    if let Some(r) = a.r {
        c.r = r;
    }
    c.outliers = a.outliers.iter().map(|s| parse_outlier(s)).collect::<CliResult<_>>()?;
    c.validate()?;
    Ok(c)
}

fn drone_config(a: &ScenarioArgs) -> CliResult<DroneScenario> {
    if a.q.is_some() || a.r.is_some() || !a.outliers.is_empty() {
        return config_err("--q, --r and --outliers apply to the scalar walk only");
    }
    let mut s = DroneScenario::default();
    if let Some(steps) = a.steps {
        s.steps = steps + 1;
    }
    if a.no_events {
        s = s.without_events();
    }
    s.validate()?;
    Ok(s)
}

fn scenario_comments(a: &ScenarioArgs) -> Vec<String> {
    let mut c = vec![format!("scenario={}", scenario_name(a.scenario)), format!("seed={}", a.seed)];
    let optional = [("steps", a.steps.map(|v| v.to_string())), ("dof", a.dof.map(|v| v.to_string())), ("q", a.q.map(|v| v.to_string())), ("r", a.r.map(|v| v.to_string()))];
    c.extend(optional.into_iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))));
    if !a.outliers.is_empty() {
        c.push(format!("outliers={}", a.outliers.join(",")));
    }
    if a.no_events {
        c.push("no_events=true".into());
    }
    c
}

fn save(table: Table, comments: &[String], path: &Path) -> CliResult<()> {
    table.with_comments(comments).save(path).map_err(|e| match e {
        tfilter::Error::Io(io) => CliError::Config(format!("cannot write {}: {io}", path.display())),
        other => other.into(),
    })
}

/// `<out>` with `suffix` appended to the file stem.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}{ext}"))
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let mut comments = vec!["command=simulate".to_string()];
    comments.extend(scenario_comments(&a.scenario));
    let table = match a.scenario.scenario {
        Scenario::ScalarWalk => io::scalar_walk_table(&simulate_scalar_walk(&scalar_config(&a.scenario)?)?),
        Scenario::Drone => {
            let tr = simulate_drone(&drone_config(&a.scenario)?, a.scenario.seed)?;
            info!("trajectory accepted after {} rejections", tr.rejections);
            io::trajectory_table(&tr)
        }
    };
    save(table, &comments, &a.out)
}

fn load_table(path: &Path) -> CliResult<ScaleFactorTable> {
    ScaleFactorTable::load(path).map_err(|e| CliError::Config(format!("cannot load table {}: {e}", path.display())))
}

fn oracle_moments(ds: &[GridDensity], first_k: usize) -> Table {
    let mut t = Table::new(["k", "xhat_0", "p_00"]);
    for (i, d) in ds.iter().enumerate() {
        let (m, v) = grid_moments(d);
        t.push(vec![(i + first_k).to_string(), format!("{m}"), format!("{v}")]);
    }
    t
}

/// Filtered and optionally smoothed tables.
type Estimates = (Table, Option<Table>);

fn run_t_filter(model: &LinearModel, ys: &[DVector<f64>], strategy: &ApproximationStrategy, smooth: bool) -> CliResult<Estimates> {
    let run = tf_run(model, ys, strategy)?;
    let smoothed = if smooth { Some(io::t_beliefs(&ts_smooth(&run, model)?)) } else { None };
    Ok((io::t_estimates(&run), smoothed))
}

fn run_kf(model: &LinearModel, ys: &[DVector<f64>], smooth: bool) -> CliResult<Estimates> {
    let hist = kf_run(model, ys, &KfOptions::default())?;
    let smoothed = if smooth { Some(io::smoothed_estimates(&rts_smooth(&hist, model)?)) } else { None };
    Ok((io::kf_estimates(&hist), smoothed))
}

fn no_smoother(a: &EstimateArgs) -> CliResult<()> {
    if a.smooth {
        return config_err(format!("no smoother is available for filter {}", filter_name(a.filter)));
    }
    Ok(())
}

fn estimate_scalar(a: &EstimateArgs, comments: &mut Vec<String>) -> CliResult<Estimates> {
    let cfg = scalar_config(&a.scenario)?;
    let model = cfg.model()?;
    let ys: Vec<f64> = match &a.input {
        Some(path) => io::scalar_measurements(&Table::load(path)?)?,
        None => simulate_scalar_walk(&cfg)?.measurements,
    };
    let yv: Vec<DVector<f64>> = ys.iter().map(|&y| DVector::from_element(1, y)).collect();
    match a.filter {
        FilterKind::Kf => run_kf(&model, &yv, a.smooth),
        FilterKind::KfClairvoyant => config_err("kf-clairvoyant needs the event schedule of the drone scenario"),
        FilterKind::T => {
            let strategy = match a.strategy {
                Strategy::Conservative => ApproximationStrategy::Conservative,
                Strategy::Moment => ApproximationStrategy::MomentMatched,
                Strategy::Kld => {
                    let table = match &a.table {
                        Some(p) => load_table(p)?,
                        None => scale_table_for_model(&model, a.calib_samples, a.scenario.seed)?,
                    };
                    ApproximationStrategy::KldScaled(Arc::new(table))
                }
            };
            run_t_filter(&model, &yv, &strategy, a.smooth)
        }
        FilterKind::TSimplistic => {
            no_smoother(a)?;
            Ok((io::t_beliefs(&simplistic_run(&model, &yv)?), None))
        }
        FilterKind::McT => {
            no_smoother(a)?;
            let nm = NonlinearModel::linear(model.f.clone(), model.h.clone(), model.q.clone(), model.gamma, model.r.clone(), model.delta, a.samples)?;
            comments.push(format!("samples={}", a.samples));
            Ok((io::t_beliefs(&mc_run(&TBelief::from_prior(&model), &yv, &nm, a.scenario.seed)?), None))
        }
        FilterKind::GridOracle => {
            let run = run_oracle(&model, &ys, GridSpec::oracle_default(), OracleNoise::StudentT, ORACLE_WIDENINGS)?;
            comments.push(format!("grid={},{},{}", run.spec.x_min, run.spec.x_max, run.spec.count));
            let density = a.density_out.clone().unwrap_or_else(|| sibling(&a.out, "_density"));
            save(io::density_table(&run), comments, &density)?;
            let smoothed = if a.smooth { Some(oracle_moments(&run.smoothed, 0)) } else { None };
            Ok((oracle_moments(&run.filtered, 0), smoothed))
        }
    }
}

fn drone_table(table: &Option<PathBuf>, dof: f64, samples: usize, seed: u64) -> CliResult<Arc<ScaleFactorTable>> {
    Ok(Arc::new(match table {
        Some(p) => load_table(p)?,
        None => drone_scale_table(dof, samples, seed)?,
    }))
}

fn estimate_drone(a: &EstimateArgs, comments: &mut Vec<String>) -> CliResult<Estimates> {
    let s = drone_config(&a.scenario)?;
    let dof = a.scenario.dof.unwrap_or(3.0);
    let ys = match &a.input {
        Some(path) => io::trajectory_measurements(&Table::load(path)?)?,
        None => simulate_drone(&s, a.scenario.seed)?.filter_measurements(),
    };
    let p0 = default_drone_p0();
    let t_config = |table: Arc<ScaleFactorTable>| {
        let mut cfg = BenchmarkConfig::new(s.clone(), 1, a.scenario.seed, table);
        cfg.t_dof = dof;
        cfg.strategy = strategy_kind(a.strategy);
        cfg
    };
    match a.filter {
        FilterKind::Kf => run_kf(&nominal_model(&s, &p0, dof)?, &ys, a.smooth),
        FilterKind::KfClairvoyant => run_kf(&nominal_model(&s, &p0, dof)?.with_schedule(s.schedule()?)?, &ys, a.smooth),
        FilterKind::T | FilterKind::TSimplistic | FilterKind::McT => {
            let cfg = t_config(drone_table(&a.table, dof, a.calib_samples, a.scenario.seed)?);
            let model = cfg.t_model()?;
            match a.filter {
                FilterKind::T => run_t_filter(&model, &ys, &cfg.strategy.build(&cfg.table), a.smooth),
                FilterKind::TSimplistic => {
                    no_smoother(a)?;
                    Ok((io::t_beliefs(&simplistic_run(&model, &ys)?), None))
                }
                _ => {
                    no_smoother(a)?;
                    let (f, g, h) = (model.f.clone(), model.g.clone(), model.h.clone());
                    let fm: ModelFn = Arc::new(move |x, v| &f * x + &g * v);
                    let hm: ModelFn = Arc::new(move |x, e| &h * x + e);
                    let nm = NonlinearModel::new(fm, hm, model.q.clone(), dof, model.r.clone(), dof, a.samples)?;
                    comments.push(format!("samples={}", a.samples));
                    Ok((io::t_beliefs(&mc_run(&TBelief::from_prior(&model), &ys, &nm, a.scenario.seed)?), None))
                }
            }
        }
        FilterKind::GridOracle => config_err("grid-oracle handles the scalar walk only"),
    }
}

pub fn estimate(a: &EstimateArgs) -> CliResult<()> {
    let mut comments = vec!["command=estimate".to_string()];
    comments.extend(scenario_comments(&a.scenario));
    comments.push(format!("filter={}", filter_name(a.filter)));
    if matches!(a.filter, FilterKind::T) {
        comments.push(format!("strategy={}", strategy_kind(a.strategy).name()));
    }
    if let Some(t) = &a.table {
        comments.push(format!("table={}", t.display()));
    }
    if let Some(i) = &a.input {
        comments.push(format!("input={}", i.display()));
    }
    let (filtered, smoothed) = match a.scenario.scenario {
        Scenario::ScalarWalk => estimate_scalar(a, &mut comments)?,
        Scenario::Drone => estimate_drone(a, &mut comments)?,
    };
    save(filtered, &comments, &a.out)?;
    if let Some(t) = smoothed {
        comments.push("pass=smoothed".into());
        save(t, &comments, &a.smooth_out.clone().unwrap_or_else(|| sibling(&a.out, "_smoothed")))?;
    }
    Ok(())
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<()> {
    if a.dims.is_empty() || a.dofs.is_empty() || a.targets.is_empty() {
        return config_err("dims, dofs and targets must be non-empty");
    }
    for &nu_prime in &a.targets {
        for &nu in &a.dofs {
            if nu_prime > nu {
                warn!("skipping nu = {nu}, nu' = {nu_prime}: only reductions are calibrated");
            }
        }
    }
    let table = build_scale_table(&a.dims, &a.dofs, &a.targets, a.samples, a.seed)?;
    let comments = [
        "command=calibrate".to_string(),
        format!("dims={}", join(&a.dims)),
        format!("dofs={}", join(&a.dofs)),
        format!("targets={}", join(&a.targets)),
        format!("samples={}", a.samples),
        format!("seed={}", a.seed),
    ];
    let write = || -> tfilter::Result<()> {
        let mut w = BufWriter::new(File::create(&a.out)?);
        for c in &comments {
            writeln!(w, "# {c}")?;
        }
        table.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| CliError::Config(format!("cannot write {}: {e}", a.out.display())))
}

pub fn benchmark(a: &BenchmarkArgs) -> CliResult<()> {
    if a.scenario != Scenario::Drone {
        return config_err("the benchmark runs on the drone scenario");
    }
    if a.runs == 0 {
        return config_err("runs must be at least 1");
    }
    let mut scenario = DroneScenario { runs: a.runs, ..Default::default() };
    if a.no_events {
        scenario = scenario.without_events();
    }
    let table = drone_table(&a.table, a.dof, a.calib_samples, a.seed)?;
    let mut cfg = BenchmarkConfig::new(scenario, a.runs, a.seed, table);
    cfg.t_dof = a.dof;
    cfg.strategy = strategy_kind(a.strategy);
    let result = run_benchmark(&cfg)?;

    let mut comments = vec![
        "command=benchmark".to_string(),
        "scenario=drone".into(),
        format!("runs={}", a.runs),
        format!("seed={}", a.seed),
        format!("dof={}", a.dof),
        format!("strategy={}", cfg.strategy.name()),
    ];
    match &a.table {
        Some(t) => comments.push(format!("table={}", t.display())),
        None => comments.push(format!("calib_samples={}", a.calib_samples)),
    }
    if a.no_events {
        comments.push("no_events=true".into());
    }
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", a.out_dir.display())))?;
    save(io::error_table(&result), &comments, &a.out_dir.join("errors.csv"))?;
    let mut kde_comments = comments.clone();
    if result.summaries.iter().all(|s| s.kde.is_none()) {
        println!("notice: KDE skipped, it needs at least two runs with distinct errors");
        kde_comments.push("kde=skipped".into());
    }
    save(io::kde_table(&result), &kde_comments, &a.out_dir.join("kde.csv"))?;
    save(io::per_step_table(&result), &comments, &a.out_dir.join("per_step.csv"))?;
    save(io::trajectory_table(&result.representative.trajectory), &comments, &a.out_dir.join("trajectory.csv"))?;

    let mut summary = Table::new(["filter", "median_rmse", "runs"]);
    for s in &result.summaries {
        println!("{:<16} median RMSE {:.4}", s.label, s.median());
        summary.push(vec![s.label.clone(), format!("{}", s.median()), s.rmse.len().to_string()]);
    }
    save(summary, &comments, &a.out_dir.join("summary.csv"))?;
    if let (Some(t), Some(kf)) = (result.summary("t"), result.summary("kf")) {
        let (wins, n, p) = sign_test(&t.rmse, &kf.rmse)?;
        println!("sign test t < kf: {wins}/{n} runs, p = {p:.3e}");
    }
    Ok(())
}
