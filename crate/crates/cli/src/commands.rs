use std::path::{Path, PathBuf};

use mollivi_core::estimators::EstimatorSettings;
use mollivi_core::optimizer::{empirical_moment_bound, run};
use mollivi_core::target::build_random_target;
use mollivi_core::theory::{
    check_avg_gradient_rate, check_descent, check_hessian_limit, check_quantization_rate_with,
    check_scalar_lemmas, log_grid, run_with_descent_step, running_gradient_average,
    smoothness_constant, CheckReport, CheckStatus, GaussianPath,
};
use mollivi_core::{DiagnosticsRecord, RunOutput, TargetModel, VERSION};
use rayon::prelude::*;
use serde_json::json;

use crate::artifacts::{self, aggregate, load_run, run_dir, FigureRow, Manifest, SCHEMA};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::Experiment;

/// Fully resolved invocation.
#[derive(Debug, Clone)]
pub struct Plan {
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub execute: bool,
}

impl Plan {
    fn jobs(&self) -> Vec<(usize, u64)> {
        self.dims
            .iter()
            .flat_map(|&d| self.seeds.iter().map(move |&s| (d, s)))
            .collect()
    }

    fn exp_dir(&self) -> PathBuf {
        self.out.join(self.experiment.name())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: CheckStatus,
    /// One line per check or dimension, printed to stdout.
    pub summary: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { status: CheckStatus::NotApplicable, summary: Vec::new() }
    }

    fn add(&mut self, status: CheckStatus, line: String) {
        self.status = self.status.and(status);
        let tag = match status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotApplicable => "N/A",
        };
        self.summary.push(format!("{tag} {line}"));
    }
}

pub fn dispatch(plan: &Plan) -> Result<Outcome, CliError> {
    match plan.experiment {
        Experiment::Run => cmd_run(plan),
        Experiment::SecondMoment => cmd_second_moment(plan),
        Experiment::AvgGradient => cmd_avg_gradient(plan),
        Experiment::Quantization => cmd_quantization(plan),
        Experiment::CheckDescent => cmd_check_descent(plan),
        Experiment::CheckHessian => cmd_check_hessian(plan),
        Experiment::CheckLemmas => cmd_check_lemmas(plan),
    }
}

/// Runs the jobs in parallel and returns results in job order, stopping at
/// the first error.
fn par_jobs<T, F>(jobs: &[(usize, u64)], f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T, CliError> + Sync,
{
    let results: Vec<Result<T, CliError>> = jobs.par_iter().map(|&(d, s)| f(d, s)).collect();
    results.into_iter().collect()
}

struct RunArtifacts {
    manifest: Manifest,
    records: Vec<DiagnosticsRecord>,
}

fn manifest_for(
    experiment: &str,
    config: &ExperimentConfig,
    dim: usize,
    seed: u64,
    target: &TargetModel,
    run_cfg: &mollivi_core::RunConfig,
    gamma: f64,
) -> Result<Manifest, CliError> {
    Ok(Manifest {
        schema: SCHEMA,
        version: VERSION.to_string(),
        experiment: experiment.to_string(),
        dim,
        seed,
        target_spec: config.target_spec(dim, seed),
        run: run_cfg.clone(),
        gamma,
        smoothness: None,
        target: target.to_document()?,
        config: config.clone(),
    })
}

/// Writes the artifacts of a finished run, or the last finite state of an
/// aborted one before passing the error on.
fn persist(
    dir: &Path,
    manifest: Manifest,
    result: mollivi_core::Result<RunOutput>,
) -> Result<(Manifest, RunOutput), CliError> {
    match result {
        Ok(out) => {
            artifacts::write_run(dir, &manifest, &out.records, &out.final_state)?;
            Ok((manifest, out))
        }
        Err(mollivi_core::Error::NonFinite { iteration, context, snapshot }) => {
            artifacts::write_abort(dir, &manifest, &snapshot)?;
            Err(mollivi_core::Error::NonFinite { iteration, context, snapshot }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn execute_run(out: &Path, config: &ExperimentConfig, dim: usize, seed: u64) -> Result<RunArtifacts, CliError> {
    let target = build_random_target(&config.target_spec(dim, seed))?;
    let run_cfg = config.run_config(seed);
    let manifest = manifest_for("run", config, dim, seed, &target, &run_cfg, run_cfg.step_size(dim))?;
    let (manifest, output) = persist(&run_dir(out, "run", dim, seed), manifest, run(&run_cfg, &target))?;
    eprintln!("run d={dim} seed={seed}: {} records", output.records.len());
    Ok(RunArtifacts { manifest, records: output.records })
}

fn cmd_run(plan: &Plan) -> Result<Outcome, CliError> {
    let runs = par_jobs(&plan.jobs(), |d, s| execute_run(&plan.out, &plan.config, d, s))?;
    let mut outcome = Outcome::new();
    outcome.add(CheckStatus::Pass, format!("run: {} runs written under {}", runs.len(), plan.out.join("run").display()));
    Ok(outcome)
}

/// Loads the runs a figure needs from `<out>/run`, executing missing or
/// stale ones when `--execute` is given.
fn ensure_runs(plan: &Plan) -> Result<Vec<RunArtifacts>, CliError> {
    let jobs = plan.jobs();
    let loaded = par_jobs(&jobs, |d, s| {
        let spec = plan.config.target_spec(d, s);
        let run_cfg = plan.config.run_config(s);
        let dir = run_dir(&plan.out, "run", d, s);
        Ok(load_run(&dir, &spec, &run_cfg)?.map(|(manifest, records)| RunArtifacts { manifest, records }))
    })?;
    let missing: Vec<PathBuf> = jobs
        .iter()
        .zip(&loaded)
        .filter(|(_, r)| r.is_none())
        .map(|(&(d, s), _)| run_dir(&plan.out, "run", d, s))
        .collect();
    if !missing.is_empty() && !plan.execute {
        return Err(CliError::MissingRuns(missing));
    }
    let work: Vec<((usize, u64), Option<RunArtifacts>)> = jobs.iter().copied().zip(loaded).collect();
    let filled: Vec<Result<RunArtifacts, CliError>> = work
        .into_par_iter()
        .map(|((d, s), r)| match r {
            Some(r) => Ok(r),
            None => execute_run(&plan.out, &plan.config, d, s),
        })
        .collect();
    filled.into_iter().collect()
}

fn by_dim<'a, T>(plan: &Plan, items: &'a [T]) -> Vec<(usize, &'a [T])> {
    let k = plan.seeds.len();
    plan.dims.iter().enumerate().map(|(i, &d)| (d, &items[i * k..(i + 1) * k])).collect()
}

fn cmd_second_moment(plan: &Plan) -> Result<Outcome, CliError> {
    let runs = ensure_runs(plan)?;
    let mut rows: Vec<FigureRow> = Vec::new();
    let mut outcome = Outcome::new();
    for (d, group) in by_dim(plan, &runs) {
        let xs: Vec<f64> = group[0].records.iter().map(|r| r.iteration as f64).collect();
        let series: Vec<Vec<f64>> = group
            .iter()
            .map(|r| r.records.iter().map(|x| x.second_moment).collect())
            .collect();
        rows.extend(aggregate(&xs, &series, d));

        let mut ratios = Vec::with_capacity(group.len());
        for r in group {
            let h = empirical_moment_bound(&r.records)?;
            ratios.push(h / r.records[0].second_moment);
        }
        let pass = ratios.iter().all(|&q| q <= plan.config.moment_ratio);
        let mut report = CheckReport::new("second_moment", CheckStatus::from_bool(pass))
            .param("dim", d)
            .param("moment_ratio", plan.config.moment_ratio);
        report.grid = plan.seeds.iter().map(|&s| s as f64).collect();
        report.bound = vec![Some(plan.config.moment_ratio); ratios.len()];
        let worst = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        report.measured = ratios;
        artifacts::write_report(&plan.exp_dir().join(d.to_string()), "report", &report)?;
        outcome.add(report.status, format!("second-moment d={d}: max h_hat/m2(0) = {worst:.4}"));
    }
    artifacts::create_dir(&plan.exp_dir())?;
    artifacts::write_figure(&plan.exp_dir().join("figure.csv"), &rows)?;
    Ok(outcome)
}

fn cmd_avg_gradient(plan: &Plan) -> Result<Outcome, CliError> {
    if plan.config.record_every != 1 {
        return Err(CliError::Config("avg-gradient needs record_every = 1".into()));
    }
    if plan.config.iterations == 0 {
        return Err(CliError::Config("avg-gradient needs iterations >= 1".into()));
    }
    let runs = ensure_runs(plan)?;
    let big_l = plan.config.iterations;
    let lo = plan.config.rate_grid_lo.clamp(1, big_l);
    let grid = log_grid(lo, big_l, plan.config.rate_grid_points.max(2));
    let mut rows = Vec::new();
    let mut outcome = Outcome::new();
    for (d, group) in by_dim(plan, &runs) {
        let mut series = Vec::with_capacity(group.len());
        let mut statuses = Vec::with_capacity(group.len());
        let mut bounds: Vec<Vec<Option<f64>>> = Vec::with_capacity(group.len());
        for r in group {
            series.push(running_gradient_average(&r.records)?.0);
            let target = TargetModel::from_document(&r.manifest.target)?;
            let eps = r.manifest.target.epsilon.unwrap_or(plan.config.epsilon0 * (d as f64).sqrt());
            let h = empirical_moment_bound(&r.records)?;
            let sc = smoothness_constant(target.smoothness_bound(), eps, r.manifest.run.n_particles, h)?;
            let rate = check_avg_gradient_rate(&r.records, &sc, r.manifest.gamma, &grid)?;
            statuses.push(rate.bound_status);
            bounds.push(rate.bound);
        }
        let xs: Vec<f64> = (1..=big_l).map(|l| l as f64).collect();
        let agg = aggregate(&xs, &series, d);
        let mean_at_grid: Vec<f64> = grid.iter().map(|&l| agg[l - 1].mean).collect();
        let slope = if grid.len() >= 2 && mean_at_grid.iter().all(|&m| m > 0.0) {
            let gx: Vec<f64> = grid.iter().map(|&l| l as f64).collect();
            Some(mollivi_core::stats::log_log_slope(&gx, &mean_at_grid))
        } else {
            None
        };
        rows.extend(agg);

        let slope_ok = slope.is_some_and(|s| (plan.config.slope_lo..=plan.config.slope_hi).contains(&s));
        let failed = statuses.iter().filter(|s| s.is_failure()).count();
        let vacuous = statuses.iter().filter(|&&s| s == CheckStatus::NotApplicable).count();
        let status = CheckStatus::from_bool(slope_ok && failed == 0);
        let mut report = CheckReport::new("avg_gradient_rate", status)
            .param("dim", d)
            .param("slope", slope)
            .param("slope_range", [plan.config.slope_lo, plan.config.slope_hi])
            .param("seeds", plan.seeds.len())
            .param("bound_failures", failed)
            .param("bound_not_applicable", vacuous);
        report.grid = grid.iter().map(|&l| l as f64).collect();
        report.measured = mean_at_grid;
        report.bound = (0..grid.len())
            .map(|i| {
                let vals: Option<Vec<f64>> = bounds.iter().map(|b| b[i]).collect();
                vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        artifacts::write_report(&plan.exp_dir().join(d.to_string()), "report", &report)?;
        let slope_txt = slope.map_or("n/a".to_string(), |s| format!("{s:.4}"));
        outcome.add(
            status,
            format!(
                "avg-gradient d={d}: slope {slope_txt}, bound failures {failed}/{}, vacuous {vacuous}",
                group.len()
            ),
        );
    }
    artifacts::create_dir(&plan.exp_dir())?;
    artifacts::write_figure(&plan.exp_dir().join("figure.csv"), &rows)?;
    Ok(outcome)
}

fn cmd_quantization(plan: &Plan) -> Result<Outcome, CliError> {
    let cfg = &plan.config;
    let reports = par_jobs(&plan.jobs(), |d, s| {
        let spec = cfg.target_spec(d, s);
        let target = build_random_target(&spec)?;
        let es = EstimatorSettings::new(cfg.b_kl, s);
        let rep = check_quantization_rate_with(&target, &cfg.n_grid, &es, cfg.cmu_proposal)?;
        let dir = run_dir(&plan.out, "quantization", d, s);
        artifacts::create_dir(&dir)?;
        let manifest = json!({
            "schema": SCHEMA,
            "version": VERSION,
            "experiment": "quantization",
            "dim": d,
            "seed": s,
            "target_spec": spec,
            "b_kl": cfg.b_kl,
            "n_grid": cfg.n_grid,
            "cmu_proposal": cfg.cmu_proposal,
            "target": target.to_document()?,
            "config": cfg,
        });
        artifacts::write_json(&dir.join(artifacts::MANIFEST), &manifest)?;
        artifacts::write_report(&dir, "report", &rep.to_check_report())?;
        Ok(rep)
    })?;
    let xs: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    let mut rows = Vec::new();
    let mut outcome = Outcome::new();
    for (d, group) in by_dim(plan, &reports) {
        let series: Vec<Vec<f64>> = group.iter().map(|r| r.rate.measured.clone()).collect();
        let agg = aggregate(&xs, &series, d);
        let failing: Vec<u64> = plan
            .seeds
            .iter()
            .zip(group)
            .filter(|(_, r)| !r.pass)
            .map(|(&s, _)| s)
            .collect();
        let status = CheckStatus::from_bool(failing.is_empty());
        let mean_c2 = group.iter().map(|r| r.c_mu_sq.value).sum::<f64>() / group.len() as f64;
        let mut report = CheckReport::new("quantization", status)
            .param("dim", d)
            .param("failing_seeds", &failing)
            .param("mean_c_mu_sq", mean_c2)
            .with_worst_sigma(group.iter().map(|r| r.worst_violation_sigma).fold(f64::NEG_INFINITY, f64::max));
        report.grid = xs.clone();
        report.measured = agg.iter().map(|r| r.mean).collect();
        report.bound = (0..xs.len())
            .map(|i| Some(group.iter().map(|r| r.rate.bound[i].unwrap_or(f64::NAN)).sum::<f64>() / group.len() as f64))
            .collect();
        artifacts::write_report(&plan.exp_dir().join(d.to_string()), "report", &report)?;
        rows.extend(agg);
        outcome.add(
            status,
            format!("quantization d={d}: {}/{} seeds pass, mean C² = {mean_c2:.4}", group.len() - failing.len(), group.len()),
        );
    }
    artifacts::write_figure(&plan.exp_dir().join("figure.csv"), &rows)?;
    Ok(outcome)
}

fn cmd_check_descent(plan: &Plan) -> Result<Outcome, CliError> {
    let cfg = &plan.config;
    let results = par_jobs(&plan.jobs(), |d, s| {
        let target = build_random_target(&cfg.target_spec(d, s))?;
        // The inequality is checked between consecutive iterations.
        let run_cfg = mollivi_core::RunConfig { record_every: 1, ..cfg.run_config(s) };
        let dr = run_with_descent_step(&run_cfg, &target, cfg.step_factor, cfg.max_attempts)?;
        let report = check_descent(&dr.output.records, &dr.constant, dr.gamma)?;
        let mut manifest = manifest_for(
            "check-descent",
            cfg,
            d,
            s,
            &target,
            &mollivi_core::RunConfig { gamma: Some(dr.gamma), ..run_cfg },
            dr.gamma,
        )?;
        manifest.smoothness = Some(dr.constant);
        let dir = run_dir(&plan.out, "check-descent", d, s);
        artifacts::write_run(&dir, &manifest, &dr.output.records, &dr.output.final_state)?;
        artifacts::write_report(&dir, "report", &report.to_check_report())?;
        Ok(report)
    })?;
    let mut outcome = Outcome::new();
    for (d, group) in by_dim(plan, &results) {
        let pairs: usize = group.iter().map(|r| r.pairs.len()).sum();
        let passed: usize = group.iter().map(|r| r.pairs.iter().filter(|p| p.pass).count()).sum();
        let fraction = passed as f64 / pairs as f64;
        let worst = group.iter().map(|r| r.worst_violation_sigma).fold(f64::NEG_INFINITY, f64::max);
        let min_fraction = mollivi_core::theory::DESCENT_PASS_FRACTION;
        let status = if group.iter().all(|r| r.status == CheckStatus::NotApplicable) {
            CheckStatus::NotApplicable
        } else {
            CheckStatus::from_bool(fraction >= min_fraction)
        };
        let c_gamma: Vec<f64> = group.iter().map(|r| r.c_gamma).collect();
        let mut report = CheckReport::new("check_descent", status)
            .param("dim", d)
            .param("step_factor", cfg.step_factor)
            .param("pooled_pass_fraction", fraction)
            .param("min_pass_fraction", min_fraction)
            .param("c_gamma", &c_gamma)
            .with_worst_sigma(worst);
        report.grid = plan.seeds.iter().map(|&s| s as f64).collect();
        report.measured = group.iter().map(|r| r.pass_fraction).collect();
        report.bound = vec![Some(min_fraction); group.len()];
        artifacts::write_report(&plan.exp_dir().join(d.to_string()), "report", &report)?;
        outcome.add(
            status,
            format!(
                "check-descent d={d}: {passed}/{pairs} pairs within 3 SE ({fraction:.4}), worst {worst:.2} sigma{}",
                if status == CheckStatus::NotApplicable { ", c_gamma < 0 so the bound is vacuous" } else { "" }
            ),
        );
    }
    Ok(outcome)
}

fn cmd_check_hessian(plan: &Plan) -> Result<Outcome, CliError> {
    let cfg = &plan.config;
    let mut outcome = Outcome::new();
    for &d in &plan.dims {
        let path = GaussianPath::new(d, cfg.hessian_s, cfg.hessian_a)?;
        let rep = check_hessian_limit(&path, &cfg.hessian_eps, cfg.hessian_dt, cfg.hessian_min_ratio, cfg.hessian_fd_tolerance)?;
        artifacts::write_report(&plan.exp_dir().join(d.to_string()), "report", &rep.to_check_report())?;
        let ratios: Vec<String> = rep.gap_ratios.iter().map(|r| format!("{r:.4}")).collect();
        let fd = rep.fd_relative_error.iter().cloned().fold(0.0, f64::max);
        outcome.add(
            CheckStatus::from_bool(rep.pass),
            format!("check-hessian d={d}: gap ratios [{}], max fd rel err {fd:.2e}", ratios.join(", ")),
        );
    }
    Ok(outcome)
}

fn cmd_check_lemmas(plan: &Plan) -> Result<Outcome, CliError> {
    let rep = check_scalar_lemmas(plan.config.lemma_points, plan.config.harmonic_n_max);
    artifacts::write_report(&plan.exp_dir(), "report", &rep.to_check_report())?;
    let mut outcome = Outcome::new();
    outcome.add(
        CheckStatus::from_bool(rep.pass),
        format!(
            "check-lemmas: B increase {:.2e}, B(x)(x-1) excess {:.2e}, alpha excess {:.2e}, harmonic excess {:.4}",
            rep.b_max_increase, rep.b_sqrt_max_excess, rep.alpha_max_excess, rep.harmonic_max_excess
        ),
    );
    Ok(outcome)
}
