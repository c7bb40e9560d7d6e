use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prmix_core::bench::{rate_experiment, simulate, Metric, RateExperiment, Scenario};
use prmix_core::diagnostics::{
    chen_assumption_suite, jacobian, jacobian_factorization_residual, kl_oracle_fstar,
    lyapunov_gradient_identity_check, lyapunov_sample, markov_chain_from_jacobian, sample_simplex, OracleOptions,
};
use prmix_core::search::{GridSpec, Selector};
use prmix_core::{pr_run, pr_run_averaged, Kernel, MixingVector, SnapshotPlan, SupportSet, WeightSchedule};

use crate::config::{resolve, Command, Job, KernelName, ModelSpec, RunConfig, SearchMode};
use crate::dataset::{self, DataFormat};
use crate::error::{ExitKind, Tag};
use crate::output::{
    join_points, num, read_estimate, write_estimate, DataRecord, Manifest, OutputDir, CONFIG_ECHO_FILE, ESTIMATE_FILE,
    MANIFEST_FILE,
};
use crate::plot;

/// Where a finished run left its artifacts.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub outputs: Vec<String>,
}

/// Merges flags with an optional configuration file, validates, runs the
/// command and writes its artifacts plus a manifest.
pub fn run(cmd: Command, flags: &RunConfig, config_file: Option<&Path>) -> Result<RunSummary> {
    let merged = match config_file {
        Some(p) => flags.clone().overridden_by(&RunConfig::load(p).tag(ExitKind::Config)?),
        None => flags.clone(),
    };
    let cwd = std::env::current_dir().context("cannot determine the working directory")?;
    let (job, echo) = resolve(cmd, &merged, &cwd)?;
    let out_path = match (&merged.out, &job) {
        (Some(p), _) => p.clone(),
        (None, Job::Plot { input }) => input.join("plots"),
        (None, _) => PathBuf::from(format!("prmix-{}", cmd.name())),
    };
    let mut out = OutputDir::acquire(&out_path)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let data = match &job {
        Job::Fit { model, .. } | Job::Select { model, .. } => Some(DataRecord {
            provenance: model.data.provenance.clone(),
            n: model.data.len(),
            sha256: model.data.digest.clone(),
        }),
        _ => None,
    };
    let result = execute(&job, &mut out);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("failed ({}): {e:#}", ExitKind::of(e)),
    };
    out.write_text(CONFIG_ECHO_FILE, &echo.to_toml())?;
    let manifest_path = out.file(MANIFEST_FILE);
    let manifest = Manifest {
        tool: "prmix".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: prmix_core::VERSION.into(),
        command: cmd.name().into(),
        seed: echo.seed,
        config: echo,
        data,
        started_unix_seconds: started,
        wall_time_seconds: clock.elapsed().as_secs_f64(),
        status,
        outputs: out.written().to_vec(),
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("cannot write {}", manifest_path.display()))?;
    result?;
    Ok(RunSummary {
        out: out.path().to_path_buf(),
        outputs: out.written().to_vec(),
    })
}

fn numerical<T>(r: prmix_core::Result<T>) -> Result<T> {
    r.map_err(|e| {
        let kind = ExitKind::of_core(&e);
        anyhow::Error::from(e).context(kind)
    })
}

fn execute(job: &Job, out: &mut OutputDir) -> Result<()> {
    match job {
        Job::Fit { model, support } => fit(model, support, out),
        Job::Select {
            model,
            grid,
            mode,
            anneal,
        } => select(model, grid, *mode, anneal, out),
        Job::BenchRate {
            scenarios,
            gammas,
            seeds,
            checkpoints,
            fit_from,
            base_seed,
        } => bench(scenarios, gammas, *seeds, checkpoints, *fit_from, *base_seed, out),
        Job::Diagnose {
            scenario,
            schedule,
            n,
            seed,
        } => diagnose(scenario, schedule, *n, *seed, out),
        Job::Simulate { scenario, n, seed } => {
            let y = numerical(simulate(&scenario.model, *n, *seed))?;
            let header = format!(
                "simulated from scenario {} ({}), n = {n}, seed = {seed}",
                scenario.name, scenario.description
            );
            let path = out.file("data.csv");
            dataset::write_values(&path, &header, &y)
        }
        Job::Plot { input } => plot_run(input, out),
    }
}

fn fit(model: &ModelSpec, support: &SupportSet, out: &mut OutputDir) -> Result<()> {
    let f0 = MixingVector::uniform(support.len());
    let y = &model.data.observations;
    let trace = numerical(pr_run(
        y,
        &model.kernel,
        support,
        &model.schedule,
        &f0,
        &SnapshotPlan::None,
    ))?;
    let estimate = if model.permutations > 1 {
        numerical(pr_run_averaged(
            y,
            &model.kernel,
            support,
            &model.schedule,
            &f0,
            model.permutations,
            model.seed,
        ))?
    } else {
        trace.final_mixing.clone()
    };
    let mut w = out.csv(ESTIMATE_FILE)?;
    write_estimate(&mut w, support, &estimate)?;
    let mut w = out.csv("summary.csv")?;
    w.write_record(["key", "value"])?;
    w.write_record(["n", &y.len().to_string()])?;
    w.write_record(["support_size", &support.len().to_string()])?;
    w.write_record(["gamma", &num(model.schedule.gamma())])?;
    w.write_record(["permutations", &model.permutations.to_string()])?;
    w.write_record(["neg_log_predictive", &num(trace.neg_log_predictive())])?;
    w.flush()?;
    Ok(())
}

fn select(
    model: &ModelSpec,
    grid: &GridSpec,
    mode: SearchMode,
    anneal: &prmix_core::search::AnnealConfig,
    out: &mut OutputDir,
) -> Result<()> {
    let selector = numerical(Selector::with_permutations(
        &model.data.observations,
        &model.kernel,
        grid.support(),
        &model.schedule,
        model.permutations,
        model.seed,
    ))?;
    let points = grid.support().points();
    let at = |subset: &[usize]| subset.iter().map(|&i| points[i]).collect::<Vec<f64>>();
    let mut summary: Vec<(&str, String)> = vec![("mode", format!("{mode:?}").to_lowercase())];
    let best = match mode {
        SearchMode::Exhaustive => {
            let res = numerical(selector.exhaustive())?;
            let mut w = out.csv("selection.csv")?;
            w.write_record(["rank", "size", "objective", "points"])?;
            for (r, s) in res.ranking.iter().enumerate() {
                w.write_record([
                    (r + 1).to_string(),
                    s.subset.len().to_string(),
                    num(s.value),
                    join_points(&at(&s.subset)),
                ])?;
            }
            w.flush()?;
            summary.push(("evaluations", res.ranking.len().to_string()));
            summary.push(("best_objective", num(res.best_value)));
            res.best
        }
        SearchMode::Anneal => {
            let res = numerical(selector.anneal(anneal))?;
            let mut w = out.csv("anneal_trace.csv")?;
            w.write_record([
                "iteration",
                "temperature",
                "toggled_point",
                "candidate_objective",
                "accepted",
                "current_objective",
                "best_objective",
            ])?;
            for s in &res.trace {
                w.write_record([
                    s.iteration.to_string(),
                    num(s.temperature),
                    num(points[s.toggled]),
                    num(s.candidate_value),
                    s.accepted.to_string(),
                    num(s.current_value),
                    num(s.best_value),
                ])?;
            }
            w.flush()?;
            let mut w = out.csv("selection.csv")?;
            w.write_record(["rank", "size", "objective", "points"])?;
            w.write_record([
                "1".to_string(),
                res.best.len().to_string(),
                num(res.best_value),
                join_points(&at(&res.best)),
            ])?;
            w.flush()?;
            summary.push(("evaluations", res.evaluations.to_string()));
            summary.push(("cap_reached", res.cap_reached.to_string()));
            summary.push(("initial_temperature", num(res.initial_temperature)));
            summary.push(("best_objective", num(res.best_value)));
            res.best
        }
    };
    let refit = numerical(selector.refit(&best))?;
    let mut w = out.csv(ESTIMATE_FILE)?;
    write_estimate(&mut w, &refit.support, &refit.weights)?;
    summary.push(("support_size", best.len().to_string()));
    summary.push(("grid_size", grid.len().to_string()));
    summary.push(("permutations", model.permutations.to_string()));
    let mut w = out.csv("summary.csv")?;
    w.write_record(["key", "value"])?;
    for (k, v) in summary {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    scenarios: &[Scenario],
    gammas: &[f64],
    seeds: usize,
    checkpoints: &[usize],
    fit_from: usize,
    base_seed: u64,
    out: &mut OutputDir,
) -> Result<()> {
    let mut cells = out.csv("cells.csv")?;
    cells.write_record(["scenario", "gamma", "seed", "n", "err_f", "err_L1", "kl_contrast"])?;
    let mut medians = out.csv("medians.csv")?;
    medians.write_record(["scenario", "gamma", "metric", "n", "median"])?;
    let mut slopes = out.csv("slopes.csv")?;
    slopes.write_record(["scenario", "gamma", "metric", "slope", "stderr", "reference", "status"])?;
    let mut oracle = out.csv("oracle.csv")?;
    oracle.write_record(["scenario", "kstar", "interior", "fstar", "status"])?;
    for sc in scenarios {
        let cfg = RateExperiment {
            scenario: sc.clone(),
            gammas: gammas.to_vec(),
            checkpoints: checkpoints.to_vec(),
            seeds,
            base_seed,
            fit_from,
        };
        let report = match rate_experiment(&cfg) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("scenario {} skipped: {e}", sc.name);
                oracle.write_record([sc.name.as_str(), "", "", "", &format!("skipped: {e}")])?;
                continue;
            }
        };
        oracle.write_record([
            sc.name.clone(),
            num(report.oracle.kstar),
            report.oracle.interior.to_string(),
            join_points(report.oracle.fstar.weights()),
            "ok".into(),
        ])?;
        for c in &report.cells {
            cells.write_record([
                c.scenario.clone(),
                num(c.gamma),
                c.seed.to_string(),
                c.n.to_string(),
                num(c.err_f),
                num(c.err_l1),
                num(c.kl_contrast),
            ])?;
        }
        for s in &report.summaries {
            for (n, m) in s.checkpoints.iter().zip(&s.medians) {
                medians.write_record([
                    s.scenario.clone(),
                    num(s.gamma),
                    s.metric.label().into(),
                    n.to_string(),
                    num(*m),
                ])?;
            }
            let status = match s.pass {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "report-only",
            };
            slopes.write_record([
                s.scenario.clone(),
                num(s.gamma),
                s.metric.label().into(),
                num(s.slope),
                num(s.slope_stderr),
                num(s.reference),
                status.into(),
            ])?;
        }
    }
    for w in [&mut cells, &mut medians, &mut slopes, &mut oracle] {
        w.flush()?;
    }
    Ok(())
}

/// One row of a diagnostics report.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub check: String,
    pub value: f64,
    pub threshold: String,
    pub passed: bool,
    pub detail: String,
}

fn row(check: &str, value: f64, threshold: &str, passed: bool, detail: String) -> DiagnosticRow {
    DiagnosticRow {
        check: check.into(),
        value,
        threshold: threshold.into(),
        passed,
        detail,
    }
}

/// Oracle, mean-field, Jacobian, Markov-chain and A1–A4 checks on a scenario.
pub fn diagnostics(scenario: &Scenario, schedule: &WeightSchedule, n: usize, seed: u64) -> Result<Vec<DiagnosticRow>> {
    let pop = numerical(scenario.population())?;
    let oracle = numerical(kl_oracle_fstar(
        &pop,
        &OracleOptions {
            seed,
            ..Default::default()
        },
    ))?;
    let mut rows = vec![
        row(
            "oracle.kstar",
            oracle.kstar,
            "",
            true,
            join_points(oracle.fstar.weights()),
        ),
        row(
            "oracle.interior",
            f64::from(u8::from(oracle.interior)),
            "",
            true,
            format!("restart spread {}", oracle.restart_spread),
        ),
    ];
    let phi_max = pop
        .phi(oracle.fstar.weights())
        .iter()
        .fold(0.0f64, |a, p| a.max(p.abs()));
    rows.push(row(
        "equilibrium.phi_sup",
        phi_max,
        "< 1e-8",
        phi_max < 1e-8,
        String::new(),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad_max: f64 = 0.0;
    for _ in 0..50 {
        let f = sample_simplex(&mut rng, pop.dim());
        grad_max = grad_max.max(numerical(lyapunov_gradient_identity_check(&pop, &f, oracle.kstar))?);
    }
    rows.push(row(
        "gradient_identity.max",
        grad_max,
        "< 1e-6",
        grad_max < 1e-6,
        "50 random interior points".into(),
    ));

    let sample = lyapunov_sample(&pop, &oracle.fstar, oracle.kstar, 10_000, seed);
    rows.push(row(
        "descent.max_derivative",
        sample.max_derivative,
        "<= 1e-10",
        sample.max_derivative <= 1e-10,
        "10000 random simplex points".into(),
    ));
    rows.push(row(
        "lyapunov.min_value",
        sample.min_value,
        ">= 0",
        sample.min_value >= -1e-12,
        String::new(),
    ));

    if oracle.interior {
        let jac = numerical(jacobian(&pop, &oracle.fstar))?;
        let max_re = jac.eigenvalues().iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        rows.push(row(
            "jacobian.max_real_eigenvalue",
            max_re,
            "< -1e-6",
            max_re < -1e-6,
            String::new(),
        ));
        let resid = jacobian_factorization_residual(&pop, &jac);
        rows.push(row(
            "jacobian.factorization_residual",
            resid,
            "< 1e-7",
            resid < 1e-7,
            String::new(),
        ));
        let (_, chain) = markov_chain_from_jacobian(&jac);
        rows.push(row(
            "chain.min_entry",
            chain.min_entry,
            ">= -1e-8",
            chain.nonnegative,
            String::new(),
        ));
        rows.push(row(
            "chain.row_sum_error",
            chain.row_sum_error,
            "<= 1e-8",
            chain.row_stochastic,
            String::new(),
        ));
        rows.push(row(
            "chain.stationarity_error",
            chain.stationarity_error,
            "<= 1e-8",
            chain.stationary,
            String::new(),
        ));
        rows.push(row(
            "chain.detailed_balance_error",
            chain.detailed_balance_error,
            "<= 1e-8",
            chain.reversible,
            String::new(),
        ));
        let y = numerical(simulate(&scenario.model, n, seed))?;
        let trace = numerical(pr_run(
            &y,
            &scenario.kernel,
            &scenario.fitted,
            schedule,
            &MixingVector::uniform(scenario.fitted.len()),
            &SnapshotPlan::Every,
        ))?;
        let chen = numerical(chen_assumption_suite(
            schedule,
            &jac,
            &y,
            &trace,
            &pop,
            oracle.kstar,
            seed,
        ))?;
        for c in &chen.checks {
            rows.push(row(
                &format!("chen.{}", c.name),
                f64::NAN,
                "",
                c.passed,
                c.detail.clone(),
            ));
        }
    }
    Ok(rows)
}

fn diagnose(scenario: &Scenario, schedule: &WeightSchedule, n: usize, seed: u64, out: &mut OutputDir) -> Result<()> {
    let rows = diagnostics(scenario, schedule, n, seed)?;
    let mut w = out.csv("diagnostics.csv")?;
    w.write_record(["check", "value", "threshold", "passed", "detail"])?;
    for r in &rows {
        let value = if r.value.is_nan() { String::new() } else { num(r.value) };
        w.write_record([r.check.as_str(), &value, &r.threshold, &r.passed.to_string(), &r.detail])?;
    }
    w.flush()?;
    Ok(())
}

fn save_svg(out: &mut OutputDir, name: &str, doc: &svg::Document) -> Result<()> {
    let p = out.file(name);
    svg::save(&p, doc).with_context(|| format!("cannot write {}", p.display()))
}

fn plot_run(input: &Path, out: &mut OutputDir) -> Result<()> {
    let manifest = Manifest::read(input).tag(ExitKind::Data)?;
    match manifest.command.as_str() {
        "bench-rate" => plot_bench(input, out),
        "fit" | "select" => plot_estimate(input, &manifest.config, out),
        other => Err(anyhow!("nothing to plot for a `{other}` run")).tag(ExitKind::Config),
    }
}

fn plot_bench(input: &Path, out: &mut OutputDir) -> Result<()> {
    let path = input.join("medians.csv");
    let mut r = csv::Reader::from_path(&path)
        .with_context(|| format!("cannot read {}", path.display()))
        .tag(ExitKind::Data)?;
    let mut rows: Vec<(String, String, String, f64, f64)> = Vec::new();
    for rec in r.records() {
        let rec = rec.tag(ExitKind::Data)?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .with_context(|| format!("bad number {s:?} in {}", path.display()))
        };
        rows.push((
            rec[0].to_string(),
            rec[1].to_string(),
            rec[2].to_string(),
            parse(&rec[3]).tag(ExitKind::Data)?,
            parse(&rec[4]).tag(ExitKind::Data)?,
        ));
    }
    if rows.is_empty() {
        return Err(anyhow!("{} has no checkpoints to plot", path.display())).tag(ExitKind::Data);
    }
    for metric in Metric::ALL {
        let mut series: Vec<plot::Series> = Vec::new();
        for (sc, g, m, n, v) in &rows {
            if m != metric.label() {
                continue;
            }
            let label = format!("scenario {sc}, gamma {g}");
            match series.iter_mut().find(|s| s.label == label) {
                Some(s) => s.points.push((*n, *v)),
                None => series.push(plot::Series {
                    label,
                    points: vec![(*n, *v)],
                }),
            }
        }
        let doc = plot::rate_plot(&format!("median {} against n", metric.label()), metric.label(), &series)
            .ok_or_else(|| anyhow!("no positive medians for {}", metric.label()))
            .tag(ExitKind::Data)?;
        save_svg(out, &format!("rate_{}.svg", metric.label()), &doc)?;
    }
    Ok(())
}

fn plot_estimate(input: &Path, cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let (support, weights) = read_estimate(&input.join(ESTIMATE_FILE)).tag(ExitKind::Data)?;
    let source = cfg
        .data
        .as_deref()
        .ok_or_else(|| anyhow!("manifest has no data source"))
        .tag(ExitKind::Data)?;
    let data = match source.strip_prefix("builtin:") {
        Some(name) => dataset::builtin(name, cfg.drop_censored_bin.unwrap_or(false)),
        None => dataset::ingest(Path::new(source), cfg.format.unwrap_or(DataFormat::Values)),
    }
    .tag(ExitKind::Data)?;
    let kernel = match cfg.kernel {
        Some(KernelName::Gaussian) => Kernel::gaussian(cfg.sigma.unwrap_or(1.0)).tag(ExitKind::Config)?,
        Some(KernelName::Poisson) => Kernel::poisson(),
        None => bail!("manifest has no kernel"),
    };
    save_svg(
        out,
        "mixing.svg",
        &plot::stem_plot("estimated mixing distribution", &support, &weights),
    )?;
    save_svg(
        out,
        "mixture.svg",
        &plot::mixture_plot(
            "estimated mixture density",
            &data.observations,
            &kernel,
            &support,
            &weights,
        ),
    )?;
    Ok(())
}
