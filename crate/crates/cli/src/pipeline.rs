//! Stages behind the subcommands, and the full verification battery.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use pmqds::diffusion::{sample_limit_paths, TestFunction};
use pmqds::green_kubo::{sigma_curve, Observable, VarianceCurve};
use pmqds::mc::{
    birkhoff_ensemble, center_paths, pushforward_means, CenteringRecord, EnsembleKind, ErgodicReference, PathEnsemble,
    PathPlan,
};
use pmqds::schedule::ParameterRow;
use pmqds::ulam::{rho, srb_continuity_exponent};
use pmqds::verify::{self, TestReport, Verdict};
use pmqds::{cone_check, srb_density};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::io::{derive_seed, RunDir, TIMINGS};

/// Wall-clock seconds per stage, kept out of the numeric artifacts.
#[derive(Default)]
pub struct Timings {
    stages: BTreeMap<String, f64>,
    start: Option<Instant>,
}

impl Timings {
    pub fn new() -> Self {
        Self {
            stages: BTreeMap::new(),
            start: Some(Instant::now()),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        info!("stage {stage}");
        let out = f();
        *self.stages.entry(stage.to_string()).or_insert(0.0) += t0.elapsed().as_secs_f64();
        out
    }

    pub fn write(&self, dir: &RunDir, threads: usize) -> Result<()> {
        let total = self.start.map(|s| s.elapsed().as_secs_f64()).unwrap_or(0.0);
        dir.write_json(
            TIMINGS,
            &json!({"threads": threads, "total_seconds": total, "stages": self.stages}),
        )
    }
}

/// A report with the run it belongs to and whether it is acceptance-tagged.
#[derive(Clone, Debug, Serialize)]
pub struct Filed {
    pub run: String,
    pub acceptance: bool,
    #[serde(flatten)]
    pub report: TestReport,
}

pub struct Battery<'a> {
    pub config: &'a ExperimentConfig,
    pub dir: &'a RunDir,
    pub timings: Timings,
    pub filed: Vec<Filed>,
    hash: String,
}

/// Everything a run's ensembles need.
pub struct RunSetup {
    pub name: String,
    pub f: Observable<f64>,
    pub beta_star: f64,
    pub curve: pmqds::Curve,
}

pub struct LevelEnsemble {
    pub ensemble: PathEnsemble,
    pub mu_curve: Vec<f64>,
    pub nu_curve: Vec<f64>,
}

fn fmt(x: f64) -> String {
    x.to_string()
}

impl<'a> Battery<'a> {
    pub fn new(config: &'a ExperimentConfig, dir: &'a RunDir) -> Self {
        Self {
            config,
            dir,
            timings: Timings::new(),
            filed: Vec::new(),
            hash: config.hash(),
        }
    }

    pub fn setup(&self, name: &str) -> Result<RunSetup> {
        let run = self.config.run(name)?;
        Ok(RunSetup {
            name: name.to_string(),
            f: run.observable(name)?,
            beta_star: run.beta_star,
            curve: run.curve(name)?,
        })
    }

    fn file(&mut self, run: &str, acceptance: bool, mut report: TestReport) -> Result<()> {
        report.config_hash = self.hash.clone();
        let stem = if run.is_empty() {
            report.name.clone()
        } else {
            format!("{}_{run}", report.name)
        };
        let filed = Filed {
            run: run.to_string(),
            acceptance,
            report,
        };
        self.dir.write_json(&format!("reports/{stem}.json"), &filed)?;
        info!("{stem}: {}", filed.report.verdict.as_str());
        self.filed.push(filed);
        Ok(())
    }

    pub fn srb(&mut self) -> Result<()> {
        let c = self.config;
        let alphas = c.battery.srb_alphas.clone();
        for a in alphas {
            let h = self.timings.time(&format!("srb_alpha_{a}"), || {
                Ok(srb_density(a, c.ulam_bins, c.srb_tolerance)?)
            })?;
            let cone = cone_check(&h, a, 1, 1e-9);
            let m = h.bins();
            self.dir.write_csv(
                &format!("srb/alpha_{a}.csv"),
                &["bin", "x", "value"],
                h.values()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| vec![i.to_string(), fmt((i as f64 + 0.5) / m as f64), fmt(*v)]),
            )?;
            self.dir.write_json(
                &format!("srb/cone_alpha_{a}.json"),
                &json!({
                    "alpha": a,
                    "decreasing_violation": cone.decreasing_violation,
                    "x_power_violation": cone.x_power_violation,
                    "pointwise_bound_margin": cone.pointwise_bound_margin,
                    "tolerance": cone.tolerance,
                    "skipped_bins": cone.skipped_bins,
                    "pass": cone.pass,
                }),
            )?;
        }
        if c.selected("doubling_srb") {
            let r = self.timings.time("doubling_srb", || {
                Ok(verify::doubling_srb_test(c.ulam_bins, c.srb_tolerance)?)
            })?;
            self.file("", true, r)?;
        }
        if c.selected("cone_compliance") {
            let alphas = c.battery.cone_alphas.clone();
            let r = self.timings.time("cone_compliance", || {
                Ok(verify::cone_compliance_test(&alphas, c.ulam_bins, c.srb_tolerance)?)
            })?;
            self.file("", true, r)?;
        }
        Ok(())
    }

    pub fn memory_loss(&mut self) -> Result<()> {
        let c = self.config;
        let b = &c.battery;
        let (r, curve) = self.timings.time("memory_loss", || {
            Ok(verify::memory_loss_test(
                b.memory_loss_beta_star,
                c.ulam_bins,
                b.memory_loss_window[0],
                b.memory_loss_window[1],
            )?)
        })?;
        self.dir.write_csv(
            "memory_loss.csv",
            &["n", "distance", "rho"],
            curve
                .iter()
                .enumerate()
                .map(|(n, d)| vec![n.to_string(), fmt(*d), fmt(rho(n, b.memory_loss_beta_star))]),
        )?;
        self.file("", true, r)
    }

    pub fn preimage(&mut self) -> Result<()> {
        let alphas = self.config.battery.preimage_alphas.clone();
        let r = self
            .timings
            .time("preimage_scaling", || Ok(verify::preimage_scaling_test(&alphas)?))?;
        self.file("", true, r)
    }

    pub fn perturbation(&mut self) -> Result<()> {
        let c = self.config;
        let b = &c.battery;
        let beta_star = self.setup(&b.tightness_run)?.beta_star;
        let exponent = b
            .perturbation_exponent
            .unwrap_or_else(|| srb_continuity_exponent(beta_star));
        let r = self.timings.time("perturbation", || {
            Ok(verify::srb_continuity_test(
                b.perturbation_alpha,
                &b.perturbation_betas,
                beta_star,
                c.ulam_bins,
                c.srb_tolerance,
                exponent,
            )?)
        })?;
        let rows: Vec<Vec<String>> = b
            .perturbation_betas
            .iter()
            .map(|beta| {
                let get = |k: &str| r.statistic(&format!("{k}_beta_{beta}")).unwrap_or(f64::NAN);
                vec![
                    fmt(*beta),
                    fmt(get("d_op")),
                    fmt(get("d_srb")),
                    fmt(get("envelope_ratio")),
                ]
            })
            .collect();
        self.dir
            .write_csv("perturbation.csv", &["beta", "d_op", "d_srb", "envelope_ratio"], rows)?;
        self.file("", false, r)
    }

    pub fn green_kubo_anchor(&mut self) -> Result<()> {
        let c = self.config;
        let r = self.timings.time("green_kubo_anchor", || {
            Ok(verify::green_kubo_anchor_test(
                c.ulam_bins,
                c.srb_tolerance,
                c.truncation,
                c.battery.coboundary_alpha,
            )?)
        })?;
        self.file("", true, r)
    }

    /// `sigma^2` on the path grid, written to `sigma/<run>.csv`.
    pub fn sigma(&mut self, run: &RunSetup) -> Result<VarianceCurve<f64>> {
        let c = self.config;
        let grid = c.grid();
        let sigma = self.timings.time(&format!("sigma_{}", run.name), || {
            Ok(sigma_curve(
                &run.f,
                &run.curve,
                &grid,
                c.truncation,
                c.ulam_bins,
                c.srb_tolerance,
            )?)
        })?;
        self.dir.write_csv(
            &format!("sigma/{}.csv", run.name),
            &["t", "alpha", "sigma2", "tail_estimate", "invariant_mean"],
            (0..grid.len()).map(|i| {
                vec![
                    fmt(sigma.grid[i]),
                    fmt(sigma.alphas[i]),
                    fmt(sigma.values[i]),
                    fmt(sigma.tail_estimates[i]),
                    fmt(sigma.invariant_means[i]),
                ]
            }),
        )?;
        let h = &sigma.holder;
        let mut r = TestReport::new("sigma_holder", "sigma_holder_diagnostic");
        r.stat("diagnostic_exponent", h.diagnostic_exponent, None)
            .stat("max_ratio", h.max_ratio, None)
            .stat("fitted_exponent", h.fitted_exponent.unwrap_or(f64::NAN), None)
            .stat("fitted_constant", h.fitted_constant.unwrap_or(f64::NAN), None)
            .note("diagnostic only: the regularity of t -> sigma^2 is not asserted");
        self.file(&run.name, false, r.finish_inconclusive())?;
        Ok(sigma)
    }

    /// `xi_n` (mu-centered) at `level`, with both centering curves.
    pub fn simulate(&mut self, run: &RunSetup, level: usize) -> Result<LevelEnsemble> {
        let c = self.config;
        let grid = c.grid();
        let mu = c.measure(&c.mu, "mu", run.beta_star)?;
        let nu = c.measure(&c.nu, "nu", run.beta_star)?;
        let seed = derive_seed(c.seed, &format!("paths/{}/{level}", run.name));
        let stage = format!("simulate_{}_n{level}", run.name);
        let out = self.timings.time(&stage, || {
            let row = ParameterRow::equipartition(&run.curve, level)?;
            let plan = PathPlan::new(level, &grid)?;
            let means = pushforward_means(&run.f, &row, &[&mu, &nu], &plan, c.ulam_bins)?;
            let mu_curve = plan.accumulate(&means[0]);
            let nu_curve = plan.accumulate(&means[1]);
            let mut values = birkhoff_ensemble(&run.f, &row, &mu, c.paths, &plan, seed)?;
            center_paths(&mut values, &mu_curve, level);
            let ensemble = PathEnsemble {
                kind: EnsembleKind::Fluctuation,
                level,
                paths: c.paths,
                grid: grid.clone(),
                values,
                seed,
                centering: CenteringRecord {
                    mode: "ulam_pushforward".into(),
                    measure: mu.describe(),
                    bins: c.ulam_bins,
                    curve: mu_curve.clone(),
                },
            };
            Ok(LevelEnsemble {
                ensemble,
                mu_curve,
                nu_curve,
            })
        })?;
        self.dir.write_csv(
            &format!("centering/{}_n{level}.csv", run.name),
            &["t", "mu", "nu"],
            grid.iter()
                .zip(&out.mu_curve)
                .zip(&out.nu_curve)
                .map(|((t, a), b)| vec![fmt(*t), fmt(*a), fmt(*b)]),
        )?;
        self.write_ensemble_artifacts(&format!("{}_n{level}", run.name), &out.ensemble)?;
        Ok(out)
    }

    pub fn limit(&mut self, run: &RunSetup, sigma: &VarianceCurve<f64>, label: &str) -> Result<PathEnsemble> {
        let c = self.config;
        let seed = derive_seed(c.seed, &format!("limit/{}/{label}", run.name));
        let e = self.timings.time(&format!("limit_{}_{label}", run.name), || {
            Ok(sample_limit_paths(sigma, &c.grid(), c.limit_paths, seed)?)
        })?;
        self.write_ensemble_artifacts(&format!("{}_limit_{label}", run.name), &e)?;
        Ok(e)
    }

    /// Time-1 marginals and a small path fan; full ensembles only when requested.
    fn write_ensemble_artifacts(&self, stem: &str, e: &PathEnsemble) -> Result<()> {
        let last = e.grid.len() - 1;
        self.dir.write_csv(
            &format!("marginals/{stem}.csv"),
            &["path_id", "value"],
            (0..e.paths).map(|p| vec![p.to_string(), fmt(e.path(p)[last])]),
        )?;
        let fan = PathEnsemble {
            paths: e.paths.min(32),
            values: e.values[..e.paths.min(32) * e.grid.len()].to_vec(),
            ..e.clone()
        };
        self.dir.write_ensemble_csv(&format!("paths/{stem}.csv"), &fan)?;
        if self.config.write_ensembles {
            self.dir.write_ensemble(&format!("ensembles/{stem}"), e, &self.hash)?;
        }
        Ok(())
    }

    pub fn law_run(&mut self) -> Result<()> {
        let c = self.config;
        let b = &c.battery;
        let run = self.setup(&b.law_run)?;
        let name = run.name.clone();
        let sigma = self.sigma(&run)?;
        self.sigma_constancy(&run, &sigma)?;
        let mut ladder = Vec::new();
        for &n in &c.ladder {
            ladder.push(self.simulate(&run, n)?.ensemble);
        }
        let top = ladder.last().expect("nonempty ladder");
        if c.selected("moment2") {
            let r = self.timings.time(&format!("moment2_{name}"), || {
                Ok(verify::moment2_test(top, &sigma, 0.0, 1.0, b.moment2_bias_budget)?)
            })?;
            self.file(&name, true, r)?;
        }
        let limit = self.limit(&run, &sigma, "a")?;
        if c.selected("law_comparison") {
            let refs: Vec<&PathEnsemble> = ladder.iter().collect();
            let times = self.covariance_times();
            let r = self.timings.time(&format!("law_comparison_{name}"), || {
                Ok(verify::law_comparison(&refs, &limit, &sigma, &times, b.ks_threshold)?)
            })?;
            self.file(&name, true, r)?;
        }
        if c.selected("limit_checks") {
            let other = self.limit(&run, &sigma, "b")?;
            let r = verify::limit_self_consistency(&limit, &other)?;
            self.file(&name, false, r)?;
            let r = verify::gaussian_kurtosis_test(&limit, &sigma, 1.0)?;
            self.file(&name, false, r)?;
        }
        Ok(())
    }

    /// For a constant schedule `sigma^2` must be flat; reported against `sigma^2(0)`.
    fn sigma_constancy(&mut self, run: &RunSetup, sigma: &VarianceCurve<f64>) -> Result<()> {
        let (lo, hi) = run.curve.range();
        if lo != hi {
            return Ok(());
        }
        let spread = sigma
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max((v - sigma.values[0]).abs()));
        let mut r = TestReport::new("sigma_constancy", "green_kubo_curve");
        r.stat("sigma2", sigma.values[0], None)
            .stat("spread", spread, None)
            .check_le("max |sigma2(t) - sigma2(0)| <= 1e-12", spread, 1e-12);
        if lo == 0.0 && matches!(run.f, Observable::Affine { slope, intercept } if slope == 1.0 && intercept == 0.0) {
            r.check_le("|sigma2 - 1/4| <= 1e-3", (sigma.values[0] - 0.25).abs(), 1e-3);
        }
        self.file(&run.name, false, r.finish())
    }

    fn covariance_times(&self) -> Vec<f64> {
        let k = self.config.battery.covariance_grid_points;
        (1..=k).map(|i| i as f64 / k as f64).collect()
    }

    pub fn tightness_run(&mut self) -> Result<()> {
        let c = self.config;
        let b = c.battery.clone();
        let run = self.setup(&b.tightness_run)?;
        let name = run.name.clone();
        let sigma = self.sigma(&run)?;
        let mut levels = Vec::new();
        for &n in &c.ladder {
            levels.push(self.simulate(&run, n)?);
        }
        let ladder: Vec<&PathEnsemble> = levels.iter().map(|l| &l.ensemble).collect();
        let top = *ladder.last().expect("nonempty ladder");
        let bottom = ladder[0];

        if c.selected("moment4") {
            let r = self.timings.time(&format!("moment4_{name}"), || {
                Ok(verify::moment4_test(top, b.tightness_time, &b.deltas, run.beta_star)?)
            })?;
            self.file(&name, true, r)?;
        }
        if c.selected("increment_bound") {
            let r = verify::increment_bound_test(
                bottom,
                top,
                run.f.lipschitz_constant(),
                b.tightness_time,
                &b.deltas,
                b.increment_slack,
            )?;
            self.file(&name, false, r)?;
        }
        if c.selected("moment2") {
            let r = verify::moment2_test(top, &sigma, 0.0, 1.0, b.moment2_bias_budget)?;
            self.file(&name, false, r)?;
        }
        if c.selected("decorrelation") {
            let bump = b.decorrelation_bump();
            let r = self.timings.time(&format!("decorrelation_{name}"), || {
                Ok(verify::decorrelation_test(
                    &ladder,
                    &bump,
                    b.decorrelation_s,
                    b.decorrelation_t,
                    2,
                )?)
            })?;
            self.file(&name, true, r)?;
            let r = verify::decorrelation_test(&[top], &bump, b.decorrelation_s, b.decorrelation_t, 1)?;
            self.file(&name, false, r)?;
        }
        let limit = self.limit(&run, &sigma, "a")?;
        if c.selected("martingale") {
            let a = TestFunction::bump(0.0, b.martingale_bump_radius)?;
            let markers = [(
                b.martingale_times[0],
                TestFunction::bump(0.0, b.decorrelation_bump_radius)?,
            )];
            let (r_time, t_time) = (b.martingale_times[1], b.martingale_times[2]);
            let r = self.timings.time(&format!("martingale_{name}"), || {
                Ok(verify::martingale_test(&ladder, &a, &markers, &sigma, r_time, t_time)?)
            })?;
            self.file(&name, true, r)?;
            let r = verify::limit_martingale_test(&limit, &a, &markers, &sigma, r_time, t_time)?;
            self.file(&name, true, r)?;
        }
        if c.selected("law_comparison") {
            let times = self.covariance_times();
            let r = verify::law_comparison(&ladder, &limit, &sigma, &times, b.ks_threshold)?;
            self.file(&name, false, r)?;
        }
        if c.selected("centering") {
            let mu: Vec<Vec<f64>> = levels.iter().map(|l| l.mu_curve.clone()).collect();
            let nu: Vec<Vec<f64>> = levels.iter().map(|l| l.nu_curve.clone()).collect();
            let mut r = verify::centering_test(&c.ladder, &mu, &nu, b.envelope_slack)?;
            r.note("chi^mu - chi^nu = n^{-1/2}(nu(S_n) - mu(S_n)) is identical on every path");
            self.file(&name, true, r)?;
        }
        drop(levels);
        if c.selected("partition") {
            let top_level = *c.ladder.last().expect("nonempty ladder");
            let row = ParameterRow::equipartition(&run.curve, top_level)?;
            let seed = derive_seed(c.seed, &format!("partition/{name}"));
            let [s, t] = b.partition_times;
            let r = self.timings.time(&format!("partition_{name}"), || {
                Ok(verify::partition_contraction_check(
                    &run.f,
                    &row,
                    s,
                    t,
                    run.beta_star,
                    b.partition_samples,
                    seed,
                )?)
            })?;
            self.file(&name, false, r)?;
        }
        if c.selected("ergodic") {
            self.ergodic(&run, &sigma)?;
        }
        Ok(())
    }

    fn ergodic(&mut self, run: &RunSetup, sigma: &VarianceCurve<f64>) -> Result<()> {
        let c = self.config;
        let mut cumulative = vec![0.0];
        for i in 1..sigma.grid.len() {
            let dt = sigma.grid[i] - sigma.grid[i - 1];
            let prev = cumulative[i - 1];
            cumulative.push(prev + dt * (sigma.invariant_means[i] + sigma.invariant_means[i - 1]) / 2.0);
        }
        let reference = ErgodicReference {
            nodes: sigma.grid.clone(),
            means: sigma.invariant_means.clone(),
            cumulative,
        };
        let mu = c.measure(&c.mu, "mu", run.beta_star)?;
        let grid = c.grid();
        let mut medians = Vec::new();
        for &n in &c.ladder {
            let row = ParameterRow::equipartition(&run.curve, n)?;
            let seed = derive_seed(c.seed, &format!("ergodic/{}/{n}", run.name));
            let stats = self.timings.time(&format!("ergodic_{}_n{n}", run.name), || {
                Ok(pmqds::mc::ergodic_check(
                    &run.f,
                    &row,
                    &reference,
                    &mu,
                    c.battery.ergodic_samples,
                    &grid,
                    seed,
                )?)
            })?;
            medians.push(stats.median);
        }
        let r = verify::ergodic_ladder_test(&c.ladder, &medians);
        self.file(&run.name, false, r)
    }

    pub fn summary_rows(&self) -> Vec<Value> {
        self.filed
            .iter()
            .map(|f| serde_json::to_value(f).expect("report serializes"))
            .collect()
    }

    pub fn acceptance_failures(&self) -> usize {
        self.filed
            .iter()
            .filter(|f| f.acceptance && f.report.verdict != Verdict::Pass)
            .count()
    }
}

/// Summary table from filed-report JSON values.
pub fn write_summary(dir: &RunDir, reports: &[Value]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let checks = r["checks"].as_array().cloned().unwrap_or_default();
            let passed = checks.iter().filter(|c| c["pass"].as_bool() == Some(true)).count();
            vec![
                r["anchor"].as_str().unwrap_or("").to_string(),
                r["name"].as_str().unwrap_or("").to_string(),
                r["run"].as_str().unwrap_or("").to_string(),
                r["acceptance"].as_bool().unwrap_or(false).to_string(),
                r["verdict"].as_str().unwrap_or("").to_string(),
                passed.to_string(),
                checks.len().to_string(),
            ]
        })
        .collect();
    dir.write_csv(
        "summary.csv",
        &[
            "anchor",
            "test",
            "run",
            "acceptance",
            "verdict",
            "checks_passed",
            "checks_total",
        ],
        rows,
    )
}

pub fn print_summary(reports: &[Value]) {
    println!("{:<34} {:<14} {:<5} verdict", "anchor", "run", "acc");
    for r in reports {
        println!(
            "{:<34} {:<14} {:<5} {}",
            r["anchor"].as_str().unwrap_or(""),
            r["run"].as_str().unwrap_or(""),
            if r["acceptance"].as_bool() == Some(true) {
                "yes"
            } else {
                ""
            },
            r["verdict"].as_str().unwrap_or("")
        );
    }
}

/// Full battery; returns the number of failed acceptance-tagged reports.
pub fn run_verify(config: &ExperimentConfig, dir: &RunDir, threads: usize) -> Result<usize> {
    let mut battery = Battery::new(config, dir);
    battery.srb()?;
    if config.selected("green_kubo") {
        battery.green_kubo_anchor()?;
    }
    if config.selected("memory_loss") {
        battery.memory_loss()?;
    }
    if config.selected("preimage") {
        battery.preimage()?;
    }
    if config.selected("perturbation") {
        battery.perturbation()?;
    }
    battery.law_run().context("law run")?;
    battery.tightness_run().context("tightness run")?;
    let rows = battery.summary_rows();
    write_summary(dir, &rows)?;
    print_summary(&rows);
    battery.timings.write(dir, threads)?;
    dir.write_manifest("verify", config)?;
    Ok(battery.acceptance_failures())
}

/// Reads `reports/*.json` from an existing run directory.
pub fn load_reports(dir: &RunDir) -> Result<Vec<Value>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.root().join("reports"))
        .context("no reports directory; run `verify` first")?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))
        .collect()
}
