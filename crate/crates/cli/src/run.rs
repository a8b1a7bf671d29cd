//! The `run` command: ingest, fit, decompose, build, solve, compare, write.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use freqmix_core::metrics::{kolmogorov_distance, proportion_deviation, sample_std, wasserstein_1d};
use freqmix_core::{
    aggregate, build_sde_system, em_fit, simulate, solve_mixture, EmConfig, EmReport,
    FrequencyMixture, GeneralizedItoProcess, Gmm, LinearSdeSystem, McsConfig, McsResult,
    QuantileSeries, SfrParams,
};
use nalgebra::Vector3;
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::{Failure, Manifest, McsRecord, Seeds, Status};
use crate::output::{fmt_f64, time_tag, CsvTable};
use crate::scenario::{Input, Scenario};

pub const MIXTURE: &str = "mixture";
pub const BASELINE: &str = "gaussian";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run directory, overriding everything else.
    pub out: Option<PathBuf>,
    /// Root under which `<scenario name>/` is created when neither `out`
    /// nor `output.dir` is set.
    pub out_root: Option<PathBuf>,
    pub no_mcs: bool,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

pub fn output_dir(scenario: &Scenario, opts: &RunOptions) -> PathBuf {
    if let Some(d) = &opts.out {
        return d.clone();
    }
    if let Some(d) = &scenario.output_dir {
        return d.clone();
    }
    opts.out_root
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(&scenario.name)
}

pub fn run(scenario_path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(seed) = opts.seed {
        scenario.override_seed(seed);
    }
    if opts.no_mcs {
        scenario.mcs.enabled = false;
    }
    let dir = output_dir(&scenario, opts);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let mut manifest = Manifest {
        status: Status::Incomplete,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        scenario: scenario_path.display().to_string(),
        started_at: now(),
        finished_at: None,
        seeds: Seeds {
            gmm: scenario.gmm.seed,
            mcs: scenario.mcs.seed,
        },
        n_w: None,
        lambda_w: scenario.lambda_w,
        quantile_knots: None,
        solver_dt: scenario.solver.dt,
        solver_t_end: scenario.solver.t_end,
        mcs: McsRecord {
            enabled: scenario.mcs.enabled,
            n_paths: scenario.mcs.n_paths,
            dt: scenario.mcs.dt,
            t_end: scenario.mcs.t_end,
            capture_times: scenario.mcs.capture_times.clone(),
        },
        gaussian_baseline: scenario.gaussian_baseline,
        metric_times: scenario.metric_times.clone(),
        covariance_method: None,
        timings: BTreeMap::new(),
        mcs_over_analytic: None,
        warnings: Vec::new(),
        error: None,
    };
    manifest.write(&dir)?;

    let outcome = Pipeline {
        scenario: &scenario,
        dir: &dir,
        manifest: &mut manifest,
    }
    .execute();
    manifest.finished_at = Some(now());
    match outcome {
        Ok(()) => {
            manifest.status = Status::Complete;
            manifest.write(&dir)?;
            Ok(RunSummary { dir, manifest })
        }
        Err(e) => {
            manifest.status = Status::Failed;
            manifest.error = Some(Failure {
                category: e.category().into(),
                message: e.to_string(),
            });
            // best effort: the original error matters more than this one
            let _ = manifest.write(&dir);
            Err(e)
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Pipeline<'a> {
    scenario: &'a Scenario,
    dir: &'a Path,
    manifest: &'a mut Manifest,
}

/// Per-method comparison against the Monte Carlo samples at one time.
struct Comparison {
    method: &'static str,
    time: f64,
    w1: f64,
    ks: f64,
    std_analytic: f64,
    std_mcs: f64,
    pd: Vec<f64>,
}

impl Pipeline<'_> {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        let out = f(self)?;
        self.manifest
            .timings
            .insert(stage.into(), start.elapsed().as_secs_f64());
        Ok(out)
    }

    fn execute(mut self) -> Result<(), CliError> {
        let sc = self.scenario;
        let (gmm, report) = self.timed("fit", |p| p.fit())?;
        self.manifest.n_w = Some(gmm.len());
        self.write_gmm(&gmm, report.as_ref())?;

        let process = self.timed("decompose", |_| {
            let mut process = GeneralizedItoProcess::from_gmm(&gmm, sc.lambda_w)
                .map_err(|e| CliError::numeric("decompose", e))?;
            if let Some(pw) = sc.init.pw {
                process = process.with_initial_value(pw);
            }
            Ok(process)
        })?;
        self.write_json("ito.json", &process)?;

        let params = sc.sfr_params(&gmm);
        let system = self.timed("build", |p| p.build(&params, &process))?;
        self.write_system(&params, &system)?;

        let grid = sc.grid();
        let mixture = self.timed("analytic", |_| {
            solve_mixture(&system, &grid).map_err(|e| CliError::numeric("analytic", e))
        })?;
        self.manifest.covariance_method = Some(format!("{:?}", mixture.method()).to_lowercase());
        self.write_mixture("", &mixture)?;

        let single = if sc.gaussian_baseline {
            let mix = self.timed("baseline", |p| {
                let collapsed = gmm.collapse();
                let mut proc = GeneralizedItoProcess::from_gmm(&collapsed, sc.lambda_w)
                    .map_err(|e| CliError::numeric("baseline", e))?;
                proc = proc.with_initial_value(process.initial_value);
                let sys = p.build(&params, &proc)?;
                solve_mixture(&sys, &grid).map_err(|e| CliError::numeric("baseline", e))
            })?;
            self.write_mixture("baseline_", &mix)?;
            Some(mix)
        } else {
            None
        };

        let mut comparisons = Vec::new();
        if sc.mcs.enabled {
            let cfg = McsConfig {
                n_paths: sc.mcs.n_paths,
                dt: sc.mcs.dt,
                t_end: sc.mcs.t_end,
                master_seed: sc.mcs.seed,
            };
            let mcs = self.timed("mcs", |_| {
                simulate(&system, &cfg, &sc.mcs.capture_times).map_err(|e| CliError::numeric("mcs", e))
            })?;
            self.manifest.warnings.extend(mcs.warnings.iter().cloned());
            self.write_mcs(&mcs)?;
            comparisons = self.timed("metrics", |p| p.compare(&mixture, single.as_ref(), &mcs))?;
            self.write_metrics(&comparisons)?;
            let t = &self.manifest.timings;
            self.manifest.mcs_over_analytic = Some(t["mcs"] / t["analytic"].max(1e-12));
        }
        self.write_summary(&gmm, &mixture, &comparisons)
    }

    fn fit(&mut self) -> Result<(Gmm, Option<EmReport>), CliError> {
        let sc = self.scenario;
        match &sc.input {
            Input::Inline(g) => Ok((g.clone(), None)),
            Input::GmmFile(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let gmm = Gmm::from_json(&text).map_err(|e| {
                    CliError::Config(format!("{}: not a mixture record: {e}", path.display()))
                })?;
                Ok((gmm, None))
            }
            Input::Quantiles(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let series = QuantileSeries::from_json(&text)
                    .and_then(|s| s.with_bounds(sc.p_min, sc.p_max))
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                self.manifest.quantile_knots = Some(series.len());
                let samples = series
                    .sample(sc.gmm.sample_count, sc.gmm.seed)
                    .map_err(|e| CliError::numeric("fit", e))?;
                let cfg = EmConfig {
                    components: sc.gmm.n,
                    tol: sc.gmm.tol,
                    max_iter: sc.gmm.max_iter,
                    seed: sc.gmm.seed,
                    ..EmConfig::default()
                };
                let (gmm, report) = em_fit(&samples, &cfg).map_err(|e| CliError::numeric("fit", e))?;
                if !report.converged {
                    self.manifest.warnings.push(format!(
                        "EM stopped after {} iterations without meeting tol = {:e}",
                        report.iterations, cfg.tol
                    ));
                }
                Ok((gmm, Some(report)))
            }
        }
    }

    fn build(&self, params: &SfrParams, process: &GeneralizedItoProcess) -> Result<LinearSdeSystem, CliError> {
        let init = self.scenario.init;
        let x0 = (init.tg.is_some() || init.df.is_some()).then(|| {
            Vector3::new(
                init.tg.unwrap_or(0.0),
                init.df.unwrap_or(0.0),
                process.initial_value,
            )
        });
        let agg = aggregate(params).map_err(|e| CliError::numeric("build", e))?;
        build_sde_system(&agg, params, process, x0).map_err(|e| CliError::numeric("build", e))
    }

    fn compare(
        &self,
        mix: &FrequencyMixture,
        single: Option<&FrequencyMixture>,
        mcs: &McsResult,
    ) -> Result<Vec<Comparison>, CliError> {
        let err = |e: freqmix_core::metrics::MetricsError| CliError::numeric("metrics", e);
        let mut out = Vec::new();
        for &t in &self.scenario.metric_times {
            let samples = mcs.df_samples(t).map_err(|e| CliError::numeric("metrics", e))?;
            let std_mcs = sample_std(&samples).map_err(err)?;
            let methods = std::iter::once((MIXTURE, mix)).chain(single.map(|d| (BASELINE, d)));
            for (method, mix) in methods {
                let slice = mix.slice(t).map_err(|e| CliError::numeric("metrics", e))?;
                let n = samples.len();
                let reference: Vec<f64> = (0..n)
                    .map(|k| slice.quantile((k as f64 + 0.5) / n as f64))
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::numeric("metrics", e))?;
                let pd = proportion_deviation(
                    &samples,
                    |a| slice.quantile(a).unwrap_or(f64::NAN),
                    &self.scenario.alphas,
                )
                .map_err(err)?;
                out.push(Comparison {
                    method,
                    time: t,
                    w1: wasserstein_1d(&reference, &samples).map_err(err)?,
                    ks: kolmogorov_distance(&samples, |x| slice.cdf(x)).map_err(err)?,
                    std_analytic: slice.std_dev(),
                    std_mcs,
                    pd: pd.deviations,
                });
            }
        }
        Ok(out)
    }

    // ------------------------------------------------------------ writers

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value).expect("records serialize");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    fn write_gmm(&self, gmm: &Gmm, report: Option<&EmReport>) -> Result<(), CliError> {
        let record = GmmRecordOut {
            components: gmm.components(),
            mean: gmm.mean(),
            variance: gmm.variance(),
            fit: report.map(|r| FitRecord {
                iterations: r.iterations,
                converged: r.converged,
                final_log_likelihood: r.final_log_likelihood,
                floor_resets: r.floor_resets,
            }),
        };
        self.write_json("gmm.json", &record)
    }

    fn write_system(&self, params: &SfrParams, system: &LinearSdeSystem) -> Result<(), CliError> {
        let a = system.state_matrix();
        let rows = |m: &nalgebra::Matrix3<f64>| -> Vec<[f64; 3]> {
            (0..3).map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]).collect()
        };
        let mut eig: Vec<[f64; 2]> = system
            .state_matrix_dyn()
            .complex_eigenvalues()
            .iter()
            .map(|l| [l.re, l.im])
            .collect();
        eig.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
        let agg = aggregate(params).map_err(|e| CliError::numeric("build", e))?;
        let record = SystemRecord {
            params: *params,
            aggregated: agg,
            state_order: ["governor", "df", "wind"],
            state_matrix: rows(a),
            eigenvalues: eig,
            initial_state: (*system.initial_state()).into(),
            weights: system.weights().to_vec(),
            constants: system.constants().iter().map(|c| (*c).into()).collect(),
            diffusions: system.diffusions().iter().map(|b| (*b).into()).collect(),
        };
        self.write_json("system.json", &record)
    }

    fn write_mixture(&self, prefix: &str, mix: &FrequencyMixture) -> Result<(), CliError> {
        let mut comps = CsvTable::new(&["time", "component", "weight", "mean_df", "var_df"]);
        let mut summary = CsvTable::new(&["time", "mix_mean", "mix_std", "q05", "q50", "q95"]);
        for (ti, &t) in mix.times().iter().enumerate() {
            for (i, w) in mix.weights().iter().enumerate() {
                comps.row([
                    fmt_f64(t),
                    i.to_string(),
                    fmt_f64(*w),
                    fmt_f64(mix.component_mean(ti, i)),
                    fmt_f64(mix.component_variance(ti, i)),
                ]);
            }
            let slice = mix.slice_at(ti);
            let q = |a| {
                slice
                    .quantile(a)
                    .map(fmt_f64)
                    .map_err(|e| CliError::numeric("analytic", e))
            };
            summary.row([
                fmt_f64(t),
                fmt_f64(slice.mean()),
                fmt_f64(slice.std_dev()),
                q(0.05)?,
                q(0.5)?,
                q(0.95)?,
            ]);
        }
        comps.write(&self.dir.join(format!("{prefix}mixture_components.csv")))?;
        summary.write(&self.dir.join(format!("{prefix}mixture_summary.csv")))
    }

    fn write_mcs(&self, mcs: &McsResult) -> Result<(), CliError> {
        for (k, &t) in mcs.capture_times.iter().enumerate() {
            let mut table = CsvTable::new(&["path", "component", "df"]);
            for (path, (x, c)) in mcs.states[k].iter().zip(&mcs.components).enumerate() {
                table.row([path.to_string(), c.to_string(), fmt_f64(x[1])]);
            }
            table.write(&self.dir.join(format!("mcs_t{}.csv", time_tag(t))))?;
        }
        Ok(())
    }

    fn write_metrics(&self, rows: &[Comparison]) -> Result<(), CliError> {
        let mut table = CsvTable::new(&["method", "metric", "time", "alpha", "value"]);
        for c in rows {
            let t = fmt_f64(c.time);
            let mut put = |metric: &str, alpha: String, v: f64| {
                table.row([c.method.to_string(), metric.to_string(), t.clone(), alpha, fmt_f64(v)]);
            };
            put("w1", String::new(), c.w1);
            put("ks", String::new(), c.ks);
            put("std_analytic", String::new(), c.std_analytic);
            put("std_mcs", String::new(), c.std_mcs);
            put("std_rel_error", String::new(), rel_error(c.std_analytic, c.std_mcs));
            for (a, d) in self.scenario.alphas.iter().zip(&c.pd) {
                put("pd", fmt_f64(*a), *d);
            }
        }
        table.write(&self.dir.join("metrics.csv"))
    }

    fn write_summary(&self, gmm: &Gmm, mix: &FrequencyMixture, cmp: &[Comparison]) -> Result<(), CliError> {
        let mut s = String::new();
        let sc = self.scenario;
        let _ = writeln!(s, "scenario   {}", sc.name);
        let _ = writeln!(s, "components {}  (mean {:.6}, std {:.6})", gmm.len(), gmm.mean(), gmm.variance().sqrt());
        let _ = writeln!(s, "lambda_w   {}", sc.lambda_w);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>8}  {:>13}  {:>13}", "time", "mix_mean", "mix_std");
        let shown: Vec<f64> = if sc.metric_times.is_empty() {
            sc.mcs.capture_times.clone()
        } else {
            sc.metric_times.clone()
        };
        for &t in &shown {
            if let Ok(slice) = mix.slice(t) {
                let _ = writeln!(s, "{:>8.3}  {:>13.6e}  {:>13.6e}", t, slice.mean(), slice.std_dev());
            }
        }
        if !cmp.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "{:<8}  {:>8}  {:>11}  {:>11}  {:>11}  {:>11}  {:>9}  {:>9}",
                "method", "time", "w1", "ks", "std", "std_mcs", "rel_err", "max|pd|"
            );
            for c in cmp {
                let pd = c.pd.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                let _ = writeln!(
                    s,
                    "{:<8}  {:>8.3}  {:>11.4e}  {:>11.4e}  {:>11.4e}  {:>11.4e}  {:>9.4}  {:>9.4}",
                    c.method,
                    c.time,
                    c.w1,
                    c.ks,
                    c.std_analytic,
                    c.std_mcs,
                    rel_error(c.std_analytic, c.std_mcs),
                    pd
                );
            }
        }
        let path = self.dir.join("summary.txt");
        std::fs::write(&path, s).map_err(|e| CliError::io(path, e))
    }
}

fn rel_error(analytic: f64, empirical: f64) -> f64 {
    if empirical > 0.0 {
        (analytic - empirical).abs() / empirical
    } else if analytic == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Serialize)]
struct GmmRecordOut<'a> {
    components: &'a [freqmix_core::GaussianComponent],
    mean: f64,
    variance: f64,
    fit: Option<FitRecord>,
}

#[derive(Serialize)]
struct FitRecord {
    iterations: usize,
    converged: bool,
    final_log_likelihood: f64,
    floor_resets: usize,
}

#[derive(Serialize)]
struct SystemRecord {
    params: SfrParams,
    aggregated: freqmix_core::AggregatedSfr,
    state_order: [&'static str; 3],
    state_matrix: Vec<[f64; 3]>,
    eigenvalues: Vec<[f64; 2]>,
    initial_state: [f64; 3],
    weights: Vec<f64>,
    constants: Vec<[f64; 3]>,
    diffusions: Vec<[f64; 3]>,
}
