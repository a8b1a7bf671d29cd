//! Scenario files: one TOML document per experiment.
//!
//! Values are pulled out key by key instead of through a derived struct so
//! that every error names the full dotted key, and unknown keys are rejected
//! rather than silently ignored.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use freqmix_core::{GaussianComponent, Gmm, SfrParams, TimeGrid};
use toml::{Table, Value};

use crate::error::CliError;

const ALIGN_TOL: f64 = 1e-9;

/// Where the wind-power distribution comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    /// JSON quantile series, sampled and fitted by EM.
    Quantiles(PathBuf),
    /// JSON mixture record as written by a previous run.
    GmmFile(PathBuf),
    Inline(Gmm),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSettings {
    pub n: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsSettings {
    pub enabled: bool,
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub capture_times: Vec<f64>,
}

/// Initial state overrides. Unset entries fall back to zero (governor, Δf)
/// or to the mixture mean (wind).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitialState {
    pub tg: Option<f64>,
    pub df: Option<f64>,
    pub pw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// File stem, used to name the default output directory.
    pub name: String,
    pub path: PathBuf,
    pub input: Input,
    pub gmm: GmmSettings,
    pub p_min: f64,
    pub p_max: f64,
    /// P_G and P_L are left at zero here; see [`Scenario::sfr_params`].
    pub sfr: SfrParams,
    pub gen_power: Option<f64>,
    pub load_power: Option<f64>,
    pub lambda_w: f64,
    pub init: InitialState,
    pub solver: SolverSettings,
    pub mcs: McsSettings,
    pub alphas: Vec<f64>,
    pub metric_times: Vec<f64>,
    pub gaussian_baseline: bool,
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        let mut s = Self::parse(&text, base)?;
        s.name = name;
        s.path = path.to_path_buf();
        Ok(s)
    }

    /// Parses scenario text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("scenario is not valid TOML: {e}")))?;
        let known = [
            "input", "gmm", "ingest", "sfr", "ito", "init", "solver", "mcs", "metrics", "baseline",
            "output",
        ];
        for key in root.keys() {
            if !known.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown section `{key}`")));
            }
            if !root[key].is_table() {
                return Err(CliError::Config(format!("`{key}` must be a table")));
            }
        }

        let mut input_sec = Section::new(&root, "input");
        let quantiles = input_sec.opt_str("quantiles")?;
        let gmm_file = input_sec.opt_str("gmm")?;
        input_sec.finish()?;

        let mut gmm_sec = Section::new(&root, "gmm");
        let inline = gmm_sec.opt_components("components")?;
        let gmm = GmmSettings {
            n: gmm_sec.usize_or("n", 10)?,
            tol: gmm_sec.f64_or("tol", 1e-8)?,
            max_iter: gmm_sec.usize_or("max_iter", 500)?,
            seed: gmm_sec.u64_or("seed", 0)?,
            sample_count: gmm_sec.usize_or("sample_count", 10_000)?,
        };
        gmm_sec.finish()?;

        let input = match (quantiles, gmm_file, inline) {
            (Some(q), None, None) => Input::Quantiles(base.join(q)),
            (None, Some(g), None) => Input::GmmFile(base.join(g)),
            (None, None, Some(c)) => Input::Inline(c),
            (None, None, None) => {
                return Err(CliError::Config(
                    "no wind input: set one of input.quantiles, input.gmm or gmm.components".into(),
                ))
            }
            _ => {
                return Err(CliError::Config(
                    "only one of input.quantiles, input.gmm and gmm.components may be set".into(),
                ))
            }
        };
        if gmm.n == 0 {
            return Err(CliError::Config("gmm.n must be at least 1".into()));
        }
        if !(gmm.tol > 0.0) {
            return Err(CliError::Config("gmm.tol must be positive".into()));
        }

        let mut ingest = Section::new(&root, "ingest");
        let p_min = ingest.f64_or("p_min", 0.0)?;
        let p_max = ingest.f64_or("p_max", 1.0)?;
        ingest.finish()?;
        if !(p_min < p_max) {
            return Err(CliError::Config(format!(
                "ingest.p_min ({p_min}) must be below ingest.p_max ({p_max})"
            )));
        }

        let mut s = Section::new(&root, "sfr");
        let sfr = SfrParams {
            governor_gain_inv: s.f64("inv_R")?,
            inertia: s.f64("H")?,
            turbine_coeff: s.f64("a")?,
            turbine_time: s.f64("T")?,
            damping: s.f64("D")?,
            vsg_droop: s.f64("delta_w")?,
            vsg_inertia: s.f64("H_w")?,
            sync_share: s.f64("K")?,
            vsg_share: s.f64("K1")?,
            nonvsg_share: s.f64("K2")?,
            gen_power: 0.0,
            load_power: 0.0,
            ref_freq: s.f64_or("f0", 50.0)?,
            damping_override: s.opt_f64("D_s")?,
        };
        let gen_power = s.opt_f64("P_G")?;
        let load_power = s.opt_f64("P_L")?;
        s.finish()?;
        sfr.validate()
            .map_err(|e| CliError::Config(format!("sfr: {e}")))?;

        let mut ito = Section::new(&root, "ito");
        let lambda_w = ito.f64_or("lambda_w", 1.0)?;
        ito.finish()?;
        if !(lambda_w > 0.0) {
            return Err(CliError::Config("ito.lambda_w must be positive".into()));
        }

        let mut init_sec = Section::new(&root, "init");
        let init = InitialState {
            tg: init_sec.opt_f64("tg")?,
            df: init_sec.opt_f64("df")?,
            pw: init_sec.opt_f64("pw")?,
        };
        init_sec.finish()?;

        let mut sol = Section::new(&root, "solver");
        let solver = SolverSettings {
            t_start: sol.f64_or("t_start", 0.0)?,
            t_end: sol.f64_or("t_end", 15.0)?,
            dt: sol.f64_or("dt", 0.05)?,
        };
        sol.finish()?;
        let grid = TimeGrid::uniform(solver.t_start, solver.t_end, solver.dt)
            .map_err(|e| CliError::Config(format!("solver: {e}")))?;

        let mut m = Section::new(&root, "mcs");
        let mcs = McsSettings {
            enabled: m.bool_or("enabled", true)?,
            n_paths: m.usize_or("n_paths", 20_000)?,
            dt: m.f64_or("dt", 0.001)?,
            t_end: m.f64_or("t_end", solver.t_end)?,
            seed: m.u64_or("seed", 0)?,
            capture_times: m.f64_list_or("capture_times", &[0.5, 2.5, 5.0, 7.5, 10.0, 15.0])?,
        };
        m.finish()?;

        let mut met = Section::new(&root, "metrics");
        let alphas = met.f64_list_or("alphas", &freqmix_core::metrics::default_alphas())?;
        let metric_times = met.f64_list_or("times", &mcs.capture_times)?;
        met.finish()?;

        let mut b = Section::new(&root, "baseline");
        let gaussian_baseline = b.bool_or("gaussian", false)?;
        b.finish()?;

        let mut o = Section::new(&root, "output");
        let output_dir = o.opt_str("dir")?.map(|d| base.join(d));
        o.finish()?;

        let scenario = Scenario {
            name: "scenario".into(),
            path: PathBuf::new(),
            input,
            gmm,
            p_min,
            p_max,
            sfr,
            gen_power,
            load_power,
            lambda_w,
            init,
            solver,
            mcs,
            alphas,
            metric_times,
            gaussian_baseline,
            output_dir,
        };
        scenario.check_times(&grid)?;
        Ok(scenario)
    }

    fn check_times(&self, grid: &TimeGrid) -> Result<(), CliError> {
        for &a in &self.alphas {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::Config(format!("metrics.alphas: {a} is outside (0, 1)")));
            }
        }
        for &t in &self.metric_times {
            if grid.index_of(t).is_none() {
                return Err(CliError::Config(format!(
                    "metrics.times: {t} is not on the solver grid"
                )));
            }
        }
        if !self.mcs.enabled {
            return Ok(());
        }
        let m = &self.mcs;
        if m.n_paths == 0 {
            return Err(CliError::Config("mcs.n_paths must be at least 1".into()));
        }
        if !(m.dt > 0.0) {
            return Err(CliError::Config("mcs.dt must be positive".into()));
        }
        if !aligned(m.t_end, m.dt) {
            return Err(CliError::Config(format!(
                "mcs.t_end = {} is not a multiple of mcs.dt = {}",
                m.t_end, m.dt
            )));
        }
        for &t in &m.capture_times {
            if !(0.0..=m.t_end).contains(&t) || !aligned(t, m.dt) {
                return Err(CliError::Config(format!(
                    "mcs.capture_times: {t} is outside [0, {}] or off the dt grid",
                    m.t_end
                )));
            }
            if grid.index_of(t).is_none() {
                return Err(CliError::Config(format!(
                    "mcs.capture_times: {t} is not on the solver grid"
                )));
            }
        }
        for &t in &self.metric_times {
            if !m.capture_times.iter().any(|&c| (c - t).abs() <= ALIGN_TOL) {
                return Err(CliError::Config(format!(
                    "metrics.times: {t} is not one of mcs.capture_times"
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::uniform(self.solver.t_start, self.solver.t_end, self.solver.dt)
            .expect("grid validated at parse time")
    }

    /// Physical parameters with P_G, P_L resolved against the fitted mixture.
    ///
    /// When neither is given the load absorbs the mean wind in-feed, so the
    /// deterministic imbalance cancels at the mean operating point.
    pub fn sfr_params(&self, gmm: &Gmm) -> SfrParams {
        let mut p = self.sfr;
        match (self.gen_power, self.load_power) {
            (None, None) => {
                p.gen_power = 0.0;
                p.load_power = gmm.mean();
            }
            (g, l) => {
                p.gen_power = g.unwrap_or(0.0);
                p.load_power = l.unwrap_or(0.0);
            }
        }
        p
    }

    /// Apply a single seed to both the fit and the Monte Carlo run.
    pub fn override_seed(&mut self, seed: u64) {
        self.gmm.seed = seed;
        self.mcs.seed = seed;
    }
}

fn aligned(t: f64, dt: f64) -> bool {
    let k = (t / dt).round();
    (t / dt - k).abs() <= ALIGN_TOL * k.max(1.0)
}

/// One `[section]` with a record of the keys consumed so far.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    used: BTreeSet<&'static str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str) -> Self {
        Self {
            name,
            table: root.get(name).and_then(Value::as_table),
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.insert(key);
        self.table.and_then(|t| t.get(key))
    }

    fn bad(&self, key: &str, want: &str) -> CliError {
        CliError::Config(format!("{}.{key} must be {want}", self.name))
    }

    fn opt_f64(&mut self, key: &'static str) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(v)) if v.is_finite() => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(self.bad(key, "a finite number")),
        }
    }

    fn f64(&mut self, key: &'static str) -> Result<f64, CliError> {
        self.opt_f64(key)?
            .ok_or_else(|| CliError::Config(format!("missing key {}.{key}", self.name)))
    }

    fn f64_or(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    fn u64_or(&mut self, key: &'static str, default: u64) -> Result<u64, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::Integer(v)) if *v >= 0 => Ok(*v as u64),
            Some(_) => Err(self.bad(key, "a non-negative integer")),
        }
    }

    fn usize_or(&mut self, key: &'static str, default: usize) -> Result<usize, CliError> {
        self.u64_or(key, default as u64).map(|v| v as usize)
    }

    fn bool_or(&mut self, key: &'static str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(self.bad(key, "true or false")),
        }
    }

    fn opt_str(&mut self, key: &'static str) -> Result<Option<String>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.bad(key, "a string")),
        }
    }

    fn f64_list_or(&mut self, key: &'static str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        let Some(v) = self.raw(key) else {
            return Ok(default.to_vec());
        };
        let arr = v.as_array().ok_or_else(|| self.bad(key, "an array of numbers"))?;
        arr.iter()
            .map(|x| match x {
                Value::Float(f) if f.is_finite() => Ok(*f),
                Value::Integer(i) => Ok(*i as f64),
                _ => Err(self.bad(key, "an array of numbers")),
            })
            .collect()
    }

    /// `components = [{ weight, mean, variance }, ...]`
    fn opt_components(&mut self, key: &'static str) -> Result<Option<Gmm>, CliError> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let want = "an array of { weight, mean, variance } tables";
        let arr = v.as_array().ok_or_else(|| self.bad(key, want))?;
        let mut comps = Vec::with_capacity(arr.len());
        for (i, item) in arr.iter().enumerate() {
            let t = item.as_table().ok_or_else(|| self.bad(key, want))?;
            let field = |f: &str| -> Result<f64, CliError> {
                match t.get(f) {
                    Some(Value::Float(x)) => Ok(*x),
                    Some(Value::Integer(x)) => Ok(*x as f64),
                    Some(_) => Err(CliError::Config(format!(
                        "{}.{key}[{i}].{f} must be a number",
                        self.name
                    ))),
                    None => Err(CliError::Config(format!(
                        "missing key {}.{key}[{i}].{f}",
                        self.name
                    ))),
                }
            };
            if let Some(extra) = t.keys().find(|k| !["weight", "mean", "variance"].contains(&k.as_str())) {
                return Err(CliError::Config(format!(
                    "unknown key {}.{key}[{i}].{extra}",
                    self.name
                )));
            }
            let c = GaussianComponent::new(field("weight")?, field("mean")?, field("variance")?)
                .map_err(|e| CliError::Config(format!("{}.{key}[{i}]: {e}", self.name)))?;
            comps.push(c);
        }
        Gmm::new(comps)
            .map(Some)
            .map_err(|e| CliError::Config(format!("{}.{key}: {e}", self.name)))
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !self.used.contains(k.as_str())) {
                return Err(CliError::Config(format!("unknown key {}.{k}", self.name)));
            }
        }
        Ok(())
    }
}
