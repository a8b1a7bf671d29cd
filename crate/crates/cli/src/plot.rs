//! The `plot-data` command: gnuplot-style whitespace tables from a finished run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use freqmix_core::metrics::sample_std;
use freqmix_core::MixtureSlice;

use crate::error::CliError;
use crate::manifest::{Manifest, Status};
use crate::output::{read_table, time_tag};
use crate::run::{BASELINE, MIXTURE};

/// Grid half-width in component standard deviations.
const SPAN_SIGMAS: f64 = 12.0;
/// Points per standard deviation of the narrowest component.
const POINTS_PER_SIGMA: f64 = 25.0;
const MAX_POINTS: usize = 200_001;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSummary {
    pub dir: PathBuf,
    pub written: Vec<String>,
    pub skipped: Vec<String>,
}

pub fn emit_plot_data(run_dir: &Path) -> Result<PlotSummary, CliError> {
    let manifest = Manifest::read(run_dir)?;
    if manifest.status != Status::Complete {
        return Err(CliError::IncompleteRun(run_dir.to_path_buf()));
    }
    let out = run_dir.join("plot");
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let mix = load_mixture(&run_dir.join("mixture_components.csv"))?;
    let single = if manifest.gaussian_baseline {
        Some(load_mixture(&run_dir.join("baseline_mixture_components.csv"))?)
    } else {
        None
    };
    let mut written = Vec::new();
    let mut skipped = Vec::new();

    // full analytic spread over the grid
    let mut cols = vec!["time", MIXTURE];
    if single.is_some() {
        cols.push(BASELINE);
    }
    let mut rows = Vec::new();
    for (key, slice) in &mix {
        let mut r = vec![slice.time, slice.std_dev()];
        if let Some(d) = &single {
            r.push(d.get(key).map(|s| s.std_dev()).unwrap_or(f64::NAN));
        }
        rows.push(r);
    }
    write_dat(&out, "stddev_analytic.dat", &cols, &rows, &mut written)?;

    let times = if manifest.metric_times.is_empty() {
        manifest.mcs.capture_times.clone()
    } else {
        manifest.metric_times.clone()
    };
    for &t in &times {
        let Some(slice) = mix.get(&key(t)) else {
            skipped.push(format!("pdf/cdf at t = {t}: not on the solver grid"));
            continue;
        };
        let d = single.as_ref().and_then(|m| m.get(&key(t)));
        let slices: Vec<&MixtureSlice> = std::iter::once(slice).chain(d).collect();
        if slices.iter().any(|s| s.variances.iter().any(|&v| v <= 0.0)) {
            skipped.push(format!(
                "pdf/cdf at t = {t}: a component has zero variance, the density is not defined"
            ));
            continue;
        }
        let xs = density_grid(&slices);
        let mut cols = vec!["df", MIXTURE];
        if d.is_some() {
            cols.push(BASELINE);
        }
        let pdf: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x| std::iter::once(x).chain(slices.iter().map(|s| s.pdf(x))).collect())
            .collect();
        let cdf: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x| std::iter::once(x).chain(slices.iter().map(|s| s.cdf(x))).collect())
            .collect();
        let tag = time_tag(t);
        write_dat(&out, &format!("pdf_t{tag}.dat"), &cols, &pdf, &mut written)?;
        write_dat(&out, &format!("cdf_t{tag}.dat"), &cols, &cdf, &mut written)?;
    }

    if manifest.mcs.enabled {
        let mut rows = Vec::new();
        for &t in &manifest.mcs.capture_times {
            let path = run_dir.join(format!("mcs_t{}.csv", time_tag(t)));
            let samples = read_column(&path, "df")?;
            let empirical = sample_std(&samples)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let analytic = mix.get(&key(t)).map(|s| s.std_dev()).unwrap_or(f64::NAN);
            rows.push(vec![t, analytic, empirical]);
        }
        write_dat(&out, "stddev_vs_time.dat", &["time", "analytic", "mcs"], &rows, &mut written)?;

        let curves = load_pd(&run_dir.join("metrics.csv"))?;
        for &t in &times {
            let Some(by_method) = curves.get(&key(t)) else {
                continue;
            };
            let mix_pd = by_method.get(MIXTURE).cloned().unwrap_or_default();
            let single_pd = by_method.get(BASELINE);
            let mut cols = vec!["alpha", MIXTURE];
            if single_pd.is_some() {
                cols.push(BASELINE);
            }
            let rows: Vec<Vec<f64>> = mix_pd
                .iter()
                .enumerate()
                .map(|(i, &(a, v))| {
                    let mut r = vec![a, v];
                    if let Some(d) = single_pd {
                        r.push(d.get(i).map(|p| p.1).unwrap_or(f64::NAN));
                    }
                    r
                })
                .collect();
            write_dat(&out, &format!("pd_t{}.dat", time_tag(t)), &cols, &rows, &mut written)?;
        }
    } else {
        skipped.push("stddev_vs_time.dat: the run has no Monte Carlo reference".into());
        skipped.push("pd_t*.dat: the run has no Monte Carlo reference".into());
    }

    let mut note = String::new();
    if skipped.is_empty() {
        note.push_str("nothing skipped\n");
    } else {
        for s in &skipped {
            let _ = writeln!(note, "skipped: {s}");
        }
    }
    let path = out.join("notes.txt");
    std::fs::write(&path, note).map_err(|e| CliError::io(path, e))?;

    Ok(PlotSummary {
        dir: out,
        written,
        skipped,
    })
}

/// Time keys in milliseconds, so slices can be looked up by value.
fn key(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

fn parse(path: &Path, s: &str) -> Result<f64, CliError> {
    s.parse()
        .map_err(|_| CliError::Config(format!("{}: `{s}` is not a number", path.display())))
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Config(format!("{}: no `{name}` column", path.display())))
}

fn load_mixture(path: &Path) -> Result<BTreeMap<i64, MixtureSlice>, CliError> {
    let (header, rows) = read_table(path)?;
    let [ct, cw, cm, cv] = ["time", "weight", "mean_df", "var_df"].map(|n| column(path, &header, n));
    let (ct, cw, cm, cv) = (ct?, cw?, cm?, cv?);
    let mut out: BTreeMap<i64, MixtureSlice> = BTreeMap::new();
    for r in rows {
        let t = parse(path, &r[ct])?;
        let slice = out.entry(key(t)).or_insert_with(|| MixtureSlice {
            time: t,
            weights: Vec::new(),
            means: Vec::new(),
            variances: Vec::new(),
        });
        slice.weights.push(parse(path, &r[cw])?);
        slice.means.push(parse(path, &r[cm])?);
        slice.variances.push(parse(path, &r[cv])?);
    }
    Ok(out)
}

fn read_column(path: &Path, name: &str) -> Result<Vec<f64>, CliError> {
    let (header, rows) = read_table(path)?;
    let c = column(path, &header, name)?;
    rows.iter().map(|r| parse(path, &r[c])).collect()
}

/// `time key -> method -> [(alpha, pd)]`
type PdCurves = BTreeMap<i64, BTreeMap<String, Vec<(f64, f64)>>>;

fn load_pd(path: &Path) -> Result<PdCurves, CliError> {
    let (header, rows) = read_table(path)?;
    let [cme, cmt, ct, ca, cv] =
        ["method", "metric", "time", "alpha", "value"].map(|n| column(path, &header, n));
    let (cme, cmt, ct, ca, cv) = (cme?, cmt?, ct?, ca?, cv?);
    let mut out = PdCurves::new();
    for r in rows.iter().filter(|r| r[cmt] == "pd") {
        let t = parse(path, &r[ct])?;
        out.entry(key(t))
            .or_default()
            .entry(r[cme].clone())
            .or_default()
            .push((parse(path, &r[ca])?, parse(path, &r[cv])?));
    }
    Ok(out)
}

/// Uniform abscissae covering every component out to ±12σ, fine enough for
/// the narrowest one.
fn density_grid(slices: &[&MixtureSlice]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut narrow = f64::INFINITY;
    for s in slices {
        for (&m, &v) in s.means.iter().zip(&s.variances) {
            let sd = v.sqrt();
            lo = lo.min(m - SPAN_SIGMAS * sd);
            hi = hi.max(m + SPAN_SIGMAS * sd);
            narrow = narrow.min(sd);
        }
    }
    let wanted = ((hi - lo) / narrow * POINTS_PER_SIGMA).ceil() as usize + 1;
    let n = wanted.clamp(2, MAX_POINTS);
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|k| lo + k as f64 * h).collect()
}

fn write_dat(
    dir: &Path,
    name: &str,
    cols: &[&str],
    rows: &[Vec<f64>],
    written: &mut Vec<String>,
) -> Result<(), CliError> {
    let mut s = String::with_capacity(rows.len() * 24 * cols.len());
    let _ = writeln!(s, "# {}", cols.join(" "));
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    let path = dir.join(name);
    std::fs::write(&path, s).map_err(|e| CliError::io(path, e))?;
    written.push(name.to_string());
    Ok(())
}
