//! Monte Carlo experiment drivers: singularity estimation, scaling sweeps,
//! and persistent JSONL/CSV/SVG output.
//!
//! Trials are distributed over a worker pool (capped by `REGDIG_THREADS`);
//! trial `i` draws from rng stream `base + i` of the master seed, so results
//! are byte-identical across reruns and thread counts.

use crate::config_model::{pairing_to_matrix, sample_pairing, sample_simple_adjacency};
use crate::error::{Error, Result};
use crate::mod_linalg::{default_prime_schedule, is_singular_rational, rank_mod_p, Singularity};
use crate::rng::SeededRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

/// Singularity test mode: certified rational, or rank over one prime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Rational,
    ModP(u64),
}

impl Mode {
    pub fn label(&self) -> String {
        match self {
            Mode::Rational => "rational".into(),
            Mode::ModP(p) => format!("modp({p})"),
        }
    }
}

/// Which graph law to sample: the raw pairing multigraph or the simple
/// graph obtained by rejection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphModel {
    Multigraph,
    Simple,
}

impl GraphModel {
    pub fn label(&self) -> &'static str {
        match self {
            GraphModel::Multigraph => "multigraph",
            GraphModel::Simple => "simple",
        }
    }
}

/// One persisted experiment outcome. `wall_ms` and `git_rev` are excluded
/// from determinism comparisons.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentRecord {
    pub kind: String,
    pub n: u64,
    pub d: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<u64>,
    pub mode: String,
    pub model: String,
    pub trials: u64,
    pub singular_count: u64,
    pub undetermined_count: u64,
    pub estimate: f64,
    pub ci95: f64,
    pub seed: u64,
    pub wall_ms: u64,
    pub git_rev: String,
}

/// 95% Wilson interval `(lo, hi, half_width)` for `successes / trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64, f64) {
    let z = 1.959963984540054f64;
    let n = trials as f64;
    let p_hat = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p_hat + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0), half)
}

/// Builds the global worker pool, honoring `REGDIG_THREADS`. Safe to call
/// more than once; later calls are no-ops.
pub fn init_thread_pool() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        if let Ok(v) = std::env::var("REGDIG_THREADS") {
            if let Ok(threads) = v.parse::<usize>() {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads.max(1))
                    .build_global();
            }
        }
    });
}

fn git_rev() -> String {
    static REV: OnceLock<String> = OnceLock::new();
    REV.get_or_init(|| {
        std::process::Command::new("git")
            .args(["rev-parse", "--short", "HEAD"])
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
            .unwrap_or_else(|| "unknown".into())
    })
    .clone()
}

const REJECTION_BUDGET: usize = 10_000;

/// Monte Carlo estimate of the singularity probability.
///
/// Per-trial rng stream = `stream_base + trial index`; undetermined
/// outcomes are counted separately and never folded into the estimate.
pub fn estimate_singularity(
    n: u64,
    d: u64,
    trials: u64,
    seed: u64,
    mode: Mode,
    model: GraphModel,
) -> Result<ExperimentRecord> {
    estimate_singularity_with_base(n, d, trials, seed, mode, model, 0)
}

pub fn estimate_singularity_with_base(
    n: u64,
    d: u64,
    trials: u64,
    seed: u64,
    mode: Mode,
    model: GraphModel,
    stream_base: u64,
) -> Result<ExperimentRecord> {
    if trials == 0 {
        return Err(Error::Invalid("need at least one trial".into()));
    }
    if let Mode::ModP(p) = mode {
        if !crate::params::is_prime(p) {
            return Err(Error::NotPrime(p));
        }
    }
    init_thread_pool();
    let start = Instant::now();
    // one shared prime schedule per experiment, derived from the seed
    let primes = default_prime_schedule(&mut SeededRng::new(seed, u64::MAX));

    let outcomes: Vec<Result<(u64, u64)>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = SeededRng::new(seed, stream_base + trial);
            let matrix = match model {
                GraphModel::Multigraph => pairing_to_matrix(&sample_pairing(n, d, &mut rng)),
                GraphModel::Simple => {
                    sample_simple_adjacency(n, d, &mut rng, REJECTION_BUDGET)?.0
                }
            };
            match mode {
                Mode::ModP(p) => {
                    let rr = rank_mod_p(&matrix, p);
                    Ok(((rr.nullity > 0) as u64, 0))
                }
                Mode::Rational => match is_singular_rational(&matrix, &primes)? {
                    Singularity::Singular { .. } => Ok((1, 0)),
                    Singularity::Nonsingular { .. } => Ok((0, 0)),
                    Singularity::Undetermined => Ok((0, 1)),
                },
            }
        })
        .collect();

    let mut singular_count = 0u64;
    let mut undetermined_count = 0u64;
    for o in outcomes {
        let (s, u) = o?;
        singular_count += s;
        undetermined_count += u;
    }
    let (_, _, half) = wilson_interval(singular_count, trials);
    Ok(ExperimentRecord {
        kind: "singularity".into(),
        n,
        d,
        p: match mode {
            Mode::ModP(p) => Some(p),
            Mode::Rational => None,
        },
        mode: mode.label(),
        model: model.label().into(),
        trials,
        singular_count,
        undetermined_count,
        estimate: singular_count as f64 / trials as f64,
        ci95: half,
        seed,
        wall_ms: start.elapsed().as_millis() as u64,
        git_rev: git_rev(),
    })
}

/// Outcome of a scaling sweep.
#[derive(Debug, Clone)]
pub struct ScalingResult {
    pub records: Vec<ExperimentRecord>,
    /// Least-squares slope of `log estimate` against `log n` over the
    /// positive estimates; absent with fewer than two usable points.
    pub slope: Option<f64>,
}

/// Output options of the scaling experiment.
#[derive(Debug, Clone, Default)]
pub struct ScalingOutput {
    pub jsonl: Option<std::path::PathBuf>,
    pub csv: Option<std::path::PathBuf>,
    pub svg: Option<std::path::PathBuf>,
}

/// Runs `estimate_singularity` for each n in ascending order and persists
/// the records.
pub fn run_scaling_experiment(
    d: u64,
    n_list: &[u64],
    trials: u64,
    seed: u64,
    mode: Mode,
    model: GraphModel,
    out: &ScalingOutput,
) -> Result<ScalingResult> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("n_list must be nonempty and ascending".into()));
    }
    let mut records = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        let mut rec = estimate_singularity_with_base(
            n,
            d,
            trials,
            seed,
            mode,
            model,
            (idx as u64) << 32,
        )?;
        rec.kind = "scaling".into();
        records.push(rec);
    }
    let slope = fit_loglog_slope(&records);
    if let Some(path) = &out.jsonl {
        write_jsonl(&records, path)?;
    }
    if let Some(path) = &out.csv {
        write_csv(&records, path)?;
    }
    if let Some(path) = &out.svg {
        write_svg_plot(&records, slope, d, path)?;
    }
    Ok(ScalingResult { records, slope })
}

pub fn fit_loglog_slope(records: &[ExperimentRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.estimate > 0.0)
        .map(|r| ((r.n as f64).ln(), r.estimate.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// One JSON object per line, LF terminated, UTF-8.
pub fn write_jsonl(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r).map_err(|e| Error::Invalid(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Invalid(e.to_string())))
        .collect()
}

/// CSV with the same numeric content: `n,d,trials,singular,estimate,ci_lo,ci_hi`.
pub fn write_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "n,d,trials,singular,estimate,ci_lo,ci_hi")?;
    for r in records {
        let (lo, hi, _) = wilson_interval(r.singular_count, r.trials);
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.n, r.d, r.trials, r.singular_count, r.estimate, lo, hi
        )?;
    }
    Ok(())
}

/// Self-contained SVG log-log plot with the fitted slope and the reference
/// slopes -1/3 and -(d-2).
pub fn write_svg_plot(
    records: &[ExperimentRecord],
    slope: Option<f64>,
    d: u64,
    path: &Path,
) -> Result<()> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.estimate > 0.0)
        .map(|r| ((r.n as f64).log10(), r.estimate.log10()))
        .collect();
    if pts.is_empty() {
        return Err(Error::Invalid("nothing to plot: all estimates are zero".into()));
    }
    let (w, h, margin) = (640.0f64, 480.0f64, 60.0f64);
    let xmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - 0.1;
    let xmax = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + 0.1;
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - 0.3;
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + 0.3;
    let sx = |x: f64| margin + (x - xmin) / (xmax - xmin) * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - (y - ymin) / (ymax - ymin) * (h - 2.0 * margin);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        margin, h - margin, w - margin, h - margin
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        margin, margin, margin, h - margin
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\">log10 n</text>\n",
        w / 2.0 - 25.0, h - 18.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 14 {})\">log10 estimate</text>\n",
        h / 2.0, h / 2.0
    ));

    // reference slopes through the first point
    let (x0, y0) = pts[0];
    let refs = [
        (-1.0 / 3.0, "#888888", "slope -1/3".to_string()),
        (
            -((d as f64) - 2.0),
            "#bb7733",
            format!("slope -(d-2) = {}", -((d as f64) - 2.0)),
        ),
    ];
    for (slope_ref, color, label) in &refs {
        let y1 = y0 + *slope_ref * (xmax - 0.1 - x0);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-dasharray=\"6 3\"/>\n",
            sx(x0), sy(y0), sx(xmax - 0.1), sy(y1)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{label}</text>\n",
            sx(xmax - 0.1) - 90.0, sy(y1) - 6.0
        ));
    }
    if let Some(s) = slope {
        let y1 = y0 + s * (xmax - 0.1 - x0);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#2255cc\"/>\n",
            sx(x0), sy(y0), sx(xmax - 0.1), sy(y1)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#2255cc\">fitted slope {s:.3}</text>\n",
            margin + 8.0, margin + 14.0
        ));
    }
    for (x, y) in &pts {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#cc3333\"/>\n",
            sx(*x), sy(*y)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
