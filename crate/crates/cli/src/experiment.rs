//! Orchestration: chains per temperature on a worker pool, merged in stream
//! order so results do not depend on the number of threads.

use std::path::Path;
use std::time::Instant;

use exciton_pimc::sampler::{suggest_dt, Chain, ChainSummary, Kernel, Progress, SamplerConfig, SamplerError};
use exciton_pimc::stats::{ljung_box_q, HistogramGrid, MatrixAccumulator, StatsError, Z_95};
use exciton_pimc::units::beta_from_kelvin;
use exciton_pimc::{ModelSystem, SiteMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::output::{write_outputs, OutputError};

/// Worker-pool size; defaults to the number of logical CPUs.
pub const THREADS_ENV: &str = "EXCITON_PIMC_THREADS";

pub const SUMMARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sampler failed at {temperature_k} K: {source}")]
    Sampler { temperature_k: f64, source: SamplerError },
    #[error("statistics failed at {temperature_k} K: {source}")]
    Stats { temperature_k: f64, source: StatsError },
    #[error("oracle failed at {temperature_k} K: {message}")]
    Oracle { temperature_k: f64, message: String },
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Ljung-Box result for one matrix element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementTest {
    pub i: usize,
    pub j: usize,
    pub q: f64,
    pub threshold: f64,
    pub reject: bool,
}

/// Results at one temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePoint {
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub beta: f64,
    pub n_beads: usize,
    pub kernel: Kernel,
    pub mean: SiteMatrix,
    pub stderr: SiteMatrix,
    pub ci_low: SiteMatrix,
    pub ci_high: SiteMatrix,
    pub n_samples: u64,
    pub n_batches: usize,
    pub batch_size: u64,
    /// Pooled over chains.
    pub acceptance_rate: f64,
    /// Empty when there are too few batch means for the chosen lag count.
    pub ljung_box: Vec<ElementTest>,
    pub ljung_box_max_q: Option<f64>,
    pub chains: Vec<ChainSummary>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: u32,
    /// False when the run stopped early; `points` then holds what finished.
    pub complete: bool,
    pub error: Option<String>,
    pub config: RunConfig,
    pub n_sites: usize,
    pub n_dof: usize,
    pub points: Vec<TemperaturePoint>,
    pub wall_time_s: f64,
}

/// Raw merged data behind one [`TemperaturePoint`].
#[derive(Clone, Debug)]
pub struct PointData {
    pub temperature_k: f64,
    pub accumulator: MatrixAccumulator,
    pub histogram: Option<HistogramGrid>,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub summary: RunSummary,
    pub data: Vec<PointData>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Progress lines on stderr.
    pub progress: bool,
    /// Overrides the environment variable.
    pub threads: Option<usize>,
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, RunError> {
    let n = threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n.filter(|&n| n > 0) {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| RunError::Pool(e.to_string()))
}

/// Stream index of chain `c` at sweep position `t`; every chain in a run
/// draws from its own stream.
fn stream_id(t: usize, c: usize, n_chains: usize) -> u64 {
    (t * n_chains + c) as u64
}

fn sample_point(
    model: &dyn ModelSystem,
    config: &RunConfig,
    t_index: usize,
    temperature_k: f64,
    options: &RunOptions,
) -> Result<(TemperaturePoint, PointData), RunError> {
    let run = &config.run;
    let beta = beta_from_kelvin(temperature_k);
    let sampler_err = |source| RunError::Sampler { temperature_k, source };
    let stats_err = |source| RunError::Stats { temperature_k, source };
    let sampler = SamplerConfig {
        kernel: run.kernel,
        dt: run.dt.unwrap_or_else(|| suggest_dt(model, beta, run.n_beads)),
        n_steps: run.n_steps,
        n_warmup: run.n_warmup.unwrap_or(0),
        thin: run.thin,
        target_acceptance: run.target_acceptance.unwrap_or(run.kernel.default_target()),
        tune: run.tune,
        seed: run.seed,
    };
    sampler.validate().map_err(sampler_err)?;
    let batch_size = run.batch_size.unwrap_or(1);

    let warmed: Vec<_> = (0..run.n_chains)
        .into_par_iter()
        .map(|c| {
            let stream = stream_id(t_index, c, run.n_chains);
            let start = Instant::now();
            let mut chain = Chain::new(model, beta, run.n_beads, run.kernel, run.seed, stream)?;
            let report = chain.warm_up(&sampler)?;
            Ok((chain, report, stream, start))
        })
        .collect::<Result<_, SamplerError>>()
        .map_err(sampler_err)?;

    let histogram = if config.histogram.enabled {
        let n_dof = model.n_dof();
        let grid = match (&config.histogram.lo, &config.histogram.hi) {
            (Some(lo), Some(hi)) => HistogramGrid::new(lo.clone(), hi.clone(), vec![config.histogram.bins; n_dof]),
            _ => {
                let mut lo = vec![f64::INFINITY; n_dof];
                let mut hi = vec![f64::NEG_INFINITY; n_dof];
                for (_, report, _, _) in &warmed {
                    for d in 0..n_dof {
                        lo[d] = lo[d].min(report.min[d]);
                        hi[d] = hi[d].max(report.max[d]);
                    }
                }
                HistogramGrid::auto(&lo, &hi, vec![config.histogram.bins; n_dof])
            }
        };
        Some(grid.map_err(stats_err)?)
    } else {
        None
    };

    let measured: Vec<_> = warmed
        .into_par_iter()
        .map(|(mut chain, report, stream, start)| {
            let mut acc = MatrixAccumulator::new(model.n_sites(), batch_size, stream);
            let mut hist = histogram.clone();
            let mut progress = |p: Progress| {
                eprintln!(
                    "  {temperature_k} K chain {stream}: {}/{} steps, acceptance {:.3}",
                    p.step, p.total, p.acceptance
                );
            };
            let callback: Option<&mut dyn FnMut(Progress)> = if options.progress { Some(&mut progress) } else { None };
            let accepted = chain.measure(report.dt, run.n_steps, run.thin, &mut acc, hist.as_mut(), callback)?;
            let summary = ChainSummary {
                stream,
                kernel: run.kernel,
                warmup_steps: report.steps,
                steps: run.n_steps,
                accepted,
                acceptance_rate: accepted as f64 / run.n_steps as f64,
                dt: report.dt,
                tuning_warning: report.warning,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            Ok((summary, acc, hist))
        })
        .collect::<Result<_, SamplerError>>()
        .map_err(sampler_err)?;

    let mut chains = Vec::with_capacity(measured.len());
    let mut merged = MatrixAccumulator::new(model.n_sites(), batch_size, 0);
    let mut merged_hist: Option<HistogramGrid> = None;
    for (summary, acc, hist) in measured {
        merged.merge(&acc).map_err(stats_err)?;
        match (merged_hist.as_mut(), hist) {
            (Some(total), Some(h)) => total.merge(&h).map_err(stats_err)?,
            (None, h) => merged_hist = h,
            (Some(_), None) => {}
        }
        chains.push(summary);
    }

    let mut warnings: Vec<String> = chains
        .iter()
        .filter_map(|c| c.tuning_warning.as_ref().map(|w| format!("chain {}: {w}", c.stream)))
        .collect();
    let estimate = merged.batch_means_stderr().map_err(stats_err)?;
    let ci = estimate.ci95();
    let mut ci_low = estimate.mean.clone();
    ci_low.add_scaled(-1.0, &ci);
    let mut ci_high = estimate.mean.clone();
    ci_high.add_scaled(1.0, &ci);

    let n = model.n_sites();
    let mut ljung_box = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            match ljung_box_q(&merged.element_series(i, j), run.ljung_box_lags) {
                Ok(lb) => ljung_box.push(ElementTest {
                    i,
                    j,
                    q: lb.q,
                    threshold: lb.threshold,
                    reject: lb.reject,
                }),
                Err(StatsError::SeriesTooShort { .. }) | Err(StatsError::Degenerate) => {}
                Err(e) => return Err(stats_err(e)),
            }
        }
    }
    if ljung_box.is_empty() {
        warnings.push(format!(
            "Ljung-Box skipped: {} batch means are too few for {} lags",
            merged.n_batches(),
            run.ljung_box_lags
        ));
    } else if ljung_box.iter().any(|t| t.reject) {
        warnings.push("Ljung-Box rejects independence of batch means; error bars are unreliable".into());
    }
    let ljung_box_max_q = ljung_box.iter().map(|t| t.q).reduce(f64::max);
    let total_accepted: u64 = chains.iter().map(|c| c.accepted).sum();
    let total_steps: u64 = chains.iter().map(|c| c.steps).sum();

    let point = TemperaturePoint {
        temperature_k,
        beta,
        n_beads: run.n_beads,
        kernel: run.kernel,
        mean: estimate.mean,
        stderr: estimate.stderr,
        ci_low,
        ci_high,
        n_samples: merged.total_count(),
        n_batches: estimate.n_batches,
        batch_size,
        acceptance_rate: total_accepted as f64 / total_steps as f64,
        ljung_box,
        ljung_box_max_q,
        chains,
        warnings,
    };
    let data = PointData {
        temperature_k,
        accumulator: merged,
        histogram: merged_hist,
    };
    Ok((point, data))
}

/// Runs every temperature in the config and returns the merged results.
/// Nothing is written. On failure the finished temperatures come back with
/// the error.
pub fn sample_experiment(config: &RunConfig, options: &RunOptions) -> Result<Experiment, Box<(Experiment, RunError)>> {
    let start = Instant::now();
    let mut experiment = Experiment {
        summary: RunSummary {
            version: SUMMARY_VERSION,
            complete: false,
            error: None,
            config: config.clone(),
            n_sites: 0,
            n_dof: 0,
            points: Vec::new(),
            wall_time_s: 0.0,
        },
        data: Vec::new(),
    };
    let fail = |mut experiment: Experiment, e: RunError, start: Instant| {
        experiment.summary.error = Some(e.to_string());
        experiment.summary.wall_time_s = start.elapsed().as_secs_f64();
        Err(Box::new((experiment, e)))
    };
    let model = match config.build_model() {
        Ok(m) => m,
        Err(e) => return fail(experiment, e.into(), start),
    };
    experiment.summary.n_sites = model.as_dyn().n_sites();
    experiment.summary.n_dof = model.as_dyn().n_dof();
    let workers = match pool(options.threads) {
        Ok(p) => p,
        Err(e) => return fail(experiment, e, start),
    };
    for (t_index, &t) in config.run.temperature_k.iter().enumerate() {
        if options.progress {
            eprintln!("{t} K: {} chain(s), M = {}", config.run.n_chains, config.run.n_beads);
        }
        match workers.install(|| sample_point(model.as_dyn(), config, t_index, t, options)) {
            Ok((point, data)) => {
                experiment.summary.points.push(point);
                experiment.data.push(data);
            }
            Err(e) => return fail(experiment, e, start),
        }
    }
    experiment.summary.complete = true;
    experiment.summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(experiment)
}

/// Samples every temperature and writes the output files into `dir`. On
/// failure whatever finished is still written, with `complete = false`.
pub fn run_experiment(config: &RunConfig, dir: &Path, options: &RunOptions) -> Result<Experiment, RunError> {
    match sample_experiment(config, options) {
        Ok(experiment) => {
            write_outputs(&experiment.summary, &experiment.data, dir)?;
            Ok(experiment)
        }
        Err(failed) => {
            let (partial, e) = *failed;
            if !matches!(e, RunError::Config(_)) {
                // best effort; the sampling error is the one to report
                let _ = write_outputs(&partial.summary, &partial.data, dir);
            }
            Err(e)
        }
    }
}

/// `(estimate - reference) / stderr` per element; `None` where the standard
/// error is zero.
pub fn z_scores(point: &TemperaturePoint, reference: &SiteMatrix) -> Vec<Vec<Option<f64>>> {
    let n = point.mean.dim();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let se = point.stderr[(i, j)];
                    (se > 0.0).then(|| (point.mean[(i, j)] - reference[(i, j)]) / se)
                })
                .collect()
        })
        .collect()
}

/// Whether every element lies inside the 95% interval around `reference`.
pub fn within_ci(point: &TemperaturePoint, reference: &SiteMatrix) -> bool {
    let n = point.mean.dim();
    (0..n).all(|i| (0..n).all(|j| (point.mean[(i, j)] - reference[(i, j)]).abs() <= Z_95 * point.stderr[(i, j)]))
}
