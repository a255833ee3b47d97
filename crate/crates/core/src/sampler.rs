//! Markov chains over bead paths targeting `f_I`.
//!
//! Both kernels move every bead at once. The random walk proposes
//! `R' = R + ξ√Δt`; the Langevin kernel adds the drift, `R' = R + μΔt + ξ√Δt`,
//! and corrects with the Hastings ratio of the same Gaussian proposal. The
//! drift uses the approximate trace gradient, which changes efficiency but
//! not the stationary law.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{BeadPath, DriftField, EstimatorError, PathEvaluator, PathWeights};
use crate::linalg::SiteMatrix;
use crate::model::ModelSystem;
use crate::stats::{HistogramGrid, MatrixAccumulator, StatsError};

/// Step-size adaptation gain.
pub const TUNING_GAIN: f64 = 0.05;
/// Steps per adaptation window.
pub const TUNING_WINDOW: u64 = 50;
/// Allowed distance from the target acceptance before a warning is raised.
pub const TUNING_TOLERANCE: f64 = 0.1;
/// Steps between progress callbacks.
pub const PROGRESS_INTERVAL: u64 = 100_000;
/// Minimum warm-up length.
pub const MIN_WARMUP: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Rwm,
    Mala,
}

impl Kernel {
    /// Asymptotically optimal acceptance rate.
    pub fn default_target(self) -> f64 {
        match self {
            Kernel::Rwm => 0.234,
            Kernel::Mala => 0.574,
        }
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kernel: Kernel,
    /// Initial timestep; tuned during warm-up when `tune` is set.
    pub dt: f64,
    pub n_steps: u64,
    pub n_warmup: u64,
    pub thin: u64,
    pub target_acceptance: f64,
    pub tune: bool,
    pub seed: u64,
}

impl SamplerConfig {
    /// Defaults for a run of `n_steps` measured steps.
    pub fn new(kernel: Kernel, dt: f64, n_steps: u64, seed: u64) -> Self {
        Self {
            kernel,
            dt,
            n_steps,
            n_warmup: default_warmup(n_steps),
            thin: 1,
            target_acceptance: kernel.default_target(),
            tune: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SamplerError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(SamplerError::Config(format!(
                "target_acceptance must lie in (0, 1), got {}",
                self.target_acceptance
            )));
        }
        if self.thin == 0 {
            return Err(SamplerError::Config("thin must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn default_warmup(n_steps: u64) -> u64 {
    (n_steps / 20).max(MIN_WARMUP)
}

/// Order-of-magnitude starting timestep: the inverse of the stiffest ring
/// polymer curvature, `4 M m / β`, or `β / m` for a single bead.
pub fn suggest_dt(model: &dyn ModelSystem, beta: f64, n_beads: usize) -> f64 {
    let m_max = model.mass().as_slice().iter().cloned().fold(0.0, f64::max);
    if n_beads > 1 {
        beta / (4.0 * n_beads as f64 * m_max)
    } else {
        beta / m_max
    }
}

/// A path with its cached weights and drift.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub path: BeadPath,
    pub weights: PathWeights,
    /// Present for the Langevin kernel only.
    pub drift: Option<DriftField>,
}

impl ChainState {
    pub fn log_f_i(&self) -> f64 {
        self.weights.log_f_i()
    }

    /// Population-normalised estimator for this path.
    pub fn rho_i(&self) -> SiteMatrix {
        self.weights.rho_i()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub step: u64,
    pub total: u64,
    pub acceptance: f64,
}

/// Outcome of the warm-up phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub steps: u64,
    pub dt: f64,
    /// Acceptance over the last quarter of the warm-up.
    pub acceptance: f64,
    pub warning: Option<String>,
    /// Coordinate extents visited during warm-up, per degree of freedom.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub stream: u64,
    pub kernel: Kernel,
    pub warmup_steps: u64,
    pub steps: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub dt: f64,
    pub tuning_warning: Option<String>,
    pub wall_time_s: f64,
}

/// One Markov chain: model, state, scratch buffers and its own RNG stream.
pub struct Chain<'a> {
    model: &'a dyn ModelSystem,
    beta: f64,
    kernel: Kernel,
    state: ChainState,
    proposal: BeadPath,
    proposal_drift: DriftField,
    evaluator: PathEvaluator,
    rng: ChaCha8Rng,
}

impl<'a> Chain<'a> {
    /// All beads start at the model's reference position.
    pub fn new(
        model: &'a dyn ModelSystem,
        beta: f64,
        n_beads: usize,
        kernel: Kernel,
        seed: u64,
        stream: u64,
    ) -> Result<Self, SamplerError> {
        let start = BeadPath::uniform(n_beads, &model.reference_position());
        Self::from_path(model, beta, start, kernel, seed, stream)
    }

    pub fn from_path(
        model: &'a dyn ModelSystem,
        beta: f64,
        path: BeadPath,
        kernel: Kernel,
        seed: u64,
        stream: u64,
    ) -> Result<Self, SamplerError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(SamplerError::Config(format!("beta must be positive, got {beta}")));
        }
        let (m, n) = (path.n_beads(), path.n_dof());
        let mut evaluator = PathEvaluator::new(model.n_sites(), m, n);
        let mut drift = DriftField::zeros(m, n);
        let weights = match kernel {
            Kernel::Mala => evaluator.evaluate(model, &path, beta, Some(&mut drift))?,
            Kernel::Rwm => evaluator.evaluate(model, &path, beta, None)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            model,
            beta,
            kernel,
            proposal: path.clone(),
            proposal_drift: DriftField::zeros(m, n),
            state: ChainState {
                path,
                weights,
                drift: (kernel == Kernel::Mala).then_some(drift),
            },
            evaluator,
            rng,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn step(&mut self, dt: f64) -> Result<bool, SamplerError> {
        match self.kernel {
            Kernel::Rwm => self.rwm_step(dt),
            Kernel::Mala => self.mala_step(dt),
        }
    }

    /// `R' = R + ξ√Δt`, accepted with `min(1, f_I(R')/f_I(R))`.
    pub fn rwm_step(&mut self, dt: f64) -> Result<bool, SamplerError> {
        let sd = dt.sqrt();
        for (p, &r) in self.proposal.as_mut_slice().iter_mut().zip(self.state.path.as_slice()) {
            let xi: f64 = self.rng.sample(StandardNormal);
            *p = r + sd * xi;
        }
        let weights = match self.evaluate_proposal(false)? {
            Some(w) => w,
            None => return Ok(false),
        };
        let log_alpha = weights.log_f_i() - self.state.log_f_i();
        Ok(self.accept(log_alpha, weights))
    }

    /// `R' = R + μΔt + ξ√Δt` with the Gaussian Hastings correction.
    pub fn mala_step(&mut self, dt: f64) -> Result<bool, SamplerError> {
        if self.state.drift.is_none() {
            let mut drift = DriftField::zeros(self.proposal.n_beads(), self.proposal.n_dof());
            self.evaluator
                .evaluate(self.model, &self.state.path, self.beta, Some(&mut drift))?;
            self.state.drift = Some(drift);
        }
        let sd = dt.sqrt();
        let mu = self.state.drift.as_ref().expect("drift present").as_slice();
        let mut forward = 0.0;
        for ((p, &r), &m) in self.proposal.as_mut_slice().iter_mut().zip(self.state.path.as_slice()).zip(mu) {
            let xi: f64 = self.rng.sample(StandardNormal);
            *p = r + m * dt + sd * xi;
            forward += xi * xi;
        }
        let weights = match self.evaluate_proposal(true)? {
            Some(w) => w,
            None => return Ok(false),
        };
        // log q(R|R') - log q(R'|R); the forward residual is ξ√Δt
        let mut backward = 0.0;
        for ((&r, &p), &m) in self
            .state
            .path
            .as_slice()
            .iter()
            .zip(self.proposal.as_slice())
            .zip(self.proposal_drift.as_slice())
        {
            let d = r - p - m * dt;
            backward += d * d;
        }
        let log_q = -backward / (2.0 * dt) + 0.5 * forward;
        let log_alpha = weights.log_f_i() - self.state.log_f_i() + log_q;
        Ok(self.accept(log_alpha, weights))
    }

    /// Weights of the proposal, or `None` when it is numerically dead.
    fn evaluate_proposal(&mut self, with_drift: bool) -> Result<Option<PathWeights>, SamplerError> {
        if !self.proposal.is_finite() {
            return Ok(None);
        }
        let drift = with_drift.then_some(&mut self.proposal_drift);
        match self.evaluator.evaluate(self.model, &self.proposal, self.beta, drift) {
            Ok(w) if w.log_f_i().is_finite() && (!with_drift || self.proposal_drift.is_finite()) => Ok(Some(w)),
            Ok(_) => Ok(None),
            Err(EstimatorError::TraceUnderflow | EstimatorError::NonFinite | EstimatorError::NonPositiveTrace(_)) => {
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn accept(&mut self, log_alpha: f64, weights: PathWeights) -> bool {
        let u: f64 = self.rng.random();
        // NaN compares false and is rejected
        if !(log_alpha >= 0.0 || u.ln() < log_alpha) {
            return false;
        }
        std::mem::swap(&mut self.state.path, &mut self.proposal);
        self.state.weights = weights;
        if let Some(drift) = self.state.drift.as_mut() {
            std::mem::swap(drift, &mut self.proposal_drift);
        }
        true
    }

    /// Runs `steps` kernel steps at a fixed `dt`; returns the accepted count.
    pub fn run(&mut self, dt: f64, steps: u64) -> Result<u64, SamplerError> {
        let mut accepted = 0;
        for _ in 0..steps {
            accepted += self.step(dt)? as u64;
        }
        Ok(accepted)
    }

    /// Warm-up with optional step-size adaptation. The returned `dt` is the
    /// one to freeze for measurement.
    pub fn warm_up(&mut self, config: &SamplerConfig) -> Result<WarmupReport, SamplerError> {
        config.validate()?;
        let n_dof = self.state.path.n_dof();
        let mut min = vec![f64::INFINITY; n_dof];
        let mut max = vec![f64::NEG_INFINITY; n_dof];
        let mut dt = config.dt;
        let tail_start = config.n_warmup - config.n_warmup / 4;
        let (mut tail_acc, mut tail_steps) = (0u64, 0u64);
        let mut window_acc = 0u64;
        for s in 0..config.n_warmup {
            let ok = self.step(dt)?;
            window_acc += ok as u64;
            if s >= tail_start {
                tail_acc += ok as u64;
                tail_steps += 1;
            }
            for i in 0..self.state.path.n_beads() {
                for (d, &x) in self.state.path.bead(i).iter().enumerate() {
                    min[d] = min[d].min(x);
                    max[d] = max[d].max(x);
                }
            }
            if (s + 1) % TUNING_WINDOW == 0 {
                if config.tune {
                    let rate = window_acc as f64 / TUNING_WINDOW as f64;
                    dt *= (TUNING_GAIN * (rate - config.target_acceptance)).exp();
                }
                window_acc = 0;
            }
        }
        let acceptance = if tail_steps > 0 {
            tail_acc as f64 / tail_steps as f64
        } else {
            f64::NAN
        };
        let warning = (config.tune && !((acceptance - config.target_acceptance).abs() <= TUNING_TOLERANCE)).then(|| {
            format!(
                "warm-up acceptance {acceptance:.3} is not within {TUNING_TOLERANCE} of target {}",
                config.target_acceptance
            )
        });
        if config.n_warmup == 0 {
            for i in 0..self.state.path.n_beads() {
                for (d, &x) in self.state.path.bead(i).iter().enumerate() {
                    min[d] = min[d].min(x);
                    max[d] = max[d].max(x);
                }
            }
        }
        Ok(WarmupReport {
            steps: config.n_warmup,
            dt,
            acceptance,
            warning,
            min,
            max,
        })
    }

    /// Measurement phase at frozen `dt`. Every `thin` steps the estimator
    /// goes to `acc` and every bead position to `hist`.
    pub fn measure(
        &mut self,
        dt: f64,
        n_steps: u64,
        thin: u64,
        acc: &mut MatrixAccumulator,
        mut hist: Option<&mut HistogramGrid>,
        mut progress: Option<&mut dyn FnMut(Progress)>,
    ) -> Result<u64, SamplerError> {
        let thin = thin.max(1);
        let mut accepted = 0u64;
        for s in 1..=n_steps {
            accepted += self.step(dt)? as u64;
            if s % thin == 0 {
                acc.push(&self.state.rho_i())?;
                if let Some(h) = hist.as_deref_mut() {
                    for i in 0..self.state.path.n_beads() {
                        h.push(self.state.path.bead(i));
                    }
                }
            }
            if s % PROGRESS_INTERVAL == 0 {
                if let Some(cb) = progress.as_deref_mut() {
                    cb(Progress {
                        step: s,
                        total: n_steps,
                        acceptance: accepted as f64 / s as f64,
                    });
                }
            }
        }
        Ok(accepted)
    }
}

/// Warm-up then measurement for one chain on RNG stream `stream`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    model: &dyn ModelSystem,
    beta: f64,
    n_beads: usize,
    config: &SamplerConfig,
    stream: u64,
    acc: &mut MatrixAccumulator,
    hist: Option<&mut HistogramGrid>,
    progress: Option<&mut dyn FnMut(Progress)>,
) -> Result<ChainSummary, SamplerError> {
    config.validate()?;
    let start = Instant::now();
    let mut chain = Chain::new(model, beta, n_beads, config.kernel, config.seed, stream)?;
    let warm = chain.warm_up(config)?;
    let accepted = chain.measure(warm.dt, config.n_steps, config.thin, acc, hist, progress)?;
    Ok(ChainSummary {
        stream,
        kernel: config.kernel,
        warmup_steps: warm.steps,
        steps: config.n_steps,
        accepted,
        acceptance_rate: if config.n_steps > 0 {
            accepted as f64 / config.n_steps as f64
        } else {
            0.0
        },
        dt: warm.dt,
        tuning_warning: warm.warning,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
