//! Path-integral quantities for a closed ring of phonon beads.
//!
//! For a path `(R_0, …, R_{M-1})` at inverse temperature `β` with imaginary
//! timestep `τ = β/M` (ħ = 1):
//!
//! ```text
//! ρ_chain = e^{-τE(R_0)/2} e^{-τE(R_{M-1})} ⋯ e^{-τE(R_1)} e^{-τE(R_0)/2}
//! ρ̄       = (1/M) Σ_i ρ_chain(rotate(path, i))
//! V_PIMC  = (1/M) Σ_i V_g(R_i) + Σ_i (M/2β²) (R_i - R_{i+1})ᵀ 𝓜 (R_i - R_{i+1})
//! f_I     ∝ tr(ρ̄) · exp(-β V_PIMC)
//! ρ_I     = ρ̄ / tr(ρ̄)
//! ```
//!
//! Matrix products are carried as a mantissa matrix plus a natural-log
//! scale, because `exp(-βE)` underflows long before the temperatures of
//! interest are reached. Kinetic normalisers and the global constant are
//! never formed; only ratios between equal-`M` paths are meaningful.

use thiserror::Error;

use crate::linalg::{SiteMatrix, SymmetricEigen};
use crate::model::{ModelError, ModelSystem};

/// Relative asymmetry above which a gap matrix is rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Chain products are rescaled after this many multiplications.
const RENORMALIZE_EVERY: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("gap matrix is not symmetric (relative asymmetry {0:.3e})")]
    NonSymmetric(f64),
    #[error("gap matrix has non-finite entries")]
    NonFinite,
    #[error("imaginary timestep must be positive, got {0}")]
    NonPositiveTimestep(f64),
    #[error("trace of the cyclic estimator is not positive; configuration is numerically dead")]
    TraceUnderflow,
    #[error("cannot population-normalise a matrix with trace {0}")]
    NonPositiveTrace(f64),
    #[error("path has {got} coordinates per bead, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("a path needs at least one bead")]
    EmptyPath,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `M` beads of `N` phonon coordinates, stored bead-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BeadPath {
    n_beads: usize,
    n_dof: usize,
    coords: Vec<f64>,
}

impl BeadPath {
    pub fn new(n_beads: usize, n_dof: usize, coords: Vec<f64>) -> Result<Self, EstimatorError> {
        if n_beads == 0 {
            return Err(EstimatorError::EmptyPath);
        }
        if coords.len() != n_beads * n_dof {
            return Err(EstimatorError::DimensionMismatch {
                expected: n_beads * n_dof,
                got: coords.len(),
            });
        }
        Ok(Self {
            n_beads,
            n_dof,
            coords,
        })
    }

    /// Every bead placed at `r`.
    pub fn uniform(n_beads: usize, r: &[f64]) -> Self {
        assert!(n_beads > 0, "a path needs at least one bead");
        Self {
            n_beads,
            n_dof: r.len(),
            coords: r.repeat(n_beads),
        }
    }

    pub fn from_beads(beads: &[Vec<f64>]) -> Result<Self, EstimatorError> {
        let n_dof = beads.first().map(Vec::len).ok_or(EstimatorError::EmptyPath)?;
        if let Some(b) = beads.iter().find(|b| b.len() != n_dof) {
            return Err(EstimatorError::DimensionMismatch {
                expected: n_dof,
                got: b.len(),
            });
        }
        Ok(Self {
            n_beads: beads.len(),
            n_dof,
            coords: beads.concat(),
        })
    }

    #[inline]
    pub fn n_beads(&self) -> usize {
        self.n_beads
    }

    #[inline]
    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    #[inline]
    pub fn bead(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n_dof..(i + 1) * self.n_dof]
    }

    #[inline]
    pub fn bead_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.n_dof..(i + 1) * self.n_dof]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    /// Bead `i` of the result is bead `(i + k) mod M` of `self`.
    pub fn rotated(&self, k: usize) -> BeadPath {
        let m = self.n_beads;
        let mut coords = Vec::with_capacity(self.coords.len());
        for i in 0..m {
            coords.extend_from_slice(self.bead((i + k) % m));
        }
        BeadPath { coords, ..*self }
    }

    /// Imaginary-time reversal about bead 0: bead `i` becomes bead `(M - i) mod M`.
    pub fn reversed(&self) -> BeadPath {
        let m = self.n_beads;
        let mut coords = Vec::with_capacity(self.coords.len());
        for i in 0..m {
            coords.extend_from_slice(self.bead((m - i) % m));
        }
        BeadPath { coords, ..*self }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|x| x.is_finite())
    }
}

/// `exp(log_scale) * matrix`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMatrix {
    pub matrix: SiteMatrix,
    pub log_scale: f64,
}

impl ScaledMatrix {
    /// Materialises the value; may underflow to zero for large `β`.
    pub fn to_matrix(&self) -> SiteMatrix {
        self.matrix.scaled(self.log_scale.exp())
    }

    pub fn log_trace(&self) -> f64 {
        self.log_scale + self.matrix.trace().ln()
    }
}

/// Log-domain importance weight of a path together with the cached cyclic
/// estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct PathWeights {
    /// `-β V_PIMC`
    pub log_fg: f64,
    /// `ln tr(ρ̄)`
    pub log_trace: f64,
    /// `ρ̄` up to the factor `exp(rho_log_scale)`.
    pub rho_bar: SiteMatrix,
    pub rho_log_scale: f64,
    pub beta: f64,
    pub tau: f64,
}

impl PathWeights {
    /// `ln f_I` up to the dropped global constant.
    pub fn log_f_i(&self) -> f64 {
        self.log_fg + self.log_trace
    }

    /// The population-normalised estimator `ρ_I`.
    pub fn rho_i(&self) -> SiteMatrix {
        population_normalize(&self.rho_bar).expect("trace checked at construction")
    }
}

/// Per-bead, per-coordinate field (`M × N`, bead-major).
#[derive(Clone, Debug, PartialEq)]
pub struct DriftField {
    n_beads: usize,
    n_dof: usize,
    mu: Vec<f64>,
}

impl DriftField {
    pub fn zeros(n_beads: usize, n_dof: usize) -> Self {
        Self {
            n_beads,
            n_dof,
            mu: vec![0.0; n_beads * n_dof],
        }
    }

    #[inline]
    pub fn get(&self, bead: usize, coord: usize) -> f64 {
        self.mu[bead * self.n_dof + coord]
    }

    #[inline]
    pub fn bead(&self, i: usize) -> &[f64] {
        &self.mu[i * self.n_dof..(i + 1) * self.n_dof]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    pub fn n_beads(&self) -> usize {
        self.n_beads
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|x| x.is_finite())
    }

}

/// `exp(-factor * (λ_k - shift))` reassembled from an eigen-decomposition.
fn fill_exponential(eig: &SymmetricEigen, factor: f64, shift: f64, out: &mut SiteMatrix) {
    let n = eig.values.len();
    let v = &eig.vectors;
    if n == 2 {
        let w0 = (-factor * (eig.values[0] - shift)).exp();
        let w1 = (-factor * (eig.values[1] - shift)).exp();
        let (a, b, c, d) = (v[(0, 0)], v[(0, 1)], v[(1, 0)], v[(1, 1)]);
        out[(0, 0)] = a * a * w0 + b * b * w1;
        out[(1, 1)] = c * c * w0 + d * d * w1;
        let off = a * c * w0 + b * d * w1;
        out[(0, 1)] = off;
        out[(1, 0)] = off;
        return;
    }
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..n {
                s += v[(i, k)] * v[(j, k)] * (-factor * (eig.values[k] - shift)).exp();
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
}

fn check_gap(e: &SiteMatrix) -> Result<(), EstimatorError> {
    if !e.is_finite() {
        return Err(EstimatorError::NonFinite);
    }
    let asym = e.asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(EstimatorError::NonSymmetric(asym));
    }
    Ok(())
}

/// `exp(-τ e / s)` with `s = 2` when `half`, else `s = 1`.
pub fn bead_exponential(e: &SiteMatrix, tau: f64, half: bool) -> Result<SiteMatrix, EstimatorError> {
    let scaled = bead_exponential_scaled(e, tau, half)?;
    Ok(scaled.to_matrix())
}

/// As [`bead_exponential`], with the largest eigenvalue factored into the
/// log scale so the mantissa has spectral radius one.
pub fn bead_exponential_scaled(
    e: &SiteMatrix,
    tau: f64,
    half: bool,
) -> Result<ScaledMatrix, EstimatorError> {
    if !(tau > 0.0) {
        return Err(EstimatorError::NonPositiveTimestep(tau));
    }
    check_gap(e)?;
    let factor = if half { 0.5 * tau } else { tau };
    let eig = SymmetricEigen::new(e);
    let mut matrix = SiteMatrix::zeros(e.dim());
    let shift = eig.min_value();
    fill_exponential(&eig, factor, shift, &mut matrix);
    Ok(ScaledMatrix {
        matrix,
        log_scale: -factor * shift,
    })
}

/// Divides by the trace so the populations sum to one.
pub fn population_normalize(rho_bar: &SiteMatrix) -> Result<SiteMatrix, EstimatorError> {
    let tr = rho_bar.trace();
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(EstimatorError::NonPositiveTrace(tr));
    }
    let mut out = rho_bar.clone();
    for x in out.as_mut_slice() {
        *x /= tr;
    }
    Ok(out)
}

/// Ring-polymer potential `V_PIMC` (Hartree).
pub fn v_pimc(model: &dyn ModelSystem, path: &BeadPath, beta: f64) -> f64 {
    let m = path.n_beads();
    let mass = model.mass().as_slice();
    let spring = m as f64 / (2.0 * beta * beta);
    let mut ground = 0.0;
    let mut kinetic = 0.0;
    for i in 0..m {
        let r = path.bead(i);
        let next = path.bead((i + 1) % m);
        ground += model.ground_potential(r);
        kinetic += r
            .iter()
            .zip(next)
            .zip(mass)
            .map(|((a, b), mj)| mj * (a - b) * (a - b))
            .sum::<f64>();
    }
    ground / m as f64 + spring * kinetic
}

/// `∇_i ln f_g` for every bead.
///
/// Each bead sits on two springs, so the neighbour term carries `M/β`; with
/// `M = 2` both neighbours are the same bead and the pull doubles.
pub fn grad_log_fg(model: &dyn ModelSystem, path: &BeadPath, beta: f64) -> DriftField {
    let mut out = DriftField::zeros(path.n_beads(), path.n_dof());
    let mut g = vec![0.0; path.n_dof()];
    add_grad_log_fg(model, path, beta, &mut g, &mut out);
    out
}

fn add_grad_log_fg(model: &dyn ModelSystem, path: &BeadPath, beta: f64, g: &mut [f64], out: &mut DriftField) {
    let m = path.n_beads();
    let n_dof = path.n_dof();
    let mass = model.mass().as_slice();
    let pot = beta / m as f64;
    let spring = m as f64 / beta;
    for i in 0..m {
        let r = path.bead(i);
        let prev = path.bead((i + m - 1) % m);
        let next = path.bead((i + 1) % m);
        model.ground_gradient(r, g);
        for j in 0..n_dof {
            out.mu[i * n_dof + j] += -pot * g[j] + spring * mass[j] * (next[j] + prev[j] - 2.0 * r[j]);
        }
    }
}

/// Direct left-to-right product for a single ordering of the beads.
pub fn rho_chain(model: &dyn ModelSystem, path: &BeadPath, beta: f64) -> Result<ScaledMatrix, EstimatorError> {
    check_path(model, path)?;
    let m = path.n_beads();
    let tau = beta / m as f64;
    let head = bead_exponential_scaled(&model.gap(path.bead(0)), tau, true)?;
    let mut acc = head.clone();
    let mut tmp = SiteMatrix::zeros(model.n_sites());
    for (count, i) in (1..m).rev().enumerate() {
        let f = bead_exponential_scaled(&model.gap(path.bead(i)), tau, false)?;
        SiteMatrix::mul_into(&acc.matrix, &f.matrix, &mut tmp);
        std::mem::swap(&mut acc.matrix, &mut tmp);
        acc.log_scale += f.log_scale;
        if (count + 1) % RENORMALIZE_EVERY == 0 {
            renormalize(&mut acc.matrix, &mut acc.log_scale);
        }
    }
    SiteMatrix::mul_into(&acc.matrix, &head.matrix, &mut tmp);
    acc.matrix = tmp;
    acc.log_scale += head.log_scale;
    renormalize(&mut acc.matrix, &mut acc.log_scale);
    Ok(acc)
}

/// Cyclic average `ρ̄` in `O(M n³)`.
pub fn rho_cyclic_avg(model: &dyn ModelSystem, path: &BeadPath, beta: f64) -> Result<ScaledMatrix, EstimatorError> {
    let mut ev = PathEvaluator::new(model.n_sites(), path.n_beads(), path.n_dof());
    let w = ev.evaluate(model, path, beta, None)?;
    Ok(ScaledMatrix {
        matrix: w.rho_bar,
        log_scale: w.rho_log_scale,
    })
}

pub fn log_weight_importance(model: &dyn ModelSystem, path: &BeadPath, beta: f64) -> Result<PathWeights, EstimatorError> {
    let mut ev = PathEvaluator::new(model.n_sites(), path.n_beads(), path.n_dof());
    ev.evaluate(model, path, beta, None)
}

/// Approximate `∇ ln tr(ρ̄)`; see [`PathEvaluator::evaluate`].
pub fn approx_grad_log_trace(model: &dyn ModelSystem, path: &BeadPath, beta: f64) -> Result<DriftField, EstimatorError> {
    let mut ev = PathEvaluator::new(model.n_sites(), path.n_beads(), path.n_dof());
    let mut grad = DriftField::zeros(path.n_beads(), path.n_dof());
    ev.evaluate_with(model, path, beta, Some((&mut grad, false)))?;
    Ok(grad)
}

/// Langevin drift `μ ≈ ∇ ln f_I`.
pub fn drift_field(model: &dyn ModelSystem, path: &BeadPath, beta: f64) -> Result<DriftField, EstimatorError> {
    let mut ev = PathEvaluator::new(model.n_sites(), path.n_beads(), path.n_dof());
    let mut drift = DriftField::zeros(path.n_beads(), path.n_dof());
    ev.evaluate(model, path, beta, Some(&mut drift))?;
    Ok(drift)
}

fn check_path(model: &dyn ModelSystem, path: &BeadPath) -> Result<(), EstimatorError> {
    if path.n_dof() != model.n_dof() {
        return Err(EstimatorError::DimensionMismatch {
            expected: model.n_dof(),
            got: path.n_dof(),
        });
    }
    Ok(())
}

/// Moves the largest magnitude of `m` into `log_scale`.
#[inline]
fn renormalize(m: &mut SiteMatrix, log_scale: &mut f64) {
    let s = m.max_abs();
    if s > 0.0 && s.is_finite() {
        m.scale_mut(1.0 / s);
        *log_scale += s.ln();
    }
}

/// Scratch buffers for evaluating one path at a time; owned by a chain so
/// the sampler's inner loop does not allocate.
#[derive(Clone, Debug)]
pub struct PathEvaluator {
    n_sites: usize,
    n_beads: usize,
    n_dof: usize,
    eig: SymmetricEigen,
    gap: SiteMatrix,
    half: Vec<SiteMatrix>,
    full: Vec<SiteMatrix>,
    log_half: Vec<f64>,
    prefix: Vec<SiteMatrix>,
    prefix_log: Vec<f64>,
    suffix: Vec<SiteMatrix>,
    suffix_log: Vec<f64>,
    rotation: Vec<SiteMatrix>,
    rotation_log: Vec<f64>,
    tmp: SiteMatrix,
    tmp2: SiteMatrix,
    ground_grad: Vec<f64>,
}

impl PathEvaluator {
    pub fn new(n_sites: usize, n_beads: usize, n_dof: usize) -> Self {
        let mats = |k: usize| vec![SiteMatrix::zeros(n_sites); k];
        Self {
            n_sites,
            n_beads,
            n_dof,
            eig: SymmetricEigen::new(&SiteMatrix::zeros(n_sites)),
            gap: SiteMatrix::zeros(n_sites),
            half: mats(n_beads),
            full: mats(n_beads),
            log_half: vec![0.0; n_beads],
            prefix: mats(n_beads),
            prefix_log: vec![0.0; n_beads],
            suffix: mats(n_beads),
            suffix_log: vec![0.0; n_beads],
            rotation: mats(n_beads),
            rotation_log: vec![0.0; n_beads],
            tmp: SiteMatrix::zeros(n_sites),
            tmp2: SiteMatrix::zeros(n_sites),
            ground_grad: vec![0.0; n_dof],
        }
    }

    /// Weights of `path` and, when `drift` is given, the Langevin drift.
    ///
    /// With `A_i = e^{-τE(R_i)}` and `H_i = A_i^{1/2}`, the rotation that puts
    /// bead `i` at the boundary is
    /// `C_i = H_i (A_{i-1} ⋯ A_0)(A_{M-1} ⋯ A_{i+1}) H_i`; caching the prefix
    /// and suffix products gives every `C_i` with `O(M)` multiplications.
    ///
    /// The trace-gradient entry for bead `i`, coordinate `j` is
    /// `-τ tr(∂_j E(R_i) C_i) / tr(ρ̄)`: the derivative of `A_i` is replaced
    /// by `-τ ∂E A_i` split symmetrically about `A_i`, which is exact when
    /// the gap matrices along the path commute.
    pub fn evaluate(
        &mut self,
        model: &dyn ModelSystem,
        path: &BeadPath,
        beta: f64,
        drift: Option<&mut DriftField>,
    ) -> Result<PathWeights, EstimatorError> {
        self.evaluate_with(model, path, beta, drift.map(|d| (d, true)))
    }

    /// `gradient.1` selects whether `∇ ln f_g` is added to the trace gradient.
    fn evaluate_with(
        &mut self,
        model: &dyn ModelSystem,
        path: &BeadPath,
        beta: f64,
        gradient: Option<(&mut DriftField, bool)>,
    ) -> Result<PathWeights, EstimatorError> {
        check_path(model, path)?;
        assert_eq!(path.n_beads(), self.n_beads, "evaluator sized for a different bead count");
        assert_eq!(model.n_sites(), self.n_sites, "evaluator sized for a different site count");
        let m = self.n_beads;
        let tau = beta / m as f64;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(EstimatorError::NonPositiveTimestep(tau));
        }

        for i in 0..m {
            model.gap_matrix(path.bead(i), &mut self.gap);
            check_gap(&self.gap)?;
            self.eig.compute(&self.gap);
            let shift = self.eig.min_value();
            fill_exponential(&self.eig, 0.5 * tau, shift, &mut self.half[i]);
            fill_exponential(&self.eig, tau, shift, &mut self.full[i]);
            self.log_half[i] = -0.5 * tau * shift;
        }

        // prefix[i] = A_{i-1} ⋯ A_0, suffix[i] = A_{M-1} ⋯ A_{i+1}
        self.prefix[0].set_identity();
        self.prefix_log[0] = 0.0;
        for i in 1..m {
            let (done, rest) = self.prefix.split_at_mut(i);
            SiteMatrix::mul_into(&self.full[i - 1], &done[i - 1], &mut rest[0]);
            self.prefix_log[i] = self.prefix_log[i - 1] + 2.0 * self.log_half[i - 1];
            if i % RENORMALIZE_EVERY == 0 {
                renormalize(&mut self.prefix[i], &mut self.prefix_log[i]);
            }
        }
        self.suffix[m - 1].set_identity();
        self.suffix_log[m - 1] = 0.0;
        for i in (0..m - 1).rev() {
            let (head, tail) = self.suffix.split_at_mut(i + 1);
            SiteMatrix::mul_into(&tail[0], &self.full[i + 1], &mut head[i]);
            self.suffix_log[i] = self.suffix_log[i + 1] + 2.0 * self.log_half[i + 1];
            if (m - 1 - i).is_multiple_of(RENORMALIZE_EVERY) {
                renormalize(&mut self.suffix[i], &mut self.suffix_log[i]);
            }
        }

        let mut log_max = f64::NEG_INFINITY;
        for i in 0..m {
            SiteMatrix::mul_into(&self.half[i], &self.prefix[i], &mut self.tmp);
            SiteMatrix::mul_into(&self.tmp, &self.suffix[i], &mut self.tmp2);
            SiteMatrix::mul_into(&self.tmp2, &self.half[i], &mut self.rotation[i]);
            self.rotation_log[i] = 2.0 * self.log_half[i] + self.prefix_log[i] + self.suffix_log[i];
            renormalize(&mut self.rotation[i], &mut self.rotation_log[i]);
            log_max = log_max.max(self.rotation_log[i]);
        }

        let mut rho_bar = SiteMatrix::zeros(self.n_sites);
        for i in 0..m {
            rho_bar.add_scaled((self.rotation_log[i] - log_max).exp() / m as f64, &self.rotation[i]);
        }
        let tr = rho_bar.trace();
        if !(tr > 0.0 && tr.is_finite()) {
            return Err(EstimatorError::TraceUnderflow);
        }
        let log_trace = log_max + tr.ln();
        let log_fg = -beta * v_pimc(model, path, beta);

        if let Some((drift, include_fg)) = gradient {
            debug_assert_eq!(drift.n_beads, m);
            drift.mu.iter_mut().for_each(|x| *x = 0.0);
            if include_fg {
                add_grad_log_fg(model, path, beta, &mut self.ground_grad, drift);
            }
            for i in 0..m {
                let weight = -tau * (self.rotation_log[i] - log_trace).exp();
                for j in 0..self.n_dof {
                    model.gap_gradient(path.bead(i), j, &mut self.gap)?;
                    drift.mu[i * self.n_dof + j] +=
                        weight * SiteMatrix::trace_of_product(&self.gap, &self.rotation[i]);
                }
            }
        }

        Ok(PathWeights {
            log_fg,
            log_trace,
            rho_bar,
            rho_log_scale: log_max,
            beta,
            tau,
        })
    }
}
