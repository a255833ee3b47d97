//! Exact references on a grid.
//!
//! [`thermal_state`] diagonalises the full exciton-phonon Hamiltonian in a
//! sinc discrete variable representation and returns the β-exact reduced
//! density matrix and phonon density. [`finite_m_quadrature`] evaluates the
//! expectation the sampler targets at a given bead count by quadrature over
//! every bead tuple, so sampler bias can be separated from Trotter error.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{bead_exponential_scaled, EstimatorError};
use crate::linalg::SiteMatrix;
use crate::model::ModelSystem;

/// Largest Hamiltonian (sites × grid points) accepted.
pub const MAX_HAMILTONIAN_DIM: usize = 20_000;
/// Minimum points per axis.
pub const MIN_POINTS: usize = 16;
/// Boundary density, relative to the maximum, above which a grid is flagged.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;
/// Largest number of bead tuples for explicit enumeration.
pub const MAX_TUPLES: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("axis {axis} needs lo < hi and at least {MIN_POINTS} points")]
    BadAxis { axis: usize },
    #[error("grid has {got} axes, model has {expected} coordinates")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("problem size {size} exceeds the cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("grid not converged: boundary density is {ratio:.2e} of the maximum")]
    NotConverged { ratio: f64 },
    #[error("finite-bead quadrature supports one phonon coordinate, model has {0}")]
    NotOneDimensional(usize),
    #[error("grid spacing {dx:.3e} does not resolve the bead spring width {width:.3e}")]
    SpringUnresolved { dx: f64, width: f64 },
    #[error("inverse temperature must be positive, got {0}")]
    BadBeta(f64),
    #[error("bead count must be at least 1")]
    NoBeads,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl GridAxis {
    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_points).map(|i| self.lo + i as f64 * dx).collect()
    }
}

/// Regular grid, row-major over the axes (last axis fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridSpec {
    axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self, OracleError> {
        for (axis, a) in axes.iter().enumerate() {
            if !(a.lo < a.hi) || !a.lo.is_finite() || !a.hi.is_finite() || a.n_points < MIN_POINTS {
                return Err(OracleError::BadAxis { axis });
            }
        }
        Ok(Self { axes })
    }

    pub fn uniform_1d(lo: f64, hi: f64, n_points: usize) -> Result<Self, OracleError> {
        Self::new(vec![GridAxis { lo, hi, n_points }])
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn n_dof(&self) -> usize {
        self.axes.len()
    }

    pub fn total(&self) -> usize {
        self.axes.iter().map(|a| a.n_points).product()
    }

    /// Volume element of one grid point.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::dx).product()
    }

    /// Coordinates of point `g`.
    pub fn point(&self, mut g: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.axes.len()];
        for (d, a) in self.axes.iter().enumerate().rev() {
            let i = g % a.n_points;
            g /= a.n_points;
            r[d] = a.lo + i as f64 * a.dx();
        }
        r
    }

    /// Per-axis indices of point `g`.
    fn indices(&self, mut g: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (d, a) in self.axes.iter().enumerate().rev() {
            idx[d] = g % a.n_points;
            g /= a.n_points;
        }
        idx
    }

    fn is_boundary(&self, g: usize) -> bool {
        self.indices(g)
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| i == 0 || i == a.n_points - 1)
    }

    /// Same bounds, `2n - 1` points per axis (every old point is kept).
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            axes: self
                .axes
                .iter()
                .map(|a| GridAxis {
                    n_points: 2 * a.n_points - 1,
                    ..*a
                })
                .collect(),
        }
    }
}

/// Colbert–Miller kinetic matrix on one axis, `-(1/2m) d²/dx²`.
pub fn sinc_dvr_kinetic(mass: f64, axis: &GridAxis) -> DMatrix<f64> {
    let n = axis.n_points;
    let dx = axis.dx();
    let pref = 1.0 / (mass * dx * dx);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            pref * PI * PI / 6.0
        } else {
            let k = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            pref * sign / (k * k)
        }
    })
}

/// Dense Hamiltonian, indexed `site · G + g` for `G` grid points:
/// kinetic blocks on the diagonal of every site, `V_g + E_mm` on the
/// diagonal and `E_mn` couplings between sites at each grid point.
pub fn build_grid_hamiltonian(model: &dyn ModelSystem, grid: &GridSpec) -> Result<DMatrix<f64>, OracleError> {
    if grid.n_dof() != model.n_dof() {
        return Err(OracleError::DimensionMismatch {
            expected: model.n_dof(),
            got: grid.n_dof(),
        });
    }
    let n = model.n_sites();
    let g_total = grid.total();
    let size = n * g_total;
    if size > MAX_HAMILTONIAN_DIM {
        return Err(OracleError::TooLarge {
            size,
            cap: MAX_HAMILTONIAN_DIM,
        });
    }
    let mut h = DMatrix::zeros(size, size);
    let masses = model.mass().as_slice();
    let kinetic: Vec<DMatrix<f64>> = grid
        .axes()
        .iter()
        .zip(masses)
        .map(|(a, &m)| sinc_dvr_kinetic(m, a))
        .collect();
    // T couples points that differ along exactly one axis
    for g in 0..g_total {
        let gi = grid.indices(g);
        for gp in 0..g_total {
            let gpi = grid.indices(gp);
            let differing: Vec<usize> = (0..gi.len()).filter(|&d| gi[d] != gpi[d]).collect();
            let t = match differing.as_slice() {
                [] => (0..gi.len()).map(|d| kinetic[d][(gi[d], gi[d])]).sum(),
                [d] => kinetic[*d][(gi[*d], gpi[*d])],
                _ => continue,
            };
            for s in 0..n {
                h[(s * g_total + g, s * g_total + gp)] = t;
            }
        }
    }
    let mut e = SiteMatrix::zeros(n);
    for g in 0..g_total {
        let r = grid.point(g);
        let vg = model.ground_potential(&r);
        model.gap_matrix(&r, &mut e);
        for a in 0..n {
            for b in 0..n {
                let v = e[(a, b)] + if a == b { vg } else { 0.0 };
                h[(a * g_total + g, b * g_total + g)] += v;
            }
        }
    }
    Ok(h)
}

/// β-exact thermal state on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub rho: SiteMatrix,
    /// Phonon density at each grid point, `Σ_g density · cell_volume = 1`.
    pub density: Vec<f64>,
    /// Largest boundary density relative to the maximum.
    pub boundary_ratio: f64,
    pub ground_energy: f64,
}

/// Diagonalises the grid Hamiltonian and forms `e^{-βH}/Z`. Fails with
/// [`OracleError::NotConverged`] when the density does not vanish at the
/// grid boundary.
pub fn thermal_state(model: &dyn ModelSystem, beta: f64, grid: &GridSpec) -> Result<ThermalState, OracleError> {
    let state = thermal_state_unchecked(model, beta, grid)?;
    if state.boundary_ratio > BOUNDARY_TOLERANCE {
        return Err(OracleError::NotConverged {
            ratio: state.boundary_ratio,
        });
    }
    Ok(state)
}

/// As [`thermal_state`] without the boundary check.
pub fn thermal_state_unchecked(
    model: &dyn ModelSystem,
    beta: f64,
    grid: &GridSpec,
) -> Result<ThermalState, OracleError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(OracleError::BadBeta(beta));
    }
    let h = build_grid_hamiltonian(model, grid)?;
    let eig = SymmetricEigen::new(h);
    let e0 = eig.eigenvalues.min();
    let n = model.n_sites();
    let g_total = grid.total();
    let mut rho = SiteMatrix::zeros(n);
    let mut density = vec![0.0; g_total];
    for (k, &ek) in eig.eigenvalues.iter().enumerate() {
        let w = (-beta * (ek - e0)).exp();
        if w < 1e-300 {
            continue;
        }
        let psi = eig.eigenvectors.column(k);
        for a in 0..n {
            for b in a..n {
                let overlap: f64 = (0..g_total).map(|g| psi[a * g_total + g] * psi[b * g_total + g]).sum();
                rho[(a, b)] += w * overlap;
            }
            for g in 0..g_total {
                density[g] += w * psi[a * g_total + g].powi(2);
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            rho[(a, b)] = rho[(b, a)];
        }
    }
    let tr = rho.trace();
    rho.scale_mut(1.0 / tr);
    let norm = 1.0 / (density.iter().sum::<f64>() * grid.cell_volume());
    density.iter_mut().for_each(|d| *d *= norm);
    let max = density.iter().cloned().fold(0.0, f64::max);
    let boundary = (0..g_total)
        .filter(|&g| grid.is_boundary(g))
        .map(|g| density[g])
        .fold(0.0, f64::max);
    Ok(ThermalState {
        rho,
        density,
        boundary_ratio: boundary / max,
        ground_energy: e0,
    })
}

pub fn exact_reduced_density(model: &dyn ModelSystem, beta: f64, grid: &GridSpec) -> Result<SiteMatrix, OracleError> {
    Ok(thermal_state(model, beta, grid)?.rho)
}

pub fn exact_nuclear_density(model: &dyn ModelSystem, beta: f64, grid: &GridSpec) -> Result<Vec<f64>, OracleError> {
    Ok(thermal_state(model, beta, grid)?.density)
}

/// Largest elementwise change of the reduced density matrix when every axis
/// is refined.
pub fn refinement_change(model: &dyn ModelSystem, beta: f64, grid: &GridSpec) -> Result<f64, OracleError> {
    let coarse = thermal_state(model, beta, grid)?.rho;
    let fine = thermal_state(model, beta, &grid.refined())?.rho;
    Ok(coarse.max_abs_diff(&fine))
}

/// Probability mass of a 1D grid density in each of `bins` equal bins on
/// `[lo, hi)`, integrating the piecewise-linear interpolant exactly. Also
/// returns the mass outside the bins. Masses are normalised so that the
/// total over the grid is one.
pub fn bin_masses_1d(grid: &GridSpec, density: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, f64) {
    let axis = grid.axes()[0];
    let xs = axis.points();
    let h = axis.dx();
    let mut cumulative = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cumulative[i] = cumulative[i - 1] + 0.5 * h * (density[i - 1] + density[i]);
    }
    let total = cumulative[xs.len() - 1];
    let at = |x: f64| -> f64 {
        if x <= axis.lo {
            return 0.0;
        }
        if x >= axis.hi {
            return total;
        }
        let i = (((x - axis.lo) / h) as usize).min(xs.len() - 2);
        let s = x - xs[i];
        cumulative[i] + density[i] * s + (density[i + 1] - density[i]) * s * s / (2.0 * h)
    };
    let width = (hi - lo) / bins as f64;
    let masses: Vec<f64> = (0..bins)
        .map(|b| (at(lo + (b + 1) as f64 * width) - at(lo + b as f64 * width)) / total)
        .collect();
    let outside = 1.0 - masses.iter().sum::<f64>();
    (masses, outside.max(0.0))
}

/// Expectation of the population-normalised estimator under `f_I` at
/// `n_beads` beads, by trapezoid quadrature over all bead tuples on a 1D
/// grid.
///
/// The tuple sum is evaluated as a transfer-matrix power. With
/// `B(x) = √w e^{-τV_g(x)/2} e^{-τE(x)/2}` and the spring kernel
/// `K(x, x') = exp[-mM(x - x')²/2β]`, the blocks `G(x, x') = B(x) K(x, x') B(x')`
/// satisfy `Σ_x [G^M](x, x) = ∫ ρ_chain e^{-βV_PIMC}`, which is the
/// numerator of the estimator average before trace normalisation.
pub fn finite_m_quadrature(
    model: &dyn ModelSystem,
    beta: f64,
    n_beads: usize,
    grid: &GridSpec,
) -> Result<SiteMatrix, OracleError> {
    if model.n_dof() != 1 {
        return Err(OracleError::NotOneDimensional(model.n_dof()));
    }
    if grid.n_dof() != 1 {
        return Err(OracleError::DimensionMismatch {
            expected: 1,
            got: grid.n_dof(),
        });
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(OracleError::BadBeta(beta));
    }
    if n_beads == 0 {
        return Err(OracleError::NoBeads);
    }
    let axis = grid.axes()[0];
    let n = model.n_sites();
    let size = n * axis.n_points;
    if size > MAX_HAMILTONIAN_DIM {
        return Err(OracleError::TooLarge {
            size,
            cap: MAX_HAMILTONIAN_DIM,
        });
    }
    let m = model.mass().as_slice()[0];
    let tau = beta / n_beads as f64;
    let dx = axis.dx();
    let spring = m * n_beads as f64 / (2.0 * beta);
    if n_beads > 1 {
        let width = (1.0 / (2.0 * spring)).sqrt();
        if dx > width / 3.0 {
            return Err(OracleError::SpringUnresolved { dx, width });
        }
    }
    let xs = axis.points();
    let mut e = SiteMatrix::zeros(n);
    // per-point half-step blocks with their log scales
    let mut blocks = Vec::with_capacity(xs.len());
    let mut logs = Vec::with_capacity(xs.len());
    for (i, &x) in xs.iter().enumerate() {
        model.gap_matrix(&[x], &mut e);
        let half = bead_exponential_scaled(&e, tau, true)?;
        let w: f64 = if i == 0 || i == xs.len() - 1 { 0.5 * dx } else { dx };
        blocks.push(half.matrix);
        logs.push(half.log_scale + 0.5 * w.ln() - 0.5 * tau * model.ground_potential(&[x]));
    }
    let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let g_pts = xs.len();
    let mut big = DMatrix::zeros(size, size);
    for p in 0..g_pts {
        for q in 0..g_pts {
            let k = if n_beads == 1 && p != q {
                continue;
            } else {
                (-spring * (xs[p] - xs[q]).powi(2) + logs[p] + logs[q] - 2.0 * shift).exp()
            };
            if k == 0.0 {
                continue;
            }
            let prod = SiteMatrix::mul(&blocks[p], &blocks[q]);
            for a in 0..n {
                for b in 0..n {
                    big[(p * n + a, q * n + b)] = k * prod[(a, b)];
                }
            }
        }
    }
    let mut rho = SiteMatrix::zeros(n);
    if n_beads == 1 {
        for p in 0..g_pts {
            for a in 0..n {
                for b in 0..n {
                    rho[(a, b)] += big[(p * n + a, p * n + b)];
                }
            }
        }
    } else {
        let eig = SymmetricEigen::new(big);
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, |a: f64, b| a.max(b.abs()));
        for (k, &lk) in eig.eigenvalues.iter().enumerate() {
            let w = (lk / lmax).powi(n_beads as i32);
            if w.abs() < 1e-300 {
                continue;
            }
            let v = eig.eigenvectors.column(k);
            for p in 0..g_pts {
                for a in 0..n {
                    for b in 0..n {
                        rho[(a, b)] += w * v[p * n + a] * v[p * n + b];
                    }
                }
            }
        }
    }
    let tr = rho.trace();
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(EstimatorError::TraceUnderflow.into());
    }
    rho.scale_mut(1.0 / tr);
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{log_weight_importance, BeadPath};
    use crate::model::{build_alexander, DisplacedHarmonicModel};
    use crate::units::beta_from_kelvin;

    fn single_site_oscillator(k: f64, m: f64) -> DisplacedHarmonicModel {
        DisplacedHarmonicModel::new(vec![k], vec![m], vec![vec![0.0]], vec![0.0], SiteMatrix::zeros(1)).unwrap()
    }

    #[test]
    fn harmonic_eigenvalues() {
        let (k, m) = (1.0, 1.0);
        let model = single_site_oscillator(k, m);
        let grid = GridSpec::uniform_1d(-12.0, 12.0, 161).unwrap();
        let h = build_grid_hamiltonian(&model, &grid).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        let w = (k / m).sqrt();
        for (i, e) in ev.iter().take(10).enumerate() {
            assert!((e - w * (i as f64 + 0.5)).abs() < 1e-8, "level {i}: {e}");
        }
    }

    #[test]
    fn zero_coupling_is_block_diagonal() {
        let model = DisplacedHarmonicModel::new(
            vec![1.0],
            vec![1.0],
            vec![vec![1.0], vec![-1.0]],
            vec![0.0, 0.3],
            SiteMatrix::zeros(2),
        )
        .unwrap();
        let grid = GridSpec::uniform_1d(-8.0, 8.0, 32).unwrap();
        let h = build_grid_hamiltonian(&model, &grid).unwrap();
        let g = grid.total();
        assert!(h.view((0, g), (g, g)).iter().all(|&x| x == 0.0));
        assert!((h.clone() - h.transpose()).amax() == 0.0);
    }

    #[test]
    fn harmonic_thermal_density_is_gaussian() {
        let (k, m, beta) = (1.0, 2.0, 3.0);
        let model = single_site_oscillator(k, m);
        let grid = GridSpec::uniform_1d(-8.0, 8.0, 161).unwrap();
        let state = thermal_state(&model, beta, &grid).unwrap();
        let w: f64 = (k / m).sqrt();
        let var = 1.0 / (2.0 * m * w) / (0.5 * beta * w).tanh();
        for (g, d) in state.density.iter().enumerate() {
            let x = grid.point(g)[0];
            let want = (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
            assert!((d - want).abs() < 1e-10, "x={x}: {d} vs {want}");
        }
        assert!((state.rho[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_dimer_has_equal_populations() {
        let model = DisplacedHarmonicModel::new(
            vec![0.5],
            vec![1.0],
            vec![vec![1.0], vec![-1.0]],
            vec![0.1, 0.1],
            SiteMatrix::from_rows(&[[0.0, -0.05], [-0.05, 0.0]]),
        )
        .unwrap();
        let grid = GridSpec::uniform_1d(-10.0, 10.0, 121).unwrap();
        let state = thermal_state(&model, 4.0, &grid).unwrap();
        assert!((state.rho[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(state.rho.asymmetry() < 1e-12);
        // the density is mirror symmetric
        let n = state.density.len();
        for g in 0..n / 2 {
            assert!((state.density[g] - state.density[n - 1 - g]).abs() < 1e-10);
        }
    }

    #[test]
    fn narrow_grid_is_flagged() {
        let model = build_alexander();
        let grid = GridSpec::uniform_1d(5.0, 13.0, 201).unwrap();
        let err = thermal_state(&model, beta_from_kelvin(30.0), &grid).unwrap_err();
        assert!(matches!(err, OracleError::NotConverged { .. }), "{err}");
    }

    #[test]
    fn low_temperature_limit_is_ground_state() {
        let model = build_alexander();
        let grid = GridSpec::uniform_1d(-6.0, 24.0, 301).unwrap();
        let h = build_grid_hamiltonian(&model, &grid).unwrap();
        let eig = SymmetricEigen::new(h);
        let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        // the upper well lies only ~2e-5 Eh higher, so β must beat that gap
        let beta = 40.0 / (ev[1] - ev[0]);
        let rho = exact_reduced_density(&model, beta, &grid).unwrap();
        let k0 = eig.eigenvalues.imin();
        let psi = eig.eigenvectors.column(k0);
        let g = grid.total();
        let p0: f64 = (0..g).map(|i| psi[i] * psi[i]).sum();
        assert!((rho[(0, 0)] - p0).abs() < 1e-10, "{} vs {p0}", rho[(0, 0)]);
    }

    #[test]
    fn size_cap() {
        let model = build_alexander();
        let grid = GridSpec::uniform_1d(0.0, 1.0, 10_001).unwrap();
        assert!(matches!(build_grid_hamiltonian(&model, &grid), Err(OracleError::TooLarge { .. })));
        assert!(GridSpec::uniform_1d(0.0, 1.0, 8).is_err());
    }

    /// Direct tuple enumeration with the estimator's own weight functions.
    fn brute_force(model: &dyn ModelSystem, beta: f64, m: usize, grid: &GridSpec) -> SiteMatrix {
        let xs = grid.axes()[0].points();
        let dx = grid.axes()[0].dx();
        let g = xs.len();
        let mut terms = Vec::new();
        let mut idx = vec![0usize; m];
        loop {
            let beads: Vec<Vec<f64>> = idx.iter().map(|&i| vec![xs[i]]).collect();
            let path = BeadPath::from_beads(&beads).unwrap();
            let w = log_weight_importance(model, &path, beta).unwrap();
            let tw: f64 = idx.iter().map(|&i| if i == 0 || i == g - 1 { 0.5 } else { 1.0 }).product();
            terms.push((w.log_fg + w.rho_log_scale + (tw * dx.powi(m as i32)).ln(), w.rho_bar.clone()));
            let mut d = 0;
            loop {
                if d == m {
                    let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = SiteMatrix::zeros(model.n_sites());
                    for (l, r) in &terms {
                        sum.add_scaled((l - top).exp(), r);
                    }
                    let tr = sum.trace();
                    sum.scale_mut(1.0 / tr);
                    return sum;
                }
                idx[d] += 1;
                if idx[d] < g {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    #[test]
    fn transfer_matrix_matches_enumeration() {
        let model = build_alexander();
        let beta = beta_from_kelvin(30.0);
        let grid = GridSpec::uniform_1d(-1.0, 19.0, 64).unwrap();
        for m in 1..=3 {
            let a = finite_m_quadrature(&model, beta, m, &grid).unwrap();
            let b = brute_force(&model, beta, m, &grid);
            assert!(a.max_abs_diff(&b) < 1e-10, "M={m}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn single_bead_is_classical_boltzmann_trace() {
        // M = 1: ∫ e^{-βE(x)} e^{-βV_g(x)} dx / tr
        let model = build_alexander();
        let beta = beta_from_kelvin(30.0);
        let grid = GridSpec::uniform_1d(-6.0, 24.0, 301).unwrap();
        let q = finite_m_quadrature(&model, beta, 1, &grid).unwrap();
        let mut sum = SiteMatrix::zeros(2);
        for (i, x) in grid.axes()[0].points().into_iter().enumerate() {
            let e = model.gap(&[x]);
            // closed-form exponential of a symmetric 2x2 matrix
            let (a, b, c) = (e[(0, 0)], e[(0, 1)], e[(1, 1)]);
            let mid = 0.5 * (a + c);
            let r = (0.25 * (a - c).powi(2) + b * b).sqrt();
            let (ch, sh) = ((beta * r).cosh(), if r > 0.0 { (beta * r).sinh() / r } else { beta });
            let f = (-beta * mid).exp() * if i == 0 || i == 300 { 0.5 } else { 1.0 };
            sum.add_scaled(
                f,
                &SiteMatrix::from_rows(&[[ch - sh * 0.5 * (a - c), -sh * b], [-sh * b, ch + sh * 0.5 * (a - c)]]),
            );
        }
        let tr = sum.trace();
        sum.scale_mut(1.0 / tr);
        assert!(q.max_abs_diff(&sum) < 1e-12, "{q:?} vs {sum:?}");
    }

    #[test]
    fn bead_count_approaches_exact() {
        let model = build_alexander();
        let beta = beta_from_kelvin(30.0);
        let grid = GridSpec::uniform_1d(-6.0, 24.0, 301).unwrap();
        let exact = exact_reduced_density(&model, beta, &grid).unwrap();
        let errs: Vec<f64> = (1..=3)
            .map(|m| finite_m_quadrature(&model, beta, m, &grid).unwrap().max_abs_diff(&exact))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn bin_masses_of_a_linear_density() {
        // triangle density on [0, 2] peaking at 1, sampled exactly
        let grid = GridSpec::uniform_1d(0.0, 2.0, 21).unwrap();
        let density: Vec<f64> = grid.axes()[0].points().iter().map(|&x| 1.0 - (x - 1.0).abs()).collect();
        let (m, outside) = bin_masses_1d(&grid, &density, 0.0, 1.0, 4);
        // ∫ x dx over quarters of [0, 1]
        let want = [1.0 / 32.0, 3.0 / 32.0, 5.0 / 32.0, 7.0 / 32.0];
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        assert!((outside - 0.5).abs() < 1e-14);
    }

    #[test]
    fn alexander_grid_converges() {
        let model = build_alexander();
        let grid = GridSpec::uniform_1d(-6.0, 24.0, 301).unwrap();
        for t in [8.0, 30.0] {
            let change = refinement_change(&model, beta_from_kelvin(t), &grid).unwrap();
            assert!(change < 1e-8, "{t}K: {change}");
        }
    }
}
