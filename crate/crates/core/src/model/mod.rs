//! Exciton-phonon Hamiltonians in the diabatic basis.
//!
//! A model supplies the ground-state surface `V_g(R)`, the site (gap) matrix
//! `E(R)` whose diagonal is `V_m(R) - V_g(R)` and whose off-diagonal entries
//! are the couplings `J_mn(R)`, their coordinate gradients, and the diagonal
//! phonon mass tensor. Everything is in atomic units.

mod alexander;
mod harmonic;
mod tabulated;

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SiteMatrix;

pub use alexander::{build_alexander, AlexanderModel, AlexanderParams};
pub use harmonic::{build_dimer, DimerParams, DisplacedHarmonicModel};
pub use tabulated::{TabulatedModel, TabulatedSurfaces};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("coordinate index {index} out of range for {n_dof} phonon degrees of freedom")]
    CoordinateOutOfRange { index: usize, n_dof: usize },
    #[error("mass entry {index} is {value}; masses must be strictly positive and finite")]
    NonPositiveMass { index: usize, value: f64 },
    #[error("phonon coordinates contain a non-finite entry")]
    NonFiniteCoordinate,
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
}

/// A point in phonon space (bohr).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhononCoords(Vec<f64>);

impl PhononCoords {
    pub fn new(r: Vec<f64>) -> Result<Self, ModelError> {
        if r.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFiniteCoordinate);
        }
        Ok(Self(r))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PhononCoords {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Diagonal phonon mass tensor (electron masses).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MassTensor(Vec<f64>);

impl MassTensor {
    pub fn new(masses: Vec<f64>) -> Result<Self, ModelError> {
        for (index, &value) in masses.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::NonPositiveMass { index, value });
            }
        }
        Ok(Self(masses))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for MassTensor {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, ModelError> {
        MassTensor::new(v)
    }
}

impl From<MassTensor> for Vec<f64> {
    fn from(m: MassTensor) -> Vec<f64> {
        m.0
    }
}

/// The Hamiltonian interface consumed by the estimator, sampler and oracles.
///
/// Implementations must be pure: the same coordinates always give the same
/// values, and a model may be shared read-only between concurrent chains.
pub trait ModelSystem: Send + Sync {
    fn n_sites(&self) -> usize;

    fn n_dof(&self) -> usize;

    fn mass(&self) -> &MassTensor;

    /// `V_g(r)` in Hartree.
    fn ground_potential(&self, r: &[f64]) -> f64;

    /// `∇V_g(r)` written into `grad` (length `n_dof`).
    fn ground_gradient(&self, r: &[f64], grad: &mut [f64]);

    /// `E(r)` written into `out` (`n_sites × n_sites`, symmetric).
    fn gap_matrix(&self, r: &[f64], out: &mut SiteMatrix);

    /// `∂E/∂r_j` written into `out`.
    fn gap_gradient(&self, r: &[f64], j: usize, out: &mut SiteMatrix) -> Result<(), ModelError>;

    /// Minimum of the ground surface (or of the lowest diabatic surface when
    /// the model has no separate ground surface); used to seed the bead path.
    fn reference_position(&self) -> Vec<f64>;

    fn gap(&self, r: &[f64]) -> SiteMatrix {
        let mut e = SiteMatrix::zeros(self.n_sites());
        self.gap_matrix(r, &mut e);
        e
    }

    fn ground_grad(&self, r: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_dof()];
        self.ground_gradient(r, &mut g);
        g
    }

    fn gap_grad(&self, r: &[f64], j: usize) -> Result<SiteMatrix, ModelError> {
        let mut e = SiteMatrix::zeros(self.n_sites());
        self.gap_gradient(r, j, &mut e)?;
        Ok(e)
    }
}

pub(crate) fn check_index(j: usize, n_dof: usize) -> Result<(), ModelError> {
    if j < n_dof {
        Ok(())
    } else {
        Err(ModelError::CoordinateOutOfRange { index: j, n_dof })
    }
}

#[cfg(test)]
pub(crate) mod fd {
    //! Central-difference oracle shared by the model tests.
    use super::*;

    pub const H: f64 = 1e-4;

    pub fn ground_gradient(model: &dyn ModelSystem, r: &[f64]) -> Vec<f64> {
        (0..r.len())
            .map(|j| {
                let mut p = r.to_vec();
                let mut m = r.to_vec();
                p[j] += H;
                m[j] -= H;
                (model.ground_potential(&p) - model.ground_potential(&m)) / (2.0 * H)
            })
            .collect()
    }

    pub fn gap_gradient(model: &dyn ModelSystem, r: &[f64], j: usize) -> SiteMatrix {
        let mut p = r.to_vec();
        let mut m = r.to_vec();
        p[j] += H;
        m[j] -= H;
        let mut d = model.gap(&p);
        d.add_scaled(-1.0, &model.gap(&m));
        d.scale_mut(1.0 / (2.0 * H));
        d
    }

    /// Relative error with an absolute floor so exact zeros compare cleanly.
    pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(floor)
    }

    pub fn assert_consistent(model: &dyn ModelSystem, r: &[f64], tol: f64) {
        let g = model.ground_grad(r);
        let g_fd = ground_gradient(model, r);
        let scale = g.iter().fold(1e-12_f64, |a, x| a.max(x.abs()));
        for (a, b) in g.iter().zip(&g_fd) {
            assert!(rel_err(*a, *b, scale) < tol, "ground gradient {a} vs FD {b} at {r:?}");
        }
        for j in 0..r.len() {
            let e = model.gap_grad(r, j).unwrap();
            let e_fd = gap_gradient(model, r, j);
            let scale = e.max_abs().max(e_fd.max_abs()).max(1e-12);
            assert!(
                e.max_abs_diff(&e_fd) / scale < tol,
                "gap gradient j={j} {e:?} vs FD {e_fd:?} at {r:?}"
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_tensor_rejects_non_positive() {
        assert_eq!(
            MassTensor::new(vec![1.0, 0.0]),
            Err(ModelError::NonPositiveMass { index: 1, value: 0.0 })
        );
        assert!(MassTensor::new(vec![1.0, f64::NAN]).is_err());
        assert!(serde_json::from_str::<MassTensor>("[1.0, -2.0]").is_err());
    }

    #[test]
    fn coords_must_be_finite() {
        assert!(PhononCoords::new(vec![0.0, f64::INFINITY]).is_err());
        assert_eq!(&*PhononCoords::new(vec![1.0, 2.0]).unwrap(), &[1.0, 2.0]);
    }
}
