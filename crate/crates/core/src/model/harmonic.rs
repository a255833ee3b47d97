use serde::{Deserialize, Serialize};

use super::{check_index, MassTensor, ModelError, ModelSystem};
use crate::linalg::SiteMatrix;

/// Table II parameters of the displaced-harmonic heterodimer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimerParams {
    pub k1: f64,
    pub k2: f64,
    pub d1: f64,
    pub d2: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub j: f64,
    pub m1: f64,
    pub m2: f64,
}

impl Default for DimerParams {
    fn default() -> Self {
        Self {
            k1: 2.227817e-3,
            k2: 2.227817e-3,
            d1: 3.0,
            d2: 2.0,
            eps1: 8.064745e-2,
            eps2: 7.976238e-2,
            j: -4.738588e-4,
            m1: 3.418218e6,
            m2: 3.418218e6,
        }
    }
}

/// Sites whose excited surfaces are copies of a shared harmonic ground
/// surface, displaced per site, with constant inter-site couplings:
///
/// ```text
/// V_g(x)  = ½ Σ_j k_j x_j²
/// E_mm(x) = ½ Σ_j k_j [(x_j - D_mj)² - x_j²] + ε_m
/// E_mn    = J_mn
/// ```
///
/// The heterodimer is the two-site, two-mode instance with `D_1 = (d1, 0)`
/// and `D_2 = (0, d2)`; the site energy `ε_m` is added outside the braces for
/// both sites, so each excited surface `V_g + E_mm` has its minimum `ε_m` at
/// `D_m`.
#[derive(Clone, Debug)]
pub struct DisplacedHarmonicModel {
    force_constants: Vec<f64>,
    displacements: Vec<Vec<f64>>,
    site_energies: Vec<f64>,
    coupling: SiteMatrix,
    mass: MassTensor,
}

impl DisplacedHarmonicModel {
    /// `displacements[m]` is the minimum of site `m`'s excited surface;
    /// only the off-diagonal part of `coupling` is used.
    pub fn new(
        force_constants: Vec<f64>,
        masses: Vec<f64>,
        displacements: Vec<Vec<f64>>,
        site_energies: Vec<f64>,
        coupling: SiteMatrix,
    ) -> Result<Self, ModelError> {
        let n_dof = force_constants.len();
        let n_sites = site_energies.len();
        let bad = |msg: &str| Err(ModelError::InvalidParameters(msg.to_string()));
        if n_dof == 0 || n_sites == 0 {
            return bad("need at least one site and one phonon coordinate");
        }
        if masses.len() != n_dof {
            return bad("one mass per phonon coordinate required");
        }
        if displacements.len() != n_sites || displacements.iter().any(|d| d.len() != n_dof) {
            return bad("displacements must be n_sites vectors of length n_dof");
        }
        if coupling.dim() != n_sites {
            return bad("coupling matrix must be n_sites × n_sites");
        }
        if coupling.asymmetry() > 1e-12 {
            return bad("coupling matrix must be symmetric");
        }
        let finite = force_constants
            .iter()
            .chain(&site_energies)
            .chain(displacements.iter().flatten())
            .chain(coupling.as_slice())
            .all(|v| v.is_finite());
        if !finite {
            return bad("parameters must be finite");
        }
        let mass = MassTensor::new(masses)?;
        let mut coupling = coupling;
        for m in 0..n_sites {
            coupling[(m, m)] = 0.0;
        }
        Ok(Self {
            force_constants,
            displacements,
            site_energies,
            coupling,
            mass,
        })
    }

    pub fn dimer(p: &DimerParams) -> Result<Self, ModelError> {
        Self::new(
            vec![p.k1, p.k2],
            vec![p.m1, p.m2],
            vec![vec![p.d1, 0.0], vec![0.0, p.d2]],
            vec![p.eps1, p.eps2],
            SiteMatrix::from_rows(&[[0.0, p.j], [p.j, 0.0]]),
        )
    }

    pub fn force_constants(&self) -> &[f64] {
        &self.force_constants
    }

    pub fn displacements(&self) -> &[Vec<f64>] {
        &self.displacements
    }

    pub fn site_energies(&self) -> &[f64] {
        &self.site_energies
    }

    pub fn coupling(&self) -> &SiteMatrix {
        &self.coupling
    }

    /// Exact reduction of a two-site model with isotropic force constants and
    /// masses to a single coupled mode.
    ///
    /// Shifting the origin to the midpoint of the two excited-state minima and
    /// rotating one axis onto their separation leaves every orthogonal
    /// direction as a free oscillator shared by both sites. Such a mode
    /// multiplies `e^{-βH}` by a scalar factor, so the reduced density matrix
    /// (both the exact one and every finite-bead approximation) is that of the
    /// returned one-dimensional model.
    pub fn effective_mode(&self) -> Result<DisplacedHarmonicModel, ModelError> {
        let k = self.force_constants[0];
        let m = self.mass.as_slice()[0];
        let isotropic = self.force_constants.iter().all(|&x| x == k)
            && self.mass.as_slice().iter().all(|&x| x == m);
        if self.site_energies.len() != 2 || !isotropic {
            return Err(ModelError::InvalidParameters(
                "single-mode reduction needs two sites with identical force constants and masses"
                    .into(),
            ));
        }
        let half_sep: f64 = self.displacements[0]
            .iter()
            .zip(&self.displacements[1])
            .map(|(a, b)| 0.25 * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        DisplacedHarmonicModel::new(
            vec![k],
            vec![m],
            vec![vec![half_sep], vec![-half_sep]],
            self.site_energies.clone(),
            self.coupling.clone(),
        )
    }
}

pub fn build_dimer() -> DisplacedHarmonicModel {
    DisplacedHarmonicModel::dimer(&DimerParams::default()).expect("built-in parameters are valid")
}

impl ModelSystem for DisplacedHarmonicModel {
    fn n_sites(&self) -> usize {
        self.site_energies.len()
    }

    fn n_dof(&self) -> usize {
        self.force_constants.len()
    }

    fn mass(&self) -> &MassTensor {
        &self.mass
    }

    fn ground_potential(&self, r: &[f64]) -> f64 {
        self.force_constants
            .iter()
            .zip(r)
            .map(|(k, x)| 0.5 * k * x * x)
            .sum()
    }

    fn ground_gradient(&self, r: &[f64], grad: &mut [f64]) {
        for ((g, k), x) in grad.iter_mut().zip(&self.force_constants).zip(r) {
            *g = k * x;
        }
    }

    fn gap_matrix(&self, r: &[f64], out: &mut SiteMatrix) {
        out.copy_from(&self.coupling);
        for (site, d) in self.displacements.iter().enumerate() {
            // ½k[(x-d)² - x²] = ½k d(d - 2x)
            let shift: f64 = self
                .force_constants
                .iter()
                .zip(d)
                .zip(r)
                .map(|((k, d), x)| 0.5 * k * d * (d - 2.0 * x))
                .sum();
            out[(site, site)] = shift + self.site_energies[site];
        }
    }

    fn gap_gradient(&self, _r: &[f64], j: usize, out: &mut SiteMatrix) -> Result<(), ModelError> {
        check_index(j, self.n_dof())?;
        out.fill(0.0);
        let k = self.force_constants[j];
        for (site, d) in self.displacements.iter().enumerate() {
            out[(site, site)] = -k * d[j];
        }
        Ok(())
    }

    fn reference_position(&self) -> Vec<f64> {
        vec![0.0; self.n_dof()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd;

    const K: f64 = 2.227817e-3;

    #[test]
    fn ground_surface_values() {
        let m = build_dimer();
        assert_eq!(m.ground_potential(&[0.0, 0.0]), 0.0);
        assert!((m.ground_potential(&[1.0, 0.0]) - 1.1139085e-3).abs() < 1e-15);
        assert!((m.ground_potential(&[1.0, 1.0]) - K).abs() < 1e-15);
        assert_eq!(m.ground_grad(&[0.0, 0.0]), vec![0.0, 0.0]);
        let g = m.ground_grad(&[1.0, 2.0]);
        assert!((g[0] - K).abs() < 1e-18 && (g[1] - 2.0 * K).abs() < 1e-18);
    }

    #[test]
    fn gap_matrix_values() {
        let m = build_dimer();
        let e = m.gap(&[0.0, 0.0]);
        // at the origin the diagonal is ε_m + ½k d_m²
        assert!((e[(0, 0)] - (8.064745e-2 + 0.5 * K * 9.0)).abs() < 1e-15);
        assert!((e[(1, 1)] - (7.976238e-2 + 0.5 * K * 4.0)).abs() < 1e-15);
        // at r = (d1, d2) the diagonal is ε_m - ½k d_m²
        let e = m.gap(&[3.0, 2.0]);
        assert!((e[(0, 0)] - (8.064745e-2 - 0.5 * K * 9.0)).abs() < 1e-15);
        assert!((e[(1, 1)] - (7.976238e-2 - 0.5 * K * 4.0)).abs() < 1e-15);
        for r in [[0.0, 0.0], [3.0, 2.0], [-7.0, 11.0]] {
            let e = m.gap(&r);
            assert_eq!(e[(0, 1)], -4.738588e-4);
            assert_eq!(e[(0, 1)], e[(1, 0)]);
        }
        // excited surface V_g + E_mm bottoms out at ε_m on its displacement
        assert!((m.ground_potential(&[3.0, 0.0]) + m.gap(&[3.0, 0.0])[(0, 0)] - 8.064745e-2).abs() < 1e-15);
        assert!((m.ground_potential(&[0.0, 2.0]) + m.gap(&[0.0, 2.0])[(1, 1)] - 7.976238e-2).abs() < 1e-15);
    }

    #[test]
    fn zero_coupling_is_diagonal() {
        let m = DisplacedHarmonicModel::dimer(&DimerParams {
            j: 0.0,
            ..DimerParams::default()
        })
        .unwrap();
        let e = m.gap(&[0.3, -1.2]);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn gap_gradient_is_constant_diagonal() {
        let m = build_dimer();
        let d = m.gap_grad(&[5.0, -1.0], 0).unwrap();
        assert!((d[(0, 0)] + K * 3.0).abs() < 1e-18);
        assert_eq!(d[(1, 1)], 0.0);
        assert_eq!(d[(0, 1)], 0.0);
        let d = m.gap_grad(&[5.0, -1.0], 1).unwrap();
        assert!((d[(1, 1)] + K * 2.0).abs() < 1e-18);
        assert_eq!(
            m.gap_grad(&[0.0, 0.0], 2).unwrap_err(),
            ModelError::CoordinateOutOfRange { index: 2, n_dof: 2 }
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = build_dimer();
        for r in [[0.0, 0.0], [1.0, 2.0], [-20.0, 20.0], [3.3, -4.1]] {
            fd::assert_consistent(&m, &r, 1e-7);
        }
    }

    #[test]
    fn effective_mode_preserves_site_surfaces() {
        let full = build_dimer();
        let eff = full.effective_mode().unwrap();
        assert_eq!(eff.n_dof(), 1);
        let b = 0.5 * 13.0_f64.sqrt();
        assert!((eff.displacements()[0][0] - b).abs() < 1e-15);
        // site-surface difference along the separation axis must agree
        for t in [-1.5, -0.2, 0.0, 0.7, 2.4] {
            let x = [1.5 + t * 3.0 / (2.0 * b), 1.0 - t * 2.0 / (2.0 * b)];
            let ef = full.gap(&x);
            let ee = eff.gap(&[t]);
            let full_split = ef[(0, 0)] - ef[(1, 1)];
            let eff_split = ee[(0, 0)] - ee[(1, 1)];
            assert!((full_split - eff_split).abs() < 1e-14, "{full_split} vs {eff_split}");
        }
        let skewed = DisplacedHarmonicModel::dimer(&DimerParams {
            k2: 1e-3,
            ..DimerParams::default()
        })
        .unwrap();
        assert!(skewed.effective_mode().is_err());
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let r = DisplacedHarmonicModel::new(
            vec![1.0],
            vec![1.0, 2.0],
            vec![vec![0.0]],
            vec![0.0],
            SiteMatrix::zeros(1),
        );
        assert!(r.is_err());
    }
}
