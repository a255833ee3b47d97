use serde::{Deserialize, Serialize};

use super::{check_index, MassTensor, ModelError, ModelSystem};
use crate::linalg::SiteMatrix;

/// Two harmonic diabatic surfaces along one coordinate with a Gaussian
/// coupling centred between them.
///
/// ```text
/// V11(x) = ½ k11 (x - x11)² + ε11
/// V22(x) = ½ k22 (x - x22)² + ε22
/// V12(x) = c exp[-α (x - x12)²]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlexanderParams {
    pub k11: f64,
    pub k22: f64,
    pub x11: f64,
    pub x22: f64,
    pub eps11: f64,
    pub eps22: f64,
    pub c: f64,
    pub alpha: f64,
    pub x12: f64,
    pub mass: f64,
}

impl Default for AlexanderParams {
    fn default() -> Self {
        Self {
            k11: 4e-5,
            k22: 3.2e-5,
            x11: 7.0,
            x22: 10.5,
            eps11: 0.0,
            eps22: 2.2782e-5,
            c: 5e-5,
            alpha: 0.4,
            x12: 8.75,
            mass: 3.6743e3,
        }
    }
}

/// The model carries no separate ground surface: `V_g ≡ 0` and the two
/// diabatic surfaces sit directly on the diagonal of `E(x)`.
#[derive(Clone, Debug)]
pub struct AlexanderModel {
    params: AlexanderParams,
    mass: MassTensor,
}

impl AlexanderModel {
    pub fn new(params: AlexanderParams) -> Result<Self, ModelError> {
        let fields = [
            params.k11,
            params.k22,
            params.x11,
            params.x22,
            params.eps11,
            params.eps22,
            params.c,
            params.alpha,
            params.x12,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameters(
                "all Alexander parameters must be finite".into(),
            ));
        }
        if params.alpha < 0.0 {
            return Err(ModelError::InvalidParameters(
                "coupling width alpha must be non-negative".into(),
            ));
        }
        let mass = MassTensor::new(vec![params.mass])?;
        Ok(Self { params, mass })
    }

    pub fn params(&self) -> &AlexanderParams {
        &self.params
    }

    fn coupling(&self, x: f64) -> f64 {
        let p = &self.params;
        let dx = x - p.x12;
        p.c * (-p.alpha * dx * dx).exp()
    }
}

pub fn build_alexander() -> AlexanderModel {
    AlexanderModel::new(AlexanderParams::default()).expect("built-in parameters are valid")
}

impl ModelSystem for AlexanderModel {
    fn n_sites(&self) -> usize {
        2
    }

    fn n_dof(&self) -> usize {
        1
    }

    fn mass(&self) -> &MassTensor {
        &self.mass
    }

    fn ground_potential(&self, _r: &[f64]) -> f64 {
        0.0
    }

    fn ground_gradient(&self, _r: &[f64], grad: &mut [f64]) {
        grad[0] = 0.0;
    }

    fn gap_matrix(&self, r: &[f64], out: &mut SiteMatrix) {
        let p = &self.params;
        let x = r[0];
        let v12 = self.coupling(x);
        out[(0, 0)] = 0.5 * p.k11 * (x - p.x11).powi(2) + p.eps11;
        out[(1, 1)] = 0.5 * p.k22 * (x - p.x22).powi(2) + p.eps22;
        out[(0, 1)] = v12;
        out[(1, 0)] = v12;
    }

    fn gap_gradient(&self, r: &[f64], j: usize, out: &mut SiteMatrix) -> Result<(), ModelError> {
        check_index(j, 1)?;
        let p = &self.params;
        let x = r[0];
        let d12 = -2.0 * p.alpha * (x - p.x12) * self.coupling(x);
        out[(0, 0)] = p.k11 * (x - p.x11);
        out[(1, 1)] = p.k22 * (x - p.x22);
        out[(0, 1)] = d12;
        out[(1, 0)] = d12;
        Ok(())
    }

    fn reference_position(&self) -> Vec<f64> {
        let p = &self.params;
        if p.eps11 <= p.eps22 {
            vec![p.x11]
        } else {
            vec![p.x22]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd;

    #[test]
    fn spot_values() {
        let m = build_alexander();
        // hand evaluation of the three surfaces at their reference points
        let e = m.gap(&[7.0]);
        assert_eq!(e[(0, 0)], 0.0);
        assert!((e[(1, 1)] - (0.5 * 3.2e-5 * 3.5 * 3.5 + 2.2782e-5)).abs() < 1e-18);
        let e = m.gap(&[10.5]);
        assert!((e[(0, 0)] - 0.5 * 4e-5 * 3.5 * 3.5).abs() < 1e-18);
        assert!((e[(1, 1)] - 2.2782e-5).abs() < 1e-18);
        let e = m.gap(&[8.75]);
        assert_eq!(e[(0, 1)], 5e-5);
        assert_eq!(e[(1, 0)], 5e-5);
        assert_eq!(m.ground_potential(&[7.0]), 0.0);
    }

    #[test]
    fn coupling_extremum_has_zero_slope() {
        let m = build_alexander();
        let d = m.gap_grad(&[8.75], 0).unwrap();
        assert_eq!(d[(0, 1)], 0.0);
        assert!(m.gap_grad(&[8.75], 1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = build_alexander();
        for x in [-20.0, -3.3, 0.0, 5.0, 7.0, 8.1, 8.75, 9.9, 12.0, 19.5] {
            fd::assert_consistent(&m, &[x], 1e-7);
        }
    }

    #[test]
    fn starts_in_lower_well() {
        assert_eq!(build_alexander().reference_position(), vec![7.0]);
    }
}
