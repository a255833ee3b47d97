use serde::{Deserialize, Serialize};

use super::{check_index, MassTensor, ModelError, ModelSystem};
use crate::linalg::SiteMatrix;

/// On-disk description of a tabulated model (JSON).
///
/// Values are stored row-major over the axes: the last axis varies fastest.
/// `gap[m][n]` holds the table for `E_mn`; the matrix of tables must be
/// symmetric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedSurfaces {
    pub mass: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub ground: Vec<f64>,
    pub gap: Vec<Vec<Vec<f64>>>,
}

/// User-supplied surfaces evaluated by multilinear interpolation. Outside the
/// grid the boundary cell is extended linearly.
#[derive(Clone, Debug)]
pub struct TabulatedModel {
    surfaces: TabulatedSurfaces,
    mass: MassTensor,
    strides: Vec<usize>,
    reference: Vec<f64>,
}

impl TabulatedModel {
    pub fn new(surfaces: TabulatedSurfaces) -> Result<Self, ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameters(msg));
        let n_dof = surfaces.axes.len();
        if n_dof == 0 {
            return bad("at least one axis required".into());
        }
        if surfaces.mass.len() != n_dof {
            return bad(format!("expected {n_dof} masses, got {}", surfaces.mass.len()));
        }
        for (d, axis) in surfaces.axes.iter().enumerate() {
            if axis.len() < 2 {
                return bad(format!("axis {d} needs at least two points"));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|x| !x.is_finite()) {
                return bad(format!("axis {d} must be finite and strictly increasing"));
            }
        }
        let size: usize = surfaces.axes.iter().map(Vec::len).product();
        if surfaces.ground.len() != size {
            return bad(format!("ground table has {} values, grid has {size}", surfaces.ground.len()));
        }
        let n_sites = surfaces.gap.len();
        if n_sites == 0 || surfaces.gap.iter().any(|row| row.len() != n_sites) {
            return bad("gap tables must form a square matrix".into());
        }
        for (m, row) in surfaces.gap.iter().enumerate() {
            for (n, table) in row.iter().enumerate() {
                if table.len() != size {
                    return bad(format!("gap table ({m},{n}) has {} values, grid has {size}", table.len()));
                }
                if table != &surfaces.gap[n][m] {
                    return bad(format!("gap tables ({m},{n}) and ({n},{m}) differ"));
                }
            }
        }
        let finite = surfaces.ground.iter().chain(surfaces.gap.iter().flatten().flatten()).all(|v| v.is_finite());
        if !finite {
            return bad("table values must be finite".into());
        }
        let mass = MassTensor::new(surfaces.mass.clone())?;
        let mut strides = vec![1; n_dof];
        for d in (0..n_dof - 1).rev() {
            strides[d] = strides[d + 1] * surfaces.axes[d + 1].len();
        }
        let imin = surfaces
            .ground
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let reference = (0..n_dof)
            .map(|d| surfaces.axes[d][(imin / strides[d]) % surfaces.axes[d].len()])
            .collect();
        Ok(Self {
            surfaces,
            mass,
            strides,
            reference,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let surfaces: TabulatedSurfaces =
            serde_json::from_str(text).map_err(|e| ModelError::InvalidParameters(e.to_string()))?;
        Self::new(surfaces)
    }

    pub fn surfaces(&self) -> &TabulatedSurfaces {
        &self.surfaces
    }

    /// Lower cell index and fractional position per axis.
    fn locate(&self, r: &[f64]) -> Vec<(usize, f64, f64)> {
        self.surfaces
            .axes
            .iter()
            .zip(r)
            .map(|(axis, &x)| {
                let last = axis.len() - 2;
                let i = match axis.partition_point(|&a| a <= x) {
                    0 => 0,
                    p => (p - 1).min(last),
                };
                let h = axis[i + 1] - axis[i];
                (i, (x - axis[i]) / h, h)
            })
            .collect()
    }

    /// Interpolated value, or its derivative along `deriv` when given.
    fn interpolate(&self, table: &[f64], cell: &[(usize, f64, f64)], deriv: Option<usize>) -> f64 {
        let n_dof = cell.len();
        let mut acc = 0.0;
        for corner in 0..(1usize << n_dof) {
            let mut w = 1.0;
            let mut idx = 0;
            for (d, &(i, t, h)) in cell.iter().enumerate() {
                let upper = (corner >> d) & 1 == 1;
                let f = if Some(d) == deriv {
                    if upper {
                        1.0 / h
                    } else {
                        -1.0 / h
                    }
                } else if upper {
                    t
                } else {
                    1.0 - t
                };
                w *= f;
                idx += (i + upper as usize) * self.strides[d];
            }
            acc += w * table[idx];
        }
        acc
    }
}

impl ModelSystem for TabulatedModel {
    fn n_sites(&self) -> usize {
        self.surfaces.gap.len()
    }

    fn n_dof(&self) -> usize {
        self.surfaces.axes.len()
    }

    fn mass(&self) -> &MassTensor {
        &self.mass
    }

    fn ground_potential(&self, r: &[f64]) -> f64 {
        let cell = self.locate(r);
        self.interpolate(&self.surfaces.ground, &cell, None)
    }

    fn ground_gradient(&self, r: &[f64], grad: &mut [f64]) {
        let cell = self.locate(r);
        for (j, g) in grad.iter_mut().enumerate() {
            *g = self.interpolate(&self.surfaces.ground, &cell, Some(j));
        }
    }

    fn gap_matrix(&self, r: &[f64], out: &mut SiteMatrix) {
        let cell = self.locate(r);
        let n = self.n_sites();
        for m in 0..n {
            for k in m..n {
                let v = self.interpolate(&self.surfaces.gap[m][k], &cell, None);
                out[(m, k)] = v;
                out[(k, m)] = v;
            }
        }
    }

    fn gap_gradient(&self, r: &[f64], j: usize, out: &mut SiteMatrix) -> Result<(), ModelError> {
        check_index(j, self.n_dof())?;
        let cell = self.locate(r);
        let n = self.n_sites();
        for m in 0..n {
            for k in m..n {
                let v = self.interpolate(&self.surfaces.gap[m][k], &cell, Some(j));
                out[(m, k)] = v;
                out[(k, m)] = v;
            }
        }
        Ok(())
    }

    fn reference_position(&self) -> Vec<f64> {
        self.reference.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_dimer, fd};

    /// Samples the dimer on a grid; bilinear interpolation of a function that
    /// is linear in each coordinate separately is exact.
    fn tabulate_dimer(n: usize) -> TabulatedModel {
        let dimer = build_dimer();
        let axis: Vec<f64> = (0..n).map(|i| -4.0 + 9.0 * i as f64 / (n - 1) as f64).collect();
        let mut ground = Vec::new();
        let mut gap = vec![vec![Vec::new(); 2]; 2];
        for &x in &axis {
            for &y in &axis {
                ground.push(dimer.ground_potential(&[x, y]));
                let e = dimer.gap(&[x, y]);
                for m in 0..2 {
                    for k in 0..2 {
                        gap[m][k].push(e[(m, k)]);
                    }
                }
            }
        }
        TabulatedModel::new(TabulatedSurfaces {
            mass: dimer.mass().as_slice().to_vec(),
            axes: vec![axis.clone(), axis],
            ground,
            gap,
        })
        .unwrap()
    }

    #[test]
    fn reproduces_linear_gap_exactly() {
        let dimer = build_dimer();
        let tab = tabulate_dimer(31);
        for r in [[0.1, 0.2], [2.9, -1.7], [-3.99, 4.9], [6.0, -6.0]] {
            let a = dimer.gap(&r);
            let b = tab.gap(&r);
            assert!(a.max_abs_diff(&b) < 1e-14, "{a:?} vs {b:?}");
        }
        // ground surface is quadratic: interpolation error bounded by k h²/8
        let h: f64 = 9.0 / 30.0;
        let err = (dimer.ground_potential(&[0.15, 0.15]) - tab.ground_potential(&[0.15, 0.15])).abs();
        assert!(err <= 2.227817e-3 * h * h / 8.0 * 2.0 + 1e-15);
        assert_eq!(tab.reference_position().len(), 2);
    }

    #[test]
    fn gradient_is_derivative_of_interpolant() {
        let tab = tabulate_dimer(11);
        // points well inside cells so the central difference stays in one cell
        for r in [[0.05, 0.05], [1.35, -2.65], [3.05, 2.75]] {
            fd::assert_consistent(&tab, &r, 1e-7);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let tab = tabulate_dimer(5);
        let text = serde_json::to_string(tab.surfaces()).unwrap();
        let back = TabulatedModel::from_json(&text).unwrap();
        assert_eq!(back.surfaces(), tab.surfaces());

        let mut s = tab.surfaces().clone();
        s.gap[0][1][3] += 1.0;
        assert!(TabulatedModel::new(s).is_err());
        let mut s = tab.surfaces().clone();
        s.axes[0].swap(0, 1);
        assert!(TabulatedModel::new(s).is_err());
        assert!(TabulatedModel::from_json("{\"mass\": [1.0]}").is_err());
    }
}
