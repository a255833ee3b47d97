//! Small dense matrices over exciton sites.
//!
//! Exciton dimensions are tiny (2 for the built-in models, rarely more than a
//! few dozen), so everything here is a plain row-major `Vec<f64>` with
//! allocation-free `*_into` kernels for the sampler's inner loop.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Square real matrix indexed by exciton site.
#[derive(Clone, PartialEq)]
pub struct SiteMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SiteMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from rows. Panics if the rows are not square.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), n, "SiteMatrix rows must be square");
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn set_identity(&mut self) {
        self.fill(0.0);
        for i in 0..self.n {
            self.data[i * self.n + i] = 1.0;
        }
    }

    pub fn copy_from(&mut self, other: &SiteMatrix) {
        debug_assert_eq!(self.n, other.n);
        self.data.copy_from_slice(&other.data);
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.n + i]).collect()
    }

    pub fn transpose(&self) -> SiteMatrix {
        let n = self.n;
        let mut t = SiteMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry (0 for the zero matrix).
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(&self, s: f64) -> SiteMatrix {
        let mut m = self.clone();
        m.scale_mut(s);
        m
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &SiteMatrix) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// `out = a * b`; `out` must not alias either operand.
    pub fn mul_into(a: &SiteMatrix, b: &SiteMatrix, out: &mut SiteMatrix) {
        let n = a.n;
        debug_assert!(b.n == n && out.n == n);
        if n == 2 {
            let (x, y) = (&a.data, &b.data);
            out.data[0] = x[0] * y[0] + x[1] * y[2];
            out.data[1] = x[0] * y[1] + x[1] * y[3];
            out.data[2] = x[2] * y[0] + x[3] * y[2];
            out.data[3] = x[2] * y[1] + x[3] * y[3];
            return;
        }
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += a.data[i * n + k] * b.data[k * n + j];
                }
                out.data[i * n + j] = s;
            }
        }
    }

    pub fn mul(&self, other: &SiteMatrix) -> SiteMatrix {
        let mut out = SiteMatrix::zeros(self.n);
        SiteMatrix::mul_into(self, other, &mut out);
        out
    }

    /// `tr(a * b)` without forming the product.
    pub fn trace_of_product(a: &SiteMatrix, b: &SiteMatrix) -> f64 {
        let n = a.n;
        let mut s = 0.0;
        for i in 0..n {
            for k in 0..n {
                s += a.data[i * n + k] * b.data[k * n + i];
            }
        }
        s
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &SiteMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Index<(usize, usize)> for SiteMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SiteMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Debug for SiteMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl Serialize for SiteMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SiteMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        if rows.iter().any(|r| r.len() != rows.len()) {
            return Err(serde::de::Error::custom("matrix rows must form a square"));
        }
        Ok(SiteMatrix::from_rows(&rows))
    }
}

/// Eigen-decomposition of a real symmetric matrix. Column `k` of `vectors`
/// is the eigenvector for `values[k]`; values are sorted ascending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: SiteMatrix,
}

impl SymmetricEigen {
    pub fn new(m: &SiteMatrix) -> Self {
        let mut out = SymmetricEigen {
            values: vec![0.0; m.dim()],
            vectors: SiteMatrix::zeros(m.dim()),
        };
        out.compute(m);
        out
    }

    /// Recomputes in place, reusing the buffers.
    pub fn compute(&mut self, m: &SiteMatrix) {
        match m.dim() {
            0 => {}
            1 => {
                self.values[0] = m[(0, 0)];
                self.vectors[(0, 0)] = 1.0;
            }
            2 => eigen_2x2(m, &mut self.values, &mut self.vectors),
            _ => jacobi(m, &mut self.values, &mut self.vectors),
        }
    }

    /// `V f(Λ) Vᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64, out: &mut SiteMatrix) {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += v[(i, k)] * fv[k] * v[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

fn eigen_2x2(m: &SiteMatrix, values: &mut [f64], vectors: &mut SiteMatrix) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (s, c) = theta.sin_cos();
    let l1 = a * c * c + 2.0 * b * c * s + d * s * s;
    let l2 = a * s * s - 2.0 * b * c * s + d * c * c;
    // (c, s) belongs to l1, (-s, c) to l2
    if l1 <= l2 {
        values[0] = l1;
        values[1] = l2;
        vectors[(0, 0)] = c;
        vectors[(1, 0)] = s;
        vectors[(0, 1)] = -s;
        vectors[(1, 1)] = c;
    } else {
        values[0] = l2;
        values[1] = l1;
        vectors[(0, 0)] = -s;
        vectors[(1, 0)] = c;
        vectors[(0, 1)] = c;
        vectors[(1, 1)] = s;
    }
}

/// Cyclic Jacobi rotations; converges quadratically for symmetric input.
fn jacobi(m: &SiteMatrix, values: &mut [f64], vectors: &mut SiteMatrix) {
    let n = m.dim();
    let mut a = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    let v = vectors;
    v.set_identity();
    let norm: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-17 * norm || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]));
    let old = v.clone();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[(src, src)];
        for k in 0..n {
            v[(k, dst)] = old[(k, src)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_decomposition(m: &SiteMatrix) {
        let eig = SymmetricEigen::new(m);
        let mut back = SiteMatrix::zeros(m.dim());
        eig.reconstruct_with(|x| x, &mut back);
        assert!(back.max_abs_diff(m) < 1e-12 * m.max_abs().max(1.0), "{back:?} vs {m:?}");
        let vtv = eig.vectors.transpose().mul(&eig.vectors);
        assert!(vtv.max_abs_diff(&SiteMatrix::identity(m.dim())) < 1e-12);
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn closed_form_2x2() {
        check_decomposition(&SiteMatrix::from_rows(&[[1.0, 0.3], [0.3, -2.0]]));
        check_decomposition(&SiteMatrix::from_rows(&[[5.0, 0.0], [0.0, -1.0]]));
        check_decomposition(&SiteMatrix::from_rows(&[[0.08, -4.7e-4], [-4.7e-4, 0.0797]]));
        check_decomposition(&SiteMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]));
    }

    #[test]
    fn jacobi_larger() {
        let m = SiteMatrix::from_rows(&[
            [4.0, 1.0, -2.0, 0.5],
            [1.0, 2.0, 0.0, 1.0],
            [-2.0, 0.0, 3.0, -1.5],
            [0.5, 1.0, -1.5, -1.0],
        ]);
        check_decomposition(&m);
        check_decomposition(&SiteMatrix::identity(5));
    }

    #[test]
    fn product_and_trace() {
        let a = SiteMatrix::from_rows(&[[1.0, 2.0, 0.0], [0.0, 1.0, 3.0], [1.0, 0.0, 1.0]]);
        let b = a.transpose();
        let p = a.mul(&b);
        assert_eq!(p[(0, 0)], 5.0);
        assert_eq!(SiteMatrix::trace_of_product(&a, &b), p.trace());
        assert_eq!(a.asymmetry(), 3.0 / 3.0);
    }
}
