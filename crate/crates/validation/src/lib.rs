//! Helpers for the end-to-end acceptance suite: outcome reporting and
//! comparisons between sampled and exact quantities.

use std::fmt;

use exciton_pimc::oracle::{bin_masses_1d, GridSpec};
use exciton_pimc::stats::{HistogramGrid, Z_95};

/// Result of one acceptance criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub id: String,
    pub passed: bool,
    /// Soft criteria are reported but do not fail the suite.
    pub gated: bool,
    pub detail: String,
}

impl Outcome {
    pub fn gated(id: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            passed,
            gated: true,
            detail: detail.into(),
        }
    }

    pub fn soft(id: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            passed,
            gated: false,
            detail: detail.into(),
        }
    }

    pub fn fails_suite(&self) -> bool {
        self.gated && !self.passed
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match (self.passed, self.gated) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "SOFT-FAIL",
        };
        write!(f, "[{tag}] {}: {}", self.id, self.detail)
    }
}

/// L1 distance between a 1D histogram of samples and an exact grid density,
/// over the histogram bins plus the mass falling outside them.
pub fn histogram_l1(hist: &HistogramGrid, grid: &GridSpec, density: &[f64]) -> f64 {
    let (lo, hi, bins) = (hist.lo()[0], hist.hi()[0], hist.bins()[0]);
    let (exact, exact_outside) = bin_masses_1d(grid, density, lo, hi, bins);
    let total = hist.total() as f64;
    let binned: f64 = hist
        .counts()
        .iter()
        .zip(&exact)
        .map(|(&c, &p)| (c as f64 / total - p).abs())
        .sum();
    binned + (hist.outside() as f64 / total - exact_outside).abs()
}

/// Whether `a` exceeds `b` by more than the joint 95% interval of two
/// independent estimates.
pub fn exceeds_jointly(a: f64, se_a: f64, b: f64, se_b: f64) -> bool {
    a - b > Z_95 * (se_a * se_a + se_b * se_b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_distributions_have_zero_distance() {
        let grid = GridSpec::uniform_1d(0.0, 1.0, 101).unwrap();
        let density = vec![1.0; 101];
        let mut hist = HistogramGrid::new(vec![0.0], vec![1.0], vec![10]).unwrap();
        for i in 0..10_000 {
            hist.push(&[(i as f64 + 0.5) / 10_000.0]);
        }
        assert!(histogram_l1(&hist, &grid, &density) < 1e-12);
    }

    #[test]
    fn disjoint_distributions_have_distance_two() {
        let grid = GridSpec::uniform_1d(0.0, 1.0, 101).unwrap();
        let density: Vec<f64> = (0..101).map(|i| if i <= 50 { 2.0 } else { 0.0 }).collect();
        let mut hist = HistogramGrid::new(vec![0.0], vec![1.0], vec![2]).unwrap();
        hist.push(&[0.75]);
        // the linear interpolant leaks a sliver of mass past x = 0.5
        assert!((histogram_l1(&hist, &grid, &density) - 2.0).abs() < 0.05);
    }

    #[test]
    fn joint_interval() {
        assert!(exceeds_jointly(1.0, 0.1, 0.5, 0.1));
        assert!(!exceeds_jointly(1.0, 0.2, 0.5, 0.2));
        let pass = Outcome::gated("1", true, "ok");
        let soft = Outcome::soft("8", false, "slower");
        assert_eq!(pass.to_string(), "[PASS] 1: ok");
        assert_eq!(soft.to_string(), "[SOFT-FAIL] 8: slower");
        assert!(!soft.fails_suite());
    }
}
