//! `oracle` and `verify`: grid references for the configured model and
//! z-scores of a sampled run against them.

use std::path::Path;

use exciton_pimc::oracle::{finite_m_quadrature, thermal_state, GridSpec};
use exciton_pimc::units::beta_from_kelvin;
use exciton_pimc::SiteMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{BuiltModel, RunConfig};
use crate::experiment::{run_experiment, within_ci, z_scores, RunError, RunOptions, TemperaturePoint};
use crate::output::{write_json, OutputError};

pub const ORACLE_FILE: &str = "oracle.json";
pub const ORACLE_DENSITY_FILE: &str = "oracle_density.csv";
pub const VERIFY_FILE: &str = "verify.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePoint {
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub beta: f64,
    /// Converged thermal reduced density matrix.
    pub exact: SiteMatrix,
    pub boundary_ratio: f64,
    pub ground_energy: f64,
    /// Quadrature of the sampled estimator at the configured bead count.
    pub finite_m: Option<SiteMatrix>,
    /// Why `finite_m` is absent, if it is.
    pub finite_m_note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub version: u32,
    pub config: RunConfig,
    /// True when the grid runs over the dimer's single coupled mode rather
    /// than the model's own coordinates.
    pub reduced_mode: bool,
    pub grid: GridSpec,
    pub points: Vec<OraclePoint>,
    /// Phonon density on the grid points, one vector per temperature.
    #[serde(skip)]
    pub densities: Vec<Vec<f64>>,
}

pub fn run_oracle(config: &RunConfig) -> Result<OracleReport, RunError> {
    let model = config.build_model()?;
    let (reference, grid) = config.oracle_setup(&model)?;
    let reduced_mode = matches!(model, BuiltModel::Harmonic(_));
    let mut points = Vec::new();
    let mut densities = Vec::new();
    for &t in &config.run.temperature_k {
        let beta = beta_from_kelvin(t);
        let state = thermal_state(reference.as_dyn(), beta, &grid).map_err(|e| RunError::Oracle {
            temperature_k: t,
            message: e.to_string(),
        })?;
        let (finite_m, finite_m_note) = match finite_m_quadrature(reference.as_dyn(), beta, config.run.n_beads, &grid) {
            Ok(rho) => (Some(rho), None),
            Err(e) => (None, Some(e.to_string())),
        };
        points.push(OraclePoint {
            temperature_k: t,
            beta,
            exact: state.rho,
            boundary_ratio: state.boundary_ratio,
            ground_energy: state.ground_energy,
            finite_m,
            finite_m_note,
        });
        densities.push(state.density);
    }
    Ok(OracleReport {
        version: 1,
        config: config.clone(),
        reduced_mode,
        grid,
        points,
        densities,
    })
}

/// `oracle.json` plus the grid densities in `oracle_density.csv`.
pub fn write_oracle(report: &OracleReport, dir: &Path) -> Result<(), OutputError> {
    std::fs::create_dir_all(dir).map_err(|e| OutputError {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let path = dir.join(ORACLE_DENSITY_FILE);
    let err = |e: csv::Error| OutputError {
        path: path.clone(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    let mut header = vec!["temperature_K".to_string()];
    header.extend((0..report.grid.n_dof()).map(|d| format!("x{d}")));
    header.push("density".into());
    w.write_record(&header).map_err(err)?;
    for (point, density) in report.points.iter().zip(&report.densities) {
        for (g, value) in density.iter().enumerate() {
            let mut row = vec![point.temperature_k.to_string()];
            row.extend(report.grid.point(g).iter().map(|x| format!("{x:e}")));
            row.push(format!("{value:e}"));
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|e| OutputError {
        path: path.clone(),
        message: e.to_string(),
    })?;
    write_json(report, &dir.join(ORACLE_FILE))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyPoint {
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub z_exact: Vec<Vec<Option<f64>>>,
    pub within_ci_exact: bool,
    pub z_finite_m: Option<Vec<Vec<Option<f64>>>>,
    pub within_ci_finite_m: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub version: u32,
    pub points: Vec<VerifyPoint>,
}

pub fn compare(sampled: &[TemperaturePoint], oracle: &OracleReport) -> VerifyReport {
    let points = sampled
        .iter()
        .zip(&oracle.points)
        .map(|(s, o)| VerifyPoint {
            temperature_k: s.temperature_k,
            z_exact: z_scores(s, &o.exact),
            within_ci_exact: within_ci(s, &o.exact),
            z_finite_m: o.finite_m.as_ref().map(|r| z_scores(s, r)),
            within_ci_finite_m: o.finite_m.as_ref().map(|r| within_ci(s, r)),
        })
        .collect();
    VerifyReport { version: 1, points }
}

/// Samples, computes the references and writes run, oracle and
/// `verify.json` outputs into `dir`.
pub fn run_verify(config: &RunConfig, dir: &Path, options: &RunOptions) -> Result<VerifyReport, RunError> {
    let oracle = run_oracle(config)?;
    let experiment = run_experiment(config, dir, options)?;
    write_oracle(&oracle, dir)?;
    let report = compare(&experiment.summary.points, &oracle);
    write_json(&report, &dir.join(VERIFY_FILE))?;
    Ok(report)
}
