//! Output files: `summary.json`, `batches.csv`, `density.csv`, `density.gp`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::experiment::{PointData, RunSummary};

pub const SUMMARY_FILE: &str = "summary.json";
pub const BATCHES_FILE: &str = "batches.csv";
pub const DENSITY_FILE: &str = "density.csv";
pub const GNUPLOT_FILE: &str = "density.gp";

#[derive(Debug, Error)]
#[error("cannot write {}: {message}", path.display())]
pub struct OutputError {
    pub path: PathBuf,
    pub message: String,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> OutputError + '_ {
    move |e| OutputError {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| OutputError {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, OutputError> {
    csv::Writer::from_path(path).map_err(|e| OutputError {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |e| OutputError {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One row per batch per matrix element.
pub fn write_batches(data: &[PointData], path: &Path) -> Result<(), OutputError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["temperature_K", "stream", "batch", "i", "j", "mean"])
        .map_err(&err)?;
    for point in data {
        let n = point.accumulator.dim();
        for batch in point.accumulator.batches() {
            for i in 0..n {
                for j in 0..n {
                    w.write_record([
                        point.temperature_k.to_string(),
                        batch.stream.to_string(),
                        batch.index.to_string(),
                        i.to_string(),
                        j.to_string(),
                        format!("{:e}", batch.mean[i * n + j]),
                    ])
                    .map_err(&err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err(path))
}

/// Bin centres, normalised density and per-bin probability. Within one
/// temperature `mass` sums to one over the in-range samples.
pub fn write_density(data: &[PointData], n_dof: usize, path: &Path) -> Result<(), OutputError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    let mut header = vec!["temperature_K".to_string()];
    header.extend((0..n_dof).map(|d| format!("x{d}")));
    header.extend(["density".to_string(), "mass".to_string()]);
    w.write_record(&header).map_err(&err)?;
    for point in data {
        let Some(hist) = &point.histogram else { continue };
        let Ok(density) = hist.normalize() else { continue };
        for (flat, value) in density.values.iter().enumerate() {
            let mut row = vec![point.temperature_k.to_string()];
            row.extend(bin_centre(&density.centers, flat).iter().map(|x| format!("{x:e}")));
            row.push(format!("{value:e}"));
            row.push(format!("{:e}", value * density.bin_volume));
            w.write_record(&row).map_err(&err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Centre of bin `flat` in row-major order, last axis fastest.
fn bin_centre(centers: &[Vec<f64>], mut flat: usize) -> Vec<f64> {
    let mut x = vec![0.0; centers.len()];
    for d in (0..centers.len()).rev() {
        let n = centers[d].len();
        x[d] = centers[d][flat % n];
        flat /= n;
    }
    x
}

/// Whitespace-separated data for gnuplot: one `index` block per temperature,
/// and for two coordinates a blank line between scan lines so `splot`
/// reads the block as a grid.
pub fn write_gnuplot(data: &[PointData], n_dof: usize, path: &Path) -> Result<(), OutputError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let err = io_err(path);
    let coords: Vec<String> = (0..n_dof).map(|d| format!("x{d}")).collect();
    writeln!(w, "# columns: {} density", coords.join(" ")).map_err(&err)?;
    let mut first = true;
    for point in data {
        let Some(hist) = &point.histogram else { continue };
        let Ok(density) = hist.normalize() else { continue };
        if !first {
            write!(w, "\n\n").map_err(&err)?;
        }
        first = false;
        writeln!(w, "# temperature_K = {}", point.temperature_k).map_err(&err)?;
        let last = density.centers.last().map_or(1, Vec::len);
        for (flat, value) in density.values.iter().enumerate() {
            let x: Vec<String> = bin_centre(&density.centers, flat)
                .iter()
                .map(|x| format!("{x:e}"))
                .collect();
            writeln!(w, "{} {value:e}", x.join(" ")).map_err(&err)?;
            if n_dof > 1 && (flat + 1) % last == 0 && flat + 1 < density.values.len() {
                writeln!(w).map_err(&err)?;
            }
        }
    }
    w.flush().map_err(&err)
}

/// Writes all four output files into `dir`, creating it if needed.
pub fn write_outputs(summary: &RunSummary, data: &[PointData], dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let n_dof = summary.n_dof;
    write_batches(data, &dir.join(BATCHES_FILE))?;
    write_density(data, n_dof, &dir.join(DENSITY_FILE))?;
    write_gnuplot(data, n_dof, &dir.join(GNUPLOT_FILE))?;
    // last, so a complete summary implies the other files exist
    write_json(summary, &dir.join(SUMMARY_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_centres_are_row_major() {
        let centers = vec![vec![0.0, 1.0], vec![10.0, 20.0, 30.0]];
        assert_eq!(bin_centre(&centers, 0), vec![0.0, 10.0]);
        assert_eq!(bin_centre(&centers, 2), vec![0.0, 30.0]);
        assert_eq!(bin_centre(&centers, 4), vec![1.0, 20.0]);
    }
}
