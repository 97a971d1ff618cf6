//! On-disk formats: solution records (JSON) and branch files (CSV).
//!
//! Floats are written in shortest round-trip form, so reading a record back
//! reproduces every coefficient bit for bit.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuation::BranchPoint;
use crate::error::{Error, Result};
use crate::functional::SheetState;
use crate::spectral::FourierSeries;

pub const SOLUTION_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn record_err(path: &Path, reason: impl ToString) -> Error {
    Error::Record {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub iterations: usize,
    pub lambda_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub version: u32,
    pub b: f64,
    pub omega: f64,
    #[serde(rename = "N")]
    pub n_modes: usize,
    #[serde(rename = "N_theta")]
    pub n_theta: usize,
    /// `γ₀..γ_N`, with `γ₀ = b`.
    pub gamma_coeffs: Vec<f64>,
    /// `r₁..r_N`.
    pub r_coeffs: Vec<f64>,
    pub residual_sup: f64,
    pub residual_l2: f64,
    pub solver: SolverInfo,
}

impl SolutionRecord {
    pub fn new(
        state: &SheetState,
        n_theta: usize,
        residual_sup: f64,
        residual_l2: f64,
        solver: SolverInfo,
    ) -> Self {
        let n = state.n_modes();
        let s = state.resized(n);
        Self {
            version: SOLUTION_VERSION,
            b: s.b,
            omega: s.omega,
            n_modes: n,
            n_theta,
            gamma_coeffs: std::iter::once(s.b).chain(s.g.coeffs().iter().copied()).collect(),
            r_coeffs: s.r.coeffs().to_vec(),
            residual_sup,
            residual_l2,
            solver,
        }
    }

    pub fn state(&self) -> Result<SheetState> {
        let n = self.n_modes;
        if self.gamma_coeffs.len() != n + 1 || self.r_coeffs.len() != n {
            return Err(Error::InvalidArgument(format!(
                "N = {n} but {} γ and {} r coefficients",
                self.gamma_coeffs.len(),
                self.r_coeffs.len()
            )));
        }
        let mut state = SheetState::new(
            self.b,
            FourierSeries::cosine(0.0, self.gamma_coeffs[1..].to_vec()),
            FourierSeries::cosine(0.0, self.r_coeffs.clone()),
        )?;
        state.omega = self.omega;
        Ok(state)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| record_err(path, e))?;
        w.write_all(b"\n").map_err(io_err(path))?;
        w.flush().map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let record: Self =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| record_err(path, e))?;
        if record.version != SOLUTION_VERSION {
            return Err(record_err(path, format!("unsupported version {}", record.version)));
        }
        record.state().map_err(|e| record_err(path, e))?;
        Ok(record)
    }
}

pub const BRANCH_HEADER: [&str; 5] = ["step_index", "r1", "b", "residual_sup", "solution_path"];

/// One line of a branch file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub step_index: usize,
    pub r1: f64,
    pub b: f64,
    pub residual_sup: f64,
    /// Solution record, relative to the branch file's directory.
    pub solution_path: String,
}

/// Append-only branch file. Each row points at a solution record stored in
/// `<stem>_points/` beside the CSV.
pub struct BranchWriter {
    path: PathBuf,
    points_dir: PathBuf,
    writer: csv::Writer<File>,
    n_theta: usize,
}

pub fn points_dir(branch_path: &Path) -> PathBuf {
    let stem = branch_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "branch".into());
    branch_path.with_file_name(format!("{stem}_points"))
}

impl BranchWriter {
    pub fn open(path: &Path, n_theta: usize) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut w = Self {
            path: path.to_path_buf(),
            points_dir: points_dir(path),
            writer: csv::WriterBuilder::new().has_headers(false).from_writer(file),
            n_theta,
        };
        if fresh {
            // an empty branch still carries its header
            w.writer
                .write_record(BRANCH_HEADER)
                .map_err(|e| record_err(path, e))?;
            w.flush()?;
        }
        Ok(w)
    }

    pub fn append(&mut self, point: &BranchPoint) -> Result<()> {
        let name = format!("point_{:06}.json", point.step_index);
        let solver = SolverInfo {
            iterations: point.iterations,
            lambda_final: point.lambda_final,
        };
        let record =
            SolutionRecord::new(&point.state, self.n_theta, point.residual_sup, point.residual_l2, solver);
        record.write(&self.points_dir.join(&name))?;
        let dir_name = self
            .points_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.writer
            .serialize(BranchRow {
                step_index: point.step_index,
                r1: point.r1,
                b: point.b,
                residual_sup: point.residual_sup,
                solution_path: format!("{dir_name}/{name}"),
            })
            .map_err(|e| record_err(&self.path, e))?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(io_err(&self.path))
    }
}

pub fn read_branch(path: &Path) -> Result<Vec<BranchRow>> {
    let file = File::open(path).map_err(io_err(path))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|row| row.map_err(|e| record_err(path, e)))
        .collect()
}

/// Solution record referenced by a branch row.
pub fn read_branch_solution(branch_path: &Path, row: &BranchRow) -> Result<SolutionRecord> {
    let base = branch_path.parent().unwrap_or(Path::new(""));
    SolutionRecord::read(&base.join(&row.solution_path))
}

/// Write rows with a header; an empty slice yields a header-only file.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header).map_err(|e| record_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| record_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}
