//! CSV ingest/emit and on-disk containers for chains and variational posteriors.
//!
//! Every float is written with 17 significant digits so files round-trip
//! exactly. Matrix records are stored as one row per record holding the
//! column-major vectorization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{GibbsChain, GibbsConfig};
use crate::model::PriorHyper;
use crate::timeseries::TimeSeries;
use crate::vb::{VbConfig, VbPosterior};

/// Round-trip exact decimal form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(row: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        row,
        message: message.into(),
    }
}

/// Reads a rectangular numeric CSV (optional header) into a channels × samples
/// series. Columns are channels; row numbers in errors count data rows from 1.
pub fn ingest_csv(path: &Path, fs: f64) -> Result<TimeSeries> {
    let file = File::open(path)?;
    read_timeseries(BufReader::new(file), fs)
}

pub fn read_timeseries<R: Read>(reader: R, fs: f64) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut names: Option<Vec<String>> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut width = 0;
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(rows + 1, e.to_string()))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if line == 0 && rec.iter().all(|c| c.parse::<f64>().is_err()) {
            names = Some(rec.iter().map(str::to_owned).collect());
            width = rec.len();
            continue;
        }
        let row = rows + 1;
        if width == 0 {
            width = rec.len();
        }
        if rec.len() != width {
            return Err(csv_err(row, format!("expected {width} columns, found {}", rec.len())));
        }
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(row, format!("column {}: non-numeric value {cell:?}", col + 1)))?;
            if !v.is_finite() {
                return Err(csv_err(row, format!("column {}: non-finite value {cell}", col + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(csv_err(0, "file contains no data rows"));
    }
    // values are row-major samples × channels
    let data = DMatrix::from_row_slice(rows, width, &values).transpose();
    match names {
        Some(n) => TimeSeries::with_names(data, fs, n),
        None => TimeSeries::new(data, fs),
    }
}

pub fn write_timeseries_csv(path: &Path, ts: &TimeSeries) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", ts.names().join(","))?;
    let data = ts.data();
    let mut line = String::new();
    for t in 0..ts.n_samples() {
        line.clear();
        for c in 0..ts.channels() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&fmt_f64(data[(c, t)]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows of floats with an optional header.
pub fn write_rows_csv<'a, I>(path: &Path, header: Option<&[&str]>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{}", h.join(","))?;
    }
    let mut line = String::new();
    for row in rows {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&fmt_f64(*v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV into rows, skipping a leading header row.
pub fn read_rows_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(File::open(path)?));
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let i = out.len();
        let rec = rec.map_err(|e| csv_err(i + 1, e.to_string()))?;
        if line == 0 && rec.iter().all(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let row = rec
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| csv_err(i + 1, format!("non-numeric value {c:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    write_rows_csv(path, None, rows.iter().map(Vec::as_slice))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let rows = read_rows_csv(path)?;
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("{} is ragged", path.display())));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Plain-data copy of [`PriorHyper`] for manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub mu_mean: Vec<f64>,
    pub mu_cov: Vec<Vec<f64>>,
    pub w_mean: Vec<f64>,
    pub w_cov: Vec<Vec<f64>>,
    pub k0: [Vec<Vec<f64>>; 2],
    pub nu0: [f64; 2],
    pub latent_dim: usize,
}

impl From<&PriorHyper> for PriorRecord {
    fn from(p: &PriorHyper) -> Self {
        Self {
            mu_mean: p.mu_mean.iter().copied().collect(),
            mu_cov: nested(p.mu_cov.matrix()),
            w_mean: p.w_mean.iter().copied().collect(),
            w_cov: nested(p.w_cov.matrix()),
            k0: [nested(p.k0[0].matrix()), nested(p.k0[1].matrix())],
            nu0: p.nu0,
            latent_dim: p.latent_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub file: String,
    /// Shape of each record before vectorization.
    pub rows: usize,
    pub cols: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub kind: String,
    pub layout: String,
    pub view_dims: [usize; 2],
    pub latent_dim: usize,
    pub records: usize,
    pub config: GibbsConfig,
    pub acceptance_rate: f64,
    pub priors: PriorRecord,
    pub w: MatrixFile,
    pub mu: MatrixFile,
    pub sigma: [MatrixFile; 2],
}

const LAYOUT: &str = "one row per record; each row is the column-major vectorization of the record matrix";

fn vectorized<'a>(ms: impl Iterator<Item = &'a DMatrix<f64>>) -> Vec<Vec<f64>> {
    ms.map(|m| m.as_slice().to_vec()).collect()
}

fn save_records(dir: &Path, name: &str, rows: usize, cols: usize, recs: &[Vec<f64>]) -> Result<MatrixFile> {
    write_rows_csv(&dir.join(name), None, recs.iter().map(Vec::as_slice))?;
    Ok(MatrixFile {
        file: name.to_owned(),
        rows,
        cols,
        records: recs.len(),
    })
}

fn load_records(dir: &Path, f: &MatrixFile) -> Result<Vec<DMatrix<f64>>> {
    let rows = read_rows_csv(&dir.join(&f.file))?;
    if rows.len() != f.records {
        return Err(Error::Dimension(format!(
            "{} has {} records, manifest says {}",
            f.file,
            rows.len(),
            f.records
        )));
    }
    rows.into_iter()
        .map(|r| {
            if r.len() != f.rows * f.cols {
                return Err(Error::Dimension(format!("{} record has {} entries", f.file, r.len())));
            }
            Ok(DMatrix::from_vec(f.rows, f.cols, r))
        })
        .collect()
}

/// Writes `chain_manifest.json` and one CSV per parameter into `dir`.
pub fn save_chain(dir: &Path, chain: &GibbsChain, priors: &PriorHyper) -> Result<ChainManifest> {
    let [d1, d2] = chain.view_dims;
    let d = chain.latent_dim();
    let dim = d1 + d2;
    let w = save_records(dir, "w_samples.csv", dim, d, &vectorized(chain.w.iter()))?;
    let mu_recs: Vec<Vec<f64>> = chain.mu.iter().map(|m| m.as_slice().to_vec()).collect();
    let mu = save_records(dir, "mu_samples.csv", dim, 1, &mu_recs)?;
    let s1 = save_records(dir, "sigma1_samples.csv", d1, d1, &vectorized(chain.sigma[0].iter()))?;
    let s2 = save_records(dir, "sigma2_samples.csv", d2, d2, &vectorized(chain.sigma[1].iter()))?;
    let manifest = ChainManifest {
        kind: "gibbs".into(),
        layout: LAYOUT.into(),
        view_dims: chain.view_dims,
        latent_dim: d,
        records: chain.len(),
        config: chain.config.clone(),
        acceptance_rate: chain.acceptance_rate,
        priors: priors.into(),
        w,
        mu,
        sigma: [s1, s2],
    };
    write_json(&dir.join("chain_manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_chain(dir: &Path) -> Result<GibbsChain> {
    let m: ChainManifest = read_json(&dir.join("chain_manifest.json"))?;
    let w = load_records(dir, &m.w)?;
    let mu = load_records(dir, &m.mu)?
        .into_iter()
        .map(|v| DVector::from_column_slice(v.as_slice()))
        .collect();
    let sigma = [load_records(dir, &m.sigma[0])?, load_records(dir, &m.sigma[1])?];
    Ok(GibbsChain {
        w,
        mu,
        sigma,
        view_dims: m.view_dims,
        config: m.config,
        acceptance_rate: m.acceptance_rate,
        elapsed_secs: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbManifest {
    pub kind: String,
    pub view_dims: [usize; 2],
    pub latent_dim: usize,
    pub iterations: usize,
    pub converged: bool,
    pub psi_dof: [f64; 2],
    pub config: VbConfig,
    pub priors: PriorRecord,
    pub files: Vec<String>,
}

/// Writes `vb_manifest.json`, the factor matrices and `elbo_trace.csv`.
pub fn save_vb(dir: &Path, post: &VbPosterior, priors: &PriorHyper, config: &VbConfig) -> Result<VbManifest> {
    let mut files = Vec::new();
    let mut put = |name: String, m: &DMatrix<f64>| -> Result<()> {
        write_matrix_csv(&dir.join(&name), m)?;
        files.push(name);
        Ok(())
    };
    put("w_mean.csv".into(), &post.w_mean)?;
    for (i, c) in post.w_cov.iter().enumerate() {
        put(format!("w_cov_{}.csv", i + 1), c)?;
    }
    put("psi_scale1.csv".into(), &post.psi_scale[0])?;
    put("psi_scale2.csv".into(), &post.psi_scale[1])?;
    put("mu_mean.csv".into(), &DMatrix::from_column_slice(post.dim(), 1, post.mu_mean.as_slice()))?;
    put("mu_cov.csv".into(), &post.mu_cov)?;
    put("z_cov.csv".into(), &post.z_cov)?;
    put("z_gain.csv".into(), &post.z_gain)?;
    put(
        "z_offset.csv".into(),
        &DMatrix::from_column_slice(post.dim(), 1, post.z_offset.as_slice()),
    )?;
    write_elbo_trace(&dir.join("elbo_trace.csv"), &post.elbo_trace)?;
    files.push("elbo_trace.csv".into());
    let manifest = VbManifest {
        kind: "vb".into(),
        view_dims: post.view_dims,
        latent_dim: post.latent_dim(),
        iterations: post.iterations,
        converged: post.converged,
        psi_dof: post.psi_dof,
        config: config.clone(),
        priors: priors.into(),
        files,
    };
    write_json(&dir.join("vb_manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn write_elbo_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let rows: Vec<[f64; 2]> = trace.iter().enumerate().map(|(i, v)| [i as f64, *v]).collect();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,elbo")?;
    for [i, v] in rows {
        writeln!(w, "{},{}", i as usize, fmt_f64(v))?;
    }
    w.flush()?;
    Ok(())
}
