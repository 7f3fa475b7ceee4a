use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Factorization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationManifest {
    pub k: usize,
    pub seed: u64,
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective_history: Vec<f64>,
    pub degenerate: Vec<usize>,
    /// Digest of the waypoints matrix the factors were fitted to.
    pub input_digest: Option<String>,
    pub u_file: String,
    pub t_file: String,
}

fn write_dense<W: Write>(mut out: W, header: &[String], labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for (i, label) in labels.iter().enumerate() {
        write!(out, "{label}")?;
        for v in m.row(i).iter() {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn read_dense(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_owned).collect();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut it = rec.iter();
        labels.push(it.next().unwrap_or_default().to_owned());
        for v in it {
            data.push(v.parse::<f64>().map_err(|_| Error::Format(format!("{}: bad number `{v}`", path.display())))?);
        }
    }
    if data.len() != labels.len() * header.len() {
        return Err(Error::Format(format!("{}: ragged rows", path.display())));
    }
    let m = DMatrix::from_row_slice(labels.len(), header.len(), &data);
    Ok((header, labels, m))
}

/// Writes `manifest.json`, `U.csv` (user rows) and `T.csv` (component rows
/// over tower columns) into `dir`.
pub fn write_factorization(
    dir: &Path,
    f: &Factorization,
    rows: &[String],
    cols: &[String],
    input_digest: Option<&str>,
) -> Result<FactorizationManifest> {
    if rows.len() != f.u.nrows() || cols.len() != f.t.ncols() {
        return Err(Error::Input("row/column labels do not match factor shapes".into()));
    }
    fs::create_dir_all(dir)?;
    let comp_names: Vec<String> = (0..f.k).map(|c| format!("c{c}")).collect();
    let u_header: Vec<String> = std::iter::once("user_id".to_owned()).chain(comp_names.iter().cloned()).collect();
    write_dense(BufWriter::new(File::create(dir.join("U.csv"))?), &u_header, rows, &f.u)?;
    let t_header: Vec<String> = std::iter::once("component".to_owned()).chain(cols.iter().cloned()).collect();
    write_dense(BufWriter::new(File::create(dir.join("T.csv"))?), &t_header, &comp_names, &f.t)?;
    let manifest = FactorizationManifest {
        k: f.k,
        seed: f.seed,
        restart: f.restart,
        iterations: f.iterations_run,
        converged: f.converged,
        objective_history: f.objective_history.clone(),
        degenerate: f.degenerate.clone(),
        input_digest: input_digest.map(str::to_owned),
        u_file: "U.csv".into(),
        t_file: "T.csv".into(),
    };
    let mut out = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.flush()?;
    Ok(manifest)
}

/// Reads a factorization written by [`write_factorization`], returning it
/// with its user and tower labels.
pub fn read_factorization(dir: &Path) -> Result<(Factorization, FactorizationManifest, Vec<String>, Vec<String>)> {
    let manifest: FactorizationManifest = serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
    let (_, users, u) = read_dense(&dir.join(&manifest.u_file))?;
    let (towers, _, t) = read_dense(&dir.join(&manifest.t_file))?;
    if u.ncols() != manifest.k || t.nrows() != manifest.k {
        return Err(Error::Format(format!("{}: factor shapes disagree with k", dir.display())));
    }
    let f = Factorization {
        u,
        t,
        k: manifest.k,
        seed: manifest.seed,
        objective_history: manifest.objective_history.clone(),
        iterations_run: manifest.iterations,
        converged: manifest.converged,
        restart: manifest.restart,
        degenerate: manifest.degenerate.clone(),
    };
    Ok((f, manifest, users, towers))
}
