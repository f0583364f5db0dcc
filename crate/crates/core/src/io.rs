//! On-disk artifacts: datasets and derivative bundles as CSV with a JSON
//! sidecar, plus content hashing for staleness checks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ModelSpec, NoiseSpec, NoisyDataset, Scale};
use crate::denoise::{DerivativeBundle, Method};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// `data.csv` -> `data.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Write through a temporary file and rename, so readers never see a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub model: ModelSpec,
    pub noise: NoiseSpec,
    pub scale: Scale,
    pub nx: usize,
    pub nt: usize,
    /// SHA-256 of the CSV file.
    pub sha256: String,
}

fn header_block(lines: &[(&str, String)]) -> String {
    lines.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn grid_columns(grid: &Grid, columns: &[&Array2<f64>], names: &[&str], header: &str) -> Result<Vec<u8>> {
    let mut out = header.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut head = vec!["x", "t"];
        head.extend_from_slice(names);
        w.write_record(&head)?;
        for j in 0..grid.nt() {
            for i in 0..grid.nx() {
                let mut rec = vec![grid.x()[i].to_string(), grid.t()[j].to_string()];
                rec.extend(columns.iter().map(|c| c[[i, j]].to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
    }
    Ok(out)
}

/// Parse `x,t,...` rows written by [`grid_columns`], returning the grid and
/// the remaining columns as `M x N` arrays.
fn read_grid_columns(path: &Path, expected: &[&str], nx: usize, nt: usize) -> Result<(Grid, Vec<Array2<f64>>)> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let head: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut want = vec!["x", "t"];
    want.extend_from_slice(expected);
    if head != want {
        return Err(bad(format!("columns {head:?}, expected {want:?}")));
    }
    let mut x = vec![0.0; nx];
    let mut t = vec![0.0; nt];
    let mut cols = vec![Array2::zeros((nx, nt)); expected.len()];
    let mut count = 0usize;
    for rec in r.records() {
        let rec = rec?;
        if count >= nx * nt {
            return Err(bad("more rows than the grid holds".into()));
        }
        let (i, j) = (count % nx, count / nx);
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("row {count}: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != want.len() {
            return Err(bad(format!("row {count} has {} fields", vals.len())));
        }
        if j == 0 {
            x[i] = vals[0];
        }
        if i == 0 {
            t[j] = vals[1];
        }
        for (c, v) in cols.iter_mut().zip(&vals[2..]) {
            c[[i, j]] = *v;
        }
        count += 1;
    }
    if count != nx * nt {
        return Err(bad(format!("{count} rows, expected {}", nx * nt)));
    }
    Ok((Grid::new(x, t)?, cols))
}

/// Columns `x, t, u_clean, u_observed`, one row per grid point with `x`
/// varying fastest. Observations are stored in the dataset's scaled units.
pub fn save_dataset(ds: &NoisyDataset, path: &Path) -> Result<DatasetMeta> {
    let grid = ds.grid();
    let header = header_block(&[
        ("model", serde_json::to_string(&ds.model.model)?),
        ("initial", serde_json::to_string(&ds.model.initial)?),
        ("sigma", ds.noise.sigma.to_string()),
        ("gamma", ds.noise.gamma.to_string()),
        ("seed", ds.noise.seed.to_string()),
        ("scale_min", ds.scale.min.to_string()),
        ("scale_max", ds.scale.max.to_string()),
        ("nx", grid.nx().to_string()),
        ("nt", grid.nt().to_string()),
    ]);
    let bytes = grid_columns(
        grid,
        &[&ds.clean.values, &ds.observed.values],
        &["u_clean", "u_observed"],
        &header,
    )?;
    write_atomic(path, &bytes)?;
    let meta = DatasetMeta {
        model: ds.model.clone(),
        noise: ds.noise,
        scale: ds.scale,
        nx: grid.nx(),
        nt: grid.nt(),
        sha256: sha256_hex(&bytes),
    };
    write_json(&sidecar_path(path), &meta)?;
    Ok(meta)
}

/// Load a dataset and check it against the hash recorded in its sidecar.
pub fn load_dataset(path: &Path) -> Result<NoisyDataset> {
    let meta: DatasetMeta = read_json(&sidecar_path(path))?;
    let actual = hash_file(path)?;
    if actual != meta.sha256 {
        return Err(Error::StaleArtifact {
            path: path.to_path_buf(),
            reason: "dataset contents changed since its sidecar was written; regenerate it".into(),
        });
    }
    let (grid, mut cols) = read_grid_columns(path, &["u_clean", "u_observed"], meta.nx, meta.nt)?;
    let observed = cols.pop().expect("two columns");
    let clean = cols.pop().expect("two columns");
    Ok(NoisyDataset {
        clean: Field::new(grid.clone(), clean, "u")?,
        observed: Field::new(grid, observed, "U")?,
        model: meta.model,
        noise: meta.noise,
        scale: meta.scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub method: Method,
    pub nx: usize,
    pub nt: usize,
    /// Hash of the dataset CSV the bundle was computed from.
    pub source_sha256: String,
    pub sha256: String,
}

/// Columns `x, t, u, u_t, u_x, u_xx` in original units.
pub fn save_bundle(bundle: &DerivativeBundle, source_sha256: &str, path: &Path) -> Result<BundleMeta> {
    let grid = bundle.grid();
    let header = header_block(&[
        ("method", bundle.method.to_string()),
        ("source_sha256", source_sha256.to_string()),
    ]);
    let bytes = grid_columns(
        grid,
        &[
            &bundle.u.values,
            &bundle.u_t.values,
            &bundle.u_x.values,
            &bundle.u_xx.values,
        ],
        &["u", "u_t", "u_x", "u_xx"],
        &header,
    )?;
    write_atomic(path, &bytes)?;
    let meta = BundleMeta {
        method: bundle.method,
        nx: grid.nx(),
        nt: grid.nt(),
        source_sha256: source_sha256.to_string(),
        sha256: sha256_hex(&bytes),
    };
    write_json(&sidecar_path(path), &meta)?;
    Ok(meta)
}

pub fn load_bundle(path: &Path) -> Result<(DerivativeBundle, BundleMeta)> {
    let meta: BundleMeta = read_json(&sidecar_path(path))?;
    if hash_file(path)? != meta.sha256 {
        return Err(Error::StaleArtifact {
            path: path.to_path_buf(),
            reason: "bundle contents changed since its sidecar was written; rerun denoise".into(),
        });
    }
    let (grid, cols) = read_grid_columns(path, &["u", "u_t", "u_x", "u_xx"], meta.nx, meta.nt)?;
    let mut it = cols.into_iter();
    let mut next = |label: &str| Field::new(grid.clone(), it.next().expect("four columns"), label);
    let bundle = DerivativeBundle::new(next("u")?, next("u_t")?, next("u_x")?, next("u_xx")?, meta.method)?;
    Ok((bundle, meta))
}
