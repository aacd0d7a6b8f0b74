//! CSV ingestion and preprocessing for the logistic-regression experiment:
//! column standardization followed by PCA projection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// How to read a labeled CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Name of the label column.
    pub label_column: String,
    /// String mapped to label 1; everything else maps to 0. Not needed when
    /// the label column is already numeric 0/1.
    #[serde(default)]
    pub positive_label: Option<String>,
    /// Number of principal components to keep; 0 or absent keeps raw
    /// standardized features.
    #[serde(default)]
    pub pca_components: Option<usize>,
}

/// A fitted PCA basis.
#[derive(Debug, Clone)]
pub struct Pca {
    /// Columns are principal directions, descending eigenvalue order, sign
    /// fixed so the largest-magnitude loading in each column is positive.
    pub components: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    /// Fraction of total variance captured by the kept components.
    pub explained_ratio: f64,
}

/// Standardize columns to zero mean, unit variance. Errors on constant
/// columns, naming the offending one.
pub fn standardize(features: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let n = features.nrows();
    let mut out = features.clone();
    for j in 0..features.ncols() {
        let col = features.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        if var < 1e-24 {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
            return Err(Error::ZeroVariance(name));
        }
        let sd = var.sqrt();
        for i in 0..n {
            out[(i, j)] = (features[(i, j)] - mean) / sd;
        }
    }
    Ok(out)
}

/// Project standardized features onto the top `n_components` principal
/// directions of the sample covariance.
pub fn pca_project(standardized: &DMatrix<f64>, n_components: usize) -> Result<(DMatrix<f64>, Pca)> {
    let d = standardized.ncols();
    let n = standardized.nrows();
    if n_components == 0 || n_components > d {
        return Err(Error::ConfigError(format!(
            "pca_components must be in 1..={d}, got {n_components}"
        )));
    }
    let cov = standardized.transpose() * standardized / (n as f64 - 1.0).max(1.0);
    let eig = cov.symmetric_eigen();
    // descending eigenvalue order
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut components = DMatrix::zeros(d, n_components);
    let mut eigenvalues = DVector::zeros(n_components);
    for (k, &idx) in order.iter().take(n_components).enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(idx).into();
        // sign convention: largest-magnitude loading positive
        let (mut best, mut best_abs) = (0usize, 0.0f64);
        for (i, &x) in v.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if v[best] < 0.0 {
            v.neg_mut();
        }
        components.set_column(k, &v);
        eigenvalues[k] = eig.eigenvalues[idx];
    }
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let kept: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let explained_ratio = if total > 0.0 { kept / total } else { 0.0 };
    let projected = standardized * &components;
    Ok((projected, Pca { components, eigenvalues, explained_ratio }))
}

/// Load a labeled CSV: comma-separated, UTF-8, header row. The label column
/// holds 0/1 or two strings (`positive_label` maps to 1); all other columns
/// must be numeric features. Standardization always runs; PCA runs when
/// `pca_components` is set.
pub fn load_dataset(
    path: &Path,
    config: &DatasetConfig,
) -> Result<(DMatrix<f64>, DVector<f64>, Option<Pca>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::ParseError(e.to_string()))?.iter()
            .map(str::to_string)
            .collect();
    let label_idx = headers
        .iter()
        .position(|h| *h == config.label_column)
        .ok_or_else(|| Error::MissingColumn(config.label_column.clone()))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|(i, _)| *i != label_idx).map(|(_, h)| h.clone()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::ParseError(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Error::ParseError(format!(
                "row has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                labels.push(parse_label(field, config)?);
            } else {
                let v: f64 = field.trim().parse().map_err(|_| Error::NonNumeric {
                    column: headers[i].clone(),
                    value: field.to_string(),
                })?;
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::ParseError("no data rows".into()));
    }
    let n = rows.len();
    let d = rows[0].len();
    let features = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let labels = DVector::from_vec(labels);

    let standardized = standardize(&features, &feature_names)?;
    match config.pca_components {
        Some(k) if k > 0 => {
            let (projected, pca) = pca_project(&standardized, k)?;
            Ok((projected, labels, Some(pca)))
        }
        _ => Ok((standardized, labels, None)),
    }
}

fn parse_label(field: &str, config: &DatasetConfig) -> Result<f64> {
    let trimmed = field.trim();
    if let Some(pos) = &config.positive_label {
        return Ok(if trimmed == pos { 1.0 } else { 0.0 });
    }
    match trimmed {
        "0" => Ok(0.0),
        "1" => Ok(1.0),
        _ => Err(Error::ParseError(format!(
            "label '{trimmed}' is not 0/1 and no positive_label was configured"
        ))),
    }
}
