//! Principal component analysis over the scaled feature matrix.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_TARGET: f64 = 0.90;

/// Slack on the cumulative-ratio comparison so a target of 1.0 is reachable
/// despite rounding in the eigenvalue sum.
const RETENTION_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// All principal axes as unit rows, ordered by decreasing variance.
    /// Only the first `retained` are used by [`PcaModel::transform`].
    pub components: Vec<Vec<f64>>,
    /// Population variance along each axis (covariance normalized by n).
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub retained: usize,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (unsorted) and eigenvectors as the columns of the second value.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn validate_matrix(matrix: &[Vec<f64>]) -> Result<usize> {
    if matrix.len() < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 rows, got {}", matrix.len())));
    }
    let d = matrix[0].len();
    if d == 0 {
        return Err(Error::InvalidInput("PCA needs at least one column".into()));
    }
    for row in matrix {
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("PCA input contains non-finite values".into()));
        }
    }
    Ok(d)
}

pub fn pca_fit(matrix: &[Vec<f64>], variance_target: f64) -> Result<PcaModel> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::Config(format!("variance target {variance_target} outside (0, 1]")));
    }
    let d = validate_matrix(matrix)?;
    let n = matrix.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| crate::stats::pairwise_sum(&matrix.iter().map(|r| r[j]).collect::<Vec<_>>()) / n)
        .collect();
    let centered: Vec<Vec<f64>> = matrix
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let s: f64 = centered.iter().map(|r| r[i] * r[j]).sum::<f64>() / n;
            cov[i][j] = s;
            cov[j][i] = s;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let components: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let mut axis: Vec<f64> = vectors.iter().map(|row| row[i]).collect();
            let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
            axis.iter_mut().for_each(|x| *x /= norm);
            // Sign convention: the largest-magnitude coordinate (first on ties) is positive.
            let pivot = axis
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (k, x)| if x.abs() > best.1.abs() { (k, *x) } else { best });
            if pivot.1 < 0.0 {
                axis.iter_mut().for_each(|x| *x = -*x);
            }
            axis
        })
        .collect();

    let total: f64 = eigenvalues.iter().sum();
    let explained_variance_ratio: Vec<f64> = if total > 0.0 {
        eigenvalues.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; d]
    };
    let mut retained = d;
    let mut cumulative = 0.0;
    for (i, r) in explained_variance_ratio.iter().enumerate() {
        cumulative += r;
        if cumulative >= variance_target - RETENTION_SLACK {
            retained = i + 1;
            break;
        }
    }
    if total == 0.0 {
        retained = 1;
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
        retained,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Copy of the model that keeps `r` components (clamped to `1..=dim`).
    pub fn with_retained(&self, r: usize) -> Self {
        Self {
            retained: r.clamp(1, self.dim()),
            ..self.clone()
        }
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: row.len() });
        }
        Ok(self.components[..self.retained]
            .iter()
            .map(|axis| axis.iter().zip(row.iter().zip(&self.mean)).map(|(a, (x, m))| a * (x - m)).sum())
            .collect())
    }

    pub fn transform(&self, matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        matrix.iter().map(|r| self.transform_row(r)).collect()
    }

    /// Maps reduced coordinates back to the input space.
    pub fn inverse_transform_row(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, axis) in coords.iter().zip(&self.components) {
            for (o, a) in out.iter_mut().zip(axis) {
                *o += c * a;
            }
        }
        out
    }

    pub fn cumulative_explained(&self) -> f64 {
        self.explained_variance_ratio[..self.retained].iter().sum()
    }

    pub fn write_reduced_csv<W: Write>(&self, writer: W, ids: &[String], reduced: &[Vec<f64>]) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["ap_id".to_owned()];
        header.extend((1..=self.retained).map(|i| format!("pc{i}")));
        out.write_record(&header)?;
        for (id, row) in ids.iter().zip(reduced) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("reduced csv", e))?;
        Ok(())
    }
}

/// Mean squared reconstruction error, averaged over rows and summed over
/// coordinates, so that on the fit data it equals the sum of discarded eigenvalues.
pub fn reconstruction_error(model: &PcaModel, matrix: &[Vec<f64>]) -> Result<f64> {
    if matrix.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for row in matrix {
        let coords = model.transform_row(row)?;
        let back = model.inverse_transform_row(&coords);
        total += crate::stats::squared_distance(row, &back);
    }
    Ok(total / matrix.len() as f64)
}
