use serde::{Deserialize, Serialize};

use super::FitScope;
use crate::dataset::{Column, ColumnKind, Dataset};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the matching eigenvectors (as rows), unsorted,
/// plus the number of sweeps used. Iteration stops when the off-diagonal
/// Frobenius norm drops below `1e-12 * max(1, ||A||_F)`.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>, usize) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let frob = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * frob.max(1.0);
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off < tol {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for row in v.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors, sweeps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    /// Kept components as rows, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    /// Every eigenvalue of the covariance, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub sweeps: usize,
}

impl PcaModel {
    /// Fit on row-major data with population covariance.
    pub fn fit(columns: Vec<String>, rows: &[Vec<f64>], n_components: usize) -> Result<Self> {
        let d = columns.len();
        if n_components == 0 || n_components > d {
            return Err(Error::config("transforms", format!("n_components = {n_components} must lie in [1, {d}]")));
        }
        if rows.is_empty() {
            return Err(Error::Fit("pca needs at least one row".into()));
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in i..d {
                    cov[i][j] += di * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i][j] /= n;
                cov[j][i] = cov[i][j];
            }
        }
        let (values, vectors, sweeps) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let total: f64 = eigenvalues.iter().sum();
        let components = order[..n_components]
            .iter()
            .map(|&i| {
                let mut c = vectors[i].clone();
                let big = (0..d).fold(0, |b, j| if c[j].abs() > c[b].abs() { j } else { b });
                if c[big] < 0.0 {
                    c.iter_mut().for_each(|x| *x = -*x);
                }
                c
            })
            .collect();
        let explained_variance_ratio =
            eigenvalues[..n_components].iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
        Ok(PcaModel { columns, mean, components, eigenvalues, explained_variance_ratio, sweeps })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn output_names(&self) -> Vec<String> {
        (0..self.n_components()).map(|j| format!("pc{j}")).collect()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((b, x), m)| b * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (zj, c) in z.iter().zip(&self.components) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += zj * ci;
            }
        }
        x
    }

    pub(super) fn fit_dataset(ds: &Dataset, scope: &FitScope, columns: &[String], k: usize) -> Result<Self> {
        let cols: Vec<&[f64]> = columns.iter().map(|c| ds.require_nums(c, "transforms")).collect::<Result<_>>()?;
        let rows: Vec<Vec<f64>> = scope.rows().iter().map(|&i| cols.iter().map(|c| c[i]).collect()).collect();
        if rows.iter().flatten().any(|x| x.is_nan()) {
            return Err(Error::Fit("pca input has missing values".into()));
        }
        Self::fit(columns.to_vec(), &rows, k)
    }

    pub(super) fn transform_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let cols: Vec<&[f64]> = self
            .columns
            .iter()
            .map(|c| {
                ds.column(c)
                    .and_then(|c| c.nums())
                    .ok_or_else(|| Error::TransformMismatch(format!("pca input column {c:?} is absent")))
            })
            .collect::<Result<_>>()?;
        let mut out_cols = vec![Vec::with_capacity(ds.n_rows()); self.n_components()];
        for i in 0..ds.n_rows() {
            let x: Vec<f64> = cols.iter().map(|c| c[i]).collect();
            for (o, z) in out_cols.iter_mut().zip(self.project(&x)) {
                o.push(z);
            }
        }
        let mut out = ds.clone();
        for c in &self.columns {
            out.remove_column(c);
        }
        for (name, values) in self.output_names().into_iter().zip(out_cols) {
            out.push_column(Column::num(name, ColumnKind::Numeric, values))?;
        }
        Ok(out)
    }
}
