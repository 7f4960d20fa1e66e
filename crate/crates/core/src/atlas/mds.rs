use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::error::{LxlError, Result};

/// Euclidean distance matrix of the embedding rows.
pub fn pairwise_distances(e: &EmbeddingSet) -> Result<DMatrix<f64>> {
    let n = e.len();
    if n < 2 {
        return Err(LxlError::Validation("pairwise distances need at least two vectors".into()));
    }
    let v = e.vectors();
    let rows = crate::parallel::map_range(n, |i| {
        (0..n)
            .map(|j| v[i].iter().zip(&v[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(n, n, |i, j| if i <= j { rows[i][j] } else { rows[j][i] }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdsConfig {
    pub max_iter: usize,
    /// Stop once the relative stress improvement falls below this.
    pub tolerance: f64,
}

impl Default for MdsConfig {
    fn default() -> Self {
        MdsConfig {
            max_iter: 300,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atlas2D {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub stress: f64,
    /// Stress of the initial configuration followed by one entry per accepted iteration.
    pub stress_log: Vec<f64>,
}

fn row_distance(x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum::<f64>().sqrt()
}

/// Raw stress: sum over pairs of squared differences between target and embedded distances.
pub fn stress(d: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let n = d.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = d[(i, j)] - row_distance(x, i, j);
            s += r * r;
        }
    }
    s
}

fn check_distances(d: &DMatrix<f64>) -> Result<()> {
    let n = d.nrows();
    if n != d.ncols() || n == 0 {
        return Err(LxlError::Validation("distance matrix must be square and non-empty".into()));
    }
    for i in 0..n {
        if d[(i, i)].abs() > 1e-12 {
            return Err(LxlError::Validation(format!("distance matrix diagonal is non-zero at {i}")));
        }
        for j in 0..n {
            if !d[(i, j)].is_finite() || d[(i, j)] < 0.0 {
                return Err(LxlError::Validation(format!("invalid distance at ({i},{j})")));
            }
            if (d[(i, j)] - d[(j, i)]).abs() > 1e-9 * (1.0 + d[(i, j)].abs()) {
                return Err(LxlError::Validation(format!("distance matrix is asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Classical scaling: top eigenvectors of the double-centred squared distances.
pub fn torgerson(d: &DMatrix<f64>, dims: usize) -> DMatrix<f64> {
    let n = d.nrows();
    let sq = d.map(|v| v * v);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let all = sq.mean();
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + all));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut x = DMatrix::zeros(n, dims);
    for (c, &k) in order.iter().take(dims).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        // Fix the sign so the result does not depend on the eigensolver's choice.
        let pivot = (0..n).fold(0, |m, i| if v[i].abs() > v[m].abs() + 1e-12 { i } else { m });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            x[(i, c)] = sign * lambda * v[i];
        }
    }
    x
}

fn centre(x: &mut DMatrix<f64>) {
    for c in 0..x.ncols() {
        let m = x.column(c).mean();
        x.column_mut(c).add_scalar_mut(-m);
    }
}

/// One Guttman transform.
fn guttman(d: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, dims) = x.shape();
    let rows = crate::parallel::map_range(n, |i| {
        let mut out = vec![0.0; dims];
        let mut diag = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let dist = row_distance(x, i, j);
            if dist > 1e-12 {
                let b = -d[(i, j)] / dist;
                diag -= b;
                for (c, o) in out.iter_mut().enumerate() {
                    *o += b * x[(j, c)];
                }
            }
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o = (*o + diag * x[(i, c)]) / n as f64;
        }
        out
    });
    DMatrix::from_fn(n, dims, |i, c| rows[i][c])
}

/// SMACOF from a Torgerson start. Each step is a Guttman transform; a step that would raise the
/// stress is rejected and ends the run, so the log never increases.
pub fn smacof(d: &DMatrix<f64>, dims: usize, config: &MdsConfig) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_distances(d)?;
    let mut x = torgerson(d, dims);
    centre(&mut x);
    let mut s = stress(d, &x);
    let mut log = vec![s];
    for _ in 0..config.max_iter {
        if s <= 0.0 {
            break;
        }
        let mut next = guttman(d, &x);
        centre(&mut next);
        let ns = stress(d, &next);
        if ns > s {
            break;
        }
        let improvement = (s - ns) / s;
        x = next;
        s = ns;
        log.push(s);
        if improvement < config.tolerance {
            break;
        }
    }
    Ok((x, log))
}

/// Projects a labelled distance matrix to 2D.
pub fn mds_project(d: &DMatrix<f64>, ids: &[String], labels: &[usize], config: &MdsConfig) -> Result<Atlas2D> {
    if ids.len() != d.nrows() || labels.len() != d.nrows() {
        return Err(LxlError::shape("atlas rows", d.nrows(), (ids.len(), labels.len())));
    }
    let (x, stress_log) = smacof(d, 2, config)?;
    Ok(Atlas2D {
        ids: ids.to_vec(),
        labels: labels.to_vec(),
        coords: (0..x.nrows()).map(|i| [x[(i, 0)], x[(i, 1)]]).collect(),
        stress: *stress_log.last().expect("log starts with the initial stress"),
        stress_log,
    })
}

impl Atlas2D {
    /// Projects an embedding set.
    pub fn from_embeddings(e: &EmbeddingSet, config: &MdsConfig) -> Result<Atlas2D> {
        mds_project(&pairwise_distances(e)?, e.ids(), e.labels(), config)
    }
}
