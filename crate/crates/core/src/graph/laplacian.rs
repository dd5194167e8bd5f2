use std::sync::Arc;

use crate::autodiff::{SparsePattern, Tensor};
use crate::error::{invalid, Result};

use super::Graph;

pub const POWER_ITER_MAX: usize = 500;
pub const POWER_ITER_TOL: f64 = 1e-9;
const EDGELESS_LAMBDA: f64 = 1e-12;

/// Combinatorial Laplacian `D - A` as a dense `[N, N]` tensor.
pub fn laplacian(graph: &Graph) -> Tensor {
    let n = graph.n_nodes();
    let mut l = graph.dense_adjacency();
    for v in l.iter_mut() {
        *v = -*v;
    }
    for i in 0..n {
        let degree: f64 = graph.neighbors(i).iter().map(|&(_, w)| w).sum();
        l[i * n + i] = degree;
    }
    Tensor::new(&[n, n], l).expect("square")
}

/// `2 L / lambda_max - I` on the non-zeros of `L` plus the full diagonal.
///
/// The pattern is fixed for the lifetime of the value; training only moves
/// `values`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledLaplacian {
    pattern: Arc<SparsePattern>,
    values: Vec<f64>,
    lambda_max: f64,
}

impl ScaledLaplacian {
    pub fn new(pattern: Arc<SparsePattern>, values: Vec<f64>, lambda_max: f64) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(invalid(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                pattern.nnz()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("scaled Laplacian values must be finite"));
        }
        Ok(Self {
            pattern,
            values,
            lambda_max,
        })
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn n_nodes(&self) -> usize {
        self.pattern.n_rows()
    }

    pub fn dense(&self) -> Tensor {
        let n = self.n_nodes();
        Tensor::new(&[n, n], self.pattern.to_dense(&self.values)).expect("square")
    }

    /// Same pattern, new values (e.g. after training).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(Arc::clone(&self.pattern), values, self.lambda_max)
    }

    /// Relabels nodes so that new node `perm[i]` is old node `i`; values move
    /// with their entries exactly.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(invalid(format!("not a permutation of {n} nodes")));
        }
        let entries: Vec<(usize, usize, f64)> = self
            .pattern
            .entries()
            .map(|(e, i, j)| (perm[i], perm[j], self.values[e]))
            .collect();
        let pattern = SparsePattern::from_entries(n, n, entries.iter().map(|&(i, j, _)| (i, j)))?;
        let mut values = vec![0.0; pattern.nnz()];
        for &(i, j, v) in &entries {
            values[pattern.find(i, j).expect("entry present")] = v;
        }
        Self::new(Arc::new(pattern), values, self.lambda_max)
    }
}

fn check_symmetric(l: &Tensor) -> Result<usize> {
    if l.rank() != 2 || l.shape()[0] != l.shape()[1] {
        return Err(invalid(format!(
            "Laplacian must be square, got {:?}",
            l.shape()
        )));
    }
    let n = l.shape()[0];
    let d = l.data();
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            if (d[i * n + j] - d[j * n + i]).abs() > 1e-12 * scale {
                return Err(invalid(format!("Laplacian is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(n)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration on the
/// Rayleigh quotient, stopping at relative change `tol` or `POWER_ITER_MAX`.
pub(crate) fn lambda_max_power(l: &[f64], n: usize, tol: f64) -> f64 {
    // deterministic start with components in every direction
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract())
        .collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut lambda = 0.0;
    let mut w = vec![0.0; n];
    for _ in 0..POWER_ITER_MAX {
        for i in 0..n {
            w[i] = (0..n).map(|j| l[i * n + j] * v[j]).sum();
        }
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let nw = norm(&w);
        if nw < 1e-300 {
            return 0.0;
        }
        for i in 0..n {
            v[i] = w[i] / nw;
        }
        let converged = (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    lambda
}

/// Rescales `L` so its spectrum lies in `[-1, 1]`.
///
/// An edgeless graph (`lambda_max < 1e-12`) maps to `-I`.
pub fn scale_laplacian(l: &Tensor, tol: f64) -> Result<ScaledLaplacian> {
    let n = check_symmetric(l)?;
    let d = l.data();
    let lambda = lambda_max_power(d, n, tol);
    let entries = (0..n).flat_map(|i| {
        (0..n).filter_map(move |j| (i == j || d[i * n + j] != 0.0).then_some((i, j)))
    });
    let pattern = Arc::new(SparsePattern::from_entries(n, n, entries)?);
    let values = pattern
        .entries()
        .map(|(_, i, j)| {
            let identity = if i == j { 1.0 } else { 0.0 };
            if lambda < EDGELESS_LAMBDA {
                -identity
            } else {
                2.0 * d[i * n + j] / lambda - identity
            }
        })
        .collect();
    ScaledLaplacian::new(pattern, values, lambda.max(0.0))
}
