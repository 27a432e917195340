//! Normalized Laplacian, cyclic Jacobi eigensolver, and global node encoding.

use crate::asc_graph::ScatterGraph;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Default cap on eigensolver input size.
pub const DEFAULT_EIGEN_CAP: usize = 64;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenpairs in ascending eigenvalue order; column `k` of `vectors`
/// belongs to `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

impl SpectralDecomposition {
    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.size()).map(|r| self.vectors.get(r, k)).collect()
    }
}

/// `I - D^{-1/2} A D^{-1/2}` for an arbitrary symmetric adjacency matrix.
/// Isolated nodes get a unit diagonal.
pub fn laplacian_from_adjacency(adj: &Tensor) -> Result<Tensor> {
    let n = adj.rows();
    if !adj.is_matrix() || adj.cols() != n {
        return Err(Error::shape("laplacian", format!("{:?} is not square", adj.shape())));
    }
    check_symmetric(adj)?;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = adj.row_slice(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let identity = if i == j { 1.0 } else { 0.0 };
            l.set(i, j, identity - inv_sqrt[i] * adj.get(i, j) * inv_sqrt[j]);
        }
    }
    Ok(l)
}

/// Normalized Laplacian of the graph's unweighted topology (every pair
/// adjacent, so all degrees are `K - 1`).
pub fn normalized_laplacian(g: &ScatterGraph) -> Result<Tensor> {
    let k = g.node_count();
    if k < 2 {
        return Err(Error::DegenerateGraph(k));
    }
    let mut adj = Tensor::zeros(k, k);
    for &(i, j) in g.edges() {
        adj.set(i, j, 1.0);
        adj.set(j, i, 1.0);
    }
    laplacian_from_adjacency(&adj)
}

fn check_symmetric(m: &Tensor) -> Result<()> {
    let n = m.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if worst > SYMMETRY_TOL {
        return Err(Error::Asymmetric(worst));
    }
    Ok(())
}

fn max_off_diagonal(a: &[f64], n: usize) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            m = m.max(a[i * n + j].abs());
        }
    }
    m
}

pub fn eigendecompose_symmetric(m: &Tensor) -> Result<SpectralDecomposition> {
    eigendecompose_symmetric_capped(m, DEFAULT_EIGEN_CAP)
}

/// Cyclic Jacobi rotations until every off-diagonal entry is at most
/// `1e-12` (scaled by the largest entry when that exceeds 1).
pub fn eigendecompose_symmetric_capped(m: &Tensor, cap: usize) -> Result<SpectralDecomposition> {
    let n = m.rows();
    if !m.is_matrix() || m.cols() != n {
        return Err(Error::shape("eigendecompose", format!("{:?} is not square", m.shape())));
    }
    if n > cap {
        return Err(Error::MatrixTooLarge { size: n, cap });
    }
    check_symmetric(m)?;
    if !m.all_finite() {
        return Err(Error::NonFinite("eigendecompose input".into()));
    }

    let mut a = m.data().to_vec();
    // symmetrize exactly so rotations see a truly symmetric matrix
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = avg;
            a[j * n + i] = avg;
        }
    }
    let scale = a.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = OFF_DIAGONAL_TOL * scale;
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let mut converged = max_off_diagonal(&a, n) <= tol;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, n, p, q, c, s, t);
            }
        }
        converged = max_off_diagonal(&a, n) <= tol;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Tensor::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut vec: Vec<f64> = (0..n).map(|r| v[r * n + src]).collect();
        fix_sign(&mut vec);
        for (r, x) in vec.into_iter().enumerate() {
            vectors.set(r, col, x);
        }
    }
    Ok(SpectralDecomposition { values, vectors })
}

#[allow(clippy::too_many_arguments)]
fn rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let apq = a[p * n + q];
    a[p * n + p] -= t * apq;
    a[q * n + q] += t * apq;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[r * n + p];
        let arq = a[r * n + q];
        let new_rp = c * arp - s * arq;
        let new_rq = s * arp + c * arq;
        a[r * n + p] = new_rp;
        a[p * n + r] = new_rp;
        a[r * n + q] = new_rq;
        a[q * n + r] = new_rq;
    }
    for r in 0..n {
        let vrp = v[r * n + p];
        let vrq = v[r * n + q];
        v[r * n + p] = c * vrp - s * vrq;
        v[r * n + q] = s * vrp + c * vrq;
    }
}

/// Flips `vec` so its first component of (near-)largest magnitude is positive.
fn fix_sign(vec: &mut [f64]) {
    let max = vec.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(pivot) = vec.iter().find(|x| x.abs() >= max - 1e-10) {
        if *pivot < 0.0 {
            for x in vec.iter_mut() {
                *x = -*x;
            }
        }
    }
}

/// Nodes sorted by their attribute rows; ties keep input order.
fn canonical_order(g: &ScatterGraph) -> Vec<usize> {
    let features = g.features();
    let mut order: Vec<usize> = (0..g.node_count()).collect();
    order.sort_by(|&a, &b| {
        features[a]
            .iter()
            .zip(&features[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// Global node encoding: row `k` holds node `k`'s entries in the `n`
/// eigenvectors of the normalized Laplacian with smallest eigenvalues,
/// zero-padded when `n > K`.
///
/// The complete topology has a `(K-1)`-fold repeated eigenvalue, so the
/// basis inside that eigenspace is a free choice. The decomposition is run
/// with nodes in attribute order, which makes the chosen basis follow the
/// nodes under any relabeling.
pub fn gne(g: &ScatterGraph, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Config("GNE width must be at least 1".into()));
    }
    let k = g.node_count();
    let order = canonical_order(g);
    let lap = normalized_laplacian(g)?;
    let mut canon = Tensor::zeros(k, k);
    for (a, &ia) in order.iter().enumerate() {
        for (b, &ib) in order.iter().enumerate() {
            canon.set(a, b, lap.get(ia, ib));
        }
    }
    let eig = eigendecompose_symmetric(&canon)?;
    let mut out = Tensor::zeros(k, n);
    for (pos, &node) in order.iter().enumerate() {
        for col in 0..n.min(k) {
            out.set(node, col, eig.vectors.get(pos, col));
        }
    }
    Ok(out)
}
