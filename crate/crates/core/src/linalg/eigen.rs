//! Lowest eigenpairs of symmetric pencils `K x = mu G x` with `K` positive
//! semi-definite and `G` positive definite.
//!
//! Two routes: a dense Cholesky reduction for small systems, and a shifted
//! block inverse iteration with Rayleigh-Ritz for larger sparse ones. Both
//! return `G`-orthonormal eigenvectors in ascending eigenvalue order.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cg::{jacobi, pcg, CgSettings};
use super::{axpy, dot, norm, LinearOperator};
use crate::error::{Error, Result, SolverDiagnostic};

#[derive(Debug, Clone, Default)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// `|K x - mu G x| / ((|K| + |mu| |G|) |x|)` per pair.
    pub residuals: Vec<f64>,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn truncate(&mut self, len: usize) {
        self.values.truncate(len);
        self.vectors.truncate(len);
        self.residuals.truncate(len);
    }
}

fn residual<K: LinearOperator + ?Sized, G: LinearOperator + ?Sized>(
    k: &K,
    g: &G,
    knorm: f64,
    gnorm: f64,
    mu: f64,
    x: &[f64],
) -> f64 {
    let kx = k.apply(x);
    let gx = g.apply(x);
    let r: Vec<f64> = kx.iter().zip(&gx).map(|(a, b)| a - mu * b).collect();
    let scale = (knorm + mu.abs() * gnorm) * norm(x);
    if scale > 0.0 {
        norm(&r) / scale
    } else {
        norm(&r)
    }
}

/// All eigenpairs through a dense Cholesky reduction `L^{-1} K L^{-T}`.
pub fn dense_generalized<K: LinearOperator + ?Sized, G: LinearOperator + ?Sized>(
    k: &K,
    g: &G,
) -> Result<EigenPairs> {
    let kd = k.to_dense();
    let gd = g.to_dense();
    let n = kd.nrows();
    let chol = nalgebra::Cholesky::new(gd).ok_or_else(|| {
        Error::Invariant("Gram operator of the eigenproblem is not positive definite".into())
    })?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&kd)
        .ok_or_else(|| Error::Invariant("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Invariant("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lt = l.transpose();
    let sorted = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    let x = lt
        .solve_upper_triangular(&sorted)
        .ok_or_else(|| Error::Invariant("singular Cholesky factor".into()))?;
    let (knorm, gnorm) = (k.max_abs_row_sum(), g.max_abs_row_sum());
    let mut pairs = EigenPairs::default();
    for (j, &idx) in order.iter().enumerate() {
        let v: Vec<f64> = x.column(j).iter().copied().collect();
        let mu = eig.eigenvalues[idx];
        pairs.residuals.push(residual(k, g, knorm, gnorm, mu, &v));
        pairs.values.push(mu);
        pairs.vectors.push(v);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy)]
pub struct SubspaceSettings {
    /// Ritz values at or below this count as kernel.
    pub kernel_tol: f64,
    /// Number of converged pairs wanted beyond the kernel.
    pub extra: usize,
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub initial_block: usize,
    /// Shift relative to `tr K / tr G`.
    pub relative_shift: f64,
    pub seed: u64,
}

impl Default for SubspaceSettings {
    fn default() -> Self {
        Self {
            kernel_tol: 1e-8,
            extra: 1,
            residual_tol: 1e-10,
            max_iterations: 400,
            initial_block: 8,
            relative_shift: 1e-2,
            seed: 0x5eed,
        }
    }
}

struct Shifted<'a, K: ?Sized, G: ?Sized> {
    k: &'a K,
    g: &'a G,
    sigma: f64,
}

impl<K: LinearOperator + ?Sized, G: LinearOperator + ?Sized> LinearOperator for Shifted<'_, K, G> {
    fn dim(&self) -> usize {
        self.k.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.k.apply_into(x, y);
        let gx = self.g.apply(x);
        axpy(self.sigma, &gx, y);
    }
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Modified Gram-Schmidt in the `G` inner product, two passes. Columns that
/// collapse are replaced by fresh random vectors.
fn g_orthonormalize<G: LinearOperator + ?Sized>(
    g: &G,
    cols: &mut [Vec<f64>],
    rng: &mut ChaCha8Rng,
) {
    let n = g.dim();
    let mut gcols: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for i in 0..cols.len() {
        let mut attempts = 0;
        loop {
            let start = dot(&cols[i], &g.apply(&cols[i])).max(0.0).sqrt();
            for _pass in 0..2 {
                for j in 0..i {
                    let c = dot(&gcols[j], &cols[i]);
                    let (head, tail) = cols.split_at_mut(i);
                    axpy(-c, &head[j], &mut tail[0]);
                }
            }
            let gi = g.apply(&cols[i]);
            let nrm = dot(&cols[i], &gi).max(0.0).sqrt();
            if nrm > 1e-10 * start && nrm > 0.0 {
                cols[i].iter_mut().for_each(|v| *v /= nrm);
                gcols.push(gi.into_iter().map(|v| v / nrm).collect());
                break;
            }
            attempts += 1;
            assert!(attempts < 16, "cannot complete a G-orthonormal block");
            cols[i] = random_vector(rng, n);
        }
    }
}

fn trace<K: LinearOperator + ?Sized>(k: &K) -> f64 {
    k.diagonal().iter().sum()
}

/// Lowest eigenpairs by shifted block inverse iteration.
///
/// Returns every pair with eigenvalue below `kernel_tol` plus `extra` more,
/// all converged to `residual_tol`. The block grows automatically when the
/// kernel turns out larger than the current block.
pub fn lowest_generalized<K: LinearOperator + ?Sized, G: LinearOperator + ?Sized>(
    k: &K,
    g: &G,
    settings: SubspaceSettings,
) -> Result<EigenPairs> {
    let n = k.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let (knorm, gnorm) = (k.max_abs_row_sum(), g.max_abs_row_sum());
    let (tk, tg) = (trace(k), trace(g));
    let sigma = settings.relative_shift * if tk > 0.0 { tk / tg } else { 1.0 };
    let shifted = Shifted { k, g, sigma };
    let kd = k.diagonal();
    let gd = g.diagonal();
    let inv_diag = jacobi(
        &kd.iter()
            .zip(&gd)
            .map(|(a, b)| a + sigma * b)
            .collect::<Vec<_>>(),
    );
    let cg = CgSettings {
        tolerance: 1e-13,
        max_iterations: 20 * n + 100,
    };

    let mut block = settings.initial_block.max(settings.extra + 2).min(n);
    let mut x: Vec<Vec<f64>> = (0..block).map(|_| random_vector(&mut rng, n)).collect();
    g_orthonormalize(g, &mut x, &mut rng);
    let mut thetas: Vec<f64> = vec![f64::NAN; block];
    let mut last = (0, f64::INFINITY);

    for iter in 0..settings.max_iterations {
        // Inverse iteration step, one independent solve per column.
        let ys: Vec<Result<Vec<f64>>> = x
            .par_iter()
            .zip(thetas.par_iter())
            .map(|(xi, &theta)| {
                let rhs = g.apply(xi);
                let mut y: Vec<f64> = if theta.is_finite() {
                    xi.iter().map(|v| v / (theta.max(0.0) + sigma)).collect()
                } else {
                    vec![0.0; n]
                };
                match pcg(&shifted, &inv_diag, &rhs, &mut y, cg, None) {
                    Ok(_) => Ok(y),
                    // An inexact step still enriches the subspace.
                    Err(Error::Solver(_)) => Ok(y),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut y = ys.into_iter().collect::<Result<Vec<_>>>()?;
        g_orthonormalize(g, &mut y, &mut rng);

        // Rayleigh-Ritz on the G-orthonormal block.
        let ky: Vec<Vec<f64>> = y.par_iter().map(|v| k.apply(v)).collect();
        let b = y.len();
        let small = DMatrix::from_fn(b, b, |i, j| 0.5 * (dot(&y[i], &ky[j]) + dot(&y[j], &ky[i])));
        let eig = SymmetricEigen::new(small);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
        x = order
            .iter()
            .map(|&col| {
                let mut v = vec![0.0; n];
                for (r, yr) in y.iter().enumerate() {
                    axpy(eig.eigenvectors[(r, col)], yr, &mut v);
                }
                v
            })
            .collect();
        thetas = order.iter().map(|&c| eig.eigenvalues[c]).collect();

        let kernel = thetas
            .iter()
            .take_while(|&&t| t <= settings.kernel_tol)
            .count();
        let need = kernel + settings.extra;
        if need + 2 > block && block < n {
            block = (2 * block).min(n);
            while x.len() < block {
                x.push(random_vector(&mut rng, n));
                thetas.push(f64::NAN);
            }
            g_orthonormalize(g, &mut x, &mut rng);
            continue;
        }
        let need = need.min(x.len());
        let residuals: Vec<f64> = x[..need]
            .par_iter()
            .zip(&thetas[..need])
            .map(|(v, &mu)| residual(k, g, knorm, gnorm, mu, v))
            .collect();
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        last = (iter + 1, worst);
        if iter >= 2 && worst <= settings.residual_tol {
            let mut vectors = x;
            vectors.truncate(need);
            thetas.truncate(need);
            return Ok(EigenPairs {
                values: thetas,
                vectors,
                residuals,
            });
        }
    }
    Err(Error::Solver(SolverDiagnostic {
        solver: "block inverse iteration",
        iterations: last.0,
        residual: last.1,
        detail: format!("block size {block}, shift {sigma:.3e}"),
    }))
}
