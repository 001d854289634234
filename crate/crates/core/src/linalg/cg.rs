use super::{axpy, dot, norm, LinearOperator};
use crate::error::{Error, Result, SolverDiagnostic};

/// Accepted excess over the target when restarts no longer reduce the residual.
pub const STALL_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    /// Target for `|b - A x| / |b|`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CgOutcome {
    pub iterations: usize,
    /// True relative residual `|b - A x| / |b|` at exit.
    pub residual: f64,
}

/// Jacobi preconditioner; rows with a vanishing diagonal are left unscaled.
pub fn jacobi(diagonal: &[f64]) -> Vec<f64> {
    diagonal
        .iter()
        .map(|&d| {
            if d.abs() > f64::MIN_POSITIVE {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect()
}

/// Diagonally preconditioned conjugate gradients on `A x = b`, starting from the
/// content of `x`.
///
/// `deflate`, when given, is applied to every residual; for a singular but
/// consistent system it removes round-off drift into the null space.
/// Optional projection applied to every iterate, e.g. to remove a null space.
pub type Deflation<'a> = &'a dyn Fn(&mut [f64]);

pub fn pcg<A: LinearOperator + ?Sized>(
    a: &A,
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    settings: CgSettings,
    deflate: Option<Deflation<'_>>,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0usize;

    let true_residual = |x: &[f64], r: &mut [f64], ap: &mut [f64]| {
        a.apply_into(x, ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        if let Some(f) = deflate {
            f(r);
        }
        norm(r) / bnorm
    };

    let mut rel = true_residual(x, &mut r, &mut ap);
    let mut stalled = false;
    // A restart from the true residual guards against recurrence drift.
    for _restart in 0..4 {
        if rel <= settings.tolerance {
            return Ok(CgOutcome {
                iterations,
                residual: rel,
            });
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < settings.max_iterations {
            a.apply_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Solver(SolverDiagnostic {
                    solver: "pcg",
                    iterations,
                    residual: norm(&r) / bnorm,
                    detail: format!("non-positive curvature p^T A p = {pap:.3e}"),
                }));
            }
            let alpha = rz / pap;
            axpy(alpha, &p, x);
            axpy(-alpha, &ap, &mut r);
            if let Some(f) = deflate {
                f(&mut r);
            }
            iterations += 1;
            if norm(&r) / bnorm <= settings.tolerance {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let previous = rel;
        rel = true_residual(x, &mut r, &mut ap);
        if iterations >= settings.max_iterations {
            break;
        }
        if rel > 0.5 * previous {
            stalled = true;
            break;
        }
    }
    // Stagnation at the round-off floor just above the target is accepted;
    // the outcome carries the attained residual.
    if rel <= settings.tolerance || (stalled && rel <= STALL_FACTOR * settings.tolerance) {
        return Ok(CgOutcome {
            iterations,
            residual: rel,
        });
    }
    let detail = if stalled {
        "stagnated at the round-off floor".to_string()
    } else if iterations >= settings.max_iterations {
        format!("iteration budget {} exhausted", settings.max_iterations)
    } else {
        "restart limit reached".to_string()
    };
    Err(Error::Solver(SolverDiagnostic {
        solver: "pcg",
        iterations,
        residual: rel,
        detail,
    }))
}
