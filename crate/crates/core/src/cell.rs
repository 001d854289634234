//! Degenerate cell problems on `V^perp`, the Weyl-type decomposition of flux
//! fields, the orthogonal projector onto
//! `W = { psi : div((a1)^{1/2} psi) = 0 }`, and the elementary correctors.
//!
//! A cell functional is a nodal load vector `l` with `<F, w> = l . w`. The
//! discrete divergence of a flux `psi` is the load
//! `l_I = sum_q w_q psi(y_q) . grad phi_I(y_q)`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientTensor, InnerProductChoice};
use crate::error::{Error, Result};
use crate::kernel::KernelBasis;
use crate::linalg::{dot, jacobi, norm, pcg, CgSettings, Csr};
use crate::mesh::{
    assemble_stiffness, check_dims, DiscreteGradientMap, PeriodicCellMesh, StiffnessPart,
};

/// Relative solvability threshold `max_k |l . b_k| <= tol |l|`.
pub const SOLVABILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorField {
    pub field: Vec<f64>,
    /// `|K1 v - P^T l| / |l|`.
    pub residual: f64,
    /// `|P_V v|_{H^1} / |v|_{H^1}`.
    pub orthogonality: f64,
    pub solvability_defect: f64,
    pub iterations: usize,
}

impl CorrectorField {
    pub fn zero(len: usize) -> Self {
        Self {
            field: vec![0.0; len],
            residual: 0.0,
            orthogonality: 0.0,
            solvability_defect: 0.0,
            iterations: 0,
        }
    }
}

/// A flux field projected onto `W` with its certified divergence residual.
#[derive(Debug, Clone, PartialEq)]
pub struct WFlux {
    pub values: Vec<f64>,
    /// Discrete `H^{-1}` norm of `div((a1)^{1/2} psi)`.
    pub divergence_residual: f64,
    pub in_w: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeylDecomposition {
    pub u1: CorrectorField,
    /// `|eta - (a1)^{1/2} grad u1|_2 / |eta|_2`.
    pub reconstruction_residual: f64,
}

pub struct CellSolver<'a> {
    mesh: &'a PeriodicCellMesh,
    basis: &'a KernelBasis,
    a1: Vec<f64>,
    a1_sqrt: Vec<f64>,
    k1: Csr,
    grad: DiscreteGradientMap,
    inv_diag: Vec<f64>,
    weights: Vec<f64>,
    settings: CgSettings,
}

impl<'a> CellSolver<'a> {
    pub fn new(
        mesh: &'a PeriodicCellMesh,
        a: &CoefficientTensor,
        basis: &'a KernelBasis,
    ) -> Result<Self> {
        check_dims(mesh, a)?;
        let k1 = assemble_stiffness(mesh, a, StiffnessPart::A1)?;
        let inv_diag = jacobi(&k1.diagonal());
        Ok(Self {
            mesh,
            basis,
            a1: a.a1().to_vec(),
            a1_sqrt: a.a1_sqrt(),
            k1,
            grad: DiscreteGradientMap::new(mesh),
            inv_diag,
            weights: mesh.quad_weights(),
            settings: CgSettings::default(),
        })
    }

    pub fn with_settings(mut self, settings: CgSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn mesh(&self) -> &PeriodicCellMesh {
        self.mesh
    }

    pub fn basis(&self) -> &KernelBasis {
        self.basis
    }

    pub fn stiffness(&self) -> &Csr {
        &self.k1
    }

    pub fn a1_sqrt(&self) -> &[f64] {
        &self.a1_sqrt
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        self.grad.apply(v)
    }

    pub fn apply_sqrt(&self, psi: &[f64]) -> Vec<f64> {
        self.mesh.apply_cellwise(&self.a1_sqrt, psi)
    }

    pub fn apply_a1(&self, psi: &[f64]) -> Vec<f64> {
        self.mesh.apply_cellwise(&self.a1, psi)
    }

    /// Weak divergence load `l_I = sum_q w_q psi_q . grad phi_I`.
    pub fn divergence_load(&self, psi: &[f64]) -> Vec<f64> {
        let w = self.mesh.flux_width();
        let weighted: Vec<f64> = psi
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.weights[i / w])
            .collect();
        self.grad.apply_transpose(&weighted)
    }

    /// Divergence load together with its round-off scale `| |Grad|^T (w |psi|) |`.
    fn divergence_load_scaled(&self, psi: &[f64]) -> (Vec<f64>, f64) {
        let w = self.mesh.flux_width();
        let m = self.grad.matrix();
        let mut abs = vec![0.0; m.ncols()];
        for (i, v) in psi.iter().enumerate() {
            let wv = (v * self.weights[i / w]).abs();
            if wv == 0.0 {
                continue;
            }
            for (j, g) in m.row(i) {
                abs[j] += g.abs() * wv;
            }
        }
        (self.divergence_load(psi), norm(&abs))
    }

    /// Solves the cell problem for the load `div psi`.
    ///
    /// Loads below `1e-14` of their round-off scale are cancellation noise
    /// of an exactly divergence-free flux and give the zero solution.
    pub fn solve_flux_load(&self, psi: &[f64]) -> Result<CorrectorField> {
        let (l, scale) = self.divergence_load_scaled(psi);
        if norm(&l) <= 1e-14 * scale {
            return Ok(CorrectorField::zero(l.len()));
        }
        self.solve_checked(&l, scale)
    }

    /// `max_k |l . b_k|`.
    pub fn check_solvability(&self, l: &[f64]) -> f64 {
        self.basis
            .vectors()
            .iter()
            .map(|b| dot(l, b).abs())
            .fold(0.0, f64::max)
    }

    /// Equation residual `|K1 v - P^T l| / |l|` of a candidate solution.
    pub fn residual_of(&self, v: &[f64], l: &[f64]) -> f64 {
        let rhs = self.basis.restrict_load(l);
        let kv = self.k1.apply(v);
        let r: Vec<f64> = kv.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let scale = norm(l);
        if scale > 0.0 {
            norm(&r) / scale
        } else {
            norm(&r)
        }
    }

    /// The unique `v` in `V^perp` with `B[v, w] = <F, w>` for all `w` in `V^perp`.
    pub fn solve_degenerate_cell(&self, l: &[f64]) -> Result<CorrectorField> {
        self.solve_checked(l, norm(l))
    }

    /// Solve with the solvability defect measured against `reference`, the
    /// round-off scale of the load.
    fn solve_checked(&self, l: &[f64], reference: f64) -> Result<CorrectorField> {
        let lnorm = norm(l);
        let defect = self.check_solvability(l);
        if lnorm == 0.0 {
            return Ok(CorrectorField::zero(l.len()));
        }
        let tolerance = SOLVABILITY_TOL * lnorm.max(reference);
        if defect > tolerance {
            return Err(Error::Solvability { defect, tolerance });
        }
        let rhs = self.basis.restrict_load(l);
        let mut x = vec![0.0; l.len()];
        let deflate = |r: &mut [f64]| self.basis.deflate(r);
        let outcome = pcg(
            &self.k1,
            &self.inv_diag,
            &rhs,
            &mut x,
            self.settings,
            Some(&deflate),
        )
        .map_err(|e| match e {
            Error::Solver(mut diag) => {
                diag.detail = format!(
                    "{}; first nonzero cell eigenvalue {:.3e}",
                    diag.detail, self.basis.next_eigenvalue
                );
                Error::Solver(diag)
            }
            other => other,
        })?;
        let v = self.basis.project_perp(&x);
        let vnorm = self.basis.gram().norm(&v);
        let orthogonality = if vnorm > 0.0 {
            self.basis.gram().norm(&self.basis.project_v(&v)) / vnorm
        } else {
            0.0
        };
        Ok(CorrectorField {
            residual: self.residual_of(&v, l),
            field: v,
            orthogonality,
            solvability_defect: defect,
            iterations: outcome.iterations,
        })
    }

    /// `u1` in `V^perp` with `eta = (a1)^{1/2} grad u1`, for `eta` orthogonal to `W`.
    pub fn weyl_decompose(&self, eta: &[f64], tolerance: f64) -> Result<WeylDecomposition> {
        let u1 = self.solve_flux_load(&self.apply_sqrt(eta))?;
        let recon = self.apply_sqrt(&self.gradient(&u1.field));
        let diff: Vec<f64> = eta.iter().zip(&recon).map(|(a, b)| a - b).collect();
        let abs = self.mesh.flux_norm(&diff);
        let scale = self.mesh.flux_norm(eta);
        let rel = if scale > 0.0 { abs / scale } else { abs };
        if rel > tolerance {
            // eta - (a1)^{1/2} grad u1 is exactly P_W eta
            return Err(Error::Decomposition {
                residual: rel,
                w_component: abs,
            });
        }
        Ok(WeylDecomposition {
            u1,
            reconstruction_residual: rel,
        })
    }

    /// Orthogonal projection onto `W` in the flux `L^2` product.
    pub fn project_onto_w(&self, psi: &[f64]) -> Result<WFlux> {
        let u1 = self.solve_flux_load(&self.apply_sqrt(psi))?;
        let recon = self.apply_sqrt(&self.gradient(&u1.field));
        let values: Vec<f64> = psi.iter().zip(&recon).map(|(a, b)| a - b).collect();
        let divergence_residual = self.divergence_residual(&values)?;
        let scale = self.mesh.flux_norm(psi).max(1.0);
        Ok(WFlux {
            in_w: divergence_residual <= 1e-8 * scale,
            values,
            divergence_residual,
        })
    }

    pub fn divergence_residual(&self, psi: &[f64]) -> Result<f64> {
        self.basis
            .gram()
            .dual_norm(&self.divergence_load(&self.apply_sqrt(psi)))
    }

    /// Values `b_{k,i}(y_q)` of kernel vector `k` at every quadrature point.
    pub fn kernel_at_quads(&self, k: usize) -> Vec<f64> {
        let (n, nq) = (self.mesh.components(), self.mesh.quad_per_element());
        let b = self.basis.vector(k);
        let mut out = vec![0.0; self.mesh.quad_count() * n];
        for e in 0..self.mesh.element_count() {
            let nodes = self.mesh.element_nodes(e);
            for l in 0..nq {
                let phi = self.mesh.shape_values(l);
                for i in 0..n {
                    out[(e * nq + l) * n + i] =
                        nodes.iter().zip(phi).map(|(&v, p)| p * b[v * n + i]).sum();
                }
            }
        }
        out
    }

    /// Macro-gradient field `E_{ij}(y) = b_{k,i}(y) delta_{jq}` at quadrature points.
    pub fn macro_gradient_field(&self, k: usize, q: usize) -> Vec<f64> {
        let (n, d) = (self.mesh.components(), self.mesh.dim());
        let vals = self.kernel_at_quads(k);
        let mut e = vec![0.0; self.mesh.flux_len()];
        for (pt, bv) in vals.chunks(n).enumerate() {
            for i in 0..n {
                e[pt * n * d + i * d + q] = bv[i];
            }
        }
        e
    }

    /// Elementary corrector: `chi` in `V^perp` with `div(a1 (E + grad chi)) = 0`.
    pub fn solve_corrector(&self, k: usize, q: usize) -> Result<CorrectorField> {
        let flux: Vec<f64> = self
            .apply_a1(&self.macro_gradient_field(k, q))
            .into_iter()
            .map(|v| -v)
            .collect();
        self.solve_flux_load(&flux)
    }

    /// All `m d` elementary correctors, solved concurrently.
    pub fn build_bank(&self, geometry_hash: &str) -> Result<CorrectorBank> {
        let (m, d) = (self.basis.dim(), self.mesh.dim());
        let keys: Vec<(usize, usize)> = (0..m).flat_map(|k| (0..d).map(move |q| (k, q))).collect();
        let entries = keys
            .par_iter()
            .map(|&(k, q)| {
                self.solve_corrector(k, q).map(|c| CorrectorEntry {
                    kernel_index: k,
                    direction: q,
                    corrector: c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CorrectorBank {
            geometry_hash: geometry_hash.to_string(),
            cells: self.mesh.cells_per_axis(),
            components: self.mesh.components(),
            dim: d,
            kernel_dim: m,
            product: self.basis.gram().product(),
            entries,
        })
    }

    /// `tau^{kq} = (a1)^{1/2} (E^{kq} + grad chi^{kq})` for every bank entry.
    pub fn elementary_fluxes(&self, bank: &CorrectorBank) -> Result<ElementaryFluxes> {
        bank.check_complete()?;
        let taus: Vec<Vec<f64>> = bank
            .entries
            .par_iter()
            .map(|entry| {
                let mut field = self.macro_gradient_field(entry.kernel_index, entry.direction);
                for (f, g) in field.iter_mut().zip(self.gradient(&entry.corrector.field)) {
                    *f += g;
                }
                self.apply_sqrt(&field)
            })
            .collect();
        let count = taus.len();
        let mut h = vec![0.0; count * count];
        for a in 0..count {
            for b in a..count {
                let v = self.mesh.flux_inner(&taus[a], &taus[b]);
                h[a * count + b] = v;
                h[b * count + a] = v;
            }
        }
        Ok(ElementaryFluxes {
            kernel_dim: bank.kernel_dim,
            dim: bank.dim,
            taus,
            generalized: h,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorEntry {
    pub kernel_index: usize,
    pub direction: usize,
    pub corrector: CorrectorField,
}

/// Elementary correctors keyed by (kernel index, macro direction), tied to
/// one cell geometry through its hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorBank {
    pub geometry_hash: String,
    pub cells: usize,
    pub components: usize,
    pub dim: usize,
    pub kernel_dim: usize,
    pub product: InnerProductChoice,
    /// Sorted by `(kernel_index, direction)`.
    pub entries: Vec<CorrectorEntry>,
}

impl CorrectorBank {
    pub fn get(&self, k: usize, q: usize) -> Option<&CorrectorField> {
        let idx = k * self.dim + q;
        self.entries
            .get(idx)
            .filter(|e| e.kernel_index == k && e.direction == q)
            .map(|e| &e.corrector)
    }

    pub fn check_complete(&self) -> Result<()> {
        for k in 0..self.kernel_dim {
            for q in 0..self.dim {
                if self.get(k, q).is_none() {
                    return Err(Error::Invariant(format!(
                        "corrector bank lacks entry (k={k}, q={q})"
                    )));
                }
            }
        }
        if self.entries.len() != self.kernel_dim * self.dim {
            return Err(Error::Invariant(
                "corrector bank has surplus entries".into(),
            ));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Reads a bank and checks that it belongs to the expected geometry.
    pub fn read(path: &Path, geometry_hash: &str) -> Result<Self> {
        let bank: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if bank.geometry_hash != geometry_hash {
            return Err(Error::Config(format!(
                "corrector bank geometry hash {} does not match {geometry_hash}",
                bank.geometry_hash
            )));
        }
        bank.check_complete()?;
        Ok(bank)
    }
}

/// Fluxes `tau^{kq}` and their Gram matrix
/// `H_{(kq),(k'q')} = (tau^{kq}, tau^{k'q'})_2`; index `k d + q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementaryFluxes {
    pub kernel_dim: usize,
    pub dim: usize,
    pub taus: Vec<Vec<f64>>,
    pub generalized: Vec<f64>,
}

impl ElementaryFluxes {
    pub fn h(&self, k: usize, q: usize, kk: usize, qq: usize) -> f64 {
        let c = self.kernel_dim * self.dim;
        self.generalized[(k * self.dim + q) * c + kk * self.dim + qq]
    }

    /// `T u` for a cell slice with macro gradients `g[k * d + q] = d_q U_k`.
    pub fn combine(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.taus[0].len()];
        for (c, tau) in g.iter().zip(&self.taus) {
            if *c != 0.0 {
                crate::linalg::axpy(*c, tau, &mut out);
            }
        }
        out
    }
}
