//! Two-scale limit problem on the Galerkin space spanned by
//! `Phi_I(x) b_k(y)`, with `Phi_I` the interior Q1 shape functions of a
//! Dirichlet macro mesh and `b_k` the kernel basis.
//!
//! The bilinear form is
//! `(T u, T w) + (a0 grad_y u, grad_y w) + lambda (rho u, w)` where the flux
//! operator `T` acts through the elementary fluxes:
//! `T u(x, .) = sum_{k,q} d_q U_k(x) tau^{kq}`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{CellSolver, ElementaryFluxes};
use crate::coefficients::{CoefficientTensor, DensityField, ForcingSpec};
use crate::element::{self, ReferenceRule};
use crate::error::{Error, Result};
use crate::kernel::KernelBasis;
use crate::linalg::{dot, norm, BandedCholesky, Csr};
use crate::mesh::{assemble_mass, assemble_stiffness, PeriodicCellMesh, StiffnessPart};

/// Structured Q1 mesh of `(0, L)^d` with homogeneous Dirichlet boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMesh {
    pub dim: usize,
    pub cells: usize,
    pub length: f64,
}

impl MacroMesh {
    pub fn new(dim: usize, cells: usize, length: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) || cells < 2 || !(length > 0.0) {
            return Err(Error::Config(format!(
                "macro mesh needs d in {{1, 2}}, M >= 2 and L > 0 (got d={dim}, M={cells}, L={length})"
            )));
        }
        Ok(Self { dim, cells, length })
    }

    pub fn h(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn element_count(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn interior_count(&self) -> usize {
        (self.cells - 1).pow(self.dim as u32)
    }

    fn element_index(&self, e: usize) -> [usize; 2] {
        crate::mesh::multi_index(self.dim, self.cells, e)
    }

    /// Grid index of interior node `i`; axis 0 fastest.
    pub fn interior_node(&self, i: usize) -> [usize; 2] {
        let idx = crate::mesh::multi_index(self.dim, self.cells - 1, i);
        let mut out = [0; 2];
        for j in 0..self.dim {
            out[j] = idx[j] + 1;
        }
        out
    }

    /// Interior index of the grid node `idx`, `None` on the boundary.
    pub fn interior_index(&self, idx: [usize; 2]) -> Option<usize> {
        let mut out = 0;
        let mut stride = 1;
        for &k in idx.iter().take(self.dim) {
            if k == 0 || k >= self.cells {
                return None;
            }
            out += (k - 1) * stride;
            stride *= self.cells - 1;
        }
        Some(out)
    }

    /// Interior indices of the corners of element `e` (corner bit order).
    pub fn element_dofs(&self, e: usize) -> [Option<usize>; 4] {
        let idx = self.element_index(e);
        let mut out = [None; 4];
        for (c, o) in out.iter_mut().enumerate().take(element::corners(self.dim)) {
            let mut node = [0; 2];
            for j in 0..self.dim {
                node[j] = idx[j] + ((c >> j) & 1);
            }
            *o = self.interior_index(node);
        }
        out
    }

    pub fn element_origin(&self, e: usize) -> [f64; 2] {
        let idx = self.element_index(e);
        [idx[0] as f64 * self.h(), idx[1] as f64 * self.h()]
    }

    /// Element containing `x` and the local coordinates in it.
    pub fn locate(&self, x: &[f64]) -> (usize, [f64; 2]) {
        let mut e = 0;
        let mut stride = 1;
        let mut t = [0.0; 2];
        for j in 0..self.dim {
            let s = (x[j] / self.h()).clamp(0.0, self.cells as f64);
            let k = (s.floor() as usize).min(self.cells - 1);
            t[j] = s - k as f64;
            e += k * stride;
            stride *= self.cells;
        }
        (e, t)
    }
}

/// Index map of the product space: dof `I m + k` for interior node `I`, kernel vector `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoScaleSpace {
    pub macro_mesh: MacroMesh,
    pub kernel_dim: usize,
}

pub fn build_two_scale_space(macro_mesh: MacroMesh, basis: &KernelBasis) -> TwoScaleSpace {
    TwoScaleSpace {
        macro_mesh,
        kernel_dim: basis.dim(),
    }
}

impl TwoScaleSpace {
    pub fn dof_count(&self) -> usize {
        self.macro_mesh.interior_count() * self.kernel_dim
    }

    pub fn dof(&self, node: usize, k: usize) -> usize {
        node * self.kernel_dim + k
    }
}

/// Cell integrals entering the zeroth-order block and the load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBlocks {
    pub kernel_dim: usize,
    /// `b_k^T K0 b_k'`
    pub a0: Vec<f64>,
    /// `b_k^T M_rho b_k'`
    pub rho: Vec<f64>,
    /// `int f_y c . b_k`
    pub forcing: Vec<f64>,
}

impl CellBlocks {
    pub fn new(
        mesh: &PeriodicCellMesh,
        a: &CoefficientTensor,
        rho: &DensityField,
        basis: &KernelBasis,
        forcing: &ForcingSpec,
    ) -> Result<Self> {
        let k0 = assemble_stiffness(mesh, a, StiffnessPart::A0)?;
        let mr = assemble_mass(mesh, rho)?;
        let m = basis.dim();
        let n = mesh.components();
        let k0b: Vec<Vec<f64>> = basis.vectors().iter().map(|b| k0.apply(b)).collect();
        let mrb: Vec<Vec<f64>> = basis.vectors().iter().map(|b| mr.apply(b)).collect();
        let mut a0 = vec![0.0; m * m];
        let mut r = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                a0[i * m + j] =
                    0.5 * (dot(basis.vector(i), &k0b[j]) + dot(basis.vector(j), &k0b[i]));
                r[i * m + j] =
                    0.5 * (dot(basis.vector(i), &mrb[j]) + dot(basis.vector(j), &mrb[i]));
            }
        }
        // nodal load of the cellwise-constant f_y c, exact for Q1 test functions
        let nq = mesh.quad_per_element();
        let mut load = vec![0.0; mesh.dof_count()];
        for e in 0..mesh.element_count() {
            let fy = forcing.cell_part.cell_value(e);
            if fy == 0.0 {
                continue;
            }
            for l in 0..nq {
                let w = mesh.quad_weight(l) * fy;
                for (&node, &phi) in mesh.element_nodes(e).iter().zip(mesh.shape_values(l)) {
                    for i in 0..n {
                        load[node * n + i] += w * phi * forcing.components[i];
                    }
                }
            }
        }
        let f = basis.vectors().iter().map(|b| dot(b, &load)).collect();
        Ok(Self {
            kernel_dim: m,
            a0,
            rho: r,
            forcing: f,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LimitSystem {
    pub space: TwoScaleSpace,
    pub matrix: Csr,
    pub load: Vec<f64>,
    pub lambda: f64,
}

fn macro_rule(dim: usize) -> ReferenceRule {
    ReferenceRule::gauss(dim, 2)
}

/// Assembles the limit matrix and load with 2-point Gauss per macro axis.
/// Triplets and load entries produced by one macro element.
type ElementContribution = (Vec<(usize, usize, f64)>, Vec<(usize, f64)>);

pub fn assemble_limit_system(
    space: TwoScaleSpace,
    fluxes: &ElementaryFluxes,
    blocks: &CellBlocks,
    lambda: f64,
    forcing: &ForcingSpec,
) -> Result<LimitSystem> {
    let mm = space.macro_mesh;
    let (d, m) = (mm.dim, space.kernel_dim);
    if fluxes.kernel_dim != m || blocks.kernel_dim != m || fluxes.dim != d {
        return Err(Error::Invariant(format!(
            "limit assembly needs {m} kernel vectors in d={d}; correctors cover {} in d={}, cell blocks {}",
            fluxes.kernel_dim, fluxes.dim, blocks.kernel_dim
        )));
    }
    let rule = macro_rule(d);
    let h = mm.h();
    let vol = h.powi(d as i32);
    let nc = element::corners(d);
    let ldim = nc * m;
    let zeroth: Vec<f64> = blocks
        .a0
        .iter()
        .zip(&blocks.rho)
        .map(|(a, r)| a + lambda * r)
        .collect();

    let per_element: Vec<ElementContribution> = (0..mm.element_count())
        .into_par_iter()
        .map(|e| {
            let dofs = mm.element_dofs(e);
            let origin = mm.element_origin(e);
            let mut local = vec![0.0; ldim * ldim];
            let mut rhs = vec![0.0; ldim];
            for (t, &wr) in rule.points.iter().zip(&rule.weights) {
                let w = wr * vol;
                let phi = element::q1_values(d, t);
                let mut grads = element::q1_gradients(d, t);
                for g in grads.iter_mut() {
                    for v in g.iter_mut() {
                        *v /= h;
                    }
                }
                let x = [origin[0] + t[0] * h, origin[1] + t[1] * h];
                let fx = forcing.macro_part.eval(&x[..d], mm.length);
                for a in 0..nc {
                    for k in 0..m {
                        let row = a * m + k;
                        rhs[row] += w * fx * phi[a] * blocks.forcing[k];
                        for b in 0..nc {
                            for kk in 0..m {
                                let mut s = phi[a] * phi[b] * zeroth[k * m + kk];
                                for q in 0..d {
                                    for qq in 0..d {
                                        s += grads[a][q] * grads[b][qq] * fluxes.h(k, q, kk, qq);
                                    }
                                }
                                local[row * ldim + b * m + kk] += w * s;
                            }
                        }
                    }
                }
            }
            let mut triplets = Vec::new();
            let mut loads = Vec::new();
            for a in 0..nc {
                let Some(ia) = dofs[a] else { continue };
                for k in 0..m {
                    loads.push((space.dof(ia, k), rhs[a * m + k]));
                    for b in 0..nc {
                        let Some(ib) = dofs[b] else { continue };
                        for kk in 0..m {
                            triplets.push((
                                space.dof(ia, k),
                                space.dof(ib, kk),
                                local[(a * m + k) * ldim + b * m + kk],
                            ));
                        }
                    }
                }
            }
            (triplets, loads)
        })
        .collect();

    let n = space.dof_count();
    let mut triplets = Vec::new();
    let mut load = vec![0.0; n];
    for (t, l) in per_element {
        triplets.extend(t);
        for (i, v) in l {
            load[i] += v;
        }
    }
    Ok(LimitSystem {
        space,
        matrix: Csr::from_triplets(n, n, triplets),
        load,
        lambda,
    })
}

/// Discrete two-scale field `u0(x, y) = sum_{I,k} c_{I,k} Phi_I(x) b_k(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleField {
    pub macro_mesh: MacroMesh,
    pub kernel_dim: usize,
    pub coefficients: Vec<f64>,
    /// Relative residual of the solve.
    pub residual: f64,
}

impl TwoScaleField {
    /// `U_k(x)` for every `k`.
    pub fn macro_values(&self, x: &[f64]) -> Vec<f64> {
        let (e, t) = self.macro_mesh.locate(x);
        let phi = element::q1_values(self.macro_mesh.dim, &t);
        let m = self.kernel_dim;
        let mut out = vec![0.0; m];
        for (c, dof) in self
            .macro_mesh
            .element_dofs(e)
            .iter()
            .enumerate()
            .take(element::corners(self.macro_mesh.dim))
        {
            if let Some(i) = dof {
                for k in 0..m {
                    out[k] += phi[c] * self.coefficients[i * m + k];
                }
            }
        }
        out
    }

    /// `d_q U_k(x)` at index `k d + q`.
    pub fn macro_gradients(&self, x: &[f64]) -> Vec<f64> {
        let mm = &self.macro_mesh;
        let (e, t) = mm.locate(x);
        let g = element::q1_gradients(mm.dim, &t);
        let (m, d) = (self.kernel_dim, mm.dim);
        let mut out = vec![0.0; m * d];
        for (c, dof) in mm
            .element_dofs(e)
            .iter()
            .enumerate()
            .take(element::corners(d))
        {
            if let Some(i) = dof {
                for k in 0..m {
                    for q in 0..d {
                        out[k * d + q] += g[c][q] / mm.h() * self.coefficients[i * m + k];
                    }
                }
            }
        }
        out
    }

    /// Rows `(x_index, y_index, kernel_index, coefficient)` over interior nodes.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x_index,y_index,kernel_index,coefficient")?;
        let m = self.kernel_dim;
        for node in 0..self.macro_mesh.interior_count() {
            let idx = self.macro_mesh.interior_node(node);
            for k in 0..m {
                writeln!(
                    out,
                    "{},{},{},{:e}",
                    idx[0],
                    idx[1],
                    k,
                    self.coefficients[node * m + k]
                )?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn name_dof(space: &TwoScaleSpace, row: usize) -> String {
    let node = row / space.kernel_dim;
    let idx = space.macro_mesh.interior_node(node);
    let at = if space.macro_mesh.dim == 1 {
        format!("({})", idx[0])
    } else {
        format!("({}, {})", idx[0], idx[1])
    };
    format!("macro node {at}, kernel index {}", row % space.kernel_dim)
}

/// Banded Cholesky solve with symmetry and residual checks.
pub fn solve_limit(system: &LimitSystem, residual_tol: f64) -> Result<TwoScaleField> {
    let a = &system.matrix;
    let scale = a.values().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let asym = a.max_asymmetry();
    if asym > 1e-12 * scale {
        return Err(Error::Invariant(format!(
            "limit matrix asymmetry {asym:.3e}"
        )));
    }
    let chol = BandedCholesky::factor(a).map_err(|f| Error::NotPositiveDefinite {
        pivot: f.pivot,
        block: name_dof(&system.space, f.row),
    })?;
    let x = chol.solve(&system.load);
    let r: Vec<f64> = a
        .apply(&x)
        .iter()
        .zip(&system.load)
        .map(|(p, q)| p - q)
        .collect();
    let bn = norm(&system.load);
    let residual = if bn > 0.0 { norm(&r) / bn } else { norm(&r) };
    if residual > residual_tol {
        return Err(Error::Invariant(format!(
            "limit solve residual {residual:.3e} exceeds {residual_tol:.1e}"
        )));
    }
    Ok(TwoScaleField {
        macro_mesh: system.space.macro_mesh,
        kernel_dim: system.space.kernel_dim,
        coefficients: x,
        residual,
    })
}

/// Effective tensor of the classical reduction, row-major `(n d) x (n d)`
/// with row index `p d + q`. Requires the kernel to be the constants.
pub fn homogenized_tensor(
    fluxes: &ElementaryFluxes,
    basis: &KernelBasis,
    mesh: &PeriodicCellMesh,
) -> Result<Vec<f64>> {
    let (n, d, m) = (mesh.components(), mesh.dim(), basis.dim());
    if m != n {
        return Err(Error::Misuse(format!(
            "homogenized tensor needs a kernel of constants (m = n = {n}), got m = {m}"
        )));
    }
    // alpha[k][p] = (b_k, e_p): coordinates of the constant unit fields
    let alpha: Vec<Vec<f64>> = (0..n)
        .map(|p| basis.coefficients(&mesh.constant_field(p, 1.0)))
        .collect();
    for (p, a) in alpha.iter().enumerate() {
        let e = mesh.constant_field(p, 1.0);
        let captured: f64 = a.iter().map(|v| v * v).sum();
        if (captured - basis.gram().inner(&e, &e)).abs() > 1e-8 {
            return Err(Error::Misuse(
                "kernel does not consist of constant fields".into(),
            ));
        }
    }
    let nd = n * d;
    let mut out = vec![0.0; nd * nd];
    for p in 0..n {
        for q in 0..d {
            for i in 0..n {
                for qq in 0..d {
                    let mut s = 0.0;
                    for k in 0..m {
                        for kk in 0..m {
                            s += alpha[p][k] * alpha[i][kk] * fluxes.h(k, q, kk, qq);
                        }
                    }
                    out[(p * d + q) * nd + i * d + qq] = s;
                }
            }
        }
    }
    Ok(out)
}

/// `T u0` sampled at macro quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleFlux {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
}

pub fn apply_t(u0: &TwoScaleField, fluxes: &ElementaryFluxes) -> TwoScaleFlux {
    let mm = u0.macro_mesh;
    let rule = macro_rule(mm.dim);
    let vol = mm.h().powi(mm.dim as i32);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for e in 0..mm.element_count() {
        let o = mm.element_origin(e);
        for (t, &w) in rule.points.iter().zip(&rule.weights) {
            points.push([o[0] + t[0] * mm.h(), o[1] + t[1] * mm.h()]);
            weights.push(w * vol);
        }
    }
    let slices = points
        .par_iter()
        .map(|x| fluxes.combine(&u0.macro_gradients(&x[..mm.dim])))
        .collect();
    TwoScaleFlux {
        points,
        weights,
        slices,
    }
}

/// Both sides of the flux-field identity for the test flux
/// `Psi(x, y) = g(x) psi(y)`:
/// `int int T u0 . Psi` and `-int int u0 . div_x((a1)^{1/2} Psi)`.
///
/// `g` returns the value and gradient at `x`; macro integrals use
/// `per_axis` Gauss points per axis and element. The two sides agree when
/// `psi` lies in W, up to the macro quadrature error.
pub fn flux_identity_sides(
    u0: &TwoScaleField,
    fluxes: &ElementaryFluxes,
    solver: &CellSolver,
    psi: &[f64],
    g: impl Fn(&[f64]) -> (f64, [f64; 2]),
    per_axis: usize,
) -> (f64, f64) {
    let mesh = solver.mesh();
    let (m, d) = (u0.kernel_dim, u0.macro_mesh.dim);
    // (tau^{kq}, psi) and ((a1)^{1/2} E^{kq}, psi)
    let t: Vec<f64> = fluxes
        .taus
        .iter()
        .map(|tau| mesh.flux_inner(tau, psi))
        .collect();
    let spsi = solver.apply_sqrt(psi);
    let e: Vec<f64> = (0..m * d)
        .map(|kq| mesh.flux_inner(&solver.macro_gradient_field(kq / d, kq % d), &spsi))
        .collect();
    let mm = u0.macro_mesh;
    let rule = ReferenceRule::gauss(d, per_axis);
    let vol = mm.h().powi(d as i32);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for el in 0..mm.element_count() {
        let o = mm.element_origin(el);
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let x = [o[0] + p[0] * mm.h(), o[1] + p[1] * mm.h()];
            let (gv, gg) = g(&x[..d]);
            let uv = u0.macro_values(&x[..d]);
            let ug = u0.macro_gradients(&x[..d]);
            for k in 0..m {
                for q in 0..d {
                    lhs += w * vol * gv * ug[k * d + q] * t[k * d + q];
                    rhs -= w * vol * uv[k] * gg[q] * e[k * d + q];
                }
            }
        }
    }
    (lhs, rhs)
}
