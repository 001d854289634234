//! Structured periodic Q1 discretization of the unit cell `Q = [0,1]^d`.
//!
//! Nodes on opposite faces are identified, so a mesh with `N` cells per axis
//! has `N^d` nodes, numbered lexicographically with the first axis fastest.
//! Elements carry the same lexicographic numbering as coefficient cells.
//! Nodal vector fields interleave components: dof `node * n + i`. Flux fields
//! live at quadrature points with layout `q * (n d) + i * d + j`.

use crate::coefficients::{CoefficientTensor, DensityField};
use crate::element::{self, ReferenceRule};
use crate::error::{Error, Result};
use crate::linalg::Csr;

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicCellMesh {
    dim: usize,
    cells: usize,
    components: usize,
    connectivity: Vec<usize>,
    rule: ReferenceRule,
    shape_values: Vec<[f64; 4]>,
    /// Physical gradients, i.e. reference gradients scaled by `N`.
    shape_grads: Vec<[[f64; 2]; 4]>,
}

pub fn build_periodic_mesh(
    dim: usize,
    cells: usize,
    components: usize,
) -> Result<PeriodicCellMesh> {
    if !(1..=2).contains(&dim) {
        return Err(Error::Config(format!(
            "cell dimension must be 1 or 2, got {dim}"
        )));
    }
    if cells < 2 {
        return Err(Error::Config(format!(
            "need at least 2 cells per axis, got {cells}"
        )));
    }
    if components == 0 {
        return Err(Error::Config("system size n must be at least 1".into()));
    }
    let nc = element::corners(dim);
    let n_el = cells.pow(dim as u32);
    let mut connectivity = Vec::with_capacity(n_el * nc);
    for e in 0..n_el {
        let idx = multi_index(dim, cells, e);
        for c in 0..nc {
            let mut node = 0;
            let mut stride = 1;
            for j in 0..dim {
                let k = (idx[j] + ((c >> j) & 1)) % cells;
                node += k * stride;
                stride *= cells;
            }
            connectivity.push(node);
        }
    }
    let rule = ReferenceRule::gauss(dim, 2);
    let h_inv = cells as f64;
    let shape_values = rule
        .points
        .iter()
        .map(|t| element::q1_values(dim, t))
        .collect();
    let shape_grads = rule
        .points
        .iter()
        .map(|t| {
            let mut g = element::q1_gradients(dim, t);
            for gc in g.iter_mut() {
                for v in gc.iter_mut() {
                    *v *= h_inv;
                }
            }
            g
        })
        .collect();
    Ok(PeriodicCellMesh {
        dim,
        cells,
        components,
        connectivity,
        rule,
        shape_values,
        shape_grads,
    })
}

pub(crate) fn multi_index(dim: usize, cells: usize, flat: usize) -> [usize; 2] {
    let mut idx = [0usize; 2];
    let mut rest = flat;
    for v in idx.iter_mut().take(dim) {
        *v = rest % cells;
        rest /= cells;
    }
    idx
}

impl PeriodicCellMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn node_count(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn element_count(&self) -> usize {
        self.node_count()
    }

    pub fn dof_count(&self) -> usize {
        self.node_count() * self.components
    }

    pub fn corners(&self) -> usize {
        element::corners(self.dim)
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        let nc = self.corners();
        &self.connectivity[e * nc..(e + 1) * nc]
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn element_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn quad_per_element(&self) -> usize {
        self.rule.len()
    }

    pub fn quad_count(&self) -> usize {
        self.element_count() * self.quad_per_element()
    }

    /// Width of one quadrature point's flux tensor, `n d`.
    pub fn flux_width(&self) -> usize {
        self.components * self.dim
    }

    pub fn flux_len(&self) -> usize {
        self.quad_count() * self.flux_width()
    }

    /// Physical weight of local quadrature point `k` (identical on all elements).
    pub fn quad_weight(&self, k: usize) -> f64 {
        self.rule.weights[k] * self.element_volume()
    }

    /// Weight of every global quadrature point, in global order.
    pub fn quad_weights(&self) -> Vec<f64> {
        let nq = self.quad_per_element();
        (0..self.quad_count())
            .map(|q| self.quad_weight(q % nq))
            .collect()
    }

    pub fn reference_rule(&self) -> &ReferenceRule {
        &self.rule
    }

    pub fn shape_values(&self, k: usize) -> &[f64] {
        &self.shape_values[k][..self.corners()]
    }

    pub fn shape_gradients(&self, k: usize) -> &[[f64; 2]] {
        &self.shape_grads[k][..self.corners()]
    }

    pub fn element_index(&self, e: usize) -> [usize; 2] {
        multi_index(self.dim, self.cells, e)
    }

    pub fn node_coordinates(&self, node: usize) -> [f64; 2] {
        let idx = multi_index(self.dim, self.cells, node);
        [idx[0] as f64 * self.h(), idx[1] as f64 * self.h()]
    }

    /// Physical coordinates of local quadrature point `k` of element `e`.
    pub fn quad_point(&self, e: usize, k: usize) -> [f64; 2] {
        let idx = self.element_index(e);
        let t = self.rule.points[k];
        let mut y = [0.0; 2];
        for j in 0..self.dim {
            y[j] = (idx[j] as f64 + t[j]) * self.h();
        }
        y
    }

    /// Element containing `y` (taken modulo 1) and the local coordinates in it.
    pub fn locate(&self, y: &[f64; 2]) -> (usize, [f64; 2]) {
        let mut e = 0;
        let mut stride = 1;
        let mut t = [0.0; 2];
        for j in 0..self.dim {
            let s = y[j].rem_euclid(1.0) * self.cells as f64;
            let k = (s.floor() as usize).min(self.cells - 1);
            t[j] = s - k as f64;
            e += k * stride;
            stride *= self.cells;
        }
        (e, t)
    }

    /// Nodal interpolant of `f(y, component)`.
    pub fn interpolate(&self, f: impl Fn(&[f64; 2], usize) -> f64) -> Vec<f64> {
        let n = self.components;
        let mut v = vec![0.0; self.dof_count()];
        for node in 0..self.node_count() {
            let y = self.node_coordinates(node);
            for i in 0..n {
                v[node * n + i] = f(&y, i);
            }
        }
        v
    }

    /// Per-component constant field.
    pub fn constant_field(&self, component: usize, value: f64) -> Vec<f64> {
        self.interpolate(|_, i| if i == component { value } else { 0.0 })
    }

    /// Value of a nodal field at element `e`, local coordinates `t`.
    pub fn evaluate_local(&self, v: &[f64], e: usize, t: &[f64; 2]) -> Vec<f64> {
        let n = self.components;
        let phi = element::q1_values(self.dim, t);
        let mut out = vec![0.0; n];
        for (c, &node) in self.element_nodes(e).iter().enumerate() {
            for i in 0..n {
                out[i] += phi[c] * v[node * n + i];
            }
        }
        out
    }

    /// Gradient (`n x d`, row-major) of a nodal field at element `e`, local `t`.
    pub fn gradient_local(&self, v: &[f64], e: usize, t: &[f64; 2]) -> Vec<f64> {
        let (n, d) = (self.components, self.dim);
        let g = element::q1_gradients(d, t);
        let scale = self.cells as f64;
        let mut out = vec![0.0; n * d];
        for (c, &node) in self.element_nodes(e).iter().enumerate() {
            for i in 0..n {
                for j in 0..d {
                    out[i * d + j] += scale * g[c][j] * v[node * n + i];
                }
            }
        }
        out
    }

    pub fn evaluate(&self, v: &[f64], y: &[f64; 2]) -> Vec<f64> {
        let (e, t) = self.locate(y);
        self.evaluate_local(v, e, &t)
    }

    /// Flux-space inner product `sum_q w_q psi_q . phi_q`.
    pub fn flux_inner(&self, psi: &[f64], phi: &[f64]) -> f64 {
        let w = self.flux_width();
        let nq = self.quad_per_element();
        psi.chunks(w)
            .zip(phi.chunks(w))
            .enumerate()
            .map(|(q, (a, b))| self.quad_weight(q % nq) * crate::linalg::dot(a, b))
            .sum()
    }

    pub fn flux_norm(&self, psi: &[f64]) -> f64 {
        self.flux_inner(psi, psi).max(0.0).sqrt()
    }

    /// Applies a per-cell `(n d) x (n d)` matrix at every quadrature point.
    pub fn apply_cellwise(&self, cell_matrices: &[f64], psi: &[f64]) -> Vec<f64> {
        let w = self.flux_width();
        let nq = self.quad_per_element();
        let mut out = vec![0.0; psi.len()];
        for (q, (src, dst)) in psi.chunks(w).zip(out.chunks_mut(w)).enumerate() {
            let m = &cell_matrices[(q / nq) * w * w..(q / nq + 1) * w * w];
            for r in 0..w {
                dst[r] = (0..w).map(|c| m[r * w + c] * src[c]).sum();
            }
        }
        out
    }

    pub(crate) fn scatter(&self, e: usize, local: &[f64], triplets: &mut Vec<(usize, usize, f64)>) {
        let n = self.components;
        let nodes = self.element_nodes(e);
        let ldim = nodes.len() * n;
        for (a, &na) in nodes.iter().enumerate() {
            for i in 0..n {
                for (b, &nb) in nodes.iter().enumerate() {
                    for p in 0..n {
                        let v = local[(a * n + i) * ldim + b * n + p];
                        if v != 0.0 {
                            triplets.push((na * n + i, nb * n + p, v));
                        }
                    }
                }
            }
        }
    }
}

/// Sparse map from nodal fields to per-quadrature-point gradient tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGradientMap {
    matrix: Csr,
}

impl DiscreteGradientMap {
    pub fn new(mesh: &PeriodicCellMesh) -> Self {
        let (n, d) = (mesh.components(), mesh.dim());
        let nq = mesh.quad_per_element();
        let mut triplets = Vec::new();
        for e in 0..mesh.element_count() {
            let nodes = mesh.element_nodes(e);
            for k in 0..nq {
                let q = e * nq + k;
                let grads = mesh.shape_gradients(k);
                for i in 0..n {
                    for j in 0..d {
                        let row = q * n * d + i * d + j;
                        for (c, &node) in nodes.iter().enumerate() {
                            triplets.push((row, node * n + i, grads[c][j]));
                        }
                    }
                }
            }
        }
        Self {
            matrix: Csr::from_triplets(mesh.flux_len(), mesh.dof_count(), triplets),
        }
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.apply(v)
    }

    /// Adjoint map: nodal load `l_I = sum_q psi_q . grad(phi_I)(y_q)` without weights.
    pub fn apply_transpose(&self, psi: &[f64]) -> Vec<f64> {
        self.matrix.apply_transpose(psi)
    }
}

/// `sum_q w_q rho(y_q) phi_A phi_B` per component.
pub fn assemble_mass(mesh: &PeriodicCellMesh, density: &DensityField) -> Result<Csr> {
    if density.values().len() != mesh.element_count() {
        return Err(Error::Dimension(format!(
            "density has {} cells, mesh has {}",
            density.values().len(),
            mesh.element_count()
        )));
    }
    if let Some((cell, v)) = density
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0))
    {
        return Err(Error::Coefficient(format!(
            "density {v} <= 0 in cell {cell}"
        )));
    }
    let n = mesh.components();
    let ldim = mesh.corners() * n;
    let mut triplets = Vec::new();
    for e in 0..mesh.element_count() {
        let mut local = vec![0.0; ldim * ldim];
        for k in 0..mesh.quad_per_element() {
            let w = mesh.quad_weight(k) * density.values()[e];
            element::add_mass(n, mesh.shape_values(k), w, &mut local);
        }
        mesh.scatter(e, &local, &mut triplets);
    }
    Ok(Csr::from_triplets(
        mesh.dof_count(),
        mesh.dof_count(),
        triplets,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StiffnessPart {
    A1,
    A0,
    Sum,
}

/// Stiffness of `a^(1)`, `a^(0)` or their sum on the periodic cell.
pub fn assemble_stiffness(
    mesh: &PeriodicCellMesh,
    a: &CoefficientTensor,
    which: StiffnessPart,
) -> Result<Csr> {
    check_dims(mesh, a)?;
    let mats: Vec<f64> = match which {
        StiffnessPart::A1 => a.a1().to_vec(),
        StiffnessPart::A0 => a.a0().to_vec(),
        StiffnessPart::Sum => a.a1().iter().zip(a.a0()).map(|(x, y)| x + y).collect(),
    };
    Ok(assemble_tensor_form(mesh, &mats))
}

pub(crate) fn check_dims(mesh: &PeriodicCellMesh, a: &CoefficientTensor) -> Result<()> {
    if a.components() != mesh.components()
        || a.dim() != mesh.dim()
        || a.cells_per_axis() != mesh.cells_per_axis()
    {
        return Err(Error::Dimension(format!(
            "tensor (n={}, d={}, N={}) does not match mesh (n={}, d={}, N={})",
            a.components(),
            a.dim(),
            a.cells_per_axis(),
            mesh.components(),
            mesh.dim(),
            mesh.cells_per_axis()
        )));
    }
    Ok(())
}

/// `sum_q w_q C(y_q) grad v . grad w` for cellwise-constant blocks `C`.
pub fn assemble_tensor_form(mesh: &PeriodicCellMesh, cell_matrices: &[f64]) -> Csr {
    let (n, d) = (mesh.components(), mesh.dim());
    let w2 = (n * d) * (n * d);
    assert_eq!(cell_matrices.len(), mesh.element_count() * w2);
    let ldim = mesh.corners() * n;
    let mut triplets = Vec::new();
    for e in 0..mesh.element_count() {
        let c = &cell_matrices[e * w2..(e + 1) * w2];
        if c.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mut local = vec![0.0; ldim * ldim];
        for k in 0..mesh.quad_per_element() {
            element::add_tensor_form(
                d,
                n,
                mesh.shape_gradients(k),
                mesh.quad_weight(k),
                c,
                &mut local,
            );
        }
        mesh.scatter(e, &local, &mut triplets);
    }
    Csr::from_triplets(mesh.dof_count(), mesh.dof_count(), triplets)
}
