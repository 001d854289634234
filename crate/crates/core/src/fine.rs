//! Direct solves of the oscillating problem
//! `-div(a_eps grad u) + lambda rho(x/eps) u = f` with
//! `a_eps = a1(x/eps) + eps^2 a0(x/eps)` on an aligned Q1 grid, and the
//! comparison against the two-scale limit.

use serde::{Deserialize, Serialize};

use crate::cell::CorrectorBank;
use crate::coefficients::{
    geometry_hash, CoefficientTensor, DensityField, ForcingSpec, ProblemConfig,
};
use crate::element::{self, ReferenceRule};
use crate::error::{Error, Result};
use crate::kernel::KernelBasis;
use crate::limit::TwoScaleField;
use crate::linalg::{dot, jacobi, pcg, CgOutcome, CgSettings, Csr};
use crate::mesh::{multi_index, PeriodicCellMesh};

/// Dirichlet Q1 grid of `(0, L)^d` with `periods * cells * multiplier`
/// elements per axis, so every element lies inside one coefficient cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineGrid {
    pub dim: usize,
    pub components: usize,
    pub cells: usize,
    pub periods: usize,
    pub multiplier: usize,
    pub length: f64,
}

impl FineGrid {
    pub fn per_axis(&self) -> usize {
        self.periods * self.cells * self.multiplier
    }

    pub fn h(&self) -> f64 {
        self.length / self.per_axis() as f64
    }

    pub fn element_count(&self) -> usize {
        self.per_axis().pow(self.dim as u32)
    }

    pub fn node_count(&self) -> usize {
        (self.per_axis() + 1).pow(self.dim as u32)
    }

    /// Unknowns: interior nodes times components.
    pub fn unknown_count(&self) -> usize {
        (self.per_axis() - 1).pow(self.dim as u32) * self.components
    }

    fn node_index(&self, idx: [usize; 2]) -> usize {
        idx[0] + idx[1] * (self.per_axis() + 1)
    }

    fn interior_index(&self, idx: [usize; 2]) -> Option<usize> {
        let nf = self.per_axis();
        let mut out = 0;
        let mut stride = 1;
        for &k in idx.iter().take(self.dim) {
            if k == 0 || k >= nf {
                return None;
            }
            out += (k - 1) * stride;
            stride *= nf - 1;
        }
        Some(out)
    }

    fn corner_grid(&self, e: usize) -> [[usize; 2]; 4] {
        let idx = multi_index(self.dim, self.per_axis(), e);
        let mut out = [[0; 2]; 4];
        for (c, o) in out.iter_mut().enumerate().take(element::corners(self.dim)) {
            for j in 0..self.dim {
                o[j] = idx[j] + ((c >> j) & 1);
            }
        }
        out
    }

    /// Coefficient cell carrying element `e`.
    pub fn cell_of(&self, e: usize) -> usize {
        let idx = multi_index(self.dim, self.per_axis(), e);
        let mut c = 0;
        let mut stride = 1;
        for &k in idx.iter().take(self.dim) {
            c += ((k / self.multiplier) % self.cells) * stride;
            stride *= self.cells;
        }
        c
    }

    pub fn element_origin(&self, e: usize) -> [f64; 2] {
        let idx = multi_index(self.dim, self.per_axis(), e);
        [idx[0] as f64 * self.h(), idx[1] as f64 * self.h()]
    }
}

/// Terms of the energy identity `T1 + T2 + T3 = (f, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyIdentity {
    /// `(a1 grad u, grad u)`
    pub leading: f64,
    /// `eps^2 (a0 grad u, grad u)`
    pub lower: f64,
    /// `lambda (rho u, u)`
    pub zeroth: f64,
    pub load: f64,
    pub relative_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineNorms {
    pub u: f64,
    pub grad: f64,
    /// `|(a1)^{1/2} grad u|_2`
    pub flux: f64,
    pub forcing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineSolution {
    pub eps: f64,
    pub grid: FineGrid,
    /// Nodal values on all grid nodes, zero on the boundary; dof `node n + i`.
    pub u: Vec<f64>,
    pub cg: CgOutcome,
    pub energy: EnergyIdentity,
    pub norms: FineNorms,
    pub geometry_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub eps: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

pub fn apriori_ratios(sol: &FineSolution) -> AprioriReport {
    let f = sol.norms.forcing;
    AprioriReport {
        eps: sol.eps,
        r1: sol.norms.u / f,
        r2: sol.eps * sol.norms.grad / f,
        r3: sol.norms.flux / f,
    }
}

/// Per-cell element matrices for one element size.
struct LocalMatrices {
    a1: Vec<Vec<f64>>,
    a0: Vec<Vec<f64>>,
    rho: Vec<Vec<f64>>,
    laplace: Vec<f64>,
    mass: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FineSolver {
    grid_template: FineGrid,
    a: CoefficientTensor,
    rho: DensityField,
    forcing: ForcingSpec,
    lambda: f64,
    settings: CgSettings,
    geometry_hash: String,
}

impl FineSolver {
    pub fn new(config: &ProblemConfig) -> Result<Self> {
        config.validate()?;
        let a = config.tensor()?;
        let rho = config.density();
        rho.check(config.nu)?;
        Ok(Self {
            grid_template: FineGrid {
                dim: config.dim,
                components: config.components,
                cells: config.cells,
                periods: 1,
                multiplier: config.fine_multiplier,
                length: config.domain_length,
            },
            geometry_hash: geometry_hash(&a, &rho),
            a,
            rho,
            forcing: config.forcing.clone(),
            lambda: config.lambda,
            settings: CgSettings {
                tolerance: config.tolerances.cg,
                max_iterations: config.tolerances.cg_max_iterations,
            },
        })
    }

    pub fn geometry_hash(&self) -> &str {
        &self.geometry_hash
    }

    pub fn grid(&self, eps: f64) -> Result<FineGrid> {
        let p = self.grid_template.length / eps;
        let periods = p.round();
        if (p - periods).abs() > 1e-9 * p.max(1.0) || periods < 1.0 {
            return Err(Error::Config(format!(
                "fine grid misaligned: L / eps = {p} is not an integer"
            )));
        }
        Ok(FineGrid {
            periods: periods as usize,
            ..self.grid_template
        })
    }

    fn local_matrices(&self, grid: &FineGrid) -> LocalMatrices {
        let (d, n) = (grid.dim, grid.components);
        let h = grid.h();
        let vol = h.powi(d as i32);
        let nc = element::corners(d);
        let ldim = nc * n;
        // two points per axis integrate the Q1 products exactly
        let rule = ReferenceRule::gauss(d, 2);
        let form = |block: &[f64]| {
            let mut local = vec![0.0; ldim * ldim];
            for (t, &w) in rule.points.iter().zip(&rule.weights) {
                let mut g = element::q1_gradients(d, t);
                for v in g.iter_mut().flat_map(|r| r.iter_mut()) {
                    *v /= h;
                }
                element::add_tensor_form(d, n, &g[..nc], w * vol, block, &mut local);
            }
            local
        };
        let mass_of = |r: f64| {
            let mut local = vec![0.0; ldim * ldim];
            for (t, &w) in rule.points.iter().zip(&rule.weights) {
                let phi = element::q1_values(d, t);
                element::add_mass(n, &phi[..nc], w * vol * r, &mut local);
            }
            local
        };
        let nd = n * d;
        let mut identity = vec![0.0; nd * nd];
        for i in 0..nd {
            identity[i * nd + i] = 1.0;
        }
        let cells = self.a.cell_count();
        LocalMatrices {
            a1: (0..cells).map(|c| form(self.a.a1_cell(c))).collect(),
            a0: (0..cells).map(|c| form(self.a.a0_cell(c))).collect(),
            rho: (0..cells).map(|c| mass_of(self.rho.values()[c])).collect(),
            laplace: form(&identity),
            mass: mass_of(1.0),
        }
    }

    /// Nodal load `(f_eps, phi)` and `|f_eps|_2`, both with 3-point Gauss per axis.
    fn load(&self, grid: &FineGrid) -> (Vec<f64>, f64) {
        let (d, n) = (grid.dim, grid.components);
        let h = grid.h();
        let vol = h.powi(d as i32);
        let rule = ReferenceRule::gauss(d, 3);
        let mut b = vec![0.0; grid.node_count() * n];
        let mut fsq = 0.0;
        for e in 0..grid.element_count() {
            let cell = grid.cell_of(e);
            let fy = self.forcing.cell_part.cell_value(cell);
            if fy == 0.0 {
                continue;
            }
            let o = grid.element_origin(e);
            let corners = grid.corner_grid(e);
            for (t, &w) in rule.points.iter().zip(&rule.weights) {
                let x = [o[0] + t[0] * h, o[1] + t[1] * h];
                let s = self.forcing.macro_part.eval(&x[..d], grid.length) * fy;
                let phi = element::q1_values(d, t);
                for i in 0..n {
                    let f = s * self.forcing.components[i];
                    fsq += w * vol * f * f;
                    for c in 0..element::corners(d) {
                        b[grid.node_index(corners[c]) * n + i] += w * vol * f * phi[c];
                    }
                }
            }
        }
        (b, fsq.sqrt())
    }

    pub fn solve(&self, eps: f64) -> Result<FineSolution> {
        let grid = self.grid(eps)?;
        let (d, n) = (grid.dim, grid.components);
        let nc = element::corners(d);
        let ldim = nc * n;
        let locals = self.local_matrices(&grid);
        let e2 = eps * eps;
        let combined: Vec<Vec<f64>> = (0..self.a.cell_count())
            .map(|c| {
                (0..ldim * ldim)
                    .map(|k| {
                        locals.a1[c][k] + e2 * locals.a0[c][k] + self.lambda * locals.rho[c][k]
                    })
                    .collect()
            })
            .collect();

        let mut triplets = Vec::with_capacity(grid.element_count() * ldim * ldim);
        for e in 0..grid.element_count() {
            let local = &combined[grid.cell_of(e)];
            let dofs = element_unknowns(&grid, e);
            for (a, ra) in dofs.iter().enumerate() {
                let Some(ra) = ra else { continue };
                for (b, rb) in dofs.iter().enumerate() {
                    let Some(rb) = rb else { continue };
                    let v = local[a * ldim + b];
                    if v != 0.0 {
                        triplets.push((*ra, *rb, v));
                    }
                }
            }
        }
        let size = grid.unknown_count();
        let k = Csr::from_triplets(size, size, triplets);

        let (full_load, f_norm) = self.load(&grid);
        let mut rhs = vec![0.0; size];
        let nf = grid.per_axis();
        for node in 0..grid.node_count() {
            if let Some(i) = grid.interior_index(multi_index(d, nf + 1, node)) {
                for c in 0..n {
                    rhs[i * n + c] = full_load[node * n + c];
                }
            }
        }
        let diag = k.diagonal();
        let mut x = vec![0.0; size];
        let cg = pcg(&k, &jacobi(&diag), &rhs, &mut x, self.settings, None).map_err(|err| match err {
            Error::Solver(mut diag_info) => {
                let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
                diag_info.detail = format!(
                    "{}; eps = {eps}, {size} unknowns, condition estimate >= {:.3e} from the diagonal spread",
                    diag_info.detail,
                    hi / lo
                );
                Error::Solver(diag_info)
            }
            other => other,
        })?;

        let mut u = vec![0.0; grid.node_count() * n];
        for node in 0..grid.node_count() {
            if let Some(i) = grid.interior_index(multi_index(d, nf + 1, node)) {
                u[node * n..(node + 1) * n].copy_from_slice(&x[i * n..(i + 1) * n]);
            }
        }

        let mut sums = [0.0; 5];
        for e in 0..grid.element_count() {
            let c = grid.cell_of(e);
            let ue = element_values(&grid, &u, e);
            for (s, m) in sums.iter_mut().zip([
                &locals.a1[c],
                &locals.a0[c],
                &locals.rho[c],
                &locals.laplace,
                &locals.mass,
            ]) {
                *s += local_form(m, &ue);
            }
        }
        let [t1, t0, tr, lap, mass] = sums;
        let energy_load = dot(&full_load, &u);
        let lhs = t1 + e2 * t0 + self.lambda * tr;
        let energy = EnergyIdentity {
            leading: t1,
            lower: e2 * t0,
            zeroth: self.lambda * tr,
            load: energy_load,
            relative_defect: if energy_load.abs() > 0.0 {
                (lhs - energy_load).abs() / energy_load.abs()
            } else {
                lhs.abs()
            },
        };
        Ok(FineSolution {
            eps,
            grid,
            u,
            cg,
            energy,
            norms: FineNorms {
                u: mass.max(0.0).sqrt(),
                grad: lap.max(0.0).sqrt(),
                flux: t1.max(0.0).sqrt(),
                forcing: f_norm,
            },
            geometry_hash: self.geometry_hash.clone(),
        })
    }
}

fn element_unknowns(grid: &FineGrid, e: usize) -> Vec<Option<usize>> {
    let n = grid.components;
    let corners = grid.corner_grid(e);
    let mut out = Vec::with_capacity(element::corners(grid.dim) * n);
    for c in corners.iter().take(element::corners(grid.dim)) {
        let node = grid.interior_index(*c);
        for i in 0..n {
            out.push(node.map(|k| k * n + i));
        }
    }
    out
}

fn element_values(grid: &FineGrid, u: &[f64], e: usize) -> Vec<f64> {
    let n = grid.components;
    let mut out = Vec::with_capacity(element::corners(grid.dim) * n);
    for c in grid.corner_grid(e).iter().take(element::corners(grid.dim)) {
        let node = grid.node_index(*c);
        out.extend_from_slice(&u[node * n..(node + 1) * n]);
    }
    out
}

fn local_form(m: &[f64], v: &[f64]) -> f64 {
    let l = v.len();
    let mut s = 0.0;
    for a in 0..l {
        for b in 0..l {
            s += v[a] * m[a * l + b] * v[b];
        }
    }
    s
}

/// Kernel vectors and elementary fluxes evaluated at arbitrary cell points.
pub struct CellReconstruction<'a> {
    mesh: &'a PeriodicCellMesh,
    basis: &'a KernelBasis,
    bank: &'a CorrectorBank,
    a_sqrt: Vec<f64>,
}

impl<'a> CellReconstruction<'a> {
    pub fn new(
        mesh: &'a PeriodicCellMesh,
        a: &CoefficientTensor,
        basis: &'a KernelBasis,
        bank: &'a CorrectorBank,
    ) -> Result<Self> {
        bank.check_complete()?;
        if bank.kernel_dim != basis.dim()
            || bank.cells != mesh.cells_per_axis()
            || a.cells_per_axis() != mesh.cells_per_axis()
        {
            return Err(Error::Invariant(
                "corrector bank, kernel and cell mesh disagree".into(),
            ));
        }
        Ok(Self {
            mesh,
            basis,
            bank,
            a_sqrt: a.a1_sqrt(),
        })
    }

    pub fn geometry_hash(&self) -> &str {
        &self.bank.geometry_hash
    }

    /// `b_k(y)_i` at index `k n + i`, and `tau^{kq}(y)` at
    /// `(k d + q) (n d) + i d + j`.
    pub fn evaluate(&self, y: &[f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let (n, d, m) = (self.mesh.components(), self.mesh.dim(), self.basis.dim());
        let nd = n * d;
        let (e, t) = self.mesh.locate(y);
        let s = &self.a_sqrt[e * nd * nd..(e + 1) * nd * nd];
        let mut values = Vec::with_capacity(m * n);
        let mut taus = vec![0.0; m * d * nd];
        for k in 0..m {
            let b = self.mesh.evaluate_local(self.basis.vector(k), e, &t);
            for q in 0..d {
                let mut g = self.mesh.gradient_local(
                    &self.bank.get(k, q).expect("complete bank").field,
                    e,
                    &t,
                );
                for i in 0..n {
                    g[i * d + q] += b[i];
                }
                let out = &mut taus[(k * d + q) * nd..(k * d + q + 1) * nd];
                for r in 0..nd {
                    out[r] = (0..nd).map(|c| s[r * nd + c] * g[c]).sum();
                }
            }
            values.extend(b);
        }
        (values, taus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleError {
    pub eps: f64,
    /// `|u_eps(x) - u0(x, x/eps)|_2`
    pub e_u: f64,
    /// `|(a1)^{1/2}(x/eps) grad u_eps - xi0(x, x/eps)|_2`
    pub e_xi: f64,
}

/// Reconstruction errors by 3-point Gauss quadrature on the fine elements.
pub fn two_scale_error(
    sol: &FineSolution,
    u0: &TwoScaleField,
    recon: &CellReconstruction,
    a: &CoefficientTensor,
) -> Result<TwoScaleError> {
    if recon.geometry_hash() != sol.geometry_hash {
        return Err(Error::Config(format!(
            "limit geometry {} does not match fine geometry {}",
            recon.geometry_hash(),
            sol.geometry_hash
        )));
    }
    let grid = &sol.grid;
    let (d, n, m) = (grid.dim, grid.components, u0.kernel_dim);
    let nd = n * d;
    let h = grid.h();
    let vol = h.powi(d as i32);
    let eps = sol.eps;
    let rule = ReferenceRule::gauss(d, 3);
    let a_sqrt = a.a1_sqrt();
    let (mut eu, mut exi) = (0.0, 0.0);
    for e in 0..grid.element_count() {
        let ue = element_values(grid, &sol.u, e);
        let s = &a_sqrt[grid.cell_of(e) * nd * nd..(grid.cell_of(e) + 1) * nd * nd];
        let o = grid.element_origin(e);
        for (t, &w) in rule.points.iter().zip(&rule.weights) {
            let x = [o[0] + t[0] * h, o[1] + t[1] * h];
            let mut y = [0.0; 2];
            for j in 0..d {
                let z = x[j] / eps;
                y[j] = z - z.floor();
            }
            let phi = element::q1_values(d, t);
            let grads = element::q1_gradients(d, t);
            let mut uf = vec![0.0; n];
            let mut gf = vec![0.0; nd];
            for c in 0..element::corners(d) {
                for i in 0..n {
                    let v = ue[c * n + i];
                    uf[i] += phi[c] * v;
                    for j in 0..d {
                        gf[i * d + j] += grads[c][j] / h * v;
                    }
                }
            }
            let (bvals, taus) = recon.evaluate(&y);
            let big_u = u0.macro_values(&x[..d]);
            let big_g = u0.macro_gradients(&x[..d]);
            for i in 0..n {
                let u0v: f64 = (0..m).map(|k| big_u[k] * bvals[k * n + i]).sum();
                eu += w * vol * (uf[i] - u0v).powi(2);
            }
            for r in 0..nd {
                let flux: f64 = (0..nd).map(|c| s[r * nd + c] * gf[c]).sum();
                let xi0: f64 = (0..m * d).map(|kq| big_g[kq] * taus[kq * nd + r]).sum();
                exi += w * vol * (flux - xi0).powi(2);
            }
        }
    }
    Ok(TwoScaleError {
        eps,
        e_u: eu.sqrt(),
        e_xi: exi.sqrt(),
    })
}

/// Least-squares slope of `ln e` against `ln eps`.
pub fn observed_order(eps: &[f64], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e > 0.0)
        .map(|(a, e)| (a.ln(), e.ln()))
        .collect();
    let k = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
