//! Discrete kernel `V = { v : a1 grad v = 0 }` of the degenerate cell
//! operator, the `H^1` projections onto `V` and its complement, and the
//! spectral estimate of the constant `C` in
//! `|v - P_V v|_{H^1} <= C |a1 grad v|_2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coefficients::{preset_geometry, CoefficientTensor, InnerProductChoice, Preset};
use crate::error::{Error, Result};
use crate::linalg::{
    axpy, dense_generalized, dot, jacobi, lowest_generalized, pcg, CgSettings, Csr, EigenPairs,
    LinearOperator, SubspaceSettings,
};
use crate::mesh::{
    assemble_mass, assemble_stiffness, assemble_tensor_form, build_periodic_mesh, PeriodicCellMesh,
    StiffnessPart,
};

/// Largest system handled by the dense eigensolver.
pub const DENSE_LIMIT: usize = 1100;

/// Eigenvalues at or below this are treated as exact zeros in gap ratios.
const ZERO_FLOOR: f64 = 1e-16;

/// `H^1` Gram operator: a sparse part plus, for the mean-gradient product,
/// the rank-`n` term `sum_c m_c m_c^T` with `m_c` the nodal integrals of
/// component `c`.
#[derive(Debug, Clone)]
pub struct Gram {
    product: InnerProductChoice,
    sparse: Csr,
    means: Vec<Vec<f64>>,
}

impl Gram {
    pub fn new(mesh: &PeriodicCellMesh, product: InnerProductChoice) -> Self {
        let nd = mesh.flux_width();
        let identity: Vec<f64> = (0..mesh.element_count())
            .flat_map(|_| (0..nd * nd).map(|k| if k / nd == k % nd { 1.0 } else { 0.0 }))
            .collect();
        let laplace = assemble_tensor_form(mesh, &identity);
        let n = mesh.components();
        match product {
            InnerProductChoice::MeanGradient => {
                let w = mesh.element_volume();
                let means = (0..n)
                    .map(|c| {
                        (0..mesh.dof_count())
                            .map(|i| if i % n == c { w } else { 0.0 })
                            .collect()
                    })
                    .collect();
                Self {
                    product,
                    sparse: laplace,
                    means,
                }
            }
            InnerProductChoice::Standard => {
                let one = crate::coefficients::DensityField::uniform(mesh.element_count(), 1.0);
                let mass = assemble_mass(mesh, &one).expect("unit density is positive");
                Self {
                    product,
                    sparse: laplace.add_scaled(&mass, 1.0),
                    means: Vec::new(),
                }
            }
        }
    }

    pub fn product(&self) -> InnerProductChoice {
        self.product
    }

    pub fn inner(&self, v: &[f64], w: &[f64]) -> f64 {
        dot(v, &self.apply(w))
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// `G^{-1} r` by preconditioned CG.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; r.len()];
        pcg(
            self,
            &jacobi(&self.diagonal()),
            r,
            &mut x,
            CgSettings::default(),
            None,
        )?;
        Ok(x)
    }

    /// Discrete `H^{-1}` norm `sqrt(r^T G^{-1} r)` of a load vector.
    pub fn dual_norm(&self, r: &[f64]) -> Result<f64> {
        if r.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let x = self.solve(r)?;
        Ok(dot(r, &x).max(0.0).sqrt())
    }
}

impl LinearOperator for Gram {
    fn dim(&self) -> usize {
        self.sparse.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.sparse.mul_vec(x, y);
        for m in &self.means {
            axpy(dot(m, x), m, y);
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = self.sparse.diagonal();
        for m in &self.means {
            for (di, mi) in d.iter_mut().zip(m) {
                *di += mi * mi;
            }
        }
        d
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut a = self.sparse.to_dense();
        for m in &self.means {
            for i in 0..m.len() {
                if m[i] == 0.0 {
                    continue;
                }
                for j in 0..m.len() {
                    a[(i, j)] += m[i] * m[j];
                }
            }
        }
        a
    }

    fn max_abs_row_sum(&self) -> f64 {
        let extra: f64 = self
            .means
            .iter()
            .map(|m| {
                m.iter().map(|v| v.abs()).fold(0.0, f64::max)
                    * m.iter().map(|v| v.abs()).sum::<f64>()
            })
            .sum();
        self.sparse.max_abs_row_sum() + extra
    }
}

fn lowest_pairs<K: LinearOperator>(
    k: &K,
    g: &Gram,
    tol_kernel: f64,
) -> Result<(EigenPairs, &'static str)> {
    if k.dim() <= DENSE_LIMIT {
        Ok((dense_generalized(k, g)?, "dense"))
    } else {
        let settings = SubspaceSettings {
            kernel_tol: tol_kernel,
            ..SubspaceSettings::default()
        };
        Ok((
            lowest_generalized(k, g, settings)?,
            "block_inverse_iteration",
        ))
    }
}

/// Modified Gram-Schmidt, two passes, in the inner product `ip`.
fn orthonormalize(vectors: &mut [Vec<f64>], ip: &dyn Fn(&[f64], &[f64]) -> f64) {
    for i in 0..vectors.len() {
        for _pass in 0..2 {
            for j in 0..i {
                let c = ip(&vectors[j], &vectors[i]);
                let (head, tail) = vectors.split_at_mut(i);
                axpy(-c, &head[j], &mut tail[0]);
            }
        }
        let nrm = ip(&vectors[i], &vectors[i]).max(0.0).sqrt();
        vectors[i].iter_mut().for_each(|v| *v /= nrm);
    }
}

/// `H^1`-orthonormal basis of the discrete kernel with its projectors.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    vectors: Vec<Vec<f64>>,
    /// Euclidean-orthonormal basis of the same span, used for deflation.
    euclidean: Vec<Vec<f64>>,
    gram: Gram,
    pub kernel_eigenvalues: Vec<f64>,
    pub next_eigenvalue: f64,
    pub gap_ratio: f64,
    pub method: String,
}

/// Serializable form of a kernel basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub product: InnerProductChoice,
    pub kernel_eigenvalues: Vec<f64>,
    pub next_eigenvalue: f64,
    pub gap_ratio: f64,
    pub method: String,
    pub vectors: Vec<Vec<f64>>,
}

impl KernelBasis {
    fn from_vectors(
        mut vectors: Vec<Vec<f64>>,
        gram: Gram,
        eig: Vec<f64>,
        next: f64,
        method: String,
    ) -> Self {
        orthonormalize(&mut vectors, &|a, b| gram.inner(a, b));
        let mut euclidean = vectors.clone();
        orthonormalize(&mut euclidean, &|a, b| dot(a, b));
        let last = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
        Self {
            vectors,
            euclidean,
            gram,
            kernel_eigenvalues: eig,
            next_eigenvalue: next,
            gap_ratio: next / last.max(ZERO_FLOOR),
            method,
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    pub fn gram(&self) -> &Gram {
        &self.gram
    }

    /// Coordinates `(v, b_k)_{H^1}`.
    pub fn coefficients(&self, v: &[f64]) -> Vec<f64> {
        let gv = self.gram.apply(v);
        self.vectors.iter().map(|b| dot(b, &gv)).collect()
    }

    pub fn project_v(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (c, b) in self.coefficients(v).iter().zip(&self.vectors) {
            axpy(*c, b, &mut out);
        }
        out
    }

    pub fn project_perp(&self, v: &[f64]) -> Vec<f64> {
        let pv = self.project_v(v);
        v.iter().zip(&pv).map(|(a, b)| a - b).collect()
    }

    /// Removes the Euclidean component along the kernel span.
    pub fn deflate(&self, r: &mut [f64]) {
        for q in &self.euclidean {
            let c = dot(q, r);
            axpy(-c, q, r);
        }
    }

    /// `P_{V^perp}^T l = l - G B B^T l`: the part of a load that acts on `V^perp`.
    pub fn restrict_load(&self, l: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; l.len()];
        for b in &self.vectors {
            axpy(dot(b, l), b, &mut s);
        }
        let gs = self.gram.apply(&s);
        l.iter().zip(&gs).map(|(a, b)| a - b).collect()
    }

    pub fn to_record(&self) -> KernelRecord {
        KernelRecord {
            product: self.gram.product(),
            kernel_eigenvalues: self.kernel_eigenvalues.clone(),
            next_eigenvalue: self.next_eigenvalue,
            gap_ratio: self.gap_ratio,
            method: self.method.clone(),
            vectors: self.vectors.clone(),
        }
    }

    pub fn from_record(mesh: &PeriodicCellMesh, record: KernelRecord) -> Result<Self> {
        if record.vectors.iter().any(|v| v.len() != mesh.dof_count()) {
            return Err(Error::Dimension(
                "cached kernel vectors do not match the cell mesh".into(),
            ));
        }
        let gram = Gram::new(mesh, record.product);
        let mut basis = Self::from_vectors(
            record.vectors,
            gram,
            record.kernel_eigenvalues,
            record.next_eigenvalue,
            record.method,
        );
        basis.gap_ratio = record.gap_ratio;
        Ok(basis)
    }
}

/// Eigenvectors of `K1 v = mu G v` with `mu <= tol_kernel`, after a gap audit
/// requiring `mu_{m+1} / mu_m >= gap_ratio`.
pub fn compute_kernel_basis(
    mesh: &PeriodicCellMesh,
    a: &CoefficientTensor,
    product: InnerProductChoice,
    tol_kernel: f64,
    gap_ratio: f64,
) -> Result<KernelBasis> {
    let k1 = assemble_stiffness(mesh, a, StiffnessPart::A1)?;
    let gram = Gram::new(mesh, product);
    let (pairs, method) = lowest_pairs(&k1, &gram, tol_kernel)?;
    let m = pairs
        .values
        .iter()
        .take_while(|&&v| v <= tol_kernel)
        .count();
    if m == 0 {
        return Err(Error::Invariant(format!(
            "no eigenvalue below {tol_kernel:.1e}; constants must lie in the kernel"
        )));
    }
    if m >= pairs.len() {
        return Err(Error::GapNotResolved(format!(
            "all {} computed eigenvalues lie below the kernel threshold",
            pairs.len()
        )));
    }
    let basis = KernelBasis::from_vectors(
        pairs.vectors[..m].to_vec(),
        gram,
        pairs.values[..m].to_vec(),
        pairs.values[m],
        method.to_string(),
    );
    if basis.gap_ratio < gap_ratio {
        return Err(Error::GapNotResolved(format!(
            "gap ratio {:.3e} below {gap_ratio:.1e} (mu_m = {:.3e}, mu_m+1 = {:.3e})",
            basis.gap_ratio,
            basis.kernel_eigenvalues[m - 1],
            basis.next_eigenvalue
        )));
    }
    Ok(basis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyConstantEstimate {
    pub cells: usize,
    pub product: InnerProductChoice,
    /// Smallest eigenvalue of `|a1 grad v|^2 / |v|_{H^1}^2` on `V^perp`.
    pub mu1: f64,
    pub constant: f64,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub cells: usize,
    pub kernel_dim: usize,
    pub mu1: f64,
    pub constant: f64,
}

/// Squared-flux operator `K2` with `v^T K2 v = sum_q w_q |a1 grad v|^2`.
pub fn assemble_flux_square(mesh: &PeriodicCellMesh, a: &CoefficientTensor) -> Result<Csr> {
    crate::mesh::check_dims(mesh, a)?;
    Ok(assemble_tensor_form(mesh, &a.a1_squared()))
}

/// `C = mu1^{-1/2}` with `mu1` the `(m+1)`-th eigenvalue of `K2 v = mu G v`.
pub fn estimate_key_constant(
    mesh: &PeriodicCellMesh,
    a: &CoefficientTensor,
    basis: &KernelBasis,
    tol_kernel: f64,
) -> Result<KeyConstantEstimate> {
    let k2 = assemble_flux_square(mesh, a)?;
    let (pairs, _) = lowest_pairs(&k2, basis.gram(), tol_kernel)?;
    let m = basis.dim();
    let below = pairs
        .values
        .iter()
        .take_while(|&&v| v <= 10.0 * tol_kernel)
        .count();
    if below != m || pairs.len() <= m {
        let mu1 = pairs.values.get(m).copied().unwrap_or(f64::NAN);
        return Err(Error::GapNotResolved(format!(
            "{below} squared-flux eigenvalues below {:.1e} but kernel dimension {m} (mu1 = {mu1:.3e})",
            10.0 * tol_kernel
        )));
    }
    let mu1 = pairs.values[m];
    Ok(KeyConstantEstimate {
        cells: mesh.cells_per_axis(),
        product: basis.gram().product(),
        mu1,
        constant: mu1.powf(-0.5),
        history: vec![HistoryEntry {
            cells: mesh.cells_per_axis(),
            kernel_dim: m,
            mu1,
            constant: mu1.powf(-0.5),
        }],
    })
}

/// Key-constant estimates of a preset over several cell resolutions.
pub fn refinement_history(
    preset: &Preset,
    d: usize,
    n: usize,
    resolutions: &[usize],
    product: InnerProductChoice,
    tol_kernel: f64,
    gap_ratio: f64,
) -> Result<Vec<HistoryEntry>> {
    resolutions
        .iter()
        .map(|&cells| {
            let mesh = build_periodic_mesh(d, cells, n)?;
            let a = preset_geometry(preset, d, n, cells)?;
            let basis = compute_kernel_basis(&mesh, &a, product, tol_kernel, gap_ratio)?;
            let est = estimate_key_constant(&mesh, &a, &basis, tol_kernel)?;
            Ok(HistoryEntry {
                cells,
                kernel_dim: basis.dim(),
                mu1: est.mu1,
                constant: est.constant,
            })
        })
        .collect()
}

/// Kernel predicted from the cell pattern alone: nodal fields constant on each
/// connected cluster of cells with nonzero `a1` and free on nodes touching
/// only zero cells. Valid when every cell block is zero or positive definite;
/// returns `None` otherwise.
pub fn combinatorial_kernel(
    mesh: &PeriodicCellMesh,
    a: &CoefficientTensor,
) -> Option<Vec<Vec<f64>>> {
    let nd = a.block_size();
    let mut active = Vec::with_capacity(a.cell_count());
    for c in 0..a.cell_count() {
        let block = a.a1_cell(c);
        if block.iter().all(|&v| v == 0.0) {
            active.push(false);
            continue;
        }
        let m = DMatrix::from_row_slice(nd, nd, block);
        if m.symmetric_eigenvalues().min() <= 1e-12 {
            return None;
        }
        active.push(true);
    }
    let nodes = mesh.node_count();
    let mut parent: Vec<usize> = (0..nodes).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut touched = vec![false; nodes];
    for (e, &on) in active.iter().enumerate() {
        if !on {
            continue;
        }
        let en = mesh.element_nodes(e);
        for &v in en {
            touched[v] = true;
            let (ra, rb) = (find(&mut parent, en[0]), find(&mut parent, v));
            if ra != rb {
                parent[rb.max(ra)] = ra.min(rb);
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut class_of = std::collections::BTreeMap::new();
    for v in 0..nodes {
        let key = if touched[v] {
            find(&mut parent, v)
        } else {
            nodes + v
        };
        let idx = *class_of.entry(key).or_insert_with(|| {
            classes.push(Vec::new());
            classes.len() - 1
        });
        classes[idx].push(v);
    }
    let n = mesh.components();
    let mut out = Vec::new();
    for class in &classes {
        for c in 0..n {
            let mut v = vec![0.0; mesh.dof_count()];
            for &node in class {
                v[node * n + c] = 1.0;
            }
            out.push(v);
        }
    }
    Some(out)
}
