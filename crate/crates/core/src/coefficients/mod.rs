//! Problem data: the degenerate tensor `a1`, the regular part `a0`, the
//! density, the forcing and the problem configuration.
//!
//! Coefficients are cellwise constant on the periodic cell mesh. Each cell
//! stores a tensor as a symmetric `(n d) x (n d)` block, row-major, with row
//! index `i * d + j` for the pair `(i, j)`.

mod config;
mod presets;
mod validate;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{
    CellForcing, DensitySpec, Expectations, ForcingSpec, InnerProductChoice, MacroForcing,
    ProblemConfig, Tolerances, SCHEMA_VERSION,
};
pub use presets::{preset_geometry, Preset};
pub use validate::{
    validate_all, validate_nonnegativity, validate_strong_ellipticity, validate_symmetry,
    ValidityReport, TOL_SYM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryTag {
    Uniform,
    Laminate,
    Inclusion,
    Checkerboard,
    CustomVoxel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTensor {
    n: usize,
    d: usize,
    cells: usize,
    tag: GeometryTag,
    a1: Vec<f64>,
    a0: Vec<f64>,
}

impl CoefficientTensor {
    pub fn new(
        n: usize,
        d: usize,
        cells: usize,
        tag: GeometryTag,
        a1: Vec<f64>,
        a0: Vec<f64>,
    ) -> Result<Self> {
        if !(1..=2).contains(&d) || n == 0 || cells == 0 {
            return Err(Error::Config(format!(
                "invalid tensor shape n={n}, d={d}, N={cells}"
            )));
        }
        let expected = cells.pow(d as u32) * (n * d) * (n * d);
        for (name, v) in [("a1", &a1), ("a0", &a0)] {
            if v.len() != expected {
                return Err(Error::Dimension(format!(
                    "{name} has {} entries, expected {expected}",
                    v.len()
                )));
            }
            if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::Coefficient(format!(
                    "{name} contains non-finite entry {x}"
                )));
            }
        }
        Ok(Self {
            n,
            d,
            cells,
            tag,
            a1,
            a0,
        })
    }

    /// Builds a tensor whose cell `c` equals `s1[c] * I` in `a1` and `s0[c] * I` in `a0`.
    pub fn scalar_multiples(
        n: usize,
        d: usize,
        cells: usize,
        tag: GeometryTag,
        s1: &[f64],
        s0: &[f64],
    ) -> Result<Self> {
        let nd = n * d;
        let expand = |s: &[f64]| {
            let mut out = vec![0.0; s.len() * nd * nd];
            for (c, &v) in s.iter().enumerate() {
                for r in 0..nd {
                    out[c * nd * nd + r * nd + r] = v;
                }
            }
            out
        };
        Self::new(n, d, cells, tag, expand(s1), expand(s0))
    }

    pub fn components(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn cell_count(&self) -> usize {
        self.cells.pow(self.d as u32)
    }

    pub fn tag(&self) -> GeometryTag {
        self.tag
    }

    pub fn block_size(&self) -> usize {
        self.n * self.d
    }

    pub fn a1(&self) -> &[f64] {
        &self.a1
    }

    pub fn a0(&self) -> &[f64] {
        &self.a0
    }

    pub fn a1_cell(&self, cell: usize) -> &[f64] {
        let w = self.block_size().pow(2);
        &self.a1[cell * w..(cell + 1) * w]
    }

    pub fn a0_cell(&self, cell: usize) -> &[f64] {
        let w = self.block_size().pow(2);
        &self.a0[cell * w..(cell + 1) * w]
    }

    /// Entry `a_{ijpq}` of `a1` (`which = 1`) or `a0` (`which = 0`) in a cell.
    pub fn entry(&self, which: u8, cell: usize, i: usize, j: usize, p: usize, q: usize) -> f64 {
        let nd = self.block_size();
        let block = if which == 1 {
            self.a1_cell(cell)
        } else {
            self.a0_cell(cell)
        };
        block[(i * self.d + j) * nd + p * self.d + q]
    }

    /// Mutable access for constructing invalid data in tests and custom input.
    pub fn a1_mut(&mut self) -> &mut [f64] {
        &mut self.a1
    }

    /// Per-cell `(a1)^{1/2}` by symmetric eigendecomposition; eigenvalues
    /// below `1e-12` are set to zero.
    pub fn a1_sqrt(&self) -> Vec<f64> {
        let nd = self.block_size();
        let mut out = Vec::with_capacity(self.a1.len());
        for c in 0..self.cell_count() {
            out.extend(sym_sqrt(self.a1_cell(c), nd));
        }
        out
    }

    /// Per-cell `a1 a1`, the weight of the squared flux norm `|a1 grad v|^2`.
    pub fn a1_squared(&self) -> Vec<f64> {
        let nd = self.block_size();
        let mut out = Vec::with_capacity(self.a1.len());
        for c in 0..self.cell_count() {
            let a = self.a1_cell(c);
            for r in 0..nd {
                for s in 0..nd {
                    out.push((0..nd).map(|t| a[r * nd + t] * a[t * nd + s]).sum());
                }
            }
        }
        out
    }
}

pub(crate) fn sym_sqrt(block: &[f64], nd: usize) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(nd, nd, block);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let vals = eig
        .eigenvalues
        .map(|v| if v < 1e-12 { 0.0 } else { v.sqrt() });
    let root =
        &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let mut out = Vec::with_capacity(nd * nd);
    for r in 0..nd {
        for c in 0..nd {
            out.push(root[(r, c)]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    values: Vec<f64>,
}

impl DensityField {
    pub fn uniform(cells: usize, value: f64) -> Self {
        Self {
            values: vec![value; cells],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let field = Self::from_values_unchecked(values);
        field.check(0.0)?;
        Ok(field)
    }

    /// No positivity check; assembly and validation report bad values later.
    pub fn from_values_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Fails unless every value is finite and at least `nu` (and positive).
    pub fn check(&self, nu: f64) -> Result<()> {
        for (cell, &v) in self.values.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 || v < nu {
                return Err(Error::Coefficient(format!(
                    "density {v} in cell {cell} is below the bound {nu} or not positive"
                )));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 over the canonical little-endian serialization of
/// `(n, d, N, a1, a0, rho)`.
pub fn geometry_hash(a: &CoefficientTensor, rho: &DensityField) -> String {
    let mut h = Sha256::new();
    for v in [a.n, a.d, a.cells] {
        h.update((v as u64).to_le_bytes());
    }
    for slice in [&a.a1, &a.a0, &rho.values] {
        h.update((slice.len() as u64).to_le_bytes());
        for x in slice.iter() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_degenerate_block_squares_back() {
        let a = CoefficientTensor::new(
            1,
            2,
            1,
            GeometryTag::CustomVoxel,
            vec![2.0, 1.0, 1.0, 0.5],
            vec![1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let r = a.a1_sqrt();
        let sq: Vec<f64> = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (0..2).map(|k| r[i * 2 + k] * r[k * 2 + j]).sum())
            .collect();
        for (x, y) in sq.iter().zip(a.a1()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = preset_geometry(&Preset::Laminate { values: [1.0, 2.0] }, 1, 1, 8).unwrap();
        let rho = DensityField::uniform(8, 1.0);
        let h1 = geometry_hash(&a, &rho);
        assert_eq!(h1, geometry_hash(&a.clone(), &rho.clone()));
        assert_eq!(h1.len(), 64);
        let b = preset_geometry(&Preset::Laminate { values: [1.0, 2.5] }, 1, 1, 8).unwrap();
        assert_ne!(h1, geometry_hash(&b, &rho));
        assert_ne!(h1, geometry_hash(&a, &DensityField::uniform(8, 2.0)));
    }

    #[test]
    fn shape_checks() {
        assert!(matches!(
            CoefficientTensor::new(1, 1, 4, GeometryTag::Uniform, vec![1.0; 3], vec![1.0; 4]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            CoefficientTensor::new(1, 1, 1, GeometryTag::Uniform, vec![f64::NAN], vec![1.0]),
            Err(Error::Coefficient(_))
        ));
        assert!(DensityField::from_values(vec![1.0, -1.0]).is_err());
    }
}
