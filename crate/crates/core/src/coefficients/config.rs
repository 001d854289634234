use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{preset_geometry, CoefficientTensor, DensityField, Preset};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Choice of `H^1` inner product on the periodic cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerProductChoice {
    /// `(int v)(int w) + int grad v . grad w`
    #[default]
    MeanGradient,
    /// `int v w + int grad v . grad w`
    Standard,
}

/// Macroscopic factor `f_x` on `Omega = (0, L)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MacroForcing {
    /// `prod_j sin(k pi x_j / L)`
    Sine {
        #[serde(default = "one_u32")]
        frequency: u32,
    },
    Constant {
        value: f64,
    },
    Zero,
}

fn one_u32() -> u32 {
    1
}

impl MacroForcing {
    pub fn eval(&self, x: &[f64], length: f64) -> f64 {
        match self {
            MacroForcing::Sine { frequency } => x
                .iter()
                .map(|&xj| (*frequency as f64 * PI * xj / length).sin())
                .product(),
            MacroForcing::Constant { value } => *value,
            MacroForcing::Zero => 0.0,
        }
    }
}

/// Cell factor `f_y`, cellwise constant on the periodic cell mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CellForcing {
    Constant { value: f64 },
    Cellwise { values: Vec<f64> },
}

impl CellForcing {
    pub fn cell_value(&self, cell: usize) -> f64 {
        match self {
            CellForcing::Constant { value } => *value,
            CellForcing::Cellwise { values } => values[cell],
        }
    }
}

/// Separable forcing `f(x, y) = f_x(x) f_y(y) c` with a constant vector `c`
/// in `R^n`; the fine problem uses `f(x, x / eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    #[serde(rename = "macro")]
    pub macro_part: MacroForcing,
    #[serde(rename = "cell")]
    pub cell_part: CellForcing,
    pub components: Vec<f64>,
}

impl ForcingSpec {
    pub fn sine(n: usize) -> Self {
        Self {
            macro_part: MacroForcing::Sine { frequency: 1 },
            cell_part: CellForcing::Constant { value: 1.0 },
            components: vec![1.0; n],
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            macro_part: MacroForcing::Zero,
            cell_part: CellForcing::Constant { value: 0.0 },
            components: vec![0.0; n],
        }
    }

    /// Component `i` of `f(x, y)` for `y` in periodic cell `cell`.
    pub fn eval(&self, x: &[f64], length: f64, cell: usize, i: usize) -> f64 {
        self.macro_part.eval(x, length) * self.cell_part.cell_value(cell) * self.components[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub kernel: f64,
    pub gap_ratio: f64,
    pub cg: f64,
    pub cg_max_iterations: usize,
    pub solvability: f64,
    pub weyl: f64,
    pub energy_identity: f64,
    pub limit_residual: f64,
    pub apriori_growth: f64,
    pub min_order: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            kernel: 1e-8,
            gap_ratio: 1e4,
            cg: 1e-12,
            cg_max_iterations: 100_000,
            solvability: 1e-10,
            weyl: 1e-8,
            energy_identity: 1e-10,
            limit_residual: 1e-10,
            apriori_growth: 1.2,
            min_order: 0.9,
        }
    }
}

/// Either one value for every cell or one value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySpec {
    Uniform(f64),
    Cellwise(Vec<f64>),
}

/// Reference values checked by the `compare` stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Expectations {
    #[serde(default)]
    pub kernel_dim: Option<usize>,
    /// Row-major `(n d) x (n d)` tensor.
    #[serde(default)]
    pub homogenized: Option<Vec<f64>>,
    #[serde(default = "default_rel_tol")]
    pub homogenized_rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    pub name: String,
    pub dim: usize,
    pub components: usize,
    /// Cell mesh resolution `N` shared by the limit and the fine solves.
    pub cells: usize,
    pub geometry: Preset,
    pub density: DensitySpec,
    pub nu: f64,
    pub lambda: f64,
    pub domain_length: f64,
    pub macro_cells: usize,
    pub epsilons: Vec<f64>,
    #[serde(default = "one_usize")]
    pub fine_multiplier: usize,
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub inner_product: InnerProductChoice,
    /// Resolutions for the key-constant refinement history.
    #[serde(default)]
    pub key_constant_cells: Vec<usize>,
    /// Resolution for the reported homogenized tensor, if different from `cells`.
    #[serde(default)]
    pub homogenize_cells: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub expected: Expectations,
}

fn one_usize() -> usize {
    1
}

impl ProblemConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)
            .map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        if !(1..=2).contains(&self.dim) {
            return bad(format!("dim must be 1 or 2, got {}", self.dim));
        }
        if self.components == 0 {
            return bad("components must be at least 1".into());
        }
        if self.cells < 2 {
            return bad(format!("cells must be at least 2, got {}", self.cells));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return bad(format!(
                "domain_length must be positive, got {}",
                self.domain_length
            ));
        }
        if self.macro_cells < 2 {
            return bad(format!(
                "macro_cells must be at least 2, got {}",
                self.macro_cells
            ));
        }
        if self.fine_multiplier == 0 {
            return bad("fine_multiplier must be at least 1".into());
        }
        for &eps in &self.epsilons {
            if !(eps > 0.0 && eps < 1.0) {
                return bad(format!("epsilon {eps} not in (0, 1)"));
            }
            self.periods(eps)?;
        }
        if self.forcing.components.len() != self.components {
            return bad(format!(
                "forcing has {} components, system has {}",
                self.forcing.components.len(),
                self.components
            ));
        }
        if let CellForcing::Cellwise { values } = &self.forcing.cell_part {
            if values.len() != self.cell_count(self.cells) {
                return bad(format!(
                    "cellwise forcing has {} values, mesh has {} cells",
                    values.len(),
                    self.cell_count(self.cells)
                ));
            }
        }
        if let DensitySpec::Cellwise(v) = &self.density {
            if v.len() != self.cell_count(self.cells) {
                return bad(format!(
                    "density has {} values, mesh has {} cells",
                    v.len(),
                    self.cell_count(self.cells)
                ));
            }
        }
        let resampled = self
            .key_constant_cells
            .iter()
            .chain(self.homogenize_cells.iter())
            .any(|&c| c != self.cells);
        if resampled
            && (!self.geometry.is_resamplable() || matches!(self.density, DensitySpec::Cellwise(_)))
        {
            return bad("voxel data cannot be resampled to other cell resolutions".into());
        }
        if let Some(&c) = self.key_constant_cells.iter().find(|&&c| c < 2) {
            return bad(format!("key_constant_cells entry {c} < 2"));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("kernel", t.kernel),
            ("gap_ratio", t.gap_ratio),
            ("cg", t.cg),
            ("solvability", t.solvability),
            ("weyl", t.weyl),
            ("energy_identity", t.energy_identity),
            ("limit_residual", t.limit_residual),
            ("apriori_growth", t.apriori_growth),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("tolerance {name} must be positive, got {v}"));
            }
        }
        self.tensor_at(self.cells)?;
        Ok(())
    }

    fn cell_count(&self, cells: usize) -> usize {
        cells.pow(self.dim as u32)
    }

    /// Number of periods `L / eps` along each axis; must be an integer.
    pub fn periods(&self, eps: f64) -> Result<usize> {
        let p = self.domain_length / eps;
        let r = p.round();
        if (p - r).abs() > 1e-9 * p.max(1.0) || r < 1.0 {
            return Err(Error::Config(format!(
                "L / eps = {p} is not an integer (L = {}, eps = {eps})",
                self.domain_length
            )));
        }
        Ok(r as usize)
    }

    pub fn tensor(&self) -> Result<CoefficientTensor> {
        self.tensor_at(self.cells)
    }

    pub fn tensor_at(&self, cells: usize) -> Result<CoefficientTensor> {
        preset_geometry(&self.geometry, self.dim, self.components, cells)
    }

    pub fn density(&self) -> DensityField {
        self.density_at(self.cells)
    }

    pub fn density_at(&self, cells: usize) -> DensityField {
        match &self.density {
            DensitySpec::Uniform(v) => DensityField::uniform(self.cell_count(cells), *v),
            DensitySpec::Cellwise(v) => DensityField::from_values_unchecked(v.clone()),
        }
    }

    pub fn homogenize_resolution(&self) -> usize {
        self.homogenize_cells.unwrap_or(self.cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> String {
        r#"{
            "schema_version": 1,
            "name": "laminate",
            "dim": 1,
            "components": 1,
            "cells": 8,
            "geometry": {"type": "laminate", "values": [1.0, 2.0]},
            "density": 1.0,
            "nu": 1.0,
            "lambda": 1.0,
            "domain_length": 1.0,
            "macro_cells": 16,
            "epsilons": [0.25, 0.125],
            "forcing": {"macro": {"type": "sine"}, "cell": {"type": "constant", "value": 1.0}, "components": [1.0]}
        }"#
        .to_string()
    }

    #[test]
    fn parses_with_defaults() {
        let cfg = ProblemConfig::from_json_str(&sample()).unwrap();
        assert_eq!(cfg.fine_multiplier, 1);
        assert_eq!(cfg.inner_product, InnerProductChoice::MeanGradient);
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert_eq!(cfg.periods(0.125).unwrap(), 8);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        for lam in ["0.0", "-1.0"] {
            let s = sample().replace("\"lambda\": 1.0", &format!("\"lambda\": {lam}"));
            assert!(matches!(
                ProblemConfig::from_json_str(&s),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn rejects_bad_epsilon_and_fields() {
        let s = sample().replace("[0.25, 0.125]", "[0.3]");
        assert!(ProblemConfig::from_json_str(&s).is_err());
        let s = sample().replace("[0.25, 0.125]", "[1.0]");
        assert!(ProblemConfig::from_json_str(&s).is_err());
        let s = sample().replace("\"nu\": 1.0", "\"nu\": 1.0, \"bogus\": 3");
        assert!(ProblemConfig::from_json_str(&s).is_err());
        let s = sample().replace("\"cells\": 8", "\"cells\": 7");
        assert!(ProblemConfig::from_json_str(&s).is_err());
    }

    #[test]
    fn forcing_evaluation() {
        let f = ForcingSpec::sine(2);
        let v = f.eval(&[0.5, 0.5], 1.0, 0, 1);
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(ForcingSpec::zero(1).eval(&[0.3], 1.0, 0, 0), 0.0);
    }
}
