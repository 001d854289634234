use serde::{Deserialize, Serialize};

use super::{CoefficientTensor, GeometryTag};
use crate::error::{Error, Result};
use crate::mesh::multi_index;

/// Named cell geometries. All presets use `a0 = I` and `a1 = value * I` per
/// cell, where `I` is the identity on `R^{n x d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Preset {
    Uniform {
        value: f64,
    },
    /// `values[0]` on `y_1 < 1/2`, `values[1]` on the rest. `N` must be even.
    Laminate {
        values: [f64; 2],
    },
    /// `d = 2`; `values[0]` on the quadrants `(0,0)` and `(1,1)`. `N` must be even.
    Checkerboard {
        values: [f64; 2],
    },
    /// `a1 = matrix_value` outside and `0` inside the centered cube of side
    /// `2 half_width`, whose faces must lie on mesh lines.
    DoublePorosity {
        matrix_value: f64,
        half_width: f64,
    },
    /// Explicit per-cell blocks, cells lexicographic with the first axis fastest.
    CustomVoxel {
        a1: Vec<f64>,
        a0: Vec<f64>,
    },
}

impl Preset {
    pub fn tag(&self) -> GeometryTag {
        match self {
            Preset::Uniform { .. } => GeometryTag::Uniform,
            Preset::Laminate { .. } => GeometryTag::Laminate,
            Preset::Checkerboard { .. } => GeometryTag::Checkerboard,
            Preset::DoublePorosity { .. } => GeometryTag::Inclusion,
            Preset::CustomVoxel { .. } => GeometryTag::CustomVoxel,
        }
    }

    pub fn is_resamplable(&self) -> bool {
        !matches!(self, Preset::CustomVoxel { .. })
    }
}

fn require_even(cells: usize, what: &str) -> Result<()> {
    if !cells.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "{what} needs an even cell count, got N={cells}"
        )));
    }
    Ok(())
}

pub fn preset_geometry(
    preset: &Preset,
    d: usize,
    n: usize,
    cells: usize,
) -> Result<CoefficientTensor> {
    if !(1..=2).contains(&d) {
        return Err(Error::Config(format!(
            "cell dimension must be 1 or 2, got {d}"
        )));
    }
    let count = cells.pow(d as u32);
    let scalar = |f: &dyn Fn([usize; 2]) -> f64| -> Vec<f64> {
        (0..count).map(|c| f(multi_index(d, cells, c))).collect()
    };
    let ones = vec![1.0; count];
    let tag = preset.tag();
    match preset {
        Preset::Uniform { value } => {
            CoefficientTensor::scalar_multiples(n, d, cells, tag, &vec![*value; count], &ones)
        }
        Preset::Laminate { values } => {
            require_even(cells, "laminate")?;
            let s = scalar(&|idx| {
                if idx[0] < cells / 2 {
                    values[0]
                } else {
                    values[1]
                }
            });
            CoefficientTensor::scalar_multiples(n, d, cells, tag, &s, &ones)
        }
        Preset::Checkerboard { values } => {
            if d != 2 {
                return Err(Error::Config("checkerboard requires d = 2".into()));
            }
            require_even(cells, "checkerboard")?;
            let h = cells / 2;
            let s = scalar(&|idx| {
                if (idx[0] < h) == (idx[1] < h) {
                    values[0]
                } else {
                    values[1]
                }
            });
            CoefficientTensor::scalar_multiples(n, d, cells, tag, &s, &ones)
        }
        Preset::DoublePorosity {
            matrix_value,
            half_width,
        } => {
            if !(*half_width > 0.0 && *half_width < 0.5) {
                return Err(Error::Config(format!(
                    "inclusion half-width {half_width} not in (0, 1/2)"
                )));
            }
            let offset = (0.5 - half_width) * cells as f64;
            let lo = offset.round();
            if (offset - lo).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "inclusion of half-width {half_width} is not aligned with an N={cells} mesh"
                )));
            }
            let (lo, hi) = (lo as usize, cells - lo as usize);
            let s = scalar(&|idx| {
                let inside = (0..d).all(|j| idx[j] >= lo && idx[j] < hi);
                if inside {
                    0.0
                } else {
                    *matrix_value
                }
            });
            CoefficientTensor::scalar_multiples(n, d, cells, tag, &s, &ones)
        }
        Preset::CustomVoxel { a1, a0 } => {
            CoefficientTensor::new(n, d, cells, tag, a1.clone(), a0.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laminate_layout() {
        let a = preset_geometry(&Preset::Laminate { values: [1.0, 2.0] }, 1, 1, 8).unwrap();
        let v: Vec<f64> = (0..8).map(|c| a.a1_cell(c)[0]).collect();
        assert_eq!(v, [1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert!(preset_geometry(&Preset::Laminate { values: [1.0, 2.0] }, 1, 1, 7).is_err());
    }

    #[test]
    fn double_porosity_counts_zero_cells() {
        let p = Preset::DoublePorosity {
            matrix_value: 1.0,
            half_width: 0.25,
        };
        let a = preset_geometry(&p, 2, 1, 8).unwrap();
        let zero = (0..64)
            .filter(|&c| a.a1_cell(c).iter().all(|&v| v == 0.0))
            .count();
        assert_eq!(zero, 16);
        assert!(a.a0().chunks(4).all(|b| b == [1.0, 0.0, 0.0, 1.0]));
        assert!(matches!(
            preset_geometry(&p, 2, 1, 6),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn uniform_and_checkerboard() {
        let a = preset_geometry(&Preset::Uniform { value: 3.0 }, 2, 1, 4).unwrap();
        assert!(a.a1().chunks(4).all(|b| b == [3.0, 0.0, 0.0, 3.0]));
        let c = preset_geometry(&Preset::Checkerboard { values: [1.0, 4.0] }, 2, 1, 4).unwrap();
        assert_eq!(c.a1_cell(0)[0], 1.0);
        assert_eq!(c.a1_cell(2)[0], 4.0);
        assert_eq!(c.a1_cell(15)[0], 1.0);
        assert!(preset_geometry(&Preset::Checkerboard { values: [1.0, 4.0] }, 1, 1, 4).is_err());
    }
}
