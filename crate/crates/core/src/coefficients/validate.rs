use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::CoefficientTensor;

/// Tolerance for symmetry and nonnegativity of constructed data.
pub const TOL_SYM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Cell where the reported extreme is attained.
    pub cell: Option<usize>,
}

/// Distinct blocks and the first cell carrying each one.
fn distinct_blocks(blocks: &[f64], width: usize) -> Vec<(usize, &[f64])> {
    let mut seen: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (c, b) in blocks.chunks(width).enumerate() {
        let key: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
        if let std::collections::btree_map::Entry::Vacant(slot) = seen.entry(key) {
            slot.insert(c);
            out.push((c, b));
        }
    }
    out
}

/// Largest `|a_{ijpq} - a_{pqij}|` over both tensors and all cells.
pub fn validate_symmetry(a: &CoefficientTensor) -> ValidityReport {
    let nd = a.block_size();
    let mut worst = 0.0;
    let mut cell = None;
    for blocks in [a.a1(), a.a0()] {
        for (c, b) in blocks.chunks(nd * nd).enumerate() {
            for r in 0..nd {
                for s in (r + 1)..nd {
                    let diff = (b[r * nd + s] - b[s * nd + r]).abs();
                    if diff > worst {
                        worst = diff;
                        cell = Some(c);
                    }
                }
            }
        }
    }
    ValidityReport {
        check: "symmetry".into(),
        value: worst,
        threshold: TOL_SYM,
        pass: worst <= TOL_SYM,
        cell,
    }
}

/// Smallest eigenvalue of the per-cell `a1` block over all cells.
pub fn validate_nonnegativity(a: &CoefficientTensor) -> ValidityReport {
    let nd = a.block_size();
    let mut worst = f64::INFINITY;
    let mut cell = None;
    for (c, b) in distinct_blocks(a.a1(), nd * nd) {
        let m = nalgebra::DMatrix::from_row_slice(nd, nd, b);
        let sym = (&m + m.transpose()) * 0.5;
        let lo = sym.symmetric_eigenvalues().min();
        if lo < worst {
            worst = lo;
            cell = Some(c);
        }
    }
    ValidityReport {
        check: "nonnegativity".into(),
        value: worst,
        threshold: -TOL_SYM,
        pass: worst >= -TOL_SYM,
        cell,
    }
}

fn unit_directions(size: usize, count: usize) -> Vec<[f64; 2]> {
    if size == 1 {
        return vec![[1.0, 0.0]];
    }
    (0..count)
        .map(|k| {
            let t = PI * k as f64 / count as f64;
            [t.cos(), t.sin()]
        })
        .collect()
}

fn rank_one_min(block: &[f64], n: usize, d: usize, count: usize) -> f64 {
    let nd = n * d;
    let xis = unit_directions(n, count);
    let etas = unit_directions(d, count);
    let mut z = [0.0; 4];
    let mut best = f64::INFINITY;
    for xi in &xis {
        for eta in &etas {
            for i in 0..n {
                for j in 0..d {
                    z[i * d + j] = xi[i] * eta[j];
                }
            }
            let mut v = 0.0;
            for r in 0..nd {
                for s in 0..nd {
                    v += block[r * nd + s] * z[r] * z[s];
                }
            }
            best = best.min(v);
        }
    }
    best
}

/// Smallest rank-one value `(a0 + a1)(xi x eta, xi x eta)` over unit `xi`,
/// `eta`, sampled on an angular grid that starts at 360 directions and is
/// doubled until the minimum moves by less than `1e-6`.
pub fn validate_strong_ellipticity(a: &CoefficientTensor, nu: f64) -> ValidityReport {
    let (n, d) = (a.components(), a.dim());
    let nd = n * d;
    let sum: Vec<f64> = a.a1().iter().zip(a.a0()).map(|(x, y)| x + y).collect();
    let blocks = distinct_blocks(&sum, nd * nd);
    let scan = |count: usize| {
        blocks
            .iter()
            .map(|(c, b)| (rank_one_min(b, n, d, count), *c))
            .fold((f64::INFINITY, None), |acc, (v, c)| {
                if v < acc.0 {
                    (v, Some(c))
                } else {
                    acc
                }
            })
    };
    let mut count = 360;
    let mut current = scan(count);
    while count < 360 << 8 && (n > 1 || d > 1) {
        count *= 2;
        let next = scan(count);
        let settled = (next.0 - current.0).abs() < 1e-6;
        current = next;
        if settled {
            break;
        }
    }
    ValidityReport {
        check: "strong_ellipticity".into(),
        value: current.0,
        threshold: nu,
        pass: current.0 >= nu - TOL_SYM,
        cell: current.1,
    }
}

pub fn validate_all(a: &CoefficientTensor, nu: f64) -> Vec<ValidityReport> {
    vec![
        validate_symmetry(a),
        validate_nonnegativity(a),
        validate_strong_ellipticity(a, nu),
    ]
}
