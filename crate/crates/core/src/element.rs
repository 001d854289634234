//! Multilinear (Q1) reference element on `[0,1]^d`, `d <= 2`, and tensor
//! Gauss rules. Shared by the periodic cell mesh, the macro mesh and the
//! fine-scale grid.

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_1d(points: usize) -> Vec<(f64, f64)> {
    let raw: Vec<(f64, f64)> = match points {
        1 => vec![(0.0, 2.0)],
        2 => {
            let a = 1.0 / 3f64.sqrt();
            vec![(-a, 1.0), (a, 1.0)]
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            vec![(-a, 5.0 / 9.0), (0.0, 8.0 / 9.0), (a, 5.0 / 9.0)]
        }
        4 => {
            let s = (6.0f64 / 5.0).sqrt();
            let a = ((3.0 - 2.0 * s) / 7.0).sqrt();
            let b = ((3.0 + 2.0 * s) / 7.0).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            vec![(-b, wb), (-a, wa), (a, wa), (b, wb)]
        }
        5 => {
            let s = 2.0 * (10.0f64 / 7.0).sqrt();
            let a = (5.0 - s).sqrt() / 3.0;
            let b = (5.0 + s).sqrt() / 3.0;
            let r = 13.0 * 70f64.sqrt();
            let wa = (322.0 + r) / 900.0;
            let wb = (322.0 - r) / 900.0;
            vec![(-b, wb), (-a, wa), (0.0, 128.0 / 225.0), (a, wa), (b, wb)]
        }
        _ => panic!("gauss rule with {points} points not tabulated"),
    };
    raw.into_iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

/// Tensor-product rule on the reference cell; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl ReferenceRule {
    pub fn gauss(dim: usize, per_axis: usize) -> Self {
        let g = gauss_1d(per_axis);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match dim {
            1 => {
                for &(t, w) in &g {
                    points.push([t, 0.0]);
                    weights.push(w);
                }
            }
            2 => {
                // first axis fastest
                for &(t1, w1) in &g {
                    for &(t0, w0) in &g {
                        points.push([t0, t1]);
                        weights.push(w0 * w1);
                    }
                }
            }
            _ => panic!("dimension {dim} not supported"),
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn corners(dim: usize) -> usize {
    1 << dim
}

/// Shape function values at reference point `t`; corner `c` has offset bit
/// `(c >> j) & 1` along axis `j`.
pub fn q1_values(dim: usize, t: &[f64; 2]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (c, o) in out.iter_mut().enumerate().take(corners(dim)) {
        let mut v = 1.0;
        for (j, &tj) in t.iter().enumerate().take(dim) {
            v *= if (c >> j) & 1 == 1 { tj } else { 1.0 - tj };
        }
        *o = v;
    }
    out
}

/// Reference gradients `d phi_c / d t_j`.
pub fn q1_gradients(dim: usize, t: &[f64; 2]) -> [[f64; 2]; 4] {
    let mut out = [[0.0; 2]; 4];
    for (c, o) in out.iter_mut().enumerate().take(corners(dim)) {
        for j in 0..dim {
            let mut v = if (c >> j) & 1 == 1 { 1.0 } else { -1.0 };
            for (l, &tl) in t.iter().enumerate().take(dim) {
                if l != j {
                    v *= if (c >> l) & 1 == 1 { tl } else { 1.0 - tl };
                }
            }
            o[j] = v;
        }
    }
    out
}

/// Accumulates `w * C grad(phi_c)_i . grad(phi_c')_p` into a local matrix with
/// dof ordering `(corner, component)`.
///
/// `c` is the `(n d) x (n d)` coefficient block in row-major order with row
/// index `i*d + j`.
pub fn add_tensor_form(
    dim: usize,
    n: usize,
    grads: &[[f64; 2]],
    weight: f64,
    c: &[f64],
    local: &mut [f64],
) {
    let nc = grads.len();
    let nd = n * dim;
    let ldim = nc * n;
    for (a, ga) in grads.iter().enumerate() {
        for i in 0..n {
            for (b, gb) in grads.iter().enumerate() {
                for p in 0..n {
                    let mut s = 0.0;
                    for j in 0..dim {
                        for q in 0..dim {
                            s += c[(i * dim + j) * nd + p * dim + q] * ga[j] * gb[q];
                        }
                    }
                    local[(a * n + i) * ldim + b * n + p] += weight * s;
                }
            }
        }
    }
}

/// Accumulates `w * rho phi_c phi_c'` on matching components.
pub fn add_mass(n: usize, values: &[f64], weight: f64, local: &mut [f64]) {
    let nc = values.len();
    let ldim = nc * n;
    for a in 0..nc {
        for b in 0..nc {
            let v = weight * values[a] * values[b];
            for i in 0..n {
                local[(a * n + i) * ldim + b * n + i] += v;
            }
        }
    }
}
