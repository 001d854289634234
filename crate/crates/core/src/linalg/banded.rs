use super::Csr;

/// Cholesky factor `A = L L^T` of a symmetric banded matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// Row `i` stores `L[i, i-bw ..= i]` at `band[i*(bw+1) ..]`, left-padded.
    band: Vec<f64>,
}

/// Row index and value of the first non-positive pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    pub row: usize,
    pub pivot: f64,
}

impl BandedCholesky {
    /// Factors the lower triangle of `a`; the upper triangle is ignored.
    pub fn factor(a: &Csr) -> Result<Self, PivotFailure> {
        let n = a.nrows();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(PivotFailure { row: i, pivot: s });
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.band[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = y[i];
            for k in (i + 1)..=hi {
                s -= self.band[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        y
    }

    /// Smallest diagonal entry of `L`, squared.
    pub fn min_pivot(&self) -> f64 {
        let w = self.bw + 1;
        (0..self.n)
            .map(|i| self.band[i * w + self.bw].powi(2))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_and_solves_banded_spd() {
        let n = 30;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + i as f64 * 0.01));
            for off in 1..=3 {
                if i + off < n {
                    let v = -0.5 / off as f64;
                    t.push((i, i + off, v));
                    t.push((i + off, i, v));
                }
            }
        }
        let a = Csr::from_triplets(n, n, t);
        let chol = BandedCholesky::factor(&a).unwrap();
        assert_eq!(chol.bandwidth(), 3);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let b = a.apply(&x);
        let y = chol.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_reports_pivot_row() {
        let a = Csr::from_triplets(
            3,
            3,
            vec![
                (0, 0, 1.0),
                (1, 1, 1.0),
                (1, 2, 2.0),
                (2, 1, 2.0),
                (2, 2, 1.0),
            ],
        );
        let err = BandedCholesky::factor(&a).unwrap_err();
        assert_eq!(err.row, 2);
        assert!(err.pivot < 0.0);
    }
}
