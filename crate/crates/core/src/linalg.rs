//! Dense helpers for the small normal-equation systems (p ≲ 50).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Rows per deterministic accumulation chunk.
const CHUNK: usize = 8192;

/// Row-major design matrix with the intercept in column 0.
#[derive(Debug, Clone)]
pub(crate) struct DesignMatrix {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl DesignMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn dot(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }
}

/// Weighted cross-product accumulator: `Σ w x xᵀ` and `Σ s x`.
#[derive(Debug, Clone)]
pub(crate) struct CrossProducts {
    pub p: usize,
    pub xtwx: Vec<f64>,
    pub xts: Vec<f64>,
    pub scalar: f64,
}

impl CrossProducts {
    pub fn zeros(p: usize) -> Self {
        CrossProducts {
            p,
            xtwx: vec![0.0; p * p],
            xts: vec![0.0; p],
            scalar: 0.0,
        }
    }

    #[inline]
    pub fn add_row(&mut self, x: &[f64], w: f64, s: f64) {
        let p = self.p;
        for a in 0..p {
            let wa = w * x[a];
            self.xts[a] += s * x[a];
            if wa != 0.0 {
                let row = &mut self.xtwx[a * p..a * p + p];
                for b in a..p {
                    row[b] += wa * x[b];
                }
            }
        }
    }

    fn merge(&mut self, other: &CrossProducts) {
        for (a, b) in self.xtwx.iter_mut().zip(&other.xtwx) {
            *a += b;
        }
        for (a, b) in self.xts.iter_mut().zip(&other.xts) {
            *a += b;
        }
        self.scalar += other.scalar;
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let p = self.p;
        DMatrix::from_fn(p, p, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.xtwx[a * p + b]
        })
    }

    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.xts)
    }
}

/// Accumulates per-row contributions in fixed-size chunks across threads and
/// merges the partial sums in chunk order, so results do not depend on the
/// thread count. `row_fn(i, acc)` adds row `i`'s contribution.
pub(crate) fn accumulate<F>(n: usize, p: usize, row_fn: F) -> CrossProducts
where
    F: Fn(usize, &mut CrossProducts) + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<CrossProducts> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = CrossProducts::zeros(p);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                row_fn(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = CrossProducts::zeros(p);
    for part in &partials {
        total.merge(part);
    }
    total
}

/// Index of the first column that is (numerically) a linear combination of
/// the preceding ones, judged on the Gram matrix by incremental Cholesky.
pub(crate) fn first_dependent_column(gram: &DMatrix<f64>) -> Option<usize> {
    let p = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let diag = gram[(j, j)];
        if diag <= 0.0 {
            return Some(j);
        }
        let mut rem = diag;
        for k in 0..j {
            rem -= l[(j, k)] * l[(j, k)];
        }
        if rem <= 1e-10 * diag {
            return Some(j);
        }
        let ljj = rem.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..p {
            let mut v = gram[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    None
}

pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Some(ch.solve(b)),
        None => a.clone().lu().solve(b),
    }
}

pub(crate) fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => a.clone().try_inverse()?,
    };
    // symmetrize away rounding asymmetry
    Some((&inv + inv.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_dependent_column() {
        // columns: 1, x, 2x
        let rows = [[1.0, 1.0, 2.0], [1.0, 2.0, 4.0], [1.0, 5.0, 10.0]];
        let mut acc = CrossProducts::zeros(3);
        for r in &rows {
            acc.add_row(r, 1.0, 0.0);
        }
        assert_eq!(first_dependent_column(&acc.gram()), Some(2));
        let mut acc = CrossProducts::zeros(2);
        for r in &rows {
            acc.add_row(&r[..2], 1.0, 0.0);
        }
        assert_eq!(first_dependent_column(&acc.gram()), None);
    }

    #[test]
    fn chunked_accumulation_matches_serial() {
        let n = 20_000;
        let acc = accumulate(n, 2, |i, a| a.add_row(&[1.0, (i % 7) as f64], 1.0, 1.0));
        assert_eq!(acc.xtwx[0], n as f64);
        assert_eq!(acc.xts[0], n as f64);
    }
}
