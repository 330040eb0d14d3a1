//! Compressed sparse row storage and the preconditioned conjugate
//! gradient solver used for every SPD system in the crate.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Assembly accumulator; duplicate (row, col) entries sum on compression.
#[derive(Debug, Clone, Default)]
pub struct TripletBuffer<T> {
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> TripletBuffer<T> {
    pub fn new() -> Self {
        TripletBuffer { entries: Vec::new() }
    }

    pub fn with_capacity(cap: usize) -> Self {
        TripletBuffer {
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: T) {
        self.entries.push((row, col, value));
    }

    pub fn compress(self, n: usize) -> Result<SparseMatrix<T>> {
        let mut counts = vec![0usize; n + 1];
        for &(r, c, _) in &self.entries {
            if r >= n || c >= n {
                return Err(Error::invalid(format!(
                    "triplet index ({r},{c}) out of range for size {n}"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; self.entries.len()];
        let mut vals = vec![T::zero(); self.entries.len()];
        let mut cursor = counts.clone();
        for &(r, c, v) in &self.entries {
            let pos = cursor[r];
            cols[pos] = c;
            vals[pos] = v;
            cursor[r] += 1;
        }
        // Sort each row by column and merge duplicates.
        let mut row_ptr = vec![0usize; n + 1];
        let mut out_cols = Vec::with_capacity(cols.len());
        let mut out_vals = Vec::with_capacity(vals.len());
        for r in 0..n {
            let lo = counts[r];
            let hi = counts[r + 1];
            let mut row: Vec<(usize, T)> =
                cols[lo..hi].iter().copied().zip(vals[lo..hi].iter().copied()).collect();
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if out_cols.len() > row_ptr[r] && *out_cols.last().unwrap() == c {
                    *out_vals.last_mut().unwrap() += v;
                } else {
                    out_cols.push(c);
                    out_vals.push(v);
                }
            }
            row_ptr[r + 1] = out_cols.len();
        }
        Ok(SparseMatrix {
            n,
            row_ptr,
            col_idx: out_cols,
            values: out_vals,
        })
    }
}

/// Square CSR matrix; column indices strictly increasing within each row.
#[derive(Debug, Clone)]
pub struct SparseMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => T::zero(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        for r in 0..self.n {
            let mut acc = T::zero();
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[i] * x[self.col_idx[i]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// `self + alpha * other`, both matrices of the same size.
    pub fn add_scaled(&self, other: &SparseMatrix<T>, alpha: T) -> SparseMatrix<T> {
        assert_eq!(self.n, other.n);
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.n {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let next = match (ca.get(i), cb.get(j)) {
                    (Some(&a), Some(&b)) if a == b => {
                        let v = va[i] + alpha * vb[j];
                        i += 1;
                        j += 1;
                        (a, v)
                    }
                    (Some(&a), Some(&b)) if a < b => {
                        let v = va[i];
                        i += 1;
                        (a, v)
                    }
                    (Some(_), Some(&b)) => {
                        let v = alpha * vb[j];
                        j += 1;
                        (b, v)
                    }
                    (Some(&a), None) => {
                        let v = va[i];
                        i += 1;
                        (a, v)
                    }
                    (None, Some(&b)) => {
                        let v = alpha * vb[j];
                        j += 1;
                        (b, v)
                    }
                    (None, None) => unreachable!(),
                };
                col_idx.push(next.0);
                values.push(next.1);
            }
            row_ptr[r + 1] = col_idx.len();
        }
        SparseMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Max-norm of `A - A^T`; used by tests to check assembler symmetry.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Symmetric row/column scaling-free elimination of the given rows:
    /// eliminated rows and columns become identity, preserving symmetry.
    pub fn eliminate_symmetric(&self, eliminate: &[bool]) -> SparseMatrix<T> {
        let mut buf = TripletBuffer::with_capacity(self.nnz());
        for r in 0..self.n {
            if eliminate[r] {
                buf.push(r, r, T::one());
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if !eliminate[c] {
                    buf.push(r, c, v);
                }
            }
        }
        buf.compress(self.n).expect("indices in range")
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients with zero initial guess.
///
/// Returns x with `||Ax - b||_2 <= tol * ||b||_2`; the iteration cap is
/// `10 n` and running out is a hard error.
pub fn solve_spd<T: Real>(a: &SparseMatrix<T>, b: &[T], tol: T) -> Result<Vec<T>> {
    let x0 = vec![T::zero(); a.size()];
    solve_spd_warm(a, b, tol, x0)
}

/// Same contract as [`solve_spd`] but starting from a caller-supplied
/// iterate (time stepping reuses the previous step's solution).
pub fn solve_spd_warm<T: Real>(
    a: &SparseMatrix<T>,
    b: &[T],
    tol: T,
    mut x: Vec<T>,
) -> Result<Vec<T>> {
    let n = a.size();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let b_norm = norm2(b);
    if b_norm == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    let diag = a.diagonal();
    let inv_diag: Vec<T> = diag
        .iter()
        .map(|&d| if d != T::zero() { T::one() / d } else { T::one() })
        .collect();

    let mut r = b.to_vec();
    let mut ax = vec![T::zero(); n];
    a.matvec_into(&x, &mut ax);
    for i in 0..n {
        r[i] -= ax[i];
    }
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&ri, &di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let cap = 10 * n.max(20);
    let target = tol * b_norm;
    let mut res = norm2(&r);
    for _ in 0..cap {
        if res <= target {
            return Ok(x);
        }
        let mut ap = vec![T::zero(); n];
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= T::zero() {
            return Err(Error::SolverFailure {
                context: "cg: matrix not positive definite".into(),
                residual: res.as_f64(),
                iterations: 0,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r);
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= target {
        Ok(x)
    } else {
        Err(Error::SolverFailure {
            context: "cg: iteration cap exceeded".into(),
            residual: (res / b_norm).as_f64(),
            iterations: cap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn compress_sums_duplicates() {
        let mut buf = TripletBuffer::new();
        buf.push(0, 0, 1.0);
        buf.push(0, 0, 2.0);
        let a = buf.compress(1).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 0), 3.0);
    }

    #[test]
    fn compress_empty_is_zero() {
        let a = TripletBuffer::<f64>::new().compress(3).unwrap();
        assert_eq!(a.nnz(), 0);
        assert_eq!(a.matvec(&[1.0, 2.0, 3.0]), vec![0.0; 3]);
    }

    #[test]
    fn compress_symmetric_offdiag() {
        let mut buf = TripletBuffer::new();
        buf.push(1, 0, 2.0);
        buf.push(0, 1, 2.0);
        let a = buf.compress(2).unwrap();
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn compress_rejects_out_of_range() {
        let mut buf = TripletBuffer::new();
        buf.push(2, 0, 1.0);
        assert!(buf.compress(2).is_err());
    }

    #[test]
    fn columns_strictly_increasing() {
        let mut buf = TripletBuffer::new();
        for (r, c, v) in [(0, 2, 1.0), (0, 0, 2.0), (0, 1, 3.0), (1, 1, 1.0)] {
            buf.push(r, c, v);
        }
        let a = buf.compress(3).unwrap();
        let (cols, _) = a.row(0);
        assert_eq!(cols, &[0, 1, 2]);
    }

    #[test]
    fn solve_identity() {
        let a = SparseMatrix::<f64>::identity(4);
        let b = vec![3.0, -1.0, 0.5, 2.0];
        let x = solve_spd(&a, &b, 1e-12).unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_diag() {
        let mut buf = TripletBuffer::<f64>::new();
        buf.push(0, 0, 2.0);
        let a = buf.compress(1).unwrap();
        let x = solve_spd(&a, &[4.0], 1e-12).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matvec_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let n = 20;
        let mut dense = vec![vec![0.0f64; n]; n];
        let mut buf = TripletBuffer::new();
        for _ in 0..120 {
            let r = rng.gen_range(0..n);
            let c = rng.gen_range(0..n);
            let v: f64 = rng.gen_range(-1.0..1.0);
            dense[r][c] += v;
            buf.push(r, c, v);
        }
        let a = buf.compress(n).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = a.matvec(&x);
        for r in 0..n {
            let want: f64 = (0..n).map(|c| dense[r][c] * x[c]).sum();
            assert!((y[r] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn cg_residual_contract_on_poisson() {
        // 1D Poisson stiffness with h = 0.25 and q = 1 against the
        // analytic solution u = sin(pi x).
        let m = 4;
        let h = 1.0 / m as f64;
        let mut buf = TripletBuffer::new();
        let interior = m - 1;
        for i in 0..interior {
            buf.push(i, i, 2.0 / h);
            if i + 1 < interior {
                buf.push(i, i + 1, -1.0 / h);
                buf.push(i + 1, i, -1.0 / h);
            }
        }
        let a = buf.compress(interior).unwrap();
        let pi = std::f64::consts::PI;
        // b = M * (pi^2 sin(pi x_i)) with the P1 mass matrix.
        let f = |x: f64| pi * pi * (pi * x).sin();
        let b: Vec<f64> = (1..m)
            .map(|i| {
                let xm = (i as f64 - 1.0) * h;
                let xi = i as f64 * h;
                let xp = (i as f64 + 1.0) * h;
                h / 6.0 * (f(xm) + 4.0 * f(xi) + f(xp))
            })
            .collect();
        let x = solve_spd(&a, &b, 1e-10).unwrap();
        let r = {
            let ax = a.matvec(&x);
            let mut r = 0.0;
            for i in 0..interior {
                r += (ax[i] - b[i]).powi(2);
            }
            r.sqrt()
        };
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(r <= 1e-10 * bn);
        for i in 0..interior {
            let exact = (pi * (i as f64 + 1.0) * h).sin();
            assert!((x[i] - exact).abs() < 0.1 * h * h / 0.0625 * 0.0625 + 0.05);
            assert!((x[i] - exact).abs() < 0.05); // O(h^2) at h = 1/4
        }
    }

    #[test]
    fn cg_is_deterministic() {
        let mut buf = TripletBuffer::new();
        for i in 0..10usize {
            buf.push(i, i, 4.0);
            if i + 1 < 10 {
                buf.push(i, i + 1, -1.0);
                buf.push(i + 1, i, -1.0);
            }
        }
        let a = buf.compress(10).unwrap();
        let b: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let x1 = solve_spd(&a, &b, 1e-12).unwrap();
        let x2 = solve_spd(&a, &b, 1e-12).unwrap();
        assert_eq!(x1, x2);
    }

    #[test]
    fn add_scaled_merges_patterns() {
        let mut b1 = TripletBuffer::new();
        b1.push(0, 0, 1.0);
        b1.push(1, 1, 1.0);
        let m = b1.compress(2).unwrap();
        let mut b2 = TripletBuffer::new();
        b2.push(0, 1, 2.0);
        b2.push(1, 1, 3.0);
        let a = b2.compress(2).unwrap();
        let s = m.add_scaled(&a, 0.5);
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 1), 2.5);
    }
}
