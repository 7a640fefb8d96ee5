//! Thin strided-matrix helpers over `matrixmultiply::dgemm`.
//!
//! Matrices are row-major slices. Views carry explicit strides so that gate
//! blocks and transposes can be multiplied without copies.

#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Row-major matrix with a custom row stride (column sub-block).
    pub fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize) -> Self {
        Self { data, rows, cols, rs, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view exceeds its buffer");
        }
    }
}

/// `c ← α·a·b + β·c` where `c` is row-major `a.rows × b.cols` with row stride `rsc`.
pub fn gemm(alpha: f64, a: View, b: View, beta: f64, c: &mut [f64], rsc: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + n <= c.len(), "output exceeds its buffer");
    if k == 0 {
        c.chunks_mut(rsc).take(m).for_each(|row| row[..n].iter_mut().for_each(|x| *x *= beta));
        return;
    }
    // SAFETY: every index touched by dgemm is bounded by the checks above and
    // `c` is borrowed mutably, so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `y ← W·x + b` for row-major `W` (`y.len() × x.len()`).
pub fn affine(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let k = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &w[i * k..(i + 1) * k];
        *yi = b[i] + dot(row, x);
    }
}

/// `y += Wᵀ·x` for row-major `W` (`x.len() × y.len()`).
pub fn add_transposed(w: &[f64], x: &[f64], y: &mut [f64]) {
    let n = y.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let row = &w[i * n..(i + 1) * n];
            for (yj, wj) in y.iter_mut().zip(row) {
                *yj += xi * wj;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Column sums of a row-major `rows × cols` block with row stride `rs`, added to `out`.
pub fn add_column_sums(m: &[f64], rows: usize, rs: usize, out: &mut [f64]) {
    let n = out.len();
    for r in 0..rows {
        for (o, x) in out.iter_mut().zip(&m[r * rs..r * rs + n]) {
            *o += x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_and_transposes() {
        let a: Vec<f64> = (0..12).map(|x| x as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|x| (x as f64).sin()).collect();
        let expect = naive(&a, 3, 4, &b, 5);
        let mut c = vec![0.0; 15];
        gemm(1.0, View::new(&a, 3, 4), View::new(&b, 4, 5), 0.0, &mut c, 5);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // (Bᵀ Aᵀ) = (A B)ᵀ
        let mut ct = vec![0.0; 15];
        gemm(1.0, View::new(&b, 4, 5).t(), View::new(&a, 3, 4).t(), 0.0, &mut ct, 3);
        for i in 0..3 {
            for j in 0..5 {
                assert!((ct[j * 3 + i] - expect[i * 5 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strided_block_and_accumulate() {
        // left 2 columns of a 3×4 matrix
        let a: Vec<f64> = (0..12).map(|x| x as f64).collect();
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let mut c = vec![1.0; 6];
        gemm(2.0, View::strided(&a, 3, 2, 4), View::new(&b, 2, 2), 1.0, &mut c, 2);
        assert_eq!(c, vec![7.0, 9.0, 39.0, 57.0, 71.0, 105.0]);
    }

    #[test]
    fn matvec_helpers() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut y = vec![0.0; 2];
        affine(&w, &[1.0, -1.0], &[1.0, 0.0, 2.0], &mut y);
        assert_eq!(y, vec![8.0, 15.0]);
        let mut z = vec![0.0; 3];
        add_transposed(&w, &[1.0, 1.0], &mut z);
        assert_eq!(z, vec![5.0, 7.0, 9.0]);
    }
}
