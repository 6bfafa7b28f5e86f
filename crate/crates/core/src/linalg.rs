//! Dense complex linear-algebra carriers and the handful of kernels the
//! simulator needs on top of `nalgebra`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

pub const J: C64 = C64::new(0.0, 1.0);

/// Squared Frobenius norm.
pub fn frobenius_sq(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Frobenius inner product `<a, b> = sum conj(a_ij) b_ij`.
pub fn inner(a: &ComplexMatrix, b: &ComplexMatrix) -> C64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// `||a - b||_F / ||b||_F`, or the absolute difference norm when `b` is zero.
pub fn relative_frobenius_error(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let base = frobenius_sq(b).sqrt();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

/// Multiplies row `i` of `m` by `diag[i]` in place.
pub fn scale_rows(m: &mut ComplexMatrix, diag: &[C64]) {
    assert_eq!(m.nrows(), diag.len());
    for mut col in m.column_iter_mut() {
        for (z, d) in col.iter_mut().zip(diag) {
            *z *= d;
        }
    }
}

pub fn diagonal(diag: &[C64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&ComplexVector::from_column_slice(diag))
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    ComplexMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Singular values sorted in non-increasing order.
pub fn singular_values_desc(m: &ComplexMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank with tolerance `rel_tol * sigma_max`.
pub fn numerical_rank(m: &ComplexMatrix, rel_tol: f64) -> usize {
    let sv = singular_values_desc(m);
    match sv.first() {
        Some(&max) if max > 0.0 => sv.iter().filter(|&&s| s > rel_tol * max).count(),
        _ => 0,
    }
}

/// A fixed complex matrix stored both as-is and split into real and
/// imaginary parts; products go through four real GEMMs, which are far
/// faster than nalgebra's generic complex kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    full: ComplexMatrix,
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(full: ComplexMatrix) -> Self {
        let re = full.map(|z| z.re);
        let im = full.map(|z| z.im);
        Self { full, re, im }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.full
    }

    pub fn nrows(&self) -> usize {
        self.full.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.full.ncols()
    }

    /// `A * x`
    pub fn apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.ncols(), x.nrows(), "operator/input shape mismatch");
        let (xr, xi) = split(x);
        let rr = &self.re * &xr - &self.im * &xi;
        let ri = &self.re * &xi + &self.im * &xr;
        join(&rr, &ri)
    }

    /// `A^H * x`
    pub fn apply_adjoint(&self, x: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.nrows(), x.nrows(), "operator/input shape mismatch");
        let (xr, xi) = split(x);
        let rr = self.re.tr_mul(&xr) + self.im.tr_mul(&xi);
        let ri = self.re.tr_mul(&xi) - self.im.tr_mul(&xr);
        join(&rr, &ri)
    }
}

fn split(x: &ComplexMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    (x.map(|z| z.re), x.map(|z| z.im))
}

fn join(re: &DMatrix<f64>, im: &DMatrix<f64>) -> ComplexMatrix {
    re.zip_map(im, C64::new)
}

/// Writes a matrix in long CSV form, one entry per line: `row,col,re,im`.
pub fn write_csv<W: Write>(m: &ComplexMatrix, mut out: W) -> Result<()> {
    writeln!(out, "row,col,re,im")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            writeln!(out, "{i},{j},{},{}", z.re, z.im)?;
        }
    }
    Ok(())
}

/// Writes a real matrix as a plain CSV grid (one line per row).
pub fn write_real_grid_csv<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads the format produced by [`write_csv`].
pub fn read_csv<R: BufRead>(input: R) -> Result<ComplexMatrix> {
    let mut entries = Vec::new();
    let (mut rows, mut cols) = (0usize, 0usize);
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if lineno == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidArgument(format!("csv line {}: `{line}`", lineno + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        let i: usize = fields[0].parse().map_err(|_| bad())?;
        let j: usize = fields[1].parse().map_err(|_| bad())?;
        let re: f64 = fields[2].parse().map_err(|_| bad())?;
        let im: f64 = fields[3].parse().map_err(|_| bad())?;
        rows = rows.max(i + 1);
        cols = cols.max(j + 1);
        entries.push((i, j, C64::new(re, im)));
    }
    let mut m = ComplexMatrix::zeros(rows, cols);
    for (i, j, z) in entries {
        m[(i, j)] = z;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(r: usize, c: usize, salt: f64) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, c, |i, j| {
            C64::new((i as f64 * 0.7 + j as f64 * 1.3 + salt).sin(), (i as f64 - j as f64 * salt).cos())
        })
    }

    #[test]
    fn split_products_match_complex_products() {
        let a = sample(5, 3, 0.4);
        let x = sample(3, 2, 1.1);
        let op = DenseOperator::new(a.clone());
        assert!(relative_frobenius_error(&op.apply(&x), &(&a * &x)) < 1e-14);
        let y = sample(5, 4, 2.0);
        assert!(relative_frobenius_error(&op.apply_adjoint(&y), &(a.adjoint() * &y)) < 1e-14);
    }

    #[test]
    fn kron_layout_is_row_major_blocks() {
        let a = sample(2, 2, 0.1);
        let b = sample(3, 3, 0.2);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (6, 6));
        assert_eq!(k[(4, 5)], a[(1, 1)] * b[(1, 2)]);
        assert_eq!(k[(2, 3)], a[(0, 1)] * b[(2, 0)]);
    }

    #[test]
    fn csv_round_trip() {
        let m = sample(3, 4, 0.9);
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let u = sample(4, 1, 0.3);
        let v = sample(1, 5, 0.8);
        assert_eq!(numerical_rank(&(&u * &v), 1e-10), 1);
        assert_eq!(numerical_rank(&ComplexMatrix::zeros(3, 3), 1e-10), 0);
    }
}
