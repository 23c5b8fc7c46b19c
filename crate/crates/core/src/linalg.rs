//! Small dense matrices with the few operations the flow kernels need:
//! products, LU solves, norms, and a Padé scaling-and-squaring matrix
//! exponential. Dimensions stay at desk scale (d ≤ ~16 plus augmentation),
//! so everything is plain row-major storage without blocking.

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    /// Builds a matrix from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidInput("ragged matrix rows".into()));
        }
        Ok(Mat { rows: r, cols: c, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(self.cols, x.len(), "matrix-vector dimensions must agree");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    pub fn add(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: F) -> Mat<F> {
        let data = self.data.iter().map(|&a| a * s).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn transpose(&self) -> Mat<F> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> F {
        let mut best = F::zero();
        for j in 0..self.cols {
            let mut s = F::zero();
            for i in 0..self.rows {
                s = s + self[(i, j)].abs();
            }
            best = best.max(s);
        }
        best
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> F {
        (0..self.rows)
            .map(|i| self.row(i).iter().fold(F::zero(), |s, &a| s + a.abs()))
            .fold(F::zero(), F::max)
    }

    pub fn norm_fro(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |s, &a| s + a * a)
            .sqrt()
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |s, &a| s.max(a.abs()))
    }

    /// Solves `self * X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Mat<F>) -> Result<Mat<F>> {
        assert!(self.is_square());
        assert_eq!(self.rows, rhs.rows);
        let n = self.rows;
        let mut lu = self.clone();
        let mut x = rhs.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            let (mut piv, mut piv_val) = (k, lu[(k, k)].abs());
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > piv_val {
                    piv = i;
                    piv_val = v;
                }
            }
            if piv_val == F::zero() {
                return Err(Error::SingularMatrix(format!("zero pivot at column {k}")));
            }
            if piv != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, piv * n + j);
                }
                for j in 0..x.cols {
                    x.data.swap(k * x.cols + j, piv * x.cols + j);
                }
                perm.swap(k, piv);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                for j in k + 1..n {
                    lu[(i, j)] = lu[(i, j)] - f * lu[(k, j)];
                }
                for j in 0..x.cols {
                    x[(i, j)] = x[(i, j)] - f * x[(k, j)];
                }
            }
        }
        for k in (0..n).rev() {
            for j in 0..x.cols {
                let mut s = x[(k, j)];
                for m in k + 1..n {
                    s = s - lu[(k, m)] * x[(m, j)];
                }
                x[(k, j)] = s / lu[(k, k)];
            }
        }
        Ok(x)
    }

    pub fn solve_vec(&self, rhs: &[F]) -> Result<Vec<F>> {
        let rhs_m = Mat { rows: rhs.len(), cols: 1, data: rhs.to_vec() };
        let x = self.solve(&rhs_m)?;
        Ok(x.data)
    }

    pub fn inverse(&self) -> Result<Mat<F>> {
        self.solve(&Mat::identity(self.rows))
    }

    /// 1-norm condition number estimate `‖A‖₁ · ‖A⁻¹‖₁`.
    pub fn cond_1(&self) -> Result<F> {
        Ok(self.norm_1() * self.inverse()?.norm_1())
    }

    /// Matrix exponential by Padé approximants with scaling and squaring,
    /// order selected from the 1-norm as in Higham's method. Accurate to
    /// roughly unit roundoff for desk-scale matrices.
    pub fn expm(&self) -> Mat<F> {
        assert!(self.is_square(), "expm requires a square matrix");
        let n = self.rows;
        if n == 0 {
            return Mat::zeros(0, 0);
        }
        let nrm = self.norm_1();

        const THETA: [(f64, usize); 4] = [
            (1.495585217958292e-2, 3),
            (2.53939833006323e-1, 5),
            (9.504178996162932e-1, 7),
            (2.097847961257068e0, 9),
        ];
        for &(theta, m) in &THETA {
            if nrm <= F::c(theta) {
                return pade(self, m);
            }
        }

        let theta13 = F::c(5.371920351148152);
        let mut s = 0u32;
        if nrm > theta13 {
            s = (nrm / theta13).log2().ceil().to_u32().unwrap_or(0).max(1);
        }
        let scaled = self.scale(F::one() / F::c(f64::powi(2.0, s as i32)));
        let mut r = pade(&scaled, 13);
        for _ in 0..s {
            r = r.mul(&r);
        }
        r
    }
}

impl<F> std::ops::Index<(usize, usize)> for Mat<F> {
    type Output = F;
    fn index(&self, (r, c): (usize, usize)) -> &F {
        &self.data[r * self.cols + c]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Mat<F> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut F {
        &mut self.data[r * self.cols + c]
    }
}

/// Diagonal Padé coefficients for the exponential, orders 3..13.
fn pade_coeffs(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[
            17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
        ],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        13 => &[
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ],
        _ => unreachable!("unsupported Padé order"),
    }
}

fn pade<F: Scalar>(a: &Mat<F>, m: usize) -> Mat<F> {
    let n = a.rows();
    let b = pade_coeffs(m);
    let eye = Mat::identity(n);
    let a2 = a.mul(a);

    // u = A * (odd-coefficient polynomial in A²), v = even polynomial.
    let (u, v) = if m == 13 {
        let a4 = a2.mul(&a2);
        let a6 = a4.mul(&a2);
        let u_hi = a6
            .scale(F::c(b[13]))
            .add(&a4.scale(F::c(b[11])))
            .add(&a2.scale(F::c(b[9])));
        let u_lo = a6
            .scale(F::c(b[7]))
            .add(&a4.scale(F::c(b[5])))
            .add(&a2.scale(F::c(b[3])))
            .add(&eye.scale(F::c(b[1])));
        let u = a.mul(&a6.mul(&u_hi).add(&u_lo));
        let v_hi = a6
            .scale(F::c(b[12]))
            .add(&a4.scale(F::c(b[10])))
            .add(&a2.scale(F::c(b[8])));
        let v = a6
            .mul(&v_hi)
            .add(&a6.scale(F::c(b[6])))
            .add(&a4.scale(F::c(b[4])))
            .add(&a2.scale(F::c(b[2])))
            .add(&eye.scale(F::c(b[0])));
        (u, v)
    } else {
        // Powers a², a⁴, ... as needed; accumulate sums directly.
        let mut pow = eye.clone();
        let mut u_sum = Mat::zeros(n, n);
        let mut v_sum = Mat::zeros(n, n);
        for k in 0..=(m / 2) {
            v_sum = v_sum.add(&pow.scale(F::c(b[2 * k])));
            if 2 * k < m {
                u_sum = u_sum.add(&pow.scale(F::c(b[2 * k + 1])));
            }
            if k < m / 2 {
                pow = pow.mul(&a2);
            }
        }
        (a.mul(&u_sum), v_sum)
    };

    let num = v.add(&u);
    let den = v.sub(&u);
    den.solve(&num).expect("Padé denominator must be nonsingular")
}
