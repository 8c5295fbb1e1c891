//! Dense linear solves for the MNA systems, over f64 and Complex64.
//!
//! These matrices are brutal on LU: order-one voltage-source rows,
//! millisiemens transconductances, and 1e-12 S regularization entries all
//! in one system, with ideal square-law devices contributing exact zeros.
//! Either pivoting flavor of LU can manufacture a cancellation-polluted
//! tiny pivot and silently lose six digits of the solution. Householder
//! QR with column pivoting has no growth pathology, and at fewer than a
//! hundred unknowns its extra flops are irrelevant, so that is what the
//! solver uses: row equilibration, column-pivoted QR, and one round of
//! iterative refinement.

#![allow(clippy::needless_range_loop)] // indices address packed row-major factors

use num_complex::Complex64;

/// Scalar abstraction shared by the real and complex solves.
pub trait Scalar:
    Copy
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
{
    const ZERO: Self;
    fn modulus(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn conj(self) -> Self;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn from_f64(v: f64) -> f64 {
        v
    }
    fn conj(self) -> f64 {
        self
    }
}

impl Scalar for Complex64 {
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn from_f64(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }
    fn conj(self) -> Complex64 {
        Complex64::conj(&self)
    }
}

/// Row-major dense matrix.
#[derive(Clone)]
pub struct Dense<T> {
    pub n: usize,
    pub a: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(n: usize) -> Self {
        Dense {
            n,
            a: vec![T::ZERO; n * n],
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: T) {
        self.a[row * self.n + col] += v;
    }

    fn matvec(&self, x: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = vec![T::ZERO; n];
        for r in 0..n {
            let row = &self.a[r * n..(r + 1) * n];
            let mut acc = T::ZERO;
            for (aij, xj) in row.iter().zip(x) {
                acc += *aij * *xj;
            }
            y[r] = acc;
        }
        y
    }
}

/// Column-pivoted Householder QR of the row-equilibrated matrix.
pub struct QrFactors<T> {
    n: usize,
    /// Householder vectors below the diagonal, R on and above it.
    qr: Vec<T>,
    /// Householder scalars beta_k (2 / v^H v), zero for skipped columns.
    beta: Vec<f64>,
    col_perm: Vec<usize>,
    row_scale: Vec<f64>,
}

/// Factor the matrix. On numerical rank deficiency, returns `Err(col)`
/// with the original unknown index whose column collapsed, so callers can
/// name the suspect node.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // the negation doubles as a NaN guard
pub fn factor<T: Scalar>(mat: &Dense<T>) -> Result<QrFactors<T>, usize> {
    let n = mat.n;
    let mut qr = mat.a.clone();
    let mut col_perm: Vec<usize> = (0..n).collect();
    let mut beta = vec![0.0f64; n];

    let mut row_scale = vec![1.0f64; n];
    for r in 0..n {
        let max = qr[r * n..(r + 1) * n]
            .iter()
            .map(|v| v.modulus())
            .fold(0.0f64, f64::max);
        if max > 0.0 && max.is_finite() {
            row_scale[r] = 1.0 / max;
            for c in 0..n {
                let v = qr[r * n + c];
                qr[r * n + c] = v * T::from_f64(row_scale[r]);
            }
        }
    }

    for k in 0..n {
        // column pivot: largest remaining column norm
        let mut best = k;
        let mut best_norm = 0.0f64;
        for c in k..n {
            let mut s = 0.0;
            for r in k..n {
                s += qr[r * n + c].modulus().powi(2);
            }
            if s > best_norm {
                best_norm = s;
                best = c;
            }
        }
        if !(best_norm.sqrt() > 1e-30) || !best_norm.is_finite() {
            return Err(col_perm[k]);
        }
        if best != k {
            for r in 0..n {
                qr.swap(r * n + k, r * n + best);
            }
            col_perm.swap(k, best);
        }

        // Householder vector for column k
        let norm = best_norm.sqrt();
        let x0 = qr[k * n + k];
        let x0_mag = x0.modulus();
        // alpha = -sign(x0) * ||x||, with sign(0) = 1
        let alpha = if x0_mag == 0.0 {
            T::from_f64(-norm)
        } else {
            x0 * T::from_f64(-norm / x0_mag)
        };
        let v0 = x0 - alpha;
        let mut vnorm2 = v0.modulus().powi(2);
        for r in k + 1..n {
            vnorm2 += qr[r * n + k].modulus().powi(2);
        }
        if vnorm2 == 0.0 {
            // column already zero below the diagonal
            qr[k * n + k] = alpha;
            beta[k] = 0.0;
            continue;
        }
        let b_k = 2.0 / vnorm2;
        beta[k] = b_k;
        // store v: v0 goes in a stash position; below-diagonal holds v[r]
        // apply H = I - beta v v^H to the remaining columns
        let mut v = vec![T::ZERO; n - k];
        v[0] = v0;
        for r in k + 1..n {
            v[r - k] = qr[r * n + k];
        }
        for c in k + 1..n {
            let mut dot = T::ZERO;
            for r in k..n {
                dot += v[r - k].conj() * qr[r * n + c];
            }
            let scale = dot * T::from_f64(b_k);
            for r in k..n {
                let adj = v[r - k] * scale;
                qr[r * n + c] -= adj;
            }
        }
        qr[k * n + k] = alpha;
        // normalize stored vector by v0 so the unit entry is implicit
        if v0.modulus() > 0.0 {
            for r in k + 1..n {
                let val = v[r - k] / v0;
                qr[r * n + k] = val;
            }
            // fold |v0|^2 into beta so solve() can use the implicit form
            beta[k] = b_k * v0.modulus().powi(2);
        } else {
            beta[k] = 0.0;
        }
    }
    Ok(QrFactors {
        n,
        qr,
        beta,
        col_perm,
        row_scale,
    })
}

impl<T: Scalar> QrFactors<T> {
    /// Solve `A x = b` via `R x = Q^H D b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y: Vec<T> = b
            .iter()
            .enumerate()
            .map(|(r, &v)| v * T::from_f64(self.row_scale[r]))
            .collect();
        // apply the Householder reflections (implicit v0 = 1 form)
        for k in 0..n {
            if self.beta[k] == 0.0 {
                continue;
            }
            let mut dot = y[k];
            for r in k + 1..n {
                dot += self.qr[r * n + k].conj() * y[r];
            }
            let scale = dot * T::from_f64(self.beta[k]);
            y[k] -= scale;
            for r in k + 1..n {
                let adj = self.qr[r * n + k] * scale;
                y[r] -= adj;
            }
        }
        // back substitution on R
        let mut z = vec![T::ZERO; n];
        for r in (0..n).rev() {
            let mut acc = y[r];
            for c in r + 1..n {
                acc -= self.qr[r * n + c] * z[c];
            }
            z[r] = acc / self.qr[r * n + r];
        }
        let mut x = vec![T::ZERO; n];
        for (k, &orig) in self.col_perm.iter().enumerate() {
            x[orig] = z[k];
        }
        x
    }
}

/// Solve `A x = b` with one round of iterative refinement.
pub fn lu_solve<T: Scalar>(mat: &Dense<T>, b: &[T]) -> Result<Vec<T>, usize> {
    let factors = factor(mat)?;
    let mut x = factors.solve(b);
    let ax = mat.matvec(&x);
    let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &axi)| bi - axi).collect();
    if r.iter().any(|v| v.modulus() != 0.0) {
        let d = factors.solve(&r);
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += *di;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_real_system() {
        // [2 1; 1 3] x = [3; 5] -> x = [0.8, 1.4]
        let mut m = Dense::zeros(2);
        m.add(0, 0, 2.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 3.0);
        let x = lu_solve(&m, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12);
        assert!((x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn pivots_through_zero_diagonal() {
        // [0 1; 1 0] x = [2; 3]
        let mut m = Dense::zeros(2);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        let x = lu_solve(&m, &[2.0, 3.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reports_singular_column() {
        let mut m = Dense::zeros(2);
        m.add(0, 0, 1.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0);
        assert!(lu_solve(&m, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn complex_system() {
        use num_complex::Complex64 as C;
        let mut m = Dense::zeros(1);
        m.add(0, 0, C::new(0.0, 2.0));
        let x = lu_solve(&m, &[C::new(4.0, 0.0)]).unwrap();
        assert!((x[0] - C::new(0.0, -2.0)).norm() < 1e-12);
    }

    #[test]
    fn complex_dense_system() {
        use num_complex::Complex64 as C;
        // 3x3 complex system against a known solution
        let entries = [
            [C::new(2.0, 1.0), C::new(0.0, -1.0), C::new(1.0, 0.0)],
            [C::new(0.5, 0.0), C::new(3.0, 0.5), C::new(0.0, 2.0)],
            [C::new(1.0, -1.0), C::new(0.0, 0.0), C::new(4.0, 0.0)],
        ];
        let xtrue = [C::new(1.0, 1.0), C::new(-2.0, 0.5), C::new(0.0, -1.0)];
        let mut m = Dense::zeros(3);
        let mut b = vec![C::new(0.0, 0.0); 3];
        for r in 0..3 {
            for c in 0..3 {
                m.add(r, c, entries[r][c]);
                b[r] += entries[r][c] * xtrue[c];
            }
        }
        let x = lu_solve(&m, &b).unwrap();
        for (got, want) in x.iter().zip(&xtrue) {
            assert!((got - want).norm() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn refinement_handles_wild_scaling() {
        // diag spans 12 decades with strong off-diagonal coupling, the
        // kind of conditioning an ideal-device MNA matrix produces
        let n = 4;
        let mut m = Dense::zeros(n);
        m.add(0, 0, 1e-12);
        m.add(0, 1, 5e-3);
        m.add(1, 1, 2e-3);
        m.add(1, 0, -5e-3);
        m.add(2, 2, 1.0);
        m.add(2, 0, 1e-3);
        m.add(3, 3, 1e-9);
        m.add(3, 2, 1e-2);
        let b = vec![1e-6, 2e-3, 1.0, 1e-5];
        let x = lu_solve(&m, &b).unwrap();
        let ax = m.matvec(&x);
        for (i, (&axi, &bi)) in ax.iter().zip(&b).enumerate() {
            assert!(
                (axi - bi).abs() <= 1e-12 * bi.abs().max(1e-6),
                "row {i}: {axi} vs {bi}"
            );
        }
    }

    #[test]
    fn random_systems_recover_known_solutions() {
        let mut state = 0xdeadbeefu64;
        let mut rand = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 33) as f64 / (1u64 << 31) as f64 - 0.5
        };
        for trial in 0..50 {
            let n = 8;
            let mut m = Dense::zeros(n);
            for r in 0..n {
                for c in 0..n {
                    m.add(r, c, rand());
                }
                m.add(r, r, 3.0);
            }
            let xtrue: Vec<f64> = (0..n).map(|_| rand()).collect();
            let b = m.matvec(&xtrue);
            let x = lu_solve(&m, &b).unwrap();
            for (got, want) in x.iter().zip(&xtrue) {
                assert!((got - want).abs() < 1e-11, "trial {trial}: {got} vs {want}");
            }
        }
    }
}
