//! Small dense linear algebra: 3×3 Gaussian factors and inverses, and a
//! partial-pivot solver for the hedge systems.

use crate::scalar::Real;

pub type Mat3<S> = [[S; 3]; 3];
pub type Vec3<S> = [S; 3];

pub fn mat3_vec<S: Real>(m: &Mat3<S>, v: &Vec3<S>) -> Vec3<S> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Lower-triangular Cholesky factor of a symmetric positive semi-definite
/// matrix. Pivots that are zero up to rounding produce a zero column, so
/// degenerate (e.g. deterministic) components are handled. Returns `None`
/// when a pivot is clearly negative.
pub fn cholesky3<S: Real>(m: &Mat3<S>) -> Option<Mat3<S>> {
    let scale = m[0][0].abs().max(m[1][1].abs()).max(m[2][2].abs());
    let tol = S::lit(1e-12) * scale.max(S::min_positive_value());
    let mut l = [[S::zero(); 3]; 3];
    for j in 0..3 {
        let mut d = m[j][j];
        for k in 0..j {
            d = d - l[j][k] * l[j][k];
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            // zero pivot: the remaining entries of this column must vanish too
            for i in (j + 1)..3 {
                let mut s = m[i][j];
                for k in 0..j {
                    s = s - l[i][k] * l[j][k];
                }
                if s.abs() > tol.sqrt() * scale.sqrt() {
                    return None;
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[j][j] = djj;
        for i in (j + 1)..3 {
            let mut s = m[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            l[i][j] = s / djj;
        }
    }
    Some(l)
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns).
pub fn symmetric_eigen3<S: Real>(m: &Mat3<S>) -> (Vec3<S>, Mat3<S>) {
    let mut a = *m;
    let mut v = [[S::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = S::one();
    }
    for _sweep in 0..50 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off <= S::epsilon() * (a[0][0].abs() + a[1][1].abs() + a[2][2].abs()) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == S::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (S::lit(2.0) * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
            let c = S::one() / (t * t + S::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// A matrix `F` with `F Fᵀ = cov`: Cholesky when it succeeds, otherwise the
/// symmetric square root with negative eigenvalues clipped to zero.
pub fn gaussian_factor3<S: Real>(cov: &Mat3<S>) -> Mat3<S> {
    if let Some(l) = cholesky3(cov) {
        return l;
    }
    log::debug!("covariance not PSD within tolerance, clipping eigenvalues");
    let (vals, vecs) = symmetric_eigen3(cov);
    let mut f = [[S::zero(); 3]; 3];
    for j in 0..3 {
        let s = vals[j].max(S::zero()).sqrt();
        for i in 0..3 {
            f[i][j] = vecs[i][j] * s;
        }
    }
    f
}

/// Inverse by the adjugate; `None` if the matrix is singular relative to the
/// product of its diagonal scales.
pub fn inverse3<S: Real>(m: &Mat3<S>) -> Option<Mat3<S>> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let scale = (m[0][0].abs() * m[1][1].abs() * m[2][2].abs()).max(S::min_positive_value());
    if !(det.abs() > S::lit(1e-12) * scale) || !det.is_finite() {
        return None;
    }
    let inv_det = S::one() / det;
    Some([
        [
            c00 * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            c01 * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            c02 * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ])
}

/// LU factorisation with partial pivoting of a dense square matrix.
#[derive(Clone, Debug)]
pub struct Lu<S> {
    lu: Vec<Vec<S>>,
    perm: Vec<usize>,
}

impl<S: Real> Lu<S> {
    /// Returns `None` if an exactly zero pivot is met.
    pub fn new(mut a: Vec<Vec<S>>) -> Option<Self> {
        let n = a.len();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())
                .unwrap();
            if a[p][k] == S::zero() || !a[p][k].is_finite() {
                return None;
            }
            a.swap(k, p);
            perm.swap(k, p);
            for i in (k + 1)..n {
                let f = a[i][k] / a[k][k];
                a[i][k] = f;
                for j in (k + 1)..n {
                    let akj = a[k][j];
                    a[i][j] = a[i][j] - f * akj;
                }
            }
        }
        Some(Lu { lu: a, perm })
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.lu.len();
        let mut y: Vec<S> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                y[i] = y[i] - self.lu[i][k] * y[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] = y[i] - self.lu[i][k] * y[k];
            }
            y[i] = y[i] / self.lu[i][i];
        }
        y
    }

    /// 1-norm of the inverse, column by column.
    pub fn inverse_norm1(&self) -> S {
        let n = self.lu.len();
        (0..n)
            .map(|j| {
                let mut e = vec![S::zero(); n];
                e[j] = S::one();
                self.solve(&e).into_iter().fold(S::zero(), |acc, x| acc + x.abs())
            })
            .fold(S::zero(), S::max)
    }
}

pub fn norm1<S: Real>(a: &[Vec<S>]) -> S {
    let n = a.len();
    (0..n)
        .map(|j| a.iter().fold(S::zero(), |acc, row| acc + row[j].abs()))
        .fold(S::zero(), S::max)
}

/// Solves `a x = b`, returning the solution and the 1-norm condition number.
pub fn solve_with_condition<S: Real>(a: &[Vec<S>], b: &[S]) -> Option<(Vec<S>, S)> {
    let lu = Lu::new(a.to_vec())?;
    let cond = norm1(a) * lu.inverse_norm1();
    Some((lu.solve(b), cond))
}
