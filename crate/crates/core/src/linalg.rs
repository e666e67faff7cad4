//! Small fixed-size dense helpers for 2x2 and 3x3 Jacobians, a tiny dense
//! Cholesky used for univariate mass matrices and a row-major GEMM wrapper.

/// Row-major 3x3 matrix; for 2D problems only the leading 2x2 block is used.
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO3: Mat3 = [[0.0; 3]; 3];

pub fn identity(dim: usize) -> Mat3 {
    let mut m = ZERO3;
    for i in 0..dim {
        m[i][i] = 1.0;
    }
    m
}

pub fn det(dim: usize, m: &Mat3) -> f64 {
    match dim {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
    }
}

/// Inverse of the leading `dim x dim` block. Returns `None` when singular.
pub fn inverse(dim: usize, m: &Mat3) -> Option<Mat3> {
    let dt = det(dim, m);
    if dt == 0.0 || !dt.is_finite() {
        return None;
    }
    let mut inv = ZERO3;
    match dim {
        1 => inv[0][0] = 1.0 / m[0][0],
        2 => {
            inv[0][0] = m[1][1] / dt;
            inv[0][1] = -m[0][1] / dt;
            inv[1][0] = -m[1][0] / dt;
            inv[1][1] = m[0][0] / dt;
        }
        _ => {
            inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / dt;
            inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / dt;
            inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / dt;
            inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / dt;
            inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / dt;
            inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / dt;
            inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / dt;
            inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / dt;
            inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / dt;
        }
    }
    Some(inv)
}

pub fn matmul(dim: usize, a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = ZERO3;
    for i in 0..dim {
        for j in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut t = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

pub fn dot(dim: usize, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..dim).map(|i| a[i] * b[i]).sum()
}

pub fn norm(dim: usize, a: &[f64; 3]) -> f64 {
    dot(dim, a, a).sqrt()
}

pub fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Dense Cholesky factor of a small SPD matrix stored row-major (`n x n`).
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn new(n: usize, a: &[f64]) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut s = a[j * n + j];
            for k in 0..j {
                s -= l[j * n + k] * l[j * n + k];
            }
            if s <= 0.0 || !s.is_finite() {
                return None;
            }
            let djj = s.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Some(Self { n, l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Explicit inverse, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

/// Solve a small general dense system by Gaussian elimination with partial
/// pivoting. `a` is row-major `n x n`, `b` is `n x nrhs` row-major.
pub fn solve_dense(n: usize, a: &[f64], b: &mut [f64], nrhs: usize) -> Option<()> {
    let mut a = a.to_vec();
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            for k in 0..nrhs {
                b.swap(col * nrhs + k, piv * nrhs + k);
            }
        }
        let p = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            for k in 0..nrhs {
                b[r * nrhs + k] -= f * b[col * nrhs + k];
            }
        }
    }
    for col in (0..n).rev() {
        let p = a[col * n + col];
        for k in 0..nrhs {
            let mut s = b[col * nrhs + k];
            for j in (col + 1)..n {
                s -= a[col * n + j] * b[j * nrhs + k];
            }
            b[col * nrhs + k] = s / p;
        }
    }
    Some(())
}

/// `c (+)= a * b` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
pub fn gemm(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize, accumulate: bool) {
    use faer::{Accum, MatMut, MatRef, Par};
    if m == 0 || n == 0 {
        return;
    }
    let accum = if accumulate {
        Accum::Add
    } else {
        Accum::Replace
    };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    faer::linalg::matmul::matmul(
        MatMut::from_row_major_slice_mut(c, m, n),
        accum,
        MatRef::from_row_major_slice(a, m, k),
        MatRef::from_row_major_slice(b, k, n),
        1.0,
        Par::Seq,
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip_3d() {
        let m = [[2.0, 0.3, -0.1], [0.1, 1.5, 0.2], [0.0, -0.4, 3.0]];
        let inv = inverse(3, &m).unwrap();
        let p = matmul(3, &m, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[i][j] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cholesky_solves_spd() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let ch = DenseCholesky::new(3, &a).unwrap();
        let mut b = [1.0, 2.0, 3.0];
        ch.solve_in_place(&mut b);
        for i in 0..3 {
            let r: f64 = (0..3).map(|k| a[i * 3 + k] * b[k]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_elimination_matches() {
        let a = [0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let mut b = [3.0, 2.0, 4.0];
        solve_dense(3, &a, &mut b, 1).unwrap();
        assert!(
            (b[0] - 1.0).abs() < 1e-14 && (b[1] - 1.0).abs() < 1e-14 && (b[2] - 1.0).abs() < 1e-14
        );
    }
}
