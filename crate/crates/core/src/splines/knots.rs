use crate::error::{Error, Result};

/// Slack for parameters that leave [0, 1] only through round-off.
const DOMAIN_SLACK: f64 = 1e-12;

/// Open knot vector normalized to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Validates and rescales the knots to [0, 1].
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::InvalidKnots(format!(
                "degree {p} needs at least {} knots, got {}",
                2 * (p + 1),
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be nondecreasing".into()));
        }
        let (lo, hi) = (knots[0], knots[knots.len() - 1]);
        if hi <= lo {
            return Err(Error::InvalidKnots("knot vector has zero length".into()));
        }
        let n = knots.len();
        let start = knots.iter().take_while(|&&k| k == lo).count();
        let end = knots.iter().rev().take_while(|&&k| k == hi).count();
        if start != p + 1 || end != p + 1 {
            return Err(Error::InvalidKnots(format!(
                "end knots must be repeated exactly {} times (found {start} and {end})",
                p + 1
            )));
        }
        let mut i = start;
        while i < n - end {
            let m = knots[i..n - end]
                .iter()
                .take_while(|&&k| k == knots[i])
                .count();
            if m > p {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {} has multiplicity {m} > degree {p}",
                    knots[i]
                )));
            }
            i += m;
        }
        let scale = hi - lo;
        let mut knots: Vec<f64> = knots.iter().map(|k| (k - lo) / scale).collect();
        for k in &mut knots[..=p] {
            *k = 0.0;
        }
        for k in &mut knots[n - p - 1..] {
            *k = 1.0;
        }
        Ok(Self { degree, knots })
    }

    /// Uniform open knot vector with `elements` spans.
    pub fn uniform(degree: usize, elements: usize) -> Self {
        let elements = elements.max(1);
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..elements).map(|i| i as f64 / elements as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self { degree, knots }
    }

    /// Single Bezier span of the given degree.
    pub fn bezier(degree: usize) -> Self {
        Self::uniform(degree, 1)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Indices `i` of the nonempty spans `[knots[i], knots[i+1])`.
    pub fn spans(&self) -> Vec<usize> {
        (self.degree..self.n_basis())
            .filter(|&i| self.knots[i] < self.knots[i + 1])
            .collect()
    }

    pub fn n_spans(&self) -> usize {
        self.spans().len()
    }

    /// Distinct breakpoints, including 0 and 1.
    pub fn breaks(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.knots.clone();
        b.dedup();
        b
    }

    /// Clamp round-off excursions and reject anything else outside [0, 1].
    pub fn check_param(x: f64) -> Result<f64> {
        if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&x) {
            return Err(Error::Domain { value: x });
        }
        Ok(x.clamp(0.0, 1.0))
    }

    /// Span index for `x`: right-continuous, except that `x = 1` belongs to
    /// the last nonempty span.
    pub fn find_span(&self, x: f64) -> Result<usize> {
        let x = Self::check_param(x)?;
        let n = self.n_basis();
        if x >= self.knots[n] {
            return Ok(n - 1);
        }
        let (mut lo, mut hi) = (self.degree, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    /// Values (row 0) and derivatives (rows 1..=n_derivs) of the `degree+1`
    /// functions active on `span`. Rows beyond the degree are zero.
    pub fn basis_derivs(&self, span: usize, x: f64, n_derivs: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; n_derivs + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let nd = n_derivs.min(p);
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nd {
            for v in ders[k].iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        ders
    }

    /// Span index and derivatives of the active functions at `x`.
    pub fn eval(&self, x: f64, n_derivs: usize) -> Result<(usize, Vec<Vec<f64>>)> {
        let span = self.find_span(x)?;
        let x = Self::check_param(x)?;
        Ok((span, self.basis_derivs(span, x, n_derivs)))
    }

    /// Insert `u` once. `coeffs` is an `n_basis x ncols` row-major matrix of
    /// control data; returns the refined knot vector and the new coefficients.
    pub fn insert(&self, u: f64, coeffs: &[f64], ncols: usize) -> Result<(KnotVector, Vec<f64>)> {
        let p = self.degree;
        let n = self.n_basis();
        if coeffs.len() != n * ncols {
            return Err(Error::DimensionMismatch(format!(
                "knot insertion expected {} coefficients, got {}",
                n * ncols,
                coeffs.len()
            )));
        }
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidKnots(format!(
                "can only insert interior knots, got {u}"
            )));
        }
        let k = self.find_span(u)?;
        let mult = self.knots.iter().filter(|&&x| x == u).count();
        if mult >= p {
            return Err(Error::InvalidKnots(format!(
                "knot {u} already has multiplicity {mult}"
            )));
        }
        let mut out = vec![0.0; (n + 1) * ncols];
        for i in 0..=n {
            let row = &mut out[i * ncols..(i + 1) * ncols];
            if i + p <= k {
                row.copy_from_slice(&coeffs[i * ncols..(i + 1) * ncols]);
            } else if i > k {
                row.copy_from_slice(&coeffs[(i - 1) * ncols..i * ncols]);
            } else {
                let alpha = (u - self.knots[i]) / (self.knots[i + p] - self.knots[i]);
                for c in 0..ncols {
                    row[c] =
                        alpha * coeffs[i * ncols + c] + (1.0 - alpha) * coeffs[(i - 1) * ncols + c];
                }
            }
        }
        let mut knots = self.knots.clone();
        knots.insert(k + 1, u);
        Ok((KnotVector { degree: p, knots }, out))
    }

    /// Per-span Bernstein extraction matrices. Entry `[e][a][b]` is the
    /// coefficient of Bernstein function `b` in local basis function `a`
    /// (global index `spans()[e] - degree + a`).
    pub fn extraction(&self) -> Vec<Vec<Vec<f64>>> {
        let p = self.degree;
        let n = self.n_basis();
        let mut kv = self.clone();
        let mut t: Vec<f64> = (0..n * n)
            .map(|i| if i / n == i % n { 1.0 } else { 0.0 })
            .collect();
        for b in self
            .breaks()
            .iter()
            .copied()
            .filter(|&b| b > 0.0 && b < 1.0)
        {
            let mult = kv.knots.iter().filter(|&&x| x == b).count();
            for _ in mult..p {
                let (nk, nt) = kv.insert(b, &t, n).expect("valid interior insertion");
                kv = nk;
                t = nt;
            }
        }
        self.spans()
            .iter()
            .enumerate()
            .map(|(e, &span)| {
                (0..=p)
                    .map(|a| {
                        let col = span - p + a;
                        (0..=p).map(|b| t[(e * p + b) * n + col]).collect()
                    })
                    .collect()
            })
            .collect()
    }
}
