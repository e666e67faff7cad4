use crate::error::Result;
use crate::splines::KnotVector;

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c.round()
}

/// Univariate Bernstein polynomials of degree `p` on [0, 1] at `t`.
/// Row `k` holds the k-th derivatives of all `p+1` functions.
pub fn bernstein_1d(p: usize, t: f64, n_derivs: usize) -> Vec<Vec<f64>> {
    // tri[q] = Bernstein basis of degree q at t, q = 0..=p.
    let mut tri: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    tri.push(vec![1.0]);
    let s = 1.0 - t;
    for q in 1..=p {
        let prev = &tri[q - 1];
        let mut cur = vec![0.0; q + 1];
        for i in 0..=q {
            let a = if i < q { s * prev[i] } else { 0.0 };
            let b = if i > 0 { t * prev[i - 1] } else { 0.0 };
            cur[i] = a + b;
        }
        tri.push(cur);
    }
    let mut out = vec![vec![0.0; p + 1]; n_derivs + 1];
    out[0].clone_from(&tri[p]);
    for k in 1..=n_derivs.min(p) {
        let low = &tri[p - k];
        let mut fac = 1.0;
        for j in 0..k {
            fac *= (p - j) as f64;
        }
        for i in 0..=p {
            let mut v = 0.0;
            for j in 0..=k {
                if i >= j && i - j <= p - k {
                    let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                    v += sign * binomial(k, j) * low[i - j];
                }
            }
            out[k][i] = fac * v;
        }
    }
    out
}

/// Values and gradients of all tensor-product Bernstein functions of the
/// given per-direction degrees. Index `c0 + (p0+1)(c1 + (p1+1) c2)`.
#[derive(Debug, Clone)]
pub struct BernsteinEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 3]>,
}

pub fn eval_bernstein(degrees: &[usize], xi: &[f64], n_derivs: usize) -> Result<BernsteinEval> {
    let dims = degrees.len();
    let uni: Vec<Vec<Vec<f64>>> = degrees
        .iter()
        .zip(xi)
        .map(|(&p, &x)| KnotVector::check_param(x).map(|x| bernstein_1d(p, x, n_derivs.min(1))))
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = degrees.iter().map(|p| p + 1).collect();
    let total: usize = counts.iter().product();
    let mut values = Vec::with_capacity(total);
    let mut grads = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = [0usize; 3];
        let mut rem = flat;
        for k in 0..dims {
            idx[k] = rem % counts[k];
            rem /= counts[k];
        }
        let v: f64 = (0..dims).map(|k| uni[k][0][idx[k]]).product();
        let mut g = [0.0; 3];
        if n_derivs > 0 {
            for (a, ga) in g.iter_mut().enumerate().take(dims) {
                *ga = (0..dims)
                    .map(|k| uni[k][if k == a { 1 } else { 0 }][idx[k]])
                    .product();
            }
        }
        values.push(v);
        grads.push(g);
    }
    Ok(BernsteinEval { values, grads })
}
