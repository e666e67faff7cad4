//! Gauss-Legendre rules on [0, 1] and their tensor products.

use crate::error::{Error, Result};

/// Nodes and weights of a one-dimensional rule on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Same rule mapped to `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> GaussRule {
        let h = hi - lo;
        GaussRule {
            nodes: self.nodes.iter().map(|x| lo + h * x).collect(),
            weights: self.weights.iter().map(|w| w * h).collect(),
        }
    }
}

/// n-point Gauss-Legendre rule on [0, 1], exact for degree 2n-1.
pub fn gauss_rule(n: usize) -> Result<GaussRule> {
    if !(1..=64).contains(&n) {
        return Err(Error::InvalidModel(format!(
            "Gauss rule needs 1..=64 points, got {n}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Newton iteration on P_n from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    Ok(GaussRule { nodes, weights })
}

/// Value and derivative of the Legendre polynomial P_n at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product point list over a box; returns (points, weights) with
/// direction 0 varying fastest.
pub fn tensor_points(rules: &[GaussRule]) -> (Vec<[f64; 3]>, Vec<f64>) {
    let dims = rules.len();
    let counts: Vec<usize> = rules.iter().map(|r| r.len()).collect();
    let total: usize = counts.iter().product();
    let mut pts = Vec::with_capacity(total);
    let mut wts = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut p = [0.0; 3];
        let mut w = 1.0;
        for k in 0..dims {
            let i = rem % counts[k];
            rem /= counts[k];
            p[k] = rules[k].nodes[i];
            w *= rules[k].weights[i];
        }
        pts.push(p);
        wts.push(w);
    }
    (pts, wts)
}
