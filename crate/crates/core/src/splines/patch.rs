use crate::error::{Error, Result};
use crate::linalg::{Mat3, ZERO3};
use crate::splines::KnotVector;

/// Tensor-product B-spline or NURBS map from [0,1]^pdim into R^dim.
/// Control point `i0 + n0 (i1 + n1 i2)` is stored at `points[i*dim..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplinePatch {
    knots: Vec<KnotVector>,
    dim: usize,
    points: Vec<f64>,
    weights: Option<Vec<f64>>,
}

/// Position, Jacobian `jac[a][j] = dS_a/dx_j` and optional second
/// derivatives `hess[a][j][k]`.
#[derive(Debug, Clone)]
pub struct PatchEval {
    pub position: [f64; 3],
    pub jac: Mat3,
    pub hess: Option<[[[f64; 3]; 3]; 3]>,
}

/// Active (rational) basis functions at one parameter point.
#[derive(Debug, Clone, Default)]
pub struct BasisEval {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 3]>,
}

/// One nonempty knot-span box of a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanBox {
    pub multi: [usize; 3],
    pub spans: [usize; 3],
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl SplinePatch {
    pub fn new(
        knots: Vec<KnotVector>,
        dim: usize,
        points: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if knots.is_empty() || knots.len() > 3 {
            return Err(Error::InvalidPatch(format!(
                "parametric dimension {} not in 1..=3",
                knots.len()
            )));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidPatch(format!(
                "physical dimension {dim} not in 1..=3"
            )));
        }
        let n: usize = knots.iter().map(|k| k.n_basis()).product();
        if points.len() != n * dim {
            return Err(Error::InvalidPatch(format!(
                "expected {n} control points of dimension {dim}, got {} values",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPatch("non-finite control point".into()));
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(Error::InvalidPatch(format!(
                    "expected {n} weights, got {}",
                    w.len()
                )));
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidPatch("weights must be positive".into()));
            }
        }
        Ok(Self {
            knots,
            dim,
            points,
            weights,
        })
    }

    pub fn knots(&self) -> &[KnotVector] {
        &self.knots
    }

    pub fn param_dim(&self) -> usize {
        self.knots.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.knots.iter().map(|k| k.degree()).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.knots.iter().map(|k| k.n_basis()).collect()
    }

    pub fn n_points(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        p[..self.dim].copy_from_slice(&self.points[i * self.dim..(i + 1) * self.dim]);
        p
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn is_rational(&self) -> bool {
        self.weights.is_some()
    }

    /// Same knots and weights, new control points.
    pub fn with_points(&self, points: Vec<f64>) -> Result<Self> {
        Self::new(self.knots.clone(), self.dim, points, self.weights.clone())
    }

    /// Multi-index of control point `i`.
    pub fn multi_index(&self, i: usize) -> [usize; 3] {
        let mut m = [0; 3];
        let mut rem = i;
        for (k, kv) in self.knots.iter().enumerate() {
            m[k] = rem % kv.n_basis();
            rem /= kv.n_basis();
        }
        m
    }

    pub fn flat_index(&self, m: [usize; 3]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (k, kv) in self.knots.iter().enumerate() {
            idx += m[k] * stride;
            stride *= kv.n_basis();
        }
        idx
    }

    /// Control points on face `f` (`2 * dir + side`).
    pub fn face_points(&self, f: usize) -> Vec<usize> {
        let (dir, side) = (f / 2, f % 2);
        let last = self.knots[dir].n_basis() - 1;
        (0..self.n_points())
            .filter(|&i| self.multi_index(i)[dir] == side * last)
            .collect()
    }

    /// Nonempty span boxes, direction 0 varying fastest.
    pub fn span_boxes(&self) -> Vec<SpanBox> {
        let per: Vec<Vec<usize>> = self.knots.iter().map(|k| k.spans()).collect();
        let counts: Vec<usize> = per.iter().map(|s| s.len()).collect();
        let total: usize = counts.iter().product();
        (0..total)
            .map(|flat| {
                let mut b = SpanBox {
                    multi: [0; 3],
                    spans: [0; 3],
                    lo: [0.0; 3],
                    hi: [0.0; 3],
                };
                let mut rem = flat;
                for k in 0..self.param_dim() {
                    let e = rem % counts[k];
                    rem /= counts[k];
                    let s = per[k][e];
                    b.multi[k] = e;
                    b.spans[k] = s;
                    b.lo[k] = self.knots[k].knots()[s];
                    b.hi[k] = self.knots[k].knots()[s + 1];
                }
                b
            })
            .collect()
    }

    fn local_ders(
        &self,
        x: &[f64],
        n: usize,
    ) -> Result<(Vec<usize>, Vec<Vec<Vec<f64>>>, Vec<f64>)> {
        if x.len() != self.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "patch has {} parameters, got a point with {}",
                self.param_dim(),
                x.len()
            )));
        }
        let mut spans = Vec::with_capacity(x.len());
        let mut ders = Vec::with_capacity(x.len());
        let mut xs = Vec::with_capacity(x.len());
        for (kv, &xk) in self.knots.iter().zip(x) {
            let (s, d) = kv.eval(xk, n)?;
            spans.push(s);
            ders.push(d);
            xs.push(KnotVector::check_param(xk)?);
        }
        Ok((spans, ders, xs))
    }

    /// Iterate the active tensor functions: (control point, value, gradient, hessian).
    fn for_each_active<F: FnMut(usize, f64, [f64; 3], [[f64; 3]; 3])>(
        &self,
        spans: &[usize],
        ders: &[Vec<Vec<f64>>],
        second: bool,
        mut f: F,
    ) {
        let pd = self.param_dim();
        let deg: Vec<usize> = self.degrees();
        let counts: Vec<usize> = deg.iter().map(|p| p + 1).collect();
        let total: usize = counts.iter().product();
        for flat in 0..total {
            let mut loc = [0usize; 3];
            let mut rem = flat;
            let mut m = [0usize; 3];
            for k in 0..pd {
                loc[k] = rem % counts[k];
                rem /= counts[k];
                m[k] = spans[k] - deg[k] + loc[k];
            }
            let d =
                |k: usize, order: usize| -> f64 { ders[k].get(order).map_or(0.0, |r| r[loc[k]]) };
            let v: f64 = (0..pd).map(|k| d(k, 0)).product();
            let mut g = [0.0; 3];
            for (a, ga) in g.iter_mut().enumerate().take(pd) {
                *ga = (0..pd).map(|k| d(k, if k == a { 1 } else { 0 })).product();
            }
            let mut h = [[0.0; 3]; 3];
            if second {
                for a in 0..pd {
                    for b in 0..pd {
                        h[a][b] = (0..pd)
                            .map(|k| {
                                let order = (k == a) as usize + (k == b) as usize;
                                d(k, order)
                            })
                            .product();
                    }
                }
            }
            f(self.flat_index(m), v, g, h);
        }
    }

    /// Weighted sums of values and first derivatives over the active tensor
    /// functions.
    fn accumulate_first(
        &self,
        spans: &[usize],
        ders: [&[Vec<f64>]; 3],
        w: &mut f64,
        dw: &mut [f64; 3],
        a: &mut [f64; 3],
        da: &mut Mat3,
    ) {
        let pd = self.param_dim();
        let dim = self.dim;
        let mut count = [1usize; 3];
        let mut first = [0usize; 3];
        let mut stride = [0usize; 3];
        let mut acc = 1;
        for k in 0..pd {
            let p = self.knots[k].degree();
            count[k] = p + 1;
            first[k] = spans[k] - p;
            stride[k] = acc;
            acc *= self.knots[k].n_basis();
        }
        let val = |k: usize, order: usize, i: usize| -> f64 {
            if k >= pd {
                return if order == 0 { 1.0 } else { 0.0 };
            }
            ders[k].get(order).map_or(0.0, |r| r[i])
        };
        for i2 in 0..count[2] {
            let (v2, d2) = (val(2, 0, i2), val(2, 1, i2));
            for i1 in 0..count[1] {
                let (v1, d1) = (val(1, 0, i1), val(1, 1, i1));
                let base = (first[1] + i1) * stride[1]
                    + if pd > 2 {
                        (first[2] + i2) * stride[2]
                    } else {
                        0
                    };
                for i0 in 0..count[0] {
                    let (v0, d0) = (val(0, 0, i0), val(0, 1, i0));
                    let idx = base + first[0] + i0;
                    let wi = self.weight(idx);
                    let v = v0 * v1 * v2 * wi;
                    let g = [d0 * v1 * v2 * wi, v0 * d1 * v2 * wi, v0 * v1 * d2 * wi];
                    *w += v;
                    let p = &self.points[idx * dim..(idx + 1) * dim];
                    for j in 0..3 {
                        dw[j] += g[j];
                    }
                    for c in 0..dim {
                        a[c] += v * p[c];
                        for j in 0..3 {
                            da[c][j] += g[j] * p[c];
                        }
                    }
                }
            }
        }
    }

    /// Jacobians on the tensor grid `nodes` (direction 0 fastest), with the
    /// 1D bases evaluated once per node.
    pub fn grid_jacobians(&self, nodes: &[Vec<f64>]) -> Result<Vec<Mat3>> {
        let pd = self.param_dim();
        if nodes.len() != pd {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} directions, patch has {pd}",
                nodes.len()
            )));
        }
        let per: Vec<Vec<(usize, Vec<Vec<f64>>)>> = self
            .knots
            .iter()
            .zip(nodes)
            .map(|(kv, xs)| xs.iter().map(|&x| kv.eval(x, 1)).collect())
            .collect::<Result<_>>()?;
        let mut shape = [1usize; 3];
        for k in 0..pd {
            shape[k] = nodes[k].len();
        }
        let mut out = Vec::with_capacity(shape.iter().product());
        for i2 in 0..shape[2] {
            for i1 in 0..shape[1] {
                for i0 in 0..shape[0] {
                    let m = [i0, i1, i2];
                    let mut spans = [0usize; 3];
                    let mut refs: [&[Vec<f64>]; 3] = [&[], &[], &[]];
                    for k in 0..pd {
                        spans[k] = per[k][m[k]].0;
                        refs[k] = &per[k][m[k]].1;
                    }
                    let (mut w, mut dw, mut a, mut da) = (0.0, [0.0; 3], [0.0; 3], ZERO3);
                    self.accumulate_first(&spans[..pd], refs, &mut w, &mut dw, &mut a, &mut da);
                    if self.is_rational() {
                        for c in 0..self.dim {
                            let s = a[c] / w;
                            for j in 0..3 {
                                da[c][j] = (da[c][j] - dw[j] * s) / w;
                            }
                        }
                    }
                    out.push(da);
                }
            }
        }
        Ok(out)
    }

    /// Position and derivatives at `x` (up to second order).
    pub fn eval(&self, x: &[f64], n_derivs: usize) -> Result<PatchEval> {
        let second = n_derivs >= 2;
        let (spans, ders, _) = self.local_ders(x, if second { 2 } else { 1 })?;
        let dim = self.dim;
        let mut a = [0.0; 3];
        let mut da = ZERO3;
        let mut dda = [[[0.0; 3]; 3]; 3];
        let mut w = 0.0;
        let mut dw = [0.0; 3];
        let mut ddw = [[0.0; 3]; 3];
        if !second {
            let mut refs: [&[Vec<f64>]; 3] = [&[], &[], &[]];
            for (k, dk) in ders.iter().enumerate() {
                refs[k] = dk;
            }
            self.accumulate_first(&spans, refs, &mut w, &mut dw, &mut a, &mut da);
        } else {
            self.for_each_active(&spans, &ders, second, |i, v, g, h| {
                let wi = self.weight(i);
                let p = &self.points[i * dim..(i + 1) * dim];
                w += v * wi;
                for j in 0..3 {
                    dw[j] += g[j] * wi;
                }
                for c in 0..dim {
                    a[c] += v * wi * p[c];
                    for j in 0..3 {
                        da[c][j] += g[j] * wi * p[c];
                    }
                }
                for j in 0..3 {
                    for k in 0..3 {
                        ddw[j][k] += h[j][k] * wi;
                        for c in 0..dim {
                            dda[c][j][k] += h[j][k] * wi * p[c];
                        }
                    }
                }
            });
        }
        if !self.is_rational() {
            return Ok(PatchEval {
                position: a,
                jac: da,
                hess: second.then_some(dda),
            });
        }
        let mut s = [0.0; 3];
        let mut ds = ZERO3;
        for c in 0..dim {
            s[c] = a[c] / w;
            for j in 0..3 {
                ds[c][j] = (da[c][j] - dw[j] * s[c]) / w;
            }
        }
        let hess = second.then(|| {
            let mut dds = [[[0.0; 3]; 3]; 3];
            for c in 0..dim {
                for j in 0..3 {
                    for k in 0..3 {
                        dds[c][j][k] =
                            (dda[c][j][k] - ddw[j][k] * s[c] - dw[j] * ds[c][k] - dw[k] * ds[c][j])
                                / w;
                    }
                }
            }
            dds
        });
        Ok(PatchEval {
            position: s,
            jac: ds,
            hess,
        })
    }

    /// Active rational basis functions and their parameter gradients.
    pub fn basis(&self, x: &[f64]) -> Result<BasisEval> {
        let (spans, ders, _) = self.local_ders(x, 1)?;
        let mut out = BasisEval::default();
        self.for_each_active(&spans, &ders, false, |i, v, g, _| {
            out.indices.push(i);
            out.values.push(v);
            out.grads.push(g);
        });
        if self.is_rational() {
            let mut w = 0.0;
            let mut dw = [0.0; 3];
            for (k, &i) in out.indices.iter().enumerate() {
                let wi = self.weight(i);
                out.values[k] *= wi;
                for j in 0..3 {
                    out.grads[k][j] *= wi;
                    dw[j] += out.grads[k][j];
                }
                w += out.values[k];
            }
            for k in 0..out.indices.len() {
                out.values[k] /= w;
                for j in 0..3 {
                    out.grads[k][j] = (out.grads[k][j] - out.values[k] * dw[j]) / w;
                }
            }
        }
        Ok(out)
    }

    /// Insert knot `u` once in direction `dir`, preserving the map.
    pub fn insert_knot(&self, dir: usize, u: f64) -> Result<Self> {
        if dir >= self.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "no parametric direction {dir}"
            )));
        }
        let counts = self.counts();
        let ncols = self.dim + 1;
        let mut new_counts = counts.clone();
        new_counts[dir] += 1;
        let n_new: usize = new_counts.iter().product();
        let mut pts = vec![0.0; n_new * self.dim];
        let mut wts = vec![0.0; n_new];
        let mut new_kv = None;
        let lines: usize = counts.iter().product::<usize>() / counts[dir];
        for line in 0..lines {
            // multi-index with the `dir` slot free
            let mut m = [0usize; 3];
            let mut rem = line;
            for k in 0..self.param_dim() {
                if k == dir {
                    continue;
                }
                m[k] = rem % counts[k];
                rem /= counts[k];
            }
            let mut coeffs = Vec::with_capacity(counts[dir] * ncols);
            for i in 0..counts[dir] {
                m[dir] = i;
                let idx = self.flat_index(m);
                let w = self.weight(idx);
                coeffs.extend(self.point(idx)[..self.dim].iter().map(|c| c * w));
                coeffs.push(w);
            }
            let (kv, out) = self.knots[dir].insert(u, &coeffs, ncols)?;
            for i in 0..new_counts[dir] {
                m[dir] = i;
                let mut idx = 0;
                let mut stride = 1;
                for k in 0..self.param_dim() {
                    idx += m[k] * stride;
                    stride *= new_counts[k];
                }
                let w = out[i * ncols + self.dim];
                wts[idx] = w;
                for c in 0..self.dim {
                    pts[idx * self.dim + c] = out[i * ncols + c] / w;
                }
            }
            new_kv = Some(kv);
        }
        let mut knots = self.knots.clone();
        knots[dir] = new_kv.expect("at least one line");
        let weights = self.is_rational().then_some(wts);
        Self::new(knots, self.dim, pts, weights)
    }

    /// Split every span in every direction into `k` equal parts.
    pub fn refine_uniform(&self, k: usize) -> Result<Self> {
        let mut patch = self.clone();
        for dir in 0..self.param_dim() {
            let breaks = self.knots[dir].breaks();
            for w in breaks.windows(2) {
                for j in 1..k {
                    patch = patch.insert_knot(dir, w[0] + (w[1] - w[0]) * j as f64 / k as f64)?;
                }
            }
        }
        Ok(patch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cube() -> SplinePatch {
        let mut pts = Vec::new();
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    pts.extend([i as f64, j as f64, k as f64]);
                }
            }
        }
        SplinePatch::new(vec![KnotVector::bezier(1); 3], 3, pts, None).unwrap()
    }

    fn quarter_circle() -> SplinePatch {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        SplinePatch::new(
            vec![KnotVector::bezier(2)],
            2,
            vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0],
            Some(vec![1.0, h, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn identity_patch() {
        let p = identity_cube();
        let e = p.eval(&[0.2, 0.7, 0.4], 1).unwrap();
        assert_eq!(e.position, [0.2, 0.7, 0.4]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((e.jac[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn circle_radius_is_exact() {
        let c = quarter_circle();
        for i in 0..=100 {
            let e = c.eval(&[i as f64 / 100.0], 0).unwrap();
            let r = (e.position[0].powi(2) + e.position[1].powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn rational_derivatives_match_fd() {
        let c = quarter_circle();
        let h = 1e-5;
        for x in [0.1, 0.5, 0.8] {
            let e = c.eval(&[x], 2).unwrap();
            let p = c.eval(&[x + h], 1).unwrap();
            let m = c.eval(&[x - h], 1).unwrap();
            for a in 0..2 {
                let fd = (p.position[a] - m.position[a]) / (2.0 * h);
                assert!((e.jac[a][0] - fd).abs() < 1e-8);
                let fd2 = (p.jac[a][0] - m.jac[a][0]) / (2.0 * h);
                assert!((e.hess.unwrap()[a][0][0] - fd2).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rational_basis_partition_of_unity() {
        let c = quarter_circle();
        let b = c.basis(&[0.3]).unwrap();
        let s: f64 = b.values.iter().sum();
        let g: f64 = b.grads.iter().map(|g| g[0]).sum();
        assert!((s - 1.0).abs() < 1e-15 && g.abs() < 1e-14);
    }

    #[test]
    fn insertion_keeps_geometry() {
        let c = quarter_circle();
        let r = c.refine_uniform(3).unwrap();
        assert_eq!(r.knots()[0].n_spans(), 3);
        for x in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let a = c.eval(&[x], 0).unwrap().position;
            let b = r.eval(&[x], 0).unwrap().position;
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn first_order_path_matches_general_path() {
        let knots = vec![
            KnotVector::uniform(2, 3),
            KnotVector::uniform(3, 2),
            KnotVector::uniform(1, 2),
        ];
        let n: usize = knots.iter().map(|k| k.n_basis()).product();
        let pts: Vec<f64> = (0..3 * n)
            .map(|i| ((i * 7919) % 101) as f64 / 37.0)
            .collect();
        let wts: Vec<f64> = (0..n).map(|i| 0.6 + ((i * 31) % 7) as f64 / 10.0).collect();
        let p = SplinePatch::new(knots, 3, pts, Some(wts)).unwrap();
        for x in [[0.1, 0.5, 0.9], [0.0, 1.0, 0.25], [0.77, 0.33, 1.0]] {
            let (a, b) = (p.eval(&x, 1).unwrap(), p.eval(&x, 2).unwrap());
            for c in 0..3 {
                assert!((a.position[c] - b.position[c]).abs() < 1e-13);
                for j in 0..3 {
                    assert!((a.jac[c][j] - b.jac[c][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grid_jacobians_match_pointwise_eval() {
        let knots = vec![KnotVector::uniform(2, 2), KnotVector::uniform(3, 1)];
        let n: usize = knots.iter().map(|k| k.n_basis()).product();
        let pts: Vec<f64> = (0..2 * n).map(|i| ((i * 613) % 89) as f64 / 41.0).collect();
        let wts: Vec<f64> = (0..n).map(|i| 0.7 + ((i * 13) % 5) as f64 / 10.0).collect();
        let p = SplinePatch::new(knots, 2, pts, Some(wts)).unwrap();
        let nodes = vec![vec![0.0, 0.3, 0.5, 1.0], vec![0.2, 0.9]];
        let jacs = p.grid_jacobians(&nodes).unwrap();
        for (g, jac) in jacs.iter().enumerate() {
            let x = [nodes[0][g % 4], nodes[1][g / 4]];
            let e = p.eval(&x, 1).unwrap();
            for c in 0..2 {
                for j in 0..2 {
                    assert!((e.jac[c][j] - jac[c][j]).abs() < 1e-13);
                }
            }
        }
    }
}
