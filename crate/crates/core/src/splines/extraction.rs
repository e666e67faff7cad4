use crate::error::Result;
use crate::splines::{KnotVector, SplinePatch};

/// One knot-span element rewritten in Bernstein form on [0,1]^pdim.
#[derive(Debug, Clone)]
pub struct BezierElement {
    pub index: usize,
    pub multi: [usize; 3],
    /// Parameter box of the span in the parent patch.
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    /// The element as a single-span (possibly rational) Bezier patch.
    pub patch: SplinePatch,
    /// For each Bernstein coefficient `k`, the pairs `(a, dm_k/dm_a)` over
    /// parent control points `a`.
    pub extraction: Vec<Vec<(usize, f64)>>,
}

impl BezierElement {
    pub fn degrees(&self) -> Vec<usize> {
        self.patch.degrees()
    }

    /// Parent-patch parameter of the local point `xi`.
    pub fn parent_param(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .enumerate()
            .map(|(k, &t)| self.lo[k] + t * (self.hi[k] - self.lo[k]))
            .collect()
    }
}

/// Bezier extraction of every nonempty span; element order has direction 0
/// varying fastest. Rational patches are extracted in homogeneous form.
pub fn bezier_extract(patch: &SplinePatch) -> Result<Vec<BezierElement>> {
    let pd = patch.param_dim();
    let dim = patch.dim();
    let degrees = patch.degrees();
    let ext: Vec<Vec<Vec<Vec<f64>>>> = patch.knots().iter().map(|k| k.extraction()).collect();
    let local_counts: Vec<usize> = degrees.iter().map(|p| p + 1).collect();
    let n_b: usize = local_counts.iter().product();
    let boxes = patch.span_boxes();
    let mut out = Vec::with_capacity(boxes.len());
    for (index, b) in boxes.into_iter().enumerate() {
        let mut extraction = vec![Vec::new(); n_b];
        let mut hw = vec![0.0; n_b];
        let mut hp = vec![0.0; n_b * dim];
        for k in 0..n_b {
            let kk = unflatten(k, &local_counts);
            for a in 0..n_b {
                let aa = unflatten(a, &local_counts);
                let c: f64 = (0..pd).map(|d| ext[d][b.multi[d]][aa[d]][kk[d]]).product();
                if c == 0.0 {
                    continue;
                }
                let mut m = [0usize; 3];
                for d in 0..pd {
                    m[d] = b.spans[d] - degrees[d] + aa[d];
                }
                let gi = patch.flat_index(m);
                let w = patch.weight(gi);
                hw[k] += c * w;
                let p = patch.point(gi);
                for c_ in 0..dim {
                    hp[k * dim + c_] += c * w * p[c_];
                }
                extraction[k].push((gi, c * w));
            }
        }
        let mut pts = vec![0.0; n_b * dim];
        for k in 0..n_b {
            for c in 0..dim {
                pts[k * dim + c] = hp[k * dim + c] / hw[k];
            }
            for e in extraction[k].iter_mut() {
                e.1 /= hw[k];
            }
        }
        let weights = patch.is_rational().then_some(hw);
        let knots = degrees.iter().map(|&p| KnotVector::bezier(p)).collect();
        let epatch = SplinePatch::new(knots, dim, pts, weights)?;
        out.push(BezierElement {
            index,
            multi: b.multi,
            lo: b.lo,
            hi: b.hi,
            patch: epatch,
            extraction,
        });
    }
    Ok(out)
}

fn unflatten(i: usize, counts: &[usize]) -> [usize; 3] {
    let mut m = [0; 3];
    let mut rem = i;
    for (k, &c) in counts.iter().enumerate() {
        m[k] = rem % c;
        rem /= c;
    }
    m
}
