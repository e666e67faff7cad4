//! Test and benchmark geometries: solid and cross-shaped tiles, box, affine,
//! distorted and annular macro maps, and ready-made models.

use crate::error::{Error, Result};
use crate::linalg::Mat3;
use crate::model::{
    BoundaryConditions, ComposedModel, Dirichlet, Material, ProjectionConfig, QuadratureConfig,
    TileGeometry, Traction,
};
use crate::splines::{KnotVector, SplinePatch};

/// Greville abscissae of a knot vector.
pub fn greville(kv: &KnotVector) -> Vec<f64> {
    let p = kv.degree();
    let u = kv.knots();
    (0..kv.n_basis())
        .map(|i| {
            if p == 0 {
                0.5 * (u[i] + u[i + 1])
            } else {
                u[i + 1..=i + p].iter().sum::<f64>() / p as f64
            }
        })
        .collect()
}

/// Patch reproducing `f` on Greville points; exact when `f` is affine.
pub fn greville_patch<F: Fn([f64; 3]) -> [f64; 3]>(
    knots: Vec<KnotVector>,
    f: F,
) -> Result<SplinePatch> {
    let d = knots.len();
    let g: Vec<Vec<f64>> = knots.iter().map(greville).collect();
    let counts: Vec<usize> = knots.iter().map(|k| k.n_basis()).collect();
    let n: usize = counts.iter().product();
    let mut pts = Vec::with_capacity(n * d);
    for flat in 0..n {
        let mut x = [0.0; 3];
        let mut rem = flat;
        for k in 0..d {
            x[k] = g[k][rem % counts[k]];
            rem /= counts[k];
        }
        pts.extend_from_slice(&f(x)[..d]);
    }
    SplinePatch::new(knots, d, pts, None)
}

/// Box `[lo, hi]` as a spline of the given degree and spans per direction.
pub fn box_patch(
    d: usize,
    lo: [f64; 3],
    hi: [f64; 3],
    degree: usize,
    spans: [usize; 3],
) -> Result<SplinePatch> {
    let knots = (0..d)
        .map(|k| KnotVector::uniform(degree, spans[k]))
        .collect();
    greville_patch(knots, |x| {
        let mut y = [0.0; 3];
        for k in 0..3 {
            y[k] = lo[k] + (hi[k] - lo[k]) * x[k];
        }
        y
    })
}

/// Single-patch tile filling the unit cube (the identity map).
pub fn solid_tile(d: usize, degree: usize, spans: usize) -> Result<TileGeometry> {
    let p = box_patch(d, [0.0; 3], [1.0; 3], degree, [spans; 3])?;
    TileGeometry::new(vec![p], None)
}

/// Cross-shaped tile: a central box of half-width `half` with one arm to
/// each cube face (7 patches in 3D, 5 in 2D). `waist` narrows the arms in
/// their middle, which makes the tile map non-affine.
pub fn cross_tile(
    d: usize,
    degree: usize,
    spans: usize,
    half: f64,
    waist: f64,
) -> Result<TileGeometry> {
    if !(half > 0.0 && half < 0.5) {
        return Err(Error::InvalidModel(format!(
            "cross half-width must lie in (0, 0.5), got {half}"
        )));
    }
    if !(0.0..1.0).contains(&waist) {
        return Err(Error::InvalidModel(format!(
            "waist must lie in [0, 1), got {waist}"
        )));
    }
    let (a, b) = (0.5 - half, 0.5 + half);
    let mut patches = vec![box_patch(d, [a; 3], [b; 3], degree, [spans; 3])?];
    for dir in 0..d {
        for side in 0..2 {
            let mut lo = [a; 3];
            let mut hi = [b; 3];
            if side == 0 {
                lo[dir] = 0.0;
                hi[dir] = a;
            } else {
                lo[dir] = b;
                hi[dir] = 1.0;
            }
            let knots = (0..d).map(|_| KnotVector::uniform(degree, spans)).collect();
            let arm = greville_patch(knots, |x| {
                let t = x[dir];
                let s = 1.0 - waist * 4.0 * t * (1.0 - t);
                let mut y = [0.0; 3];
                for k in 0..3 {
                    let base = lo[k] + (hi[k] - lo[k]) * x[k];
                    y[k] = if k == dir {
                        base
                    } else {
                        0.5 + s * (base - 0.5)
                    };
                }
                y
            })?;
            patches.push(arm);
        }
    }
    TileGeometry::new(patches, None)
}

/// Axis-aligned box macro.
pub fn box_macro(
    d: usize,
    lengths: [f64; 3],
    degree: usize,
    elements: [usize; 3],
) -> Result<SplinePatch> {
    box_patch(d, [0.0; 3], lengths, degree, elements)
}

/// Affine image `a * x + c` of the unit cube.
pub fn affine_macro(
    d: usize,
    a: Mat3,
    c: [f64; 3],
    degree: usize,
    elements: [usize; 3],
) -> Result<SplinePatch> {
    let knots = (0..d)
        .map(|k| KnotVector::uniform(degree, elements[k]))
        .collect();
    greville_patch(knots, |x| {
        let mut y = c;
        for i in 0..3 {
            y[i] += (0..3).map(|j| a[i][j] * x[j]).sum::<f64>();
        }
        y
    })
}

/// Polynomial macro: a box of edge `length` with a smooth bulge of relative
/// size `amp` on its control points.
pub fn distorted_macro(
    d: usize,
    length: f64,
    amp: f64,
    degree: usize,
    elements: [usize; 3],
) -> Result<SplinePatch> {
    let knots = (0..d)
        .map(|k| KnotVector::uniform(degree, elements[k]))
        .collect();
    greville_patch(knots, |x| {
        let mut y = [0.0; 3];
        for i in 0..d {
            let j = (i + 1) % d;
            let bulge = amp * (std::f64::consts::PI * x[j]).sin() * (0.5 + 0.5 * x[i]);
            y[i] = length * (x[i] + bulge);
        }
        y
    })
}

/// Quarter of an annulus (2D) or of a thick cylindrical shell (3D) as an
/// exact NURBS. Parameter 0 is radial, 1 angular, 2 axial.
pub fn annulus_macro(
    d: usize,
    r_in: f64,
    r_out: f64,
    height: f64,
    elements: [usize; 3],
) -> Result<SplinePatch> {
    if !(r_in > 0.0 && r_out > r_in) {
        return Err(Error::InvalidModel("annulus needs 0 < r_in < r_out".into()));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let arc = [(1.0, 0.0, 1.0), (1.0, 1.0, h), (0.0, 1.0, 1.0)];
    let mut knots = vec![KnotVector::bezier(1), KnotVector::bezier(2)];
    if d == 3 {
        knots.push(KnotVector::bezier(1));
    }
    let layers = if d == 3 { 2 } else { 1 };
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for l in 0..layers {
        for &(cx, cy, w) in &arc {
            for r in [r_in, r_out] {
                pts.extend([r * cx, r * cy]);
                if d == 3 {
                    pts.push(l as f64 * height);
                }
                wts.push(w);
            }
        }
    }
    let mut patch = SplinePatch::new(knots, d, pts, Some(wts))?;
    for dir in 0..d {
        for j in 1..elements[dir] {
            patch = patch.insert_knot(dir, j as f64 / elements[dir] as f64)?;
        }
    }
    Ok(patch)
}

/// Steel-like unit material used by the examples.
pub fn default_material() -> Material {
    Material::new(1.0, 0.3).expect("valid constants")
}

/// Face 1 clamped, constant traction on face 2.
pub fn cantilever_bcs(d: usize, traction: [f64; 3]) -> BoundaryConditions {
    let _ = d;
    BoundaryConditions {
        dirichlet: vec![Dirichlet {
            face: 0,
            value: [0.0; 3],
            gradient: None,
        }],
        tractions: vec![Traction {
            face: 1,
            value: traction,
        }],
        body_force: [0.0; 3],
    }
}

/// Compose a model with the given pieces and default quadrature.
pub fn model(
    tile: TileGeometry,
    macro_patch: SplinePatch,
    bcs: BoundaryConditions,
    projection: ProjectionConfig,
) -> Result<ComposedModel> {
    ComposedModel::new(
        tile,
        macro_patch,
        default_material(),
        bcs,
        QuadratureConfig::default(),
        projection,
    )
}
