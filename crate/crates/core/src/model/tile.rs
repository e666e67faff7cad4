use crate::error::{Error, Result};
use crate::linalg::{cross, det, inverse, norm};
use crate::quadrature::{gauss_rule, tensor_points, GaussRule};
use crate::splines::SplinePatch;

use super::{face_dir, face_side};

/// Control points are accepted this far outside the unit cube.
const CUBE_TOL: f64 = 1e-12;

/// Reference tile: patches mapping into [0,1]^d, plus for every patch face
/// the unit-cube face it lies on (if any).
#[derive(Debug, Clone)]
pub struct TileGeometry {
    patches: Vec<SplinePatch>,
    face_markers: Vec<Vec<Option<usize>>>,
}

impl TileGeometry {
    /// Face markers are detected from the control points when not given.
    pub fn new(
        patches: Vec<SplinePatch>,
        face_markers: Option<Vec<Vec<Option<usize>>>>,
    ) -> Result<Self> {
        let d = patches
            .first()
            .ok_or_else(|| Error::InvalidModel("tile has no patches".into()))?
            .dim();
        for (i, p) in patches.iter().enumerate() {
            if p.dim() != d || p.param_dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "tile patch {i} maps [0,1]^{} into R^{}, expected dimension {d}",
                    p.param_dim(),
                    p.dim()
                )));
            }
            if p.points()
                .iter()
                .any(|&x| !(-CUBE_TOL..=1.0 + CUBE_TOL).contains(&x))
            {
                return Err(Error::InvalidModel(format!(
                    "tile patch {i} has control points outside [0,1]^{d}"
                )));
            }
        }
        let mut tile = Self {
            patches,
            face_markers: Vec::new(),
        };
        tile.face_markers = match face_markers {
            Some(m) => {
                if m.len() != tile.patches.len() || m.iter().any(|f| f.len() != 2 * d) {
                    return Err(Error::InvalidModel(format!(
                        "face_markers need {} entries per patch",
                        2 * d
                    )));
                }
                for (pi, marks) in m.iter().enumerate() {
                    for (pf, mark) in marks.iter().enumerate() {
                        if let Some(f) = *mark {
                            if f >= 2 * d {
                                return Err(Error::InvalidModel(format!(
                                    "face marker {} out of range",
                                    f + 1
                                )));
                            }
                            if !tile.patch_face_on(pi, pf, f) {
                                return Err(Error::InvalidModel(format!(
                                    "patch {pi} face {pf} is marked on cube face {} but does not lie on it",
                                    f + 1
                                )));
                            }
                        }
                    }
                }
                m
            }
            None => (0..tile.patches.len())
                .map(|pi| {
                    (0..2 * d)
                        .map(|pf| (0..2 * d).find(|&f| tile.patch_face_on(pi, pf, f)))
                        .collect()
                })
                .collect(),
        };
        Ok(tile)
    }

    pub fn dim(&self) -> usize {
        self.patches[0].dim()
    }

    pub fn patches(&self) -> &[SplinePatch] {
        &self.patches
    }

    pub fn face_markers(&self) -> &[Vec<Option<usize>>] {
        &self.face_markers
    }

    /// Highest polynomial degree over all patches and directions.
    pub fn max_degree(&self) -> usize {
        self.patches
            .iter()
            .flat_map(|p| p.degrees())
            .max()
            .unwrap_or(0)
    }

    /// Control-point indices of patch face `pf` (direction `pf/2`, side `pf%2`).
    pub fn patch_face_points(&self, patch: usize, pf: usize) -> Vec<usize> {
        let p = &self.patches[patch];
        let (dir, side) = (face_dir(pf), face_side(pf));
        let counts = p.counts();
        let fixed = if side == 0 { 0 } else { counts[dir] - 1 };
        (0..p.n_points())
            .filter(|&i| p.multi_index(i)[dir] == fixed)
            .collect()
    }

    fn patch_face_on(&self, patch: usize, pf: usize, f: usize) -> bool {
        let (dir, val) = (face_dir(f), face_side(f) as f64);
        let p = &self.patches[patch];
        self.patch_face_points(patch, pf)
            .iter()
            .all(|&i| (p.point(i)[dir] - val).abs() < CUBE_TOL)
    }

    /// Cube faces with no marked tile boundary.
    pub fn uncovered_faces(&self) -> Vec<usize> {
        (0..2 * self.dim())
            .filter(|f| !self.face_markers.iter().flatten().any(|m| *m == Some(*f)))
            .collect()
    }
}

/// Quadrature order per direction and knot span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadOrder {
    /// Fixed number of Gauss points.
    Fixed(usize),
    /// Patch degree plus this many points.
    DegreePlus(usize),
}

impl QuadOrder {
    pub fn points(&self, degree: usize) -> usize {
        match *self {
            QuadOrder::Fixed(n) => n,
            QuadOrder::DegreePlus(k) => degree + k,
        }
    }
}

/// Quadrature data of one tile-patch knot span. Arrays are indexed by point
/// `q` and active function `a` as `q * nodes.len() + a`.
#[derive(Debug, Clone)]
pub struct SpanQuad {
    pub patch: usize,
    /// Tile-local indices of the active functions.
    pub nodes: Vec<usize>,
    pub theta: Vec<[f64; 3]>,
    /// Image point in the macro parameter cube.
    pub xi: Vec<[f64; 3]>,
    /// Weight times |det J| of the tile map.
    pub wdet: Vec<f64>,
    pub values: Vec<f64>,
    /// Gradients with respect to the macro parameter.
    pub grads: Vec<[f64; 3]>,
}

impl SpanQuad {
    pub fn n_points(&self) -> usize {
        self.wdet.len()
    }
}

/// Quadrature on one span of a tile-patch face lying on a cube face.
#[derive(Debug, Clone)]
pub struct FaceQuad {
    pub patch: usize,
    pub nodes: Vec<usize>,
    pub xi: Vec<[f64; 3]>,
    /// Weight times the tile-face surface Jacobian (in macro-parameter units).
    pub wsurf: Vec<f64>,
    pub values: Vec<f64>,
}

/// Precomputed tile quadrature in theta-space.
#[derive(Debug, Clone)]
pub struct TileQuadrature {
    pub dim: usize,
    pub n_tile: usize,
    pub order: QuadOrder,
    pub spans: Vec<SpanQuad>,
    /// Per cube face.
    pub faces: Vec<Vec<FaceQuad>>,
}

impl TileQuadrature {
    pub fn build(
        tile: &TileGeometry,
        tile_local: &[Vec<usize>],
        n_tile: usize,
        order: QuadOrder,
    ) -> Result<Self> {
        let d = tile.dim();
        let mut spans = Vec::new();
        let mut faces = vec![Vec::new(); 2 * d];
        for (pi, patch) in tile.patches().iter().enumerate() {
            let rules: Vec<GaussRule> = patch
                .degrees()
                .iter()
                .map(|&p| gauss_rule(order.points(p)))
                .collect::<Result<_>>()?;
            for b in patch.span_boxes() {
                let mapped: Vec<GaussRule> =
                    (0..d).map(|k| rules[k].mapped(b.lo[k], b.hi[k])).collect();
                let (pts, wts) = tensor_points(&mapped);
                let mut sq = SpanQuad {
                    patch: pi,
                    nodes: Vec::new(),
                    theta: Vec::with_capacity(pts.len()),
                    xi: Vec::with_capacity(pts.len()),
                    wdet: Vec::with_capacity(pts.len()),
                    values: Vec::new(),
                    grads: Vec::new(),
                };
                for (q, (theta, w)) in pts.iter().zip(&wts).enumerate() {
                    let ev = patch.eval(&theta[..d], 1)?;
                    let dj = det(d, &ev.jac);
                    if !(dj > 0.0) || !dj.is_finite() {
                        return Err(Error::SingularTile {
                            patch: pi,
                            theta: *theta,
                        });
                    }
                    let inv = inverse(d, &ev.jac).ok_or(Error::SingularTile {
                        patch: pi,
                        theta: *theta,
                    })?;
                    let basis = patch.basis(&theta[..d])?;
                    if q == 0 {
                        sq.nodes = basis.indices.iter().map(|&i| tile_local[pi][i]).collect();
                    }
                    for (v, g) in basis.values.iter().zip(&basis.grads) {
                        sq.values.push(*v);
                        let mut gx = [0.0; 3];
                        for (i, gxi) in gx.iter_mut().enumerate().take(d) {
                            *gxi = (0..d).map(|a| g[a] * inv[a][i]).sum();
                        }
                        sq.grads.push(gx);
                    }
                    sq.theta.push(*theta);
                    sq.xi.push(ev.position);
                    sq.wdet.push(w * dj);
                }
                spans.push(sq);
            }
            for (pf, mark) in tile.face_markers()[pi].iter().enumerate() {
                let Some(f) = *mark else { continue };
                let (dir, side) = (face_dir(pf), face_side(pf) as f64);
                let in_face: Vec<usize> = (0..d).filter(|&k| k != dir).collect();
                let face_boxes = patch.span_boxes().into_iter().filter(|b| {
                    let n = patch.knots()[dir].n_spans();
                    b.multi[dir] == if side == 0.0 { 0 } else { n - 1 }
                });
                for b in face_boxes {
                    let mapped: Vec<GaussRule> = in_face
                        .iter()
                        .map(|&k| rules[k].mapped(b.lo[k], b.hi[k]))
                        .collect();
                    let (pts, wts) = tensor_points(&mapped);
                    let mut fq = FaceQuad {
                        patch: pi,
                        nodes: Vec::new(),
                        xi: Vec::new(),
                        wsurf: Vec::new(),
                        values: Vec::new(),
                    };
                    for (q, (p2, w)) in pts.iter().zip(&wts).enumerate() {
                        let mut theta = [0.0; 3];
                        theta[dir] = side;
                        for (j, &k) in in_face.iter().enumerate() {
                            theta[k] = p2[j];
                        }
                        let ev = patch.eval(&theta[..d], 1)?;
                        let col = |k: usize| [ev.jac[0][k], ev.jac[1][k], ev.jac[2][k]];
                        let js = if d == 3 {
                            norm(3, &cross(&col(in_face[0]), &col(in_face[1])))
                        } else {
                            norm(2, &col(in_face[0]))
                        };
                        let basis = patch.basis(&theta[..d])?;
                        if q == 0 {
                            fq.nodes = basis.indices.iter().map(|&i| tile_local[pi][i]).collect();
                        }
                        fq.values.extend_from_slice(&basis.values);
                        let mut xi = ev.position;
                        xi[face_dir(f)] = face_side(f) as f64;
                        fq.xi.push(xi);
                        fq.wsurf.push(w * js);
                    }
                    faces[f].push(fq);
                }
            }
        }
        Ok(Self {
            dim: d,
            n_tile,
            order,
            spans,
            faces,
        })
    }

    pub fn n_points(&self) -> usize {
        self.spans.iter().map(|s| s.n_points()).sum()
    }
}
