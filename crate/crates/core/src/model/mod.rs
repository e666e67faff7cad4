//! Problem definition: reference tile, macro geometry, composition, DOF
//! coupling, material and boundary conditions.
//!
//! Faces of the unit cube are numbered `2 * direction + side` internally
//! (side 0 at coordinate 0); model files use the same order, 1-based.

mod dofmap;
mod json;
mod tile;

use std::sync::Arc;

pub use dofmap::{flatten, on_macro_face, unflatten, DofMap, TileNumbering, UnionFind, MERGE_TOL};
pub use json::{
    BcSpec, FaceValueSpec, MaterialSpec, ModelFile, PatchSpec, ProjectionSpec, QuadratureSpec,
    TileSpec,
};
pub use tile::{FaceQuad, QuadOrder, SpanQuad, TileGeometry, TileQuadrature};

use crate::error::{Error, Result};
use crate::linalg::{det, matmul, Mat3};
use crate::splines::{bezier_extract, BezierElement, SplinePatch};

pub fn face_dir(f: usize) -> usize {
    f / 2
}

pub fn face_side(f: usize) -> usize {
    f % 2
}

/// Isotropic linear elastic material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    young: f64,
    poisson: f64,
}

impl Material {
    pub fn new(young: f64, poisson: f64) -> Result<Self> {
        if !(young > 0.0 && young.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "Young's modulus must be positive, got {young}"
            )));
        }
        if !(poisson > -1.0 && poisson < 0.5) {
            return Err(Error::InvalidModel(format!(
                "Poisson ratio must lie in (-1, 0.5), got {poisson}"
            )));
        }
        Ok(Self { young, poisson })
    }

    pub fn young(&self) -> f64 {
        self.young
    }

    pub fn poisson(&self) -> f64 {
        self.poisson
    }

    /// Lame constants `(lambda, mu)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.young, self.poisson);
        (
            e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
            e / (2.0 * (1.0 + nu)),
        )
    }
}

/// Prescribed displacement `value + gradient * x` on a whole macro face.
#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet {
    pub face: usize,
    pub value: [f64; 3],
    pub gradient: Option<Mat3>,
}

impl Dirichlet {
    pub fn eval(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut g = self.value;
        if let Some(a) = &self.gradient {
            for i in 0..3 {
                g[i] += (0..3).map(|j| a[i][j] * x[j]).sum::<f64>();
            }
        }
        g
    }

    pub fn is_homogeneous(&self) -> bool {
        self.value.iter().all(|&v| v == 0.0)
            && self
                .gradient
                .is_none_or(|g| g.iter().flatten().all(|&v| v == 0.0))
    }
}

/// Constant traction per unit physical area on a whole macro face.
#[derive(Debug, Clone, PartialEq)]
pub struct Traction {
    pub face: usize,
    pub value: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditions {
    pub dirichlet: Vec<Dirichlet>,
    pub tractions: Vec<Traction>,
    pub body_force: [f64; 3],
}

impl BoundaryConditions {
    pub fn has_body_force(&self) -> bool {
        self.body_force.iter().any(|&b| b != 0.0)
    }
}

/// Gauss points per direction and tile knot span. `None` means degree + 1
/// for the fast path and degree + 2 for the oracle.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuadratureConfig {
    pub tile_order: Option<usize>,
    pub oracle_order: Option<usize>,
}

impl QuadratureConfig {
    pub fn tile(&self) -> QuadOrder {
        self.tile_order
            .map_or(QuadOrder::DegreePlus(1), QuadOrder::Fixed)
    }

    pub fn oracle(&self) -> QuadOrder {
        self.oracle_order
            .map_or(QuadOrder::DegreePlus(2), QuadOrder::Fixed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionConfig {
    /// Adaptive degree selection until the projection error is below the tolerance.
    Tolerance(f64),
    /// Fixed per-direction degrees (a single entry applies to all directions).
    Degrees(Vec<usize>),
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig::Tolerance(1e-3)
    }
}

/// Macro spline map and its Bezier elements.
#[derive(Debug, Clone)]
pub struct MacroGeometry {
    patch: SplinePatch,
    elements: Vec<BezierElement>,
    grid: [usize; 3],
}

impl MacroGeometry {
    pub fn new(patch: SplinePatch) -> Result<Self> {
        let d = patch.dim();
        if patch.param_dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "macro maps [0,1]^{} into R^{d}; the parametric and physical dimensions must agree",
                patch.param_dim()
            )));
        }
        let elements = bezier_extract(&patch)?;
        let mut grid = [1; 3];
        for (k, kv) in patch.knots().iter().enumerate() {
            grid[k] = kv.n_spans();
        }
        let geo = Self {
            patch,
            elements,
            grid,
        };
        for e in 0..geo.elements.len() {
            let c = [0.5; 3];
            let ev = geo.elements[e].patch.eval(&c[..d], 1)?;
            if !(det(d, &ev.jac) > 0.0) {
                return Err(Error::DegenerateMacro { element: e, xi: c });
            }
        }
        Ok(geo)
    }

    pub fn patch(&self) -> &SplinePatch {
        &self.patch
    }

    pub fn elements(&self) -> &[BezierElement] {
        &self.elements
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn grid(&self) -> [usize; 3] {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.patch.dim()
    }

    /// Per-direction polynomial degree of det J, `d * p - 1`.
    pub fn jacobian_det_degree(&self) -> Result<Vec<usize>> {
        if self.patch.is_rational() {
            return Err(Error::RationalMacro);
        }
        let d = self.dim();
        Ok(self
            .patch
            .degrees()
            .iter()
            .map(|&p| (d * p).saturating_sub(1))
            .collect())
    }
}

/// Complete problem: tile composed into every macro element.
#[derive(Debug, Clone)]
pub struct ComposedModel {
    dim: usize,
    tile: Arc<TileGeometry>,
    numbering: Arc<TileNumbering>,
    macro_geo: MacroGeometry,
    material: Material,
    bcs: BoundaryConditions,
    quadrature: QuadratureConfig,
    projection: ProjectionConfig,
    dof_map: Arc<DofMap>,
}

impl ComposedModel {
    pub fn new(
        tile: TileGeometry,
        macro_patch: SplinePatch,
        material: Material,
        bcs: BoundaryConditions,
        quadrature: QuadratureConfig,
        projection: ProjectionConfig,
    ) -> Result<Self> {
        let dim = tile.dim();
        if macro_patch.dim() != dim {
            return Err(Error::DimensionMismatch(format!(
                "tile dimension {dim} differs from macro dimension {}",
                macro_patch.dim()
            )));
        }
        let macro_geo = MacroGeometry::new(macro_patch)?;
        let numbering = TileNumbering::new(&tile);
        let dof_map = DofMap::new(&numbering, macro_geo.grid(), dim)?;
        validate_bcs(&bcs, &numbering, dim)?;
        if let ProjectionConfig::Tolerance(t) = projection {
            if !(t > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "projection tolerance must be positive, got {t}"
                )));
            }
        }
        if let ProjectionConfig::Degrees(p) = &projection {
            if p.len() != 1 && p.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "projection degrees need 1 or {dim} entries"
                )));
            }
        }
        Ok(Self {
            dim,
            tile: Arc::new(tile),
            numbering: Arc::new(numbering),
            macro_geo,
            material,
            bcs,
            quadrature,
            projection,
            dof_map: Arc::new(dof_map),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tile(&self) -> &TileGeometry {
        &self.tile
    }

    pub fn numbering(&self) -> &TileNumbering {
        &self.numbering
    }

    pub fn macro_geometry(&self) -> &MacroGeometry {
        &self.macro_geo
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn bcs(&self) -> &BoundaryConditions {
        &self.bcs
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quadrature
    }

    pub fn projection(&self) -> &ProjectionConfig {
        &self.projection
    }

    pub fn dof_map(&self) -> &DofMap {
        &self.dof_map
    }

    pub fn n_dof(&self) -> usize {
        self.dim * self.dof_map.n_global
    }

    pub fn with_projection(&self, projection: ProjectionConfig) -> Self {
        Self {
            projection,
            ..self.clone()
        }
    }

    pub fn with_quadrature(&self, quadrature: QuadratureConfig) -> Self {
        Self {
            quadrature,
            ..self.clone()
        }
    }

    pub fn with_bcs(&self, bcs: BoundaryConditions) -> Result<Self> {
        validate_bcs(&bcs, &self.numbering, self.dim)?;
        Ok(Self {
            bcs,
            ..self.clone()
        })
    }

    pub fn with_material(&self, material: Material) -> Self {
        Self {
            material,
            ..self.clone()
        }
    }

    /// Same model with new macro control points (flat, `n_M x d`).
    pub fn with_macro_points(&self, points: Vec<f64>) -> Result<Self> {
        let patch = self.macro_geo.patch.with_points(points)?;
        Ok(Self {
            macro_geo: MacroGeometry::new(patch)?,
            ..self.clone()
        })
    }

    /// Tile quadrature for the fast path.
    pub fn tile_quadrature(&self) -> Result<TileQuadrature> {
        TileQuadrature::build(
            &self.tile,
            &self.numbering.tile_local,
            self.numbering.n_tile,
            self.quadrature.tile(),
        )
    }

    pub fn oracle_quadrature(&self) -> Result<TileQuadrature> {
        TileQuadrature::build(
            &self.tile,
            &self.numbering.tile_local,
            self.numbering.n_tile,
            self.quadrature.oracle(),
        )
    }

    /// Physical point and Jacobian of the composed map of element `t` at
    /// parameter `theta` of tile patch `patch`.
    pub fn eval_composed(&self, t: usize, patch: usize, theta: &[f64]) -> Result<([f64; 3], Mat3)> {
        let d = self.dim;
        let te = self.tile.patches()[patch].eval(theta, 1)?;
        let me = self.macro_geo.elements[t]
            .patch
            .eval(&te.position[..d], 1)?;
        Ok((me.position, matmul(d, &me.jac, &te.jac)))
    }

    /// Macro element map at local parameter `xi`.
    pub fn eval_macro(&self, t: usize, xi: &[f64]) -> Result<([f64; 3], Mat3)> {
        let e = self.macro_geo.elements[t].patch.eval(&xi[..self.dim], 1)?;
        Ok((e.position, e.jac))
    }

    /// Element indices touching macro face `f`.
    pub fn boundary_elements(&self, f: usize) -> Vec<usize> {
        let grid = self.macro_geo.grid;
        (0..self.macro_geo.n_elements())
            .filter(|&e| on_macro_face(unflatten(e, grid, self.dim), grid, f))
            .collect()
    }

    /// Cube faces with no marked tile boundary (a connected structure
    /// normally touches all of them).
    pub fn warnings(&self) -> Vec<String> {
        self.tile
            .uncovered_faces()
            .into_iter()
            .map(|f| format!("tile has no boundary on cube face {}", f + 1))
            .collect()
    }
}

fn validate_bcs(bcs: &BoundaryConditions, numbering: &TileNumbering, d: usize) -> Result<()> {
    for b in &bcs.dirichlet {
        if b.face >= 2 * d {
            return Err(Error::InvalidModel(format!(
                "Dirichlet face {} out of range",
                b.face + 1
            )));
        }
        if numbering.face_nodes[b.face].is_empty() {
            return Err(Error::EmptyDirichlet(b.face + 1));
        }
    }
    for t in &bcs.tractions {
        if t.face >= 2 * d {
            return Err(Error::InvalidModel(format!(
                "traction face {} out of range",
                t.face + 1
            )));
        }
        if bcs.dirichlet.iter().any(|b| b.face == t.face) {
            return Err(Error::InvalidModel(format!(
                "face {} has both traction and Dirichlet data",
                t.face + 1
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
