//! Model file format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splines::{KnotVector, SplinePatch};

use super::{
    BoundaryConditions, ComposedModel, Dirichlet, Material, ProjectionConfig, QuadratureConfig,
    TileGeometry, Traction,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub degrees: Vec<usize>,
    pub knots: Vec<Vec<f64>>,
    pub control_points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Per patch face (2d entries): the 1-based cube face it lies on, or null.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_markers: Option<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub patches: Vec<PatchSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    #[serde(rename = "E")]
    pub young: f64,
    pub nu: f64,
}

/// Face-wise data; `gradient` (Dirichlet only) makes the value affine,
/// `value + gradient * x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceValueSpec {
    pub face: usize,
    pub value: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BcSpec {
    #[serde(default)]
    pub dirichlet: Vec<FaceValueSpec>,
    #[serde(default)]
    pub tractions: Vec<FaceValueSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_force: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_order: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degrees: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dimension: usize,
    #[serde(rename = "macro")]
    pub macro_patch: PatchSpec,
    pub tile: TileSpec,
    pub material: MaterialSpec,
    #[serde(default)]
    pub bcs: BcSpec,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub projection: ProjectionSpec,
}

impl PatchSpec {
    pub fn to_patch(&self, dim: usize) -> Result<SplinePatch> {
        if self.degrees.len() != dim || self.knots.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "patch needs {dim} degrees and knot vectors, got {} and {}",
                self.degrees.len(),
                self.knots.len()
            )));
        }
        let knots = self
            .degrees
            .iter()
            .zip(&self.knots)
            .map(|(&p, k)| KnotVector::new(p, k.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut pts = Vec::with_capacity(self.control_points.len() * dim);
        for cp in &self.control_points {
            if cp.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "control point has {} coordinates, expected {dim}",
                    cp.len()
                )));
            }
            pts.extend_from_slice(cp);
        }
        SplinePatch::new(knots, dim, pts, self.weights.clone())
    }

    pub fn from_patch(p: &SplinePatch) -> Self {
        let dim = p.dim();
        Self {
            degrees: p.degrees(),
            knots: p.knots().iter().map(|k| k.knots().to_vec()).collect(),
            control_points: p.points().chunks(dim).map(|c| c.to_vec()).collect(),
            weights: p.weights().map(|w| w.to_vec()),
            face_markers: None,
        }
    }
}

impl TileSpec {
    pub fn to_tile(&self, dim: usize) -> Result<TileGeometry> {
        let patches = self
            .patches
            .iter()
            .map(|p| p.to_patch(dim))
            .collect::<Result<Vec<_>>>()?;
        let markers = if self.patches.iter().all(|p| p.face_markers.is_none()) {
            None
        } else {
            let m = self
                .patches
                .iter()
                .map(|p| match &p.face_markers {
                    Some(m) => m
                        .iter()
                        .map(|f| match *f {
                            Some(0) => Err(Error::InvalidModel("face markers are 1-based".into())),
                            Some(f) => Ok(Some(f - 1)),
                            None => Ok(None),
                        })
                        .collect::<Result<Vec<_>>>(),
                    None => Err(Error::InvalidModel(
                        "face_markers must be given for all patches or none".into(),
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            Some(m)
        };
        TileGeometry::new(patches, markers)
    }

    /// Canonical form with normalized knots and explicit markers.
    pub fn from_tile(tile: &TileGeometry) -> Self {
        Self {
            patches: tile
                .patches()
                .iter()
                .zip(tile.face_markers())
                .map(|(p, m)| PatchSpec {
                    face_markers: Some(m.iter().map(|f| f.map(|f| f + 1)).collect()),
                    ..PatchSpec::from_patch(p)
                })
                .collect(),
        }
    }
}

fn vec_d(v: &[f64], d: usize, what: &str) -> Result<[f64; 3]> {
    if v.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} components, expected {d}",
            v.len()
        )));
    }
    let mut out = [0.0; 3];
    out[..d].copy_from_slice(v);
    Ok(out)
}

fn face_index(f: usize, d: usize) -> Result<usize> {
    if f == 0 || f > 2 * d {
        return Err(Error::InvalidModel(format!(
            "face {f} not in 1..={}",
            2 * d
        )));
    }
    Ok(f - 1)
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build(&self) -> Result<ComposedModel> {
        let d = self.dimension;
        if !(2..=3).contains(&d) {
            return Err(Error::InvalidModel(format!(
                "dimension must be 2 or 3, got {d}"
            )));
        }
        let macro_patch = self.macro_patch.to_patch(d)?;
        let tile = self.tile.to_tile(d)?;
        let material = Material::new(self.material.young, self.material.nu)?;
        let mut bcs = BoundaryConditions::default();
        for s in &self.bcs.dirichlet {
            let gradient = match &s.gradient {
                None => None,
                Some(rows) => {
                    if rows.len() != d {
                        return Err(Error::DimensionMismatch(
                            "Dirichlet gradient must be d x d".into(),
                        ));
                    }
                    let mut g = [[0.0; 3]; 3];
                    for (i, r) in rows.iter().enumerate() {
                        g[i] = vec_d(r, d, "Dirichlet gradient row")?;
                    }
                    Some(g)
                }
            };
            bcs.dirichlet.push(Dirichlet {
                face: face_index(s.face, d)?,
                value: vec_d(&s.value, d, "Dirichlet value")?,
                gradient,
            });
        }
        for s in &self.bcs.tractions {
            if s.gradient.is_some() {
                return Err(Error::InvalidModel(
                    "tractions take a constant value only".into(),
                ));
            }
            bcs.tractions.push(Traction {
                face: face_index(s.face, d)?,
                value: vec_d(&s.value, d, "traction")?,
            });
        }
        if let Some(b) = &self.bcs.body_force {
            bcs.body_force = vec_d(b, d, "body force")?;
        }
        let quadrature = QuadratureConfig {
            tile_order: self.quadrature.tile_order,
            oracle_order: self.quadrature.oracle_order,
        };
        let projection = match (&self.projection.tol, &self.projection.degrees) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidModel(
                    "projection takes either tol or degrees".into(),
                ));
            }
            (Some(t), None) => ProjectionConfig::Tolerance(*t),
            (None, Some(p)) => ProjectionConfig::Degrees(p.clone()),
            (None, None) => ProjectionConfig::default(),
        };
        ComposedModel::new(tile, macro_patch, material, bcs, quadrature, projection)
    }

    pub fn from_model(model: &ComposedModel) -> Self {
        let d = model.dim();
        let face_value = |face: usize, v: &[f64; 3], g: Option<&[[f64; 3]; 3]>| FaceValueSpec {
            face: face + 1,
            value: v[..d].to_vec(),
            gradient: g.map(|g| g[..d].iter().map(|r| r[..d].to_vec()).collect()),
        };
        let bcs = model.bcs();
        Self {
            dimension: d,
            macro_patch: PatchSpec::from_patch(model.macro_geometry().patch()),
            tile: TileSpec::from_tile(model.tile()),
            material: MaterialSpec {
                young: model.material().young(),
                nu: model.material().poisson(),
            },
            bcs: BcSpec {
                dirichlet: bcs
                    .dirichlet
                    .iter()
                    .map(|b| face_value(b.face, &b.value, b.gradient.as_ref()))
                    .collect(),
                tractions: bcs
                    .tractions
                    .iter()
                    .map(|b| face_value(b.face, &b.value, None))
                    .collect(),
                body_force: Some(bcs.body_force[..d].to_vec()),
            },
            quadrature: QuadratureSpec {
                tile_order: model.quadrature().tile_order,
                oracle_order: model.quadrature().oracle_order,
            },
            projection: match model.projection() {
                ProjectionConfig::Tolerance(t) => ProjectionSpec {
                    tol: Some(*t),
                    degrees: None,
                },
                ProjectionConfig::Degrees(p) => ProjectionSpec {
                    tol: None,
                    degrees: Some(p.clone()),
                },
            },
        }
    }
}
