//! Reference element loop: full Gauss quadrature with the exact macro fields
//! evaluated at every point. Shares numbering and sparsity with the fast path.

use std::time::Instant;

use serde::Serialize;

use crate::assembly::{scatter_load, SparseOperator};
use crate::curvilinear::{
    body_extension, macro_field, physical_stress, traction_extension, MetricState,
};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat3};
use crate::lookup::{build_sparsity, span_pair_map, SparsityPattern};
use crate::model::{ComposedModel, TileQuadrature};
use crate::projection::element_traction_faces;
use crate::sparse::BlockSymMatrix;

fn state_at(model: &ComposedModel, t: usize, xi: &[f64; 3]) -> Result<MetricState> {
    let d = model.dim();
    let ev = model.macro_geometry().elements()[t]
        .patch
        .eval(&xi[..d], 1)?;
    if !(crate::linalg::det(d, &ev.jac) > 0.0) {
        return Err(Error::DegenerateMacro {
            element: t,
            xi: *xi,
        });
    }
    MetricState::from_jacobian(d, &ev.jac).ok_or(Error::DegenerateMacro {
        element: t,
        xi: *xi,
    })
}

/// Volume by full quadrature over every element and tile span.
pub fn oracle_volume(model: &ComposedModel, tq: &TileQuadrature) -> Result<f64> {
    let mut v = 0.0;
    for t in 0..model.macro_geometry().n_elements() {
        for s in &tq.spans {
            for (xi, w) in s.xi.iter().zip(&s.wdet) {
                v += w * state_at(model, t, xi)?.det_j;
            }
        }
    }
    Ok(v)
}

/// Reference operator with the context needed to reuse it.
pub struct OracleContext {
    pub tq: TileQuadrature,
    pub sparsity: SparsityPattern,
    pub pair_map: Vec<Vec<(usize, usize, usize)>>,
}

impl OracleContext {
    pub fn new(model: &ComposedModel) -> Result<Self> {
        let tq = model.oracle_quadrature()?;
        let sparsity = build_sparsity(&tq);
        let pair_map = span_pair_map(&tq, &sparsity);
        Ok(Self {
            tq,
            sparsity,
            pair_map,
        })
    }
}

/// Pair blocks `n_nz x d^2` of element `t` with exact macro fields.
pub fn oracle_element_blocks(
    model: &ComposedModel,
    ctx: &OracleContext,
    t: usize,
) -> Result<Vec<f64>> {
    let d = model.dim();
    let dd = d * d;
    let mat = model.material();
    let mut out = vec![0.0; ctx.sparsity.n_nz() * dd];
    for (s, pairs) in ctx.tq.spans.iter().zip(&ctx.pair_map) {
        let nq = s.n_points();
        let na = s.nodes.len();
        // x[l][(a, k), (q, j)] = w sum_i G_ai A_ij[k][l]; g[(q, j), b] = G_bj
        let mut x = vec![0.0; d * na * d * nq * d];
        let mut g = vec![0.0; nq * d * na];
        let ncol = nq * d;
        for q in 0..nq {
            let st = state_at(model, t, &s.xi[q])?;
            let field = macro_field(&st, mat);
            let w = s.wdet[q];
            for a in 0..na {
                let ga = s.grads[q * na + a];
                for j in 0..d {
                    g[(q * d + j) * na + a] = ga[j];
                    for k in 0..d {
                        for l in 0..d {
                            let v: f64 = (0..d).map(|i| ga[i] * field.blocks[i][j][k][l]).sum();
                            x[((l * na + a) * d + k) * ncol + q * d + j] = w * v;
                        }
                    }
                }
            }
        }
        let mut ks = vec![0.0; d * na * d * na];
        for l in 0..d {
            let xl = &x[l * na * d * ncol..(l + 1) * na * d * ncol];
            gemm(
                &mut ks[l * na * d * na..(l + 1) * na * d * na],
                xl,
                &g,
                na * d,
                ncol,
                na,
                false,
            );
        }
        for &(a, b, nz) in pairs {
            for k in 0..d {
                for l in 0..d {
                    out[nz * dd + k * d + l] += ks[((l * na + a) * d + k) * na + b];
                }
            }
        }
    }
    Ok(out)
}

/// Element load `n_T x d` with exact extended body force and tractions.
pub fn oracle_element_load(
    model: &ComposedModel,
    ctx: &OracleContext,
    t: usize,
) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut f = vec![0.0; ctx.tq.n_tile * d];
    let body = model.bcs().body_force;
    if model.bcs().has_body_force() {
        for s in &ctx.tq.spans {
            let na = s.nodes.len();
            for q in 0..s.n_points() {
                let b = body_extension(&state_at(model, t, &s.xi[q])?, &body);
                for (a, &ga) in s.nodes.iter().enumerate() {
                    let r = s.wdet[q] * s.values[q * na + a];
                    for k in 0..d {
                        f[ga * d + k] += r * b[k];
                    }
                }
            }
        }
    }
    for (face, tr) in element_traction_faces(model, t) {
        for fq in &ctx.tq.faces[face] {
            let na = fq.nodes.len();
            for q in 0..fq.wsurf.len() {
                let st = state_at(model, t, &fq.xi[q])?;
                let tb = traction_extension(&st, face, &fq.xi[q], &tr)?;
                for (a, &ga) in fq.nodes.iter().enumerate() {
                    let r = fq.wsurf[q] * fq.values[q * na + a];
                    for k in 0..d {
                        f[ga * d + k] += r * tb[k];
                    }
                }
            }
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OracleReport {
    /// Time computing the non-zero values.
    pub nz_time: f64,
    pub scatter: f64,
}

pub fn oracle_assemble(model: &ComposedModel) -> Result<(SparseOperator, OracleReport)> {
    let ctx = OracleContext::new(model)?;
    oracle_assemble_with(model, &ctx)
}

pub fn oracle_assemble_with(
    model: &ComposedModel,
    ctx: &OracleContext,
) -> Result<(SparseOperator, OracleReport)> {
    let d = model.dim();
    let dm = model.dof_map();
    let t0 = Instant::now();
    let mut k = BlockSymMatrix::from_elements(d, dm.n_global, &ctx.sparsity, &dm.global);
    let mut f = vec![0.0; model.n_dof()];
    let mut nz_time = 0.0;
    for t in 0..model.macro_geometry().n_elements() {
        let tn = Instant::now();
        let blocks = oracle_element_blocks(model, ctx, t)?;
        let fe = oracle_element_load(model, ctx, t)?;
        nz_time += tn.elapsed().as_secs_f64();
        k.scatter_element(&ctx.sparsity, &dm.global[t], &blocks, d * d);
        scatter_load(&mut f, &dm.global[t], &fe, d);
    }
    let scatter = t0.elapsed().as_secs_f64() - nz_time;
    Ok((SparseOperator { k, f }, OracleReport { nz_time, scatter }))
}

/// Displacement, its physical gradient and the Cauchy stress at one point.
#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub element: usize,
    pub x: [f64; 3],
    /// Quadrature weight times the physical volume factor.
    pub weight: f64,
    pub u: [f64; 3],
    /// `grad[k][m] = d u_k / d x_m`.
    pub grad: Mat3,
    pub stress: Mat3,
}

/// Fields of the global solution `u` at every oracle quadrature point.
pub fn oracle_fields(
    model: &ComposedModel,
    tq: &TileQuadrature,
    u: &[f64],
) -> Result<Vec<FieldSample>> {
    let d = model.dim();
    let dm = model.dof_map();
    let mut out = Vec::with_capacity(tq.n_points() * model.macro_geometry().n_elements());
    for t in 0..model.macro_geometry().n_elements() {
        let glob = &dm.global[t];
        for s in &tq.spans {
            let na = s.nodes.len();
            for q in 0..s.n_points() {
                let xi = s.xi[q];
                let ev = model.macro_geometry().elements()[t]
                    .patch
                    .eval(&xi[..d], 1)?;
                let st = MetricState::from_jacobian(d, &ev.jac)
                    .ok_or(Error::DegenerateMacro { element: t, xi })?;
                let mut uu = [0.0; 3];
                let mut du = [[0.0; 3]; 3];
                for (a, &ta) in s.nodes.iter().enumerate() {
                    let g = glob[ta];
                    let r = s.values[q * na + a];
                    let gr = s.grads[q * na + a];
                    for k in 0..d {
                        let v = u[g * d + k];
                        uu[k] += r * v;
                        for i in 0..d {
                            du[i][k] += gr[i] * v;
                        }
                    }
                }
                let mut grad = [[0.0; 3]; 3];
                for k in 0..d {
                    for m in 0..d {
                        grad[k][m] = (0..d).map(|i| du[i][k] * st.g_contra[i][m]).sum();
                    }
                }
                out.push(FieldSample {
                    element: t,
                    x: ev.position,
                    weight: s.wdet[q] * st.det_j,
                    u: uu,
                    grad,
                    stress: physical_stress(&st, model.material(), &du),
                });
            }
        }
    }
    Ok(out)
}
