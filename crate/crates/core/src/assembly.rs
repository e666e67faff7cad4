//! Fast formation of the stiffness matrix, load vector and volume by
//! contracting the tile lookup tables with projected macro coefficients.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::curvilinear::packed_layout;
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::lookup::{build_volume_table, load_or_build, LookupTables, TableSource};
use crate::model::ComposedModel;
use crate::projection::{
    project_det, project_model, projection_error, resolve_degrees, BernsteinSpace,
    ProjectedMacroFields,
};
use crate::sparse::BlockSymMatrix;

/// Assembled system `K u = f`.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub k: BlockSymMatrix,
    pub f: Vec<f64>,
}

/// Wall times in seconds.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimes {
    pub projection: f64,
    pub tables: f64,
    pub product: f64,
    pub scatter: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssemblyReport {
    pub n_dof: usize,
    pub n_nz_global: usize,
    pub p_proj: Vec<usize>,
    pub e_proj: Option<f64>,
    pub times: StageTimes,
    /// Time spent computing the non-zero values (projection and product).
    pub nz_time: f64,
    pub volume: f64,
    pub tables_from_cache: bool,
}

#[derive(Debug, Clone)]
pub struct AssemblyConfig {
    pub cache_dir: Option<PathBuf>,
    /// Elements per matrix product.
    pub block_size: usize,
    /// Estimate the projection error when degrees are given explicitly.
    pub estimate_error: bool,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            cache_dir: None,
            block_size: 32,
            estimate_error: false,
        }
    }
}

/// Everything the fast path computed, reusable by solvers and gradients.
#[derive(Debug, Clone)]
pub struct FastAssembly {
    pub operator: SparseOperator,
    pub report: AssemblyReport,
    pub space: BernsteinSpace,
    pub tables: LookupTables,
    pub projected: ProjectedMacroFields,
}

/// For every full index `((i * d + j) * d + k) * d + l`, the packed index of
/// the same scalar of the symmetric macro field.
pub fn full_to_packed(d: usize) -> Vec<usize> {
    let layout = packed_layout(d);
    let pos = |i: usize, j: usize, k: usize, l: usize| {
        layout.iter().position(|&e| e == (i, j, k, l)).unwrap()
    };
    let mut out = Vec::with_capacity(d * d * d * d);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    out.push(match i.cmp(&j) {
                        std::cmp::Ordering::Less => pos(i, j, k, l),
                        std::cmp::Ordering::Greater => pos(j, i, l, k),
                        std::cmp::Ordering::Equal => pos(i, i, k.min(l), k.max(l)),
                    });
                }
            }
        }
    }
    out
}

fn check_compatible(tables: &LookupTables, projected: &ProjectedMacroFields) -> Result<()> {
    if tables.dim != projected.dim
        || tables.n_pi != projected.n_pi
        || tables.degrees() != projected.degrees.as_slice()
    {
        return Err(Error::DimensionMismatch(format!(
            "tables built for degrees {:?} but fields projected at {:?}",
            tables.degrees(),
            projected.degrees
        )));
    }
    Ok(())
}

/// Matricized macro coefficients of elements `elems`: rows `(C, i, j)`,
/// columns `(element, k, l)`.
pub fn macro_matrix(
    projected: &ProjectedMacroFields,
    elems: std::ops::Range<usize>,
    map: &[usize],
) -> Vec<f64> {
    let d = projected.dim;
    let dd = d * d;
    let ncols = elems.len() * dd;
    let mut m = vec![0.0; projected.n_pi * dd * ncols];
    for (e, t) in elems.enumerate() {
        let coeffs = projected.element_stiffness(t);
        for c in 0..projected.n_pi {
            let src = &coeffs[c * projected.n_packed..(c + 1) * projected.n_packed];
            for ij in 0..dd {
                let row = &mut m
                    [((c * dd) + ij) * ncols + e * dd..((c * dd) + ij) * ncols + (e + 1) * dd];
                for (kl, v) in row.iter_mut().enumerate() {
                    *v = src[map[ij * dd + kl]];
                }
            }
        }
    }
    m
}

/// Pair blocks of elements `elems`: `n_nz x (len * d^2)`.
pub fn fast_element_blocks(
    tables: &LookupTables,
    projected: &ProjectedMacroFields,
    elems: std::ops::Range<usize>,
    map: &[usize],
) -> Vec<f64> {
    let dd = tables.dim * tables.dim;
    let n = elems.len() * dd;
    let rhs = macro_matrix(projected, elems, map);
    let mut out = vec![0.0; tables.n_nz() * n];
    gemm(
        &mut out,
        &tables.stiffness,
        &rhs,
        tables.n_nz(),
        tables.stiffness_cols(),
        n,
        false,
    );
    out
}

/// Element load `n_T x d` from projected body force and tractions.
pub fn fast_element_load(
    tables: &LookupTables,
    space: &BernsteinSpace,
    projected: &ProjectedMacroFields,
    t: usize,
) -> Vec<f64> {
    let d = tables.dim;
    let n_pi = tables.n_pi;
    let slots = tables.load_slots();
    let mut f = vec![0.0; tables.n_tile * d];
    let body = projected.element_body(t);
    let has_body = body.iter().any(|&v| v != 0.0);
    let faces: Vec<(usize, Vec<usize>, &Vec<f64>)> = projected.tractions[t]
        .iter()
        .map(|(face, coeffs)| (*face, space.face_indices(*face), coeffs))
        .collect();
    if !has_body && faces.is_empty() {
        return f;
    }
    for a in 0..tables.n_tile {
        let row = &tables.load[a * n_pi * slots..(a + 1) * n_pi * slots];
        for k in 0..d {
            let mut s = 0.0;
            if has_body {
                for c in 0..n_pi {
                    s += body[c * d + k] * row[c * slots];
                }
            }
            for (face, idx, coeffs) in &faces {
                for (j, &c) in idx.iter().enumerate() {
                    s += coeffs[j * d + k] * row[c * slots + 1 + face];
                }
            }
            f[a * d + k] = s;
        }
    }
    f
}

/// Per-element volumes `t^h . d^(t)` and their sum.
pub fn assemble_volume(
    tables: &LookupTables,
    projected: &ProjectedMacroFields,
) -> Result<(f64, Vec<f64>)> {
    check_compatible(tables, projected)?;
    let n = projected.det_j.len() / projected.n_pi;
    let per: Vec<f64> = (0..n)
        .map(|t| {
            tables
                .volume
                .iter()
                .zip(projected.element_det(t))
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    Ok((per.iter().sum(), per))
}

/// Same volume through the folded moments and the raw projection
/// right-hand sides (`M d = r`).
pub fn volume_folded(
    tables: &LookupTables,
    space: &BernsteinSpace,
    projected: &ProjectedMacroFields,
) -> f64 {
    let n = projected.det_j.len() / projected.n_pi;
    let m = space.mass_matrix();
    let np = projected.n_pi;
    (0..n)
        .map(|t| {
            let dt = projected.element_det(t);
            (0..np)
                .map(|a| {
                    tables.volume_folded[a] * (0..np).map(|b| m[a * np + b] * dt[b]).sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Empty global matrix with the model's node pattern.
pub fn global_pattern(model: &ComposedModel, tables: &LookupTables) -> BlockSymMatrix {
    let dm = model.dof_map();
    BlockSymMatrix::from_elements(model.dim(), dm.n_global, &tables.sparsity, &dm.global)
}

/// Scatter an element load into the global vector.
pub fn scatter_load(f: &mut [f64], global: &[usize], fe: &[f64], d: usize) {
    for (a, &g) in global.iter().enumerate() {
        for k in 0..d {
            f[g * d + k] += fe[a * d + k];
        }
    }
}

/// Stiffness and load from precomputed tables and projections. Returns the
/// product and scatter times.
pub fn assemble_fast(
    model: &ComposedModel,
    tables: &LookupTables,
    space: &BernsteinSpace,
    projected: &ProjectedMacroFields,
    block_size: usize,
) -> Result<(SparseOperator, f64, f64)> {
    check_compatible(tables, projected)?;
    if tables.n_tile != model.dof_map().n_tile || tables.dim != model.dim() {
        return Err(Error::DimensionMismatch(
            "tables do not belong to the model's tile".into(),
        ));
    }
    let d = model.dim();
    let dd = d * d;
    let map = full_to_packed(d);
    let t0 = Instant::now();
    let mut k = global_pattern(model, tables);
    let mut f = vec![0.0; model.n_dof()];
    let mut product = 0.0;
    let n_el = model.macro_geometry().n_elements();
    let global = &model.dof_map().global;
    let bs = block_size.max(1);
    let mut start = 0;
    while start < n_el {
        let end = (start + bs).min(n_el);
        let tp = Instant::now();
        let blocks = fast_element_blocks(tables, projected, start..end, &map);
        let loads: Vec<Vec<f64>> = (start..end)
            .map(|t| fast_element_load(tables, space, projected, t))
            .collect();
        product += tp.elapsed().as_secs_f64();
        let stride = (end - start) * dd;
        for (e, t) in (start..end).enumerate() {
            k.scatter_element(&tables.sparsity, &global[t], &blocks[e * dd..], stride);
            scatter_load(&mut f, &global[t], &loads[e], d);
        }
        start = end;
    }
    let scatter = t0.elapsed().as_secs_f64() - product;
    Ok((SparseOperator { k, f }, product, scatter))
}

/// Degrees, tables and projections for the fast path, with stage timings.
pub fn prepare(
    model: &ComposedModel,
    config: &AssemblyConfig,
) -> Result<(
    BernsteinSpace,
    LookupTables,
    ProjectedMacroFields,
    StageTimes,
    TableSource,
)> {
    let mut times = StageTimes::default();
    let t0 = Instant::now();
    let (degrees, selected_error) = resolve_degrees(model)?;
    let space = BernsteinSpace::new(&degrees)?;
    let estimate = selected_error.is_none() && config.estimate_error;
    let mut projected = project_model(model, &space, estimate)?;
    if selected_error.is_some() {
        projected.e_proj = selected_error;
    }
    times.projection = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (tables, source) = load_or_build(model, &space, config.cache_dir.as_deref())?;
    times.tables = t1.elapsed().as_secs_f64();
    Ok((space, tables, projected, times, source))
}

/// Projection, tables, product and scatter.
pub fn assemble_all(model: &ComposedModel, config: &AssemblyConfig) -> Result<FastAssembly> {
    let (space, tables, projected, mut times, source) = prepare(model, config)?;
    let (operator, product, scatter) =
        assemble_fast(model, &tables, &space, &projected, config.block_size)?;
    times.product = product;
    times.scatter = scatter;
    let (volume, _) = assemble_volume(&tables, &projected)?;
    let report = AssemblyReport {
        n_dof: model.n_dof(),
        n_nz_global: operator.k.n_nz_scalar(),
        p_proj: space.degrees().to_vec(),
        e_proj: projected.e_proj,
        nz_time: times.projection + times.product,
        times,
        volume,
        tables_from_cache: source == TableSource::Cache,
    };
    Ok(FastAssembly {
        operator,
        report,
        space,
        tables,
        projected,
    })
}

/// Fast volume only: projects `det J` and contracts it with the tile volume
/// moments. Returns the volume, the per-element values, the degrees and the
/// projection error when known.
pub fn fast_volume(
    model: &ComposedModel,
    config: &AssemblyConfig,
) -> Result<(f64, Vec<f64>, Vec<usize>, Option<f64>)> {
    let (degrees, mut e_proj) = resolve_degrees(model)?;
    let space = BernsteinSpace::new(&degrees)?;
    if e_proj.is_none() && config.estimate_error {
        e_proj = Some(projection_error(model, &degrees)?);
    }
    let (volume, _) = build_volume_table(&model.tile_quadrature()?, &space);
    let dets = project_det(model, &space)?;
    let per: Vec<f64> = dets
        .chunks(space.n())
        .map(|c| volume.iter().zip(c).map(|(a, b)| a * b).sum())
        .collect();
    Ok((per.iter().sum(), per, degrees, e_proj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{box_macro, cantilever_bcs, cross_tile, model, solid_tile};
    use crate::model::{BoundaryConditions, ProjectionConfig};

    #[test]
    fn full_map_round_trips_symmetry() {
        for d in [2, 3] {
            let map = full_to_packed(d);
            let n = crate::curvilinear::n_packed(d);
            assert!(map.iter().all(|&p| p < n));
            let mut hit = vec![false; n];
            map.iter().for_each(|&p| hit[p] = true);
            assert!(hit.iter().all(|&h| h));
        }
    }

    #[test]
    fn identity_volume_and_cube_volume() {
        let m = model(
            solid_tile(3, 1, 1).unwrap(),
            box_macro(3, [1.0; 3], 1, [1; 3]).unwrap(),
            BoundaryConditions::default(),
            ProjectionConfig::Degrees(vec![0]),
        )
        .unwrap();
        let (v, _, _, _) = fast_volume(&m, &AssemblyConfig::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        let m = model(
            solid_tile(3, 2, 1).unwrap(),
            box_macro(3, [2.0; 3], 1, [2, 2, 1]).unwrap(),
            BoundaryConditions::default(),
            ProjectionConfig::Tolerance(1e-3),
        )
        .unwrap();
        let (v, per, _, _) = fast_volume(&m, &AssemblyConfig::default()).unwrap();
        assert!((v - 8.0).abs() < 1e-13);
        assert_eq!(per.len(), 4);
    }

    #[test]
    fn folded_route_matches() {
        let m = model(
            cross_tile(2, 2, 1, 0.2, 0.2).unwrap(),
            crate::generators::distorted_macro(2, 1.0, 0.1, 2, [2, 2, 1]).unwrap(),
            BoundaryConditions::default(),
            ProjectionConfig::Degrees(vec![3, 3]),
        )
        .unwrap();
        let (space, tables, projected, _, _) = prepare(&m, &AssemblyConfig::default()).unwrap();
        let (v, _) = assemble_volume(&tables, &projected).unwrap();
        assert!((volume_folded(&tables, &space, &projected) - v).abs() < 1e-13 * v);
    }

    #[test]
    fn unit_body_force_sums_to_volume() {
        let bcs = BoundaryConditions {
            body_force: [1.0, 0.0, 0.0],
            ..Default::default()
        };
        let m = model(
            solid_tile(3, 1, 1).unwrap(),
            box_macro(3, [1.0; 3], 1, [1; 3]).unwrap(),
            bcs,
            ProjectionConfig::Degrees(vec![0]),
        )
        .unwrap();
        let fa = assemble_all(&m, &AssemblyConfig::default()).unwrap();
        let sx: f64 = fa.operator.f.iter().step_by(3).sum();
        let sy: f64 = fa.operator.f.iter().skip(1).step_by(3).sum();
        assert!((sx - 1.0).abs() < 1e-14 && sy.abs() < 1e-15);
    }

    #[test]
    fn zero_loads_and_translation_kernel() {
        let m = model(
            cross_tile(3, 2, 1, 0.2, 0.1).unwrap(),
            crate::generators::distorted_macro(3, 1.0, 0.05, 2, [2, 1, 1]).unwrap(),
            BoundaryConditions::default(),
            ProjectionConfig::Degrees(vec![2]),
        )
        .unwrap();
        let fa = assemble_all(
            &m,
            &AssemblyConfig {
                block_size: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fa.operator.f.iter().all(|&v| v == 0.0));
        let k = &fa.operator.k;
        for c in 0..3 {
            let x: Vec<f64> = (0..k.n_dof())
                .map(|i| if i % 3 == c { 1.0 } else { 0.0 })
                .collect();
            let mut y = vec![0.0; k.n_dof()];
            k.matvec(&x, &mut y);
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r < 1e-10 * k.frobenius(), "{r}");
        }
        let fb = assemble_all(
            &m,
            &AssemblyConfig {
                block_size: 7,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fb.operator.k.frobenius_diff(k) < 1e-14 * k.frobenius());
    }

    #[test]
    fn mismatched_tables_are_rejected() {
        let m = model(
            solid_tile(2, 1, 1).unwrap(),
            box_macro(2, [1.0; 3], 1, [1; 3]).unwrap(),
            cantilever_bcs(2, [0.0, -1.0, 0.0]),
            ProjectionConfig::Degrees(vec![1]),
        )
        .unwrap();
        let (space, tables, _, _, _) = prepare(&m, &AssemblyConfig::default()).unwrap();
        let other = project_model(&m, &BernsteinSpace::new(&[2, 2]).unwrap(), false).unwrap();
        assert!(matches!(
            assemble_fast(&m, &tables, &space, &other, 4),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
