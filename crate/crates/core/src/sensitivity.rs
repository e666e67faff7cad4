//! Volume and compliance gradients with respect to the macro control-point
//! coordinates, plus finite-difference checks.

use serde::Serialize;

use crate::assembly::{assemble_all, full_to_packed, AssemblyConfig, FastAssembly};
use crate::error::{Error, Result};
use crate::linalg::{det, gemm, inverse};
use crate::lookup::LookupTables;
use crate::model::{ComposedModel, ProjectionConfig};
use crate::projection::{
    element_traction_faces, project_element, projection_points, BernsteinSpace,
};
use crate::quadrature::{gauss_rule, tensor_points};
use crate::solve::{compliance, solve_assembled, SolveOptions};

/// Gradient laid out as `n_M x d` (control point major).
pub type Gradient = Vec<f64>;

/// For each macro control point, the `(element, element coefficient,
/// derivative factor)` triples it influences.
pub fn control_point_support(model: &ComposedModel) -> Vec<Vec<(usize, usize, f64)>> {
    let mut out = vec![Vec::new(); model.macro_geometry().patch().n_points()];
    for (t, el) in model.macro_geometry().elements().iter().enumerate() {
        for (b, row) in el.extraction.iter().enumerate() {
            for &(a, c) in row {
                if c != 0.0 {
                    out[a].push((t, b, c));
                }
            }
        }
    }
    out
}

/// Pull an element-coefficient gradient back to the patch control points.
fn chain_to_patch(model: &ComposedModel, t: usize, elem_grad: &[f64], grad: &mut [f64]) {
    let d = model.dim();
    for (b, row) in model.macro_geometry().elements()[t]
        .extraction
        .iter()
        .enumerate()
    {
        for &(a, c) in row {
            for k in 0..d {
                grad[a * d + k] += c * elem_grad[b * d + k];
            }
        }
    }
}

/// Derivative of the fast volume: quadrature of the volume adjoint field
/// times the derivative of `|det J|`. `volume_folded` holds the tile volume
/// moments premultiplied by the inverse mass matrix.
pub fn grad_volume(
    model: &ComposedModel,
    volume_folded: &[f64],
    space: &BernsteinSpace,
) -> Result<Gradient> {
    let d = model.dim();
    let geo = model.macro_geometry();
    let mut grad = vec![0.0; geo.patch().n_points() * d];
    for (t, el) in geo.elements().iter().enumerate() {
        let nq = projection_points(space.degrees(), &el.patch.degrees());
        let rules = nq
            .iter()
            .map(|&n| gauss_rule(n))
            .collect::<Result<Vec<_>>>()?;
        let (pts, wts) = tensor_points(&rules);
        let mut eg = vec![0.0; el.patch.n_points() * d];
        for (xi, w) in pts.iter().zip(&wts) {
            let vf: f64 = space
                .eval_basis(&xi[..d])
                .iter()
                .zip(volume_folded)
                .map(|(n, v)| n * v)
                .sum();
            let ev = el.patch.eval(&xi[..d], 1)?;
            let dj = det(d, &ev.jac);
            let inv = inverse(d, &ev.jac).ok_or(Error::DegenerateMacro {
                element: t,
                xi: *xi,
            })?;
            let basis = el.patch.basis(&xi[..d])?;
            for (&b, g) in basis.indices.iter().zip(&basis.grads) {
                for k in 0..d {
                    let s: f64 = (0..d).map(|j| inv[j][k] * g[j]).sum();
                    eg[b * d + k] += w * vf * dj.abs() * s;
                }
            }
        }
        chain_to_patch(model, t, &eg, &mut grad);
    }
    Ok(grad)
}

/// Compliance adjoint of one element: raw moments `sum u_A u_B K(A,B,C,i,j)`
/// and the coefficients after the mass solve, both `n_pi x d^4` ordered
/// `(C, i, j, k, l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointField {
    pub moments: Vec<f64>,
    pub coeffs: Vec<f64>,
}

pub fn adjoint_compliance(
    model: &ComposedModel,
    tables: &LookupTables,
    space: &BernsteinSpace,
    u: &[f64],
) -> Vec<AdjointField> {
    let d = model.dim();
    let dd = d * d;
    let n_pi = tables.n_pi;
    let pairs = tables.sparsity.pairs();
    let mut out = Vec::with_capacity(model.macro_geometry().n_elements());
    for glob in &model.dof_map().global {
        // half weight on diagonal pairs, symmetrized below
        let mut uu = vec![0.0; pairs.len() * dd];
        for (nz, &(a, b)) in pairs.iter().enumerate() {
            let (ga, gb) = (glob[a as usize], glob[b as usize]);
            let s = if a == b { 0.5 } else { 1.0 };
            for k in 0..d {
                for l in 0..d {
                    uu[nz * dd + k * d + l] = s * u[ga * d + k] * u[gb * d + l];
                }
            }
        }
        let mut half = vec![0.0; n_pi * dd * dd];
        // (C, i, j) x (k, l) = K^T uu
        let kt = transpose(&tables.stiffness, pairs.len(), tables.stiffness_cols());
        gemm(
            &mut half,
            &kt,
            &uu,
            tables.stiffness_cols(),
            pairs.len(),
            dd,
            false,
        );
        let mut moments = vec![0.0; half.len()];
        for c in 0..n_pi {
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            let idx = |i: usize, j: usize, k: usize, l: usize| {
                                (((c * d + i) * d + j) * d + k) * d + l
                            };
                            moments[idx(i, j, k, l)] =
                                half[idx(i, j, k, l)] + half[idx(j, i, l, k)];
                        }
                    }
                }
            }
        }
        let mut coeffs = moments.clone();
        space.solve_mass(&mut coeffs, dd * dd);
        out.push(AdjointField { moments, coeffs });
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Fold full-index moments onto the packed field storage.
fn pack_moments(d: usize, n_pi: usize, moments: &[f64]) -> Vec<f64> {
    let map = full_to_packed(d);
    let np = crate::curvilinear::n_packed(d);
    let d4 = map.len();
    let mut out = vec![0.0; n_pi * np];
    for c in 0..n_pi {
        for (f, &p) in map.iter().enumerate() {
            out[c * np + p] += moments[c * d4 + f];
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct GradientOptions {
    /// Drop the load-variation term.
    pub fixed_load_support: bool,
    /// Relative perturbation (times the control-net bounding-box diagonal).
    pub relative_step: Option<f64>,
}

/// Bounding-box diagonal of the macro control net.
pub fn control_net_diagonal(model: &ComposedModel) -> f64 {
    let d = model.dim();
    let pts = model.macro_geometry().patch().points();
    (0..d)
        .map(|k| {
            let it = pts.iter().skip(k).step_by(d);
            let lo = it.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = it.copied().fold(f64::NEG_INFINITY, f64::max);
            (hi - lo).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Compliance gradient from the solved state `u`, with macro-field
/// derivatives by central differences of the projected coefficients.
pub fn grad_compliance(
    model: &ComposedModel,
    fast: &FastAssembly,
    u: &[f64],
    options: &GradientOptions,
) -> Result<Gradient> {
    if model.bcs().dirichlet.iter().any(|b| !b.is_homogeneous()) {
        return Err(Error::UnsupportedLoad(
            "compliance gradient requires homogeneous Dirichlet data".into(),
        ));
    }
    let d = model.dim();
    let tables = &fast.tables;
    let space = &fast.space;
    let n_pi = tables.n_pi;
    let np = crate::curvilinear::n_packed(d);
    let slots = tables.load_slots();
    let geo = model.macro_geometry();
    let adj = adjoint_compliance(model, tables, space, u);
    let packed: Vec<Vec<f64>> = adj
        .iter()
        .map(|a| pack_moments(d, n_pi, &a.moments))
        .collect();
    let body = model.bcs().body_force;
    let with_loads = !options.fixed_load_support;
    // u . dF/dcoeff per element: body (n_pi x d) and per traction face
    let load_adj: Vec<(Vec<f64>, Vec<Vec<f64>>)> = model
        .dof_map()
        .global
        .iter()
        .enumerate()
        .map(|(t, glob)| {
            let mut lb = vec![0.0; n_pi * d];
            let faces = element_traction_faces(model, t);
            let mut lt: Vec<Vec<f64>> = faces.iter().map(|_| vec![0.0; n_pi * d]).collect();
            for (a, &g) in glob.iter().enumerate() {
                for c in 0..n_pi {
                    let row = &tables.load[(a * n_pi + c) * slots..(a * n_pi + c + 1) * slots];
                    for k in 0..d {
                        lb[c * d + k] += u[g * d + k] * row[0];
                        for (fi, (f, _)) in faces.iter().enumerate() {
                            lt[fi][c * d + k] += u[g * d + k] * row[1 + f];
                        }
                    }
                }
            }
            (lb, lt)
        })
        .collect();
    let step = options.relative_step.unwrap_or(1e-6) * control_net_diagonal(model);
    let support = control_point_support(model);
    let mut grad = vec![0.0; geo.patch().n_points() * d];
    for (a, sup) in support.iter().enumerate() {
        let mut elems: Vec<usize> = sup.iter().map(|s| s.0).collect();
        elems.dedup();
        for t in elems {
            let el = &geo.elements()[t];
            let faces = element_traction_faces(model, t);
            let fidx: Vec<usize> = faces.iter().map(|f| f.0).collect();
            for k in 0..d {
                let perturbed = |sign: f64| -> Result<_> {
                    let mut pts = el.patch.points().to_vec();
                    for &(_, b, c) in sup.iter().filter(|s| s.0 == t) {
                        pts[b * d + k] += sign * step * c;
                    }
                    project_element(
                        t,
                        &el.patch.with_points(pts)?,
                        model.material(),
                        space,
                        &fidx,
                        false,
                    )
                };
                let (p, m) = (perturbed(1.0)?, perturbed(-1.0)?);
                let inv2h = 0.5 / step;
                let mut g = 0.0;
                for (i, (x, y)) in p.stiffness.iter().zip(&m.stiffness).enumerate() {
                    g -= 0.5 * packed[t][i] * (x - y) * inv2h;
                }
                if with_loads {
                    let (lb, lt) = &load_adj[t];
                    for c in 0..n_pi {
                        let dd = (p.det_j[c] - m.det_j[c]) * inv2h;
                        for kk in 0..d {
                            g += lb[c * d + kk] * body[kk] * dd;
                        }
                    }
                    for (fi, (f, tr)) in faces.iter().enumerate() {
                        let idx = space.face_indices(*f);
                        let (sp, sm) = (&p.surface[fi].1, &m.surface[fi].1);
                        for (j, &c) in idx.iter().enumerate() {
                            let ds = (sp[j] - sm[j]) * inv2h;
                            for kk in 0..d {
                                g += lt[fi][c * d + kk] * tr[kk] * ds;
                            }
                        }
                    }
                }
                debug_assert_eq!(np * n_pi, p.stiffness.len());
                grad[a * d + k] += g;
            }
        }
    }
    Ok(grad)
}

/// Model with fixed projection degrees, so perturbed designs reuse one space.
pub fn pin_degrees(model: &ComposedModel, degrees: &[usize]) -> ComposedModel {
    model.with_projection(ProjectionConfig::Degrees(degrees.to_vec()))
}

/// Fast-path compliance after a direct solve.
pub fn compliance_of(model: &ComposedModel) -> Result<f64> {
    let fa = assemble_all(model, &AssemblyConfig::default())?;
    let s = solve_assembled(model, &fa.operator, &SolveOptions::default())?;
    Ok(compliance(&fa.operator.f, &s.u))
}

pub fn volume_of(model: &ComposedModel) -> Result<f64> {
    Ok(crate::assembly::fast_volume(model, &AssemblyConfig::default())?.0)
}

/// Central differences of `qoi` with respect to coordinate `k` of control
/// point `a`, for every `(a, k)` in `vars`.
pub fn fd_gradient<F>(
    model: &ComposedModel,
    qoi: F,
    vars: &[(usize, usize)],
    step: f64,
) -> Result<Vec<f64>>
where
    F: Fn(&ComposedModel) -> Result<f64>,
{
    let d = model.dim();
    let base = model.macro_geometry().patch().points().to_vec();
    vars.iter()
        .map(|&(a, k)| {
            let mut p = base.clone();
            p[a * d + k] += step;
            let fp = qoi(&model.with_macro_points(p.clone())?)?;
            p[a * d + k] -= 2.0 * step;
            let fm = qoi(&model.with_macro_points(p)?)?;
            Ok((fp - fm) / (2.0 * step))
        })
        .collect()
}

/// Relative vector error `|a - b| / |b|`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    crate::metrics::relative_l2(b, a)
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub qoi: String,
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub best_error: f64,
    pub n_vars: usize,
}

/// Compare `grad` with central differences over `vars` at several steps
/// (relative to the control-net diagonal).
pub fn fd_check<F>(
    model: &ComposedModel,
    qoi_name: &str,
    qoi: F,
    grad: &[f64],
    vars: &[(usize, usize)],
    rel_steps: &[f64],
) -> Result<FdReport>
where
    F: Fn(&ComposedModel) -> Result<f64>,
{
    let d = model.dim();
    let diag = control_net_diagonal(model);
    let analytic: Vec<f64> = vars.iter().map(|&(a, k)| grad[a * d + k]).collect();
    let mut errors = Vec::new();
    for &s in rel_steps {
        let fd = fd_gradient(model, &qoi, vars, s * diag)?;
        errors.push(relative_error(&analytic, &fd));
    }
    let best_error = errors.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FdReport {
        qoi: qoi_name.to_string(),
        steps: rel_steps.to_vec(),
        errors,
        best_error,
        n_vars: vars.len(),
    })
}

/// All `(control point, direction)` pairs.
pub fn all_variables(model: &ComposedModel) -> Vec<(usize, usize)> {
    let d = model.dim();
    (0..model.macro_geometry().patch().n_points())
        .flat_map(|a| (0..d).map(move |k| (a, k)))
        .collect()
}

/// Gradient as CSV, one row per control-point coordinate.
pub fn write_gradient_csv<W: std::io::Write>(mut w: W, grad: &[f64], d: usize) -> Result<()> {
    writeln!(w, "control_point,direction,value")?;
    for (i, g) in grad.iter().enumerate() {
        writeln!(w, "{},{},{:.16e}", i / d, i % d, g)?;
    }
    Ok(())
}
