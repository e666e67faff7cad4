//! L2 projection of macro fields onto per-element tensor Bernstein spaces,
//! projection errors and adaptive degree selection.

use crate::curvilinear::{n_packed, packed_layout, packed_macro_field, MetricState};
use crate::error::{Error, Result};
use crate::linalg::DenseCholesky;
use crate::model::{
    face_dir, face_side, on_macro_face, unflatten, ComposedModel, Material, ProjectionConfig,
};
use crate::quadrature::gauss_rule;
use crate::splines::{bernstein_1d, binomial, BezierElement, SplinePatch};

/// Highest projection degree tried by the adaptive selection.
pub const MAX_DEGREE: usize = 10;

/// Points per direction of the uniform part of the error sampling grid.
const SAMPLE_POINTS: usize = 6;

/// Contract mode `dir` of a tensor with `shape` (direction 0 fastest,
/// `ncomp` components innermost) with the row-major `m x shape[dir]` matrix.
pub fn contract_mode(
    data: &[f64],
    shape: [usize; 3],
    ncomp: usize,
    dir: usize,
    mat: &[f64],
    m: usize,
) -> Vec<f64> {
    let n = shape[dir];
    debug_assert_eq!(mat.len(), m * n);
    let before: usize = shape[..dir].iter().product::<usize>() * ncomp;
    let after: usize = shape[dir + 1..].iter().product();
    let mut out = vec![0.0; before * m * after];
    for b in 0..after {
        for r in 0..m {
            let dst = &mut out[(r + m * b) * before..(r + 1 + m * b) * before];
            for q in 0..n {
                let w = mat[r * n + q];
                if w == 0.0 {
                    continue;
                }
                let src = &data[(q + n * b) * before..(q + 1 + n * b) * before];
                for (x, y) in dst.iter_mut().zip(src) {
                    *x += w * y;
                }
            }
        }
    }
    out
}

/// Univariate Bernstein mass matrix, row-major.
pub fn mass_1d(p: usize) -> Vec<f64> {
    let mut m = vec![0.0; (p + 1) * (p + 1)];
    for i in 0..=p {
        for j in 0..=p {
            m[i * (p + 1) + j] =
                binomial(p, i) * binomial(p, j) / (binomial(2 * p, i + j) * (2 * p + 1) as f64);
        }
    }
    m
}

/// `Q_p`: tensor Bernstein polynomials of per-direction degrees on [0,1]^dim.
#[derive(Debug, Clone)]
pub struct BernsteinSpace {
    degrees: Vec<usize>,
    chol: Vec<DenseCholesky>,
}

impl BernsteinSpace {
    pub fn new(degrees: &[usize]) -> Result<Self> {
        if degrees.is_empty() || degrees.len() > 3 {
            return Err(Error::DimensionMismatch(format!(
                "Bernstein space of dimension {}",
                degrees.len()
            )));
        }
        let chol = degrees
            .iter()
            .map(|&p| {
                DenseCholesky::new(p + 1, &mass_1d(p)).ok_or_else(|| {
                    Error::Factorization(format!("Bernstein mass matrix of degree {p}"))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            degrees: degrees.to_vec(),
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn n(&self) -> usize {
        self.degrees.iter().map(|p| p + 1).product()
    }

    pub fn shape(&self) -> [usize; 3] {
        let mut s = [1; 3];
        for (k, p) in self.degrees.iter().enumerate() {
            s[k] = p + 1;
        }
        s
    }

    /// Multi-index of basis function `c`.
    pub fn multi(&self, c: usize) -> [usize; 3] {
        let s = self.shape();
        [c % s[0], (c / s[0]) % s[1], c / (s[0] * s[1])]
    }

    /// Full Kronecker mass matrix (tests and diagnostics).
    pub fn mass_matrix(&self) -> Vec<f64> {
        let n = self.n();
        let m1: Vec<Vec<f64>> = self.degrees.iter().map(|&p| mass_1d(p)).collect();
        let mut m = vec![0.0; n * n];
        for a in 0..n {
            let ma = self.multi(a);
            for b in 0..n {
                let mb = self.multi(b);
                m[a * n + b] = (0..self.dim())
                    .map(|k| m1[k][ma[k] * (self.degrees[k] + 1) + mb[k]])
                    .product();
            }
        }
        m
    }

    /// Solve `M x = b` in place for `ncomp` right-hand sides stored
    /// coefficient-major.
    pub fn solve_mass(&self, data: &mut [f64], ncomp: usize) {
        let shape = self.shape();
        let mut buf = Vec::new();
        for dir in 0..self.dim() {
            let n = shape[dir];
            let before: usize = shape[..dir].iter().product::<usize>() * ncomp;
            let after: usize = shape[dir + 1..].iter().product();
            buf.resize(n, 0.0);
            for b in 0..after {
                for a in 0..before {
                    for q in 0..n {
                        buf[q] = data[(q + n * b) * before + a];
                    }
                    self.chol[dir].solve_in_place(&mut buf);
                    for q in 0..n {
                        data[(q + n * b) * before + a] = buf[q];
                    }
                }
            }
        }
    }

    pub fn eval_basis(&self, xi: &[f64]) -> Vec<f64> {
        let uni: Vec<Vec<f64>> = self
            .degrees
            .iter()
            .zip(xi)
            .map(|(&p, &x)| bernstein_1d(p, x, 0).swap_remove(0))
            .collect();
        (0..self.n())
            .map(|c| {
                let m = self.multi(c);
                (0..self.dim()).map(|k| uni[k][m[k]]).product()
            })
            .collect()
    }

    /// Evaluate a field with coefficients `n x ncomp`.
    pub fn eval(&self, coeffs: &[f64], ncomp: usize, xi: &[f64]) -> Vec<f64> {
        let b = self.eval_basis(xi);
        let mut out = vec![0.0; ncomp];
        for (c, bc) in b.iter().enumerate() {
            for k in 0..ncomp {
                out[k] += bc * coeffs[c * ncomp + k];
            }
        }
        out
    }

    /// Indices of the basis functions not vanishing on cube face `f`.
    pub fn face_indices(&self, f: usize) -> Vec<usize> {
        let (dir, side) = (face_dir(f), face_side(f));
        let target = if side == 0 { 0 } else { self.degrees[dir] };
        (0..self.n())
            .filter(|&c| self.multi(c)[dir] == target)
            .collect()
    }

    /// Space of the traces on face `f` (one dimension less), ordered like
    /// `face_indices`.
    pub fn face_space(&self, f: usize) -> Result<BernsteinSpace> {
        let dir = face_dir(f);
        let deg: Vec<usize> = (0..self.dim())
            .filter(|&k| k != dir)
            .map(|k| self.degrees[k])
            .collect();
        if deg.is_empty() {
            return BernsteinSpace::new(&[0]);
        }
        BernsteinSpace::new(&deg)
    }

    /// Values on a tensor grid given by per-direction points.
    pub fn reconstruct_grid(&self, coeffs: &[f64], ncomp: usize, points: &[Vec<f64>]) -> Vec<f64> {
        let mut shape = self.shape();
        let mut data = coeffs.to_vec();
        for (dir, pts) in points.iter().enumerate().take(self.dim()) {
            let p = self.degrees[dir];
            let mut mat = vec![0.0; pts.len() * (p + 1)];
            for (q, &x) in pts.iter().enumerate() {
                let b = bernstein_1d(p, x, 0);
                mat[q * (p + 1)..(q + 1) * (p + 1)].copy_from_slice(&b[0]);
            }
            data = contract_mode(&data, shape, ncomp, dir, &mat, pts.len());
            shape[dir] = pts.len();
        }
        data
    }

    /// L2 projection of field samples given on the tensor Gauss grid `rules`
    /// (values point-major, `ncomp` per point).
    pub fn project_samples(
        &self,
        samples: &[f64],
        ncomp: usize,
        nodes: &[Vec<f64>],
        weights: &[Vec<f64>],
    ) -> Vec<f64> {
        let mut shape = [1; 3];
        for (k, n) in nodes.iter().enumerate() {
            shape[k] = n.len();
        }
        let mut data = samples.to_vec();
        for dir in 0..self.dim() {
            let p = self.degrees[dir];
            let nq = nodes[dir].len();
            let mut mat = vec![0.0; (p + 1) * nq];
            for q in 0..nq {
                let b = bernstein_1d(p, nodes[dir][q], 0);
                for c in 0..=p {
                    mat[c * nq + q] = weights[dir][q] * b[0][c];
                }
            }
            data = contract_mode(&data, shape, ncomp, dir, &mat, p + 1);
            shape[dir] = p + 1;
        }
        self.solve_mass(&mut data, ncomp);
        data
    }

    /// Project a field given pointwise, with `nq[k]` Gauss points per direction.
    pub fn project<F>(&self, nq: &[usize], ncomp: usize, mut field: F) -> Result<Vec<f64>>
    where
        F: FnMut(&[f64; 3], &mut [f64]) -> Result<()>,
    {
        let (nodes, weights) = gauss_grid(nq)?;
        let samples = sample_grid(&nodes, ncomp, &mut field)?;
        Ok(self.project_samples(&samples, ncomp, &nodes, &weights))
    }
}

fn gauss_grid(nq: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let rules = nq
        .iter()
        .map(|&n| gauss_rule(n))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        rules.iter().map(|r| r.nodes.clone()).collect(),
        rules.iter().map(|r| r.weights.clone()).collect(),
    ))
}

/// Evaluate `field` on a tensor grid, direction 0 fastest.
fn sample_grid<F>(nodes: &[Vec<f64>], ncomp: usize, field: &mut F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64; 3], &mut [f64]) -> Result<()>,
{
    let mut shape = [1; 3];
    for (k, n) in nodes.iter().enumerate() {
        shape[k] = n.len();
    }
    let total: usize = shape.iter().product();
    let mut out = vec![0.0; total * ncomp];
    for flat in 0..total {
        let m = [
            flat % shape[0],
            (flat / shape[0]) % shape[1],
            flat / (shape[0] * shape[1]),
        ];
        let mut xi = [0.0; 3];
        for k in 0..nodes.len() {
            xi[k] = nodes[k][m[k]];
        }
        field(&xi, &mut out[flat * ncomp..(flat + 1) * ncomp])?;
    }
    Ok(out)
}

/// Squared-norm weights of the packed stiffness scalars (off-diagonal
/// entries stand for two full-tensor entries).
pub fn packed_weights(d: usize) -> Vec<f64> {
    packed_layout(d)
        .into_iter()
        .map(|(i, j, k, l)| if i != j || k != l { 2.0 } else { 1.0 })
        .collect()
}

/// Max over points of `|A - PA|_F / |A|_F` for packed samples.
fn relative_frobenius_max(exact: &[f64], approx: &[f64], weights: &[f64]) -> f64 {
    let np = weights.len();
    exact
        .chunks(np)
        .zip(approx.chunks(np))
        .map(|(e, a)| {
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..np {
                num += weights[k] * (e[k] - a[k]).powi(2);
                den += weights[k] * e[k].powi(2);
            }
            if den > 0.0 {
                (num / den).sqrt()
            } else {
                num.sqrt()
            }
        })
        .fold(0.0, f64::max)
}

/// Projected fields of one element.
#[derive(Debug, Clone)]
pub struct ElementProjection {
    /// `n_pi x n_packed`.
    pub stiffness: Vec<f64>,
    /// `n_pi`.
    pub det_j: Vec<f64>,
    /// Per loaded face: projected macro surface measure on the face space.
    pub surface: Vec<(usize, Vec<f64>)>,
    pub error: Option<f64>,
}

/// Packed stiffness field and det J on a tensor grid, `n_packed + 1`
/// values per point.
fn sample_stiffness(
    patch: &SplinePatch,
    mat: &Material,
    element: usize,
    nodes: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let d = patch.dim();
    let np = n_packed(d);
    let (lambda, mu) = mat.lame();
    let jacs = patch.grid_jacobians(nodes)?;
    let mut out = vec![0.0; jacs.len() * (np + 1)];
    for (g, (jac, row)) in jacs.iter().zip(out.chunks_mut(np + 1)).enumerate() {
        let degenerate = || {
            let mut xi = [0.0; 3];
            let mut rem = g;
            for k in 0..d {
                xi[k] = nodes[k][rem % nodes[k].len()];
                rem /= nodes[k].len();
            }
            Error::DegenerateMacro { element, xi }
        };
        if crate::linalg::det(d, jac) <= 0.0 {
            return Err(degenerate());
        }
        let st = MetricState::from_jacobian(d, jac).ok_or_else(degenerate)?;
        packed_macro_field(&st, lambda, mu, &mut row[..np]);
        row[np] = st.det_j;
    }
    Ok(out)
}

/// Gauss points per direction for projecting onto `degrees` on a macro of
/// degrees `macro_degrees`.
pub fn projection_points(degrees: &[usize], macro_degrees: &[usize]) -> Vec<usize> {
    degrees
        .iter()
        .zip(macro_degrees)
        .map(|(&p, &q)| p.max(q) + 3)
        .collect()
}

/// Project the stiffness field, det J and the surface measures of
/// `faces` for one Bezier element.
pub fn project_element(
    element: usize,
    patch: &SplinePatch,
    mat: &Material,
    space: &BernsteinSpace,
    faces: &[usize],
    with_error: bool,
) -> Result<ElementProjection> {
    let d = patch.dim();
    let np = n_packed(d);
    let ncomp = np + 1;
    let nq = projection_points(space.degrees(), &patch.degrees());
    let (nodes, weights) = gauss_grid(&nq)?;
    let samples = sample_stiffness(patch, mat, element, &nodes)?;
    let coeffs = space.project_samples(&samples, ncomp, &nodes, &weights);
    let n = space.n();
    let mut stiffness = Vec::with_capacity(n * np);
    let mut det_j = Vec::with_capacity(n);
    for c in 0..n {
        stiffness.extend_from_slice(&coeffs[c * ncomp..c * ncomp + np]);
        det_j.push(coeffs[c * ncomp + np]);
    }
    let error = if with_error {
        let pw = packed_weights(d);
        let strip =
            |v: &[f64]| -> Vec<f64> { v.chunks(ncomp).flat_map(|c| c[..np].to_vec()).collect() };
        let mut e = relative_frobenius_max(
            &strip(&samples),
            &strip(&space.reconstruct_grid(&coeffs, ncomp, &nodes)),
            &pw,
        );
        let uniform: Vec<Vec<f64>> = (0..d)
            .map(|_| {
                (0..SAMPLE_POINTS)
                    .map(|i| i as f64 / (SAMPLE_POINTS - 1) as f64)
                    .collect()
            })
            .collect();
        let exact = sample_stiffness(patch, mat, element, &uniform)?;
        let approx = space.reconstruct_grid(&coeffs, ncomp, &uniform);
        e = e.max(relative_frobenius_max(&strip(&exact), &strip(&approx), &pw));
        Some(e)
    } else {
        None
    };
    let mut surface = Vec::with_capacity(faces.len());
    for &f in faces {
        let fspace = space.face_space(f)?;
        let dir = face_dir(f);
        let in_face: Vec<usize> = (0..d).filter(|&k| k != dir).collect();
        let fnq: Vec<usize> = in_face.iter().map(|&k| nq[k]).collect();
        let coeffs = fspace.project(&fnq, 1, |p, out| {
            let mut xi = [0.0; 3];
            xi[dir] = face_side(f) as f64;
            for (j, &k) in in_face.iter().enumerate() {
                xi[k] = p[j];
            }
            let ev = patch.eval(&xi[..d], 1)?;
            let st = MetricState::from_jacobian(d, &ev.jac)
                .ok_or(Error::DegenerateMacro { element, xi })?;
            out[0] = st.surface_measure(f);
            Ok(())
        })?;
        surface.push((f, coeffs));
    }
    Ok(ElementProjection {
        stiffness,
        det_j,
        surface,
        error,
    })
}

/// Bernstein coefficients of all macro fields, element-major.
#[derive(Debug, Clone)]
pub struct ProjectedMacroFields {
    pub dim: usize,
    pub degrees: Vec<usize>,
    pub n_pi: usize,
    pub n_packed: usize,
    /// `m_M x n_pi x n_packed`.
    pub stiffness: Vec<f64>,
    /// `m_M x n_pi`.
    pub det_j: Vec<f64>,
    /// `m_M x n_pi x d`, the extended body force.
    pub body: Vec<f64>,
    /// Per element: (face, extended traction `|I_F| x d`).
    pub tractions: Vec<Vec<(usize, Vec<f64>)>>,
    /// Per-element projection error, if computed.
    pub errors: Vec<f64>,
    pub e_proj: Option<f64>,
}

impl ProjectedMacroFields {
    pub fn element_stiffness(&self, t: usize) -> &[f64] {
        let s = self.n_pi * self.n_packed;
        &self.stiffness[t * s..(t + 1) * s]
    }

    pub fn element_det(&self, t: usize) -> &[f64] {
        &self.det_j[t * self.n_pi..(t + 1) * self.n_pi]
    }

    pub fn element_body(&self, t: usize) -> &[f64] {
        let s = self.n_pi * self.dim;
        &self.body[t * s..(t + 1) * s]
    }
}

/// Traction faces touching element `t`, with the summed traction vector.
pub fn element_traction_faces(model: &ComposedModel, t: usize) -> Vec<(usize, [f64; 3])> {
    let grid = model.macro_geometry().grid();
    let m = unflatten(t, grid, model.dim());
    let mut out: Vec<(usize, [f64; 3])> = Vec::new();
    for tr in &model.bcs().tractions {
        if !on_macro_face(m, grid, tr.face) {
            continue;
        }
        match out.iter_mut().find(|(f, _)| *f == tr.face) {
            Some((_, v)) => (0..3).for_each(|k| v[k] += tr.value[k]),
            None => out.push((tr.face, tr.value)),
        }
    }
    out
}

/// Assemble element-level results into the projected field container.
pub fn finish_element(
    out: &mut ProjectedMacroFields,
    body_force: &[f64; 3],
    traction_faces: &[(usize, [f64; 3])],
    ep: ElementProjection,
) {
    let d = out.dim;
    for &dj in &ep.det_j {
        out.body.extend((0..d).map(|k| body_force[k] * dj));
    }
    out.stiffness.extend_from_slice(&ep.stiffness);
    out.det_j.extend_from_slice(&ep.det_j);
    let tr = ep
        .surface
        .into_iter()
        .zip(traction_faces)
        .map(|((f, s), (_, t))| {
            (
                f,
                s.iter()
                    .flat_map(|&v| (0..d).map(move |k| t[k] * v))
                    .collect(),
            )
        })
        .collect();
    out.tractions.push(tr);
    if let Some(e) = ep.error {
        out.errors.push(e);
    }
}

/// Project all elements of `model` onto `space`.
pub fn project_model(
    model: &ComposedModel,
    space: &BernsteinSpace,
    with_error: bool,
) -> Result<ProjectedMacroFields> {
    let d = model.dim();
    let mut out = ProjectedMacroFields {
        dim: d,
        degrees: space.degrees().to_vec(),
        n_pi: space.n(),
        n_packed: n_packed(d),
        stiffness: Vec::new(),
        det_j: Vec::new(),
        body: Vec::new(),
        tractions: Vec::new(),
        errors: Vec::new(),
        e_proj: None,
    };
    for (t, el) in model.macro_geometry().elements().iter().enumerate() {
        let faces = element_traction_faces(model, t);
        let fidx: Vec<usize> = faces.iter().map(|f| f.0).collect();
        let ep = project_element(t, &el.patch, model.material(), space, &fidx, with_error)?;
        finish_element(&mut out, &model.bcs().body_force, &faces, ep);
    }
    if with_error {
        out.e_proj = Some(out.errors.iter().copied().fold(0.0, f64::max));
    }
    Ok(out)
}

/// Bernstein coefficients of `det J` alone, element-major.
pub fn project_det(model: &ComposedModel, space: &BernsteinSpace) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut out = Vec::with_capacity(model.macro_geometry().n_elements() * space.n());
    for (t, el) in model.macro_geometry().elements().iter().enumerate() {
        let nq = projection_points(space.degrees(), &el.patch.degrees());
        let (nodes, weights) = gauss_grid(&nq)?;
        let dets = el
            .patch
            .grid_jacobians(&nodes)?
            .iter()
            .map(|jac| crate::linalg::det(d, jac))
            .collect::<Vec<_>>();
        if let Some(g) = dets.iter().position(|&v| !(v > 0.0)) {
            let mut xi = [0.0; 3];
            let mut rem = g;
            for k in 0..d {
                xi[k] = nodes[k][rem % nq[k]];
                rem /= nq[k];
            }
            return Err(Error::DegenerateMacro { element: t, xi });
        }
        out.extend(space.project_samples(&dets, 1, &nodes, &weights));
    }
    Ok(out)
}

/// Max projection error over all elements at the given degrees.
pub fn projection_error(model: &ComposedModel, degrees: &[usize]) -> Result<f64> {
    let space = BernsteinSpace::new(degrees)?;
    model
        .macro_geometry()
        .elements()
        .iter()
        .enumerate()
        .map(|(t, el): (usize, &BezierElement)| {
            project_element(t, &el.patch, model.material(), &space, &[], true)
                .map(|p| p.error.unwrap_or(0.0))
        })
        .try_fold(0.0, |acc: f64, e| e.map(|e| acc.max(e)))
}

/// Outcome of the adaptive degree selection.
#[derive(Debug, Clone)]
pub struct DegreeSelection {
    pub degrees: Vec<usize>,
    pub e_proj: f64,
    /// Every visited degree tuple with its error.
    pub history: Vec<(Vec<usize>, f64)>,
}

/// Greedy per-direction degree increase from the macro degrees until the
/// projection error drops to `tol`.
pub fn select_degree(model: &ComposedModel, tol: f64) -> Result<DegreeSelection> {
    if !(tol > 0.0) {
        return Err(Error::InvalidModel(format!(
            "projection tolerance must be positive, got {tol}"
        )));
    }
    let mut degrees = model.macro_geometry().patch().degrees();
    let mut err = projection_error(model, &degrees)?;
    let mut history = vec![(degrees.clone(), err)];
    while err > tol {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for k in 0..degrees.len() {
            if degrees[k] >= MAX_DEGREE {
                continue;
            }
            let mut cand = degrees.clone();
            cand[k] += 1;
            let e = projection_error(model, &cand)?;
            history.push((cand.clone(), e));
            if best.as_ref().is_none_or(|b| e < b.1) {
                best = Some((cand, e));
            }
        }
        match best {
            Some((c, e)) => {
                degrees = c;
                err = e;
            }
            None => {
                return Err(Error::ProjectionNotConverged {
                    tol,
                    error: err,
                    degrees,
                })
            }
        }
    }
    Ok(DegreeSelection {
        degrees,
        e_proj: err,
        history,
    })
}

/// Degrees requested by the model configuration (running the adaptive
/// selection if needed) and the achieved error when known.
pub fn resolve_degrees(model: &ComposedModel) -> Result<(Vec<usize>, Option<f64>)> {
    match model.projection() {
        ProjectionConfig::Degrees(p) if p.len() == 1 => Ok((vec![p[0]; model.dim()], None)),
        ProjectionConfig::Degrees(p) => Ok((p.clone(), None)),
        ProjectionConfig::Tolerance(tol) => {
            select_degree(model, *tol).map(|s| (s.degrees, Some(s.e_proj)))
        }
    }
}
