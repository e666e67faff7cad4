//! Dirichlet elimination, direct and conjugate-gradient solves, the
//! matrix-free operator and solution post-processing.

use std::cell::Cell;
use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Side};

use crate::assembly::{full_to_packed, macro_matrix, SparseOperator};
use crate::curvilinear::{physical_stress, von_mises, MetricState};
use crate::error::{Error, Result};
use crate::linalg::{gemm, inverse};
use crate::lookup::LookupTables;
use crate::model::ComposedModel;
use crate::projection::ProjectedMacroFields;
use crate::sparse::BlockSymMatrix;

/// Symmetric operator on the global DOF vector.
pub trait LinearOperator {
    fn n(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for BlockSymMatrix {
    fn n(&self) -> usize {
        self.n_dof()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        BlockSymMatrix::diagonal(self)
    }
}

/// `K x` computed element by element from the tables and the projected
/// coefficients, never storing `K`.
pub struct MatrixFreeOperator<'a> {
    model: &'a ComposedModel,
    tables: &'a LookupTables,
    projected: &'a ProjectedMacroFields,
    map: Vec<usize>,
    peak_bytes: Cell<usize>,
}

impl<'a> MatrixFreeOperator<'a> {
    pub fn new(
        model: &'a ComposedModel,
        tables: &'a LookupTables,
        projected: &'a ProjectedMacroFields,
    ) -> Result<Self> {
        if tables.degrees() != projected.degrees.as_slice()
            || tables.n_tile != model.dof_map().n_tile
        {
            return Err(Error::DimensionMismatch(
                "matrix-free operator: tables and projection disagree".into(),
            ));
        }
        Ok(Self {
            model,
            tables,
            projected,
            map: full_to_packed(model.dim()),
            peak_bytes: Cell::new(0),
        })
    }

    /// Bytes of the largest set of work buffers held during one apply.
    pub fn peak_work_bytes(&self) -> usize {
        self.peak_bytes.get()
    }

    /// Size of the work buffers for a single element block.
    pub fn element_block_bytes(&self) -> usize {
        let d = self.model.dim();
        let dd = d * d;
        8 * (self.tables.n_nz() * dd + self.tables.n_pi * dd * dd + 2 * self.tables.n_tile * d)
    }

    fn for_each_element(&self, mut f: impl FnMut(usize, &[f64], &mut Vec<f64>, &mut Vec<f64>)) {
        let d = self.model.dim();
        let dd = d * d;
        let nt = self.tables.n_tile;
        let mut blocks = vec![0.0; self.tables.n_nz() * dd];
        let mut local_x = vec![0.0; nt * d];
        let mut local_y = vec![0.0; nt * d];
        for t in 0..self.model.macro_geometry().n_elements() {
            let rhs = macro_matrix(self.projected, t..t + 1, &self.map);
            gemm(
                &mut blocks,
                &self.tables.stiffness,
                &rhs,
                self.tables.n_nz(),
                self.tables.stiffness_cols(),
                dd,
                false,
            );
            let bytes =
                8 * (blocks.capacity() + rhs.capacity() + local_x.capacity() + local_y.capacity());
            self.peak_bytes.set(self.peak_bytes.get().max(bytes));
            f(t, &blocks, &mut local_x, &mut local_y);
        }
    }
}

impl LinearOperator for MatrixFreeOperator<'_> {
    fn n(&self) -> usize {
        self.model.n_dof()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.model.dim();
        let dd = d * d;
        let global = &self.model.dof_map().global;
        let pairs = self.tables.sparsity.pairs();
        y.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_element(|t, blocks, lx, ly| {
            for (a, &g) in global[t].iter().enumerate() {
                lx[a * d..(a + 1) * d].copy_from_slice(&x[g * d..(g + 1) * d]);
            }
            ly.iter_mut().for_each(|v| *v = 0.0);
            for (nz, &(a, b)) in pairs.iter().enumerate() {
                let (a, b) = (a as usize, b as usize);
                let blk = &blocks[nz * dd..(nz + 1) * dd];
                for k in 0..d {
                    for l in 0..d {
                        ly[a * d + k] += blk[k * d + l] * lx[b * d + l];
                        if a != b {
                            ly[b * d + l] += blk[k * d + l] * lx[a * d + k];
                        }
                    }
                }
            }
            for (a, &g) in global[t].iter().enumerate() {
                for k in 0..d {
                    y[g * d + k] += ly[a * d + k];
                }
            }
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        let d = self.model.dim();
        let dd = d * d;
        let global = &self.model.dof_map().global;
        let pairs = self.tables.sparsity.pairs();
        let mut diag = vec![0.0; self.n()];
        self.for_each_element(|t, blocks, _, _| {
            for (nz, &(a, b)) in pairs.iter().enumerate() {
                let (ga, gb) = (global[t][a as usize], global[t][b as usize]);
                if ga != gb {
                    continue;
                }
                let scale = if a == b { 1.0 } else { 2.0 };
                for k in 0..d {
                    diag[ga * d + k] += scale * blocks[nz * dd + k * d + k];
                }
            }
        });
        diag
    }
}

/// Strongly imposed Dirichlet data: fixed flags and values per DOF.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletSet {
    pub fixed: Vec<bool>,
    pub values: Vec<f64>,
}

impl DirichletSet {
    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.fixed.len()).filter(|&i| !self.fixed[i]).collect()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Control points of tile nodes on every Dirichlet face of the boundary
/// elements, valued by the data at their macro image.
pub fn dirichlet_set(model: &ComposedModel) -> Result<DirichletSet> {
    let d = model.dim();
    let n = model.n_dof();
    let mut fixed = vec![false; n];
    let mut values = vec![0.0; n];
    let num = model.numbering();
    for bc in &model.bcs().dirichlet {
        let nodes = &num.face_nodes[bc.face];
        if nodes.is_empty() {
            return Err(Error::EmptyDirichlet(bc.face + 1));
        }
        for t in model.boundary_elements(bc.face) {
            for &a in nodes {
                let (x, _) = model.eval_macro(t, &num.points[a])?;
                let g = bc.eval(&x);
                let node = model.dof_map().global[t][a];
                for k in 0..d {
                    fixed[node * d + k] = true;
                    values[node * d + k] = g[k];
                }
            }
        }
    }
    Ok(DirichletSet { fixed, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Direct,
    Cg,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub method: SolverMethod,
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::Direct,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Full displacement vector including imposed values.
    pub u: Vec<f64>,
    /// `K u - f` on fixed DOFs (zero elsewhere).
    pub reactions: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Operator restricted to the free DOFs.
struct Reduced<'a, A: LinearOperator + ?Sized> {
    op: &'a A,
    free: &'a [usize],
    n_full: usize,
}

impl<A: LinearOperator + ?Sized> Reduced<'_, A> {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut full = vec![0.0; self.n_full];
        for (i, &g) in self.free.iter().enumerate() {
            full[g] = x[i];
        }
        let mut out = vec![0.0; self.n_full];
        self.op.apply(&full, &mut out);
        for (i, &g) in self.free.iter().enumerate() {
            y[i] = out[g];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned CG, at most `50 sqrt(n)` iterations.
pub fn cg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bn = norm(b);
    if bn == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let max_iter = ((50.0 * (n as f64).sqrt()).ceil() as usize).max(1);
    let inv: Vec<f64> = diag
        .iter()
        .map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Factorization(format!(
                "operator not positive definite (p'Ap = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm(&r) / bn;
        history.push(rel);
        if rel <= tol {
            return Ok((x, it, rel));
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged {
        iterations: max_iter,
        final_residual: *history.last().unwrap(),
        history,
    })
}

/// Sparse Cholesky of the free-free block.
pub fn direct_solve(k: &BlockSymMatrix, free: &[usize], b: &[f64]) -> Result<Vec<f64>> {
    let mut index = vec![usize::MAX; k.n_dof()];
    for (i, &g) in free.iter().enumerate() {
        index[g] = i;
    }
    let triplets: Vec<Triplet<usize, usize, f64>> = k
        .lower_entries()
        .into_iter()
        .filter_map(|(i, j, v)| {
            let (a, b) = (index[i], index[j]);
            (a != usize::MAX && b != usize::MAX).then(|| Triplet::new(a.max(b), a.min(b), v))
        })
        .collect();
    let n = free.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let llt = mat.as_ref().sp_cholesky(Side::Lower).map_err(|e| {
        Error::Factorization(format!(
            "reduced stiffness is not positive definite ({e:?})"
        ))
    })?;
    let mut x = b.to_vec();
    llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
    Ok(x)
}

/// Solve with Dirichlet elimination; `op` must represent `k` when a direct
/// solve is requested with an assembled matrix.
pub fn solve_system<A: LinearOperator + ?Sized>(
    op: &A,
    matrix: Option<&BlockSymMatrix>,
    f: &[f64],
    dirichlet: &DirichletSet,
    options: &SolveOptions,
) -> Result<Solution> {
    let n = op.n();
    let free = dirichlet.free_dofs();
    let mut kg = vec![0.0; n];
    if !dirichlet.is_homogeneous() {
        op.apply(&dirichlet.values, &mut kg);
    }
    let rhs: Vec<f64> = free.iter().map(|&g| f[g] - kg[g]).collect();
    let red = Reduced {
        op,
        free: &free,
        n_full: n,
    };
    let (x, iterations) = match (options.method, matrix) {
        (SolverMethod::Direct, Some(k)) => (direct_solve(k, &free, &rhs)?, 0),
        (SolverMethod::Direct, None) => {
            return Err(Error::InvalidModel(
                "direct solve needs an assembled matrix".into(),
            ));
        }
        (SolverMethod::Cg, _) => {
            let full_diag = op.diagonal();
            let diag: Vec<f64> = free.iter().map(|&g| full_diag[g]).collect();
            let (x, it, _) = cg(|x, y| red.apply(x, y), &diag, &rhs, options.tol)?;
            (x, it)
        }
    };
    let mut u = dirichlet.values.clone();
    for (i, &g) in free.iter().enumerate() {
        u[g] = x[i];
    }
    let mut ku = vec![0.0; n];
    op.apply(&u, &mut ku);
    let mut reactions = vec![0.0; n];
    let mut res = 0.0;
    for g in 0..n {
        if dirichlet.fixed[g] {
            reactions[g] = ku[g] - f[g];
        } else {
            res += (ku[g] - f[g]).powi(2);
        }
    }
    let fn_free = free.iter().map(|&g| f[g] * f[g]).sum::<f64>().sqrt();
    let residual = if fn_free > 0.0 {
        res.sqrt() / fn_free
    } else {
        res.sqrt()
    };
    Ok(Solution {
        u,
        reactions,
        iterations,
        residual,
    })
}

/// Assembled direct or CG solve of the model's system.
pub fn solve_assembled(
    model: &ComposedModel,
    op: &SparseOperator,
    options: &SolveOptions,
) -> Result<Solution> {
    let dir = dirichlet_set(model)?;
    solve_system(&op.k, Some(&op.k), &op.f, &dir, options)
}

/// Half the external work.
pub fn compliance(f: &[f64], u: &[f64]) -> f64 {
    0.5 * dot(f, u)
}

/// One row of the sampled-field export.
#[derive(Debug, Clone, Copy)]
pub struct SampledPoint {
    pub x: [f64; 3],
    pub u: [f64; 3],
    pub von_mises: f64,
}

/// Fields on a uniform `n`-point grid per direction of every tile patch of
/// every element.
pub fn sample_fields(model: &ComposedModel, u: &[f64], n: usize) -> Result<Vec<SampledPoint>> {
    let d = model.dim();
    let n = n.max(2);
    let num = model.numbering();
    let mut out = Vec::new();
    for t in 0..model.macro_geometry().n_elements() {
        let glob = &model.dof_map().global[t];
        for (pi, patch) in model.tile().patches().iter().enumerate() {
            let total = n.pow(d as u32);
            for flat in 0..total {
                let mut theta = [0.0; 3];
                let mut rem = flat;
                for th in theta.iter_mut().take(d) {
                    *th = (rem % n) as f64 / (n - 1) as f64;
                    rem /= n;
                }
                let te = patch.eval(&theta[..d], 1)?;
                let tinv = inverse(d, &te.jac).ok_or(Error::SingularTile { patch: pi, theta })?;
                let me = model.macro_geometry().elements()[t]
                    .patch
                    .eval(&te.position[..d], 1)?;
                let st = MetricState::from_jacobian(d, &me.jac).ok_or(Error::DegenerateMacro {
                    element: t,
                    xi: te.position,
                })?;
                let basis = patch.basis(&theta[..d])?;
                let mut uu = [0.0; 3];
                let mut du = [[0.0; 3]; 3];
                for ((&i, &v), g) in basis.indices.iter().zip(&basis.values).zip(&basis.grads) {
                    let node = glob[num.tile_local[pi][i]];
                    for k in 0..d {
                        let val = u[node * d + k];
                        uu[k] += v * val;
                        for m in 0..d {
                            let gx: f64 = (0..d).map(|a| g[a] * tinv[a][m]).sum();
                            du[m][k] += gx * val;
                        }
                    }
                }
                out.push(SampledPoint {
                    x: me.position,
                    u: uu,
                    von_mises: von_mises(&physical_stress(&st, model.material(), &du)),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_solution_csv<W: Write>(mut w: W, u: &[f64]) -> Result<()> {
    writeln!(w, "dof,value")?;
    for (i, v) in u.iter().enumerate() {
        writeln!(w, "{i},{v:.16e}")?;
    }
    Ok(())
}

pub fn write_fields_csv<W: Write>(mut w: W, samples: &[SampledPoint]) -> Result<()> {
    writeln!(w, "x,y,z,ux,uy,uz,von_mises")?;
    for s in samples {
        writeln!(
            w,
            "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            s.x[0], s.x[1], s.x[2], s.u[0], s.u[1], s.u[2], s.von_mises
        )?;
    }
    Ok(())
}
