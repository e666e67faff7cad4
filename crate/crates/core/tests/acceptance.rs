#![allow(clippy::type_complexity)]

//! Acceptance criteria A1 to A9. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use msiga::assembly::{assemble_all, assemble_fast, AssemblyConfig};
use msiga::curvilinear::{macro_field, metric_state, MacroFieldSample};
use msiga::generators::{
    affine_macro, annulus_macro, box_macro, cantilever_bcs, cross_tile, distorted_macro,
    greville_patch, model, solid_tile,
};
use msiga::linalg::Mat3;
use msiga::lookup::build_volume_table;
use msiga::metrics::{compare, relative_l2, Metrics};
use msiga::model::{
    BoundaryConditions, ComposedModel, Dirichlet, Material, ProjectionConfig, QuadratureConfig,
};
use msiga::oracle::{oracle_assemble, oracle_volume};
use msiga::projection::{project_det, project_model, BernsteinSpace};
use msiga::sensitivity::{
    all_variables, fd_check, grad_compliance, grad_volume, pin_degrees, GradientOptions,
};
use msiga::solve::{
    compliance, dirichlet_set, solve_assembled, solve_system, LinearOperator, MatrixFreeOperator,
    SolveOptions, SolverMethod,
};
use msiga::splines::KnotVector;
use msiga::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn pinned(order: usize) -> QuadratureConfig {
    QuadratureConfig {
        tile_order: Some(order),
        oracle_order: Some(order),
    }
}

fn best_of<T>(runs: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..runs {
        let t0 = Instant::now();
        last = Some(f()?);
        best = best.min(t0.elapsed().as_secs_f64());
    }
    Ok((best, last.unwrap()))
}

fn a1() -> Result<Outcome> {
    let l = 2.0;
    let mat = Material::new(1.0, 0.3)?;
    let (lambda, mu) = mat.lame();
    let m = model(
        solid_tile(3, 1, 1)?,
        box_macro(3, [l; 3], 1, [1; 3])?,
        BoundaryConditions::default(),
        ProjectionConfig::Degrees(vec![0]),
    )?
    .with_material(mat);
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let projected = project_model(&m, &BernsteinSpace::new(&[0, 0, 0])?, false)?;
    let fields = [
        MacroFieldSample::from_packed(3, projected.element_stiffness(0)),
        macro_field(&metric_state(&m, 0, &[0.3, 0.7, 0.1])?, &mat),
    ];
    let mut worst: f64 = 0.0;
    for f in &fields {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for q in 0..3 {
                        let exact = l
                            * (lambda * delta(i, k) * delta(j, q)
                                + mu * (delta(i, j) * delta(k, q) + delta(i, q) * delta(j, k)));
                        let scale = if exact != 0.0 { exact.abs() } else { mu * l };
                        worst = worst.max((f.blocks[i][j][k][q] - exact).abs() / scale);
                    }
                }
            }
        }
    }
    outcome(
        worst < 1e-12,
        format!("max componentwise relative error {worst:.2e}"),
    )
}

fn a2() -> Result<Outcome> {
    let m = model(
        cross_tile(3, 2, 2, 0.25, 0.15)?,
        distorted_macro(3, 1.0, 0.1, 2, [4, 4, 4])?,
        BoundaryConditions::default(),
        ProjectionConfig::Degrees(vec![5]),
    )?
    .with_quadrature(pinned(6));
    let space = BernsteinSpace::new(&[5, 5, 5])?;
    let (table, _) = build_volume_table(&m.tile_quadrature()?, &space);
    let (t_fast, v_fast) = best_of(3, || {
        let dets = project_det(&m, &space)?;
        Ok(dets
            .chunks(space.n())
            .map(|c| table.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>())
    })?;
    let tq = m.oracle_quadrature()?;
    let (t_oracle, v_oracle) = best_of(3, || oracle_volume(&m, &tq))?;
    let err = (v_fast - v_oracle).abs() / v_oracle;
    let ratio = t_fast / t_oracle;
    outcome(
        err < 1e-12 && ratio < 0.1,
        format!(
            "{} tiles, volume relative error {err:.2e}, fast/oracle time {ratio:.3}",
            m.macro_geometry().n_elements()
        ),
    )
}

fn exact_regime(d: usize) -> Result<Metrics> {
    let a: Mat3 = [[1.2, 0.3, 0.1], [-0.2, 0.9, 0.15], [0.05, -0.1, 1.1]];
    let elements = if d == 2 { [3, 2, 1] } else { [2, 2, 1] };
    let m = model(
        cross_tile(d, 2, 1, 0.25, 0.1)?,
        affine_macro(d, a, [0.5, -0.3, 0.2], 1, elements)?,
        cantilever_bcs(d, [0.1, -0.2, 0.05]),
        ProjectionConfig::Degrees(vec![0]),
    )?
    .with_quadrature(pinned(4));
    Ok(
        compare(&m, &AssemblyConfig::default(), &SolveOptions::default())?
            .report
            .metrics,
    )
}

fn a3() -> Result<Outcome> {
    let (m2, m3) = (exact_regime(2)?, exact_regime(3)?);
    let pass = [&m2, &m3]
        .iter()
        .all(|e| e.e_mat < 1e-12 && e.e_vec < 1e-12 && e.e_disp < 1e-10);
    outcome(
        pass,
        format!("2D e_mat {:.1e} e_vec {:.1e} e_disp {:.1e}; 3D e_mat {:.1e} e_vec {:.1e} e_disp {:.1e}", m2.e_mat, m2.e_vec, m2.e_disp, m3.e_mat, m3.e_vec, m3.e_disp),
    )
}

/// Quadratic macro, curved inside, with the face `x = L` planar.
fn flat_faced_macro(d: usize) -> Result<msiga::splines::SplinePatch> {
    let knots = (0..d).map(|_| KnotVector::uniform(2, 2)).collect();
    greville_patch(knots, |x| {
        let mut y = [0.0; 3];
        y[0] = 1.5 * x[0] + 0.2 * x[0] * (1.0 - x[0]) * (std::f64::consts::PI * x[1]).sin();
        for k in 1..3 {
            y[k] = x[k] + 0.3 * x[0] * x[k] * (1.0 - x[k]);
        }
        y
    })
}

fn a4() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for d in [2, 3] {
        let traction = [0.3, -0.7, 0.2];
        let m = model(
            solid_tile(d, 2, 1)?,
            flat_faced_macro(d)?,
            cantilever_bcs(d, traction),
            ProjectionConfig::Degrees(vec![2]),
        )?
        .with_quadrature(pinned(5));
        let fast = assemble_all(&m, &AssemblyConfig::default())?;
        let (oracle, _) = oracle_assemble(&m)?;
        let total =
            |f: &[f64]| -> Vec<f64> { (0..d).map(|k| f.iter().skip(k).step_by(d).sum()).collect() };
        worst = worst.max(relative_l2(&total(&oracle.f), &total(&fast.operator.f)));
    }
    outcome(
        worst < 1e-10,
        format!("total face force relative error {worst:.2e}"),
    )
}

fn a5() -> Result<Outcome> {
    let m = model(
        cross_tile(2, 2, 1, 0.25, 0.15)?,
        annulus_macro(2, 1.0, 2.0, 1.0, [4, 6, 1])?,
        cantilever_bcs(2, [0.0, -0.05, 0.0]),
        ProjectionConfig::Degrees(vec![0]),
    )?
    .with_quadrature(pinned(5));
    let config = AssemblyConfig::default();
    let opts = SolveOptions::default();
    let mut rows = Vec::new();
    for p in 0..=4 {
        let e = compare(
            &m.with_projection(ProjectionConfig::Degrees(vec![p])),
            &config,
            &opts,
        )?
        .report
        .metrics;
        rows.push([e.e_proj, e.e_mat, e.e_vec, e.e_disp, e.e_stress]);
    }
    let names = ["e_proj", "e_mat", "e_vec", "e_disp", "e_stress"];
    let mut broken = Vec::new();
    for (c, name) in names.iter().enumerate() {
        if rows.windows(2).any(|w| w[1][c] > w[0][c]) {
            broken.push(*name);
        }
    }
    let sel = compare(
        &m.with_projection(ProjectionConfig::Tolerance(1e-3)),
        &config,
        &opts,
    )?
    .report;
    let e = &sel.metrics;
    let pass = broken.is_empty() && e.e_disp < 1e-3 && e.e_stress < 1e-2;
    outcome(
        pass,
        format!(
            "sweep p=0..4 e_disp {:.1e} -> {:.1e}, non-monotone {:?}; tol 1e-3 picks {:?}: e_disp {:.1e} e_stress {:.1e}",
            rows[0][3], rows[4][3], broken, sel.fast.p_proj, e.e_disp, e.e_stress
        ),
    )
}

fn a6() -> Result<Outcome> {
    let tile = cross_tile(3, 2, 1, 0.25, 0.15)?;
    let mut fast_t = Vec::new();
    let mut oracle_t = Vec::new();
    for n in [2, 4, 8] {
        let m = model(
            tile.clone(),
            distorted_macro(3, 1.0, 0.1, 2, [n, n, n])?,
            cantilever_bcs(3, [0.0, -0.1, 0.0]),
            ProjectionConfig::Degrees(vec![2]),
        )?;
        let fast = assemble_all(&m, &AssemblyConfig::default())?;
        let (_, oracle) = oracle_assemble(&m)?;
        fast_t.push(fast.report.nz_time);
        oracle_t.push(oracle.nz_time);
    }
    let t_cost: Vec<f64> = oracle_t.iter().zip(&fast_t).map(|(o, f)| o / f).collect();
    let growth_fast = fast_t[2] / fast_t[0];
    let growth_oracle = oracle_t[2] / oracle_t[0];
    outcome(
        t_cost[2] > 5.0 && growth_fast < growth_oracle,
        format!("T_cost at m=8/64/512: {:.1}/{:.1}/{:.1}; growth fast {growth_fast:.1}x vs oracle {growth_oracle:.1}x", t_cost[0], t_cost[1], t_cost[2]),
    )
}

fn a7() -> Result<Outcome> {
    let curved = model(
        cross_tile(3, 2, 1, 0.25, 0.15)?,
        distorted_macro(3, 1.0, 0.1, 2, [2, 2, 2])?,
        BoundaryConditions::default(),
        ProjectionConfig::Degrees(vec![5]),
    )?;
    let space = BernsteinSpace::new(&[5, 5, 5])?;
    let (volume, folded) = build_volume_table(&curved.tile_quadrature()?, &space);
    let gv = grad_volume(&curved, &folded, &space)?;
    let vol_of = |m: &ComposedModel| -> Result<f64> {
        Ok(project_det(m, &space)?
            .chunks(space.n())
            .map(|c| volume.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    };
    let v = vol_of(&curved)?;
    let fd_v = fd_check(
        &curved,
        "volume",
        vol_of,
        &gv,
        &all_variables(&curved),
        &[1e-4, 1e-5, 1e-6],
    )?;
    let euler: f64 = curved
        .macro_geometry()
        .patch()
        .points()
        .iter()
        .zip(&gv)
        .map(|(x, g)| x * g)
        .sum();
    let euler_err = (euler - 3.0 * v).abs() / (3.0 * v);

    let cm = pin_degrees(
        &model(
            cross_tile(3, 2, 1, 0.25, 0.15)?,
            distorted_macro(3, 1.0, 0.05, 2, [2, 2, 2])?,
            cantilever_bcs(3, [0.0, -0.2, 0.1]),
            ProjectionConfig::Degrees(vec![3]),
        )?,
        &[3, 3, 3],
    );
    let fa = assemble_all(&cm, &AssemblyConfig::default())?;
    let u = solve_assembled(&cm, &fa.operator, &SolveOptions::default())?.u;
    let gc = grad_compliance(&cm, &fa, &u, &GradientOptions::default())?;
    let comp_of = |m: &ComposedModel| -> Result<f64> {
        let projected = project_model(m, &fa.space, false)?;
        let (op, _, _) = assemble_fast(m, &fa.tables, &fa.space, &projected, 32)?;
        Ok(compliance(
            &op.f,
            &solve_assembled(m, &op, &SolveOptions::default())?.u,
        ))
    };
    let fd_c = fd_check(
        &cm,
        "compliance",
        comp_of,
        &gc,
        &all_variables(&cm),
        &[1e-4, 1e-5],
    )?;
    outcome(
        fd_v.best_error < 1e-6 && fd_c.best_error < 1e-4 && euler_err < 1e-10,
        format!(
            "volume FD {:.1e}, compliance FD {:.1e}, Euler identity {euler_err:.1e}",
            fd_v.best_error, fd_c.best_error
        ),
    )
}

fn a8() -> Result<Outcome> {
    let m = model(
        cross_tile(3, 2, 1, 0.25, 0.15)?,
        distorted_macro(3, 1.0, 0.1, 2, [2, 2, 1])?,
        cantilever_bcs(3, [0.0, -0.1, 0.0]),
        ProjectionConfig::Degrees(vec![2]),
    )?;
    let fa = assemble_all(&m, &AssemblyConfig::default())?;
    let mf = MatrixFreeOperator::new(&m, &fa.tables, &fa.projected)?;
    let n = m.n_dof();
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let x: Vec<f64> = (0..n)
            .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let (mut ya, mut yf) = (vec![0.0; n], vec![0.0; n]);
        fa.operator.k.matvec(&x, &mut ya);
        mf.apply(&x, &mut yf);
        worst = worst.max(relative_l2(&ya, &yf));
    }
    let dir = dirichlet_set(&m)?;
    let direct = solve_assembled(&m, &fa.operator, &SolveOptions::default())?.u;
    let cg = solve_system(
        &mf,
        None,
        &fa.operator.f,
        &dir,
        &SolveOptions {
            method: SolverMethod::Cg,
            tol: 1e-12,
        },
    )?
    .u;
    let sol_err = relative_l2(&direct, &cg);
    let bounded = mf.peak_work_bytes() <= mf.element_block_bytes();
    outcome(
        worst < 1e-12 && sol_err < 1e-8 && bounded,
        format!(
            "matvec {worst:.1e}, CG vs direct {sol_err:.1e}, peak work {} B <= one element block {} B: {bounded}",
            mf.peak_work_bytes(),
            mf.element_block_bytes()
        ),
    )
}

fn a9() -> Result<Outcome> {
    let d = 3;
    let a: Mat3 = [[1.2, 0.3, 0.1], [-0.2, 0.9, 0.15], [0.05, -0.1, 1.1]];
    let m = model(
        cross_tile(d, 2, 1, 0.25, 0.1)?,
        affine_macro(d, a, [0.5, -0.3, 0.2], 1, [2, 2, 1])?,
        BoundaryConditions::default(),
        ProjectionConfig::Degrees(vec![0]),
    )?
    .with_quadrature(pinned(4));
    let fa = assemble_all(&m, &AssemblyConfig::default())?;
    let k = &fa.operator.k;
    let n = m.n_dof();
    let dense = k.to_dense();
    let symmetric = (0..n).all(|i| (0..i).all(|j| dense[i * n + j] == dense[j * n + i]));
    let mut rigid_worst: f64 = 0.0;
    for dir in 0..d {
        let r: Vec<f64> = (0..n)
            .map(|i| if i % d == dir { 1.0 } else { 0.0 })
            .collect();
        let mut kr = vec![0.0; n];
        k.matvec(&r, &mut kr);
        rigid_worst = rigid_worst.max(kr.iter().map(|v| v * v).sum::<f64>().sqrt() / k.frobenius());
    }
    let grad: Mat3 = [
        [0.01, -0.02, 0.005],
        [0.015, 0.003, -0.01],
        [-0.004, 0.02, 0.008],
    ];
    let shift = [0.1, -0.05, 0.02];
    let bcs = BoundaryConditions {
        dirichlet: (0..2 * d)
            .map(|face| Dirichlet {
                face,
                value: shift,
                gradient: Some(grad),
            })
            .collect(),
        tractions: vec![],
        body_force: [0.0; 3],
    };
    // a linear field is only an equilibrium state without free inner surfaces
    let pm = model(
        solid_tile(d, 2, 2)?,
        affine_macro(d, a, [0.5, -0.3, 0.2], 1, [2, 2, 1])?,
        bcs,
        ProjectionConfig::Degrees(vec![0]),
    )?
    .with_quadrature(pinned(4));
    let pa = assemble_all(&pm, &AssemblyConfig::default())?;
    let u = solve_assembled(&pm, &pa.operator, &SolveOptions::default())?.u;
    let mut patch_worst: f64 = 0.0;
    let num = pm.numbering();
    for t in 0..pm.macro_geometry().n_elements() {
        for (local, &node) in pm.dof_map().global[t].iter().enumerate() {
            let (x, _) = pm.eval_macro(t, &num.points[local])?;
            for i in 0..d {
                let exact = shift[i] + (0..d).map(|j| grad[i][j] * x[j]).sum::<f64>();
                patch_worst = patch_worst.max((u[node * d + i] - exact).abs());
            }
        }
    }
    outcome(
        symmetric && rigid_worst < 1e-10 && patch_worst < 1e-10,
        format!("exactly symmetric: {symmetric}, |K r|/|K|_F {rigid_worst:.1e}, patch test max error {patch_worst:.1e}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 9] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == name) {
            continue;
        }
        let t0 = Instant::now();
        let line = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(o)) => {
                if !o.pass {
                    failed += 1;
                }
                format!(
                    "{name} {} {}",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                )
            }
            Ok(Err(e)) => {
                failed += 1;
                format!("{name} FAIL error: {e}")
            }
            Err(_) => {
                failed += 1;
                format!("{name} FAIL panicked")
            }
        };
        println!("{line} ({:.1}s)", t0.elapsed().as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
