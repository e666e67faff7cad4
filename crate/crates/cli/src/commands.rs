use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use msiga::assembly::{
    assemble_all, fast_element_load, fast_volume, prepare, scatter_load, AssemblyConfig,
    SparseOperator,
};
use msiga::generators::{
    annulus_macro, box_macro, cantilever_bcs, cross_tile, distorted_macro, solid_tile,
};
use msiga::lookup::{
    build_tables, build_volume_table, cache_load, cache_path, cache_store, LookupTables,
};
use msiga::metrics::compare as compare_paths;
use msiga::model::{
    BoundaryConditions, ComposedModel, Material, ModelFile, ProjectionConfig, QuadratureConfig,
    TileGeometry, TileSpec,
};
use msiga::oracle::{oracle_assemble, oracle_volume};
use msiga::projection::{resolve_degrees, BernsteinSpace};
use msiga::sensitivity::{
    all_variables, compliance_of, fd_check, grad_compliance, grad_volume, pin_degrees, volume_of,
    write_gradient_csv, FdReport, GradientOptions,
};
use msiga::solve::{
    compliance, dirichlet_set, sample_fields, solve_system, write_fields_csv, write_solution_csv,
    MatrixFreeOperator, SolveOptions, SolverMethod,
};
use msiga::sparse::write_vector;

use crate::{
    AssembleArgs, BenchArgs, CompareArgs, GenerateArgs, GradArgs, MacroKind, Method,
    ProjectionArgs, Qoi, SolveArgs, Sweep, TableBuildArgs, TableCommand, TileKind, VolumeArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] msiga::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numerical() => 1,
            _ => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_model(path: &Path) -> CliResult<ComposedModel> {
    let text = read_text(path)?;
    let model = ModelFile::from_json(&text)?.build()?;
    for w in model.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(model)
}

fn with_projection(model: ComposedModel, p: &ProjectionArgs) -> CliResult<ComposedModel> {
    Ok(match (&p.p_proj, p.tol) {
        (Some(deg), _) => {
            if deg.len() != 1 && deg.len() != model.dim() {
                return usage(format!(
                    "--p-proj needs 1 or {} values, got {}",
                    model.dim(),
                    deg.len()
                ));
            }
            model.with_projection(ProjectionConfig::Degrees(deg.clone()))
        }
        (None, Some(tol)) if tol > 0.0 => model.with_projection(ProjectionConfig::Tolerance(tol)),
        (None, Some(tol)) => return usage(format!("--tol must be positive, got {tol}")),
        (None, None) => model,
    })
}

fn with_quad(model: ComposedModel, quad: Option<usize>) -> CliResult<ComposedModel> {
    Ok(match quad {
        Some(0) => return usage("--quad must be at least 1"),
        Some(n) => model.with_quadrature(QuadratureConfig {
            tile_order: Some(n),
            oracle_order: Some(n),
        }),
        None => model,
    })
}

fn pretty(report: &Value) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(report).map_err(msiga::Error::from)?)
}

fn write_json(report: &Value, path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", pretty(report)?).map_err(msiga::Error::from)?;
    Ok(())
}

/// Write to stdout; a closed pipe is not an error.
fn print_out(text: &str) -> CliResult<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(msiga::Error::from(e).into()),
        _ => Ok(()),
    }
}

/// Pretty JSON on stdout and, when asked, in a file.
fn emit(report: &Value, path: Option<&Path>) -> CliResult<()> {
    print_out(&(pretty(report)? + "\n"))?;
    if let Some(p) = path {
        write_json(report, p)?;
    }
    Ok(())
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let data = fs::read(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(hex(&Sha256::digest(&data)))
}

fn assembly_config(cache_dir: Option<&Path>) -> AssemblyConfig {
    AssemblyConfig {
        cache_dir: cache_dir.map(Path::to_path_buf),
        ..Default::default()
    }
}

pub fn volume(a: &VolumeArgs) -> CliResult<()> {
    let model = with_quad(
        with_projection(load_model(&a.model)?, &a.projection)?,
        a.quad,
    )?;
    let t0 = Instant::now();
    let report = match a.method {
        Method::Fast => {
            let (v, per, degrees, e_proj) = fast_volume(&model, &AssemblyConfig::default())?;
            json!({
                "method": "fast",
                "volume": v,
                "element_volumes": per,
                "p_proj": degrees,
                "e_proj": e_proj,
                "time": t0.elapsed().as_secs_f64(),
            })
        }
        Method::Gauss => {
            let v = oracle_volume(&model, &model.oracle_quadrature()?)?;
            json!({
                "method": "gauss",
                "volume": v,
                "time": t0.elapsed().as_secs_f64(),
            })
        }
    };
    emit(&report, a.report.as_deref())
}

fn assemble_with(
    model: &ComposedModel,
    method: Method,
    cache_dir: Option<&Path>,
) -> CliResult<(SparseOperator, Value)> {
    match method {
        Method::Fast => {
            let fa = assemble_all(model, &assembly_config(cache_dir))?;
            let mut report = to_value(&fa.report);
            report["method"] = json!("fast");
            Ok((fa.operator, report))
        }
        Method::Gauss => {
            let (op, r) = oracle_assemble(model)?;
            let report = json!({
                "method": "gauss",
                "n_dof": model.n_dof(),
                "n_nz_global": op.k.n_nz_scalar(),
                "nz_time": r.nz_time,
                "scatter": r.scatter,
            });
            Ok((op, report))
        }
    }
}

fn write_operator(
    op: &SparseOperator,
    matrix: Option<&Path>,
    load: Option<&Path>,
) -> CliResult<()> {
    if let Some(p) = matrix {
        op.k.write_matrix_market(create(p)?)?;
    }
    if let Some(p) = load {
        write_vector(create(p)?, &op.f)?;
    }
    Ok(())
}

pub fn assemble(a: &AssembleArgs) -> CliResult<()> {
    let model = with_projection(load_model(&a.model)?, &a.projection)?;
    let (op, report) = assemble_with(&model, a.method, a.cache_dir.as_deref())?;
    write_operator(&op, a.out_matrix.as_deref(), a.out_load.as_deref())?;
    emit(&report, a.report.as_deref())
}

/// Load vector of the fast path without forming the stiffness matrix.
fn fast_load(
    model: &ComposedModel,
    tables: &LookupTables,
    space: &BernsteinSpace,
    projected: &msiga::projection::ProjectedMacroFields,
) -> Vec<f64> {
    let d = model.dim();
    let mut f = vec![0.0; model.n_dof()];
    for (t, glob) in model.dof_map().global.iter().enumerate() {
        scatter_load(
            &mut f,
            glob,
            &fast_element_load(tables, space, projected, t),
            d,
        );
    }
    f
}

pub fn solve(a: &SolveArgs) -> CliResult<()> {
    let model = with_projection(load_model(&a.model)?, &a.projection)?;
    let cg = SolveOptions {
        method: SolverMethod::Cg,
        tol: a.cg_tol,
    };
    let dirichlet = dirichlet_set(&model)?;
    let t0 = Instant::now();
    let (solution, f, mut report) = if a.matrix_free {
        if a.method != Method::Fast {
            return usage("--matrix-free requires --method fast");
        }
        if a.out_matrix.is_some() {
            return usage("--matrix-free does not form a matrix for --out-matrix");
        }
        let (space, tables, projected, times, _) =
            prepare(&model, &assembly_config(a.cache_dir.as_deref()))?;
        let f = fast_load(&model, &tables, &space, &projected);
        let op = MatrixFreeOperator::new(&model, &tables, &projected)?;
        let s = solve_system(&op, None, &f, &dirichlet, &cg)?;
        let report = json!({
            "method": "fast",
            "matrix_free": true,
            "n_dof": model.n_dof(),
            "p_proj": space.degrees(),
            "e_proj": projected.e_proj,
            "times": to_value(&times),
            "peak_work_bytes": op.peak_work_bytes(),
        });
        (s, f, report)
    } else {
        let (op, report) = assemble_with(&model, a.method, a.cache_dir.as_deref())?;
        write_operator(&op, a.out_matrix.as_deref(), None)?;
        let options = if a.cg { cg } else { SolveOptions::default() };
        let s = solve_system(&op.k, Some(&op.k), &op.f, &dirichlet, &options)?;
        (s, op.f, report)
    };
    report["solve"] = json!({
        "solver": if a.matrix_free || a.cg { "cg" } else { "direct" },
        "iterations": solution.iterations,
        "residual": solution.residual,
        "compliance": compliance(&f, &solution.u),
        "time": t0.elapsed().as_secs_f64(),
    });
    if let Some(p) = &a.out_solution {
        write_solution_csv(create(p)?, &solution.u)?;
    }
    if let Some(p) = &a.out_fields {
        let samples = sample_fields(&model, &solution.u, a.samples)?;
        write_fields_csv(create(p)?, &samples)?;
    }
    emit(&report, a.report.as_deref())
}

pub fn compare(a: &CompareArgs) -> CliResult<()> {
    let model = with_projection(load_model(&a.model)?, &a.projection)?;
    let c = compare_paths(
        &model,
        &assembly_config(a.cache_dir.as_deref()),
        &SolveOptions::default(),
    )?;
    emit(&to_value(&c.report), a.report.as_deref())
}

fn expand(values: &[usize], d: usize) -> CliResult<Vec<usize>> {
    match values.len() {
        1 => Ok(vec![values[0]; d]),
        n if n == d => Ok(values.to_vec()),
        n => usage(format!("expected 1 or {d} values, got {n}")),
    }
}

/// Tile from a tile file or from the tile of a model file, with the model's
/// degrees when it has explicit ones.
fn load_tile(path: &Path) -> CliResult<(TileGeometry, Option<ComposedModel>)> {
    let text = read_text(path)?;
    let value: Value = serde_json::from_str(&text).map_err(msiga::Error::from)?;
    if value.get("patches").is_some() {
        let spec: TileSpec = serde_json::from_value(value).map_err(msiga::Error::from)?;
        let dim = spec
            .patches
            .first()
            .map(|p| p.degrees.len())
            .ok_or_else(|| CliError::Usage("tile file has no patches".into()))?;
        Ok((spec.to_tile(dim)?, None))
    } else {
        let model = ModelFile::from_json(&text)?.build()?;
        Ok((model.tile().clone(), Some(model)))
    }
}

fn table_summary(tables: &LookupTables, path: &Path) -> CliResult<Value> {
    Ok(json!({
        "path": path.display().to_string(),
        "dim": tables.dim,
        "n_tile": tables.n_tile,
        "n_nz": tables.n_nz(),
        "n_pi": tables.n_pi,
        "p_proj": tables.degrees(),
        "quad_order": tables.key.quad_order,
        "table_bytes": tables.size_bytes(),
        "file_bytes": fs::metadata(path).map(|m| m.len()).unwrap_or(0),
        "tile_hash": hex(&tables.key.tile_hash),
        "file_sha256": file_sha256(path)?,
    }))
}

fn table_build(a: &TableBuildArgs) -> CliResult<()> {
    let (tile, source_model) = load_tile(&a.tile)?;
    let d = tile.dim();
    let degrees = match (&source_model, a.p_proj.is_empty()) {
        (_, false) => expand(&a.p_proj, d)?,
        (Some(m), true) => resolve_degrees(m)?.0,
        (None, true) => return usage("--p-proj is required for a tile file"),
    };
    let quadrature = QuadratureConfig {
        tile_order: a.quad.or_else(|| {
            source_model
                .as_ref()
                .and_then(|m| m.quadrature().tile_order)
        }),
        oracle_order: None,
    };
    // the tables only see the tile, so any macro will do
    let host = ComposedModel::new(
        tile,
        box_macro(d, [1.0; 3], 1, [1; 3])?,
        Material::new(1.0, 0.3)?,
        BoundaryConditions::default(),
        quadrature,
        ProjectionConfig::Degrees(degrees.clone()),
    )?;
    let space = BernsteinSpace::new(&degrees)?;
    let t0 = Instant::now();
    let tables = build_tables(&host, &space)?;
    let build_time = t0.elapsed().as_secs_f64();
    let path = match (&a.out, &a.cache_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => {
            fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            cache_path(dir, &tables.key)
        }
        (None, None) => return usage("one of --out or --cache-dir is required"),
    };
    cache_store(&tables, &path)?;
    let mut summary = table_summary(&tables, &path)?;
    summary["build_time"] = json!(build_time);
    emit(&summary, None)
}

pub fn table(cmd: &TableCommand) -> CliResult<()> {
    match cmd {
        TableCommand::Build(a) => table_build(a),
        TableCommand::Inspect { path } => {
            let tables = cache_load(path, None)?;
            emit(&table_summary(&tables, path)?, None)
        }
    }
}

pub fn grad(a: &GradArgs) -> CliResult<()> {
    let model = with_projection(load_model(&a.model)?, &a.projection)?;
    let (degrees, _) = resolve_degrees(&model)?;
    // perturbed designs must share one projection space
    let model = pin_degrees(&model, &degrees);
    let d = model.dim();
    let t0 = Instant::now();
    let (value, grad) = match a.qoi {
        Qoi::Volume => {
            let space = BernsteinSpace::new(&degrees)?;
            let (_, folded) = build_volume_table(&model.tile_quadrature()?, &space);
            (volume_of(&model)?, grad_volume(&model, &folded, &space)?)
        }
        Qoi::Compliance => {
            let fa = assemble_all(&model, &AssemblyConfig::default())?;
            let s = solve_system(
                &fa.operator.k,
                Some(&fa.operator.k),
                &fa.operator.f,
                &dirichlet_set(&model)?,
                &SolveOptions::default(),
            )?;
            let options = GradientOptions {
                fixed_load_support: a.fixed_load_support,
                ..Default::default()
            };
            let g = grad_compliance(&model, &fa, &s.u, &options)?;
            (compliance(&fa.operator.f, &s.u), g)
        }
    };
    let grad_time = t0.elapsed().as_secs_f64();
    match &a.out {
        Some(p) => write_gradient_csv(create(p)?, &grad, d)?,
        None => {
            let mut buf = Vec::new();
            write_gradient_csv(&mut buf, &grad, d)?;
            print_out(&String::from_utf8_lossy(&buf))?;
        }
    }
    let name = match a.qoi {
        Qoi::Volume => "volume",
        Qoi::Compliance => "compliance",
    };
    let fd: Option<FdReport> = if a.check_fd {
        let mut vars = all_variables(&model);
        if let Some(n) = a.fd_vars {
            vars.truncate(n);
        }
        Some(match a.qoi {
            Qoi::Volume => fd_check(&model, name, volume_of, &grad, &vars, &[1e-4, 1e-5, 1e-6])?,
            Qoi::Compliance => fd_check(
                &model,
                name,
                compliance_of,
                &grad,
                &vars,
                &[1e-3, 1e-4, 1e-5],
            )?,
        })
    } else {
        None
    };
    let report = json!({
        "qoi": name,
        "value": value,
        "p_proj": degrees,
        "n_vars": grad.len(),
        "gradient_norm": grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        "time": grad_time,
        "fixed_load_support": a.fixed_load_support,
        "fd": fd.as_ref().map(to_value),
    });
    if let Some(p) = &a.report {
        write_json(&report, p)?;
    }
    if a.out.is_some() {
        print_out(&(pretty(&report)? + "\n"))?;
    }
    if let Some(fd) = fd {
        eprintln!(
            "fd check: best relative error {:.3e} over {} variables",
            fd.best_error, fd.n_vars
        );
    }
    Ok(())
}

pub const BENCH_HEADER: &str = "sweep,value,n_tiles,n_dof,p_proj,e_proj,e_mat,e_vec,e_disp,e_stress,fast_nz_time,oracle_nz_time,t_cost";

fn bench_row(sweep: &str, value: usize, model: &ComposedModel) -> CliResult<String> {
    let c = compare_paths(model, &AssemblyConfig::default(), &SolveOptions::default())?;
    let r = &c.report;
    let m = &r.metrics;
    let p: Vec<String> = r.fast.p_proj.iter().map(usize::to_string).collect();
    Ok(format!(
        "{sweep},{value},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
        model.macro_geometry().n_elements(),
        r.n_dof,
        p.join("-"),
        m.e_proj,
        m.e_mat,
        m.e_vec,
        m.e_disp,
        m.e_stress,
        r.fast.nz_time,
        r.oracle.nz_time,
        m.t_cost,
    ))
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let mut rows = vec![BENCH_HEADER.to_string()];
    match a.sweep {
        Sweep::Pproj => {
            for p in 0..=a.max_degree {
                let m = model.with_projection(ProjectionConfig::Degrees(vec![p]));
                rows.push(bench_row("pproj", p, &m)?);
            }
        }
        Sweep::Tiles => {
            for &k in &a.levels {
                if k == 0 {
                    return usage("--levels entries must be at least 1");
                }
                let refined = model.macro_geometry().patch().refine_uniform(k)?;
                let m = ComposedModel::new(
                    model.tile().clone(),
                    refined,
                    *model.material(),
                    model.bcs().clone(),
                    *model.quadrature(),
                    model.projection().clone(),
                )?;
                rows.push(bench_row("tiles", k, &m)?);
            }
        }
        Sweep::TileDegree => {
            let d = model.dim();
            for deg in 1..=3 {
                let tile = cross_tile(d, deg, 1, 0.25, 0.15)?;
                let m = ComposedModel::new(
                    tile,
                    model.macro_geometry().patch().clone(),
                    *model.material(),
                    model.bcs().clone(),
                    *model.quadrature(),
                    model.projection().clone(),
                )?;
                rows.push(bench_row("tile-degree", deg, &m)?);
            }
        }
    }
    let text = rows.join("\n") + "\n";
    match &a.out {
        Some(p) => create(p)?
            .write_all(text.as_bytes())
            .map_err(msiga::Error::from)?,
        None => print_out(&text)?,
    }
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    let d = a.dim;
    if !(2..=3).contains(&d) {
        return usage(format!("--dim must be 2 or 3, got {d}"));
    }
    let mut elements = [1usize; 3];
    match a.elements.len() {
        1 => elements[..d].fill(a.elements[0]),
        n if n == d => elements[..d].copy_from_slice(&a.elements),
        n => return usage(format!("--elements needs 1 or {d} values, got {n}")),
    }
    if elements.contains(&0) {
        return usage("--elements entries must be at least 1");
    }
    let mut traction = [0.0; 3];
    for (t, v) in traction.iter_mut().zip(&a.traction) {
        *t = *v;
    }
    let tile = match a.tile {
        TileKind::Solid => solid_tile(d, a.tile_degree, a.tile_spans)?,
        TileKind::Cross => cross_tile(d, a.tile_degree, a.tile_spans, a.half, a.waist)?,
    };
    let macro_patch = match a.macro_kind {
        MacroKind::Box => box_macro(d, [a.length; 3], a.macro_degree, elements)?,
        MacroKind::Distorted => distorted_macro(d, a.length, a.amp, a.macro_degree, elements)?,
        MacroKind::Annulus => annulus_macro(d, 0.5 * a.length, a.length, 0.5 * a.length, elements)?,
    };
    let model = ComposedModel::new(
        tile,
        macro_patch,
        Material::new(a.young, a.nu)?,
        cantilever_bcs(d, traction),
        QuadratureConfig::default(),
        ProjectionConfig::default(),
    )?;
    let model = with_quad(with_projection(model, &a.projection)?, a.quad)?;
    let text = ModelFile::from_model(&model).to_json()?;
    create(&a.out)?
        .write_all(text.as_bytes())
        .map_err(msiga::Error::from)?;
    eprintln!(
        "wrote {} ({} tiles, {} dofs)",
        a.out.display(),
        model.macro_geometry().n_elements(),
        model.n_dof()
    );
    Ok(())
}
