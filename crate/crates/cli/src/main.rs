use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(
    name = "msiga",
    version,
    about = "Fast operator formation for spline-composed microstructures"
)]
struct Cli {
    /// Upper bound on worker threads. All commands currently run on one.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Volume of the composed geometry.
    Volume(VolumeArgs),
    /// Assemble the stiffness matrix and load vector.
    Assemble(AssembleArgs),
    /// Assemble and solve the linear elasticity problem.
    Solve(SolveArgs),
    /// Run the fast and the full-quadrature paths and compare them.
    Compare(CompareArgs),
    /// Build or inspect lookup-table cache files.
    #[command(subcommand)]
    Table(TableCommand),
    /// Gradient of volume or compliance with respect to the macro control points.
    Grad(GradArgs),
    /// Timing and accuracy sweeps, written as CSV.
    Bench(BenchArgs),
    /// Write a generated model file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Lookup tables contracted with projected macro fields.
    Fast,
    /// Full Gauss quadrature over every tile span.
    Gauss,
}

#[derive(Args, Clone, Debug)]
pub struct ProjectionArgs {
    /// Projection degrees, one value or one per direction.
    #[arg(long, value_delimiter = ',', conflicts_with = "tol")]
    pub p_proj: Option<Vec<usize>>,
    /// Pick the projection degrees adaptively for this tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct VolumeArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Fast)]
    pub method: Method,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    /// Gauss points per direction and tile span.
    #[arg(long)]
    pub quad: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AssembleArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Fast)]
    pub method: Method,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    /// Matrix Market file for the stiffness matrix.
    #[arg(long)]
    pub out_matrix: Option<PathBuf>,
    /// Load vector, one value per line.
    #[arg(long)]
    pub out_load: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Fast)]
    pub method: Method,
    /// Apply the stiffness element by element inside CG without assembling it.
    #[arg(long)]
    pub matrix_free: bool,
    /// Use preconditioned CG on the assembled matrix instead of Cholesky.
    #[arg(long)]
    pub cg: bool,
    /// Relative residual target for CG.
    #[arg(long, default_value_t = 1e-10)]
    pub cg_tol: f64,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    #[arg(long)]
    pub out_matrix: Option<PathBuf>,
    /// Solution CSV (`dof,value`).
    #[arg(long)]
    pub out_solution: Option<PathBuf>,
    /// Sampled displacement and von Mises stress CSV.
    #[arg(long)]
    pub out_fields: Option<PathBuf>,
    /// Samples per direction and tile patch for `--out-fields`.
    #[arg(long, default_value_t = 3)]
    pub samples: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    pub model: PathBuf,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum TableCommand {
    /// Build the tables of a tile (or of a model file's tile).
    Build(TableBuildArgs),
    /// Print the summary of a cache file.
    Inspect { path: PathBuf },
}

#[derive(Args, Debug)]
pub struct TableBuildArgs {
    /// Tile JSON (`{"patches": [...]}`) or model file.
    pub tile: PathBuf,
    /// Projection degrees, one value or one per direction.
    #[arg(long, value_delimiter = ',')]
    pub p_proj: Vec<usize>,
    /// Gauss points per direction and tile span.
    #[arg(long)]
    pub quad: Option<usize>,
    /// Output file; defaults to the cache name inside `--cache-dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Qoi {
    Volume,
    Compliance,
}

#[derive(Args, Debug)]
pub struct GradArgs {
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub qoi: Qoi,
    /// Compare against central finite differences.
    #[arg(long)]
    pub check_fd: bool,
    /// Check only the first N variables.
    #[arg(long)]
    pub fd_vars: Option<usize>,
    /// Drop the load-variation term of the compliance gradient.
    #[arg(long)]
    pub fixed_load_support: bool,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    /// Gradient CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    /// Projection degree 0 to `--max-degree`.
    Pproj,
    /// Uniform macro refinement by each of `--levels`.
    Tiles,
    /// Generated cross tiles of degree 1 to 3 on the model's macro.
    TileDegree,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    #[arg(long, default_value_t = 4)]
    pub max_degree: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub levels: Vec<usize>,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TileKind {
    Solid,
    Cross,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MacroKind {
    Box,
    Distorted,
    Annulus,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = TileKind::Cross)]
    pub tile: TileKind,
    #[arg(long, default_value_t = 2)]
    pub tile_degree: usize,
    #[arg(long, default_value_t = 1)]
    pub tile_spans: usize,
    /// Half-width of the cross arms.
    #[arg(long, default_value_t = 0.25)]
    pub half: f64,
    /// Relative narrowing of the cross arms at their middle.
    #[arg(long, default_value_t = 0.15)]
    pub waist: f64,
    #[arg(long = "macro", value_enum, default_value_t = MacroKind::Distorted)]
    pub macro_kind: MacroKind,
    #[arg(long, default_value_t = 2)]
    pub macro_degree: usize,
    /// Macro elements, one value or one per direction.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub elements: Vec<usize>,
    /// Edge length (box, distorted) or outer radius (annulus).
    #[arg(long, default_value_t = 1.0)]
    pub length: f64,
    /// Bulge amplitude of the distorted macro.
    #[arg(long, default_value_t = 0.1)]
    pub amp: f64,
    /// Traction on the face opposite the clamped one.
    #[arg(long, value_delimiter = ',', default_value = "0,-0.1,0")]
    pub traction: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub young: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    #[arg(long)]
    pub quad: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Volume(a) => commands::volume(&a),
        Command::Assemble(a) => commands::assemble(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Table(t) => commands::table(&t),
        Command::Grad(a) => commands::grad(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Generate(a) => commands::generate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
