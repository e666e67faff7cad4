//! Fast-versus-reference error measures and the cost ratio.

use serde::Serialize;

use crate::assembly::{assemble_all, AssemblyConfig, AssemblyReport, FastAssembly, SparseOperator};
use crate::error::{Error, Result};
use crate::model::{ComposedModel, TileQuadrature};
use crate::oracle::{oracle_assemble_with, oracle_fields, OracleContext, OracleReport};
use crate::solve::{compliance, solve_assembled, SolveOptions};

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct Metrics {
    pub e_proj: f64,
    pub e_disp: f64,
    pub e_stress: f64,
    pub e_mat: f64,
    pub e_vec: f64,
    pub t_cost: f64,
}

/// `|a - b| / |a|`, zero when both vanish.
pub fn relative_l2(reference: &[f64], other: &[f64]) -> f64 {
    let num = reference
        .iter()
        .zip(other)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = reference.iter().map(|a| a * a).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Squared H1 norm of the displacement and squared L2 norm of the stress.
pub fn field_norms(model: &ComposedModel, tq: &TileQuadrature, u: &[f64]) -> Result<(f64, f64)> {
    let d = model.dim();
    let mut h1 = 0.0;
    let mut l2s = 0.0;
    for s in oracle_fields(model, tq, u)? {
        let mut v = 0.0;
        for k in 0..d {
            v += s.u[k] * s.u[k];
            for m in 0..d {
                v += s.grad[k][m] * s.grad[k][m];
            }
        }
        h1 += s.weight * v;
        l2s += s.weight * s.stress.iter().flatten().map(|x| x * x).sum::<f64>();
    }
    Ok((h1, l2s))
}

/// Relative H1 displacement and L2 stress errors of `u` against `u_ref`.
pub fn field_errors(
    model: &ComposedModel,
    tq: &TileQuadrature,
    u_ref: &[f64],
    u: &[f64],
) -> Result<(f64, f64)> {
    let diff: Vec<f64> = u_ref.iter().zip(u).map(|(a, b)| a - b).collect();
    let (h_ref, s_ref) = field_norms(model, tq, u_ref)?;
    let (h_d, s_d) = field_norms(model, tq, &diff)?;
    let rel = |n: f64, d: f64| if d > 0.0 { (n / d).sqrt() } else { n.sqrt() };
    Ok((rel(h_d, h_ref), rel(s_d, s_ref)))
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub n_dof: usize,
    pub metrics: Metrics,
    pub compliance_fast: f64,
    pub compliance_oracle: f64,
    pub fast: AssemblyReport,
    pub oracle: OracleReport,
}

pub struct Comparison {
    pub report: CompareReport,
    pub fast: FastAssembly,
    pub oracle: SparseOperator,
    pub u_fast: Vec<f64>,
    pub u_oracle: Vec<f64>,
}

/// Run both paths, solve both systems and measure the differences.
pub fn compare(
    model: &ComposedModel,
    config: &AssemblyConfig,
    options: &SolveOptions,
) -> Result<Comparison> {
    let config = AssemblyConfig {
        estimate_error: true,
        ..config.clone()
    };
    let fast = assemble_all(model, &config)?;
    let ctx = OracleContext::new(model)?;
    let (oracle, oracle_report) = oracle_assemble_with(model, &ctx)?;
    if !oracle.k.same_pattern(&fast.operator.k) {
        return Err(Error::DimensionMismatch(
            "fast and reference sparsity patterns differ".into(),
        ));
    }
    let u_fast = solve_assembled(model, &fast.operator, options)?.u;
    let u_oracle = solve_assembled(model, &oracle, options)?.u;
    let (e_disp, e_stress) = field_errors(model, &ctx.tq, &u_oracle, &u_fast)?;
    let kn = oracle.k.frobenius();
    let e_mat = if kn > 0.0 {
        oracle.k.frobenius_diff(&fast.operator.k) / kn
    } else {
        0.0
    };
    let metrics = Metrics {
        e_proj: fast.report.e_proj.unwrap_or(0.0),
        e_disp,
        e_stress,
        e_mat,
        e_vec: relative_l2(&oracle.f, &fast.operator.f),
        t_cost: if fast.report.nz_time > 0.0 {
            oracle_report.nz_time / fast.report.nz_time
        } else {
            f64::INFINITY
        },
    };
    let report = CompareReport {
        n_dof: model.n_dof(),
        metrics,
        compliance_fast: compliance(&fast.operator.f, &u_fast),
        compliance_oracle: compliance(&oracle.f, &u_oracle),
        fast: fast.report.clone(),
        oracle: oracle_report,
    };
    Ok(Comparison {
        report,
        fast,
        oracle,
        u_fast,
        u_oracle,
    })
}
