//! Curvilinear elasticity on a macro element: covariant and contravariant
//! bases, the material tensor in Voigt form, the macro fields `A_ij` that
//! carry all macro-scale dependence of the stiffness integrand, and the
//! extended load terms.
//!
//! Voigt order is (11, 22, 33, 23, 13, 12) in 3D and (11, 22, 12) in 2D
//! (plane strain).

use crate::error::{Error, Result};
use crate::linalg::{cross, det, dot, inverse, norm, Mat3, ZERO3};
use crate::model::{face_dir, face_side, ComposedModel, Material};

const VOIGT_3D: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
const VOIGT_2D: [(usize, usize); 3] = [(0, 0), (1, 1), (0, 1)];

pub fn voigt_pairs(d: usize) -> &'static [(usize, usize)] {
    if d == 3 {
        &VOIGT_3D
    } else {
        &VOIGT_2D
    }
}

/// Bases and metrics of a macro map at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricState {
    pub dim: usize,
    /// `g_cov[i]` is the derivative of the map along parameter `i`.
    pub g_cov: [[f64; 3]; 3],
    /// Dual vectors, `g_cov[i] . g_contra[j] = delta_ij`.
    pub g_contra: [[f64; 3]; 3],
    pub cov_metric: Mat3,
    pub contra_metric: Mat3,
    /// Absolute value of det J.
    pub det_j: f64,
}

impl MetricState {
    /// `jac[a][i]` is the derivative of coordinate `a` along parameter `i`.
    pub fn from_jacobian(d: usize, jac: &Mat3) -> Option<Self> {
        let dj = det(d, jac);
        let inv = inverse(d, jac)?;
        if !(dj.abs() > 0.0) {
            return None;
        }
        let mut g_cov = ZERO3;
        let mut g_contra = ZERO3;
        for i in 0..d {
            for a in 0..d {
                g_cov[i][a] = jac[a][i];
                g_contra[i][a] = inv[i][a];
            }
        }
        let mut cov_metric = ZERO3;
        let mut contra_metric = ZERO3;
        for i in 0..d {
            for j in 0..d {
                cov_metric[i][j] = dot(d, &g_cov[i], &g_cov[j]);
                contra_metric[i][j] = dot(d, &g_contra[i], &g_contra[j]);
            }
        }
        Some(Self {
            dim: d,
            g_cov,
            g_contra,
            cov_metric,
            contra_metric,
            det_j: dj.abs(),
        })
    }

    /// Contravariant material tensor component.
    pub fn material_component(
        &self,
        lambda: f64,
        mu: f64,
        i: usize,
        j: usize,
        k: usize,
        l: usize,
    ) -> f64 {
        let g = &self.contra_metric;
        lambda * g[i][j] * g[k][l] + mu * (g[i][k] * g[j][l] + g[i][l] * g[j][k])
    }

    /// Macro surface measure on the cube face `f`, from the tangent vectors
    /// only.
    pub fn surface_measure(&self, f: usize) -> f64 {
        surface_measure_cross(self, f)
    }
}

/// Metric state of macro element `t` at local parameter `xi`.
pub fn metric_state(model: &ComposedModel, t: usize, xi: &[f64; 3]) -> Result<MetricState> {
    let (_, jac) = model.eval_macro(t, xi)?;
    MetricState::from_jacobian(model.dim(), &jac).ok_or(Error::DegenerateMacro {
        element: t,
        xi: *xi,
    })
}

/// Symmetric Voigt matrix of the contravariant material tensor, row-major.
pub fn material_voigt(state: &MetricState, mat: &Material) -> Vec<f64> {
    let (lambda, mu) = mat.lame();
    let pairs = voigt_pairs(state.dim);
    let nv = pairs.len();
    let mut c = vec![0.0; nv * nv];
    for (a, &(i, j)) in pairs.iter().enumerate() {
        for (b, &(k, l)) in pairs.iter().enumerate() {
            c[a * nv + b] = state.material_component(lambda, mu, i, j, k, l);
        }
    }
    c
}

/// The d blocks `G_i` (each `d x n_voigt`, row-major) mapping parameter
/// derivatives of the displacement to Voigt covariant strains.
pub fn g_blocks(state: &MetricState) -> Vec<Vec<f64>> {
    let d = state.dim;
    let pairs = voigt_pairs(d);
    let nv = pairs.len();
    (0..d)
        .map(|i| {
            let mut g = vec![0.0; d * nv];
            for (c, &(p, q)) in pairs.iter().enumerate() {
                let col = if p == q {
                    (i == p).then_some(state.g_cov[p])
                } else if i == p {
                    Some(state.g_cov[q])
                } else if i == q {
                    Some(state.g_cov[p])
                } else {
                    None
                };
                if let Some(v) = col {
                    for a in 0..d {
                        g[a * nv + c] = v[a];
                    }
                }
            }
            g
        })
        .collect()
}

/// Voigt covariant strain (engineering shear) from `du[i]`, the derivative
/// of the displacement along parameter `i`.
pub fn covariant_strain(state: &MetricState, du: &[[f64; 3]; 3]) -> Vec<f64> {
    let d = state.dim;
    let pairs = voigt_pairs(d);
    let nv = pairs.len();
    let g = g_blocks(state);
    (0..nv)
        .map(|c| {
            (0..d)
                .map(|i| (0..d).map(|a| g[i][a * nv + c] * du[i][a]).sum::<f64>())
                .sum()
        })
        .collect()
}

/// Physical Cauchy stress (full 3x3; plane strain fills the out-of-plane
/// normal component) from parameter derivatives of the displacement.
pub fn physical_stress(state: &MetricState, mat: &Material, du: &[[f64; 3]; 3]) -> Mat3 {
    let d = state.dim;
    let pairs = voigt_pairs(d);
    let nv = pairs.len();
    let eps = covariant_strain(state, du);
    let c = material_voigt(state, mat);
    let mut s = ZERO3;
    for (a, &(p, q)) in pairs.iter().enumerate() {
        let sv: f64 = (0..nv).map(|b| c[a * nv + b] * eps[b]).sum();
        for x in 0..d {
            for y in 0..d {
                let v = sv * state.g_cov[p][x] * state.g_cov[q][y];
                s[x][y] += v;
                if p != q {
                    s[y][x] += v;
                }
            }
        }
    }
    if d == 2 {
        let (lambda, _) = mat.lame();
        let tr: f64 = (0..2).map(|i| dot(2, &du[i], &state.g_contra[i])).sum();
        s[2][2] = lambda * tr;
    }
    s
}

pub fn von_mises(s: &Mat3) -> f64 {
    let a = (s[0][0] - s[1][1]).powi(2) + (s[1][1] - s[2][2]).powi(2) + (s[2][2] - s[0][0]).powi(2);
    let b = s[0][1].powi(2) + s[1][2].powi(2) + s[0][2].powi(2);
    (0.5 * a + 3.0 * b).sqrt()
}

/// Number of distinct stiffness-field scalars: 45 in 3D, 10 in 2D.
pub fn n_packed(d: usize) -> usize {
    if d == 3 {
        45
    } else {
        10
    }
}

/// `(i, j, k, l)` of each packed scalar: blocks `i <= j`, and only `k <= l`
/// inside diagonal blocks.
pub fn packed_layout(d: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut v = Vec::with_capacity(n_packed(d));
    for i in 0..d {
        for j in i..d {
            for k in 0..d {
                let l0 = if i == j { k } else { 0 };
                for l in l0..d {
                    v.push((i, j, k, l));
                }
            }
        }
    }
    v
}

/// Stiffness macro field `A_ij = G_i C G_j^T |det J|` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFieldSample {
    pub dim: usize,
    /// `blocks[i][j][k][l]`.
    pub blocks: [[Mat3; 3]; 3],
}

impl MacroFieldSample {
    pub fn packed(&self) -> Vec<f64> {
        packed_layout(self.dim)
            .into_iter()
            .map(|(i, j, k, l)| self.blocks[i][j][k][l])
            .collect()
    }

    pub fn from_packed(d: usize, packed: &[f64]) -> Self {
        let mut blocks = [[ZERO3; 3]; 3];
        for ((i, j, k, l), &v) in packed_layout(d).into_iter().zip(packed) {
            blocks[i][j][k][l] = v;
            blocks[j][i][l][k] = v;
        }
        Self { dim: d, blocks }
    }

    /// Frobenius norm over all `d^4` scalars.
    pub fn frobenius(&self) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        s += self.blocks[i][j][k][l].powi(2);
                    }
                }
            }
        }
        s.sqrt()
    }

    /// `sum_ij du_i^T A_ij dv_j`.
    pub fn energy(&self, du: &[[f64; 3]; 3], dv: &[[f64; 3]; 3]) -> f64 {
        let d = self.dim;
        let mut e = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        e += du[i][k] * self.blocks[i][j][k][l] * dv[j][l];
                    }
                }
            }
        }
        e
    }
}

pub fn macro_field(state: &MetricState, mat: &Material) -> MacroFieldSample {
    let d = state.dim;
    let nv = voigt_pairs(d).len();
    let c = material_voigt(state, mat);
    let g = g_blocks(state);
    // gc[i] = G_i C, d x nv
    let gc: Vec<Vec<f64>> = g
        .iter()
        .map(|gi| {
            let mut out = vec![0.0; d * nv];
            for a in 0..d {
                for b in 0..nv {
                    out[a * nv + b] = (0..nv).map(|m| gi[a * nv + m] * c[m * nv + b]).sum();
                }
            }
            out
        })
        .collect();
    let mut blocks = [[ZERO3; 3]; 3];
    for i in 0..d {
        for j in i..d {
            for k in 0..d {
                for l in 0..d {
                    let v: f64 = (0..nv)
                        .map(|m| gc[i][k * nv + m] * g[j][l * nv + m])
                        .sum::<f64>()
                        * state.det_j;
                    blocks[i][j][k][l] = v;
                    blocks[j][i][l][k] = v;
                }
            }
        }
    }
    MacroFieldSample { dim: d, blocks }
}

/// Packed macro field written into `out`, from the closed form of the
/// isotropic tensor in the dual basis. No allocation.
pub fn packed_macro_field(state: &MetricState, lambda: f64, mu: f64, out: &mut [f64]) {
    let g = &state.g_contra;
    let gm = &state.contra_metric;
    let dj = state.det_j;
    let d = state.dim;
    let mut n = 0;
    for i in 0..d {
        for j in i..d {
            for k in 0..d {
                let l0 = if i == j { k } else { 0 };
                for l in l0..d {
                    let delta = if k == l { gm[i][j] } else { 0.0 };
                    out[n] = dj * (lambda * g[i][k] * g[j][l] + mu * (delta + g[i][l] * g[j][k]));
                    n += 1;
                }
            }
        }
    }
}

/// Extended body force `b |det J|`.
pub fn body_extension(state: &MetricState, body: &[f64; 3]) -> [f64; 3] {
    let mut b = [0.0; 3];
    for k in 0..state.dim {
        b[k] = body[k] * state.det_j;
    }
    b
}

/// Extended traction on cube face `f`; `xi` must lie on that face.
pub fn traction_extension(
    state: &MetricState,
    f: usize,
    xi: &[f64; 3],
    traction: &[f64; 3],
) -> Result<[f64; 3]> {
    let k = face_dir(f);
    if (xi[k] - face_side(f) as f64).abs() > 1e-12 {
        return Err(Error::UnsupportedLoad(format!(
            "traction on face {} evaluated off the face at xi = {xi:?}",
            f + 1
        )));
    }
    let s = state.surface_measure(f);
    let mut t = [0.0; 3];
    for c in 0..state.dim {
        t[c] = traction[c] * s;
    }
    Ok(t)
}

/// Surface measure as the norm of the in-face tangent cross product.
pub fn surface_measure_cross(state: &MetricState, f: usize) -> f64 {
    let d = state.dim;
    let others: Vec<usize> = (0..d).filter(|&i| i != face_dir(f)).collect();
    if d == 3 {
        norm(3, &cross(&state.g_cov[others[0]], &state.g_cov[others[1]]))
    } else {
        norm(2, &state.g_cov[others[0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `|det|` of the covariant frame with the face direction replaced by
    /// the unit contravariant normal.
    fn surface_measure_normal(s: &MetricState, f: usize) -> f64 {
        let d = s.dim;
        let k = face_dir(f);
        let n = s.g_contra[k];
        let nn = norm(d, &n);
        let mut m = ZERO3;
        for i in 0..d {
            let col = if i == k {
                [n[0] / nn, n[1] / nn, n[2] / nn]
            } else {
                s.g_cov[i]
            };
            for a in 0..d {
                m[a][i] = col[a];
            }
        }
        det(d, &m).abs()
    }

    fn state_of(d: usize, jac: Mat3) -> MetricState {
        MetricState::from_jacobian(d, &jac).unwrap()
    }

    fn cube(l: f64) -> MetricState {
        state_of(3, [[l, 0.0, 0.0], [0.0, l, 0.0], [0.0, 0.0, l]])
    }

    /// Closed-form macro field from the physical gradient route.
    fn closed_form(state: &MetricState, mat: &Material) -> MacroFieldSample {
        let (lambda, mu) = mat.lame();
        let d = state.dim;
        let gc = &state.g_contra;
        let mut blocks = [[ZERO3; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let delta = if k == l { 1.0 } else { 0.0 };
                        blocks[i][j][k][l] = state.det_j
                            * (lambda * gc[i][k] * gc[j][l]
                                + mu * (delta * dot(d, &gc[i], &gc[j]) + gc[j][k] * gc[i][l]));
                    }
                }
            }
        }
        MacroFieldSample { dim: d, blocks }
    }

    fn physical_energy(
        state: &MetricState,
        mat: &Material,
        du: &[[f64; 3]; 3],
        dv: &[[f64; 3]; 3],
    ) -> f64 {
        let d = state.dim;
        let (lambda, mu) = mat.lame();
        let grad = |u: &[[f64; 3]; 3]| {
            let mut g = ZERO3;
            for i in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        g[a][b] += u[i][a] * state.g_contra[i][b];
                    }
                }
            }
            g
        };
        let (gu, gv) = (grad(du), grad(dv));
        let mut e = 0.0;
        let (mut tu, mut tv) = (0.0, 0.0);
        for a in 0..d {
            tu += gu[a][a];
            tv += gv[a][a];
            for b in 0..d {
                let eu = 0.5 * (gu[a][b] + gu[b][a]);
                let ev = 0.5 * (gv[a][b] + gv[b][a]);
                e += 2.0 * mu * eu * ev;
            }
        }
        (e + lambda * tu * tv) * state.det_j
    }

    #[test]
    fn cube_metric() {
        let s = cube(2.0);
        assert_eq!(s.det_j, 8.0);
        for i in 0..3 {
            assert_eq!(s.g_cov[i][i], 2.0);
            assert!((s.contra_metric[i][i] - 0.25).abs() < 1e-16);
        }
    }

    #[test]
    fn identity_material() {
        let m = Material::new(1.0, 0.3).unwrap();
        let (l, mu) = m.lame();
        let c = material_voigt(&cube(1.0), &m);
        assert!((c[0] - (l + 2.0 * mu)).abs() < 1e-15);
        assert!((c[1] - l).abs() < 1e-15);
        assert!((c[5 * 6 + 5] - mu).abs() < 1e-15);
        let c2 = material_voigt(&cube(2.0), &m);
        for (a, b) in c.iter().zip(&c2) {
            assert!((a / 16.0 - b).abs() < 1e-16);
        }
    }

    #[test]
    fn cube_fields_closed_form() {
        let m = Material::new(1.0, 0.3).unwrap();
        let (lambda, mu) = m.lame();
        let l = 2.0;
        let (a1, a2, a3) = ((lambda + 2.0 * mu) * l, mu * l, lambda * l);
        let f = macro_field(&cube(l), &m);
        let b = &f.blocks;
        let expect11 = [[a1, 0.0, 0.0], [0.0, a2, 0.0], [0.0, 0.0, a2]];
        let expect12 = [[0.0, a3, 0.0], [a2, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let expect13 = [[0.0, 0.0, a3], [0.0, 0.0, 0.0], [a2, 0.0, 0.0]];
        let expect23 = [[0.0, 0.0, 0.0], [0.0, 0.0, a3], [0.0, a2, 0.0]];
        for k in 0..3 {
            for l in 0..3 {
                assert!((b[0][0][k][l] - expect11[k][l]).abs() < 1e-14);
                assert!((b[0][1][k][l] - expect12[k][l]).abs() < 1e-14);
                assert!((b[0][2][k][l] - expect13[k][l]).abs() < 1e-14);
                assert!((b[1][2][k][l] - expect23[k][l]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_strain() {
        let s = cube(1.0);
        let du = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(
            covariant_strain(&s, &du),
            vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn packed_counts() {
        assert_eq!(packed_layout(3).len(), 45);
        assert_eq!(packed_layout(2).len(), 10);
    }

    #[test]
    fn surface_measure_of_cube_face() {
        let s = cube(2.0);
        assert!((s.surface_measure(0) - 4.0).abs() < 1e-15);
        let b = body_extension(&s, &[0.0; 3]);
        assert_eq!(b, [0.0; 3]);
        let t = traction_extension(&cube(1.0), 3, &[0.3, 1.0, 0.2], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t, [1.0, 2.0, 3.0]);
        assert!(traction_extension(&s, 3, &[0.3, 0.5, 0.2], &[1.0; 3]).is_err());
    }

    fn arb_jac(d: usize) -> impl Strategy<Value = Mat3> {
        proptest::collection::vec(-0.4f64..0.4, 9).prop_map(move |v| {
            let mut j = ZERO3;
            for a in 0..d {
                for b in 0..d {
                    j[a][b] = v[a * 3 + b] + if a == b { 1.2 } else { 0.0 };
                }
            }
            j
        })
    }

    fn arb_grad() -> impl Strategy<Value = [[f64; 3]; 3]> {
        proptest::collection::vec(-1.0f64..1.0, 9).prop_map(|v| {
            let mut g = ZERO3;
            for i in 0..3 {
                for a in 0..3 {
                    g[i][a] = v[i * 3 + a];
                }
            }
            g
        })
    }

    fn zero_out(d: usize, mut g: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        for i in 0..3 {
            for a in 0..3 {
                if i >= d || a >= d {
                    g[i][a] = 0.0;
                }
            }
        }
        g
    }

    proptest! {
        #[test]
        fn duality_and_inverse_metric(jac in arb_jac(3)) {
            let s = state_of(3, jac);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot(3, &s.g_cov[i], &s.g_contra[j]) - e).abs() < 1e-12);
                    let p: f64 = (0..3).map(|k| s.cov_metric[i][k] * s.contra_metric[k][j]).sum();
                    prop_assert!((p - e).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn material_symmetries(jac in arb_jac(3)) {
            let s = state_of(3, jac);
            let (l, m) = (0.7, 0.4);
            for i in 0..3 { for j in 0..3 { for k in 0..3 { for q in 0..3 {
                let c = s.material_component(l, m, i, j, k, q);
                prop_assert!((c - s.material_component(l, m, j, i, k, q)).abs() < 1e-14);
                prop_assert!((c - s.material_component(l, m, k, q, i, j)).abs() < 1e-14);
            }}}}
        }

        #[test]
        fn energy_forms_agree_3d(jac in arb_jac(3), du in arb_grad(), dv in arb_grad()) {
            let m = Material::new(2.0, 0.27).unwrap();
            let s = state_of(3, jac);
            let f = macro_field(&s, &m);
            let a = f.energy(&du, &dv);
            let b = physical_energy(&s, &m, &du, &dv);
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
            let c = closed_form(&s, &m);
            prop_assert!((f.packed().iter().zip(c.packed()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)) < 1e-12 * f.frobenius());
            prop_assert!(f.energy(&du, &du) >= -1e-12);
        }

        #[test]
        fn energy_forms_agree_2d(jac in arb_jac(2), du in arb_grad(), dv in arb_grad()) {
            let m = Material::new(1.0, 0.3).unwrap();
            let (du, dv) = (zero_out(2, du), zero_out(2, dv));
            let s = state_of(2, jac);
            let f = macro_field(&s, &m);
            let b = physical_energy(&s, &m, &du, &dv);
            prop_assert!((f.energy(&du, &dv) - b).abs() < 1e-12 * (1.0 + b.abs()));
            let p = f.packed();
            prop_assert_eq!(p.len(), 10);
            prop_assert_eq!(MacroFieldSample::from_packed(2, &p), f);
        }

        #[test]
        fn strain_matches_componentwise(jac in arb_jac(3), du in arb_grad()) {
            let s = state_of(3, jac);
            let eps = covariant_strain(&s, &du);
            for (c, &(p, q)) in voigt_pairs(3).iter().enumerate() {
                let half = 0.5 * (dot(3, &du[p], &s.g_cov[q]) + dot(3, &du[q], &s.g_cov[p]));
                let expect = if p == q { half } else { 2.0 * half };
                prop_assert!((eps[c] - expect).abs() < 1e-14);
            }
        }

        #[test]
        fn stress_matches_hooke(jac in arb_jac(3), du in arb_grad()) {
            let m = Material::new(1.0, 0.25).unwrap();
            let (lambda, mu) = m.lame();
            let s = state_of(3, jac);
            let sig = physical_stress(&s, &m, &du);
            let mut g = ZERO3;
            for i in 0..3 { for a in 0..3 { for b in 0..3 { g[a][b] += du[i][a] * s.g_contra[i][b]; } } }
            let tr = g[0][0] + g[1][1] + g[2][2];
            for a in 0..3 { for b in 0..3 {
                let e = 0.5 * (g[a][b] + g[b][a]);
                let h = 2.0 * mu * e + if a == b { lambda * tr } else { 0.0 };
                prop_assert!((sig[a][b] - h).abs() < 1e-12);
            }}
        }

        #[test]
        fn packed_closed_form_matches_strain_route(jac in arb_jac(3), d in 2usize..4) {
            let s = state_of(d, jac);
            let mat = Material::new(2.5, 0.27).unwrap();
            let (lambda, mu) = mat.lame();
            let mut fast = vec![0.0; n_packed(d)];
            packed_macro_field(&s, lambda, mu, &mut fast);
            let slow = macro_field(&s, &mat).packed();
            let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-13 * scale);
            }
        }

        #[test]
        fn surface_measure_is_tangent_area(jac in arb_jac(3), f in 0usize..6) {
            let s = state_of(3, jac);
            prop_assert!((s.surface_measure(f) - surface_measure_normal(&s, f)).abs() < 1e-13);
        }
    }
}
