use super::*;
use crate::generators::{
    annulus_macro, box_macro, box_patch, cross_tile, distorted_macro, solid_tile,
};
use crate::splines::KnotVector;

fn plain(tile: TileGeometry, macro_patch: SplinePatch) -> Result<ComposedModel> {
    ComposedModel::new(
        tile,
        macro_patch,
        Material::new(1.0, 0.3).unwrap(),
        BoundaryConditions::default(),
        QuadratureConfig::default(),
        ProjectionConfig::default(),
    )
}

#[test]
fn lame_constants() {
    let (l, m) = Material::new(1.0, 0.3).unwrap().lame();
    assert!((l - 0.3 / (1.3 * 0.4)).abs() < 1e-15);
    assert!((m - 1.0 / 2.6).abs() < 1e-15);
    assert!(Material::new(1.0, 0.5).is_err());
    assert!(Material::new(-1.0, 0.2).is_err());
}

#[test]
fn identity_composition() {
    let m = plain(
        solid_tile(3, 1, 1).unwrap(),
        box_macro(3, [1.0; 3], 1, [1; 3]).unwrap(),
    )
    .unwrap();
    let (x, j) = m.eval_composed(0, 0, &[0.1, 0.6, 0.9]).unwrap();
    for i in 0..3 {
        assert!((x[i] - [0.1, 0.6, 0.9][i]).abs() < 1e-15);
        for k in 0..3 {
            assert!((j[i][k] - if i == k { 1.0 } else { 0.0 }).abs() < 1e-15);
        }
    }
}

fn bumpy_cubic(seed: u64, scale: f64, offset: f64) -> SplinePatch {
    let base = box_patch(3, [0.0; 3], [1.0; 3], 3, [1; 3]).unwrap();
    let mut s = seed;
    let pts: Vec<f64> = base
        .points()
        .iter()
        .map(|&v| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let r = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            let interior = v > 0.0 && v < 1.0;
            offset + scale * (v + if interior { 0.05 * r } else { 0.0 })
        })
        .collect();
    base.with_points(pts).unwrap()
}

#[test]
fn composed_map_has_degree_27_along_a_line() {
    let tile = TileGeometry::new(vec![bumpy_cubic(3, 1.0, 0.0)], None).unwrap();
    let m = plain(tile, bumpy_cubic(11, 2.0, 0.3)).unwrap();
    let n = 28;
    let nodes: Vec<f64> = (0..n)
        .map(|k| 0.5 - 0.5 * ((2 * k + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos())
        .collect();
    let at = |s: f64| m.eval_composed(0, 0, &[s, 0.37, 0.61]).unwrap().0;
    let vals: Vec<[f64; 3]> = nodes.iter().map(|&s| at(s)).collect();
    // barycentric weights for Chebyshev points of the first kind
    let w: Vec<f64> = (0..n)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * ((2 * k + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).sin()
        })
        .collect();
    for s in [0.013, 0.29, 0.5001, 0.77, 0.994] {
        let exact = at(s);
        for c in 0..3 {
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..n {
                let t = w[k] / (s - nodes[k]);
                num += t * vals[k][c];
                den += t;
            }
            assert!((num / den - exact[c]).abs() < 1e-10 * exact[c].abs().max(1.0));
        }
    }
}

#[test]
fn composed_jacobian_matches_fd() {
    let tile = TileGeometry::new(vec![bumpy_cubic(5, 1.0, 0.0)], None).unwrap();
    let m = plain(tile, bumpy_cubic(17, 1.5, -0.2)).unwrap();
    let th = [0.31, 0.52, 0.77];
    let (_, j) = m.eval_composed(0, 0, &th).unwrap();
    let h = 1e-6;
    for k in 0..3 {
        let mut p = th;
        let mut q = th;
        p[k] += h;
        q[k] -= h;
        let (xp, _) = m.eval_composed(0, 0, &p).unwrap();
        let (xq, _) = m.eval_composed(0, 0, &q).unwrap();
        for i in 0..3 {
            let fd = (xp[i] - xq[i]) / (2.0 * h);
            assert!((fd - j[i][k]).abs() < 1e-6 * j[i][k].abs().max(1.0));
        }
    }
}

#[test]
fn single_element_numbering_is_identity() {
    let m = plain(
        cross_tile(3, 2, 1, 0.2, 0.0).unwrap(),
        box_macro(3, [1.0; 3], 1, [1; 3]).unwrap(),
    )
    .unwrap();
    let dm = m.dof_map();
    assert_eq!(dm.n_global, dm.n_tile);
    assert!(dm.global[0].iter().enumerate().all(|(i, &g)| i == g));
}

#[test]
fn two_elements_share_one_face() {
    let tile = solid_tile(3, 2, 2).unwrap();
    let k = TileNumbering::new(&tile).face_nodes[1].len();
    assert_eq!(k, 16);
    let m = plain(tile, box_macro(3, [2.0, 1.0, 1.0], 1, [2, 1, 1]).unwrap()).unwrap();
    assert_eq!(m.dof_map().n_global, 2 * m.dof_map().n_tile - k);
}

#[test]
fn cross_tile_numbering_matches_physical_union_find() {
    let m = plain(
        cross_tile(3, 2, 1, 0.2, 0.2).unwrap(),
        distorted_macro(3, 1.0, 0.05, 2, [3, 3, 3]).unwrap(),
    )
    .unwrap();
    let d = 3;
    let n_t = m.dof_map().n_tile;
    let n_el = m.macro_geometry().n_elements();
    let pts: Vec<[f64; 3]> = (0..n_el)
        .flat_map(|t| {
            let m = &m;
            (0..n_t).map(move |a| m.eval_macro(t, &m.numbering().points[a]).unwrap().0)
        })
        .collect();
    let mut uf = UnionFind::new(pts.len());
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if i / n_t != j / n_t && (0..d).all(|k| (pts[i][k] - pts[j][k]).abs() < 1e-10) {
                uf.union(i, j);
            }
        }
    }
    let (_, classes) = uf.labels();
    assert_eq!(classes, m.dof_map().n_global);
    assert!(m.dof_map().n_global < n_el * n_t);
}

#[test]
fn composed_surface_is_continuous() {
    let m = plain(
        cross_tile(3, 2, 1, 0.2, 0.3).unwrap(),
        distorted_macro(3, 1.0, 0.08, 2, [2, 1, 1]).unwrap(),
    )
    .unwrap();
    let mut gap: f64 = 0.0;
    for i in 0..9 {
        for j in 0..9 {
            let (s, t) = (i as f64 / 8.0, j as f64 / 8.0);
            let a = m.eval_macro(0, &[1.0, s, t]).unwrap().0;
            let b = m.eval_macro(1, &[0.0, s, t]).unwrap().0;
            gap = gap.max((0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max));
        }
    }
    assert!(gap < 1e-10);
}

#[test]
fn det_degree() {
    let quad = MacroGeometry::new(box_macro(3, [1.0; 3], 2, [1; 3]).unwrap()).unwrap();
    assert_eq!(quad.jacobian_det_degree().unwrap(), vec![5, 5, 5]);
    let lin = MacroGeometry::new(box_macro(3, [1.0; 3], 1, [1; 3]).unwrap()).unwrap();
    assert_eq!(lin.jacobian_det_degree().unwrap(), vec![2, 2, 2]);
    let nurbs = MacroGeometry::new(annulus_macro(3, 1.0, 2.0, 1.0, [1; 3]).unwrap()).unwrap();
    assert!(matches!(
        nurbs.jacobian_det_degree(),
        Err(Error::RationalMacro)
    ));
}

#[test]
fn affine_macro_has_constant_det() {
    let a = [[1.2, 0.3, 0.0], [0.1, 0.9, 0.2], [0.0, -0.2, 1.1]];
    let geo = MacroGeometry::new(
        crate::generators::affine_macro(3, a, [0.5, 0.0, 1.0], 2, [2, 1, 1]).unwrap(),
    )
    .unwrap();
    let vals: Vec<f64> = [[0.1, 0.2, 0.3], [0.9, 0.5, 0.7], [0.4, 0.99, 0.01]]
        .iter()
        .map(|x| det(3, &geo.elements()[1].patch.eval(x, 1).unwrap().jac))
        .collect();
    let mean = vals.iter().sum::<f64>() / 3.0;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
    assert!(var < 1e-14);
}

#[test]
fn non_conforming_tile_is_rejected() {
    // a bar touching x = 1 but offset on x = 0
    let bar = box_patch(3, [0.0, 0.1, 0.1], [1.0, 0.4, 0.4], 1, [1; 3]).unwrap();
    let mut pts = bar.points().to_vec();
    for (i, c) in pts.chunks_mut(3).enumerate() {
        if bar.multi_index(i)[0] == 0 {
            c[1] += 0.2;
        }
    }
    let tile = TileGeometry::new(vec![bar.with_points(pts).unwrap()], None).unwrap();
    let err = plain(tile, box_macro(3, [2.0, 1.0, 1.0], 1, [2, 1, 1]).unwrap()).unwrap_err();
    assert!(matches!(err, Error::NonConformingTile(_)));
    assert!(err.to_string().contains("not periodic-conforming"));
}

#[test]
fn json_round_trip() {
    let m = plain(
        cross_tile(2, 2, 1, 0.25, 0.1).unwrap(),
        annulus_macro(2, 1.0, 2.0, 0.0, [2, 2, 1]).unwrap(),
    )
    .unwrap();
    let file = ModelFile::from_model(&m);
    let text = file.to_json().unwrap();
    let back = ModelFile::from_json(&text).unwrap();
    assert_eq!(back, file);
    let m2 = back.build().unwrap();
    assert_eq!(m2.dof_map().n_global, m.dof_map().n_global);
}

#[test]
fn bc_validation() {
    let m = plain(
        solid_tile(2, 1, 1).unwrap(),
        box_macro(2, [1.0; 3], 1, [1; 3]).unwrap(),
    )
    .unwrap();
    let bad = BoundaryConditions {
        dirichlet: vec![Dirichlet {
            face: 0,
            value: [0.0; 3],
            gradient: None,
        }],
        tractions: vec![Traction {
            face: 0,
            value: [1.0, 0.0, 0.0],
        }],
        body_force: [0.0; 3],
    };
    assert!(m.with_bcs(bad).is_err());
    let knots = vec![KnotVector::bezier(1), KnotVector::bezier(1)];
    let inner =
        SplinePatch::new(knots, 2, vec![0.2, 0.2, 0.8, 0.2, 0.2, 0.8, 0.8, 0.8], None).unwrap();
    let m = plain(
        TileGeometry::new(vec![inner], None).unwrap(),
        box_macro(2, [1.0; 3], 1, [1; 3]).unwrap(),
    )
    .unwrap();
    let bcs = BoundaryConditions {
        dirichlet: vec![Dirichlet {
            face: 0,
            value: [0.0; 3],
            gradient: None,
        }],
        ..Default::default()
    };
    assert!(matches!(m.with_bcs(bcs), Err(Error::EmptyDirichlet(1))));
}
