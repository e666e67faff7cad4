use crate::error::{Error, Result};

use super::{face_dir, TileGeometry};

/// Distance under which tile control points are identified.
pub const MERGE_TOL: f64 = 1e-10;

/// Union-find over `0..n`.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so numbering follows first appearance
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Dense class labels in order of first appearance.
    pub fn labels(&mut self) -> (Vec<usize>, usize) {
        let n = self.parent.len();
        let mut map = vec![usize::MAX; n];
        let mut labels = vec![0; n];
        let mut next = 0;
        for i in 0..n {
            let r = self.find(i);
            if map[r] == usize::MAX {
                map[r] = next;
                next += 1;
            }
            labels[i] = map[r];
        }
        (labels, next)
    }
}

/// Merged numbering of the tile's control points.
#[derive(Debug, Clone)]
pub struct TileNumbering {
    pub n_tile: usize,
    /// Per patch: control point -> tile-local index.
    pub tile_local: Vec<Vec<usize>>,
    /// Coordinates of each tile-local node in [0,1]^d.
    pub points: Vec<[f64; 3]>,
    /// Per cube face: sorted tile-local nodes on marked patch faces.
    pub face_nodes: Vec<Vec<usize>>,
}

impl TileNumbering {
    pub fn new(tile: &TileGeometry) -> Self {
        let d = tile.dim();
        let offsets: Vec<usize> = tile
            .patches()
            .iter()
            .scan(0, |acc, p| {
                let o = *acc;
                *acc += p.n_points();
                Some(o)
            })
            .collect();
        let total: usize = tile.patches().iter().map(|p| p.n_points()).sum();
        let mut all = Vec::with_capacity(total);
        let mut owner = Vec::with_capacity(total);
        for (pi, p) in tile.patches().iter().enumerate() {
            for i in 0..p.n_points() {
                all.push(p.point(i));
                owner.push(pi);
            }
        }
        let mut uf = UnionFind::new(total);
        // sort along the first coordinate to limit the pair search
        let mut order: Vec<usize> = (0..total).collect();
        order.sort_by(|&a, &b| all[a][0].total_cmp(&all[b][0]));
        for (s, &i) in order.iter().enumerate() {
            for &j in &order[s + 1..] {
                if all[j][0] - all[i][0] > MERGE_TOL {
                    break;
                }
                if owner[i] != owner[j] && (0..d).all(|k| (all[i][k] - all[j][k]).abs() < MERGE_TOL)
                {
                    uf.union(i, j);
                }
            }
        }
        let (labels, n_tile) = uf.labels();
        let tile_local: Vec<Vec<usize>> = tile
            .patches()
            .iter()
            .enumerate()
            .map(|(pi, p)| (0..p.n_points()).map(|i| labels[offsets[pi] + i]).collect())
            .collect();
        let mut points = vec![[0.0; 3]; n_tile];
        for (g, l) in labels.iter().enumerate() {
            points[*l] = all[g];
        }
        let mut face_nodes = vec![Vec::new(); 2 * d];
        for (pi, marks) in tile.face_markers().iter().enumerate() {
            for (pf, mark) in marks.iter().enumerate() {
                if let Some(f) = *mark {
                    face_nodes[f].extend(
                        tile.patch_face_points(pi, pf)
                            .iter()
                            .map(|&i| tile_local[pi][i]),
                    );
                }
            }
        }
        for f in &mut face_nodes {
            f.sort_unstable();
            f.dedup();
        }
        Self {
            n_tile,
            tile_local,
            points,
            face_nodes,
        }
    }

    /// Pairs `(node on face 2k+1, node on face 2k)` matched by in-face coordinates.
    pub fn periodic_pairs(&self, dir: usize, d: usize) -> Result<Vec<(usize, usize)>> {
        let lo = &self.face_nodes[2 * dir];
        let hi = &self.face_nodes[2 * dir + 1];
        let same = |a: usize, b: usize| {
            (0..d)
                .filter(|&k| k != dir)
                .all(|k| (self.points[a][k] - self.points[b][k]).abs() < MERGE_TOL)
        };
        let mut pairs = Vec::with_capacity(hi.len());
        let mut missing = Vec::new();
        for &a in hi {
            match lo.iter().find(|&&b| same(a, b)) {
                Some(&b) => pairs.push((a, b)),
                None => missing.push(a),
            }
        }
        for &b in lo {
            if !hi.iter().any(|&a| same(a, b)) {
                missing.push(b);
            }
        }
        if !missing.is_empty() {
            let listed: Vec<String> = missing
                .iter()
                .take(10)
                .map(|&i| format!("{:?}", &self.points[i][..d]))
                .collect();
            return Err(Error::NonConformingTile(format!(
                "{} control points on the direction-{} faces have no partner, e.g. {}",
                missing.len(),
                dir + 1,
                listed.join(", ")
            )));
        }
        Ok(pairs)
    }
}

/// Tile-local to global scalar numbering over all macro elements.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_tile: usize,
    /// Per element: tile-local index -> global node.
    pub global: Vec<Vec<usize>>,
    pub n_global: usize,
}

impl DofMap {
    /// `grid` holds the element counts per direction (element index
    /// `e0 + n0 (e1 + n1 e2)`).
    pub fn new(numbering: &TileNumbering, grid: [usize; 3], d: usize) -> Result<Self> {
        let n_el: usize = grid[..d].iter().product();
        let n_t = numbering.n_tile;
        let mut uf = UnionFind::new(n_el * n_t);
        for dir in 0..d {
            if grid[dir] < 2 {
                continue;
            }
            let pairs = numbering.periodic_pairs(dir, d)?;
            for e in 0..n_el {
                let m = unflatten(e, grid, d);
                if m[dir] + 1 >= grid[dir] {
                    continue;
                }
                let mut mn = m;
                mn[dir] += 1;
                let en = flatten(mn, grid, d);
                for &(a, b) in &pairs {
                    uf.union(e * n_t + a, en * n_t + b);
                }
            }
        }
        let (labels, n_global) = uf.labels();
        let global = (0..n_el)
            .map(|e| labels[e * n_t..(e + 1) * n_t].to_vec())
            .collect();
        Ok(Self {
            n_tile: n_t,
            global,
            n_global,
        })
    }
}

pub fn unflatten(e: usize, grid: [usize; 3], d: usize) -> [usize; 3] {
    let mut m = [0; 3];
    let mut rem = e;
    for k in 0..d {
        m[k] = rem % grid[k];
        rem /= grid[k];
    }
    m
}

pub fn flatten(m: [usize; 3], grid: [usize; 3], d: usize) -> usize {
    let mut e = 0;
    let mut stride = 1;
    for k in 0..d {
        e += m[k] * stride;
        stride *= grid[k];
    }
    e
}

/// True when element `m` touches macro face `f`.
pub fn on_macro_face(m: [usize; 3], grid: [usize; 3], f: usize) -> bool {
    let dir = face_dir(f);
    if f.is_multiple_of(2) {
        m[dir] == 0
    } else {
        m[dir] + 1 == grid[dir]
    }
}
