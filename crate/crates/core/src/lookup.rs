//! Tile lookup tables: volume moments, the stiffness kernel per interacting
//! pair of tile functions and the load kernel, with an on-disk cache.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::model::{ComposedModel, QuadOrder, TileGeometry, TileQuadrature, TileSpec};
use crate::projection::BernsteinSpace;

const MAGIC: &[u8; 4] = b"MSLT";
const VERSION: u8 = 1;

/// Upper-triangular list of interacting tile-function pairs `(A, B)`,
/// `A <= B`, sorted, with row offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n_tile: usize,
    pairs: Vec<(u32, u32)>,
    offsets: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern of all pairs active together in at least one of `groups`.
    pub fn from_groups<'a>(n_tile: usize, groups: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_tile];
        for g in groups {
            for &a in g {
                for &b in g {
                    if a <= b {
                        rows[a].push(b as u32);
                    }
                }
            }
        }
        let mut pairs = Vec::new();
        let mut offsets = Vec::with_capacity(n_tile + 1);
        offsets.push(0);
        for (a, mut r) in rows.into_iter().enumerate() {
            r.sort_unstable();
            r.dedup();
            pairs.extend(r.into_iter().map(|b| (a as u32, b)));
            offsets.push(pairs.len());
        }
        Self {
            n_tile,
            pairs,
            offsets,
        }
    }

    /// Rebuild from a stored pair list, checking order and bounds.
    pub fn from_pairs(n_tile: usize, pairs: Vec<(u32, u32)>) -> Result<Self> {
        let ok = pairs.iter().all(|&(a, b)| a <= b && (b as usize) < n_tile)
            && pairs.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Cache(
                "pair list is not a sorted upper-triangular pattern".into(),
            ));
        }
        let mut offsets = vec![0; n_tile + 1];
        for &(a, _) in &pairs {
            offsets[a as usize + 1] += 1;
        }
        for i in 0..n_tile {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            n_tile,
            pairs,
            offsets,
        })
    }

    pub fn n_tile(&self) -> usize {
        self.n_tile
    }

    pub fn n_nz(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Position of the pair `{a, b}` in the list.
    pub fn index(&self, a: usize, b: usize) -> Option<usize> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let row = &self.pairs[self.offsets[a]..self.offsets[a + 1]];
        row.binary_search(&(a as u32, b as u32))
            .ok()
            .map(|i| self.offsets[a] + i)
    }
}

/// Pattern from the active functions of every tile knot span.
pub fn build_sparsity(tq: &TileQuadrature) -> SparsityPattern {
    SparsityPattern::from_groups(tq.n_tile, tq.spans.iter().map(|s| s.nodes.as_slice()))
}

/// For every span, the `(a, b, nz)` triples of active-function positions
/// with tile-local indices ordered `nodes[a] <= nodes[b]`.
pub fn span_pair_map(tq: &TileQuadrature, sp: &SparsityPattern) -> Vec<Vec<(usize, usize, usize)>> {
    tq.spans
        .iter()
        .map(|s| {
            let mut out = Vec::new();
            for (a, &ga) in s.nodes.iter().enumerate() {
                for (b, &gb) in s.nodes.iter().enumerate() {
                    if ga < gb || (ga == gb && a == b) {
                        out.push((a, b, sp.index(ga, gb).expect("span pair in pattern")));
                    }
                }
            }
            out
        })
        .collect()
}

/// Identifies a table set: tile content, projection degrees, quadrature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub tile_hash: [u8; 32],
    pub degrees: Vec<usize>,
    pub quad_order: u8,
}

impl CacheKey {
    pub fn new(tile: &TileGeometry, degrees: &[usize], order: QuadOrder) -> Result<Self> {
        Ok(Self {
            tile_hash: tile_hash(tile)?,
            degrees: degrees.to_vec(),
            quad_order: encode_order(order)?,
        })
    }

    pub fn file_name(&self) -> String {
        let hex: String = self.tile_hash.iter().map(|b| format!("{b:02x}")).collect();
        let p: Vec<String> = self.degrees.iter().map(|p| p.to_string()).collect();
        format!("{}_p{}_q{}.mslt", &hex[..16], p.join("-"), self.quad_order)
    }
}

/// SHA-256 of the canonical tile JSON.
pub fn tile_hash(tile: &TileGeometry) -> Result<[u8; 32]> {
    let text = serde_json::to_string(&TileSpec::from_tile(tile))?;
    Ok(Sha256::digest(text.as_bytes()).into())
}

/// One-byte quadrature code: fixed counts as is, `degree + k` as `128 + k`.
pub fn encode_order(order: QuadOrder) -> Result<u8> {
    match order {
        QuadOrder::Fixed(n) if (1..128).contains(&n) => Ok(n as u8),
        QuadOrder::DegreePlus(k) if k < 128 => Ok(128 + k as u8),
        _ => Err(Error::Cache(format!(
            "quadrature order {order:?} cannot be encoded"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTables {
    pub key: CacheKey,
    pub dim: usize,
    pub n_tile: usize,
    pub n_pi: usize,
    pub sparsity: SparsityPattern,
    /// Volume moments `int N_C` over the tile image, length `n_pi`.
    pub volume: Vec<f64>,
    /// Moments premultiplied by the inverse mass matrix.
    pub volume_folded: Vec<f64>,
    /// `n_nz x (n_pi * d * d)`, columns ordered `(C, i, j)`.
    pub stiffness: Vec<f64>,
    /// `n_T x n_pi x (1 + 2d)`: volume slice then one slice per cube face.
    pub load: Vec<f64>,
}

impl LookupTables {
    pub fn n_nz(&self) -> usize {
        self.sparsity.n_nz()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.key.degrees
    }

    pub fn stiffness_cols(&self) -> usize {
        self.n_pi * self.dim * self.dim
    }

    /// Kernel entry for the stored pair `nz`.
    pub fn stiffness_at(&self, nz: usize, c: usize, i: usize, j: usize) -> f64 {
        let d = self.dim;
        self.stiffness[nz * self.stiffness_cols() + (c * d + i) * d + j]
    }

    pub fn load_slots(&self) -> usize {
        1 + 2 * self.dim
    }

    /// Load kernel entry; `slot` 0 is the volume, `1 + f` cube face `f`.
    pub fn load_at(&self, a: usize, c: usize, slot: usize) -> f64 {
        self.load[(a * self.n_pi + c) * self.load_slots() + slot]
    }

    pub fn size_bytes(&self) -> usize {
        8 * (self.volume.len() + self.volume_folded.len() + self.stiffness.len() + self.load.len())
            + 8 * self.n_nz()
    }
}

/// `t^h_C = sum w |det J| N_C`.
pub fn build_volume_table(tq: &TileQuadrature, space: &BernsteinSpace) -> (Vec<f64>, Vec<f64>) {
    let d = tq.dim;
    let mut t = vec![0.0; space.n()];
    for s in &tq.spans {
        for (xi, w) in s.xi.iter().zip(&s.wdet) {
            for (tc, n) in t.iter_mut().zip(space.eval_basis(&xi[..d])) {
                *tc += w * n;
            }
        }
    }
    let mut folded = t.clone();
    space.solve_mass(&mut folded, 1);
    (t, folded)
}

pub fn build_stiffness_table(
    tq: &TileQuadrature,
    space: &BernsteinSpace,
    sp: &SparsityPattern,
) -> Vec<f64> {
    let d = tq.dim;
    let dd = d * d;
    let n_pi = space.n();
    let cols = n_pi * dd;
    let mut table = vec![0.0; sp.n_nz() * cols];
    let maps = span_pair_map(tq, sp);
    for (s, pairs) in tq.spans.iter().zip(&maps) {
        let nq = s.n_points();
        let na = s.nodes.len();
        let np = pairs.len();
        // lhs rows (pair, i, j), columns q
        let mut lhs = vec![0.0; np * dd * nq];
        for (p, &(a, b, _)) in pairs.iter().enumerate() {
            for q in 0..nq {
                let (ga, gb) = (s.grads[q * na + a], s.grads[q * na + b]);
                for i in 0..d {
                    for j in 0..d {
                        lhs[((p * d + i) * d + j) * nq + q] = ga[i] * gb[j];
                    }
                }
            }
        }
        let mut rhs = vec![0.0; nq * n_pi];
        for q in 0..nq {
            for (c, v) in space.eval_basis(&s.xi[q][..d]).into_iter().enumerate() {
                rhs[q * n_pi + c] = s.wdet[q] * v;
            }
        }
        let mut prod = vec![0.0; np * dd * n_pi];
        gemm(&mut prod, &lhs, &rhs, np * dd, nq, n_pi, false);
        for (p, &(_, _, nz)) in pairs.iter().enumerate() {
            let row = &mut table[nz * cols..(nz + 1) * cols];
            for ij in 0..dd {
                let src = &prod[(p * dd + ij) * n_pi..(p * dd + ij + 1) * n_pi];
                for (c, v) in src.iter().enumerate() {
                    row[c * dd + ij] += v;
                }
            }
        }
    }
    table
}

pub fn build_load_table(tq: &TileQuadrature, space: &BernsteinSpace) -> Vec<f64> {
    let d = tq.dim;
    let n_pi = space.n();
    let slots = 1 + 2 * d;
    let mut table = vec![0.0; tq.n_tile * n_pi * slots];
    let mut add = |nodes: &[usize], values: &[f64], xi: &[[f64; 3]], w: &[f64], slot: usize| {
        let na = nodes.len();
        for q in 0..w.len() {
            let nc = space.eval_basis(&xi[q][..d]);
            for (a, &ga) in nodes.iter().enumerate() {
                let r = w[q] * values[q * na + a];
                for (c, n) in nc.iter().enumerate() {
                    table[(ga * n_pi + c) * slots + slot] += r * n;
                }
            }
        }
    };
    for s in &tq.spans {
        add(&s.nodes, &s.values, &s.xi, &s.wdet, 0);
    }
    for (f, faces) in tq.faces.iter().enumerate() {
        for fq in faces {
            add(&fq.nodes, &fq.values, &fq.xi, &fq.wsurf, 1 + f);
        }
    }
    table
}

/// Build every table for `model`'s tile at projection `degrees`.
pub fn build_tables(model: &ComposedModel, space: &BernsteinSpace) -> Result<LookupTables> {
    let tq = model.tile_quadrature()?;
    build_tables_from(model.tile(), &tq, space)
}

pub fn build_tables_from(
    tile: &TileGeometry,
    tq: &TileQuadrature,
    space: &BernsteinSpace,
) -> Result<LookupTables> {
    if space.dim() != tq.dim {
        return Err(Error::DimensionMismatch(format!(
            "space of dimension {} for a {}D tile",
            space.dim(),
            tq.dim
        )));
    }
    let sparsity = build_sparsity(tq);
    let (volume, volume_folded) = build_volume_table(tq, space);
    let stiffness = build_stiffness_table(tq, space, &sparsity);
    let load = build_load_table(tq, space);
    Ok(LookupTables {
        key: CacheKey::new(tile, space.degrees(), tq.order)?,
        dim: tq.dim,
        n_tile: tq.n_tile,
        n_pi: space.n(),
        sparsity,
        volume,
        volume_folded,
        stiffness,
        load,
    })
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(tables: &LookupTables) -> Vec<u8> {
    let mut buf = Vec::with_capacity(tables.size_bytes() + 64);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&tables.key.tile_hash);
    buf.push(tables.dim as u8);
    buf.extend(tables.key.degrees.iter().map(|&p| p as u8));
    buf.push(tables.key.quad_order);
    buf.extend_from_slice(&(tables.n_tile as u32).to_le_bytes());
    buf.extend_from_slice(&(tables.n_pi as u32).to_le_bytes());
    buf.extend_from_slice(&(tables.n_nz() as u64).to_le_bytes());
    for &(a, b) in tables.sparsity.pairs() {
        buf.extend_from_slice(&a.to_le_bytes());
        buf.extend_from_slice(&b.to_le_bytes());
    }
    put_f64s(&mut buf, &tables.volume);
    put_f64s(&mut buf, &tables.volume_folded);
    put_f64s(&mut buf, &tables.stiffness);
    put_f64s(&mut buf, &tables.load);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Cache("table file is truncated".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Cache("table size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(data: &[u8]) -> Result<LookupTables> {
    if data.len() < 4 + 32 {
        return Err(Error::Cache("table file is truncated".into()));
    }
    let (data, digest) = data.split_at(data.len() - 32);
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Cache("not a lookup table file (bad magic)".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Cache(format!(
            "unsupported table file version {version}"
        )));
    }
    let tile_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let dim = r.u8()? as usize;
    if !(2..=3).contains(&dim) {
        return Err(Error::Cache(format!(
            "invalid dimension {dim} in table file"
        )));
    }
    let degrees: Vec<usize> = r.take(dim)?.iter().map(|&p| p as usize).collect();
    let quad_order = r.u8()?;
    let n_tile = r.u32()? as usize;
    let n_pi = r.u32()? as usize;
    let n_nz = r.u64()? as usize;
    if n_pi != degrees.iter().map(|p| p + 1).product::<usize>() {
        return Err(Error::Cache(
            "projection size does not match degrees".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(n_nz.min(data.len() / 8));
    for _ in 0..n_nz {
        pairs.push((r.u32()?, r.u32()?));
    }
    let sparsity = SparsityPattern::from_pairs(n_tile, pairs)?;
    let volume = r.f64s(n_pi)?;
    let volume_folded = r.f64s(n_pi)?;
    let stiffness = r.f64s(n_nz * n_pi * dim * dim)?;
    let load = r.f64s(n_tile * n_pi * (1 + 2 * dim))?;
    if r.pos != data.len() {
        return Err(Error::Cache("trailing bytes in table file".into()));
    }
    if Sha256::digest(data).as_slice() != digest {
        return Err(Error::Cache("table file checksum mismatch".into()));
    }
    Ok(LookupTables {
        key: CacheKey {
            tile_hash,
            degrees,
            quad_order,
        },
        dim,
        n_tile,
        n_pi,
        sparsity,
        volume,
        volume_folded,
        stiffness,
        load,
    })
}

pub fn cache_store(tables: &LookupTables, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&encode(tables))?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Read a table file; with `expected`, a different key is an error.
pub fn cache_load(path: &Path, expected: Option<&CacheKey>) -> Result<LookupTables> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let t = decode(&data)?;
    if let Some(k) = expected {
        if k.tile_hash != t.key.tile_hash {
            return Err(Error::Cache(format!(
                "{}: tile hash mismatch",
                path.display()
            )));
        }
        if k != &t.key {
            return Err(Error::Cache(format!(
                "{}: degrees or quadrature mismatch",
                path.display()
            )));
        }
    }
    Ok(t)
}

/// Where a table set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSource {
    Built,
    Cache,
}

pub fn cache_path(dir: &Path, key: &CacheKey) -> PathBuf {
    dir.join(key.file_name())
}

/// Load the tables from `dir` when present with a matching key, otherwise
/// build them (and store them when a directory is given).
pub fn load_or_build(
    model: &ComposedModel,
    space: &BernsteinSpace,
    dir: Option<&Path>,
) -> Result<(LookupTables, TableSource)> {
    let Some(dir) = dir else {
        return Ok((build_tables(model, space)?, TableSource::Built));
    };
    let key = CacheKey::new(model.tile(), space.degrees(), model.quadrature().tile())?;
    let path = cache_path(dir, &key);
    if path.exists() {
        let t = cache_load(&path, None)?;
        if t.key == key {
            return Ok((t, TableSource::Cache));
        }
    }
    let t = build_tables(model, space)?;
    fs::create_dir_all(dir)?;
    cache_store(&t, &path)?;
    Ok((t, TableSource::Built))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{cross_tile, solid_tile};
    use crate::model::TileNumbering;
    use crate::splines::KnotVector;

    fn quad(tile: &TileGeometry, order: QuadOrder) -> TileQuadrature {
        let num = TileNumbering::new(tile);
        TileQuadrature::build(tile, &num.tile_local, num.n_tile, order).unwrap()
    }

    /// Pairs whose knot supports overlap inside some patch.
    fn brute_pattern(tile: &TileGeometry) -> Vec<(u32, u32)> {
        let num = TileNumbering::new(tile);
        let mut out = std::collections::BTreeSet::new();
        for (pi, p) in tile.patches().iter().enumerate() {
            let supp = |i: usize| -> Vec<(f64, f64)> {
                let m = p.multi_index(i);
                p.knots()
                    .iter()
                    .zip(m)
                    .map(|(kv, mi)| (kv.knots()[mi], kv.knots()[mi + kv.degree() + 1]))
                    .collect()
            };
            for a in 0..p.n_points() {
                for b in 0..p.n_points() {
                    let (sa, sb) = (supp(a), supp(b));
                    if sa.iter().zip(&sb).all(|(x, y)| x.0.max(y.0) < x.1.min(y.1)) {
                        let (ga, gb) = (num.tile_local[pi][a], num.tile_local[pi][b]);
                        out.insert((ga.min(gb) as u32, ga.max(gb) as u32));
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    #[test]
    fn trilinear_single_element_pattern() {
        let tile = solid_tile(3, 1, 1).unwrap();
        let sp = build_sparsity(&quad(&tile, QuadOrder::DegreePlus(1)));
        assert_eq!(sp.n_nz(), 36);
    }

    #[test]
    fn banded_pattern_matches_brute_force() {
        let knots = vec![KnotVector::uniform(2, 4), KnotVector::bezier(1)];
        let p = crate::generators::greville_patch(knots, |x| [x[0], x[1], 0.0]).unwrap();
        let tile = TileGeometry::new(vec![p], None).unwrap();
        let sp = build_sparsity(&quad(&tile, QuadOrder::DegreePlus(1)));
        assert_eq!(sp.pairs(), brute_pattern(&tile).as_slice());
        // each direction-0 row pairs with itself and its two neighbours
        let rows = 6;
        let expected_1d = (0..rows).map(|i| (i + 3).min(rows) - i).sum::<usize>();
        assert_eq!(expected_1d, 15);
        // 24 ordered banded pairs in direction 0 times 4 in direction 1
        assert_eq!(sp.n_nz(), (24 * 4 + 12) / 2);
    }

    #[test]
    fn cross_tile_pattern_matches_brute_force() {
        for d in [2, 3] {
            let tile = cross_tile(d, 2, 1, 0.2, 0.1).unwrap();
            let sp = build_sparsity(&quad(&tile, QuadOrder::DegreePlus(1)));
            assert_eq!(sp.pairs(), brute_pattern(&tile).as_slice());
            for (k, &(a, b)) in sp.pairs().iter().enumerate() {
                assert_eq!(sp.index(a as usize, b as usize), Some(k));
                assert_eq!(sp.index(b as usize, a as usize), Some(k));
            }
        }
    }

    #[test]
    fn identity_tile_volume_moments() {
        let tile = solid_tile(3, 1, 1).unwrap();
        let tq = quad(&tile, QuadOrder::DegreePlus(2));
        for deg in [[0, 0, 0], [1, 2, 3]] {
            let space = BernsteinSpace::new(&deg).unwrap();
            let (t, folded) = build_volume_table(&tq, &space);
            let expect: f64 = deg.iter().map(|&p| 1.0 / (p + 1) as f64).product();
            assert!(t.iter().all(|v| (v - expect).abs() < 1e-14));
            // folding the moments of the unit density gives its coefficients
            assert!(folded.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn cross_tile_volume_is_raw_quadrature() {
        let tile = cross_tile(3, 2, 1, 0.2, 0.2).unwrap();
        let tq = quad(&tile, QuadOrder::DegreePlus(2));
        let raw: f64 = tq.spans.iter().flat_map(|s| s.wdet.iter()).sum();
        let space = BernsteinSpace::new(&[2, 1, 2]).unwrap();
        let (t, _) = build_volume_table(&tq, &space);
        assert!((t.iter().sum::<f64>() - raw).abs() < 1e-13);
        assert!(raw > 0.0 && raw < 1.0);
        let load = build_load_table(&tq, &space);
        let total: f64 = (0..tq.n_tile * space.n()).map(|k| load[k * 7]).sum();
        assert!((total - raw).abs() < 1e-13);
    }

    fn hat(a: usize, x: f64) -> (f64, f64) {
        if a == 0 {
            (1.0 - x, -1.0)
        } else {
            (x, 1.0)
        }
    }

    #[test]
    fn identity_trilinear_kernel_is_textbook() {
        let tile = solid_tile(3, 1, 1).unwrap();
        let num = TileNumbering::new(&tile);
        let tq = quad(&tile, QuadOrder::DegreePlus(1));
        let space = BernsteinSpace::new(&[0, 0, 0]).unwrap();
        let t = build_tables_from(&tile, &tq, &space).unwrap();
        // 1D integrals of hat products: values/derivatives
        let int = |a: usize, b: usize, da: bool, db: bool| -> f64 {
            let g = crate::quadrature::gauss_rule(3).unwrap();
            g.nodes
                .iter()
                .zip(&g.weights)
                .map(|(&x, w)| {
                    let (va, ga) = hat(a, x);
                    let (vb, gb) = hat(b, x);
                    w * if da { ga } else { va } * if db { gb } else { vb }
                })
                .sum()
        };
        for (nz, &(a, b)) in t.sparsity.pairs().iter().enumerate() {
            let ca = num.points[a as usize].map(|v| v.round() as usize);
            let cb = num.points[b as usize].map(|v| v.round() as usize);
            for i in 0..3 {
                for j in 0..3 {
                    let e: f64 = (0..3).map(|k| int(ca[k], cb[k], k == i, k == j)).product();
                    assert!((t.stiffness_at(nz, 0, i, j) - e).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn kernel_rows_sum_to_zero() {
        let tile = cross_tile(3, 2, 1, 0.25, 0.2).unwrap();
        let tq = quad(&tile, QuadOrder::DegreePlus(2));
        let space = BernsteinSpace::new(&[1, 1, 2]).unwrap();
        let t = build_tables_from(&tile, &tq, &space).unwrap();
        let mut sums = vec![0.0; t.n_tile * t.stiffness_cols()];
        let mut scale: f64 = 0.0;
        for (nz, &(a, b)) in t.sparsity.pairs().iter().enumerate() {
            for c in 0..t.n_pi {
                for i in 0..3 {
                    for j in 0..3 {
                        let v = t.stiffness_at(nz, c, i, j);
                        scale = scale.max(v.abs());
                        sums[a as usize * t.stiffness_cols() + (c * 3 + i) * 3 + j] += v;
                        if a != b {
                            sums[b as usize * t.stiffness_cols() + (c * 3 + j) * 3 + i] += v;
                        }
                    }
                }
            }
        }
        assert!(sums.iter().all(|s| s.abs() < 1e-12 * scale));
    }

    #[test]
    fn identity_load_slices() {
        let tile = solid_tile(3, 2, 1).unwrap();
        let num = TileNumbering::new(&tile);
        let tq = quad(&tile, QuadOrder::DegreePlus(1));
        let space = BernsteinSpace::new(&[0, 0, 0]).unwrap();
        let t = build_tables_from(&tile, &tq, &space).unwrap();
        let vol: f64 = (0..t.n_tile).map(|a| t.load_at(a, 0, 0)).sum();
        assert!((vol - 1.0).abs() < 1e-14);
        for f in 0..6 {
            let on_face = &num.face_nodes[f];
            let s: f64 = (0..t.n_tile).map(|a| t.load_at(a, 0, 1 + f)).sum();
            assert!((s - 1.0).abs() < 1e-14);
            for a in 0..t.n_tile {
                if !on_face.contains(&a) {
                    assert_eq!(t.load_at(a, 0, 1 + f), 0.0);
                }
            }
        }
    }

    #[test]
    fn cache_round_trip_and_keys() {
        let dir = tempfile::tempdir().unwrap();
        let tile = cross_tile(2, 2, 1, 0.2, 0.1).unwrap();
        let tq = quad(&tile, QuadOrder::DegreePlus(2));
        let space = BernsteinSpace::new(&[2, 3]).unwrap();
        let t = build_tables_from(&tile, &tq, &space).unwrap();
        let path = dir.path().join("t.mslt");
        cache_store(&t, &path).unwrap();
        let back = cache_load(&path, Some(&t.key)).unwrap();
        assert_eq!(encode(&back), encode(&t));
        assert_eq!(
            back.stiffness
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            t.stiffness.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        let mut moved = tile.patches()[0].points().to_vec();
        moved[4] += 1e-9;
        let mut patches = tile.patches().to_vec();
        patches[0] = patches[0].with_points(moved).unwrap();
        let tile2 = TileGeometry::new(patches, Some(tile.face_markers().to_vec())).unwrap();
        let k2 = CacheKey::new(&tile2, &[2, 3], QuadOrder::DegreePlus(2)).unwrap();
        assert_ne!(k2.tile_hash, t.key.tile_hash);
        assert!(cache_load(&path, Some(&k2))
            .unwrap_err()
            .to_string()
            .contains("hash"));
        let k3 = CacheKey::new(&tile, &[3, 3], QuadOrder::DegreePlus(2)).unwrap();
        assert_ne!(k3.file_name(), t.key.file_name());
        assert!(cache_load(&path, Some(&k3)).is_err());

        let mut bad = encode(&t);
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(cache_load(&path, None)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let good = encode(&t);
        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(cache_load(&path, None).is_err());
        let mut flipped = good.clone();
        flipped[good.len() / 2] ^= 0x10;
        fs::write(&path, &flipped).unwrap();
        assert!(cache_load(&path, None)
            .unwrap_err()
            .to_string()
            .contains("checksum"));
    }
}
