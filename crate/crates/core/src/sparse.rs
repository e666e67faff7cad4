//! Global symmetric stiffness storage: upper-triangular block rows of
//! `d x d` node blocks, scattered from per-element pair blocks.

use std::io::Write;

use crate::error::Result;
use crate::lookup::SparsityPattern;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSymMatrix {
    dim: usize,
    n_nodes: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

impl BlockSymMatrix {
    /// Zero matrix with the node pattern induced by the tile pattern on
    /// every element.
    pub fn from_elements(
        dim: usize,
        n_nodes: usize,
        sparsity: &SparsityPattern,
        global: &[Vec<usize>],
    ) -> Self {
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for g in global {
            for &(a, b) in sparsity.pairs() {
                let (ga, gb) = (g[a as usize], g[b as usize]);
                rows[ga.min(gb)].push(ga.max(gb) as u32);
            }
        }
        let mut row_ptr = Vec::with_capacity(n_nodes + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        let values = vec![0.0; cols.len() * dim * dim];
        Self {
            dim,
            n_nodes,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_dof(&self) -> usize {
        self.n_nodes * self.dim
    }

    pub fn n_blocks(&self) -> usize {
        self.cols.len()
    }

    /// Stored scalars of the lower triangle (Matrix Market symmetric count).
    pub fn n_nz_scalar(&self) -> usize {
        let d = self.dim;
        let diag = (0..self.n_nodes)
            .filter(|&r| self.block_index(r, r).is_some())
            .count();
        (self.n_blocks() - diag) * d * d + diag * d * (d + 1) / 2
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.dim == other.dim && self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn block_index(&self, r: usize, c: usize) -> Option<usize> {
        let row = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
        row.binary_search(&(c as u32))
            .ok()
            .map(|k| self.row_ptr[r] + k)
    }

    /// Add the coupling block between nodes `a` and `b` (`block[k][l]`
    /// couples component `k` of `a` with component `l` of `b`).
    pub fn add_block(&mut self, a: usize, b: usize, block: &[f64]) {
        let d = self.dim;
        let (r, c, transpose) = if a <= b { (a, b, false) } else { (b, a, true) };
        let pos = self.block_index(r, c).expect("block outside the pattern");
        let dst = &mut self.values[pos * d * d..(pos + 1) * d * d];
        for k in 0..d {
            for l in 0..d {
                dst[k * d + l] += if transpose {
                    block[l * d + k]
                } else {
                    block[k * d + l]
                };
            }
        }
    }

    /// Scatter an element's pair blocks (`n_nz x d^2`, tile pattern order)
    /// through the element's tile-to-global node map.
    pub fn scatter_element(
        &mut self,
        sparsity: &SparsityPattern,
        global: &[usize],
        blocks: &[f64],
        stride: usize,
    ) {
        let dd = self.dim * self.dim;
        let mut sym = vec![0.0; dd];
        for (nz, &(a, b)) in sparsity.pairs().iter().enumerate() {
            let (ga, gb) = (global[a as usize], global[b as usize]);
            let blk = &blocks[nz * stride..nz * stride + dd];
            if a != b && ga == gb {
                let d = self.dim;
                for k in 0..d {
                    for l in 0..d {
                        sym[k * d + l] = blk[k * d + l] + blk[l * d + k];
                    }
                }
                self.add_block(ga, ga, &sym);
            } else {
                self.add_block(ga, gb, blk);
            }
        }
    }

    /// Visit every stored upper block as `(row node, col node, block)`.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        let dd = self.dim * self.dim;
        (0..self.n_nodes).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |p| (r, self.cols[p] as usize, &self.values[p * dd..(p + 1) * dd]))
        })
    }

    /// `y = K x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let d = self.dim;
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, c, b) in self.blocks() {
            for k in 0..d {
                for l in 0..d {
                    y[r * d + k] += b[k * d + l] * x[c * d + l];
                    if r != c {
                        y[c * d + l] += b[k * d + l] * x[r * d + k];
                    }
                }
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let d = self.dim;
        let mut diag = vec![0.0; self.n_dof()];
        for r in 0..self.n_nodes {
            if let Some(p) = self.block_index(r, r) {
                for k in 0..d {
                    diag[r * d + k] = self.values[p * d * d + k * d + k];
                }
            }
        }
        diag
    }

    /// Frobenius norm of the full symmetric matrix.
    pub fn frobenius(&self) -> f64 {
        self.blocks()
            .map(|(r, c, b)| b.iter().map(|v| v * v).sum::<f64>() * if r == c { 1.0 } else { 2.0 })
            .sum::<f64>()
            .sqrt()
    }

    /// Frobenius norm of `self - other`; patterns must match.
    pub fn frobenius_diff(&self, other: &Self) -> f64 {
        assert!(self.same_pattern(other));
        self.blocks()
            .zip(other.blocks())
            .map(|((r, c, a), (_, _, b))| {
                a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
                    * if r == c { 1.0 } else { 2.0 }
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Scalar entry `(i, j)` of the full matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        let (ni, nj) = (i / d, j / d);
        let (k, l) = (i % d, j % d);
        if ni <= nj {
            self.block_index(ni, nj)
                .map_or(0.0, |p| self.values[p * d * d + k * d + l])
        } else {
            self.block_index(nj, ni)
                .map_or(0.0, |p| self.values[p * d * d + l * d + k])
        }
    }

    /// Row-major dense copy, for small problems.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n_dof();
        let d = self.dim;
        let mut m = vec![0.0; n * n];
        for (r, c, b) in self.blocks() {
            for k in 0..d {
                for l in 0..d {
                    m[(r * d + k) * n + c * d + l] = b[k * d + l];
                    m[(c * d + l) * n + r * d + k] = b[k * d + l];
                }
            }
        }
        m
    }

    /// Lower-triangle scalar entries `(row, col, value)`, 0-based.
    pub fn lower_entries(&self) -> Vec<(usize, usize, f64)> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.n_nz_scalar());
        for (r, c, b) in self.blocks() {
            for k in 0..d {
                for l in 0..d {
                    if r == c && l > k {
                        continue;
                    }
                    let (i, j) = (r * d + k, c * d + l);
                    out.push((i.max(j), i.min(j), b[k * d + l]));
                }
            }
        }
        out
    }

    /// Matrix Market coordinate export with the symmetric qualifier.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        let entries = self.lower_entries();
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", self.n_dof(), self.n_dof(), entries.len())?;
        for (i, j, v) in entries {
            writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// One real per line, 17 significant digits.
pub fn write_vector<W: Write>(mut w: W, v: &[f64]) -> Result<()> {
    for x in v {
        writeln!(w, "{x:.16e}")?;
    }
    Ok(())
}

/// Parse a symmetric Matrix Market file into full dense storage (tests).
pub fn read_matrix_market_dense(text: &str) -> Option<(usize, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    let head: Vec<usize> = lines
        .next()?
        .split_whitespace()
        .map(|s| s.parse().ok())
        .collect::<Option<_>>()?;
    let n = head[0];
    let mut m = vec![0.0; n * n];
    for l in lines {
        let mut it = l.split_whitespace();
        let i: usize = it.next()?.parse().ok()?;
        let j: usize = it.next()?.parse().ok()?;
        let v: f64 = it.next()?.parse().ok()?;
        m[(i - 1) * n + j - 1] = v;
        m[(j - 1) * n + i - 1] = v;
    }
    Some((n, m))
}
