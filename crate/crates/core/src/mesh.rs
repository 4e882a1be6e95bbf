//! Uniform triangulations of the unit square.
//!
//! Every grid cell is cut by the same diagonal, by default the one from its
//! lower-left to its upper-right corner. With a fixed orientation a mesh with
//! `k * m` subdivisions refines the one with `m`, so the coarse P1 space is a
//! subspace of the fine.

use std::fmt::Write as _;

use crate::error::{PnpError, Result};

/// Locations closer than this (in cell-local units) to an edge count as on it.
const LOCATE_EPS: f64 = 1e-12;

/// Which diagonal cuts each grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Diagonal {
    /// Lower-left to upper-right.
    #[default]
    Main,
    /// Lower-right to upper-left.
    Anti,
}

impl Diagonal {
    pub fn as_str(&self) -> &'static str {
        match self {
            Diagonal::Main => "main",
            Diagonal::Anti => "anti",
        }
    }
}

impl std::str::FromStr for Diagonal {
    type Err = PnpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Diagonal::Main),
            "anti" => Ok(Diagonal::Anti),
            other => Err(PnpError::InvalidArgument(format!(
                "unknown diagonal `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    m: usize,
    diagonal: Diagonal,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
}

impl Mesh {
    /// Builds the uniform mesh with `m` subdivisions per axis.
    ///
    /// Nodes are numbered lexicographically with `x` running fastest; cell
    /// `(i, j)` yields triangles `2(i + jm)` = (ll, lr, ur) and
    /// `2(i + jm) + 1` = (ll, ur, ul).
    pub fn uniform(m: usize) -> Result<Self> {
        Mesh::with_diagonal(m, Diagonal::Main)
    }

    /// Like [`Mesh::uniform`] but with a chosen cell diagonal. For
    /// [`Diagonal::Anti`] the lower triangle is (ll, lr, ul) and the upper one
    /// (lr, ur, ul).
    pub fn with_diagonal(m: usize, diagonal: Diagonal) -> Result<Self> {
        if m == 0 {
            return Err(PnpError::invalid("mesh needs at least one subdivision"));
        }
        let n1 = m + 1;
        let mf = m as f64;
        let mut nodes = Vec::with_capacity(n1 * n1);
        let mut boundary = Vec::with_capacity(n1 * n1);
        for j in 0..n1 {
            for i in 0..n1 {
                nodes.push([i as f64 / mf, j as f64 / mf]);
                boundary.push(i == 0 || j == 0 || i == m || j == m);
            }
        }
        let mut triangles = Vec::with_capacity(2 * m * m);
        for j in 0..m {
            for i in 0..m {
                let ll = i + j * n1;
                let lr = ll + 1;
                let ul = ll + n1;
                let ur = ul + 1;
                match diagonal {
                    Diagonal::Main => {
                        triangles.push([ll, lr, ur]);
                        triangles.push([ll, ur, ul]);
                    }
                    Diagonal::Anti => {
                        triangles.push([ll, lr, ul]);
                        triangles.push([lr, ur, ul]);
                    }
                }
            }
        }
        Ok(Mesh {
            m,
            diagonal,
            nodes,
            triangles,
            boundary,
        })
    }

    /// Subdivisions per axis.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn diagonal(&self) -> Diagonal {
        self.diagonal
    }

    /// Mesh size `1/m`.
    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> [f64; 2] {
        self.nodes[k]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.boundary[k]
    }

    /// Sorted indices of the nodes on the boundary of the square (`4m` of them).
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&k| self.boundary[k])
            .collect()
    }

    pub fn vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area of triangle `t`; positive for counterclockwise ordering.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Index of the lowest-numbered triangle whose closed hull contains `p`.
    ///
    /// Only the (at most four) cells touching `p` are inspected.
    pub fn locate(&self, p: [f64; 2]) -> Result<usize> {
        let [x, y] = p;
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(PnpError::OutOfDomain { x, y });
        }
        let mf = self.m as f64;
        let (u, v) = (x * mf, y * mf);
        let cells = |s: f64| {
            let lo = ((s - LOCATE_EPS).floor().max(0.0) as usize).min(self.m - 1);
            let hi = ((s + LOCATE_EPS).floor().max(0.0) as usize).min(self.m - 1);
            lo..=hi
        };
        let mut best = usize::MAX;
        for cj in cells(v) {
            for ci in cells(u) {
                let dx = u - ci as f64;
                let dy = v - cj as f64;
                let base = 2 * (ci + cj * self.m);
                // signed distance from the cell diagonal, negative below it
                let side = match self.diagonal {
                    Diagonal::Main => dy - dx,
                    Diagonal::Anti => dx + dy - 1.0,
                };
                if side <= LOCATE_EPS {
                    best = best.min(base);
                } else {
                    best = best.min(base + 1);
                }
            }
        }
        debug_assert!(best != usize::MAX);
        Ok(best)
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.vertices(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Plain-text dump: `m <m>`, one `v x y` line per node, one `t i j k` line
    /// per triangle.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "m {}", self.m).unwrap();
        for [x, y] in &self.nodes {
            writeln!(out, "v {x} {y}").unwrap();
        }
        for [a, b, c] in &self.triangles {
            writeln!(out, "t {a} {b} {c}").unwrap();
        }
        out
    }
}
