//! Structured simplicial meshes of the unit interval and unit square,
//! plus the uniform sub-simplex subdivisions used by the vertex
//! quadrature rule.
//!
//! Only structured meshes are supported: every mesh is either a uniform
//! partition of (0,1) or a uniform triangulation of (0,1)^2 where each
//! grid cell is split by the lower-left to upper-right diagonal. Node
//! ordering is lexicographic by (x2, x1) grid index, so meshes are
//! reproducible bit-for-bit.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Point<T> = [T; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshKind {
    /// Uniform partition of (0,1) into `m` intervals.
    Interval(usize),
    /// Uniform triangulation of (0,1)^2 with `m` cells per side.
    Square(usize),
}

#[derive(Debug, Clone)]
pub struct Mesh<T> {
    dim: usize,
    kind: MeshKind,
    nodes: Vec<Point<T>>,
    /// For `dim == 1` only the first two entries of each element are used.
    elements: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    h: T,
}

impl<T: Real> Mesh<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[Point<T>] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point<T> {
        self.nodes[i]
    }

    /// Vertex indices of element `k` (length `dim + 1`).
    pub fn element(&self, k: usize) -> &[usize] {
        &self.elements[k][..self.dim + 1]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.boundary[i]).collect()
    }

    /// Maximum element diameter.
    pub fn h(&self) -> T {
        self.h
    }

    pub fn element_measure(&self, k: usize) -> T {
        let e = self.element(k);
        match self.dim {
            1 => (self.nodes[e[1]][0] - self.nodes[e[0]][0]).abs(),
            _ => {
                let [a, b, c] = [self.nodes[e[0]], self.nodes[e[1]], self.nodes[e[2]]];
                let det =
                    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                det.abs() / T::of(2.0)
            }
        }
    }

    pub fn element_diameter(&self, k: usize) -> T {
        let e = self.element(k);
        let mut d = T::zero();
        for i in 0..e.len() {
            for j in (i + 1)..e.len() {
                d = d.max(dist(self.nodes[e[i]], self.nodes[e[j]]));
            }
        }
        d
    }

    /// Index of the element containing `x` (points outside the domain
    /// clamp to the nearest cell). Constant time on these structured
    /// meshes.
    pub fn locate(&self, x: &Point<T>) -> usize {
        match self.kind {
            MeshKind::Interval(m) => {
                let t = (x[0].as_f64() * m as f64).floor().max(0.0) as usize;
                t.min(m - 1)
            }
            MeshKind::Square(m) => {
                let fx = x[0].as_f64() * m as f64;
                let fy = x[1].as_f64() * m as f64;
                let cx = (fx.floor().max(0.0) as usize).min(m - 1);
                let cy = (fy.floor().max(0.0) as usize).min(m - 1);
                let lx = fx - cx as f64;
                let ly = fy - cy as f64;
                // Cells are split by the lower-left to upper-right
                // diagonal; the lower triangle comes first.
                2 * (cy * m + cx) + usize::from(ly > lx)
            }
        }
    }

    pub fn barycenter(&self, k: usize) -> Point<T> {
        let e = self.element(k);
        let mut c = [T::zero(); 2];
        for &v in e {
            c[0] += self.nodes[v][0];
            c[1] += self.nodes[v][1];
        }
        let n = T::of((self.dim + 1) as f64);
        [c[0] / n, c[1] / n]
    }

    /// Constant gradients of the P1 basis functions on element `k`,
    /// ordered like the element's vertices.
    pub fn basis_gradients(&self, k: usize) -> [[T; 2]; 3] {
        let e = self.element(k);
        match self.dim {
            1 => {
                let len = self.nodes[e[1]][0] - self.nodes[e[0]][0];
                [
                    [-T::one() / len, T::zero()],
                    [T::one() / len, T::zero()],
                    [T::zero(); 2],
                ]
            }
            _ => {
                let [a, b, c] = [self.nodes[e[0]], self.nodes[e[1]], self.nodes[e[2]]];
                let det2 =
                    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                [
                    [(b[1] - c[1]) / det2, (c[0] - b[0]) / det2],
                    [(c[1] - a[1]) / det2, (a[0] - c[0]) / det2],
                    [(a[1] - b[1]) / det2, (b[0] - a[0]) / det2],
                ]
            }
        }
    }

    /// Barycentric coordinates of `x` with respect to element `k`.
    pub fn barycentric(&self, k: usize, x: &Point<T>) -> [T; 3] {
        let e = self.element(k);
        match self.dim {
            1 => {
                let x0 = self.nodes[e[0]][0];
                let x1 = self.nodes[e[1]][0];
                let t = (x[0] - x0) / (x1 - x0);
                [T::one() - t, t, T::zero()]
            }
            _ => {
                let grads = self.basis_gradients(k);
                let mut lam = [T::zero(); 3];
                for i in 0..3 {
                    let p = self.nodes[e[i]];
                    lam[i] = T::one()
                        + grads[i][0] * (x[0] - p[0])
                        + grads[i][1] * (x[1] - p[1]);
                }
                lam
            }
        }
    }

    /// Uniform subdivision of element `k` into `2^{d n}` sub-simplexes.
    pub fn subdivide_element(&self, k: usize, level: u32) -> Result<SubSimplexSet<T>> {
        if k >= self.elements.len() {
            return Err(Error::invalid(format!(
                "element index {k} out of range ({} elements)",
                self.elements.len()
            )));
        }
        let e = self.element(k);
        let verts: Vec<Point<T>> = e.iter().map(|&v| self.nodes[v]).collect();
        let mut children = vec![simplex_from(&verts)];
        for _ in 0..level {
            let mut next = Vec::with_capacity(children.len() * (1 << self.dim));
            for child in &children {
                split_simplex(self.dim, child, &mut next);
            }
            children = next;
        }
        let child_measure =
            self.element_measure(k) / T::of((1u64 << (self.dim as u32 * level)) as f64);
        Ok(SubSimplexSet {
            parent: k,
            level,
            child_measure,
            children,
        })
    }

    /// CSV export of `nodes.csv` and `elements.csv` into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut nf = std::fs::File::create(dir.join("nodes.csv"))?;
        if self.dim == 1 {
            writeln!(nf, "index,x1")?;
            for (i, p) in self.nodes.iter().enumerate() {
                writeln!(nf, "{},{}", i, fmt(p[0]))?;
            }
        } else {
            writeln!(nf, "index,x1,x2")?;
            for (i, p) in self.nodes.iter().enumerate() {
                writeln!(nf, "{},{},{}", i, fmt(p[0]), fmt(p[1]))?;
            }
        }
        let mut ef = std::fs::File::create(dir.join("elements.csv"))?;
        if self.dim == 1 {
            writeln!(ef, "index,v0,v1")?;
            for (k, e) in self.elements.iter().enumerate() {
                writeln!(ef, "{},{},{}", k, e[0], e[1])?;
            }
        } else {
            writeln!(ef, "index,v0,v1,v2")?;
            for (k, e) in self.elements.iter().enumerate() {
                writeln!(ef, "{},{},{},{}", k, e[0], e[1], e[2])?;
            }
        }
        Ok(())
    }
}

fn fmt<T: Real>(x: T) -> String {
    format!("{:.17e}", x.as_f64())
}

fn dist<T: Real>(a: Point<T>, b: Point<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

fn simplex_from<T: Real>(verts: &[Point<T>]) -> [Point<T>; 3] {
    let mut s = [[T::zero(); 2]; 3];
    for (i, v) in verts.iter().enumerate() {
        s[i] = *v;
    }
    s
}

fn midpoint<T: Real>(a: Point<T>, b: Point<T>) -> Point<T> {
    let half = T::of(0.5);
    [(a[0] + b[0]) * half, (a[1] + b[1]) * half]
}

fn split_simplex<T: Real>(dim: usize, s: &[Point<T>; 3], out: &mut Vec<[Point<T>; 3]>) {
    if dim == 1 {
        let m = midpoint(s[0], s[1]);
        out.push([s[0], m, [T::zero(); 2]]);
        out.push([m, s[1], [T::zero(); 2]]);
    } else {
        let m01 = midpoint(s[0], s[1]);
        let m12 = midpoint(s[1], s[2]);
        let m02 = midpoint(s[0], s[2]);
        out.push([s[0], m01, m02]);
        out.push([m01, s[1], m12]);
        out.push([m02, m12, s[2]]);
        out.push([m01, m12, m02]);
    }
}

/// Uniform sub-simplex subdivision of one element.
#[derive(Debug, Clone)]
pub struct SubSimplexSet<T> {
    pub parent: usize,
    pub level: u32,
    pub child_measure: T,
    /// Each child as `d + 1` vertex coordinates.
    pub children: Vec<[Point<T>; 3]>,
}

pub fn unit_interval_mesh<T: Real>(m: usize) -> Result<Mesh<T>> {
    if m == 0 {
        return Err(Error::invalid("interval mesh requires m >= 1"));
    }
    let mf = T::of(m as f64);
    let nodes: Vec<Point<T>> = (0..=m)
        .map(|i| [T::of(i as f64) / mf, T::zero()])
        .collect();
    let elements: Vec<[usize; 3]> = (0..m).map(|i| [i, i + 1, usize::MAX]).collect();
    let boundary: Vec<bool> = (0..=m).map(|i| i == 0 || i == m).collect();
    Ok(Mesh {
        dim: 1,
        kind: MeshKind::Interval(m),
        nodes,
        elements,
        boundary,
        h: T::one() / mf,
    })
}

pub fn unit_square_mesh<T: Real>(m: usize) -> Result<Mesh<T>> {
    if m == 0 {
        return Err(Error::invalid("square mesh requires m >= 1"));
    }
    let mf = T::of(m as f64);
    let mut nodes = Vec::with_capacity((m + 1) * (m + 1));
    let mut boundary = Vec::with_capacity((m + 1) * (m + 1));
    for iy in 0..=m {
        for ix in 0..=m {
            nodes.push([T::of(ix as f64) / mf, T::of(iy as f64) / mf]);
            boundary.push(ix == 0 || ix == m || iy == 0 || iy == m);
        }
    }
    let idx = |ix: usize, iy: usize| iy * (m + 1) + ix;
    let mut elements = Vec::with_capacity(2 * m * m);
    for iy in 0..m {
        for ix in 0..m {
            // Cell split by the lower-left to upper-right diagonal.
            elements.push([idx(ix, iy), idx(ix + 1, iy), idx(ix + 1, iy + 1)]);
            elements.push([idx(ix, iy), idx(ix + 1, iy + 1), idx(ix, iy + 1)]);
        }
    }
    Ok(Mesh {
        dim: 2,
        kind: MeshKind::Square(m),
        nodes,
        elements,
        boundary,
        h: T::of(2.0).sqrt() / mf,
    })
}

/// Uniform refinement: each interval splits in two, each triangle into
/// four congruent children. Parent node positions are preserved.
pub fn refine_uniform<T: Real>(mesh: &Mesh<T>) -> Mesh<T> {
    match mesh.kind {
        MeshKind::Interval(m) => unit_interval_mesh(2 * m).expect("m >= 1"),
        MeshKind::Square(m) => unit_square_mesh(2 * m).expect("m >= 1"),
    }
}

/// Index map from coarse nodes to the coinciding fine nodes, for meshes
/// related by `refine_uniform`.
pub fn nested_node_map<T: Real>(fine: &Mesh<T>, coarse: &Mesh<T>) -> Result<Vec<usize>> {
    let map: Vec<usize> = match (coarse.kind, fine.kind) {
        (MeshKind::Interval(mc), MeshKind::Interval(mf)) if mf % mc == 0 => {
            let r = mf / mc;
            (0..=mc).map(|i| r * i).collect()
        }
        (MeshKind::Square(mc), MeshKind::Square(mf)) if mf % mc == 0 => {
            let r = mf / mc;
            let mut map = Vec::with_capacity((mc + 1) * (mc + 1));
            for iy in 0..=mc {
                for ix in 0..=mc {
                    map.push(r * iy * (mf + 1) + r * ix);
                }
            }
            map
        }
        _ => return Err(Error::invalid("meshes are not nested")),
    };
    let tol = T::of(1e-12);
    for (c, &f) in map.iter().enumerate() {
        if dist(coarse.node(c), fine.node(f)) > tol {
            return Err(Error::invalid("meshes are not nested"));
        }
    }
    Ok(map)
}
