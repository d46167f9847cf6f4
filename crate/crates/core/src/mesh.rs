//! Structured simplicial meshes on axis-aligned boxes with fixed quadrature.
//!
//! Boxes are split into a uniform grid of squares (two triangles each) or
//! cubes (six tetrahedra each, Kuhn subdivision). Every integral in the crate
//! runs over the same fixed degree-4 quadrature rule per simplex, so that all
//! reported quantities are reproducible bit for bit.

use crate::error::{Error, Result};

/// Internal point storage. 2-d meshes leave the third coordinate at zero.
pub type Point = [f64; 3];

/// Degree-4 rule on the reference triangle (Dunavant, 6 points).
/// Entries: (barycentric coordinates, weight); weights sum to 1.
const TRI_RULE: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.445948490915965;
    const W1: f64 = 0.223381589678011;
    const A2: f64 = 0.091576213509771;
    const W2: f64 = 0.109951743655322;
    [
        ([1.0 - 2.0 * A1, A1, A1], W1),
        ([A1, 1.0 - 2.0 * A1, A1], W1),
        ([A1, A1, 1.0 - 2.0 * A1], W1),
        ([1.0 - 2.0 * A2, A2, A2], W2),
        ([A2, 1.0 - 2.0 * A2, A2], W2),
        ([A2, A2, 1.0 - 2.0 * A2], W2),
    ]
};

/// Degree-4 rule on the reference tetrahedron (Keast, 14 points, positive
/// weights). Entries: (barycentric coordinates, weight); weights sum to 1.
const TET_RULE: [([f64; 4], f64); 14] = {
    const A1: f64 = 0.310_885_919_263_300_6;
    const B1: f64 = 1.0 - 3.0 * A1; // 0.0673422422100983
    const W1: f64 = 0.112_687_925_718_015_3;
    const A2: f64 = 0.092_735_250_310_891_2;
    const B2: f64 = 1.0 - 3.0 * A2; // 0.7217942098904632
    const W2: f64 = 0.073_493_043_116_361_95;
    const A3: f64 = 0.045_503_704_125_649_65;
    const B3: f64 = 0.5 - A3; // 0.4544962958743503
    const W3: f64 = 0.042_546_020_777_081_47;
    [
        ([B1, A1, A1, A1], W1),
        ([A1, B1, A1, A1], W1),
        ([A1, A1, B1, A1], W1),
        ([A1, A1, A1, B1], W1),
        ([B2, A2, A2, A2], W2),
        ([A2, B2, A2, A2], W2),
        ([A2, A2, B2, A2], W2),
        ([A2, A2, A2, B2], W2),
        ([A3, A3, B3, B3], W3),
        ([A3, B3, A3, B3], W3),
        ([A3, B3, B3, A3], W3),
        ([B3, A3, A3, B3], W3),
        ([B3, A3, B3, A3], W3),
        ([B3, B3, A3, A3], W3),
    ]
};

/// Quadrature rule for the mesh dimension: (barycentric coords, weight) pairs.
pub fn quadrature_rule(n: usize) -> &'static [([f64; 4], f64)] {
    // The triangle rule is re-exposed with a padded fourth barycentric slot.
    const TRI_PADDED: [([f64; 4], f64); 6] = {
        let mut out = [([0.0; 4], 0.0); 6];
        let mut i = 0;
        while i < 6 {
            let (b, w) = TRI_RULE[i];
            out[i] = ([b[0], b[1], b[2], 0.0], w);
            i += 1;
        }
        out
    };
    match n {
        2 => &TRI_PADDED,
        3 => &TET_RULE,
        _ => panic!("unsupported dimension {n}"),
    }
}

/// Open ball `B(center, radius)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: &[f64], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            center: pad_point(center),
            radius,
        })
    }

    pub fn contains(&self, x: &Point) -> bool {
        let mut d2 = 0.0;
        for i in 0..3 {
            let d = x[i] - self.center[i];
            d2 += d * d;
        }
        d2 < self.radius * self.radius
    }
}

/// Integration region: the whole mesh or its intersection with an open ball.
#[derive(Debug, Clone, Copy)]
pub enum Region {
    Whole,
    Ball(Ball),
}

pub(crate) fn pad_point(x: &[f64]) -> Point {
    let mut p = [0.0; 3];
    p[..x.len()].copy_from_slice(x);
    p
}

/// Uniform simplicial mesh of an axis-aligned box.
#[derive(Debug, Clone)]
pub struct Mesh {
    n: usize,
    lower: Point,
    upper: Point,
    cells_per_axis: usize,
    vertices: Vec<Point>,
    /// Vertex indices, `n + 1` per simplex, positively oriented.
    simplices: Vec<usize>,
    volumes: Vec<f64>,
    /// Gradients of the barycentric shape functions, `(n + 1) * n` per simplex.
    shape_grads: Vec<f64>,
    boundary: Vec<bool>,
}

impl Mesh {
    /// Builds the uniform box mesh: squares split into 2 triangles (n = 2) or
    /// cubes split into 6 tetrahedra via the Kuhn subdivision (n = 3).
    pub fn box_mesh(lower: &[f64], upper: &[f64], cells_per_axis: usize) -> Result<Self> {
        let n = lower.len();
        if n != 2 && n != 3 {
            return Err(Error::DimensionMismatch {
                context: "mesh dimension must be 2 or 3",
                expected: 2,
                got: n,
            });
        }
        if upper.len() != n {
            return Err(Error::DimensionMismatch {
                context: "box corners",
                expected: n,
                got: upper.len(),
            });
        }
        if cells_per_axis < 1 {
            return Err(Error::InvalidParameter(
                "cells_per_axis must be at least 1".into(),
            ));
        }
        for i in 0..n {
            if !(upper[i] > lower[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::DegenerateBox);
            }
        }

        let m = cells_per_axis;
        let verts_per_axis = m + 1;
        let lower3 = pad_point(lower);
        let upper3 = pad_point(upper);
        let mut h = [0.0; 3];
        for i in 0..n {
            h[i] = (upper3[i] - lower3[i]) / m as f64;
        }

        let vid = |idx: &[usize]| -> usize {
            let mut id = 0;
            for &c in idx.iter().rev() {
                id = id * verts_per_axis + c;
            }
            id
        };

        let nverts = verts_per_axis.pow(n as u32);
        let mut vertices = vec![[0.0; 3]; nverts];
        let mut boundary = vec![false; nverts];
        let mut idx = vec![0usize; n];
        for flat in 0..nverts {
            let mut rem = flat;
            for item in idx.iter_mut() {
                *item = rem % verts_per_axis;
                rem /= verts_per_axis;
            }
            let mut p = [0.0; 3];
            let mut on_boundary = false;
            for i in 0..n {
                p[i] = if idx[i] == m {
                    upper3[i]
                } else {
                    lower3[i] + idx[i] as f64 * h[i]
                };
                if idx[i] == 0 || idx[i] == m {
                    on_boundary = true;
                }
            }
            vertices[flat] = p;
            boundary[flat] = on_boundary;
        }

        let mut simplices = Vec::new();
        if n == 2 {
            for j in 0..m {
                for i in 0..m {
                    let v00 = vid(&[i, j]);
                    let v10 = vid(&[i + 1, j]);
                    let v01 = vid(&[i, j + 1]);
                    let v11 = vid(&[i + 1, j + 1]);
                    simplices.extend_from_slice(&[v00, v10, v11]);
                    simplices.extend_from_slice(&[v00, v11, v01]);
                }
            }
        } else {
            // Kuhn subdivision: one tetrahedron per permutation of the axes,
            // following the edge path from the low corner to the high corner.
            const PERMS: [[usize; 3]; 6] = [
                [0, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            for k in 0..m {
                for j in 0..m {
                    for i in 0..m {
                        let base = [i, j, k];
                        for perm in &PERMS {
                            let mut corner = base;
                            let mut tet = [vid(&corner), 0, 0, 0];
                            for (step, &axis) in perm.iter().enumerate() {
                                corner[axis] += 1;
                                tet[step + 1] = vid(&corner);
                            }
                            simplices.extend_from_slice(&tet);
                        }
                    }
                }
            }
        }

        let mut mesh = Mesh {
            n,
            lower: lower3,
            upper: upper3,
            cells_per_axis: m,
            vertices,
            simplices,
            volumes: Vec::new(),
            shape_grads: Vec::new(),
            boundary,
        };
        mesh.orient_and_precompute()?;
        Ok(mesh)
    }

    /// Orients every simplex positively, then caches volumes and the gradients
    /// of the barycentric shape functions.
    fn orient_and_precompute(&mut self) -> Result<()> {
        let n = self.n;
        let k = n + 1;
        let nsimp = self.simplices.len() / k;
        self.volumes = vec![0.0; nsimp];
        self.shape_grads = vec![0.0; nsimp * k * n];

        let fact = if n == 2 { 2.0 } else { 6.0 };
        for s in 0..nsimp {
            let ids = &mut self.simplices[s * k..(s + 1) * k];
            let det = simplex_det(&self.vertices, ids, n);
            if det < 0.0 {
                ids.swap(k - 2, k - 1);
            }
            let ids = &self.simplices[s * k..(s + 1) * k];
            let det = simplex_det(&self.vertices, ids, n);
            let vol = det / fact;
            if !(vol > 0.0) {
                return Err(Error::Geometry(format!(
                    "simplex {s} has non-positive volume {vol}"
                )));
            }
            self.volumes[s] = vol;

            // Shape gradients: rows of the inverse edge matrix give the
            // gradients of the non-apex shape functions; the apex gradient is
            // minus their sum.
            let p0 = self.vertices[ids[0]];
            let mut edges = nalgebra::DMatrix::<f64>::zeros(n, n);
            for c in 0..n {
                let pv = self.vertices[ids[c + 1]];
                for r in 0..n {
                    edges[(r, c)] = pv[r] - p0[r];
                }
            }
            let inv = edges.try_inverse().ok_or_else(|| {
                Error::Geometry(format!("simplex {s} has a singular edge matrix"))
            })?;
            let base = s * k * n;
            for v in 1..k {
                for d in 0..n {
                    let g = inv[(v - 1, d)];
                    self.shape_grads[base + v * n + d] = g;
                    self.shape_grads[base + d] -= g;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.n]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.n]
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn simplex_count(&self) -> usize {
        self.volumes.len()
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn simplex_vertices(&self, s: usize) -> &[usize] {
        let k = self.n + 1;
        &self.simplices[s * k..(s + 1) * k]
    }

    pub fn simplex_volume(&self, s: usize) -> f64 {
        self.volumes[s]
    }

    /// Gradient of the `v`-th barycentric shape function on simplex `s`.
    pub fn shape_gradient(&self, s: usize, v: usize) -> &[f64] {
        let k = self.n + 1;
        let base = (s * k + v) * self.n;
        &self.shape_grads[base..base + self.n]
    }

    /// Edge length of the underlying grid (shortest axis step).
    pub fn grid_spacing(&self) -> f64 {
        let m = self.cells_per_axis as f64;
        (0..self.n)
            .map(|i| (self.upper[i] - self.lower[i]) / m)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn box_volume(&self) -> f64 {
        (0..self.n).map(|i| self.upper[i] - self.lower[i]).product()
    }

    /// Physical coordinates of a barycentric point inside simplex `s`.
    pub fn point_in_simplex(&self, s: usize, bary: &[f64]) -> Point {
        let ids = self.simplex_vertices(s);
        let mut x = [0.0; 3];
        for (v, &id) in ids.iter().enumerate() {
            let p = self.vertices[id];
            for d in 0..self.n {
                x[d] += bary[v] * p[d];
            }
        }
        x
    }

    /// Whether the closed ball fits inside the mesh box (up to `tol`).
    pub fn contains_ball(&self, ball: &Ball, tol: f64) -> bool {
        for i in 0..self.n {
            if ball.center[i] - ball.radius < self.lower[i] - tol
                || ball.center[i] + ball.radius > self.upper[i] + tol
            {
                return false;
            }
        }
        true
    }

    /// Quadrature of `f(simplex, x, barycentric)` over the region.
    ///
    /// Ball regions are realized by evaluating the indicator at each
    /// quadrature point, which captures the interface to O(h) accuracy.
    pub fn integrate<F>(&self, region: &Region, mut f: F) -> f64
    where
        F: FnMut(usize, &Point, &[f64]) -> f64,
    {
        let rule = quadrature_rule(self.n);
        let k = self.n + 1;
        let mut total = 0.0;
        for s in 0..self.simplex_count() {
            if let Region::Ball(ball) = region {
                if self.simplex_outside_ball(s, ball) {
                    continue;
                }
            }
            let vol = self.volumes[s];
            let mut acc = 0.0;
            for (bary, w) in rule {
                let x = self.point_in_simplex(s, &bary[..k]);
                if let Region::Ball(ball) = region {
                    if !ball.contains(&x) {
                        continue;
                    }
                }
                acc += w * f(s, &x, &bary[..k]);
            }
            total += vol * acc;
        }
        total
    }

    /// Cheap bounding test: every vertex farther from the center than
    /// radius + diameter means no quadrature point can be inside.
    fn simplex_outside_ball(&self, s: usize, ball: &Ball) -> bool {
        let ids = self.simplex_vertices(s);
        let p0 = self.vertices[ids[0]];
        let mut d2 = 0.0;
        for i in 0..self.n {
            let d = p0[i] - ball.center[i];
            d2 += d * d;
        }
        let diam = self.grid_spacing() * 2.0 * (self.n as f64).sqrt();
        let reach = ball.radius + diam;
        d2 > reach * reach
    }
}

fn simplex_det(vertices: &[Point], ids: &[usize], n: usize) -> f64 {
    let p0 = vertices[ids[0]];
    if n == 2 {
        let a = vertices[ids[1]];
        let b = vertices[ids[2]];
        (a[0] - p0[0]) * (b[1] - p0[1]) - (a[1] - p0[1]) * (b[0] - p0[0])
    } else {
        let a = vertices[ids[1]];
        let b = vertices[ids[2]];
        let c = vertices[ids[3]];
        let u = [a[0] - p0[0], a[1] - p0[1], a[2] - p0[2]];
        let v = [b[0] - p0[0], b[1] - p0[1], b[2] - p0[2]];
        let w = [c[0] - p0[0], c[1] - p0[1], c[2] - p0[2]];
        u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
            + u[2] * (v[0] * w[1] - v[1] * w[0])
    }
}
