//! Nodal vector fields on simplicial meshes and the level-set functionals
//! built from them: superlevel measures, the excess, and Sobolev seminorms.
//!
//! Superlevel sets use the strict inequality `{u > k}`: a quadrature point
//! where the interpolant equals `k` exactly does not contribute.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, Region};

/// Piecewise-linear vector field given by one value per vertex and component.
///
/// Values are stored vertex-major: `values[v * components + alpha]`.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    mesh: Arc<Mesh>,
    components: usize,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(mesh: Arc<Mesh>, components: usize) -> Self {
        let values = vec![0.0; mesh.vertex_count() * components];
        Self {
            mesh,
            components,
            values,
        }
    }

    pub fn from_values(mesh: Arc<Mesh>, components: usize, values: Vec<f64>) -> Result<Self> {
        let expected = mesh.vertex_count() * components;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "field value vector",
                expected,
                got: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::FieldFormat("field values must be finite".into()));
        }
        Ok(Self {
            mesh,
            components,
            values,
        })
    }

    /// Samples `f` at every vertex.
    pub fn from_fn<F>(mesh: Arc<Mesh>, components: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = mesh.dim();
        let mut values = vec![0.0; mesh.vertex_count() * components];
        let mut buf = vec![0.0; components];
        for v in 0..mesh.vertex_count() {
            f(&mesh.vertex(v)[..n], &mut buf);
            values[v * components..(v + 1) * components].copy_from_slice(&buf);
        }
        Self::from_values(mesh, components, values)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value(&self, vertex: usize, alpha: usize) -> f64 {
        self.values[vertex * self.components + alpha]
    }

    pub fn set_value(&mut self, vertex: usize, alpha: usize, value: f64) {
        self.values[vertex * self.components + alpha] = value;
    }

    /// Interpolated value of component `alpha` at a barycentric point.
    pub fn value_at(&self, simplex: usize, bary: &[f64], alpha: usize) -> f64 {
        let ids = self.mesh.simplex_vertices(simplex);
        let mut u = 0.0;
        for (v, &id) in ids.iter().enumerate() {
            u += bary[v] * self.value(id, alpha);
        }
        u
    }

    /// Constant gradient of component `alpha` on a simplex.
    pub fn gradient_on_simplex(&self, simplex: usize, alpha: usize) -> Point {
        let ids = self.mesh.simplex_vertices(simplex);
        let n = self.mesh.dim();
        let mut g = [0.0; 3];
        for (v, &id) in ids.iter().enumerate() {
            let u = self.value(id, alpha);
            let sg = self.mesh.shape_gradient(simplex, v);
            for d in 0..n {
                g[d] += u * sg[d];
            }
        }
        g
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest |value| over interior (non-boundary) vertices.
    pub fn interior_sup(&self) -> f64 {
        let mut sup: f64 = 0.0;
        for v in 0..self.mesh.vertex_count() {
            if self.mesh.is_boundary_vertex(v) {
                continue;
            }
            for a in 0..self.components {
                sup = sup.max(self.value(v, a).abs());
            }
        }
        sup
    }

    /// Measure of `{u^alpha > k} ∩ region` by indicator quadrature.
    pub fn superlevel_measure(&self, alpha: usize, k: f64, region: &Region) -> f64 {
        self.mesh.integrate(region, |s, _, bary| {
            if self.value_at(s, bary, alpha) > k {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Excess Σ_α ∫_{{u^α > k} ∩ region} (u^α − k)^q dx.
    pub fn excess(&self, k: f64, region: &Region, q: f64) -> f64 {
        self.mesh.integrate(region, |s, _, bary| {
            let mut acc = 0.0;
            for alpha in 0..self.components {
                let u = self.value_at(s, bary, alpha);
                if u > k {
                    acc += (u - k).powf(q);
                }
            }
            acc
        })
    }

    /// (Σ_α ∫_region |Du^α|^p)^{1/p}.
    pub fn sobolev_seminorm(&self, region: &Region, p: f64) -> f64 {
        let total = self.mesh.integrate(region, |s, _, _| {
            let mut acc = 0.0;
            for alpha in 0..self.components {
                let g = self.gradient_on_simplex(s, alpha);
                let norm2: f64 = g.iter().map(|gi| gi * gi).sum();
                acc += norm2.powf(p / 2.0);
            }
            acc
        });
        total.powf(1.0 / p)
    }
}

/// Mesh parameters stored next to a field CSV so the mesh can be rebuilt.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeshSidecar {
    pub n: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells_per_axis: usize,
    pub components: usize,
}

impl MeshSidecar {
    pub fn of(field: &DiscreteField) -> Self {
        let mesh = field.mesh();
        Self {
            n: mesh.dim(),
            lower: mesh.lower().to_vec(),
            upper: mesh.upper().to_vec(),
            cells_per_axis: mesh.cells_per_axis(),
            components: field.components(),
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        Mesh::box_mesh(&self.lower, &self.upper, self.cells_per_axis)
    }
}

/// Writes the field CSV (`x1..xn,u1..uN`, one vertex per row, 17 significant
/// digits) and the JSON sidecar holding the mesh parameters.
pub fn write_field(field: &DiscreteField, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
    let mesh = field.mesh();
    let n = mesh.dim();
    let mut out = String::new();
    for i in 1..=n {
        if i > 1 {
            out.push(',');
        }
        out.push_str(&format!("x{i}"));
    }
    for a in 1..=field.components() {
        out.push_str(&format!(",u{a}"));
    }
    out.push('\n');
    for v in 0..mesh.vertex_count() {
        let p = mesh.vertex(v);
        for (d, coord) in p.iter().take(n).enumerate() {
            if d > 0 {
                out.push(',');
            }
            out.push_str(&crate::report::fmt_f64(*coord));
        }
        for a in 0..field.components() {
            out.push(',');
            out.push_str(&crate::report::fmt_f64(field.value(v, a)));
        }
        out.push('\n');
    }
    std::fs::write(csv_path, out)?;
    let sidecar = MeshSidecar::of(field);
    std::fs::write(sidecar_path, crate::report::to_json_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a field back from its CSV and sidecar; the mesh is regenerated from
/// the sidecar and the CSV coordinates are checked against it.
pub fn read_field(csv_path: &Path, sidecar_path: &Path) -> Result<DiscreteField> {
    let sidecar: MeshSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    let mesh = Arc::new(sidecar.build_mesh()?);
    let n = mesh.dim();
    let ncomp = sidecar.components;

    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::FieldFormat("empty field file".into()))?;
    let expected_cols = n + ncomp;
    if header.split(',').count() != expected_cols {
        return Err(Error::FieldFormat(format!(
            "header has {} columns, expected {expected_cols}",
            header.split(',').count()
        )));
    }

    let mut values = vec![0.0; mesh.vertex_count() * ncomp];
    let mut row = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if row >= mesh.vertex_count() {
            return Err(Error::FieldFormat("more rows than mesh vertices".into()));
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::FieldFormat(format!("bad number {c:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if cols.len() != expected_cols {
            return Err(Error::FieldFormat(format!(
                "row {row} has {} columns, expected {expected_cols}",
                cols.len()
            )));
        }
        let p = mesh.vertex(row);
        for d in 0..n {
            if (cols[d] - p[d]).abs() > 1e-12 * (1.0 + p[d].abs()) {
                return Err(Error::FieldFormat(format!(
                    "row {row}: coordinate {d} is {} but mesh vertex is {}",
                    cols[d], p[d]
                )));
            }
        }
        for a in 0..ncomp {
            values[row * ncomp + a] = cols[n + a];
        }
        row += 1;
    }
    if row != mesh.vertex_count() {
        return Err(Error::FieldFormat(format!(
            "field file has {row} rows, mesh has {} vertices",
            mesh.vertex_count()
        )));
    }
    DiscreteField::from_values(mesh, ncomp, values)
}
