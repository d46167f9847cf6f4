//! Python bindings for the elliptic-systems laboratory: coefficient tensors
//! with their structure checks, meshes and nodal fields, the frozen
//! coefficient solver, and the level-set iteration diagnostics.

// The pymethods expansion triggers useless_conversion on PyErr in pyo3 0.22.
#![allow(clippy::useless_conversion)]

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use divform::analysis as ana;
use divform::coefficients as coef;
use divform::degiorgi;
use divform::error::Error;
use divform::field::DiscreteField;
use divform::mesh::{Ball, Mesh, Region};
use divform::solver;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::DegenerateBox => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Coefficient tensor a^{α,β}_{i,j}(x, y) with structure-condition checks.
#[pyclass(name = "Tensor")]
#[derive(Clone)]
struct PyTensor {
    inner: coef::CoefficientTensor,
}

#[pymethods]
impl PyTensor {
    /// The two-equation, three-dimensional example with staircase bumps.
    #[staticmethod]
    fn example4() -> Self {
        Self {
            inner: coef::CoefficientTensor::example4(coef::ExampleTensorSpec::default()),
        }
    }

    #[staticmethod]
    fn identity(n: usize, components: usize) -> Self {
        Self {
            inner: coef::CoefficientTensor::identity(n, components),
        }
    }

    /// Builds from the JSON spec {"kind": ..., ...}.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: coef::CoefficientTensor::from_json(text).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn components(&self) -> usize {
        self.inner.components()
    }

    /// All N²n² entries at (x, y), (α, β, i, j) row-major.
    fn evaluate(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.evaluate(&x, &y).map_err(to_py_err)
    }

    /// Single entry with 0-based indices.
    fn entry(
        &self,
        alpha: usize,
        beta: usize,
        i: usize,
        j: usize,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> PyResult<f64> {
        self.inner.entry(alpha, beta, i, j, &x, &y).map_err(to_py_err)
    }

    /// Σ a^{α,β}_{i,j}(x, y) ξ^α_i ξ^β_j with ξ row-major (ξ[α·n + i]).
    fn quadratic_form(&self, x: Vec<f64>, y: Vec<f64>, xi: Vec<f64>) -> PyResult<f64> {
        self.inner.quadratic_form(&x, &y, &xi).map_err(to_py_err)
    }

    /// Tensor evaluating at (x, −y); an involution.
    fn reflected(&self) -> Self {
        Self {
            inner: self.inner.reflected(),
        }
    }

    /// Runs the boundedness, ellipticity, and staircase checks over
    /// y ∈ [y_lo, y_hi]^N with `points` samples per axis (anchors injected).
    fn check<'py>(
        &self,
        py: Python<'py>,
        y_lo: f64,
        y_hi: f64,
        points: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let nn = self.inner.components();
        let spec = coef::SampleSpec::default_for(&self.inner).with_y_box(
            vec![y_lo; nn],
            vec![y_hi; nn],
            points,
        );
        let report = coef::check_structure(&self.inner, &spec, &coef::default_l_grid())
            .map_err(to_py_err)?;
        let out = PyDict::new_bound(py);
        out.set_item("c", report.c)?;
        out.set_item("nu", report.nu)?;
        out.set_item("l0", report.l0)?;
        out.set_item("passed_a1", report.passed_a1)?;
        out.set_item("passed_a2", report.passed_a2)?;
        out.set_item("passed_a3", report.passed_a3)?;
        Ok(out)
    }

    /// Left side of the off-diagonal quadratic-form condition.
    fn condition19_lhs(&self, x: Vec<f64>, y: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
        ana::condition19_lhs(&self.inner, &x, &y, &p).map_err(to_py_err)
    }
}

/// Uniform simplicial mesh of an axis-aligned box.
#[pyclass(name = "Mesh")]
#[derive(Clone)]
struct PyMesh {
    inner: Arc<Mesh>,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    fn box_mesh(lower: Vec<f64>, upper: Vec<f64>, cells_per_axis: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(Mesh::box_mesh(&lower, &upper, cells_per_axis).map_err(to_py_err)?),
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn simplex_count(&self) -> usize {
        self.inner.simplex_count()
    }

    fn vertices(&self) -> Vec<Vec<f64>> {
        let n = self.inner.dim();
        (0..self.inner.vertex_count())
            .map(|v| self.inner.vertex(v)[..n].to_vec())
            .collect()
    }

    fn box_volume(&self) -> f64 {
        self.inner.box_volume()
    }
}

fn region_from(center: Option<Vec<f64>>, radius: Option<f64>) -> PyResult<Region> {
    match (center, radius) {
        (None, None) => Ok(Region::Whole),
        (Some(c), Some(r)) => Ok(Region::Ball(Ball::new(&c, r).map_err(to_py_err)?)),
        _ => Err(PyValueError::new_err(
            "center and radius must be given together",
        )),
    }
}

/// Piecewise-linear nodal vector field on a mesh.
#[pyclass(name = "Field")]
#[derive(Clone)]
struct PyField {
    inner: DiscreteField,
}

#[pymethods]
impl PyField {
    #[staticmethod]
    fn zeros(mesh: &PyMesh, components: usize) -> Self {
        Self {
            inner: DiscreteField::zeros(mesh.inner.clone(), components),
        }
    }

    #[staticmethod]
    fn from_values(mesh: &PyMesh, components: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: DiscreteField::from_values(mesh.inner.clone(), components, values)
                .map_err(to_py_err)?,
        })
    }

    /// Samples a Python callable `f(x: list[float]) -> list[float]` at every
    /// vertex.
    #[staticmethod]
    fn interpolate(
        py: Python<'_>,
        mesh: &PyMesh,
        components: usize,
        f: PyObject,
    ) -> PyResult<Self> {
        let m = mesh.inner.clone();
        let n = m.dim();
        let mut values = vec![0.0; m.vertex_count() * components];
        for v in 0..m.vertex_count() {
            let x = m.vertex(v)[..n].to_vec();
            let res: Vec<f64> = f.call1(py, (x,))?.extract(py)?;
            if res.len() != components {
                return Err(PyValueError::new_err(format!(
                    "callable returned {} components, expected {components}",
                    res.len()
                )));
            }
            values[v * components..(v + 1) * components].copy_from_slice(&res);
        }
        Ok(Self {
            inner: DiscreteField::from_values(m, components, values).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn components(&self) -> usize {
        self.inner.components()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn max_value(&self) -> f64 {
        self.inner.max_value()
    }

    fn min_value(&self) -> f64 {
        self.inner.min_value()
    }

    fn interior_sup(&self) -> f64 {
        self.inner.interior_sup()
    }

    /// Σ_α ∫_{{u^α > k} ∩ region} (u^α − k)^q.
    #[pyo3(signature = (k, q, center = None, radius = None))]
    fn excess(
        &self,
        k: f64,
        q: f64,
        center: Option<Vec<f64>>,
        radius: Option<f64>,
    ) -> PyResult<f64> {
        Ok(self.inner.excess(k, &region_from(center, radius)?, q))
    }

    /// Measure of {u^α > k} inside the region.
    #[pyo3(signature = (alpha, k, center = None, radius = None))]
    fn superlevel_measure(
        &self,
        alpha: usize,
        k: f64,
        center: Option<Vec<f64>>,
        radius: Option<f64>,
    ) -> PyResult<f64> {
        Ok(self
            .inner
            .superlevel_measure(alpha, k, &region_from(center, radius)?))
    }

    /// (Σ_α ∫ |Du^α|^p)^{1/p} over the region.
    #[pyo3(signature = (p, center = None, radius = None))]
    fn seminorm(&self, p: f64, center: Option<Vec<f64>>, radius: Option<f64>) -> PyResult<f64> {
        Ok(self.inner.sobolev_seminorm(&region_from(center, radius)?, p))
    }

    /// Excess trace (h, k_h, ρ_h, J_h) along the level/radius schedules with
    /// p = 2 and the fixed Sobolev exponent.
    fn excess_trace(
        &self,
        center: Vec<f64>,
        d: f64,
        base_radius: f64,
        steps: u32,
    ) -> PyResult<Vec<(u32, f64, f64, f64)>> {
        let n = self.inner.mesh().dim();
        let params = ana::ExcessTraceParams::step4(n, d, base_radius, steps);
        let trace = ana::excess_trace(&self.inner, &center, &params).map_err(to_py_err)?;
        Ok(trace
            .entries
            .iter()
            .map(|e| (e.h, e.level, e.radius, e.excess))
            .collect())
    }

    /// Geometric boundedness-level search; returns (upper, lower) certified
    /// levels (None when the search exhausts its candidates).
    #[pyo3(signature = (center, base_radius, tol = 1e-12, min_level = None))]
    fn boundedness_level(
        &self,
        center: Vec<f64>,
        base_radius: f64,
        tol: f64,
        min_level: Option<f64>,
    ) -> PyResult<(Option<f64>, Option<f64>)> {
        let report = ana::boundedness_level(&self.inner, &center, base_radius, tol, min_level)
            .map_err(to_py_err)?;
        Ok((report.upper_level, report.lower_level))
    }

    /// Both sides of the superlevel energy estimate; returns
    /// (lhs, rhs, ratio) with ratio None for x/0.
    fn caccioppoli(
        &self,
        center: Vec<f64>,
        inner_radius: f64,
        outer_radius: f64,
        level: f64,
        c: f64,
        nu: f64,
    ) -> PyResult<(f64, f64, Option<f64>)> {
        let spec = ana::CaccioppoliCheckSpec::new(center, inner_radius, outer_radius, level)
            .map_err(to_py_err)?;
        let constants = ana::CaccioppoliConstants {
            c,
            n: self.inner.mesh().dim(),
            components: self.inner.components(),
            nu,
        };
        let sides = ana::caccioppoli_sides(&self.inner, &spec, &constants).map_err(to_py_err)?;
        Ok((sides.lhs, sides.rhs, sides.ratio))
    }

    /// Largest radius with unit ball volume and unit p*-mass.
    fn admissible_radius(&self, center: Vec<f64>, p_star: f64) -> PyResult<f64> {
        ana::admissible_radius(&self.inner, &center, p_star).map_err(to_py_err)
    }
}

/// Frozen-coefficient solve with a named boundary preset; returns the
/// solution field and a diagnostics dict.
#[pyfunction]
#[pyo3(signature = (tensor, mesh, boundary = "bounded_sine", amplitude = 1.0))]
fn solve<'py>(
    py: Python<'py>,
    tensor: &PyTensor,
    mesh: &PyMesh,
    boundary: &str,
    amplitude: f64,
) -> PyResult<(PyField, Bound<'py, PyDict>)> {
    let preset = match boundary {
        "linear" => solver::BoundaryPreset::Linear,
        "constant" => solver::BoundaryPreset::Constant { value: amplitude },
        "bounded_sine" => solver::BoundaryPreset::BoundedSine { amplitude },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown boundary preset {other:?}"
            )))
        }
    };
    let g = solver::DirichletData::from_preset(preset, tensor.inner.components());
    let result = solver::picard_solve(
        &tensor.inner,
        &mesh.inner,
        &g,
        &solver::PicardConfig::default(),
    )
    .map_err(to_py_err)?;
    let info = PyDict::new_bound(py);
    info.set_item("converged", result.converged)?;
    info.set_item("outer_iters", result.outer_iters)?;
    info.set_item("final_update_norm", result.final_update_norm)?;
    info.set_item("weak_residual", result.final_weak_residual)?;
    Ok((
        PyField {
            inner: result.field,
        },
        info,
    ))
}

/// Self-consistent weak residual of a field under a tensor.
#[pyfunction]
fn weak_residual(tensor: &PyTensor, field: &PyField) -> PyResult<f64> {
    solver::weak_residual(&tensor.inner, field.inner.mesh(), &field.inner).map_err(to_py_err)
}

#[pyfunction]
fn level_at(d: f64, h: u32) -> PyResult<f64> {
    Ok(degiorgi::LevelSchedule::new(d).map_err(to_py_err)?.level_at(h))
}

#[pyfunction]
fn radii_at(base_radius: f64, h: u32) -> PyResult<(f64, f64)> {
    Ok(degiorgi::RadiusSchedule::new(base_radius)
        .map_err(to_py_err)?
        .radii_at(h))
}

#[pyfunction]
fn caccioppoli_constant(c: f64, n: usize, components: usize, nu: f64) -> PyResult<f64> {
    degiorgi::caccioppoli_constant(c, n, components, nu).map_err(to_py_err)
}

#[pyfunction]
fn recursion_threshold(factor: f64, base: f64, exponent: f64) -> PyResult<f64> {
    Ok(degiorgi::RecursionParams::new(factor, base, exponent)
        .map_err(to_py_err)?
        .threshold())
}

/// Equality recursion J_{h+1} = A λ^h J_h^{1+γ}; returns the trace and the
/// divergence index, if any.
#[pyfunction]
fn simulate_recursion(
    factor: f64,
    base: f64,
    exponent: f64,
    j0: f64,
    steps: usize,
) -> PyResult<(Vec<f64>, Option<usize>)> {
    let params = degiorgi::RecursionParams::new(factor, base, exponent).map_err(to_py_err)?;
    let trace = degiorgi::simulate_recursion(&params, j0, steps).map_err(to_py_err)?;
    Ok((trace.values, trace.diverged_at))
}

#[pyfunction]
fn condition19_example_ratio(k: i64) -> PyResult<f64> {
    ana::condition19_example_ratio(k).map_err(to_py_err)
}

#[pyfunction]
fn radial_eval(gamma: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
    let f = ana::RadialField::new(gamma, x.len()).map_err(to_py_err)?;
    f.eval(&x).map_err(to_py_err)
}

/// (sup, first-order seminorm) of x/|x|^γ on the annulus {r < |x| < R}.
#[pyfunction]
fn radial_diagnostics(gamma: f64, n: usize, inner: f64, outer: f64) -> PyResult<(f64, f64)> {
    let f = ana::RadialField::new(gamma, n).map_err(to_py_err)?;
    let d = ana::radial_diagnostics(&f, inner, outer).map_err(to_py_err)?;
    Ok((d.sup, d.seminorm))
}

#[pyfunction]
fn sobolev_exponent(n: usize, p: f64) -> f64 {
    ana::sobolev_exponent(n, p)
}

#[pymodule]
fn divform_py(_py: Python<'_>, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(weak_residual, m)?)?;
    m.add_function(wrap_pyfunction!(level_at, m)?)?;
    m.add_function(wrap_pyfunction!(radii_at, m)?)?;
    m.add_function(wrap_pyfunction!(caccioppoli_constant, m)?)?;
    m.add_function(wrap_pyfunction!(recursion_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_recursion, m)?)?;
    m.add_function(wrap_pyfunction!(condition19_example_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(radial_eval, m)?)?;
    m.add_function(wrap_pyfunction!(radial_diagnostics, m)?)?;
    m.add_function(wrap_pyfunction!(sobolev_exponent, m)?)?;
    Ok(())
}
