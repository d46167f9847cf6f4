//! Coefficient tensors a^{α,β}_{i,j}(x, y) for divergence-form systems and
//! sample-based certification of the structure conditions:
//!
//! * boundedness of all entries (certified constant `c`),
//! * ellipticity of the quadratic form (certified constant `nu`, via the
//!   smallest eigenvalue of the symmetrized flattened matrix),
//! * the staircase support condition on off-diagonal entries (threshold `L0`):
//!   for every L ≥ L0 and α ≠ β, a nonzero entry with y^α > L forces y^β > L,
//!   and a nonzero entry with y^α < −L forces y^β < −L.
//!
//! Checks are deterministic grid scans over a stated (x, y) box; reports
//! record the sampled box rather than claiming a global bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the two-component example tensor (n = 3, N = 2) whose
/// off-diagonal entries are bump functions pinned to staircase anchors.
///
/// `b(y) = b_peak · max(0, 1 − dist(y, S_b)/bump_radius)` with anchors
/// `S_b = {(0,0)} ∪ {(k, k+1) : k ≥ 2}`, and `w` likewise on
/// `S_w = {(0,0)} ∪ {(k+1, k) : k ≥ 2}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ExampleTensorSpec {
    #[serde(default = "default_bump_radius")]
    pub bump_radius: f64,
    #[serde(default = "default_b_peak")]
    pub b_peak: f64,
    #[serde(default = "default_w_peak")]
    pub w_peak: f64,
}

fn default_bump_radius() -> f64 {
    0.25
}
fn default_b_peak() -> f64 {
    2.0
}
fn default_w_peak() -> f64 {
    -10.0
}

impl Default for ExampleTensorSpec {
    fn default() -> Self {
        Self {
            bump_radius: default_bump_radius(),
            b_peak: default_b_peak(),
            w_peak: default_w_peak(),
        }
    }
}

impl ExampleTensorSpec {
    /// Distance from `y` to the anchor set of `b` (upper staircase).
    fn dist_to_b_anchors(&self, y1: f64, y2: f64) -> f64 {
        // Nearest line anchor (k, k+1): minimizes (y1−k)² + (y2−k−1)².
        let k_star = (y1 + y2 - 1.0) / 2.0;
        let mut best = (y1 * y1 + y2 * y2).sqrt(); // anchor (0, 0)
        for k in [k_star.floor(), k_star.ceil()] {
            let k = k.max(2.0);
            let d = ((y1 - k).powi(2) + (y2 - k - 1.0).powi(2)).sqrt();
            best = best.min(d);
        }
        best
    }

    /// Distance from `y` to the anchor set of `w` (lower staircase).
    fn dist_to_w_anchors(&self, y1: f64, y2: f64) -> f64 {
        let k_star = (y1 + y2 - 1.0) / 2.0;
        let mut best = (y1 * y1 + y2 * y2).sqrt();
        for k in [k_star.floor(), k_star.ceil()] {
            let k = k.max(2.0);
            let d = ((y1 - k - 1.0).powi(2) + (y2 - k).powi(2)).sqrt();
            best = best.min(d);
        }
        best
    }

    pub fn b(&self, y: &[f64]) -> f64 {
        let d = self.dist_to_b_anchors(y[0], y[1]);
        self.b_peak * (1.0 - d / self.bump_radius).max(0.0)
    }

    pub fn w(&self, y: &[f64]) -> f64 {
        let d = self.dist_to_w_anchors(y[0], y[1]);
        self.w_peak * (1.0 - d / self.bump_radius).max(0.0)
    }

    /// Anchor points of both bump families lying inside the y box, used to
    /// seed sample grids with the exact extremes.
    pub fn anchors_in_box(&self, lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let inside = |p: &[f64; 2]| {
            p[0] >= lower[0] && p[0] <= upper[0] && p[1] >= lower[1] && p[1] <= upper[1]
        };
        if inside(&[0.0, 0.0]) {
            out.push(vec![0.0, 0.0]);
        }
        let k_max = upper[0].max(upper[1]).floor() as i64;
        for k in 2..=k_max {
            let kb = [k as f64, k as f64 + 1.0];
            if inside(&kb) {
                out.push(kb.to_vec());
            }
            let kw = [k as f64 + 1.0, k as f64];
            if inside(&kw) {
                out.push(kw.to_vec());
            }
        }
        out
    }
}

/// Tensor families understood by the laboratory. The JSON form is
/// `{"kind": "example4" | "diagonal" | "constant_blocks", ...}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TensorKind {
    /// Block-diagonal with constant diagonal matrices: entry
    /// (α, α, i, i) = `diag[α * n + i]`, all other entries zero.
    Diagonal {
        n: usize,
        components: usize,
        diag: Vec<f64>,
    },
    /// Arbitrary constant entries, (α, β, i, j) row-major, length N²n².
    ConstantBlocks {
        n: usize,
        components: usize,
        entries: Vec<f64>,
    },
    /// The two-equation, three-dimensional example with staircase bumps.
    Example4(ExampleTensorSpec),
}

/// Evaluator for a^{α,β}_{i,j}(x, y): N² blocks of n × n entries.
///
/// Indices are 0-based internally; entry (α, β, i, j) lives at
/// `((α·N + β)·n + i)·n + j` in the flattened entry array.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoefficientTensor {
    n: usize,
    components: usize,
    kind: TensorKind,
    /// When set, the tensor evaluates at (x, −y).
    reflected: bool,
}

impl CoefficientTensor {
    pub fn new(kind: TensorKind) -> Result<Self> {
        let (n, components) = match &kind {
            TensorKind::Diagonal {
                n,
                components,
                diag,
            } => {
                if diag.len() != n * components {
                    return Err(Error::DimensionMismatch {
                        context: "diagonal tensor coefficients",
                        expected: n * components,
                        got: diag.len(),
                    });
                }
                (*n, *components)
            }
            TensorKind::ConstantBlocks {
                n,
                components,
                entries,
            } => {
                let expected = n * n * components * components;
                if entries.len() != expected {
                    return Err(Error::DimensionMismatch {
                        context: "constant block entries",
                        expected,
                        got: entries.len(),
                    });
                }
                (*n, *components)
            }
            TensorKind::Example4(spec) => {
                if !(spec.bump_radius > 0.0) {
                    return Err(Error::InvalidParameter(
                        "bump_radius must be positive".into(),
                    ));
                }
                (3, 2)
            }
        };
        if n < 2 || components < 1 {
            return Err(Error::InvalidParameter(format!(
                "tensor needs n ≥ 2 and N ≥ 1, got n={n}, N={components}"
            )));
        }
        Ok(Self {
            n,
            components,
            kind,
            reflected: false,
        })
    }

    /// Identity tensor: a^{α,β}_{i,j} = δ_{αβ} δ_{ij}.
    pub fn identity(n: usize, components: usize) -> Self {
        Self::new(TensorKind::Diagonal {
            n,
            components,
            diag: vec![1.0; n * components],
        })
        .expect("identity tensor is well formed")
    }

    /// The printed example: a^{1,1} = diag(2,2,1), a^{2,2} = diag(27,1,1),
    /// a^{1,2}_{1,1} = b(y), a^{2,1}_{1,2} = w(y).
    pub fn example4(spec: ExampleTensorSpec) -> Self {
        Self::new(TensorKind::Example4(spec)).expect("example tensor is well formed")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let kind: TensorKind = serde_json::from_str(text)?;
        Self::new(kind)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn kind(&self) -> &TensorKind {
        &self.kind
    }

    pub fn is_reflected(&self) -> bool {
        self.reflected
    }

    pub fn entry_count(&self) -> usize {
        self.n * self.n * self.components * self.components
    }

    /// Flat index of entry (α, β, i, j).
    #[inline]
    pub fn entry_index(&self, alpha: usize, beta: usize, i: usize, j: usize) -> usize {
        ((alpha * self.components + beta) * self.n + i) * self.n + j
    }

    /// Tensor with ã(x, y) = a(x, −y). An involution.
    pub fn reflected(&self) -> Self {
        let mut t = self.clone();
        t.reflected = !t.reflected;
        t
    }

    /// Evaluates all N²n² entries at (x, y) into `out` ((α, β, i, j)
    /// row-major). Errors if any resulting entry is non-finite.
    pub fn eval_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.entry_count());
        let mut ybuf = [0.0f64; 8];
        let y_eff: &[f64] = if self.reflected {
            for (dst, src) in ybuf.iter_mut().zip(y.iter()) {
                *dst = -src;
            }
            &ybuf[..y.len()]
        } else {
            y
        };
        out.fill(0.0);
        match &self.kind {
            TensorKind::Diagonal { n, components, diag } => {
                for alpha in 0..*components {
                    for i in 0..*n {
                        out[self.entry_index(alpha, alpha, i, i)] = diag[alpha * n + i];
                    }
                }
            }
            TensorKind::ConstantBlocks { entries, .. } => {
                out.copy_from_slice(entries);
            }
            TensorKind::Example4(spec) => {
                out[self.entry_index(0, 0, 0, 0)] = 2.0;
                out[self.entry_index(0, 0, 1, 1)] = 2.0;
                out[self.entry_index(0, 0, 2, 2)] = 1.0;
                out[self.entry_index(1, 1, 0, 0)] = 27.0;
                out[self.entry_index(1, 1, 1, 1)] = 1.0;
                out[self.entry_index(1, 1, 2, 2)] = 1.0;
                out[self.entry_index(0, 1, 0, 0)] = spec.b(y_eff);
                out[self.entry_index(1, 0, 0, 1)] = spec.w(y_eff);
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteTensor {
                x: x.to_vec(),
                y: y.to_vec(),
            });
        }
        Ok(())
    }

    /// Entry array at (x, y).
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.entry_count()];
        self.eval_into(x, y, &mut out)?;
        Ok(out)
    }

    /// Single entry a^{α,β}_{i,j}(x, y), 0-based indices.
    pub fn entry(&self, alpha: usize, beta: usize, i: usize, j: usize, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x, y)?[self.entry_index(alpha, beta, i, j)])
    }

    /// Quadratic form Σ a^{α,β}_{i,j}(x,y) ξ^α_i ξ^β_j for ξ given row-major
    /// as ξ[α * n + i].
    pub fn quadratic_form(&self, x: &[f64], y: &[f64], xi: &[f64]) -> Result<f64> {
        let entries = self.evaluate(x, y)?;
        let n = self.n;
        let nn = self.components;
        let mut acc = 0.0;
        for alpha in 0..nn {
            for beta in 0..nn {
                for i in 0..n {
                    let xa = xi[alpha * n + i];
                    if xa == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        acc += entries[self.entry_index(alpha, beta, i, j)] * xa * xi[beta * n + j];
                    }
                }
            }
        }
        Ok(acc)
    }
}

/// Deterministic sample grid over an (x, y) box. Anchors of the example
/// tensor are injected into the y samples when present.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleSpec {
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub x_points: usize,
    pub y_lower: Vec<f64>,
    pub y_upper: Vec<f64>,
    pub y_points: usize,
    pub include_anchors: bool,
}

impl SampleSpec {
    /// Default grid: a single x sample at the box center and 101 points per
    /// y axis over [−12, 12]^N, anchors injected.
    pub fn default_for(tensor: &CoefficientTensor) -> Self {
        Self {
            x_lower: vec![0.0; tensor.dim()],
            x_upper: vec![1.0; tensor.dim()],
            x_points: 1,
            y_lower: vec![-12.0; tensor.components()],
            y_upper: vec![12.0; tensor.components()],
            y_points: 101,
            include_anchors: true,
        }
    }

    pub fn with_y_box(mut self, lower: Vec<f64>, upper: Vec<f64>, points: usize) -> Self {
        self.y_lower = lower;
        self.y_upper = upper;
        self.y_points = points;
        self
    }

    fn axis_samples(lower: f64, upper: f64, points: usize) -> Vec<f64> {
        if points <= 1 {
            return vec![0.5 * (lower + upper)];
        }
        (0..points)
            .map(|i| lower + (upper - lower) * i as f64 / (points - 1) as f64)
            .collect()
    }

    fn grid(lower: &[f64], upper: &[f64], points: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = lower
            .iter()
            .zip(upper)
            .map(|(&lo, &hi)| Self::axis_samples(lo, hi, points))
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for partial in &out {
                for &v in axis {
                    let mut p = partial.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }

    pub fn x_samples(&self) -> Vec<Vec<f64>> {
        Self::grid(&self.x_lower, &self.x_upper, self.x_points)
    }

    pub fn y_samples(&self, tensor: &CoefficientTensor) -> Vec<Vec<f64>> {
        let mut samples = Self::grid(&self.y_lower, &self.y_upper, self.y_points);
        if self.include_anchors {
            if let TensorKind::Example4(spec) = tensor.kind() {
                samples.extend(spec.anchors_in_box(&self.y_lower, &self.y_upper));
            }
        }
        samples
    }

    pub fn description(&self) -> String {
        format!(
            "x in [{:?}, {:?}] with {} point(s) per axis; y in [{:?}, {:?}] with {} points per axis{}",
            self.x_lower,
            self.x_upper,
            self.x_points,
            self.y_lower,
            self.y_upper,
            self.y_points,
            if self.include_anchors {
                ", anchors injected"
            } else {
                ""
            }
        )
    }
}

/// A concrete violation of the staircase condition.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StaircaseWitness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub alpha: usize,
    pub beta: usize,
    pub level: f64,
}

/// Outcome of the staircase support check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StaircaseOutcome {
    pub passed: bool,
    pub l0: Option<f64>,
    pub witness: Option<StaircaseWitness>,
}

/// Certified constants from the sample-based condition checks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StructureReport {
    pub c: f64,
    pub nu: f64,
    pub l0: Option<f64>,
    pub passed_a1: bool,
    pub passed_a2: bool,
    pub passed_a3: bool,
    pub sample_spec: String,
    pub witnesses: Vec<StaircaseWitness>,
}

/// Boundedness of all entries: c = max |entry| over the sample set;
/// passes iff c is finite. Reported as `passed_a1`.
pub fn check_boundedness(tensor: &CoefficientTensor, spec: &SampleSpec) -> Result<(bool, f64)> {
    let xs = spec.x_samples();
    let ys = spec.y_samples(tensor);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut entries = vec![0.0; tensor.entry_count()];
    let mut c: f64 = 0.0;
    for x in &xs {
        for y in &ys {
            tensor.eval_into(x, y, &mut entries)?;
            for &e in &entries {
                c = c.max(e.abs());
            }
        }
    }
    Ok((c.is_finite(), c))
}

/// Ellipticity: nu = min over samples of the smallest eigenvalue of the
/// symmetrized flattened (N·n)×(N·n) matrix; passes iff nu > 0. Only the
/// symmetric part enters the quadratic form, so this minimum equals the
/// infimum of the form over unit directions. Reported as `passed_a2`.
pub fn check_ellipticity(tensor: &CoefficientTensor, spec: &SampleSpec) -> Result<(bool, f64)> {
    let xs = spec.x_samples();
    let ys = spec.y_samples(tensor);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut entries = vec![0.0; tensor.entry_count()];
    let mut nu = f64::INFINITY;
    for x in &xs {
        for y in &ys {
            tensor.eval_into(x, y, &mut entries)?;
            let m = flattened_matrix(tensor, &entries);
            let sym = 0.5 * (&m + m.transpose());
            let eig = nalgebra::SymmetricEigen::try_new(sym, 1.0e-13, 500).ok_or_else(|| {
                Error::EigenFailure {
                    x: x.clone(),
                    y: y.clone(),
                }
            })?;
            let lambda_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            nu = nu.min(lambda_min);
        }
    }
    Ok((nu > 0.0, nu))
}

/// The flattened matrix M[(α,i),(β,j)] = a^{α,β}_{i,j} used by the
/// ellipticity check; `quadratic_form` equals ξᵀ M ξ.
pub fn flattened_matrix(tensor: &CoefficientTensor, entries: &[f64]) -> nalgebra::DMatrix<f64> {
    let n = tensor.dim();
    let nn = tensor.components();
    let dim = n * nn;
    let mut m = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for alpha in 0..nn {
        for beta in 0..nn {
            for i in 0..n {
                for j in 0..n {
                    m[(alpha * n + i, beta * n + j)] = entries[tensor.entry_index(alpha, beta, i, j)];
                }
            }
        }
    }
    m
}

/// Staircase support of the off-diagonal blocks: scans the level grid and
/// returns the smallest candidate L0 such that both staircase implications
/// hold at every sampled (x, y) for every grid level ≥ L0. Inequalities are
/// strict. Failure is a report with a witness, not an error. Reported as
/// `passed_a3`.
pub fn check_staircase_support(
    tensor: &CoefficientTensor,
    spec: &SampleSpec,
    l_grid: &[f64],
) -> Result<StaircaseOutcome> {
    if l_grid.is_empty() || l_grid.windows(2).any(|w| w[0] >= w[1]) || l_grid[0] <= 0.0 {
        return Err(Error::InvalidParameter(
            "L grid must be a strictly increasing list of positive values".into(),
        ));
    }
    let xs = spec.x_samples();
    let ys = spec.y_samples(tensor);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let nn = tensor.components();
    let n = tensor.dim();

    // Pre-evaluate the off-diagonal nonzero pattern per sample.
    struct SamplePattern {
        x: Vec<f64>,
        y: Vec<f64>,
        nonzero: Vec<bool>, // (alpha, beta), alpha != beta
    }
    let mut patterns = Vec::with_capacity(xs.len() * ys.len());
    let mut entries = vec![0.0; tensor.entry_count()];
    for x in &xs {
        for y in &ys {
            tensor.eval_into(x, y, &mut entries)?;
            let mut nonzero = vec![false; nn * nn];
            for alpha in 0..nn {
                for beta in 0..nn {
                    if alpha == beta {
                        continue;
                    }
                    let any = (0..n).any(|i| {
                        (0..n).any(|j| entries[tensor.entry_index(alpha, beta, i, j)] != 0.0)
                    });
                    nonzero[alpha * nn + beta] = any;
                }
            }
            patterns.push(SamplePattern {
                x: x.clone(),
                y: y.clone(),
                nonzero,
            });
        }
    }

    // First violation per level, scanned in deterministic sample order.
    let witness_at = |level: f64| -> Option<StaircaseWitness> {
        for p in &patterns {
            for alpha in 0..nn {
                for beta in 0..nn {
                    if alpha == beta || !p.nonzero[alpha * nn + beta] {
                        continue;
                    }
                    let ya = p.y[alpha];
                    let yb = p.y[beta];
                    let upper_violated = ya > level && yb <= level;
                    let lower_violated = ya < -level && yb >= -level;
                    if upper_violated || lower_violated {
                        return Some(StaircaseWitness {
                            x: p.x.clone(),
                            y: p.y.clone(),
                            alpha: alpha + 1,
                            beta: beta + 1,
                            level,
                        });
                    }
                }
            }
        }
        None
    };

    let per_level: Vec<Option<StaircaseWitness>> =
        l_grid.iter().map(|&level| witness_at(level)).collect();

    // Smallest candidate whose whole suffix of levels is clean.
    let mut suffix_clean = vec![false; l_grid.len() + 1];
    suffix_clean[l_grid.len()] = true;
    for idx in (0..l_grid.len()).rev() {
        suffix_clean[idx] = suffix_clean[idx + 1] && per_level[idx].is_none();
    }
    if let Some(idx) = (0..l_grid.len()).find(|&idx| suffix_clean[idx]) {
        return Ok(StaircaseOutcome {
            passed: true,
            l0: Some(l_grid[idx]),
            witness: None,
        });
    }
    let witness = per_level.into_iter().flatten().next();
    Ok(StaircaseOutcome {
        passed: false,
        l0: None,
        witness,
    })
}

/// Default level grid {1, 1.5, 2, …, 10}.
pub fn default_l_grid() -> Vec<f64> {
    (0..19).map(|i| 1.0 + 0.5 * i as f64).collect()
}

/// Runs all three checks and assembles the report.
pub fn check_structure(
    tensor: &CoefficientTensor,
    spec: &SampleSpec,
    l_grid: &[f64],
) -> Result<StructureReport> {
    let (passed_a1, c) = check_boundedness(tensor, spec)?;
    let (passed_a2, nu) = check_ellipticity(tensor, spec)?;
    let staircase = check_staircase_support(tensor, spec, l_grid)?;
    Ok(StructureReport {
        c,
        nu,
        l0: staircase.l0,
        passed_a1,
        passed_a2,
        passed_a3: staircase.passed,
        sample_spec: spec.description(),
        witnesses: staircase.witness.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example4() -> CoefficientTensor {
        CoefficientTensor::example4(ExampleTensorSpec::default())
    }

    fn small_spec(tensor: &CoefficientTensor, half_width: f64, points: usize) -> SampleSpec {
        let nn = tensor.components();
        SampleSpec {
            x_lower: vec![0.0; tensor.dim()],
            x_upper: vec![1.0; tensor.dim()],
            x_points: 1,
            y_lower: vec![-half_width; nn],
            y_upper: vec![half_width; nn],
            y_points: points,
            include_anchors: true,
        }
    }

    fn constant_offdiag(n: usize) -> CoefficientTensor {
        let nn = 2;
        let mut entries = vec![0.0; n * n * nn * nn];
        let idx = |a: usize, b: usize, i: usize, j: usize| ((a * nn + b) * n + i) * n + j;
        for a in 0..nn {
            for i in 0..n {
                entries[idx(a, a, i, i)] = 1.0;
            }
        }
        entries[idx(0, 1, 0, 0)] = 1.0;
        CoefficientTensor::new(TensorKind::ConstantBlocks {
            n,
            components: nn,
            entries,
        })
        .unwrap()
    }

    #[test]
    fn identity_evaluates_to_kronecker_deltas() {
        let t = CoefficientTensor::identity(3, 2);
        let e = t.evaluate(&[0.3, 0.4, 0.5], &[1.0, -2.0]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for i in 0..3 {
                    for j in 0..3 {
                        let want = if a == b && i == j { 1.0 } else { 0.0 };
                        assert_eq!(e[t.entry_index(a, b, i, j)], want);
                    }
                }
            }
        }
    }

    #[test]
    fn example_tensor_hits_paper_anchor_values() {
        let t = example4();
        // (α,β,i,j) = (1,2,1,1) at y = (0,0): b(0,0) = 2.
        assert_eq!(t.entry(0, 1, 0, 0, &[0.0; 3], &[0.0, 0.0]).unwrap(), 2.0);
        // (2,1,1,2) at y = (3,2): w(3,2) = −10.
        assert_eq!(t.entry(1, 0, 0, 1, &[0.0; 3], &[3.0, 2.0]).unwrap(), -10.0);
        // Constant diagonal blocks.
        assert_eq!(t.entry(1, 1, 0, 0, &[0.2; 3], &[5.0, -7.0]).unwrap(), 27.0);
        assert_eq!(t.entry(0, 0, 2, 2, &[0.2; 3], &[5.0, -7.0]).unwrap(), 1.0);
        // a^{1,2} has a single nonzero slot.
        for &y in &[[0.0, 0.0], [2.5, 3.0], [-1.0, 4.0]] {
            assert_eq!(t.entry(0, 1, 1, 1, &[0.0; 3], &y).unwrap(), 0.0);
        }
    }

    #[test]
    fn bump_values_at_all_listed_anchors() {
        let spec = ExampleTensorSpec::default();
        assert_eq!(spec.b(&[0.0, 0.0]), 2.0);
        assert_eq!(spec.w(&[0.0, 0.0]), -10.0);
        for k in 2..40 {
            let kf = k as f64;
            assert_eq!(spec.b(&[kf, kf + 1.0]), 2.0, "b anchor k={k}");
            assert_eq!(spec.w(&[kf + 1.0, kf]), -10.0, "w anchor k={k}");
        }
    }

    #[test]
    fn bumps_vanish_outside_their_support() {
        let spec = ExampleTensorSpec::default();
        let r = spec.bump_radius;
        // Independent distance oracle: enumerate anchors.
        let dist_b = |y: [f64; 2]| -> f64 {
            let mut best = (y[0].powi(2) + y[1].powi(2)).sqrt();
            for k in 2..200 {
                let kf = k as f64;
                best = best.min(((y[0] - kf).powi(2) + (y[1] - kf - 1.0).powi(2)).sqrt());
            }
            best
        };
        let dist_w = |y: [f64; 2]| -> f64 {
            let mut best = (y[0].powi(2) + y[1].powi(2)).sqrt();
            for k in 2..200 {
                let kf = k as f64;
                best = best.min(((y[0] - kf - 1.0).powi(2) + (y[1] - kf).powi(2)).sqrt());
            }
            best
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let y = [rng.gen_range(-20.0..60.0), rng.gen_range(-20.0..60.0)];
            if dist_b(y) > r {
                assert_eq!(spec.b(&y), 0.0, "b nonzero off support at {y:?}");
            } else {
                assert!((spec.b(&y) - 2.0 * (1.0 - dist_b(y) / r)).abs() < 1e-12);
            }
            if dist_w(y) > r {
                assert_eq!(spec.w(&y), 0.0, "w nonzero off support at {y:?}");
            } else {
                assert!((spec.w(&y) + 10.0 * (1.0 - dist_w(y) / r)).abs() < 1e-12);
            }
            assert!(spec.b(&y) >= 0.0 && spec.b(&y) <= 2.0);
            assert!(spec.w(&y) >= -10.0 && spec.w(&y) <= 0.0);
        }
    }

    #[test]
    fn quadratic_form_identity_and_example_values() {
        let id = CoefficientTensor::identity(3, 2);
        let mut xi = vec![0.0; 6];
        xi[0] = 0.6;
        xi[3] = 0.8; // unit vector
        let q = id.quadratic_form(&[0.0; 3], &[0.0, 0.0], &xi).unwrap();
        assert!((q - 1.0).abs() < 1e-15);

        let t = example4();
        let mut xi = vec![0.0; 6];
        xi[0] = 1.0; // ξ^1_1
        xi[1] = 1.0; // ξ^1_2
        let q = t.quadratic_form(&[0.0; 3], &[0.0, 0.0], &xi).unwrap();
        assert!((q - 4.0).abs() < 1e-15, "got {q}");
    }

    #[test]
    fn example_form_at_least_one_on_unit_directions() {
        let t = example4();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..500 {
            let y = [rng.gen_range(-11.0..11.0), rng.gen_range(-11.0..11.0)];
            let mut xi: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            xi.iter_mut().for_each(|v| *v /= norm);
            let q = t.quadratic_form(&[0.0; 3], &y, &xi).unwrap();
            assert!(q >= 1.0 - 1.0e-9, "form {q} below 1 at y={y:?}");
        }
    }

    #[test]
    fn quadratic_form_matches_flattened_matrix() {
        let t = example4();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0); 3];
            let y = [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)];
            let entries = t.evaluate(&x, &y).unwrap();
            let m = flattened_matrix(&t, &entries);
            let xi: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v = nalgebra::DVector::from_column_slice(&xi);
            let want = (v.transpose() * &m * &v)[(0, 0)];
            let got = t.quadratic_form(&x, &y, &xi).unwrap();
            let scale = want.abs().max(1.0);
            assert!((got - want).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn boundedness_constants() {
        let id = CoefficientTensor::identity(2, 2);
        let spec = small_spec(&id, 5.0, 21);
        let (ok, c) = check_boundedness(&id, &spec).unwrap();
        assert!(ok && c == 1.0);

        let t = example4();
        let spec = small_spec(&t, 10.0, 101);
        let (ok, c) = check_boundedness(&t, &spec).unwrap();
        assert!(ok);
        assert_eq!(c, 27.0);

        let zero = CoefficientTensor::new(TensorKind::ConstantBlocks {
            n: 2,
            components: 1,
            entries: vec![0.0; 4],
        })
        .unwrap();
        let spec = small_spec(&zero, 3.0, 5);
        let (ok, c) = check_boundedness(&zero, &spec).unwrap();
        assert!(ok && c == 0.0);
    }

    #[test]
    fn ellipticity_constants() {
        let id = CoefficientTensor::identity(2, 2);
        let spec = small_spec(&id, 4.0, 9);
        let (ok, nu) = check_ellipticity(&id, &spec).unwrap();
        assert!(ok);
        assert!((nu - 1.0).abs() < 1e-9);

        let t = example4();
        let spec = small_spec(&t, 10.0, 41);
        let (ok, nu) = check_ellipticity(&t, &spec).unwrap();
        assert!(ok, "example tensor must be elliptic");
        // The minimum over anchors is exactly 1 (eigenvalues 1, 2, 28 of the
        // coupled 3×3 block at the peaks).
        assert!((nu - 1.0).abs() < 1e-9, "nu = {nu}");

        // Degenerate second component: a^{1,1} = diag(2,2,1), rest zero.
        let mut entries = vec![0.0; 3 * 3 * 2 * 2];
        let t2 = CoefficientTensor::new(TensorKind::ConstantBlocks {
            n: 3,
            components: 2,
            entries: {
                let idx = |a: usize, b: usize, i: usize, j: usize| ((a * 2 + b) * 3 + i) * 3 + j;
                entries[idx(0, 0, 0, 0)] = 2.0;
                entries[idx(0, 0, 1, 1)] = 2.0;
                entries[idx(0, 0, 2, 2)] = 1.0;
                entries
            },
        })
        .unwrap();
        let spec = small_spec(&t2, 3.0, 5);
        let (ok, nu) = check_ellipticity(&t2, &spec).unwrap();
        assert!(!ok);
        assert!(nu.abs() < 1e-12, "nu = {nu}");
    }

    #[test]
    fn ellipticity_lower_bounds_form_on_random_directions() {
        let t = example4();
        let spec = small_spec(&t, 6.0, 13);
        let (_, nu) = check_ellipticity(&t, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let ys = spec.y_samples(&t);
        for _ in 0..1000 {
            let y = &ys[rng.gen_range(0..ys.len())];
            let mut xi: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            xi.iter_mut().for_each(|v| *v /= norm);
            let q = t.quadratic_form(&[0.5; 3], y, &xi).unwrap();
            assert!(q >= nu - 1e-9, "form {q} below certified nu {nu}");
        }
    }

    #[test]
    fn staircase_diagonal_passes_vacuously() {
        let id = CoefficientTensor::identity(2, 2);
        let spec = small_spec(&id, 12.0, 25);
        let out = check_staircase_support(&id, &spec, &default_l_grid()).unwrap();
        assert!(out.passed);
        assert_eq!(out.l0, Some(1.0));
    }

    #[test]
    fn staircase_constant_offdiagonal_fails_with_witness() {
        let t = constant_offdiag(2);
        let spec = small_spec(&t, 12.0, 25);
        let out = check_staircase_support(&t, &spec, &default_l_grid()).unwrap();
        assert!(!out.passed);
        let w = out.witness.expect("failure must carry a witness");
        assert_eq!(w.level, 1.0);
        assert_eq!((w.alpha, w.beta), (1, 2));
        // The witness must actually violate one of the implications.
        let ya = w.y[w.alpha - 1];
        let yb = w.y[w.beta - 1];
        assert!(
            (ya > w.level && yb <= w.level) || (ya < -w.level && yb >= -w.level),
            "witness does not violate the staircase condition: {w:?}"
        );
    }

    #[test]
    fn staircase_example_tensor_passes_with_l0_one() {
        let t = example4();
        let spec = small_spec(&t, 12.0, 101);
        let out = check_staircase_support(&t, &spec, &default_l_grid()).unwrap();
        assert!(out.passed, "witness: {:?}", out.witness);
        assert_eq!(out.l0, Some(1.0));

        // Stable under grid refinement: doubling density keeps the verdict.
        let fine = small_spec(&t, 12.0, 201);
        let out2 = check_staircase_support(&t, &fine, &default_l_grid()).unwrap();
        assert!(out2.passed);
        assert_eq!(out2.l0, Some(1.0));
    }

    #[test]
    fn reflection_is_involutive_and_maps_anchors() {
        let t = example4();
        let r = t.reflected();
        // Reflected entry (1,2,1,1) at y = (−2,−3) equals b(2,3) = 2.
        assert_eq!(r.entry(0, 1, 0, 0, &[0.0; 3], &[-2.0, -3.0]).unwrap(), 2.0);

        let rr = r.reflected();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0); 3];
            let y = [rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0)];
            assert_eq!(
                t.evaluate(&x, &y).unwrap(),
                rr.evaluate(&x, &y).unwrap(),
                "reflect ∘ reflect must be the identity"
            );
        }

        let id = CoefficientTensor::identity(3, 2);
        let rid = id.reflected();
        assert_eq!(
            id.evaluate(&[0.0; 3], &[1.5, -4.0]).unwrap(),
            rid.evaluate(&[0.0; 3], &[1.5, -4.0]).unwrap()
        );
    }

    #[test]
    fn reflection_swaps_the_staircase_implications() {
        // A lower-implication violation of T at (y, L) is exactly an
        // upper-implication violation of the reflected tensor at (−y, L), so
        // wherever T satisfies the lower implication the reflected tensor
        // satisfies the upper one. Sample on and around the bump supports.
        let t = example4();
        let r = t.reflected();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut e_t = vec![0.0; t.entry_count()];
        let mut e_r = vec![0.0; t.entry_count()];
        let mut support_hits = 0;
        for _ in 0..2000 {
            let k = rng.gen_range(2..8) as f64;
            let anchor = if rng.gen_bool(0.5) {
                [k, k + 1.0]
            } else {
                [k + 1.0, k]
            };
            let y = [
                anchor[0] + rng.gen_range(-0.4..0.4),
                anchor[1] + rng.gen_range(-0.4..0.4),
            ];
            let level = rng.gen_range(1.0..6.0);
            t.eval_into(&[0.0; 3], &y, &mut e_t).unwrap();
            let neg = [-y[0], -y[1]];
            r.eval_into(&[0.0; 3], &neg, &mut e_r).unwrap();
            for (alpha, beta) in [(0usize, 1usize), (1, 0)] {
                let nz_t = (0..3)
                    .any(|i| (0..3).any(|j| e_t[t.entry_index(alpha, beta, i, j)] != 0.0));
                let nz_r = (0..3)
                    .any(|i| (0..3).any(|j| e_r[t.entry_index(alpha, beta, i, j)] != 0.0));
                assert_eq!(nz_t, nz_r, "reflected support must mirror the original");
                if !nz_t {
                    continue;
                }
                support_hits += 1;
                let lower_violation_t = y[alpha] < -level && y[beta] >= -level;
                let upper_violation_r = neg[alpha] > level && neg[beta] <= level;
                assert_eq!(lower_violation_t, upper_violation_r);
            }
        }
        assert!(support_hits > 100, "sampling missed the bump supports");

        // The reflected example tensor still passes the staircase check with
        // the smallest grid threshold.
        let spec = small_spec(&r, 12.0, 101);
        let out = check_staircase_support(&r, &spec, &default_l_grid()).unwrap();
        assert!(out.passed, "witness: {:?}", out.witness);
        assert_eq!(out.l0, Some(1.0));
    }

    #[test]
    fn structure_report_is_consistent() {
        let t = example4();
        let spec = small_spec(&t, 10.0, 41);
        let report = check_structure(&t, &spec, &default_l_grid()).unwrap();
        assert!(report.passed_a1 && report.passed_a2 && report.passed_a3);
        assert!(report.passed_a2 && report.nu > 0.0);
        assert!(report.c >= report.nu);
        assert_eq!(report.l0, Some(1.0));
        assert!(report.witnesses.is_empty());
    }

    #[test]
    fn tensor_json_round_trip() {
        let t = example4();
        let text = serde_json::to_string(t.kind()).unwrap();
        let back = CoefficientTensor::from_json(&text).unwrap();
        assert_eq!(&back, &t);
        assert!(CoefficientTensor::from_json("{\"kind\": \"nope\"}").is_err());
    }
}
