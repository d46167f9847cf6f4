//! Verification of the level-set estimates on computed solutions: the
//! energy-estimate sides, excess traces along the level/radius schedules,
//! the boundedness-level search, the off-diagonal quadratic-form condition
//! with its closed-form violation, and the singular radial fields.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientTensor;
use crate::degiorgi::{caccioppoli_constant, LevelSchedule, RadiusSchedule};
use crate::error::{Error, Result};
use crate::field::DiscreteField;
use crate::mesh::{Ball, Region};

/// The fixed Sobolev-exponent rule: np/(n−p) for p < n, otherwise 2p.
pub fn sobolev_exponent(n: usize, p: f64) -> f64 {
    let nf = n as f64;
    if p < nf {
        nf * p / (nf - p)
    } else {
        2.0 * p
    }
}

fn unit_ball_volume(n: usize) -> f64 {
    match n {
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => panic!("unsupported dimension {n}"),
    }
}

fn sphere_area(n: usize) -> f64 {
    match n {
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => panic!("unsupported dimension {n}"),
    }
}

/// Largest radius R₀ (bisection, last feasible tested) with |B_{R₀}| < 1 and
/// Σ_α ∫_{B_{R₀}} |u^α|^{p*} < 1, the ball constrained to the mesh box.
/// The ball volume is analytic; the integral uses mesh quadrature.
pub fn admissible_radius(field: &DiscreteField, center: &[f64], p_star: f64) -> Result<f64> {
    let mesh = field.mesh();
    let n = mesh.dim();
    if center.len() != n {
        return Err(Error::DimensionMismatch {
            context: "ball center",
            expected: n,
            got: center.len(),
        });
    }
    let mut r_hi = f64::INFINITY;
    for i in 0..n {
        r_hi = r_hi.min(center[i] - mesh.lower()[i]);
        r_hi = r_hi.min(mesh.upper()[i] - center[i]);
    }
    if !(r_hi > 0.0) {
        return Err(Error::Geometry(format!(
            "center {center:?} does not lie inside the mesh box"
        )));
    }
    r_hi = r_hi.min(1.0 - 1e-12);

    let feasible = |r: f64| -> bool {
        if unit_ball_volume(n) * r.powi(n as i32) >= 1.0 {
            return false;
        }
        let ball = Ball::new(center, r).expect("positive radius");
        let region = Region::Ball(ball);
        let mass = mesh.integrate(&region, |s, _, bary| {
            let mut acc = 0.0;
            for alpha in 0..field.components() {
                acc += field.value_at(s, bary, alpha).abs().powf(p_star);
            }
            acc
        });
        mass < 1.0
    };

    let resolution = mesh.grid_spacing() / 2.0;
    let mut best = None;
    if feasible(r_hi) {
        best = Some(r_hi);
    } else {
        let mut lo = 0.0f64;
        let mut hi = r_hi;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mid <= 0.0 {
                break;
            }
            if feasible(mid) {
                best = Some(mid);
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < resolution * 1e-6 {
                break;
            }
        }
    }
    match best {
        Some(r) if r >= resolution => Ok(r),
        other => Err(Error::NoAdmissibleRadius {
            resolution,
            largest_feasible: other,
        }),
    }
}

/// Ball pair and level for the superlevel energy estimate; the radial cutoff
/// equals 1 on the inner ball, falls linearly, and vanishes outside the
/// outer ball, so its gradient never exceeds 2/(t − s).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaccioppoliCheckSpec {
    pub center: Vec<f64>,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub level: f64,
}

impl CaccioppoliCheckSpec {
    pub fn new(center: Vec<f64>, inner_radius: f64, outer_radius: f64, level: f64) -> Result<Self> {
        if !(inner_radius > 0.0 && inner_radius < outer_radius) {
            return Err(Error::InvalidParameter(format!(
                "ball pair needs 0 < s < t, got s={inner_radius}, t={outer_radius}"
            )));
        }
        Ok(Self {
            center,
            inner_radius,
            outer_radius,
            level,
        })
    }

    /// The piecewise-linear radial cutoff.
    pub fn cutoff(&self, x: &[f64]) -> f64 {
        let mut d2 = 0.0;
        for (xi, ci) in x.iter().zip(&self.center) {
            d2 += (xi - ci) * (xi - ci);
        }
        let d = d2.sqrt();
        if d <= self.inner_radius {
            1.0
        } else if d >= self.outer_radius {
            0.0
        } else {
            (self.outer_radius - d) / (self.outer_radius - self.inner_radius)
        }
    }
}

/// Certified constants entering the energy-estimate factor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CaccioppoliConstants {
    pub c: f64,
    pub n: usize,
    pub components: usize,
    pub nu: f64,
}

/// Both sides of the superlevel energy estimate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaccioppoliSides {
    pub lhs: f64,
    pub rhs: f64,
    /// lhs / rhs with the conventions 0/0 = 0 and x/0 = ∞ for x > 0
    /// (infinite ratios serialize as null).
    pub ratio: Option<f64>,
    pub constant: f64,
}

impl CaccioppoliSides {
    pub fn ratio_value(&self) -> f64 {
        self.ratio.unwrap_or(f64::INFINITY)
    }
}

/// lhs = Σ_α ∫_{{u^α>L} ∩ B_s} |Du^α|²,
/// rhs = (16 c² n⁴ N⁴/ν²) Σ_α ∫_{{u^α>L} ∩ B_t} ((u^α − L)/(t − s))².
pub fn caccioppoli_sides(
    field: &DiscreteField,
    spec: &CaccioppoliCheckSpec,
    constants: &CaccioppoliConstants,
) -> Result<CaccioppoliSides> {
    let mesh = field.mesh();
    let outer = Ball::new(&spec.center, spec.outer_radius)?;
    if !mesh.contains_ball(&outer, 1e-12) {
        return Err(Error::Geometry(format!(
            "outer ball (radius {}) exceeds the mesh box",
            spec.outer_radius
        )));
    }
    let inner = Ball::new(&spec.center, spec.inner_radius)?;
    let level = spec.level;

    let lhs = mesh.integrate(&Region::Ball(inner), |s, _, bary| {
        let mut acc = 0.0;
        for alpha in 0..field.components() {
            if field.value_at(s, bary, alpha) > level {
                let g = field.gradient_on_simplex(s, alpha);
                acc += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        acc
    });

    let constant = caccioppoli_constant(constants.c, constants.n, constants.components, constants.nu)?;
    let width = spec.outer_radius - spec.inner_radius;
    let rhs_integral = mesh.integrate(&Region::Ball(outer), |s, _, bary| {
        let mut acc = 0.0;
        for alpha in 0..field.components() {
            let u = field.value_at(s, bary, alpha);
            if u > level {
                let z = (u - level) / width;
                acc += z * z;
            }
        }
        acc
    });
    let rhs = constant * rhs_integral;

    let ratio = if rhs == 0.0 {
        if lhs == 0.0 {
            Some(0.0)
        } else {
            None
        }
    } else {
        Some(lhs / rhs)
    };
    Ok(CaccioppoliSides {
        lhs,
        rhs,
        ratio,
        constant,
    })
}

/// Parameters of an excess trace along the level/radius schedules.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ExcessTraceParams {
    pub d: f64,
    pub base_radius: f64,
    pub steps: u32,
    pub p: f64,
    pub p_star: f64,
    pub theta: f64,
}

impl ExcessTraceParams {
    /// The instantiation used in the boundedness argument: p = 2, θ = 1,
    /// p* from the fixed Sobolev rule.
    pub fn step4(n: usize, d: f64, base_radius: f64, steps: u32) -> Self {
        Self {
            d,
            base_radius,
            steps,
            p: 2.0,
            p_star: sobolev_exponent(n, 2.0),
            theta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TraceEntry {
    pub h: u32,
    pub level: f64,
    pub radius: f64,
    pub excess: f64,
}

/// The recorded sequence J_h with its levels and radii.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExcessTrace {
    pub d: f64,
    pub base_radius: f64,
    pub p: f64,
    pub p_star: f64,
    pub theta: f64,
    pub entries: Vec<TraceEntry>,
}

impl ExcessTrace {
    pub fn last_excess(&self) -> f64 {
        self.entries.last().map(|e| e.excess).unwrap_or(0.0)
    }

    pub fn is_non_increasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].excess <= w[0].excess)
    }
}

/// Computes J_h = Σ_α ∫_{{u^α > k_h} ∩ B(x₀, ρ_h)} (u^α − k_h)^{p*} for
/// h = 0..=steps with k_h and ρ_h from the schedules.
pub fn excess_trace(
    field: &DiscreteField,
    center: &[f64],
    params: &ExcessTraceParams,
) -> Result<ExcessTrace> {
    if params.steps < 2 {
        return Err(Error::InvalidParameter(
            "excess trace needs at least 2 steps".into(),
        ));
    }
    if !(params.p >= 1.0) || !(params.p_star >= 1.0) {
        return Err(Error::InvalidParameter(
            "excess trace needs p, p* ≥ 1".into(),
        ));
    }
    let levels = LevelSchedule::new(params.d)?;
    let radii = RadiusSchedule::new(params.base_radius)?;
    let mesh = field.mesh();
    let outer = Ball::new(center, params.base_radius)?;
    if !mesh.contains_ball(&outer, 1e-12) {
        return Err(Error::Geometry(format!(
            "trace ball of radius {} around {center:?} exceeds the mesh box",
            params.base_radius
        )));
    }

    let mut entries = Vec::with_capacity(params.steps as usize + 1);
    for h in 0..=params.steps {
        let level = levels.level_at(h);
        let (rho, _) = radii.radii_at(h);
        let ball = Ball::new(center, rho)?;
        let excess = field.excess(level, &Region::Ball(ball), params.p_star);
        entries.push(TraceEntry {
            h,
            level,
            radius: rho,
            excess,
        });
    }
    Ok(ExcessTrace {
        d: params.d,
        base_radius: params.base_radius,
        p: params.p,
        p_star: params.p_star,
        theta: params.theta,
        entries,
    })
}

/// Empirical decay constant: C = max over recorded h of
/// J_{h+1} / [ (2^{p*²/p})^h · J_h^{θ p*/p} ], a surrogate for the implicit
/// constant of the step-decay estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DecayFit {
    pub c_fit: f64,
    pub ok: bool,
}

/// Returns `None` when the trace has fewer than 3 positive consecutive
/// entries, in which case the fit is not applicable.
pub fn fit_decay(trace: &ExcessTrace) -> Option<DecayFit> {
    let mut run = 0usize;
    let mut best_run = 0usize;
    for e in &trace.entries {
        if e.excess > 0.0 {
            run += 1;
            best_run = best_run.max(run);
        } else {
            run = 0;
        }
    }
    if best_run < 3 {
        return None;
    }
    let rate = 2f64.powf(trace.p_star * trace.p_star / trace.p);
    let exponent = trace.theta * trace.p_star / trace.p;
    let mut c_fit: f64 = 0.0;
    for w in trace.entries.windows(2) {
        let (jh, jn) = (w[0].excess, w[1].excess);
        if jh <= 0.0 {
            continue;
        }
        let denom = rate.powi(w[0].h as i32) * jh.powf(exponent);
        c_fit = c_fit.max(jn / denom);
    }
    Some(DecayFit {
        c_fit,
        ok: c_fit.is_finite(),
    })
}

/// Result of the geometric boundedness-level search. `None` levels mean the
/// search exhausted its candidates: unbounded at this resolution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundednessReport {
    /// Smallest tested d with J_H ≤ tol: certifies ess-sup u^α ≤ d on the
    /// half-radius ball at mesh scale.
    pub upper_level: Option<f64>,
    /// Certified lower bound −d' obtained by running the search on −u
    /// (the reflected-system solution).
    pub lower_level: Option<f64>,
    /// (candidate d, final excess J_H) pairs from the upper search.
    pub candidates: Vec<(f64, f64)>,
}

const BOUNDEDNESS_STEPS: u32 = 20;
const BOUNDEDNESS_MAX_LEVEL: f64 = 1.0e9;

fn negated(field: &DiscreteField) -> DiscreteField {
    let mut flipped = field.clone();
    for v in flipped.values_mut() {
        *v = -*v;
    }
    flipped
}

fn boundedness_search(
    field: &DiscreteField,
    center: &[f64],
    base_radius: f64,
    tol: f64,
    min_level: Option<f64>,
) -> Result<(Option<f64>, Vec<(f64, f64)>)> {
    let n = field.mesh().dim();
    let floor = min_level.map(|l0| 2.0 * l0).unwrap_or(1.0).max(1.0);
    let mut candidates = Vec::new();
    let mut d = 1.0f64;
    while d < floor {
        d *= 2.0;
    }
    while d <= BOUNDEDNESS_MAX_LEVEL {
        let params = ExcessTraceParams::step4(n, d, base_radius, BOUNDEDNESS_STEPS);
        let trace = excess_trace(field, center, &params)?;
        let last = trace.last_excess();
        candidates.push((d, last));
        if last <= tol {
            return Ok((Some(d), candidates));
        }
        d *= 2.0;
    }
    Ok((None, candidates))
}

/// Geometric search over d ∈ {1, 2, 4, …} (starting at 2·L₀ when a support
/// threshold is supplied) for the smallest level whose excess trace reaches
/// J_H ≤ tol with H = 20; also runs on −u for the lower bound.
pub fn boundedness_level(
    field: &DiscreteField,
    center: &[f64],
    base_radius: f64,
    tol: f64,
    min_level: Option<f64>,
) -> Result<BoundednessReport> {
    let (upper, candidates) = boundedness_search(field, center, base_radius, tol, min_level)?;
    let flipped = negated(field);
    let (lower_d, _) = boundedness_search(&flipped, center, base_radius, tol, min_level)?;
    Ok(BoundednessReport {
        upper_level: upper,
        lower_level: lower_d.map(|d| -d),
        candidates,
    })
}

/// Left side of the off-diagonal quadratic-form condition:
/// Σ_{α,γ} (y^α y^γ/|y|²) Σ_i p^γ_i Σ_β Σ_j a^{α,β}_{i,j}(x, y) p^β_j,
/// with p given row-major as p[β·n + j].
pub fn condition19_lhs(
    tensor: &CoefficientTensor,
    x: &[f64],
    y: &[f64],
    p: &[f64],
) -> Result<f64> {
    let n = tensor.dim();
    let nn = tensor.components();
    if p.len() != nn * n {
        return Err(Error::DimensionMismatch {
            context: "direction matrix p",
            expected: nn * n,
            got: p.len(),
        });
    }
    let y_norm_sq: f64 = y.iter().map(|v| v * v).sum();
    if y_norm_sq == 0.0 {
        return Err(Error::InvalidParameter(
            "the condition requires |y| > 0".into(),
        ));
    }
    let entries = tensor.evaluate(x, y)?;
    // inner[α][i] = Σ_β Σ_j a^{α,β}_{i,j} p^β_j
    let mut inner = vec![0.0; nn * n];
    for alpha in 0..nn {
        for i in 0..n {
            let mut acc = 0.0;
            for beta in 0..nn {
                for j in 0..n {
                    acc += entries[tensor.entry_index(alpha, beta, i, j)] * p[beta * n + j];
                }
            }
            inner[alpha * n + i] = acc;
        }
    }
    let mut total = 0.0;
    for alpha in 0..nn {
        for gamma in 0..nn {
            let mut dot = 0.0;
            for i in 0..n {
                dot += p[gamma * n + i] * inner[alpha * n + i];
            }
            total += y[alpha] * y[gamma] / y_norm_sq * dot;
        }
    }
    Ok(total)
}

/// Data entering the right side of the condition; `lambda` and `level` are
/// the condition's own parameters, unrelated to the iteration-lemma symbols.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Condition19Input {
    pub y: Vec<f64>,
    /// Direction matrix, row-major p[β·n + j].
    pub p: Vec<f64>,
    pub delta: f64,
    pub lambda: f64,
    pub d_x: f64,
    pub g_x: f64,
    pub level: f64,
}

impl Condition19Input {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.d_x >= 0.0 && self.g_x >= 0.0 && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(
                "condition needs λ, d(x), g(x) ≥ 0".into(),
            ));
        }
        let y_norm = self.y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(y_norm > self.level) {
            return Err(Error::InvalidParameter(format!(
                "condition applies for |y| > L, got |y| = {y_norm}, L = {}",
                self.level
            )));
        }
        Ok(())
    }

    /// −{δ|p|² + (1/δ)^λ [d(x)|y|² + g(x)]}.
    pub fn rhs(&self) -> f64 {
        let p_sq: f64 = self.p.iter().map(|v| v * v).sum();
        let y_sq: f64 = self.y.iter().map(|v| v * v).sum();
        -(self.delta * p_sq + (1.0 / self.delta).powf(self.lambda) * (self.d_x * y_sq + self.g_x))
    }
}

/// Coefficient of |t|² in the closed-form evaluation of the condition's left
/// side on the example tensor at y = (k+1, k): (−6k² − 2k + 4)/(2k² + 2k + 1).
pub fn condition19_example_ratio(k: i64) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "the closed form needs integer k ≥ 2, got {k}"
        )));
    }
    let kf = k as f64;
    Ok((-6.0 * kf * kf - 2.0 * kf + 4.0) / (2.0 * kf * kf + 2.0 * kf + 1.0))
}

/// The singular radial field u(x) = x/|x|^γ with γ > 1 (n components).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RadialField {
    pub gamma: f64,
    pub n: usize,
}

impl RadialField {
    pub fn new(gamma: f64, n: usize) -> Result<Self> {
        if !(gamma > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "radial exponent must exceed 1, got {gamma}"
            )));
        }
        Ok(Self { gamma, n })
    }

    /// x/|x|^γ; |u(x)| = |x|^{1−γ}.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 == 0.0 {
            return Err(Error::InvalidParameter(
                "radial field is singular at the origin".into(),
            ));
        }
        let scale = r2.sqrt().powf(-self.gamma);
        Ok(x.iter().map(|v| v * scale).collect())
    }
}

/// Sup and first-order energy of the radial field on an annulus.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RadialDiagnostics {
    pub sup: f64,
    pub seminorm: f64,
}

/// Gauss–Legendre 8-point rule on [−1, 1].
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_29),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_29),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

/// 1-d quadrature of `f` over [a, b] on logarithmically spaced panels,
/// suited to the power-law integrands of the radial field.
fn log_panel_quadrature<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    let la = a.ln();
    let lb = b.ln();
    let mut total = 0.0;
    for p in 0..panels {
        let x0 = (la + (lb - la) * p as f64 / panels as f64).exp();
        let x1 = (la + (lb - la) * (p + 1) as f64 / panels as f64).exp();
        let mid = 0.5 * (x0 + x1);
        let half = 0.5 * (x1 - x0);
        for (node, weight) in GL8 {
            total += weight * half * f(mid + half * node);
        }
    }
    total
}

/// sup = r^{1−γ} on the annulus {r < |x| < R}; the first-order seminorm comes
/// from the radial reduction ∫|Du|² = (n − 2γ + γ²) ω_{n−1} ∫ ρ^{n−1−2γ} dρ.
pub fn radial_diagnostics(field: &RadialField, inner: f64, outer: f64) -> Result<RadialDiagnostics> {
    if !(inner > 0.0 && inner < outer) {
        return Err(Error::InvalidParameter(format!(
            "annulus needs 0 < r < R, got r={inner}, R={outer}"
        )));
    }
    let gamma = field.gamma;
    let n = field.n;
    let sup = inner.powf(1.0 - gamma);
    let angular = (n as f64 - 2.0 * gamma + gamma * gamma) * sphere_area(n);
    let radial = log_panel_quadrature(inner, outer, 64, |rho| {
        rho.powf(n as f64 - 1.0 - 2.0 * gamma)
    });
    Ok(RadialDiagnostics {
        sup,
        seminorm: (angular * radial).sqrt(),
    })
}
