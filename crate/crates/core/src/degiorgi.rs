//! The abstract level-set iteration apparatus: level and radius schedules,
//! the energy-estimate constant, and the superlinear iteration lemma with its
//! explicit smallness threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude at which the simulated recursion is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1.0e300;

/// Increasing level schedule k_h = d (1 − 1/2^{h+1}) with limit d.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LevelSchedule {
    pub d: f64,
}

impl LevelSchedule {
    pub fn new(d: f64) -> Result<Self> {
        if !(d >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target level d must satisfy d ≥ 1, got {d}"
            )));
        }
        Ok(Self { d })
    }

    pub fn level_at(&self, h: u32) -> f64 {
        self.d * (1.0 - 0.5f64.powi(h as i32 + 1))
    }
}

/// Decreasing radius schedule ρ_h = (R/2)(1 + 1/2^h) with limit R/2, plus the
/// interleaved midpoints ρ̄_h = (ρ_h + ρ_{h+1})/2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RadiusSchedule {
    pub base_radius: f64,
}

impl RadiusSchedule {
    pub fn new(base_radius: f64) -> Result<Self> {
        if !(base_radius > 0.0 && base_radius < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "base radius must lie in (0, 1), got {base_radius}"
            )));
        }
        Ok(Self { base_radius })
    }

    /// (ρ_h, ρ̄_h); always ρ_{h+1} < ρ̄_h < ρ_h.
    pub fn radii_at(&self, h: u32) -> (f64, f64) {
        let half = 0.5 * self.base_radius;
        let pow = 0.5f64.powi(h as i32);
        let rho = half * (1.0 + pow);
        let rho_bar = half * (1.0 + 0.75 * pow);
        (rho, rho_bar)
    }
}

/// Constant of the superlevel-set energy estimate: 16 c² n⁴ N⁴ / ν².
pub fn caccioppoli_constant(c: f64, n: usize, components: usize, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ellipticity constant must be positive, got {nu}"
        )));
    }
    if c < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "boundedness constant must be nonnegative, got {c}"
        )));
    }
    let nf = n as f64;
    let cf = components as f64;
    Ok(16.0 * c * c * nf.powi(4) * cf.powi(4) / (nu * nu))
}

/// Parameters of the recursion J_{h+1} ≤ A λ^h J_h^{1+γ}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RecursionParams {
    pub factor: f64,   // A
    pub base: f64,     // λ
    pub exponent: f64, // γ
}

impl RecursionParams {
    pub fn new(factor: f64, base: f64, exponent: f64) -> Result<Self> {
        if !(factor > 0.0) || !(base > 1.0) || !(exponent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "recursion needs A > 0, λ > 1, γ > 0; got A={factor}, λ={base}, γ={exponent}"
            )));
        }
        Ok(Self {
            factor,
            base,
            exponent,
        })
    }

    /// Smallness threshold A^{−1/γ} λ^{−1/γ²}: starting at or below it, the
    /// recursion converges to zero.
    pub fn threshold(&self) -> f64 {
        self.factor.powf(-1.0 / self.exponent)
            * self.base.powf(-1.0 / (self.exponent * self.exponent))
    }
}

/// Trace of the equality recursion J_{h+1} = A λ^h J_h^{1+γ}, the extremal
/// trajectory of the inequality.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecursionTrace {
    pub values: Vec<f64>,
    /// Index at which |J_h| first exceeded the divergence limit, if any;
    /// the trace stops there.
    pub diverged_at: Option<usize>,
}

/// Runs the equality recursion for `steps` steps from `j0` (so the trace has
/// `steps + 1` values unless it diverges first).
pub fn simulate_recursion(params: &RecursionParams, j0: f64, steps: usize) -> Result<RecursionTrace> {
    if !(j0 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "J0 must be nonnegative, got {j0}"
        )));
    }
    if steps < 1 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let mut values = Vec::with_capacity(steps + 1);
    values.push(j0);
    let mut j = j0;
    for h in 0..steps {
        j = params.factor * params.base.powi(h as i32) * j.powf(1.0 + params.exponent);
        if !j.is_finite() || j > DIVERGENCE_LIMIT {
            values.push(j);
            return Ok(RecursionTrace {
                values,
                diverged_at: Some(h + 1),
            });
        }
        values.push(j);
    }
    Ok(RecursionTrace {
        values,
        diverged_at: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_schedule_values_and_limit() {
        let s = LevelSchedule::new(1.0).unwrap();
        assert_eq!(s.level_at(0), 0.5);

        let s = LevelSchedule::new(2.0).unwrap();
        assert!(s.level_at(20) > 2.0 - 1e-5);
        assert!(s.level_at(20) < 2.0);

        let s = LevelSchedule::new(1.5).unwrap();
        assert!((s.level_at(2) - 1.3125).abs() < 1e-15);

        assert!(LevelSchedule::new(0.5).is_err());
    }

    #[test]
    fn level_schedule_is_strictly_increasing() {
        for &d in &[1.0, 1.7, 10.0] {
            let s = LevelSchedule::new(d).unwrap();
            for h in 0..40 {
                assert!(s.level_at(h + 1) > s.level_at(h));
                assert!(s.level_at(h) < d);
            }
        }
    }

    #[test]
    fn radius_schedule_values_and_ordering() {
        // Both sequences scale linearly in R, so checking at R = 1/2 also
        // pins down the unit formulas ρ_0 = R and ρ̄_0 = 0.875 R.
        let s = RadiusSchedule::new(0.5).unwrap();
        let (rho1, rho_bar1) = s.radii_at(1);
        assert!((rho1 - 0.375).abs() < 1e-15);
        assert!((rho_bar1 - 0.34375).abs() < 1e-15);

        // ρ_0 = R and the h = 0 midpoint sits at 0.875 R.
        let (rho0, rho_bar0) = s.radii_at(0);
        assert!((rho0 - 0.5).abs() < 1e-15);
        assert!((rho_bar0 - 0.875 * 0.5).abs() < 1e-15);

        for h in 0..30 {
            let (rho, rho_bar) = s.radii_at(h);
            let (rho_next, _) = s.radii_at(h + 1);
            assert!(rho_next < rho_bar && rho_bar < rho);
            assert!(rho > 0.25);
        }
        // Both sequences tend to R/2.
        let (rho, rho_bar) = s.radii_at(40);
        assert!((rho - 0.25).abs() < 1e-11 && (rho_bar - 0.25).abs() < 1e-11);

        assert!(RadiusSchedule::new(1.0).is_err());
        assert!(RadiusSchedule::new(0.0).is_err());
    }

    #[test]
    fn caccioppoli_constant_values() {
        assert_eq!(caccioppoli_constant(1.0, 2, 2, 1.0).unwrap(), 4096.0);
        assert_eq!(
            caccioppoli_constant(27.0, 3, 2, 1.0).unwrap(),
            15_116_544.0
        );
        assert_eq!(caccioppoli_constant(0.0, 5, 3, 2.0).unwrap(), 0.0);
        assert!(caccioppoli_constant(1.0, 2, 2, 0.0).is_err());
        assert!(caccioppoli_constant(1.0, 2, 2, -1.0).is_err());
    }

    #[test]
    fn caccioppoli_constant_homogeneity() {
        let base = caccioppoli_constant(2.0, 3, 2, 0.7).unwrap();
        for &t in &[0.5, 2.0, 10.0] {
            let scaled_c = caccioppoli_constant(2.0 * t, 3, 2, 0.7).unwrap();
            assert!((scaled_c - t * t * base).abs() / base < 1e-12);
            let scaled_nu = caccioppoli_constant(2.0, 3, 2, 0.7 * t).unwrap();
            assert!((scaled_nu - base / (t * t)).abs() / base < 1e-12);
        }
    }

    #[test]
    fn threshold_values() {
        let p = RecursionParams::new(1.0, 2.0, 1.0).unwrap();
        assert_eq!(p.threshold(), 0.5);
        let p = RecursionParams::new(1.0, 4.0, 1.0).unwrap();
        assert_eq!(p.threshold(), 0.25);
        let p = RecursionParams::new(2.0, 2.0, 0.5).unwrap();
        assert!((p.threshold() - 1.0 / 64.0).abs() < 1e-18);
    }

    #[test]
    fn recursion_closed_form_at_the_threshold() {
        // J_{h+1} = 2^h J_h² with J_0 = 1/2 gives J_h = 2^{−(h+1)} exactly.
        let p = RecursionParams::new(1.0, 2.0, 1.0).unwrap();
        let trace = simulate_recursion(&p, 0.5, 40).unwrap();
        assert!(trace.diverged_at.is_none());
        for (h, &j) in trace.values.iter().enumerate() {
            let want = 0.5f64.powi(h as i32 + 1);
            assert!(
                (j - want).abs() <= 1e-12 * want,
                "J_{h} = {j}, want {want}"
            );
        }
        // Non-increasing from the start.
        for w in trace.values.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // Halving at least geometrically: J_steps < J_0 · 2^{−steps/2}.
        let steps = trace.values.len() - 1;
        assert!(trace.values[steps] < 0.5 * 0.5f64.powf(steps as f64 / 2.0));
    }

    #[test]
    fn recursion_above_threshold_blows_up() {
        let p = RecursionParams::new(1.0, 2.0, 1.0).unwrap();
        let trace = simulate_recursion(&p, 2.0, 10).unwrap();
        assert_eq!(trace.values[1], 4.0);
        assert_eq!(trace.values[2], 32.0);
        assert!(trace.diverged_at.is_some(), "J0 = 2 must diverge");

        // Slightly above the threshold the equality recursion still diverges.
        let trace = simulate_recursion(&p, 0.5 * (1.0 + 1e-6), 200).unwrap();
        assert!(
            trace.diverged_at.is_some(),
            "J0 = threshold (1 + 1e-6) must diverge within 200 steps"
        );
    }

    #[test]
    fn recursion_zero_start_stays_zero() {
        let p = RecursionParams::new(1.0, 2.0, 1.0).unwrap();
        let trace = simulate_recursion(&p, 0.0, 25).unwrap();
        assert!(trace.diverged_at.is_none());
        assert!(trace.values.iter().all(|&j| j == 0.0));
    }
}
