//! Parametric survival model and the dynamic maintenance cost.
//!
//! Each machine carries a two-parameter Weibull lifetime model together with
//! an observation time `t_obs`. Everything downstream works with the
//! *remaining life* `R` at the observation point, i.e. the conditional
//! distribution of `lifetime - t_obs` given survival up to `t_obs`. The
//! dynamic maintenance cost for doing preventive work at period `t` is
//!
//! ```text
//! C(t) = [ Cp * P(R > t) + Cf * P(R <= t) ] / ( integral_0^inf P(R > z) dz + t_obs )
//! ```
//!
//! with the integral evaluated by a composite trapezoid rule on a truncated
//! range. The numerator is a convex combination of `Cp` and `Cf`, so the cost
//! always lies between the two and grows with `t` whenever `Cf >= Cp`.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Minimal interface the cost and scenario machinery needs from a lifetime
/// model: the survival function of the remaining life, its quantile, and
/// hints for the quadrature grid.
pub trait SurvivalModel {
    /// `P(R > r)` for remaining life `R` at the observation time.
    fn survival(&self, r: f64) -> f64;

    /// Inverse survival: the `r` with `P(R > r) = u`, for `u` in `(0, 1]`.
    fn quantile(&self, u: f64) -> f64;

    /// Observation time `t_obs` added to the mean-residual-life denominator.
    fn observe_time(&self) -> f64;

    /// Trapezoid step for the residual-life integral.
    fn integration_step(&self) -> f64;

    /// Truncation point for the residual-life integral.
    fn integration_cap(&self) -> f64;
}

/// Two-parameter Weibull lifetime observed at `observe_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalParams {
    /// Weibull shape `k`.
    pub shape: f64,
    /// Weibull scale `lambda`, in periods.
    pub scale: f64,
    /// Observation time `t_obs`, in periods.
    pub observe_time: f64,
}

impl SurvivalParams {
    pub fn new(shape: f64, scale: f64, observe_time: f64) -> Self {
        Self { shape, scale, observe_time }
    }

    pub fn is_valid(&self) -> bool {
        self.shape > 0.0
            && self.scale > 0.0
            && self.observe_time >= 0.0
            && self.shape.is_finite()
            && self.scale.is_finite()
            && self.observe_time.is_finite()
    }

    /// Cumulative hazard of the underlying lifetime at age `x`.
    fn cum_hazard(&self, x: f64) -> f64 {
        (x / self.scale).powf(self.shape)
    }
}

impl SurvivalModel for SurvivalParams {
    fn survival(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 1.0;
        }
        // P(lifetime > t_obs + r | lifetime > t_obs)
        (self.cum_hazard(self.observe_time) - self.cum_hazard(self.observe_time + r)).exp()
    }

    fn quantile(&self, u: f64) -> f64 {
        let h = self.cum_hazard(self.observe_time) - u.ln();
        (self.scale * h.powf(1.0 / self.shape) - self.observe_time).max(0.0)
    }

    fn observe_time(&self) -> f64 {
        self.observe_time
    }

    fn integration_step(&self) -> f64 {
        self.scale / 1000.0
    }

    fn integration_cap(&self) -> f64 {
        10.0 * self.scale
    }
}

/// Residual-life integral `integral_0^cap P(R > z) dz` by composite trapezoid
/// with the model's own step. Errors if the survival function ever evaluates
/// to a non-finite value on the grid.
pub fn mean_residual_life<S: SurvivalModel>(model: &S, cap: f64) -> Result<f64, ModelError> {
    let step = model.integration_step();
    if !(step > 0.0 && step.is_finite() && cap > 0.0 && cap.is_finite()) {
        return Err(ModelError::InvalidParameters {
            what: format!("integration grid: step={step}, cap={cap}"),
        });
    }
    let n = (cap / step).ceil() as usize;
    let mut acc = 0.0;
    let mut prev = model.survival(0.0);
    for i in 1..=n {
        let z = (i as f64) * step;
        let cur = model.survival(z.min(cap));
        if !cur.is_finite() || !prev.is_finite() {
            return Err(ModelError::InvalidParameters {
                what: format!("survival({z}) is non-finite"),
            });
        }
        acc += 0.5 * (prev + cur) * (z.min(cap) - (z - step).min(cap));
        prev = cur;
    }
    Ok(acc)
}

/// Dynamic maintenance cost against any survival model. `t` is the candidate
/// maintenance period (>= 1), `horizon_cap` the quadrature truncation point.
pub fn dynamic_cost_for<S: SurvivalModel>(
    model: &S,
    preventive_cost: f64,
    corrective_cost: f64,
    t: f64,
    horizon_cap: f64,
) -> Result<f64, ModelError> {
    let s_t = model.survival(t);
    if !s_t.is_finite() || !(0.0..=1.0).contains(&s_t) {
        return Err(ModelError::InvalidParameters {
            what: format!("survival({t}) = {s_t}"),
        });
    }
    let numerator = preventive_cost * s_t + corrective_cost * (1.0 - s_t);
    let denominator = mean_residual_life(model, horizon_cap)? + model.observe_time();
    Ok(numerator / denominator)
}

/// Dynamic maintenance cost for a machine's fitted Weibull model.
pub fn compute_dynamic_cost(
    survival: &SurvivalParams,
    preventive_cost: f64,
    corrective_cost: f64,
    t: f64,
    horizon_cap: f64,
) -> Result<f64, ModelError> {
    if !survival.is_valid() {
        return Err(ModelError::InvalidParameters {
            what: format!("survival parameters {survival:?}"),
        });
    }
    dynamic_cost_for(survival, preventive_cost, corrective_cost, t, horizon_cap)
}

/// Draw one integer failure period from a remaining-life model: the sampled
/// life is rounded up to a whole period and clamped into `[1, horizon + 1]`,
/// with `horizon + 1` meaning "survives the planning horizon".
pub fn sample_failure_period<S: SurvivalModel>(model: &S, horizon: usize, u: f64) -> usize {
    let r = model.quantile(u.clamp(f64::MIN_POSITIVE, 1.0));
    if !r.is_finite() {
        return horizon + 1;
    }
    (r.ceil() as usize).clamp(1, horizon + 1)
}
