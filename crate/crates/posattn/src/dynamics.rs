//! Reduced scalar population dynamics and derived theoretical quantities.
//!
//! Along population gradient descent from zero initialization the student
//! stays on a three-parameter manifold: `W_V = C1 V*` and the structured
//! `W_KQ(C2, C3)` whose attention scores take only the on-group value `p` and
//! the off-group value `(1-Kp)/(D-K)`. This module iterates the coupled
//! recursions
//!
//! ```text
//! C1 <- C1 + D eta (F3/(Kp) - C1 F1)
//! C2 <- C2 + eta C1 M / sqrt(D) [ (F4/p - F3)/K - C1 (F21 + p F1) ]
//! C3 <- C3 - eta C1 M (1-Kp) / (sqrt(D)(D-K))
//!        [ (F3/(Kp) - (D-K) F5 / (Kp(1-Kp))) - C1 (F1 - (D-K) F22 / (1-Kp)) ]
//! ```
//!
//! with all F-values at the plugged variances of `p`, plus the moving target
//! `C1* = F3/(Kp F1)`, the split `F3 = A + B`, the reduced excess loss, the
//! score-matrix gap `||S - S*||_F = D (1-Kp) / sqrt(K(D-K))`, and the sandwich
//! bounds that pin `C1` to `C1*` after burn-in. The degenerate `D = K` case
//! collapses to the single linear recursion handled by [`dynamics_dk`].

use crate::attention::p_from_c;
use crate::core::{c_sigma, ActivationKind};
use crate::error::{Error, Result};
use crate::expectations::{f1, f2, f3, f5, f6, plug_variances};
use std::f64::consts::PI;

/// Scalar trajectory state at step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarState {
    pub t: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub p: f64,
}

impl ScalarState {
    pub fn zero(d_cap: usize, k: usize) -> Result<Self> {
        Ok(ScalarState {
            t: 0,
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
            p: p_from_c(0.0, 0.0, d_cap, k)?,
        })
    }
}

/// Configuration of a scalar dynamics run. Restricted to unit-norm teacher
/// rows (`v_norm_sq = M`); general norms live in the empirical trainer.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsConfig {
    pub d_cap: usize,
    pub k: usize,
    pub m: usize,
    pub eta: f64,
    pub act: ActivationKind,
    pub v_norm_sq: f64,
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        self.act.validate()?;
        if self.k == 0 || self.d_cap <= self.k {
            return Err(Error::Domain(format!(
                "scalar dynamics needs D > K >= 1, got D={}, K={} (D=K is handled by dynamics_dk)",
                self.d_cap, self.k
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if (self.v_norm_sq - self.m as f64).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "scalar dynamics assumes unit-norm teacher rows (v_norm_sq = M = {}), got {}",
                self.m, self.v_norm_sq
            )));
        }
        Ok(())
    }
}

/// One step of the three coupled recursions; recomputes `p` and bumps `t`.
pub fn step_scalar(state: &ScalarState, cfg: &DynamicsConfig) -> Result<ScalarState> {
    cfg.validate()?;
    let (dk, kk, mm) = (cfg.d_cap as f64, cfg.k as f64, cfg.m as f64);
    let p = state.p;
    let va = plug_variances(p, cfg.d_cap, cfg.k)?;
    let f1v = f1(va.f1_a, cfg.act)?;
    let f22 = f2(va.f22.0, va.f22.1, cfg.act)?;
    let f3v = f3(va.f3.0, va.f3.1, cfg.act)?;
    let f5v = f5(va.f5.0, va.f5.1, va.f5.2, cfg.act)?;
    let one_minus_kp = 1.0 - kk * p;

    let c1 = state.c1 + dk * cfg.eta * (f3v / (kk * p) - state.c1 * f1v);
    // Both score coefficients move through the same softmax-Jacobian factor:
    // with g_on/g_off the two values of the population score gradient, the
    // on-group logit update is p(1-Kp)(g_on - g_off) and the off-group one is
    // -Kp q (g_on - g_off), so dC2 = ((D-K)/K) dC3 identically. The bracket
    // below is the (verified) per-step drive; it has a removable 1/(1-Kp)
    // singularity which is multiplied back by (1-Kp), so expand to keep
    // p -> 1/K finite. Cross-checked against matrix-level population-gradient
    // Monte Carlo at multiple states for all activations.
    let bracket = (f3v / (kk * p) - (dk - kk) * f5v / (kk * p * one_minus_kp))
        - state.c1 * (f1v - (dk - kk) * f22 / one_minus_kp);
    let (c2, c3) = if one_minus_kp.abs() < 1e-300 {
        (state.c2, state.c3)
    } else {
        let dc3 = cfg.eta * state.c1 * mm * one_minus_kp / (dk.sqrt() * (dk - kk)) * bracket;
        (state.c2 + (dk - kk) / kk * dc3, state.c3 + dc3)
    };
    let blown = |v: f64| !v.is_finite() || v.abs() > 1e9;
    if blown(c1) || blown(c2) || blown(c3) {
        return Err(Error::Numeric(format!("scalar state diverged at t={}", state.t)));
    }
    Ok(ScalarState {
        t: state.t + 1,
        c1,
        c2,
        c3,
        p: p_from_c(c2, c3, cfg.d_cap, cfg.k)?,
    })
}

/// The moving stationary target `C1*(p) = F3/(Kp F1)`, always in
/// `[1, sqrt(D/K)]`.
pub fn c1_star(p: f64, d_cap: usize, k: usize, act: ActivationKind) -> Result<f64> {
    let va = plug_variances(p, d_cap, k)?;
    Ok(f3(va.f3.0, va.f3.1, act)? / (k as f64 * p * f1(va.f1_a, act)?))
}

/// The split `F3 = A + B`: `A` the arctan mass, `B` the cross term (zero for
/// identity).
pub fn a_b(p: f64, d_cap: usize, k: usize, act: ActivationKind) -> Result<(f64, f64)> {
    plug_variances(p, d_cap, k)?; // range check
    let (dk, kk) = (d_cap as f64, k as f64);
    let kp2 = kk * p * p;
    let arctan = (p * (kk * (dk - kk)).sqrt()).atan2(1.0 - kk * p);
    Ok(match act {
        ActivationKind::Identity => (kp2, 0.0),
        ActivationKind::Relu => (
            kp2 / 4.0 + kp2 / (2.0 * PI) * arctan,
            (kk / (dk - kk)).sqrt() * p * (1.0 - kk * p) / (2.0 * PI),
        ),
        ActivationKind::LeakyRelu { kappa } => {
            let (wp, wm) = ((1.0 + kappa) * (1.0 + kappa), (1.0 - kappa) * (1.0 - kappa));
            (
                wp * kp2 / 4.0 + wm * kp2 / (2.0 * PI) * arctan,
                wm * (kk / (dk - kk)).sqrt() * p * (1.0 - kk * p) / (2.0 * PI),
            )
        }
    })
}

/// Reduced population excess loss at `(C1, p)`:
/// `c_sigma D |V*|^2 / (2(D-K)) [K(D-K)(1/K - C1 p)^2 + C1^2 (1-Kp)^2]
///  - D |V*|^2 F6(C1, p)`.
pub fn excess_loss_scalar(
    c1: f64,
    p: f64,
    d_cap: usize,
    k: usize,
    v_frob_sq: f64,
    act: ActivationKind,
) -> Result<f64> {
    let (dk, kk) = (d_cap as f64, k as f64);
    let f6v = f6(c1, p, d_cap, k, act)?;
    let quad = kk * (dk - kk) * (1.0 / kk - c1 * p).powi(2) + c1 * c1 * (1.0 - kk * p).powi(2);
    Ok(c_sigma(act) * dk * v_frob_sq / (2.0 * (dk - kk)) * quad - dk * v_frob_sq * f6v)
}

/// `||S(p) - S*||_F = D (1 - Kp) / sqrt(K(D-K))` for the two-value scores.
pub fn s_frobenius_gap(p: f64, d_cap: usize, k: usize) -> f64 {
    let (dk, kk) = (d_cap as f64, k as f64);
    dk / (kk * (dk - kk)).sqrt() * (1.0 - kk * p)
}

/// One recorded step of a scalar trajectory with its derived quantities.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsRecord {
    pub state: ScalarState,
    pub c1_star: f64,
    pub a: f64,
    pub b: f64,
    pub excess_loss: f64,
    pub s_frob_gap: f64,
}

/// Full trajectory plus the measured phase landmarks.
#[derive(Debug, Clone)]
pub struct DynamicsRun {
    pub records: Vec<DynamicsRecord>,
    /// First t with `C1 >= 0.95 C1*` (burn-in end), if reached.
    pub t_burn_in: Option<usize>,
    /// First t with `Kp >= 1/2`, if reached.
    pub t_star: Option<usize>,
}

fn record_for(state: ScalarState, cfg: &DynamicsConfig) -> Result<DynamicsRecord> {
    let (a, b) = a_b(state.p, cfg.d_cap, cfg.k, cfg.act)?;
    Ok(DynamicsRecord {
        state,
        c1_star: c1_star(state.p, cfg.d_cap, cfg.k, cfg.act)?,
        a,
        b,
        excess_loss: excess_loss_scalar(state.c1, state.p, cfg.d_cap, cfg.k, cfg.v_norm_sq, cfg.act)?,
        s_frob_gap: s_frobenius_gap(state.p, cfg.d_cap, cfg.k),
    })
}

/// Runs `T` steps from the zero state, recording every step (index 0..=T) and
/// enforcing the monotonicity invariants.
pub fn run_dynamics(cfg: &DynamicsConfig, t_steps: usize) -> Result<DynamicsRun> {
    cfg.validate()?;
    if t_steps < 1 {
        return Err(Error::Config("T must be >= 1".into()));
    }
    let mut state = ScalarState::zero(cfg.d_cap, cfg.k)?;
    let mut records = Vec::with_capacity(t_steps + 1);
    records.push(record_for(state, cfg)?);
    let mut t_burn_in = None;
    let mut t_star = None;
    for _ in 0..t_steps {
        let next = step_scalar(&state, cfg)?;
        // p (equivalently C2 + C3) is the monotone quantity; C3 alone may
        // dip below zero early in the run.
        if next.p + 1e-15 < state.p {
            return Err(Error::Numeric(format!(
                "p must be nondecreasing, violated at t={}: {} -> {}",
                state.t, state.p, next.p
            )));
        }
        state = next;
        let rec = record_for(state, cfg)?;
        if t_burn_in.is_none() && state.c1 >= 0.95 * rec.c1_star {
            t_burn_in = Some(state.t);
        }
        if t_star.is_none() && cfg.k as f64 * state.p >= 0.5 {
            t_star = Some(state.t);
        }
        records.push(rec);
    }
    Ok(DynamicsRun {
        records,
        t_burn_in,
        t_star,
    })
}

/// Result of evaluating the C1 sandwich at one state.
#[derive(Debug, Clone, Copy)]
pub struct SandwichResult {
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// `upper_bound - C1` (nonnegative iff upper holds).
    pub upper_margin: f64,
    /// `C1 - lower_bound` (nonnegative iff lower holds).
    pub lower_margin: f64,
}

/// Evaluates both C1 bounds at a state. The lower bound applies only past
/// burn-in; the caller decides when to demand `lower_ok`.
pub fn sandwich_check(state: &ScalarState, cfg: &DynamicsConfig) -> Result<SandwichResult> {
    let star = c1_star(state.p, cfg.d_cap, cfg.k, cfg.act)?;
    let (a, b) = a_b(state.p, cfg.d_cap, cfg.k, cfg.act)?;
    let (dk, kk) = (cfg.d_cap as f64, cfg.k as f64);
    let dp_minus_1 = dk * state.p - 1.0;
    // At p = 1/D the slack term is +infinity: the upper bound is vacuous and
    // the lower bound reduces to its 0.95 floor.
    let slack = if dp_minus_1 <= 0.0 {
        f64::INFINITY
    } else {
        4.0 * a / (5.0 * (a + b)) * (1.0 - kk * state.p) / (kk * state.p * dp_minus_1)
    };
    let upper = (1.0 + slack) * star;
    let lower = (0.95f64).max(1.0 - slack) * star;
    Ok(SandwichResult {
        lower_ok: state.c1 >= lower - 1e-12,
        upper_ok: state.c1 <= upper + 1e-12,
        upper_margin: upper - state.c1,
        lower_margin: state.c1 - lower,
    })
}

/// One step of the degenerate `D = K` dynamics.
#[derive(Debug, Clone, Copy)]
pub struct DkRecord {
    pub t: usize,
    pub c: f64,
    /// `(v_norm_sq / 2) e^{-eta (t-1)}`, the excess-loss bound at step t.
    pub excess_bound: f64,
}

/// `D = K` case: `S* = S(0)` already, the score gradient is zero, and the
/// single coefficient follows `C(t+1) = C(t) + eta F1(1) (1 - C(t))` from
/// `C(0) = 0`, i.e. `1 - C(t) = (1 - eta F1(1))^t`. Requires `eta <= 1/2`.
pub fn dynamics_dk(
    eta: f64,
    act: ActivationKind,
    t_steps: usize,
    v_norm_sq: f64,
) -> Result<Vec<DkRecord>> {
    act.validate()?;
    if !(eta > 0.0 && eta <= 0.5) {
        return Err(Error::Config(format!("dynamics_dk needs 0 < eta <= 1/2, got {eta}")));
    }
    let f1_1 = f1(1.0, act)?;
    let mut out = Vec::with_capacity(t_steps + 1);
    let mut c = 0.0;
    for t in 0..=t_steps {
        out.push(DkRecord {
            t,
            c,
            excess_bound: v_norm_sq / 2.0 * (-eta * (t as f64 - 1.0)).exp(),
        });
        c += eta * f1_1 * (1.0 - c);
    }
    Ok(out)
}
