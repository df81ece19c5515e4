//! Closed-form Gaussian expectations F1-F6, the per-step variance plumbing,
//! and a Monte-Carlo oracle.
//!
//! For independent centered Gaussians `x_i` with variances `a, b, c`:
//!
//! ```text
//! F1(a)       = E[ x1 sigma(x1) sigma'(x1) ]
//! F2(a, b)    = E[ x1 sigma(x1+x2) sigma'(x1+x2) ]
//! F3(a, b)    = E[ (x1+x2) sigma(x1) sigma'(x1+x2) ]
//! F4(a, b, c) = E[ x1 sigma(x1+x2) sigma'(x1+x2+x3) ]
//! F5(a, b, c) = E[ x2 sigma(x1) sigma'(x1+x2+x3) ]
//! ```
//!
//! F6(C1, p) is the activation-dependent correction entering the reduced
//! excess loss; its Monte-Carlo oracle uses the product identity
//! `F6 = E[sigma(Z3/K) sigma(C1 Z5)] - c_sigma C1 p` where `(Z3, Z5)` are
//! jointly Gaussian with `Var Z3 = K`, `Var Z5 = K p^2 + (1-Kp)^2/(D-K)`,
//! `Cov = K p` (the teacher's on-group sum and the structured student's
//! pre-activation for a unit teacher row). The closed form follows from the
//! two-sided ReLU product moment of correlated Gaussians.
//!
//! All closed forms are evaluated with analytic boundary limits at `b = 0` /
//! `c = 0` instead of raw substitution, which would hit 0/0 in the arctan
//! arguments at the `p = 1/D` and `p -> 1/K` endpoints.

use crate::core::{apply_activation, c_sigma, ActivationKind};
use crate::error::{Error, Result};
use crate::stream::substream;
use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Leaky-ReLU weight pair: the closed forms carry `(1+kappa)^2/4` on the
/// "both branches positive" mass and `(1-kappa)^2` on the sign-split mass.
/// Identity and ReLU are the `kappa = 1` and `kappa = 0` special cases.
fn branch_weights(act: ActivationKind) -> (f64, f64) {
    match act {
        ActivationKind::Identity => (4.0, 0.0), // (1+1)^2, (1-1)^2
        ActivationKind::Relu => (1.0, 1.0),
        ActivationKind::LeakyRelu { kappa } => ((1.0 + kappa) * (1.0 + kappa), (1.0 - kappa) * (1.0 - kappa)),
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

/// `F1(a)`: a (identity), a/2 (ReLU), (1+kappa^2)a/2 (leaky).
pub fn f1(a: f64, act: ActivationKind) -> Result<f64> {
    check_nonneg("a", a)?;
    Ok(match act {
        ActivationKind::Identity => a,
        ActivationKind::Relu => a / 2.0,
        ActivationKind::LeakyRelu { kappa } => (1.0 + kappa * kappa) * a / 2.0,
    })
}

/// `F2(a, b)`: equals F1(a) for every activation (independent of b).
pub fn f2(a: f64, b: f64, act: ActivationKind) -> Result<f64> {
    check_nonneg("a", a)?;
    check_nonneg("b", b)?;
    f1(a, act)
}

/// `F3(a, b)`, with the `b -> 0` limit `F1(a)` and `a = 0` giving 0.
pub fn f3(a: f64, b: f64, act: ActivationKind) -> Result<f64> {
    check_nonneg("a", a)?;
    check_nonneg("b", b)?;
    if a == 0.0 {
        return Ok(0.0);
    }
    if act == ActivationKind::Identity {
        return Ok(a);
    }
    if b == 0.0 {
        return f1(a, act);
    }
    let (wp, wm) = branch_weights(act);
    Ok(wp * a / 4.0 + wm * a / (2.0 * PI) * (a / b).sqrt().atan() + wm * (a * b).sqrt() / (2.0 * PI))
}

/// `F4(a, b, c)`, with the `c -> 0` limit `F2(a, b)` and `a = 0` giving 0.
pub fn f4(a: f64, b: f64, c: f64, act: ActivationKind) -> Result<f64> {
    check_nonneg("a", a)?;
    check_nonneg("b", b)?;
    check_nonneg("c", c)?;
    if a == 0.0 {
        return Ok(0.0);
    }
    if act == ActivationKind::Identity {
        return Ok(a);
    }
    if c == 0.0 {
        return f2(a, b, act);
    }
    let (wp, wm) = branch_weights(act);
    let bracket = ((a + b) / c).sqrt().atan() + ((a + b) * c).sqrt() / (a + b + c);
    Ok(wp * a / 4.0 + wm * a / (2.0 * PI) * bracket)
}

/// `F5(a, b, c)`: 0 (identity), `b sqrt(a(b+c)) / (2 pi (a+b+c))` (ReLU),
/// `(1-kappa)^2` times the ReLU value (leaky).
pub fn f5(a: f64, b: f64, c: f64, act: ActivationKind) -> Result<f64> {
    check_nonneg("a", a)?;
    check_nonneg("b", b)?;
    check_nonneg("c", c)?;
    if a + b + c == 0.0 {
        return Err(Error::Domain("F5 needs a+b+c > 0".into()));
    }
    if act == ActivationKind::Identity {
        return Ok(0.0);
    }
    let (_, wm) = branch_weights(act);
    Ok(wm * b * (a * (b + c)).sqrt() / (2.0 * PI * (a + b + c)))
}

/// `F6(C1, p)` at dimensions (D, K): 0 (identity); for ReLU
/// `C1 ( p ( arctan(p sqrt(K(D-K)) / (1-Kp)) / (2 pi) - 1/4 )
///      + (1-Kp) / (2 pi sqrt(K(D-K))) )`,
/// and `(1-kappa)^2` times that for leaky. This is
/// `E[sigma(Z3/K) sigma(C1 Z5)] - c_sigma C1 p`, which makes the reduced
/// excess loss an exact identity (brute-force verified against the
/// matrix-level population loss).
pub fn f6(c1: f64, p: f64, d_cap: usize, k: usize, act: ActivationKind) -> Result<f64> {
    check_nonneg("C1", c1)?;
    check_p_range(p, d_cap, k)?;
    if act == ActivationKind::Identity {
        return Ok(0.0);
    }
    let (dk, kk) = (d_cap as f64, k as f64);
    let one_minus_kp = 1.0 - kk * p;
    // atan2 gives the pi/2 limit cleanly when 1 - Kp = 0.
    let arctan = (p * (kk * (dk - kk)).sqrt()).atan2(one_minus_kp);
    let relu_val = c1
        * (p * (arctan / (2.0 * PI) - 0.25)
            + one_minus_kp / (2.0 * PI * (kk * (dk - kk)).sqrt()));
    let (_, wm) = branch_weights(act);
    Ok(wm * relu_val)
}

fn check_p_range(p: f64, d_cap: usize, k: usize) -> Result<()> {
    if d_cap <= k {
        return Err(Error::Domain(format!("need D > K, got D={d_cap}, K={k}")));
    }
    let (dk, kk) = (d_cap as f64, k as f64);
    if !(p >= 1.0 / dk - 1e-12 && p <= 1.0 / kk + 1e-12) {
        return Err(Error::Domain(format!(
            "p={p} outside [1/D, 1/K] = [{}, {}]",
            1.0 / dk,
            1.0 / kk
        )));
    }
    Ok(())
}

/// The six variance tuples the scalar dynamics feed into F1-F5 at on-group
/// weight `p` (off-group weight `(1-Kp)/(D-K)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceArgs {
    pub f1_a: f64,
    pub f21: (f64, f64),
    pub f22: (f64, f64),
    pub f3: (f64, f64),
    pub f4: (f64, f64, f64),
    pub f5: (f64, f64, f64),
}

/// Builds the variance tuples from `(p, D, K)`.
pub fn plug_variances(p: f64, d_cap: usize, k: usize) -> Result<VarianceArgs> {
    check_p_range(p, d_cap, k)?;
    let (dk, kk) = (d_cap as f64, k as f64);
    let q = (1.0 - kk * p) / (dk - kk); // off-group attention weight
    let p2 = p * p;
    let q2 = q * q;
    Ok(VarianceArgs {
        f1_a: kk * p2 + (dk - kk) * q2,
        f21: (p2, (kk - 1.0) * p2 + (dk - kk) * q2),
        f22: (q2, kk * p2 + (dk - kk - 1.0) * q2),
        f3: (kk * p2, (dk - kk) * q2),
        f4: (p2, (kk - 1.0) * p2, (dk - kk) * q2),
        f5: (kk * p2, q2, (dk - kk - 1.0) * q2),
    })
}

/// Which expectation the Monte-Carlo oracle estimates, with its arguments.
#[derive(Debug, Clone, Copy)]
pub enum McTarget {
    F1 { a: f64 },
    F2 { a: f64, b: f64 },
    F3 { a: f64, b: f64 },
    F4 { a: f64, b: f64, c: f64 },
    F5 { a: f64, b: f64, c: f64 },
    F6 { c1: f64, p: f64, d_cap: usize, k: usize },
}

const MC_BLOCK: usize = 1 << 14;

/// Monte-Carlo estimate `(mean, standard error)` of the defining expectation,
/// deterministic per seed and independent of worker count (indexed block
/// substreams, reduced in block order). `antithetic` pairs each Gaussian draw
/// with its negation; the estimator's mean is unchanged.
pub fn mc_expectation(
    target: McTarget,
    act: ActivationKind,
    n: usize,
    seed: u64,
    antithetic: bool,
) -> Result<(f64, f64)> {
    if n < 10_000 {
        return Err(Error::Domain(format!("MC oracle needs n >= 10^4, got {n}")));
    }
    validate_target(&target)?;
    let blocks = n.div_ceil(MC_BLOCK);
    let partials: Vec<(f64, f64, usize)> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = substream(seed, blk as u64 + 1);
            let count = MC_BLOCK.min(n - blk * MC_BLOCK);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            let mut i = 0;
            while i < count {
                let z = [gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)];
                let v = integrand(&target, act, &z);
                sum += v;
                sumsq += v * v;
                i += 1;
                if antithetic && i < count {
                    let zn = [-z[0], -z[1], -z[2]];
                    let v = integrand(&target, act, &zn);
                    sum += v;
                    sumsq += v * v;
                    i += 1;
                }
            }
            (sum, sumsq, count)
        })
        .collect();
    let (mut sum, mut sumsq, mut total) = (0.0, 0.0, 0usize);
    for (s, sq, c) in partials {
        sum += s;
        sumsq += sq;
        total += c;
    }
    let nn = total as f64;
    let mean = sum / nn;
    let var = (sumsq / nn - mean * mean).max(0.0);
    Ok((mean, (var / nn).sqrt()))
}

fn validate_target(target: &McTarget) -> Result<()> {
    match *target {
        McTarget::F1 { a } => check_nonneg("a", a),
        McTarget::F2 { a, b } | McTarget::F3 { a, b } => {
            check_nonneg("a", a)?;
            check_nonneg("b", b)
        }
        McTarget::F4 { a, b, c } | McTarget::F5 { a, b, c } => {
            check_nonneg("a", a)?;
            check_nonneg("b", b)?;
            check_nonneg("c", c)
        }
        McTarget::F6 { c1, p, d_cap, k } => {
            check_nonneg("C1", c1)?;
            check_p_range(p, d_cap, k)
        }
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    crate::core::standard_normal(rng)
}

fn integrand(target: &McTarget, act: ActivationKind, z: &[f64; 3]) -> f64 {
    let s = |x: f64| apply_activation(x, act);
    let sp = |x: f64| crate::core::activation_derivative(x, act);
    match *target {
        McTarget::F1 { a } => {
            let x1 = a.sqrt() * z[0];
            x1 * s(x1) * sp(x1)
        }
        McTarget::F2 { a, b } => {
            let (x1, x2) = (a.sqrt() * z[0], b.sqrt() * z[1]);
            x1 * s(x1 + x2) * sp(x1 + x2)
        }
        McTarget::F3 { a, b } => {
            let (x1, x2) = (a.sqrt() * z[0], b.sqrt() * z[1]);
            (x1 + x2) * s(x1) * sp(x1 + x2)
        }
        McTarget::F4 { a, b, c } => {
            let (x1, x2, x3) = (a.sqrt() * z[0], b.sqrt() * z[1], c.sqrt() * z[2]);
            x1 * s(x1 + x2) * sp(x1 + x2 + x3)
        }
        McTarget::F5 { a, b, c } => {
            let (x1, x2, x3) = (a.sqrt() * z[0], b.sqrt() * z[1], c.sqrt() * z[2]);
            x2 * s(x1) * sp(x1 + x2 + x3)
        }
        McTarget::F6 { c1, p, d_cap, k } => {
            // sigma(Z3/K) sigma(C1 Z5) - c_sigma C1 p with the joint
            // Gaussian (Z3, Z5) described in the module docs.
            let (dk, kk) = (d_cap as f64, k as f64);
            let z3 = kk.sqrt() * z[0];
            let z5 = p * kk.sqrt() * z[0] + (1.0 - kk * p) / (dk - kk).sqrt() * z[1];
            s(z3 / kk) * s(c1 * z5) - c_sigma(act) * c1 * p
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ACTS: [ActivationKind; 3] = [
        ActivationKind::Identity,
        ActivationKind::Relu,
        ActivationKind::LeakyRelu { kappa: 0.1 },
    ];

    #[test]
    fn paper_spot_values() {
        assert_eq!(f1(2.0, ActivationKind::Relu).unwrap(), 1.0);
        assert_eq!(f2(1.0, 3.0, ActivationKind::Relu).unwrap(), 0.5);
        assert_eq!(f2(2.0, 0.1, ActivationKind::Identity).unwrap(), 2.0);
        let leaky = ActivationKind::LeakyRelu { kappa: 0.3 };
        assert!((f1(1.7, leaky).unwrap() - 0.9265).abs() < 1e-12);
        // F3(1,1,relu) = 3/8 + 1/(2 pi)
        let v = f3(1.0, 1.0, ActivationKind::Relu).unwrap();
        assert!((v - (0.375 + 1.0 / (2.0 * PI))).abs() < 1e-15);
        assert!((v - 0.5341549).abs() < 1e-7);
        // F4(1,1,2,relu) = 1/4 + (1/2 pi)(pi/4 + 1/2)
        let v = f4(1.0, 1.0, 2.0, ActivationKind::Relu).unwrap();
        assert!((v - (0.25 + (PI / 4.0 + 0.5) / (2.0 * PI))).abs() < 1e-15);
        assert!((v - 0.4545775).abs() < 1e-7);
        // F5(1,1,1,relu) = sqrt(2)/(6 pi)
        let v = f5(1.0, 1.0, 1.0, ActivationKind::Relu).unwrap();
        assert!((v - 2f64.sqrt() / (6.0 * PI)).abs() < 1e-15);
        assert!((v - 0.0750264).abs() < 1e-7);
        for act in ACTS {
            assert_eq!(f5(1.0, 2.0, 3.0, ActivationKind::Identity).unwrap(), 0.0);
            assert_eq!(f1(0.0, act).unwrap(), 0.0);
            assert_eq!(f2(0.0, 5.0, act).unwrap(), 0.0);
            assert_eq!(f4(0.0, 1.0, 2.0, act).unwrap(), 0.0);
        }
    }

    #[test]
    fn boundary_limits() {
        for act in ACTS {
            // b -> 0 degenerates F3 to F1, c -> 0 degenerates F4 to F2.
            assert_eq!(f3(1.3, 0.0, act).unwrap(), f1(1.3, act).unwrap());
            assert_eq!(f4(1.3, 0.7, 0.0, act).unwrap(), f2(1.3, 0.7, act).unwrap());
            // Tiny-b continuity toward the limit.
            let lim = f1(1.3, act).unwrap();
            assert!((f3(1.3, 1e-14, act).unwrap() - lim).abs() < 1e-6);
        }
        // p -> 1/K kills F6.
        let v = f6(1.0, 0.25, 20, 4, ActivationKind::Relu).unwrap();
        assert!(v.abs() < 1e-15, "F6 at p=1/K should vanish, got {v}");
    }

    #[test]
    fn identity_rows() {
        assert_eq!(f3(2.5, 0.3, ActivationKind::Identity).unwrap(), 2.5);
        assert_eq!(f4(2.5, 0.3, 0.9, ActivationKind::Identity).unwrap(), 2.5);
        assert_eq!(f6(1.7, 0.09, 20, 4, ActivationKind::Identity).unwrap(), 0.0);
    }

    #[test]
    fn leaky_one_kills_sign_split_terms() {
        // kappa -> 1 turns leaky into identity; the (1-kappa)^2 terms vanish.
        let act = ActivationKind::LeakyRelu { kappa: 1.0 - 1e-9 };
        assert!(f5(1.0, 1.0, 1.0, act).unwrap() < 1e-17);
    }

    #[test]
    fn domain_errors() {
        assert!(f1(-1.0, ActivationKind::Relu).is_err());
        assert!(f3(1.0, -0.1, ActivationKind::Relu).is_err());
        assert!(f6(1.0, 0.5, 20, 4, ActivationKind::Relu).is_err()); // p > 1/K
        assert!(plug_variances(0.3, 20, 4).is_err());
        assert!(plug_variances(0.1, 4, 4).is_err()); // D = K
        assert!(mc_expectation(McTarget::F1 { a: 1.0 }, ActivationKind::Relu, 100, 0, false).is_err());
    }

    #[test]
    fn plug_variances_spot_values() {
        // D=20, K=4, p=0.1: F1 arg = 4(0.01) + 16*(0.6/16)^2 = 0.0625.
        let v = plug_variances(0.1, 20, 4).unwrap();
        assert!((v.f1_a - 0.0625).abs() < 1e-15);
        // p = 1/D: F3 args (K/D^2, (1-K/D)^2/(D-K)).
        let v = plug_variances(0.05, 20, 4).unwrap();
        assert!((v.f3.0 - 4.0 / 400.0).abs() < 1e-15);
        assert!((v.f3.1 - (0.8f64 * 0.8) / 16.0).abs() < 1e-15);
        // p -> 1/K: F3 args (1/K, 0).
        let v = plug_variances(0.25, 20, 4).unwrap();
        assert!((v.f3.0 - 0.25).abs() < 1e-15);
        assert!(v.f3.1.abs() < 1e-15);
    }

    #[test]
    fn mc_oracle_matches_closed_forms() {
        // A cheap in-suite version of the acceptance sweep: 3 tuples per
        // (F, act) at n = 2*10^5, 4-SE agreement.
        let n = 200_000;
        let mut failures = Vec::new();
        let tuples = [(0.7, 1.9, 0.31), (2.4, 0.05, 4.0), (1.0, 1.0, 1.0)];
        for (ti, &(a, b, c)) in tuples.iter().enumerate() {
            for (ai, act) in ACTS.into_iter().enumerate() {
                let seed = (ti * 10 + ai) as u64;
                let cases: [(McTarget, f64); 5] = [
                    (McTarget::F1 { a }, f1(a, act).unwrap()),
                    (McTarget::F2 { a, b }, f2(a, b, act).unwrap()),
                    (McTarget::F3 { a, b }, f3(a, b, act).unwrap()),
                    (McTarget::F4 { a, b, c }, f4(a, b, c, act).unwrap()),
                    (McTarget::F5 { a, b, c }, f5(a, b, c, act).unwrap()),
                ];
                for (target, exact) in cases {
                    let (est, se) = mc_expectation(target, act, n, seed, false).unwrap();
                    if (est - exact).abs() > 4.0 * se.max(1e-12) {
                        failures.push(format!("{target:?} {act:?}: est {est} vs {exact} (se {se})"));
                    }
                }
            }
        }
        assert!(failures.is_empty(), "{failures:?}");
    }

    #[test]
    fn mc_oracle_matches_f6() {
        for act in ACTS {
            for &(c1, p) in &[(1.0, 0.1), (0.6, 0.07), (1.3, 0.21)] {
                let exact = f6(c1, p, 20, 4, act).unwrap();
                let (est, se) =
                    mc_expectation(McTarget::F6 { c1, p, d_cap: 20, k: 4 }, act, 400_000, 11, false)
                        .unwrap();
                assert!(
                    (est - exact).abs() <= 4.0 * se.max(1e-12),
                    "F6({c1},{p}) {act:?}: {est} vs {exact} (se {se})"
                );
            }
        }
    }

    #[test]
    fn mc_is_deterministic_and_antithetic_consistent() {
        let t = McTarget::F3 { a: 1.0, b: 2.0 };
        let (e1, _) = mc_expectation(t, ActivationKind::Relu, 100_000, 5, false).unwrap();
        let (e2, _) = mc_expectation(t, ActivationKind::Relu, 100_000, 5, false).unwrap();
        assert_eq!(e1, e2);
        let exact = f3(1.0, 2.0, ActivationKind::Relu).unwrap();
        let (e3, se3) = mc_expectation(t, ActivationKind::Relu, 100_000, 5, true).unwrap();
        assert!((e3 - exact).abs() <= 4.0 * se3);
    }

    #[test]
    fn f3_sandwich_bounds() {
        // max(a/2, a/4 + sqrt(ab)/(2 pi)) <= F3_relu <= a/2 + b sqrt(ab)/(2 pi (a+b)) <= a/2 + b/(4 pi)
        for d_cap in [10usize, 20, 50] {
            for k in 1..=5usize {
                if d_cap <= k {
                    continue;
                }
                for i in 0..50 {
                    let lo = 1.0 / d_cap as f64;
                    let hi = 1.0 / k as f64 - 1e-4;
                    let p = lo + (hi - lo) * i as f64 / 49.0;
                    let va = plug_variances(p, d_cap, k).unwrap();
                    let (a, b) = va.f3;
                    let v = f3(a, b, ActivationKind::Relu).unwrap();
                    let lower = (a / 2.0).max(a / 4.0 + (a * b).sqrt() / (2.0 * PI));
                    let upper1 = a / 2.0 + b * (a * b).sqrt() / (2.0 * PI * (a + b));
                    let upper2 = a / 2.0 + b / (4.0 * PI);
                    assert!(lower <= v + 1e-15, "lower {lower} > {v}");
                    assert!(v <= upper1 + 1e-15, "{v} > upper1 {upper1}");
                    assert!(upper1 <= upper2 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn ratio_bounds_grid() {
        // Kp <= F3/F1 <= sqrt(DK) p on the plugged variances, all activations.
        for d_cap in [10usize, 20, 50] {
            for k in 1..=5usize {
                if d_cap <= k {
                    continue;
                }
                for act in ACTS {
                    for i in 0..50 {
                        let lo = 1.0 / d_cap as f64;
                        let hi = 1.0 / k as f64 - 1e-4;
                        let p = lo + (hi - lo) * i as f64 / 49.0;
                        let va = plug_variances(p, d_cap, k).unwrap();
                        let ratio = f3(va.f3.0, va.f3.1, act).unwrap() / f1(va.f1_a, act).unwrap();
                        let (dk, kk) = (d_cap as f64, k as f64);
                        assert!(
                            kk * p <= ratio + 1e-12 && ratio <= (dk * kk).sqrt() * p + 1e-12,
                            "D={d_cap} K={k} p={p} {act:?}: ratio {ratio}"
                        );
                    }
                }
            }
        }
    }
}
