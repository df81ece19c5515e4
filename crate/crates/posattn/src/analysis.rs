//! Metric computations turning trajectories into summary numbers: log-log
//! slope fits, cosine similarity, and the two-value score-structure check.

use crate::core::RealMatrix;
use crate::error::{Error, Result};

/// Least-squares line on `(log t, log value)` over the tail of a series.
#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub tail_fraction: f64,
}

/// Default tail fraction for slope fits (excludes the burn-in half).
pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;

/// Floor below which trajectory values are dropped before log transforms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Fits `log y = slope log t + intercept` on the last `tail_fraction` of the
/// series. Values at or below [`LOG_FLOOR`] are dropped first; at least 10
/// points must survive in the tail.
pub fn loglog_slope(series: &[(f64, f64)], tail_fraction: f64) -> Result<SlopeFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Domain(format!(
            "tail_fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let filtered: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, v)| t > 0.0 && v > LOG_FLOOR)
        .collect();
    let start = ((filtered.len() as f64) * (1.0 - tail_fraction)).floor() as usize;
    let tail = &filtered[start.min(filtered.len())..];
    if tail.len() < 10 {
        return Err(Error::Domain(format!(
            "slope fit needs >= 10 positive tail points, got {}",
            tail.len()
        )));
    }
    let n = tail.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, v) in tail {
        let (x, y) = (t.ln(), v.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return Err(Error::Domain("degenerate abscissa for slope fit".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let ss_tot = syy - sy * sy / n;
    let ss_res: f64 = tail
        .iter()
        .map(|&(t, v)| {
            let r = v.ln() - (slope * t.ln() + intercept);
            r * r
        })
        .sum();
    let r_squared = if ss_tot <= 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        tail_fraction,
    })
}

/// Frobenius cosine similarity `<A, B>_F / (|A|_F |B|_F)`.
pub fn cosine_similarity(w_v: &RealMatrix, v_star: &RealMatrix) -> Result<f64> {
    let (na, nb) = (w_v.frob_norm(), v_star.frob_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity undefined for a zero matrix".into()));
    }
    Ok((w_v.frob_inner(v_star)? / (na * nb)).clamp(-1.0, 1.0))
}

/// Result of checking the two-value (on-group / off-group) score structure.
#[derive(Debug, Clone, Copy)]
pub struct TwoValueStructure {
    /// Mean over on-group entries.
    pub p_hat: f64,
    /// Mean over off-group entries (0 when D = K leaves no off-group).
    pub off_hat: f64,
    /// Max absolute deviation of any entry from its class mean.
    pub max_dev: f64,
}

/// Splits the entries of a column-stochastic `S` by group membership and
/// measures how far it is from exactly two-valued.
pub fn two_value_structure(s: &RealMatrix, groups: &[Vec<usize>]) -> Result<TwoValueStructure> {
    let d_cap = s.rows;
    if s.cols != d_cap || groups.len() != d_cap {
        return Err(Error::Dimension("S must be DxD with one group per column".into()));
    }
    let (mut on_sum, mut on_n, mut off_sum, mut off_n) = (0.0, 0usize, 0.0, 0usize);
    for (i, g) in groups.iter().enumerate() {
        for r in 0..d_cap {
            if g.contains(&r) {
                on_sum += s.get(r, i);
                on_n += 1;
            } else {
                off_sum += s.get(r, i);
                off_n += 1;
            }
        }
    }
    let p_hat = on_sum / on_n as f64;
    let off_hat = if off_n == 0 { 0.0 } else { off_sum / off_n as f64 };
    let mut max_dev: f64 = 0.0;
    for (i, g) in groups.iter().enumerate() {
        for r in 0..d_cap {
            let mean = if g.contains(&r) { p_hat } else { off_hat };
            max_dev = max_dev.max((s.get(r, i) - mean).abs());
        }
    }
    Ok(TwoValueStructure {
        p_hat,
        off_hat,
        max_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{attention_scores, p_from_c, structured_wkq};
    use crate::core::{make_positional_encoding, ActivationKind, EncodingScheme};
    use crate::teachers::sts_teacher;

    #[test]
    fn exact_power_laws() {
        for (c, expo) in [(7.0, -1.0), (3.0, -0.5), (5.0, 0.0)] {
            let series: Vec<(f64, f64)> =
                (1..=200).map(|t| (t as f64, c * (t as f64).powf(expo))).collect();
            for tail in [0.25, 0.5, 1.0] {
                let fit = loglog_slope(&series, tail).unwrap();
                assert!((fit.slope - expo).abs() < 1e-9, "slope {} vs {expo}", fit.slope);
                assert!((fit.intercept - c.ln()).abs() < 1e-8);
                if expo != 0.0 {
                    assert!(fit.r_squared > 1.0 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn slope_fit_rejects_bad_inputs() {
        let short: Vec<(f64, f64)> = (1..=5).map(|t| (t as f64, 1.0 / t as f64)).collect();
        assert!(loglog_slope(&short, 1.0).is_err());
        let series: Vec<(f64, f64)> = (1..=100).map(|t| (t as f64, 1.0 / t as f64)).collect();
        assert!(loglog_slope(&series, 0.0).is_err());
        // Values under the floor are dropped, not log'd.
        let mut floored = series.clone();
        for v in floored.iter_mut().skip(50) {
            v.1 = 0.0;
        }
        let fit = loglog_slope(&floored, 1.0).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_properties() {
        let v = crate::teachers::unit_norm_rows(3, 5, 1);
        assert!((cosine_similarity(&v.scale(2.0), &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&v.scale(-1.0), &v).unwrap() + 1.0).abs() < 1e-12);
        // Swap two rows to build an orthogonal direction in a simple case.
        let mut a = RealMatrix::zeros(1, 2);
        a.set(0, 0, 1.0);
        let mut b = RealMatrix::zeros(1, 2);
        b.set(0, 1, 1.0);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        assert!(cosine_similarity(&RealMatrix::zeros(1, 2), &b).is_err());
    }

    #[test]
    fn two_value_on_structured_scores() {
        let spec = sts_teacher(3, 10, &[1, 4, 8], ActivationKind::Identity).unwrap();
        let enc = make_positional_encoding(10, EncodingScheme::RandomOrthogonal, 2).unwrap();
        let w = structured_wkq(1.1, 0.3, &spec.groups, &enc).unwrap();
        let s = attention_scores(&w, &enc.p).unwrap();
        let tv = two_value_structure(&s, &spec.groups).unwrap();
        let p = p_from_c(1.1, 0.3, 10, 3).unwrap();
        assert!((tv.p_hat - p).abs() <= 1e-12);
        assert!(tv.max_dev <= 1e-12);
        // S = S* gives (1/K, 0, 0).
        let tv = two_value_structure(&spec.s_star, &spec.groups).unwrap();
        assert!((tv.p_hat - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tv.off_hat, 0.0);
        assert_eq!(tv.max_dev, 0.0);
    }

    #[test]
    fn class_means_recompose_column_sum() {
        let spec = sts_teacher(3, 9, &[0, 2], ActivationKind::Identity).unwrap();
        let enc = make_positional_encoding(9, EncodingScheme::RandomOrthogonal, 5).unwrap();
        for (c2, c3) in [(0.4, 0.0), (2.0, 1.0)] {
            let w = structured_wkq(c2, c3, &spec.groups, &enc).unwrap();
            let s = attention_scores(&w, &enc.p).unwrap();
            let tv = two_value_structure(&s, &spec.groups).unwrap();
            let total = tv.p_hat * 2.0 + tv.off_hat * 7.0;
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
