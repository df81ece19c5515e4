//! The student model: position-only softmax attention scores, forward pass,
//! and the structured `W_KQ` parameterization used by the reduced dynamics.
//!
//! Student: `TF(X) = sigma(W_V X S)` with `S = colsoftmax(P^T W_KQ P / sqrt(D))`,
//! `P` a fixed orthogonal positional encoding. The structured
//! `W_KQ(C2, C3) = C2 sum_i sum_{i' in G^i} p_{i'} p_i^T
//!               - C3 sum_i sum_{i' notin G^i} p_{i'} p_i^T`
//! produces a two-value score matrix: on-group weight
//! `p = 1 / (K + (D-K) e^{-(C2+C3)/sqrt(D)})`, off-group `(1-Kp)/(D-K)`.

use crate::core::{apply_activation, PositionalEncoding, RealMatrix};
use crate::error::{Error, Result};

/// Trainable student parameters plus their fixed encoding.
#[derive(Debug, Clone)]
pub struct StudentParams {
    pub w_v: RealMatrix,
    pub w_kq: RealMatrix,
    pub encoding: PositionalEncoding,
}

impl StudentParams {
    /// Zero-initialized parameters for an `(M, d, D)` problem.
    pub fn zeros(m: usize, d: usize, encoding: PositionalEncoding) -> Self {
        let d_cap = encoding.dim();
        StudentParams {
            w_v: RealMatrix::zeros(m, d),
            w_kq: RealMatrix::zeros(d_cap, d_cap),
            encoding,
        }
    }
}

/// Column-wise softmax with per-column max subtraction.
pub fn column_softmax(logits: &RealMatrix) -> Result<RealMatrix> {
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite attention logits".into()));
    }
    let mut out = RealMatrix::zeros(logits.rows, logits.cols);
    for c in 0..logits.cols {
        let mut max = f64::NEG_INFINITY;
        for r in 0..logits.rows {
            max = max.max(logits.get(r, c));
        }
        let mut sum = 0.0;
        for r in 0..logits.rows {
            let e = (logits.get(r, c) - max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for r in 0..logits.rows {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    Ok(out)
}

/// `S = colsoftmax(P^T W_KQ P / sqrt(D))`.
pub fn attention_scores(w_kq: &RealMatrix, p: &RealMatrix) -> Result<RealMatrix> {
    let d_cap = p.rows;
    if w_kq.rows != d_cap || w_kq.cols != d_cap {
        return Err(Error::Dimension("W_KQ must be DxD".into()));
    }
    let logits = p
        .transpose()
        .matmul(w_kq)?
        .matmul(p)?
        .scale(1.0 / (d_cap as f64).sqrt());
    column_softmax(&logits)
}

/// `TF(X) = sigma(W_V X S)` entrywise under `act`.
pub fn student_forward(
    params: &StudentParams,
    x: &RealMatrix,
    act: crate::core::ActivationKind,
) -> Result<RealMatrix> {
    let s = attention_scores(&params.w_kq, &params.encoding.p)?;
    student_forward_scored(&params.w_v, x, &s, act)
}

/// Forward pass with a precomputed score matrix, for loops that evaluate
/// many inputs at fixed parameters.
pub fn student_forward_scored(
    w_v: &RealMatrix,
    x: &RealMatrix,
    s: &RealMatrix,
    act: crate::core::ActivationKind,
) -> Result<RealMatrix> {
    let pre = w_v.matmul(x)?.matmul(s)?;
    Ok(pre.map(|v| apply_activation(v, act)))
}

/// The rank-structured `W_KQ` with on-group coefficient `C2` and off-group
/// coefficient `-C3` in the encoding basis.
pub fn structured_wkq(
    c2: f64,
    c3: f64,
    groups: &[Vec<usize>],
    encoding: &PositionalEncoding,
) -> Result<RealMatrix> {
    if c2 < 0.0 || c3 < 0.0 {
        return Err(Error::Domain(format!("C2, C3 must be >= 0, got ({c2}, {c3})")));
    }
    let d_cap = encoding.dim();
    if groups.len() != d_cap {
        return Err(Error::Dimension("groups length must equal D".into()));
    }
    // W_KQ = P Gamma P^T where Gamma[i', i] = C2 on-group, -C3 off-group;
    // equivalent to the double sum over p_{i'} p_i^T pairs.
    let mut gamma = RealMatrix::zeros(d_cap, d_cap);
    for (i, g) in groups.iter().enumerate() {
        for ip in 0..d_cap {
            let v = if g.contains(&ip) { c2 } else { -c3 };
            gamma.set(ip, i, v);
        }
    }
    encoding.p.matmul(&gamma)?.matmul(&encoding.p.transpose())
}

/// On-group attention weight induced by the structured `W_KQ`:
/// `p = 1 / (K + (D-K) exp(-(C2+C3)/sqrt(D)))`, computed in the log domain so
/// large `C2+C3` saturates at `1/K` instead of overflowing.
pub fn p_from_c(c2: f64, c3: f64, d_cap: usize, k: usize) -> Result<f64> {
    if d_cap <= k {
        return Err(Error::Domain(format!("p_from_c needs D > K, got D={d_cap}, K={k}")));
    }
    // Either coefficient may be negative (the dynamics let C3 dip below zero
    // early); only the sum matters. Clamp the exp argument against overflow
    // and denormal noise on both sides.
    let arg = (-(c2 + c3) / (d_cap as f64).sqrt()).clamp(-745.0, 709.0);
    Ok(1.0 / (k as f64 + (d_cap - k) as f64 * arg.exp()))
}

/// Full one-layer transformer forward on the stacked input `Z = [X; P]`:
/// `sigma(Wt_V Z colsoftmax(Z^T Wt_KQ Z / sqrt(D)))`. Forward-only; kept for
/// the block-structure heatmap demo.
pub fn full_transformer_forward(
    z: &RealMatrix,
    wt_v: &RealMatrix,
    wt_kq: &RealMatrix,
    d_cap: usize,
    act: crate::core::ActivationKind,
) -> Result<RealMatrix> {
    if z.cols != d_cap {
        return Err(Error::Dimension(format!(
            "Z must have D={d_cap} columns, got {}",
            z.cols
        )));
    }
    if wt_v.cols != z.rows || wt_kq.rows != z.rows || wt_kq.cols != z.rows {
        return Err(Error::Dimension("full transformer weight shapes inconsistent with Z".into()));
    }
    let logits = z
        .transpose()
        .matmul(wt_kq)?
        .matmul(z)?
        .scale(1.0 / (d_cap as f64).sqrt());
    let s = column_softmax(&logits)?;
    let pre = wt_v.matmul(z)?.matmul(&s)?;
    Ok(pre.map(|v| apply_activation(v, act)))
}

/// Stacks `X` over `P` into the `(d+D) x D` full-transformer input.
pub fn stack_input(x: &RealMatrix, encoding: &PositionalEncoding) -> Result<RealMatrix> {
    let d_cap = encoding.dim();
    if x.cols != d_cap {
        return Err(Error::Dimension("X and P column counts differ".into()));
    }
    let mut z = RealMatrix::zeros(x.rows + d_cap, d_cap);
    for r in 0..x.rows {
        for c in 0..d_cap {
            z.set(r, c, x.get(r, c));
        }
    }
    for r in 0..d_cap {
        for c in 0..d_cap {
            z.set(x.rows + r, c, encoding.p.get(r, c));
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{
        make_positional_encoding, standard_normal, ActivationKind, EncodingScheme,
    };
    use crate::stream::{purpose_stream, Purpose};
    use crate::teachers::{sts_teacher, teacher_forward};

    fn encoding(d_cap: usize, scheme: EncodingScheme) -> PositionalEncoding {
        make_positional_encoding(d_cap, scheme, 7).unwrap()
    }

    #[test]
    fn zero_wkq_gives_uniform_scores() {
        let enc = encoding(6, EncodingScheme::RandomOrthogonal);
        let s = attention_scores(&RealMatrix::zeros(6, 6), &enc.p).unwrap();
        for v in &s.data {
            assert!((v - 1.0 / 6.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn scores_column_stochastic_for_large_logits() {
        let mut rng = purpose_stream(1, Purpose::Inputs, 0);
        let enc = encoding(8, EncodingScheme::RandomOrthogonal);
        let mut w = RealMatrix::zeros(8, 8);
        for v in w.data.iter_mut() {
            *v = 100.0 * (rng.gen::<f64>() - 0.5); // entries in [-50, 50]
        }
        let s = attention_scores(&w, &enc.p).unwrap();
        for c in 0..8 {
            let sum: f64 = (0..8).map(|r| s.get(r, c)).sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            for r in 0..8 {
                assert!(s.get(r, c) > 0.0);
            }
        }
    }

    use rand::Rng;

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = purpose_stream(2, Purpose::Inputs, 0);
        let mut logits = RealMatrix::zeros(5, 5);
        for v in logits.data.iter_mut() {
            *v = standard_normal(&mut rng);
        }
        let s0 = column_softmax(&logits).unwrap();
        // Add a constant to every entry of column 2: that column is unchanged.
        let mut shifted = logits.clone();
        for r in 0..5 {
            shifted.set(r, 2, shifted.get(r, 2) + 13.7);
        }
        let s1 = column_softmax(&shifted).unwrap();
        for r in 0..5 {
            assert!((s0.get(r, 2) - s1.get(r, 2)).abs() <= 1e-12);
        }
    }

    #[test]
    fn structured_two_value_scores() {
        let spec = sts_teacher(3, 10, &[1, 4, 8], ActivationKind::Identity).unwrap();
        for scheme in [EncodingScheme::Identity, EncodingScheme::RandomOrthogonal] {
            let enc = encoding(10, scheme);
            let w = structured_wkq(1.3, 0.4, &spec.groups, &enc).unwrap();
            let s = attention_scores(&w, &enc.p).unwrap();
            let p = p_from_c(1.3, 0.4, 10, 3).unwrap();
            let off = (1.0 - 3.0 * p) / 7.0;
            for i in 0..10 {
                for r in 0..10 {
                    let expect = if spec.groups[i].contains(&r) { p } else { off };
                    assert!(
                        (s.get(r, i) - expect).abs() <= 1e-12,
                        "scheme {scheme:?} entry ({r},{i}): {} vs {expect}",
                        s.get(r, i)
                    );
                }
            }
        }
    }

    #[test]
    fn structured_wkq_identity_encoding_reads_off_coefficients() {
        let spec = sts_teacher(2, 6, &[0, 3], ActivationKind::Identity).unwrap();
        let enc = encoding(6, EncodingScheme::Identity);
        let w = structured_wkq(2.0, 0.5, &spec.groups, &enc).unwrap();
        for i in 0..6 {
            for ip in 0..6 {
                let expect = if spec.groups[i].contains(&ip) { 2.0 } else { -0.5 };
                assert!((w.get(ip, i) - expect).abs() <= 1e-15);
            }
        }
        // Zero coefficients give the zero matrix.
        let w0 = structured_wkq(0.0, 0.0, &spec.groups, &enc).unwrap();
        assert!(w0.max_abs() <= 1e-15);
    }

    #[test]
    fn p_from_c_values() {
        assert!((p_from_c(0.0, 0.0, 20, 4).unwrap() - 0.05).abs() < 1e-15);
        // C2+C3 = sqrt(20) ln 4 gives exp factor 1/4: p = 1/(4 + 16/4) = 1/8.
        let c = 20f64.sqrt() * 4f64.ln();
        assert!((p_from_c(c, 0.0, 20, 4).unwrap() - 0.125).abs() < 1e-12);
        // Saturation at 1/K without overflow.
        assert!((p_from_c(1e9, 1e9, 20, 4).unwrap() - 0.25).abs() < 1e-15);
        assert!(p_from_c(1.0, 0.0, 4, 4).is_err());
    }

    #[test]
    fn student_forward_recovers_teacher_and_matches_loop() {
        let spec = sts_teacher(3, 8, &[2, 5], ActivationKind::Relu).unwrap();
        let enc = encoding(8, EncodingScheme::RandomOrthogonal);
        // Near-recovery: large C2 pushes p to 1/K.
        let params = StudentParams {
            w_v: spec.v_star.clone(),
            w_kq: structured_wkq(5000.0, 0.0, &spec.groups, &enc).unwrap(),
            encoding: enc.clone(),
        };
        let mut rng = purpose_stream(3, Purpose::Inputs, 0);
        let mut x = RealMatrix::zeros(3, 8);
        for v in x.data.iter_mut() {
            *v = standard_normal(&mut rng);
        }
        let out = student_forward(&params, &x, spec.act).unwrap();
        let teach = teacher_forward(&spec, &x).unwrap();
        assert!(out.sub(&teach).unwrap().max_abs() <= 1e-9);

        // W_V = 0 gives sigma(0) = 0.
        let zero = StudentParams::zeros(3, 3, enc.clone());
        let out = student_forward(&zero, &x, spec.act).unwrap();
        assert!(out.max_abs() == 0.0);

        // Random params against a triple-loop oracle.
        let mut w_v = RealMatrix::zeros(3, 3);
        let mut w_kq = RealMatrix::zeros(8, 8);
        for v in w_v.data.iter_mut().chain(w_kq.data.iter_mut()) {
            *v = standard_normal(&mut rng);
        }
        let params = StudentParams { w_v: w_v.clone(), w_kq: w_kq.clone(), encoding: enc.clone() };
        let out = student_forward(&params, &x, ActivationKind::Relu).unwrap();
        let s = attention_scores(&w_kq, &enc.p).unwrap();
        for m in 0..3 {
            for i in 0..8 {
                let mut pre = 0.0;
                for i1 in 0..8 {
                    let mut dot = 0.0;
                    for c in 0..3 {
                        dot += w_v.get(m, c) * x.get(c, i1);
                    }
                    pre += dot * s.get(i1, i);
                }
                let expect = crate::core::apply_activation(pre, ActivationKind::Relu);
                assert!((out.get(m, i) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn full_transformer_block_reduction() {
        let _spec = sts_teacher(3, 6, &[1, 3], ActivationKind::Relu).unwrap();
        let enc = encoding(6, EncodingScheme::RandomOrthogonal);
        let mut rng = purpose_stream(4, Purpose::Inputs, 0);
        let mut x = RealMatrix::zeros(3, 6);
        let mut w_v = RealMatrix::zeros(3, 3);
        let mut w_kq = RealMatrix::zeros(6, 6);
        for v in x
            .data
            .iter_mut()
            .chain(w_v.data.iter_mut())
            .chain(w_kq.data.iter_mut())
        {
            *v = standard_normal(&mut rng);
        }
        let z = stack_input(&x, &enc).unwrap();
        // Wt_V = [W_V | 0], Wt_KQ = [[0,0],[0,W_KQ]]: exact reduction to the
        // position-only student.
        let mut wt_v = RealMatrix::zeros(3, 9);
        for m in 0..3 {
            for c in 0..3 {
                wt_v.set(m, c, w_v.get(m, c));
            }
        }
        let mut wt_kq = RealMatrix::zeros(9, 9);
        for r in 0..6 {
            for c in 0..6 {
                wt_kq.set(3 + r, 3 + c, w_kq.get(r, c));
            }
        }
        let full = full_transformer_forward(&z, &wt_v, &wt_kq, 6, ActivationKind::Relu).unwrap();
        let params = StudentParams { w_v: w_v.clone(), w_kq, encoding: enc.clone() };
        let student = student_forward(&params, &x, ActivationKind::Relu).unwrap();
        assert!(full.sub(&student).unwrap().max_abs() <= 1e-12);

        // Wt_KQ = 0 reduces to the W_KQ = 0 student; Wt_V = 0 gives sigma(0).
        let full0 =
            full_transformer_forward(&z, &wt_v, &RealMatrix::zeros(9, 9), 6, ActivationKind::Relu)
                .unwrap();
        let params0 = StudentParams {
            w_v,
            w_kq: RealMatrix::zeros(6, 6),
            encoding: enc,
        };
        let student0 = student_forward(&params0, &x, ActivationKind::Relu).unwrap();
        assert!(full0.sub(&student0).unwrap().max_abs() <= 1e-12);
        let fullz =
            full_transformer_forward(&z, &RealMatrix::zeros(3, 9), &wt_kq, 6, ActivationKind::Relu)
                .unwrap();
        assert!(fullz.max_abs() == 0.0);
    }
}
