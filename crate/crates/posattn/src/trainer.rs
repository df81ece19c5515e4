//! Mini-batch gradient descent on the squared loss for the one-layer
//! position-only-attention student, plus the evaluation metrics tracked
//! along a run (excess losses, alignment, score structure).

use rayon::prelude::*;

use crate::attention::{attention_scores, student_forward_scored, StudentParams};
use crate::core::{
    activation_derivative, fill_standard_normal, standard_normal, ActivationKind,
    PositionalEncoding, RealMatrix,
};
use crate::error::{Error, Result};
use crate::stream::{purpose_stream, Purpose};
use crate::teachers::{teacher_forward, LabelModel, NoiseDist, TeacherSpec};

/// Entry distribution for the i.i.d. token coordinates. All variants are
/// zero-mean with finite variance; only `Gaussian` matches the training
/// theory, the rest exercise distribution shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputDist {
    Gaussian,
    /// `Exp(1) - 1`.
    ExponentialCentered,
    /// Student-t with `df > 2` degrees of freedom.
    StudentT { df: f64 },
    /// Standard Gumbel minus its mean (the Euler-Mascheroni constant).
    GumbelCentered,
}

impl InputDist {
    pub fn validate(&self) -> Result<()> {
        if let InputDist::StudentT { df } = self {
            if !(*df > 2.0) || !df.is_finite() {
                return Err(Error::Domain(format!(
                    "student_t needs df > 2 for a finite variance, got {df}"
                )));
            }
        }
        Ok(())
    }

    fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        match self {
            InputDist::Gaussian => standard_normal(rng),
            InputDist::ExponentialCentered => {
                // Inverse CDF; 1 - u keeps the log argument in (0, 1].
                let u: f64 = 1.0 - rng.gen::<f64>();
                -u.ln() - 1.0
            }
            InputDist::StudentT { df } => {
                // Z / sqrt(ChiSq_df / df) with an integer df chi-square
                // built from squared normals.
                let z = standard_normal(rng);
                let df_int = df.round() as usize;
                let chi_sq: f64 = if (df - df_int as f64).abs() < 1e-12 && df_int >= 1 {
                    (0..df_int).map(|_| standard_normal(rng).powi(2)).sum()
                } else {
                    // Non-integer df: Marsaglia-Tsang gamma(df/2, 2).
                    sample_gamma(df / 2.0, rng) * 2.0
                };
                z / (chi_sq / df).sqrt()
            }
            InputDist::GumbelCentered => {
                const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
                let u: f64 = 1.0 - rng.gen::<f64>();
                -(-u.ln()).ln() - EULER_GAMMA
            }
        }
    }
}

/// Marsaglia-Tsang sampler for `Gamma(shape, 1)`, `shape > 0`.
fn sample_gamma<R: rand::Rng>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.gen::<f64>();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = 1.0 - rng.gen::<f64>();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

/// Configuration of one empirical training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub eta: f64,
    pub t_steps: usize,
    /// Mini-batch size (a fresh batch is drawn every step).
    pub n: usize,
    pub seed: u64,
    pub noise_scale: f64,
    pub input_dist: InputDist,
    /// Distribution of the fixed out-of-distribution evaluation batch.
    pub ood_dist: InputDist,
    /// Size of the fixed out-of-distribution evaluation batch.
    pub ood_n: usize,
    /// Size of each fresh in-distribution evaluation batch.
    pub eval_n: usize,
    /// Metrics are recorded at t = 0, every `record_every` steps, and at the
    /// final step.
    pub record_every: usize,
    /// Replace every sample by all `D` of its cyclic column shifts (labels
    /// keep the sample's noise). With a shift-invariant teacher this
    /// symmetrizes the batch so the attention gradient cancels exactly.
    pub shift_augment: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.n == 0 {
            return Err(Error::Config("batch size n must be >= 1".into()));
        }
        if self.eval_n == 0 || self.ood_n == 0 {
            return Err(Error::Config("eval_n and ood_n must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Config(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            )));
        }
        self.input_dist.validate()?;
        self.ood_dist.validate()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.05,
            t_steps: 1000,
            n: 100,
            seed: 0,
            noise_scale: 0.0,
            input_dist: InputDist::Gaussian,
            ood_dist: InputDist::ExponentialCentered,
            ood_n: 100,
            eval_n: 2048,
            record_every: 100,
            shift_augment: false,
        }
    }
}

/// Metrics at one recorded step.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub t: usize,
    /// Population-excess estimate `(1/2N) sum ||f*(X) - TF(X)||_F^2` on a
    /// fresh noiseless in-distribution evaluation batch.
    pub excess_train_loss: f64,
    /// Excess loss on the fixed out-of-distribution batch, in subtraction
    /// form: `L(TF) - L(f*)` on the same noisy labels.
    pub excess_ood_loss: f64,
    pub cosine_sim: f64,
    /// Mean on-group attention score.
    pub p_hat: f64,
    /// `||S - S*||_F`.
    pub s_frob_gap: f64,
    /// `||W_V - C1_hat V*||_F / ||W_V||_F` (0 when `W_V = 0`).
    pub wv_offpattern_ratio: f64,
    /// Frobenius norm of the `W_KQ` gradient used at this step (0 at t = 0).
    pub kq_grad_norm: f64,
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: StudentParams,
    pub records: Vec<TrajectoryRecord>,
    /// Largest `||G_KQ||_F` seen over all steps.
    pub max_kq_grad_norm: f64,
}

/// Draws `n` i.i.d. `d x D` token matrices, deterministic per `(seed,
/// purpose, index)` stream.
pub fn sample_inputs(
    d: usize,
    d_cap: usize,
    n: usize,
    dist: InputDist,
    seed: u64,
    purpose: Purpose,
    index: u64,
) -> Result<Vec<RealMatrix>> {
    dist.validate()?;
    if d == 0 || d_cap == 0 || n == 0 {
        return Err(Error::Dimension("sample_inputs needs d, D, n >= 1".into()));
    }
    let mut rng = purpose_stream(seed, purpose, index);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = RealMatrix::zeros(d, d_cap);
        if matches!(dist, InputDist::Gaussian) {
            fill_standard_normal(&mut rng, &mut x.data);
        } else {
            for v in x.data.iter_mut() {
                *v = dist.sample(&mut rng);
            }
        }
        out.push(x);
    }
    Ok(out)
}

/// `(1/2N) sum_n ||Y_n - TF(X_n)||_F^2`.
pub fn batch_loss(
    params: &StudentParams,
    act: ActivationKind,
    xs: &[RealMatrix],
    ys: &[RealMatrix],
) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Dimension("batch_loss needs equal, nonempty X/Y lists".into()));
    }
    let s = attention_scores(&params.w_kq, &params.encoding.p)?;
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let out = student_forward_scored(&params.w_v, x, &s, act)?;
        total += y.sub(&out)?.frob_norm_sq();
    }
    Ok(total / (2.0 * xs.len() as f64))
}

/// Batch gradients `(G_V, G_KQ)` of `batch_loss` at `params`.
///
/// With `S = colsoftmax(P^T W_KQ P / sqrt(D))` shared across the batch and
/// `R_n = (TF(X_n) - Y_n) .* sigma'(W_V X_n S)`:
///   `G_V  = (1/N) sum_n R_n S^T X_n^T`
///   `G_KQ = (1/(N sqrt(D))) P J(sum_n (W_V X_n)^T R_n) P^T`
/// where `J` applies the per-column softmax Jacobian `diag(s) - s s^T`.
pub fn batch_gradients(
    params: &StudentParams,
    act: ActivationKind,
    xs: &[RealMatrix],
    ys: &[RealMatrix],
) -> Result<(RealMatrix, RealMatrix)> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Dimension(
            "batch_gradients needs equal, nonempty X/Y lists".into(),
        ));
    }
    let d_cap = params.encoding.dim();
    let (m, d) = (params.w_v.rows, params.w_v.cols);
    let s = attention_scores(&params.w_kq, &params.encoding.p)?;
    let s_t = s.transpose();

    let per_sample = |x: &RealMatrix, y: &RealMatrix| -> Result<(RealMatrix, RealMatrix)> {
        if x.rows != d || x.cols != d_cap || y.rows != m || y.cols != d_cap {
            return Err(Error::Dimension(format!(
                "sample shape mismatch: X is {}x{}, Y is {}x{}, expected {d}x{d_cap} and {m}x{d_cap}",
                x.rows, x.cols, y.rows, y.cols
            )));
        }
        let a = params.w_v.matmul(x)?; // M x D
        let pre = a.matmul(&s)?;
        let mut r = RealMatrix::zeros(m, d_cap);
        for i in 0..r.data.len() {
            let p = pre.data[i];
            r.data[i] = (apply_act(p, act) - y.data[i]) * activation_derivative(p, act);
        }
        // G_V contribution: R S^T X^T.
        let gv = r.matmul(&s_t)?.matmul_nt(x)?;
        // Score-space contribution: (W_V X)^T R = A^T R.
        let gds = a.matmul_tn(&r)?;
        Ok((gv, gds))
    };

    // Chunked parallel map with an in-order reduction so the result is
    // independent of the worker count.
    const CHUNK: usize = 64;
    let pairs: Vec<(usize, usize)> = (0..xs.len())
        .step_by(CHUNK)
        .map(|lo| (lo, (lo + CHUNK).min(xs.len())))
        .collect();
    let partials: Vec<Result<(RealMatrix, RealMatrix)>> = pairs
        .par_iter()
        .map(|&(lo, hi)| {
            let mut gv = RealMatrix::zeros(m, d);
            let mut gds = RealMatrix::zeros(d_cap, d_cap);
            for n in lo..hi {
                let (gv_n, gds_n) = per_sample(&xs[n], &ys[n])?;
                gv = gv.add(&gv_n)?;
                gds = gds.add(&gds_n)?;
            }
            Ok((gv, gds))
        })
        .collect();
    let mut gv = RealMatrix::zeros(m, d);
    let mut gds = RealMatrix::zeros(d_cap, d_cap);
    for part in partials {
        let (gv_p, gds_p) = part?;
        gv = gv.add(&gv_p)?;
        gds = gds.add(&gds_p)?;
    }

    // Softmax Jacobian per column: g_logit = s .* g - (s . g) s.
    let mut g_logits = RealMatrix::zeros(d_cap, d_cap);
    for i in 0..d_cap {
        let mut dot = 0.0;
        for i1 in 0..d_cap {
            dot += s.get(i1, i) * gds.get(i1, i);
        }
        for i1 in 0..d_cap {
            let si = s.get(i1, i);
            g_logits.set(i1, i, si * (gds.get(i1, i) - dot));
        }
    }
    let p = &params.encoding.p;
    let n_f = xs.len() as f64;
    let g_kq = p
        .matmul(&g_logits)?
        .matmul(&p.transpose())?
        .scale(1.0 / (n_f * (d_cap as f64).sqrt()));
    Ok((gv.scale(1.0 / n_f), g_kq))
}

fn apply_act(x: f64, act: ActivationKind) -> f64 {
    crate::core::apply_activation(x, act)
}

/// Cyclic column shift of `x` by `shift` positions.
fn shift_columns(x: &RealMatrix, shift: usize) -> RealMatrix {
    let mut out = RealMatrix::zeros(x.rows, x.cols);
    for c in 0..x.cols {
        let src = (c + shift) % x.cols;
        for r in 0..x.rows {
            out.set(r, c, x.get(r, src));
        }
    }
    out
}

/// Expands `(X, Y)` into all `D` cyclic column shifts per sample. Each shift
/// keeps the original sample's (unshifted) label noise:
/// `Y_shift = f*(X_shift) + (Y - f*(X))`. Keeping the noise fixed is what
/// makes the attention gradient cancel when `f*` is shift-invariant: the
/// residual is then identical across shifts while the value-path columns
/// rotate, so the summed score gradient is constant per column and the
/// softmax Jacobian annihilates it.
fn augment_with_shifts(
    teacher: &TeacherSpec,
    xs: &[RealMatrix],
    ys: &[RealMatrix],
) -> Result<(Vec<RealMatrix>, Vec<RealMatrix>)> {
    let d_cap = teacher.d_cap();
    let mut ax = Vec::with_capacity(xs.len() * d_cap);
    let mut ay = Vec::with_capacity(xs.len() * d_cap);
    for (x, y) in xs.iter().zip(ys) {
        let noise = y.sub(&teacher_forward(teacher, x)?)?;
        for shift in 0..d_cap {
            let xc = shift_columns(x, shift);
            let yc = teacher_forward(teacher, &xc)?.add(&noise)?;
            ax.push(xc);
            ay.push(yc);
        }
    }
    Ok((ax, ay))
}

/// Scalar summaries read off the matrix parameters: `C1_hat` (signal
/// coefficient of `W_V` on `V*`), `p_hat` (mean on-group score), and the
/// off-pattern ratios of `W_V` and `W_KQ`.
#[derive(Debug, Clone)]
pub struct ScalarEstimates {
    pub c1_hat: f64,
    pub p_hat: f64,
    pub wv_offpattern_ratio: f64,
    pub wkq_offpattern_ratio: f64,
}

pub fn extract_scalars(params: &StudentParams, teacher: &TeacherSpec) -> Result<ScalarEstimates> {
    let v_frob_sq = teacher.v_frob_sq();
    if v_frob_sq == 0.0 {
        return Err(Error::Domain("teacher V* is identically zero".into()));
    }
    let c1_hat = params.w_v.frob_inner(&teacher.v_star)? / v_frob_sq;
    let wv_norm = params.w_v.frob_norm();
    let wv_offpattern_ratio = if wv_norm == 0.0 {
        0.0
    } else {
        params
            .w_v
            .sub(&teacher.v_star.scale(c1_hat))?
            .frob_norm()
            / wv_norm
    };

    let s = attention_scores(&params.w_kq, &params.encoding.p)?;
    let tv = crate::analysis::two_value_structure(&s, &teacher.groups)?;

    // W_KQ pattern: in the encoding basis Gamma = P^T W_KQ P, the ideal
    // parameter is two-valued over (on-group, off-group) entries. The
    // off-pattern ratio is the residual after removing the class means.
    let p_mat = &params.encoding.p;
    let gamma = p_mat.transpose().matmul(&params.w_kq)?.matmul(p_mat)?;
    let d_cap = teacher.d_cap();
    let mut on_member = vec![vec![false; d_cap]; d_cap];
    for (i, group) in teacher.groups.iter().enumerate() {
        for &i1 in group {
            on_member[i][i1] = true;
        }
    }
    let (mut on_sum, mut on_n, mut off_sum, mut off_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..d_cap {
        for i1 in 0..d_cap {
            let g = gamma.get(i1, i);
            if on_member[i][i1] {
                on_sum += g;
                on_n += 1;
            } else {
                off_sum += g;
                off_n += 1;
            }
        }
    }
    let on_mean = on_sum / on_n.max(1) as f64;
    let off_mean = if off_n == 0 { 0.0 } else { off_sum / off_n as f64 };
    let mut resid_sq = 0.0;
    for i in 0..d_cap {
        for i1 in 0..d_cap {
            let fit = if on_member[i][i1] { on_mean } else { off_mean };
            resid_sq += (gamma.get(i1, i) - fit).powi(2);
        }
    }
    let gamma_norm = gamma.frob_norm();
    let wkq_offpattern_ratio = if gamma_norm == 0.0 {
        0.0
    } else {
        resid_sq.sqrt() / gamma_norm
    };

    Ok(ScalarEstimates {
        c1_hat,
        p_hat: tv.p_hat,
        wv_offpattern_ratio,
        wkq_offpattern_ratio,
    })
}

/// Excess loss of the student over the teacher on one labeled batch:
/// `L(TF) - L(f*)` with both losses evaluated on the same `(X, Y)`.
pub fn excess_on_batch(
    params: &StudentParams,
    teacher: &TeacherSpec,
    xs: &[RealMatrix],
    ys: &[RealMatrix],
) -> Result<f64> {
    let act = teacher.act;
    let s = attention_scores(&params.w_kq, &params.encoding.p)?;
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let out = student_forward_scored(&params.w_v, x, &s, act)?;
        let fs = teacher_forward(teacher, x)?;
        total += y.sub(&out)?.frob_norm_sq() - y.sub(&fs)?.frob_norm_sq();
    }
    Ok(total / (2.0 * xs.len() as f64))
}

/// Out-of-distribution excess loss on a freshly drawn batch from `dist`
/// (noisy labels, subtraction form).
pub fn ood_excess_loss(
    params: &StudentParams,
    teacher: &TeacherSpec,
    dist: InputDist,
    n: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<f64> {
    let xs = sample_inputs(teacher.d(), teacher.d_cap(), n, dist, seed, Purpose::OodInputs, 0)?;
    let ys = noisy_labels(teacher, &xs, noise_scale, seed, Purpose::OodNoise, 0)?;
    excess_on_batch(params, teacher, &xs, &ys)
}

/// Adversarial relabeling of an out-of-distribution batch. For each output
/// entry `(m, i)` with on-group sum `u` and off-group sum `w` of
/// `<v*_m, x_i1>`:
///   `Y~ = sign(w) * 1{|w| >= max((2/c') |u|, 1)} + f*(X~)_{m,i}`.
pub fn worst_case_labels(
    teacher: &TeacherSpec,
    xs: &[RealMatrix],
    c_prime: f64,
) -> Result<Vec<RealMatrix>> {
    if !(c_prime > 0.0) {
        return Err(Error::Domain(format!("c' must be positive, got {c_prime}")));
    }
    let d_cap = teacher.d_cap();
    let m = teacher.m();
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let fs = teacher_forward(teacher, x)?;
        // inner[m1][i1] = <v*_m1, x_i1>.
        let inner = teacher.v_star.matmul(x)?;
        let mut y = fs.clone();
        for i in 0..d_cap {
            let group = &teacher.groups[i];
            for m1 in 0..m {
                let total: f64 = (0..d_cap).map(|i1| inner.get(m1, i1)).sum();
                let on: f64 = group.iter().map(|&i1| inner.get(m1, i1)).sum();
                let off = total - on;
                let threshold = (2.0 / c_prime * on.abs()).max(1.0);
                if off.abs() >= threshold {
                    y.set(m1, i, y.get(m1, i) + off.signum());
                }
            }
        }
        out.push(y);
    }
    Ok(out)
}

fn noisy_labels(
    teacher: &TeacherSpec,
    xs: &[RealMatrix],
    noise_scale: f64,
    seed: u64,
    purpose: Purpose,
    index: u64,
) -> Result<Vec<RealMatrix>> {
    let model = LabelModel {
        teacher,
        noise_scale,
        noise_dist: if noise_scale > 0.0 { NoiseDist::Gaussian } else { NoiseDist::None },
    };
    let mut rng = purpose_stream(seed, purpose, index);
    let mut out = Vec::with_capacity(xs.len());
    let mut buf = Vec::new();
    for x in xs {
        let mut y = teacher_forward(model.teacher, x)?;
        if model.noise_dist == NoiseDist::Gaussian {
            buf.resize(y.data.len(), 0.0);
            fill_standard_normal(&mut rng, &mut buf);
            for (v, z) in y.data.iter_mut().zip(&buf) {
                *v += noise_scale * z;
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Noiseless population-excess estimate `(1/2N) sum ||f*(X) - TF(X)||_F^2`
/// on a fresh Gaussian batch (unbiased for `L - L_opt` regardless of label
/// noise).
fn eval_excess(
    params: &StudentParams,
    teacher: &TeacherSpec,
    n: usize,
    seed: u64,
    index: u64,
) -> Result<f64> {
    let xs = sample_inputs(
        teacher.d(),
        teacher.d_cap(),
        n,
        InputDist::Gaussian,
        seed,
        Purpose::EvalInputs,
        index,
    )?;
    let s = attention_scores(&params.w_kq, &params.encoding.p)?;
    let mut total = 0.0;
    for x in &xs {
        let out = student_forward_scored(&params.w_v, x, &s, teacher.act)?;
        total += teacher_forward(teacher, x)?.sub(&out)?.frob_norm_sq();
    }
    Ok(total / (2.0 * n as f64))
}

/// Runs mini-batch gradient descent from zero initialization. Fresh batch
/// every step, simultaneous `(W_V, W_KQ)` updates, deterministic per
/// `config.seed`. Metrics are recorded at `t = 0`, every
/// `config.record_every` steps, and at the final step; the
/// out-of-distribution excess is tracked on one fixed batch drawn at the
/// start of the run.
pub fn train(
    teacher: &TeacherSpec,
    encoding: PositionalEncoding,
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    teacher.validate()?;
    if encoding.dim() != teacher.d_cap() {
        return Err(Error::Dimension(format!(
            "encoding is {}x{} but teacher has D = {}",
            encoding.dim(),
            encoding.dim(),
            teacher.d_cap()
        )));
    }
    let act = teacher.act;
    let (m, d) = (teacher.m(), teacher.d());
    let mut params = StudentParams::zeros(m, d, encoding);

    // Fixed out-of-distribution evaluation batch for the whole run.
    let ood_xs = sample_inputs(
        d,
        teacher.d_cap(),
        config.ood_n,
        config.ood_dist,
        config.seed,
        Purpose::OodInputs,
        0,
    )?;
    let ood_ys = noisy_labels(
        teacher,
        &ood_xs,
        config.noise_scale,
        config.seed,
        Purpose::OodNoise,
        0,
    )?;

    let mut records = Vec::new();
    let mut max_kq_grad_norm = 0.0f64;
    let mut initial_loss: Option<f64> = None;

    let record =
        |params: &StudentParams, t: usize, kq_grad_norm: f64| -> Result<TrajectoryRecord> {
            let scalars = extract_scalars(params, teacher)?;
            let s = attention_scores(&params.w_kq, &params.encoding.p)?;
            let s_frob_gap = s.sub(&teacher.s_star)?.frob_norm();
            let cosine = if params.w_v.frob_norm() == 0.0 {
                0.0
            } else {
                crate::analysis::cosine_similarity(&params.w_v, &teacher.v_star)?
            };
            Ok(TrajectoryRecord {
                t,
                excess_train_loss: eval_excess(params, teacher, config.eval_n, config.seed, t as u64)?,
                excess_ood_loss: excess_on_batch(params, teacher, &ood_xs, &ood_ys)?,
                cosine_sim: cosine,
                p_hat: scalars.p_hat,
                s_frob_gap,
                wv_offpattern_ratio: scalars.wv_offpattern_ratio,
                kq_grad_norm,
            })
        };

    records.push(record(&params, 0, 0.0)?);

    for t in 1..=config.t_steps {
        let xs = sample_inputs(
            d,
            teacher.d_cap(),
            config.n,
            config.input_dist,
            config.seed,
            Purpose::Inputs,
            t as u64,
        )?;
        let ys = noisy_labels(teacher, &xs, config.noise_scale, config.seed, Purpose::Noise, t as u64)?;
        let (xs, ys) = if config.shift_augment {
            augment_with_shifts(teacher, &xs, &ys)?
        } else {
            (xs, ys)
        };

        // Divergence sentinel: a full extra forward pass, so amortize it.
        if t == 1 || t % 16 == 0 {
            let loss = batch_loss(&params, act, &xs, &ys)?;
            let init = *initial_loss.get_or_insert(loss.max(f64::MIN_POSITIVE));
            if !loss.is_finite() || loss > 1e6 * init.max(1.0) {
                return Err(Error::Numeric(format!(
                    "training diverged at step {t}: batch loss {loss:.3e} (initial {init:.3e})"
                )));
            }
        }

        let (g_v, g_kq) = batch_gradients(&params, act, &xs, &ys)?;
        let kq_grad_norm = g_kq.frob_norm();
        max_kq_grad_norm = max_kq_grad_norm.max(kq_grad_norm);
        params.w_v = params.w_v.sub(&g_v.scale(config.eta))?;
        params.w_kq = params.w_kq.sub(&g_kq.scale(config.eta))?;
        if !params.w_v.is_finite() || !params.w_kq.is_finite() {
            return Err(Error::Numeric(format!(
                "training produced non-finite parameters at step {t}"
            )));
        }

        if t % config.record_every == 0 || t == config.t_steps {
            records.push(record(&params, t, kq_grad_norm)?);
        }
    }

    Ok(TrainRun {
        params,
        records,
        max_kq_grad_norm,
    })
}
