//! Shared numeric primitives: activations, positional encodings, and a dense
//! row-major matrix type.
//!
//! The three activations (identity, ReLU, Leaky ReLU) are positively
//! homogeneous: `sigma(a*x) = a*sigma(x)` for `a >= 0`, and
//! `sigma'(a*x) = sigma'(x)` for `a > 0`. The derivative at zero is fixed to
//! the `x >= 0` branch (`sigma'(0) = 1` for ReLU), which makes gradients
//! deterministic; the inputs are continuous-distributed so the event has
//! measure zero.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Activation applied entrywise by teacher and student forward passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Identity,
    Relu,
    /// Leaky ReLU with negative-branch slope `kappa` in (0, 1).
    LeakyRelu { kappa: f64 },
}

impl ActivationKind {
    /// Validates the `kappa` invariant (present iff leaky, `0 < kappa < 1`).
    pub fn validate(&self) -> Result<()> {
        if let ActivationKind::LeakyRelu { kappa } = self {
            if !(*kappa > 0.0 && *kappa < 1.0) {
                return Err(Error::Domain(format!(
                    "leaky_relu kappa must lie in (0,1), got {kappa}"
                )));
            }
        }
        Ok(())
    }
}

/// `sigma(x)`.
pub fn apply_activation(x: f64, act: ActivationKind) -> f64 {
    match act {
        ActivationKind::Identity => x,
        ActivationKind::Relu => x.max(0.0),
        ActivationKind::LeakyRelu { kappa } => {
            if x >= 0.0 {
                x
            } else {
                kappa * x
            }
        }
    }
}

/// `sigma'(x)` with the `sigma'(0) = 1` convention.
pub fn activation_derivative(x: f64, act: ActivationKind) -> f64 {
    match act {
        ActivationKind::Identity => 1.0,
        ActivationKind::Relu => {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::LeakyRelu { kappa } => {
            if x >= 0.0 {
                1.0
            } else {
                kappa
            }
        }
    }
}

/// The variance constant `c_sigma = E[sigma(z)^2]` for `z ~ N(0,1)`:
/// 1 (identity), 1/2 (ReLU), `(1+kappa^2)/2` (Leaky ReLU).
pub fn c_sigma(act: ActivationKind) -> f64 {
    match act {
        ActivationKind::Identity => 1.0,
        ActivationKind::Relu => 0.5,
        ActivationKind::LeakyRelu { kappa } => (1.0 + kappa * kappa) / 2.0,
    }
}

/// How the orthogonal positional-encoding matrix `P` is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingScheme {
    Identity,
    RandomOrthogonal,
}

/// A fixed `D x D` orthogonal positional encoding (`P^T P = I`).
#[derive(Debug, Clone)]
pub struct PositionalEncoding {
    pub p: RealMatrix,
    pub scheme: EncodingScheme,
    pub seed: u64,
}

/// Builds the encoding matrix. The random scheme draws a seeded standard
/// normal matrix and orthonormalizes it by (twice-iterated) modified
/// Gram-Schmidt with sign-fixed diagonal, so the result is deterministic per
/// seed and platform-stable.
pub fn make_positional_encoding(
    d_cap: usize,
    scheme: EncodingScheme,
    seed: u64,
) -> Result<PositionalEncoding> {
    if d_cap < 2 {
        return Err(Error::Dimension(format!(
            "positional encoding needs D >= 2, got {d_cap}"
        )));
    }
    let p = match scheme {
        EncodingScheme::Identity => RealMatrix::identity(d_cap),
        EncodingScheme::RandomOrthogonal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = RealMatrix::zeros(d_cap, d_cap);
            for v in g.data.iter_mut() {
                *v = standard_normal(&mut rng);
            }
            orthonormalize_columns(&mut g);
            g
        }
    };
    Ok(PositionalEncoding {
        p,
        scheme,
        seed,
    })
}

impl PositionalEncoding {
    /// Column `i` of `P` (the encoding vector `p_i`).
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.p.column(i)
    }

    pub fn dim(&self) -> usize {
        self.p.rows
    }
}

/// One standard-normal draw via Box-Muller on the raw uniform stream. Kept
/// local (rather than `rand_distr::StandardNormal`, which uses the ziggurat
/// with platform-stable but implementation-version-dependent tables) so the
/// byte-exact output is pinned by this crate alone.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // u1 in (0,1] to keep ln finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Both Box-Muller outputs of one uniform pair; the first component matches
/// `standard_normal` on the same stream state.
pub fn standard_normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Fills a slice with standard normals, consuming both halves of each
/// Box-Muller pair (bulk-sampling fast path).
pub fn fill_standard_normal<R: Rng>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = standard_normal_pair(rng);
        pair[0] = a;
        pair[1] = b;
    }
    for v in chunks.into_remainder() {
        *v = standard_normal(rng);
    }
}

/// Twice-iterated modified Gram-Schmidt over the columns, with each pivot's
/// sign fixed so the diagonal entry is nonnegative.
fn orthonormalize_columns(m: &mut RealMatrix) {
    let n = m.rows;
    for _pass in 0..2 {
        for j in 0..n {
            for k in 0..j {
                let mut dot = 0.0;
                for r in 0..n {
                    dot += m.get(r, k) * m.get(r, j);
                }
                for r in 0..n {
                    let v = m.get(r, j) - dot * m.get(r, k);
                    m.set(r, j, v);
                }
            }
            let mut norm = 0.0;
            for r in 0..n {
                norm += m.get(r, j) * m.get(r, j);
            }
            let norm = norm.sqrt();
            for r in 0..n {
                m.set(r, j, m.get(r, j) / norm);
            }
        }
    }
    for j in 0..n {
        if m.get(j, j) < 0.0 {
            for r in 0..n {
                m.set(r, j, -m.get(r, j));
            }
        }
    }
}

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::Dimension("matrix needs at least one row".into()));
        }
        let c = rows[0].len();
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(RealMatrix { rows: r, cols: c, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> RealMatrix {
        let mut out = RealMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul shape mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = RealMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(orow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "matmul_nt shape mismatch: {}x{} * ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = RealMatrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let arow = &self.data[r * self.cols..(r + 1) * self.cols];
            for c in 0..other.rows {
                let brow = &other.data[c * other.cols..(c + 1) * other.cols];
                let mut dot = 0.0;
                for (a, b) in arow.iter().zip(brow.iter()) {
                    dot += a * b;
                }
                out.data[r * other.rows + c] = dot;
            }
        }
        Ok(out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "matmul_tn shape mismatch: ({}x{})^T * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = RealMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = &self.data[k * self.cols..(k + 1) * self.cols];
            let brow = &other.data[k * other.cols..(k + 1) * other.cols];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> RealMatrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &RealMatrix) -> Result<RealMatrix> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &RealMatrix) -> Result<RealMatrix> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &RealMatrix, f: impl Fn(f64, f64) -> f64) -> Result<RealMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "elementwise shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Frobenius inner product `<self, other>_F`.
    pub fn frob_inner(&self, other: &RealMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("frob_inner shape mismatch".into()));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
