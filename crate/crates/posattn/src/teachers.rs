//! The four teacher families `f*(X) = sigma(V* X S*)` and label sampling.
//!
//! Every teacher's score matrix `S*` is column-stochastic with exactly `K`
//! entries equal to `1/K` per column; `G^i` records which rows those are for
//! column `i`. The families are average-pooling CNN (disjoint K-blocks),
//! graph convolution on a degree-(K-1) regular graph (`S* = (A + I)/K`),
//! sparse token selection (`V* = I_d`, one global group broadcast to every
//! column), and the group-sparse linear predictor (`M = 1`, `K = 1`).

use crate::core::{apply_activation, standard_normal, ActivationKind, RealMatrix};
use crate::error::{Error, Result};
use crate::stream::{purpose_stream, Purpose};

/// A fully specified teacher model.
#[derive(Debug, Clone)]
pub struct TeacherSpec {
    pub v_star: RealMatrix,
    pub s_star: RealMatrix,
    pub act: ActivationKind,
    pub k: usize,
    /// `groups[i]` = sorted row indices carrying `1/K` in column `i`.
    pub groups: Vec<Vec<usize>>,
}

impl TeacherSpec {
    pub fn m(&self) -> usize {
        self.v_star.rows
    }

    pub fn d(&self) -> usize {
        self.v_star.cols
    }

    pub fn d_cap(&self) -> usize {
        self.s_star.rows
    }

    pub fn v_frob_sq(&self) -> f64 {
        self.v_star.frob_norm_sq()
    }

    /// Checks all structural invariants: entries in {0, 1/K}, K nonzeros per
    /// column, unit column sums, groups consistent with `S*`.
    pub fn validate(&self) -> Result<()> {
        self.act.validate()?;
        let d_cap = self.d_cap();
        if self.s_star.cols != d_cap {
            return Err(Error::Validation("S* must be square".into()));
        }
        if self.groups.len() != d_cap {
            return Err(Error::Validation("one group per column required".into()));
        }
        let inv_k = 1.0 / self.k as f64;
        for i in 0..d_cap {
            let mut nonzero = Vec::new();
            let mut sum = 0.0;
            for r in 0..d_cap {
                let v = self.s_star.get(r, i);
                sum += v;
                if v != 0.0 {
                    if (v - inv_k).abs() > 1e-15 {
                        return Err(Error::Validation(format!(
                            "S*[{r},{i}] = {v} is neither 0 nor 1/K"
                        )));
                    }
                    nonzero.push(r);
                }
            }
            if nonzero.len() != self.k {
                return Err(Error::Validation(format!(
                    "column {i} has {} nonzeros, expected K={}",
                    nonzero.len(),
                    self.k
                )));
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("column {i} sums to {sum}")));
            }
            if nonzero != self.groups[i] {
                return Err(Error::Validation(format!("groups[{i}] inconsistent with S*")));
            }
        }
        Ok(())
    }
}

fn s_star_from_groups(d_cap: usize, k: usize, groups: &[Vec<usize>]) -> RealMatrix {
    let mut s = RealMatrix::zeros(d_cap, d_cap);
    for (i, g) in groups.iter().enumerate() {
        for &r in g {
            s.set(r, i, 1.0 / k as f64);
        }
    }
    s
}

/// CNN with average pooling over a disjoint partition of `[D]` into K-sets:
/// column `i` of `S*` is `(1/K)` times the indicator of the block containing
/// `i`. A contiguous partition gives the block-diagonal `Diag(1_{KxK}, ...)`.
pub fn cnn_pooling_teacher(
    d_cap: usize,
    k: usize,
    partition: &[Vec<usize>],
    v_star: RealMatrix,
    act: ActivationKind,
) -> Result<TeacherSpec> {
    if k == 0 || d_cap == 0 {
        return Err(Error::Validation("D and K must be positive".into()));
    }
    let mut seen = vec![false; d_cap];
    for block in partition {
        if block.len() != k {
            return Err(Error::Validation(format!(
                "pooling block {:?} has size {}, expected K={k}",
                block,
                block.len()
            )));
        }
        for &idx in block {
            if idx >= d_cap {
                return Err(Error::Validation(format!("index {idx} out of range for D={d_cap}")));
            }
            if seen[idx] {
                return Err(Error::Validation(format!("index {idx} appears in two blocks")));
            }
            seen[idx] = true;
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::Validation("partition does not cover [D]".into()));
    }
    let mut groups = vec![Vec::new(); d_cap];
    for block in partition {
        let mut sorted = block.clone();
        sorted.sort_unstable();
        for &i in block {
            groups[i] = sorted.clone();
        }
    }
    let spec = TeacherSpec {
        v_star,
        s_star: s_star_from_groups(d_cap, k, &groups),
        act,
        k,
        groups,
    };
    spec.validate()?;
    Ok(spec)
}

/// Contiguous pooling partition `{0..K-1}, {K..2K-1}, ...` (requires `K | D`).
pub fn contiguous_partition(d_cap: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || d_cap % k != 0 {
        return Err(Error::Validation(format!("K={k} must divide D={d_cap}")));
    }
    Ok((0..d_cap / k)
        .map(|b| (b * k..(b + 1) * k).collect())
        .collect())
}

/// Graph convolution on a degree-(K-1) regular graph: `S* = (A + I)/K` with
/// `A` the 0/1 adjacency matrix.
pub fn gcn_regular_teacher(
    adjacency: &RealMatrix,
    v_star: RealMatrix,
    act: ActivationKind,
) -> Result<TeacherSpec> {
    let d_cap = adjacency.rows;
    if adjacency.cols != d_cap {
        return Err(Error::Validation("adjacency must be square".into()));
    }
    let mut degree = None;
    for i in 0..d_cap {
        if adjacency.get(i, i) != 0.0 {
            return Err(Error::Validation(format!("node {i} has a self-loop")));
        }
        let mut deg = 0usize;
        for j in 0..d_cap {
            let v = adjacency.get(i, j);
            if v != 0.0 && v != 1.0 {
                return Err(Error::Validation(format!("adjacency[{i},{j}] = {v} is not 0/1")));
            }
            if v != adjacency.get(j, i) {
                return Err(Error::Validation(format!("adjacency not symmetric at ({i},{j})")));
            }
            if v == 1.0 {
                deg += 1;
            }
        }
        match degree {
            None => degree = Some(deg),
            Some(d0) if d0 != deg => {
                return Err(Error::Validation(format!(
                    "graph not regular: node {i} has degree {deg}, expected {d0}"
                )))
            }
            _ => {}
        }
    }
    let k = degree.unwrap_or(0) + 1;
    let mut groups = Vec::with_capacity(d_cap);
    for i in 0..d_cap {
        let mut g: Vec<usize> = (0..d_cap)
            .filter(|&j| j == i || adjacency.get(j, i) == 1.0)
            .collect();
        g.sort_unstable();
        groups.push(g);
    }
    let spec = TeacherSpec {
        v_star,
        s_star: s_star_from_groups(d_cap, k, &groups),
        act,
        k,
        groups,
    };
    spec.validate()?;
    Ok(spec)
}

/// Adjacency matrix of the cycle graph on `D` nodes (degree 2, so K = 3).
pub fn cycle_adjacency(d_cap: usize) -> RealMatrix {
    let mut a = RealMatrix::zeros(d_cap, d_cap);
    for i in 0..d_cap {
        a.set(i, (i + 1) % d_cap, 1.0);
        a.set((i + 1) % d_cap, i, 1.0);
    }
    a
}

/// Sparse token selection: averages the tokens indexed by `g` and duplicates
/// the result across all `D` output columns. `V* = I_d` is forced (`M = d`).
pub fn sts_teacher(d: usize, d_cap: usize, g: &[usize], act: ActivationKind) -> Result<TeacherSpec> {
    let k = g.len();
    if k == 0 || k > d_cap {
        return Err(Error::Validation(format!("need 1 <= |g| = K <= D, got {k}")));
    }
    let mut sorted = g.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != k {
        return Err(Error::Validation("selection g has duplicate indices".into()));
    }
    if *sorted.last().unwrap() >= d_cap {
        return Err(Error::Validation(format!(
            "selection index {} out of range for D={d_cap}",
            sorted.last().unwrap()
        )));
    }
    let groups = vec![sorted; d_cap];
    let spec = TeacherSpec {
        v_star: RealMatrix::identity(d),
        s_star: s_star_from_groups(d_cap, k, &groups),
        act,
        k,
        groups,
    };
    spec.validate()?;
    Ok(spec)
}

/// Group-sparse linear predictor: `M = 1`, `V* = v*^T`, `S* = e_{i*} 1_D^T`.
pub fn gslp_teacher(
    d_cap: usize,
    i_star: usize,
    v_star: &[f64],
    act: ActivationKind,
) -> Result<TeacherSpec> {
    if i_star >= d_cap {
        return Err(Error::Validation(format!("i* = {i_star} out of range for D={d_cap}")));
    }
    let groups = vec![vec![i_star]; d_cap];
    let spec = TeacherSpec {
        v_star: RealMatrix::from_rows(&[v_star.to_vec()])?,
        s_star: s_star_from_groups(d_cap, 1, &groups),
        act,
        k: 1,
        groups,
    };
    spec.validate()?;
    Ok(spec)
}

/// `f*(X) = sigma(V* X S*)`.
pub fn teacher_forward(spec: &TeacherSpec, x: &RealMatrix) -> Result<RealMatrix> {
    if x.rows != spec.d() || x.cols != spec.d_cap() {
        return Err(Error::Dimension(format!(
            "teacher_forward expects {}x{} input, got {}x{}",
            spec.d(),
            spec.d_cap(),
            x.rows,
            x.cols
        )));
    }
    let pre = spec.v_star.matmul(x)?.matmul(&spec.s_star)?;
    Ok(pre.map(|v| apply_activation(v, spec.act)))
}

/// Additive-noise label model `Y = f*(X) + noise_scale * E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseDist {
    Gaussian,
    None,
}

#[derive(Debug, Clone)]
pub struct LabelModel<'a> {
    pub teacher: &'a TeacherSpec,
    pub noise_scale: f64,
    pub noise_dist: NoiseDist,
}

impl<'a> LabelModel<'a> {
    pub fn new(teacher: &'a TeacherSpec, noise_scale: f64) -> Result<Self> {
        if noise_scale < 0.0 {
            return Err(Error::Domain(format!("noise_scale must be >= 0, got {noise_scale}")));
        }
        Ok(LabelModel {
            teacher,
            noise_scale,
            noise_dist: if noise_scale == 0.0 { NoiseDist::None } else { NoiseDist::Gaussian },
        })
    }
}

/// `Y = f*(X) + noise`, i.i.d. zero-mean entries, deterministic per seed.
pub fn sample_labels(model: &LabelModel, x: &RealMatrix, seed: u64) -> Result<RealMatrix> {
    let mut y = teacher_forward(model.teacher, x)?;
    if model.noise_dist == NoiseDist::Gaussian && model.noise_scale > 0.0 {
        let mut rng = purpose_stream(seed, Purpose::Noise, 0);
        for v in y.data.iter_mut() {
            *v += model.noise_scale * standard_normal(&mut rng);
        }
    }
    Ok(y)
}

/// Samples an `M x d` matrix with unit-norm standard-Gaussian-direction rows
/// (the theory's "unit teacher rows" normalization).
pub fn unit_norm_rows(m: usize, d: usize, seed: u64) -> RealMatrix {
    let mut rng = purpose_stream(seed, Purpose::Teacher, 0);
    let mut out = RealMatrix::zeros(m, d);
    for r in 0..m {
        let mut row: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in row.iter_mut() {
            *v /= norm;
        }
        for (c, v) in row.into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    out
}

/// Writes a teacher to the plain-text exchange format:
/// header `M d D K act kappa`, then the `V*` rows, then the `S*` rows.
pub fn teacher_to_text(spec: &TeacherSpec) -> String {
    let (act, kappa) = match spec.act {
        ActivationKind::Identity => ("identity", 0.0),
        ActivationKind::Relu => ("relu", 0.0),
        ActivationKind::LeakyRelu { kappa } => ("leaky", kappa),
    };
    let mut out = format!(
        "{} {} {} {} {} {}\n",
        spec.m(),
        spec.d(),
        spec.d_cap(),
        spec.k,
        act,
        fmt17(kappa)
    );
    for r in 0..spec.m() {
        let row: Vec<String> = spec.v_star.row(r).iter().map(|&v| fmt17(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    for r in 0..spec.d_cap() {
        let row: Vec<String> = spec.s_star.row(r).iter().map(|&v| fmt17(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parses the text format produced by [`teacher_to_text`].
pub fn teacher_from_text(text: &str) -> Result<TeacherSpec> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty teacher file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(Error::Parse(format!(
            "teacher header needs 6 fields `M d D K act kappa`, got {}",
            fields.len()
        )));
    }
    let parse_usize = |s: &str, name: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad {name}: {s}")))
    };
    let m = parse_usize(fields[0], "M")?;
    let d = parse_usize(fields[1], "d")?;
    let d_cap = parse_usize(fields[2], "D")?;
    let k = parse_usize(fields[3], "K")?;
    let kappa: f64 = fields[5]
        .parse()
        .map_err(|_| Error::Parse(format!("bad kappa: {}", fields[5])))?;
    let act = match fields[4] {
        "identity" => ActivationKind::Identity,
        "relu" => ActivationKind::Relu,
        "leaky" => ActivationKind::LeakyRelu { kappa },
        other => return Err(Error::Parse(format!("unknown activation: {other}"))),
    };
    let mut read_matrix = |rows: usize, cols: usize, what: &str| -> Result<RealMatrix> {
        let mut mat = RealMatrix::zeros(rows, cols);
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what} row {r}")))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != cols {
                return Err(Error::Parse(format!(
                    "{what} row {r} has {} entries, expected {cols}",
                    vals.len()
                )));
            }
            for (c, v) in vals.iter().enumerate() {
                mat.set(
                    r,
                    c,
                    v.parse()
                        .map_err(|_| Error::Parse(format!("bad number in {what} row {r}: {v}")))?,
                );
            }
        }
        Ok(mat)
    };
    let v_star = read_matrix(m, d, "V*")?;
    let s_star = read_matrix(d_cap, d_cap, "S*")?;
    let mut groups = Vec::with_capacity(d_cap);
    for i in 0..d_cap {
        groups.push((0..d_cap).filter(|&r| s_star.get(r, i) != 0.0).collect());
    }
    let spec = TeacherSpec {
        v_star,
        s_star,
        act,
        k,
        groups,
    };
    spec.validate()?;
    Ok(spec)
}

/// 17-significant-digit decimal rendering (round-trips f64 exactly).
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomish_v(m: usize, d: usize, seed: u64) -> RealMatrix {
        unit_norm_rows(m, d, seed)
    }

    #[test]
    fn cnn_block_diagonal() {
        let v = randomish_v(2, 3, 0);
        let spec =
            cnn_pooling_teacher(8, 4, &contiguous_partition(8, 4).unwrap(), v, ActivationKind::Relu)
                .unwrap();
        for i in 0..8 {
            for r in 0..8 {
                let expect = if (r < 4) == (i < 4) { 0.25 } else { 0.0 };
                assert_eq!(spec.s_star.get(r, i), expect);
            }
        }
        // Column sums all 1.
        for i in 0..8 {
            let sum: f64 = (0..8).map(|r| spec.s_star.get(r, i)).sum();
            assert!((sum - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cnn_single_group_is_uniform() {
        let v = randomish_v(1, 2, 1);
        let spec = cnn_pooling_teacher(4, 4, &[vec![0, 1, 2, 3]], v, ActivationKind::Identity).unwrap();
        for i in 0..4 {
            for r in 0..4 {
                assert_eq!(spec.s_star.get(r, i), 0.25);
            }
        }
    }

    #[test]
    fn cnn_rejects_bad_partitions() {
        let v = randomish_v(1, 2, 1);
        // Overlap.
        assert!(cnn_pooling_teacher(4, 2, &[vec![0, 1], vec![1, 2]], v.clone(), ActivationKind::Relu)
            .is_err());
        // Incomplete.
        assert!(cnn_pooling_teacher(4, 2, &[vec![0, 1]], v, ActivationKind::Relu).is_err());
    }

    #[test]
    fn gcn_cycle() {
        let v = randomish_v(2, 3, 2);
        let spec = gcn_regular_teacher(&cycle_adjacency(20), v, ActivationKind::Relu).unwrap();
        assert_eq!(spec.k, 3);
        for i in 0..20 {
            for r in 0..20 {
                let neighbor = r == i || r == (i + 1) % 20 || (r + 1) % 20 == i;
                let expect = if neighbor { 1.0 / 3.0 } else { 0.0 };
                assert_eq!(spec.s_star.get(r, i), expect, "entry ({r},{i})");
            }
        }
        // Cycle adjacency is symmetric, so S* is too.
        assert_eq!(spec.s_star, spec.s_star.transpose());
    }

    #[test]
    fn gcn_empty_and_complete_graphs() {
        let v = randomish_v(1, 2, 3);
        let empty = gcn_regular_teacher(&RealMatrix::zeros(5, 5), v.clone(), ActivationKind::Identity)
            .unwrap();
        assert_eq!(empty.s_star, RealMatrix::identity(5));
        let mut complete = RealMatrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    complete.set(i, j, 1.0);
                }
            }
        }
        let spec = gcn_regular_teacher(&complete, v, ActivationKind::Identity).unwrap();
        for e in &spec.s_star.data {
            assert_eq!(*e, 0.25);
        }
    }

    #[test]
    fn gcn_rejects_irregular_graph_naming_node() {
        let mut a = RealMatrix::zeros(4, 4);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        let v = randomish_v(1, 2, 3);
        let err = gcn_regular_teacher(&a, v, ActivationKind::Identity).unwrap_err();
        assert!(err.to_string().contains("node 2"), "{err}");
    }

    #[test]
    fn sts_structure() {
        let spec = sts_teacher(5, 20, &[3, 7, 11, 15], ActivationKind::Identity).unwrap();
        assert_eq!(spec.m(), 5);
        assert_eq!(spec.v_star, RealMatrix::identity(5));
        for i in 0..20 {
            for r in 0..20 {
                let expect = if [3, 7, 11, 15].contains(&r) { 0.25 } else { 0.0 };
                assert_eq!(spec.s_star.get(r, i), expect);
            }
        }
        // K=1 selection: S* = e_2 1^T.
        let spec = sts_teacher(3, 5, &[2], ActivationKind::Identity).unwrap();
        for i in 0..5 {
            assert_eq!(spec.s_star.get(2, i), 1.0);
        }
    }

    #[test]
    fn sts_and_gslp_columns_identical() {
        let mut rng = purpose_stream(4, Purpose::Inputs, 0);
        for spec in [
            sts_teacher(4, 9, &[0, 5], ActivationKind::Relu).unwrap(),
            gslp_teacher(9, 3, &[0.5, -1.0, 2.0, 0.1], ActivationKind::Relu).unwrap(),
        ] {
            let mut x = RealMatrix::zeros(spec.d(), 9);
            for v in x.data.iter_mut() {
                *v = standard_normal(&mut rng);
            }
            let y = teacher_forward(&spec, &x).unwrap();
            for r in 0..y.rows {
                for c in 1..y.cols {
                    assert_eq!(y.get(r, c), y.get(r, 0));
                }
            }
        }
    }

    #[test]
    fn gslp_values() {
        // v* = e_1, i* = 3, x_3 = (5, 0): every output entry 5 under identity.
        let spec = gslp_teacher(6, 3, &[1.0, 0.0], ActivationKind::Identity).unwrap();
        let mut x = RealMatrix::zeros(2, 6);
        x.set(0, 3, 5.0);
        let y = teacher_forward(&spec, &x).unwrap();
        assert!(y.data.iter().all(|&v| v == 5.0));
        // v* = (1,1), x_{i*} = (2,3): every entry 5.
        let spec = gslp_teacher(4, 0, &[1.0, 1.0], ActivationKind::Identity).unwrap();
        let mut x = RealMatrix::zeros(2, 4);
        x.set(0, 0, 2.0);
        x.set(1, 0, 3.0);
        let y = teacher_forward(&spec, &x).unwrap();
        assert!(y.data.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn forward_matches_group_sum_loop() {
        let mut rng = purpose_stream(5, Purpose::Inputs, 0);
        for seed in 0..50u64 {
            let d = 2 + (seed as usize) % 5;
            let d_cap = 4 + (seed as usize) % 7;
            let k = 1 + (seed as usize) % 2;
            let g: Vec<usize> = (0..k).map(|j| (j * 3) % d_cap).collect();
            let g: Vec<usize> = {
                let mut s = g;
                s.sort_unstable();
                s.dedup();
                s
            };
            let spec = sts_teacher(d, d_cap, &g, ActivationKind::Relu).unwrap();
            let mut x = RealMatrix::zeros(d, d_cap);
            for v in x.data.iter_mut() {
                *v = standard_normal(&mut rng);
            }
            let y = teacher_forward(&spec, &x).unwrap();
            for m in 0..spec.m() {
                for i in 0..d_cap {
                    let mut sum = 0.0;
                    for &ip in &spec.groups[i] {
                        for c in 0..d {
                            sum += spec.v_star.get(m, c) * x.get(c, ip);
                        }
                    }
                    let expect = apply_activation(sum / spec.k as f64, spec.act);
                    assert!((y.get(m, i) - expect).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_zero_and_identity_cases() {
        let spec = sts_teacher(3, 4, &[0, 1, 2, 3], ActivationKind::Relu).unwrap();
        let y = teacher_forward(&spec, &RealMatrix::zeros(3, 4)).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        // S* = I, V* = I, identity act: f*(X) = X.
        let v = RealMatrix::identity(3);
        let spec = gcn_regular_teacher(&RealMatrix::zeros(3, 3), v, ActivationKind::Identity).unwrap();
        let mut x = RealMatrix::zeros(3, 3);
        for (idx, v) in x.data.iter_mut().enumerate() {
            *v = idx as f64 - 4.0;
        }
        assert_eq!(teacher_forward(&spec, &x).unwrap(), x);
    }

    #[test]
    fn labels_noise_behaviour() {
        let spec = sts_teacher(3, 6, &[1, 4], ActivationKind::Identity).unwrap();
        let mut rng = purpose_stream(6, Purpose::Inputs, 0);
        let mut x = RealMatrix::zeros(3, 6);
        for v in x.data.iter_mut() {
            *v = standard_normal(&mut rng);
        }
        let clean = LabelModel::new(&spec, 0.0).unwrap();
        assert_eq!(
            sample_labels(&clean, &x, 1).unwrap(),
            teacher_forward(&spec, &x).unwrap()
        );
        let noisy = LabelModel::new(&spec, 0.5).unwrap();
        let y1 = sample_labels(&noisy, &x, 1).unwrap();
        let y2 = sample_labels(&noisy, &x, 1).unwrap();
        assert_eq!(y1, y2);
        // MC check: noise mean ~ 0 within 4 SE over many draws.
        let f = teacher_forward(&spec, &x).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in 0..2000u64 {
            let y = sample_labels(&noisy, &x, s).unwrap();
            for (a, b) in y.data.iter().zip(f.data.iter()) {
                sum += a - b;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let se = 0.5 / (count as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "noise mean {mean} vs se {se}");
    }

    #[test]
    fn text_roundtrip() {
        for spec in [
            sts_teacher(4, 9, &[0, 5], ActivationKind::Relu).unwrap(),
            gslp_teacher(5, 2, &[0.25, -1.5], ActivationKind::LeakyRelu { kappa: 0.3 }).unwrap(),
            cnn_pooling_teacher(
                6,
                3,
                &contiguous_partition(6, 3).unwrap(),
                randomish_v(2, 4, 9),
                ActivationKind::Identity,
            )
            .unwrap(),
        ] {
            let text = teacher_to_text(&spec);
            let back = teacher_from_text(&text).unwrap();
            assert_eq!(back.v_star, spec.v_star);
            assert_eq!(back.s_star, spec.s_star);
            assert_eq!(back.k, spec.k);
            assert_eq!(back.groups, spec.groups);
            assert_eq!(back.act, spec.act);
        }
    }

    #[test]
    fn unit_rows_are_unit() {
        let v = unit_norm_rows(5, 7, 3);
        for r in 0..5 {
            let n: f64 = v.row(r).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!((v.frob_norm_sq() - 5.0).abs() < 1e-12);
    }
}
