//! Command-line front end: deterministic runs of the expectation verifier,
//! the reduced scalar dynamics, empirical training, trajectory analysis, and
//! the heatmap exporters. All outputs are atomically written CSV/PGM plus a
//! `key = value` manifest emitted before any computation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use posattn::analysis::{loglog_slope, DEFAULT_TAIL_FRACTION};
use posattn::attention::{column_softmax, structured_wkq, StudentParams};
use posattn::core::{
    make_positional_encoding, ActivationKind, EncodingScheme, RealMatrix,
};
use posattn::dynamics::{run_dynamics, DynamicsConfig};
use posattn::expectations::{mc_expectation, McTarget};
use posattn::io::{
    atomic_write, dynamics_csv, matrix_csv, matrix_from_csv, matrix_pgm, parse_flat_config,
    train_csv, verify_csv, RunManifest, VerifyRow,
};
use posattn::stream::{purpose_stream, Purpose};
use posattn::teachers::{
    cnn_pooling_teacher, contiguous_partition, cycle_adjacency, fmt17, gcn_regular_teacher,
    gslp_teacher, sts_teacher, teacher_to_text, unit_norm_rows, TeacherSpec,
};
use posattn::trainer::{train, InputDist, TrainConfig};
use posattn::Error as LibError;

#[derive(Parser)]
#[command(name = "posattn", version, about = "One-layer position-only-attention training dynamics")]
struct Cli {
    /// Cap the number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` config file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every closed-form expectation against its Monte Carlo oracle.
    VerifyExpectations(VerifyArgs),
    /// Run the reduced (C1, C2, C3, p) recursion and export the trajectory.
    SimulateDynamics(DynArgs),
    /// Mini-batch gradient descent on a teacher task.
    Train(TrainArgs),
    /// Fit tail slopes and final metrics from a training trajectory CSV.
    Analyze(AnalyzeArgs),
    /// Convert a matrix CSV into an ASCII PGM heatmap.
    ExportHeatmap(HeatmapArgs),
    /// Forward the full stacked-input transformer and export its scores.
    DemoFullTransformer(DemoArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Monte Carlo samples per expectation.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DynArgs {
    #[arg(long = "D")]
    d_cap: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    act: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Teacher family: cnn | gcn | sts | gslp.
    #[arg(long)]
    teacher: Option<String>,
    #[arg(long)]
    act: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Token feature dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Number of tokens.
    #[arg(long = "D")]
    d_cap: Option<usize>,
    /// Group size (attended tokens per output).
    #[arg(long = "K")]
    k: Option<usize>,
    /// Output rows of the teacher (ignored where the family fixes it).
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Label noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// gaussian | exponential_centered | student_t | gumbel_centered.
    #[arg(long)]
    ood_dist: Option<String>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Symmetrize every batch over cyclic token shifts (D = K runs).
    #[arg(long)]
    shift_augment: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Training trajectory CSV (as written by `train`).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Fraction of trailing points used for slope fits.
    #[arg(long)]
    tail: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Input matrix CSV.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Output PGM path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "D")]
    d_cap: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    /// On-group / off-group logit coefficients of the planted student.
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    c3: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn validation(msg: impl Into<String>) -> Self {
        CliError { code: 1, message: msg.into() }
    }
}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        let code = match e {
            LibError::Numeric(_) => 2,
            _ => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Merges the optional config file under the command-line flags: a flag
/// always wins, a file value fills the gap, otherwise the default (or a
/// `key: required` error).
struct Resolver {
    file: BTreeMap<String, String>,
}

impl Resolver {
    fn load(path: &Option<PathBuf>) -> CliResult<Self> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::validation(format!("config {}: {e}", p.display()))
                })?;
                parse_flat_config(&text)?
            }
        };
        Ok(Resolver { file })
    }

    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::validation(format!("{key}: invalid value `{raw}`"))),
        }
    }

    fn required<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<T> {
        self.get(flag, key)?
            .ok_or_else(|| CliError::validation(format!("{key}: required")))
    }

    fn or<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }
}

fn parse_act(name: &str, kappa: Option<f64>) -> CliResult<ActivationKind> {
    let act = match name {
        "identity" => ActivationKind::Identity,
        "relu" => ActivationKind::Relu,
        "leaky" => ActivationKind::LeakyRelu {
            kappa: kappa.ok_or_else(|| CliError::validation("kappa: required for leaky"))?,
        },
        other => {
            return Err(CliError::validation(format!(
                "act: unknown activation `{other}` (identity | relu | leaky)"
            )))
        }
    };
    act.validate()?;
    Ok(act)
}

fn parse_dist(name: &str) -> CliResult<InputDist> {
    Ok(match name {
        "gaussian" => InputDist::Gaussian,
        "exponential_centered" => InputDist::ExponentialCentered,
        "student_t" => InputDist::StudentT { df: 5.0 },
        "gumbel_centered" => InputDist::GumbelCentered,
        other => {
            return Err(CliError::validation(format!(
                "ood_dist: unknown distribution `{other}`"
            )))
        }
    })
}

fn write_manifest(dir_or_file: &Path, manifest: &RunManifest) -> CliResult<()> {
    let path = if dir_or_file.extension().is_some() {
        dir_or_file.with_extension("manifest")
    } else {
        dir_or_file.join("manifest.txt")
    };
    atomic_write(&path, &manifest.to_text())?;
    Ok(())
}

fn cmd_verify(args: VerifyArgs, cfg: &Resolver) -> CliResult<()> {
    let n = cfg.or(args.n, "n", 1_000_000)?;
    let seed = cfg.or(args.seed, "seed", 1)?;
    let out = cfg.or(args.out, "out", PathBuf::from("expectations.csv"))?;
    if n == 0 {
        return Err(CliError::validation("n: must be >= 1"));
    }

    let mut manifest = RunManifest::new("verify-expectations");
    manifest.push("n", n);
    manifest.push("seed", seed);
    manifest.push("out", out.display());
    write_manifest(&out, &manifest)?;

    let acts = [
        ActivationKind::Identity,
        ActivationKind::Relu,
        ActivationKind::LeakyRelu { kappa: 0.25 },
    ];
    let mut rows: Vec<VerifyRow> = Vec::new();
    use rand::Rng;
    for (fi, f_name) in ["F1", "F2", "F3", "F4", "F5"].iter().enumerate() {
        let mut rng = purpose_stream(seed, Purpose::MonteCarlo, 1000 + fi as u64);
        for case in 0..20u64 {
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| 0.01 + 9.99 * rng.gen::<f64>();
            let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            for act in acts {
                let (target, args_slot, closed) = match fi {
                    0 => (McTarget::F1 { a }, [Some(a), None, None], posattn::expectations::f1(a, act)?),
                    1 => (McTarget::F2 { a, b }, [Some(a), Some(b), None], posattn::expectations::f2(a, b, act)?),
                    2 => (McTarget::F3 { a, b }, [Some(a), Some(b), None], posattn::expectations::f3(a, b, act)?),
                    3 => (McTarget::F4 { a, b, c }, [Some(a), Some(b), Some(c)], posattn::expectations::f4(a, b, c, act)?),
                    _ => (McTarget::F5 { a, b, c }, [Some(a), Some(b), Some(c)], posattn::expectations::f5(a, b, c, act)?),
                };
                let (est, se) = mc_expectation(target, act, n, seed.wrapping_add(case), false)?;
                rows.push(VerifyRow {
                    f_name,
                    act,
                    args: args_slot,
                    closed_form: closed,
                    mc_estimate: est,
                    se,
                });
            }
        }
    }
    // F6 over a small (C1, p) grid at D = 20, K = 4.
    for (i, (c1, p)) in [(0.5, 0.06), (1.0, 0.1), (1.5, 0.2), (2.0, 0.24)].iter().enumerate() {
        for act in acts {
            let closed = posattn::expectations::f6(*c1, *p, 20, 4, act)?;
            let (est, se) = mc_expectation(
                McTarget::F6 { c1: *c1, p: *p, d_cap: 20, k: 4 },
                act,
                n,
                seed.wrapping_add(100 + i as u64),
                false,
            )?;
            rows.push(VerifyRow {
                f_name: "F6",
                act,
                args: [Some(*c1), Some(*p), None],
                closed_form: closed,
                mc_estimate: est,
                se,
            });
        }
    }

    let max_z = rows
        .iter()
        .map(|r| r.z_score().abs())
        .fold(0.0f64, f64::max);
    atomic_write(&out, &verify_csv(&rows))?;
    println!("wrote {} rows to {}; max |z| = {max_z:.3}", rows.len(), out.display());
    Ok(())
}

fn cmd_dynamics(args: DynArgs, cfg: &Resolver) -> CliResult<()> {
    let d_cap = cfg.required(args.d_cap, "D")?;
    let k = cfg.required(args.k, "K")?;
    let eta = cfg.required(args.eta, "eta")?;
    let steps = cfg.required(args.steps, "steps")?;
    let m = cfg.or(args.m, "M", 1)?;
    let act_name: String = cfg.or(args.act, "act", "identity".into())?;
    let kappa = cfg.get(args.kappa, "kappa")?;
    let out = cfg.or(args.out, "out", PathBuf::from("trajectory.csv"))?;
    let act = parse_act(&act_name, kappa)?;

    let dyn_cfg = DynamicsConfig {
        d_cap,
        k,
        m,
        eta,
        act,
        v_norm_sq: m as f64,
    };
    dyn_cfg.validate()?;

    let mut manifest = RunManifest::new("simulate-dynamics");
    manifest.push("D", d_cap);
    manifest.push("K", k);
    manifest.push("M", m);
    manifest.push("eta", eta);
    manifest.push("steps", steps);
    manifest.push("act", &act_name);
    manifest.push("out", out.display());
    write_manifest(&out, &manifest)?;

    let run = run_dynamics(&dyn_cfg, steps)?;
    atomic_write(&out, &dynamics_csv(&run.records))?;
    let last = run.records.last().unwrap();
    println!(
        "T={steps}: C1={} p={} excess={} t_burn_in={:?} t_star={:?}",
        fmt17(last.state.c1),
        fmt17(last.state.p),
        fmt17(last.excess_loss),
        run.t_burn_in,
        run.t_star
    );
    Ok(())
}

fn build_teacher(
    family: &str,
    act: ActivationKind,
    d: Option<usize>,
    d_cap: usize,
    k: Option<usize>,
    m: Option<usize>,
    seed: u64,
) -> CliResult<TeacherSpec> {
    let teacher = match family {
        "cnn" => {
            let d = d.ok_or_else(|| CliError::validation("d: required"))?;
            let k = k.ok_or_else(|| CliError::validation("K: required"))?;
            let m = m.ok_or_else(|| CliError::validation("M: required"))?;
            let v = unit_norm_rows(m, d, seed);
            cnn_pooling_teacher(d_cap, k, &contiguous_partition(d_cap, k)?, v, act)?
        }
        "gcn" => {
            let d = d.ok_or_else(|| CliError::validation("d: required"))?;
            let m = m.ok_or_else(|| CliError::validation("M: required"))?;
            if let Some(k) = k {
                if k != 3 {
                    return Err(CliError::validation("K: the cycle graph forces K = 3"));
                }
            }
            let v = unit_norm_rows(m, d, seed);
            gcn_regular_teacher(&cycle_adjacency(d_cap), v, act)?
        }
        "sts" => {
            let d = d.ok_or_else(|| CliError::validation("d: required"))?;
            let k = k.ok_or_else(|| CliError::validation("K: required"))?;
            let group: Vec<usize> = (0..k).collect();
            sts_teacher(d, d_cap, &group, act)?
        }
        "gslp" => {
            let d = d.ok_or_else(|| CliError::validation("d: required"))?;
            let v = unit_norm_rows(1, d, seed);
            gslp_teacher(d_cap, 0, v.row(0), act)?
        }
        other => {
            return Err(CliError::validation(format!(
                "teacher: unknown family `{other}` (cnn | gcn | sts | gslp)"
            )))
        }
    };
    Ok(teacher)
}

fn cmd_train(args: TrainArgs, cfg: &Resolver) -> CliResult<()> {
    let family: String = cfg.required(args.teacher, "teacher")?;
    let d_cap = cfg.required(args.d_cap, "D")?;
    let steps = cfg.required(args.steps, "steps")?;
    let act_name: String = cfg.or(args.act, "act", "relu".into())?;
    let kappa = cfg.get(args.kappa, "kappa")?;
    let act = parse_act(&act_name, kappa)?;
    let d = cfg.get(args.d, "d")?;
    let k = cfg.get(args.k, "K")?;
    let m = cfg.get(args.m, "M")?;
    let eta = cfg.or(args.eta, "eta", 0.05)?;
    let batch = cfg.or(args.batch, "batch", 100)?;
    let noise = cfg.or(args.noise, "noise", 0.0)?;
    let seed = cfg.or(args.seed, "seed", 0)?;
    let ood_name: String = cfg.or(args.ood_dist, "ood_dist", "exponential_centered".into())?;
    let record_every = cfg.or(args.record_every, "record_every", (steps / 100).max(1))?;
    let out: PathBuf = cfg.or(args.out, "out", PathBuf::from("run_out"))?;
    let shift_augment = args.shift_augment
        || cfg
            .file
            .get("shift_augment")
            .map(|v| v == "true" || v == "1")
            .unwrap_or(false);

    let teacher = build_teacher(&family, act, d, d_cap, k, m, seed)?;
    let config = TrainConfig {
        eta,
        t_steps: steps,
        n: batch,
        seed,
        noise_scale: noise,
        input_dist: InputDist::Gaussian,
        ood_dist: parse_dist(&ood_name)?,
        ood_n: batch,
        eval_n: 2048,
        record_every,
        shift_augment,
    };
    config.validate()?;

    let mut manifest = RunManifest::new("train");
    manifest.push("teacher", &family);
    manifest.push("act", &act_name);
    manifest.push("d", teacher.d());
    manifest.push("D", teacher.d_cap());
    manifest.push("K", teacher.k);
    manifest.push("M", teacher.m());
    manifest.push("eta", eta);
    manifest.push("steps", steps);
    manifest.push("batch", batch);
    manifest.push("noise", noise);
    manifest.push("seed", seed);
    manifest.push("ood_dist", &ood_name);
    manifest.push("record_every", record_every);
    manifest.push("shift_augment", shift_augment);
    manifest.push("out", out.display());
    write_manifest(&out, &manifest)?;
    atomic_write(&out.join("teacher.txt"), &teacher_to_text(&teacher))?;

    let encoding = make_positional_encoding(teacher.d_cap(), EncodingScheme::RandomOrthogonal, seed)?;
    let run = train(&teacher, encoding, &config)?;

    atomic_write(&out.join("trajectory.csv"), &train_csv(&run.records))?;
    atomic_write(&out.join("w_v.csv"), &matrix_csv(&run.params.w_v))?;
    atomic_write(&out.join("w_kq.csv"), &matrix_csv(&run.params.w_kq))?;
    let scores =
        posattn::attention::attention_scores(&run.params.w_kq, &run.params.encoding.p)?;
    atomic_write(&out.join("scores.csv"), &matrix_csv(&scores))?;
    atomic_write(&out.join("scores.pgm"), &matrix_pgm(&scores))?;
    let last = run.records.last().unwrap();
    println!(
        "T={}: excess_train={} excess_ood={} cos={} p_hat={} max|G_KQ|={}",
        last.t,
        fmt17(last.excess_train_loss),
        fmt17(last.excess_ood_loss),
        fmt17(last.cosine_sim),
        fmt17(last.p_hat),
        fmt17(run.max_kq_grad_norm)
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs, cfg: &Resolver) -> CliResult<()> {
    let path = cfg.required(args.trajectory, "trajectory")?;
    let tail = cfg.or(args.tail, "tail", DEFAULT_TAIL_FRACTION)?;
    let out = cfg.or(args.out, "out", PathBuf::from("summary.csv"))?;

    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::validation(format!("trajectory {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::validation("trajectory: empty file"))?
        .split(',')
        .collect();
    let col = |name: &str| -> CliResult<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::validation(format!("trajectory: missing column {name}")))
    };
    let (ti, tri, oi) = (col("t")?, col("excess_train_loss")?, col("excess_ood_loss")?);
    let (ci, pi, si) = (col("cosine_sim")?, col("p_hat")?, col("s_frob_gap")?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::validation(format!("trajectory: bad row {}", ln + 2)))?;
        rows.push(fields);
    }
    if rows.is_empty() {
        return Err(CliError::validation("trajectory: no data rows"));
    }

    let mut manifest = RunManifest::new("analyze");
    manifest.push("trajectory", path.display());
    manifest.push("tail", tail);
    manifest.push("out", out.display());
    write_manifest(&out, &manifest)?;

    let series = |idx: usize| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r[ti], r[idx])).collect()
    };
    let train_fit = loglog_slope(&series(tri), tail)?;
    let ood_fit = loglog_slope(&series(oi), tail)?;
    let last = rows.last().unwrap();
    let mut summary = String::from("metric,value\n");
    for (k, v) in [
        ("excess_train_slope", train_fit.slope),
        ("excess_train_r2", train_fit.r_squared),
        ("excess_ood_slope", ood_fit.slope),
        ("excess_ood_r2", ood_fit.r_squared),
        ("final_cosine_sim", last[ci]),
        ("final_p_hat", last[pi]),
        ("final_s_frob_gap", last[si]),
    ] {
        summary.push_str(&format!("{k},{}\n", fmt17(v)));
    }
    atomic_write(&out, &summary)?;
    println!(
        "train slope {:.4}, ood slope {:.4} -> {}",
        train_fit.slope,
        ood_fit.slope,
        out.display()
    );
    Ok(())
}

fn cmd_heatmap(args: HeatmapArgs, cfg: &Resolver) -> CliResult<()> {
    let input = cfg.required(args.matrix, "matrix")?;
    let out = cfg.or(args.out, "out", input.with_extension("pgm"))?;
    let text = std::fs::read_to_string(&input)
        .map_err(|e| CliError::validation(format!("matrix {}: {e}", input.display())))?;
    let m = matrix_from_csv(&text)?;
    let mut manifest = RunManifest::new("export-heatmap");
    manifest.push("matrix", input.display());
    manifest.push("out", out.display());
    write_manifest(&out, &manifest)?;
    atomic_write(&out, &matrix_pgm(&m))?;
    println!("{} -> {} ({}x{})", input.display(), out.display(), m.rows, m.cols);
    Ok(())
}

fn cmd_demo(args: DemoArgs, cfg: &Resolver) -> CliResult<()> {
    let d = cfg.required(args.d, "d")?;
    let d_cap = cfg.required(args.d_cap, "D")?;
    let k = cfg.required(args.k, "K")?;
    let c2 = cfg.or(args.c2, "c2", 40.0)?;
    let c3 = cfg.or(args.c3, "c3", 10.0)?;
    let seed = cfg.or(args.seed, "seed", 0)?;
    let out: PathBuf = cfg.or(args.out, "out", PathBuf::from("demo_out"))?;

    let teacher = build_teacher("sts", ActivationKind::Relu, Some(d), d_cap, Some(k), None, seed)?;
    let mut manifest = RunManifest::new("demo-full-transformer");
    manifest.push("d", d);
    manifest.push("D", d_cap);
    manifest.push("K", k);
    manifest.push("c2", c2);
    manifest.push("c3", c3);
    manifest.push("seed", seed);
    manifest.push("out", out.display());
    write_manifest(&out, &manifest)?;

    let encoding = make_positional_encoding(d_cap, EncodingScheme::RandomOrthogonal, seed)?;
    let mut params = StudentParams::zeros(teacher.m(), d, encoding);
    params.w_v = teacher.v_star.clone();
    params.w_kq = structured_wkq(c2, c3, &teacher.groups, &params.encoding)?;

    // Stacked input Z = [X; P] with the block-embedded parameters
    // Wt_KQ = [[0, 0], [0, W_KQ]], Wt_V = [W_V | 0]: the full transformer
    // reduces to the position-only student, and its score matrix shows the
    // feature-independent block structure.
    let xs = posattn::trainer::sample_inputs(
        d,
        d_cap,
        1,
        InputDist::Gaussian,
        seed,
        Purpose::Inputs,
        0,
    )?;
    let z = posattn::attention::stack_input(&xs[0], &params.encoding)?;
    let total = d + d_cap;
    let mut wt_kq = RealMatrix::zeros(total, total);
    for r in 0..d_cap {
        for c in 0..d_cap {
            wt_kq.set(d + r, d + c, params.w_kq.get(r, c));
        }
    }
    let mut wt_v = RealMatrix::zeros(teacher.m(), total);
    for r in 0..teacher.m() {
        for c in 0..d {
            wt_v.set(r, c, params.w_v.get(r, c));
        }
    }
    let logits = z
        .transpose()
        .matmul(&wt_kq)?
        .matmul(&z)?
        .scale(1.0 / (d_cap as f64).sqrt());
    let scores = column_softmax(&logits)?;
    let full_out = posattn::attention::full_transformer_forward(
        &z,
        &wt_v,
        &wt_kq,
        d_cap,
        ActivationKind::Relu,
    )?;
    let student_out =
        posattn::attention::student_forward(&params, &xs[0], ActivationKind::Relu)?;
    let gap = full_out.sub(&student_out)?.max_abs();

    atomic_write(&out.join("full_scores.csv"), &matrix_csv(&scores))?;
    atomic_write(&out.join("full_scores.pgm"), &matrix_pgm(&scores))?;
    println!(
        "full vs reduced forward max gap {:.3e}; scores written to {}",
        gap,
        out.display()
    );
    Ok(())
}

fn run() -> CliResult<()> {
    let cli = Cli::try_parse().map_err(|e| CliError::validation(e.to_string()))?;
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::validation("threads: must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::validation(format!("threads: {e}")))?;
    }
    let cfg = Resolver::load(&cli.config)?;
    match cli.command {
        Command::VerifyExpectations(a) => cmd_verify(a, &cfg),
        Command::SimulateDynamics(a) => cmd_dynamics(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Analyze(a) => cmd_analyze(a, &cfg),
        Command::ExportHeatmap(a) => cmd_heatmap(a, &cfg),
        Command::DemoFullTransformer(a) => cmd_demo(a, &cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message);
            ExitCode::from(e.code)
        }
    }
}
