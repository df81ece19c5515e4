//! File output (CSV, PGM heatmaps, run manifests) and flat `key = value`
//! config parsing. All writes are atomic: content goes to a temporary file
//! in the target directory which is then renamed over the destination.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::core::{ActivationKind, RealMatrix};
use crate::dynamics::DynamicsRecord;
use crate::error::{Error, Result};
use crate::teachers::fmt17;
use crate::trainer::TrajectoryRecord;

/// Writes `contents` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("not a file path: {}", path.display()),
        )))?;
    let mut tmp: PathBuf = dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    tmp.push(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Scalar-dynamics trajectory CSV:
/// `t,C1,C2,C3,p,C1_star,A,B,excess_loss,s_frob_gap`.
pub fn dynamics_csv(records: &[DynamicsRecord]) -> String {
    let mut out = String::from("t,C1,C2,C3,p,C1_star,A,B,excess_loss,s_frob_gap\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.state.t,
            fmt17(r.state.c1),
            fmt17(r.state.c2),
            fmt17(r.state.c3),
            fmt17(r.state.p),
            fmt17(r.c1_star),
            fmt17(r.a),
            fmt17(r.b),
            fmt17(r.excess_loss),
            fmt17(r.s_frob_gap),
        ));
    }
    out
}

/// Empirical-training trajectory CSV.
pub fn train_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::from(
        "t,excess_train_loss,excess_ood_loss,cosine_sim,p_hat,s_frob_gap,wv_offpattern_ratio,kq_grad_norm\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.t,
            fmt17(r.excess_train_loss),
            fmt17(r.excess_ood_loss),
            fmt17(r.cosine_sim),
            fmt17(r.p_hat),
            fmt17(r.s_frob_gap),
            fmt17(r.wv_offpattern_ratio),
            fmt17(r.kq_grad_norm),
        ));
    }
    out
}

/// One verification row for a closed form vs its Monte Carlo estimate.
#[derive(Debug, Clone)]
pub struct VerifyRow {
    pub f_name: &'static str,
    pub act: ActivationKind,
    /// Up to three arguments; unused slots are `None`.
    pub args: [Option<f64>; 3],
    pub closed_form: f64,
    pub mc_estimate: f64,
    pub se: f64,
}

impl VerifyRow {
    pub fn z_score(&self) -> f64 {
        if self.se == 0.0 {
            if self.closed_form == self.mc_estimate { 0.0 } else { f64::INFINITY }
        } else {
            (self.mc_estimate - self.closed_form) / self.se
        }
    }
}

fn act_label(act: ActivationKind) -> String {
    match act {
        ActivationKind::Identity => "identity".into(),
        ActivationKind::Relu => "relu".into(),
        ActivationKind::LeakyRelu { kappa } => format!("leaky({kappa})"),
    }
}

/// CSV for `verify-expectations`:
/// `F,act,arg1,arg2,arg3,closed_form,mc_estimate,se,z_score`.
pub fn verify_csv(rows: &[VerifyRow]) -> String {
    let mut out = String::from("F,act,arg1,arg2,arg3,closed_form,mc_estimate,se,z_score\n");
    for r in rows {
        let arg = |i: usize| r.args[i].map(fmt17).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.f_name,
            act_label(r.act),
            arg(0),
            arg(1),
            arg(2),
            fmt17(r.closed_form),
            fmt17(r.mc_estimate),
            fmt17(r.se),
            fmt17(r.z_score()),
        ));
    }
    out
}

/// Matrix as a CSV of rows (no header), 17 significant digits.
pub fn matrix_csv(m: &RealMatrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows {
        let row: Vec<String> = m.row(r).iter().copied().map(fmt17).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a headerless CSV of equal-length comma-separated rows back into a
/// matrix (inverse of [`matrix_csv`]).
pub fn matrix_from_csv(text: &str) -> Result<RealMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!("line {}: bad number `{}`", lineno + 1, f.trim()))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix CSV".into()));
    }
    RealMatrix::from_rows(&rows)
}

/// Matrix as an ASCII PGM (P2) heatmap. Values are scaled linearly from
/// `[0, max]` to `[0, 255]`; negative entries clamp to 0.
pub fn matrix_pgm(m: &RealMatrix) -> String {
    let max = m.data.iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P2\n{} {}\n255\n", m.cols, m.rows);
    for r in 0..m.rows {
        let row: Vec<String> = m
            .row(r)
            .iter()
            .map(|&v| {
                let level = if max > 0.0 {
                    ((v.max(0.0) / max) * 255.0).round() as i64
                } else {
                    0
                };
                level.clamp(0, 255).to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Resolved run description, written as `key = value` text before any
/// computation starts so a run can be reproduced from the manifest alone.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = RunManifest {
            command: command.to_string(),
            entries: Vec::new(),
        };
        m.push("command", command);
        m.push("library_version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Parses a flat `key = value` UTF-8 config file. Blank lines and lines
/// starting with `#` are ignored. Later duplicates override earlier ones.
pub fn parse_flat_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!(
                "config line {}: expected `key = value`, got `{line}`",
                lineno + 1
            ))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse(format!("config line {}: empty key", lineno + 1)));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}
