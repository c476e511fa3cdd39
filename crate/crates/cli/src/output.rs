//! Metrics CSV and run metadata.
//!
//! A metrics file starts with a comment line pinning the schema:
//!
//! ```text
//! # schema=nlc-admm-metrics/1 sha256=<hex digest of the header row>
//! k,f_k,r_g_norm,...,elapsed_ns[,outer_iter]
//! ```
//!
//! Floats use the shortest representation that reads back exactly; values
//! absent without a reference are empty fields. Every column except
//! `elapsed_ns` is a deterministic function of config and seed.
//!
//! For gnuplot, `set datafile separator ","` and plot e.g. `using 1:10`
//! for `V_k` against `k`.

use std::fmt::Write as _;
use std::path::Path;

use nlc_admm::admm::IterationMetrics;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::BUILD_TAG;

pub const SCHEMA: &str = "nlc-admm-metrics/1";

pub const COLUMNS: [&str; 12] = [
    "k",
    "f_k",
    "r_g_norm",
    "r_h_norm",
    "r_consensus_norm",
    "z_change",
    "dist_z_2",
    "dist_z_inf",
    "dist_lambda",
    "V_k",
    "inner_iters_this_round",
    "elapsed_ns",
];

pub const OUTER_COLUMN: &str = "outer_iter";

fn float(out: &mut String, v: f64) {
    let _ = write!(out, "{v:e}");
}

fn opt_float(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        float(out, v);
    }
}

pub fn header(with_outer: bool) -> String {
    let mut cols: Vec<&str> = COLUMNS.to_vec();
    if with_outer {
        cols.push(OUTER_COLUMN);
    }
    cols.join(",")
}

/// Schema line, header and one row per iteration. The `outer_iter` column
/// is present iff any row carries one.
pub fn metrics_csv(trace: &[IterationMetrics]) -> String {
    let with_outer = trace.iter().any(|m| m.outer_iter.is_some());
    let head = header(with_outer);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# schema={SCHEMA} sha256={}",
        hex::encode(Sha256::digest(head.as_bytes()))
    );
    out.push_str(&head);
    out.push('\n');
    for m in trace {
        let _ = write!(out, "{},", m.k);
        float(&mut out, m.f_k);
        for v in [m.r_g_norm, m.r_h_norm, m.r_consensus_norm, m.z_change] {
            out.push(',');
            float(&mut out, v);
        }
        for v in [m.dist_z_2, m.dist_z_inf, m.dist_lambda, m.v_k] {
            out.push(',');
            opt_float(&mut out, v);
        }
        let _ = write!(out, ",{},{}", m.inner_iters, m.elapsed_ns);
        if with_outer {
            out.push(',');
            if let Some(o) = m.outer_iter {
                let _ = write!(out, "{o}");
            }
        }
        out.push('\n');
    }
    out
}

/// Checks the schema line of a metrics file against its header row.
pub fn check_schema(text: &str) -> Result<(), String> {
    let mut lines = text.lines();
    let first = lines.next().ok_or("empty file")?;
    let head = lines.next().ok_or("missing header row")?;
    let expected = format!(
        "# schema={SCHEMA} sha256={}",
        hex::encode(Sha256::digest(head.as_bytes()))
    );
    if first == expected {
        Ok(())
    } else {
        Err(format!("schema line {first:?} does not match header {head:?}"))
    }
}

/// Sidecar written next to every output.
#[derive(Debug, Serialize)]
pub struct Metadata<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub build: &'static str,
    pub command: &'a str,
    pub instance_hash: Option<&'a str>,
    pub seed: u64,
    pub config: &'a Config,
}

impl<'a> Metadata<'a> {
    pub fn new(command: &'a str, config: &'a Config, instance_hash: Option<&'a str>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            build: BUILD_TAG,
            command,
            instance_hash,
            seed: config.problem.seed,
            config,
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("metadata always serializes");
        std::fs::write(path, text + "\n")
    }
}
