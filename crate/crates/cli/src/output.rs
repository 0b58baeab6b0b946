//! Artifact buffering and the small CSV/JSON documents owned by the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use gcsam_core::io::{write_grid_csv, write_trace_csv};
use gcsam_core::{Error, LandscapeGrid, RunResult, StepRecord, SweepResult};
use serde::Serialize;
use serde_json::{json, Value};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Buffers artifacts in memory; everything is written by [`Artifacts::flush`].
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: String) -> anyhow::Result<()> {
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    pub fn trace(&mut self, name: &str, records: &[StepRecord]) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        write_trace_csv(records, &mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    pub fn grid(&mut self, name: &str, grid: &LandscapeGrid) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        write_grid_csv(grid, &mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    pub fn flush(self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        for (name, bytes) in self.files {
            let path = self.dir.join(&name);
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn provenance(command: &str, argv: &[String], threads: Option<usize>) -> Value {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let host = std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok().map(|s| s.trim().to_string()))
        .unwrap_or_default();
    json!({
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "command": command,
        "argv": argv,
        "created_unix_secs": secs,
        "host": host,
        "version": env!("CARGO_PKG_VERSION"),
        "threads": threads.unwrap_or_else(rayon::current_num_threads),
    })
}

pub fn error_doc(err: &anyhow::Error, code: i32) -> Value {
    let core = err.downcast_ref::<Error>();
    let kind = match core {
        Some(Error::Config(_)) => "invalid_config",
        Some(Error::Generation(_)) => "invalid_task",
        Some(Error::InvalidBatch(_)) => "invalid_batch",
        Some(Error::Schema { .. }) => "schema_mismatch",
        Some(e) if e.is_numerical() => "numerical_abort",
        Some(Error::Json(_)) => "invalid_json",
        _ => "error",
    };
    let invariant = core.map(|e| match e {
        Error::NonFiniteStep { reason, .. } => reason.clone(),
        other => other.to_string(),
    });
    let details = match core {
        Some(Error::NonFiniteStep { record, .. }) => serde_json::to_value(record).unwrap_or(Value::Null),
        Some(Error::BatchAborted { completed, failures }) => json!({
            "completed_seeds": completed.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "failures": failures,
        }),
        _ => Value::Null,
    };
    json!({
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "exit_code": code,
        "kind": kind,
        "invariant": invariant,
        "message": format!("{err:#}"),
        "details": details,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sweep_csv(res: &SweepResult) -> String {
    let mut out = String::from(
        "parameter,value,status,n_runs,seen_acc_mean,seen_acc_std,unseen_acc_mean,unseen_acc_std,hm_mean,hm_std,\
         mean_cos_theta_mean,mean_cos_theta_std,reason\n",
    );
    let param = res.parameter.as_str();
    for v in &res.values {
        let value = csv_field(&v.to_string());
        if let Some(row) = res.rows.iter().find(|r| &r.value == v) {
            let a = &row.aggregate;
            let (cm, cs) = a.mean_cos_theta.map(|s| (s.mean.to_string(), s.std.to_string())).unwrap_or_default();
            out.push_str(&format!(
                "{param},{value},ok,{},{},{},{},{},{},{},{cm},{cs},\n",
                a.n_runs, a.seen_acc.mean, a.seen_acc.std, a.unseen_acc.mean, a.unseen_acc.std, a.hm.mean, a.hm.std
            ));
        } else if let Some(skip) = res.skipped.iter().find(|s| &s.value == v) {
            out.push_str(&format!("{param},{value},skipped,0,,,,,,,,,{}\n", csv_field(&skip.reason)));
        }
    }
    out
}

pub fn cos_trace_csv(records: &[StepRecord]) -> String {
    let mut out = String::from("step,cos_theta,branch\n");
    for r in records {
        let cos = r.cos_theta.map(|c| c.to_string()).unwrap_or_default();
        let branch = r.branch.map(|b| b.as_str()).unwrap_or("");
        out.push_str(&format!("{},{cos},{branch}\n", r.step_index));
    }
    out
}

pub fn diag_summary(run: &RunResult, bins: usize) -> Value {
    let mut branches: BTreeMap<&str, usize> = ["low", "mid", "high"].into_iter().map(|b| (b, 0)).collect();
    let mut counts = vec![0usize; bins];
    for r in &run.records {
        if let Some(b) = r.branch {
            *branches.entry(b.as_str()).or_default() += 1;
        }
        if let Some(c) = r.cos_theta {
            let k = (((c + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let edges: Vec<f64> = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
    json!({
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "seed": run.seed,
        "kind": run.kind,
        "steps": run.records.len(),
        "mean_cos_theta": run.mean_cos_theta,
        "branch_counts": branches,
        "cos_histogram": { "edges": edges, "counts": counts },
    })
}
