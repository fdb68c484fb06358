//! Seeded Monte Carlo execution of one experiment configuration.
//!
//! Each trajectory index owns a noise stream derived from
//! (master seed, index), a fresh estimator, and a fresh controller, so
//! members can run concurrently while every output byte stays a pure
//! function of the configuration. Failed trajectories (non-finite state,
//! estimate, or control) are skipped and reported rather than aborting
//! the ensemble.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::control::{Controller, ControlFeed, TargetSpec};
use crate::csv::{write_csv, CsvError, SeriesTable};
use crate::estimators::Estimator;
use crate::model::ModelParams;
use crate::qubit::DensityMatrix;
use crate::sde::{sde_step, TrajectoryNoise};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("cannot create output directory {0}: {1}")]
    OutDir(PathBuf, std::io::Error),
    #[error("cannot write metadata: {0}")]
    Meta(std::io::Error),
}

/// Per-trajectory health counters.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryDiagnostics {
    pub index: usize,
    pub projections: usize,
    pub estimator_clamps: usize,
    pub controller_switches: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryFailure {
    pub index: usize,
    pub reason: String,
}

/// Per-grid-time mean / standard deviation / standard error over the
/// completed trajectories, for every tracked column.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    /// Base column names (same layout as the per-trajectory tables).
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub samples: usize,
}

impl EnsembleStats {
    fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Mean series of a column, by name.
    pub fn mean_series(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.mean.iter().map(|row| row[idx]).collect())
    }

    pub fn stderr_series(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.stderr.iter().map(|row| row[idx]).collect())
    }

    /// Flatten into the `_ensemble.csv` layout: t, then mean/std/se per
    /// column.
    pub fn to_table(&self) -> SeriesTable {
        let mut columns = vec!["t".to_string()];
        for c in &self.columns {
            columns.push(format!("{c}_mean"));
            columns.push(format!("{c}_std"));
            columns.push(format!("{c}_se"));
        }
        let mut table = SeriesTable::new(columns);
        for (i, &t) in self.times.iter().enumerate() {
            let mut row = Vec::with_capacity(1 + 3 * self.columns.len());
            row.push(t);
            for j in 0..self.columns.len() {
                row.push(self.mean[i][j]);
                row.push(self.std[i][j]);
                row.push(self.stderr[i][j]);
            }
            table.push_row(row);
        }
        table
    }
}

/// Everything one run produces: statistics, per-trajectory tables (in
/// index order), diagnostics, and the failure list.
#[derive(Debug)]
pub struct RunSummary {
    pub stats: EnsembleStats,
    pub trajectories: Vec<SeriesTable>,
    pub diagnostics: Vec<TrajectoryDiagnostics>,
    pub failures: Vec<TrajectoryFailure>,
    pub config_hash: String,
}

impl RunSummary {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Column layout of the per-trajectory tables; columns are present only
/// when the configuration makes them meaningful, and never blank.
struct ColumnLayout {
    has_estimate: bool,
    has_trace_p: bool,
    n_weights: usize,
    has_target: bool,
}

impl ColumnLayout {
    fn from_config(cfg: &ExperimentConfig) -> Self {
        let kind = cfg.estimator.kind.as_str();
        Self {
            has_estimate: kind != "none",
            has_trace_p: kind == "ekf",
            n_weights: if kind.starts_with("mmae") {
                cfg.estimator.mmae.multipliers.len()
            } else {
                0
            },
            has_target: cfg.controller.kind.starts_with("lyapunov"),
        }
    }

    fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["t", "x1", "x2", "x3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if self.has_estimate {
            cols.extend(["xhat1", "xhat2", "xhat3"].iter().map(|s| s.to_string()));
        }
        cols.extend(
            ["rho00_re", "rho01_re", "rho01_im", "rho11_re"]
                .iter()
                .map(|s| s.to_string()),
        );
        if self.has_estimate {
            cols.push("fidelity_truth_estimate".into());
        }
        if self.has_target {
            cols.push("fidelity_truth_target".into());
            cols.push("V".into());
        }
        cols.push("Omega".into());
        if self.has_trace_p {
            cols.push("traceP".into());
        }
        for i in 1..=self.n_weights {
            cols.push(format!("p{i}"));
        }
        cols
    }
}

fn run_single(
    index: usize,
    cfg: &ExperimentConfig,
    model: &ModelParams,
    layout: &ColumnLayout,
) -> Result<(SeriesTable, TrajectoryDiagnostics), TrajectoryFailure> {
    let fail = |reason: String| TrajectoryFailure { index, reason };

    let scheme = cfg.sim.drift_scheme;
    let dt = cfg.sim.dt;
    let n_steps = (cfg.sim.t_final / dt).round() as usize;
    let mut noise = TrajectoryNoise::new(
        cfg.run.master_seed,
        index as u64,
        dt,
        model.analyzer_variance,
    );
    let mut estimator: Option<Box<dyn Estimator>> =
        crate::estimators::build(&cfg.estimator, model, scheme)
            .map_err(|e| fail(e.to_string()))?;
    let mut controller: Box<dyn Controller> =
        crate::control::build(&cfg.controller, model).map_err(|e| fail(e.to_string()))?;
    let target: Option<TargetSpec> = controller.target().cloned();

    let mut table = SeriesTable::new(layout.columns());
    let mut x = nalgebra::Vector3::from(cfg.sim.x0);
    let mut projections = 0usize;

    for i in 0..=n_steps {
        let t = i as f64 * dt;
        let rho = DensityMatrix::from_bloch(&x)
            .map_err(|e| fail(format!("state invalid at step {i}: {e}")))?;
        let output = estimator.as_ref().map(|e| e.output());

        let fed = match controller.feed() {
            ControlFeed::Truth => rho,
            ControlFeed::Estimate => output
                .as_ref()
                .map(|o| o.rho_hat)
                .expect("estimate-fed controller requires an estimator"),
        };
        let omega = controller.control(&fed, t);
        if !omega.is_finite() {
            return Err(fail(format!("controller returned {omega} at t = {t}")));
        }

        let mut row = Vec::with_capacity(table.columns.len());
        row.push(t);
        row.extend_from_slice(&[x[0], x[1], x[2]]);
        if let Some(o) = &output {
            row.extend_from_slice(&[o.xhat[0], o.xhat[1], o.xhat[2]]);
        }
        // Hermitian truth state: rho01 = (x1 - i x2)/2, diagonal from x3.
        row.push(0.5 * (1.0 + x[2]));
        row.push(0.5 * x[0]);
        row.push(-0.5 * x[1]);
        row.push(0.5 * (1.0 - x[2]));
        if let Some(o) = &output {
            row.push(rho.fidelity(&o.rho_hat));
        }
        if let Some(tgt) = &target {
            row.push(rho.fidelity(tgt.rho_f()));
            row.push(crate::control::lyapunov_v(&rho, tgt));
        }
        row.push(omega);
        if layout.has_trace_p {
            row.push(
                output
                    .as_ref()
                    .and_then(|o| o.trace_p)
                    .expect("ekf output carries trace P"),
            );
        }
        if layout.n_weights > 0 {
            let weights = output
                .as_ref()
                .and_then(|o| o.weights.clone())
                .expect("mmae output carries weights");
            row.extend(weights);
        }
        table.push_row(row);

        if i == n_steps {
            break;
        }
        let (dw, dz) = noise.next_pair();
        let dy = model.output(&x) * dt + dw + dz;
        let (next, projected) = sde_step(model, &x, omega, dw, dt, scheme)
            .map_err(|e| fail(format!("integration failed at t = {t}: {e}")))?;
        if !(next[0].is_finite() && next[1].is_finite() && next[2].is_finite()) {
            return Err(fail(format!("state became non-finite at t = {t}")));
        }
        if projected {
            projections += 1;
        }
        x = next;
        if let Some(est) = estimator.as_mut() {
            est.step(dy, omega, dt)
                .map_err(|e| fail(format!("estimator failed at t = {t}: {e}")))?;
        }
    }

    let diags = TrajectoryDiagnostics {
        index,
        projections,
        estimator_clamps: estimator.as_ref().map_or(0, |e| e.clamp_count()),
        controller_switches: controller.switch_count(),
    };
    Ok((table, diags))
}

fn compute_stats(tables: &[SeriesTable], layout_columns: &[String], dt: f64) -> EnsembleStats {
    let columns: Vec<String> = layout_columns
        .iter()
        .filter(|c| c.as_str() != "t")
        .cloned()
        .collect();
    let n_rows = tables.first().map_or(0, |t| t.rows.len());
    let n = tables.len();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            layout_columns
                .iter()
                .position(|l| l == c)
                .expect("column present")
        })
        .collect();

    let mut mean = vec![vec![0.0; columns.len()]; n_rows];
    let mut m2 = vec![vec![0.0; columns.len()]; n_rows];
    // Welford in trajectory-index order: deterministic byte-for-byte.
    for (k, table) in tables.iter().enumerate() {
        let count = (k + 1) as f64;
        for (r, row) in table.rows.iter().enumerate() {
            for (c, &col_idx) in idx.iter().enumerate() {
                let v = row[col_idx];
                let delta = v - mean[r][c];
                mean[r][c] += delta / count;
                m2[r][c] += delta * (v - mean[r][c]);
            }
        }
    }
    let mut std = vec![vec![0.0; columns.len()]; n_rows];
    let mut stderr = vec![vec![0.0; columns.len()]; n_rows];
    if n > 1 {
        let denom = (n - 1) as f64;
        let root_n = (n as f64).sqrt();
        for r in 0..n_rows {
            for c in 0..columns.len() {
                std[r][c] = (m2[r][c] / denom).max(0.0).sqrt();
                stderr[r][c] = std[r][c] / root_n;
            }
        }
    }
    EnsembleStats {
        columns,
        times: (0..n_rows).map(|i| i as f64 * dt).collect(),
        mean,
        std,
        stderr,
        samples: n,
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    config_hash: &'a str,
    master_seed: u64,
    code_version: &'a str,
    realizations: usize,
    completed: usize,
    failures: &'a [TrajectoryFailure],
    diagnostics: &'a [TrajectoryDiagnostics],
}

/// Execute the configured ensemble. When `run.out_dir` is set, writes one
/// `traj_NNNN.csv` per completed trajectory plus `_ensemble.csv` and
/// `_meta.json`; otherwise results stay in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let layout = ColumnLayout::from_config(cfg);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .expect("thread pool");
    let results: Vec<Result<(SeriesTable, TrajectoryDiagnostics), TrajectoryFailure>> = pool
        .install(|| {
            (0..cfg.run.realizations)
                .into_par_iter()
                .map(|i| run_single(i, cfg, &model, &layout))
                .collect()
        });

    let mut trajectories = Vec::new();
    let mut diagnostics = Vec::new();
    let mut failures = Vec::new();
    let mut indices = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok((table, diag)) => {
                trajectories.push(table);
                diagnostics.push(diag);
                indices.push(i);
            }
            Err(f) => {
                log::warn!("trajectory {} failed: {}", f.index, f.reason);
                failures.push(f);
            }
        }
    }

    let stats = compute_stats(&trajectories, &layout.columns(), cfg.sim.dt);
    let summary = RunSummary {
        stats,
        trajectories,
        diagnostics,
        failures,
        config_hash: cfg.hash(),
    };

    if let Some(dir) = &cfg.run.out_dir {
        write_outputs(cfg, &summary, &indices, dir)?;
    }
    Ok(summary)
}

fn write_outputs(
    cfg: &ExperimentConfig,
    summary: &RunSummary,
    indices: &[usize],
    dir: &Path,
) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::OutDir(dir.to_path_buf(), e))?;
    for (table, &orig_index) in summary.trajectories.iter().zip(indices) {
        let path = dir.join(format!("traj_{orig_index:04}.csv"));
        write_csv(table, &path)?;
    }
    write_csv(&summary.stats.to_table(), &dir.join("_ensemble.csv"))?;

    let meta = RunMeta {
        config_hash: &summary.config_hash,
        master_seed: cfg.run.master_seed,
        code_version: env!("CARGO_PKG_VERSION"),
        realizations: cfg.run.realizations,
        completed: summary.trajectories.len(),
        failures: &summary.failures,
        diagnostics: &summary.diagnostics,
    };
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    std::fs::write(dir.join("_meta.json"), text).map_err(RunError::Meta)?;
    std::fs::write(dir.join("_config.json"), cfg.canonical_json()).map_err(RunError::Meta)?;
    Ok(())
}
