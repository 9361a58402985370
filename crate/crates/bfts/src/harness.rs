//! Experiment plans and the deterministic sweep runner.
//!
//! A plan is a flat JSON object describing a cross product of trainer
//! modes, regularizer grids, observation fractions, block-density pairs,
//! and seeds. The runner executes cells concurrently (capped by a worker
//! count), then canonicalizes row order before writing, so the output
//! bytes never depend on scheduling.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{generate_sbm, load_graph_dir, Graph, SbmConfig};
use crate::metrics::{
    avpr, delta_dp, delta_eqop, f1, pearson_corr, MetricsRecord, METRICS_CSV_HEADER,
};
use crate::missingness::{generate_mask, MissingnessKind, MissingnessSpec};
use crate::textio::write_file;
use crate::training::{predict, predicted_merged_hard, train, TrainConfig, TrainMode};

/// One block-density setting in a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPair {
    pub p_in: f64,
    pub p_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Base generator configuration; the seed and (when `density_grid` is
    /// nonempty) the edge probabilities are overridden per cell.
    pub sbm: SbmConfig,
    /// When set, every cell loads this graph directory instead of
    /// generating one; the seed then only drives masking and training.
    #[serde(default)]
    pub graph_dir: Option<PathBuf>,
    pub missingness: MissingnessKind,
    #[serde(default = "default_radius")]
    pub coverage_radius: usize,
    pub modes: Vec<TrainMode>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub observed_frac_grid: Vec<f64>,
    /// Optional sweep over block densities; empty means "use `sbm`'s".
    #[serde(default)]
    pub density_grid: Vec<DensityPair>,
    pub seeds: Vec<u64>,
    /// Trainer settings shared by every cell; mode, alpha, beta, and seed
    /// are overridden per cell.
    pub train: TrainConfig,
    /// Where sweep outputs land unless the caller overrides it.
    pub out_dir: PathBuf,
}

fn default_radius() -> usize {
    1
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.sbm.validate()?;
        for (name, grid_empty) in [
            ("modes", self.modes.is_empty()),
            ("alpha_grid", self.alpha_grid.is_empty()),
            ("beta_grid", self.beta_grid.is_empty()),
            ("observed_frac_grid", self.observed_frac_grid.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if grid_empty {
                return Err(Error::InvalidConfig(format!("{name} is empty")));
            }
        }
        for &f in &self.observed_frac_grid {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!("observed fraction {f}")));
            }
        }
        for d in &self.density_grid {
            if !(0.0..=1.0).contains(&d.p_in) || !(0.0..=1.0).contains(&d.p_out) {
                return Err(Error::InvalidConfig(format!(
                    "density pair ({}, {})",
                    d.p_in, d.p_out
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("plan serialization: {e}")))?;
        write_file(path, &(json + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::textio::read_to_string(path)?;
        let plan: ExperimentPlan = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        plan.validate()?;
        Ok(plan)
    }

    /// Cross product of all sweep axes, in canonical order.
    pub fn cells(&self) -> Vec<Cell> {
        let densities: Vec<DensityPair> = if self.density_grid.is_empty() {
            vec![DensityPair {
                p_in: self.sbm.p_in,
                p_out: self.sbm.p_out,
            }]
        } else {
            self.density_grid.clone()
        };
        let mut cells = Vec::new();
        for &mode in &self.modes {
            for &alpha in &self.alpha_grid {
                for &beta in &self.beta_grid {
                    for &frac in &self.observed_frac_grid {
                        for &density in &densities {
                            for &seed in &self.seeds {
                                cells.push(Cell {
                                    mode,
                                    alpha,
                                    beta,
                                    observed_frac: frac,
                                    density,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells.sort_by_key(Cell::sort_key);
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mode: TrainMode,
    pub alpha: f64,
    pub beta: f64,
    pub observed_frac: f64,
    pub density: DensityPair,
    pub seed: u64,
}

impl Cell {
    /// Canonical ordering key; all floats are non-negative, so their bit
    /// patterns order monotonically.
    fn sort_key(&self) -> (&'static str, u64, u64, u64, u64, u64, u64) {
        (
            self.mode.as_str(),
            self.alpha.to_bits(),
            self.beta.to_bits(),
            self.observed_frac.to_bits(),
            self.density.p_in.to_bits(),
            self.density.p_out.to_bits(),
            self.seed,
        )
    }

    pub fn describe(&self) -> String {
        format!(
            "{} alpha={} beta={} observed={} p_in={} p_out={} seed={}",
            self.mode.as_str(),
            self.alpha,
            self.beta,
            self.observed_frac,
            self.density.p_in,
            self.density.p_out,
            self.seed
        )
    }
}

/// Run one cell: generate or load the graph, apply the missingness
/// process, train, and evaluate on the test split. Fairness metrics are
/// computed against the ground-truth sensitive attribute; the imputed
/// values only influence training.
pub fn run_cell(plan: &ExperimentPlan, cell: &Cell) -> Result<MetricsRecord> {
    let g = base_graph(plan, cell)?;
    let k = ((g.n_nodes() as f64) * cell.observed_frac).round() as usize;
    let spec = MissingnessSpec {
        kind: plan.missingness,
        k_observed: k.min(g.n_nodes()),
        seed: cell.seed,
    };
    let mask = generate_mask(&g, &spec, plan.coverage_radius)?;
    let g = g.with_observed_mask(mask)?;

    let cfg = TrainConfig {
        mode: cell.mode,
        alpha: cell.alpha,
        beta: cell.beta,
        seed: cell.seed,
        ..plan.train.clone()
    };
    let report = train(&g, &cfg)?;
    evaluate_run(&g, &cfg, cell, &report.params)
}

fn base_graph(plan: &ExperimentPlan, cell: &Cell) -> Result<Graph> {
    match &plan.graph_dir {
        Some(dir) => load_graph_dir(dir),
        None => generate_sbm(&SbmConfig {
            p_in: cell.density.p_in,
            p_out: cell.density.p_out,
            seed: cell.seed,
            ..plan.sbm.clone()
        }),
    }
}

/// Metrics row for trained parameters on a masked graph.
pub fn evaluate_run(
    g: &Graph,
    cfg: &TrainConfig,
    cell: &Cell,
    params: &crate::models::PlayerParams,
) -> Result<MetricsRecord> {
    let pred = predict(params, g)?;
    let test = g.test_mask();
    let y: Vec<f64> = g.labels().iter().map(|&v| v as f64).collect();
    let s: Vec<f64> = g.sensitive().iter().map(|&v| v as f64).collect();
    let corr_imputed = match cfg.mode {
        TrainMode::Bfts | TrainMode::IndependentImputation => {
            let merged = predicted_merged_hard(params, g)?;
            let mv: Vec<f64> = merged.iter().map(|&v| v as f64).collect();
            match pearson_corr(&mv, &y) {
                Ok(c) => Some(c),
                Err(Error::Degenerate(_)) => Some(0.0),
                Err(e) => return Err(e),
            }
        }
        TrainMode::Vanilla | TrainMode::TwoPlayer => None,
    };
    Ok(MetricsRecord {
        mode: cfg.mode.as_str().to_string(),
        alpha: cell.alpha,
        beta: cell.beta,
        observed_frac: cell.observed_frac,
        seed: cell.seed,
        f1: f1(&pred.yhat_hard, g.labels(), test),
        avpr: avpr(&pred.yhat_soft, g.labels(), test)?,
        ddp: delta_dp(&pred.yhat_hard, g.sensitive(), test)?,
        deqop: delta_eqop(&pred.yhat_hard, g.sensitive(), g.labels(), test)?,
        corr_true: pearson_corr(&s, &y)?,
        corr_imputed,
        assortativity: g.label_assortativity()?,
    })
}

#[derive(Debug)]
pub struct SweepSummary {
    pub rows: Vec<(Cell, MetricsRecord)>,
    pub failures: Vec<(Cell, String)>,
}

/// Execute every cell of the plan with at most `workers` threads and
/// write `metrics.csv`, the two tradeoff files, and `failures.csv` under
/// `out_dir`. Reruns are byte-identical regardless of the worker count.
pub fn run_sweep(plan: &ExperimentPlan, workers: usize, out_dir: &Path) -> Result<SweepSummary> {
    plan.validate()?;
    let cells = plan.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<(Cell, std::result::Result<MetricsRecord, String>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| (*cell, run_cell(plan, cell).map_err(|e| e.to_string())))
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in results {
        match result {
            Ok(record) => rows.push((cell, record)),
            Err(message) => failures.push((cell, message)),
        }
    }
    rows.sort_by_key(|(c, _)| c.sort_key());
    failures.sort_by_key(|(c, _)| c.sort_key());

    let mut metrics = String::from(METRICS_CSV_HEADER);
    metrics.push('\n');
    for (_, record) in &rows {
        metrics.push_str(&record.to_csv_row());
        metrics.push('\n');
    }
    write_file(&out_dir.join("metrics.csv"), &metrics)?;

    write_file(
        &out_dir.join("tradeoff_dp.csv"),
        &tradeoff_csv(&rows, |r| 1.0 - r.ddp),
    )?;
    write_file(
        &out_dir.join("tradeoff_eqop.csv"),
        &tradeoff_csv(&rows, |r| 1.0 - r.deqop),
    )?;

    let mut fail_csv = String::from("cell,error\n");
    for (cell, message) in &failures {
        fail_csv.push_str(&format!(
            "{},{}\n",
            cell.describe(),
            message.replace(',', ";").replace('\n', " ")
        ));
    }
    write_file(&out_dir.join("failures.csv"), &fail_csv)?;

    Ok(SweepSummary { rows, failures })
}

/// Seed-averaged (utility, fairness) points per configuration, plot-ready.
fn tradeoff_csv(rows: &[(Cell, MetricsRecord)], fairness: impl Fn(&MetricsRecord) -> f64) -> String {
    fn group_key(c: &Cell) -> (TrainMode, u64, u64, u64, u64, u64) {
        (
            c.mode,
            c.alpha.to_bits(),
            c.beta.to_bits(),
            c.observed_frac.to_bits(),
            c.density.p_in.to_bits(),
            c.density.p_out.to_bits(),
        )
    }
    let mut out = String::from("mode,alpha,beta,observed_frac,p_in,p_out,f1,fairness\n");
    let mut i = 0;
    while i < rows.len() {
        let (cell, _) = &rows[i];
        let mut f1_total = 0.0;
        let mut fair_total = 0.0;
        let mut count = 0usize;
        let mut j = i;
        while j < rows.len() && group_key(&rows[j].0) == group_key(cell) {
            f1_total += rows[j].1.f1;
            fair_total += fairness(&rows[j].1);
            count += 1;
            j += 1;
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            cell.mode.as_str(),
            cell.alpha,
            cell.beta,
            cell.observed_frac,
            cell.density.p_in,
            cell.density.p_out,
            f1_total / count as f64,
            fair_total / count as f64,
        ));
        i = j;
    }
    out
}
