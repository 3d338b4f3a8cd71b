//! Experiment grid orchestration: run (dataset x regularizer x schedule x
//! seed) combinations, append one CSV row per run, resume interrupted
//! sweeps, aggregate into summary tables, and export plot-ready CSVs.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::dataset::{generate, DatasetKind};
use crate::diffusion::{sample, train, SamplerConfig, SigmaMode, TrainConfig};
use crate::error::{Error, Result};
use crate::points::PointBatch;
use crate::prdc::{build_manifold, membership_counts, prdc_grid};
use crate::regularizer::{RegularizerKind, RegularizerSpec};
use crate::rng::substream_seed;
use crate::schedule::ScheduleKind;

fn default_eval_k() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Neighborhood size for the sphere manifolds.
    #[serde(default = "default_eval_k")]
    pub k: usize,
    /// Held-out real-set size; defaults to the dataset's own n_samples.
    #[serde(default)]
    pub n_real: Option<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            k: default_eval_k(),
            n_real: None,
        }
    }
}

/// Training hyperparameters shared across every run of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_ema")]
    pub ema_decay: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_embed")]
    pub embed_dim: usize,
}

fn d_batch() -> usize {
    256
}
fn d_steps() -> usize {
    30000
}
fn d_lr() -> f64 {
    2e-4
}
fn d_ema() -> f64 {
    0.9999
}
fn d_clip() -> f64 {
    1.0
}
fn d_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}
fn d_embed() -> usize {
    64
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: d_batch(),
            steps: d_steps(),
            lr: d_lr(),
            ema_decay: d_ema(),
            clip_norm: d_clip(),
            dropout: 0.0,
            hidden: d_hidden(),
            embed_dim: d_embed(),
        }
    }
}

fn default_sample_n() -> usize {
    10000
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    #[serde(default = "default_sample_n")]
    pub n_samples: usize,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
    #[serde(default = "default_true")]
    pub use_ema: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            n_samples: default_sample_n(),
            sigma_mode: SigmaMode::Posterior,
            use_ema: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub datasets: Vec<DatasetKind>,
    pub regularizers: Vec<RegularizerSpec>,
    pub schedules: Vec<ScheduleKind>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty()
            || self.regularizers.is_empty()
            || self.schedules.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::InvalidConfig(
                "grid needs at least one dataset, regularizer, schedule, and seed".into(),
            ));
        }
        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(*s) {
                return Err(Error::InvalidConfig(format!("duplicate seed {s}")));
            }
        }
        let mut ds = HashSet::new();
        for d in &self.datasets {
            d.validate()?;
            if !ds.insert(d.family.name()) {
                return Err(Error::InvalidConfig(format!(
                    "dataset family {} appears twice",
                    d.family.name()
                )));
            }
        }
        let mut sched = HashSet::new();
        for s in &self.schedules {
            if !sched.insert(s.family.name()) {
                return Err(Error::InvalidConfig(format!(
                    "schedule family {} appears twice",
                    s.family.name()
                )));
            }
        }
        for r in &self.regularizers {
            r.validate()?;
        }
        let labels = regularizer_labels(&self.regularizers);
        let mut rl = HashSet::new();
        for l in &labels {
            if !rl.insert(l.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "regularizer label {l} appears twice (same kind and lambda)"
                )));
            }
        }
        if self.eval.k == 0 {
            return Err(Error::InvalidConfig("eval.k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stable per-spec labels. Plain kind names unless a kind repeats (a lambda
/// sweep), in which case every instance of that kind is suffixed with its
/// lambda.
pub fn regularizer_labels(specs: &[RegularizerSpec]) -> Vec<String> {
    let mut kind_counts = std::collections::HashMap::new();
    for s in specs {
        *kind_counts.entry(s.kind.name()).or_insert(0usize) += 1;
    }
    specs
        .iter()
        .map(|s| {
            let name = s.kind.name();
            if kind_counts[name] > 1 && s.kind != RegularizerKind::None {
                format!("{}-l{}", name, s.lambda)
            } else {
                name.to_string()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub dataset: String,
    pub regularizer: String,
    pub schedule: String,
    pub seed: u64,
    pub status: RunStatus,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub density: Option<f64>,
    pub coverage: Option<f64>,
    pub wall_time_s: f64,
    pub final_simple_loss: Option<f64>,
    pub final_penalty: Option<f64>,
    pub error: String,
}

pub const RESULTS_HEADER: &str = "run_id,dataset,regularizer,schedule,seed,status,precision,recall,density,coverage,wall_time_s,final_simple_loss,final_penalty,error";

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Splits one CSV line, honoring double-quoted fields.
fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        if in_quotes {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    cur.push('"');
                    chars.next();
                } else {
                    in_quotes = false;
                }
            } else {
                cur.push(c);
            }
        } else if c == '"' {
            in_quotes = true;
        } else if c == ',' {
            fields.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    fields.push(cur);
    fields
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn parse_opt(s: &str, path: &Path, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::MalformedCsv {
        path: path.display().to_string(),
        line,
        msg: format!("bad float {s:?}"),
    })
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3},{},{},{}",
            csv_escape(&self.run_id),
            csv_escape(&self.dataset),
            csv_escape(&self.regularizer),
            csv_escape(&self.schedule),
            self.seed,
            self.status.as_str(),
            opt_field(self.precision),
            opt_field(self.recall),
            opt_field(self.density),
            opt_field(self.coverage),
            self.wall_time_s,
            opt_field(self.final_simple_loss),
            opt_field(self.final_penalty),
            csv_escape(&self.error),
        )
    }

    fn from_fields(fields: &[String], path: &Path, line: usize) -> Result<ResultRow> {
        let err = |msg: String| Error::MalformedCsv {
            path: path.display().to_string(),
            line,
            msg,
        };
        if fields.len() != 14 {
            return Err(err(format!("expected 14 fields, got {}", fields.len())));
        }
        let status = match fields[5].as_str() {
            "ok" => RunStatus::Ok,
            "error" => RunStatus::Failed,
            other => return Err(err(format!("bad status {other:?}"))),
        };
        Ok(ResultRow {
            run_id: fields[0].clone(),
            dataset: fields[1].clone(),
            regularizer: fields[2].clone(),
            schedule: fields[3].clone(),
            seed: fields[4]
                .parse()
                .map_err(|_| err(format!("bad seed {:?}", fields[4])))?,
            status,
            precision: parse_opt(&fields[6], path, line)?,
            recall: parse_opt(&fields[7], path, line)?,
            density: parse_opt(&fields[8], path, line)?,
            coverage: parse_opt(&fields[9], path, line)?,
            wall_time_s: fields[10]
                .parse()
                .map_err(|_| err(format!("bad wall time {:?}", fields[10])))?,
            final_simple_loss: parse_opt(&fields[11], path, line)?,
            final_penalty: parse_opt(&fields[12], path, line)?,
            error: fields[13].clone(),
        })
    }
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != RESULTS_HEADER {
                return Err(Error::MalformedCsv {
                    path: path.display().to_string(),
                    line: 1,
                    msg: "unexpected header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        rows.push(ResultRow::from_fields(
            &split_csv_line(line),
            path,
            i + 1,
        )?);
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
struct Combo {
    dataset: DatasetKind,
    dataset_label: String,
    regularizer: RegularizerSpec,
    regularizer_label: String,
    schedule: ScheduleKind,
    schedule_label: String,
    seed: u64,
}

impl Combo {
    fn run_id(&self) -> String {
        format!(
            "{}__{}__{}__s{}",
            self.dataset_label, self.regularizer_label, self.schedule_label, self.seed
        )
    }
}

fn combos(grid: &ExperimentGrid) -> Vec<Combo> {
    let reg_labels = regularizer_labels(&grid.regularizers);
    let mut out = Vec::new();
    for d in &grid.datasets {
        for (r, rl) in grid.regularizers.iter().zip(&reg_labels) {
            for s in &grid.schedules {
                for &seed in &grid.seeds {
                    out.push(Combo {
                        dataset: *d,
                        dataset_label: d.family.name().to_string(),
                        regularizer: *r,
                        regularizer_label: rl.clone(),
                        schedule: *s,
                        schedule_label: s.family.name().to_string(),
                        seed,
                    });
                }
            }
        }
    }
    out
}

/// The held-out real set used for evaluation: same family and noise as the
/// training data but an independent seed derived from the dataset seed.
pub fn eval_real_kind(dataset: &DatasetKind, eval: &EvalSettings) -> DatasetKind {
    DatasetKind {
        n_samples: eval.n_real.unwrap_or(dataset.n_samples),
        seed: substream_seed(dataset.seed, "eval-real"),
        ..*dataset
    }
}

fn run_one(grid: &ExperimentGrid, combo: &Combo, artifacts: &Path) -> ResultRow {
    let run_id = combo.run_id();
    let started = Instant::now();
    let mut row = ResultRow {
        run_id: run_id.clone(),
        dataset: combo.dataset_label.clone(),
        regularizer: combo.regularizer_label.clone(),
        schedule: combo.schedule_label.clone(),
        seed: combo.seed,
        status: RunStatus::Failed,
        precision: None,
        recall: None,
        density: None,
        coverage: None,
        wall_time_s: 0.0,
        final_simple_loss: None,
        final_penalty: None,
        error: String::new(),
    };

    match run_one_inner(grid, combo, artifacts, &run_id) {
        Ok((report, simple, penalty)) => {
            row.status = RunStatus::Ok;
            row.precision = Some(report.precision);
            row.recall = Some(report.recall);
            row.density = Some(report.density);
            row.coverage = Some(report.coverage);
            row.final_simple_loss = Some(simple);
            row.final_penalty = Some(penalty);
        }
        Err(e) => {
            row.error = e.to_string();
        }
    }
    row.wall_time_s = started.elapsed().as_secs_f64();
    row
}

fn run_one_inner(
    grid: &ExperimentGrid,
    combo: &Combo,
    artifacts: &Path,
    run_id: &str,
) -> Result<(crate::prdc::PrdcReport, f64, f64)> {
    let t = &grid.train;
    let cfg = TrainConfig {
        dataset: combo.dataset,
        schedule: combo.schedule,
        regularizer: combo.regularizer,
        batch_size: t.batch_size,
        steps: t.steps,
        lr: t.lr,
        ema_decay: t.ema_decay,
        clip_norm: t.clip_norm,
        dropout: t.dropout,
        hidden: t.hidden.clone(),
        embed_dim: t.embed_dim,
        seed: combo.seed,
    };
    let out = train(&cfg)?;

    let run_dir = artifacts.join("runs").join(run_id);
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let ckpt_path = run_dir.join("ckpt.sdf");
    save_checkpoint(&ckpt_path, &out.net, &out.ema, &out.optimizer)?;
    let log_path = run_dir.join("train_log.csv");
    fs::write(&log_path, out.log_csv()).map_err(|e| Error::io(&log_path, e))?;

    let schedule = crate::schedule::build_schedule(&combo.schedule)?;
    let sampler_cfg = SamplerConfig {
        n_samples: grid.sampler.n_samples,
        sigma_mode: grid.sampler.sigma_mode,
        seed: combo.seed,
        use_ema: grid.sampler.use_ema,
    };
    let gen = sample(&out.net, Some(&out.ema), &schedule, &sampler_cfg)?;
    gen.save_csv(&run_dir.join("gen.csv"))?;

    let real = generate(&eval_real_kind(&combo.dataset, &grid.eval))?;
    let report = prdc_grid(real.as_array(), gen.as_array(), grid.eval.k)?;

    let last = out.log.last().expect("training always logs");
    Ok((report, last.simple_loss, last.penalty))
}

/// Runs every grid combination whose run_id is not already recorded in
/// `out_csv`, appending a row per finished run (flushed immediately, so an
/// interrupted sweep resumes where it stopped). Returns all rows of the
/// requested grid in canonical order. Individual run failures become
/// status=error rows rather than aborting the sweep.
pub fn run_grid(
    grid: &ExperimentGrid,
    out_csv: &Path,
    artifacts: &Path,
    threads: usize,
) -> Result<Vec<ResultRow>> {
    grid.validate()?;
    fs::create_dir_all(artifacts).map_err(|e| Error::io(artifacts, e))?;

    // Persist each dataset's held-out real set once, for later plot export.
    let real_dir = artifacts.join("real");
    fs::create_dir_all(&real_dir).map_err(|e| Error::io(&real_dir, e))?;
    for d in &grid.datasets {
        let path = real_dir.join(format!("{}.csv", d.family.name()));
        if !path.exists() {
            generate(&eval_real_kind(d, &grid.eval))?.save_csv(&path)?;
        }
    }

    let existing = if out_csv.exists() {
        load_results(out_csv)?
    } else {
        Vec::new()
    };
    let done: HashSet<&str> = existing.iter().map(|r| r.run_id.as_str()).collect();

    let all = combos(grid);
    let pending: Vec<&Combo> = all.iter().filter(|c| !done.contains(c.run_id().as_str())).collect();

    let mut new_rows: Vec<ResultRow> = Vec::new();
    if !pending.is_empty() {
        let write_header = !out_csv.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out_csv)
            .map_err(|e| Error::io(out_csv, e))?;
        let sink = Mutex::new(file);
        if write_header {
            let mut f = sink.lock().unwrap();
            writeln!(f, "{RESULTS_HEADER}").map_err(|e| Error::io(out_csv, e))?;
        }

        let emit = |row: ResultRow| -> Result<ResultRow> {
            let mut f = sink.lock().unwrap();
            writeln!(f, "{}", row.to_csv_line()).map_err(|e| Error::io(out_csv, e))?;
            f.flush().map_err(|e| Error::io(out_csv, e))?;
            Ok(row)
        };

        if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            new_rows = pool.install(|| {
                use rayon::prelude::*;
                pending
                    .par_iter()
                    .map(|combo| emit(run_one(grid, combo, artifacts)))
                    .collect::<Result<Vec<_>>>()
            })?;
        } else {
            for combo in &pending {
                new_rows.push(emit(run_one(grid, combo, artifacts))?);
            }
        }
    }

    // Canonical ordering for the returned set: grid order.
    let mut by_id: std::collections::HashMap<&str, &ResultRow> = std::collections::HashMap::new();
    for r in existing.iter().chain(new_rows.iter()) {
        by_id.insert(r.run_id.as_str(), r);
    }
    let mut out = Vec::with_capacity(all.len());
    for c in &all {
        let id = c.run_id();
        match by_id.get(id.as_str()) {
            Some(r) => out.push((*r).clone()),
            None => {
                return Err(Error::MissingArtifact(format!(
                    "run {id} produced no result row"
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// Percent change of the mean against the no-regularizer baseline mean;
    /// None on baseline rows and when the baseline mean is zero.
    pub pct_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryCell {
    pub dataset: String,
    pub schedule: String,
    pub regularizer: String,
    pub n_runs: usize,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub density: MetricSummary,
    pub coverage: MetricSummary,
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn percent_change(value: f64, baseline: f64) -> Option<f64> {
    if baseline == 0.0 {
        None
    } else {
        Some(100.0 * (value - baseline) / baseline)
    }
}

/// Aggregates ok rows over seeds into per-(dataset, schedule, regularizer)
/// mean +/- std with percent change against that dataset/schedule's
/// no-regularizer baseline. A missing baseline is an error whenever a group
/// has regularized rows to compare.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryCell>> {
    use std::collections::BTreeMap;
    type Key = (String, String, String);
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        if r.status == RunStatus::Ok {
            groups
                .entry((r.dataset.clone(), r.schedule.clone(), r.regularizer.clone()))
                .or_default()
                .push(r);
        }
    }

    let metric =
        |rows: &[&ResultRow], f: fn(&ResultRow) -> Option<f64>| -> (f64, f64) {
            let vals: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            mean_std(&vals)
        };

    let mut baselines: std::collections::HashMap<(String, String), [f64; 4]> =
        std::collections::HashMap::new();
    for ((ds, sched, reg), rws) in &groups {
        if reg == "none" {
            baselines.insert(
                (ds.clone(), sched.clone()),
                [
                    metric(rws, |r| r.precision).0,
                    metric(rws, |r| r.recall).0,
                    metric(rws, |r| r.density).0,
                    metric(rws, |r| r.coverage).0,
                ],
            );
        }
    }

    let mut cells = Vec::new();
    for ((ds, sched, reg), rws) in &groups {
        let base = baselines.get(&(ds.clone(), sched.clone()));
        if reg != "none" && base.is_none() {
            return Err(Error::MissingBaseline {
                dataset: ds.clone(),
                schedule: sched.clone(),
            });
        }
        let build = |idx: usize, f: fn(&ResultRow) -> Option<f64>| -> MetricSummary {
            let (mean, std) = metric(rws, f);
            let pct = if reg == "none" {
                None
            } else {
                base.and_then(|b| percent_change(mean, b[idx]))
            };
            MetricSummary {
                mean,
                std,
                pct_vs_baseline: pct,
            }
        };
        cells.push(SummaryCell {
            dataset: ds.clone(),
            schedule: sched.clone(),
            regularizer: reg.clone(),
            n_runs: rws.len(),
            precision: build(0, |r| r.precision),
            recall: build(1, |r| r.recall),
            density: build(2, |r| r.density),
            coverage: build(3, |r| r.coverage),
        });
    }
    Ok(cells)
}

pub fn summary_csv(cells: &[SummaryCell]) -> String {
    let mut out = String::from(
        "dataset,schedule,regularizer,n_runs,\
         precision_mean,precision_std,precision_pct,\
         recall_mean,recall_std,recall_pct,\
         density_mean,density_std,density_pct,\
         coverage_mean,coverage_std,coverage_pct\n",
    );
    let pct = |p: Option<f64>| p.map(|v| format!("{v:.3}")).unwrap_or_default();
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{},{:.4},{:.4},{},{:.4},{:.4},{},{:.4},{:.4},{}\n",
            c.dataset,
            c.schedule,
            c.regularizer,
            c.n_runs,
            c.precision.mean,
            c.precision.std,
            pct(c.precision.pct_vs_baseline),
            c.recall.mean,
            c.recall.std,
            pct(c.recall.pct_vs_baseline),
            c.density.mean,
            c.density.std,
            pct(c.density.pct_vs_baseline),
            c.coverage.mean,
            c.coverage.std,
            pct(c.coverage.pct_vs_baseline),
        ));
    }
    out
}

/// Human-readable summary table.
pub fn summary_table(cells: &[SummaryCell]) -> String {
    let mut out = String::new();
    let fmt = |m: &MetricSummary| -> String {
        match m.pct_vs_baseline {
            Some(p) => format!("{:.4}±{:.4} ({:+.2}%)", m.mean, m.std, p),
            None => format!("{:.4}±{:.4}", m.mean, m.std),
        }
    };
    for c in cells {
        out.push_str(&format!(
            "{:<16} {:<10} {:<16} n={:<2} P {}  R {}  D {}  C {}\n",
            c.dataset,
            c.schedule,
            c.regularizer,
            c.n_runs,
            fmt(&c.precision),
            fmt(&c.recall),
            fmt(&c.density),
            fmt(&c.coverage),
        ));
    }
    out
}

fn write_points_with(
    path: &Path,
    pts: &Array2<f64>,
    col_name: &str,
    col: impl Fn(usize) -> String,
) -> Result<()> {
    let mut out = String::from("x0,x1,");
    out.push_str(col_name);
    out.push('\n');
    for (i, row) in pts.rows().into_iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", row[0], row[1], col(i)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// For each dataset: the real points with their k-NN radii, plus each
/// regularizer's generated points (first schedule, first seed) with
/// per-point counts of enclosing real spheres. Returns the written paths.
pub fn emit_plot_data(
    grid: &ExperimentGrid,
    artifacts: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    grid.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let reg_labels = regularizer_labels(&grid.regularizers);
    let schedule_label = grid.schedules[0].family.name();
    let seed = grid.seeds[0];

    let mut written = Vec::new();
    for d in &grid.datasets {
        let ds_label = d.family.name();
        let real_path = artifacts.join("real").join(format!("{ds_label}.csv"));
        if !real_path.exists() {
            return Err(Error::MissingArtifact(format!(
                "real set {}",
                real_path.display()
            )));
        }
        let real = PointBatch::load_csv(&real_path)?;
        let manifold = build_manifold(real.as_array(), grid.eval.k)?;

        let out_real = out_dir.join(format!("{ds_label}_real.csv"));
        let radii = manifold.radii();
        write_points_with(&out_real, real.as_array(), "knn_radius", |i| {
            format!("{}", radii[i])
        })?;
        written.push(out_real);

        for label in &reg_labels {
            let run_id = format!("{ds_label}__{label}__{schedule_label}__s{seed}");
            let gen_path = artifacts.join("runs").join(&run_id).join("gen.csv");
            if !gen_path.exists() {
                return Err(Error::MissingArtifact(format!(
                    "generated set {}",
                    gen_path.display()
                )));
            }
            let gen = PointBatch::load_csv(&gen_path)?;
            let counts = membership_counts(&manifold, gen.as_array())?;
            let out_gen = out_dir.join(format!("{ds_label}_{label}.csv"));
            write_points_with(&out_gen, gen.as_array(), "membership", |i| {
                format!("{}", counts[i])
            })?;
            written.push(out_gen);
        }
    }
    Ok(written)
}
