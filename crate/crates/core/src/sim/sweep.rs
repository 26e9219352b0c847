//! Sensitivity sweeps over one configuration axis.

use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::RunConfig;
use super::log::{format_float, Metrics};
use super::run::run_simulation;
use crate::error::{Error, Result};
use crate::frameworks::FrameworkKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    /// Multiplier on the base sensor noise.
    Noise,
    /// Communication delay in milliseconds.
    Delay,
    /// Relative model error `e`; both model ratios become `1 + e`.
    ModelError,
    /// Planning horizon in control intervals.
    Horizon,
    /// Multiplier on the base process disturbance.
    Disturbance,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        Self::Noise,
        Self::Delay,
        Self::ModelError,
        Self::Horizon,
        Self::Disturbance,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::Delay => "delay",
            Self::ModelError => "model_error",
            Self::Horizon => "horizon",
            Self::Disturbance => "disturbance",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| Error::UnknownId {
                kind: "sweep axis",
                id: id.to_string(),
                registered: Self::ALL
                    .iter()
                    .map(|k| k.id())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    /// Inclusive validity range of the axis values.
    pub fn range(self) -> (f64, f64) {
        match self {
            Self::Noise | Self::Disturbance => (0.0, 10.0),
            Self::Delay => (10.0, 500.0),
            Self::ModelError => (0.0, 1.0),
            Self::Horizon => (1.0, 30.0),
        }
    }

    pub fn check(self, value: f64) -> Result<()> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&value) {
            return Err(Error::InvalidModel(format!(
                "{} value {value} outside [{lo}, {hi}]",
                self.id()
            )));
        }
        if self == Self::Horizon && value.fract() != 0.0 {
            return Err(Error::InvalidModel(format!(
                "horizon value {value} is not an integer"
            )));
        }
        Ok(())
    }

    /// `base` moved to `value` along this axis.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        self.check(value)?;
        let mut cfg = base.clone();
        match self {
            Self::Noise => cfg.sensor_noise = base.sensor_noise * value,
            Self::Disturbance => cfg.disturbance = base.disturbance * value,
            Self::Delay => cfg.comm_ms = value,
            Self::ModelError => {
                cfg.accel_ratio = 1.0 + value;
                cfg.wheelbase_ratio = 1.0 + value;
            }
            Self::Horizon => cfg.horizon = value as usize,
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Seed(u64),
    Mean,
    Std,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Seed(s) => write!(f, "{s}"),
            Self::Mean => f.write_str("mean"),
            Self::Std => f.write_str("std"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub task: String,
    pub framework: FrameworkKind,
    pub axis: SweepAxis,
    pub value: f64,
    pub kind: RowKind,
    /// `None` when the run failed.
    pub metrics: Option<Metrics>,
    /// 0/1 for seed rows, number of failed seeds for aggregates.
    pub failed: usize,
}

pub const CSV_HEADER: &str =
    "task,framework,axis,value,seed,avg_regret,log_loss,avg_distance,avg_deviation,failed";

fn cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

impl SweepRow {
    pub fn csv(&self) -> String {
        let m = self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.task,
            self.framework,
            self.axis,
            format_float(self.value),
            self.kind,
            cell(m.map(|m| m.avg_regret)),
            cell(m.map(|m| m.log_loss)),
            cell(m.and_then(|m| m.avg_distance)),
            cell(m.and_then(|m| m.avg_deviation)),
            self.failed
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn data_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Seed(_)))
    }

    pub fn mean(&self, framework: FrameworkKind, value: f64) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.kind == RowKind::Mean && r.framework == framework && r.value == value)
            .and_then(|r| r.metrics.as_ref())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{}", r.csv())?;
        }
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(ms: &[Metrics]) -> Option<(Metrics, Metrics)> {
    if ms.is_empty() {
        return None;
    }
    let stat = |f: &dyn Fn(&Metrics) -> f64| mean_std(&ms.iter().map(f).collect::<Vec<_>>());
    let opt = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        let v: Option<Vec<f64>> = ms.iter().map(f).collect();
        v.map(|v| mean_std(&v))
    };
    let r = stat(&|m| m.avg_regret);
    let l = stat(&|m| m.log_loss);
    let d = opt(&|m| m.avg_distance);
    let e = opt(&|m| m.avg_deviation);
    Some((
        Metrics {
            avg_regret: r.0,
            log_loss: l.0,
            avg_distance: d.map(|v| v.0),
            avg_deviation: e.map(|v| v.0),
        },
        Metrics {
            avg_regret: r.1,
            log_loss: l.1,
            avg_distance: d.map(|v| v.1),
            avg_deviation: e.map(|v| v.1),
        },
    ))
}

/// Runs every (value, framework, seed) cell, seeds `1..=seeds`. Failed runs
/// become rows with the failure flag set; the mean/std rows that follow each
/// (value, framework) group cover the successful seeds.
pub fn run_sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    frameworks: &[FrameworkKind],
    seeds: u64,
) -> Result<SweepTable> {
    let mut cells = Vec::new();
    for &value in values {
        let cfg = axis.apply(base, value)?;
        for &framework in frameworks {
            for seed in 1..=seeds {
                cells.push(RunConfig {
                    framework,
                    seed,
                    ..cfg.clone()
                });
            }
        }
    }
    let results = run_cells(&cells);

    let mut table = SweepTable::default();
    let mut group = Vec::new();
    for (i, (cfg, result)) in cells.iter().zip(results).enumerate() {
        let value = values[i / (frameworks.len() * seeds as usize)];
        let metrics = match result {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!(
                    "{} {} {}={} seed {} failed: {e}",
                    cfg.task,
                    cfg.framework,
                    axis,
                    value,
                    cfg.seed
                );
                None
            }
        };
        let row = SweepRow {
            task: cfg.task.id().to_string(),
            framework: cfg.framework,
            axis,
            value,
            kind: RowKind::Seed(cfg.seed),
            metrics,
            failed: metrics.is_none() as usize,
        };
        group.push(row.clone());
        table.rows.push(row.clone());
        if cfg.seed == seeds {
            let ok: Vec<Metrics> = group.iter().filter_map(|r| r.metrics).collect();
            let failed = group.len() - ok.len();
            let agg = aggregate(&ok);
            for (kind, m) in [
                (RowKind::Mean, agg.map(|a| a.0)),
                (RowKind::Std, agg.map(|a| a.1)),
            ] {
                table.rows.push(SweepRow {
                    kind,
                    metrics: m,
                    failed,
                    ..row.clone()
                });
            }
            group.clear();
        }
    }
    Ok(table)
}

fn run_cells(cells: &[RunConfig]) -> Vec<Result<Metrics>> {
    par_map(cells, |c| run_simulation(c).map(|log| log.metrics))
}

/// Maps independent jobs over all available cores; results keep the
/// input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("job results lock")[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .expect("job results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}
