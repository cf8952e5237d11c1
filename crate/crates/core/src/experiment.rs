//! Grid search, multi-seed retraining, and soft-vs-hard comparison reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::stats::{paired_t_test, MeanStd, PairedTTest};
use crate::trainer::{train_prepared, LabelMode, PreparedData, Scheduler, TrainConfig, TrainResult};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SEEDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpace {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub epoch_caps: Vec<usize>,
    pub weight_decays: Vec<f64>,
    pub schedulers: Vec<Scheduler>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-3, 1e-4, 1e-5],
            batch_sizes: vec![8, 16, 32],
            epoch_caps: vec![10, 15, 20],
            weight_decays: vec![0.0, 1e-4],
            schedulers: vec![Scheduler::None, Scheduler::Plateau],
        }
    }
}

impl GridSpace {
    pub fn singleton(config: &TrainConfig) -> Self {
        Self {
            learning_rates: vec![config.learning_rate],
            batch_sizes: vec![config.batch_size],
            epoch_caps: vec![config.max_epochs],
            weight_decays: vec![config.weight_decay],
            schedulers: vec![config.scheduler],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty()
            || self.batch_sizes.is_empty()
            || self.epoch_caps.is_empty()
            || self.weight_decays.is_empty()
            || self.schedulers.is_empty()
        {
            return Err(Error::invalid("every grid dimension needs at least one value"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len()
            * self.batch_sizes.len()
            * self.epoch_caps.len()
            * self.weight_decays.len()
            * self.schedulers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product in enumeration order (learning rate outermost,
    /// scheduler innermost), each point filled into a copy of `base`.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &lr in &self.learning_rates {
            for &bs in &self.batch_sizes {
                for &ep in &self.epoch_caps {
                    for &wd in &self.weight_decays {
                        for &sched in &self.schedulers {
                            out.push(TrainConfig {
                                learning_rate: lr,
                                batch_size: bs,
                                max_epochs: ep,
                                weight_decay: wd,
                                scheduler: sched,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: TrainConfig,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub label_mode: LabelMode,
    pub entries: Vec<GridEntry>,
    pub best_index: usize,
}

impl GridSearchResult {
    pub fn best_config(&self) -> &TrainConfig {
        &self.entries[self.best_index].config
    }

    pub fn write_ledger_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            index: usize,
            label_mode: LabelMode,
            learning_rate: f64,
            batch_size: usize,
            max_epochs: usize,
            weight_decay: f64,
            scheduler: Scheduler,
            seed: u64,
            best_val_loss: f64,
            best_epoch: usize,
            stopped_epoch: usize,
            selected: bool,
        }
        let mut out = csv::Writer::from_writer(w);
        for (index, e) in self.entries.iter().enumerate() {
            out.serialize(Row {
                index,
                label_mode: e.config.label_mode,
                learning_rate: e.config.learning_rate,
                batch_size: e.config.batch_size,
                max_epochs: e.config.max_epochs,
                weight_decay: e.config.weight_decay,
                scheduler: e.config.scheduler,
                seed: e.config.seed,
                best_val_loss: e.best_val_loss,
                best_epoch: e.best_epoch,
                stopped_epoch: e.stopped_epoch,
                selected: index == self.best_index,
            })?;
        }
        out.flush().map_err(|e| Error::io("<grid ledger>", e))?;
        Ok(())
    }
}

/// Test metrics for one label mode across seeds, aligned by seed position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRuns {
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub mean_kl: Vec<f64>,
    pub entropy_correlation: Vec<Option<f64>>,
    pub best_epoch: Vec<usize>,
    pub stopped_epoch: Vec<usize>,
    /// Validation loss per epoch, per seed.
    pub val_loss_curves: Vec<Vec<f64>>,
}

impl SeedRuns {
    fn from_results(config: &TrainConfig, seeds: Vec<u64>, results: &[TrainResult]) -> Result<Self> {
        let mut runs = SeedRuns {
            config: config.clone(),
            seeds,
            accuracy: Vec::with_capacity(results.len()),
            mean_kl: Vec::with_capacity(results.len()),
            entropy_correlation: Vec::with_capacity(results.len()),
            best_epoch: Vec::with_capacity(results.len()),
            stopped_epoch: Vec::with_capacity(results.len()),
            val_loss_curves: Vec::with_capacity(results.len()),
        };
        for r in results {
            let test = r.test.as_ref().ok_or(Error::Empty("test split"))?;
            runs.accuracy.push(test.accuracy);
            runs.mean_kl.push(test.mean_kl);
            runs.entropy_correlation.push(test.entropy_correlation);
            runs.best_epoch.push(r.best_epoch);
            runs.stopped_epoch.push(r.stopped_epoch);
            runs.val_loss_curves.push(r.epochs.iter().map(|e| e.val.loss).collect());
        }
        Ok(runs)
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn accuracy_summary(&self) -> MeanStd {
        MeanStd::of(&self.accuracy)
    }

    pub fn kl_summary(&self) -> MeanStd {
        MeanStd::of(&self.mean_kl)
    }

    /// Over the seeds where the correlation is defined; `None` if it never is.
    pub fn correlation_summary(&self) -> Option<MeanStd> {
        let defined: Vec<f64> = self.entropy_correlation.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| MeanStd::of(&defined))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweepResult {
    pub dataset: String,
    pub n_seeds: usize,
    pub soft: SeedRuns,
    pub hard: SeedRuns,
}

/// One row per dataset, label mode and seed.
pub fn write_per_seed_csv<W: std::io::Write>(sweeps: &[SeedSweepResult], w: W) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        dataset: &'a str,
        label_mode: LabelMode,
        seed: u64,
        accuracy: f64,
        mean_kl: f64,
        entropy_correlation: Option<f64>,
        best_epoch: usize,
        stopped_epoch: usize,
    }
    let mut out = csv::Writer::from_writer(w);
    for s in sweeps {
        for (mode, runs) in [(LabelMode::Soft, &s.soft), (LabelMode::Hard, &s.hard)] {
            for i in 0..runs.len() {
                out.serialize(Row {
                    dataset: &s.dataset,
                    label_mode: mode,
                    seed: runs.seeds[i],
                    accuracy: runs.accuracy[i],
                    mean_kl: runs.mean_kl[i],
                    entropy_correlation: runs.entropy_correlation[i],
                    best_epoch: runs.best_epoch[i],
                    stopped_epoch: runs.stopped_epoch[i],
                })?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<per-seed csv>", e))?;
    Ok(())
}

/// Everything `compare` produces for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub grid_soft: GridSearchResult,
    pub grid_hard: GridSearchResult,
    pub sweep: SeedSweepResult,
}

/// Runs training jobs for one dataset and split, with bounded parallelism.
///
/// Results never depend on `jobs`: every run is sequential internally and
/// outputs are collected in job order.
pub struct Harness {
    name: String,
    data: PreparedData,
    splits: SplitIndices,
    base: TrainConfig,
    jobs: usize,
}

impl Harness {
    pub fn new(dataset: &Dataset, splits: SplitIndices, base: TrainConfig) -> Result<Self> {
        base.validate()?;
        splits.validate(dataset.len())?;
        Ok(Self {
            name: dataset.name().to_string(),
            data: PreparedData::new(dataset)?,
            splits,
            base,
            jobs: 1,
        })
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn base_config(&self) -> &TrainConfig {
        &self.base
    }

    pub fn run_all(&self, configs: &[TrainConfig]) -> Result<Vec<TrainResult>> {
        let job = |c: &TrainConfig| train_prepared(&self.data, &self.splits, c);
        if self.jobs == 1 {
            return configs.iter().map(job).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        pool.install(|| configs.par_iter().map(job).collect())
    }

    /// Trains every grid point once with the base seed and picks the lowest
    /// best-validation loss; ties keep the earlier point.
    pub fn grid_search(&self, space: &GridSpace, mode: LabelMode) -> Result<GridSearchResult> {
        space.validate()?;
        let base = TrainConfig {
            label_mode: mode,
            ..self.base.clone()
        };
        let configs = space.configs(&base);
        let results = self.run_all(&configs)?;
        let entries: Vec<GridEntry> = configs
            .into_iter()
            .zip(&results)
            .map(|(config, r)| GridEntry {
                config,
                best_val_loss: r.best_val_loss,
                best_epoch: r.best_epoch,
                stopped_epoch: r.stopped_epoch,
            })
            .collect();
        let mut best_index = 0;
        for (i, e) in entries.iter().enumerate() {
            if e.best_val_loss < entries[best_index].best_val_loss {
                best_index = i;
            }
        }
        Ok(GridSearchResult {
            label_mode: mode,
            entries,
            best_index,
        })
    }

    /// Retrains `config` with seeds `base_seed .. base_seed + n_seeds`.
    pub fn multi_seed_run(&self, config: &TrainConfig, n_seeds: usize, base_seed: u64) -> Result<SeedRuns> {
        if n_seeds < 2 {
            return Err(Error::invalid("multi-seed runs need at least two seeds"));
        }
        let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| base_seed + i).collect();
        let configs: Vec<TrainConfig> = seeds
            .iter()
            .map(|&seed| TrainConfig { seed, ..config.clone() })
            .collect();
        let results = self.run_all(&configs)?;
        SeedRuns::from_results(config, seeds, &results)
    }

    /// Soft and hard sweeps of the given configs over the same seed list.
    pub fn sweep(&self, soft: &TrainConfig, hard: &TrainConfig, n_seeds: usize, base_seed: u64) -> Result<SeedSweepResult> {
        let soft = TrainConfig { label_mode: LabelMode::Soft, ..soft.clone() };
        let hard = TrainConfig { label_mode: LabelMode::Hard, ..hard.clone() };
        Ok(SeedSweepResult {
            dataset: self.name.clone(),
            n_seeds,
            soft: self.multi_seed_run(&soft, n_seeds, base_seed)?,
            hard: self.multi_seed_run(&hard, n_seeds, base_seed)?,
        })
    }

    /// Full protocol: per-mode grid search, then both winners re-swept over seeds.
    pub fn compare(&self, space: &GridSpace, n_seeds: usize, base_seed: u64) -> Result<Comparison> {
        let grid_soft = self.grid_search(space, LabelMode::Soft)?;
        let grid_hard = self.grid_search(space, LabelMode::Hard)?;
        let sweep = self.sweep(grid_soft.best_config(), grid_hard.best_config(), n_seeds, base_seed)?;
        Ok(Comparison {
            grid_soft,
            grid_hard,
            sweep,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub accuracy: MeanStd,
    pub mean_kl: MeanStd,
    pub entropy_correlation: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetComparison {
    pub dataset: String,
    pub n_seeds: usize,
    pub soft: ModeSummary,
    pub hard: ModeSummary,
    /// Paired over seeds as soft minus hard.
    pub accuracy_test: PairedTTest,
    pub kl_test: PairedTTest,
    pub accuracy_significant: bool,
    pub kl_significant: bool,
    /// Relative KL reduction of soft versus hard, in percent.
    pub kl_improvement_pct: f64,
    /// Relative change of entropy correlation from hard to soft, in percent.
    pub correlation_delta_pct: Option<f64>,
}

impl DatasetComparison {
    pub fn significance_label(&self) -> String {
        let mut parts = Vec::new();
        if self.accuracy_significant {
            parts.push("Acc");
        }
        if self.kl_significant {
            parts.push("KL");
        }
        if parts.is_empty() {
            "-".into()
        } else {
            parts.join(", ")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub alpha: f64,
    pub datasets: Vec<DatasetComparison>,
    pub avg_kl_improvement_pct: f64,
    pub avg_correlation_delta_pct: Option<f64>,
}

/// `(new - old) / |old|` in percent; `None` when `old` is zero.
pub fn percent_change(old: f64, new: f64) -> Option<f64> {
    (old != 0.0).then(|| (new - old) / old.abs() * 100.0)
}

pub fn build_report(sweeps: &[SeedSweepResult], alpha: f64) -> Result<ComparisonReport> {
    if sweeps.is_empty() {
        return Err(Error::Empty("sweeps"));
    }
    let mut datasets = Vec::with_capacity(sweeps.len());
    for s in sweeps {
        if s.soft.len() != s.hard.len() || s.soft.len() != s.n_seeds {
            return Err(Error::invalid(format!(
                "{}: soft ({}) and hard ({}) sweeps must both have {} seeds",
                s.dataset,
                s.soft.len(),
                s.hard.len(),
                s.n_seeds
            )));
        }
        if s.soft.seeds != s.hard.seeds {
            return Err(Error::invalid(format!("{}: soft and hard seed lists differ", s.dataset)));
        }
        let summary = |r: &SeedRuns| ModeSummary {
            accuracy: r.accuracy_summary(),
            mean_kl: r.kl_summary(),
            entropy_correlation: r.correlation_summary(),
        };
        let soft = summary(&s.soft);
        let hard = summary(&s.hard);
        let accuracy_test = paired_t_test(&s.soft.accuracy, &s.hard.accuracy)?;
        let kl_test = paired_t_test(&s.soft.mean_kl, &s.hard.mean_kl)?;
        let kl_improvement_pct = percent_change(hard.mean_kl.mean, soft.mean_kl.mean)
            .map(|v| -v)
            .unwrap_or(0.0);
        let correlation_delta_pct = match (&soft.entropy_correlation, &hard.entropy_correlation) {
            (Some(sc), Some(hc)) => percent_change(hc.mean, sc.mean),
            _ => None,
        };
        datasets.push(DatasetComparison {
            dataset: s.dataset.clone(),
            n_seeds: s.n_seeds,
            accuracy_significant: accuracy_test.significant(alpha),
            kl_significant: kl_test.significant(alpha),
            soft,
            hard,
            accuracy_test,
            kl_test,
            kl_improvement_pct,
            correlation_delta_pct,
        });
    }
    let avg_kl_improvement_pct =
        datasets.iter().map(|d| d.kl_improvement_pct).sum::<f64>() / datasets.len() as f64;
    let deltas: Vec<f64> = datasets.iter().filter_map(|d| d.correlation_delta_pct).collect();
    let avg_correlation_delta_pct =
        (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
    Ok(ComparisonReport {
        alpha,
        datasets,
        avg_kl_improvement_pct,
        avg_correlation_delta_pct,
    })
}

fn fmt_p(p: f64) -> String {
    if p >= 1e-3 {
        format!("{p:.3}")
    } else {
        format!("{p:.1e}")
    }
}

impl ComparisonReport {
    /// Aligned plain-text rendering: a per-mode accuracy/KL table with paired
    /// test p-values, then a KL and entropy-correlation summary.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:<5} {:>16} {:>16} {:>10} {:>10} {:>12}",
            "Dataset", "Model", "Accuracy (%)", "KL", "p (Acc)", "p (KL)", "Significant"
        );
        let _ = writeln!(s, "{}", "-".repeat(99));
        for d in &self.datasets {
            for (i, (label, m)) in [("Hard", &d.hard), ("Soft", &d.soft)].into_iter().enumerate() {
                let acc = format!("{:.2} ± {:.2}", 100.0 * m.accuracy.mean, 100.0 * m.accuracy.std);
                let kl = format!("{:.3} ± {:.3}", m.mean_kl.mean, m.mean_kl.std);
                let (pa, pk, sig) = if i == 0 {
                    (fmt_p(d.accuracy_test.p), fmt_p(d.kl_test.p), d.significance_label())
                } else {
                    (String::new(), String::new(), String::new())
                };
                let name = if i == 0 { d.dataset.as_str() } else { "" };
                let _ = writeln!(s, "{name:<24} {label:<5} {acc:>16} {kl:>16} {pa:>10} {pk:>10} {sig:>12}");
            }
        }
        let _ = writeln!(s, "(mean ± std over seeds; paired two-sided t-tests, alpha = {})", self.alpha);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<24} {:>9} {:>9} {:>10} {:>20}",
            "Dataset", "KL hard", "KL soft", "Corr hard", "Corr soft (delta)"
        );
        let _ = writeln!(s, "{}", "-".repeat(76));
        let corr = |m: &ModeSummary| m.entropy_correlation.map_or("n/a".to_string(), |c| format!("{:.3}", c.mean));
        for d in &self.datasets {
            let delta = d.correlation_delta_pct.map_or(String::new(), |p| format!(" ({p:+.0}%)"));
            let _ = writeln!(
                s,
                "{:<24} {:>9.3} {:>9.3} {:>10} {:>20}",
                d.dataset,
                d.hard.mean_kl.mean,
                d.soft.mean_kl.mean,
                corr(&d.hard),
                format!("{}{}", corr(&d.soft), delta)
            );
        }
        let corr_avg = self
            .avg_correlation_delta_pct
            .map_or("n/a".to_string(), |p| format!("{p:+.0}%"));
        let _ = writeln!(
            s,
            "Average KL reduction: {:.0}%   Average correlation change: {}",
            self.avg_kl_improvement_pct, corr_avg
        );
        s
    }
}
