//! Repeated random-split comparison of the knowledge-weighted model against
//! the cost-sensitive baseline, plus report emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{ProcessTable, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy_delta_report, classwise_accuracy, combined_ensemble, paired_t_test,
    ClasswiseAccuracy, DeltaRow, RepeatMetrics, TTestResult,
};
use crate::pipeline::{
    band_label, build_lagged_features, cascade_predict, make_binary_tasks, BandLabel, BinaryTask,
    HighTaskMode, LagSpec, LaggedSample, Normalizer, SiliconBands,
};
use crate::select::{grid_search, Combination, CvConfig, GridSpec, SelectionMetric};
use crate::wsvm::{train, TrainedModel};
use crate::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Process CSV; the synthetic generator is used when absent.
    pub data: Option<PathBuf>,
    pub synth: SynthConfig,
    pub bands: SiliconBands,
    pub lag_spec: LagSpec,
    pub repeats: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub folds: usize,
    pub selection_metric: SelectionMetric,
    pub knowledge_grid: GridSpec,
    pub baseline_grid: GridSpec,
    pub high_task_mode: HighTaskMode,
    pub emit_svg: bool,
    pub parallel: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            synth: SynthConfig::default(),
            bands: SiliconBands::furnace_a(),
            lag_spec: LagSpec::furnace_a(),
            repeats: 100,
            train_size: 500,
            test_size: 100,
            seed: 0,
            folds: 5,
            selection_metric: SelectionMetric::EnsembleAccuracy,
            knowledge_grid: GridSpec::knowledge_default(),
            baseline_grid: GridSpec::baseline_default(),
            high_task_mode: HighTaskMode::Pairwise,
            emit_svg: false,
            parallel: true,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("train and test sizes must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        SiliconBands::new(self.bands.z_inf, self.bands.z_sup)
            .map_err(|e| Error::Config(e.to_string()))?;
        LagSpec::new(self.lag_spec.entries.clone()).map_err(|e| Error::Config(e.to_string()))?;
        if self.lag_spec.previous_silicon_feature().is_none() {
            return Err(Error::Config(
                "lag spec must include the delay-1 silicon term".into(),
            ));
        }
        self.knowledge_grid.combinations()?;
        self.baseline_grid.combinations()?;
        Ok(())
    }
}

/// Loads the configured CSV or generates the synthetic table.
pub fn load_table(config: &ExperimentConfig) -> Result<ProcessTable> {
    match &config.data {
        Some(path) => crate::data_io::read_csv(path),
        None => crate::data_io::generate_synthetic(&config.synth),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub best: Combination,
    pub cv_score: f64,
    pub test: ClasswiseAccuracy,
    pub ensemble: f64,
    pub redistributed: bool,
    /// Worst KKT violation and relative gap over every fit behind this
    /// outcome, cross-validation folds included.
    pub max_kkt_violation: f64,
    pub max_relative_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub low: TaskOutcome,
    pub high: TaskOutcome,
    pub metrics: RepeatMetrics,
    /// Cascade recall per true band (low, proper, high); NaN when absent.
    pub band_accuracy: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub index: usize,
    pub seed: u64,
    pub knowledge: Option<ModelOutcome>,
    pub baseline: Option<ModelOutcome>,
    /// Why the repeat was skipped, if it was.
    pub skipped: Option<String>,
}

impl RepeatOutcome {
    pub fn is_valid(&self) -> bool {
        self.skipped.is_none()
    }

    pub fn flagged(&self) -> bool {
        [&self.knowledge, &self.baseline]
            .into_iter()
            .flatten()
            .any(|m| m.low.redistributed || m.high.redistributed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub band_accuracy: [f64; 3],
    pub class1_low: f64,
    pub class1_high: f64,
    pub plain_accuracy: f64,
    pub ensemble_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub lagged_samples: usize,
    pub repeats: Vec<RepeatOutcome>,
    pub knowledge: ModelSummary,
    pub baseline: ModelSummary,
    pub deltas: Vec<(usize, DeltaRow)>,
    pub ensemble_ttest: Option<TTestResult>,
}

impl ExperimentReport {
    pub fn valid_repeats(&self) -> usize {
        self.repeats.iter().filter(|r| r.is_valid()).count()
    }

    pub fn skipped_repeats(&self) -> usize {
        self.repeats.len() - self.valid_repeats()
    }
}

/// Seed of repeat `index` derived from the master seed.
pub fn repeat_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.random()
}

pub fn run_experiment(config: &ExperimentConfig, table: &ProcessTable) -> Result<ExperimentReport> {
    config.validate()?;
    let lagged = build_lagged_features(table, &config.lag_spec)?;
    let needed = config.train_size + config.test_size;
    if needed > lagged.len() {
        return Err(Error::Config(format!(
            "train + test = {needed} exceeds the {} lagged samples",
            lagged.len()
        )));
    }
    let run = |r: usize| run_repeat(config, &lagged, r, repeat_seed(config.seed, r));
    let repeats: Vec<RepeatOutcome> = if config.parallel {
        (0..config.repeats).into_par_iter().map(run).collect()
    } else {
        (0..config.repeats).map(run).collect()
    };
    if repeats.iter().all(|r| !r.is_valid()) {
        return Err(Error::DegenerateTask(format!(
            "all {} repeats were degenerate; first reason: {}",
            repeats.len(),
            repeats[0].skipped.as_deref().unwrap_or("")
        )));
    }

    let valid: Vec<&RepeatOutcome> = repeats.iter().filter(|r| r.is_valid()).collect();
    let know: Vec<&ModelOutcome> = valid.iter().map(|r| r.knowledge.as_ref().unwrap()).collect();
    let base: Vec<&ModelOutcome> = valid.iter().map(|r| r.baseline.as_ref().unwrap()).collect();
    let know_metrics: Vec<RepeatMetrics> = know.iter().map(|m| m.metrics).collect();
    let base_metrics: Vec<RepeatMetrics> = base.iter().map(|m| m.metrics).collect();
    let deltas: Vec<(usize, DeltaRow)> = valid
        .iter()
        .map(|r| r.index)
        .zip(accuracy_delta_report(&know_metrics, &base_metrics)?)
        .collect();
    let ensemble_deltas: Vec<f64> = deltas.iter().map(|(_, d)| d.ensemble_accuracy).collect();
    let ensemble_ttest = if ensemble_deltas.len() >= 2 {
        Some(paired_t_test(&ensemble_deltas)?)
    } else {
        None
    };
    Ok(ExperimentReport {
        config: config.clone(),
        lagged_samples: lagged.len(),
        knowledge: summarize(&know),
        baseline: summarize(&base),
        repeats,
        deltas,
        ensemble_ttest,
    })
}

/// Mean over finite values; NaN when there are none.
fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn summarize(outcomes: &[&ModelOutcome]) -> ModelSummary {
    let band = |k: usize| finite_mean(outcomes.iter().map(|m| m.band_accuracy[k]));
    ModelSummary {
        band_accuracy: [band(0), band(1), band(2)],
        class1_low: finite_mean(outcomes.iter().map(|m| m.metrics.class1_low)),
        class1_high: finite_mean(outcomes.iter().map(|m| m.metrics.class1_high)),
        plain_accuracy: finite_mean(outcomes.iter().map(|m| m.metrics.plain_accuracy)),
        ensemble_accuracy: finite_mean(outcomes.iter().map(|m| m.metrics.ensemble_accuracy)),
    }
}

fn skipped(index: usize, seed: u64, reason: String) -> RepeatOutcome {
    RepeatOutcome {
        index,
        seed,
        knowledge: None,
        baseline: None,
        skipped: Some(reason),
    }
}

fn run_repeat(config: &ExperimentConfig, lagged: &[LaggedSample], index: usize, seed: u64) -> RepeatOutcome {
    match try_repeat(config, lagged, seed) {
        Ok((knowledge, baseline)) => RepeatOutcome {
            index,
            seed,
            knowledge: Some(knowledge),
            baseline: Some(baseline),
            skipped: None,
        },
        Err(e) => skipped(index, seed, e.to_string()),
    }
}

struct Split {
    train_low: BinaryTask,
    train_high: BinaryTask,
    test_low: BinaryTask,
    test_high: BinaryTask,
    test_all: Vec<LaggedSample>,
}

fn split(config: &ExperimentConfig, lagged: &[LaggedSample], rng: &mut ChaCha8Rng) -> Result<Split> {
    let picked = rand::seq::index::sample(rng, lagged.len(), config.train_size + config.test_size);
    let picked: Vec<usize> = picked.into_vec();
    let (train_idx, test_idx) = picked.split_at(config.train_size);
    let train_raw: Vec<LaggedSample> = train_idx.iter().map(|&i| lagged[i].clone()).collect();
    let test_raw: Vec<LaggedSample> = test_idx.iter().map(|&i| lagged[i].clone()).collect();
    let normalizer = Normalizer::fit_samples(&train_raw)?;
    let train = normalizer.apply(&train_raw)?;
    let test = normalizer.apply(&test_raw)?;
    let (train_low, train_high) = make_binary_tasks(&train, &config.bands, config.high_task_mode)?;
    let (test_low, test_high) = make_binary_tasks(&test, &config.bands, config.high_task_mode)?;
    for (name, task) in [("low", &train_low), ("high", &train_high)] {
        if task.is_degenerate() {
            return Err(Error::DegenerateTask(format!(
                "{name} training task has a single class"
            )));
        }
    }
    Ok(Split {
        train_low,
        train_high,
        test_low,
        test_high,
        test_all: test,
    })
}

fn try_repeat(
    config: &ExperimentConfig,
    lagged: &[LaggedSample],
    seed: u64,
) -> Result<(ModelOutcome, ModelOutcome)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = split(config, lagged, &mut rng)?;
    let cv = CvConfig {
        folds: config.folds,
        seed: rng.random(),
        selection_metric: config.selection_metric,
        parallel: config.parallel,
    };
    let knowledge = fit_model(config, &data, &config.knowledge_grid, &cv)?;
    let baseline = fit_model(config, &data, &config.baseline_grid, &cv)?;
    Ok((knowledge, baseline))
}

fn fit_task(
    train_task: &BinaryTask,
    test_task: &BinaryTask,
    grid: &GridSpec,
    cv: &CvConfig,
) -> Result<(TrainedModel<f64>, TaskOutcome)> {
    let result = grid_search(&train_task.samples, Some(&train_task.rule), grid, cv)?;
    let model = train(
        &train_task.samples,
        &result.best.scheme,
        &result.best.kernel,
        Some(&train_task.rule),
    )?;
    let preds = test_task
        .samples
        .iter()
        .map(|s| model.predict(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<Label> = test_task.samples.iter().map(|s| s.label).collect();
    let tags: Vec<_> = test_task.samples.iter().map(|s| s.region).collect();
    let test = classwise_accuracy(&preds, &truths, &tags)?;
    let ensemble = test
        .ensemble()
        .ok_or_else(|| Error::DegenerateTask("test task is empty".into()))?;
    let d = &model.training_diagnostics;
    let max_kkt_violation = result.max_kkt_violation.max(d.max_violation);
    let max_relative_gap = result.max_relative_gap.max(d.relative_gap);
    Ok((
        model,
        TaskOutcome {
            best: result.best,
            cv_score: result.best_score,
            test,
            ensemble: ensemble.value,
            redistributed: ensemble.redistributed,
            max_kkt_violation,
            max_relative_gap,
        },
    ))
}

fn fit_model(config: &ExperimentConfig, data: &Split, grid: &GridSpec, cv: &CvConfig) -> Result<ModelOutcome> {
    let (low_model, low) = fit_task(&data.train_low, &data.test_low, grid, cv)?;
    let (high_model, high) = fit_task(&data.train_high, &data.test_high, grid, cv)?;

    let mut hits = [0usize; 3];
    let mut counts = [0usize; 3];
    for s in &data.test_all {
        let truth = band_label(s.current_silicon, &config.bands)?;
        let pred = cascade_predict(&low_model, &high_model, &s.features)?;
        counts[truth.index()] += 1;
        if pred == truth {
            hits[truth.index()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let band_accuracy = std::array::from_fn(|k| {
        if counts[k] == 0 {
            f64::NAN
        } else {
            hits[k] as f64 / counts[k] as f64
        }
    });
    let metrics = RepeatMetrics {
        class1_low: low.test.acc_class1().unwrap_or(f64::NAN),
        class1_high: high.test.acc_class1().unwrap_or(f64::NAN),
        plain_accuracy: hits.iter().sum::<usize>() as f64 / total as f64,
        ensemble_accuracy: combined_ensemble(low.ensemble, high.ensemble),
    };
    Ok(ModelOutcome {
        low,
        high,
        metrics,
        band_accuracy,
    })
}

/// Names of the files written by [`write_reports`].
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DELTAS_FILE: &str = "deltas.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SVG_FILE: &str = "deltas.svg";

pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("metric,knowledge,baseline,delta\n");
    let k = &report.knowledge;
    let b = &report.baseline;
    let mut row = |name: &str, kv: f64, bv: f64| {
        let _ = writeln!(s, "{name},{kv:.6},{bv:.6},{:.6}", kv - bv);
    };
    for band in BandLabel::ALL {
        let i = band.index();
        row(
            &format!("accuracy_{}_silicon", band.name()),
            k.band_accuracy[i],
            b.band_accuracy[i],
        );
    }
    row("class1_low", k.class1_low, b.class1_low);
    row("class1_high", k.class1_high, b.class1_high);
    row("plain_accuracy", k.plain_accuracy, b.plain_accuracy);
    row("ensemble_accuracy", k.ensemble_accuracy, b.ensemble_accuracy);
    let cfg = &report.config;
    let _ = writeln!(
        s,
        "grid_combinations,{},{},",
        cfg.knowledge_grid.size(),
        cfg.baseline_grid.size()
    );
    let _ = writeln!(
        s,
        "valid_repeats,{},{},",
        report.valid_repeats(),
        report.valid_repeats()
    );
    if let Some(t) = &report.ensemble_ttest {
        let _ = writeln!(s, "ensemble_ttest_t,{:.6},,", t.t_statistic);
        let _ = writeln!(s, "ensemble_ttest_df,{},,", t.degrees_of_freedom);
        let _ = writeln!(s, "ensemble_ttest_p,{:.6},,", t.p_value);
    }
    s
}

pub fn deltas_csv(report: &ExperimentReport) -> String {
    let mut s =
        String::from("repeat,class1_low,class1_high,plain_accuracy,ensemble_accuracy,flagged\n");
    for (index, d) in &report.deltas {
        let flagged = report.repeats[*index].flagged();
        let _ = writeln!(
            s,
            "{index},{:.6},{:.6},{:.6},{:.6},{}",
            d.class1_low, d.class1_high, d.plain_accuracy, d.ensemble_accuracy, flagged as u8
        );
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    timestamp: Option<&'a str>,
    master_seed: u64,
    repeat_seeds: Vec<u64>,
    lagged_samples: usize,
    knowledge_grid_combinations: usize,
    baseline_grid_combinations: usize,
    valid_repeats: usize,
    skipped_repeats: Vec<(usize, &'a str)>,
    flagged_repeats: Vec<usize>,
    ensemble_ttest: &'a Option<TTestResult>,
    selections: Vec<Selection>,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Selection {
    repeat: usize,
    knowledge_low: Option<Combination>,
    knowledge_high: Option<Combination>,
    baseline_low: Option<Combination>,
    baseline_high: Option<Combination>,
}

pub fn manifest_json(report: &ExperimentReport, timestamp: Option<&str>) -> Result<String> {
    let manifest = Manifest {
        tool: "kisvm",
        version: env!("CARGO_PKG_VERSION"),
        timestamp,
        master_seed: report.config.seed,
        repeat_seeds: report.repeats.iter().map(|r| r.seed).collect(),
        lagged_samples: report.lagged_samples,
        knowledge_grid_combinations: report.config.knowledge_grid.size(),
        baseline_grid_combinations: report.config.baseline_grid.size(),
        valid_repeats: report.valid_repeats(),
        skipped_repeats: report
            .repeats
            .iter()
            .filter_map(|r| r.skipped.as_deref().map(|s| (r.index, s)))
            .collect(),
        flagged_repeats: report
            .repeats
            .iter()
            .filter(|r| r.flagged())
            .map(|r| r.index)
            .collect(),
        ensemble_ttest: &report.ensemble_ttest,
        selections: report
            .repeats
            .iter()
            .map(|r| Selection {
                repeat: r.index,
                knowledge_low: r.knowledge.as_ref().map(|m| m.low.best),
                knowledge_high: r.knowledge.as_ref().map(|m| m.high.best),
                baseline_low: r.baseline.as_ref().map(|m| m.low.best),
                baseline_high: r.baseline.as_ref().map(|m| m.high.best),
            })
            .collect(),
        config: &report.config,
    };
    Ok(serde_json::to_string_pretty(&manifest)?)
}

type Series = (&'static str, fn(&DeltaRow) -> f64);

/// Scatter of the four per-repeat deltas with a zero line.
pub fn deltas_svg(report: &ExperimentReport) -> String {
    const W: f64 = 720.0;
    const PANEL_H: f64 = 160.0;
    const PAD: f64 = 40.0;
    let series: [Series; 4] = [
        ("class1 accuracy, low classifier", |d| d.class1_low),
        ("class1 accuracy, high classifier", |d| d.class1_high),
        ("plain accuracy", |d| d.plain_accuracy),
        ("ensemble accuracy", |d| d.ensemble_accuracy),
    ];
    let h = PAD + series.len() as f64 * (PANEL_H + PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let n = report.deltas.len().max(1) as f64;
    for (p, (title, get)) in series.iter().enumerate() {
        let top = PAD + p as f64 * (PANEL_H + PAD);
        let values: Vec<f64> = report.deltas.iter().map(|(_, d)| get(d)).collect();
        let span = values
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.05f64, |m, v| m.max(v.abs()));
        let y_of = |v: f64| top + PANEL_H / 2.0 - v / span * (PANEL_H / 2.0);
        let _ = writeln!(s, r#"<text x="{PAD}" y="{:.1}">{title}</text>"#, top - 8.0);
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{top:.1}" width="{:.1}" height="{PANEL_H}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD
        );
        let zero = y_of(0.0);
        let _ = writeln!(
            s,
            r#"<line x1="{PAD}" y1="{zero:.1}" x2="{:.1}" y2="{zero:.1}" stroke="red" stroke-dasharray="4 3"/>"#,
            W - PAD
        );
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let x = PAD + (i as f64 + 0.5) / n * (W - 2.0 * PAD);
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.1}" cy="{:.1}" r="2.5" fill="steelblue"/>"#,
                y_of(*v)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes summary, deltas, manifest and (optionally) the SVG into `dir`.
pub fn write_reports(report: &ExperimentReport, dir: &Path, timestamp: Option<&str>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        (dir.join(SUMMARY_FILE), summary_csv(report)),
        (dir.join(DELTAS_FILE), deltas_csv(report)),
        (dir.join(MANIFEST_FILE), manifest_json(report, timestamp)?),
    ];
    if report.config.emit_svg {
        files.push((dir.join(SVG_FILE), deltas_svg(report)));
    }
    for (path, body) in &files {
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
