use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use kisvm::data_io::{
    generate_synthetic, load_model, read_csv, read_silicon, save_model, write_csv, ModelArchive,
};
use kisvm::experiment::{load_table, run_experiment, write_reports, ExperimentConfig};
use kisvm::knowledge::reliability_ratios;
use kisvm::pipeline::{
    band_label, build_lagged_features, cascade_predict, make_binary_tasks, BandLabel, BinaryTask,
    HighTaskMode, Normalizer,
};
use kisvm::select::{grid_search, CvConfig};
use kisvm::wsvm::train;
use kisvm::{Error, Result};

pub const MODEL_LOW_FILE: &str = "model_low.json";
pub const MODEL_HIGH_FILE: &str = "model_high.json";
pub const SYNTH_FILE: &str = "synthetic.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Parser, Debug)]
#[command(name = "kisvm", version, about = "Knowledge-weighted SVM for hot-metal silicon bands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Process CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true, value_enum)]
    high_task_mode: Option<ModeArg>,
    #[arg(long, global = true)]
    emit_svg: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Pairwise,
    OneVsRest,
}

impl From<ModeArg> for HighTaskMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pairwise => HighTaskMode::Pairwise,
            ModeArg::OneVsRest => HighTaskMode::OneVsRest,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic process table.
    Synth,
    /// Fit the low and high classifiers on one table and archive them.
    Train,
    /// Classify every lagged row of a table with archived classifiers.
    Predict {
        /// Directory holding the archives; defaults to --out.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Repeated random-split comparison against the cost-sensitive baseline.
    Experiment,
    /// Print the low and high persistence ratios of a silicon series.
    Reliability,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(data) = &common.data {
        config.data = Some(data.clone());
    }
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.synth.seed = seed;
    }
    if let Some(repeats) = common.repeats {
        config.repeats = repeats;
    }
    if let Some(folds) = common.folds {
        config.folds = folds;
    }
    if let Some(mode) = common.high_task_mode {
        config.high_task_mode = mode.into();
    }
    if common.emit_svg {
        config.emit_svg = true;
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn persistence_line(name: &str, ratio: Option<f64>, count: usize) -> String {
    match ratio {
        Some(r) => format!("{name}_persistence {r:.6} ({count} transitions)"),
        None => format!("{name}_persistence undefined (0 transitions)"),
    }
}

fn cmd_synth(config: &ExperimentConfig) -> Result<String> {
    config.synth.validate()?;
    let table = generate_synthetic(&config.synth)?;
    create_dir(&config.out)?;
    let path = config.out.join(SYNTH_FILE);
    write_csv(&table, &path)?;

    let mut counts = [0usize; 3];
    for &z in table.silicon() {
        counts[band_label(z, &config.synth.bands)?.index()] += 1;
    }
    let p = reliability_ratios(table.silicon(), &config.synth.bands)?;
    let mut msg = format!("wrote {} rows to {}\n", table.len(), path.display());
    for band in BandLabel::ALL {
        let _ = writeln!(msg, "{} {}", band.name(), counts[band.index()]);
    }
    let _ = writeln!(msg, "{}", persistence_line("low", p.low, p.low_count));
    let _ = writeln!(msg, "{}", persistence_line("high", p.high, p.high_count));
    Ok(msg)
}

fn fit(task: &BinaryTask, config: &ExperimentConfig, name: &str) -> Result<Fitted> {
    if task.is_degenerate() {
        return Err(Error::DegenerateTask(format!(
            "{name} task has {} positives and {} negatives",
            task.positives(),
            task.negatives()
        )));
    }
    let cv = CvConfig {
        folds: config.folds,
        seed: config.seed,
        selection_metric: config.selection_metric,
        parallel: config.parallel,
    };
    let grid = grid_search(&task.samples, Some(&task.rule), &config.knowledge_grid, &cv)?;
    let model = train(
        &task.samples,
        &grid.best.scheme,
        &grid.best.kernel,
        Some(&task.rule),
    )?;
    Ok(Fitted {
        model,
        cv_score: grid.best_score,
    })
}

struct Fitted {
    model: kisvm::Model,
    cv_score: f64,
}

fn cmd_train(config: &ExperimentConfig) -> Result<String> {
    let table = load_table(config)?;
    let lagged = build_lagged_features(&table, &config.lag_spec)?;
    let normalizer = Normalizer::fit_samples(&lagged)?;
    let scaled = normalizer.apply(&lagged)?;
    let (low, high) = make_binary_tasks(&scaled, &config.bands, config.high_task_mode)?;

    create_dir(&config.out)?;
    let mut msg = String::new();
    for (task, name, file) in [(&low, "low", MODEL_LOW_FILE), (&high, "high", MODEL_HIGH_FILE)] {
        let parts = fit(task, config, name)?;
        let archive = ModelArchive::new(
            &parts.model,
            config.bands,
            config.lag_spec.clone(),
            normalizer.clone(),
        )?;
        let path = config.out.join(file);
        save_model(&archive, &path)?;
        let d = &parts.model.training_diagnostics;
        let _ = writeln!(
            msg,
            "{name}: gamma={} c_hat={} cv={:.4} support_vectors={} kkt={:.2e} gap={:.2e} -> {}",
            parts.model.kernel.gamma,
            parts.model.scheme.c_hat,
            parts.cv_score,
            parts.model.coefficients.len(),
            d.max_violation,
            d.relative_gap,
            path.display()
        );
    }
    Ok(msg)
}

fn cmd_predict(config: &ExperimentConfig, models: Option<&Path>) -> Result<String> {
    let dir = models.unwrap_or(&config.out);
    let low = load_model(dir.join(MODEL_LOW_FILE))?;
    let high = load_model(dir.join(MODEL_HIGH_FILE))?;
    if low.lag_spec != high.lag_spec || low.normalizer != high.normalizer {
        return Err(Error::Validation(
            "low and high archives were trained on different preprocessing".into(),
        ));
    }
    let path = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("predict needs --data".into()))?;
    let table = read_csv(path)?;
    let lagged = build_lagged_features(&table, &low.lag_spec)?;
    let scaled = low.normalizer.apply(&lagged)?;
    let (low_model, high_model) = (low.model(), high.model());

    let mut body = String::from("time_index,band\n");
    for s in &scaled {
        let band = cascade_predict(&low_model, &high_model, &s.features)?;
        let _ = writeln!(body, "{},{}", s.time_index, band.name());
    }
    create_dir(&config.out)?;
    let out = config.out.join(PREDICTIONS_FILE);
    std::fs::write(&out, &body).map_err(|e| Error::io(&out, e))?;
    Ok(body)
}

fn cmd_experiment(config: &ExperimentConfig) -> Result<String> {
    config.validate()?;
    let table = load_table(config)?;
    let report = run_experiment(config, &table)?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .ok();
    let files = write_reports(&report, &config.out, stamp.as_deref())?;
    let mut msg = format!(
        "{} valid repeats, {} skipped\n",
        report.valid_repeats(),
        report.skipped_repeats()
    );
    let _ = writeln!(
        msg,
        "ensemble accuracy: knowledge {:.4}, baseline {:.4}",
        report.knowledge.ensemble_accuracy, report.baseline.ensemble_accuracy
    );
    if let Some(t) = &report.ensemble_ttest {
        let _ = writeln!(msg, "paired t = {:.4}, p = {:.4}", t.t_statistic, t.p_value);
    }
    for f in files {
        let _ = writeln!(msg, "wrote {}", f.display());
    }
    Ok(msg)
}

fn cmd_reliability(config: &ExperimentConfig) -> Result<String> {
    let series = match &config.data {
        Some(path) => read_silicon(path)?,
        None => load_table(config)?.silicon().to_vec(),
    };
    let p = reliability_ratios(&series, &config.bands)?;
    Ok(format!(
        "{}\n{}\n",
        persistence_line("low", p.low, p.low_count),
        persistence_line("high", p.high, p.high_count)
    ))
}

fn run(cli: Cli) -> Result<String> {
    let config = load_config(&cli.common)?;
    match cli.command {
        Command::Synth => cmd_synth(&config),
        Command::Train => cmd_train(&config),
        Command::Predict { models } => cmd_predict(&config, models.as_deref()),
        Command::Experiment => cmd_experiment(&config),
        Command::Reliability => cmd_reliability(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
