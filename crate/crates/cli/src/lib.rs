//! Batch front end: simulate, cv, fit, predict, evaluate and stability runs
//! driven by flags, an optional JSON config file and `SIDA_*` environment
//! variables (in that order of precedence).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sida::data::{apply_stats, fmt_f64, load_labels, load_view_csv, write_labels_csv, write_matrix_csv};
use sida::fit::{default_methods, fit, DiscriminantModel, FitOptions, Method};
use sida::graph::{load_edge_list, ViewGraph};
use sida::predict::{
    classify_pooled_matrix, classify_separate_matrix, evaluate, stability_selection, StabilityOptions,
};
use sida::simgen::{generate, Scenario, ScenarioSpec};
use sida::tuning::{cross_validate, with_workers, BoundRule, SearchMode, Spacing, TuningSpec};
use sida::{MultiViewDataset, Ridge, SidaError, ViewRole};

pub const ENV_PREFIX: &str = "SIDA_";

/// Failure surfaced to the shell: exit status, stable code, message.
#[derive(Debug)]
pub struct CliError {
    pub exit: i32,
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            exit: 2,
            code: "validation",
            message: message.into(),
        }
    }

    /// `error[code]: message` on one line.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.code, self.message.replace('\n', " "))
    }
}

impl From<SidaError> for CliError {
    fn from(e: SidaError) -> Self {
        let exit = match &e {
            SidaError::Io(_) => 4,
            e if e.is_numerical() => 3,
            _ => 2,
        };
        Self {
            exit,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        SidaError::Io(e).into()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn parse_search(s: &str) -> std::result::Result<SearchMode, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "random" => Ok(SearchMode::Random),
        "grid" => Ok(SearchMode::Grid),
        other => Err(format!("unknown search mode '{other}' (expected random or grid)")),
    }
}

fn parse_bound(s: &str) -> std::result::Result<BoundRule, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "target" => Ok(BoundRule::Target),
        "coefficient" => Ok(BoundRule::Coefficient),
        other => Err(format!("unknown bound rule '{other}' (expected target or coefficient)")),
    }
}

fn parse_spacing(s: &str) -> std::result::Result<Spacing, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "linear" => Ok(Spacing::Linear),
        "log" => Ok(Spacing::Log),
        other => Err(format!("unknown spacing '{other}' (expected linear or log)")),
    }
}

macro_rules! settings {
    ($( $(#[$m:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        /// Every tunable of a run. All fields are optional so that flags, the
        /// config file and the environment can be layered field by field.
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct Settings {
            $(
                $(#[$m])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl Settings {
            pub const FIELDS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Field-wise `self` if set, else `other`.
            pub fn or(self, other: Settings) -> Settings {
                Settings { $( $field: self.$field.or(other.$field), )* }
            }
        }
    };
}

settings! {
    /// Comma-separated view CSV files (header row of variable names).
    #[arg(long, value_delimiter = ',')]
    views: Vec<PathBuf>,
    /// Labels file, one 1-based class per line.
    #[arg(long)]
    labels: PathBuf,
    /// Comma-separated edge lists, one slot per view; empty slots mean no graph.
    #[arg(long, value_delimiter = ',')]
    graphs: Vec<String>,
    /// Per-view method: sida, sidanet or covariate.
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    /// Association/separation weight.
    #[arg(long)]
    rho: f64,
    /// Sparsity/smoothness weight for graph-guided views.
    #[arg(long)]
    eta: f64,
    /// Cross-validation folds.
    #[arg(long)]
    folds: usize,
    /// Grid points per penalized view.
    #[arg(long)]
    grid_points: usize,
    /// Fraction of the grid visited by random search.
    #[arg(long)]
    random_frac: f64,
    /// random or grid.
    #[arg(long, value_parser = parse_search)]
    search: SearchMode,
    /// linear or log spacing of the tau grid.
    #[arg(long, value_parser = parse_spacing)]
    spacing: Spacing,
    /// Upper tau bound from the target C·Γ (target) or from C itself (coefficient).
    #[arg(long, value_parser = parse_bound)]
    bound: BoundRule,
    /// Master seed; internal streams use fixed offsets from it.
    #[arg(long)]
    seed: u64,
    /// Worker threads for cv and stability (0 = all cores).
    #[arg(long)]
    workers: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Fixed within-class ridge; automatic when absent.
    #[arg(long)]
    ridge: f64,
    /// Outer-loop convergence tolerance.
    #[arg(long)]
    eps: f64,
    /// Comma-separated per-view tau.
    #[arg(long, value_delimiter = ',')]
    tau: Vec<f64>,
    /// tau JSON written by `cv`.
    #[arg(long)]
    tau_file: PathBuf,
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Also emit per-view separate predictions.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    separate: bool,
    /// Comma-separated truth index CSVs (1-based), one per view.
    #[arg(long, value_delimiter = ',')]
    truth: Vec<PathBuf>,
    /// S1, S2, S3, NET1 or NET2.
    #[arg(long)]
    scenario: Scenario,
    /// Setting 1..3 of the two-view scenarios.
    #[arg(long)]
    setting: u8,
    /// Comma-separated variables per view.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Samples per class in each of train and test.
    #[arg(long)]
    n_per_class: usize,
    /// Stability repetitions.
    #[arg(long)]
    reps: usize,
    /// Minimum selection frequency, as a fraction of repetitions.
    #[arg(long)]
    freq_threshold: f64,
    /// Fraction of variables, ranked by mean effect, eligible per view.
    #[arg(long)]
    effect_percentile: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CommandArgs {
    /// JSON config file (or a manifest written by a previous run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Simulate,
    Cv,
    Fit,
    Predict,
    Evaluate,
    Stability,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Cv => "cv",
            CommandKind::Fit => "fit",
            CommandKind::Predict => "predict",
            CommandKind::Evaluate => "evaluate",
            CommandKind::Stability => "stability",
        }
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario (train, test, truth, graphs).
    Simulate(CommandArgs),
    /// Cross-validate tau.
    Cv(CommandArgs),
    /// Fit a model at fixed tau.
    Fit(CommandArgs),
    /// Predict class labels with a fitted model.
    Predict(CommandArgs),
    /// Error, correlation and selection metrics of a model on labelled data.
    Evaluate(CommandArgs),
    /// Stability selection over repeated half-splits.
    Stability(CommandArgs),
}

#[derive(Debug, Parser)]
#[command(name = "sida", version, about = "Sparse integrative discriminant analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Parser)]
struct EnvParser {
    #[command(flatten)]
    settings: Settings,
}

/// Settings read from `SIDA_<FIELD>` variables, parsed exactly like flags.
pub fn settings_from_env(lookup: impl Fn(&str) -> Option<String>) -> CliResult<Settings> {
    let mut argv = vec!["sida".to_string()];
    for field in Settings::FIELDS {
        let var = format!("{ENV_PREFIX}{}", field.to_ascii_uppercase());
        if let Some(v) = lookup(&var) {
            argv.push(format!("--{}={}", field.replace('_', "-"), v));
        }
    }
    EnvParser::try_parse_from(argv)
        .map(|p| p.settings)
        .map_err(|e| CliError::validation(format!("environment: {}", e.to_string().lines().next().unwrap_or(""))))
}

/// Reads a config file; a manifest from an earlier run is accepted and its
/// `config` member used.
pub fn settings_from_file(path: &Path) -> CliResult<Settings> {
    if !path.is_file() {
        return Err(CliError::validation(format!("config file {} does not exist", path.display())));
    }
    let text = fs::read_to_string(path)?;
    settings_from_str(&text).map_err(|e| CliError::validation(format!("config {}: {}", path.display(), e.message)))
}

/// Parses config JSON, unwrapping a manifest envelope.
pub fn settings_from_str(text: &str) -> CliResult<Settings> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::validation(e.to_string()))?;
    let inner = match value.get("config") {
        Some(c) if value.get("tool").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::validation(e.to_string()))
}

/// flags > config file > environment; defaults are filled per command later.
pub fn resolve(args: &CommandArgs, env: impl Fn(&str) -> Option<String>) -> CliResult<Settings> {
    let config_path = args
        .config
        .clone()
        .or_else(|| env(&format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from));
    let file = match config_path {
        Some(p) => settings_from_file(&p)?,
        None => Settings::default(),
    };
    Ok(args.settings.clone().or(file).or(settings_from_env(env)?))
}

/// Parses argv and runs; returns the process exit status after printing any
/// error line to stderr.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("").to_string();
            eprintln!("{}", CliError::validation(first.trim_start_matches("error: ")).line());
            return 2;
        }
    };
    match run(cli.command, |k| std::env::var(k).ok()) {
        Ok(summary) => {
            if !summary.is_empty() {
                print!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit
        }
    }
}

/// Runs one command and returns text for stdout.
pub fn run(command: Command, env: impl Fn(&str) -> Option<String>) -> CliResult<String> {
    let (kind, args) = match command {
        Command::Simulate(a) => (CommandKind::Simulate, a),
        Command::Cv(a) => (CommandKind::Cv, a),
        Command::Fit(a) => (CommandKind::Fit, a),
        Command::Predict(a) => (CommandKind::Predict, a),
        Command::Evaluate(a) => (CommandKind::Evaluate, a),
        Command::Stability(a) => (CommandKind::Stability, a),
    };
    let settings = resolve(&args, env)?;
    run_settings(kind, settings)
}

pub fn run_settings(kind: CommandKind, mut s: Settings) -> CliResult<String> {
    s.seed.get_or_insert(0);
    s.out.get_or_insert_with(|| PathBuf::from("sida_out"));
    let artifacts = match kind {
        CommandKind::Simulate => simulate(&mut s)?,
        CommandKind::Cv => cv(&mut s)?,
        CommandKind::Fit => fit_cmd(&mut s)?,
        CommandKind::Predict => predict_cmd(&mut s)?,
        CommandKind::Evaluate => evaluate_cmd(&mut s)?,
        CommandKind::Stability => stability_cmd(&mut s)?,
    };
    let out = s.out.clone().expect("out defaulted");
    let stdout = artifacts.stdout.clone();
    write_artifacts(&out, kind, &s, artifacts)?;
    Ok(stdout)
}

#[derive(Debug, Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    stdout: String,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, body: impl Into<Vec<u8>>) {
        self.files.push((name.into(), body.into()));
    }
}

/// Envelope shared by JSON artifacts and manifests.
fn envelope(kind: CommandKind, s: &Settings) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("tool".into(), json!("sida"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(kind.name()));
    m.insert("config".into(), serde_json::to_value(s).expect("settings serialize"));
    m
}

fn to_json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json serialize");
    s.push('\n');
    s.into_bytes()
}

/// Writes all artifacts plus `<command>_manifest.json`; anything written is
/// removed again if a later write fails.
fn write_artifacts(out: &Path, kind: CommandKind, s: &Settings, artifacts: Artifacts) -> CliResult<()> {
    let created = !out.exists();
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> std::io::Result<()> {
        fs::create_dir_all(out)?;
        let mut names = Vec::new();
        for (name, body) in &artifacts.files {
            let path = out.join(name);
            fs::write(&path, body)?;
            written.push(path);
            names.push(name.clone());
        }
        let mut m = envelope(kind, s);
        m.insert("artifacts".into(), json!(names));
        let path = out.join(format!("{}_manifest.json", kind.name()));
        fs::write(&path, to_json_bytes(&Value::Object(m)))?;
        written.push(path);
        Ok(())
    })();
    if let Err(e) = result {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        if created {
            let _ = fs::remove_dir(out);
        }
        return Err(e.into());
    }
    Ok(())
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::validation(format!("missing --{flag}")))
}

fn must_exist(p: &Path, what: &str) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} file {} does not exist", p.display())))
    }
}

/// Loads views and labels named in `s`, with roles from the method list.
fn load_dataset(s: &Settings, methods: Option<&[Method]>) -> CliResult<MultiViewDataset> {
    let views = require(&s.views, "views")?;
    let labels_path = require(&s.labels, "labels")?;
    if views.is_empty() {
        return Err(CliError::validation("--views is empty"));
    }
    for v in views {
        must_exist(v, "view")?;
    }
    must_exist(labels_path, "labels")?;
    if let Some(m) = methods {
        if m.len() != views.len() {
            return Err(CliError::validation(format!("{} methods for {} views", m.len(), views.len())));
        }
    }
    let labels = load_labels(labels_path)?;
    let mats = views.iter().map(load_view_csv).collect::<sida::Result<Vec<_>>>()?;
    let roles = (0..mats.len())
        .map(|d| match methods.map(|m| m[d]) {
            Some(Method::Covariate) => ViewRole::Covariate,
            _ => ViewRole::Penalized,
        })
        .collect();
    let names = mats.iter().map(|m| m.names.clone()).collect();
    let ds = MultiViewDataset::new(mats.into_iter().map(|m| m.data).collect(), labels, roles)?.with_names(names)?;
    Ok(ds)
}

fn load_graphs(s: &Settings, dims: &[usize]) -> CliResult<Vec<Option<ViewGraph>>> {
    let Some(slots) = &s.graphs else {
        return Ok(vec![None; dims.len()]);
    };
    if slots.len() != dims.len() {
        return Err(CliError::validation(format!(
            "{} graph slots for {} views",
            slots.len(),
            dims.len()
        )));
    }
    slots
        .iter()
        .zip(dims)
        .map(|(g, &p)| {
            let g = g.trim();
            if g.is_empty() {
                return Ok(None);
            }
            let path = Path::new(g);
            must_exist(path, "graph")?;
            Ok(Some(load_edge_list(path, p)?))
        })
        .collect()
}

fn fit_options(s: &mut Settings) -> CliResult<FitOptions> {
    let mut o = FitOptions {
        rho: *s.rho.get_or_insert(0.5),
        eta: *s.eta.get_or_insert(0.5),
        ..FitOptions::default()
    };
    o.eps = *s.eps.get_or_insert(o.eps);
    if let Some(g) = s.ridge {
        o.ridge = Ridge::Fixed(g);
    }
    o.validate()?;
    Ok(o)
}

/// Loads data, graphs and methods (default: sidanet where a graph is given).
fn training_inputs(s: &mut Settings) -> CliResult<(MultiViewDataset, Vec<Option<ViewGraph>>, Vec<Method>)> {
    let given = s.method.clone();
    let raw = load_dataset(s, given.as_deref())?;
    let graphs = load_graphs(s, &raw.dims())?;
    let methods = match given {
        Some(m) => m,
        None => default_methods(&raw, &graphs),
    };
    s.method = Some(methods.clone());
    Ok((raw.standardize(), graphs, methods))
}

fn tuning_spec(s: &mut Settings, methods: &[Method]) -> TuningSpec {
    let n_pen = methods.iter().filter(|&&m| m != Method::Covariate).count();
    let mut t = TuningSpec {
        mode: *s.search.get_or_insert(SearchMode::Random),
        spacing: *s.spacing.get_or_insert(Spacing::Linear),
        bound: *s.bound.get_or_insert(BoundRule::Target),
        folds: *s.folds.get_or_insert(5),
        seed: s.seed.unwrap_or(0),
        ..TuningSpec::default()
    };
    t.points_per_view = Some(*s.grid_points.get_or_insert(t.points(n_pen)));
    t.random_fraction = Some(*s.random_frac.get_or_insert(t.fraction(n_pen)));
    t
}

fn workers(s: &mut Settings) -> usize {
    *s.workers.get_or_insert(0)
}

fn simulate(s: &mut Settings) -> CliResult<Artifacts> {
    let scenario = *s.scenario.get_or_insert(Scenario::S1);
    let setting = *s.setting.get_or_insert(1);
    let mut spec = ScenarioSpec::new(scenario, setting, s.seed.unwrap_or(0))?;
    if let Some(d) = &s.dims {
        spec.dims = d.clone();
    }
    if let Some(n) = s.n_per_class {
        spec.n_per_class = n;
    }
    s.dims = Some(spec.dims.clone());
    s.n_per_class = Some(spec.n_per_class);
    let data = generate(&spec)?;
    let mut a = Artifacts::default();
    for (prefix, ds) in [("train", &data.train), ("test", &data.test)] {
        for d in 0..ds.n_views() {
            a.add(
                format!("{prefix}_view{}.csv", d + 1),
                write_matrix_csv(&ds.names()[d], ds.view(d)),
            );
        }
        a.add(format!("{prefix}_labels.csv"), write_labels_csv(ds.labels()));
    }
    for (d, t) in data.truth.iter().enumerate() {
        let mut body = String::from("index\n");
        for i in t {
            let _ = writeln!(body, "{}", i + 1);
        }
        a.add(format!("truth_view{}.csv", d + 1), body);
    }
    for (d, g) in data.graphs.iter().enumerate() {
        if let Some(g) = g {
            a.add(format!("graph_view{}.tsv", d + 1), g.to_tsv());
        }
    }
    a.stdout = format!(
        "simulated {:?} setting {}: {} views, {} train / {} test samples\n",
        scenario,
        setting,
        spec.dims.len(),
        data.train.n_samples(),
        data.test.n_samples()
    );
    Ok(a)
}

fn cv(s: &mut Settings) -> CliResult<Artifacts> {
    let (ds, graphs, methods) = training_inputs(s)?;
    let opts = fit_options(s)?;
    let spec = tuning_spec(s, &methods);
    let res = with_workers(workers(s), || cross_validate(&ds, &graphs, &methods, &spec, &opts))??;
    let mut a = Artifacts::default();
    a.add("cv_results.csv", res.to_csv());
    let mut m = envelope(CommandKind::Cv, s);
    m.insert("seed".into(), json!(spec.seed));
    m.insert("bounds".into(), serde_json::to_value(&res.bounds).map_err(SidaError::from)?);
    m.insert("candidates".into(), json!(res.candidates.len()));
    m.insert("best_error".into(), json!(res.mean_errors[res.best_index]));
    m.insert("best".into(), json!(res.best));
    a.add("tau.json", to_json_bytes(&Value::Object(m)));
    let t: Vec<String> = res.best.iter().map(|&v| fmt_f64(v)).collect();
    a.stdout = format!(
        "best tau {} (cv error {:.4}, {} candidates)\n",
        t.join(","),
        res.mean_errors[res.best_index],
        res.candidates.len()
    );
    Ok(a)
}

fn read_tau_file(p: &Path) -> CliResult<Vec<f64>> {
    must_exist(p, "tau")?;
    let v: Value = serde_json::from_str(&fs::read_to_string(p)?)
        .map_err(|e| CliError::validation(format!("tau file {}: {e}", p.display())))?;
    serde_json::from_value(v.get("best").cloned().unwrap_or(Value::Null))
        .map_err(|_| CliError::validation(format!("tau file {} has no 'best' list", p.display())))
}

fn fit_cmd(s: &mut Settings) -> CliResult<Artifacts> {
    let taus = match (&s.tau, &s.tau_file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => read_tau_file(p)?,
        (None, None) => return Err(CliError::validation("missing --tau or --tau-file")),
    };
    s.tau = Some(taus.clone());
    s.tau_file = None;
    let (ds, graphs, methods) = training_inputs(s)?;
    let opts = fit_options(s)?;
    let mut model = fit(&ds, &graphs, &methods, &taus, &opts)?;
    model.config.seed = s.seed;
    let mut a = Artifacts::default();
    let mut m = envelope(CommandKind::Fit, s);
    m.insert("model".into(), serde_json::to_value(&model).map_err(SidaError::from)?);
    a.add("model.json", to_json_bytes(&Value::Object(m)));
    let sel: Vec<String> = model.views.iter().map(|v| v.selected.len().to_string()).collect();
    a.stdout = format!(
        "fitted {} views; selected variables per view: {}\n",
        model.n_views(),
        sel.join(",")
    );
    Ok(a)
}

/// Reads a model written by `fit` (or a bare model JSON).
pub fn load_model(p: &Path) -> CliResult<DiscriminantModel> {
    must_exist(p, "model")?;
    let text = fs::read_to_string(p)?;
    model_from_str(&text).map_err(|e| match e.exit {
        2 => CliError::validation(format!("model {}: {}", p.display(), e.message)),
        _ => e,
    })
}

/// Parses a model, wrapped in a `fit` envelope or bare.
pub fn model_from_str(text: &str) -> CliResult<DiscriminantModel> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::validation(e.to_string()))?;
    let inner = v.get("model").cloned().unwrap_or(v);
    let model: DiscriminantModel =
        serde_json::from_value(inner).map_err(|e| CliError::validation(e.to_string()))?;
    model.check()?;
    Ok(model)
}

/// Views standardized with the model's training statistics.
fn model_views(s: &Settings, model: &DiscriminantModel) -> CliResult<Vec<ndarray::Array2<f64>>> {
    let views = require(&s.views, "views")?;
    if views.len() != model.n_views() {
        return Err(CliError::validation(format!(
            "{} views given, model has {}",
            views.len(),
            model.n_views()
        )));
    }
    views
        .iter()
        .zip(&model.stats)
        .map(|(p, st)| {
            must_exist(p, "view")?;
            let m = load_view_csv(p)?;
            Ok(apply_stats(m.data.view(), st)?)
        })
        .collect()
}

fn predict_cmd(s: &mut Settings) -> CliResult<Artifacts> {
    let model = load_model(require(&s.model, "model")?)?;
    let separate = *s.separate.get_or_insert(false);
    let views = model_views(s, &model)?;
    let pooled = classify_pooled_matrix(&model, &views)?;
    let per_view = if separate {
        (0..views.len())
            .map(|d| classify_separate_matrix(&model, views[d].view(), d))
            .collect::<sida::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut body = String::from("sample,pooled");
    for d in 0..per_view.len() {
        let _ = write!(body, ",view_{}", d + 1);
    }
    body.push('\n');
    for i in 0..pooled.len() {
        let _ = write!(body, "{},{}", i + 1, pooled[i]);
        for pv in &per_view {
            let _ = write!(body, ",{}", pv[i]);
        }
        body.push('\n');
    }
    let mut a = Artifacts::default();
    a.add("predictions.csv", body);
    a.stdout = format!("predicted {} samples\n", pooled.len());
    Ok(a)
}

fn load_truth(paths: &[PathBuf]) -> CliResult<Vec<Vec<usize>>> {
    paths
        .iter()
        .map(|p| {
            must_exist(p, "truth")?;
            let idx = load_labels(p)?;
            Ok(idx.into_iter().map(|i| i - 1).collect())
        })
        .collect()
}

fn evaluate_cmd(s: &mut Settings) -> CliResult<Artifacts> {
    let model = load_model(require(&s.model, "model")?)?;
    let views = model_views(s, &model)?;
    let labels_path = require(&s.labels, "labels")?;
    must_exist(labels_path, "labels")?;
    let labels = load_labels(labels_path)?;
    let roles = model
        .config
        .methods
        .iter()
        .map(|m| if *m == Method::Covariate { ViewRole::Covariate } else { ViewRole::Penalized })
        .collect();
    let ds = MultiViewDataset::with_classes(views, labels, roles, model.n_classes)?;
    let truth = match &s.truth {
        Some(t) if t.len() != model.n_views() => {
            return Err(CliError::validation(format!(
                "{} truth files for {} views",
                t.len(),
                model.n_views()
            )))
        }
        Some(t) => Some(load_truth(t)?),
        None => None,
    };
    let report = evaluate(&model, &ds, truth.as_deref())?;
    let mut a = Artifacts::default();
    let mut m = envelope(CommandKind::Evaluate, s);
    m.insert("report".into(), serde_json::to_value(&report).map_err(SidaError::from)?);
    a.add("report.json", to_json_bytes(&Value::Object(m)));
    let table = report.to_table();
    a.add("report.txt", table.clone());
    a.stdout = table;
    Ok(a)
}

fn stability_cmd(s: &mut Settings) -> CliResult<Artifacts> {
    let (ds, graphs, methods) = training_inputs(s)?;
    let opts = fit_options(s)?;
    let spec = tuning_spec(s, &methods);
    let defaults = StabilityOptions::default();
    let stab = StabilityOptions {
        reps: *s.reps.get_or_insert(defaults.reps),
        freq_threshold: *s.freq_threshold.get_or_insert(defaults.freq_threshold),
        effect_percentile: *s.effect_percentile.get_or_insert(defaults.effect_percentile),
        seed: spec.seed,
    };
    let stable = with_workers(workers(s), || stability_selection(&ds, &graphs, &methods, &spec, &opts, &stab))??;
    let mut body = String::from("view,index,name,frequency,mean_effect\n");
    let mut total = 0;
    for (d, vars) in stable.iter().enumerate() {
        for v in vars {
            total += 1;
            let _ = writeln!(
                body,
                "{},{},{},{},{}",
                d + 1,
                v.index + 1,
                ds.names()[d][v.index],
                fmt_f64(v.frequency),
                fmt_f64(v.mean_effect)
            );
        }
    }
    let mut a = Artifacts::default();
    a.add("stable_variables.csv", body);
    a.stdout = format!("{total} stable variables over {} repetitions\n", stab.reps);
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> CommandArgs {
        let mut argv = vec!["sida"];
        argv.extend_from_slice(args);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Cv(a) | Command::Fit(a) | Command::Simulate(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_beat_file_beat_env() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"rho": 0.3, "eta": 0.2}"#).unwrap();
        let a = parse(&["cv", "--rho", "0.7", "--config", cfg.to_str().unwrap()]);
        let env = |k: &str| match k {
            "SIDA_RHO" => Some("0.1".to_string()),
            "SIDA_ETA" => Some("0.9".to_string()),
            "SIDA_FOLDS" => Some("3".to_string()),
            _ => None,
        };
        let s = resolve(&a, env).unwrap();
        assert_eq!(s.rho, Some(0.7));
        assert_eq!(s.eta, Some(0.2));
        assert_eq!(s.folds, Some(3));
    }

    #[test]
    fn default_rho_is_one_half() {
        let mut s = Settings::default();
        assert_eq!(fit_options(&mut s).unwrap().rho, 0.5);
        assert_eq!(s.rho, Some(0.5));
    }

    #[test]
    fn graph_slots_may_be_empty() {
        let a = parse(&["fit", "--graphs", "a.tsv,,c.tsv", "--method", "sidanet,sida,covariate"]);
        assert_eq!(
            a.settings.graphs.unwrap(),
            vec!["a.tsv".to_string(), String::new(), "c.tsv".to_string()]
        );
        assert_eq!(a.settings.method.unwrap()[2], Method::Covariate);
    }

    #[test]
    fn missing_labels_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let v = dir.path().join("v.csv");
        fs::write(&v, "a,b\n1,2\n3,4\n").unwrap();
        let s = Settings {
            views: Some(vec![v]),
            labels: Some(dir.path().join("missing.csv")),
            ..Settings::default()
        };
        let e = load_dataset(&s, None).unwrap_err();
        assert_eq!(e.exit, 2);
        assert_eq!(e.code, "validation");
    }

    #[test]
    fn manifests_are_accepted_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, r#"{"tool":"sida","command":"cv","config":{"seed":9,"folds":4},"artifacts":[]}"#).unwrap();
        let s = settings_from_file(&p).unwrap();
        assert_eq!((s.seed, s.folds), (Some(9), Some(4)));
        fs::write(&p, r#"{"sed": 1}"#).unwrap();
        assert!(settings_from_file(&p).is_err());
    }

    #[test]
    fn bad_environment_value_is_reported() {
        let e = settings_from_env(|k| (k == "SIDA_RHO").then(|| "abc".to_string())).unwrap_err();
        assert_eq!(e.exit, 2);
    }

    #[test]
    fn error_codes_map_to_exit_status() {
        assert_eq!(CliError::from(SidaError::TauTooLarge).exit, 3);
        assert_eq!(CliError::from(SidaError::Validation("x".into())).exit, 2);
        let io = std::io::Error::new(std::io::ErrorKind::Other, "x");
        assert_eq!(CliError::from(io).exit, 4);
        assert_eq!(CliError::from(SidaError::TauTooLarge).line(), "error[tau_too_large]: tau too large: every view's discriminant matrix is zero");
    }
}
