//! `scanwheel` command line. Results go to stdout as JSON; diagnostics go to
//! stderr. Exit codes: 0 ok, 1 error, 2 wheel deadline exceeded.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use scanwheel::analytics::builtin::build_registry;
use scanwheel::analytics::classifier::{
    build_training_set, classify_scene, train_classifier, ClassifierModel, LabeledRegion, LandClass, TrainParams,
    DEFAULT_RATIO_CAP, NODATA_LABEL,
};
use scanwheel::engine::store::{DocumentFilter, DocumentStore};
use scanwheel::engine::wheel::run_wheel;
use scanwheel::engine::WheelConfig;
use scanwheel::radiometry::PreparedScene;
use scanwheel::report::{write_overview, write_scene_report, Timeframe};
use scanwheel::scene::{load_scene, validate_scene};
use scanwheel::synth::{generate, load_truth, SceneRecipe};
use scanwheel::{Error, Result};

#[derive(Parser)]
#[command(name = "scanwheel", version, about = "Single-pass analytic wheel over multi-band scene bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every enabled analytic over the complete, unprocessed bundles of a batch.
    Run(RunArgs),
    /// Build a training set from labelled regions and fit the land-cover classifier.
    Train(TrainArgs),
    /// Classify one scene bundle with a saved model.
    Classify(ClassifyArgs),
    /// Write a scene report or the overview of a timeframe.
    Report(ReportArgs),
    /// Print stored documents as JSON lines.
    Query(QueryArgs),
    /// Check a scene bundle and list its issues.
    ValidateScene(ValidateArgs),
    /// Write synthetic scene bundles and their ground truth.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct StoreArgs {
    /// Wheel config; supplies the store root when --store is absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
}

impl StoreArgs {
    fn open(&self) -> Result<DocumentStore> {
        let root = match (&self.store, &self.config) {
            (Some(s), _) => s.clone(),
            (None, Some(c)) => WheelConfig::load(c)?
                .store_root
                .ok_or_else(|| Error::Config("config has no store_root".into()))?,
            (None, None) => return Err(Error::Config("--store or --config is required".into())),
        };
        if !root.is_dir() {
            return Err(Error::NotFound(format!("store {}", root.display())));
        }
        DocumentStore::open(root)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    batch: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    run_id: Option<String>,
    /// Run only these analytics (repeatable).
    #[arg(long)]
    analytic: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON list of {bundle, rect: {row, col, height, width}, class}, or an
    /// object holding that list under "regions".
    #[arg(long)]
    manifest: PathBuf,
    /// Where the model is written.
    #[arg(long)]
    out: PathBuf,
    /// Where the training set is written; defaults to `<out stem>.training.jsonl`.
    #[arg(long)]
    training_set: Option<PathBuf>,
    /// Supplies the ALI interval table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Scene bundle directory.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Directory for `labels.u8` and `labels.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generator ground truth to score the labels against.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, conflicts_with = "overview", required_unless_present = "overview")]
    scene: Option<String>,
    /// Defaults to the scene's most recent run.
    #[arg(long)]
    run: Option<String>,
    #[arg(long)]
    overview: bool,
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
    /// Report root; defaults to the store root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    analytic: Option<String>,
    #[arg(long)]
    run: Option<String>,
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scene: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// A recipe or a JSON list of recipes.
    #[arg(long)]
    recipe: PathBuf,
    /// Batch directory the bundles are written into.
    #[arg(long)]
    out: PathBuf,
    /// Overrides each recipe's seed (offset by its position in the list).
    #[arg(long)]
    seed: Option<u64>,
}

/// `YYYY-MM-DD` or RFC 3339. A bare date as an upper bound means the end of
/// that day.
fn parse_time(s: &str, upper: bool) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    let day = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| Error::Filter(format!("bad time {s:?}")))?;
    let tf = Timeframe::day(day);
    Ok(if upper { tf.to } else { tf.from }.expect("day bounds"))
}

fn time_range(from: &Option<String>, to: &Option<String>) -> Result<(Option<DateTime<Utc>>, Option<DateTime<Utc>>)> {
    Ok((
        from.as_deref().map(|s| parse_time(s, false)).transpose()?,
        to.as_deref().map(|s| parse_time(s, true)).transpose()?,
    ))
}

/// A closed pipe (`| head`) is not an error worth reporting.
fn print_json(v: &Value) {
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json output"));
}

fn load_config(path: &Option<PathBuf>) -> Result<WheelConfig> {
    match path {
        Some(p) => WheelConfig::load(p),
        None => Ok(WheelConfig::default()),
    }
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let mut cfg = load_config(&a.config)?;
    if a.store.is_some() {
        cfg.store_root = a.store;
    }
    if a.batch.is_some() {
        cfg.batch_dir = a.batch;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if a.run_id.is_some() {
        cfg.run_id = a.run_id;
    }
    let store_root = cfg.store_root.clone().ok_or_else(|| Error::Config("no store root (--store or store_root)".into()))?;
    let batch = cfg.batch_dir.clone().ok_or_else(|| Error::Config("no batch directory (--batch or batch_dir)".into()))?;
    let mut registry = build_registry(&cfg)?;
    if !a.analytic.is_empty() {
        let keep: BTreeSet<&str> = a.analytic.iter().map(String::as_str).collect();
        if let Some(unknown) = keep.iter().find(|id| !registry.execution_order().contains(id)) {
            return Err(Error::Config(format!("analytic {unknown:?} is not enabled")));
        }
        let mut narrowed = scanwheel::engine::Registry::new();
        for e in registry.entries().iter().filter(|e| keep.contains(e.descriptor.analytic_id.as_str())) {
            narrowed.register(e.descriptor.clone(), e.implementation.clone())?;
        }
        registry = narrowed;
    }
    let store = DocumentStore::open(&store_root)?;
    let summary = run_wheel(&batch, &registry, &store, &cfg.options()?)?;
    eprintln!(
        "{}: {} processed, {} deferred, {} rejected, {} documents ({} errors)",
        summary.run_id,
        summary.scenes_processed,
        summary.scenes_deferred.len(),
        summary.scenes_rejected.len(),
        summary.documents_written,
        summary.error_documents
    );
    print_json(&serde_json::to_value(&summary).expect("summary serialises"));
    Ok(if summary.deadline_exceeded { 2 } else { 0 })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Manifest {
    List(Vec<LabeledRegion>),
    Wrapped { regions: Vec<LabeledRegion> },
}

fn cmd_train(a: TrainArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Error::Config(format!("{}: {e}", a.manifest.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.manifest.display())))?;
    let mut regions = match manifest {
        Manifest::List(r) | Manifest::Wrapped { regions: r } => r,
    };
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    for r in &mut regions {
        if r.bundle.is_relative() {
            r.bundle = base.join(&r.bundle);
        }
    }
    let listed: BTreeSet<LandClass> = regions.iter().map(|r| r.class).collect();
    let missing: Vec<&str> = LandClass::ALL.iter().filter(|c| !listed.contains(c)).map(|c| c.name()).collect();
    if !missing.is_empty() {
        return Err(Error::InsufficientData(format!("manifest has no regions for {}", missing.join(", "))));
    }
    let cfg = load_config(&a.config)?;
    let ts = build_training_set(&regions, &cfg.intervals()?, DEFAULT_RATIO_CAP)?;
    for w in &ts.warnings {
        eprintln!("warning: {w}");
    }
    let model = train_classifier(&ts, &TrainParams { c: a.c, epochs: a.epochs, seed: a.seed })?;
    let ts_path = a.training_set.unwrap_or_else(|| {
        let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
        a.out.with_file_name(format!("{stem}.training.jsonl"))
    });
    for p in [&a.out, &ts_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
        }
    }
    std::fs::write(&ts_path, ts.to_jsonl()).map_err(|e| Error::Config(format!("{}: {e}", ts_path.display())))?;
    model.save(&a.out)?;
    let counts: serde_json::Map<String, Value> = ts.class_counts.iter().map(|(c, n)| (c.name().to_string(), json!(n))).collect();
    print_json(&json!({
        "model": a.out,
        "training_set": ts_path,
        "class_counts": counts,
        "skipped_nodata": ts.skipped_nodata,
        "clamped_ratios": ts.clamped_ratios,
        "training_accuracy": model.training_accuracy,
        "warnings": ts.warnings,
    }));
    Ok(0)
}

fn cmd_classify(a: ClassifyArgs) -> Result<u8> {
    let cfg = load_config(&a.config)?;
    let model = ClassifierModel::load(&a.model)?;
    let mut scene = load_scene(&a.scene)?;
    let validation = validate_scene(&mut scene);
    if !validation.ok {
        return Err(Error::Metadata(format!("scene {} failed validation", a.scene.display())));
    }
    let scene_id = scene.metadata.scene_id.clone();
    let prepared = PreparedScene::new(scene, cfg.intervals()?)?;
    let map = classify_scene(&prepared, &model)?;
    if let Some(dir) = &a.out {
        map.write(dir)?;
    }
    let mut out = json!({"scene_id": scene_id, "class_map": map});
    if let Some(path) = &a.truth {
        let truth = load_truth(path)?;
        if truth.class_codes.len() != map.labels.len() {
            return Err(Error::Format(format!("truth {} does not match the scene grid", path.display())));
        }
        let planted: BTreeSet<usize> =
            truth.anomalies.iter().flat_map(|t| t.pixels.iter().chain(&t.halo)).map(|p| p.row * map.cols + p.col).collect();
        let (mut hit, mut n) = (0usize, 0usize);
        for (p, (&want, &got)) in truth.class_codes.iter().zip(&map.labels).enumerate() {
            if want == NODATA_LABEL || got == NODATA_LABEL || planted.contains(&p) {
                continue;
            }
            n += 1;
            hit += (want == got) as usize;
        }
        let accuracy = if n == 0 { Value::Null } else { json!(hit as f64 / n as f64) };
        let expected: serde_json::Map<String, Value> =
            LandClass::ALL.iter().map(|&c| (c.name().to_string(), json!(truth.class_fraction(c)))).collect();
        out["truth"] = json!({"pixels_scored": n, "accuracy": accuracy, "expected_coverage": expected});
    }
    print_json(&out);
    Ok(0)
}

fn cmd_report(a: ReportArgs) -> Result<u8> {
    let store = a.store.open()?;
    let out_root = a.out.clone().unwrap_or_else(|| store.root().to_path_buf());
    if a.overview {
        let (from, to) = time_range(&a.from, &a.to)?;
        if let (Some(f), Some(t)) = (from, to) {
            if f > t {
                return Err(Error::Filter("--from is after --to".into()));
            }
        }
        let (report, dir) = write_overview(&store, &out_root, Timeframe { from, to }, a.run.as_deref())?;
        print_json(&json!({
            "overview_json": dir.join("overview.json"),
            "overview_html": dir.join("overview.html"),
            "report": report,
        }));
        return Ok(0);
    }
    let scene = a.scene.expect("clap requires --scene without --overview");
    let run = match a.run {
        Some(r) => r,
        None => {
            let docs = store.query(&DocumentFilter { scene_id: Some(scene.clone()), ..Default::default() })?;
            docs.iter()
                .max_by(|x, y| x.produced_at.cmp(&y.produced_at).then_with(|| x.run_id.cmp(&y.run_id)))
                .map(|d| d.run_id.clone())
                .ok_or_else(|| Error::NotFound(format!("no documents for scene {scene}")))?
        }
    };
    let written = write_scene_report(&store, &out_root, &scene, &run)?;
    print_json(&json!({
        "scene_id": scene,
        "run_id": run,
        "json": written.json,
        "html": written.html,
        "overlays": written.overlays,
    }));
    Ok(0)
}

fn cmd_query(a: QueryArgs) -> Result<u8> {
    let (from, to) = time_range(&a.from, &a.to)?;
    let filter = DocumentFilter {
        scene_id: a.scene,
        analytic_id: a.analytic,
        run_id: a.run,
        from,
        to,
    };
    filter.validate()?;
    let store = a.store.open()?;
    let docs = store.query(&filter)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for d in &docs {
        match writeln!(out, "{}", serde_json::to_string(d).expect("document serialises")) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(0),
            r => r.map_err(|e| Error::Format(e.to_string()))?,
        }
    }
    eprintln!("{} documents", docs.len());
    Ok(0)
}

fn cmd_validate(a: ValidateArgs) -> Result<u8> {
    let mut scene = load_scene(&a.scene)?;
    let before = scene.nodata.iter().filter(|&&m| m).count();
    let report = validate_scene(&mut scene);
    let after = scene.nodata.iter().filter(|&&m| m).count();
    print_json(&json!({
        "scene_id": scene.metadata.scene_id,
        "rows": scene.rows,
        "cols": scene.cols,
        "bands": scene.band_count(),
        "masked_before": before,
        "masked_after": after,
        "report": report,
    }));
    Ok(if report.ok { 0 } else { 1 })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Recipes {
    Many(Vec<SceneRecipe>),
    One(Box<SceneRecipe>),
}

fn cmd_generate(a: GenerateArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.recipe).map_err(|e| Error::Config(format!("{}: {e}", a.recipe.display())))?;
    let recipes = match serde_json::from_str(&text).map_err(|e| Error::Recipe(format!("{}: {e}", a.recipe.display())))? {
        Recipes::Many(v) => v,
        Recipes::One(r) => vec![*r],
    };
    let mut written = Vec::new();
    for (i, mut recipe) in recipes.into_iter().enumerate() {
        if let Some(s) = a.seed {
            recipe.seed = s + i as u64;
        }
        let (bundle, truth) = generate(&recipe, &a.out)?;
        written.push(json!({
            "scene_id": truth.scene_id,
            "bundle": bundle,
            "truth": scanwheel::synth::truth_path(&a.out, &truth.scene_id),
            "anomalies": truth.anomalies.iter().map(|t| t.pixels.len()).collect::<Vec<_>>(),
        }));
    }
    print_json(&Value::Array(written));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Train(a) => cmd_train(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Report(a) => cmd_report(a),
        Command::Query(a) => cmd_query(a),
        Command::ValidateScene(a) => cmd_validate(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
