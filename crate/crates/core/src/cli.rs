//! Command-line front end. `flk <command> --help` lists the flags of each command.
//!
//! Every run prints a one-line JSON run report on standard error (or to `--report`).
//! Failures print `{"error": {"code", "message"}}` on standard error and exit with 1
//! for invalid input or 2 for numerical failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fitter::{fit_monocular, FitOptions};
use crate::geometry::{sample_camera_with_stats, CameraSpaceConfig, SampleStats, SamplerOptions};
use crate::gradcheck;
use crate::io::{
    check_version, from_json, read_input, read_json, to_json, write_atomic, CameraSamplesDoc,
    DefinitionDoc, DetectionsDoc, EvalDoc, FitDoc, FitEntry, LiftDoc, MapDoc, RigDoc, SamplesDoc, TemplateDoc, Versioned,
};
use crate::lifting::{lift_multiview, LiftOptions, MultiViewObservations};
use crate::metrics::{column_cost, nme, nmlc, remap_predictions, samples_from_lift, Assignment, EvalSample};
use crate::synthgen::{canonical_face_layout, make_default_rig, make_scene_with_points, NoiseConfig, Scene, SCHEME_98};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "flk", version, about = "Facial landmark lifting, fitting and evaluation")]
pub struct Cli {
    /// Write the run report here instead of standard error.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the default 41-view rig.
    Rig(RigArgs),
    /// Render a seeded synthetic scene through a rig.
    Synth(SynthArgs),
    /// Lift multi-view detections to 3D.
    Lift(LiftArgs),
    /// Fit pose and shape to monocular detections.
    Fit(FitArgs),
    /// Evaluate predictions with NME or NMLC.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Draw cameras from the augmented camera space.
    SampleCameras(SampleCamerasArgs),
}

#[derive(Debug, Args)]
pub struct RigArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    None,
    Gaussian,
    Laplacian,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "none")]
    pub noise: NoiseArg,
    /// Noise standard deviation in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Probability that a visible detection is dropped.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Rig JSON; the default rig when omitted.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long, default_value_t = SCHEME_98)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    /// Scene or observations JSON (repeatable); standard input when omitted.
    #[arg(long)]
    pub scene: Vec<PathBuf>,
    /// Output file, or output directory when several scenes are given.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Lift the pupils too (they are excluded by default).
    #[arg(long)]
    pub keep_pupils: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write the lifted landmarks as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Detections JSON or a scene (every view becomes an instance); standard input when omitted.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Template JSON; the canonical layout when omitted.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Fit only this view of a scene or entry of a detections file.
    #[arg(long)]
    pub view: Option<usize>,
    /// Recorded in the report; fitting itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_off: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Nme,
    Nmlc,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub metric: Metric,
    /// Samples JSON, or a directory of per-image sample files.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Lift result JSON; standard input when neither this nor --samples is given.
    #[arg(long)]
    pub lift: Option<PathBuf>,
    /// Scene supplying cameras and ground truth for a lift result.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Definition (vertex index per landmark) for NME.
    #[arg(long)]
    pub definition: Option<PathBuf>,
    /// Landmark map applied to the predictions first.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-landmark errors as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleCamerasArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub wall_time_ms: f64,
    pub outputs: Vec<String>,
    pub summary: Value,
}

struct Outcome {
    config: Value,
    seed: Option<u64>,
    outputs: Vec<String>,
    summary: Value,
    /// Exit code 2 even though the command completed.
    numerical_failure: bool,
    /// A partial failure to report after the outputs are written.
    failure: Option<(crate::io::ErrorInfo, i32)>,
}

impl Outcome {
    fn new(config: Value, seed: Option<u64>) -> Self {
        Self {
            config,
            seed,
            outputs: vec![],
            summary: Value::Null,
            numerical_failure: false,
            failure: None,
        }
    }
}

/// Writes to `path` atomically or prints to standard output.
fn emit(out: Option<&Path>, text: &str, outcome: &mut Outcome) -> Result<()> {
    match out {
        Some(p) => {
            write_atomic(p, text)?;
            outcome.outputs.push(p.display().to_string());
        }
        None => {
            print!("{text}");
            outcome.outputs.push("<stdout>".into());
        }
    }
    Ok(())
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>, outcome: &mut Outcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    write_atomic(path, &String::from_utf8_lossy(&bytes))?;
    outcome.outputs.push(path.display().to_string());
    Ok(())
}

#[derive(Serialize)]
struct LandmarkRow {
    index: usize,
    x: f64,
    y: f64,
    z: f64,
    valid: bool,
}

fn landmark_rows(set: &crate::LandmarkSet3D) -> Vec<LandmarkRow> {
    set.points
        .iter()
        .zip(&set.valid)
        .enumerate()
        .map(|(index, (p, &valid))| LandmarkRow {
            index,
            x: p.x,
            y: p.y,
            z: p.z,
            valid,
        })
        .collect()
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn cmd_rig(args: &RigArgs) -> Result<Outcome> {
    let rig = make_default_rig();
    let mut outcome = Outcome::new(json!({}), None);
    emit(args.out.as_deref(), &to_json(&RigDoc { rig: rig.clone() })?, &mut outcome)?;
    outcome.summary = json!({ "views": rig.len() });
    Ok(outcome)
}

fn cmd_synth(args: &SynthArgs) -> Result<Outcome> {
    let rig = match &args.rig {
        Some(p) => read_json::<RigDoc>(p)?.rig,
        None => make_default_rig(),
    };
    let noise = match args.noise {
        NoiseArg::None => NoiseConfig::none(),
        NoiseArg::Gaussian => NoiseConfig::gaussian(args.sigma),
        NoiseArg::Laplacian => NoiseConfig::laplacian(args.sigma),
    }
    .with_dropout(args.dropout);
    let scene = make_scene_with_points(args.seed, args.points, &rig, &noise, &CameraSpaceConfig::default())?;
    let mut outcome = Outcome::new(json!({ "noise": noise, "points": args.points, "views": rig.len() }), Some(args.seed));
    emit(args.out.as_deref(), &to_json(&scene)?, &mut outcome)?;
    let detections: usize = scene.detections.iter().map(|d| d.valid_count()).sum();
    outcome.summary = json!({ "views": rig.len(), "detections": detections });
    Ok(outcome)
}

/// Observations plus, for a scene, its ground truth.
fn parse_lift_input(text: &str) -> Result<(MultiViewObservations, Option<Scene>)> {
    let value: Value = serde_json::from_str(text)?;
    check_version(&value)?;
    if value.get("gt_landmarks3d").is_some() {
        let scene: Scene = from_json(text)?;
        Ok((scene.observations(), Some(scene)))
    } else {
        Ok((from_json(text)?, None))
    }
}

fn cmd_lift(args: &LiftArgs) -> Result<Outcome> {
    let mut opts = LiftOptions::default();
    if args.keep_pupils {
        opts.excluded_indices.clear();
    }
    if let Some(m) = args.max_iters {
        opts.max_iterations = m;
    }
    let inputs: Vec<Option<&Path>> = if args.scene.is_empty() {
        vec![None]
    } else {
        args.scene.iter().map(|p| Some(p.as_path())).collect()
    };
    let many = inputs.len() > 1;
    if many && args.csv.is_some() {
        return Err(Error::InvalidConfig("--csv needs a single scene".into()));
    }
    let out_dir = match (&args.out, many) {
        (Some(d), true) => {
            std::fs::create_dir_all(d).map_err(|source| Error::Io {
                path: d.display().to_string(),
                source,
            })?;
            Some(d.clone())
        }
        (None, true) => return Err(Error::InvalidConfig("--out <dir> is required with several scenes".into())),
        _ => None,
    };
    opts.parallel = !many && args.jobs > 1;
    let pool = thread_pool(args.jobs)?;
    let docs: Vec<Result<LiftDoc>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                let (obs, scene) = parse_lift_input(&read_input(*input)?)?;
                let result = lift_multiview(&obs, &opts)?;
                info!("lifted {} landmarks in at most {} iterations", result.landmarks3d.valid_count(), result.iterations);
                Ok(LiftDoc {
                    result,
                    cameras: obs.views.iter().map(|v| v.camera).collect(),
                    gt_landmarks3d: scene.map(|s| s.gt_landmarks3d),
                })
            })
            .collect()
    });

    let mut outcome = Outcome::new(json!({ "lift": opts, "jobs": args.jobs }), None);
    let mut summaries = vec![];
    for (input, doc) in inputs.iter().zip(docs) {
        let doc = doc?;
        let text = to_json(&doc)?;
        match &out_dir {
            Some(dir) => {
                let stem = input.and_then(|p| p.file_stem()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "stdin".into());
                emit(Some(&dir.join(format!("{stem}.lift.json"))), &text, &mut outcome)?;
            }
            None => emit(args.out.as_deref(), &text, &mut outcome)?,
        }
        if let Some(csv_path) = &args.csv {
            write_csv(csv_path, landmark_rows(&doc.result.landmarks3d), &mut outcome)?;
        }
        let rms_gt = doc.gt_landmarks3d.as_ref().and_then(|gt| doc.result.landmarks3d.rms_distance(gt).ok());
        summaries.push(json!({
            "lifted": doc.result.landmarks3d.valid_count(),
            "iterations": doc.result.iterations,
            "final_cost": doc.result.final_cost,
            "rms_to_ground_truth": rms_gt,
        }));
    }
    outcome.summary = json!({ "scenes": summaries });
    Ok(outcome)
}

fn parse_detections(text: &str) -> Result<DetectionsDoc> {
    let value: Value = serde_json::from_str(text)?;
    check_version(&value)?;
    if value.get("gt_landmarks3d").is_some() {
        let scene: Scene = from_json(text)?;
        Ok(DetectionsDoc {
            detections: scene.detections,
            config: scene.config,
        })
    } else {
        from_json(text)
    }
}

fn cmd_fit(args: &FitArgs) -> Result<Outcome> {
    let doc = parse_detections(&read_input(args.detections.as_deref())?)?;
    let n = doc.detections.first().ok_or(Error::Empty("detections"))?.len();
    let template = match &args.template {
        Some(p) => read_json::<TemplateDoc>(p)?,
        None => {
            let (landmarks3d, normals) = canonical_face_layout(n)?;
            TemplateDoc { landmarks3d, normals }
        }
    };
    let mut opts = FitOptions::default();
    if let Some(l) = args.lambda_off {
        opts.lambda_off = l;
    }
    if let Some(m) = args.max_iters {
        opts.max_iterations = m;
    }
    doc.config.validate()?;
    let instances: Vec<usize> = match args.view {
        Some(v) if v >= doc.detections.len() => {
            return Err(Error::IndexOutOfRange {
                index: v,
                len: doc.detections.len(),
            })
        }
        Some(v) => vec![v],
        None => (0..doc.detections.len()).collect(),
    };
    let pool = thread_pool(args.jobs)?;
    let mut failures = vec![];
    let fits: Vec<FitEntry> = pool.install(|| {
        instances
            .par_iter()
            .map(|&i| {
                let r = fit_monocular(&doc.detections[i], &template.landmarks3d, &template.normals, &doc.config, &opts);
                match r {
                    Ok(f) => (FitEntry { instance: i, result: Some(f), error: None }, None),
                    Err(e) => {
                        let code = exit_code(&e);
                        (FitEntry { instance: i, result: None, error: Some((&e).into()) }, Some((e, code)))
                    }
                }
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .map(|(entry, err)| {
        if let Some((e, code)) = err {
            warn!("instance {}: {e}", entry.instance);
            failures.push((entry.error.clone().expect("set with err"), code));
        }
        entry
    })
    .collect();
    let mut outcome = Outcome::new(json!({ "fit": opts, "jobs": args.jobs }), args.seed);
    if let Some(csv_path) = &args.csv {
        #[derive(Serialize)]
        struct FitRow {
            instance: usize,
            index: usize,
            x: f64,
            y: f64,
            z: f64,
        }
        let rows: Vec<FitRow> = fits
            .iter()
            .filter_map(|e| e.result.as_ref().map(|f| (e.instance, f)))
            .flat_map(|(instance, f)| {
                landmark_rows(&f.landmarks3d).into_iter().map(move |r| FitRow {
                    instance,
                    index: r.index,
                    x: r.x,
                    y: r.y,
                    z: r.z,
                })
            })
            .collect();
        write_csv(csv_path, rows, &mut outcome)?;
    }
    let summary = json!({
        "instances": fits.len(),
        "failed": fits.iter().filter(|e| e.error.is_some()).map(|e| e.instance).collect::<Vec<_>>(),
        "final_costs": fits.iter().map(|e| e.result.as_ref().map(|f| f.final_cost)).collect::<Vec<_>>(),
    });
    // a failed instance decides the exit code, after the document is written
    emit(args.out.as_deref(), &to_json(&FitDoc { fits })?, &mut outcome)?;
    outcome.summary = summary;
    outcome.failure = failures.into_iter().next();
    Ok(outcome)
}

fn read_samples_dir(dir: &Path) -> Result<Vec<EvalSample>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(|p| read_json::<EvalSample>(p)).collect()
}

/// Samples and the reference definition implied by the input, if any.
fn load_samples(args: &EvalArgs) -> Result<(Vec<EvalSample>, Option<Assignment>)> {
    if let Some(p) = &args.samples {
        let samples = if p.is_dir() {
            read_samples_dir(p)?
        } else {
            read_json::<SamplesDoc>(p)?.samples
        };
        return Ok((samples, None));
    }
    let text = read_input(args.lift.as_deref())?;
    let value: Value = serde_json::from_str(&text)?;
    check_version(&value)?;
    if value.get("samples").is_some() {
        return Ok((from_json::<SamplesDoc>(&text)?.samples, None));
    }
    let lift: LiftDoc = from_json(&text)?;
    let (cameras, gt) = match &args.scene {
        Some(p) => {
            let scene: Scene = read_json(p)?;
            (scene.cameras, scene.gt_landmarks3d)
        }
        None => (
            lift.cameras,
            lift.gt_landmarks3d
                .ok_or_else(|| Error::InvalidConfig("lift result has no ground truth; pass --scene".into()))?,
        ),
    };
    let (samples, kept) = samples_from_lift(&cameras, &gt, &lift.result.landmarks3d)?;
    Ok((samples, Some(kept)))
}

#[derive(Serialize)]
struct EvalRow {
    landmark: usize,
    vertex: usize,
    mean_error: f64,
}

fn cmd_eval(args: &EvalArgs) -> Result<Outcome> {
    let (mut samples, mut implied) = load_samples(args)?;
    if let Some(p) = &args.map {
        let map = read_json::<MapDoc>(p)?.map;
        // Lift samples only hold the kept landmarks, so translate landmark indices
        // into prediction positions; each landmark's reference vertex is itself.
        let positions = match &implied {
            Some(kept) => map
                .iter()
                .enumerate()
                .map(|(entry, &i)| {
                    kept.0.iter().position(|&k| k == i).ok_or(Error::UnmappedIndex {
                        entry,
                        index: i,
                        len: kept.0.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => map.clone(),
        };
        samples = remap_predictions(&samples, &positions)?;
        implied = implied.map(|_| Assignment(map));
    }
    let definition = match &args.definition {
        Some(p) => Some(read_json::<DefinitionDoc>(p)?.assignment),
        None => implied,
    };
    let (value, assignment) = match args.metric {
        Metric::Nmlc => nmlc(&samples)?,
        Metric::Nme => {
            let k = match definition {
                Some(k) => k,
                None => Assignment::identity(samples.first().ok_or(Error::Empty("samples"))?.preds.len()),
            };
            (nme(&samples, &k)?, k)
        }
    };
    let metric = match args.metric {
        Metric::Nme => "nme",
        Metric::Nmlc => "nmlc",
    };
    let mut outcome = Outcome::new(json!({ "metric": metric }), None);
    if let Some(csv_path) = &args.csv {
        let m = samples.len() as f64;
        let rows: Vec<EvalRow> = assignment
            .0
            .iter()
            .enumerate()
            .map(|(n, &k)| EvalRow {
                landmark: n,
                vertex: k,
                mean_error: column_cost(&samples, n, k) / m,
            })
            .collect();
        write_csv(csv_path, rows, &mut outcome)?;
    }
    let doc = EvalDoc {
        metric: metric.into(),
        value,
        value_x100: value * 100.0,
        landmarks: assignment.0.len(),
        samples: samples.len(),
        assignment,
    };
    emit(args.out.as_deref(), &to_json(&doc)?, &mut outcome)?;
    outcome.summary = json!({ "value_x100": doc.value_x100 });
    Ok(outcome)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<Outcome> {
    let report = gradcheck::run(args.seed, args.draws)?;
    let passed = report.max() < GRADCHECK_TOLERANCE;
    let mut outcome = Outcome::new(json!({ "draws": args.draws }), Some(args.seed));
    #[derive(Serialize)]
    struct Doc {
        #[serde(flatten)]
        report: gradcheck::GradcheckReport,
        tolerance: f64,
        passed: bool,
    }
    let doc = Doc {
        report,
        tolerance: GRADCHECK_TOLERANCE,
        passed,
    };
    emit(args.out.as_deref(), &to_json(&doc)?, &mut outcome)?;
    outcome.summary = json!({ "max_relative_error": report.max(), "passed": passed });
    outcome.numerical_failure = !passed;
    Ok(outcome)
}

fn cmd_sample_cameras(args: &SampleCamerasArgs) -> Result<Outcome> {
    use rand::SeedableRng;
    let cfg = CameraSpaceConfig::default();
    let (face, _) = canonical_face_layout(SCHEME_98)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let mut stats = SampleStats::default();
    let mut poses = Vec::with_capacity(args.count);
    for _ in 0..args.count {
        let (pose, s) = sample_camera_with_stats(&mut rng, &cfg, &face, &SamplerOptions::default())?;
        stats += s;
        poses.push(pose);
    }
    let mut outcome = Outcome::new(json!({ "count": args.count, "sampler": SamplerOptions::default() }), Some(args.seed));
    if let Some(csv_path) = &args.csv {
        #[derive(Serialize)]
        struct PoseRow {
            alpha_deg: f64,
            beta_deg: f64,
            gamma_deg: f64,
            dt_x: f64,
            dt_y: f64,
            dt_z: f64,
        }
        let rows = poses.iter().map(|p| PoseRow {
            alpha_deg: p.alpha_deg,
            beta_deg: p.beta_deg,
            gamma_deg: p.gamma_deg,
            dt_x: p.delta_t.x,
            dt_y: p.delta_t.y,
            dt_z: p.delta_t.z,
        });
        write_csv(csv_path, rows, &mut outcome)?;
    }
    let acceptance = stats.angle_accepts as f64 / stats.angle_draws.max(1) as f64;
    emit(args.out.as_deref(), &to_json(&CameraSamplesDoc { config: cfg, poses, stats })?, &mut outcome)?;
    outcome.summary = json!({ "angle_acceptance_rate": acceptance, "stats": stats });
    Ok(outcome)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Rig(_) => "rig",
        Command::Synth(_) => "synth",
        Command::Lift(_) => "lift",
        Command::Fit(_) => "fit",
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::SampleCameras(_) => "sample-cameras",
    }
}

fn error_json(code: &str, message: &str) -> String {
    json!({ "error": { "code": code, "message": message } }).to_string()
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLK_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{}", e.render());
            eprintln!("{}", error_json("usage", &e.kind().to_string()));
            return 1;
        }
    };
    let start = Instant::now();
    let result = match &cli.command {
        Command::Rig(a) => cmd_rig(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Lift(a) => cmd_lift(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::SampleCameras(a) => cmd_sample_cameras(a),
    };
    match result {
        Ok(outcome) => {
            let report = RunReport {
                command: command_name(&cli.command).into(),
                config: outcome.config,
                seed: outcome.seed,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
                outputs: outcome.outputs,
                summary: outcome.summary,
            };
            let written = match &cli.report {
                Some(p) => to_json(&report).and_then(|t| write_atomic(p, &t)),
                None => {
                    let v = serde_json::to_value(Versioned::new(&report)).unwrap_or(Value::Null);
                    eprintln!("{v}");
                    Ok(())
                }
            };
            if let Err(e) = written {
                eprintln!("{}", error_json(e.code(), &e.to_string()));
                return exit_code(&e);
            }
            if let Some((f, code)) = &outcome.failure {
                eprintln!("{}", error_json(&f.code, &f.message));
                return *code;
            }
            if outcome.numerical_failure {
                2
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(e.code(), &e.to_string()));
            exit_code(&e)
        }
    }
}
