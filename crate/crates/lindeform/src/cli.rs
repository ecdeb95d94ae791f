//! The `lindeform` command line.
//!
//! Every command prints one JSON summary line on success. Exit codes: 0
//! success, 1 usage error, 2 data error, 3 numerical failure.

use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use lindeform_core::datagen::{gen_dataset, Family, Split};
use lindeform_core::eval::{evaluate, EvalConfig};
use lindeform_core::training::{train_with, TrainError, TrainShape};

use crate::config::{env_seed, parse_file, resolve_seed, Settings};
use crate::dataset::{read_dataset, write_dataset};
use crate::formats::{
    to_json, DataInfo, DictionaryFile, HandleEdit, ModelInfo, PointsResponse, ReportFile,
};
use crate::xyz::{read_xyz, write_xyz};
use crate::{checkpoint, ops, read_file, service, write_atomic, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lindeform", version, about = "Learned linear deformation spaces for point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a procedural dataset directory.
    Datagen(DatagenArgs),
    /// Train a model on the train split of a dataset.
    Train(TrainArgs),
    /// Deform a source cloud toward a target: `d(src → tgt)`.
    Deform(DeformArgs),
    /// Apply the deformation `src → tgt` to `dst`.
    Transfer(TransferArgs),
    /// Project handle edits of a dataset shape onto its deformation space.
    Project(ProjectArgs),
    /// Evaluate a model on the test split.
    Eval(EvalArgs),
    /// Export per-element deformation sweeps.
    ExportDict(ExportArgs),
    /// Serve the HTTP editing API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct DatagenArgs {
    #[arg(long)]
    pub family: String,
    #[arg(long, default_value_t = 512)]
    pub count: usize,
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Training flags mirror the config file keys (with dashes).
#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the per-step loss history as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub w_sparsity: Option<String>,
    #[arg(long)]
    pub use_reflection: Option<String>,
    #[arg(long)]
    pub reflection_plane: Option<String>,
    #[arg(long)]
    pub project_in_training: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub steps_per_epoch: Option<String>,
    #[arg(long)]
    pub batch_pairs: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub self_pair_prob: Option<String>,
    #[arg(long)]
    pub normalize_rotation: Option<String>,
    #[arg(long)]
    pub encoder_point: Option<String>,
    #[arg(long)]
    pub encoder_head: Option<String>,
    #[arg(long)]
    pub dict_point: Option<String>,
    #[arg(long)]
    pub dict_head: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<String>,
}

impl TrainArgs {
    fn flags(&self) -> Vec<(String, String)> {
        let all = [
            ("n", &self.n),
            ("k", &self.k),
            ("variant", &self.variant),
            ("w_sparsity", &self.w_sparsity),
            ("use_reflection", &self.use_reflection),
            ("reflection_plane", &self.reflection_plane),
            ("project_in_training", &self.project_in_training),
            ("learning_rate", &self.learning_rate),
            ("epochs", &self.epochs),
            ("steps_per_epoch", &self.steps_per_epoch),
            ("batch_pairs", &self.batch_pairs),
            ("seed", &self.seed),
            ("self_pair_prob", &self.self_pair_prob),
            ("normalize_rotation", &self.normalize_rotation),
            ("encoder_point", &self.encoder_point),
            ("encoder_head", &self.encoder_head),
            ("dict_point", &self.dict_point),
            ("dict_head", &self.dict_head),
            ("checkpoint_every", &self.checkpoint_every),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

#[derive(Args, Debug)]
pub struct DeformArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub dst: PathBuf,
    /// `.json` writes the service's `{points}` body; anything else writes xyz.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub shape: String,
    /// `HANDLE=VALUE`, repeatable.
    #[arg(long = "edit", value_name = "HANDLE=VALUE")]
    pub edits: Vec<String>,
    /// Writes the service's `{z_hat, points}` body.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the projected cloud as xyz.
    #[arg(long)]
    pub out_xyz: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fitting_pairs: Option<usize>,
    #[arg(long)]
    pub parallelogram_triples: Option<usize>,
    #[arg(long)]
    pub two_way_candidates: Option<usize>,
    #[arg(long)]
    pub two_way_keep: Option<usize>,
    #[arg(long)]
    pub mmd_targets: Option<usize>,
    #[arg(long)]
    pub mmd_pairs: Option<usize>,
    #[arg(long)]
    pub symmetry_trials: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Source cloud; alternatively `--data` with `--shape`.
    #[arg(long)]
    pub src: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.2)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Directory of static files served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

/// Process environment the CLI reads.
#[derive(Clone, Debug, Default)]
pub struct Env {
    pub seed: Option<String>,
}

impl Env {
    pub fn from_process() -> Self {
        Env { seed: env_seed() }
    }
}

/// Parses `argv` (including the program name) and runs the command with
/// the process environment.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &Env::from_process(), &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, env: &Env, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
            return code;
        }
    };
    match execute(cli.command, env, err) {
        Ok(summary) => {
            let _ = writeln!(out, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command, env: &Env, err: &mut dyn Write) -> Result<Value> {
    match cmd {
        Command::Datagen(a) => datagen(a, env),
        Command::Train(a) => train(a, env, err),
        Command::Deform(a) => deform(a),
        Command::Transfer(a) => transfer(a),
        Command::Project(a) => project(a),
        Command::Eval(a) => eval(a, env),
        Command::ExportDict(a) => export_dict(a),
        Command::Serve(a) => serve(a, err),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn datagen(a: DatagenArgs, env: &Env) -> Result<Value> {
    let family = Family::parse(&a.family).ok_or_else(|| Error::Usage(format!("unknown family {:?}", a.family)))?;
    if a.count < 2 || a.n == 0 {
        return Err(Error::Usage("--count must be at least 2 and --n positive".into()));
    }
    let seed = resolve_seed(a.seed, env.seed.as_deref(), 0)?;
    let data = gen_dataset(family, a.count, a.n, seed)?;
    write_dataset(&a.out, &data)?;
    let m = &data.manifest;
    Ok(json!({
        "command": "datagen",
        "family": family.name(),
        "count": m.count,
        "n": m.n,
        "seed": seed,
        "splits": {
            "train": m.ids(Split::Train).len(),
            "val": m.ids(Split::Val).len(),
            "test": m.ids(Split::Test).len(),
        },
        "out": path_str(&a.out),
    }))
}

fn train(a: TrainArgs, env: &Env, err: &mut dyn Write) -> Result<Value> {
    let file = match &a.config {
        Some(p) => {
            let bytes = read_file(p)?;
            let text = String::from_utf8(bytes).map_err(|_| Error::Usage(format!("{}: not UTF-8", p.display())))?;
            parse_file(&text)?
        }
        None => Vec::new(),
    };
    let settings = Settings::resolve(&file, env.seed.as_deref(), &a.flags())?;
    let data = read_dataset(&a.data)?;
    let cfg = settings.train_config(data.manifest.n)?;
    let need_handles = cfg.w_sparsity > 0.0 || cfg.project_in_training;
    let shapes = data
        .split(Split::Train)
        .into_iter()
        .map(|s| {
            if need_handles {
                TrainShape::with_handles(s.cloud.clone(), &s.handle_space)
            } else {
                Ok(TrainShape::new(s.cloud.clone()))
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if shapes.len() < 2 {
        return Err(Error::format("the train split needs at least two shapes"));
    }
    let mut save_error = None;
    let every = settings.checkpoint_every;
    let outcome = train_with(&shapes, &cfg, |r| {
        if (r.epoch + 1) % every == 0 {
            if let Err(e) = checkpoint::save(&a.out, r.model) {
                save_error = Some(e);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    });
    if let Some(e) = save_error {
        return Err(e);
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::Diverged { step, last_good, history }) => {
            checkpoint::save(&a.out, &last_good)?;
            if let Some(h) = &a.history {
                write_atomic(h, &to_json(&history)?)?;
            }
            let _ = writeln!(err, "saved the last finite model to {}", a.out.display());
            return Err(Error::Diverged { step });
        }
        Err(TrainError::Core(e)) => return Err(e.into()),
    };
    checkpoint::save(&a.out, &outcome.model)?;
    if let Some(h) = &a.history {
        write_atomic(h, &to_json(&outcome.history)?)?;
    }
    let last = outcome.history.last().copied().unwrap_or_default();
    Ok(json!({
        "command": "train",
        "out": path_str(&a.out),
        "shapes": shapes.len(),
        "epochs": cfg.epochs,
        "steps": outcome.history.len(),
        "parameters": outcome.model.num_parameters(),
        "seed": cfg.seed,
        "final": last,
    }))
}

fn deform(a: DeformArgs) -> Result<Value> {
    let model = checkpoint::load(&a.model)?;
    let src = read_xyz(&a.src)?;
    let tgt = read_xyz(&a.tgt)?;
    let out = model.deform(&src, &tgt)?;
    write_xyz(&a.out, &out)?;
    Ok(json!({"command": "deform", "points": out.len(), "out": path_str(&a.out)}))
}

fn transfer(a: TransferArgs) -> Result<Value> {
    let model = checkpoint::load(&a.model)?;
    let src = read_xyz(&a.src)?;
    let tgt = read_xyz(&a.tgt)?;
    let dst = read_xyz(&a.dst)?;
    let out = model.transfer(&src, &tgt, &dst)?;
    if a.out.extension().is_some_and(|e| e == "json") {
        write_atomic(&a.out, &to_json(&PointsResponse::from(&out))?)?;
    } else {
        write_xyz(&a.out, &out)?;
    }
    Ok(json!({"command": "transfer", "points": out.len(), "out": path_str(&a.out)}))
}

pub fn parse_edit(s: &str) -> Result<HandleEdit> {
    let bad = || Error::Usage(format!("--edit expects HANDLE=VALUE, got {s:?}"));
    let (h, v) = s.split_once('=').ok_or_else(bad)?;
    let handle = h.trim().parse().map_err(|_| bad())?;
    let value: f64 = v.trim().parse().map_err(|_| bad())?;
    if !value.is_finite() {
        return Err(bad());
    }
    Ok(HandleEdit { handle, value })
}

fn project(a: ProjectArgs) -> Result<Value> {
    let edits = a.edits.iter().map(|s| parse_edit(s)).collect::<Result<Vec<_>>>()?;
    let model = checkpoint::load(&a.model)?;
    let data = read_dataset(&a.data)?;
    let i = data
        .manifest
        .shapes
        .iter()
        .position(|e| e.id == a.shape)
        .ok_or_else(|| Error::NotFound(format!("shape {:?}", a.shape)))?;
    let shape = &data.shapes[i];
    let residual = ops::residual_for(&model, &shape.cloud)?;
    let resp = ops::project(shape, residual, &edits)?;
    write_atomic(&a.out, &to_json(&resp)?)?;
    if let Some(p) = &a.out_xyz {
        write_xyz(p, &lindeform_core::geometry::PointCloud::new(resp.points.clone())?)?;
    }
    Ok(json!({
        "command": "project",
        "shape": a.shape,
        "edits": edits.len(),
        "handles": resp.z_hat.len(),
        "out": path_str(&a.out),
    }))
}

const REPORT_NOTES: &[&str] = &[
    "mmd_cd and cov_cd: for each target shape, every (source, new source) pair's latent delta is transferred; outputs are pooled per target, scored against the test split and averaged over targets",
    "two_way: mean over the pairs with the largest raw source-target Chamfer distance among the sampled candidates",
    "symmetry_ratios: leg size spread along x, y, z and mean top-leg gap after perturb-and-project, divided by the default table's extent (tables and linear models only)",
];

fn eval(a: EvalArgs, env: &Env) -> Result<Value> {
    let mut cfg = EvalConfig {
        seed: resolve_seed(a.seed, env.seed.as_deref(), 0)?,
        ..EvalConfig::default()
    };
    let overrides = [
        (&mut cfg.fitting_pairs, a.fitting_pairs),
        (&mut cfg.parallelogram_triples, a.parallelogram_triples),
        (&mut cfg.two_way_candidates, a.two_way_candidates),
        (&mut cfg.two_way_keep, a.two_way_keep),
        (&mut cfg.mmd_targets, a.mmd_targets),
        (&mut cfg.mmd_pairs, a.mmd_pairs),
        (&mut cfg.symmetry_trials, a.symmetry_trials),
    ];
    for (slot, v) in overrides {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let model = checkpoint::load(&a.model)?;
    let data = read_dataset(&a.data)?;
    if data.manifest.n != model.n() {
        return Err(Error::format(format!("the data has n = {}, the model {}", data.manifest.n, model.n())));
    }
    let test = data.manifest.ids(Split::Test);
    if test.len() < 3 {
        return Err(Error::format("the test split needs at least three shapes"));
    }
    let metrics = evaluate(&model, &data.shapes, &test, data.manifest.seed, &cfg)?;
    let report = ReportFile {
        metrics,
        config: cfg,
        model: ModelInfo {
            n: model.n(),
            k: model.k(),
            variant: model.variant(),
        },
        data: DataInfo {
            family: data.manifest.family,
            count: data.manifest.count,
            n: data.manifest.n,
            seed: data.manifest.seed,
            split: Split::Test,
            evaluated: test.len(),
        },
        notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
    };
    if let Some(p) = &a.out {
        write_atomic(p, &serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(json!({
        "command": "eval",
        "metrics": report.metrics,
        "seed": report.config.seed,
        "out": a.out.as_deref().map(path_str),
    }))
}

fn export_dict(a: ExportArgs) -> Result<Value> {
    if a.steps == 0 || !(a.scale.is_finite() && a.scale >= 0.0) {
        return Err(Error::Usage("--steps must be positive and --scale finite and nonnegative".into()));
    }
    let model = checkpoint::load(&a.model)?;
    let x = match (&a.src, &a.data, &a.shape) {
        (Some(p), None, None) => read_xyz(p)?,
        (None, Some(d), Some(id)) => {
            let data = read_dataset(d)?;
            let i = data
                .manifest
                .shapes
                .iter()
                .position(|e| &e.id == id)
                .ok_or_else(|| Error::NotFound(format!("shape {id:?}")))?;
            data.shapes[i].cloud.clone()
        }
        _ => return Err(Error::Usage("give either --src or both --data and --shape".into())),
    };
    let frames = ops::element_frames(&model, &x, a.steps, a.scale)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (j, seq) in frames.iter().enumerate() {
        for (i, pc) in seq.iter().enumerate() {
            write_xyz(&a.out.join(format!("element_{j:03}_{i:03}.xyz")), pc)?;
        }
    }
    let dictionary = if model.variant() == lindeform_core::nets::Variant::Circular {
        None
    } else {
        let d = model.predict_dictionary(&x)?;
        let p = a.out.join("dictionary.json");
        write_atomic(&p, &to_json(&DictionaryFile::from(&d))?)?;
        Some(path_str(&p))
    };
    Ok(json!({
        "command": "export-dict",
        "k": model.k(),
        "steps": a.steps,
        "frames": frames.iter().map(Vec::len).sum::<usize>(),
        "amplitudes": ops::sweep(a.steps, a.scale),
        "dictionary": dictionary,
        "out": path_str(&a.out),
    }))
}

fn serve(a: ServeArgs, err: &mut dyn Write) -> Result<Value> {
    let model = checkpoint::load(&a.model)?;
    let data = read_dataset(&a.data)?;
    let session = service::Session::warm(model, data)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Usage(format!("cannot start runtime: {e}")))?;
    let addr = a.addr;
    rt.block_on(service::serve(addr, session, a.static_dir, |bound| {
        let _ = writeln!(err, "listening on http://{bound}");
    }))?;
    Ok(json!({"command": "serve", "addr": addr.to_string()}))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_edits() {
        assert_eq!(parse_edit("3=0.25").unwrap(), HandleEdit { handle: 3, value: 0.25 });
        assert_eq!(parse_edit(" 0 = -1e-3 ").unwrap(), HandleEdit { handle: 0, value: -1e-3 });
        for bad in ["3", "x=1", "-1=0", "2=inf", "2=nan", "2="] {
            assert_eq!(parse_edit(bad).unwrap_err().exit_code(), 1, "{bad}");
        }
    }

    #[test]
    fn usage_errors_exit_1() {
        let env = Env::default();
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_with(["lindeform"], &env, &mut o, &mut e), 1);
        assert_eq!(run_with(["lindeform", "frobnicate"], &env, &mut o, &mut e), 1);
        assert_eq!(run_with(["lindeform", "datagen", "--family", "sofa", "--out", "x"], &env, &mut o, &mut e), 1);
        assert_eq!(run_with(["lindeform", "--help"], &env, &mut o, &mut e), 0);
        assert!(!o.is_empty());
    }
}
