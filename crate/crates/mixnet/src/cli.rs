//! The `mixnet` command line: dataset synthesis, training, evaluation, and
//! analysis driven by a single JSON config with dotted-path overrides.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::{separation_analysis, write_scatter_csv};
use crate::error::{Error, Result};
use crate::layers::{grad_check_gate, grad_check_stack, GateVector};
use crate::rng::Rng;
use crate::synth::{generate, ClassHierarchy, FrameDataset, SynthConfig};
use crate::training::{
    build_stack, evaluate, pretrain_aux, train, Model, ModelConfig, TrainConfig, Variant,
};

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  2  invalid config or input validation failure
  3  I/O, file format, or JSON error
  4  training diverged (non-finite loss)
  5  shape mismatch or singular matrix";

/// Frame classification with mixture-of-experts networks.
#[derive(Parser)]
#[command(name = "mixnet", version, after_help = EXIT_HELP)]
pub struct Cli {
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dotted-path config override, e.g. --set synth.overlap=0.3
    /// or --set model.variant=mixnet2 (repeatable; values parse as JSON,
    /// falling back to strings).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Gradient-reduction threads (deterministic for a fixed count).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding train.frames / cv.frames / test.frames.
    #[arg(long)]
    data_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic frame datasets.
    Synth {
        /// Output directory for train.frames / cv.frames / test.frames.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the broad-class auxiliary classifier of a MixNet variant.
    PretrainAux {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint to write.
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Train the main network.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Starting checkpoint (required for MixNet variants, which need a
        /// pretrained auxiliary classifier).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Frame accuracy and confusion matrices of a checkpoint.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Split to evaluate: train, cv, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Class-separation analysis of a tapped network stage.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Network tap: 0 = pipeline output, i = output of layer i−1.
        #[arg(long, default_value_t = 1)]
        tap: usize,
        #[arg(long, default_value = "cv")]
        split: String,
        /// Optional scatter CSV (x,y,broad_label,subclass_label).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences on a
    /// reduced-size instance of the configured architecture.
    Gradcheck,
    /// Parameter counts of the configured model and all stock variants.
    Params,
}

/// The one JSON config driving every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; mirrored into synth.seed and train.seed unless those
    /// are overridden explicitly.
    pub seed: u64,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            synth: SynthConfig::default(),
            model: ModelConfig::for_variant(Variant::Baseline),
            train: TrainConfig::default(),
        }
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut current = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = current
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{path}` does not address an object field")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        current = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override path `{path}`")))
}

/// Loads the config file (or defaults), applies --set overrides and the
/// MIXNET_SEED environment variable, and propagates the master seed.
pub fn resolve_config(
    file: Option<&Path>,
    sets: &[String],
    env_seed: Option<&str>,
) -> Result<(RunConfig, String)> {
    let mut value = match file {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => serde_json::to_value(RunConfig::default())?,
    };
    let mut seed_overridden = (false, false); // (synth.seed, train.seed)
    for entry in sets {
        let (path, raw) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("override `{entry}` is not of the form key=value"))
        })?;
        let parsed = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
        if path == "model.variant" {
            // switching variants rebases the whole model section to that
            // variant's defaults; later model.* overrides still apply
            let name = parsed
                .as_str()
                .ok_or_else(|| Error::Config(format!("variant `{raw}` is not a string")))?;
            let rebased = serde_json::to_value(ModelConfig::for_variant(Variant::parse(name)?))?;
            set_path(&mut value, "model", rebased)?;
            continue;
        }
        set_path(&mut value, path, parsed)?;
        seed_overridden.0 |= path == "synth.seed";
        seed_overridden.1 |= path == "train.seed";
    }
    if let Some(env_seed) = env_seed {
        let seed: u64 = env_seed
            .parse()
            .map_err(|_| Error::Config(format!("MIXNET_SEED `{env_seed}` is not a u64")))?;
        set_path(&mut value, "seed", Value::from(seed))?;
    }
    let mut config: RunConfig = serde_json::from_value(value)?;
    if !seed_overridden.0 {
        config.synth.seed = config.seed;
    }
    if !seed_overridden.1 {
        config.train.seed = config.seed;
    }
    let canonical = serde_json::to_string(&config)?;
    let hash = hex(&Sha256::digest(canonical.as_bytes()));
    Ok((config, hash))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Embedded in every report so runs can be traced to their exact inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    fn new(config: &RunConfig, hash: &str) -> Provenance {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hash.to_string(),
            seed: config.seed,
        }
    }
}

fn emit(w: &mut impl Write, provenance: &Provenance, report: Value) -> Result<()> {
    let wrapped = serde_json::json!({ "provenance": provenance, "report": report });
    writeln!(w, "{}", serde_json::to_string_pretty(&wrapped)?)?;
    Ok(())
}

fn load_split(dir: &Path, split: &str) -> Result<FrameDataset> {
    FrameDataset::load(&dir.join(format!("{split}.frames")))
}

fn check_split_name(split: &str) -> Result<()> {
    match split {
        "train" | "cv" | "test" => Ok(()),
        other => Err(Error::Config(format!(
            "unknown split `{other}` (expected train, cv, or test)"
        ))),
    }
}

/// Scaled-down copy of the architecture so a full finite-difference sweep
/// stays fast while exercising every layer kind of the variant.
fn gradcheck_config(cfg: &ModelConfig) -> ModelConfig {
    let mut small = cfg.clone();
    small.feature_dim = cfg.feature_dim.min(5);
    small.splice_radius = cfg.splice_radius.min(1);
    small.hidden_width = cfg.hidden_width.min(8);
    small.hidden_layers = cfg.hidden_layers.min(3);
    small.target_count = cfg.target_count.min(6);
    small.eigen_dim = cfg.eigen_dim.min(7);
    small.eigen_experts = cfg.eigen_experts.min(3);
    match &mut small.expert_structure {
        crate::training::ExpertStructure::LowRank { out_dim } => {
            *out_dim = (*out_dim).min(small.hidden_width - 2)
        }
        crate::training::ExpertStructure::Banded { band } => {
            *band = (*band).min(small.hidden_width / 2)
        }
        crate::training::ExpertStructure::Full => {}
    }
    small
}

fn run_gradcheck(config: &RunConfig) -> Result<Value> {
    let cfg = gradcheck_config(&config.model);
    let mut rng = Rng::substream(config.seed, 0x6763_6b00);
    let mut stack = build_stack(&cfg, &mut rng)?;
    let window: Vec<Vec<f64>> = (0..stack.window_len())
        .map(|_| (0..cfg.input_dim()).map(|_| rng.standard_normal()).collect())
        .collect();
    let gate = stack.starts_contextual().then(|| {
        let logits: Vec<f64> = (0..cfg.broad_count).map(|_| rng.standard_normal()).collect();
        GateVector::from_softmax(&logits)
    });
    let target = rng.below(cfg.target_count);
    let step = 1e-5;
    let tol = 1e-6;
    let report = grad_check_stack(&mut stack, &window, gate.as_ref(), target, step, tol)?;
    let gate_report = gate
        .as_ref()
        .map(|g| grad_check_gate(&stack, &window, g, target, step, tol))
        .transpose()?;
    let passed = report.passed() && gate_report.as_ref().is_none_or(|r| r.passed());
    let value = serde_json::json!({
        "passed": passed,
        "step": step,
        "tolerance": tol,
        "params_and_inputs": {
            "checked": report.checked,
            "worst_rel_err": report.worst_rel_err,
            "worst_location": report.worst_location,
        },
        "gate": gate_report.map(|r| serde_json::json!({
            "checked": r.checked,
            "worst_rel_err": r.worst_rel_err,
            "worst_location": r.worst_location,
        })),
    });
    if !passed {
        return Err(Error::Validation(format!(
            "gradient check failed: {value}"
        )));
    }
    Ok(value)
}

fn run_params(config: &RunConfig) -> Result<Value> {
    let mut rng = Rng::new(0);
    let active = build_stack(&config.model, &mut rng)?.param_count();
    let variants = Variant::ALL
        .iter()
        .map(|&v| {
            let stack = build_stack(&ModelConfig::for_variant(v), &mut rng)?;
            Ok(serde_json::json!({
                "variant": v.name(),
                "params": stack.param_count(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::json!({
        "active": { "variant": config.model.variant.name(), "params": active },
        "stock_variants": variants,
    }))
}

/// Runs one parsed invocation, writing reports to `out`. Returns the
/// process exit code.
pub fn run(cli: Cli, out: &mut impl Write) -> i32 {
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({
                "error": {
                    "kind": error_kind(&e),
                    "message": e.to_string(),
                    "exit_code": e.exit_code(),
                }
            });
            eprintln!("{payload}");
            e.exit_code()
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape { .. } => "shape",
        Error::Validation(_) => "validation",
        Error::Singular { .. } => "singular",
        Error::NanLoss { .. } => "nan_loss",
        Error::Format(_) => "format",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn execute(cli: Cli, out: &mut impl Write) -> Result<()> {
    let env_seed = std::env::var("MIXNET_SEED").ok();
    let (mut config, hash) = resolve_config(cli.config.as_deref(), &cli.sets, env_seed.as_deref())?;
    if let Some(threads) = cli.threads {
        config.train.threads = threads;
    }
    let provenance = Provenance::new(&config, &hash);
    match cli.command {
        Command::Synth { out_dir } => {
            let hierarchy = ClassHierarchy::default_three_class();
            let (train_ds, cv_ds, test_ds) = generate(&config.synth, &hierarchy)?;
            std::fs::create_dir_all(&out_dir)?;
            for (name, ds) in [("train", &train_ds), ("cv", &cv_ds), ("test", &test_ds)] {
                ds.save(&out_dir.join(format!("{name}.frames")))?;
            }
            emit(
                out,
                &provenance,
                serde_json::json!({
                    "out_dir": out_dir,
                    "dim": config.synth.dim,
                    "train_frames": train_ds.frame_count(),
                    "cv_frames": cv_ds.frame_count(),
                    "test_frames": test_ds.frame_count(),
                }),
            )
        }
        Command::PretrainAux { data, ckpt } => {
            let train_ds = load_split(&data.data_dir, "train")?;
            let cv_ds = load_split(&data.data_dir, "cv")?;
            let mut model = Model::new(config.model.clone(), &train_ds, config.seed)?;
            let report = pretrain_aux(&mut model, &train_ds, &cv_ds, &config.train)?;
            model.save(&ckpt)?;
            emit(out, &provenance, serde_json::to_value(report)?)
        }
        Command::Train { data, init, ckpt } => {
            let train_ds = load_split(&data.data_dir, "train")?;
            let cv_ds = load_split(&data.data_dir, "cv")?;
            let mut model = match init {
                Some(path) => Model::load(&path)?,
                None => Model::new(config.model.clone(), &train_ds, config.seed)?,
            };
            let report = train(&mut model, &train_ds, &cv_ds, &config.train)?;
            model.save(&ckpt)?;
            emit(out, &provenance, serde_json::to_value(report)?)
        }
        Command::Eval { data, ckpt, split } => {
            check_split_name(&split)?;
            let ds = load_split(&data.data_dir, &split)?;
            let model = Model::load(&ckpt)?;
            let report = evaluate(&model, &ds)?;
            emit(out, &provenance, serde_json::to_value(report)?)
        }
        Command::Analyze {
            data,
            ckpt,
            tap,
            split,
            csv,
        } => {
            check_split_name(&split)?;
            let ds = load_split(&data.data_dir, &split)?;
            let model = Model::load(&ckpt)?;
            let (report, acts, pca) = separation_analysis(&model, &ds, tap, 2)?;
            if let Some(path) = csv {
                let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
                write_scatter_csv(&mut file, &pca, &acts)?;
            }
            emit(out, &provenance, serde_json::to_value(report)?)
        }
        Command::Gradcheck => {
            let report = run_gradcheck(&config)?;
            emit(out, &provenance, report)
        }
        Command::Params => {
            let report = run_params(&config)?;
            emit(out, &provenance, report)
        }
    }
}
