//! The `cephalo` command line: subcommands are [`Command`] implementations
//! held in a [`Registry`] and dispatched by name.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use cephalo_core::backbone::{SelfCephaloNet, REFERENCE_PARAM_COUNT};
use cephalo_core::heatmap::LandmarkSet;
use cephalo_core::io::dataset::{load_dataset, read_annotation, write_annotation, Split};
use cephalo_core::io::report::{clinical_summaries, write_clinical, write_eval};
use cephalo_core::io::{gen_synth, load_checkpoint, save_checkpoint, Checkpoint, RunConfig};
use cephalo_core::metrics::{EvalReport, SDR_THRESHOLDS_MM};
use cephalo_core::pipeline::{
    expand, predict_two_stage, train_stage1, train_stage2, History, Sample, Stage2Models,
};
use clap::parser::ValueSource;
use clap::{value_parser, Arg, ArgMatches};

pub const STAGE1_CHECKPOINT: &str = "stage1.ckpt";
pub const STAGE2_CHECKPOINT: &str = "stage2.ckpt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] cephalo_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

/// Options shared by every subcommand.
pub struct Context {
    pub config: RunConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    config_given: bool,
}

impl Context {
    fn from_matches(m: &ArgMatches) -> CliResult<Self> {
        let path = m.get_one::<PathBuf>("config");
        let base = match m.get_one::<String>("preset").map(String::as_str) {
            Some("toy") => RunConfig::toy(),
            _ => RunConfig::default(),
        };
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| cephalo_core::Error::io(p, e))?;
                RunConfig::parse_onto(base, &text)?
            }
            None => base,
        };
        let seed = m.get_one::<u64>("seed").copied();
        if let Some(s) = seed {
            config.train.seed = s;
            config.stage2_train.seed = s;
            config.augment.seed = s;
        }
        Ok(Self {
            config,
            data: m.get_one::<PathBuf>("data").cloned(),
            out: m.get_one::<PathBuf>("out").cloned(),
            seed,
            config_given: path.is_some() || m.contains_id("preset") && m.value_source("preset") == Some(ValueSource::CommandLine),
        })
    }

    pub fn data(&self) -> CliResult<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("--data <dir> is required".into()))
    }

    /// The output directory, created if missing.
    pub fn out(&self) -> CliResult<&Path> {
        let out = self
            .out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out <dir> is required".into()))?;
        fs::create_dir_all(out).map_err(|e| cephalo_core::Error::io(out, e))?;
        Ok(out)
    }
}

pub trait Command: Send + Sync {
    fn name(&self) -> &'static str;

    fn about(&self) -> &'static str;

    /// Adds subcommand-specific arguments.
    fn args(&self, cmd: clap::Command) -> clap::Command {
        cmd
    }

    /// Runs the command and returns the text to print on success.
    fn run(&self, ctx: &Context, m: &ArgMatches) -> CliResult<String>;
}

/// Subcommands keyed by name.
#[derive(Default)]
pub struct Registry {
    commands: Vec<Box<dyn Command>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn standard() -> Self {
        let mut r = Self::new();
        r.register(Box::new(GenSynth));
        r.register(Box::new(TrainStage1));
        r.register(Box::new(TrainStage2));
        r.register(Box::new(Predict));
        r.register(Box::new(Eval));
        r.register(Box::new(Clinical));
        r.register(Box::new(Params));
        r
    }

    /// Adds a command, replacing any existing one with the same name.
    pub fn register(&mut self, cmd: Box<dyn Command>) {
        match self.commands.iter().position(|c| c.name() == cmd.name()) {
            Some(i) => self.commands[i] = cmd,
            None => self.commands.push(cmd),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.commands.iter().map(|c| c.name()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&dyn Command> {
        self.commands.iter().find(|c| c.name() == name).map(|c| c.as_ref())
    }

    pub fn cli(&self) -> clap::Command {
        let mut root = clap::Command::new("cephalo")
            .about("Two-stage cephalometric landmark detection with Self-ONN networks")
            .version(env!("CARGO_PKG_VERSION"))
            .subcommand_required(true)
            .arg_required_else_help(true);
        for c in &self.commands {
            let sub = common_args(clap::Command::new(c.name()).about(c.about()));
            root = root.subcommand(c.args(sub));
        }
        root
    }

    /// Parses `argv` (including the program name) and runs the subcommand.
    pub fn dispatch<I, T>(&self, argv: I) -> Result<String, DispatchError>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        let matches = self.cli().try_get_matches_from(argv).map_err(DispatchError::Clap)?;
        let (name, sub) = matches.subcommand().expect("subcommand required");
        let cmd = self.get(name).expect("parsed subcommands are registered");
        let ctx = Context::from_matches(sub).map_err(DispatchError::Run)?;
        cmd.run(&ctx, sub).map_err(DispatchError::Run)
    }
}

#[derive(Debug)]
pub enum DispatchError {
    /// Argument errors, `--help` and `--version`.
    Clap(clap::Error),
    Run(CliError),
}

fn common_args(cmd: clap::Command) -> clap::Command {
    cmd.arg(
        Arg::new("preset")
            .long("preset")
            .value_name("NAME")
            .default_value("default")
            .value_parser(["default", "toy"])
            .help("Base configuration that --config overrides"),
    )
    .arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("Run configuration (key = value); defaults apply when omitted"),
    )
    .arg(
        Arg::new("data")
            .long("data")
            .value_name("DIR")
            .value_parser(value_parser!(PathBuf))
            .help("Dataset directory containing manifest.txt"),
    )
    .arg(
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .value_parser(value_parser!(PathBuf))
            .help("Output directory"),
    )
    .arg(
        Arg::new("seed")
            .long("seed")
            .value_name("INT")
            .value_parser(value_parser!(u64))
            .help("Overrides every seed in the configuration"),
    )
}

fn split_arg(default: &'static str) -> Arg {
    Arg::new("split")
        .long("split")
        .value_name("SPLIT")
        .default_value(default)
        .value_parser(["train", "test1", "test2"])
        .help("Dataset split to use")
}

fn split_of(m: &ArgMatches) -> Split {
    m.get_one::<String>("split")
        .expect("split has a default")
        .parse()
        .expect("validated by clap")
}

fn load_split(ctx: &Context, split: Split) -> CliResult<Vec<Sample>> {
    let samples = load_dataset(ctx.data()?, Some(split))?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("split {split} of {} is empty", ctx.data()?.display())));
    }
    Ok(samples)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| cephalo_core::Error::io(path, e).into())
}

fn history_rows(label: &str, h: &History) -> String {
    let mut out = String::new();
    for (epoch, (loss, val)) in h.epoch_loss.iter().zip(&h.val_nme).enumerate() {
        let val = val.map_or_else(String::new, |v| format!("{v:.6}"));
        out.push_str(&format!("{label},{epoch},{loss:.8e},{val}\n"));
    }
    out
}

pub struct GenSynth;

impl Command for GenSynth {
    fn name(&self) -> &'static str {
        "gen-synth"
    }

    fn about(&self) -> &'static str {
        "Render a synthetic dataset with known landmarks"
    }

    fn args(&self, cmd: clap::Command) -> clap::Command {
        let count = |name: &'static str, default: &'static str| {
            Arg::new(name)
                .long(name)
                .value_name("N")
                .default_value(default)
                .value_parser(value_parser!(usize))
        };
        cmd.arg(count("train", "8").help("Images in the train split"))
            .arg(count("test1", "0").help("Images in the test1 split"))
            .arg(count("test2", "0").help("Images in the test2 split"))
            .arg(count("size", "64").help("Square image side in pixels"))
    }

    fn run(&self, ctx: &Context, m: &ArgMatches) -> CliResult<String> {
        let out = ctx.out()?;
        let n = |k: &str| *m.get_one::<usize>(k).expect("has default");
        let splits = [
            (Split::Train, n("train")),
            (Split::Test1, n("test1")),
            (Split::Test2, n("test2")),
        ];
        let written = gen_synth(&splits, n("size"), ctx.seed.unwrap_or(0), out)?;
        Ok(format!("wrote {} images to {}", written.len(), out.display()))
    }
}

pub struct TrainStage1;

impl Command for TrainStage1 {
    fn name(&self) -> &'static str {
        "train-stage1"
    }

    fn about(&self) -> &'static str {
        "Train the global 19-landmark model"
    }

    fn args(&self, cmd: clap::Command) -> clap::Command {
        cmd.arg(
            Arg::new("val")
                .long("val")
                .value_name("SPLIT")
                .value_parser(["train", "test1", "test2"])
                .help("Split used for per-epoch validation NME"),
        )
    }

    fn run(&self, ctx: &Context, m: &ArgMatches) -> CliResult<String> {
        let cfg = &ctx.config;
        cfg.validate()?;
        let train = expand(&load_split(ctx, Split::Train)?, &cfg.augment);
        let val = match m.get_one::<String>("val") {
            Some(s) => load_split(ctx, s.parse()?)?,
            None => Vec::new(),
        };
        let (model, history) = train_stage1(&train, &val, &cfg.network, &cfg.train)?;
        let out = ctx.out()?;
        save_checkpoint(
            &out.join(STAGE1_CHECKPOINT),
            &Checkpoint {
                seed: cfg.train.seed,
                models: vec![model],
            },
        )?;
        write_text(
            &out.join("stage1_history.csv"),
            &format!("model,epoch,loss,val_nme\n{}", history_rows("stage1", &history)),
        )?;
        write_text(&out.join("run.cfg"), &cfg.serialize())?;
        Ok(format!(
            "trained on {} images for {} steps; loss {:.4e} -> {:.4e}; wrote {}",
            train.len(),
            history.steps,
            history.initial_loss.unwrap_or(f64::NAN),
            history.epoch_loss.last().copied().unwrap_or(f64::NAN),
            out.join(STAGE1_CHECKPOINT).display()
        ))
    }
}

pub struct TrainStage2;

impl Command for TrainStage2 {
    fn name(&self) -> &'static str {
        "train-stage2"
    }

    fn about(&self) -> &'static str {
        "Train the per-landmark patch refinement models"
    }

    fn run(&self, ctx: &Context, _: &ArgMatches) -> CliResult<String> {
        let cfg = &ctx.config;
        cfg.validate()?;
        let train = expand(&load_split(ctx, Split::Train)?, &cfg.augment);
        let models = train_stage2(&train, &[], &cfg.stage2, &cfg.patch, &cfg.stage2_train)?;
        let out = ctx.out()?;
        let mut rows = String::from("model,epoch,loss,val_nme\n");
        for (k, h) in models.histories.iter().enumerate() {
            rows.push_str(&history_rows(&format!("L{}", k + 1), h));
        }
        write_text(&out.join("stage2_history.csv"), &rows)?;
        write_text(&out.join("run.cfg"), &cfg.serialize())?;
        let n = models.models.len();
        save_checkpoint(
            &out.join(STAGE2_CHECKPOINT),
            &Checkpoint {
                seed: cfg.stage2_train.seed,
                models: models.models,
            },
        )?;
        Ok(format!(
            "trained {n} refinement models on {} images; wrote {}",
            train.len(),
            out.join(STAGE2_CHECKPOINT).display()
        ))
    }
}

fn check_config(ctx: &Context, model: &SelfCephaloNet, expected: &cephalo_core::backbone::NetworkConfig, what: &str) -> CliResult<()> {
    if ctx.config_given && model.config() != expected {
        return Err(CliError::Usage(format!(
            "{what} checkpoint was trained with {:?}, but the configuration specifies {:?}",
            model.config(),
            expected
        )));
    }
    Ok(())
}

pub struct Predict;

impl Command for Predict {
    fn name(&self) -> &'static str {
        "predict"
    }

    fn about(&self) -> &'static str {
        "Predict landmarks with stage 1 and optional stage-2 refinement"
    }

    fn args(&self, cmd: clap::Command) -> clap::Command {
        cmd.arg(
            Arg::new("checkpoint")
                .long("checkpoint")
                .value_name("FILE")
                .required(true)
                .value_parser(value_parser!(PathBuf))
                .help("Stage-1 checkpoint"),
        )
        .arg(
            Arg::new("stage2-checkpoint")
                .long("stage2-checkpoint")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("Stage-2 checkpoint; stage 1 alone when omitted"),
        )
        .arg(split_arg("test1"))
    }

    fn run(&self, ctx: &Context, m: &ArgMatches) -> CliResult<String> {
        let stage1 = load_checkpoint(m.get_one::<PathBuf>("checkpoint").expect("required"))?;
        let [model] = <[SelfCephaloNet; 1]>::try_from(stage1.models).map_err(|v| {
            CliError::Usage(format!("stage-1 checkpoint holds {} models, expected 1", v.len()))
        })?;
        check_config(ctx, &model, &ctx.config.network, "stage-1")?;
        let stage2 = match m.get_one::<PathBuf>("stage2-checkpoint") {
            Some(p) => {
                let ck = load_checkpoint(p)?;
                if ck.models.len() != model.config().num_landmarks {
                    return Err(CliError::Usage(format!(
                        "stage-2 checkpoint holds {} models for {} landmarks",
                        ck.models.len(),
                        model.config().num_landmarks
                    )));
                }
                for mdl in &ck.models {
                    check_config(ctx, mdl, &ctx.config.stage2, "stage-2")?;
                }
                Stage2Models {
                    models: ck.models,
                    patch: ctx.config.patch.clone(),
                    histories: Vec::new(),
                }
            }
            None => Stage2Models::empty(ctx.config.patch.clone()),
        };
        let samples = load_split(ctx, split_of(m))?;
        let out = ctx.out()?;
        for s in &samples {
            let pred = predict_two_stage(&model, &stage2, &s.image, s.landmarks.pixel_spacing_mm())?;
            write_annotation(&out.join(format!("{}.txt", s.id)), &pred)?;
        }
        Ok(format!(
            "wrote {} predictions ({}) to {}",
            samples.len(),
            if stage2.models.is_empty() { "stage 1" } else { "two-stage" },
            out.display()
        ))
    }
}

fn pred_arg() -> Arg {
    Arg::new("pred")
        .long("pred")
        .value_name("DIR")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help("Directory of predicted <id>.txt files")
}

/// Ground truth of a split paired with predictions read from `--pred`.
fn load_pairs(ctx: &Context, m: &ArgMatches) -> CliResult<(Vec<String>, Vec<LandmarkSet>, Vec<LandmarkSet>)> {
    let dir = m.get_one::<PathBuf>("pred").expect("required");
    let samples = load_split(ctx, split_of(m))?;
    let mut ids = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        let pts = read_annotation(&dir.join(format!("{}.txt", s.id)))?;
        preds.push(LandmarkSet::new(pts, s.landmarks.pixel_spacing_mm())?);
        ids.push(s.id);
        gts.push(s.landmarks);
    }
    Ok((ids, preds, gts))
}

pub struct Eval;

impl Command for Eval {
    fn name(&self) -> &'static str {
        "eval"
    }

    fn about(&self) -> &'static str {
        "Radial error, SDR, NME and per-image error CSVs"
    }

    fn args(&self, cmd: clap::Command) -> clap::Command {
        cmd.arg(pred_arg()).arg(split_arg("test1"))
    }

    fn run(&self, ctx: &Context, m: &ArgMatches) -> CliResult<String> {
        let (ids, preds, gts) = load_pairs(ctx, m)?;
        let report = EvalReport::build(&ids, &preds, &gts, &SDR_THRESHOLDS_MM)?;
        let out = ctx.out()?;
        write_eval(out, &report)?;
        let sdr: Vec<String> = report
            .thresholds
            .iter()
            .zip(&report.overall_sdr)
            .map(|(t, r)| format!("{t} mm {:.2}%", 100.0 * r))
            .collect();
        Ok(format!(
            "{} images: MRE {:.3} +- {:.3} mm; SDR {}; mean NME {:.5}; wrote {}",
            ids.len(),
            report.overall.0,
            report.overall.1,
            sdr.join(", "),
            report.mean_nme(),
            out.display()
        ))
    }
}

pub struct Clinical;

impl Command for Clinical {
    fn name(&self) -> &'static str {
        "clinical"
    }

    fn about(&self) -> &'static str {
        "Clinical measurements, classes, confusion matrices and SCR"
    }

    fn args(&self, cmd: clap::Command) -> clap::Command {
        cmd.arg(pred_arg()).arg(split_arg("test1"))
    }

    fn run(&self, ctx: &Context, m: &ArgMatches) -> CliResult<String> {
        let (ids, preds, gts) = load_pairs(ctx, m)?;
        let out = ctx.out()?;
        write_clinical(out, &ids, &preds, &gts)?;
        let lines: Vec<String> = clinical_summaries(&preds, &gts)?
            .iter()
            .map(|s| format!("{:<5} SCR {:6.2}%", s.measurement.name(), s.scr))
            .collect();
        Ok(format!("{}\nwrote {}", lines.join("\n"), out.display()))
    }
}

pub struct Params;

/// Reference size of the twenty-model ensemble, in millions.
const REFERENCE_TOTAL_MILLIONS: f64 = 194.52482;

impl Command for Params {
    fn name(&self) -> &'static str {
        "params"
    }

    fn about(&self) -> &'static str {
        "Print exact parameter counts against the reference"
    }

    fn run(&self, ctx: &Context, _: &ArgMatches) -> CliResult<String> {
        let cfg = &ctx.config;
        cfg.network.validate()?;
        cfg.stage2.validate()?;
        let stage1 = SelfCephaloNet::build(&cfg.network, 0)?.count_params();
        let stage2 = SelfCephaloNet::build(&cfg.stage2, 0)?.count_params();
        let total = stage1 + cfg.network.num_landmarks * stage2;
        let dev = 100.0 * (stage1 as f64 / REFERENCE_PARAM_COUNT as f64 - 1.0);
        Ok(format!(
            "stage-1 model: {stage1} parameters\n\
             reference:     {REFERENCE_PARAM_COUNT} parameters ({dev:+.2}%)\n\
             stage-2 model: {stage2} parameters x {}\n\
             total:         {total} parameters ({:.5} M; reference {REFERENCE_TOTAL_MILLIONS} M)",
            cfg.network.num_landmarks,
            total as f64 / 1e6
        ))
    }
}
