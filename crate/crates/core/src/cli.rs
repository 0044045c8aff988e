//! Command-line front end.
//!
//! Every subcommand is fully determined by its flags, an optional
//! `--config` file and explicit seeds. Failures print one line on stderr,
//!
//! ```text
//! error kind=unknown-user code=5 message="unknown user: carol"
//! ```
//!
//! and exit with the code listed in [`exit_code`].

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::codes::{generate_codebook, CodeBook};
use crate::config::RunConfig;
use crate::error::Error;
use crate::eval::{
    attack_sim, gen_synth_dataset, hold_out_validation, run_protocol_with, ProtocolConfig, ProtocolSeeds, SynthSpec,
};
use crate::matcher::{identify, verify};
use crate::nn::{self, sgd_train, tiny_case, Architecture, ConvSpec, TrainConfig};
use crate::preprocess::{augment_labeled, load_dataset, load_image, save_dataset, AugmentConfig};
use crate::rng::RngState;
use crate::vault::Vault;

pub mod exit_code {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const UNKNOWN_USER: i32 = 5;
    /// Malformed, corrupted or wrong-version file contents.
    pub const FORMAT: i32 = 6;
    pub const GRADIENT_CHECK: i32 = 7;
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(String),
    GradientCheck(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Config(_) => "config",
            Failure::GradientCheck(_) => "gradient-check",
            Failure::Lib(e) => match e {
                Error::Shape(_) => "shape",
                Error::InvalidArgument(_) => "invalid-argument",
                Error::Parse(_) => "parse",
                Error::UnknownUser(_) => "unknown-user",
                Error::AlreadyEnrolled(_) => "already-enrolled",
                Error::DuplicateUser(_) => "duplicate-user",
                Error::Version(_) => "version",
                Error::Checksum { .. } => "checksum",
                Error::Io(_) => "io",
            },
        }
    }

    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => exit_code::USAGE,
            Failure::Config(_) => exit_code::CONFIG,
            Failure::GradientCheck(_) => exit_code::GRADIENT_CHECK,
            Failure::Lib(e) => match e {
                Error::Io(_) => exit_code::IO,
                Error::UnknownUser(_) => exit_code::UNKNOWN_USER,
                Error::Parse(_) | Error::Version(_) | Error::Checksum { .. } => exit_code::FORMAT,
                _ => exit_code::OTHER,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            Failure::Usage(m) | Failure::Config(m) | Failure::GradientCheck(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        };
        let one_line = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error kind={} code={} message={:?}", self.kind(), self.code(), one_line)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Comma-separated `MAPSxFILTER` conv stages, e.g. `32x7,64x7`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvList(pub Vec<ConvSpec>);

impl FromStr for ConvList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|part| {
                let (m, f) =
                    part.trim().split_once('x').ok_or_else(|| format!("expected MAPSxFILTER, got {part:?}"))?;
                let maps = m.parse().map_err(|_| format!("bad map count {m:?}"))?;
                let filter = f.parse().map_err(|_| format!("bad filter size {f:?}"))?;
                Ok(ConvSpec { maps, filter })
            })
            .collect::<std::result::Result<_, _>>()
            .map(ConvList)
    }
}

/// Comma-separated hidden layer widths, e.g. `2000,2000`.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthList(pub Vec<usize>);

impl FromStr for WidthList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(WidthList(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("bad layer width {p:?}")))
            .collect::<std::result::Result<_, _>>()
            .map(WidthList)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mebface",
    version,
    about = "Face template protection with maximum-entropy binary codes and hashed templates"
)]
struct Cli {
    /// File of `key = value` lines supplying any long flag; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic identity dataset as a directory of PGM files.
    SynthData(SynthDataArgs),
    /// Draw a fresh random code for every user.
    GenCodes(GenCodesArgs),
    /// Train the image-to-code network on a dataset directory.
    Train(TrainArgs),
    /// Hash every code into the template vault, then delete the codes file.
    Enroll(EnrollArgs),
    /// Score one probe image against one enrolled user.
    Verify(VerifyArgs),
    /// Rank every enrolled user for one probe image.
    Identify(IdentifyArgs),
    /// Run the repeated random-split protocol and write a report.
    Evaluate(EvaluateArgs),
    /// Score uniform-noise (and optional unseen) images against every template.
    AttackSim(AttackArgs),
    /// Compare analytic and finite-difference gradients on tiny random networks.
    GradientCheck(GradCheckArgs),
}

#[derive(Args, Debug, Clone)]
struct SynthOpts {
    /// Number of synthetic users.
    #[arg(long, default_value_t = 10)]
    users: usize,
    /// Images per user.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// User-specific blobs in each identity pattern.
    #[arg(long, default_value_t = 6)]
    blobs: usize,
    /// Peak-to-peak illumination ramp amplitude.
    #[arg(long, default_value_t = 0.3)]
    gradient: f64,
    /// Maximum translation in pixels.
    #[arg(long, default_value_t = 2)]
    jitter: usize,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
}

#[derive(Args, Debug, Clone)]
struct ArchOpts {
    /// Conv stages as MAPSxFILTER, comma separated.
    #[arg(long, default_value = "32x7,64x7")]
    convs: ConvList,
    /// Hidden dense layer widths, comma separated.
    #[arg(long, default_value = "2000,2000")]
    hidden: WidthList,
    /// Drop probability after each hidden layer.
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 200)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
}

#[derive(Args, Debug, Clone)]
struct CropOpts {
    /// Side of each square crop taken from the image.
    #[arg(long, default_value_t = 57)]
    crop_size: usize,
    /// Also score the mirror image of every crop.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    flip: bool,
}

impl CropOpts {
    fn config(&self, m: usize) -> CliResult<AugmentConfig> {
        let cfg = AugmentConfig { m, n: self.crop_size, flip: self.flip };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SynthDataArgs {
    /// Output directory, one subdirectory per user.
    #[arg(long)]
    out: PathBuf,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[command(flatten)]
    synth: SynthOpts,
    /// Default for every seed not given explicitly.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct GenCodesArgs {
    /// Dataset directory; every subdirectory is a user.
    #[arg(long, conflicts_with = "users", required_unless_present = "users")]
    data: Option<PathBuf>,
    /// Comma-separated user ids.
    #[arg(long)]
    users: Option<String>,
    #[arg(long, default_value_t = 256)]
    code_bits: usize,
    /// Codes file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    code_seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    /// Parameter file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[command(flatten)]
    arch: ArchOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    crop: CropOpts,
    /// Images per user held out for validation loss.
    #[arg(long, default_value_t = 0)]
    validation_per_user: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train_seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EnrollArgs {
    #[arg(long)]
    codes: PathBuf,
    /// Vault file; created if missing, extended otherwise.
    #[arg(long)]
    vault: PathBuf,
    /// Replace templates of users already enrolled.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    overwrite: bool,
    /// Leave the codes file in place after enrollment.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    keep_codes: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct VerifyArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    vault: PathBuf,
    #[arg(long)]
    user: String,
    /// Probe image (PGM), already aligned to the network input size.
    #[arg(long)]
    image: PathBuf,
    /// Accept when the matching fraction of crops is at least this.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[command(flatten)]
    crop: CropOpts,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct IdentifyArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    vault: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Print only the best N candidates.
    #[arg(long)]
    top: Option<usize>,
    #[command(flatten)]
    crop: CropOpts,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvaluateArgs {
    /// Dataset directory; synthetic data is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[command(flatten)]
    synth: SynthOpts,
    #[arg(long, default_value_t = 256)]
    code_bits: usize,
    #[command(flatten)]
    arch: ArchOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    crop: CropOpts,
    #[arg(long, default_value_t = 10)]
    train_per_user: usize,
    #[arg(long, default_value_t = 0)]
    validation_per_user: usize,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    /// Noise probes thrown at the first split's system.
    #[arg(long, default_value_t = 0)]
    attack_probes: usize,
    /// Directory for report.txt and scores.csv.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    code_seed: Option<u64>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    attack_seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct AttackArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    vault: PathBuf,
    /// Uniform-noise probes.
    #[arg(long, default_value_t = 10_000)]
    probes: usize,
    /// Dataset directory of images from users who were never enrolled.
    #[arg(long)]
    unseen: Option<PathBuf>,
    /// CSV file for every score.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    crop: CropOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    attack_seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct GradCheckArgs {
    /// Seed of the first tiny network.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    cases: u64,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn architecture(opts: &ArchOpts, input_size: usize, code_bits: usize) -> CliResult<Architecture> {
    let arch = Architecture {
        input_size,
        convs: opts.convs.0.clone(),
        hidden: opts.hidden.0.clone(),
        code_bits,
        dropout: opts.dropout,
    };
    arch.shape_chain()?;
    Ok(arch)
}

fn train_config(opts: &TrainOpts) -> TrainConfig {
    TrainConfig {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        learning_rate: opts.learning_rate,
        momentum: opts.momentum,
    }
}

fn synth_spec(opts: &SynthOpts, size: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        num_users: opts.users,
        samples_per_user: opts.samples,
        size,
        blobs: opts.blobs,
        gradient: opts.gradient,
        jitter: opts.jitter,
        noise_sigma: opts.noise,
        seed,
    }
}

fn user_dirs(root: &Path) -> CliResult<Vec<String>> {
    let mut users: Vec<String> = std::fs::read_dir(root)
        .map_err(Error::from)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    users.sort();
    Ok(users)
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::SynthData(a) => {
            let spec = synth_spec(&a.synth, a.image_size, a.data_seed.unwrap_or(a.seed));
            let data = gen_synth_dataset(&spec)?;
            save_dataset(&data, &a.out)?;
            say(out, format_args!("wrote {} images for {} users to {}", data.len(), spec.num_users, a.out.display()))
        }
        Command::GenCodes(a) => {
            let users = match (&a.data, &a.users) {
                (Some(dir), _) => user_dirs(dir)?,
                (None, Some(list)) => list.split(',').map(|u| u.trim().to_string()).collect(),
                (None, None) => unreachable!("clap requires one of --data and --users"),
            };
            let mut rng = RngState::new(a.code_seed.unwrap_or(a.seed));
            let book = generate_codebook(&users, a.code_bits, &mut rng)?;
            book.save(&a.out)?;
            say(out, format_args!("wrote {} codes of {} bits to {}", book.len(), a.code_bits, a.out.display()))
        }
        Command::Train(a) => {
            let book = CodeBook::load(&a.codes)?;
            let arch = architecture(&a.arch, a.image_size, book.code_bits())?;
            let crops = a.crop.config(a.image_size)?;
            let data = load_dataset(&a.data)?;
            let (fit, val) = hold_out_validation(data, a.validation_per_user);
            let fit = augment_labeled(&fit, &crops)?;
            let val = augment_labeled(&val, &crops)?;
            let mut rng = RngState::new(a.train_seed.unwrap_or(a.seed));
            let outcome = sgd_train(&arch, &fit, &val, &book, &train_config(&a.train), &mut rng)?;
            for (e, loss) in outcome.history.train_loss.iter().enumerate() {
                match outcome.history.validation_loss.get(e) {
                    Some(v) => say(out, format_args!("epoch={} train_loss={loss:?} validation_loss={v:?}", e + 1))?,
                    None => say(out, format_args!("epoch={} train_loss={loss:?}", e + 1))?,
                }
            }
            nn::io::save(&outcome.params, &a.out)?;
            say(out, format_args!("wrote {} parameters to {}", outcome.params.num_params(), a.out.display()))
        }
        Command::Enroll(a) => {
            let book = CodeBook::load(&a.codes)?;
            let mut vault = if a.vault.exists() { Vault::load(&a.vault)? } else { Vault::new() };
            vault.enroll_all(&book, a.overwrite)?;
            vault.persist(&a.vault)?;
            if !a.keep_codes {
                std::fs::remove_file(&a.codes).map_err(Error::from)?;
            }
            say(out, format_args!("enrolled {} users into {}", book.len(), a.vault.display()))
        }
        Command::Verify(a) => {
            let params = nn::io::load(&a.params)?;
            let vault = Vault::load(&a.vault)?;
            let image = load_image(&a.image)?;
            let crops = a.crop.config(params.arch.input_size)?;
            let r = verify(&image, &a.user, &params, &vault, &crops, a.threshold)?;
            say(
                out,
                format_args!(
                    "user={} score={} value={:?} threshold={:?} decision={}",
                    r.user_id,
                    r.score,
                    r.score.value(),
                    r.threshold,
                    if r.accept { "accept" } else { "reject" }
                ),
            )
        }
        Command::Identify(a) => {
            let params = nn::io::load(&a.params)?;
            let vault = Vault::load(&a.vault)?;
            let image = load_image(&a.image)?;
            let crops = a.crop.config(params.arch.input_size)?;
            let ranked = identify(&image, &params, &vault, &crops)?;
            for (i, (user, score)) in ranked.iter().take(a.top.unwrap_or(usize::MAX)).enumerate() {
                say(out, format_args!("rank={} user={user} score={score} value={:?}", i + 1, score.value()))?;
            }
            Ok(())
        }
        Command::Evaluate(a) => evaluate(a, out),
        Command::AttackSim(a) => {
            let params = nn::io::load(&a.params)?;
            let vault = Vault::load(&a.vault)?;
            let crops = a.crop.config(params.arch.input_size)?;
            let unseen = match &a.unseen {
                Some(dir) => load_dataset(dir)?.into_iter().map(|s| s.image).collect(),
                None => Vec::new(),
            };
            let mut rng = RngState::new(a.attack_seed.unwrap_or(a.seed));
            let scores = attack_sim(&params, &vault, &crops, a.probes, &unseen, &mut rng)?;
            let users: Vec<&str> = vault.templates().map(|t| t.user_id.as_str()).collect();
            let nonzero: Vec<_> = scores.iter().enumerate().filter(|(_, s)| s.matches > 0).collect();
            say(
                out,
                format_args!(
                    "probes={} users={} comparisons={} zero={} nonzero={}",
                    a.probes + unseen.len(),
                    users.len(),
                    scores.len(),
                    scores.len() - nonzero.len(),
                    nonzero.len()
                ),
            )?;
            for (i, s) in &nonzero {
                say(out, format_args!("nonzero probe={} user={} score={s}", i / users.len(), users[i % users.len()]))?;
            }
            if let Some(path) = &a.out {
                let mut csv = String::from("probe,user,matches,total\n");
                for (i, s) in scores.iter().enumerate() {
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        i / users.len(),
                        users[i % users.len()],
                        s.matches,
                        s.total
                    ));
                }
                std::fs::write(path, csv).map_err(Error::from)?;
            }
            Ok(())
        }
        Command::GradientCheck(a) => {
            let mut worst = 0.0f64;
            let mut checked = 0;
            let mut shrunk = 0;
            for seed in a.seed..a.seed + a.cases {
                let r = tiny_case(seed)?.check(a.eps)?;
                worst = worst.max(r.max_rel_error);
                checked += r.checked;
                shrunk += r.shrunk;
            }
            say(
                out,
                format_args!("max_rel_error={worst:e} cases={} parameters={checked} shrunk_steps={shrunk}", a.cases),
            )?;
            if worst < a.tolerance {
                Ok(())
            } else {
                Err(Failure::GradientCheck(format!("max relative error {worst:e} is not below {:e}", a.tolerance)))
            }
        }
    }
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult<()> {
    let data = match &a.data {
        Some(dir) => load_dataset(dir)?,
        None => gen_synth_dataset(&synth_spec(&a.synth, a.image_size, a.data_seed.unwrap_or(a.seed)))?,
    };
    let cfg = ProtocolConfig {
        arch: architecture(&a.arch, a.image_size, a.code_bits)?,
        train: train_config(&a.train),
        augment: a.crop.config(a.image_size)?,
        train_per_user: a.train_per_user,
        validation_per_user: a.validation_per_user,
        num_splits: a.splits,
    };
    let seeds = ProtocolSeeds {
        split: a.split_seed.unwrap_or(a.seed),
        code: a.code_seed.unwrap_or(a.seed),
        train: a.train_seed.unwrap_or(a.seed),
    };
    let mut attack = Vec::new();
    let mut attack_rng = RngState::new(a.attack_seed.unwrap_or(a.seed));
    let report = run_protocol_with(&data, &cfg, &seeds, |split| {
        if split.index == 0 && a.attack_probes > 0 {
            attack = attack_sim(&split.params, &split.vault, &cfg.augment, a.attack_probes, &[], &mut attack_rng)?;
        }
        Ok(())
    })?
    .with_attack(attack)?;
    if let Some(dir) = &a.report {
        report.write_to(dir)?;
    }
    out.write_all(report.to_text().as_bytes()).map_err(Error::from)?;
    Ok(())
}

fn say(out: &mut dyn Write, args: fmt::Arguments<'_>) -> CliResult<()> {
    writeln!(out, "{args}").map_err(|e| Failure::Lib(Error::Io(e)))
}

/// Long flag names accepted by subcommand `name`.
fn accepted_keys(name: &str) -> Vec<String> {
    Cli::command()
        .find_subcommand(name)
        .map(|c| c.get_arguments().filter_map(|a| a.get_long()).map(str::to_string).collect())
        .unwrap_or_default()
}

fn all_keys() -> Vec<String> {
    let cmd = Cli::command();
    cmd.get_subcommands().flat_map(|c| accepted_keys(c.get_name())).collect()
}

/// Splices config-file settings in right after the subcommand name so any
/// flag repeated later on the command line overrides them.
fn expand_config(argv: Vec<OsString>) -> CliResult<(Vec<OsString>, Vec<String>)> {
    let mut config_path = None;
    let mut sub_at = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            config_path = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(PathBuf::from(p));
        } else if sub_at.is_none() && !a.starts_with('-') {
            sub_at = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub_at)) = (config_path, sub_at) else {
        return Ok((argv, Vec::new()));
    };
    let cfg = RunConfig::load(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let sub = argv[sub_at].to_string_lossy().into_owned();
    let here = accepted_keys(&sub);
    let everywhere = all_keys();
    let mut injected = Vec::new();
    let mut keys = Vec::new();
    for (k, v) in cfg.entries() {
        if here.iter().any(|h| h == k) && k != "config" {
            injected.push(OsString::from(format!("--{k}")));
            injected.push(OsString::from(v));
            keys.push(k.clone());
        } else if !everywhere.iter().any(|h| h == k) || k == "config" {
            return Err(Failure::Config(format!("{}: unknown key {k}", path.display())));
        }
    }
    let mut out = argv[..=sub_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[sub_at + 1..]);
    Ok((out, keys))
}

fn clap_failure(e: clap::Error, config_keys: &[String], argv: &[OsString]) -> Failure {
    let line = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
    // A bad value that only the config file supplied is a config problem.
    if let Some(ContextValue::String(arg)) = e.get(ContextKind::InvalidArg) {
        let long = arg.split_whitespace().next().unwrap_or_default().trim_start_matches("--").to_string();
        let on_command_line = argv.iter().filter(|a| a.to_string_lossy() == format!("--{long}")).count() > 1;
        if config_keys.contains(&long) && !on_command_line {
            return Failure::Config(line);
        }
    }
    Failure::Usage(line)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Output goes to `out`, the error line to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let result = expand_config(argv).and_then(|(argv, keys)| match Cli::try_parse_from(&argv) {
        Ok(cli) => dispatch(cli.command, out),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(out, "{e}");
            Ok(())
        }
        Err(e) => Err(clap_failure(e, &keys, &argv)),
    });
    match result {
        Ok(()) => exit_code::OK,
        Err(f) => {
            let _ = writeln!(err, "{f}");
            f.code()
        }
    }
}

/// [`run_with`] on the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
