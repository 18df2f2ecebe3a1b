//! The `frea` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{value_parser, Arg, ArgMatches, Command};

use crate::data::{iterate, kfold_split, load_dataset, synth_generate, PrepOptions, Split};
use crate::error::{FreaError, Result};
use crate::frea_unet::{checkpoint, FreaUnetModel};
use crate::image_ops::{freq_split, read_image, write_image, ImageFile};
use crate::objectives::{evaluate_pair, format_g6};
use crate::tensor::Tensor;
use crate::trainer::{
    ablate, cross_validate, evaluate, parse_config_text, train_round, TrainConfig, CONFIG_KEYS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const DEFAULT_OUT_DIR: &str = "frea-run";

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .value_parser(value_parser!(PathBuf))
            .help("key = value config file; flags override its values"),
    );
    CONFIG_KEYS.iter().fold(cmd, |cmd, key| {
        cmd.arg(
            Arg::new(*key)
                .long(flag_name(key))
                .value_name("VALUE")
                .help_heading("Config keys"),
        )
    })
}

fn data_arg(required: bool) -> Arg {
    Arg::new("data")
        .long("data")
        .value_name("DIR")
        .required(required)
        .value_parser(value_parser!(PathBuf))
        .help("Directory of <subject>_mr.* / <subject>_pet.* pairs")
}

fn path_arg(id: &'static str, help: &'static str) -> Arg {
    Arg::new(id)
        .long(id)
        .value_name("PATH")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

pub fn command() -> Command {
    Command::new("frea")
        .about("Frequency-aware attention U-net for MR-to-PET synthesis")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("gen-data")
                .about("Write a synthetic paired dataset")
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(Arg::new("subjects").long("subjects").default_value("30").value_parser(value_parser!(usize)))
                .arg(Arg::new("size").long("size").default_value("64").value_parser(value_parser!(usize)))
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
                .arg(
                    Arg::new("format")
                        .long("format")
                        .default_value("raw")
                        .value_parser(["raw", "pgm"]),
                ),
        )
        .subcommand(
            config_args(Command::new("train").about("Train one cross-validation round and test it"))
                .arg(data_arg(true))
                .arg(Arg::new("round").long("round").default_value("0").value_parser(value_parser!(usize))),
        )
        .subcommand(
            config_args(Command::new("eval").about("Evaluate a checkpoint"))
                .arg(data_arg(true))
                .arg(path_arg("checkpoint", "Model checkpoint"))
                .arg(
                    Arg::new("round")
                        .long("round")
                        .value_parser(value_parser!(usize))
                        .help("Only the test fold of this round (default: every sample)"),
                )
                .arg(
                    Arg::new("out-csv")
                        .long("out-csv")
                        .value_name("PATH")
                        .value_parser(value_parser!(PathBuf))
                        .help("Write the metrics CSV here instead of stdout"),
                ),
        )
        .subcommand(config_args(Command::new("cv").about("k-fold cross-validation")).arg(data_arg(true)))
        .subcommand(
            config_args(Command::new("ablate").about("Cross-validate all four ablation arms")).arg(data_arg(true)),
        )
        .subcommand(
            Command::new("split-freq")
                .about("Split an image into Gaussian low and residual high bands")
                .arg(path_arg("in", "Input image"))
                .arg(Arg::new("sigma").long("sigma").default_value("3").value_parser(value_parser!(f64)))
                .arg(
                    Arg::new("kernel-size")
                        .long("kernel-size")
                        .default_value("13")
                        .value_parser(value_parser!(usize)),
                )
                .arg(path_arg("out-low", "Low band output (raw float format)"))
                .arg(path_arg("out-high", "High band output (raw float format)"))
                .arg(
                    Arg::new("out-merged")
                        .long("out-merged")
                        .value_name("PATH")
                        .value_parser(value_parser!(PathBuf))
                        .help("Also write low + high"),
                ),
        )
        .subcommand(
            Command::new("metrics")
                .about("MAE, PSNR and SSIM between a reference and a synthesized image")
                .arg(path_arg("a", "Reference image (defines the body mask)"))
                .arg(path_arg("b", "Synthesized image"))
                .arg(
                    Arg::new("mask-threshold")
                        .long("mask-threshold")
                        .default_value("0.01")
                        .value_parser(value_parser!(f64)),
                ),
        )
        .subcommand(
            config_args(Command::new("info").about("Show the effective config and model size")).arg(
                Arg::new("checkpoint")
                    .long("checkpoint")
                    .value_name("PATH")
                    .value_parser(value_parser!(PathBuf)),
            ),
        )
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(&matches, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    match name {
        "gen-data" => gen_data(sub, out),
        "train" => cmd_train(sub, out, err),
        "eval" => cmd_eval(sub, out),
        "cv" => cmd_cv(sub, out, err),
        "ablate" => cmd_ablate(sub, out, err),
        "split-freq" => cmd_split(sub, out),
        "metrics" => cmd_metrics(sub, out),
        "info" => cmd_info(sub, out),
        _ => unreachable!("unknown subcommand {name}"),
    }
}

fn io_err(e: std::io::Error) -> FreaError {
    FreaError::io("<output>", e)
}

/// Config file values, then flag overrides.
fn load_config(m: &ArgMatches) -> Result<TrainConfig> {
    let mut pairs = Vec::new();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        let text = fs::read_to_string(path).map_err(|e| FreaError::io(path, e))?;
        pairs = parse_config_text(&text)?;
    }
    for key in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            pairs.push((key.to_string(), v.clone()));
        }
    }
    let mut config = TrainConfig::default();
    config.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(config)
}

fn with_out_dir(mut config: TrainConfig) -> TrainConfig {
    if config.out_dir.is_none() {
        config.out_dir = Some(PathBuf::from(DEFAULT_OUT_DIR));
    }
    config
}

fn gen_data(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let dir = m.get_one::<PathBuf>("out").unwrap();
    let opts = PrepOptions {
        size: *m.get_one("size").unwrap(),
        ..Default::default()
    };
    let ds = synth_generate(*m.get_one("subjects").unwrap(), &opts, *m.get_one("seed").unwrap())?;
    fs::create_dir_all(dir).map_err(|e| FreaError::io(dir, e))?;
    let ext = m.get_one::<String>("format").unwrap();
    for s in ds.samples() {
        write_image(dir.join(format!("{}_mr.{ext}", s.subject_id)), &s.mr_image)?;
        write_image(dir.join(format!("{}_pet.{ext}", s.subject_id)), &s.pet_image)?;
    }
    writeln!(out, "wrote {} subjects to {}", ds.len(), dir.display()).map_err(io_err)
}

fn load_data(m: &ArgMatches, config: &TrainConfig) -> Result<crate::data::Dataset> {
    load_dataset(m.get_one::<PathBuf>("data").unwrap(), &config.prep_options())
}

fn progress(err: &mut dyn Write, tag: &str, epoch: usize, epochs: usize, l: &crate::objectives::LossBreakdown) {
    let _ = writeln!(
        err,
        "{tag}epoch {epoch}/{epochs} total={:.6} low={:.6} high={:.6} rec={:.6}",
        l.total, l.l_low, l.l_high, l.l_rec
    );
}

fn cmd_train(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = with_out_dir(load_config(m)?);
    config.validate()?;
    let ds = load_data(m, &config)?;
    let round = *m.get_one::<usize>("round").unwrap();
    let folds = kfold_split(&ds, config.k, config.data_seed)?;
    let epochs = config.epochs;
    let (_, rec) = train_round(&config, &ds, &folds, round, &mut |e, l| {
        progress(err, &format!("round {round} "), e, epochs, l)
    })?;
    let dir = config.out_dir.as_ref().unwrap();
    fs::write(dir.join("config.txt"), config.to_text()).map_err(|e| FreaError::io(dir, e))?;
    writeln!(
        out,
        "checkpoint {} ({})",
        dir.join(format!("round{round}.ckpt")).display(),
        rec.checkpoint_hash
    )
    .map_err(io_err)?;
    write!(out, "{}", rec.report.to_csv()).map_err(io_err)
}

fn cmd_eval(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let mut config = load_config(m)?;
    let mut model = checkpoint::load(m.get_one::<PathBuf>("checkpoint").unwrap())?;
    model.eval();
    config.model = model.config().clone();
    let ds = load_data(m, &config)?;
    let report = match m.get_one::<usize>("round") {
        Some(&round) => {
            let folds = kfold_split(&ds, config.k, config.data_seed)?;
            let test = iterate(&ds, &folds, round, Split::Test, config.shuffle_seed, 0)?;
            evaluate(&mut model, &test, round, config.mask_threshold)?
        }
        None => {
            let all: Vec<_> = ds.samples().iter().collect();
            evaluate(&mut model, &all, 0, config.mask_threshold)?
        }
    };
    match m.get_one::<PathBuf>("out-csv") {
        Some(p) => report.write_csv(p),
        None => write!(out, "{}", report.to_csv()).map_err(io_err),
    }
}

fn cmd_cv(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = with_out_dir(load_config(m)?);
    config.validate()?;
    let ds = load_data(m, &config)?;
    let epochs = config.epochs;
    let rec = cross_validate(&config, &ds, &mut |r, e, l| progress(err, &format!("round {r} "), e, epochs, l))?;
    write!(out, "{}", rec.summary()).map_err(io_err)
}

fn cmd_ablate(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = with_out_dir(load_config(m)?);
    config.validate()?;
    let ds = load_data(m, &config)?;
    let epochs = config.epochs;
    let report = ablate(&config, &ds, &mut |a, r, e, l| {
        progress(err, &format!("{} round {r} ", a.name()), e, epochs, l)
    })?;
    write!(out, "{}", report.table()).map_err(io_err)
}

/// Pixels as a `1×C×H×W` tensor in intensity units.
fn image_tensor(img: &ImageFile) -> Result<Tensor> {
    let (h, w, c) = (img.height, img.width, img.channels);
    Ok(Tensor::from_fn(&[1, c, h, w], |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        img.pixels[rest * c + ch]
    }))
}

fn tensor_image(t: &Tensor, q: f64) -> Result<ImageFile> {
    let (_, c, h, w) = t.nchw()?;
    let mut pixels = vec![0.0; c * h * w];
    for (i, v) in t.data().iter().enumerate() {
        let (ch, rest) = (i / (h * w), i % (h * w));
        pixels[rest * c + ch] = *v;
    }
    ImageFile::new(h, w, c, q, pixels)
}

fn raw_path(p: &Path) -> Result<&Path> {
    if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        return Err(FreaError::InvalidArgument(format!(
            "{}: bands are signed floats; use a raw (non-.pgm) path",
            p.display()
        )));
    }
    Ok(p)
}

fn cmd_split(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let img = read_image(m.get_one::<PathBuf>("in").unwrap())?;
    let bands = freq_split(
        &image_tensor(&img)?,
        *m.get_one("sigma").unwrap(),
        *m.get_one("kernel-size").unwrap(),
    )?;
    let low = raw_path(m.get_one::<PathBuf>("out-low").unwrap())?;
    let high = raw_path(m.get_one::<PathBuf>("out-high").unwrap())?;
    write_image(low, &tensor_image(&bands.low, img.q)?)?;
    write_image(high, &tensor_image(&bands.high, img.q)?)?;
    if let Some(p) = m.get_one::<PathBuf>("out-merged") {
        let merged = crate::image_ops::freq_merge(&bands)?;
        write_image(p, &tensor_image(&merged, img.q)?)?;
    }
    writeln!(out, "low {}\nhigh {}", low.display(), high.display()).map_err(io_err)
}

fn cmd_metrics(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let a = read_image(m.get_one::<PathBuf>("a").unwrap())?;
    let b = read_image(m.get_one::<PathBuf>("b").unwrap())?;
    let r = evaluate_pair(&a, &b, *m.get_one("mask-threshold").unwrap())?;
    writeln!(
        out,
        "mae={} psnr={} ssim={}",
        format_g6(r.mae),
        format_g6(r.psnr),
        format_g6(r.ssim)
    )
    .map_err(io_err)
}

fn cmd_info(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let mut config = load_config(m)?;
    let (model, hash) = match m.get_one::<PathBuf>("checkpoint") {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| FreaError::io(p, e))?;
            let model = checkpoint::from_bytes(&bytes)?;
            (model, Some(checkpoint::content_hash(&bytes)))
        }
        None => (FreaUnetModel::build(config.effective_model())?, None),
    };
    config.model = model.config().clone();
    write!(out, "{}", config.to_text()).map_err(io_err)?;
    writeln!(out, "parameters = {}", model.param_count()).map_err(io_err)?;
    if let Some(h) = hash {
        writeln!(out, "checkpoint_sha256 = {h}").map_err(io_err)?;
    }
    Ok(())
}
