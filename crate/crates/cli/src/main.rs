//! `noise2sr`: simulate noisy datasets, train the super-resolving denoiser,
//! denoise, evaluate, check the self-supervised risk identity and plot
//! comparison panels.

mod config;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Arg, ArgAction, ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand};
use noise2sr::dataset::{ingest_fmd_layout, load_image, make_synthetic_split, save_image, Manifest, Role};
use noise2sr::reconstruct::{denoise, denoise_sr};
use noise2sr::theorem::{bilinear_upsampler, smooth_scene};
use noise2sr::train::{train_on, write_metrics_log, TrainData};
use noise2sr::{phantom, seed, verify_decomposition, Checkpoint, Error, Image, MetricReport};
use serde::Serialize;

use config::{config_keys, OutputFormat, RunConfig};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  unexpected failure (I/O, diverged training)
  2  invalid configuration, parameter value or command line
  3  missing or malformed data files
  4  theorem check failed

Every key of the TOML config can be overridden as --<section>.<key> <value>,
for example --train.steps 2000 or --noise.sigma 0.1.";

#[derive(Parser, Debug)]
#[command(name = "noise2sr", version, about = "Self-supervised denoising with super-resolved sub-sample pairs", after_help = EXIT_CODES)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "NOISE2SR_NUM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Print the effective configuration as TOML.
    ShowConfig,
    /// Write procedural cell-like clean images into the output directory.
    Phantoms(PhantomsArgs),
    /// Corrupt data.clean_dir with [noise] and write a split manifest.
    Simulate,
    /// Build references and a manifest from an FMD-style capture tree.
    Ingest(IngestArgs),
    /// Train on data.manifest; writes last.ckpt, best.ckpt and metrics.ndjson.
    Train(TrainArgs),
    /// Denoise one image file.
    Denoise(DenoiseArgs),
    /// Score a checkpoint on the manifest's test (or other) entries.
    Evaluate(EvaluateArgs),
    /// Monte Carlo check of the self-supervised risk decomposition.
    VerifyTheorem(VerifyArgs),
    /// Noisy | denoised | reference panel with PSNR/SSIM captions.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct PhantomsArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Root of the capture tree.
    #[arg(long)]
    root: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Keep the 2H x 2W super-resolved output.
    #[arg(long)]
    sr: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    role: RoleArg,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum RoleArg {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Use a trained network as the predictor instead of bilinear up-sampling.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    noisy: PathBuf,
    #[arg(long)]
    denoised: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

/// The theorem check ran but the identity did not hold.
#[derive(Debug)]
struct TheoremFailed(String);

impl std::fmt::Display for TheoremFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for TheoremFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<TheoremFailed>().is_some() {
        return 4;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Domain(_)) => 2,
        Some(Error::Data(_) | Error::Format { .. } | Error::Shape(_) | Error::Json(_)) => 3,
        Some(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 3,
        _ => 1,
    }
}

/// The command definition with one flag per config key.
fn command() -> Command {
    let mut cmd = Cli::command();
    for key in config_keys() {
        let name: &'static str = Box::leak(key.into_boxed_str());
        let mut arg = Arg::new(name)
            .long(name)
            .value_name("VALUE")
            .global(true)
            .action(ArgAction::Set)
            .help_heading("Config overrides");
        match name {
            "output.dir" => arg = arg.visible_alias("out"),
            "output.format" => arg = arg.visible_alias("format"),
            _ => {}
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn overrides(matches: &ArgMatches) -> Vec<(String, String)> {
    // global args are propagated to the subcommand's matches
    let sub = matches.subcommand().map(|(_, m)| m).unwrap_or(matches);
    let mut out = Vec::new();
    for key in config_keys() {
        if let Some(v) = sub.get_one::<String>(&key).or_else(|| matches.get_one::<String>(&key)) {
            out.push((key, v.clone()));
        }
    }
    out
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(matches: &ArgMatches) -> anyhow::Result<()> {
    let cli = Cli::from_arg_matches(matches)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut all = cli.seed.map(RunConfig::seed_overrides).unwrap_or_default();
    all.extend(overrides(matches));
    let cfg = RunConfig::load(cli.config.as_deref(), &all)?;
    match cli.command {
        Cmd::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Cmd::Phantoms(a) => cmd_phantoms(&cfg, &a),
        Cmd::Simulate => cmd_simulate(&cfg),
        Cmd::Ingest(a) => cmd_ingest(&cfg, &a),
        Cmd::Train(a) => cmd_train(&cfg, &a),
        Cmd::Denoise(a) => cmd_denoise(&cfg, &a),
        Cmd::Evaluate(a) => cmd_evaluate(&cfg, &a),
        Cmd::VerifyTheorem(a) => cmd_verify_theorem(&cfg, &a),
        Cmd::Plot(a) => cmd_plot(&a),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))
}

fn cmd_phantoms(cfg: &RunConfig, a: &PhantomsArgs) -> anyhow::Result<()> {
    let dir = &cfg.output.dir;
    for i in 0..a.count {
        let img = phantom::cells(a.size, a.size, seed::derive(cfg.data.master_seed, &[i as u64]));
        save_image(&img, &dir.join(format!("phantom_{i:03}.png")), cfg.output.bit_depth)?;
    }
    println!("wrote {} phantoms to {}", a.count, dir.display());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let clean = cfg
        .data
        .clean_dir
        .as_ref()
        .ok_or_else(|| Error::Config("data.clean_dir is not set".into()))?;
    let m = make_synthetic_split(clean, &cfg.output.dir, &cfg.noise, cfg.data.split, cfg.data.master_seed)?;
    let path = cfg.output.dir.join("manifest.json");
    println!(
        "{} train / {} val / {} test images, noise {:?} sigma {:?} lam {:?}",
        m.count(Role::Train),
        m.count(Role::Val),
        m.count(Role::Test),
        cfg.noise.family,
        cfg.noise.sigma,
        cfg.noise.lam
    );
    println!("{}", path.display());
    Ok(())
}

fn cmd_ingest(cfg: &RunConfig, a: &IngestArgs) -> anyhow::Result<()> {
    let report = ingest_fmd_layout(&a.root, &cfg.output.dir, &cfg.data.fmd)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let m = &report.manifest;
    println!(
        "{} train / {} val / {} test entries",
        m.count(Role::Train),
        m.count(Role::Val),
        m.count(Role::Test)
    );
    println!("{}", cfg.output.dir.join("manifest.json").display());
    Ok(())
}

fn manifest_of(cfg: &RunConfig) -> anyhow::Result<(Manifest, PathBuf)> {
    let path = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("data.manifest is not set".into()))?;
    if !path.exists() {
        return Err(Error::Data(format!("manifest {} not found", path.display())).into());
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((Manifest::load(path)?, root))
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> anyhow::Result<()> {
    let (manifest, root) = manifest_of(cfg)?;
    if manifest.entries.is_empty() {
        return Err(Error::Config("manifest has no entries".into()).into());
    }
    let data = TrainData::from_manifest(&manifest, &root)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let outcome = train_on(&cfg.train, &cfg.model, &data, resume.as_ref())?;
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    outcome.last.save(&dir.join("last.ckpt"))?;
    if let Some(best) = &outcome.best {
        best.save(&dir.join("best.ckpt"))?;
    }
    let log = fs::File::create(dir.join("metrics.ndjson")).context("create metrics log")?;
    write_metrics_log(std::io::BufWriter::new(log), &outcome.log)?;
    if let Some(r) = outcome.log.last() {
        println!("step {} loss {:.6}", r.step, r.train_loss);
    }
    if let Some(best) = &outcome.best {
        println!(
            "best val PSNR {:.3} dB at step {}",
            best.validation_metric.unwrap_or(f64::NAN),
            best.training_step
        );
    }
    println!("{}", dir.join("last.ckpt").display());
    Ok(())
}

fn cmd_denoise(cfg: &RunConfig, a: &DenoiseArgs) -> anyhow::Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.model()?;
    let y = load_image(&a.input)?;
    let out = if a.sr {
        denoise_sr(&model, &y)?
    } else {
        denoise(&model, &y)?
    };
    save_image(&out, &a.output, y.bit_depth().unwrap_or(cfg.output.bit_depth))?;
    println!(
        "{}x{} -> {}x{} {}",
        y.height(),
        y.width(),
        out.height(),
        out.width(),
        a.output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    image: String,
    noisy: MetricReport,
    denoised: MetricReport,
}

#[derive(Serialize)]
struct EvalMean {
    noisy_psnr_db: f64,
    noisy_ssim: f64,
    psnr_db: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct Evaluation {
    rows: Vec<EvalRow>,
    mean: EvalMean,
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "inf".into()
    }
}

fn evaluation_csv(e: &Evaluation) -> String {
    let mut s = String::from("image,noisy_psnr_db,noisy_ssim,psnr_db,ssim\n");
    for r in &e.rows {
        s += &format!(
            "{},{},{:.6},{},{:.6}\n",
            r.image,
            fmt_db(r.noisy.psnr_db),
            r.noisy.ssim,
            fmt_db(r.denoised.psnr_db),
            r.denoised.ssim
        );
    }
    let m = &e.mean;
    s += &format!(
        "mean,{},{:.6},{},{:.6}\n",
        fmt_db(m.noisy_psnr_db),
        m.noisy_ssim,
        fmt_db(m.psnr_db),
        m.ssim
    );
    s
}

fn cmd_evaluate(cfg: &RunConfig, a: &EvaluateArgs) -> anyhow::Result<()> {
    let (manifest, root) = manifest_of(cfg)?;
    let model = Checkpoint::load(&a.checkpoint)?.model()?;
    let role = match a.role {
        RoleArg::Train => Role::Train,
        RoleArg::Val => Role::Val,
        RoleArg::Test => Role::Test,
    };
    let mut rows = Vec::new();
    for entry in manifest.entries.iter().filter(|e| e.role == role) {
        let reference = entry
            .reference_path
            .as_ref()
            .ok_or_else(|| Error::Data(format!("entry {:?} has no reference", entry.noisy_paths)))?;
        let reference = load_image(&root.join(reference))?;
        for p in &entry.noisy_paths {
            let y = load_image(&root.join(p))?;
            let d = denoise(&model, &y)?;
            rows.push(EvalRow {
                image: p.clone(),
                noisy: MetricReport::compute(&reference, &y)?,
                denoised: MetricReport::compute(&reference, &d)?,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("manifest has no {role:?} entries")).into());
    }
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean = EvalMean {
        noisy_psnr_db: avg(&|r| r.noisy.psnr_db),
        noisy_ssim: avg(&|r| r.noisy.ssim),
        psnr_db: avg(&|r| r.denoised.psnr_db),
        ssim: avg(&|r| r.denoised.ssim),
    };
    let eval = Evaluation { rows, mean };
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let csv = evaluation_csv(&eval);
    let json = serde_json::to_string_pretty(&eval)? + "\n";
    fs::write(dir.join("evaluation.csv"), &csv).context("write evaluation.csv")?;
    fs::write(dir.join("evaluation.json"), &json).context("write evaluation.json")?;
    match cfg.output.format {
        OutputFormat::Csv => print!("{csv}"),
        OutputFormat::Json => print!("{json}"),
    }
    Ok(())
}

fn cmd_verify_theorem(cfg: &RunConfig, a: &VerifyArgs) -> anyhow::Result<()> {
    let t = &cfg.theorem;
    let x = smooth_scene(t.size, t.size);
    let mut rng = seed::rng(t.seed);
    let report = match &a.checkpoint {
        None => verify_decomposition(&x, &cfg.noise, bilinear_upsampler, t.trials, &mut rng)?,
        Some(p) => {
            let model = Checkpoint::load(p)?.model()?;
            let predictor = |sub: &Image| Ok(model.forward(std::slice::from_ref(sub))?.remove(0));
            verify_decomposition(&x, &cfg.noise, predictor, t.trials, &mut rng)?
        }
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    create_dir(&cfg.output.dir)?;
    fs::write(cfg.output.dir.join("theorem.json"), &json).context("write theorem.json")?;
    print!("{json}");
    if report.holds_within(t.tolerance_se) {
        eprintln!(
            "pass: residual {:.2} SE, cross term {:.2} SE",
            report.residual_z(),
            report.cross_term_z()
        );
        Ok(())
    } else {
        Err(anyhow!(TheoremFailed(format!(
            "identity violated: residual {:.2} SE, cross term {:.2} SE (tolerance {})",
            report.residual_z(),
            report.cross_term_z(),
            t.tolerance_se
        ))))
    }
}

fn caption(name: &str, reference: &Image, img: &Image) -> anyhow::Result<Vec<String>> {
    let m = MetricReport::compute(reference, img)?;
    Ok(vec![
        name.to_string(),
        format!("{} DB / {:.3}", fmt_db(m.psnr_db), m.ssim),
    ])
}

fn cmd_plot(a: &PlotArgs) -> anyhow::Result<()> {
    let noisy = load_image(&a.noisy)?;
    let denoised = load_image(&a.denoised)?;
    let reference = load_image(&a.reference)?;
    let tiles = [
        plot::Tile {
            lines: caption("NOISY", &reference, &noisy)?,
            image: &noisy,
        },
        plot::Tile {
            lines: caption("DENOISED", &reference, &denoised)?,
            image: &denoised,
        },
        plot::Tile {
            lines: vec!["REFERENCE".into(), "PSNR / SSIM".into()],
            image: &reference,
        },
    ];
    save_image(&plot::render_panel(&tiles), &a.output, 8)?;
    println!("{}", a.output.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_and_config_keys_are_bijective() {
        let cmd = command();
        let flags: std::collections::BTreeSet<String> = cmd
            .get_arguments()
            .filter(|a| a.get_help_heading() == Some("Config overrides"))
            .filter_map(|a| a.get_long().map(str::to_string))
            .collect();
        let keys: std::collections::BTreeSet<String> = config_keys().into_iter().collect();
        assert_eq!(flags, keys);
        assert_eq!(keys.len(), config_keys().len());
        cmd.debug_assert();
    }

    #[test]
    fn overrides_reach_config() {
        let m = command()
            .try_get_matches_from([
                "noise2sr",
                "simulate",
                "--train.steps",
                "7",
                "--out",
                "x",
                "--format",
                "json",
            ])
            .unwrap();
        let cfg = RunConfig::load(None, &overrides(&m)).unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.output.dir, PathBuf::from("x"));
        assert_eq!(cfg.output.format, OutputFormat::Json);
    }

    #[test]
    fn csv_has_mean_row() {
        let r = |p: f64| MetricReport {
            psnr_db: p,
            ssim: 0.5,
            peak: 1.0,
        };
        let e = Evaluation {
            rows: vec![
                EvalRow {
                    image: "a".into(),
                    noisy: r(20.0),
                    denoised: r(30.0),
                },
                EvalRow {
                    image: "b".into(),
                    noisy: r(22.0),
                    denoised: r(f64::INFINITY),
                },
            ],
            mean: EvalMean {
                noisy_psnr_db: 21.0,
                noisy_ssim: 0.5,
                psnr_db: f64::INFINITY,
                ssim: 0.5,
            },
        };
        let csv = evaluation_csv(&e);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean,21.0000"));
        assert!(lines[2].contains(",inf,"));
    }
}
