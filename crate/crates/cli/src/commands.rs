use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, ValueEnum};
use log::info;

use sasreg::dataset::{
    interleave, load_dataset, read_manifest, read_png, write_png16, write_synthetic_dataset, Frame, FrameSource, Layout,
};
use sasreg::fsutil;
use sasreg::metrics::{evaluate_dataset, evaluate_predictions, halves, MetricsReport};
use sasreg::model::checkpoint::load_checkpoint;
use sasreg::model::{ModelConfig, SasNet};
use sasreg::scan_sim::{AcquisitionParams, ParamRange, SimulationPlan};
use sasreg::trainer::{
    benchmark_inference, run_ablation_suite, train, AblationFlags, DataConfig, TrainConfig, TrainData,
    BENCH_REPETITIONS, BENCH_WARMUP,
};
use sasreg::Image;

use crate::exit::{fail, ExitClass};
use crate::figures::{overlay, save_png};
use crate::report::{baseline_report, read_ablation, read_report, write_report};

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

/// `SASREG_SEED`, when set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var("SASREG_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            fail(
                ExitClass::InvalidParams,
                format!("SASREG_SEED={s:?} is not an unsigned integer"),
            )
        }),
        Err(_) => Ok(None),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fsutil::write_json_atomic(path, value).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Interleaved width; must be even.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Defaults to SASREG_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gain of the odd (forward) lines: a value or a range `lo..hi`.
    #[arg(long, default_value = "0.7..1.3", allow_hyphen_values = true)]
    pub gain_odd: ParamRange,
    #[arg(long, default_value = "0.7..1.3", allow_hyphen_values = true)]
    pub gain_even: ParamRange,
    #[arg(long, default_value = "-0.1..0.1", allow_hyphen_values = true)]
    pub offset_odd: ParamRange,
    #[arg(long, default_value = "-0.1..0.1", allow_hyphen_values = true)]
    pub offset_even: ParamRange,
    /// Column shift of the even lines in pixels (odd lines are the reference).
    #[arg(long, default_value = "-3..3", allow_hyphen_values = true)]
    pub shift: ParamRange,
    /// Gaussian PSF sigma in pixels, shared by both directions.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub blur: ParamRange,
    #[arg(long, default_value = "0.01", allow_hyphen_values = true)]
    pub noise: ParamRange,
    #[arg(long, default_value_t = 6)]
    pub vessels: usize,
    /// Every frame shows the same phantom (an image sequence).
    #[arg(long)]
    pub same_phantom: bool,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    pub split: Vec<f64>,
}

/// Checks both ends of every range so a bad value fails before any frame is
/// drawn, whatever the seed.
fn check_plan(plan: &SimulationPlan) -> Result<()> {
    for end in [0, 1] {
        let pick = |r: &ParamRange| if end == 0 { r.bounds().0 } else { r.bounds().1 };
        for (gain, offset, shift) in [
            (&plan.gain_odd, &plan.offset_odd, &plan.shift_odd),
            (&plan.gain_even, &plan.offset_even, &plan.shift_even),
        ] {
            AcquisitionParams {
                gain: pick(gain),
                offset: pick(offset),
                column_shift: pick(shift),
                blur_sigma: pick(&plan.blur_sigma),
                noise_sigma: pick(&plan.noise_sigma),
            }
            .validate()?;
        }
    }
    if !plan.width.is_multiple_of(2) {
        return Err(fail(
            ExitClass::InvalidParams,
            format!("--width {} must be even", plan.width),
        ));
    }
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let seed = a.seed.or(env_seed()?).unwrap_or(0);
    let plan = SimulationPlan {
        height: a.height,
        width: a.width,
        vessel_count: a.vessels,
        seed,
        gain_odd: a.gain_odd,
        gain_even: a.gain_even,
        offset_odd: a.offset_odd,
        offset_even: a.offset_even,
        shift_odd: ParamRange::Fixed(0.0),
        shift_even: a.shift,
        blur_sigma: a.blur,
        noise_sigma: a.noise,
        same_phantom: a.same_phantom,
    };
    check_plan(&plan)?;
    if a.frames == 0 {
        return Err(fail(ExitClass::InvalidParams, "--frames must be at least 1"));
    }
    let ratios: [f64; 3] = a.split.as_slice().try_into().map_err(|_| {
        fail(
            ExitClass::Usage,
            format!("--split takes three fractions, got {}", a.split.len()),
        )
    })?;
    let manifest = write_synthetic_dataset(&a.out, &plan, a.frames, ratios, seed)
        .with_context(|| format!("simulating into {}", a.out.display()))?;
    let mut artifacts = Vec::with_capacity(2 * a.frames + 1);
    for id in &manifest.frames {
        artifacts.push(a.out.join("frames").join(format!("{id}.png")));
        artifacts.push(a.out.join("gt").join(format!("{id}.json")));
    }
    artifacts.push(a.out.join("manifest.json"));
    Ok(Outcome {
        summary: format!(
            "simulated {} frames of {}x{} into {} (train/val/test {}/{}/{})",
            manifest.frames.len(),
            a.height,
            a.width,
            a.out.display(),
            manifest.splits.train.len(),
            manifest.splits.val.len(),
            manifest.splits.test.len()
        ),
        artifacts,
    })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config with [data] [model] [loss] [optim] [ablation] [run].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the desk-scale defaults (30 epochs) instead of 200 epochs.
    #[arg(long, conflicts_with = "config")]
    pub desk_scale: bool,
    /// Shorthand for `--data.root`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Shorthand for `--run.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Any config field by dotted name, e.g. `--optim.lr 1e-3` or
    /// `--ablation.drop_align=true`. Must come after the other options.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--SECTION.KEY VALUE"
    )]
    pub overrides: Vec<String>,
}

/// `["--a.b", "1", "--c.d=x", "--e.f"]` -> `[(a.b, 1), (c.d, x), (e.f, true)]`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(fail(
                ExitClass::Usage,
                format!("unexpected argument {arg:?}; overrides look like --section.key value"),
            ));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = match it.peek() {
                    Some(v) if !v.starts_with("--") => it.next().cloned().unwrap_or_default(),
                    _ => "true".to_string(),
                };
                (flag.to_string(), value)
            }
        };
        if !key.contains('.') {
            return Err(fail(ExitClass::Usage, format!("unknown option --{key}")));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Config file or defaults, then SASREG_SEED, then shorthands, then dotted
/// overrides; later sources win.
pub fn resolve_config(a: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None if a.desk_scale => TrainConfig::desk_scale(),
        None => TrainConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.run.seed = seed;
    }
    if let Some(d) = &a.data {
        cfg.data.root = d.clone();
    }
    if let Some(o) = &a.out {
        cfg.run.out_dir = o.clone();
    }
    for (key, value) in parse_overrides(&a.overrides)? {
        cfg.apply_override(&key, &value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn train_cmd(a: TrainArgs) -> Result<Outcome> {
    let cfg = resolve_config(&a.config)?;
    let data = TrainData::load(&cfg.data, cfg.run.seed)?;
    info!(
        "training on {} frames ({} val, {} test) for {} epochs",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        cfg.optim.epochs
    );
    let config_path = cfg.run.out_dir.join("config.toml");
    fsutil::write_atomic(&config_path, cfg.to_toml_string().as_bytes())
        .with_context(|| format!("writing {}", config_path.display()))?;
    let out = train(&cfg, &data)?;

    let mut artifacts = vec![config_path, out.log_path.clone()];
    artifacts.extend(out.checkpoints.iter().cloned());
    artifacts.push(out.last_checkpoint.clone());
    if let Some(b) = &out.best_checkpoint {
        artifacts.push(b.clone());
    }
    artifacts.dedup();
    let best = out
        .state
        .best_val_ncc
        .map_or("no validation split".to_string(), |v| format!("best val NCC {v:.4}"));
    Ok(Outcome {
        summary: format!(
            "trained to epoch {} ({} steps), {best}; last checkpoint {}",
            out.state.epoch,
            out.state.step,
            out.last_checkpoint.display()
        ),
        artifacts,
    })
}

// ---------------------------------------------------------------- register

/// Frames from a PNG file, a dataset root or a directory of PNGs.
pub fn load_frames(input: &Path) -> Result<Vec<Frame>> {
    if input.is_file() {
        let img = read_png(input)?;
        let id = input
            .file_stem()
            .map_or("frame".to_string(), |s| s.to_string_lossy().into_owned());
        return Ok(vec![Frame::new(id, img, FrameSource::Real)?]);
    }
    let layout = read_manifest(input)?.map_or(Layout::Orpam4k, |m| m.layout);
    let frames = load_dataset(input, layout)?;
    if frames.is_empty() {
        return Err(fail(
            ExitClass::DataFormat,
            format!("no PNG frames under {}", input.display()),
        ));
    }
    Ok(frames)
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A PNG frame, a dataset root, or a directory of PNG frames.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write magenta/green overlays before and after registration.
    #[arg(long)]
    pub overlays: bool,
}

pub fn register(a: RegisterArgs) -> Result<Outcome> {
    let (net, _) = load_checkpoint(&a.checkpoint)?;
    let frames = load_frames(&a.input)?;
    let mut artifacts = Vec::new();
    for f in &frames {
        let reg = net
            .register(&f.odd_half, &f.even_half)
            .with_context(|| format!("registering {}", f.frame_id))?;
        let corrected = interleave(&f.odd_half, &reg)?;
        let reg_path = a.out.join("registered").join(format!("{}.png", f.frame_id));
        let cor_path = a.out.join("corrected").join(format!("{}.png", f.frame_id));
        write_png16(&reg_path, &reg)?;
        write_png16(&cor_path, &corrected)?;
        artifacts.push(reg_path);
        artifacts.push(cor_path);
        if a.overlays {
            for (tag, even) in [("before", &f.even_half), ("after", &reg)] {
                let p = a.out.join("overlay").join(format!("{}_{tag}.png", f.frame_id));
                save_png(&p, &overlay(&f.odd_half, even))?;
                artifacts.push(p);
            }
        }
    }
    Ok(Outcome {
        summary: format!("registered {} frames into {}", frames.len(), a.out.display()),
        artifacts,
    })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "predictions", "baseline"])))]
pub struct EvalArgs {
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Which frames to score. Without a manifest the split is drawn from
    /// the seed (SASREG_SEED, then 0) at 0.8/0.1/0.1.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    /// Register with this model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `<frame_id>.png`: registered even halves, or corrected
    /// interleaved frames as written by `register`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Score the unregistered even half.
    #[arg(long)]
    pub baseline: bool,
    /// Name in the report; defaults to the checkpoint stem, "predictions"
    /// or "unregistered".
    #[arg(long)]
    pub method: Option<String>,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

fn select_frames(root: &Path, split: SplitChoice) -> Result<Vec<Frame>> {
    if split == SplitChoice::All {
        return load_frames(root);
    }
    let layout = read_manifest(root)?.map_or(Layout::Orpam4k, |m| m.layout);
    let cfg = DataConfig {
        root: root.to_path_buf(),
        layout,
        ..DataConfig::default()
    };
    let data = TrainData::load(&cfg, env_seed()?.unwrap_or(0))?;
    let frames = match split {
        SplitChoice::Train => data.train,
        SplitChoice::Val => data.val,
        _ => data.test,
    };
    if frames.is_empty() {
        return Err(fail(
            ExitClass::DataFormat,
            format!("the {split:?} split of {} is empty; try --split all", root.display()),
        ));
    }
    Ok(frames)
}

fn read_prediction(dir: &Path, frame: &Frame) -> Result<Image> {
    let path = dir.join(format!("{}.png", frame.frame_id));
    let img = read_png(&path)?;
    let (h, w) = frame.interleaved.dims();
    match img.dims() {
        d if d == (h, w) => Ok(halves(&img)?.1),
        d if d == (h, w / 2) => Ok(img),
        d => Err(fail(
            ExitClass::DataFormat,
            format!(
                "{} is {}x{}; expected {h}x{} or {h}x{w}",
                path.display(),
                d.0,
                d.1,
                w / 2
            ),
        )),
    }
}

pub fn evaluate(a: &EvalArgs) -> Result<MetricsReport> {
    let frames = select_frames(&a.data, a.split)?;
    let report = if let Some(ckpt) = &a.checkpoint {
        let (net, _) = load_checkpoint(ckpt)?;
        let name = a.method.clone().unwrap_or_else(|| {
            ckpt.file_stem()
                .map_or("model".to_string(), |s| s.to_string_lossy().into_owned())
        });
        evaluate_dataset(&name, &frames, &net)?
    } else if let Some(dir) = &a.predictions {
        let preds = frames
            .iter()
            .map(|f| read_prediction(dir, f))
            .collect::<Result<Vec<_>>>()?;
        evaluate_predictions(a.method.as_deref().unwrap_or("predictions"), &frames, &preds)?
    } else {
        let preds: Vec<Image> = frames.iter().map(|f| f.even_half.clone()).collect();
        let mut r = baseline_report(&evaluate_predictions("unregistered", &frames, &preds)?);
        if let Some(m) = &a.method {
            r.method = m.clone();
        }
        r
    };
    Ok(report)
}

pub fn eval_cmd(a: EvalArgs) -> Result<Outcome> {
    let report = evaluate(&a)?;
    write_json(&a.out, &report)?;
    let table = crate::report::comparison_table(std::slice::from_ref(&report));
    Ok(Outcome {
        summary: format!("{} frames\n{}", report.per_frame.len(), table.trim_end()),
        artifacts: vec![a.out],
    })
}

// ---------------------------------------------------------------- ablate

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Comma-separated variants: full, no_scene, no_cycle, no_align,
    /// no_appearance_encoder, or `+`-joined combinations.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full,no_scene,no_cycle,no_align,no_appearance_encoder"
    )]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn parse_variant(label: &str) -> Result<AblationFlags> {
    let mut f = AblationFlags::FULL;
    for part in label.split('+').map(str::trim) {
        match part {
            "full" => {}
            "no_scene" => f.drop_scene = true,
            "no_cycle" => f.drop_cycle = true,
            "no_align" => f.drop_align = true,
            "no_appearance_encoder" => f.drop_appearance_encoder = true,
            other => {
                return Err(fail(
                    ExitClass::InvalidParams,
                    format!("unknown ablation variant {other:?}"),
                ))
            }
        }
    }
    Ok(f)
}

pub fn ablate(a: AblateArgs) -> Result<Outcome> {
    let cfg = resolve_config(&a.config)?;
    let variants = a
        .variants
        .iter()
        .map(|v| parse_variant(v))
        .collect::<Result<Vec<_>>>()?;
    let data = TrainData::load(&cfg.data, cfg.run.seed)?;
    let report = run_ablation_suite(&cfg, &data, &variants)?;
    let json = cfg.run.out_dir.join("ablation.json");
    let md = cfg.run.out_dir.join("ablation.md");
    write_json(&json, &report)?;
    let table = report.markdown_table();
    fsutil::write_atomic(&md, table.as_bytes()).with_context(|| format!("writing {}", md.display()))?;
    Ok(Outcome {
        summary: table.trim_end().to_string(),
        artifacts: vec![json, md],
    })
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Weights to time; defaults to a freshly initialised default model
    /// (latency does not depend on the weights).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Interleaved frame height.
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Interleaved frame width; each pass registers one half.
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = BENCH_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = BENCH_REPETITIONS)]
    pub repetitions: usize,
    /// Report JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(a: BenchArgs) -> Result<Outcome> {
    let net = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.0,
        None => SasNet::new(ModelConfig::default(), env_seed()?.unwrap_or(0))?,
    };
    net.config()
        .check_dims(a.height, a.width / 2)
        .map_err(|e| fail(ExitClass::InvalidParams, format!("--height/--width: {e}")))?;
    let r = benchmark_inference(&net, a.height, a.width, a.warmup, a.repetitions)?;
    let summary = format!(
        "{}x{} on {}: {:.2} ± {:.2} ms over {} runs ({:.2} fps)",
        r.height, r.width, r.device, r.mean_ms, r.std_ms, r.repetitions, r.fps
    );
    let mut artifacts = Vec::new();
    if let Some(out) = a.out {
        write_json(&out, &r)?;
        artifacts.push(out);
    }
    Ok(Outcome { artifacts, summary })
}

// ---------------------------------------------------------------- report

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("reports").required(true).multiple(true).args(["input", "ablation"])))]
pub struct ReportArgs {
    /// Metrics reports, one method each, in box order.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// An ablation report; its configurations join the methods.
    #[arg(long)]
    pub ablation: Option<PathBuf>,
    /// Prepend the unregistered input (from the first report) as a method.
    #[arg(long)]
    pub baseline: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn report(a: ReportArgs) -> Result<Outcome> {
    let mut reports = a.input.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    let ablation = a.ablation.as_deref().map(read_ablation).transpose()?;
    if let Some(ab) = &ablation {
        reports.extend(ab.rows.iter().map(|r| r.report.clone()));
    }
    if a.baseline {
        if let Some(first) = reports.first() {
            reports.insert(0, baseline_report(first));
        }
    }
    let artifacts = write_report(&a.out, &reports, ablation.as_ref())?;
    Ok(Outcome {
        summary: format!(
            "{} methods, {} files in {}",
            reports.len(),
            artifacts.len(),
            a.out.display()
        ),
        artifacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_accept_both_spellings_and_bare_flags() {
        let got = parse_overrides(&strings(&[
            "--optim.lr",
            "1e-3",
            "--run.out_dir=x",
            "--ablation.drop_align",
        ]))
        .unwrap();
        assert_eq!(
            got,
            vec![
                ("optim.lr".into(), "1e-3".into()),
                ("run.out_dir".into(), "x".into()),
                ("ablation.drop_align".into(), "true".into())
            ]
        );
        assert!(parse_overrides(&strings(&["lr"])).is_err());
        assert!(parse_overrides(&strings(&["--epochs", "3"])).is_err());
    }

    #[test]
    fn variants_parse_to_flags() {
        assert_eq!(parse_variant("full").unwrap(), AblationFlags::FULL);
        for f in AblationFlags::standard_variants() {
            assert_eq!(parse_variant(&f.label()).unwrap(), f);
        }
        let both = parse_variant("no_scene+no_cycle").unwrap();
        assert!(both.drop_scene && both.drop_cycle);
        assert!(parse_variant("no_magic").is_err());
    }

    #[test]
    fn plan_check_rejects_either_end_of_a_range() {
        let mut plan = SimulationPlan::desk_scale(0);
        assert!(check_plan(&plan).is_ok());
        plan.gain_odd = ParamRange::Uniform { lo: -1.0, hi: 1.0 };
        assert!(check_plan(&plan).is_err());
        plan.gain_odd = ParamRange::Fixed(1.0);
        plan.noise_sigma = ParamRange::Uniform {
            lo: 0.0,
            hi: f64::INFINITY,
        };
        assert!(check_plan(&plan).is_err());
    }
}
