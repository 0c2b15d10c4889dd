//! Command-line front end. `run` parses, echoes the resolved settings as one
//! line on stderr, executes, and maps outcomes to exit codes: 0 success,
//! 1 runtime failure, 2 bad usage.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::data::{load_dataset, make_phantom_dataset, read_image, read_rois, save_dataset, write_image, Dataset, ImageFormat, ImageRecord, PhantomConfig};
use crate::domain_chain::{build_chain, discriminator_assignment, enumerate_cycles, CycleKind, DomainId, ExperimentMode};
use crate::evaluate::{compare_report, cycle_trace, denoise, write_trace_strip, Roi, RoiReport};
use crate::losses::AdversarialForm;
use crate::networks::{budget_report, GeneratorSpec, BUDGET_SIDE};
use crate::training::{load_model, read_log, RunPaths, StepRecord, TrainConfig, Trainer};

const FORMATS: &str = "\
Files:
  images      16-bit grayscale PNG (.png) or raw tensor (.raw: magic MCCANRAW, u32 rank,
              u64 dims, u8 element type 1=u16 2=f32 3=f64, little-endian row-major payload)
  manifest    manifest.tsv: '# domains: X,Z,Y' then path, domain, source_id, extractor (tab-separated)
  rois        rois.csv: image_id,roi_id,x,y,width,height (pixels, top-left origin, half-open)
  checkpoint  checkpoint.mccan: magic MCCANCKP, version, JSON header with the resolved config,
              tensors, CRC32
  log         train_log.ndjson: one JSON record per step (step, epoch, lr, discriminator,
              adversarial, cycles, identity, composite, wall_time_s)";

#[derive(Debug, Parser)]
#[command(name = "mccan", version, about = "Multi-step denoising with multi-cycle-consistent adversarial networks", after_help = FORMATS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Ccadn,
    Mccan,
    MccanNoLocal,
    MccanNoGlobal,
}

impl From<ModeArg> for ExperimentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ccadn => ExperimentMode::Ccadn,
            ModeArg::Mccan => ExperimentMode::Mccan,
            ModeArg::MccanNoLocal => ExperimentMode::MccanNoLocal,
            ModeArg::MccanNoGlobal => ExperimentMode::MccanNoGlobal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AdvArg {
    Log,
    Lsq,
}

impl From<AdvArg> for AdversarialForm {
    fn from(a: AdvArg) -> Self {
        match a {
            AdvArg::Log => AdversarialForm::Log,
            AdvArg::Lsq => AdversarialForm::LeastSquares,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Png,
    Raw,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a phantom dataset: images, manifest.tsv, rois.csv, truth.csv.
    #[command(after_help = FORMATS)]
    SynthData(SynthArgs),
    /// Train (or resume) a model on a dataset directory.
    #[command(after_help = FORMATS)]
    Train(TrainArgs),
    /// Run the noisy-to-clean generator chain on an image or dataset.
    #[command(after_help = FORMATS)]
    Denoise(DenoiseArgs),
    /// ROI mean/SD report of the original vs denoised images.
    #[command(after_help = FORMATS)]
    Eval(EvalArgs),
    /// Parameter and FLOP budget of a mode's inference generators.
    CountParams(CountArgs),
    /// Trace an image through a cycle, writing one image per step.
    #[command(after_help = FORMATS)]
    CycleTrace(TraceArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of domains in the chain.
    #[arg(long, default_value_t = 3)]
    domains: usize,
    /// Per-domain noise SDs, noisiest first, strictly decreasing.
    #[arg(long, value_delimiter = ',', default_value = "50,25,0")]
    sigmas: Vec<f64>,
    /// Images per domain.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image file format.
    #[arg(long, value_enum, default_value = "png")]
    format: FormatArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    /// TOML config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoint.mccan and train_log.ndjson.
    #[arg(long)]
    out: PathBuf,
    /// Experiment mode [config default: mccan].
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Chain length [config default: 3].
    #[arg(long)]
    domains: Option<usize>,
    /// Run seed [config default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Adversarial form [config default: lsq].
    #[arg(long, value_enum)]
    adv_form: Option<AdvArg>,
    /// Epochs [config default: 50].
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many steps.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Resume from this checkpoint; its stored config is used and --mode,
    /// when given, must match it.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// An image file (.png/.raw), or a dataset directory whose noisiest-domain
    /// images are all denoised.
    #[arg(long)]
    input: PathBuf,
    /// Output image file, or directory for dataset input.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint(s) to compare; each becomes one method column.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    /// ROI sidecar [default: the dataset's rois.csv].
    #[arg(long)]
    rois: Option<PathBuf>,
    /// Output directory for report.txt and report.csv.
    #[arg(long)]
    out: PathBuf,
    /// Also render this training log as out/losses.svg.
    #[arg(long)]
    plot_losses: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CountArgs {
    #[arg(long, value_enum, default_value = "mccan")]
    mode: ModeArg,
    /// Chain length [default: 2 for ccadn, 3 otherwise].
    #[arg(long)]
    domains: Option<usize>,
    /// Square input side for FLOP estimates.
    #[arg(long, default_value_t = BUDGET_SIDE)]
    side: usize,
}

#[derive(Debug, Args)]
struct TraceArgs {
    /// Print the cycle set and discriminator plan of --mode/--domains and exit.
    #[arg(long)]
    plan_only: bool,
    #[arg(long, value_enum, default_value = "mccan")]
    mode: ModeArg,
    /// Chain length [default: 2 for ccadn, 3 otherwise].
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long, required_unless_present = "plan_only")]
    checkpoint: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long, required_unless_present = "plan_only")]
    data: Option<PathBuf>,
    /// Image to trace [default: first image of the cycle's source domain].
    #[arg(long)]
    image: Option<String>,
    /// Cycle as domain names, e.g. X,Z,Y,Z,X [default: the global cycle from the noisiest domain].
    #[arg(long)]
    cycle: Option<String>,
    /// ROI sidecar for the background SD [default: the dataset's rois.csv].
    #[arg(long)]
    rois: Option<PathBuf>,
    /// Output directory for the image strip and index.tsv.
    #[arg(long, required_unless_present = "plan_only")]
    out: Option<PathBuf>,
}

type Failure = Box<dyn std::error::Error>;

fn echo(command: &str, value: serde_json::Value) {
    eprintln!("mccan {command} resolved: {value}");
}

/// Usage line of the subcommand named by `word`, or of the whole tool.
fn usage_for(word: Option<&OsString>) -> String {
    let mut cmd = Cli::command();
    let sub = word.and_then(|w| w.to_str()).and_then(|w| cmd.find_subcommand_mut(w).map(|c| c.render_usage()));
    match sub {
        Some(u) => u.to_string().replacen("Usage: ", "Usage: mccan ", 1),
        None => cmd.render_usage().to_string(),
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(argv.get(1)));
            }
            return 2;
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Denoise(a) => denoise_cmd(a),
        Command::Eval(a) => eval(a),
        Command::CountParams(a) => count_params(a),
        Command::CycleTrace(a) => trace(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = PhantomConfig::new(a.n, a.side, a.sigmas.clone(), a.seed);
    echo("synth-data", json!({"domains": a.domains, "phantom": cfg, "format": format!("{:?}", a.format).to_lowercase(), "out": a.out}));
    if a.sigmas.len() != a.domains {
        return Err(format!("--sigmas lists {} levels for {} domains", a.sigmas.len(), a.domains).into());
    }
    let ds = make_phantom_dataset(&cfg)?;
    let fmt = match a.format {
        FormatArg::Png => ImageFormat::Png16,
        FormatArg::Raw => ImageFormat::Raw,
    };
    save_dataset(&ds, &a.out, fmt)?;
    println!("wrote {} images over {} domains to {}", ds.len(), a.domains, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.data)?;
    let paths = RunPaths::in_dir(&a.out);
    fs::create_dir_all(&a.out)?;
    let mut trainer = if let Some(ckpt) = &a.checkpoint {
        if a.config.is_some() || a.domains.is_some() || a.seed.is_some() || a.adv_form.is_some() || a.epochs.is_some() {
            return Err("a resumed run uses the checkpoint's config; only --mode and --max-steps may be given".into());
        }
        let mut t = Trainer::resume(ckpt, &ds, a.mode.map(Into::into))?;
        if let Some(m) = a.max_steps {
            t.cfg.max_steps = Some(m);
        }
        echo("train", json!({"resume": ckpt, "step": t.step, "config": t.cfg, "out": a.out}));
        t
    } else {
        let mut cfg = match &a.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(m) = a.mode {
            cfg.mode = m.into();
        }
        if let Some(d) = a.domains {
            cfg.n_domains = d;
        }
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(f) = a.adv_form {
            cfg.adv_form = f.into();
        }
        if let Some(e) = a.epochs {
            cfg.epochs = e;
        }
        if a.max_steps.is_some() {
            cfg.max_steps = a.max_steps;
        }
        echo("train", json!({"config": cfg, "data": a.data, "out": a.out}));
        Trainer::new(cfg, &ds)?
    };
    let last = trainer.run(&ds, &paths)?;
    match last {
        Some(r) => println!("step {} composite {:.6}; checkpoint {}", r.step, r.composite, paths.checkpoint.display()),
        None => println!("nothing to do at step {}; checkpoint {}", trainer.step, paths.checkpoint.display()),
    }
    Ok(())
}

fn denoise_cmd(a: DenoiseArgs) -> Result<(), Failure> {
    echo("denoise", json!({"checkpoint": a.checkpoint, "input": a.input, "out": a.out}));
    let (model, _) = load_model(&a.checkpoint)?;
    let head = model.chain.head();
    if a.input.is_file() && a.input.extension().is_some_and(|e| e == "png" || e == "raw") {
        let img = ImageRecord::new(read_image(&a.input)?, head, "input")?;
        write_image(&a.out, &denoise(&img, &model)?.pixels)?;
        println!("wrote {}", a.out.display());
        return Ok(());
    }
    let ds = load_dataset(&a.input)?;
    check_names(&ds, model.chain.names())?;
    fs::create_dir_all(&a.out)?;
    let mut n = 0;
    for i in ds.domain_indices(head) {
        let rec = &ds.records[i];
        write_image(&a.out.join(format!("{}.png", rec.source_id)), &denoise(rec, &model)?.pixels)?;
        n += 1;
    }
    println!("denoised {n} images into {}", a.out.display());
    Ok(())
}

fn check_names(ds: &Dataset, names: &[String]) -> Result<(), Failure> {
    if ds.domain_names != names {
        return Err(format!("dataset domains {:?} differ from the checkpoint chain {:?}", ds.domain_names, names).into());
    }
    Ok(())
}

/// Report over every noisiest-domain image that has ROIs, plus drift of each
/// ROI mean from the ground truth when the dataset carries one.
fn eval(a: EvalArgs) -> Result<(), Failure> {
    echo("eval", json!({"checkpoints": a.checkpoint, "data": a.data, "rois": a.rois, "out": a.out, "plot_losses": a.plot_losses}));
    let ds = load_dataset(&a.data)?;
    let rois = match &a.rois {
        Some(p) => read_rois(p)?,
        None => ds.rois.clone(),
    };
    let mut models = Vec::new();
    for p in &a.checkpoint {
        let (m, _) = load_model(p)?;
        check_names(&ds, m.chain.names())?;
        let mut label = m.mode.to_string();
        let mut k = 2;
        while models.iter().any(|(l, _): &(String, _)| *l == label) {
            label = format!("{}#{k}", m.mode);
            k += 1;
        }
        models.push((label, m));
    }
    let mut report = RoiReport::default();
    for i in ds.domain_indices(DomainId(0)) {
        let rec = &ds.records[i];
        let mine: Vec<Roi> = rois.iter().filter(|r| r.image_id == rec.source_id).cloned().collect();
        if mine.is_empty() {
            continue;
        }
        let variants = models.iter().map(|(l, m)| Ok((l.clone(), denoise(rec, m)?))).collect::<Result<Vec<_>, Failure>>()?;
        report.extend(compare_report(rec, &variants, &mine)?)?;
    }
    if report.rows.is_empty() {
        return Err("no ROIs found for the noisiest-domain images".into());
    }
    let mut text = report.to_text();
    if !ds.truths.is_empty() {
        for m in &report.methods {
            let drifts: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.method == *m)
                .filter_map(|r| ds.truth(&r.image_id, r.roi_id).map(|t| 100.0 * (r.mean - t.mean).abs() / t.mean))
                .collect();
            if !drifts.is_empty() {
                let worst = drifts.iter().cloned().fold(0.0, f64::max);
                let avg = drifts.iter().sum::<f64>() / drifts.len() as f64;
                let _ = writeln!(text, "Mean drift from truth {m}: mean {avg:.2}%, max {worst:.2}%");
            }
        }
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.txt"), &text)?;
    fs::write(a.out.join("report.csv"), report.to_records())?;
    print!("{text}");
    if let Some(log) = &a.plot_losses {
        fs::write(a.out.join("losses.svg"), loss_plot(&read_log(log)?))?;
    }
    Ok(())
}

/// Stacked SVG line panels of the logged loss components.
pub fn loss_plot(records: &[StepRecord]) -> String {
    let series: [(&str, Box<dyn Fn(&StepRecord) -> f64>); 5] = [
        ("composite", Box::new(|r| r.composite)),
        ("adversarial", Box::new(|r| r.adversarial)),
        ("cycle sum", Box::new(|r| r.cycles.iter().map(|(_, v)| v).sum())),
        ("identity", Box::new(|r| r.identity)),
        ("discriminator", Box::new(|r| r.discriminator)),
    ];
    let (w, ph) = (640.0, 120.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{}\" font-family=\"monospace\" font-size=\"11\">\n",
        ph * series.len() as f64
    );
    let n = records.len().max(2) as f64 - 1.0;
    for (k, (name, f)) in series.iter().enumerate() {
        let vals: Vec<f64> = records.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let top = k as f64 * ph;
        let pts: Vec<String> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| f(r).is_finite())
            .map(|(i, r)| format!("{:.1},{:.1}", 40.0 + (w - 50.0) * i as f64 / n, top + 100.0 - 80.0 * (f(r) - lo) / span))
            .collect();
        let _ = writeln!(s, "<text x=\"40\" y=\"{:.0}\">{name} [{lo:.4}, {hi:.4}]</text>", top + 14.0);
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"black\" points=\"{}\"/>", pts.join(" "));
    }
    s.push_str("</svg>\n");
    s
}

fn default_domains(mode: ExperimentMode, domains: Option<usize>) -> usize {
    domains.unwrap_or(if mode == ExperimentMode::Ccadn { 2 } else { 3 })
}

fn count_params(a: CountArgs) -> Result<(), Failure> {
    let mode: ExperimentMode = a.mode.into();
    let n = default_domains(mode, a.domains);
    echo("count-params", json!({"mode": mode, "domains": n, "side": a.side}));
    let spec = GeneratorSpec::for_mode(mode);
    let report = budget_report(mode, n, &spec, a.side)?;
    print!("{}", report.to_text());
    Ok(())
}

fn trace(a: TraceArgs) -> Result<(), Failure> {
    let mode: ExperimentMode = a.mode.into();
    if a.plan_only {
        let n = default_domains(mode, a.domains);
        echo("cycle-trace", json!({"plan_only": true, "mode": mode, "domains": n}));
        let chain = build_chain(n, None)?;
        let cycles = enumerate_cycles(&chain, mode)?;
        println!("{} cycles", cycles.len());
        for c in &cycles {
            println!("{:?}\t{}", c.kind, chain.format_steps(&c.steps));
        }
        let plan = discriminator_assignment(&chain, mode)?;
        println!("{} discriminators", plan.len());
        for (i, s) in plan.slots.iter().enumerate() {
            let paths: Vec<String> = s.paths.iter().map(|p| chain.format_steps(&p.steps)).collect();
            println!("D{i}\t{}#{}\t{}", chain.name(s.domain), s.replica, paths.join(" "));
        }
        return Ok(());
    }
    let (ckpt, data, out) = (a.checkpoint.expect("required"), a.data.expect("required"), a.out.expect("required"));
    echo("cycle-trace", json!({"checkpoint": ckpt, "data": data, "image": a.image, "cycle": a.cycle, "rois": a.rois, "out": out}));
    let (model, _) = load_model(&ckpt)?;
    let ds = load_dataset(&data)?;
    check_names(&ds, model.chain.names())?;
    let cycle = match &a.cycle {
        Some(text) => model.chain.parse_cycle(&text.replace(',', "→"))?,
        None => enumerate_cycles(&model.chain, ExperimentMode::Mccan)?
            .into_iter()
            .find(|c| c.kind == CycleKind::Global && c.source == model.chain.head())
            .or_else(|| enumerate_cycles(&model.chain, ExperimentMode::Mccan).ok()?.into_iter().next())
            .ok_or("no cycle available")?,
    };
    let rec = match &a.image {
        Some(id) => ds.records.iter().find(|r| r.source_id == *id).ok_or_else(|| format!("no image {id}"))?,
        None => ds.records.iter().find(|r| r.domain == cycle.source).ok_or("no image in the cycle's source domain")?,
    };
    let rois = match &a.rois {
        Some(p) => read_rois(p)?,
        None => ds.rois.clone(),
    };
    let background = rois.iter().find(|r| r.image_id == rec.source_id && r.roi_id == 0);
    let strip = cycle_trace(rec, &model, &cycle, background)?;
    write_trace_strip(&strip, &model.chain, &out)?;
    for t in &strip {
        let sd = t.background_sd.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{}\tbackground_sd {sd}", model.chain.name(t.record.domain));
    }
    Ok(())
}
