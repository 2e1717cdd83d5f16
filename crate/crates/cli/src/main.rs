use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hashtrace::code::{binarize, Activation, RelaxedCode};
use hashtrace::dataset::frames::{pred_mask_name, read_frames, read_masks, write_gray};
use hashtrace::dataset::{gen_synthetic_dataset, load_manifest, sample_clip, Perturbation, SynthConfig, VideoFeatures};
use hashtrace::encoder::{forward, load_checkpoint, save_checkpoint};
use hashtrace::eval::{
    ablation_file_name, ablation_run, report_emit, robustness_suite, standard_perturbations, top1_accuracy,
    video_queries, QueryProtocol, Report,
};
use hashtrace::index::{build_index, group_meta, load_index, save_index, trace};
use hashtrace::localize::{localize, miou, MaskSequence, DEFAULT_RADIUS, DEFAULT_TAU};
use hashtrace::loss::LossTerms;
use hashtrace::trainer::{fit_with_progress, FeatureBank, TrainConfig, HISTORY_HEADER};
use hashtrace::{seed, Error, Result};

const MODEL_FILE: &str = "model.vthp";
const INDEX_FILE: &str = "index.vthx";
const HISTORY_FILE: &str = "history.csv";

/// Trace tampered videos back to their originals.
#[derive(Parser, Debug)]
#[command(name = "hashtrace", version)]
struct Cli {
    /// Worker threads; falls back to HASHTRACE_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset of originals and edited fakes.
    GenData(GenDataArgs),
    /// Train an encoder and hash centers; writes model, index and history.
    Train(TrainArgs),
    /// Trace one video to its nearest hash center.
    Trace(TraceArgs),
    /// Held-out Top-1 accuracy under frame perturbations.
    Eval(EvalArgs),
    /// Train with one or both loss terms for each activation.
    Ablate(AblateArgs),
    /// Predict tamper masks by comparing a fake with its original.
    Localize(LocalizeArgs),
    /// Summarize history and robustness CSVs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 8)]
    groups: usize,
    #[arg(long, default_value_t = 4)]
    fakes: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 48)]
    size: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 64)]
    bits: usize,
    #[arg(long, default_value_t = 8)]
    clip: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 8)]
    batch_groups: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainFlags {
    fn config(&self, activation: Activation, terms: LossTerms) -> TrainConfig {
        TrainConfig {
            batch_groups: self.batch_groups,
            iterations: self.iters,
            learning_rate: self.lr,
            seed: self.seed,
            k: self.bits,
            clip_len: self.clip,
            clip_stride: self.stride,
            embed_dim: self.embed_dim,
            activation,
            terms,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value = "tanh")]
    activation: Activation,
    /// Loss terms: both, intra or inter.
    #[arg(long, default_value = "both")]
    loss: LossTerms,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Directory of frame_%06d.ppm files.
    #[arg(long)]
    video: PathBuf,
    /// Clips whose relaxed codes are averaged before binarizing.
    #[arg(long, default_value_t = 4)]
    clips: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct PerturbFlags {
    #[arg(long, default_value_t = 5)]
    kernel: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    crop: f64,
    #[arg(long, default_value_t = 0.5)]
    detail: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated perturbations: original, detail, gaussian_blur,
    /// box_blur, median, crop. Defaults to all of them.
    #[arg(long, value_delimiter = ',')]
    perturb: Vec<String>,
    #[command(flatten)]
    magnitudes: PerturbFlags,
    #[arg(long, default_value_t = 4)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write robustness.csv and confusion.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    mode: LossTerms,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, value_delimiter = ',', default_value = "tanh,sigmoid,relu")]
    activations: Vec<Activation>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    #[arg(long)]
    fake: PathBuf,
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: u32,
    /// Ground-truth masks; defaults to the fake's own mask_*.pgm files.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = setup_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn setup_threads(flag: Option<usize>) -> std::result::Result<(), String> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("HASHTRACE_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| format!("HASHTRACE_THREADS={v:?} is not a number"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err("thread count must be positive".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Trace(a) => trace_video(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_groups: a.groups,
        fakes_per_group: a.fakes,
        frames: a.frames,
        size: a.size,
        seed: a.seed,
    };
    let gs = gen_synthetic_dataset(&cfg, &a.out)?;
    eprintln!("wrote {} groups, {} videos to {}", gs.m(), gs.z(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let gs = load_manifest(&a.train.data)?;
    let (train_set, _) = gs.holdout_split()?;
    let bank = FeatureBank::load(&train_set)?;
    let cfg = a.train.config(a.activation, a.loss);
    let out = fit_with_progress(&bank, &cfg, |r| {
        if r.iter % 100 == 0 {
            eprintln!(
                "iter {:>6}  loss {:.5}  inter {:.2}  intra {:.2}  bit {:.3}",
                r.iter, r.loss, r.metrics.inter_mean, r.metrics.intra_mean, r.metrics.mean_bit
            );
        }
    })?;
    create_dir(&a.out)?;
    save_checkpoint(&out.params, &a.out.join(MODEL_FILE))?;
    let idx = build_index(&out.centers, &group_meta(&gs))?;
    let index_path = a.out.join(INDEX_FILE);
    save_index(&idx, &index_path)?;
    let file_len = fs::metadata(&index_path).map_err(|source| Error::Io { path: index_path, source })?.len();
    eprintln!(
        "index: {} centers, {} payload bytes (ids and centers), {file_len} bytes on disk",
        idx.len(),
        idx.payload_bytes()
    );
    out.history.write_csv(&a.out.join(HISTORY_FILE))?;
    eprintln!("wrote {MODEL_FILE}, {INDEX_FILE}, {HISTORY_FILE} to {}", a.out.display());
    Ok(())
}

fn trace_video(a: TraceArgs) -> Result<()> {
    if a.clips == 0 {
        return Err(Error::InvalidArgument("--clips must be positive".into()));
    }
    let params = load_checkpoint(&a.model)?;
    let idx = load_index(&a.index)?;
    if params.cfg.k != idx.k() {
        return Err(Error::LengthMismatch { left: idx.k(), right: params.cfg.k });
    }
    let feats = VideoFeatures::from_frames(&read_frames(&a.video)?)?;
    let mut sum = vec![0.0; params.cfg.k];
    for c in 0..a.clips {
        let clip = sample_clip(&feats, params.cfg.t, a.stride, seed::derive(a.seed, &[c as u64]))?;
        for (s, v) in sum.iter_mut().zip(forward(&params, &clip)?.values) {
            *s += v;
        }
    }
    let mean = sum.into_iter().map(|s| s / a.clips as f64).collect();
    let code = binarize(&RelaxedCode::new(mean, params.cfg.activation))?;
    let r = trace(&idx, &code)?;
    println!("{}\t{}\t{}\t{}", r.group_id, r.label, r.distance, r.runner_up_distance);
    Ok(())
}

fn perturbations(names: &[String], m: &PerturbFlags) -> Result<Vec<Perturbation>> {
    if names.is_empty() {
        let all = standard_perturbations(m.kernel, m.sigma, m.crop, m.detail);
        for p in &all {
            p.validate()?;
        }
        return Ok(all);
    }
    names
        .iter()
        .map(|n| Perturbation::from_name(n.trim(), m.kernel, m.sigma, m.crop, m.detail))
        .collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let params = load_checkpoint(&a.model)?;
    let idx = load_index(&a.index)?;
    let gs = load_manifest(&a.data)?;
    let (_, test) = gs.holdout_split()?;
    let kinds = perturbations(&a.perturb, &a.magnitudes)?;
    let protocol = QueryProtocol { clips_per_video: a.clips, stride: 1, seed: a.seed };
    let report = robustness_suite(&idx, &params, &test, &kinds, &protocol)?;
    for r in &report.rows {
        println!("{}\t{}\t{}", r.condition, r.k, r.accuracy);
    }
    if let Some(out) = &a.out {
        report_emit(&[Report::Robustness(&report)], out)?;
        let path = out.join("confusion.csv");
        fs::write(&path, report.confusion_csv()).map_err(|source| Error::Io { path, source })?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let gs = load_manifest(&a.train.data)?;
    let (train_set, test) = gs.holdout_split()?;
    let bank = FeatureBank::load(&train_set)?;
    let cfg = a.train.config(Activation::Tanh, a.mode);
    let runs = ablation_run(&bank, &cfg, a.mode, &a.activations)?;
    let protocol = QueryProtocol { seed: a.train.seed, ..QueryProtocol::default() };
    let queries = test
        .iter()
        .map(|(g, v)| video_queries(*g, &v.label, &VideoFeatures::load(v)?, cfg.clip_len, &protocol))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let reports: Vec<Report> = runs
        .iter()
        .map(|r| Report::Ablation { terms: r.terms, activation: r.activation, history: &r.outcome.history })
        .collect();
    report_emit(&reports, &a.out)?;
    println!("mode\tactivation\taccuracy\tinter_mean\tintra_mean\tmean_bit");
    for r in &runs {
        let idx = build_index(&r.outcome.centers, &group_meta(&gs))?;
        let acc = top1_accuracy(&idx, &r.outcome.params, &queries)?;
        let last = r.outcome.history.last().map(|h| h.metrics);
        let (inter, intra, bit) = last.map_or((f64::NAN, f64::NAN, f64::NAN), |m| (m.inter_mean, m.intra_mean, m.mean_bit));
        println!("{}\t{}\t{acc}\t{inter}\t{intra}\t{bit}", r.terms.name(), r.activation.name());
        eprintln!("wrote {}", a.out.join(ablation_file_name(r.terms, r.activation)).display());
    }
    Ok(())
}

fn localize_cmd(a: LocalizeArgs) -> Result<()> {
    let fake = read_frames(&a.fake)?;
    let original = read_frames(&a.original)?;
    let (spec, pred) = localize(&fake, &original, a.tau, a.radius)?;
    eprintln!(
        "alignment: scale {:.2}, offset ({}, {}), score {:.4}",
        spec.scale, spec.offset.0, spec.offset.1, spec.score
    );
    create_dir(&a.out)?;
    for (i, m) in pred.masks.iter().enumerate() {
        write_gray(&a.out.join(pred_mask_name(i)), &m.to_gray())?;
    }
    let gt_dir = a.gt.as_deref().unwrap_or(&a.fake);
    let gt = read_masks(gt_dir, "mask_")?;
    if gt.is_empty() {
        if a.gt.is_some() {
            return Err(Error::InvalidArgument(format!("no mask_*.pgm files in {}", gt_dir.display())));
        }
        eprintln!("no ground-truth masks in {}; skipping mIoU", gt_dir.display());
        return Ok(());
    }
    let gt = MaskSequence { masks: gt.into_iter().take(pred.len()).collect() };
    println!("mIoU={}", miou(&pred, &gt)?);
    Ok(())
}

/// One parsed CSV: header and rows of raw fields.
fn read_csv(path: &Path) -> Result<(String, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((header, rows))
}

fn report(a: ReportArgs) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(&a.input)
        .map_err(|source| Error::Io { path: a.input.clone(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    entries.sort();

    let mut summary = String::from("source,iterations,final_loss,inter_mean,intra_mean,mean_bit\n");
    let mut histories = 0;
    let mut robustness = None;
    for path in &entries {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let (header, rows) = read_csv(path)?;
        if header == HISTORY_HEADER {
            histories += 1;
            match rows.last() {
                Some(last) if last.len() == 5 => summary.push_str(&format!(
                    "{name},{},{},{},{},{}\n",
                    rows.len(),
                    last[1],
                    last[2],
                    last[3],
                    last[4]
                )),
                _ => summary.push_str(&format!("{name},0,,,,\n")),
            }
        } else if name == "robustness.csv" {
            robustness = Some(rows);
        }
    }
    if histories == 0 && robustness.is_none() {
        return Err(Error::InvalidArgument(format!(
            "no history or robustness CSVs in {}",
            a.input.display()
        )));
    }
    create_dir(&a.out)?;
    let mut written = Vec::new();
    if histories > 0 {
        let path = a.out.join("summary.csv");
        fs::write(&path, &summary).map_err(|source| Error::Io { path: path.clone(), source })?;
        written.push(path);
    }
    if let Some(rows) = robustness {
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("robustness.csv: bad accuracy {s:?}")))
        };
        let base = rows.iter().find(|r| r.first().is_some_and(|c| c == "original"));
        let base = base.map(|r| parse(&r[2])).transpose()?;
        let mut out = String::from("perturbation,k,accuracy,drop\n");
        for r in &rows {
            if r.len() != 3 {
                return Err(Error::InvalidArgument("robustness.csv: expected 3 columns".into()));
            }
            let acc = parse(&r[2])?;
            let drop = base.map(|b| (b - acc).to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{drop}\n", r[0], r[1], r[2]));
        }
        let path = a.out.join("robustness_drop.csv");
        fs::write(&path, out).map_err(|source| Error::Io { path: path.clone(), source })?;
        written.push(path);
    }
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}
