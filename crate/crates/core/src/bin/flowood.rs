use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowood::data::{texture_dataset, Dataset, Skipped, Texture};
use flowood::model::{FlowModel, ModelKind};
use flowood::ood::{
    average_psd, level_histograms, per_level_sweep, perturb_dataset, read_scores_csv, roc_auc,
    score_dataset, write_levels_csv, write_psd_csv, write_roc_csv, write_scores_csv, Noise,
};
use flowood::train::{train, write_history_csv, Checkpoint, Preset, TrainConfig, TrainState};
use flowood::{Error, Result};

const SEED_ENV: &str = "FLOWOOD_SEED";

#[derive(Parser)]
#[command(name = "flowood", version, about = "Normalizing flows for out-of-distribution detection")]
struct Cli {
    /// Worker threads for scoring (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a GLOW or Wavelet Flow model on an image directory
    Train(TrainArgs),
    /// Score every image of a directory under a trained model
    Score(ScoreArgs),
    /// ROC curve and AUC from in-distribution and OOD score files
    Roc(RocArgs),
    /// Radially averaged power spectrum of an image directory
    Psd(PsdArgs),
    /// Draw images from a trained model
    Sample(SampleArgs),
    /// Write a synthetic texture dataset
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    data: PathBuf,
    /// Flat `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// channel-wise, checker or cycle-1
    #[arg(long)]
    preset: Option<Preset>,
    /// Train only this wavelet level (the base term is level n)
    #[arg(long)]
    level: Option<usize>,
    /// Continue from this checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// History CSV (default: <out>.history.csv)
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    hidden_channels: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    flows_per_level: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split_label: String,
    /// Perturb images with multiplicative noise of this std first
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Use additive instead of multiplicative noise
    #[arg(long)]
    additive: bool,
    /// Also write per-level BPD histograms (Wavelet Flow only)
    #[arg(long)]
    per_level: bool,
    /// Noise levels of the per-level sweep
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1")]
    sweep: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RocArgs {
    /// Scores of in-distribution images (the positive class)
    #[arg(long = "in")]
    scores_in: PathBuf,
    /// Scores of out-of-distribution images
    #[arg(long = "out")]
    scores_out: PathBuf,
    #[arg(long, default_value = "roc.csv")]
    report: PathBuf,
}

#[derive(Args)]
struct PsdArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Multiplicative noise applied before the transform
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "psd.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(short = 'n', long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "samples")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// smooth or stripes
    #[arg(long)]
    kind: Texture,
    #[arg(short = 'n', long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    image_size: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// 2 for bad input or usage, 1 for internal and numeric failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::NonScalarLoss(_) | Error::ShapeMismatch { .. } => 1,
        _ => 2,
    }
}

fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(fallback),
    }
}

fn report_skipped(skipped: &Skipped) {
    for (path, why) in &skipped.0 {
        eprintln!("warning: skipped {}: {why}", path.display());
    }
    if !skipped.0.is_empty() {
        eprintln!("warning: {} file(s) skipped", skipped.0.len());
    }
}

fn load_data(dir: &Path, size: usize, channels: usize) -> Result<Dataset> {
    let (data, skipped) = Dataset::load_dir(dir, size, channels)?;
    report_skipped(&skipped);
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("no decodable images in {}", dir.display())));
    }
    Ok(data)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (mut cfg, resumed) = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            (ck.meta.config.clone(), Some(ck))
        }
        None => {
            let mut cfg = TrainConfig::default();
            cfg.seed = resolve_seed(None, cfg.seed)?;
            (cfg, None)
        }
    };
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    if let Some(p) = a.preset {
        cfg.apply_preset(p);
    }
    if let Some(m) = a.model {
        cfg.model = m;
    }
    macro_rules! flag {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    flag!(
        epochs,
        batch_size,
        learning_rate,
        weight_decay,
        hidden_channels,
        image_size,
        channels,
        levels,
        flows_per_level,
        checkpoint_every
    );
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if a.level.is_some() && cfg.model != ModelKind::WaveletFlow {
        return Err(Error::InvalidArgument("--level needs --model waveletflow".into()));
    }

    let data = load_data(&a.data, cfg.image_size, cfg.channels)?;
    let (mut model, mut state) = match resumed {
        Some(ck) => {
            if ck.kind != cfg.model {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint holds a {} model, --model asks for {}",
                    ck.kind, cfg.model
                )));
            }
            let mut model = cfg.build_model()?;
            ck.load_into(model.as_mut())?;
            (model, ck.state()?)
        }
        None => (cfg.build_model()?, TrainState::new()),
    };
    if let Some(l) = a.level {
        if l >= model.trainable_levels() {
            return Err(Error::InvalidArgument(format!(
                "--level {l} out of range, model has levels 0..{}",
                model.trainable_levels()
            )));
        }
    }

    let every = cfg.checkpoint_every;
    let out = a.out.clone();
    let save_cfg = cfg.clone();
    train(model.as_mut(), &mut state, &data, &cfg, a.level, &mut |m, st| {
        let rows = &st.history[st.history.len().saturating_sub(2)..];
        let line: Vec<String> = rows.iter().map(|r| format!("{} bpd {:.4}", r.split, r.mean_bpd)).collect();
        let epoch = rows.first().map_or(0, |r| r.epoch);
        eprintln!("epoch {epoch}: {}", line.join(", "));
        if every > 0 && epoch % every == 0 {
            Checkpoint::capture(m, st, &save_cfg).save(&out)?;
        }
        Ok(())
    })?;
    Checkpoint::capture(model.as_ref(), &state, &cfg).save(&a.out)?;
    let scope = flowood::train::scope_name(a.level);
    let history = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    write_history_csv(&history, state.history.iter().filter(|r| r.scope == scope))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<(Box<dyn FlowModel>, TrainConfig)> {
    let ck = Checkpoint::load(path)?;
    let (model, _) = ck.restore()?;
    Ok((model, ck.meta.config))
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.ckpt)?;
    let seed = resolve_seed(a.seed, cfg.seed)?;
    let data = load_data(&a.data, cfg.image_size, cfg.channels)?;
    let noise = if a.additive { Noise::Additive(a.sigma) } else { Noise::Multiplicative(a.sigma) };
    let noisy = perturb_dataset(&data, noise, seed)?;
    ensure_dir(&a.out)?;
    let records = score_dataset(model.as_ref(), &noisy, &a.split_label, seed)?;
    write_scores_csv(&a.out.join("scores.csv"), &records)?;
    let mean = records.iter().map(|r| r.bpd).sum::<f64>() / records.len() as f64;
    println!("scored {} images, mean bpd {mean:.4}", records.len());
    if a.per_level {
        let wf = model
            .as_wavelet_flow()
            .ok_or_else(|| Error::InvalidArgument("--per-level needs a Wavelet Flow checkpoint".into()))?;
        let sweep = per_level_sweep(wf, &data, &a.sweep, seed)?;
        write_levels_csv(&a.out.join("levels.csv"), &level_histograms(&sweep, a.bins)?)?;
    }
    Ok(())
}

fn cmd_roc(a: RocArgs) -> Result<()> {
    let inside: Vec<f64> = read_scores_csv(&a.scores_in)?.iter().map(|r| r.score()).collect();
    let outside: Vec<f64> = read_scores_csv(&a.scores_out)?.iter().map(|r| r.score()).collect();
    let roc = roc_auc(&inside, &outside)?;
    write_roc_csv(&a.report, &roc)?;
    println!("auc {:.4}", roc.auc);
    Ok(())
}

fn cmd_psd(a: PsdArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, 0)?;
    let data = load_data(&a.data, a.image_size, a.channels)?;
    let data = perturb_dataset(&data, Noise::Multiplicative(a.sigma), seed)?;
    let psd = average_psd(&data)?;
    write_psd_csv(&a.out, &psd)?;
    println!("{} radial bins, total power {:.6}", psd.mean_power.len(), psd.total_power());
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.ckpt)?;
    let seed = resolve_seed(a.seed, cfg.seed)?;
    let x = model.sample(a.count, a.temperature, seed)?;
    ensure_dir(&a.out)?;
    let shape = model.image_shape();
    let per: usize = shape.iter().product();
    for (i, img) in x.data().chunks(per).enumerate() {
        flowood::image::save_png(&a.out.join(format!("sample_{i:04}.png")), img, shape)?;
    }
    println!("wrote {} samples to {}", a.count, a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, 0)?;
    texture_dataset(a.kind, a.count, a.image_size, a.channels, seed).save_pngs(&a.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Roc(a) => cmd_roc(a),
        Command::Psd(a) => cmd_psd(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
