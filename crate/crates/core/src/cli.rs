//! Command-line front end. Results go to stdout, diagnostics to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    ablation_grid, embedding_similarity, evaluate, export_heatmap, export_report, pcc,
};
use crate::frontend::{load_corpus, save_corpus, synth_generate, Corpus, SplitSizes, SynthConfig};
use crate::scorer::{load_checkpoint, save_checkpoint, EncoderConfig, ScorerConfig, ScorerParams, Variant};
use crate::training::{
    holdout_split, pretrain_gop, similarity_gop_pairs, train_scorer, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "pronscore", version, about = "Pronunciation scoring with linguistic-acoustic similarity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/dev/test corpora.
    Synth(SynthArgs),
    /// GOP pre-training of the preprocessing network.
    Pretrain(PretrainArgs),
    /// Train a scorer on utterance labels.
    Train(TrainArgs),
    /// Score a corpus and report PCC.
    Eval(EvalArgs),
    /// Train and evaluate every variant with and without pre-training.
    Ablate(AblateArgs),
    /// Export pairwise phone-embedding similarity as CSV.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with `synth`, `scorer` and `train` sections; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    /// Total number of utterances over all splits.
    #[arg(long)]
    pub utterances: Option<usize>,
    #[arg(long)]
    pub phones: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Split proportions as `train:dev:test`.
    #[arg(long)]
    pub splits: Option<String>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Dev corpus for early stopping; a seeded share of `--corpus` otherwise.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// Training log path; defaults to `<out-ckpt>.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub init_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train_flags: TrainFlags,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Comma-separated phone ids.
    #[arg(long)]
    pub phones: String,
    /// One label per line; line `i` names phone `i`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Scorer sizes that a config file may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerFile {
    pub variant: Option<Variant>,
    pub embed_dim: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub mlp_out: Option<usize>,
    pub phone_encoder: Option<EncoderConfig>,
    pub word_encoder: Option<EncoderConfig>,
    pub positional_encoding: Option<bool>,
    pub ln_eps: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub synth: Option<SynthConfig>,
    pub scorer: Option<ScorerFile>,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn train_config(&self, common: &Common, flags: &TrainFlags) -> Result<TrainConfig> {
        let mut cfg = self.train.clone().unwrap_or_default();
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(lr) = flags.lr {
            cfg.lr = lr;
        }
        if let Some(e) = flags.max_epochs {
            cfg.max_epochs = e;
        }
        if let Some(p) = flags.patience {
            cfg.patience = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn scorer_config(&self, variant: Option<&str>, corpus: &Corpus) -> Result<ScorerConfig> {
        let file = self.scorer.clone().unwrap_or_default();
        let variant = match variant {
            Some(v) => v.parse()?,
            None => file.variant.unwrap_or(Variant::Similarity),
        };
        let d = ScorerConfig::new(variant, corpus.feat_dim, corpus.num_phones);
        let cfg = ScorerConfig {
            embed_dim: file.embed_dim.unwrap_or(d.embed_dim),
            mlp_hidden: file.mlp_hidden.unwrap_or(d.mlp_hidden),
            mlp_out: file.mlp_out.unwrap_or(d.mlp_out),
            phone_encoder: file.phone_encoder.unwrap_or(d.phone_encoder),
            word_encoder: file.word_encoder.unwrap_or(d.word_encoder),
            positional_encoding: file.positional_encoding.unwrap_or(d.positional_encoding),
            ln_eps: file.ln_eps.unwrap_or(d.ln_eps),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// 2 for usage and validation problems, 3 for failures during a run.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } | Error::Contract(_) => 3,
        _ => 2,
    }
}

fn log_path(explicit: &Option<PathBuf>, ckpt: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = ckpt.as_os_str().to_owned();
        s.push(".log.json");
        PathBuf::from(s)
    })
}

fn check_corpus(params: &ScorerParams, corpus: &Corpus, what: &str) -> Result<()> {
    let cfg = params.config();
    if corpus.num_phones != cfg.num_phones || corpus.feat_dim != cfg.feat_dim {
        return Err(Error::Config(format!(
            "{what} has {} phones / {}-dim features, model expects {} / {}",
            corpus.num_phones, corpus.feat_dim, cfg.num_phones, cfg.feat_dim
        )));
    }
    Ok(())
}

fn parse_splits(s: &str, total: usize) -> Result<SplitSizes> {
    let parts = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("--splits `{s}`: {e}")))?;
    let [a, b, c] = parts[..] else {
        return Err(Error::Config(format!("--splits `{s}` must be train:dev:test")));
    };
    let sum = a + b + c;
    if !(a >= 0.0 && b >= 0.0 && c >= 0.0 && sum > 0.0) {
        return Err(Error::Config(format!("--splits `{s}` must be non-negative with a positive sum")));
    }
    let dev = (total as f64 * b / sum).round() as usize;
    let test = (total as f64 * c / sum).round() as usize;
    Ok(SplitSizes {
        train: total.saturating_sub(dev + test),
        dev,
        test,
    })
}

#[derive(Debug, Serialize)]
struct SynthManifest<'a> {
    seed: u64,
    config: &'a SynthConfig,
    counts: SplitSizes,
    files: [&'a str; 3],
}

fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let mut cfg = file.synth.clone().unwrap_or_default();
    let seed = a.common.seed.unwrap_or(0);
    if let Some(p) = a.phones {
        cfg.num_phones = p;
    }
    if let Some(n) = a.noise {
        cfg.noise = n;
    }
    if a.utterances.is_some() || a.splits.is_some() {
        let s = cfg.splits;
        let total = a.utterances.unwrap_or(s.train + s.dev + s.test);
        let ratios = a
            .splits
            .clone()
            .unwrap_or_else(|| format!("{}:{}:{}", s.train, s.dev, s.test));
        cfg.splits = parse_splits(&ratios, total)?;
    }
    let corpus = synth_generate(&cfg, seed)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let names = ["train.jsonl", "dev.jsonl", "test.jsonl"];
    for (name, c) in names.iter().zip([&corpus.train, &corpus.dev, &corpus.test]) {
        save_corpus(c, a.out.join(name))?;
    }
    let manifest = SynthManifest {
        seed,
        config: &cfg,
        counts: cfg.splits,
        files: names,
    };
    let path = a.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::to_string(&manifest.counts)?)
}

fn cmd_pretrain(a: &PretrainArgs) -> Result<String> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let cfg = file.train_config(&a.common, &a.train)?;
    let corpus = load_corpus(&a.corpus)?;
    let dev = a.dev.as_ref().map(load_corpus).transpose()?;
    let scorer = file.scorer_config(a.variant.as_deref(), &corpus)?;
    let init = ScorerParams::init(&scorer, cfg.seed)?;
    if let Some(dev) = &dev {
        check_corpus(&init, dev, "dev corpus")?;
    }
    let (params, log) = pretrain_gop(&corpus, dev.as_ref(), init, &cfg)?;
    save_checkpoint(&params, &a.out_ckpt)?;
    log.save(log_path(&a.log, &a.out_ckpt))?;
    let held_out = match dev {
        Some(d) => d,
        None => holdout_split(&corpus, cfg.dev_fraction, cfg.seed)?.1,
    };
    let (s, g): (Vec<f64>, Vec<f64>) = similarity_gop_pairs(&params, &held_out)?.into_iter().unzip();
    Ok(format!("{:.4}", pcc(&s, &g)?))
}

fn cmd_train(a: &TrainArgs) -> Result<String> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let cfg = file.train_config(&a.common, &a.flags)?;
    let train = load_corpus(&a.train)?;
    let dev = load_corpus(&a.dev)?;
    let scorer = file.scorer_config(a.variant.as_deref(), &train)?;
    let mut params = ScorerParams::init(&scorer, cfg.seed)?;
    if let Some(path) = &a.init_ckpt {
        let from = load_checkpoint(path)?;
        if from.config() == params.config() {
            params = from;
        } else {
            params.load_preprocessing(&from)?;
        }
    }
    check_corpus(&params, &train, "train corpus")?;
    check_corpus(&params, &dev, "dev corpus")?;
    let (params, log) = train_scorer(&train, &dev, params, &cfg)?;
    save_checkpoint(&params, &a.out_ckpt)?;
    log.save(log_path(&a.log, &a.out_ckpt))?;
    Ok(format!(
        "{{\"best_epoch\":{},\"best_dev_loss\":{},\"epochs\":{},\"stopped_early\":{}}}",
        log.best_epoch,
        log.best_dev_loss,
        log.epochs(),
        log.stopped_early
    ))
}

fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let params = load_checkpoint(&a.ckpt)?;
    let corpus = load_corpus(&a.corpus)?;
    check_corpus(&params, &corpus, "corpus")?;
    let report = evaluate(&params, &corpus)?;
    if let Some(path) = &a.report {
        export_report(&report, path)?;
    }
    Ok(format!("{:.4}", report.pcc))
}

fn cmd_ablate(a: &AblateArgs) -> Result<String> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let cfg = file.train_config(&a.common, &a.train_flags)?;
    let train = load_corpus(&a.train)?;
    let dev = load_corpus(&a.dev)?;
    let test = load_corpus(&a.test)?;
    let base = file.scorer_config(None, &train)?;
    let probe = ScorerParams::init(&base, cfg.seed)?;
    check_corpus(&probe, &dev, "dev corpus")?;
    check_corpus(&probe, &test, "test corpus")?;
    let (table, runs) = ablation_grid(&train, &dev, &test, &base, &cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for run in &runs {
        let stem = format!("{}_pretrain{}", run.variant, u8::from(run.pretrain));
        save_checkpoint(&run.params, a.out_dir.join(format!("{stem}.ckpt")))?;
        run.train_log.save(a.out_dir.join(format!("{stem}.train.json")))?;
        if let Some(log) = &run.pretrain_log {
            log.save(a.out_dir.join(format!("{stem}.pretrain.json")))?;
        }
    }
    let write = |name: &str, text: String| {
        let path = a.out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    let json = table.to_json()?;
    write("table.json", json.clone())?;
    write("table.txt", table.to_text())?;
    Ok(json.trim_end().to_string())
}

fn cmd_heatmap(a: &HeatmapArgs) -> Result<String> {
    let params = load_checkpoint(&a.ckpt)?;
    let ids = a
        .phones
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| Error::Input(format!("phone id `{p}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = embedding_similarity(&params, &ids)?;
    if let Some(path) = &a.labels {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: Vec<&str> = text.lines().collect();
        let labels = ids
            .iter()
            .map(|&i| {
                names
                    .get(i)
                    .map(|s| s.trim().to_string())
                    .ok_or_else(|| Error::Input(format!("label file has no line for phone {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        matrix = matrix.with_labels(labels)?;
    }
    export_heatmap(&matrix, &a.out)?;
    Ok(a.out.display().to_string())
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Heatmap(a) => cmd_heatmap(a),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
