mod config;

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use streamtts::acoustic_lm::{oracle_aligned_grid, MergeConfig};
use streamtts::attention_masks::{build_mask, MaskSpec, MaskVariant};
use streamtts::audio_io::{raw_f32_bytes, write_wav};
use streamtts::checkpoint::Checkpoint;
use streamtts::corpus::{generate_corpus, load_corpus, write_corpus, SynthCorpusSpec};
use streamtts::flow_decoder::{train_toy_estimator, FlowExample, FlowModel, FlowTrainConfig};
use streamtts::opq_codec::{eval_reconstruction, train_codec, CodecExample, CodecTrainConfig, ToyCodec};
use streamtts::pipeline::{
    events_to_csv, run_streaming, sweep_chunk_size, Backend, ExecMode, Models, SessionConfig, SimTiming,
};
use streamtts::selftest::{run_selftest, SelftestOptions};
use streamtts::semantic::text_to_semantic;
use streamtts::token_streams::write_msgrid;

const SUBCOMMANDS: [&str; 7] = ["gen-corpus", "train-flow", "train-codec", "synth", "bench", "selftest", "mask"];

/// Bad input from the user rather than a failure while running.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "streamtts", version, about = "Streaming two-stage TTS toolkit at toy scale")]
struct Cli {
    /// TOML file with one table per subcommand; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired corpus with a checksummed manifest.
    GenCorpus(GenCorpusArgs),
    /// Train the toy flow-matching estimator on a corpus.
    TrainFlow(TrainFlowArgs),
    /// Two-stage training of the toy codec.
    TrainCodec(TrainCodecArgs),
    /// Streaming synthesis to WAV plus a metrics report.
    Synth(SynthArgs),
    /// Chunk-size latency sweep.
    Bench(BenchArgs),
    /// Run the invariant suites.
    Selftest(SelftestArgs),
    /// Print an attention mask as a 0/1 grid.
    Mask(MaskArgs),
}

#[derive(Args, Debug)]
struct SeedArg {
    #[arg(long, env = "STREAMTTS_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    n_items: usize,
    #[arg(long, default_value = "abcdefghijklmnopqrstuvwxyz ")]
    alphabet: String,
    #[arg(long, default_value_t = 4)]
    min_chars: usize,
    #[arg(long, default_value_t = 12)]
    max_chars: usize,
    #[arg(long, default_value_t = 4)]
    n_speakers: u64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct TrainFlowArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "flow.ckpt")]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct TrainCodecArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "codec.ckpt")]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    stage1_steps: usize,
    #[arg(long, default_value_t = 1500)]
    stage2_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BackendArg {
    Fm,
    Lm,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Fm => Backend::Fm,
            BackendArg::Lm => Backend::Lm,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Concurrent,
    Sequential,
}

impl From<ModeArg> for ExecMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Concurrent => ExecMode::Concurrent,
            ModeArg::Sequential => ExecMode::Sequential,
        }
    }
}

/// Per-unit costs; unset values take backend defaults (fm 9/30/18, lm 6/5/4).
#[derive(Args, Debug, Clone)]
struct TimingArgs {
    #[arg(long)]
    sim_ts: Option<f64>,
    #[arg(long)]
    sim_ta: Option<f64>,
    #[arg(long)]
    sim_tc: Option<f64>,
    /// Per-packet delay at the audio sink.
    #[arg(long, default_value_t = 0.0)]
    sink_ms: f64,
}

impl TimingArgs {
    fn resolve(&self, backend: Backend) -> SimTiming {
        let (s, a, c) = match backend {
            Backend::Fm => (9.0, 30.0, 18.0),
            Backend::Lm => (6.0, 5.0, 4.0),
        };
        SimTiming {
            t_s_ms: self.sim_ts.unwrap_or(s),
            t_a_ms: self.sim_ta.unwrap_or(a),
            t_c_ms: self.sim_tc.unwrap_or(c),
            sink_ms: self.sink_ms,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "fm")]
    backend: BackendArg,
    #[arg(long, default_value = "")]
    text: String,
    /// 16 kHz mono WAV used as the in-context prompt.
    #[arg(long)]
    prompt_audio: Option<PathBuf>,
    #[arg(long, default_value = "out.wav")]
    out: PathBuf,
    /// Write raw little-endian f32 samples instead of a WAV.
    #[arg(long)]
    raw_f32: bool,
    #[arg(long, default_value_t = 25)]
    chunk_tokens: usize,
    #[arg(long, default_value_t = 8)]
    delay: usize,
    #[arg(long, default_value_t = 8)]
    gate: usize,
    #[arg(long, default_value_t = 8)]
    euler_steps: usize,
    #[arg(long, value_enum, default_value = "concurrent")]
    mode: ModeArg,
    #[arg(long, default_value_t = 4)]
    queue_capacity: usize,
    /// Use seeded untrained models instead of checkpoints.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value = "flow.ckpt")]
    flow_checkpoint: PathBuf,
    #[arg(long, default_value = "codec.ckpt")]
    codec_checkpoint: PathBuf,
    /// JSON metrics report path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// CSV event log path.
    #[arg(long)]
    events: Option<PathBuf>,
    /// lm only: write the undelayed oracle token grid as MSGRID.
    #[arg(long)]
    grid_out: Option<PathBuf>,
    #[command(flatten)]
    timing: TimingArgs,
    #[command(flatten)]
    seed: SeedArg,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("'{s}' is not a positive integer")),
    }
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "fm")]
    backend: BackendArg,
    #[arg(long, value_parser = positive, value_delimiter = ',', default_value = "5,10,25,50")]
    sweep_l: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value = "the quick brown fox jumps over the lazy dog")]
    text: String,
    #[arg(long, value_enum, default_value = "concurrent")]
    mode: ModeArg,
    #[arg(long, default_value_t = 2)]
    euler_steps: usize,
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    timing: TimingArgs,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Run only suites whose name contains this.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    codec_checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MaskArgs {
    /// full, causal, chunk1s, chunk2s or chunk:<ms>
    #[arg(long, default_value = "chunk1s")]
    variant: String,
    #[arg(long, default_value_t = 12)]
    frames: usize,
    #[arg(long, default_value_t = 4.0)]
    rate_hz: f64,
    /// Left-context cap in seconds.
    #[arg(long)]
    cap_s: Option<f64>,
}

fn parse_variant(s: &str) -> Result<MaskVariant> {
    Ok(match s {
        "full" => MaskVariant::Full,
        "causal" => MaskVariant::FullyCausal,
        "chunk1s" => MaskVariant::CHUNK_1S,
        "chunk2s" => MaskVariant::CHUNK_2S,
        other => match other.strip_prefix("chunk:").and_then(|ms| ms.parse().ok()) {
            Some(chunk_ms) => MaskVariant::ChunkCausal { chunk_ms },
            None => return Err(usage(format!("unknown mask variant '{other}'"))),
        },
    })
}

fn gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    let spec = SynthCorpusSpec {
        n_items: a.n_items,
        alphabet: a.alphabet.clone(),
        min_chars: a.min_chars,
        max_chars: a.max_chars,
        n_speakers: a.n_speakers,
        seed: a.seed.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let items = generate_corpus(&spec)?;
    let manifest = write_corpus(&a.out, &spec, &items).with_context(|| format!("writing corpus to {}", a.out.display()))?;
    println!("wrote {} items to {}", manifest.items.len(), a.out.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train_flow(a: &TrainFlowArgs) -> Result<()> {
    let items = load_corpus(&a.corpus).with_context(|| format!("loading corpus {}", a.corpus.display()))?;
    let data: Vec<FlowExample<f64>> = items.iter().map(FlowExample::from_item).collect();
    let cfg = FlowTrainConfig { steps: a.steps, seed: a.seed.seed, learning_rate: a.lr, ..Default::default() };
    let mut model = FlowModel::<f64>::toy(a.seed.seed);
    let report = train_toy_estimator(&mut model, &data, &cfg)?;
    model.to_checkpoint().save(&a.out).with_context(|| format!("saving {}", a.out.display()))?;
    if let Some(p) = &a.loss_csv {
        write_text(p, &report.to_csv())?;
    }
    let out = json!({
        "config": { "corpus": a.corpus, "out": a.out, "steps": a.steps, "lr": a.lr, "seed": a.seed.seed },
        "items": data.len(),
        "initial_loss": report.initial_loss(),
        "final_loss": report.final_loss(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn train_codec_cmd(a: &TrainCodecArgs) -> Result<()> {
    let items = load_corpus(&a.corpus).with_context(|| format!("loading corpus {}", a.corpus.display()))?;
    let data: Vec<CodecExample<f64>> = items.iter().map(CodecExample::from_item).collect();
    let cfg = CodecTrainConfig {
        stage1_steps: a.stage1_steps,
        stage2_steps: a.stage2_steps,
        seed: a.seed.seed,
        learning_rate: a.lr,
        ..Default::default()
    };
    let mut codec = ToyCodec::<f64>::toy(a.seed.seed);
    let report = train_codec(&mut codec, &data, &cfg)?;
    codec.to_checkpoint().save(&a.out).with_context(|| format!("saving {}", a.out.display()))?;
    if let Some(p) = &a.loss_csv {
        write_text(p, &report.to_csv())?;
    }
    let per_k: Result<Vec<f64>, _> = (1..=codec.cfg.n_streams).map(|k| eval_reconstruction(&codec, &data, k)).collect();
    let out = json!({
        "config": {
            "corpus": a.corpus, "out": a.out, "stage1_steps": a.stage1_steps,
            "stage2_steps": a.stage2_steps, "lr": a.lr, "seed": a.seed.seed,
        },
        "baseline_mse": report.baseline_mse,
        "stage1_mse": report.stage1_mse,
        "stage2_mse": report.stage2_mse,
        "mse_by_keep_k": per_k?,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("missing {what} checkpoint: {} (train one, or pass --oracle)", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("loading {what} checkpoint {}", path.display()))
}

fn load_models(a: &SynthArgs, backend: Backend) -> Result<Models> {
    let mut models = Models::toy(a.seed.seed);
    if !a.oracle {
        if backend == Backend::Fm {
            models.flow = Arc::new(FlowModel::from_checkpoint(&require(&a.flow_checkpoint, "flow")?)?);
        }
        if backend == Backend::Lm || a.prompt_audio.is_some() {
            models.codec = Arc::new(ToyCodec::from_checkpoint(&require(&a.codec_checkpoint, "codec")?)?);
        }
    }
    if let Some(p) = &a.prompt_audio {
        let bytes = fs::read(p).with_context(|| format!("reading prompt audio {}", p.display()))?;
        models = models.with_prompt_audio(&bytes)?;
    }
    Ok(models)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let backend: Backend = a.backend.into();
    let cfg = SessionConfig {
        backend,
        text: a.text.clone(),
        seed: a.seed.seed,
        chunk_tokens: a.chunk_tokens,
        merge: MergeConfig { d: a.delay, m: a.gate },
        timing: a.timing.resolve(backend),
        euler_steps: a.euler_steps,
        queue_capacity: a.queue_capacity,
        mode: a.mode.into(),
        ..Default::default()
    };
    cfg.budget().validate().map_err(|e| usage(e.to_string()))?;
    cfg.merge.validate().map_err(|e| usage(e.to_string()))?;
    if a.text.is_empty() {
        eprintln!("warning: empty --text, writing zero-length audio");
    }
    let models = load_models(a, backend)?;
    let result = run_streaming(&cfg, &models)?;
    if a.raw_f32 {
        fs::write(&a.out, raw_f32_bytes(&result.audio.samples)).with_context(|| format!("writing {}", a.out.display()))?;
    } else {
        write_wav(&a.out, &result.audio.samples, result.audio.sample_rate_hz)
            .with_context(|| format!("writing {}", a.out.display()))?;
    }
    if let Some(p) = &a.events {
        write_text(p, &events_to_csv(&result.events)?)?;
    }
    if let Some(p) = &a.grid_out {
        if backend != Backend::Lm {
            return Err(usage("--grid-out needs --backend lm"));
        }
        let c = &models.codec.cfg;
        let grid = oracle_aligned_grid(&text_to_semantic(&a.text), &cfg.merge, c.n_streams, c.codebook_size);
        let mut w = BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
        write_msgrid(&mut w, &grid)?;
    }
    let report = json!({
        "config": {
            "backend": backend.as_str(), "text": a.text, "seed": a.seed.seed, "out": a.out,
            "prompt_audio": a.prompt_audio, "oracle": a.oracle, "chunk_tokens": a.chunk_tokens,
            "delay": a.delay, "gate": a.gate, "euler_steps": a.euler_steps,
            "mode": cfg.mode.as_str(), "queue_capacity": a.queue_capacity, "timing": cfg.timing,
        },
        "metrics": result.metrics,
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.metrics {
        write_text(p, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    if a.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let backend: Backend = a.backend.into();
    let base = SessionConfig {
        backend,
        text: a.text.clone(),
        timing: a.timing.resolve(backend),
        euler_steps: a.euler_steps,
        mode: a.mode.into(),
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..a.repeats as u64).map(|r| a.seed.seed + r).collect();
    let models = Models::toy(a.seed.seed);
    let rows = sweep_chunk_size(&a.sweep_l, &base, &models, &seeds)?;
    println!("{:>5} {:>10} {:>12} {:>8}", "l", "bound_ms", "measured_ms", "rtf");
    for r in &rows {
        println!("{:>5} {:>10.1} {:>12.1} {:>8.3}", r.l, r.bound_ms, r.measured_latency_ms, r.rtf);
    }
    let report = json!({
        "config": {
            "backend": backend.as_str(), "sweep_l": a.sweep_l, "repeats": a.repeats, "text": a.text,
            "mode": base.mode.as_str(), "euler_steps": a.euler_steps, "timing": base.timing, "seed": a.seed.seed,
        },
        "rows": rows,
    });
    let text = serde_json::to_string_pretty(&report)?;
    match &a.json {
        Some(p) => write_text(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn selftest(a: &SelftestArgs) -> Result<bool> {
    let opts = SelftestOptions { filter: a.filter.as_deref(), codec_checkpoint: a.codec_checkpoint.as_deref() };
    let results = run_selftest(&opts);
    if results.is_empty() {
        return Err(usage(format!("no suite matches '{}'", a.filter.as_deref().unwrap_or(""))));
    }
    let mut ok = true;
    for r in &results {
        match &r.outcome {
            Ok(()) => println!("PASS {}", r.name),
            Err(e) => {
                ok = false;
                println!("FAIL {}: {e}", r.name);
            }
        }
    }
    Ok(ok)
}

fn mask(a: &MaskArgs) -> Result<()> {
    let spec = MaskSpec::new(parse_variant(&a.variant)?, a.rate_hz).with_cap_seconds(a.cap_s);
    let m = build_mask(&spec, a.frames).map_err(|e| usage(e.to_string()))?;
    print!("{}", m.to_text());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.cmd {
        Command::GenCorpus(a) => gen_corpus(a)?,
        Command::TrainFlow(a) => train_flow(a)?,
        Command::TrainCodec(a) => train_codec_cmd(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Bench(a) => bench(a)?,
        Command::Selftest(a) => return selftest(a),
        Command::Mask(a) => mask(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::load_and_merge(args, &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
