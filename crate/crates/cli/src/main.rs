use std::fs::File;
use std::io::{self, BufReader, LineWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use desknmt_cli::artifacts::{read_input, ModelBundle};
use desknmt_cli::config::{parse_config, validate_config, PipelineConfig};
use desknmt_cli::error::CliError;
use desknmt_cli::pipeline::{build_codecs, encode_pairs, run_pipeline};
use desknmt_core::corpus::{read_parallel, SentencePair};
use desknmt_core::eval::bleu;
use desknmt_core::lm::train_lm;
use desknmt_core::model::ModelParams;
use desknmt_core::select::{format_scores, select_top, SelectionConfig, SelectionJob};
use desknmt_core::subword::{learn_bpe, word_counts, BpeApplier, MergeTable};
use desknmt_core::textnorm::{encode_case, format_factors, tokenize};
use desknmt_core::train::{run_schedule, Phase, ScheduleData, TrainState, TrainingSchedule};
use desknmt_core::translate::{
    back_translate, hyper_specialize, translate_all, AdaptTargets, Sequence,
};

#[derive(Parser)]
#[command(name = "desknmt", version, about = "Desk-scale neural machine translation")]
struct Cli {
    /// Pipeline configuration file; every setting has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// Input file (stdin when omitted).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Split lines into tokens.
    Tokenize {
        #[command(flatten)]
        io: Io,
        /// Lowercase tokens; case factors go to --factors.
        #[arg(long)]
        lowercase: bool,
        #[arg(long, requires = "lowercase")]
        factors: Option<PathBuf>,
    },
    /// Learn BPE merges from tokenized text.
    LearnBpe {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        merges: Option<usize>,
    },
    /// Segment tokenized text with a merge table.
    ApplyBpe {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        codes: PathBuf,
    },
    /// Train an interpolated trigram LM.
    TrainLm {
        #[command(flatten)]
        io: Io,
    },
    /// Moore-Lewis selection over parallel and synthetic pairs.
    Select {
        #[arg(long)]
        in_domain: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long, requires = "synthetic_tgt")]
        synthetic_src: Option<PathBuf>,
        #[arg(long, requires = "synthetic_src")]
        synthetic_tgt: Option<PathBuf>,
        #[arg(long)]
        quota_parallel: Option<usize>,
        #[arg(long)]
        quota_synthetic: Option<usize>,
        /// Writes PREFIX.src and PREFIX.tgt.
        #[arg(long)]
        output_prefix: PathBuf,
        /// Score sidecar.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Train a model on parallel text.
    Train(TrainArgs),
    /// Translate one sentence per line.
    Translate {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Per-sentence log-probabilities.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Translate target-language text with a reverse model into synthetic shards.
    Backtranslate {
        #[arg(long)]
        input: Option<PathBuf>,
        /// A target-to-source model.
        #[arg(long)]
        model: PathBuf,
        /// Writes PREFIX.N.src and PREFIX.N.tgt per shard.
        #[arg(long)]
        output_prefix: PathBuf,
        #[arg(long)]
        shard_size: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Continue training on in-domain sources.
    Hyperspec {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        src: PathBuf,
        /// Reference translations; the model's own output when omitted.
        #[arg(long = "ref", value_name = "FILE")]
        reference: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Corpus BLEU against one reference per line.
    Bleu {
        #[arg(long)]
        hyp: Option<PathBuf>,
        #[arg(long = "ref", value_name = "FILE")]
        reference: PathBuf,
        #[arg(long)]
        lowercase: bool,
    },
    /// Run every stage from the configuration.
    Pipeline {
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    valid_src: PathBuf,
    #[arg(long)]
    valid_tgt: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    #[arg(long, default_value_t = 80)]
    max_len: usize,
    #[arg(long)]
    epochs: Option<usize>,
    /// Training log (stderr when omitted).
    #[arg(long)]
    log: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(LineWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(LineWriter::new(io::stdout())),
    })
}

fn write_all<S: AsRef<str>>(path: Option<&Path>, lines: &[S]) -> Result<(), CliError> {
    let mut out = output(path)?;
    for l in lines {
        writeln!(out, "{}", l.as_ref())?;
    }
    out.flush()?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => validate_config(path)?,
        None => parse_config("", Path::new("."), std::env::vars())?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.deterministic |= cli.deterministic;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli)?;
    let threads = if cfg.deterministic { 1 } else { cfg.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Io(e.to_string()))?;

    match cli.command {
        Command::Tokenize { io, lowercase, factors } => {
            let lines = read_input(io.input.as_deref())?;
            let mut out = output(io.output.as_deref())?;
            let mut side = factors.as_deref().map(|p| output(Some(p))).transpose()?;
            for line in &lines {
                let tokens = tokenize(line);
                if lowercase {
                    let enc = encode_case(&tokens);
                    writeln!(out, "{}", enc.tokens.join(" "))?;
                    if let Some(side) = side.as_mut() {
                        writeln!(side, "{}", format_factors(&enc.factors))?;
                    }
                } else {
                    writeln!(out, "{}", tokens.join(" "))?;
                }
            }
        }
        Command::LearnBpe { io, merges } => {
            let lines = read_input(io.input.as_deref())?;
            let table = learn_bpe(&word_counts(lines.iter().map(String::as_str)), merges.unwrap_or(cfg.merges));
            let mut out = output(io.output.as_deref())?;
            table.write_to(&mut out)?;
        }
        Command::ApplyBpe { io, codes } => {
            let file = File::open(&codes).map_err(|e| CliError::io(&codes, e))?;
            let mut applier = BpeApplier::new(MergeTable::read_from(BufReader::new(file))?);
            let lines = read_input(io.input.as_deref())?;
            let mut out = output(io.output.as_deref())?;
            for line in &lines {
                writeln!(out, "{}", applier.apply_line(line).join(" "))?;
            }
        }
        Command::TrainLm { io } => {
            let lines = read_input(io.input.as_deref())?;
            let lm = train_lm(&lines, cfg.lm_weights())?;
            let mut out = output(io.output.as_deref())?;
            lm.write_to(&mut out)?;
        }
        Command::Select {
            in_domain,
            src,
            tgt,
            synthetic_src,
            synthetic_tgt,
            quota_parallel,
            quota_synthetic,
            output_prefix,
            scores,
        } => {
            let parallel = read_parallel(&src, &tgt)?;
            let synthetic = match (synthetic_src, synthetic_tgt) {
                (Some(s), Some(t)) => read_parallel(&s, &t)?,
                _ => Vec::new(),
            };
            let job = SelectionJob {
                quota_parallel: quota_parallel.unwrap_or(cfg.quota_parallel.min(parallel.len())),
                quota_synthetic: quota_synthetic.unwrap_or(cfg.quota_synthetic.min(synthetic.len())),
                parallel,
                synthetic,
                in_domain: read_input(Some(&in_domain))?,
                config: SelectionConfig {
                    weights: cfg.lm_weights(),
                    sample_size: (cfg.lm_sample > 0).then_some(cfg.lm_sample),
                    seed: cfg.seed,
                },
            };
            let sel = select_top(&job)?;
            let pairs: Vec<SentencePair> = sel.sentence_pairs();
            let with_ext = |ext: &str| {
                let mut name = output_prefix.clone().into_os_string();
                name.push(ext);
                PathBuf::from(name)
            };
            let srcs: Vec<&str> = pairs.iter().map(|p| p.source.as_str()).collect();
            let tgts: Vec<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
            write_all(Some(&with_ext(".src")), &srcs)?;
            write_all(Some(&with_ext(".tgt")), &tgts)?;
            if let Some(path) = scores {
                std::fs::write(&path, format_scores(&sel.scores)).map_err(|e| CliError::io(&path, e))?;
            }
        }
        Command::Train(args) => {
            cfg.batch_size = args.batch_size;
            cfg.dropout = args.dropout;
            cfg.max_len = args.max_len;
            if let Some(e) = args.epochs {
                cfg.max_epochs = e;
            }
            let train = read_parallel(&args.src, &args.tgt)?;
            let valid = read_parallel(&args.valid_src, &args.valid_tgt)?;
            let prep = build_codecs(&train, &cfg)?;
            let examples = encode_pairs(&train, &prep.src, &prep.tgt);
            let valid: Vec<_> = encode_pairs(&valid, &prep.src, &prep.tgt)
                .into_iter()
                .filter(|e| e.source.len() <= cfg.max_len && e.target.len() <= cfg.max_len)
                .collect();
            let tc = cfg.train_config();
            let params = ModelParams::init(&cfg.model_config(&prep.src.vocab, &prep.tgt.vocab), cfg.seed)?;
            let mut state = TrainState::new(params, &tc, cfg.seed);
            let schedule = TrainingSchedule {
                phases: vec![Phase::Parallel {
                    max_epochs: cfg.max_epochs,
                    decay_epochs: cfg.decay_epochs,
                }],
            };
            let data = ScheduleData {
                parallel: examples,
                ..ScheduleData::default()
            };
            let mut log: Box<dyn Write> = match &args.log {
                Some(p) => output(Some(p))?,
                None => Box::new(LineWriter::new(io::stderr())),
            };
            run_schedule(&mut state, &schedule, &data, &valid, &tc, |row, _| {
                let _ = writeln!(log, "{row}");
                Ok(())
            })?;
            ModelBundle {
                state,
                src: prep.src,
                tgt: prep.tgt,
            }
            .save(&args.output)?;
        }
        Command::Translate {
            io,
            model,
            beam,
            max_len,
            scores,
        } => {
            let bundle = ModelBundle::load(&model)?;
            let mut config = cfg.beam_config();
            config.beam_size = beam.unwrap_or(config.beam_size);
            config.max_len = max_len.unwrap_or(config.max_len);
            let lines = read_input(io.input.as_deref())?;
            let sources: Vec<Sequence> = lines.iter().map(|l| bundle.src.encode(l)).collect();
            let hyps = translate_all(&bundle.state.params, &sources, &config)?;
            let text: Vec<String> = hyps.iter().map(|h| bundle.tgt.decode(&h.to_sequence())).collect();
            write_all(io.output.as_deref(), &text)?;
            if let Some(path) = scores {
                let rows: Vec<String> = hyps.iter().map(|h| h.log_prob.to_string()).collect();
                write_all(Some(&path), &rows)?;
            }
        }
        Command::Backtranslate {
            input,
            model,
            output_prefix,
            shard_size,
            beam,
        } => {
            let bundle = ModelBundle::load(&model)?;
            let mut config = cfg.beam_config();
            config.beam_size = beam.unwrap_or(cfg.bt_beam);
            let mono = read_input(input.as_deref())?;
            let seqs: Vec<Sequence> = mono.iter().map(|l| bundle.src.encode(l)).collect();
            let synthetic = back_translate(&bundle.state.params, &seqs, shard_size.unwrap_or(cfg.shard_size), &config)?;
            let mut offset = 0;
            for (i, shard) in synthetic.shards().iter().enumerate() {
                let src: Vec<String> = shard
                    .iter()
                    .map(|e| bundle.tgt.decode(&Sequence::new(e.source.clone(), e.source_case.clone())))
                    .collect();
                let path = |ext: &str| PathBuf::from(format!("{}.{}.{ext}", output_prefix.display(), i + 1));
                write_all(Some(&path("src")), &src)?;
                write_all(Some(&path("tgt")), &mono[offset..offset + shard.len()])?;
                offset += shard.len();
            }
        }
        Command::Hyperspec {
            model,
            src,
            reference,
            output,
            lr,
            epochs,
        } => {
            let bundle = ModelBundle::load(&model)?;
            let mut config = cfg.hyperspec_config();
            config.lr = lr.unwrap_or(config.lr);
            config.epochs = epochs.unwrap_or(config.epochs);
            let sources: Vec<Sequence> = read_input(Some(&src))?.iter().map(|l| bundle.src.encode(l)).collect();
            let refs: Option<Vec<Sequence>> = reference
                .map(|r| read_input(Some(&r)).map(|ls| ls.iter().map(|l| bundle.tgt.encode(l)).collect()))
                .transpose()?;
            let targets = match &refs {
                Some(r) => AdaptTargets::References(r),
                None => AdaptTargets::OwnHypotheses,
            };
            let state = hyper_specialize(&bundle.state, &sources, targets, &config)?;
            ModelBundle { state, ..bundle }.save(&output)?;
        }
        Command::Bleu {
            hyp,
            reference,
            lowercase,
        } => {
            let hyps = read_input(hyp.as_deref())?;
            let refs = read_input(Some(&reference))?;
            let report = bleu(&hyps, &refs, lowercase || cfg.lowercase_bleu)?;
            write_all(None, &[report.to_string()])?;
        }
        Command::Pipeline { out } => {
            let mut log = LineWriter::new(io::stderr());
            let report = run_pipeline(&cfg, &out, &mut log)?;
            write_all(None, &[format!("digest {}", report.manifest.digest())])?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for line in e.lines() {
                eprintln!("desknmt: {line}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
