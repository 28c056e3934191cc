//! The end-to-end run: preprocess → BPE → train(P) → back-translate →
//! train(P+Mᵢ) → select → decayed train(P'+M') → hyper-specialise → BLEU.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use desknmt_core::codec::TextCodec;
use desknmt_core::corpus::{read_lines, read_parallel, write_lines, Provenance, SentencePair};
use desknmt_core::eval::{average_bleu, bleu, BleuReport};
use desknmt_core::model::{Example, ModelParams};
use desknmt_core::select::{format_scores, select_top, SelectionConfig, SelectionJob};
use desknmt_core::subword::{apply_bpe, learn_bpe, word_counts, MergeTable, Vocabulary};
use desknmt_core::textnorm::{encode_case, tokenize, CompoundConfig, FreqLexicon};
use desknmt_core::train::{
    evaluate_ppl, run_schedule, Phase, ScheduleData, TrainConfig, TrainState, TrainingSchedule,
};
use desknmt_core::translate::{
    back_translate, hyper_specialize, leave_one_out, translate_all, AdaptTargets, BeamConfig, Sequence,
};

use crate::artifacts::{sha256_file, ModelBundle};
use crate::config::{HyperSpecTargets, PipelineConfig};
use crate::error::CliError;
use crate::manifest::RunManifest;

/// Scores of one test set before and after hyper-specialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct SetReport {
    pub name: String,
    pub bleu_before: BleuReport,
    pub bleu_after: BleuReport,
    pub ppl_before: f64,
    pub ppl_after: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub manifest: RunManifest,
    pub sets: Vec<SetReport>,
    pub average_before: f64,
    pub average_after: f64,
}

struct Run<'a> {
    out: PathBuf,
    manifest: RunManifest,
    log: &'a mut (dyn Write + Send),
    train_log: Vec<String>,
    stage_start: Instant,
}

impl Run<'_> {
    fn say(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.log, "{}", msg.as_ref());
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let hash = sha256_file(&self.path(name))?;
        self.manifest.outputs.push((name.to_string(), hash));
        Ok(())
    }

    fn write(&mut self, name: &str, lines: &[String]) -> Result<(), CliError> {
        write_lines(&self.path(name), lines)?;
        self.record(name)
    }

    fn save(&mut self, name: &str, bundle: &ModelBundle) -> Result<(), CliError> {
        bundle.save(&self.path(name))?;
        self.record(name)
    }

    fn stage_done(&mut self, stage: &str) {
        let secs = self.stage_start.elapsed().as_secs_f64();
        self.manifest.timings.push((stage.to_string(), secs));
        self.say(format!("[{stage}] done in {secs:.1}s"));
        self.stage_start = Instant::now();
    }

    fn train(
        &mut self,
        model: &str,
        state: &mut TrainState,
        phase: Phase,
        data: &ScheduleData,
        valid: &[Example],
        config: &TrainConfig,
    ) -> Result<(), CliError> {
        state.cursor = (0, 0);
        state.decayed_epochs = 0;
        let schedule = TrainingSchedule { phases: vec![phase] };
        let mut rows = Vec::new();
        run_schedule(state, &schedule, data, valid, config, |log, _| {
            rows.push(format!("{model}\t{log}"));
            Ok(())
        })?;
        for row in rows {
            self.say(&row);
            self.train_log.push(row);
        }
        Ok(())
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(vec![crate::config::ConfigError::Range {
            key: key.into(),
            reason: "required by the pipeline".into(),
        }]))
}

fn normalizer() -> TextCodec {
    TextCodec::new(MergeTable::new(), Vocabulary::from_symbols(std::iter::empty()))
}

fn joined(codec: &TextCodec, line: &str) -> String {
    codec.normalize(line).0.join(" ")
}

fn segment_line(tokens: &str, merges: &MergeTable) -> String {
    tokens
        .split_whitespace()
        .flat_map(|w| apply_bpe(w, merges))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Tokenized and segmented training text plus the codecs learned from it.
pub struct Prepared {
    pub src: TextCodec,
    pub tgt: TextCodec,
    pub merges: MergeTable,
    pub src_tok: Vec<String>,
    pub tgt_tok: Vec<String>,
    pub src_bpe: Vec<String>,
    pub tgt_bpe: Vec<String>,
}

/// Learns the source compound lexicon, one joint merge table and a
/// vocabulary per side from the training pairs.
pub fn build_codecs(train: &[SentencePair], cfg: &PipelineConfig) -> Result<Prepared, CliError> {
    let mut src_norm = normalizer();
    if cfg.split_compounds {
        let lex = FreqLexicon::from_tokens(train.iter().flat_map(|p| encode_case(&tokenize(&p.source)).tokens));
        src_norm.compounds = Some((lex, CompoundConfig::default()));
    }
    let tgt_norm = normalizer();
    let src_tok: Vec<String> = train.iter().map(|p| joined(&src_norm, &p.source)).collect();
    let tgt_tok: Vec<String> = train.iter().map(|p| joined(&tgt_norm, &p.target)).collect();
    let counts = word_counts(src_tok.iter().chain(&tgt_tok).map(String::as_str));
    let merges = learn_bpe(&counts, cfg.merges);
    let src_bpe: Vec<String> = src_tok.iter().map(|l| segment_line(l, &merges)).collect();
    let tgt_bpe: Vec<String> = tgt_tok.iter().map(|l| segment_line(l, &merges)).collect();
    let src_vocab = Vocabulary::build(src_bpe.iter().map(String::as_str), cfg.vocab_size)?;
    let tgt_vocab = Vocabulary::build(tgt_bpe.iter().map(String::as_str), cfg.vocab_size)?;
    let mut src = TextCodec::new(merges.clone(), src_vocab);
    src.compounds = src_norm.compounds;
    let tgt = TextCodec::new(merges.clone(), tgt_vocab);
    Ok(Prepared {
        src,
        tgt,
        merges,
        src_tok,
        tgt_tok,
        src_bpe,
        tgt_bpe,
    })
}

pub fn encode_pairs(pairs: &[SentencePair], src: &TextCodec, tgt: &TextCodec) -> Vec<Example> {
    pairs
        .iter()
        .map(|p| {
            let s = src.encode(&p.source);
            let t = tgt.encode(&p.target);
            Example {
                source: s.ids,
                source_case: s.cases,
                target: t.ids,
                target_case: t.cases,
            }
        })
        .collect()
}

fn swap(examples: &[Example]) -> Vec<Example> {
    examples
        .iter()
        .map(|e| Example {
            source: e.target.clone(),
            source_case: e.target_case.clone(),
            target: e.source.clone(),
            target_case: e.source_case.clone(),
        })
        .collect()
}

fn within(examples: &[Example], max_len: usize) -> Vec<Example> {
    examples
        .iter()
        .filter(|e| e.source.len() <= max_len && e.target.len() <= max_len)
        .cloned()
        .collect()
}

fn sources(examples: &[Example]) -> Vec<Sequence> {
    examples.iter().map(|e| Sequence::new(e.source.clone(), e.source_case.clone())).collect()
}

fn targets(examples: &[Example]) -> Vec<Sequence> {
    examples.iter().map(|e| Sequence::new(e.target.clone(), e.target_case.clone())).collect()
}

fn ppl(params: &ModelParams, examples: &[Example], cfg: &PipelineConfig) -> Result<f64, CliError> {
    Ok(evaluate_ppl(params, &within(examples, cfg.max_len), cfg.batch_size)?)
}

/// Runs every stage, writing artifacts and `manifest.txt` into `out_dir`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    out_dir: &Path,
    log: &mut (dyn Write + Send),
) -> Result<PipelineReport, CliError> {
    let threads = if cfg.deterministic { 1 } else { cfg.threads };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| run_stages(cfg, out_dir, log))
}

fn run_stages(cfg: &PipelineConfig, out_dir: &Path, log: &mut (dyn Write + Send)) -> Result<PipelineReport, CliError> {
    let d = &cfg.data;
    let train_src = require(&d.train_src, "data.train_src")?;
    let train_tgt = require(&d.train_tgt, "data.train_tgt")?;
    let valid_src = require(&d.valid_src, "data.valid_src")?;
    let valid_tgt = require(&d.valid_tgt, "data.valid_tgt")?;
    if d.test_src.is_empty() {
        return Err(CliError::Config(vec![crate::config::ConfigError::Range {
            key: "data.test_src".into(),
            reason: "at least one test set is required by the pipeline".into(),
        }]));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut run = Run {
        out: out_dir.to_path_buf(),
        manifest: RunManifest::new(cfg.seed, cfg.resolved()),
        log,
        train_log: Vec::new(),
        stage_start: Instant::now(),
    };
    let mut inputs = vec![
        ("data.train_src".to_string(), train_src),
        ("data.train_tgt".to_string(), train_tgt),
        ("data.valid_src".to_string(), valid_src),
        ("data.valid_tgt".to_string(), valid_tgt),
    ];
    if let Some(m) = &d.mono {
        inputs.push(("data.mono".to_string(), m));
    }
    for (i, (s, t)) in d.test_src.iter().zip(&d.test_tgt).enumerate() {
        inputs.push((format!("data.test_src.{i}"), s));
        inputs.push((format!("data.test_tgt.{i}"), t));
    }
    for (key, path) in inputs {
        run.manifest.inputs.insert(key, sha256_file(path)?);
    }

    // Preprocess.
    let train = read_parallel(train_src, train_tgt)?;
    let valid = read_parallel(valid_src, valid_tgt)?;
    let tests: Vec<Vec<SentencePair>> = d
        .test_src
        .iter()
        .zip(&d.test_tgt)
        .map(|(s, t)| read_parallel(s, t))
        .collect::<Result<_, _>>()?;
    let mono = match &d.mono {
        Some(m) => read_lines(m)?,
        None => Vec::new(),
    };
    if train.is_empty() || valid.is_empty() {
        return Err(CliError::Data("training and validation data must be non-empty".into()));
    }
    let prep = build_codecs(&train, cfg)?;
    let (src_codec, tgt_codec, merges) = (prep.src, prep.tgt, prep.merges);
    run.write("train.src.tok", &prep.src_tok)?;
    run.write("train.tgt.tok", &prep.tgt_tok)?;
    run.stage_done("preprocess");

    let mut codes = Vec::new();
    merges.write_to(&mut codes)?;
    fs::write(run.path("bpe.codes"), &codes).map_err(|e| CliError::io(&run.path("bpe.codes"), e))?;
    run.record("bpe.codes")?;
    run.write("train.src.bpe", &prep.src_bpe)?;
    run.write("train.tgt.bpe", &prep.tgt_bpe)?;
    run.write("vocab.src", &src_codec.vocab.symbols().to_vec())?;
    run.write("vocab.tgt", &tgt_codec.vocab.symbols().to_vec())?;
    run.say(format!(
        "[bpe] {} merges, vocabularies {} / {}",
        merges.len(),
        src_codec.vocab.len(),
        tgt_codec.vocab.len()
    ));
    run.stage_done("bpe");

    let parallel = encode_pairs(&train, &src_codec, &tgt_codec);
    let valid_ex = within(&encode_pairs(&valid, &src_codec, &tgt_codec), cfg.max_len);
    let test_ex: Vec<Vec<Example>> = tests.iter().map(|t| encode_pairs(t, &src_codec, &tgt_codec)).collect();
    let tc = cfg.train_config();
    let sc = cfg.schedule_config();
    let parallel_phase = Phase::Parallel {
        max_epochs: sc.max_parallel_epochs,
        decay_epochs: sc.parallel_decay_epochs,
    };

    // train(P)
    let params = ModelParams::init(&cfg.model_config(&src_codec.vocab, &tgt_codec.vocab), cfg.seed)?;
    let mut state = TrainState::new(params, &tc, cfg.seed);
    let mut data = ScheduleData {
        parallel: parallel.clone(),
        ..ScheduleData::default()
    };
    run.train("src-tgt", &mut state, parallel_phase.clone(), &data, &valid_ex, &tc)?;
    let bundle = |state: &TrainState| ModelBundle {
        state: state.clone(),
        src: src_codec.clone(),
        tgt: tgt_codec.clone(),
    };
    run.save("model.p.ckpt", &bundle(&state))?;
    run.stage_done("train-parallel");

    // Back-translation with a reverse model trained on the same pairs.
    let mut synthetic_pairs: Vec<Example> = Vec::new();
    if !mono.is_empty() {
        let rev_seed = cfg.seed.wrapping_add(1);
        let rev_params = ModelParams::init(&cfg.model_config(&tgt_codec.vocab, &src_codec.vocab), rev_seed)?;
        let mut rev = TrainState::new(rev_params, &tc, rev_seed);
        let rev_data = ScheduleData {
            parallel: swap(&parallel),
            ..ScheduleData::default()
        };
        run.train("tgt-src", &mut rev, parallel_phase.clone(), &rev_data, &swap(&valid_ex), &tc)?;
        let rev_bundle = ModelBundle {
            state: rev.clone(),
            src: tgt_codec.clone(),
            tgt: src_codec.clone(),
        };
        run.save("reverse.ckpt", &rev_bundle)?;
        let mono_seqs: Vec<Sequence> = mono.iter().map(|l| tgt_codec.encode(l)).collect();
        let beam = BeamConfig {
            beam_size: cfg.bt_beam,
            ..cfg.beam_config()
        };
        let synthetic = back_translate(&rev.params, &mono_seqs, cfg.shard_size, &beam)?;
        let mut offset = 0;
        for (i, shard) in synthetic.shards().iter().enumerate() {
            let src_lines: Vec<String> = shard
                .iter()
                .map(|e| src_codec.decode(&Sequence::new(e.source.clone(), e.source_case.clone())))
                .collect();
            run.write(&format!("synthetic.{}.src", i + 1), &src_lines)?;
            run.write(&format!("synthetic.{}.tgt", i + 1), &mono[offset..offset + shard.len()].to_vec())?;
            offset += shard.len();
        }
        data.synthetic = synthetic.shards().iter().map(|s| s.to_vec()).collect();
        synthetic_pairs = synthetic.pairs;
        run.stage_done("backtranslate");

        // train(P+Mᵢ)
        if sc.synthetic_rounds > 0 {
            let phase = Phase::Synthetic {
                shards: data.synthetic.len(),
                rounds: sc.synthetic_rounds,
            };
            run.train("src-tgt", &mut state, phase, &data, &valid_ex, &tc)?;
            run.save("model.pm.ckpt", &bundle(&state))?;
            run.stage_done("train-synthetic");
        }
    }

    // Moore-Lewis selection on segmented source text; in-domain text is the
    // source side of every test set.
    let symbols = |ids: &[usize]| ids.iter().map(|&i| src_codec.vocab.symbol(i)).collect::<Vec<_>>().join(" ");
    // Empty sentences have nothing to score.
    let nonempty = |ex: &[Example]| (0..ex.len()).filter(|&i| !ex[i].source.is_empty()).collect::<Vec<_>>();
    let scoreable_p = nonempty(&parallel);
    let scoreable_s = nonempty(&synthetic_pairs);
    let parallel_text: Vec<SentencePair> = scoreable_p
        .iter()
        .map(|&i| SentencePair::new(symbols(&parallel[i].source), train[i].target.clone()))
        .collect();
    let synthetic_text: Vec<SentencePair> = scoreable_s
        .iter()
        .map(|&i| SentencePair::new(symbols(&synthetic_pairs[i].source), mono[i].clone()))
        .collect();
    let in_domain: Vec<String> = test_ex.iter().flatten().map(|e| symbols(&e.source)).collect();
    let job = SelectionJob {
        parallel: parallel_text,
        synthetic: synthetic_text,
        in_domain,
        quota_parallel: cfg.quota_parallel,
        quota_synthetic: if synthetic_pairs.is_empty() { 0 } else { cfg.quota_synthetic },
        config: SelectionConfig {
            weights: cfg.lm_weights(),
            sample_size: (cfg.lm_sample > 0).then_some(cfg.lm_sample),
            seed: cfg.seed,
        },
    };
    let selection = select_top(&job)?;
    let mut selected = Vec::with_capacity(selection.indices.len());
    let (mut sel_src, mut sel_tgt) = (Vec::new(), Vec::new());
    for &(label, i) in &selection.indices {
        let (example, pair) = match label {
            Provenance::Synthetic => {
                let k = scoreable_s[i];
                let e = synthetic_pairs[k].clone();
                let src = src_codec.decode(&Sequence::new(e.source.clone(), e.source_case.clone()));
                (e, SentencePair::new(src, mono[k].clone()))
            }
            _ => {
                let k = scoreable_p[i];
                (parallel[k].clone(), train[k].clone())
            }
        };
        selected.push(example);
        sel_src.push(pair.source);
        sel_tgt.push(pair.target);
    }
    run.write("selected.src", &sel_src)?;
    run.write("selected.tgt", &sel_tgt)?;
    let scores = format_scores(&selection.scores);
    fs::write(run.path("selection.scores"), scores).map_err(|e| CliError::io(&run.path("selection.scores"), e))?;
    run.record("selection.scores")?;
    run.say(format!(
        "[select] {} parallel + {} synthetic pairs",
        selection.count(Provenance::Parallel),
        selection.count(Provenance::Synthetic)
    ));
    run.stage_done("select");

    // Decayed training on the selection.
    if !selected.is_empty() && sc.selected_epochs > 0 {
        data.selected = selected;
        let phase = Phase::Selected {
            epochs: sc.selected_epochs,
        };
        run.train("src-tgt", &mut state, phase, &data, &valid_ex, &tc)?;
    }
    run.save("model.final.ckpt", &bundle(&state))?;
    run.stage_done("train-selected");

    // Translate, hyper-specialise, translate again.
    let beam = cfg.beam_config();
    let refs: Vec<Vec<String>> = tests
        .iter()
        .map(|t| t.iter().map(|p| tokenize(&p.target).join(" ")).collect())
        .collect();
    let translate = |params: &ModelParams, k: usize| -> Result<Vec<String>, CliError> {
        let hyps = translate_all(params, &sources(&test_ex[k]), &beam)?;
        Ok(hyps.iter().map(|h| tgt_codec.decode(&h.to_sequence())).collect())
    };
    let hs_cfg = cfg.hyperspec_config();
    let adapt = |k: Option<usize>| -> Result<TrainState, CliError> {
        let pool: Vec<Example> = match k {
            Some(k) => leave_one_out(&test_ex, k),
            None => test_ex.concat(),
        };
        let src = sources(&pool);
        let tgt = targets(&pool);
        let targets = match cfg.hs_targets {
            HyperSpecTargets::Own => AdaptTargets::OwnHypotheses,
            HyperSpecTargets::References => AdaptTargets::References(&tgt),
        };
        Ok(hyper_specialize(&state, &src, targets, &hs_cfg)?)
    };
    let shared = if cfg.hs_leave_one_out { None } else { Some(adapt(None)?) };
    if let Some(adapted) = &shared {
        run.save("model.hyperspec.ckpt", &bundle(adapted))?;
    }
    let mut sets = Vec::new();
    for k in 0..tests.len() {
        let name = d.test_src[k]
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("test{k}"));
        let adapted = match &shared {
            Some(a) => a.clone(),
            None => {
                let a = adapt(Some(k))?;
                run.save(&format!("model.hyperspec.{}.ckpt", k + 1), &bundle(&a))?;
                a
            }
        };
        let before = translate(&state.params, k)?;
        let after = translate(&adapted.params, k)?;
        run.write(&format!("hyp.{}.final", k + 1), &before)?;
        run.write(&format!("hyp.{}.hyperspec", k + 1), &after)?;
        sets.push(SetReport {
            name,
            bleu_before: bleu(&before, &refs[k], cfg.lowercase_bleu)?,
            bleu_after: bleu(&after, &refs[k], cfg.lowercase_bleu)?,
            ppl_before: ppl(&state.params, &test_ex[k], cfg)?,
            ppl_after: ppl(&adapted.params, &test_ex[k], cfg)?,
        });
    }
    run.stage_done("hyperspec");

    let before: Vec<BleuReport> = sets.iter().map(|s| s.bleu_before).collect();
    let after: Vec<BleuReport> = sets.iter().map(|s| s.bleu_after).collect();
    let average_before = average_bleu(&before)?;
    let average_after = average_bleu(&after)?;
    let mut report = String::from("set\tbleu_final\tbleu_hyperspec\tppl_final\tppl_hyperspec\n");
    for s in &sets {
        let _ = writeln!(
            report,
            "{}\t{:.2}\t{:.2}\t{:.4}\t{:.4}",
            s.name, s.bleu_before.bleu, s.bleu_after.bleu, s.ppl_before, s.ppl_after
        );
    }
    let _ = writeln!(report, "average\t{average_before:.2}\t{average_after:.2}");
    for s in &sets {
        let _ = writeln!(report, "{} final: {}", s.name, s.bleu_before);
        let _ = writeln!(report, "{} hyperspec: {}", s.name, s.bleu_after);
    }
    fs::write(run.path("report.txt"), &report).map_err(|e| CliError::io(&run.path("report.txt"), e))?;
    run.record("report.txt")?;
    run.say(report.trim_end());
    run.stage_done("bleu");

    let train_log = std::mem::take(&mut run.train_log);
    write_lines(&run.path("train.log"), &train_log)?;
    let manifest = run.manifest.clone();
    let text = manifest.to_text();
    fs::write(run.path("manifest.txt"), text).map_err(|e| CliError::io(&run.path("manifest.txt"), e))?;
    Ok(PipelineReport {
        manifest,
        sets,
        average_before,
        average_after,
    })
}
