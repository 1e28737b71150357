//! The file-backed workflow: data generation, unit extraction, training,
//! decoding, synthesis, evaluation and benchmarking inside one work
//! directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use s2ut_core::bench::{count_flops, duration_flops, select_subsets, synthesis_flops, BenchReport, StageReport};
use s2ut_core::corpus::{gen_corpus, filter_corpus, Corpus, Language, Split, Vocabulary};
use s2ut_core::decode::{joint_decode, DecodeRecord};
use s2ut_core::eval::{bleu, paired_bootstrap, transcribe_all, wer, BleuConfig, Lexicon, RuleRecognizer};
use s2ut_core::model::{train, Example, LossBreakdown, Mode, S2UTModel, StepRecord, TrainState};
use s2ut_core::units::{cmvn, kmeans_fit, quantize, reduce, Codebook, ReducedUnits, UnitSequence};
use s2ut_core::vocoder::{synthesize, train_duration_model, DurationModel, SynthesisInput, UnitAudioSpec};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{io_err, Error, Result};
use crate::formats::{self, load_codebook, load_decode, load_manifest, load_reduced, load_units, save_codebook, save_decode, save_manifest, save_reduced, save_units};
use crate::measure;
use crate::report;

/// Layout of a work directory.
#[derive(Clone, Debug)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }

    pub fn run_config(&self) -> PathBuf {
        self.root.join("run.conf")
    }
    pub fn manifest(&self, split: Split) -> PathBuf {
        self.root.join("data").join(format!("{}.tsv", split.name()))
    }
    pub fn codebook(&self) -> PathBuf {
        self.root.join("units").join("codebook.txt")
    }
    pub fn target_manifest(&self, split: Split) -> PathBuf {
        self.root.join("targets").join(format!("{}.tsv", split.name()))
    }
    pub fn target_units(&self, split: Split) -> PathBuf {
        self.root.join("targets").join(format!("{}.units", split.name()))
    }
    pub fn target_reduced(&self, split: Split) -> PathBuf {
        self.root.join("targets").join(format!("{}.reduced", split.name()))
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model").join("s2ut.ckpt")
    }
    pub fn duration_model(&self) -> PathBuf {
        self.root.join("model").join("duration.ckpt")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("model").join("train_log.tsv")
    }
    pub fn decode(&self, split: Split, beam: usize) -> PathBuf {
        self.root.join("decode").join(format!("{}.beam{beam}.jsonl", split.name()))
    }
    pub fn audio_dir(&self, split: Split, beam: usize) -> PathBuf {
        self.root.join("audio").join(format!("{}.beam{beam}", split.name()))
    }
    pub fn eval_report(&self, split: Split) -> PathBuf {
        self.root.join("eval").join(format!("{}.txt", split.name()))
    }
    pub fn bench_dir(&self) -> PathBuf {
        self.root.join("bench")
    }

    /// Contents of `run.conf`, if present.
    pub fn saved_config(&self) -> Result<Option<String>> {
        let p = self.run_config();
        if p.exists() {
            Ok(Some(fs::read_to_string(&p).map_err(io_err(&p))?))
        } else {
            Ok(None)
        }
    }
}

fn split_of(cfg: &RunConfig) -> Result<Split> {
    Split::parse(&cfg.decode.split).ok_or_else(|| Error::Usage(format!("unknown split {:?}", cfg.decode.split)))
}

fn missing(path: &Path, hint: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Data(format!("{} not found; run `{hint}` first", path.display())));
    }
    Ok(())
}

/// Writes all four splits and the resolved run configuration.
pub fn gen_data(cfg: &RunConfig, wd: &Workdir) -> Result<Vec<Corpus>> {
    let corpora = gen_corpus(&cfg.corpus_config())?;
    for c in &corpora {
        save_manifest(c, &wd.manifest(c.split))?;
        log::info!("{}: {} utterances", c.split.name(), c.len());
    }
    formats::write(&wd.run_config(), &cfg.to_text())?;
    Ok(corpora)
}

/// Fits the k-means codebook on training target frames.
pub fn fit_units(cfg: &RunConfig, wd: &Workdir) -> Result<Codebook> {
    missing(&wd.manifest(Split::Train), "gen-data")?;
    let train = load_manifest(&wd.manifest(Split::Train))?;
    let n = match cfg.units.kmeans_utterances {
        0 => train.len(),
        n => n.min(train.len()),
    };
    let rows = train.utterances[..n].iter().flat_map(|u| u.target_frames.frames.rows_iter());
    let codebook = kmeans_fit(rows, cfg.model.units, cfg.units.kmeans_iters, cfg.seed)?;
    log::info!("k-means: K={} inertia {:.6} after {} iterations", codebook.k(), codebook.inertia(), codebook.iterations);
    save_codebook(&codebook, &wd.codebook())?;
    Ok(codebook)
}

/// Audio spec, rule recognizer and target vocabulary for a codebook.
pub fn recognizer(cfg: &RunConfig, codebook: &Codebook) -> Result<(UnitAudioSpec, RuleRecognizer)> {
    let corpus = cfg.corpus_config();
    let spec = UnitAudioSpec::new(codebook.k())?;
    let vocab = Vocabulary::new(Language::Target, corpus.tgt_vocab);
    let templates = corpus.render_spec(Language::Target).templates;
    let lexicon = Lexicon::from_codebook(codebook, &templates, &vocab, corpus.tgt_frames_per_token)?;
    Ok((spec, RuleRecognizer::new(spec, lexicon)?))
}

pub struct Targets {
    pub corpus: Corpus,
    pub units: Vec<UnitSequence>,
    pub reduced: Vec<ReducedUnits>,
}

/// Quantizes every split, drops utterances whose resynthesized target
/// exceeds the WER threshold and writes the unit files.
pub fn prep_targets(cfg: &RunConfig, wd: &Workdir) -> Result<Vec<Targets>> {
    missing(&wd.codebook(), "fit-units")?;
    let codebook = load_codebook(&wd.codebook())?;
    let (spec, rec) = recognizer(cfg, &codebook)?;
    let mut out = Vec::new();
    for split in Split::ALL {
        let corpus = load_manifest(&wd.manifest(split))?;
        let kept = filter_corpus(
            &corpus,
            |u| -> Result<String> {
                let units = quantize(&u.target_frames, &codebook)?;
                Ok(s2ut_core::eval::rule_recognizer(&s2ut_core::vocoder::synthesize_units(&units.0, &spec)?, &rec)?)
            },
            cfg.units.wer_threshold,
        )?;
        if kept.len() < corpus.len() {
            log::warn!("{}: filtered {} of {} utterances", split.name(), corpus.len() - kept.len(), corpus.len());
        }
        let units = kept.utterances.iter().map(|u| quantize(&u.target_frames, &codebook)).collect::<s2ut_core::Result<Vec<_>>>()?;
        let reduced = units.iter().map(reduce).collect::<s2ut_core::Result<Vec<_>>>()?;
        save_manifest(&kept, &wd.target_manifest(split))?;
        save_units(&units, &wd.target_units(split))?;
        save_reduced(&reduced, &wd.target_reduced(split))?;
        out.push(Targets { corpus: kept, units, reduced });
    }
    Ok(out)
}

pub fn load_targets(wd: &Workdir, split: Split) -> Result<Targets> {
    missing(&wd.target_manifest(split), "prep-targets")?;
    let corpus = load_manifest(&wd.target_manifest(split))?;
    let units = load_units(&wd.target_units(split))?;
    let reduced = load_reduced(&wd.target_reduced(split))?;
    if units.len() != corpus.len() || reduced.len() != corpus.len() {
        return Err(Error::Data(format!("{} unit files do not match the manifest", split.name())));
    }
    Ok(Targets { corpus, units, reduced })
}

/// Model inputs: per-utterance normalized source frames plus targets.
pub fn examples(t: &Targets) -> Vec<Example> {
    t.corpus
        .utterances
        .iter()
        .zip(&t.units)
        .map(|(u, units)| Example {
            id: u.id.clone(),
            source: cmvn(&u.source_frames).frames,
            units: units.clone(),
            src_text: u.source_text.tokens.clone(),
            tgt_text: u.target_text.tokens.clone(),
            src_units: None,
        })
        .collect()
}

fn check_model_against_data(cfg: &RunConfig, codebook: &Codebook) -> Result<()> {
    let (m, c) = (&cfg.model, &cfg.corpus);
    let mismatch = [
        ("model.units", m.units, codebook.k()),
        ("model.input_dim", m.input_dim, c.feature_dim),
        ("model.src_vocab", m.src_vocab, c.src_vocab),
        ("model.tgt_vocab", m.tgt_vocab, c.tgt_vocab),
    ]
    .into_iter()
    .find(|(_, a, b)| a != b);
    if let Some((k, a, b)) = mismatch {
        return Err(Error::Usage(format!("{k} = {a} does not match the data ({b})")));
    }
    Ok(())
}

pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub duration_accuracy: f64,
    pub duration_mse: f64,
}

/// Trains (or resumes) the S2UT model, then the duration model.
pub fn train_all(cfg: &RunConfig, wd: &Workdir, s2ut: bool, duration: bool) -> Result<TrainSummary> {
    let codebook = load_codebook(&wd.codebook())?;
    check_model_against_data(cfg, &codebook)?;
    let train_t = load_targets(wd, Split::Train)?;
    let mut records = Vec::new();
    if s2ut {
        records = train_s2ut(cfg, wd, &examples(&train_t))?;
    }
    let (mut acc, mut mse) = (f64::NAN, f64::NAN);
    if duration {
        let dev = load_targets(wd, Split::Dev)?;
        let (model, rep) = train_duration_model(cfg.duration_config(), &train_t.reduced, &dev.reduced, &cfg.duration_train_config())?;
        Checkpoint::from_duration(&model)?.save(&wd.duration_model())?;
        log::info!("duration model: held-out exact {:.4} mse {:.6}", rep.heldout_accuracy, rep.heldout_mse);
        (acc, mse) = (rep.heldout_accuracy, rep.heldout_mse);
        formats::write(
            &wd.root.join("model").join("duration_report.txt"),
            &format!("heldout_exact = {acc:?}\nheldout_mse = {mse:?}\nfinal_train_loss = {:?}\n", rep.losses.last().copied().unwrap_or(f64::NAN)),
        )?;
    }
    Ok(TrainSummary { records, duration_accuracy: acc, duration_mse: mse })
}

fn train_s2ut(cfg: &RunConfig, wd: &Workdir, data: &[Example]) -> Result<Vec<StepRecord>> {
    let model_cfg = cfg.model_config();
    let mut state = if wd.model().exists() {
        let state = Checkpoint::load(&wd.model())?.into_train_state(cfg.train.adam)?;
        if state.model.config != model_cfg {
            return Err(Error::Usage(format!("{} was trained with a different model config; remove it to retrain", wd.model().display())));
        }
        log::info!("resuming from step {}", state.step);
        state
    } else {
        TrainState::new(S2UTModel::new(model_cfg.clone())?, cfg.train.adam)
    };
    let log_path = wd.train_log();
    fs::create_dir_all(log_path.parent().expect("model dir")).map_err(io_err(&log_path))?;
    let fresh = state.step == 0;
    let file = fs::OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(&log_path).map_err(io_err(&log_path))?;
    let mut log_file = BufWriter::new(file);
    if fresh {
        let zero = LossBreakdown { unit_loss: 0.0, aux_losses: vec![0.0; model_cfg.aux.len()], ctc_loss: 0.0, total: 0.0, ctc_skipped: 0 };
        let names: Vec<String> = zero.components(&model_cfg).into_iter().map(|(n, _)| n).collect();
        formats::append_line(&mut log_file, &log_path, &format!("step\tlr\ttotal\t{}\tgrad_norm", names.join("\t")))?;
    }
    let train_cfg = cfg.train_config();
    let save_every = cfg.train.save_every;
    let ckpt_path = wd.model();
    let started = std::time::Instant::now();
    let records = train(&mut state, data, &train_cfg, |rec, st| {
        let comps: Vec<String> = rec.loss.components(&st.model.config).into_iter().map(|(_, v)| format!("{v:.6}")).collect();
        let line = format!("{}\t{:.6e}\t{:.6}\t{}\t{:.4}", rec.step, rec.lr, rec.loss.total, comps.join("\t"), rec.grad_norm);
        formats::append_line(&mut log_file, &log_path, &line).map_err(|e| s2ut_core::Error::Domain(e.to_string()))?;
        if rec.step % 50 == 0 {
            log::info!("step {} loss {:.4} ({:.1}s)", rec.step, rec.loss.total, started.elapsed().as_secs_f64());
        }
        if (save_every > 0 && rec.step % save_every == 0) || rec.step == train_cfg.max_steps {
            log_file.flush().map_err(|e| s2ut_core::Error::Domain(e.to_string()))?;
            Checkpoint::from_train_state(st).save(&ckpt_path).map_err(|e| s2ut_core::Error::Domain(e.to_string()))?;
        }
        Ok(())
    })?;
    log_file.flush().map_err(io_err(&log_path))?;
    if records.is_empty() {
        log::info!("model already trained for {} steps", state.step);
    }
    Ok(records)
}

pub fn load_model(wd: &Workdir) -> Result<S2UTModel> {
    missing(&wd.model(), "train")?;
    Checkpoint::load(&wd.model())?.into_model()
}

pub fn load_duration(wd: &Workdir) -> Result<DurationModel> {
    missing(&wd.duration_model(), "train")?;
    Checkpoint::load(&wd.duration_model())?.into_duration()
}

/// Joint unit and CTC-text decoding of one utterance.
pub fn decode_one(model: &S2UTModel, id: &str, source: &s2ut_core::tensor::Mat, cfg: &RunConfig, vocab: &Vocabulary) -> Result<DecodeRecord> {
    let search = cfg.search_config();
    let out = joint_decode(model, source, &search)?;
    Ok(DecodeRecord {
        id: id.to_string(),
        units: out.units,
        text: vocab.decode(&out.text),
        score: out.hypothesis.score,
        steps: out.hypothesis.steps(),
        beam: search.beam,
        truncated: out.truncated,
    })
}

pub fn decode(cfg: &RunConfig, wd: &Workdir) -> Result<Vec<DecodeRecord>> {
    let split = split_of(cfg)?;
    let model = load_model(wd)?;
    let t = load_targets(wd, split)?;
    let vocab = Vocabulary::new(Language::Target, model.config.tgt_vocab);
    let mut records = Vec::with_capacity(t.corpus.len());
    for (i, e) in examples(&t).iter().enumerate() {
        records.push(decode_one(&model, &e.id, &e.source, cfg, &vocab)?);
        if (i + 1) % 50 == 0 {
            log::info!("decoded {}/{}", i + 1, t.corpus.len());
        }
    }
    let truncated = records.iter().filter(|r| r.truncated).count();
    if truncated > 0 {
        log::warn!("{truncated} hypotheses hit decode.max_len");
    }
    save_decode(&records, &wd.decode(split, cfg.decode.beam))?;
    Ok(records)
}

/// Waveform of decoded units; reduced-mode output goes through the duration
/// model.
pub fn waveform(mode: Mode, units: &[usize], spec: &UnitAudioSpec, durations: Option<&DurationModel>) -> Result<Vec<f64>> {
    if units.is_empty() {
        return Ok(Vec::new());
    }
    Ok(match mode {
        Mode::Reduced => synthesize(SynthesisInput::Predict(units), spec, durations)?,
        Mode::Stacked | Mode::R1 => synthesize(SynthesisInput::Full(&UnitSequence(units.to_vec())), spec, None)?,
    })
}

fn waveforms(cfg: &RunConfig, wd: &Workdir, records: &[DecodeRecord], mode: Mode) -> Result<(Vec<Vec<f64>>, UnitAudioSpec)> {
    let spec = UnitAudioSpec::new(cfg.model.units)?;
    let dur = if mode == Mode::Reduced { Some(load_duration(wd)?) } else { None };
    let w = records.iter().map(|r| waveform(mode, &r.units, &spec, dur.as_ref())).collect::<Result<Vec<_>>>()?;
    Ok((w, spec))
}

/// Writes one WAV per decoded utterance.
pub fn synthesize_split(cfg: &RunConfig, wd: &Workdir) -> Result<usize> {
    let split = split_of(cfg)?;
    let path = wd.decode(split, cfg.decode.beam);
    missing(&path, "decode")?;
    let records = load_decode(&path)?;
    let mode = load_model(wd)?.config.mode;
    let (wavs, spec) = waveforms(cfg, wd, &records, mode)?;
    let dir = wd.audio_dir(split, cfg.decode.beam);
    for (r, w) in records.iter().zip(&wavs) {
        formats::write_wav(w, spec.sample_rate, &dir.join(format!("{}.wav", r.id)))?;
    }
    Ok(records.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemEval {
    pub name: String,
    pub asr_bleu: f64,
    pub ctc_bleu: f64,
    /// Fraction of utterances whose CTC text equals the recognized speech.
    pub agreement: f64,
    /// Per-utterance WER of recognized speech, percent.
    pub wers: Vec<f64>,
    pub transcripts: Vec<String>,
    pub truncated: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub split: String,
    pub systems: Vec<SystemEval>,
    /// `(a, b, p)` for every pair of systems, on ASR transcripts.
    pub significance: Vec<(String, String, f64)>,
}

impl EvalSummary {
    pub fn system(&self, name: &str) -> Option<&SystemEval> {
        self.systems.iter().find(|s| s.name == name)
    }
}

/// Scores every decode file of the configured split.
pub fn evaluate(cfg: &RunConfig, wd: &Workdir) -> Result<EvalSummary> {
    let split = split_of(cfg)?;
    let t = load_targets(wd, split)?;
    let codebook = load_codebook(&wd.codebook())?;
    let (_, rec) = recognizer(cfg, &codebook)?;
    let mode = load_model(wd)?.config.mode;
    let vocab = Vocabulary::new(Language::Target, cfg.corpus.tgt_vocab);
    let refs: Vec<Vec<String>> = t.corpus.utterances.iter().map(|u| vec![vocab.decode(&u.target_text.tokens)]).collect();
    let bleu_cfg = BleuConfig::default();
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    let dir = wd.root.join("decode");
    let prefix = format!("{}.beam", split.name());
    for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
        let name = entry.map_err(io_err(&dir))?.file_name().to_string_lossy().into_owned();
        if let Some(b) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".jsonl")).and_then(|b| b.parse().ok()) {
            files.push((b, dir.join(name)));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no decode output for split {}; run `decode` first", split.name())));
    }
    let mut systems = Vec::new();
    for (beam, path) in &files {
        let records = load_decode(path)?;
        if records.len() != refs.len() || records.iter().zip(&t.corpus.utterances).any(|(r, u)| r.id != u.id) {
            return Err(Error::Data(format!("{} does not match the {} targets", path.display(), split.name())));
        }
        let (wavs, _) = waveforms(cfg, wd, &records, mode)?;
        let transcripts = transcribe_all(&wavs, &rec);
        let ctc: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
        let agreement = ctc.iter().zip(&transcripts).filter(|(a, b)| a == b).count() as f64 / ctc.len() as f64;
        let wers = transcripts.iter().zip(&refs).map(|(h, r)| Ok(100.0 * wer(h, &r[0])?)).collect::<s2ut_core::Result<Vec<_>>>()?;
        systems.push(SystemEval {
            name: format!("beam{beam}"),
            asr_bleu: bleu(&transcripts, &refs, &bleu_cfg)?,
            ctc_bleu: bleu(&ctc, &refs, &bleu_cfg)?,
            agreement,
            wers,
            transcripts,
            truncated: records.iter().filter(|r| r.truncated).count(),
        });
    }
    let mut significance = Vec::new();
    for i in 0..systems.len() {
        for j in i + 1..systems.len() {
            let p = paired_bootstrap(&systems[i].transcripts, &systems[j].transcripts, &refs, cfg.eval.bootstrap_resamples, cfg.seed, &bleu_cfg)?;
            significance.push((systems[i].name.clone(), systems[j].name.clone(), p));
        }
    }
    let summary = EvalSummary { split: split.name().to_string(), systems, significance };
    formats::write(&wd.eval_report(split), &report::eval_text(&summary))?;
    Ok(summary)
}

/// System label of a model in benchmark reports.
pub fn system_name(model: &S2UTModel) -> String {
    match model.config.mode {
        Mode::Stacked => format!("stacked_r{}", model.config.r),
        m => m.name().to_string(),
    }
}

/// Per-utterance decoder step counts of the measured subset.
pub struct BenchRun {
    pub report: BenchReport,
    pub steps: Vec<usize>,
}

/// Times decode, duration prediction and synthesis over a subset.
pub fn bench(cfg: &RunConfig, wd: &Workdir) -> Result<BenchRun> {
    let split = split_of(cfg)?;
    let model = load_model(wd)?;
    let dur = if model.config.mode == Mode::Reduced { Some(load_duration(wd)?) } else { None };
    let t = load_targets(wd, split)?;
    let data = examples(&t);
    let lengths: Vec<usize> = data.iter().map(|e| e.source.rows).collect();
    let subsets = select_subsets(&lengths, cfg.bench.n, cfg.seed)?;
    let idx = match cfg.bench.subset.as_str() {
        "random" => subsets.random,
        "shortest" => subsets.shortest,
        "longest" => subsets.longest,
        s => return Err(Error::Usage(format!("unknown subset {s:?}"))),
    };
    let run = measure_pipeline(cfg, &model, dur.as_ref(), &data, &idx)?;
    let dir = wd.bench_dir();
    let stem = format!("{}.{}", run.report.system, run.report.subset);
    formats::write(&dir.join(format!("{stem}.txt")), &run.report.to_text())?;
    let json = serde_json::to_string_pretty(&run.report).map_err(|e| Error::Data(e.to_string()))?;
    formats::write(&dir.join(format!("{stem}.json")), &json)?;
    report::plot_bench_dir(&dir)?;
    Ok(run)
}

/// Runs the pipeline on `idx` after `cfg.bench.warmup` untimed utterances.
pub fn measure_pipeline(cfg: &RunConfig, model: &S2UTModel, dur: Option<&DurationModel>, data: &[Example], idx: &[usize]) -> Result<BenchRun> {
    let spec = UnitAudioSpec::new(model.config.units)?;
    let vocab = Vocabulary::new(Language::Target, model.config.tgt_vocab);
    for &i in idx.iter().cycle().take(cfg.bench.warmup.min(idx.len().max(1))) {
        let r = decode_one(model, &data[i].id, &data[i].source, cfg, &vocab)?;
        waveform(model.config.mode, &r.units, &spec, dur)?;
    }
    let names = ["decode", "duration", "synthesize"];
    let mut stages: Vec<StageReport> =
        names.iter().map(|n| StageReport { name: n.to_string(), seconds: 0.0, flops: 0, peak_bytes: 0, failures: 0 }).collect();
    let mut steps = Vec::with_capacity(idx.len());
    let beam = cfg.decode.beam as u64;
    for &i in idx {
        let e = &data[i];
        let (rec, secs, peak) = measure::probe(|| decode_one(model, &e.id, &e.source, cfg, &vocab));
        let rec = match rec {
            Ok(r) => r,
            Err(err) => {
                log::warn!("decode of {} failed: {err}", e.id);
                stages[0].failures += 1;
                steps.push(0);
                continue;
            }
        };
        let f = count_flops(&model.config, e.source.rows, rec.steps);
        stages[0].seconds += secs;
        stages[0].flops += f.subsampler + f.encoder + beam * (f.decoder + f.ctc);
        stages[0].peak_bytes = stages[0].peak_bytes.max(peak);
        steps.push(rec.steps);
        let (full, secs, peak) = measure::probe(|| -> Result<UnitSequence> {
            if rec.units.is_empty() {
                return Ok(UnitSequence(Vec::new()));
            }
            Ok(match (model.config.mode, dur) {
                (Mode::Reduced, Some(d)) => {
                    let durations = d.predict(&rec.units)?;
                    s2ut_core::units::expand(&ReducedUnits { units: rec.units.clone(), durations })?
                }
                (Mode::Reduced, None) => return Err(Error::Data("reduced mode needs a duration model".into())),
                _ => UnitSequence(rec.units.clone()),
            })
        });
        let full = match full {
            Ok(f) => f,
            Err(err) => {
                log::warn!("duration prediction for {} failed: {err}", e.id);
                stages[1].failures += 1;
                continue;
            }
        };
        stages[1].seconds += secs;
        if let (Mode::Reduced, Some(d)) = (model.config.mode, dur) {
            stages[1].flops += duration_flops(&d.config, rec.units.len());
        }
        stages[1].peak_bytes = stages[1].peak_bytes.max(peak);
        let (wav, secs, peak) = measure::probe(|| s2ut_core::vocoder::synthesize_units(&full.0, &spec));
        match wav {
            Ok(w) => {
                stages[2].seconds += secs;
                stages[2].flops += synthesis_flops(w.len());
                stages[2].peak_bytes = stages[2].peak_bytes.max(peak);
            }
            Err(err) => {
                log::warn!("synthesis of {} failed: {err}", e.id);
                stages[2].failures += 1;
            }
        }
    }
    let report = BenchReport::new(&system_name(model), &cfg.bench.subset, idx.len(), cfg.bench.warmup, measure::memory_method(), stages)?;
    Ok(BenchRun { report, steps })
}
