//! The pipeline commands. Every output file is written atomically.

use std::path::{Path, PathBuf};

use lipwave::checkpoint::Container;
use lipwave::generator::Generator;
use lipwave::grid::{
    make_speaker_dependent_split, make_speaker_independent_split, speaker_of_id, DatasetSplit, PreparedCorpus,
    SpeakerAssignment, SplitMode, VideoSample, WaveformClip,
};
use lipwave::io::{read_text, read_video, write_atomic, write_wav};
use lipwave::metrics::{evaluate_corpus, EvalItem, MetricReport};
use lipwave::speech_encoder::LogMelEncoder;
use lipwave::synthetic::{write_toy_corpus, ToyCorpusSpec};
use lipwave::trainer::{load_generator, validation_mcd, TrainHooks, TrainOutcome, Trainer};
use lipwave::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const PREPARED_INFO: &str = "prepared.json";
pub const TRAIN_CHECKPOINT: &str = "checkpoint.lwck";
pub const BEST_CHECKPOINT: &str = "best.lwck";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TIMING_LOG: &str = "timing.jsonl";
pub const CONFIG_ECHO: &str = "config.toml";

/// Properties of a prepared corpus that later commands must agree with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedInfo {
    pub sample_rate: u32,
    pub channels: usize,
    pub clips: usize,
}

fn check_prepared(config: &RunConfig, data: &Path) -> Result<()> {
    let text = read_text(&data.join(PREPARED_INFO))
        .map_err(|e| Error::Corpus(format!("{} is not a prepared corpus ({e})", data.display())))?;
    let info: PreparedInfo = serde_json::from_str(&text)?;
    if info.sample_rate != config.sample_rate || info.channels != config.data.preprocess.channels {
        return Err(Error::Config(format!(
            "corpus was prepared at {} Hz with {} channel(s); config asks for {} Hz with {}",
            info.sample_rate, info.channels, config.sample_rate, config.data.preprocess.channels
        )));
    }
    Ok(())
}

/// Preprocesses `raw` into `data` and writes the split lists. Idempotent for a fixed config.
pub fn prepare(config: &RunConfig, raw: &Path, data: &Path) -> Result<DatasetSplit> {
    let corpus = PreparedCorpus::new(data);
    let refs = corpus.build(raw, config.sample_rate, &config.data.preprocess)?;
    let split = match &config.data.assignment {
        Some(path) if config.data.split_mode == SplitMode::SpeakerIndependent => {
            make_speaker_independent_split(&refs, &SpeakerAssignment::parse(&read_text(Path::new(path))?)?)?
        }
        _ => make_speaker_dependent_split(&refs, config.data.split_seed)?,
    };
    split.validate(speaker_of_id)?;
    split.write(data)?;
    let info = PreparedInfo { sample_rate: config.sample_rate, channels: config.data.preprocess.channels, clips: refs.len() };
    write_atomic(&data.join(PREPARED_INFO), serde_json::to_string_pretty(&info)?.as_bytes())?;
    Ok(split)
}

fn load_split(config: &RunConfig, data: &Path) -> Result<(PreparedCorpus, DatasetSplit)> {
    check_prepared(config, data)?;
    let split = DatasetSplit::read(data, config.data.split_mode)?;
    split.validate(speaker_of_id)?;
    Ok((PreparedCorpus::new(data), split))
}

fn lines_bytes(lines: &[String]) -> Vec<u8> {
    let mut s = lines.join("\n");
    if !s.is_empty() {
        s.push('\n');
    }
    s.into_bytes()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read_text(path)?.lines().map(String::from).collect())
}

struct CliHooks<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    earlier_timing: Vec<String>,
}

impl TrainHooks for CliHooks<'_> {
    fn validate(&mut self, generator: &Generator, validation: &[VideoSample]) -> Result<f64> {
        validation_mcd(generator, validation, &self.config.eval.cepstrum)
    }

    fn epoch_end(&mut self, trainer: &Trainer) -> Result<()> {
        let echo = self.config.echo();
        trainer.best_checkpoint(&echo).save(&self.out.join(BEST_CHECKPOINT))?;
        write_atomic(&self.out.join(TRAIN_LOG), &lines_bytes(&trainer.log))?;
        let mut timing = self.earlier_timing.clone();
        timing.extend(trainer.timing.iter().cloned());
        write_atomic(&self.out.join(TIMING_LOG), &lines_bytes(&timing))?;
        // Written last: a resumable checkpoint never points past the log.
        trainer.checkpoint(&echo)?.save(&self.out.join(TRAIN_CHECKPOINT))
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub best_checkpoint: PathBuf,
    pub outcome: TrainOutcome,
}

/// Trains on the prepared corpus in `data`, writing checkpoints and logs into `out`.
pub fn train(config: &RunConfig, data: &Path, out: &Path, resume: bool) -> Result<TrainSummary> {
    let (corpus, split) = load_split(config, data)?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::Split("training needs non-empty train and validation lists".into()));
    }
    let train = corpus.load_all(&split.train)?;
    let validation = corpus.load_all(&split.validation)?;
    let encoder = Box::new(LogMelEncoder::new(&config.speech_encoder, config.sample_rate)?);
    let mut trainer = Trainer::build(&config.generator, &config.critic, encoder, config.trainer.clone(), config.sample_rate)?;
    let mut earlier_timing = Vec::new();
    if resume {
        let checkpoint = Container::load(&out.join(TRAIN_CHECKPOINT))?;
        trainer.restore(&checkpoint)?;
        let mut log = read_lines(&out.join(TRAIN_LOG))?;
        let keep = trainer.state().log_lines;
        if log.len() < keep {
            return Err(Error::Checkpoint(format!("{TRAIN_LOG} has {} records, checkpoint expects {keep}", log.len())));
        }
        log.truncate(keep);
        trainer.log = log;
        earlier_timing = read_lines(&out.join(TIMING_LOG))?;
    }
    write_atomic(&out.join(CONFIG_ECHO), config.to_toml()?.as_bytes())?;
    let mut hooks = CliHooks { config, out, earlier_timing };
    let outcome = trainer.train(&train, &validation, &mut hooks)?;
    Ok(TrainSummary { best_checkpoint: out.join(BEST_CHECKPOINT), outcome })
}

fn generator_for(config: &RunConfig, checkpoint: &Path) -> Result<Generator> {
    let generator = load_generator(&Container::load(checkpoint)?)?;
    if generator.sample_rate() != config.sample_rate {
        return Err(Error::Config(format!(
            "checkpoint generates {} Hz audio, config asks for {} Hz",
            generator.sample_rate(),
            config.sample_rate
        )));
    }
    Ok(generator)
}

/// Writes the waveform for a preprocessed video file (`.vt`) to `out_wav`.
pub fn synthesize(config: &RunConfig, checkpoint: &Path, video: &Path, out_wav: &Path) -> Result<WaveformClip> {
    let generator = generator_for(config, checkpoint)?;
    let clip = generator.generate(&read_video(video)?)?;
    write_wav(out_wav, &clip)?;
    Ok(clip)
}

/// What the generated side of an evaluation comes from.
#[derive(Clone, Debug)]
pub enum EvalSource {
    Checkpoint(PathBuf),
    /// Scores the reference audio against itself.
    GroundTruth,
}

/// Scores one split list (`train`, `validation` or `test`) and writes `<report>.csv` and `<report>.json`.
pub fn evaluate(config: &RunConfig, data: &Path, split_name: &str, source: &EvalSource, report: &Path) -> Result<MetricReport> {
    let (corpus, split) = load_split(config, data)?;
    let ids = match split_name {
        "train" => &split.train,
        "validation" => &split.validation,
        "test" => &split.test,
        other => return Err(Error::Config(format!("unknown split {other:?}"))),
    };
    if ids.is_empty() {
        return Err(Error::Split(format!("the {split_name} list is empty")));
    }
    let samples = corpus.load_all(ids)?;
    let generator = match source {
        EvalSource::Checkpoint(path) => Some(generator_for(config, path)?),
        EvalSource::GroundTruth => None,
    };
    let generated = samples
        .iter()
        .map(|s| match &generator {
            Some(g) => g.generate(&s.video),
            None => Ok(s.audio.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<EvalItem<'_>> = samples
        .iter()
        .zip(&generated)
        .map(|(s, g)| EvalItem { id: &s.id, video: &s.video, sentence: &s.sentence, reference: &s.audio, generated: g })
        .collect();
    let scratch = std::env::temp_dir().join(format!("lipwave-eval-{}", std::process::id()));
    std::fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    let result = evaluate_corpus(&items, &config.eval, &scratch);
    let _ = std::fs::remove_dir_all(&scratch);
    let metrics = result?;
    metrics.write(report)?;
    Ok(metrics)
}

/// Writes a synthetic raw corpus in the layout `prepare` reads.
pub fn toy_corpus(out: &Path, spec: &ToyCorpusSpec) -> Result<()> {
    write_toy_corpus(out, spec)
}
