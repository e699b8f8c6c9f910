//! Objective evaluation: MCD, STOI, WER, audio-visual offset, and per-corpus reports.

pub mod cepstrum;
pub mod plugins;
pub mod stoi;
pub mod sync;
pub mod wer;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cepstrum::{mcd, mcd_from_cepstra, mel_cepstrum, CepstrumConfig};
pub use plugins::ExternalTool;
pub use stoi::stoi;
pub use sync::{av_offset, AvSync};
pub use wer::{edit_distance, wer, words};

use crate::error::{Error, Result};
use crate::grid::sentence::GridSentence;
use crate::grid::video::{VideoTensor, WaveformClip};
use crate::io::{write_atomic, write_wav};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cepstrum: CepstrumConfig,
    pub av_search_range: usize,
    pub recognizer: Option<ExternalTool>,
    pub pesq: Option<ExternalTool>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { cepstrum: CepstrumConfig::default(), av_search_range: 5, recognizer: None, pesq: None }
    }
}

/// One clip to score: reference and generated audio of the same video.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub video: &'a VideoTensor,
    pub sentence: &'a GridSentence,
    pub reference: &'a WaveformClip,
    pub generated: &'a WaveformClip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub id: String,
    pub mcd_db: f64,
    /// Absent when the clip is too short after silence removal.
    pub stoi: Option<f64>,
    pub wer: Option<f64>,
    pub pesq: Option<f64>,
    pub av_offset_frames: Option<i32>,
    pub av_confidence: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub clips: usize,
    pub mcd_db: Option<f64>,
    pub stoi: Option<f64>,
    pub wer: Option<f64>,
    pub pesq: Option<f64>,
    pub av_offset_frames: Option<f64>,
    pub av_confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    pub means: MetricMeans,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

impl MetricReport {
    pub fn from_clips(clips: Vec<ClipMetrics>) -> Self {
        let means = MetricMeans {
            clips: clips.len(),
            mcd_db: mean_of(clips.iter().map(|c| Some(c.mcd_db))),
            stoi: mean_of(clips.iter().map(|c| c.stoi)),
            wer: mean_of(clips.iter().map(|c| c.wer)),
            pesq: mean_of(clips.iter().map(|c| c.pesq)),
            av_offset_frames: mean_of(clips.iter().map(|c| c.av_offset_frames.map(f64::from))),
            av_confidence: mean_of(clips.iter().map(|c| c.av_confidence)),
        };
        Self { clips, means }
    }

    /// One row per clip; absent values are written as `NA`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        fn cell<T: ToString>(v: Option<T>) -> String {
            v.map_or_else(|| "NA".to_string(), |x| x.to_string())
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "mcd_db", "stoi", "wer", "pesq", "av_offset_frames", "av_confidence"])?;
        for c in &self.clips {
            w.write_record([
                c.id.clone(),
                c.mcd_db.to_string(),
                cell(c.stoi),
                cell(c.wer),
                cell(c.pesq),
                cell(c.av_offset_frames),
                cell(c.av_confidence),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Metric(format!("csv buffer: {e}")))
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.means)? + "\n")
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_atomic(&stem.with_extension("csv"), &self.to_csv()?)?;
        write_atomic(&stem.with_extension("json"), self.summary_json()?.as_bytes())
    }
}

/// Scores one clip. Plugins receive WAV files written under `scratch`.
pub fn evaluate_clip(item: &EvalItem<'_>, config: &EvalConfig, scratch: &Path) -> Result<ClipMetrics> {
    let (r, g) = (item.reference, item.generated);
    if r.sample_rate != g.sample_rate {
        return Err(Error::Metric(format!("clip {}: sample rates {} and {} differ", item.id, r.sample_rate, g.sample_rate)));
    }
    let in_clip = |e: Error| Error::Metric(format!("clip {}: {e}", item.id));
    let len = r.len().min(g.len());
    let (rs, gs) = (&r.samples[..len], &g.samples[..len]);
    let mcd_db = mcd(rs, gs, r.sample_rate, &config.cepstrum).map_err(in_clip)?;
    let stoi = match stoi(rs, gs, r.sample_rate) {
        Ok(v) => Some(v),
        Err(Error::Metric(_)) => None,
        Err(e) => return Err(e),
    };
    let sync = av_offset(item.video, g, config.av_search_range).ok();
    let safe_id = item.id.replace('/', "_");
    let gen_wav = scratch.join(format!("{safe_id}.gen.wav"));
    let ref_wav = scratch.join(format!("{safe_id}.ref.wav"));
    let mut wer_value = None;
    if let Some(tool) = &config.recognizer {
        write_wav(&gen_wav, g)?;
        let hyp = words(&tool.transcribe(&gen_wav)?);
        wer_value = Some(wer(&item.sentence.words(), &hyp)?);
    }
    let mut pesq = None;
    if let Some(tool) = &config.pesq {
        write_wav(&gen_wav, g)?;
        write_wav(&ref_wav, r)?;
        pesq = Some(tool.pesq(&ref_wav, &gen_wav)?);
    }
    Ok(ClipMetrics {
        id: item.id.to_string(),
        mcd_db,
        stoi,
        wer: wer_value,
        pesq,
        av_offset_frames: sync.map(|s| s.offset_frames),
        av_confidence: sync.map(|s| s.confidence),
    })
}

pub fn evaluate_corpus(items: &[EvalItem<'_>], config: &EvalConfig, scratch: &Path) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Metric("nothing to evaluate: the split is empty".into()));
    }
    let clips = items.iter().map(|it| evaluate_clip(it, config, scratch)).collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_clips(clips))
}
