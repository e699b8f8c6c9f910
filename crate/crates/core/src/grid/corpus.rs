//! On-disk corpus layout.
//!
//! Raw corpus, one directory per speaker:
//!
//! ```text
//! <root>/s<N>/<clip>.frames    packed 8-bit frames
//! <root>/s<N>/<clip>.anchors   5 landmark points per frame
//! <root>/s<N>/<clip>.wav       mono 16-bit PCM
//! <root>/s<N>/<clip>.txt       6-token transcript
//! ```
//!
//! Prepared corpus (output of preprocessing):
//!
//! ```text
//! <out>/manifest.tsv              id, speaker, frames, transcript
//! <out>/cache/s<N>/<clip>.vt      preprocessed video tensor
//! <out>/cache/s<N>/<clip>.wav     audio at the configured rate, T*H samples
//! <out>/{train,validation,test}.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::dsp::resample;
use crate::error::{Error, Result};
use crate::grid::preprocess::{preprocess_frames, PreprocessConfig};
use crate::grid::sentence::GridSentence;
use crate::grid::split::ClipRef;
use crate::grid::video::{samples_per_frame, VideoSample, WaveformClip};
use crate::io::{read_anchors, read_frames, read_text, read_video, read_wav, write_atomic, write_video, write_wav};

/// A clip in the raw corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusClip {
    pub id: String,
    pub speaker: u8,
    pub dir: PathBuf,
    pub stem: String,
}

impl CorpusClip {
    pub fn path(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("{}.{ext}", self.stem))
    }

    pub fn clip_ref(&self) -> ClipRef {
        ClipRef::new(self.id.clone(), self.speaker)
    }
}

fn speaker_from_dir(name: &str) -> Option<u8> {
    name.strip_prefix('s')?.parse().ok().filter(|s| (1..=33).contains(s))
}

/// Speaker number encoded in a clip id `s<N>/<name>`.
pub fn speaker_of_id(id: &str) -> Option<u8> {
    speaker_from_dir(id.split('/').next()?)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

/// Lists every clip under `root`, checking that each has all four files.
pub fn scan_corpus(root: &Path) -> Result<Vec<CorpusClip>> {
    if !root.is_dir() {
        return Err(Error::Corpus(format!("{} is not a directory", root.display())));
    }
    let mut clips = Vec::new();
    for dir in sorted_entries(root)? {
        let Some(speaker) = dir.file_name().and_then(|n| n.to_str()).and_then(speaker_from_dir) else { continue };
        if !dir.is_dir() {
            continue;
        }
        for file in sorted_entries(&dir)? {
            if file.extension().and_then(|e| e.to_str()) != Some("frames") {
                continue;
            }
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let clip = CorpusClip { id: format!("s{speaker}/{stem}"), speaker, dir: dir.clone(), stem };
            for (ext, what) in [("anchors", "anchor"), ("wav", "audio"), ("txt", "transcript")] {
                if !clip.path(ext).is_file() {
                    return Err(Error::Corpus(format!("clip {}: missing {what} file {}", clip.id, clip.path(ext).display())));
                }
            }
            clips.push(clip);
        }
    }
    if clips.is_empty() {
        return Err(Error::Corpus(format!("no clips found under {}", root.display())));
    }
    Ok(clips)
}

/// Loads and preprocesses one raw clip, resampling audio to `sample_rate`.
pub fn load_raw_clip(clip: &CorpusClip, sample_rate: u32, config: &PreprocessConfig) -> Result<VideoSample> {
    let in_clip = |e: Error| Error::Corpus(format!("clip {}: {e}", clip.id));
    let frames = read_frames(&clip.path("frames")).map_err(in_clip)?;
    let anchors = read_anchors(&clip.path("anchors")).map_err(in_clip)?;
    let video = preprocess_frames(&frames, &anchors, config).map_err(in_clip)?;
    let wav = read_wav(&clip.path("wav")).map_err(in_clip)?;
    let samples: Vec<f64> = resample(&wav.samples, wav.sample_rate, sample_rate).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let sentence: GridSentence = read_text(&clip.path("txt")).map_err(in_clip)?.parse().map_err(in_clip)?;
    let audio = WaveformClip::new(samples, sample_rate)?;
    VideoSample::new(clip.id.clone(), clip.speaker, video, audio, sentence).map_err(in_clip)
}

/// A preprocessed corpus directory.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub root: PathBuf,
}

impl PreparedCorpus {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn cache_path(&self, id: &str, ext: &str) -> PathBuf {
        self.root.join("cache").join(format!("{id}.{ext}"))
    }

    /// Preprocesses every clip of `raw_root` into this directory.
    pub fn build(&self, raw_root: &Path, sample_rate: u32, config: &PreprocessConfig) -> Result<Vec<ClipRef>> {
        let hop = samples_per_frame(sample_rate)?;
        let clips = scan_corpus(raw_root)?;
        let mut manifest = String::from("id\tspeaker\tframes\ttranscript\n");
        let mut refs = Vec::with_capacity(clips.len());
        for clip in &clips {
            let sample = load_raw_clip(clip, sample_rate, config)?;
            write_video(&self.cache_path(&clip.id, "vt"), &sample.video)?;
            let fitted = WaveformClip::new(sample.audio.fitted(sample.video.frames() * hop), sample_rate)?;
            write_wav(&self.cache_path(&clip.id, "wav"), &fitted)?;
            manifest.push_str(&format!("{}\t{}\t{}\t{}\n", clip.id, clip.speaker, sample.video.frames(), sample.sentence));
            refs.push(clip.clip_ref());
        }
        write_atomic(&self.root.join("manifest.tsv"), manifest.as_bytes())?;
        Ok(refs)
    }

    /// Manifest rows as `(id, speaker, frames, sentence)`.
    pub fn manifest(&self) -> Result<Vec<(String, u8, usize, GridSentence)>> {
        let path = self.root.join("manifest.tsv");
        let text = read_text(&path)?;
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let cols: Vec<&str> = line.split('\t').collect();
                let bad = || Error::Corpus(format!("{}: malformed row {line:?}", path.display()));
                if cols.len() != 4 {
                    return Err(bad());
                }
                Ok((
                    cols[0].to_string(),
                    cols[1].parse().map_err(|_| bad())?,
                    cols[2].parse().map_err(|_| bad())?,
                    cols[3].parse()?,
                ))
            })
            .collect()
    }

    pub fn clip_refs(&self) -> Result<Vec<ClipRef>> {
        Ok(self.manifest()?.into_iter().map(|(id, s, _, _)| ClipRef::new(id, s)).collect())
    }

    /// Loads a prepared clip by id.
    pub fn load(&self, id: &str) -> Result<VideoSample> {
        let rows = self.manifest()?;
        let (_, speaker, _, sentence) = rows
            .into_iter()
            .find(|r| r.0 == id)
            .ok_or_else(|| Error::Corpus(format!("clip {id} is not in the manifest")))?;
        let video = read_video(&self.cache_path(id, "vt"))?;
        let audio = read_wav(&self.cache_path(id, "wav"))
            .map_err(|e| Error::Corpus(format!("clip {id}: missing or unreadable reference audio ({e})")))?;
        VideoSample::new(id, speaker, video, audio, sentence)
    }

    pub fn load_all(&self, ids: &[String]) -> Result<Vec<VideoSample>> {
        ids.iter().map(|id| self.load(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{write_toy_corpus, ToyCorpusSpec};

    #[test]
    fn scan_reports_missing_transcript_by_clip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToyCorpusSpec { speakers: vec![1], clips_per_speaker: 2, frames: 6, sample_rate: 8000, seed: 1 };
        write_toy_corpus(dir.path(), &spec).unwrap();
        assert_eq!(scan_corpus(dir.path()).unwrap().len(), 2);
        let victim = scan_corpus(dir.path()).unwrap()[1].clone();
        fs::remove_file(victim.path("txt")).unwrap();
        let err = scan_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains(&victim.id) && err.contains("transcript"), "{err}");
    }

    #[test]
    fn prepared_corpus_roundtrip() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let spec = ToyCorpusSpec { speakers: vec![1, 2], clips_per_speaker: 2, frames: 5, sample_rate: 8000, seed: 2 };
        write_toy_corpus(raw.path(), &spec).unwrap();
        let prepared = PreparedCorpus::new(out.path());
        let refs = prepared.build(raw.path(), 8000, &PreprocessConfig::default()).unwrap();
        assert_eq!(refs.len(), 4);
        let s = prepared.load(&refs[3].id).unwrap();
        assert_eq!(s.video.tensor().shape(), &[5, 1, 64, 96]);
        assert_eq!(s.audio.len(), 5 * 320);
        assert_eq!(s.speaker_id, 2);
        assert_eq!(speaker_of_id(&refs[3].id), Some(2));
    }
}
