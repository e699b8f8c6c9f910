//! File formats: 16-bit PCM WAV, packed raw frames, anchor lists, and the
//! packed preprocessed-video cache. All writes go through a temporary file and
//! an atomic rename so a failed command never leaves a partial output behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::preprocess::{Anchors, RawFrame, ANCHOR_COUNT};
use crate::grid::video::{VideoTensor, WaveformClip};
use crate::tensor::Tensor;

const FRAMES_MAGIC: &[u8; 4] = b"LWFR";
const VIDEO_MAGIC: &[u8; 4] = b"LWVT";
const FORMAT_VERSION: u32 = 1;

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes `bytes` to `path` via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = temp_path(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Encodes mono 16-bit little-endian PCM.
pub fn wav_bytes(clip: &WaveformClip) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec)?;
        for &s in &clip.samples {
            w.write_sample(quantize(s))?;
        }
        w.finalize()?;
    }
    Ok(cursor.into_inner())
}

/// Nearest 16-bit PCM code for a sample in `[-1, 1]`.
pub fn quantize(s: f64) -> i16 {
    (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, clip: &WaveformClip) -> Result<()> {
    write_atomic(path, &wav_bytes(clip)?)
}

/// Reads a mono 16-bit PCM WAV file into `[-1, 1)` samples.
pub fn read_wav(path: &Path) -> Result<WaveformClip> {
    let bytes = read_bytes(path)?;
    let mut reader = hound::WavReader::new(std::io::Cursor::new(bytes))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Corpus(format!(
            "{}: expected mono 16-bit PCM, got {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader.samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)).collect::<Result<Vec<_>, _>>()?;
    WaveformClip::new(samples, spec.sample_rate)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corpus(format!("{}: truncated file", self.what.display())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Corpus(format!("{}: bad magic", self.what.display())));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Corpus(format!("{}: unsupported version {version}", self.what.display())));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corpus(format!("{}: trailing bytes", self.what.display())));
        }
        Ok(())
    }
}

/// Packed raw frames: magic, version, `T W H C` as u32, then `T*H*W*C` bytes.
pub fn write_frames(path: &Path, frames: &[RawFrame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::InvalidInput("no frames to write".into()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(FRAMES_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    for v in [frames.len(), first.width, first.height, first.channels] {
        put_u32(&mut buf, v as u32);
    }
    for f in frames {
        if (f.width, f.height, f.channels) != (first.width, first.height, first.channels) {
            return Err(Error::InvalidInput("frames differ in geometry".into()));
        }
        buf.extend_from_slice(&f.pixels);
    }
    write_atomic(path, &buf)
}

pub fn read_frames(path: &Path) -> Result<Vec<RawFrame>> {
    let bytes = read_bytes(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, what: path };
    r.header(FRAMES_MAGIC)?;
    let (t, w, h, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let frames = (0..t).map(|_| RawFrame::new(w, h, c, r.take(w * h * c)?.to_vec())).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(frames)
}

/// One line per frame: `x0 y0 x1 y1 ... x4 y4`.
pub fn write_anchors(path: &Path, anchors: &[Anchors]) -> Result<()> {
    let mut text = String::new();
    for a in anchors {
        let line: Vec<String> = a.iter().flat_map(|&(x, y)| [format!("{x}"), format!("{y}")]).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_anchors(path: &Path) -> Result<Vec<Anchors>> {
    let text = read_text(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Corpus(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if vals.len() != 2 * ANCHOR_COUNT {
                return Err(Error::Corpus(format!(
                    "{}:{}: expected {} values, got {}",
                    path.display(),
                    i + 1,
                    2 * ANCHOR_COUNT,
                    vals.len()
                )));
            }
            let mut a = [(0.0, 0.0); ANCHOR_COUNT];
            for (k, p) in a.iter_mut().enumerate() {
                *p = (vals[2 * k], vals[2 * k + 1]);
            }
            Ok(a)
        })
        .collect()
}

/// Preprocessed video: magic, version, `T C H W` as u32, then f32 LE values.
pub fn write_video(path: &Path, video: &VideoTensor) -> Result<()> {
    let t = video.tensor();
    let mut buf = Vec::with_capacity(24 + 4 * t.len());
    buf.extend_from_slice(VIDEO_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    for &d in t.shape() {
        put_u32(&mut buf, d as u32);
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn read_video(path: &Path) -> Result<VideoTensor> {
    let bytes = read_bytes(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, what: path };
    r.header(VIDEO_MAGIC)?;
    let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let n: usize = shape.iter().product();
    let raw = r.take(4 * n)?;
    r.finish()?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    VideoTensor::new(Tensor::new(shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_is_within_one_code() {
        let dir = tempfile::tempdir().unwrap();
        let clip = WaveformClip::new((0..800).map(|i| (i as f64 * 0.05).sin() * 0.9).collect(), 8000).unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &clip).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.len(), 800);
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 2.0 / 32768.0);
        }
        // Header: RIFF/WAVE, PCM, mono, 16 bit.
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(u16::from_le_bytes([bytes[22], bytes[23]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[34], bytes[35]]), 16);
    }

    #[test]
    fn frames_and_video_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<RawFrame> =
            (0..3).map(|t| RawFrame::new(5, 4, 1, (0..20).map(|i| (i * 13 + t) as u8).collect()).unwrap()).collect();
        let p = dir.path().join("x.frames");
        write_frames(&p, &frames).unwrap();
        assert_eq!(read_frames(&p).unwrap(), frames);

        let v = VideoTensor::new(Tensor::from_fn([2, 1, 3, 4], |i| i as f64 / 32.0 - 0.25)).unwrap();
        let q = dir.path().join("x.vt");
        write_video(&q, &v).unwrap();
        assert_eq!(read_video(&q).unwrap(), v);
    }

    #[test]
    fn truncated_files_fail_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let v = VideoTensor::new(Tensor::zeros([2, 1, 3, 4])).unwrap();
        let q = dir.path().join("x.vt");
        write_video(&q, &v).unwrap();
        let bytes = std::fs::read(&q).unwrap();
        std::fs::write(&q, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_video(&q), Err(Error::Corpus(_))));
    }

    #[test]
    fn anchors_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let a: Vec<Anchors> = vec![[(1.5, 2.0), (3.0, 4.0), (5.0, 6.0), (7.0, 8.0), (9.0, 10.25)]; 2];
        let p = dir.path().join("x.anchors");
        write_anchors(&p, &a).unwrap();
        assert_eq!(read_anchors(&p).unwrap(), a);
        std::fs::write(&p, "1 2 3\n").unwrap();
        assert!(read_anchors(&p).is_err());
    }
}
