//! Train/validation/test partitioning.
//!
//! * Speaker dependent: clips of the subjects in [`SPEAKER_DEPENDENT_SUBJECTS`]
//!   are shuffled per speaker and cut 90/5/5.
//! * Speaker independent: every clip follows its speaker according to a
//!   [`SpeakerAssignment`], so no speaker is shared between lists.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};

pub const SPEAKER_COUNT: u8 = 33;
pub const SPEAKER_DEPENDENT_SUBJECTS: [u8; 4] = [1, 2, 4, 29];
pub const VALIDATION_FRACTION: f64 = 0.05;
pub const TEST_FRACTION: f64 = 0.05;

pub const SPLIT_FILES: [&str; 3] = ["train.txt", "validation.txt", "test.txt"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    SpeakerDependent,
    SpeakerIndependent,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speaker_dependent" | "dependent" => Ok(SplitMode::SpeakerDependent),
            "speaker_independent" | "independent" => Ok(SplitMode::SpeakerIndependent),
            other => Err(Error::Config(format!("unknown split mode {other:?}"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::SpeakerDependent => "speaker_dependent",
            SplitMode::SpeakerIndependent => "speaker_independent",
        })
    }
}

/// The minimum a splitter needs to know about a clip.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClipRef {
    pub id: String,
    pub speaker: u8,
}

impl ClipRef {
    pub fn new(id: impl Into<String>, speaker: u8) -> Self {
        Self { id: id.into(), speaker }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub mode: SplitMode,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn lists(&self) -> [&[String]; 3] {
        [&self.train, &self.validation, &self.test]
    }

    /// Checks pairwise disjointness (and speaker disjointness where required).
    pub fn validate(&self, speaker_of: impl Fn(&str) -> Option<u8>) -> Result<()> {
        let mut seen = HashSet::new();
        for list in self.lists() {
            for id in list {
                if !seen.insert(id.as_str()) {
                    return Err(Error::Split(format!("clip {id} appears more than once")));
                }
            }
        }
        if self.mode == SplitMode::SpeakerIndependent {
            let sets: Vec<BTreeSet<u8>> = self
                .lists()
                .iter()
                .map(|l| l.iter().filter_map(|id| speaker_of(id)).collect())
                .collect();
            for i in 0..3 {
                for j in i + 1..3 {
                    if let Some(s) = sets[i].intersection(&sets[j]).next() {
                        return Err(Error::Split(format!("speaker {s} appears in more than one list")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes `train.txt`, `validation.txt` and `test.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, list) in SPLIT_FILES.iter().zip(self.lists()) {
            let mut text = list.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            write_atomic(&dir.join(name), text.as_bytes())?;
        }
        Ok(())
    }

    pub fn read(dir: &Path, mode: SplitMode) -> Result<Self> {
        let mut lists = SPLIT_FILES.iter().map(|name| -> Result<Vec<String>> {
            Ok(read_text(&dir.join(name))?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        });
        Ok(Self {
            mode,
            train: lists.next().unwrap()?,
            validation: lists.next().unwrap()?,
            test: lists.next().unwrap()?,
        })
    }
}

/// Per-speaker 90/5/5 split over the four speaker-dependent subjects.
pub fn make_speaker_dependent_split(samples: &[ClipRef], seed: u64) -> Result<DatasetSplit> {
    make_speaker_dependent_split_for(samples, &SPEAKER_DEPENDENT_SUBJECTS, seed)
}

/// Per-speaker 90/5/5 split restricted to `speakers`.
pub fn make_speaker_dependent_split_for(samples: &[ClipRef], speakers: &[u8], seed: u64) -> Result<DatasetSplit> {
    let mut by_speaker: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for s in samples.iter().filter(|s| speakers.contains(&s.speaker)) {
        by_speaker.entry(s.speaker).or_default().push(&s.id);
    }
    if by_speaker.is_empty() {
        return Err(Error::Split(format!("no clips from speakers {speakers:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit { mode: SplitMode::SpeakerDependent, train: vec![], validation: vec![], test: vec![] };
    for ids in by_speaker.values_mut() {
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_val = (n as f64 * VALIDATION_FRACTION).round() as usize;
        let n_test = (n as f64 * TEST_FRACTION).round() as usize;
        let n_train = n - n_val - n_test;
        split.train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        split.validation.extend(ids[n_train..n_train + n_val].iter().map(|s| s.to_string()));
        split.test.extend(ids[n_train + n_val..].iter().map(|s| s.to_string()));
    }
    Ok(split)
}

/// Which speakers go to which list in speaker-independent mode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerAssignment {
    pub train: Vec<u8>,
    pub validation: Vec<u8>,
    pub test: Vec<u8>,
}

impl SpeakerAssignment {
    /// Each of the 33 speakers must appear in exactly one non-empty list.
    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            if list.is_empty() {
                return Err(Error::Split(format!("{name} speaker list is empty")));
            }
        }
        let mut seen = BTreeSet::new();
        for &s in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !(1..=SPEAKER_COUNT).contains(&s) {
                return Err(Error::Split(format!("speaker {s} outside 1..={SPEAKER_COUNT}")));
            }
            if !seen.insert(s) {
                return Err(Error::Split(format!("speaker {s} assigned more than once")));
            }
        }
        if seen.len() != SPEAKER_COUNT as usize {
            let missing: Vec<u8> = (1..=SPEAKER_COUNT).filter(|s| !seen.contains(s)).collect();
            return Err(Error::Split(format!("speakers {missing:?} are not assigned")));
        }
        Ok(())
    }

    /// Reads `train: 1 2 3` style lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self> {
        let mut lists: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::Split(format!("expected `<list>: <speakers>`, got {line:?}")))?;
            let key = key.trim();
            if !["train", "validation", "test"].contains(&key) {
                return Err(Error::Split(format!("unknown list {key:?}")));
            }
            let ids = rest
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.trim_start_matches('s').parse::<u8>().map_err(|_| Error::Split(format!("bad speaker {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            lists.entry(key).or_default().extend(ids);
        }
        let mut take = |k: &str| lists.remove(k).unwrap_or_default();
        let a = Self { train: take("train"), validation: take("validation"), test: take("test") };
        a.validate()?;
        Ok(a)
    }
}

/// Routes every clip to the list its speaker is assigned to.
pub fn make_speaker_independent_split(samples: &[ClipRef], assignment: &SpeakerAssignment) -> Result<DatasetSplit> {
    assignment.validate()?;
    let mut split = DatasetSplit { mode: SplitMode::SpeakerIndependent, train: vec![], validation: vec![], test: vec![] };
    let mut sorted: Vec<&ClipRef> = samples.iter().collect();
    sorted.sort();
    for clip in sorted {
        let list = if assignment.train.contains(&clip.speaker) {
            &mut split.train
        } else if assignment.validation.contains(&clip.speaker) {
            &mut split.validation
        } else {
            &mut split.test
        };
        list.push(clip.id.clone());
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clips(speakers: &[u8], per: usize) -> Vec<ClipRef> {
        speakers
            .iter()
            .flat_map(|&s| (0..per).map(move |i| ClipRef::new(format!("s{s}/clip{i:04}"), s)))
            .collect()
    }

    fn reference_assignment() -> SpeakerAssignment {
        SpeakerAssignment { train: (1..=15).collect(), validation: (16..=23).collect(), test: (24..=33).collect() }
    }

    #[test]
    fn one_speaker_thousand_clips() {
        let s = make_speaker_dependent_split(&clips(&[1], 1000), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (900, 50, 50));
        s.validate(|_| Some(1)).unwrap();
    }

    #[test]
    fn dependent_split_is_seed_deterministic() {
        let c = clips(&[1, 2, 4, 29], 100);
        let a = make_speaker_dependent_split(&c, 11).unwrap();
        assert_eq!(a, make_speaker_dependent_split(&c, 11).unwrap());
        let b = make_speaker_dependent_split(&c, 12).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn dependent_split_ignores_other_speakers_and_rejects_empty() {
        let s = make_speaker_dependent_split(&clips(&[1, 3], 20), 0).unwrap();
        assert!(s.lists().iter().flat_map(|l| l.iter()).all(|id| id.starts_with("s1/")));
        assert!(make_speaker_dependent_split(&clips(&[3], 20), 0).is_err());
    }

    #[test]
    fn independent_split_counts() {
        let c = clips(&(1..=33).collect::<Vec<_>>(), 10);
        let s = make_speaker_independent_split(&c, &reference_assignment()).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (150, 80, 100));
        s.validate(|id| id[1..id.find('/').unwrap()].parse().ok()).unwrap();
    }

    #[test]
    fn assignment_must_partition_all_speakers() {
        let mut a = reference_assignment();
        a.test.push(1);
        assert!(a.validate().is_err());
        let mut b = reference_assignment();
        b.test.clear();
        assert!(b.validate().is_err());
        let mut c = reference_assignment();
        c.test.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn assignment_file_format() {
        let text = "# 15/8/10\ntrain: 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15\nvalidation: 16,17,18,19,20,21,22,23\ntest: s24 s25 s26 s27 s28 s29 s30 s31 s32 s33\n";
        assert_eq!(SpeakerAssignment::parse(text).unwrap(), reference_assignment());
        assert!(SpeakerAssignment::parse("train: 1\nbogus: 2").is_err());
    }

    #[test]
    fn split_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = make_speaker_dependent_split(&clips(&[1, 2], 40), 3).unwrap();
        s.write(dir.path()).unwrap();
        assert_eq!(DatasetSplit::read(dir.path(), SplitMode::SpeakerDependent).unwrap(), s);
    }

    proptest! {
        #[test]
        fn dependent_split_always_disjoint(seed in any::<u64>(), per in 1usize..60) {
            let c = clips(&[1, 2, 4, 29], per);
            let s = make_speaker_dependent_split(&c, seed).unwrap();
            prop_assert!(s.validate(|_| None).is_ok());
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 4 * per);
        }

        #[test]
        fn independent_split_never_shares_speakers(perm in Just((1..=33u8).collect::<Vec<_>>()).prop_shuffle(), per in 1usize..4) {
            let a = SpeakerAssignment { train: perm[..15].to_vec(), validation: perm[15..23].to_vec(), test: perm[23..].to_vec() };
            let c = clips(&(1..=33).collect::<Vec<_>>(), per);
            let s = make_speaker_independent_split(&c, &a).unwrap();
            prop_assert!(s.validate(|id| id[1..id.find('/').unwrap()].parse().ok()).is_ok());
        }
    }
}
