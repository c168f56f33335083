//! Scored learner samples, their JSON sidecars, and the reference library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{load_sequence, save_sequence};
use super::sequence::MotionSequence;
use crate::error::{Error, Result};
use crate::scorehead::Score;

pub const SIDECAR_FORMAT_VERSION: u32 = 1;

/// Annotated frame with the baseline score of the pair at that instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub frame_index: usize,
    pub baseline_score: f64,
}

/// A learner sequence with expert scores against a named reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub id: String,
    pub motion: MotionSequence,
    pub reference_id: String,
    pub expert_scores: Score,
    pub checkpoints: Vec<Checkpoint>,
}

impl ScoredSample {
    pub fn new(
        id: impl Into<String>,
        motion: MotionSequence,
        reference_id: impl Into<String>,
        expert_scores: Score,
        checkpoints: Vec<Checkpoint>,
    ) -> Result<Self> {
        let s = ScoredSample {
            id: id.into(),
            motion,
            reference_id: reference_id.into(),
            expert_scores,
            checkpoints,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        for v in self.expert_scores.to_array() {
            if !v.is_finite() || !(0.0..=100.0).contains(&v) {
                return Err(Error::validation(format!(
                    "sample {}: expert score {v} outside [0, 100]",
                    self.id
                )));
            }
        }
        let t = self.motion.len();
        for (k, c) in self.checkpoints.iter().enumerate() {
            if c.frame_index >= t {
                return Err(Error::validation(format!(
                    "sample {}: checkpoint {} beyond {t} frames",
                    self.id, c.frame_index
                )));
            }
            if k > 0 && c.frame_index <= self.checkpoints[k - 1].frame_index {
                return Err(Error::validation(format!(
                    "sample {}: checkpoint indices must be strictly increasing",
                    self.id
                )));
            }
            if !c.baseline_score.is_finite() {
                return Err(Error::validation(format!(
                    "sample {}: non-finite baseline score",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            format_version: SIDECAR_FORMAT_VERSION,
            reference_id: self.reference_id.clone(),
            expert_scores: ExpertScores::PerDimension(self.expert_scores.to_array()),
            checkpoints: self.checkpoints.clone(),
        }
    }

    /// Writes `<dir>/<id>.seq` and `<dir>/<id>.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_sequence(&self.motion, dir.join(format!("{}.seq", self.id)))?;
        let path = dir.join(format!("{}.json", self.id));
        let text = serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Reads a sample from its sidecar path; the sequence sits beside it with a `.seq` extension.
    pub fn load(sidecar_path: impl AsRef<Path>) -> Result<Self> {
        let sidecar_path = sidecar_path.as_ref();
        let id = sidecar_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::validation(format!("bad sidecar path {}", sidecar_path.display())))?
            .to_string();
        let sidecar = Sidecar::load(sidecar_path)?;
        let motion = load_sequence(sidecar_path.with_extension("seq"))?;
        ScoredSample::new(
            id,
            motion,
            sidecar.reference_id,
            sidecar.expert_scores.into_score(),
            sidecar.checkpoints,
        )
    }
}

/// Expert annotation: either three dimensions or one averaged scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpertScores {
    PerDimension([f64; 3]),
    Scalar(f64),
}

impl ExpertScores {
    /// A scalar score is replicated across all three dimensions.
    pub fn into_score(self) -> Score {
        match self {
            ExpertScores::PerDimension(a) => Score::from_array(a),
            ExpertScores::Scalar(s) => Score::from_array([s; 3]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub reference_id: String,
    pub expert_scores: ExpertScores,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
}

impl Sidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Sidecar = serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        if s.format_version != SIDECAR_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported sidecar format_version {}",
                s.format_version
            )));
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Sidecar::from_json(&text)
    }
}

/// Loads every `*.json` sidecar in `dir`, sorted by sample id.
pub fn load_samples(dir: impl AsRef<Path>) -> Result<Vec<ScoredSample>> {
    sorted_files(dir.as_ref(), "json")?
        .into_iter()
        .map(ScoredSample::load)
        .collect()
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Known-quality reference sequences keyed by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceLibrary {
    entries: BTreeMap<String, MotionSequence>,
}

impl ReferenceLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, seq: MotionSequence) -> Result<()> {
        let id = id.into();
        if self.entries.contains_key(&id) {
            return Err(Error::validation(format!("duplicate reference id {id:?}")));
        }
        self.entries.insert(id, seq);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&MotionSequence> {
        self.entries
            .get(id)
            .ok_or_else(|| Error::validation(format!("unknown reference id {id:?}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &MotionSequence)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads every `*.seq` file in `dir`; the file stem is the reference id.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut lib = ReferenceLibrary::new();
        for path in sorted_files(dir.as_ref(), "seq")? {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let seq = load_sequence(&path).map_err(|e| e.at("library", path.display().to_string()))?;
            lib.insert(id, seq)?;
        }
        Ok(lib)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (id, seq) in &self.entries {
            save_sequence(seq, dir.join(format!("{id}.seq")))?;
        }
        Ok(())
    }
}
