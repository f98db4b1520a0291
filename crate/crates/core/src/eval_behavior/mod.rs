//! Multiple-choice accuracy and tool-use behavior analysis over episodes.

mod behavior;
mod choice;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::Episode;

pub use behavior::{aggregate, classify, BehaviorClass, BehaviorReport, BehaviorRow};
pub use choice::{extract_choice, Choice};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    MalformedLine { path: PathBuf, line: usize, detail: String },
    #[error("question {question_id}: {detail}")]
    InvalidQuestion { question_id: String, detail: String },
    #[error("no episode for question {0}")]
    MissingEpisode(String),
    #[error("more than one episode for question {0}")]
    DuplicateEpisode(String),
    #[error("video {0} is not in the dataset manifest")]
    UnknownVideo(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkQuestion {
    pub question_id: String,
    pub video_id: String,
    pub question: String,
    pub options: Vec<AnswerOption>,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl BenchmarkQuestion {
    pub fn check(&self) -> Result<(), EvalError> {
        let bad = |detail: &str| EvalError::InvalidQuestion { question_id: self.question_id.clone(), detail: detail.into() };
        if self.options.len() < 2 {
            return Err(bad("needs at least two options"));
        }
        let mut seen = Vec::new();
        for o in &self.options {
            let l = o.letter.trim().to_ascii_uppercase();
            if l.chars().count() != 1 || !l.chars().all(|c| c.is_ascii_alphabetic()) {
                return Err(bad("option letters must be single letters"));
            }
            if seen.contains(&l) {
                return Err(bad("duplicate option letter"));
            }
            seen.push(l);
        }
        if !seen.contains(&self.ground_truth.trim().to_ascii_uppercase()) {
            return Err(bad("ground_truth is not one of the option letters"));
        }
        Ok(())
    }

    /// The question as posed to the agent: text plus lettered options.
    pub fn agent_query(&self) -> String {
        let mut q = self.question.trim().to_string();
        q.push_str("\nOptions:");
        for o in &self.options {
            q.push_str(&format!("\n({}) {}", o.letter, o.text));
        }
        q
    }
}

/// One question per non-blank JSON line.
pub fn load_questions(path: &Path) -> Result<Vec<BenchmarkQuestion>, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| EvalError::MalformedLine { path: path.to_path_buf(), line: i + 1, detail };
        let q: BenchmarkQuestion = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        q.check().map_err(|e| malformed(e.to_string()))?;
        out.push(q);
    }
    Ok(out)
}

/// Episodes from a directory of `*.json` files (name order), a JSON array,
/// a single JSON episode, or JSON Lines.
pub fn load_episodes(path: &Path) -> Result<Vec<Episode>, EvalError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(load_episodes(&f)?);
        }
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |line: usize, e: serde_json::Error| EvalError::MalformedLine {
        path: path.to_path_buf(),
        line,
        detail: e.to_string(),
    };
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| malformed(e.line(), e));
    }
    if let Ok(one) = serde_json::from_str::<Episode>(&text) {
        return Ok(vec![one]);
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(line).map_err(|e| malformed(i + 1, e))?);
        }
    }
    Ok(out)
}

/// `video_id` to database root. Relative roots resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub videos: BTreeMap<String, PathBuf>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| EvalError::MalformedLine {
            path: path.to_path_buf(),
            line: e.line(),
            detail: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for root in m.videos.values_mut() {
            if root.is_relative() {
                *root = base.join(&*root);
            }
        }
        Ok(m)
    }

    pub fn root_for(&self, video_id: &str) -> Result<&Path, EvalError> {
        self.videos
            .get(video_id)
            .map(PathBuf::as_path)
            .ok_or_else(|| EvalError::UnknownVideo(video_id.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum AbstainPolicy {
    #[default]
    Incorrect,
    /// Replace an abstention with a uniformly drawn option, seeded per question.
    RandomSeeded { seed: u64 },
}

fn seeded_letter(seed: u64, q: &BenchmarkQuestion) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(q.question_id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    q.options[rng.gen_range(0..q.options.len())].letter.to_ascii_uppercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question_id: String,
    pub category: Option<String>,
    pub extracted: Choice,
    /// Letter scored after the abstain policy, if any.
    pub scored_letter: Option<String>,
    pub ground_truth: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub category: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl AccuracyRow {
    fn new(category: &str, correct: usize, total: usize) -> Self {
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        AccuracyRow { category: category.to_string(), correct, total, accuracy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub overall: AccuracyRow,
    /// Sorted by category name; questions without a category are not listed here.
    pub per_category: Vec<AccuracyRow>,
    /// Sorted by question id.
    pub questions: Vec<QuestionOutcome>,
}

impl AccuracyTable {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<16} {:>8} {:>6} {:>9}\n", "category", "correct", "total", "accuracy");
        for r in self.per_category.iter().chain(std::iter::once(&self.overall)) {
            out.push_str(&format!("{:<16} {:>8} {:>6} {:>9.4}\n", r.category, r.correct, r.total, r.accuracy));
        }
        out
    }
}

/// Outcome of one question given its episode.
pub fn score_question(q: &BenchmarkQuestion, ep: &Episode, policy: AbstainPolicy) -> QuestionOutcome {
    let extracted = extract_choice(&ep.final_answer, &q.options);
    let scored_letter = match (&extracted, policy) {
        (Choice::Letter(l), _) => Some(l.clone()),
        (Choice::Abstain, AbstainPolicy::Incorrect) => None,
        (Choice::Abstain, AbstainPolicy::RandomSeeded { seed }) => Some(seeded_letter(seed, q)),
    };
    let truth = q.ground_truth.trim().to_ascii_uppercase();
    QuestionOutcome {
        question_id: q.question_id.clone(),
        category: q.category.clone(),
        correct: scored_letter.as_deref() == Some(truth.as_str()),
        extracted,
        scored_letter,
        ground_truth: truth,
    }
}

/// Per-category and overall accuracy, matching episodes by `question_id`.
pub fn evaluate(questions: &[BenchmarkQuestion], episodes: &[Episode], policy: AbstainPolicy) -> Result<AccuracyTable, EvalError> {
    let mut by_id: HashMap<&str, &Episode> = HashMap::new();
    for ep in episodes {
        if let Some(id) = ep.question_id.as_deref() {
            if by_id.insert(id, ep).is_some() {
                return Err(EvalError::DuplicateEpisode(id.to_string()));
            }
        }
    }
    let mut outcomes = Vec::with_capacity(questions.len());
    for q in questions {
        let ep = by_id
            .get(q.question_id.as_str())
            .ok_or_else(|| EvalError::MissingEpisode(q.question_id.clone()))?;
        outcomes.push(score_question(q, ep, policy));
    }
    outcomes.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let mut cats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for o in &outcomes {
        if let Some(c) = o.category.as_deref() {
            let e = cats.entry(c).or_default();
            e.0 += o.correct as usize;
            e.1 += 1;
        }
    }
    let per_category = cats.into_iter().map(|(c, (k, n))| AccuracyRow::new(c, k, n)).collect();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(AccuracyTable { overall: AccuracyRow::new("overall", correct, outcomes.len()), per_category, questions: outcomes })
}
