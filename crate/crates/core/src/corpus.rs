//! Corpus data model: papers, embeddings, and ground-truth labels.
//!
//! Files are line-delimited JSON records (one object per line, UTF-8).
//! Embeddings are L2-normalized at load so that the inner product of any
//! two stored vectors equals their cosine similarity.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque paper identifier, unique within a corpus.
pub type PaperId = String;

/// Default character cap applied to paper text at load.
pub const DEFAULT_TRUNCATION_LIMIT: usize = 60_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("ParseError: {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("DimensionMismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("DuplicateId: {0:?} appears more than once")]
    DuplicateId(PaperId),
    #[error("MissingEmbedding: submission {0:?} has no embedding")]
    MissingEmbedding(PaperId),
    #[error("NoSubmissions: corpus contains no submission papers")]
    NoSubmissions,
    #[error("UnknownPaper: {0:?}")]
    UnknownPaper(PaperId),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Submission,
    Historical,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Submission => write!(f, "submission"),
            Role::Historical => write!(f, "historical"),
        }
    }
}

/// One document node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Paper {
    pub id: PaperId,
    pub role: Role,
    #[serde(default)]
    pub venue: String,
    #[serde(default)]
    pub year: i32,
    pub text: String,
}

/// Unit-normalized embedding vector for one paper.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub paper_id: PaperId,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Character cap applied to paper text at load.
    pub truncation_limit: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            truncation_limit: DEFAULT_TRUNCATION_LIMIT,
        }
    }
}

/// Immutable, validated collection of papers with embeddings and optional labels.
///
/// Node indices are assigned in file order and are stable for the lifetime of
/// the corpus; all graph structures reference papers by index.
#[derive(Debug, Clone)]
pub struct Corpus {
    papers: Vec<Paper>,
    index: HashMap<PaperId, usize>,
    embeddings: Vec<Option<Embedding>>,
    labels: Vec<Option<f64>>,
    dim: Option<usize>,
    n_submissions: usize,
}

impl Corpus {
    /// Assemble a corpus from in-memory parts. Runs the same validation as
    /// [`load_corpus`].
    pub fn from_parts(
        papers: Vec<Paper>,
        embeddings: Vec<Embedding>,
        labels: HashMap<PaperId, f64>,
    ) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(papers.len());
        for (i, p) in papers.iter().enumerate() {
            if index.insert(p.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(p.id.clone()));
            }
        }
        let mut slots: Vec<Option<Embedding>> = vec![None; papers.len()];
        let mut dim = None;
        for mut e in embeddings {
            let i = *index
                .get(&e.paper_id)
                .ok_or_else(|| CorpusError::UnknownPaper(e.paper_id.clone()))?;
            if slots[i].is_some() {
                return Err(CorpusError::DuplicateId(e.paper_id.clone()));
            }
            let d = *dim.get_or_insert(e.vector.len());
            if e.vector.len() != d {
                return Err(CorpusError::DimensionMismatch {
                    expected: d,
                    got: e.vector.len(),
                    context: format!("embedding for {:?}", e.paper_id),
                });
            }
            normalize(&mut e.vector).map_err(|msg| CorpusError::Parse {
                path: "<memory>".into(),
                line: 0,
                msg: format!("embedding for {:?}: {msg}", e.paper_id),
            })?;
            slots[i] = Some(e);
        }
        let mut label_slots: Vec<Option<f64>> = vec![None; papers.len()];
        for (id, score) in labels {
            let i = *index
                .get(&id)
                .ok_or_else(|| CorpusError::UnknownPaper(id.clone()))?;
            label_slots[i] = Some(score);
        }
        let mut n_submissions = 0;
        for (i, p) in papers.iter().enumerate() {
            if p.text.is_empty() {
                return Err(CorpusError::Parse {
                    path: "<memory>".into(),
                    line: 0,
                    msg: format!("paper {:?} has empty text", p.id),
                });
            }
            if p.role == Role::Submission {
                n_submissions += 1;
                if slots[i].is_none() {
                    return Err(CorpusError::MissingEmbedding(p.id.clone()));
                }
            }
        }
        if n_submissions == 0 {
            return Err(CorpusError::NoSubmissions);
        }
        Ok(Self {
            papers,
            index,
            embeddings: slots,
            labels: label_slots,
            dim,
            n_submissions,
        })
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    /// Number of submission papers (the `n` in `top ⌊γn⌋`).
    pub fn n_submissions(&self) -> usize {
        self.n_submissions
    }

    pub fn papers(&self) -> &[Paper] {
        &self.papers
    }

    pub fn paper(&self, idx: usize) -> &Paper {
        &self.papers[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Paper> {
        self.index_of(id).map(|i| &self.papers[i])
    }

    pub fn embedding(&self, idx: usize) -> Option<&Embedding> {
        self.embeddings[idx].as_ref()
    }

    pub fn label(&self, idx: usize) -> Option<f64> {
        self.labels[idx]
    }

    pub fn label_of(&self, id: &str) -> Option<f64> {
        self.index_of(id).and_then(|i| self.labels[i])
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn is_submission(&self, idx: usize) -> bool {
        self.papers[idx].role == Role::Submission
    }

    /// Indices of submission papers, in load order.
    pub fn submission_indices(&self) -> Vec<usize> {
        (0..self.papers.len())
            .filter(|&i| self.is_submission(i))
            .collect()
    }

    /// True when every submission carries a ground-truth label.
    pub fn submissions_labeled(&self) -> bool {
        (0..self.papers.len()).all(|i| !self.is_submission(i) || self.labels[i].is_some())
    }

    /// Write the corpus back out as the three record files.
    pub fn save(
        &self,
        papers_path: &Path,
        embeddings_path: &Path,
        labels_path: Option<&Path>,
    ) -> Result<(), CorpusError> {
        let mut pw = BufWriter::new(File::create(papers_path)?);
        for p in &self.papers {
            serde_json::to_writer(&mut pw, p).map_err(io_err)?;
            pw.write_all(b"\n")?;
        }
        pw.flush()?;
        let mut ew = BufWriter::new(File::create(embeddings_path)?);
        for e in self.embeddings.iter().flatten() {
            serde_json::to_writer(&mut ew, e).map_err(io_err)?;
            ew.write_all(b"\n")?;
        }
        ew.flush()?;
        if let Some(lp) = labels_path {
            let mut lw = BufWriter::new(File::create(lp)?);
            for (i, label) in self.labels.iter().enumerate() {
                if let Some(score) = label {
                    let rec = LabelRecord {
                        paper_id: self.papers[i].id.clone(),
                        score: *score,
                    };
                    serde_json::to_writer(&mut lw, &rec).map_err(io_err)?;
                    lw.write_all(b"\n")?;
                }
            }
            lw.flush()?;
        }
        Ok(())
    }
}

fn io_err(e: serde_json::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    paper_id: PaperId,
    score: f64,
}

/// Load and validate a corpus from line-delimited record files.
pub fn load_corpus(
    papers_path: &Path,
    embeddings_path: &Path,
    labels_path: Option<&Path>,
) -> Result<Corpus, CorpusError> {
    load_corpus_with(
        papers_path,
        embeddings_path,
        labels_path,
        &LoadOptions::default(),
    )
}

pub fn load_corpus_with(
    papers_path: &Path,
    embeddings_path: &Path,
    labels_path: Option<&Path>,
    opts: &LoadOptions,
) -> Result<Corpus, CorpusError> {
    let papers = read_lines(papers_path, |line, no| {
        let mut p: Paper = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            path: papers_path.display().to_string(),
            line: no,
            msg: e.to_string(),
        })?;
        p.text = truncate_chars(&p.text, opts.truncation_limit);
        if p.text.is_empty() {
            return Err(CorpusError::Parse {
                path: papers_path.display().to_string(),
                line: no,
                msg: format!("paper {:?} has empty text", p.id),
            });
        }
        Ok(p)
    })?;
    let embeddings = read_lines(embeddings_path, |line, no| {
        serde_json::from_str::<Embedding>(line).map_err(|e| CorpusError::Parse {
            path: embeddings_path.display().to_string(),
            line: no,
            msg: e.to_string(),
        })
    })?;
    let mut labels = HashMap::new();
    if let Some(lp) = labels_path {
        let records = read_lines(lp, |line, no| {
            serde_json::from_str::<LabelRecord>(line).map_err(|e| CorpusError::Parse {
                path: lp.display().to_string(),
                line: no,
                msg: e.to_string(),
            })
        })?;
        for r in records {
            if labels.insert(r.paper_id.clone(), r.score).is_some() {
                return Err(CorpusError::DuplicateId(r.paper_id));
            }
        }
    }
    Corpus::from_parts(papers, embeddings, labels)
}

fn read_lines<T>(
    path: &Path,
    mut parse: impl FnMut(&str, usize) -> Result<T, CorpusError>,
) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line, i + 1)?);
    }
    Ok(out)
}

fn truncate_chars(text: &str, limit: usize) -> String {
    match text.char_indices().nth(limit) {
        Some((byte_idx, _)) => text[..byte_idx].to_string(),
        None => text.to_string(),
    }
}

/// Scale a vector to unit L2 norm in place.
fn normalize(v: &mut [f64]) -> Result<(), String> {
    if v.is_empty() {
        return Err("empty vector".into());
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(format!("vector has invalid norm {norm}"));
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

/// Cosine similarity of two embeddings. Vectors are unit-normalized at load,
/// so this is a clamped dot product.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, CorpusError> {
    if a.vector.len() != b.vector.len() {
        return Err(CorpusError::DimensionMismatch {
            expected: a.vector.len(),
            got: b.vector.len(),
            context: format!("cosine of {:?} vs {:?}", a.paper_id, b.paper_id),
        });
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}
