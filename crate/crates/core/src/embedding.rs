//! Word-embedding models: loading, token normalization, cosine geometry and
//! exact nearest-neighbor search.
//!
//! Vectors are unit-normalized when a model is built, so the distance between
//! a stored row and a query `q` is `1 - (row . q) / |q|`. Queries are not
//! required to be unit length.

use std::borrow::Borrow;
use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator used to merge multi-word names into one token.
pub const MULTIWORD_SEPARATOR: &str = "::";

/// A normalized entity token: lowercase, no whitespace, no trailing PoS tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    /// Normalizes a raw surface form.
    ///
    /// A trailing `_TAG` (all-uppercase ASCII letters) is stripped, internal
    /// whitespace runs become `::`, and the result is lowercased. So
    /// `"South::Sudan_PROPN"` and `"South Sudan"` both yield `south::sudan`.
    pub fn normalize(raw: &str) -> Result<Token> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(Error::EmptyToken);
        }
        let untagged = strip_pos_tag(trimmed);
        let joined = untagged
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(MULTIWORD_SEPARATOR);
        let lowered = joined.to_lowercase();
        if lowered.is_empty() {
            return Err(Error::EmptyToken);
        }
        Ok(Token(lowered))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

fn strip_pos_tag(s: &str) -> &str {
    match s.rfind('_') {
        Some(pos) if pos > 0 => {
            let tag = &s[pos + 1..];
            if !tag.is_empty() && tag.chars().all(|c| c.is_ascii_uppercase()) {
                &s[..pos]
            } else {
                s
            }
        }
        _ => s,
    }
}

/// Free-function form of [`Token::normalize`].
pub fn normalize_token(raw: &str) -> Result<Token> {
    Token::normalize(raw)
}

impl TryFrom<String> for Token {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Token::normalize(&value)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl Borrow<str> for Token {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine distance `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::ZeroNorm(None));
    }
    Ok((1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0))
}

/// One entry of a nearest-neighbor result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub token: String,
    pub distance: f64,
}

/// An immutable vocabulary-to-vector map with unit-normalized rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    label: String,
    dim: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    // row-major, vocab.len() x dim
    vectors: Vec<f64>,
}

impl EmbeddingModel {
    /// Builds a model from `(token, vector)` rows, normalizing every vector.
    pub fn from_rows<I, S>(label: impl Into<String>, dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let mut model = EmbeddingModel {
            label: label.into(),
            dim,
            vocab: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        };
        for (token, vector) in rows {
            model.push(token.into(), vector)?;
        }
        Ok(model)
    }

    fn push(&mut self, token: String, mut vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if self.index.contains_key(&token) {
            return Err(Error::DuplicateToken(token));
        }
        let n = norm(&vector);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm(Some(token)));
        }
        vector.iter_mut().for_each(|x| *x /= n);
        self.index.insert(token.clone(), self.vocab.len());
        self.vocab.push(token);
        self.vectors.extend_from_slice(&vector);
        Ok(())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.vocab
            .iter()
            .enumerate()
            .map(move |(i, t)| (t.as_str(), self.row(i)))
    }

    /// Rewrites every token with [`Token::normalize`].
    ///
    /// Word2vec files are ordered by frequency, so on collision the first
    /// occurrence wins. Tokens that normalize to nothing are dropped.
    pub fn normalize_vocabulary(self) -> Self {
        let mut out = EmbeddingModel {
            label: self.label.clone(),
            dim: self.dim,
            vocab: Vec::with_capacity(self.len()),
            index: HashMap::with_capacity(self.len()),
            vectors: Vec::with_capacity(self.vectors.len()),
        };
        let mut dropped = 0usize;
        for (i, raw) in self.vocab.iter().enumerate() {
            match Token::normalize(raw) {
                Ok(t) if !out.index.contains_key(t.as_str()) => {
                    out.index.insert(t.as_str().to_owned(), out.vocab.len());
                    out.vocab.push(t.into_string());
                    out.vectors.extend_from_slice(self.row(i));
                }
                _ => dropped += 1,
            }
        }
        if dropped > 0 {
            log::info!(
                "model {}: {dropped} tokens dropped while normalizing vocabulary",
                out.label
            );
        }
        out
    }

    /// Returns a copy whose rows are `row . matrix`, re-normalized.
    pub fn map_rows(&self, label: impl Into<String>, matrix: &nalgebra::DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != self.dim || matrix.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: matrix.nrows(),
            });
        }
        let rows = self.iter().map(|(t, v)| {
            let mapped: Vec<f64> = (0..self.dim)
                .map(|j| v.iter().enumerate().map(|(i, x)| x * matrix[(i, j)]).sum())
                .collect();
            (t.to_owned(), mapped)
        });
        EmbeddingModel::from_rows(label, self.dim, rows)
    }

    /// Exact k-nearest-neighbor scan by cosine distance.
    ///
    /// Results are sorted by ascending distance with ties broken by token,
    /// so `nearest_neighbors(k)` is always a prefix of `nearest_neighbors(k + 1)`.
    pub fn nearest_neighbors(
        &self,
        query: &[f64],
        k: usize,
        exclude: &HashSet<&str>,
    ) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let qn = norm(query);
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::ZeroNorm(None));
        }

        let mut excluded: Vec<usize> = exclude.iter().filter_map(|t| self.index_of(t)).collect();
        excluded.sort_unstable();
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|i| excluded.binary_search(i).is_err())
            .map(|i| ((1.0 - dot(self.row(i), query) / qn).clamp(0.0, 2.0), i))
            .collect();
        if scored.is_empty() {
            return Err(Error::EmptyVocabulary);
        }

        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            a.0.total_cmp(&b.0)
                .then_with(|| self.vocab[a.1].cmp(&self.vocab[b.1]))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);

        Ok(scored
            .into_iter()
            .map(|(distance, i)| Neighbor {
                token: self.vocab[i].clone(),
                distance,
            })
            .collect())
    }
}

/// Loads a word2vec text-format model.
pub fn load_model(path: impl AsRef<Path>, label: impl Into<String>) -> Result<EmbeddingModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_word2vec_text(BufReader::new(file), label, &path.display().to_string())
}

/// Parses the word2vec text format: a `V D` header, then `V` rows of
/// `token v1 ... vD`. Anything after the last row other than blank lines is
/// rejected.
pub fn read_word2vec_text<R: BufRead>(
    reader: R,
    label: impl Into<String>,
    context: &str,
) -> Result<EmbeddingModel> {
    let mut lines = reader.lines().enumerate();

    let (n_words, dim) = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(context, e))?;
            parse_header(&line).ok_or_else(|| {
                Error::parse(context, 1, format!("malformed header '{line}', expected 'V D'"))
            })?
        }
        None => return Err(Error::parse(context, 1, "missing header")),
    };

    let mut model = EmbeddingModel {
        label: label.into(),
        dim,
        vocab: Vec::with_capacity(n_words),
        index: HashMap::with_capacity(n_words),
        vectors: Vec::with_capacity(n_words * dim),
    };

    for _ in 0..n_words {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(context, model.len() + 2, format!("expected {n_words} rows, found {}", model.len())))?;
        let line = line.map_err(|e| Error::io(context, e))?;
        let mut fields = line.split_ascii_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| Error::parse(context, lineno + 1, "empty row"))?
            .to_owned();
        let vector = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(context, lineno + 1, format!("bad component: {e}")))?;
        model.push(token, vector).map_err(|e| match e {
            Error::DimensionMismatch { expected, actual } => Error::parse(
                context,
                lineno + 1,
                format!("dimension mismatch: expected {expected}, got {actual}"),
            ),
            other => other,
        })?;
    }

    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(context, e))?;
        if !line.trim().is_empty() {
            return Err(Error::parse(context, lineno + 1, "unexpected content after the last row"));
        }
    }

    Ok(model)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_ascii_whitespace();
    let v: usize = parts.next()?.parse().ok()?;
    let d: usize = parts.next()?.parse().ok()?;
    if parts.next().is_some() || v == 0 || d == 0 {
        return None;
    }
    Some((v, d))
}

pub fn write_word2vec_text<W: Write>(model: &EmbeddingModel, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{} {}", model.len(), model.dim())?;
    for (token, vector) in model.iter() {
        write!(w, "{token}")?;
        for x in vector {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn save_model(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_word2vec_text(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
