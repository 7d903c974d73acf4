//! Linear relation maps between embedding representations.
//!
//! A [`ProjectionMatrix`] `T` is learned from `p` example pairs by least
//! squares and applied with the row-vector convention `i_hat = v . T`.
//! Orthogonal Procrustes alignment between two models is provided as well.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::RelationPair;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};

/// Ridge added to the normal-equations diagonal unless overridden.
pub const DEFAULT_RIDGE: f64 = 1e-8;

// Pivots below this fraction of the largest diagonal entry count as zero.
const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    matrix: DMatrix<f64>,
    trained_on: String,
    pair_count: usize,
}

impl ProjectionMatrix {
    pub fn new(matrix: DMatrix<f64>, trained_on: impl Into<String>, pair_count: usize) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "projection must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("projection has non-finite entries".into()));
        }
        if pair_count == 0 {
            return Err(Error::InvalidArgument("pair_count must be at least 1".into()));
        }
        let trained_on = trained_on.into();
        if trained_on.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument("label must be a single line".into()));
        }
        Ok(ProjectionMatrix {
            matrix,
            trained_on,
            pair_count,
        })
    }

    pub fn identity(dim: usize) -> Self {
        ProjectionMatrix {
            matrix: DMatrix::identity(dim, dim),
            trained_on: String::new(),
            pair_count: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    /// `v . T`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: v.len(),
            });
        }
        Ok((0..d)
            .map(|j| self.matrix.column(j).iter().zip(v).map(|(t, x)| t * x).sum())
            .collect())
    }

    /// Text form: `d p label`, then `d` rows of `d` floats.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", d, self.pair_count, self.trained_on);
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| self.matrix[(i, j)].to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let (proj, rest) = Self::parse_lines(&mut lines, "projection")?;
        if let Some(extra) = rest {
            return Err(Error::parse("projection", extra.0, "unexpected trailing content"));
        }
        Ok(proj)
    }

    // Parses the header and matrix rows; returns the first non-blank line
    // after them, if any, with its 1-based line number.
    pub(crate) fn parse_lines<'a>(
        lines: &mut std::str::Lines<'a>,
        context: &str,
    ) -> Result<(Self, Option<(usize, &'a str)>)> {
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(context, 1, "missing header"))?;
        let mut parts = header.splitn(3, ' ');
        let bad_header = || Error::parse(context, 1, format!("malformed header '{header}', expected 'd p label'"));
        let d: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad_header)?;
        let p: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad_header)?;
        let label = parts.next().unwrap_or("").to_owned();
        if d == 0 || p == 0 {
            return Err(bad_header());
        }

        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(context, i + 2, format!("expected {d} matrix rows")))?;
            let row = line
                .split_ascii_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(context, i + 2, e.to_string()))?;
            if row.len() != d {
                return Err(Error::parse(
                    context,
                    i + 2,
                    format!("expected {d} columns, got {}", row.len()),
                ));
            }
            data.extend(row);
        }
        let proj = ProjectionMatrix::new(DMatrix::from_row_slice(d, d, &data), label, p)?;

        let mut lineno = d + 1;
        for line in lines.by_ref() {
            lineno += 1;
            if !line.trim().is_empty() {
                return Ok((proj, Some((lineno, line))));
            }
        }
        Ok((proj, None))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Paired source/target matrices, one row per relation pair.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    sources: DMatrix<f64>,
    targets: DMatrix<f64>,
    pairs: Vec<RelationPair>,
}

impl TrainingSet {
    pub fn new(sources: DMatrix<f64>, targets: DMatrix<f64>, pairs: Vec<RelationPair>) -> Result<Self> {
        if sources.shape() != targets.shape() {
            return Err(Error::ShapeMismatch(format!(
                "sources {:?} vs targets {:?}",
                sources.shape(),
                targets.shape()
            )));
        }
        if !pairs.is_empty() && pairs.len() != sources.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} pairs for {} rows",
                pairs.len(),
                sources.nrows()
            )));
        }
        Ok(TrainingSet {
            sources,
            targets,
            pairs,
        })
    }

    /// Looks up both entities of every pair in `model`; pairs with a missing
    /// entity are dropped and counted in the log.
    pub fn from_pairs<'a, I>(model: &EmbeddingModel, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a RelationPair>,
    {
        let d = model.dim();
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = 0usize;
        for pair in pairs {
            match (model.vector(pair.source.as_str()), model.vector(pair.target.as_str())) {
                (Some(s), Some(t)) => {
                    src.extend_from_slice(s);
                    tgt.extend_from_slice(t);
                    kept.push(pair.clone());
                }
                _ => dropped += 1,
            }
        }
        if dropped > 0 {
            log::warn!(
                "model {}: dropped {dropped} training pairs with out-of-vocabulary entities",
                model.label()
            );
        }
        let p = kept.len();
        TrainingSet::new(
            DMatrix::from_row_slice(p, d, &src),
            DMatrix::from_row_slice(p, d, &tgt),
            kept,
        )
    }

    pub fn len(&self) -> usize {
        self.sources.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.sources.ncols()
    }

    pub fn sources(&self) -> &DMatrix<f64> {
        &self.sources
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn pairs(&self) -> &[RelationPair] {
        &self.pairs
    }

    pub fn source_row(&self, i: usize) -> Vec<f64> {
        self.sources.row(i).iter().copied().collect()
    }

    pub fn target_row(&self, i: usize) -> Vec<f64> {
        self.targets.row(i).iter().copied().collect()
    }
}

/// Least-squares relation map: solves `(X^T X + ridge I) T = X^T Y`.
pub fn solve_projection(train: &TrainingSet, ridge: f64, label: impl Into<String>) -> Result<ProjectionMatrix> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if train.dim() == 0 {
        return Err(Error::ShapeMismatch("zero-dimensional training set".into()));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be nonnegative, got {ridge}")));
    }
    let x = train.sources();
    let y = train.targets();
    let d = train.dim();

    let mut gram = x.transpose() * x;
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let rhs = x.transpose() * y;

    let t = match cholesky(&gram) {
        Ok(l) => cholesky_solve(&l, &rhs),
        Err(_) => {
            log::debug!("Cholesky failed on the normal equations, falling back to LDL^T");
            let (l, diag) = ldlt(&gram)?;
            ldlt_solve(&l, &diag, &rhs)
        }
    };
    ProjectionMatrix::new(t, label, train.len())
}

fn pivot_floor(a: &DMatrix<f64>) -> f64 {
    let max_diag = a.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    PIVOT_TOLERANCE * max_diag.max(f64::MIN_POSITIVE)
}

// Lower-triangular L with A = L L^T.
fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let floor = pivot_floor(a);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= floor {
            return Err(Error::RankDeficient { column: j, pivot: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

// Unit lower-triangular L and diagonal D with A = L D L^T.
fn ldlt(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = a.nrows();
    let floor = pivot_floor(a);
    let mut l = DMatrix::identity(n, n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = a[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if dj.abs() <= floor {
            return Err(Error::RankDeficient { column: j, pivot: dj });
        }
        d[j] = dj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok((l, d))
}

fn ldlt_solve(l: &DMatrix<f64>, d: &[f64], b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s;
        }
        for i in 0..n {
            x[(i, c)] /= d[i];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s;
        }
    }
    x
}

/// Tokens present in both models, sorted.
pub fn shared_vocabulary(a: &EmbeddingModel, b: &EmbeddingModel) -> Vec<String> {
    let mut shared: Vec<String> = a.vocab().iter().filter(|t| b.contains(t)).cloned().collect();
    shared.sort();
    shared
}

/// Orthogonal `Q` minimizing `|A Q - B|` over the anchor rows, from the SVD
/// `A^T B = U S V^T` as `Q = U V^T`. Anchors missing from either model are
/// skipped.
pub fn procrustes_align<S: AsRef<str>>(
    a: &EmbeddingModel,
    b: &EmbeddingModel,
    anchors: &[S],
) -> Result<ProjectionMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let d = a.dim();
    let mut anchor_tokens: Vec<&str> = anchors.iter().map(AsRef::as_ref).collect();
    anchor_tokens.sort_unstable();
    anchor_tokens.dedup();

    let mut cross = DMatrix::<f64>::zeros(d, d);
    let mut used = 0usize;
    for token in anchor_tokens {
        let (Some(va), Some(vb)) = (a.vector(token), b.vector(token)) else {
            continue;
        };
        for i in 0..d {
            for j in 0..d {
                cross[(i, j)] += va[i] * vb[j];
            }
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyAnchors);
    }
    if used < d {
        log::warn!("Procrustes alignment with {used} anchors in {d} dimensions is underdetermined");
    }

    let svd = cross.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::InvalidArgument("SVD did not converge".into()));
    };
    ProjectionMatrix::new(u * v_t, format!("{}->{}", a.label(), b.label()), used)
}
