//! Small dense PCA and the 2-D export of a single prediction for plotting.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::relation::RelationModel;

/// Principal axes fitted on a handful of points.
#[derive(Debug, Clone)]
pub struct Pca {
    mean: Vec<f64>,
    // n_components x d, unit rows; zero rows when the data has lower rank
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
}

impl Pca {
    /// Fits `n_components` axes. Axis signs are fixed so that the entry with
    /// the largest magnitude is positive.
    pub fn fit(points: &[Vec<f64>], n_components: usize) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidArgument("PCA needs at least one point".into()));
        }
        let d = points[0].len();
        if let Some(bad) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: bad.len(),
            });
        }
        let mean: Vec<f64> = (0..d)
            .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);

        let svd = centered.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::InvalidArgument("SVD did not converge".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

        let mut components = DMatrix::zeros(n_components, d);
        let mut explained_variance = vec![0.0; n_components];
        let denom = (n.max(2) - 1) as f64;
        for (c, &idx) in order.iter().take(n_components).enumerate() {
            let mut row: Vec<f64> = v_t.row(idx).iter().copied().collect();
            let pivot = row
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(0.0);
            if pivot < 0.0 {
                row.iter_mut().for_each(|x| *x = -*x);
            }
            for (j, x) in row.into_iter().enumerate() {
                components[(c, j)] = x;
            }
            let s = svd.singular_values[idx];
            explained_variance[c] = s * s / denom;
        }
        Ok(Pca {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn transform(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: point.len(),
            });
        }
        Ok((0..self.components.nrows())
            .map(|c| {
                point
                    .iter()
                    .zip(&self.mean)
                    .enumerate()
                    .map(|(j, (x, m))| (x - m) * self.components[(c, j)])
                    .sum()
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Query,
    Projection,
    Candidate,
}

impl PointKind {
    fn as_str(self) -> &'static str {
        match self {
            PointKind::Query => "query",
            PointKind::Projection => "projection",
            PointKind::Candidate => "candidate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportPoint {
    pub kind: PointKind,
    pub label: String,
    pub x: f64,
    pub y: f64,
    /// Cosine distance to the projection (candidates only).
    pub distance: Option<f64>,
}

impl ExportPoint {
    pub fn within_radius(&self, radius: f64) -> Option<bool> {
        self.distance
            .map(|d| d <= radius + crate::relation::RADIUS_TOLERANCE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaExport {
    pub points: Vec<ExportPoint>,
    pub radius: f64,
}

/// Projects the query, its projection and its `k` nearest candidates to 2-D
/// with a PCA fitted on exactly those points.
pub fn export_prediction(
    model: &RelationModel,
    embeddings: &EmbeddingModel,
    query: &str,
    k: usize,
) -> Result<PcaExport> {
    let model = model.with_k(k)?;
    let prediction = model.predict_baseline(embeddings, query, &HashSet::new())?;
    let query_vec = embeddings
        .vector(query)
        .ok_or_else(|| Error::OutOfVocabulary(query.to_owned()))?;

    let mut labelled: Vec<(PointKind, String, Vec<f64>, Option<f64>)> = vec![
        (PointKind::Query, query.to_owned(), query_vec.to_vec(), None),
        (PointKind::Projection, query.to_owned(), prediction.projected_point.clone(), None),
    ];
    for c in &prediction.candidates {
        let v = embeddings.vector(&c.token).expect("neighbors come from the vocabulary");
        labelled.push((PointKind::Candidate, c.token.clone(), v.to_vec(), Some(c.distance)));
    }

    let vectors: Vec<Vec<f64>> = labelled.iter().map(|(_, _, v, _)| v.clone()).collect();
    let pca = Pca::fit(&vectors, 2)?;
    let points = labelled
        .into_iter()
        .map(|(kind, label, v, distance)| {
            let xy = pca.transform(&v)?;
            Ok(ExportPoint {
                kind,
                label,
                x: xy[0],
                y: xy[1],
                distance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PcaExport {
        points,
        radius: model.radius(),
    })
}

const EXPORT_HEADER: &str = "kind\tlabel\tx\ty\tdistance\twithin_radius";

impl PcaExport {
    /// Tab-separated rows, ending with a `radius` record.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{EXPORT_HEADER}");
        for p in &self.points {
            let distance = p.distance.map(|d| d.to_string()).unwrap_or_default();
            let within = p.within_radius(self.radius).map(|b| b.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", p.kind.as_str(), p.label, p.x, p.y, distance, within);
        }
        let _ = writeln!(out, "radius\t\t\t\t{}\t", self.radius);
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        const CTX: &str = "pca export";
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == EXPORT_HEADER => {}
            _ => return Err(Error::parse(CTX, 1, "missing header")),
        }
        let mut points = Vec::new();
        let mut radius = None;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(Error::parse(CTX, i + 1, "expected 6 tab-separated fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(CTX, i + 1, e.to_string()));
            let kind = match f[0] {
                "query" => PointKind::Query,
                "projection" => PointKind::Projection,
                "candidate" => PointKind::Candidate,
                "radius" => {
                    radius = Some(num(f[4])?);
                    continue;
                }
                other => return Err(Error::parse(CTX, i + 1, format!("unknown kind '{other}'"))),
            };
            points.push(ExportPoint {
                kind,
                label: f[1].to_owned(),
                x: num(f[2])?,
                y: num(f[3])?,
                distance: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            });
        }
        let radius = radius.ok_or_else(|| Error::parse(CTX, 0, "missing radius record"))?;
        Ok(PcaExport { points, radius })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}
