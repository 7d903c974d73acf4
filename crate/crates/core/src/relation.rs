//! The deployable one-to-X predictor: a projection, a cosine radius and a
//! candidate cap `k`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_distance, EmbeddingModel, Neighbor};
use crate::error::{Error, Result};
use crate::projection::{ProjectionMatrix, TrainingSet};

/// Slack on the radius comparison so that distances equal to the radius up
/// to rounding are admitted.
pub const RADIUS_TOLERANCE: f64 = 1e-9;

/// Mean plus population standard deviation.
pub fn radius_from_distances(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(mean + var.sqrt())
}

/// Cosine distances between each projected training source and its target.
pub fn training_distances(train: &TrainingSet, projection: &ProjectionMatrix) -> Result<Vec<f64>> {
    (0..train.len())
        .map(|i| {
            let projected = projection.project(&train.source_row(i))?;
            cosine_distance(&projected, &train.target_row(i))
        })
        .collect()
}

/// The hypersphere radius learned from the training pairs.
pub fn compute_radius(train: &TrainingSet, projection: &ProjectionMatrix) -> Result<f64> {
    radius_from_distances(&training_distances(train, projection)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query: String,
    pub candidates: Vec<Neighbor>,
    pub projected_point: Vec<f64>,
}

impl Prediction {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.candidates.iter().map(|c| c.token.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationModel {
    projection: ProjectionMatrix,
    radius: f64,
    k: usize,
    trained_period: String,
}

impl RelationModel {
    pub fn new(projection: ProjectionMatrix, radius: f64, k: usize, trained_period: impl Into<String>) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {radius}")));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let trained_period = trained_period.into();
        if trained_period.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "period label '{trained_period}' contains whitespace"
            )));
        }
        Ok(RelationModel {
            projection,
            radius,
            k,
            trained_period,
        })
    }

    /// Solves the projection on `train` and learns its radius on the same pairs.
    pub fn train(train: &TrainingSet, ridge: f64, k: usize, period: impl Into<String>) -> Result<Self> {
        let period = period.into();
        let projection = crate::projection::solve_projection(train, ridge, period.clone())?;
        let radius = compute_radius(train, &projection)?;
        RelationModel::new(projection, radius, k, period)
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn trained_period(&self) -> &str {
        &self.trained_period
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        RelationModel::new(self.projection.clone(), radius, self.k, self.trained_period.clone())
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        RelationModel::new(self.projection.clone(), self.radius, k, self.trained_period.clone())
    }

    /// The `k` nearest neighbors of the projected query, with no radius filter.
    /// The query itself and every token in `exclude` are skipped.
    pub fn predict_baseline(
        &self,
        embeddings: &EmbeddingModel,
        query: &str,
        exclude: &HashSet<&str>,
    ) -> Result<Prediction> {
        if self.projection.dim() != embeddings.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.projection.dim(),
                actual: embeddings.dim(),
            });
        }
        let v = embeddings
            .vector(query)
            .ok_or_else(|| Error::OutOfVocabulary(query.to_owned()))?;
        let projected_point = self.projection.project(v)?;

        let mut skip = exclude.clone();
        skip.insert(query);
        let candidates = match embeddings.nearest_neighbors(&projected_point, self.k, &skip) {
            Ok(c) => c,
            Err(Error::EmptyVocabulary) => Vec::new(),
            Err(e) => return Err(e),
        };
        Ok(Prediction {
            query: query.to_owned(),
            candidates,
            projected_point,
        })
    }

    /// Baseline candidates filtered to the hypersphere of the learned radius.
    /// An empty candidate list is a valid answer.
    pub fn predict(&self, embeddings: &EmbeddingModel, query: &str, exclude: &HashSet<&str>) -> Result<Prediction> {
        let mut prediction = self.predict_baseline(embeddings, query, exclude)?;
        let limit = self.radius + RADIUS_TOLERANCE;
        prediction.candidates.retain(|c| c.distance <= limit);
        Ok(prediction)
    }

    /// Projection text followed by `radius=<r> k=<k> period=<label>`.
    pub fn to_text(&self) -> String {
        let mut out = self.projection.to_text();
        out.push_str(&format!(
            "radius={} k={} period={}\n",
            self.radius, self.k, self.trained_period
        ));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        const CTX: &str = "relation model";
        let mut lines = text.lines();
        let (projection, footer) = ProjectionMatrix::parse_lines(&mut lines, CTX)?;
        let (lineno, footer) =
            footer.ok_or_else(|| Error::parse(CTX, projection.dim() + 2, "missing 'radius= k= period=' footer"))?;

        let mut radius = None;
        let mut k = None;
        let mut period = None;
        for field in footer.split_ascii_whitespace() {
            let bad = || Error::parse(CTX, lineno, format!("bad footer field '{field}'"));
            match field.split_once('=') {
                Some(("radius", v)) => radius = Some(v.parse::<f64>().map_err(|_| bad())?),
                Some(("k", v)) => k = Some(v.parse::<usize>().map_err(|_| bad())?),
                Some(("period", v)) => period = Some(v.to_owned()),
                _ => return Err(bad()),
            }
        }
        let (Some(radius), Some(k), Some(period)) = (radius, k, period) else {
            return Err(Error::parse(CTX, lineno, "footer must set radius, k and period"));
        };
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::parse(CTX, lineno + 1, "unexpected content after footer"));
        }
        RelationModel::new(projection, radius, k, period)
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
