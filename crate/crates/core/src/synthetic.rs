//! Synthetic embedding spaces with a planted linear relation.
//!
//! Locations and distractors are uniform on the unit sphere and shared by
//! every year. In year `y` each active group of location `l` sits at
//! `normalize(l . T*_y + noise)`; groups that are inactive that year are
//! placed uniformly at random. `T*_0` defaults to a random orthogonal matrix
//! and `T*_{y+1} = T*_y + drift`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{save_relations, Year, YearlyRelationSet};
use crate::embedding::{save_model, EmbeddingModel, Token};
use crate::error::{Error, Result};
use crate::projection::ProjectionMatrix;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub n_locations: usize,
    pub n_groups: usize,
    /// Defaults to 100 times the gold vocabulary (locations plus groups).
    pub n_distractors: Option<usize>,
    /// Relative weights of having 0, 1, 2, ... groups in a year. Counts are
    /// apportioned to locations by largest remainder, so shares are exact.
    pub groups_per_location: Vec<f64>,
    pub years: usize,
    pub first_year: Year,
    /// Planted relation for the first year; random orthogonal when `None`.
    pub relation_matrix: Option<DMatrix<f64>>,
    /// Expected norm of the Gaussian noise added to each group vector
    /// before normalization.
    pub noise_sigma: f64,
    /// Expected per-row norm of the Gaussian perturbation added to `T*`
    /// each year.
    pub drift_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 20,
            n_locations: 40,
            n_groups: 60,
            n_distractors: None,
            groups_per_location: vec![0.5, 0.3, 0.2],
            years: 4,
            first_year: 2010,
            relation_matrix: None,
            noise_sigma: 0.0,
            drift_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn distractor_count(&self) -> usize {
        self.n_distractors
            .unwrap_or(100 * (self.n_locations + self.n_groups))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.years == 0 {
            return bad("years must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite())
            || !(self.drift_sigma >= 0.0 && self.drift_sigma.is_finite())
        {
            return bad("noise_sigma and drift_sigma must be finite and nonnegative".into());
        }
        if self.groups_per_location.is_empty()
            || self.groups_per_location.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.groups_per_location.iter().sum::<f64>() <= 0.0
        {
            return bad("groups_per_location must be nonnegative weights with a positive sum".into());
        }
        if let Some(max) = self.groups_per_location.iter().rposition(|w| *w > 0.0) {
            if max > self.n_groups {
                return bad(format!(
                    "{max} groups per location requested but only {} groups exist",
                    self.n_groups
                ));
            }
        }
        let demand: usize = self.group_counts().iter().sum();
        if demand > self.n_groups {
            return bad(format!(
                "the distribution needs {demand} distinct groups per year but only {} exist",
                self.n_groups
            ));
        }
        if let Some(m) = &self.relation_matrix {
            if m.shape() != (self.dim, self.dim) {
                return bad(format!("relation_matrix must be {0}x{0}", self.dim));
            }
        }
        Ok(())
    }

    /// Number of groups for each location slot, before shuffling.
    pub fn group_counts(&self) -> Vec<usize> {
        let total: f64 = self.groups_per_location.iter().sum();
        let n = self.n_locations;
        let exact: Vec<f64> = self
            .groups_per_location
            .iter()
            .map(|w| w / total * n as f64)
            .collect();
        let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let assigned: usize = quota.iter().sum();
        for &c in order.iter().take(n - assigned) {
            quota[c] += 1;
        }
        quota
            .iter()
            .enumerate()
            .flat_map(|(c, &q)| std::iter::repeat_n(c, q))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub models: BTreeMap<Year, EmbeddingModel>,
    pub gold: Vec<YearlyRelationSet>,
    pub planted: BTreeMap<Year, DMatrix<f64>>,
}

pub fn location_token(i: usize) -> String {
    format!("loc_{i}")
}

pub fn group_token(j: usize) -> String {
    format!("grp_{j}")
}

pub fn distractor_token(m: usize) -> String {
    format!("dst_{m}")
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn sphere_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d, 1.0);
        let n = crate::embedding::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A Haar-random orthogonal matrix (QR of a Gaussian matrix with the signs
/// of R's diagonal folded into Q).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn row_times(v: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| v.iter().enumerate().map(|(i, x)| x * m[(i, j)]).sum())
        .collect()
}

/// Generates models, gold sets and the planted matrices. Deterministic in
/// `config.seed`.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut relation = match &config.relation_matrix {
        Some(m) => m.clone(),
        None => random_orthogonal(&mut rng, d),
    };
    let locations: Vec<Vec<f64>> = (0..config.n_locations).map(|_| sphere_point(&mut rng, d)).collect();
    let distractors: Vec<Vec<f64>> = (0..config.distractor_count()).map(|_| sphere_point(&mut rng, d)).collect();
    let base_counts = config.group_counts();
    let noise_scale = config.noise_sigma / (d as f64).sqrt();
    let drift_scale = config.drift_sigma / (d as f64).sqrt();

    let mut models = BTreeMap::new();
    let mut gold = Vec::with_capacity(config.years);
    let mut planted = BTreeMap::new();

    for y in 0..config.years {
        let year = config.first_year + y as Year;
        if y > 0 && drift_scale > 0.0 {
            relation += DMatrix::from_fn(d, d, |_, _| drift_scale * rng.sample::<f64, _>(StandardNormal));
        }

        let mut counts = base_counts.clone();
        counts.shuffle(&mut rng);
        let mut pool: Vec<usize> = (0..config.n_groups).collect();
        pool.shuffle(&mut rng);
        let mut pool = pool.into_iter();

        let mut group_vectors: Vec<Option<Vec<f64>>> = vec![None; config.n_groups];
        let mut entries = BTreeMap::new();
        for (i, loc) in locations.iter().enumerate() {
            let projected = row_times(loc, &relation);
            let mut targets = BTreeSet::new();
            for _ in 0..counts[i] {
                let g = pool.next().expect("validated group demand");
                let noise = gaussian_vec(&mut rng, d, noise_scale);
                let v: Vec<f64> = projected.iter().zip(&noise).map(|(p, e)| p + e).collect();
                group_vectors[g] = Some(v);
                targets.insert(Token::normalize(&group_token(g))?);
            }
            entries.insert(Token::normalize(&location_token(i))?, targets);
        }
        for slot in group_vectors.iter_mut() {
            if slot.is_none() {
                *slot = Some(sphere_point(&mut rng, d));
            }
        }

        let rows = locations
            .iter()
            .enumerate()
            .map(|(i, v)| (location_token(i), v.clone()))
            .chain(
                group_vectors
                    .into_iter()
                    .enumerate()
                    .map(|(j, v)| (group_token(j), v.expect("filled above"))),
            )
            .chain(distractors.iter().enumerate().map(|(m, v)| (distractor_token(m), v.clone())));
        models.insert(year, EmbeddingModel::from_rows(format!("synth_{year}"), d, rows)?);
        gold.push(YearlyRelationSet::new(year, entries)?);
        planted.insert(year, relation.clone());
    }

    Ok(SyntheticData { models, gold, planted })
}

/// File locations written by [`SyntheticData::write_to_dir`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub models: BTreeMap<Year, PathBuf>,
    pub relations: PathBuf,
    pub planted: BTreeMap<Year, PathBuf>,
}

impl SyntheticData {
    /// Writes `model_<year>.txt`, `relations.jsonl` and `planted_<year>.txt`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<FixturePaths> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut models = BTreeMap::new();
        for (year, model) in &self.models {
            let path = dir.join(format!("model_{year}.txt"));
            save_model(model, &path)?;
            models.insert(*year, path);
        }
        let relations = dir.join("relations.jsonl");
        save_relations(&self.gold, &relations)?;
        let mut planted = BTreeMap::new();
        for (year, m) in &self.planted {
            let path = dir.join(format!("planted_{year}.txt"));
            let pairs = self
                .gold
                .iter()
                .find(|g| g.period() == *year)
                .map_or(0, YearlyRelationSet::pair_count);
            ProjectionMatrix::new(m.clone(), format!("planted_{year}"), pairs.max(1))?.save(&path)?;
            planted.insert(*year, path);
        }
        Ok(FixturePaths {
            models,
            relations,
            planted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            dim: 6,
            n_locations: 10,
            n_groups: 12,
            n_distractors: Some(30),
            years: 3,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.models, b.models);
        assert_eq!(a.gold, b.gold);
        assert_eq!(a.planted, b.planted);
        let c = generate(&SyntheticConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.models, c.models);
    }

    #[test]
    fn exact_peaceful_share() {
        let data = generate(&small()).unwrap();
        for g in &data.gold {
            assert_eq!(g.location_universe().count(), 10);
            assert_eq!(g.conflict_locations().count(), 5);
            assert_eq!(g.pair_count(), 3 + 2 * 2);
        }
    }

    #[test]
    fn default_distractor_count() {
        let c = SyntheticConfig::default();
        assert_eq!(c.distractor_count(), 100 * (40 + 60));
    }

    #[test]
    fn gold_tokens_are_in_every_vocabulary() {
        let data = generate(&small()).unwrap();
        for g in &data.gold {
            let model = &data.models[&g.period()];
            for (loc, targets) in g.entries() {
                assert!(model.contains(loc.as_str()));
                assert!(targets.iter().all(|t| model.contains(t.as_str())));
            }
        }
    }

    #[test]
    fn planted_relation_is_orthogonal_without_drift() {
        let data = generate(&small()).unwrap();
        let t = &data.planted[&2010];
        assert!((t.transpose() * t - DMatrix::identity(6, 6)).norm() < 1e-10);
        assert_eq!(data.planted[&2010], data.planted[&2012]);
    }

    #[test]
    fn impossible_configs() {
        let too_many = SyntheticConfig {
            n_groups: 1,
            groups_per_location: vec![0.0, 0.0, 1.0],
            ..small()
        };
        assert!(matches!(generate(&too_many), Err(Error::InvalidConfig(_))));
        let demand = SyntheticConfig {
            n_groups: 5,
            ..small()
        };
        assert!(matches!(generate(&demand), Err(Error::InvalidConfig(_))));
        assert!(generate(&SyntheticConfig { noise_sigma: -1.0, ..small() }).is_err());
        assert!(generate(&SyntheticConfig { groups_per_location: vec![], ..small() }).is_err());
    }
}
