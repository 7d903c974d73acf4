//! Reference implementations used as test oracles. None of these call into
//! the solver, search or statistics code they are compared against.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use nalgebra::DMatrix;
use onetox::{EmbeddingModel, RelationModel, YearlyRelationSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Least squares through the SVD pseudo-inverse.
pub fn pinv_solve(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().pseudo_inverse(1e-12).expect("svd") * y
}

fn cos_dist(u: &[f64], v: &[f64]) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    1.0 - uv / (uu.sqrt() * vv.sqrt())
}

/// Every non-excluded token with its distance, fully sorted.
pub fn brute_force_knn(model: &EmbeddingModel, query: &[f64], exclude: &HashSet<&str>) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = model
        .iter()
        .filter(|(t, _)| !exclude.contains(t))
        .map(|(t, v)| (t.to_owned(), cos_dist(v, query).clamp(0.0, 2.0)))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all
}

fn mat_vec(v: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    let row = DMatrix::from_row_slice(1, v.len(), v) * m;
    row.iter().copied().collect()
}

/// Predicted set for one query computed from scratch: scan, take k, then
/// keep those within the radius when `threshold` is set.
pub fn oracle_prediction(
    model: &RelationModel,
    emb: &EmbeddingModel,
    query: &str,
    threshold: bool,
) -> Option<BTreeSet<String>> {
    let v = emb.vector(query)?;
    let projected = mat_vec(v, model.projection().matrix());
    let exclude: HashSet<&str> = [query].into_iter().collect();
    Some(
        brute_force_knn(emb, &projected, &exclude)
            .into_iter()
            .take(model.k())
            .filter(|(_, d)| !threshold || *d <= model.radius() + 1e-9)
            .map(|(t, _)| t)
            .collect(),
    )
}

/// `(tp, fp, fn, oov)` by plain set comparison over all locations.
pub fn oracle_counts(
    model: &RelationModel,
    emb: &EmbeddingModel,
    gold: &YearlyRelationSet,
    threshold: bool,
) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fn_, mut oov) = (0, 0, 0, 0);
    for (loc, targets) in gold.entries() {
        let gold_set: BTreeSet<String> = targets.iter().map(|t| t.to_string()).collect();
        match oracle_prediction(model, emb, loc.as_str(), threshold) {
            None => {
                oov += 1;
                fn_ += gold_set.len();
            }
            Some(pred) => {
                tp += pred.intersection(&gold_set).count();
                fp += pred.difference(&gold_set).count();
                fn_ += gold_set.difference(&pred).count();
            }
        }
    }
    (tp, fp, fn_, oov)
}

/// Paired t-test with the p-value from Simpson quadrature of the Student t
/// density (substituting x = tan(theta) to make the range finite).
pub fn oracle_t_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let ss: f64 = d.iter().map(|x| (x - mean).powi(2)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    let nu = n - 1.0;

    let g = |theta: f64| {
        let x = theta.tan();
        let c = theta.cos();
        (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0) / (c * c)
    };
    let simpson = |lo: f64, hi: f64| {
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let mut s = 0.0;
        for i in 0..=steps {
            let th = lo + i as f64 * h;
            // the integrand's limit at +-pi/2 is finite; avoid evaluating tan there
            let th = th.clamp(-std::f64::consts::FRAC_PI_2 + 1e-12, std::f64::consts::FRAC_PI_2 - 1e-12);
            let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(th);
        }
        s * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    let total = simpson(-half, half);
    let tail = simpson(t.abs().atan(), half);
    (t, (2.0 * tail / total).min(1.0))
}

pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}
