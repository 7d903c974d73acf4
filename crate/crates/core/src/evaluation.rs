//! Diachronic and synchronic experiments over yearly gold data.
//!
//! Each year is scored with true positives, false positives and false
//! negatives; precision, recall and F1 are computed per year and then
//! averaged over years (macro average). Peaceful locations with an empty
//! prediction earn no credit.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{Year, YearlyRelationSet};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::projection::{procrustes_align, shared_vocabulary, TrainingSet, DEFAULT_RIDGE};
use crate::relation::RelationModel;

/// Candidate cap used in the one-to-X experiments.
pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Baseline,
    Threshold,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Baseline => "Baseline",
            Algorithm::Threshold => "Threshold",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Diachronic,
    Synchronic,
    RecallAtK,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Diachronic => "diachronic",
            Mode::Synchronic => "synchronic",
            Mode::RecallAtK => "recall_at_k",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearMetrics {
    pub period: Year,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub oov_queries: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl YearMetrics {
    pub fn from_counts(period: Year, tp: usize, fp: usize, fn_: usize, oov_queries: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        YearMetrics {
            period,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            oov_queries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Averages {
    pub fn of(per_year: &[YearMetrics]) -> Option<Self> {
        if per_year.is_empty() {
            return None;
        }
        let n = per_year.len() as f64;
        Some(Averages {
            precision: per_year.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: per_year.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: per_year.iter().map(|m| m.f1).sum::<f64>() / n,
        })
    }
}

/// Paired t-test result. Infinite statistics are serialized as strings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    #[serde(with = "extended_float")]
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub compared_to: Algorithm,
    pub precision: TTest,
    pub recall: TTest,
    pub f1: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearRecall {
    pub period: Year,
    pub hits: usize,
    pub queries: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    pub per_year: Vec<YearRecall>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub algorithm: Algorithm,
    pub k: usize,
    pub per_year: Vec<YearMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averages: Option<Averages>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<Significance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at_k: Option<Vec<RecallAtK>>,
}

impl ExperimentReport {
    fn from_years(mode: Mode, algorithm: Algorithm, k: usize, per_year: Vec<YearMetrics>) -> Self {
        ExperimentReport {
            mode,
            algorithm,
            k,
            averages: Averages::of(&per_year),
            per_year,
            significance: None,
            recall_at_k: None,
        }
    }

    /// Paired t-tests of per-year precision, recall and F1 of `self` minus
    /// `other`, matched by period. `None` when fewer than two years pair up.
    pub fn compare(&self, other: &ExperimentReport) -> Option<Significance> {
        let theirs: BTreeMap<Year, &YearMetrics> = other.per_year.iter().map(|m| (m.period, m)).collect();
        let paired: Vec<(&YearMetrics, &YearMetrics)> = self
            .per_year
            .iter()
            .filter_map(|m| theirs.get(&m.period).map(|o| (m, *o)))
            .collect();
        if paired.len() < 2 {
            return None;
        }
        let test = |f: fn(&YearMetrics) -> f64| {
            let a: Vec<f64> = paired.iter().map(|(m, _)| f(m)).collect();
            let b: Vec<f64> = paired.iter().map(|(_, o)| f(o)).collect();
            paired_t_test(&a, &b).ok()
        };
        Some(Significance {
            compared_to: other.algorithm,
            precision: test(|m| m.precision)?,
            recall: test(|m| m.recall)?,
            f1: test(|m| m.f1)?,
        })
    }
}

pub fn write_reports(reports: &[ExperimentReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(reports)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<ExperimentReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Knobs shared by every experiment mode.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub k: usize,
    pub ridge: f64,
    /// Tokens never returned as candidates (the query is always excluded).
    pub stoplist: BTreeSet<String>,
    /// Align each test model onto its training model with orthogonal
    /// Procrustes over the shared vocabulary before testing.
    pub align: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: DEFAULT_K,
            ridge: DEFAULT_RIDGE,
            stoplist: BTreeSet::new(),
            align: false,
        }
    }
}

impl EvalOptions {
    pub fn with_k(k: usize) -> Self {
        EvalOptions {
            k,
            ..Default::default()
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
    oov: usize,
    correct_rejections: usize,
}

impl std::ops::Add for Tally {
    type Output = Tally;
    fn add(self, o: Tally) -> Tally {
        Tally {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            oov: self.oov + o.oov,
            correct_rejections: self.correct_rejections + o.correct_rejections,
        }
    }
}

/// Scores one year: every location of `gold` is queried and its predicted
/// set compared to the gold targets. Out-of-vocabulary locations are
/// counted in `oov_queries` and their gold targets become false negatives.
pub fn evaluate_year(
    model: &RelationModel,
    embeddings: &EmbeddingModel,
    gold: &YearlyRelationSet,
    algorithm: Algorithm,
    stoplist: &BTreeSet<String>,
) -> Result<YearMetrics> {
    if model.projection().dim() != embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.projection().dim(),
            actual: embeddings.dim(),
        });
    }
    let exclude: HashSet<&str> = stoplist.iter().map(String::as_str).collect();
    let locations: Vec<_> = gold.entries().iter().collect();

    let tallies = locations
        .par_iter()
        .map(|(loc, targets)| -> Result<Tally> {
            let prediction = match algorithm {
                Algorithm::Baseline => model.predict_baseline(embeddings, loc.as_str(), &exclude),
                Algorithm::Threshold => model.predict(embeddings, loc.as_str(), &exclude),
            };
            let prediction = match prediction {
                Ok(p) => p,
                Err(Error::OutOfVocabulary(_)) => {
                    return Ok(Tally {
                        fn_: targets.len(),
                        oov: 1,
                        ..Tally::default()
                    })
                }
                Err(e) => return Err(e),
            };
            let predicted: BTreeSet<&str> = prediction.tokens().collect();
            let tp = predicted.iter().filter(|t| targets.contains(**t)).count();
            Ok(Tally {
                tp,
                fp: predicted.len() - tp,
                fn_: targets.len() - tp,
                oov: 0,
                correct_rejections: usize::from(predicted.is_empty() && targets.is_empty()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tallies.into_iter().fold(Tally::default(), |a, b| a + b);

    log::debug!(
        "{}: tp={} fp={} fn={} oov={} correct rejections={}",
        gold.period(),
        total.tp,
        total.fp,
        total.fn_,
        total.oov,
        total.correct_rejections
    );
    Ok(YearMetrics::from_counts(gold.period(), total.tp, total.fp, total.fn_, total.oov))
}

// (train year, test year) pairs with both a model and gold data.
fn year_pairs(
    models: &BTreeMap<Year, EmbeddingModel>,
    gold: &[YearlyRelationSet],
    mode: Mode,
) -> Result<Vec<(Year, Year)>> {
    let usable: BTreeSet<Year> = gold
        .iter()
        .map(YearlyRelationSet::period)
        .filter(|y| models.contains_key(y))
        .collect();
    let pairs: Vec<(Year, Year)> = match mode {
        Mode::Synchronic => usable.iter().map(|&y| (y, y)).collect(),
        Mode::Diachronic | Mode::RecallAtK => {
            let years: Vec<Year> = usable.iter().copied().collect();
            years
                .windows(2)
                .filter_map(|w| {
                    if w[1] == w[0] + 1 {
                        Some((w[0], w[1]))
                    } else {
                        log::warn!("skipping {} -> {}: years are not consecutive", w[0], w[1]);
                        None
                    }
                })
                .collect()
        }
    };
    let needed = if mode == Mode::Synchronic { 1 } else { 2 };
    if usable.len() < needed || pairs.is_empty() {
        return Err(Error::NotEnoughPeriods {
            needed,
            found: usable.len(),
        });
    }
    Ok(pairs)
}

fn gold_for(gold: &[YearlyRelationSet], year: Year) -> &YearlyRelationSet {
    gold.iter()
        .find(|s| s.period() == year)
        .expect("year_pairs only yields years with gold data")
}

/// A relation model trained on one year and the embeddings to test it with.
struct Trained<'a> {
    test_year: Year,
    model: RelationModel,
    test_embeddings: std::borrow::Cow<'a, EmbeddingModel>,
}

fn train_for_pair<'a>(
    models: &'a BTreeMap<Year, EmbeddingModel>,
    gold: &[YearlyRelationSet],
    (train_year, test_year): (Year, Year),
    opts: &EvalOptions,
) -> Result<Option<Trained<'a>>> {
    let train_model = &models[&train_year];
    let pairs = gold_for(gold, train_year).pairs();
    let train = TrainingSet::from_pairs(train_model, &pairs)?;
    if train.is_empty() {
        log::warn!("{train_year}: no usable training pairs, skipping");
        return Ok(None);
    }
    let model = RelationModel::train(&train, opts.ridge, opts.k, train_year.to_string())?;

    let test_model = &models[&test_year];
    let test_embeddings = if opts.align && train_year != test_year {
        let anchors = shared_vocabulary(test_model, train_model);
        let q = procrustes_align(test_model, train_model, &anchors)?;
        std::borrow::Cow::Owned(test_model.map_rows(format!("{}@aligned", test_model.label()), q.matrix())?)
    } else {
        std::borrow::Cow::Borrowed(test_model)
    };
    Ok(Some(Trained {
        test_year,
        model,
        test_embeddings,
    }))
}

/// Trains once per year pair and scores every requested algorithm.
pub fn run_experiment(
    mode: Mode,
    models: &BTreeMap<Year, EmbeddingModel>,
    gold: &[YearlyRelationSet],
    algorithms: &[Algorithm],
    opts: &EvalOptions,
) -> Result<Vec<ExperimentReport>> {
    if mode == Mode::RecallAtK {
        return Err(Error::InvalidArgument(
            "use run_recall_at_k for the recall@k mode".into(),
        ));
    }
    let pairs = year_pairs(models, gold, mode)?;
    let per_pair: Vec<Option<Vec<YearMetrics>>> = pairs
        .par_iter()
        .map(|&pair| -> Result<Option<Vec<YearMetrics>>> {
            let Some(trained) = train_for_pair(models, gold, pair, opts)? else {
                return Ok(None);
            };
            let test_gold = gold_for(gold, trained.test_year);
            algorithms
                .iter()
                .map(|&alg| evaluate_year(&trained.model, &trained.test_embeddings, test_gold, alg, &opts.stoplist))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })
        .collect::<Result<Vec<_>>>()?;

    let evaluated: Vec<Vec<YearMetrics>> = per_pair.into_iter().flatten().collect();
    if evaluated.is_empty() {
        return Err(Error::NotEnoughPeriods {
            needed: if mode == Mode::Synchronic { 1 } else { 2 },
            found: 0,
        });
    }
    Ok(algorithms
        .iter()
        .enumerate()
        .map(|(i, &alg)| {
            let per_year = evaluated.iter().map(|row| row[i].clone()).collect();
            ExperimentReport::from_years(mode, alg, opts.k, per_year)
        })
        .collect())
}

/// Trains on year `n` with `M_n` and tests on year `n + 1` with `M_{n+1}`.
pub fn run_diachronic(
    models: &BTreeMap<Year, EmbeddingModel>,
    gold: &[YearlyRelationSet],
    algorithm: Algorithm,
    opts: &EvalOptions,
) -> Result<ExperimentReport> {
    Ok(run_experiment(Mode::Diachronic, models, gold, &[algorithm], opts)?.remove(0))
}

/// Trains and tests on the same year.
pub fn run_synchronic(
    models: &BTreeMap<Year, EmbeddingModel>,
    gold: &[YearlyRelationSet],
    algorithm: Algorithm,
    opts: &EvalOptions,
) -> Result<ExperimentReport> {
    Ok(run_experiment(Mode::Synchronic, models, gold, &[algorithm], opts)?.remove(0))
}

/// Replication mode: only conflict locations are queried, and a query is a
/// hit at `k` when any of its gold targets is among the `k` nearest
/// neighbors of the projection. No thresholding.
pub fn run_recall_at_k(
    models: &BTreeMap<Year, EmbeddingModel>,
    gold: &[YearlyRelationSet],
    k_values: &[usize],
    opts: &EvalOptions,
) -> Result<ExperimentReport> {
    let mut ks: Vec<usize> = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let k_max = match ks.last() {
        Some(&k) if ks[0] > 0 => k,
        _ => return Err(Error::InvalidArgument("k values must be positive and non-empty".into())),
    };
    let opts = EvalOptions {
        k: k_max,
        ..opts.clone()
    };
    let pairs = year_pairs(models, gold, Mode::RecallAtK)?;
    let exclude: HashSet<&str> = opts.stoplist.iter().map(String::as_str).collect();

    let per_pair = pairs
        .par_iter()
        .map(|&pair| -> Result<Option<(Year, usize, Vec<usize>)>> {
            let Some(trained) = train_for_pair(models, gold, pair, &opts)? else {
                return Ok(None);
            };
            let test_gold = gold_for(gold, trained.test_year);
            let mut hits = vec![0usize; ks.len()];
            let mut queries = 0usize;
            for (loc, targets) in test_gold.conflict_locations() {
                queries += 1;
                let prediction = match trained.model.predict_baseline(&trained.test_embeddings, loc.as_str(), &exclude) {
                    Ok(p) => p,
                    Err(Error::OutOfVocabulary(_)) => continue,
                    Err(e) => return Err(e),
                };
                let first_hit = prediction
                    .candidates
                    .iter()
                    .position(|c| targets.contains(c.token.as_str()));
                if let Some(rank) = first_hit {
                    for (i, &k) in ks.iter().enumerate() {
                        if rank < k {
                            hits[i] += 1;
                        }
                    }
                }
            }
            if queries == 0 {
                log::warn!("{}: no conflict locations to query, skipping", trained.test_year);
                return Ok(None);
            }
            Ok(Some((trained.test_year, queries, hits)))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<(Year, usize, Vec<usize>)> = per_pair.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::NotEnoughPeriods { needed: 2, found: 0 });
    }

    let recall_at_k = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let per_year: Vec<YearRecall> = rows
                .iter()
                .map(|(period, queries, hits)| YearRecall {
                    period: *period,
                    hits: hits[i],
                    queries: *queries,
                    recall: ratio(hits[i], *queries),
                })
                .collect();
            let average = per_year.iter().map(|y| y.recall).sum::<f64>() / per_year.len() as f64;
            RecallAtK { k, per_year, average }
        })
        .collect();

    Ok(ExperimentReport {
        mode: Mode::RecallAtK,
        algorithm: Algorithm::Baseline,
        k: k_max,
        per_year: Vec::new(),
        averages: None,
        significance: None,
        recall_at_k: Some(recall_at_k),
    })
}

/// Two-tailed paired t-test on `a - b` with `n - 1` degrees of freedom.
///
/// All-zero differences give `t = 0, p = 1`; constant nonzero differences
/// (within relative rounding of 1e-12) give an infinite statistic and `p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);

    if diffs.iter().all(|d| *d == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0 });
    }
    // differences equal up to rounding count as constant
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if var <= (1e-12 * scale).powi(2) {
        return Ok(TTest {
            t: f64::INFINITY.copysign(mean),
            p: 0.0,
        });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::InvalidArgument(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p })
}

/// Plain-text summary: averaged P/R/F1 rows, t-tests and recall@k columns.
pub fn render_table(reports: &[ExperimentReport], dataset: &str) -> String {
    let mut out = String::new();
    let (recall, metric): (Vec<&ExperimentReport>, Vec<&ExperimentReport>) =
        reports.iter().partition(|r| r.mode == Mode::RecallAtK);

    if let Some(first) = metric.first() {
        let _ = writeln!(out, "Average {} performance (k={})", first.mode, first.k);
        let _ = writeln!(out, "{:<10} {:<10} {:>9} {:>9} {:>9}", "Dataset", "Algorithm", "Precision", "Recall", "F1");
        for r in &metric {
            if let Some(a) = r.averages {
                let _ = writeln!(
                    out,
                    "{:<10} {:<10} {:>9.2} {:>9.2} {:>9.2}",
                    dataset, r.algorithm, a.precision, a.recall, a.f1
                );
            }
        }
        for r in &metric {
            if let Some(s) = &r.significance {
                let _ = writeln!(
                    out,
                    "{} vs {}: precision t={:.3} p={:.4}; recall t={:.3} p={:.4}; F1 t={:.3} p={:.4}",
                    r.algorithm, s.compared_to, s.precision.t, s.precision.p, s.recall.t, s.recall.p, s.f1.t, s.f1.p
                );
            }
        }
    }

    for r in recall {
        let Some(rows) = &r.recall_at_k else { continue };
        let _ = writeln!(out, "Average recall of diachronic analogy inference");
        let _ = write!(out, "{:<10}", "Dataset");
        for row in rows {
            let _ = write!(out, " {:>7}", format!("@{}", row.k));
        }
        let _ = writeln!(out);
        let _ = write!(out, "{dataset:<10}");
        for row in rows {
            let _ = write!(out, " {:>7.3}", row.average);
        }
        let _ = writeln!(out);
    }
    out
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid float '{other}'"))),
            },
        }
    }
}
