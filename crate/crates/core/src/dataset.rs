//! Gold relation data: yearly `location -> {groups}` sets over a fixed
//! location universe, with frequency filtering and summary statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::Token;
use crate::error::{Error, Result};

pub type Year = i32;

/// One `(source, target)` instance of the relation in a period.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationPair {
    pub source: Token,
    pub target: Token,
    pub period: Year,
}

/// Gold data for one year. Every location of the universe has an entry;
/// peaceful locations map to the empty set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YearlyRelationSet {
    period: Year,
    entries: BTreeMap<Token, BTreeSet<Token>>,
}

impl YearlyRelationSet {
    pub fn new(period: Year, entries: BTreeMap<Token, BTreeSet<Token>>) -> Result<Self> {
        for (loc, groups) in &entries {
            if groups.contains(loc) {
                return Err(Error::InvalidArgument(format!(
                    "location '{loc}' is listed as its own target in {period}"
                )));
            }
        }
        Ok(YearlyRelationSet { period, entries })
    }

    pub fn period(&self) -> Year {
        self.period
    }

    pub fn entries(&self) -> &BTreeMap<Token, BTreeSet<Token>> {
        &self.entries
    }

    pub fn location_universe(&self) -> impl Iterator<Item = &Token> + '_ {
        self.entries.keys()
    }

    pub fn targets(&self, location: &str) -> Option<&BTreeSet<Token>> {
        self.entries.get(location)
    }

    pub fn conflict_locations(&self) -> impl Iterator<Item = (&Token, &BTreeSet<Token>)> + '_ {
        self.entries.iter().filter(|(_, g)| !g.is_empty())
    }

    pub fn pairs(&self) -> Vec<RelationPair> {
        self.conflict_locations()
            .flat_map(|(loc, groups)| {
                groups.iter().map(move |g| RelationPair {
                    source: loc.clone(),
                    target: g.clone(),
                    period: self.period,
                })
            })
            .collect()
    }

    pub fn pair_count(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationRecord {
    year: Year,
    location: String,
    #[serde(default)]
    groups: Vec<String>,
}

/// Parses line-delimited `{"year", "location", "groups"}` records.
///
/// Every location seen in any year joins the universe; years that do not
/// mention it map it to the empty set.
pub fn read_relations<R: BufRead>(reader: R, context: &str) -> Result<Vec<YearlyRelationSet>> {
    let mut by_year: BTreeMap<Year, BTreeMap<Token, BTreeSet<Token>>> = BTreeMap::new();
    let mut universe: BTreeSet<Token> = BTreeSet::new();

    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RelationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(context, i + 1, format!("malformed record: {e}")))?;
        let location = Token::normalize(&record.location)
            .map_err(|e| Error::parse(context, i + 1, format!("location: {e}")))?;
        let groups = record
            .groups
            .iter()
            .map(|g| Token::normalize(g))
            .collect::<Result<BTreeSet<_>>>()
            .map_err(|e| Error::parse(context, i + 1, format!("group: {e}")))?;
        if groups.contains(&location) {
            return Err(Error::parse(
                context,
                i + 1,
                format!("location '{location}' is listed as its own group"),
            ));
        }

        let year = by_year.entry(record.year).or_default();
        match year.get(&location) {
            Some(existing) if *existing != groups => {
                return Err(Error::ConflictingRecords {
                    year: record.year,
                    location: location.into_string(),
                })
            }
            Some(_) => {}
            None => {
                universe.insert(location.clone());
                year.insert(location, groups);
            }
        }
    }

    by_year
        .into_iter()
        .map(|(period, mut entries)| {
            for loc in &universe {
                entries.entry(loc.clone()).or_default();
            }
            YearlyRelationSet::new(period, entries)
        })
        .collect()
}

pub fn load_relations(path: impl AsRef<Path>) -> Result<Vec<YearlyRelationSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_relations(BufReader::new(file), &path.display().to_string())
}

/// Writes one record per `(year, location)`, including peaceful ones, so the
/// location universe survives a round trip.
pub fn write_relations<W: Write>(sets: &[YearlyRelationSet], mut w: W) -> Result<()> {
    for set in sets {
        for (loc, groups) in &set.entries {
            let record = RelationRecord {
                year: set.period,
                location: loc.to_string(),
                groups: groups.iter().map(Token::to_string).collect(),
            };
            serde_json::to_writer(&mut w, &record)?;
            writeln!(w).map_err(|e| Error::io("relations", e))?;
        }
    }
    w.flush().map_err(|e| Error::io("relations", e))
}

pub fn save_relations(sets: &[YearlyRelationSet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_relations(sets, BufWriter::new(file))
}

/// Per-year token frequencies.
pub type YearlyCounts = BTreeMap<Year, HashMap<String, u64>>;

/// Reads `token<TAB>count` lines. Tokens are normalized and counts of
/// tokens that normalize to the same form are summed.
pub fn read_counts<R: BufRead>(reader: R, context: &str) -> Result<HashMap<String, u64>> {
    let mut counts = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (token, count) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(context, i + 1, "expected 'token<TAB>count'"))?;
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|e| Error::parse(context, i + 1, format!("bad count: {e}")))?;
        let token = Token::normalize(token).map_err(|e| Error::parse(context, i + 1, e.to_string()))?;
        *counts.entry(token.into_string()).or_insert(0) += count;
    }
    Ok(counts)
}

/// Loads every file in `dir` whose stem is a year (e.g. `2014.tsv`).
pub fn load_counts_dir(dir: impl AsRef<Path>) -> Result<YearlyCounts> {
    let dir = dir.as_ref();
    let mut out = YearlyCounts::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(year) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<Year>().ok())
        else {
            continue;
        };
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let counts = read_counts(BufReader::new(file), &path.display().to_string())?;
        out.insert(year, counts);
    }
    Ok(out)
}

/// Drops entities whose corpus frequency in their year is below `min_count`.
///
/// Rare targets are removed; a rare location keeps its entry but loses its
/// targets for that year. Locations that are rare in every year leave the
/// universe altogether. Missing counts are treated as zero.
pub fn frequency_filter(
    sets: &[YearlyRelationSet],
    counts: &YearlyCounts,
    min_count: u64,
) -> Vec<YearlyRelationSet> {
    if min_count == 0 {
        return sets.to_vec();
    }
    let empty = HashMap::new();
    let count_in = |year: Year, token: &Token| -> u64 {
        counts.get(&year).unwrap_or(&empty).get(token.as_str()).copied().unwrap_or(0)
    };
    for set in sets {
        if !counts.contains_key(&set.period) {
            log::warn!("no frequency counts for {}; every entity counts as 0", set.period);
        }
    }

    let surviving: BTreeSet<&Token> = sets
        .iter()
        .flat_map(|s| s.entries.keys().map(move |loc| (s.period, loc)))
        .filter(|(year, loc)| count_in(*year, loc) >= min_count)
        .map(|(_, loc)| loc)
        .collect();

    sets.iter()
        .map(|set| {
            let entries = set
                .entries
                .iter()
                .filter(|(loc, _)| surviving.contains(loc))
                .map(|(loc, groups)| {
                    let kept = if count_in(set.period, loc) >= min_count {
                        groups
                            .iter()
                            .filter(|g| count_in(set.period, g) >= min_count)
                            .cloned()
                            .collect()
                    } else {
                        BTreeSet::new()
                    };
                    (loc.clone(), kept)
                })
                .collect();
            YearlyRelationSet {
                period: set.period,
                entries,
            }
        })
        .collect()
}

/// Summary statistics of a relation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub locations: usize,
    pub insurgents: usize,
    /// Unique `(location, group)` pairs across all years.
    pub conflict_pairs: usize,
    /// Share of year-`n+1` pairs absent from year `n`; needs two years.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_pairs_share: Option<f64>,
    pub conflict_locations_share: f64,
    pub insurgents_per_location: f64,
}

pub fn compute_stats(sets: &[YearlyRelationSet]) -> Result<DatasetStats> {
    if sets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sorted: Vec<&YearlyRelationSet> = sets.iter().collect();
    sorted.sort_by_key(|s| s.period);

    let locations: BTreeSet<&Token> = sorted.iter().flat_map(|s| s.entries.keys()).collect();
    let insurgents: BTreeSet<&Token> = sorted.iter().flat_map(|s| s.entries.values().flatten()).collect();
    let pair_sets: Vec<BTreeSet<(&Token, &Token)>> = sorted
        .iter()
        .map(|s| {
            s.entries
                .iter()
                .flat_map(|(loc, gs)| gs.iter().map(move |g| (loc, g)))
                .collect()
        })
        .collect();
    let unique_pairs: BTreeSet<_> = pair_sets.iter().flatten().collect();

    let new_pairs_share = (sorted.len() >= 2).then(|| {
        let (new, total) = pair_sets.windows(2).fold((0usize, 0usize), |(new, total), w| {
            (new + w[1].difference(&w[0]).count(), total + w[1].len())
        });
        if total == 0 {
            0.0
        } else {
            new as f64 / total as f64
        }
    });

    let conflict_locations_share = sorted
        .iter()
        .map(|s| {
            if s.entries.is_empty() {
                0.0
            } else {
                s.conflict_locations().count() as f64 / s.entries.len() as f64
            }
        })
        .sum::<f64>()
        / sorted.len() as f64;

    let (conflict_entries, targets) = sorted.iter().fold((0usize, 0usize), |(n, t), s| {
        (n + s.conflict_locations().count(), t + s.pair_count())
    });
    let insurgents_per_location = if conflict_entries == 0 {
        0.0
    } else {
        targets as f64 / conflict_entries as f64
    };

    Ok(DatasetStats {
        locations: locations.len(),
        insurgents: insurgents.len(),
        conflict_pairs: unique_pairs.len(),
        new_pairs_share,
        conflict_locations_share,
        insurgents_per_location,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<YearlyRelationSet>> {
        read_relations(s.as_bytes(), "inline")
    }

    fn tok(s: &str) -> Token {
        Token::normalize(s).unwrap()
    }

    #[test]
    fn afghanistan_record() {
        let sets = parse(r#"{"year": 2016, "location": "Afghanistan", "groups": ["Taliban", "Islamic State"]}"#).unwrap();
        assert_eq!(sets.len(), 1);
        let groups = sets[0].targets("afghanistan").unwrap();
        let expected: BTreeSet<Token> = [tok("taliban"), tok("islamic::state")].into_iter().collect();
        assert_eq!(groups, &expected);
    }

    #[test]
    fn absent_location_maps_to_empty() {
        let sets = parse(concat!(
            r#"{"year": 2015, "location": "Mali", "groups": ["AQIM"]}"#,
            "\n",
            r#"{"year": 2016, "location": "Yemen", "groups": ["AQAP"]}"#,
            "\n"
        ))
        .unwrap();
        assert_eq!(sets[1].period(), 2016);
        assert!(sets[1].targets("mali").unwrap().is_empty());
        assert!(sets[0].targets("yemen").unwrap().is_empty());
        assert_eq!(sets[0].location_universe().count(), 2);
    }

    #[test]
    fn malformed_and_conflicting_records() {
        assert!(matches!(parse("{not json}"), Err(Error::Parse { .. })));
        assert!(matches!(parse(r#"{"year": "x", "location": "a"}"#), Err(Error::Parse { .. })));
        assert!(matches!(parse(r#"{"year": 1, "location": "", "groups": []}"#), Err(Error::Parse { .. })));
        let dup = concat!(
            r#"{"year": 1, "location": "a", "groups": ["g"]}"#,
            "\n",
            r#"{"year": 1, "location": "A", "groups": ["h"]}"#
        );
        assert!(matches!(parse(dup), Err(Error::ConflictingRecords { year: 1, .. })));
        let same = concat!(
            r#"{"year": 1, "location": "a", "groups": ["g"]}"#,
            "\n",
            r#"{"year": 1, "location": "A", "groups": ["G"]}"#
        );
        assert_eq!(parse(same).unwrap().len(), 1);
        assert!(parse(r#"{"year": 1, "location": "a", "groups": ["A"]}"#).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let text = concat!(
            r#"{"year": 2001, "location": "a", "groups": ["g1", "g2"]}"#,
            "\n",
            r#"{"year": 2002, "location": "b", "groups": []}"#,
            "\n",
        );
        let sets = parse(text).unwrap();
        let mut buf = Vec::new();
        write_relations(&sets, &mut buf).unwrap();
        assert_eq!(read_relations(buf.as_slice(), "buf").unwrap(), sets);
    }

    #[test]
    fn filter_threshold() {
        let sets = parse(r#"{"year": 1, "location": "a", "groups": ["g", "h"]}"#).unwrap();
        let mut year: HashMap<String, u64> = HashMap::new();
        year.insert("a".into(), 100);
        year.insert("g".into(), 24);
        year.insert("h".into(), 25);
        let counts: YearlyCounts = [(1, year)].into_iter().collect();
        let out = frequency_filter(&sets, &counts, 25);
        let expected: BTreeSet<Token> = [tok("h")].into_iter().collect();
        assert_eq!(out[0].targets("a").unwrap(), &expected);
        assert_eq!(frequency_filter(&sets, &counts, 0), sets);
        // rare everywhere: location leaves the universe
        assert_eq!(frequency_filter(&sets, &YearlyCounts::new(), 1)[0].location_universe().count(), 0);
    }

    #[test]
    fn stats_new_pairs_share() {
        let sets = parse(concat!(
            r#"{"year": 1, "location": "A", "groups": ["g1"]}"#,
            "\n",
            r#"{"year": 2, "location": "A", "groups": ["g1", "g2"]}"#,
        ))
        .unwrap();
        let stats = compute_stats(&sets).unwrap();
        assert_eq!(stats.new_pairs_share, Some(0.5));
        assert_eq!(stats.conflict_pairs, 2);
        assert_eq!(stats.insurgents, 2);
        assert_eq!(stats.locations, 1);
        assert!((stats.insurgents_per_location - 1.5).abs() < 1e-15);
        assert_eq!(stats.conflict_locations_share, 1.0);

        let single = compute_stats(&sets[..1]).unwrap();
        assert_eq!(single.new_pairs_share, None);
        let json = serde_json::to_string(&single).unwrap();
        assert!(!json.contains("new_pairs_share"));
        assert!(matches!(compute_stats(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn stats_unchanged_years() {
        let sets = parse(concat!(
            r#"{"year": 1, "location": "A", "groups": ["g1"]}"#,
            "\n",
            r#"{"year": 2, "location": "A", "groups": ["g1"]}"#,
        ))
        .unwrap();
        assert_eq!(compute_stats(&sets).unwrap().new_pairs_share, Some(0.0));
    }

    #[test]
    fn counts_parsing() {
        let c = read_counts("Taliban_PROPN\t10\ntaliban_NOUN\t5\nmali\t3\n".as_bytes(), "c").unwrap();
        assert_eq!(c["taliban"], 15);
        assert_eq!(c["mali"], 3);
        assert!(read_counts("mali 3\n".as_bytes(), "c").is_err());
        assert!(read_counts("mali\tx\n".as_bytes(), "c").is_err());
    }
}
