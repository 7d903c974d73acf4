use std::collections::{BTreeMap, BTreeSet, HashMap};

use onetox::dataset::{read_counts, read_relations, write_relations, YearlyCounts};
use onetox::{compute_stats, frequency_filter, Token, Year, YearlyRelationSet};
use proptest::prelude::*;

type Raw = Vec<Vec<Vec<usize>>>;

fn raw_strategy() -> impl Strategy<Value = Raw> {
    (1usize..6, 1usize..5).prop_flat_map(|(n_loc, years)| {
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(0usize..6, 0..4), n_loc),
            years,
        )
    })
}

fn build(raw: &Raw) -> Vec<YearlyRelationSet> {
    raw.iter()
        .enumerate()
        .map(|(y, locs)| {
            let entries = locs
                .iter()
                .enumerate()
                .map(|(i, gs)| {
                    let targets = gs.iter().map(|g| Token::normalize(&format!("g{g}")).unwrap()).collect();
                    (Token::normalize(&format!("l{i}")).unwrap(), targets)
                })
                .collect();
            YearlyRelationSet::new(2000 + y as Year, entries).unwrap()
        })
        .collect()
}

fn counts_strategy() -> impl Strategy<Value = Vec<HashMap<String, u64>>> {
    let names: Vec<String> = (0..6).map(|i| format!("l{i}")).chain((0..6).map(|j| format!("g{j}"))).collect();
    prop::collection::vec(
        prop::collection::vec(0u64..60, names.len()).prop_map(move |c| names.iter().cloned().zip(c).collect()),
        5,
    )
}

fn as_yearly(counts: &[HashMap<String, u64>]) -> YearlyCounts {
    counts.iter().enumerate().map(|(y, c)| (2000 + y as Year, c.clone())).collect()
}

proptest! {
    #[test]
    fn relations_round_trip(raw in raw_strategy()) {
        let sets = build(&raw);
        let mut buf = Vec::new();
        write_relations(&sets, &mut buf).unwrap();
        prop_assert_eq!(read_relations(buf.as_slice(), "buf").unwrap(), sets);
    }

    #[test]
    fn filter_is_idempotent_and_sound(raw in raw_strategy(), counts in counts_strategy(), min in 0u64..50) {
        let sets = build(&raw);
        let counts = as_yearly(&counts);
        let once = frequency_filter(&sets, &counts, min);
        prop_assert_eq!(&frequency_filter(&once, &counts, min), &once);
        for set in &once {
            let c = &counts[&set.period()];
            for (loc, targets) in set.entries() {
                if !targets.is_empty() {
                    prop_assert!(c[loc.as_str()] >= min);
                }
                for t in targets {
                    prop_assert!(c[t.as_str()] >= min);
                }
            }
        }
    }

    #[test]
    fn stats_match_direct_counts(raw in raw_strategy()) {
        let stats = compute_stats(&build(&raw)).unwrap();
        let year_pairs: Vec<BTreeSet<(usize, usize)>> = raw
            .iter()
            .map(|locs| locs.iter().enumerate().flat_map(|(i, gs)| gs.iter().map(move |&g| (i, g))).collect())
            .collect();
        let all: BTreeSet<(usize, usize)> = year_pairs.iter().flatten().copied().collect();
        let groups: BTreeSet<usize> = all.iter().map(|p| p.1).collect();
        prop_assert_eq!(stats.locations, raw[0].len());
        prop_assert_eq!(stats.insurgents, groups.len());
        prop_assert_eq!(stats.conflict_pairs, all.len());

        let mut share = 0.0;
        let (mut conflict, mut pairs) = (0usize, 0usize);
        for (locs, ps) in raw.iter().zip(&year_pairs) {
            let c = locs.iter().filter(|gs| !gs.is_empty()).count();
            share += c as f64 / locs.len() as f64;
            conflict += c;
            pairs += ps.len();
        }
        prop_assert!((stats.conflict_locations_share - share / raw.len() as f64).abs() < 1e-12);
        let per_loc = if conflict == 0 { 0.0 } else { pairs as f64 / conflict as f64 };
        prop_assert!((stats.insurgents_per_location - per_loc).abs() < 1e-12);

        if raw.len() < 2 {
            prop_assert_eq!(stats.new_pairs_share, None);
        } else {
            let mut new = 0usize;
            let mut total = 0usize;
            for w in year_pairs.windows(2) {
                new += w[1].iter().filter(|p| !w[0].contains(p)).count();
                total += w[1].len();
            }
            let want = if total == 0 { 0.0 } else { new as f64 / total as f64 };
            prop_assert!((stats.new_pairs_share.unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn every_year_shares_the_universe(raw in raw_strategy()) {
        let sets = build(&raw);
        let universe: Vec<&Token> = sets[0].location_universe().collect();
        for set in &sets {
            prop_assert_eq!(set.location_universe().collect::<Vec<_>>(), universe.clone());
            prop_assert_eq!(set.pairs().len(), set.pair_count());
            prop_assert!(set.conflict_locations().all(|(_, t)| !t.is_empty()));
        }
    }
}

#[test]
fn sparse_records_fill_the_universe() {
    let text = r#"{"year": 2001, "location": "Algeria", "groups": ["AQIM"]}
{"year": 2002, "location": "Mali", "groups": ["Ansar Dine", "AQIM"]}
{"year": 2002, "location": "Algeria", "groups": []}
"#;
    let sets = read_relations(text.as_bytes(), "inline").unwrap();
    assert_eq!(sets.len(), 2);
    assert_eq!(sets[0].targets("mali").map(BTreeSet::len), Some(0));
    assert_eq!(sets[1].targets("mali").unwrap().len(), 2);
    assert!(sets[1].targets("mali").unwrap().contains("ansar::dine"));
}

#[test]
fn duplicate_records_must_agree() {
    let same = "{\"year\":1,\"location\":\"a\",\"groups\":[\"x\"]}\n{\"year\":1,\"location\":\"A\",\"groups\":[\"x\"]}\n";
    assert!(read_relations(same.as_bytes(), "inline").is_ok());
    let clash = "{\"year\":1,\"location\":\"a\",\"groups\":[\"x\"]}\n{\"year\":1,\"location\":\"a\",\"groups\":[\"y\"]}\n";
    assert!(read_relations(clash.as_bytes(), "inline").is_err());
}

#[test]
fn counts_are_normalized_and_summed() {
    let counts = read_counts("Algeria\t10\nalgeria_NNP\t5\nAQIM\t3\n".as_bytes(), "inline").unwrap();
    assert_eq!(counts["algeria"], 15);
    assert_eq!(counts["aqim"], 3);

    let gold = read_relations(
        "{\"year\":1,\"location\":\"algeria\",\"groups\":[\"aqim\",\"gia\"]}\n".as_bytes(),
        "inline",
    )
    .unwrap();
    let yearly: YearlyCounts = BTreeMap::from([(1, counts)]);
    let kept = frequency_filter(&gold, &yearly, 4);
    assert!(kept[0].targets("algeria").unwrap().is_empty());
    let kept = frequency_filter(&gold, &yearly, 3);
    assert_eq!(kept[0].targets("algeria").unwrap().len(), 1);
}
