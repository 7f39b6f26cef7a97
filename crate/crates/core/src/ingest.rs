//! Impression log parsing and extraction of query-document pairs that appeared
//! at several ranks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{Appearance, ImpressionRecord, PairGroup, Platform};
use crate::error::{Error, Result};

/// Which groups survive [`select_estimation_pairs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Exactly two appearances at two distinct ranks, exactly one clicked.
    #[default]
    ExactlyTwoRanksOneClick,
    /// At least two distinct ranks and at least one click.
    AtLeastTwoRanksOnePlusClicks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub require_same_day: bool,
    pub require_same_price: bool,
    pub exclude_auctions: bool,
    pub platform_filter: Option<Platform>,
    pub sort_type_filter: Option<String>,
    pub selection_mode: SelectionMode,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            require_same_day: true,
            require_same_price: true,
            exclude_auctions: true,
            platform_filter: None,
            sort_type_filter: None,
            selection_mode: SelectionMode::default(),
        }
    }
}

/// Counts of what each filter removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionSummary {
    pub records_seen: usize,
    pub records_dropped_platform: usize,
    pub records_dropped_sort_type: usize,
    pub groups_seen: usize,
    pub groups_dropped_auction: usize,
    pub groups_dropped_price: usize,
    pub groups_dropped_selection: usize,
    pub groups_retained: usize,
}

impl fmt::Display for ExtractionSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "records={} dropped_platform={} dropped_sort_type={} groups={} dropped_auction={} dropped_price={} dropped_selection={} retained={}",
            self.records_seen,
            self.records_dropped_platform,
            self.records_dropped_sort_type,
            self.groups_seen,
            self.groups_dropped_auction,
            self.groups_dropped_price,
            self.groups_dropped_selection,
            self.groups_retained,
        )
    }
}

/// Parses a JSONL impression log. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_log<R: BufRead>(reader: R) -> Result<Vec<ImpressionRecord>> {
    parse_log_inner(reader, None)
}

/// Like [`parse_log`] but also rejects ranks deeper than `rank_max`.
pub fn parse_log_with_rank_max<R: BufRead>(reader: R, rank_max: u32) -> Result<Vec<ImpressionRecord>> {
    parse_log_inner(reader, Some(rank_max))
}

fn parse_log_inner<R: BufRead>(reader: R, rank_max: Option<u32>) -> Result<Vec<ImpressionRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ImpressionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        check_rank(record.rank, rank_max, line_no)?;
        out.push(record);
    }
    Ok(out)
}

fn check_rank(rank: u32, rank_max: Option<u32>, line: usize) -> Result<()> {
    if rank < 1 {
        return Err(Error::Validation {
            line,
            message: "rank must be >= 1".into(),
        });
    }
    if let Some(max) = rank_max {
        if rank > max {
            return Err(Error::Validation {
                line,
                message: format!("rank {rank} exceeds rank_max {max}"),
            });
        }
    }
    Ok(())
}

type GroupKey = (String, String, Option<i64>);

/// Groups records by query-document pair (and day, under the same-day rule)
/// and drops groups failing the price and auction filters. Output is sorted
/// by key.
pub fn group_pairs(records: &[ImpressionRecord], cfg: &ExtractionConfig) -> (Vec<PairGroup>, ExtractionSummary) {
    let mut summary = ExtractionSummary {
        records_seen: records.len(),
        ..Default::default()
    };
    let mut buckets: BTreeMap<GroupKey, Vec<&ImpressionRecord>> = BTreeMap::new();
    for rec in records {
        if cfg.platform_filter.is_some_and(|p| p != rec.platform) {
            summary.records_dropped_platform += 1;
            continue;
        }
        if cfg.sort_type_filter.as_ref().is_some_and(|s| *s != rec.sort_type) {
            summary.records_dropped_sort_type += 1;
            continue;
        }
        let day = cfg.require_same_day.then_some(rec.day);
        buckets
            .entry((rec.query_id.clone(), rec.doc_id.clone(), day))
            .or_default()
            .push(rec);
    }

    summary.groups_seen = buckets.len();
    let mut groups = Vec::with_capacity(buckets.len());
    for ((query_id, doc_id, day), recs) in buckets {
        if cfg.exclude_auctions && recs.iter().any(|r| r.is_auction) {
            summary.groups_dropped_auction += 1;
            continue;
        }
        if cfg.require_same_price && !price_constant(&recs) {
            summary.groups_dropped_price += 1;
            continue;
        }
        groups.push(PairGroup {
            query_id,
            doc_id,
            day,
            appearances: recs.iter().map(|r| Appearance::new(r.rank, r.clicked)).collect(),
        });
    }
    summary.groups_retained = groups.len();
    (groups, summary)
}

fn price_constant(recs: &[&ImpressionRecord]) -> bool {
    let Some(first) = recs[0].price else {
        return false;
    };
    recs.iter().all(|r| r.price == Some(first))
}

/// Whether a group satisfies the selection predicate of `mode`.
pub fn is_selected(group: &PairGroup, mode: SelectionMode) -> bool {
    let distinct = group.distinct_ranks().len();
    let clicks = group.n_clicks();
    match mode {
        SelectionMode::ExactlyTwoRanksOneClick => group.appearances.len() == 2 && distinct == 2 && clicks == 1,
        SelectionMode::AtLeastTwoRanksOnePlusClicks => distinct >= 2 && clicks >= 1,
    }
}

/// Keeps the groups that carry information about propensity ratios.
pub fn select_estimation_pairs(groups: &[PairGroup], cfg: &ExtractionConfig) -> Vec<PairGroup> {
    groups
        .iter()
        .filter(|g| is_selected(g, cfg.selection_mode))
        .cloned()
        .collect()
}

/// [`group_pairs`] followed by [`select_estimation_pairs`].
pub fn extract(records: &[ImpressionRecord], cfg: &ExtractionConfig) -> (Vec<PairGroup>, ExtractionSummary) {
    let (groups, mut summary) = group_pairs(records, cfg);
    let selected = select_estimation_pairs(&groups, cfg);
    summary.groups_dropped_selection = groups.len() - selected.len();
    summary.groups_retained = selected.len();
    (selected, summary)
}

/// Reads pair groups written by [`write_pairs`].
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<PairGroup>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let group: PairGroup = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if group.appearances.is_empty() {
            return Err(Error::Validation {
                line: line_no,
                message: "pair group has no appearances".into(),
            });
        }
        for a in &group.appearances {
            check_rank(a.rank, None, line_no)?;
        }
        out.push(group);
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(mut writer: W, groups: &[PairGroup]) -> std::io::Result<()> {
    for g in groups {
        serde_json::to_writer(&mut writer, g)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// Flattens groups back into impression records with neutral metadata, so
/// synthetic data can be fed through the same extraction path as real logs.
pub fn groups_to_records(groups: &[PairGroup]) -> Vec<ImpressionRecord> {
    use crate::domain::Price;
    groups
        .iter()
        .flat_map(|g| {
            g.appearances.iter().map(move |a| ImpressionRecord {
                query_id: g.query_id.clone(),
                doc_id: g.doc_id.clone(),
                rank: a.rank,
                clicked: a.clicked,
                day: g.day.unwrap_or(0),
                price: Some(Price::new(1000.0).expect("finite")),
                is_auction: false,
                platform: Platform::Web,
                sort_type: "best_match".into(),
            })
        })
        .collect()
}

pub fn write_records<W: Write>(mut writer: W, records: &[ImpressionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Price;
    use proptest::prelude::*;

    fn rec(q: &str, d: &str, rank: u32, clicked: bool) -> ImpressionRecord {
        ImpressionRecord {
            query_id: q.into(),
            doc_id: d.into(),
            rank,
            clicked,
            day: 7,
            price: Some(Price::new(999.0).unwrap()),
            is_auction: false,
            platform: Platform::Web,
            sort_type: "best_match".into(),
        }
    }

    #[test]
    fn parses_single_line() {
        let line = r#"{"query_id":"q1","doc_id":"d1","rank":3,"clicked":true,"day":7,"is_auction":false,"platform":"web","sort_type":"best_match"}"#;
        let recs = parse_log(line.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].rank, 3);
        assert!(recs[0].clicked);
        assert_eq!(recs[0].price, None);
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_log("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn rank_zero_is_rejected_with_line() {
        let input = concat!(
            r#"{"query_id":"q1","doc_id":"d1","rank":3,"clicked":true,"day":7,"is_auction":false,"platform":"web","sort_type":"s"}"#,
            "\n",
            r#"{"query_id":"q1","doc_id":"d1","rank":0,"clicked":true,"day":7,"is_auction":false,"platform":"web","sort_type":"s"}"#,
        );
        match parse_log(input.as_bytes()) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = "\n{\"query_id\": 3}\n";
        match parse_log(input.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rank_max_enforced() {
        let line = r#"{"query_id":"q1","doc_id":"d1","rank":501,"clicked":true,"day":7,"is_auction":false,"platform":"web","sort_type":"s"}"#;
        assert!(parse_log_with_rank_max(line.as_bytes(), 500).is_err());
        assert!(parse_log_with_rank_max(line.as_bytes(), 501).is_ok());
    }

    #[test]
    fn groups_same_pair() {
        let recs = vec![rec("q1", "d1", 2, true), rec("q1", "d1", 5, false)];
        let (groups, summary) = group_pairs(&recs, &ExtractionConfig::default());
        assert_eq!(groups.len(), 1);
        assert_eq!(
            groups[0].appearances,
            vec![Appearance::new(2, true), Appearance::new(5, false)]
        );
        assert_eq!(summary.groups_retained, 1);
    }

    #[test]
    fn price_change_drops_group() {
        let mut b = rec("q1", "d1", 5, false);
        b.price = Some(Price::new(1000.0).unwrap());
        let recs = vec![rec("q1", "d1", 2, true), b.clone()];
        let (groups, summary) = group_pairs(&recs, &ExtractionConfig::default());
        assert!(groups.is_empty());
        assert_eq!(summary.groups_dropped_price, 1);

        let cfg = ExtractionConfig {
            require_same_price: false,
            ..Default::default()
        };
        assert_eq!(group_pairs(&recs, &cfg).0.len(), 1);
    }

    #[test]
    fn missing_price_drops_group() {
        let mut b = rec("q1", "d1", 5, false);
        b.price = None;
        let (groups, _) = group_pairs(&[rec("q1", "d1", 2, true), b], &ExtractionConfig::default());
        assert!(groups.is_empty());
    }

    #[test]
    fn auctions_dropped() {
        let mut b = rec("q1", "d1", 5, false);
        b.is_auction = true;
        let (groups, summary) = group_pairs(&[rec("q1", "d1", 2, true), b], &ExtractionConfig::default());
        assert!(groups.is_empty());
        assert_eq!(summary.groups_dropped_auction, 1);
    }

    #[test]
    fn distinct_docs_distinct_groups() {
        let recs = vec![rec("q1", "d1", 2, true), rec("q1", "d2", 5, false)];
        let (groups, _) = group_pairs(&recs, &ExtractionConfig::default());
        assert_eq!(groups.len(), 2);
    }

    #[test]
    fn same_day_rule_splits_days() {
        let mut b = rec("q1", "d1", 5, false);
        b.day = 8;
        let recs = vec![rec("q1", "d1", 2, true), b];
        assert_eq!(group_pairs(&recs, &ExtractionConfig::default()).0.len(), 2);
        let cfg = ExtractionConfig {
            require_same_day: false,
            ..Default::default()
        };
        let (groups, _) = group_pairs(&recs, &cfg);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].day, None);
    }

    #[test]
    fn platform_and_sort_filters() {
        let mut m = rec("q1", "d1", 5, false);
        m.platform = Platform::Mobile;
        let mut s = rec("q2", "d1", 5, false);
        s.sort_type = "price_asc".into();
        let recs = vec![rec("q1", "d1", 2, true), m, s];
        let cfg = ExtractionConfig {
            platform_filter: Some(Platform::Web),
            sort_type_filter: Some("best_match".into()),
            ..Default::default()
        };
        let (groups, summary) = group_pairs(&recs, &cfg);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].appearances.len(), 1);
        assert_eq!(summary.records_dropped_platform, 1);
        assert_eq!(summary.records_dropped_sort_type, 1);
    }

    #[test]
    fn strict_selection_examples() {
        let cfg = ExtractionConfig::default();
        let keep = PairGroup::from_pairs("q", "d", &[(2, true), (5, false)]);
        let no_click = PairGroup::from_pairs("q", "d", &[(2, false), (5, false)]);
        let one_rank = PairGroup::from_pairs("q", "d", &[(4, true), (4, false)]);
        let three = PairGroup::from_pairs("q", "d", &[(2, true), (5, false), (7, false)]);
        let two_clicks = PairGroup::from_pairs("q", "d", &[(2, true), (5, true)]);
        let out = select_estimation_pairs(&[keep.clone(), no_click, one_rank, three, two_clicks], &cfg);
        assert_eq!(out, vec![keep]);
    }

    #[test]
    fn relaxed_selection() {
        let cfg = ExtractionConfig {
            selection_mode: SelectionMode::AtLeastTwoRanksOnePlusClicks,
            ..Default::default()
        };
        let three = PairGroup::from_pairs("q", "d", &[(2, true), (5, false), (7, true)]);
        let one_rank = PairGroup::from_pairs("q", "d", &[(4, true), (4, false)]);
        let no_click = PairGroup::from_pairs("q", "d", &[(2, false), (5, false)]);
        assert_eq!(select_estimation_pairs(&[three.clone(), one_rank, no_click], &cfg), vec![three]);
    }

    #[test]
    fn pairs_jsonl_round_trip() {
        let groups = vec![
            PairGroup::from_pairs("q1", "d1", &[(2, true), (5, false)]),
            PairGroup {
                day: Some(3),
                ..PairGroup::from_pairs("q2", "d9", &[(1, false), (4, true)])
            },
        ];
        let mut buf = Vec::new();
        write_pairs(&mut buf, &groups).unwrap();
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), groups);
    }

    #[test]
    fn flattened_groups_regroup_identically() {
        let groups = vec![
            PairGroup::from_pairs("q1", "d1", &[(2, true), (5, false)]),
            PairGroup::from_pairs("q1", "d2", &[(3, false), (1, true)]),
        ];
        let recs = groups_to_records(&groups);
        let (regrouped, _) = extract(&recs, &ExtractionConfig::default());
        let strip: Vec<_> = regrouped.into_iter().map(|g| PairGroup { day: None, ..g }).collect();
        assert_eq!(strip, groups);
    }

    fn arb_group() -> impl Strategy<Value = PairGroup> {
        prop::collection::vec((1u32..8, any::<bool>()), 1..5).prop_map(|a| PairGroup::from_pairs("q", "d", &a))
    }

    proptest! {
        #[test]
        fn selection_is_a_filter(groups in prop::collection::vec(arb_group(), 0..30), strict in any::<bool>()) {
            let mode = if strict { SelectionMode::ExactlyTwoRanksOneClick } else { SelectionMode::AtLeastTwoRanksOnePlusClicks };
            let cfg = ExtractionConfig { selection_mode: mode, ..Default::default() };
            let out = select_estimation_pairs(&groups, &cfg);
            prop_assert!(out.iter().all(|g| is_selected(g, mode)));
            // subsequence
            let mut it = groups.iter();
            for g in &out {
                prop_assert!(it.any(|x| x == g));
            }
        }
    }
}
