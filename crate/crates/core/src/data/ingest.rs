use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Interaction;
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["user_id", "item_id", "category_id", "timestamp"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Users with fewer sets are dropped at sessionization.
    pub min_sets: usize,
    /// Larger sets keep only their most recent items.
    pub max_set_size: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            min_sets: 4,
            max_set_size: 50,
        }
    }
}

/// Raw id → dense id, for items and categories.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexMaps {
    pub items: BTreeMap<String, usize>,
    pub categories: BTreeMap<String, usize>,
}

impl IndexMaps {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(f, self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(f).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
    /// 1-based line numbers of dropped rows (header is line 1).
    pub dropped_lines: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub events: Vec<Interaction>,
    pub maps: IndexMaps,
    pub summary: IngestSummary,
}

struct RawRow {
    user: u64,
    item: i64,
    category: i64,
    time: i64,
}

fn parse_row(rec: &csv::StringRecord) -> Option<RawRow> {
    if rec.len() != HEADER.len() || rec.iter().any(|f| f.trim().is_empty()) {
        return None;
    }
    let time: i64 = rec[3].trim().parse().ok()?;
    if time < 0 {
        return None;
    }
    Some(RawRow {
        user: rec[0].trim().parse().ok()?,
        item: rec[1].trim().parse().ok()?,
        category: rec[2].trim().parse().ok()?,
        time,
    })
}

/// Reads a `user_id,item_id,category_id,timestamp` CSV. Unparseable rows are
/// dropped and reported; item and category ids are densely re-indexed in
/// ascending raw-id order. Duplicate rows are kept.
pub fn ingest_events(path: &Path, _cfg: &IngestConfig) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader.headers().map_err(|e| Error::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Malformed {
            line: 1,
            reason: format!("expected header {}", HEADER.join(",")),
        });
    }

    let mut summary = IngestSummary::default();
    let mut raw = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        summary.rows_read += 1;
        match rec.ok().as_ref().and_then(parse_row) {
            Some(r) => raw.push(r),
            None => {
                summary.rows_dropped += 1;
                summary.dropped_lines.push(line);
            }
        }
    }
    summary.rows_kept = raw.len();

    let items: BTreeSet<i64> = raw.iter().map(|r| r.item).collect();
    let categories: BTreeSet<i64> = raw.iter().map(|r| r.category).collect();
    let item_index: BTreeMap<i64, usize> = items.iter().enumerate().map(|(d, &r)| (r, d)).collect();
    let cat_index: BTreeMap<i64, usize> = categories.iter().enumerate().map(|(d, &r)| (r, d)).collect();

    let events = raw
        .iter()
        .map(|r| Interaction {
            user: r.user,
            item: item_index[&r.item],
            category: cat_index[&r.category],
            time: r.time,
        })
        .collect();

    let maps = IndexMaps {
        items: item_index.iter().map(|(r, d)| (r.to_string(), *d)).collect(),
        categories: cat_index.iter().map(|(r, d)| (r.to_string(), *d)).collect(),
    };
    Ok(Ingested {
        events,
        maps,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_valid_rows() {
        let f = write_tmp("user_id,item_id,category_id,timestamp\n1,10,5,100\n1,20,5,200\n2,10,5,300\n");
        let out = ingest_events(f.path(), &IngestConfig::default()).unwrap();
        assert_eq!(out.events.len(), 3);
        assert_eq!(out.summary.rows_dropped, 0);
        assert_eq!(out.maps.items.len(), 2);
        assert_eq!(out.maps.items["10"], 0);
        assert_eq!(out.maps.items["20"], 1);
    }

    #[test]
    fn non_numeric_timestamp_is_dropped_and_reported() {
        let f = write_tmp("user_id,item_id,category_id,timestamp\n1,10,5,100\n1,20,5,yesterday\n");
        let out = ingest_events(f.path(), &IngestConfig::default()).unwrap();
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.summary.rows_dropped, 1);
        assert_eq!(out.summary.dropped_lines, vec![3]);
    }

    #[test]
    fn blank_fields_and_short_rows_are_dropped() {
        let f = write_tmp("user_id,item_id,category_id,timestamp\n1,,5,100\n1,2\n1,3,4,5\n");
        let out = ingest_events(f.path(), &IngestConfig::default()).unwrap();
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.summary.dropped_lines, vec![2, 3]);
    }

    #[test]
    fn duplicates_are_preserved() {
        let f = write_tmp("user_id,item_id,category_id,timestamp\n1,10,5,100\n1,10,5,100\n");
        let out = ingest_events(f.path(), &IngestConfig::default()).unwrap();
        assert_eq!(out.events.len(), 2);
    }

    #[test]
    fn crlf_line_endings() {
        let f = write_tmp("user_id,item_id,category_id,timestamp\r\n1,10,5,100\r\n2,11,6,200\r\n");
        let out = ingest_events(f.path(), &IngestConfig::default()).unwrap();
        assert_eq!(out.events.len(), 2);
        assert_eq!(out.events[1].time, 200);
    }

    #[test]
    fn reindex_is_numeric_not_lexicographic() {
        let f = write_tmp("user_id,item_id,category_id,timestamp\n1,10,1,1\n1,9,1,2\n");
        let out = ingest_events(f.path(), &IngestConfig::default()).unwrap();
        assert_eq!(out.maps.items["9"], 0);
        assert_eq!(out.maps.items["10"], 1);
    }

    #[test]
    fn wrong_header_is_malformed() {
        let f = write_tmp("user,item,cat,ts\n1,10,5,100\n");
        assert!(matches!(
            ingest_events(f.path(), &IngestConfig::default()),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = ingest_events(Path::new("/definitely/not/here.csv"), &IngestConfig::default());
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn maps_json_shape() {
        let f = write_tmp("user_id,item_id,category_id,timestamp\n1,10,5,100\n");
        let out = ingest_events(f.path(), &IngestConfig::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&out.maps).unwrap();
        assert_eq!(v["items"]["10"], 0);
        assert_eq!(v["categories"]["5"], 0);
    }
}
