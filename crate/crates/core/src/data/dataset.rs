use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sessionize, CategoryId, IngestConfig, Interaction, SetSequence};
use crate::error::{Error, Result};

/// A sessionized corpus plus the item → category map it was built with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_items: usize,
    pub n_categories: usize,
    pub item_categories: Vec<CategoryId>,
    pub sequences: Vec<SetSequence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub sets: usize,
    pub categories: usize,
}

impl Dataset {
    /// Sessionizes `events`. Catalog size is the largest dense id seen; an
    /// item's category is the one on its first event.
    pub fn from_events(events: &[Interaction], cfg: &IngestConfig) -> Result<Self> {
        let sequences = sessionize(events, cfg)?;
        let n_items = events.iter().map(|e| e.item + 1).max().unwrap_or(0);
        let n_categories = events.iter().map(|e| e.category + 1).max().unwrap_or(0);
        let mut first: BTreeMap<usize, CategoryId> = BTreeMap::new();
        for e in events {
            first.entry(e.item).or_insert(e.category);
        }
        let item_categories = (0..n_items).map(|i| first.get(&i).copied().unwrap_or(0)).collect();
        Ok(Dataset {
            n_items,
            n_categories,
            item_categories,
            sequences,
        })
    }

    pub fn stats(&self) -> DatasetStats {
        let mut items = vec![false; self.n_items];
        let mut cats = vec![false; self.n_categories];
        let mut sets = 0;
        for s in &self.sequences {
            sets += s.sets.len();
            for t in &s.sets {
                for &i in &t.items {
                    items[i] = true;
                    cats[self.item_categories[i]] = true;
                }
            }
        }
        DatasetStats {
            users: self.sequences.len(),
            items: items.iter().filter(|x| **x).count(),
            sets,
            categories: cats.iter().filter(|x| **x).count(),
        }
    }

    /// Every observed set across users.
    pub fn all_sets(&self) -> impl Iterator<Item = &super::TemporalSet> {
        self.sequences.iter().flat_map(|s| &s.sets)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let ds: Dataset =
            serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Format(e.to_string()))?;
        if ds.item_categories.len() != ds.n_items {
            return Err(Error::Format("item_categories length differs from n_items".into()));
        }
        Ok(ds)
    }
}
