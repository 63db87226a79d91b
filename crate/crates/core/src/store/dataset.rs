use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cmdp::{ActionId, ContextId, Observation};

/// One teacher label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub obs: Observation,
    pub action: ActionId,
    /// Hidden context of the labelled state; kept for analysis only.
    pub context: ContextId,
    pub iteration: usize,
}

/// Append-only multiset of (observation, teacher action) labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawDataset", into = "RawDataset")]
pub struct AggDataset {
    num_actions: usize,
    records: Vec<Record>,
    counts: BTreeMap<Observation, Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    num_actions: usize,
    records: Vec<Record>,
}

impl From<RawDataset> for AggDataset {
    fn from(raw: RawDataset) -> Self {
        let mut ds = AggDataset::new(raw.num_actions);
        ds.extend(raw.records);
        ds
    }
}

impl From<AggDataset> for RawDataset {
    fn from(ds: AggDataset) -> Self {
        RawDataset {
            num_actions: ds.num_actions,
            records: ds.records,
        }
    }
}

impl AggDataset {
    pub fn new(num_actions: usize) -> Self {
        AggDataset {
            num_actions,
            records: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn push(&mut self, record: Record) {
        assert!(
            record.action < self.num_actions,
            "label {} out of range",
            record.action
        );
        self.counts
            .entry(record.obs)
            .or_insert_with(|| vec![0; self.num_actions])[record.action] += 1;
        self.records.push(record);
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = Record>) {
        for r in records {
            self.push(r);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Per-observation label histograms.
    pub fn label_counts(&self) -> &BTreeMap<Observation, Vec<u64>> {
        &self.counts
    }

    pub fn count_at(&self, obs: &Observation) -> u64 {
        self.counts.get(obs).map_or(0, |c| c.iter().sum())
    }

    pub fn contains_observation(&self, obs: &Observation) -> bool {
        self.counts.contains_key(obs)
    }

    pub fn observation_support(&self) -> BTreeSet<Observation> {
        self.counts.keys().copied().collect()
    }
}
