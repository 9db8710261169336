//! Item vocabulary and record encoding.
//!
//! Vocabulary index 0 is the padding item and index 1 the shared
//! out-of-vocabulary item; both have all-zero multimodal vectors. Real items
//! start at index 2 in the order of the fused embedding table.

use std::collections::HashMap;

use crate::data::InteractionRecord;
use crate::error::{Error, Result};
use crate::fusion::{ItemEmbeddingTable, Strategy};
use crate::model::{Hyperparams, UnknownItemPolicy};
use crate::tensor::Tensor;

pub const PADDING_INDEX: usize = 0;
pub const OOV_INDEX: usize = 1;
const FIRST_ITEM_INDEX: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    /// Vocabulary indices, oldest first.
    pub history: Vec<usize>,
    pub target: usize,
    pub label: u8,
}

/// Frozen multimodal vectors aligned with the model's vocabulary.
#[derive(Debug, Clone)]
pub struct ItemFeatures {
    item_ids: Vec<String>,
    index: HashMap<String, usize>,
    /// `[vocab × d_fused]`
    fused: Tensor,
    strategy: Option<Strategy>,
}

impl ItemFeatures {
    pub fn from_table(table: &ItemEmbeddingTable) -> Result<Self> {
        Self::aligned(&table.item_ids, table)
    }

    /// Uses `vocabulary` as the item order, pulling each item's vector from
    /// `table`. Items in `table` but not in `vocabulary` are unknown to the model.
    pub fn aligned(vocabulary: &[String], table: &ItemEmbeddingTable) -> Result<Self> {
        let width = table.width();
        let rows: HashMap<&str, usize> = table
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = vec![0.0; (vocabulary.len() + FIRST_ITEM_INDEX) * width];
        let mut index = HashMap::with_capacity(vocabulary.len());
        for (k, id) in vocabulary.iter().enumerate() {
            let Some(&row) = rows.get(id.as_str()) else {
                return Err(Error::UnknownItem(id.clone()));
            };
            let v = FIRST_ITEM_INDEX + k;
            data[v * width..(v + 1) * width].copy_from_slice(table.vectors.row(row));
            if index.insert(id.clone(), v).is_some() {
                return Err(Error::invalid(format!("duplicate item id {id:?} in vocabulary")));
            }
        }
        Ok(Self {
            item_ids: vocabulary.to_vec(),
            index,
            fused: Tensor::new(&[vocabulary.len() + FIRST_ITEM_INDEX, width], data)?,
            strategy: table.strategy,
        })
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn vocab_size(&self) -> usize {
        self.fused.rows()
    }

    pub fn fused_width(&self) -> usize {
        self.fused.cols()
    }

    pub fn fused(&self) -> &Tensor {
        &self.fused
    }

    pub fn strategy(&self) -> Option<Strategy> {
        self.strategy
    }

    pub fn model_shape(&self) -> crate::model::ModelShape {
        crate::model::ModelShape {
            vocab_size: self.vocab_size(),
            fused_width: self.fused_width(),
        }
    }

    pub fn index_of(&self, id: &str, policy: UnknownItemPolicy) -> Result<usize> {
        match (self.index.get(id), policy) {
            (Some(&i), _) => Ok(i),
            (None, UnknownItemPolicy::MapToOov) => Ok(OOV_INDEX),
            (None, UnknownItemPolicy::Strict) => Err(Error::UnknownItem(id.to_string())),
        }
    }

    /// Maps ids to indices and keeps the most recent `max_history_len` history items.
    pub fn encode(&self, record: &InteractionRecord, hyper: &Hyperparams) -> Result<EncodedRecord> {
        let policy = hyper.unknown_items;
        let start = record.history.len().saturating_sub(hyper.max_history_len);
        let history = record.history[start..]
            .iter()
            .map(|id| self.index_of(id, policy))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedRecord {
            history,
            target: self.index_of(&record.target, policy)?,
            label: record.label,
        })
    }

    pub fn encode_all(&self, records: &[InteractionRecord], hyper: &Hyperparams) -> Result<Vec<EncodedRecord>> {
        records.iter().map(|r| self.encode(r, hyper)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ItemEmbeddingTable {
        ItemEmbeddingTable {
            item_ids: vec!["a".into(), "b".into(), "c".into()],
            vectors: Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            strategy: Some(Strategy::V4),
        }
    }

    fn record(history: &[&str], target: &str) -> InteractionRecord {
        InteractionRecord {
            user_id: "u".into(),
            history: history.iter().map(|s| s.to_string()).collect(),
            target: target.into(),
            label: 1,
        }
    }

    #[test]
    fn reserved_rows_are_zero() {
        let f = ItemFeatures::from_table(&table()).unwrap();
        assert_eq!(f.vocab_size(), 5);
        assert_eq!(f.fused().row(PADDING_INDEX), &[0.0, 0.0]);
        assert_eq!(f.fused().row(OOV_INDEX), &[0.0, 0.0]);
        assert_eq!(f.fused().row(3), &[3.0, 4.0]);
    }

    #[test]
    fn encode_truncates_to_most_recent() {
        let f = ItemFeatures::from_table(&table()).unwrap();
        let hyper = Hyperparams {
            max_history_len: 2,
            ..Hyperparams::default()
        };
        let e = f.encode(&record(&["a", "b", "c"], "a"), &hyper).unwrap();
        assert_eq!(e.history, vec![3, 4]);
        assert_eq!(e.target, 2);
    }

    #[test]
    fn unknown_items_follow_policy() {
        let f = ItemFeatures::from_table(&table()).unwrap();
        let mut hyper = Hyperparams::default();
        let e = f.encode(&record(&["zzz"], "a"), &hyper).unwrap();
        assert_eq!(e.history, vec![OOV_INDEX]);
        hyper.unknown_items = UnknownItemPolicy::Strict;
        assert!(matches!(
            f.encode(&record(&["zzz"], "a"), &hyper),
            Err(Error::UnknownItem(_))
        ));
    }

    #[test]
    fn aligned_reorders_and_requires_vocabulary() {
        let vocab = vec!["c".to_string(), "a".to_string()];
        let f = ItemFeatures::aligned(&vocab, &table()).unwrap();
        assert_eq!(f.fused().row(2), &[5.0, 6.0]);
        assert_eq!(f.index_of("b", UnknownItemPolicy::MapToOov).unwrap(), OOV_INDEX);
        assert!(ItemFeatures::aligned(&["x".to_string()], &table()).is_err());
    }
}
