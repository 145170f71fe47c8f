//! Bounded replay queues: `q_0` for the majority class (capacity `m`),
//! `q_1..q_n` for minority classes and one novel buffer (capacity `l` each).
//!
//! Instances are filed under the class the model predicted, not their true
//! class. The optional ground-truth label travels with each item for scoring
//! only and is reachable solely through [`QueueItem::ground_truth_for_eval`].

use std::collections::VecDeque;
use std::io::Write;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QueueItem {
    pub features: Vec<f64>,
    pub arrival: u64,
    truth: Option<usize>,
}

impl QueueItem {
    pub fn new(features: Vec<f64>, arrival: u64, truth: Option<usize>) -> Self {
        Self {
            features,
            arrival,
            truth,
        }
    }

    /// Ground-truth label carried for evaluation. Never used for training or
    /// detection.
    pub fn ground_truth_for_eval(&self) -> Option<usize> {
        self.truth
    }
}

/// FIFO queue that evicts its oldest item when full.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassQueue {
    capacity: usize,
    items: VecDeque<QueueItem>,
}

impl ClassQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    /// Appends, returning the evicted item if the queue was full.
    pub fn push(&mut self, item: QueueItem) -> Option<QueueItem> {
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn items(&self) -> impl ExactSizeIterator<Item = &QueueItem> + '_ {
        self.items.iter()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(|i| i.features.clone()).collect()
    }

    /// Keeps only the items at `indices` (ascending), preserving order.
    pub fn retain_indices(&mut self, indices: &[usize]) -> Result<()> {
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.last().is_some_and(|&i| i >= self.len()) {
            return Err(Error::Internal("retain indices must be ascending and in range".into()));
        }
        let old = std::mem::take(&mut self.items);
        let mut keep = indices.iter().peekable();
        for (i, item) in old.into_iter().enumerate() {
            if keep.peek() == Some(&&i) {
                keep.next();
                self.items.push_back(item);
            }
        }
        Ok(())
    }
}

/// Destination of an append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Class `0` is the majority queue; `i >= 1` is minority queue `q_i`.
    Class(usize),
    Novel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMemory {
    majority: ClassQueue,
    minorities: Vec<ClassQueue>,
    novel: ClassQueue,
    minority_capacity: usize,
}

impl DynamicMemory {
    /// Memory with `minority_count` minority queues.
    pub fn new(majority_capacity: usize, minority_capacity: usize, minority_count: usize) -> Result<Self> {
        if majority_capacity == 0 || minority_capacity == 0 {
            return Err(Error::config("queue capacities must be positive"));
        }
        if minority_capacity > majority_capacity {
            return Err(Error::config("minority capacity l must not exceed m"));
        }
        Ok(Self {
            majority: ClassQueue::new(majority_capacity),
            minorities: (0..minority_count).map(|_| ClassQueue::new(minority_capacity)).collect(),
            novel: ClassQueue::new(minority_capacity),
            minority_capacity,
        })
    }

    /// Number of known classes (`n + 1`).
    pub fn class_count(&self) -> usize {
        self.minorities.len() + 1
    }

    pub fn minority_count(&self) -> usize {
        self.minorities.len()
    }

    pub fn queue(&self, class: usize) -> Option<&ClassQueue> {
        if class == 0 {
            Some(&self.majority)
        } else {
            self.minorities.get(class - 1)
        }
    }

    pub fn queue_mut(&mut self, class: usize) -> Option<&mut ClassQueue> {
        if class == 0 {
            Some(&mut self.majority)
        } else {
            self.minorities.get_mut(class - 1)
        }
    }

    pub fn novel_buffer(&self) -> &ClassQueue {
        &self.novel
    }

    pub fn append(&mut self, slot: Slot, item: QueueItem) -> Result<()> {
        let n = self.class_count();
        let q = match slot {
            Slot::Novel => &mut self.novel,
            Slot::Class(c) => self
                .queue_mut(c)
                .ok_or_else(|| Error::Internal(format!("no queue for class {c} (have {n})")))?,
        };
        q.push(item);
        Ok(())
    }

    pub fn is_novel_full(&self) -> bool {
        self.novel.is_full()
    }

    /// Turns the full novel buffer into minority queue `q_{n+1}` and opens a
    /// fresh buffer. Returns the new class index.
    pub fn promote_novel(&mut self) -> Result<usize> {
        if !self.novel.is_full() {
            return Err(Error::Precondition(format!(
                "novel buffer holds {} of {} items",
                self.novel.len(),
                self.novel.capacity()
            )));
        }
        let full = std::mem::replace(&mut self.novel, ClassQueue::new(self.minority_capacity));
        self.minorities.push(full);
        Ok(self.minorities.len())
    }

    /// Every stored instance of q_0..q_n tagged with its queue index.
    pub fn snapshot_for_training(&self) -> Vec<(Vec<f64>, usize)> {
        (0..self.class_count())
            .flat_map(|c| {
                self.queue(c)
                    .into_iter()
                    .flat_map(ClassQueue::items)
                    .map(move |it| (it.features.clone(), c))
            })
            .collect()
    }

    pub fn total_stored(&self) -> usize {
        self.majority.len() + self.minorities.iter().map(ClassQueue::len).sum::<usize>() + self.novel.len()
    }

    /// `m + (n + 1) * l`: the storage bound for the current class count.
    pub fn capacity_bound(&self) -> usize {
        self.majority.capacity() + (self.minorities.len() + 1) * self.minority_capacity
    }

    /// Writes `timestep,queue_id,f1..fd` rows. The novel buffer is
    /// `queue_id = n + 1`.
    pub fn export_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let width = self.majority.items().next().map_or(0, |i| i.features.len());
        let mut header = vec!["timestep".to_string(), "queue_id".to_string()];
        header.extend((1..=width).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        let n = self.class_count();
        let queues = (0..n).filter_map(|c| self.queue(c).map(|q| (c, q))).chain([(n, &self.novel)]);
        for (id, q) in queues {
            for item in q.items() {
                let mut row = vec![item.arrival.to_string(), id.to_string()];
                row.extend(item.features.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
