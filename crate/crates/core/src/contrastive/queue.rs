use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::models::Embedding;

/// Fixed-capacity FIFO of past key embeddings.
#[derive(Clone, Debug)]
pub struct NegativeQueue {
    capacity: usize,
    items: VecDeque<Embedding>,
}

impl NegativeQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig(
                "queue capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    /// Appends `e`, evicting the oldest entry when full.
    pub fn push(&mut self, e: Embedding) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Embedding> {
        self.items.iter()
    }
}
