//! Row layout of tables that hold both graphs: source rows first, then target rows.

use serde::{Deserialize, Serialize};

use crate::kg::KnowledgeGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLayout {
    pub source_entities: usize,
    pub target_entities: usize,
    pub source_relations: usize,
    pub target_relations: usize,
}

impl JointLayout {
    pub fn new(source: &KnowledgeGraph, target: &KnowledgeGraph) -> Self {
        Self {
            source_entities: source.num_entities(),
            target_entities: target.num_entities(),
            source_relations: source.num_relations(),
            target_relations: target.num_relations(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.source_entities + self.target_entities
    }

    pub fn num_relations(&self) -> usize {
        self.source_relations + self.target_relations
    }

    pub fn entity_row(&self, side: Side, i: usize) -> usize {
        match side {
            Side::Source => i,
            Side::Target => self.source_entities + i,
        }
    }

    pub fn relation_row(&self, side: Side, r: usize) -> usize {
        match side {
            Side::Source => r,
            Side::Target => self.source_relations + r,
        }
    }

    pub fn entity_range(&self, side: Side) -> std::ops::Range<usize> {
        match side {
            Side::Source => 0..self.source_entities,
            Side::Target => self.source_entities..self.num_entities(),
        }
    }

    pub fn relation_range(&self, side: Side) -> std::ops::Range<usize> {
        match side {
            Side::Source => 0..self.source_relations,
            Side::Target => self.source_relations..self.num_relations(),
        }
    }
}
