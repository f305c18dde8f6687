use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SELF_LOOP: &str = "__self__";
const INVERSE_SUFFIX: &str = "^-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    Original,
    /// Inverse of the original relation with the given index.
    Inverse(usize),
    SelfLoop,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub kind: RelationKind,
}

/// Interned entities and relations with a deduplicated triple set.
///
/// Entity and relation indices are dense and assigned in first-seen order.
/// After [`KnowledgeGraph::augment`] the relation table is laid out as
/// `[originals | inverses | self-loop]`, so the inverse of original relation
/// `r` is `r + num_original_relations()`.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_index: HashMap<String, usize>,
    relations: Vec<Relation>,
    relation_index: HashMap<String, usize>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    neighbors: Vec<Vec<(usize, usize)>>,
    augmented: bool,
    num_original_relations: usize,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.triples == other.triples
            && self.augmented == other.augmented
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from string triples, deduplicating repeats.
    pub fn from_named_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut kg = Self::new();
        for (h, r, t) in triples {
            kg.add_named_triple(h, r, t);
        }
        kg.rebuild_neighbors();
        kg
    }

    pub fn intern_entity(&mut self, name: &str) -> usize {
        if let Some(&i) = self.entity_index.get(name) {
            return i;
        }
        let i = self.entities.len();
        self.entities.push(name.to_string());
        self.entity_index.insert(name.to_string(), i);
        self.neighbors.push(Vec::new());
        i
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        if let Some(&i) = self.relation_index.get(name) {
            return i;
        }
        let i = self.relations.len();
        self.relations.push(Relation {
            name: name.to_string(),
            kind: RelationKind::Original,
        });
        self.relation_index.insert(name.to_string(), i);
        self.num_original_relations += 1;
        i
    }

    /// Adds an original triple by name. Returns `false` for duplicates.
    /// The neighbor index is not refreshed; call [`Self::rebuild_neighbors`].
    pub fn add_named_triple(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.intern_entity(head);
        let r = self.intern_relation(relation);
        let t = self.intern_entity(tail);
        self.insert(Triple::new(h, r, t))
    }

    fn insert(&mut self, triple: Triple) -> bool {
        if self.triple_set.insert(triple) {
            self.triples.push(triple);
            true
        } else {
            false
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relations before augmentation (equal to `num_relations` until then).
    pub fn num_original_relations(&self) -> usize {
        self.num_original_relations
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn entity_name(&self, i: usize) -> &str {
        &self.entities[i]
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, i: usize) -> &Relation {
        &self.relations[i]
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    /// Triples whose relation is original-kind.
    pub fn original_triples(&self) -> impl Iterator<Item = &Triple> + '_ {
        self.triples
            .iter()
            .filter(move |t| self.relations[t.relation].kind == RelationKind::Original)
    }

    /// Index of the inverse relation of an original relation, if augmented.
    pub fn inverse_of(&self, relation: usize) -> Option<usize> {
        match self.relations.get(relation)?.kind {
            RelationKind::Original if self.augmented => {
                Some(relation + self.num_original_relations)
            }
            RelationKind::Inverse(r) => Some(r),
            _ => None,
        }
    }

    pub fn self_loop(&self) -> Option<usize> {
        self.augmented.then(|| 2 * self.num_original_relations)
    }

    /// `(q, r)` pairs with `<p, r, q>` or `<q, r, p>` in the triple set.
    pub fn neighbors(&self, p: usize) -> &[(usize, usize)] {
        &self.neighbors[p]
    }

    pub fn rebuild_neighbors(&mut self) {
        let mut sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); self.entities.len()];
        for t in &self.triples {
            sets[t.head].insert((t.tail, t.relation));
            sets[t.tail].insert((t.head, t.relation));
        }
        self.neighbors = sets.into_iter().map(|s| s.into_iter().collect()).collect();
    }

    /// Adds inverse triples `<t, r^-1, h>` and one self-loop `<p, T, p>` per entity.
    pub fn augment(&self) -> Result<Self> {
        if self.augmented
            || self
                .relations
                .iter()
                .any(|r| r.kind != RelationKind::Original)
        {
            return Err(Error::AlreadyAugmented);
        }
        let mut out = self.clone();
        let n_rel = self.relations.len();
        for (r, rel) in self.relations.iter().enumerate() {
            let name = format!("{}{INVERSE_SUFFIX}", rel.name);
            out.relation_index.insert(name.clone(), n_rel + r);
            out.relations.push(Relation {
                name,
                kind: RelationKind::Inverse(r),
            });
        }
        out.relation_index.insert(SELF_LOOP.to_string(), 2 * n_rel);
        out.relations.push(Relation {
            name: SELF_LOOP.to_string(),
            kind: RelationKind::SelfLoop,
        });
        for t in &self.triples {
            out.insert(Triple::new(t.tail, t.relation + n_rel, t.head));
        }
        for p in 0..self.entities.len() {
            out.insert(Triple::new(p, 2 * n_rel, p));
        }
        out.augmented = true;
        out.rebuild_neighbors();
        Ok(out)
    }

    /// Inserts an original-kind triple together with its inverse.
    /// Returns `false` if the triple was already present.
    pub fn insert_with_inverse(&mut self, triple: Triple) -> Result<bool> {
        let inv = self.inverse_triple(&triple)?;
        if self.contains(&triple) {
            return Ok(false);
        }
        self.insert(triple);
        self.insert(inv);
        Ok(true)
    }

    /// Removes an original-kind triple and its inverse.
    pub fn remove_with_inverse(&mut self, triple: &Triple) -> Result<bool> {
        let inv = self.inverse_triple(triple)?;
        if !self.triple_set.remove(triple) {
            return Ok(false);
        }
        self.triple_set.remove(&inv);
        self.triples.retain(|t| t != triple && *t != inv);
        Ok(true)
    }

    fn inverse_triple(&self, triple: &Triple) -> Result<Triple> {
        if self.relations.get(triple.relation).map(|r| r.kind) != Some(RelationKind::Original) {
            return Err(Error::Config(format!(
                "relation {} is not an original relation",
                triple.relation
            )));
        }
        let inv = self
            .inverse_of(triple.relation)
            .ok_or_else(|| Error::Config("graph is not augmented".into()))?;
        Ok(Triple::new(triple.tail, inv, triple.head))
    }

    /// Same entity and relation tables with a different set of original triples.
    pub(crate) fn with_triples(&self, triples: Vec<Triple>) -> Self {
        let mut out = self.clone();
        out.triple_set = triples.iter().copied().collect();
        out.triples = triples;
        out.rebuild_neighbors();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> KnowledgeGraph {
        KnowledgeGraph::from_named_triples([("A", "r1", "B"), ("B", "r2", "C")])
    }

    #[test]
    fn interning_is_first_seen() {
        let kg = small();
        assert_eq!(kg.entities(), &["A", "B", "C"]);
        assert_eq!(kg.relation_id("r2"), Some(1));
        assert_eq!(kg.num_triples(), 2);
    }

    #[test]
    fn augment_counts() {
        let kg = KnowledgeGraph::from_named_triples([("A", "r", "B")]);
        let aug = kg.augment().unwrap();
        assert_eq!((aug.num_triples(), aug.num_relations()), (4, 3));
        let aug = small().augment().unwrap();
        assert_eq!((aug.num_triples(), aug.num_relations()), (7, 5));
        assert!(matches!(aug.augment(), Err(Error::AlreadyAugmented)));
    }

    #[test]
    fn augment_layout() {
        let aug = small().augment().unwrap();
        assert_eq!(aug.relation(2).kind, RelationKind::Inverse(0));
        assert_eq!(aug.self_loop(), Some(4));
        assert_eq!(aug.inverse_of(1), Some(3));
        assert!(aug.contains(&Triple::new(1, 2, 0)));
        for p in 0..3 {
            assert!(aug.neighbors(p).contains(&(p, 4)));
        }
        // A -r1-> B: B sees (A, r1) and (A, r1^-1).
        assert!(aug.neighbors(1).contains(&(0, 0)));
        assert!(aug.neighbors(1).contains(&(0, 2)));
    }

    #[test]
    fn fill_and_unfill_round_trip() {
        let mut aug = small().augment().unwrap();
        let before = aug.triples().to_vec();
        let t = Triple::new(0, 1, 2);
        assert!(aug.insert_with_inverse(t).unwrap());
        assert!(aug.contains(&Triple::new(2, 3, 0)));
        assert!(!aug.insert_with_inverse(t).unwrap());
        assert!(aug.remove_with_inverse(&t).unwrap());
        assert_eq!(aug.triples(), &before[..]);
        assert!(aug.insert_with_inverse(Triple::new(0, 2, 1)).is_err());
    }
}
