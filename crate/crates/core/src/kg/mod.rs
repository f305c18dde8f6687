//! Knowledge graphs: loading, augmentation, name features, and synthetic pairs.

mod features;
mod graph;
mod io;
mod synth;

pub use features::{
    hashed_vector, name_features, name_tokens, FeatureProvenance, NameFeatureMatrix,
};
pub use graph::{KnowledgeGraph, Relation, RelationKind, Triple, SELF_LOOP};
pub use io::{
    load_links, load_triples, load_word_vectors, parse_triples, write_links, write_recovered,
    write_triples, AlignmentLinks, LinkOrigin, WordVectors,
};
pub use synth::{sparsify, synthesize, synthesize_pair, SynthConfig, SyntheticPair};
