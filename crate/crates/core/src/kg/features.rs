//! Entity name features for the first GNN layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{KnowledgeGraph, WordVectors};
use crate::error::{Error, Result};
use crate::grad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureProvenance {
    LoadedVectors,
    HashedFallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NameFeatureMatrix {
    pub features: Tensor,
    pub provenance: FeatureProvenance,
}

/// `http://x/Ronald_Colman` -> `["ronald", "colman"]`.
pub fn name_tokens(name: &str) -> Vec<String> {
    let tail = name.rsplit('/').next().unwrap_or(name);
    tail.replace('_', " ")
        .to_lowercase()
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Unit-norm pseudo-random vector determined by `(token, seed)`.
pub fn hashed_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    let mut rng = ChaCha8Rng::from_seed(key);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = crate::grad::tensor::norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Mean of token vectors per entity. Tokens absent from `vectors` (or all
/// tokens when no source is given) use [`hashed_vector`].
pub fn name_features(
    kg: &KnowledgeGraph,
    vectors: Option<&WordVectors>,
    dim: usize,
    seed: u64,
) -> Result<NameFeatureMatrix> {
    if dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    if let Some(v) = vectors {
        if v.dim() != dim {
            return Err(Error::Config(format!(
                "word vectors have dimension {}, expected {dim}",
                v.dim()
            )));
        }
    }
    let mut features = Tensor::zeros(&[kg.num_entities(), dim]);
    for (i, name) in kg.entities().iter().enumerate() {
        let mut tokens = name_tokens(name);
        if tokens.is_empty() {
            tokens.push(String::new());
        }
        let row = features.row_mut(i);
        for tok in &tokens {
            match vectors.and_then(|v| v.get(tok)) {
                Some(v) => row.iter_mut().zip(v).for_each(|(a, b)| *a += b),
                None => row
                    .iter_mut()
                    .zip(hashed_vector(tok, dim, seed))
                    .for_each(|(a, b)| *a += b),
            }
        }
        let k = tokens.len() as f64;
        row.iter_mut().for_each(|a| *a /= k);
    }
    features.ensure_finite("name features")?;
    Ok(NameFeatureMatrix {
        features,
        provenance: if vectors.is_some() {
            FeatureProvenance::LoadedVectors
        } else {
            FeatureProvenance::HashedFallback
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(name_tokens("http://x/Ronald_Colman"), ["ronald", "colman"]);
        assert_eq!(name_tokens("Paris"), ["paris"]);
        assert_eq!(name_tokens("a/b/__X__y"), ["x", "y"]);
    }

    #[test]
    fn same_name_same_row_across_graphs() {
        let s = KnowledgeGraph::from_named_triples([("http://en/Paris", "r", "http://en/France")]);
        let t = KnowledgeGraph::from_named_triples([("http://fr/France", "r", "http://fr/Paris")]);
        let fs = name_features(&s, None, 16, 5).unwrap();
        let ft = name_features(&t, None, 16, 5).unwrap();
        assert_eq!(fs.features.row(0), ft.features.row(1));
        assert_eq!(fs.provenance, FeatureProvenance::HashedFallback);
        let n = crate::grad::tensor::norm(fs.features.row(0));
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_of_loaded_vectors() {
        let kg = KnowledgeGraph::from_named_triples([("http://x/Ronald_Colman", "r", "y")]);
        let mut wv = WordVectors::new(2);
        wv.insert("ronald", vec![1.0, 3.0]).unwrap();
        wv.insert("colman", vec![3.0, -1.0]).unwrap();
        let f = name_features(&kg, Some(&wv), 2, 0).unwrap();
        assert_eq!(f.features.row(0), &[2.0, 1.0]);
        assert_eq!(f.provenance, FeatureProvenance::LoadedVectors);
        // "y" is missing from the vectors and falls back to hashing.
        assert_eq!(f.features.row(1), &hashed_vector("y", 2, 0)[..]);
    }

    #[test]
    fn dimension_mismatch() {
        let kg = KnowledgeGraph::from_named_triples([("a", "r", "b")]);
        let wv = WordVectors::new(3);
        assert!(matches!(
            name_features(&kg, Some(&wv), 4, 0),
            Err(Error::Config(_))
        ));
    }
}
