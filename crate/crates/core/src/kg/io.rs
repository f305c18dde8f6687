//! TAB-separated triple and link files, and word-vector files.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KnowledgeGraph, Triple};
use crate::error::{read_text, Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Data lines of a file as `(1-based line number, line)`, skipping blanks and `#` comments.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Reads `head<TAB>relation<TAB>tail` lines.
pub fn load_triples(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_triples(&text, path)
}

pub fn parse_triples(text: &str, path: &Path) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::new();
    for (line_no, line) in data_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        kg.add_named_triple(fields[0], fields[1], fields[2]);
    }
    if kg.num_triples() == 0 {
        return Err(Error::EmptyGraph(path.to_path_buf()));
    }
    kg.rebuild_neighbors();
    Ok(kg)
}

/// Writes the original-kind triples of `kg`, optionally with extra columns per triple.
pub fn write_triples(
    path: impl AsRef<Path>,
    kg: &KnowledgeGraph,
    triples: &[Triple],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in triples {
        writeln!(
            w,
            "{}\t{}\t{}",
            kg.entity_name(t.head),
            kg.relation(t.relation).name,
            kg.entity_name(t.tail)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes filled triples with a fourth `filled_epoch` column.
pub fn write_recovered(
    path: impl AsRef<Path>,
    kg: &KnowledgeGraph,
    filled: &[(Triple, usize)],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (t, epoch) in filled {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            kg.entity_name(t.head),
            kg.relation(t.relation).name,
            kg.entity_name(t.tail),
            epoch
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkOrigin {
    GivenSeed,
    Bootstrapped,
    GoldEval,
}

/// Source-to-target entity pairs with their provenance. Duplicates are dropped on insert.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AlignmentLinks {
    pairs: Vec<(usize, usize)>,
    origins: Vec<LinkOrigin>,
    #[serde(skip)]
    seen: HashSet<(usize, usize)>,
}

impl AlignmentLinks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, origin: LinkOrigin) -> Self {
        let mut links = Self::new();
        for p in pairs {
            links.push(p, origin);
        }
        links
    }

    pub fn push(&mut self, pair: (usize, usize), origin: LinkOrigin) -> bool {
        if !self.seen.insert(pair) {
            return false;
        }
        self.pairs.push(pair);
        self.origins.push(origin);
        true
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn origins(&self) -> &[LinkOrigin] {
        &self.origins
    }

    pub fn contains(&self, pair: &(usize, usize)) -> bool {
        self.seen.contains(pair)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, origin: LinkOrigin) -> usize {
        self.origins.iter().filter(|o| **o == origin).count()
    }

    /// Splits off the pairs at positions `at..` into a new link set.
    pub fn split_off(&mut self, at: usize) -> Self {
        let pairs = self.pairs.split_off(at);
        let origins = self.origins.split_off(at);
        for p in &pairs {
            self.seen.remove(p);
        }
        let seen = pairs.iter().copied().collect();
        Self {
            pairs,
            origins,
            seen,
        }
    }

    pub fn with_origin(&self, origin: LinkOrigin) -> Self {
        Self::from_pairs(self.pairs.iter().copied(), origin)
    }
}

/// Reads `source<TAB>target` lines, resolving names in the two graphs.
pub fn load_links(
    path: impl AsRef<Path>,
    source: &KnowledgeGraph,
    target: &KnowledgeGraph,
    origin: LinkOrigin,
) -> Result<AlignmentLinks> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut links = AlignmentLinks::new();
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let s = source.entity_id(fields[0]).ok_or_else(|| {
            parse_err(
                path,
                line_no,
                format!("unknown source entity `{}`", fields[0]),
            )
        })?;
        let t = target.entity_id(fields[1]).ok_or_else(|| {
            parse_err(
                path,
                line_no,
                format!("unknown target entity `{}`", fields[1]),
            )
        })?;
        links.push((s, t), origin);
    }
    Ok(links)
}

pub fn write_links(
    path: impl AsRef<Path>,
    links: &AlignmentLinks,
    source: &KnowledgeGraph,
    target: &KnowledgeGraph,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for &(s, t) in links.pairs() {
        writeln!(w, "{}\t{}", source.entity_name(s), target.entity_name(t))?;
    }
    w.flush()?;
    Ok(())
}

/// Token vectors read from a `token v1 .. vd` text file.
#[derive(Clone, Debug, Default)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(self.dim, v.len()));
        }
        self.vectors.insert(token.into(), v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Loads a word-vector file with an optional `count dim` header line.
pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectors> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut vectors: Option<WordVectors> = None;
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if vectors.is_none()
            && fields.len() == 2
            && fields.iter().all(|f| f.parse::<usize>().is_ok())
        {
            vectors = Some(WordVectors::new(fields[1].parse().expect("checked")));
            continue;
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line_no, "non-finite vector entry"));
        }
        let wv = vectors.get_or_insert_with(|| WordVectors::new(values.len()));
        if values.len() != wv.dim {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} values, found {}", wv.dim, values.len()),
            ));
        }
        wv.vectors.insert(fields[0].to_string(), values);
    }
    vectors.ok_or(Error::Empty("word-vector file"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_and_dedups() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.tsv", "# header\nA\tr1\tB\nB\tr2\tC\n\nA\tr1\tB\n");
        let kg = load_triples(&p).unwrap();
        assert_eq!(
            (kg.num_entities(), kg.num_relations(), kg.num_triples()),
            (3, 2, 2)
        );
    }

    #[test]
    fn reports_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.tsv", "A\tr1\tB\nA\tr1\n");
        match load_triples(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.tsv", "# nothing\n");
        assert!(matches!(load_triples(&p), Err(Error::EmptyGraph(_))));
    }

    #[test]
    fn links_resolve_names() {
        let dir = tempfile::tempdir().unwrap();
        let s = KnowledgeGraph::from_named_triples([("a", "r", "b")]);
        let t = KnowledgeGraph::from_named_triples([("x", "r", "y")]);
        let p = write(&dir, "l.tsv", "b\tx\na\ty\nb\tx\n");
        let links = load_links(&p, &s, &t, LinkOrigin::GoldEval).unwrap();
        assert_eq!(links.pairs(), &[(1, 0), (0, 1)]);
        let bad = write(&dir, "bad.tsv", "a\tz\n");
        assert!(load_links(&bad, &s, &t, LinkOrigin::GoldEval).is_err());
    }

    #[test]
    fn word_vectors_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "v.txt", "2 3\nparis 1 0 0\nlondon 0 1.5 -2\n");
        let wv = load_word_vectors(&p).unwrap();
        assert_eq!(wv.dim(), 3);
        assert_eq!(wv.get("london"), Some(&[0.0, 1.5, -2.0][..]));
        let p = write(&dir, "w.txt", "paris 1 0\nrome 0 1\n");
        assert_eq!(load_word_vectors(&p).unwrap().len(), 2);
        let p = write(&dir, "x.txt", "paris 1 0\nrome 0 1 2\n");
        assert!(load_word_vectors(&p).is_err());
    }

    #[test]
    fn split_off_keeps_membership_consistent() {
        let mut a = AlignmentLinks::from_pairs([(0, 0), (1, 1), (2, 2)], LinkOrigin::GoldEval);
        let b = a.split_off(2);
        assert!(a.contains(&(1, 1)) && !a.contains(&(2, 2)));
        assert!(b.contains(&(2, 2)));
        assert!(a.push((2, 2), LinkOrigin::GivenSeed));
    }
}
