//! Loading and indexing of the multi-view dataset: per-user token documents,
//! an undirected friendship edge list, and optional ±1 interest labels.
//!
//! Users file: one JSON object per line,
//! `{"id": "u1", "docs": [["tok", "tok"], []], "label": 1}` where `label` is
//! `1`, `-1`, `null` or absent. Edges file: one friendship per line, two
//! whitespace-separated user ids.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Label> {
        match v {
            1 => Some(Label::Pos),
            -1 => Some(Label::Neg),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }

    pub fn value(self) -> f64 {
        self.sign() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub id: String,
    /// Token ids per document; documents may be empty.
    pub docs: Vec<Vec<u32>>,
    pub label: Option<Label>,
}

impl UserRecord {
    pub fn n_words(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }
}

/// Dense bijection between token strings and ids `0..V`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Inserts `token` if absent and returns its id.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(id) = self.id(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }
}

/// Canonical undirected edges `(i, j)` with `i < j`, sorted and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeList {
    pairs: Vec<(usize, usize)>,
}

impl EdgeList {
    /// Canonicalizes and deduplicates. Self-loops are rejected.
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidConfig(format!("self-loop on user {a}")));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(EdgeList { pairs: out })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.pairs.binary_search(&(i.min(j), i.max(j))).is_ok()
    }
}

/// One endpoint of a positive link: edge index plus which side of the
/// canonical pair this user is (`0` = lower index, `1` = higher).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HalfLink {
    pub edge: usize,
    pub side: usize,
}

/// Validated, integer-coded dataset. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    users: Vec<UserRecord>,
    vocab: Vocabulary,
    edges: EdgeList,
    adjacency: Vec<Vec<usize>>,
    half_links: Vec<Vec<HalfLink>>,
    layout: DocLayout,
}

/// Flat document/word indexing used by the samplers.
#[derive(Debug, Clone, Default)]
pub struct DocLayout {
    /// `user_docs[i]..user_docs[i+1]` are user i's global doc ids.
    pub user_docs: Vec<usize>,
    /// `doc_words[d]..doc_words[d+1]` are doc d's global word ids.
    pub doc_words: Vec<usize>,
    pub doc_user: Vec<usize>,
    pub tokens: Vec<u32>,
}

impl DocLayout {
    fn build(users: &[UserRecord]) -> Self {
        let mut layout = DocLayout {
            user_docs: vec![0],
            doc_words: vec![0],
            ..Default::default()
        };
        for (i, u) in users.iter().enumerate() {
            for doc in &u.docs {
                layout.tokens.extend_from_slice(doc);
                layout.doc_words.push(layout.tokens.len());
                layout.doc_user.push(i);
            }
            layout.user_docs.push(layout.doc_user.len());
        }
        layout
    }

    pub fn n_docs(&self) -> usize {
        self.doc_user.len()
    }

    pub fn n_words(&self) -> usize {
        self.tokens.len()
    }

    pub fn doc_range(&self, d: usize) -> std::ops::Range<usize> {
        self.doc_words[d]..self.doc_words[d + 1]
    }

    pub fn user_doc_range(&self, i: usize) -> std::ops::Range<usize> {
        self.user_docs[i]..self.user_docs[i + 1]
    }
}

impl Dataset {
    pub fn new(users: Vec<UserRecord>, vocab: Vocabulary, edges: EdgeList) -> Result<Self> {
        let v = vocab.len() as u32;
        let mut seen = HashSet::new();
        for u in &users {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::DuplicateUser(u.id.clone()));
            }
            if let Some(&bad) = u.docs.iter().flatten().find(|&&t| t >= v) {
                return Err(Error::IndexOutOfRange {
                    index: bad as usize,
                    len: v as usize,
                });
            }
        }
        let p = users.len();
        let mut adjacency = vec![Vec::new(); p];
        let mut half_links = vec![Vec::new(); p];
        for (e, &(i, j)) in edges.pairs().iter().enumerate() {
            if j >= p {
                return Err(Error::IndexOutOfRange { index: j, len: p });
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
            half_links[i].push(HalfLink { edge: e, side: 0 });
            half_links[j].push(HalfLink { edge: e, side: 1 });
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let layout = DocLayout::build(&users);
        Ok(Dataset {
            users,
            vocab,
            edges,
            adjacency,
            half_links,
            layout,
        })
    }

    /// Builds a dataset from string tokens, interning the vocabulary in
    /// first-appearance order and pruning tokens rarer than `min_token_freq`.
    pub fn from_tokens<S: AsRef<str>>(
        users: Vec<(String, Vec<Vec<S>>, Option<Label>)>,
        edges: &[(String, String)],
        min_token_freq: usize,
    ) -> Result<Self> {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for (_, docs, _) in &users {
            for t in docs.iter().flatten() {
                *freq.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut vocab = Vocabulary::default();
        let mut records = Vec::with_capacity(users.len());
        for (id, docs, label) in &users {
            let coded = docs
                .iter()
                .map(|doc| {
                    doc.iter()
                        .map(AsRef::as_ref)
                        .filter(|t| freq[t] >= min_token_freq)
                        .map(|t| vocab.intern(t))
                        .collect()
                })
                .collect();
            records.push(UserRecord {
                id: id.clone(),
                docs: coded,
                label: *label,
            });
        }
        let edges = resolve_edges(&records, edges.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
        Dataset::new(records, vocab, edges)
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn user(&self, i: usize) -> &UserRecord {
        &self.users[i]
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn edges(&self) -> &EdgeList {
        &self.edges
    }

    pub fn layout(&self) -> &DocLayout {
        &self.layout
    }

    pub fn half_links(&self, i: usize) -> &[HalfLink] {
        &self.half_links[i]
    }

    /// Friends of user `i`, ascending.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.users.len(),
            })
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn label(&self, i: usize) -> Option<Label> {
        self.users[i].label
    }

    pub fn n_labeled(&self) -> usize {
        self.users.iter().filter(|u| u.label.is_some()).count()
    }

    /// Writes the dataset back out in the users/edges file formats.
    pub fn write(&self, users_path: &Path, edges_path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(users_path)?);
        for u in &self.users {
            let line = UserLine {
                id: u.id.clone(),
                docs: u
                    .docs
                    .iter()
                    .map(|d| d.iter().map(|&t| self.vocab.token(t).to_owned()).collect())
                    .collect(),
                label: u.label.map(|l| l.sign() as i64),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(edges_path)?);
        for &(i, j) in self.edges.pairs() {
            writeln!(w, "{} {}", self.users[i].id, self.users[j].id)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct UserLine {
    id: String,
    docs: Vec<Vec<String>>,
    #[serde(default)]
    label: Option<i64>,
}

fn resolve_edges<'a>(
    users: &[UserRecord],
    pairs: impl Iterator<Item = (&'a str, &'a str)>,
) -> Result<EdgeList> {
    let index: HashMap<&str, usize> = users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.id.as_str(), i))
        .collect();
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownUser(id.to_owned()))
    };
    let mut resolved = Vec::new();
    for (a, b) in pairs {
        resolved.push((lookup(a)?, lookup(b)?));
    }
    EdgeList::new(resolved)
}

fn read_user_lines(path: &Path) -> Result<Vec<UserLine>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UserLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        if let Some(l) = rec.label {
            if Label::from_int(l).is_none() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    msg: format!("label must be 1, -1 or null, got {l}"),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

fn read_edge_lines(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [a, b] if a != b => out.push((a.to_string(), b.to_string())),
            [a, _] => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    msg: format!("self-loop on `{a}`"),
                })
            }
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    msg: format!("expected two user ids, found {} fields", fields.len()),
                })
            }
        }
    }
    Ok(out)
}

/// Loads and validates a dataset, building the vocabulary from the data.
pub fn load_dataset(users_path: &Path, edges_path: &Path, min_token_freq: usize) -> Result<Dataset> {
    let lines = read_user_lines(users_path)?;
    let edges = read_edge_lines(edges_path)?;
    let users = lines
        .into_iter()
        .map(|l| (l.id, l.docs, l.label.and_then(Label::from_int)))
        .collect();
    Dataset::from_tokens(users, &edges, min_token_freq)
}

/// Loads a dataset against a fixed vocabulary (e.g. one stored in a
/// checkpoint). Tokens outside the vocabulary are dropped; their count is
/// returned alongside the dataset.
pub fn load_dataset_with_vocab(
    users_path: &Path,
    edges_path: &Path,
    vocab: &Vocabulary,
) -> Result<(Dataset, usize)> {
    let lines = read_user_lines(users_path)?;
    let edges = read_edge_lines(edges_path)?;
    let mut dropped = 0;
    let mut records = Vec::with_capacity(lines.len());
    for l in lines {
        let docs = l
            .docs
            .iter()
            .map(|doc| {
                doc.iter()
                    .filter_map(|t| {
                        let id = vocab.id(t);
                        if id.is_none() {
                            dropped += 1;
                        }
                        id
                    })
                    .collect()
            })
            .collect();
        records.push(UserRecord {
            id: l.id,
            docs,
            label: l.label.and_then(Label::from_int),
        });
    }
    let edges = resolve_edges(&records, edges.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
    Ok((Dataset::new(records, vocab.clone(), edges)?, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn toy(edges: &[(&str, &str)], ids: &[&str]) -> Dataset {
        let users = ids
            .iter()
            .map(|id| (id.to_string(), vec![vec!["x"]], None))
            .collect();
        let edges: Vec<_> = edges
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        Dataset::from_tokens(users, &edges, 1).unwrap()
    }

    #[test]
    fn minimal_input_loads() {
        let dir = tempfile::tempdir().unwrap();
        let u = write_tmp(
            &dir,
            "u.jsonl",
            "{\"id\":\"u1\",\"docs\":[[\"a\",\"b\"]],\"label\":1}\n{\"id\":\"u2\",\"docs\":[[\"a\",\"b\"]]}\n",
        );
        let e = write_tmp(&dir, "e.txt", "u1 u2\n");
        let d = load_dataset(&u, &e, 1).unwrap();
        assert_eq!(d.n_users(), 2);
        assert_eq!(d.vocab_size(), 2);
        assert_eq!(d.edges().len(), 1);
        assert_eq!(d.label(0), Some(Label::Pos));
        assert_eq!(d.label(1), None);
    }

    #[test]
    fn unknown_edge_endpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let u = write_tmp(&dir, "u.jsonl", "{\"id\":\"u1\",\"docs\":[]}\n");
        let e = write_tmp(&dir, "e.txt", "u1 ghost\n");
        match load_dataset(&u, &e, 1) {
            Err(Error::UnknownUser(id)) => assert_eq!(id, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let u = write_tmp(&dir, "u.jsonl", "{\"id\":\"u1\",\"docs\":[]}\n{oops\n");
        let e = write_tmp(&dir, "e.txt", "");
        assert!(matches!(load_dataset(&u, &e, 1), Err(Error::Parse { line: 2, .. })));

        let u = write_tmp(&dir, "u2.jsonl", "{\"id\":\"u1\",\"docs\":[],\"label\":3}\n");
        assert!(matches!(load_dataset(&u, &e, 1), Err(Error::Parse { line: 1, .. })));

        let u = write_tmp(&dir, "u3.jsonl", "{\"id\":\"a\",\"docs\":[]}\n{\"id\":\"b\",\"docs\":[]}\n");
        let e = write_tmp(&dir, "e2.txt", "a b\n\na b c\n");
        assert!(matches!(load_dataset(&u, &e, 1), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn duplicate_user_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let u = write_tmp(&dir, "u.jsonl", "{\"id\":\"u1\",\"docs\":[]}\n{\"id\":\"u1\",\"docs\":[]}\n");
        let e = write_tmp(&dir, "e.txt", "");
        assert!(matches!(load_dataset(&u, &e, 1), Err(Error::DuplicateUser(_))));
    }

    #[test]
    fn reversed_duplicate_edges_collapse() {
        let d = toy(&[("u1", "u2"), ("u2", "u1")], &["u1", "u2"]);
        assert_eq!(d.edges().len(), 1);
        assert_eq!(d.edges().pairs(), &[(0, 1)]);
    }

    #[test]
    fn neighbor_queries() {
        let star = toy(&[("c", "a"), ("c", "b"), ("d", "c")], &["c", "a", "b", "d", "iso"]);
        assert_eq!(star.neighbors(0).unwrap(), &[1, 2, 3]);
        assert!(star.neighbors(4).unwrap().is_empty());
        assert!(matches!(star.neighbors(5), Err(Error::IndexOutOfRange { .. })));

        let path = toy(&[("0", "1"), ("1", "2")], &["0", "1", "2"]);
        assert_eq!(path.neighbors(1).unwrap(), &[0, 2]);
    }

    #[test]
    fn min_token_freq_prunes_but_keeps_empty_docs() {
        let users = vec![
            ("a".to_string(), vec![vec!["x", "y"], vec!["rare"]], None),
            ("b".to_string(), vec![vec!["x", "y"]], None),
        ];
        let d = Dataset::from_tokens(users, &[], 2).unwrap();
        assert_eq!(d.vocab_size(), 2);
        assert_eq!(d.user(0).docs.len(), 2);
        assert!(d.user(0).docs[1].is_empty());
        assert_eq!(d.layout().n_docs(), 3);
    }

    #[test]
    fn write_then_reload_is_identical() {
        let users = vec![
            ("a".to_string(), vec![vec!["x", "y", "x"], vec![]], Some(Label::Neg)),
            ("b".to_string(), vec![vec!["z"]], Some(Label::Pos)),
            ("c".to_string(), vec![], None),
        ];
        let edges = vec![("c".to_string(), "a".to_string()), ("a".to_string(), "b".to_string())];
        let d = Dataset::from_tokens(users, &edges, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (u, e) = (dir.path().join("u"), dir.path().join("e"));
        d.write(&u, &e).unwrap();
        let r = load_dataset(&u, &e, 1).unwrap();
        assert_eq!(r.users(), d.users());
        assert_eq!(r.vocab(), d.vocab());
        assert_eq!(r.edges(), d.edges());
    }

    #[test]
    fn fixed_vocab_load_drops_unknown_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let u = write_tmp(&dir, "u.jsonl", "{\"id\":\"u1\",\"docs\":[[\"a\",\"q\",\"b\"]]}\n");
        let e = write_tmp(&dir, "e.txt", "");
        let vocab = Vocabulary::from(vec!["b".to_string(), "a".to_string()]);
        let (d, dropped) = load_dataset_with_vocab(&u, &e, &vocab).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(d.user(0).docs[0], vec![1, 0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn adjacency_is_symmetric(p in 1usize..12, raw in proptest::collection::vec((0usize..12, 0usize..12), 0..30)) {
                let pairs: Vec<_> = raw.into_iter()
                    .map(|(a, b)| (a % p, b % p))
                    .filter(|(a, b)| a != b)
                    .collect();
                let users = (0..p).map(|i| UserRecord { id: i.to_string(), docs: vec![], label: None }).collect();
                let d = Dataset::new(users, Vocabulary::default(), EdgeList::new(pairs).unwrap()).unwrap();
                let mut total = 0;
                for i in 0..p {
                    let ns = d.neighbors(i).unwrap();
                    total += ns.len();
                    prop_assert!(ns.windows(2).all(|w| w[0] < w[1]));
                    for &j in ns {
                        prop_assert!(d.neighbors(j).unwrap().contains(&i));
                    }
                }
                prop_assert_eq!(total, 2 * d.edges().len());
                prop_assert!(d.edges().len() <= p * (p - 1) / 2);
            }
        }
    }
}
