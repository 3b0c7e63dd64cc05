//! Triple ingestion, vocabularies, and the undirected entity graph.
//!
//! A knowledge graph is read as tab-separated `head<TAB>relation<TAB>tail`
//! lines and projected onto a plain undirected simple graph over entities.
//! Parallel relations collapse into one unweighted edge. Reflexive triples
//! keep their self-loop, and entities left without any edge receive one so
//! that every degree is at least one.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Bijection between string tokens and dense integer ids, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for tok in tokens {
            let tok = tok.into();
            if vocab.index.contains_key(&tok) {
                return Err(Error::InvalidArgument(format!("duplicate token {tok:?}")));
            }
            vocab.get_or_insert(&tok);
        }
        Ok(vocab)
    }

    pub fn get_or_insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Triples plus the entity and relation vocabularies they index into.
#[derive(Debug, Clone, Default)]
pub struct TripleStore {
    pub triples: Vec<Triple>,
    pub entities: Vocab,
    pub relations: Vocab,
}

impl TripleStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut store = TripleStore::default();
        store.triples = store.load_split(path)?;
        Ok(store)
    }

    pub fn parse<R: BufRead>(reader: R, source: &Path) -> Result<Self> {
        let mut store = TripleStore::default();
        store.triples = store.parse_split(reader, source)?;
        Ok(store)
    }

    /// Reads another split (valid/test), growing the vocabularies in place.
    pub fn load_split(&mut self, path: impl AsRef<Path>) -> Result<Vec<Triple>> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.parse_split(BufReader::new(file), path)
    }

    pub fn parse_split<R: BufRead>(&mut self, reader: R, source: &Path) -> Result<Vec<Triple>> {
        let mut triples = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: source.to_path_buf(),
                    line: idx + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    path: source.to_path_buf(),
                    line: idx + 1,
                    message: "empty field".into(),
                });
            }
            let head = self.entities.get_or_insert(fields[0]);
            let relation = self.relations.get_or_insert(fields[1]);
            let tail = self.entities.get_or_insert(fields[2]);
            triples.push(Triple::new(head, relation, tail));
        }
        if triples.is_empty() {
            return Err(Error::EmptyInput(source.to_path_buf()));
        }
        Ok(triples)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }
}

/// Train/valid/test splits sharing one vocabulary (train tokens first).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: TripleStore,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl Dataset {
    pub fn load(train: &Path, valid: Option<&Path>, test: Option<&Path>) -> Result<Self> {
        let mut store = TripleStore::load(train)?;
        let valid = match valid {
            Some(p) => store.load_split(p)?,
            None => Vec::new(),
        };
        let test = match test {
            Some(p) => store.load_split(p)?,
            None => Vec::new(),
        };
        Ok(Dataset {
            train: store,
            valid,
            test,
        })
    }

    /// Builds a dataset from token triples, in the same id order `load` would produce.
    pub fn from_tokens(
        train: &[(String, String, String)],
        valid: &[(String, String, String)],
        test: &[(String, String, String)],
    ) -> Self {
        let mut store = TripleStore::default();
        let encode = |rows: &[(String, String, String)], store: &mut TripleStore| {
            rows.iter()
                .map(|(h, r, t)| {
                    let head = store.entities.get_or_insert(h);
                    let relation = store.relations.get_or_insert(r);
                    let tail = store.entities.get_or_insert(t);
                    Triple::new(head, relation, tail)
                })
                .collect::<Vec<_>>()
        };
        let train_ids = encode(train, &mut store);
        let valid = encode(valid, &mut store);
        let test = encode(test, &mut store);
        store.triples = train_ids;
        Dataset {
            train: store,
            valid,
            test,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train
            .triples
            .iter()
            .chain(self.valid.iter())
            .chain(self.test.iter())
    }

    /// Entities that occur in at least one training triple.
    pub fn train_entity_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.train.num_entities()];
        for t in &self.train.triples {
            mask[t.head] = true;
            mask[t.tail] = true;
        }
        mask
    }

    pub fn train_relation_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.train.num_relations()];
        for t in &self.train.triples {
            mask[t.relation] = true;
        }
        mask
    }

    pub fn vocab_hash(&self) -> String {
        vocab_hash(&self.train.entities, &self.train.relations)
    }
}

/// SHA-256 over entity then relation tokens, newline separated.
pub fn vocab_hash(entities: &Vocab, relations: &Vocab) -> String {
    let mut h = Sha256::new();
    for t in entities.tokens() {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    h.update(b"\x00relations\n");
    for t in relations.tokens() {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Simple undirected graph in CSR form. Neighbour lists are sorted and a
/// self-loop appears as the node itself in its own list.
#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    degrees: Vec<f64>,
}

impl UndirectedGraph {
    /// Builds the graph from an undirected edge list. Duplicate edges collapse
    /// and isolated nodes get a self-loop.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in &set {
            adj[u].push(v);
            if u != v {
                adj[v].push(u);
            }
        }
        for (i, list) in adj.iter_mut().enumerate() {
            if list.is_empty() {
                list.push(i);
            }
            list.sort_unstable();
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for list in &adj {
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        let degrees = adj.iter().map(|l| l.len() as f64).collect();
        Ok(UndirectedGraph {
            offsets,
            neighbors,
            degrees,
        })
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Edges as `(u, v)` with `u <= v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n() {
            for &v in self.neighbors(u) {
                if u <= v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    pub fn adjacency_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for u in 0..n {
            for &v in self.neighbors(u) {
                a[(u, v)] = 1.0;
            }
        }
        a
    }

    /// Writes `n m` followed by one sorted `u v` line per edge.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let edges = self.edges();
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "{} {}", self.n(), edges.len())?;
            for (u, v) in &edges {
                writeln!(w, "{u} {v}")?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, message: &str| Error::Parse {
            path: PathBuf::from(path),
            line,
            message: message.to_owned(),
        };
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let (n, m) = parse_pair(&header).ok_or_else(|| parse_err(1, "expected `n m` header"))?;
        let mut edges = Vec::with_capacity(m);
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let edge = parse_pair(&line).ok_or_else(|| parse_err(idx + 2, "expected `u v`"))?;
            edges.push(edge);
        }
        if edges.len() != m {
            return Err(parse_err(1, &format!("header declares {m} edges, found {}", edges.len())));
        }
        Self::from_edges(n, edges)
    }
}

fn parse_pair(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, b))
}

/// Projects the triples onto an undirected simple graph over all vocabulary entities.
pub fn project_graph(store: &TripleStore) -> UndirectedGraph {
    let edges: HashSet<(usize, usize)> = store
        .triples
        .iter()
        .map(|t| (t.head.min(t.tail), t.head.max(t.tail)))
        .collect();
    UndirectedGraph::from_edges(store.num_entities(), edges)
        .expect("triple ids are always within the vocabulary")
}

/// Sparse symmetric `L = I - D^{-1/2} A D^{-1/2}` in CSR form. Every row
/// stores its diagonal entry.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedLaplacian {
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.values[r])
    }

    /// `y = L x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

pub fn normalized_laplacian(g: &UndirectedGraph) -> Result<NormalizedLaplacian> {
    let n = g.n();
    if let Some(i) = g.degrees().iter().position(|&d| d <= 0.0) {
        return Err(Error::Internal(format!("node {i} has zero degree")));
    }
    let inv_sqrt: Vec<f64> = g.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let mut cols = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        let nbrs = g.neighbors(i);
        let mut wrote_diag = false;
        for &j in nbrs {
            if !wrote_diag && j > i {
                cols.push(i);
                values.push(1.0);
                wrote_diag = true;
            }
            let off = inv_sqrt[i] * inv_sqrt[j];
            if j == i {
                cols.push(i);
                values.push(1.0 - off);
                wrote_diag = true;
            } else {
                cols.push(j);
                values.push(-off);
            }
        }
        if !wrote_diag {
            cols.push(i);
            values.push(1.0);
        }
        offsets.push(cols.len());
    }
    Ok(NormalizedLaplacian {
        offsets,
        cols,
        values,
    })
}

/// Small graphs with known symmetry, used in tests and demos.
pub mod generators {
    use super::UndirectedGraph;

    pub fn complete(n: usize) -> UndirectedGraph {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
        UndirectedGraph::from_edges(n, edges).unwrap()
    }

    pub fn path(n: usize) -> UndirectedGraph {
        UndirectedGraph::from_edges(n, (1..n).map(|v| (v - 1, v))).unwrap()
    }

    pub fn cycle(n: usize) -> UndirectedGraph {
        UndirectedGraph::from_edges(n, (0..n).map(|v| (v, (v + 1) % n))).unwrap()
    }

    /// Two disjoint triangles `{0,1,2}` and `{3,4,5}`.
    pub fn two_triangles() -> UndirectedGraph {
        UndirectedGraph::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap()
    }

    /// Ten-node toy: triangles `{0,1,2}` and `{7,8,9}`, each fully attached to
    /// one end of the path `3-4-5-6`. The two halves `{0..=4}` and `{5..=9}`
    /// are mirror images, and `{0,1,2,7,8,9}` all play the same role.
    pub fn capped_path() -> UndirectedGraph {
        let edges = [
            (0, 1),
            (1, 2),
            (0, 2),
            (0, 3),
            (1, 3),
            (2, 3),
            (3, 4),
            (4, 5),
            (5, 6),
            (6, 7),
            (6, 8),
            (6, 9),
            (7, 8),
            (8, 9),
            (7, 9),
        ];
        UndirectedGraph::from_edges(10, edges).unwrap()
    }

    /// Two `clique`-cliques joined through a path of `path_len` extra nodes.
    /// Nodes `0..clique` form the first clique, the path follows, then the
    /// second clique. Node `clique - 1` and node `clique + path_len` are the
    /// clique ends of the bridge.
    pub fn barbell(clique: usize, path_len: usize) -> UndirectedGraph {
        let n = 2 * clique + path_len;
        let mut edges = Vec::new();
        for base in [0, clique + path_len] {
            for u in 0..clique {
                for v in u + 1..clique {
                    edges.push((base + u, base + v));
                }
            }
        }
        for i in clique - 1..clique + path_len {
            edges.push((i, i + 1));
        }
        UndirectedGraph::from_edges(n, edges).unwrap()
    }

    /// Structural class of each barbell node: 0 clique interior, 1 bridge end,
    /// 2 path node.
    pub fn barbell_roles(clique: usize, path_len: usize) -> Vec<usize> {
        let n = 2 * clique + path_len;
        (0..n)
            .map(|i| {
                if i == clique - 1 || i == clique + path_len {
                    1
                } else if i >= clique && i < clique + path_len {
                    2
                } else {
                    0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<TripleStore> {
        TripleStore::parse(Cursor::new(text), Path::new("mem"))
    }

    #[test]
    fn loads_two_triples() {
        let s = parse("a\tr1\tb\nb\tr1\tc\n").unwrap();
        assert_eq!(s.triples.len(), 2);
        assert_eq!(s.num_entities(), 3);
        assert_eq!(s.num_relations(), 1);
        assert_eq!(s.entities.tokens(), ["a", "b", "c"]);
    }

    #[test]
    fn arity_violation_reports_line() {
        match parse("a\tr1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse("a\tr\tb\n\nc\td\te\tf\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse(""), Err(Error::EmptyInput(_))));
        assert!(matches!(parse("\n \n"), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn duplicates_retained_and_crlf_tolerated() {
        let s = parse("a\tr\tb\r\na\tr\tb\r\n").unwrap();
        assert_eq!(s.triples.len(), 2);
        assert_eq!(s.entities.tokens(), ["a", "b"]);
    }

    #[test]
    fn vocab_rejects_duplicates() {
        assert!(Vocab::from_tokens(["x", "y", "x"]).is_err());
        let v = Vocab::from_tokens(["x", "y"]).unwrap();
        assert_eq!(v.id("y"), Some(1));
        assert_eq!(v.token(0), "x");
    }

    #[test]
    fn symmetrization_collapses_parallel_relations() {
        let s = parse("a\tr1\tb\nb\tr2\ta\n").unwrap();
        let g = project_graph(&s);
        assert_eq!(g.edges(), vec![(0, 1)]);
        assert_eq!(g.degrees(), &[1.0, 1.0]);
    }

    #[test]
    fn reflexive_triple_gives_self_loop() {
        let s = parse("a\tr1\ta\n").unwrap();
        let g = project_graph(&s);
        assert_eq!(g.n(), 1);
        assert_eq!(g.degrees(), &[1.0]);
        assert!(g.has_edge(0, 0));
    }

    #[test]
    fn triangle_projection() {
        let s = parse("a\tr\tb\nb\tr\tc\nc\tr\ta\n").unwrap();
        let g = project_graph(&s);
        assert_eq!(g, generators::complete(3));
        assert!(g.degrees().iter().all(|&d| d == 2.0));
    }

    #[test]
    fn isolated_entities_from_other_splits_get_self_loops() {
        let mut s = parse("a\tr\tb\n").unwrap();
        s.parse_split(Cursor::new("c\tr\td\n"), Path::new("test")).unwrap();
        let g = project_graph(&s);
        assert_eq!(g.n(), 4);
        assert!(g.has_edge(2, 2) && g.has_edge(3, 3));
        assert!(!g.has_edge(2, 3));
    }

    #[test]
    fn laplacian_of_triangle() {
        let l = normalized_laplacian(&generators::complete(3)).unwrap().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { -0.5 };
                assert!((l[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn laplacian_eigenvalues_small_graphs() {
        let eig = |g: &UndirectedGraph| {
            let mut v: Vec<f64> = normalized_laplacian(g)
                .unwrap()
                .to_dense()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        let k3 = eig(&generators::complete(3));
        for (got, want) in k3.iter().zip([0.0, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        let p3 = eig(&generators::path(3));
        for (got, want) in p3.iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn self_loop_node_has_zero_laplacian_row() {
        let g = UndirectedGraph::from_edges(1, []).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        assert_eq!(l.to_dense()[(0, 0)], 0.0);
    }

    #[test]
    fn edge_list_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.edges");
        let g = generators::barbell(4, 2);
        g.write_edge_list(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("10 15\n0 1\n"));
        assert_eq!(UndirectedGraph::read_edge_list(&path).unwrap(), g);
    }

    #[test]
    fn barbell_roles_are_mirror_symmetric() {
        let roles = generators::barbell_roles(5, 2);
        let rev: Vec<usize> = roles.iter().rev().copied().collect();
        assert_eq!(roles, rev);
        assert_eq!(roles.iter().filter(|&&r| r == 1).count(), 2);
        assert_eq!(roles.iter().filter(|&&r| r == 2).count(), 2);
    }
}
