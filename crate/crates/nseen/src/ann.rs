//! Approximate nearest-neighbor search over name embeddings: a forest of
//! random-projection trees whose internal nodes split space with random
//! hyperplanes, plus an exact linear-scan oracle.
//!
//! Vectors are unit-normalized at insertion, so cosine distance reduces to
//! `1 − u·v` and hyperplane margins behave monotonically. Queries traverse
//! all trees through one shared priority queue ordered by the worst-case
//! margin along the path, then re-rank the collected candidates by exact
//! cosine distance.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bytesio::{CheckedReader, CheckedWriter};
use crate::refset::EntityId;
use crate::{Error, Result};

/// Search budget used when callers do not override it: `50·k` distinct
/// candidates before re-ranking.
pub const DEFAULT_BUDGET_FACTOR: usize = 50;

pub fn default_search_budget(k: usize) -> usize {
    DEFAULT_BUDGET_FACTOR * k.max(1)
}

/// Rows of `(entity_id, name, vector)` with dense implicit row IDs.
///
/// Vectors are stored unit-normalized; zero or non-finite vectors are
/// rejected at insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dimension: usize,
    data: Vec<f64>,
    entity_ids: Vec<EntityId>,
    names: Vec<String>,
}

/// Borrowed view of one store row.
pub struct RowRef<'a> {
    pub row_id: usize,
    pub entity_id: &'a EntityId,
    pub name: &'a str,
    pub vector: &'a [f64],
}

impl VectorStore {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("vector dimension must be ≥ 1".into()));
        }
        Ok(VectorStore {
            dimension,
            data: Vec::new(),
            entity_ids: Vec::new(),
            names: Vec::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }

    /// Inserts a row, returning its ID. The vector is normalized in place.
    pub fn insert(&mut self, entity_id: EntityId, name: impl Into<String>, vector: &[f64]) -> Result<usize> {
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("vector has non-finite entries".into()));
        }
        let norm = dot(vector, vector).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        let row_id = self.len();
        self.data.extend(vector.iter().map(|v| v / norm));
        self.entity_ids.push(entity_id);
        self.names.push(name.into());
        Ok(row_id)
    }

    pub fn row(&self, row_id: usize) -> RowRef<'_> {
        RowRef {
            row_id,
            entity_id: &self.entity_ids[row_id],
            name: &self.names[row_id],
            vector: self.vector(row_id),
        }
    }

    pub fn vector(&self, row_id: usize) -> &[f64] {
        &self.data[row_id * self.dimension..(row_id + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl Iterator<Item = RowRef<'_>> {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Exact cosine distance from a stored row to a unit query vector.
    fn distance_to(&self, row_id: usize, unit_query: &[f64]) -> f64 {
        (1.0 - dot(self.vector(row_id), unit_query)).clamp(0.0, 2.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize_query(query: &[f64], dimension: usize) -> Result<Vec<f64>> {
    if query.len() != dimension {
        return Err(Error::DimensionMismatch {
            expected: dimension,
            actual: query.len(),
        });
    }
    let norm = dot(query, query).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(query.iter().map(|v| v / norm).collect())
}

/// A retrieved row with its exact cosine distance to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub row_id: usize,
    pub entity_id: EntityId,
    pub name: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        normal: Vec<f64>,
        offset: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        rows: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpTree {
    nodes: Vec<Node>,
}

/// Build-time configuration, persisted with the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexConfig {
    pub n_trees: usize,
    pub max_leaf_size: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            n_trees: 50,
            max_leaf_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpForest {
    trees: Vec<RpTree>,
    config: IndexConfig,
    dimension: usize,
}

const SPLIT_RETRIES: usize = 3;

/// Builds a random-projection forest over the store. Trees derive
/// independent seeds from the master seed and may build in parallel.
pub fn build_index(store: &VectorStore, config: IndexConfig) -> Result<RpForest> {
    if store.is_empty() {
        return Err(Error::EmptyInput("cannot index an empty vector store".into()));
    }
    if config.n_trees == 0 || config.max_leaf_size == 0 {
        return Err(Error::InvalidArgument(
            "n_trees and max_leaf_size must be ≥ 1".into(),
        ));
    }
    let trees: Vec<RpTree> = (0..config.n_trees)
        .into_par_iter()
        .map(|tree_idx| {
            let tree_seed = config
                .seed
                .wrapping_add((tree_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            let mut nodes = Vec::new();
            let rows: Vec<u32> = (0..store.len() as u32).collect();
            build_node(store, rows, config.max_leaf_size, &mut rng, &mut nodes);
            RpTree { nodes }
        })
        .collect();
    Ok(RpForest {
        trees,
        config,
        dimension: store.dimension(),
    })
}

/// Recursively splits `rows`, returning the new node's index.
fn build_node(
    store: &VectorStore,
    rows: Vec<u32>,
    max_leaf_size: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> u32 {
    if rows.len() <= max_leaf_size {
        nodes.push(Node::Leaf { rows });
        return (nodes.len() - 1) as u32;
    }

    let dim = store.dimension();
    let mut plane: Option<(Vec<f64>, f64)> = None;
    let mut partition: Option<(Vec<u32>, Vec<u32>)> = None;
    for _ in 0..SPLIT_RETRIES {
        let a = rows[rng.gen_range(0..rows.len())] as usize;
        let b = rows[rng.gen_range(0..rows.len())] as usize;
        if a == b {
            continue;
        }
        let va = store.vector(a);
        let vb = store.vector(b);
        let mut normal: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        let norm = dot(&normal, &normal).sqrt();
        if norm == 0.0 {
            continue; // duplicate vectors
        }
        for v in &mut normal {
            *v /= norm;
        }
        let offset = va
            .iter()
            .zip(vb)
            .zip(&normal)
            .map(|((x, y), n)| (x + y) * 0.5 * n)
            .sum::<f64>();

        let mut left = Vec::new();
        let mut right = Vec::new();
        for &row in &rows {
            let side = dot(store.vector(row as usize), &normal) - offset;
            if side >= 0.0 {
                right.push(row);
            } else {
                left.push(row);
            }
        }
        if left.is_empty() || right.is_empty() {
            plane = Some((normal, offset)); // remember a valid plane anyway
            continue;
        }
        plane = Some((normal, offset));
        partition = Some((left, right));
        break;
    }

    // Degenerate data (e.g. many duplicates): split in half by row order so
    // construction always terminates.
    let (normal, offset, left_rows, right_rows) = match (plane, partition) {
        (Some((n, o)), Some((l, r))) => (n, o, l, r),
        (plane, None) => {
            let (n, o) = plane.unwrap_or_else(|| {
                let mut unit = vec![0.0; dim];
                unit[0] = 1.0;
                (unit, 0.0)
            });
            let mid = rows.len() / 2;
            let left = rows[..mid].to_vec();
            let right = rows[mid..].to_vec();
            (n, o, left, right)
        }
        (None, Some(_)) => unreachable!("partition implies a plane"),
    };

    let node_idx = nodes.len();
    nodes.push(Node::Leaf { rows: Vec::new() }); // placeholder
    let left = build_node(store, left_rows, max_leaf_size, rng, nodes);
    let right = build_node(store, right_rows, max_leaf_size, rng, nodes);
    nodes[node_idx] = Node::Split {
        normal,
        offset,
        left,
        right,
    };
    node_idx as u32
}

/// Max-heap entry: higher worst-case margin first; index tiebreak keeps pop
/// order deterministic.
struct HeapEntry {
    priority: f64,
    tree: u32,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl RpForest {
    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn trees(&self) -> usize {
        self.trees.len()
    }

    /// Row IDs in every leaf of tree `t`, for structural checks.
    #[doc(hidden)]
    pub fn leaf_rows(&self, tree: usize) -> Vec<u32> {
        let mut out = Vec::new();
        for node in &self.trees[tree].nodes {
            if let Node::Leaf { rows } = node {
                out.extend_from_slice(rows);
            }
        }
        out
    }
}

/// Approximate k-nearest-neighbor query: collect at least `search_budget`
/// distinct candidate rows across all trees, then exact-rank them.
///
/// Results come back ascending by distance with row-ID tiebreaks; a budget
/// of at least the store size reproduces [`brute_force_query`] exactly.
pub fn query(
    forest: &RpForest,
    store: &VectorStore,
    query_vector: &[f64],
    k: usize,
    search_budget: usize,
) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    if forest.dimension != store.dimension() {
        return Err(Error::DimensionMismatch {
            expected: store.dimension(),
            actual: forest.dimension,
        });
    }
    let unit = normalize_query(query_vector, store.dimension())?;

    let mut heap = BinaryHeap::new();
    for (tree_idx, _) in forest.trees.iter().enumerate() {
        heap.push(HeapEntry {
            priority: f64::INFINITY,
            tree: tree_idx as u32,
            node: 0,
        });
    }
    let mut candidates: HashSet<u32> = HashSet::new();
    while candidates.len() < search_budget {
        let Some(entry) = heap.pop() else { break };
        match &forest.trees[entry.tree as usize].nodes[entry.node as usize] {
            Node::Leaf { rows } => {
                candidates.extend(rows.iter().copied());
            }
            Node::Split {
                normal,
                offset,
                left,
                right,
            } => {
                let margin = dot(normal, &unit) - offset;
                heap.push(HeapEntry {
                    priority: entry.priority.min(margin),
                    tree: entry.tree,
                    node: *right,
                });
                heap.push(HeapEntry {
                    priority: entry.priority.min(-margin),
                    tree: entry.tree,
                    node: *left,
                });
            }
        }
    }

    let mut ranked: Vec<(f64, u32)> = candidates
        .into_iter()
        .map(|row| (store.distance_to(row as usize, &unit), row))
        .collect();
    ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    ranked.truncate(k);
    Ok(ranked
        .into_iter()
        .map(|(distance, row)| {
            let r = store.row(row as usize);
            Neighbor {
                row_id: r.row_id,
                entity_id: r.entity_id.clone(),
                name: r.name.to_owned(),
                distance,
            }
        })
        .collect())
}

/// Exact linear-scan k-nearest-neighbors: the oracle the forest is measured
/// against.
pub fn brute_force_query(store: &VectorStore, query_vector: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    let unit = normalize_query(query_vector, store.dimension())?;
    let mut ranked: Vec<(f64, usize)> = (0..store.len())
        .map(|row| (store.distance_to(row, &unit), row))
        .collect();
    ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    ranked.truncate(k);
    Ok(ranked
        .into_iter()
        .map(|(distance, row)| {
            let r = store.row(row);
            Neighbor {
                row_id: r.row_id,
                entity_id: r.entity_id.clone(),
                name: r.name.to_owned(),
                distance,
            }
        })
        .collect())
}

/// A vector store plus the forest built over it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    store: VectorStore,
    forest: RpForest,
}

impl EmbeddingIndex {
    pub fn new(store: VectorStore, config: IndexConfig) -> Result<Self> {
        let forest = build_index(&store, config)?;
        Ok(EmbeddingIndex { store, forest })
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }

    pub fn forest(&self) -> &RpForest {
        &self.forest
    }

    pub fn query(&self, query_vector: &[f64], k: usize, search_budget: usize) -> Result<Vec<Neighbor>> {
        query(&self.forest, &self.store, query_vector, k, search_budget)
    }

    /// Nearest neighbors of a stored row (the row itself is included).
    pub fn query_row(&self, row_id: usize, k: usize) -> Vec<Neighbor> {
        let vector = self.store.vector(row_id).to_vec();
        self.query(&vector, k, default_search_budget(k))
            .expect("stored vectors are valid queries")
    }
}

const INDEX_MAGIC: &str = "NSIX";
const INDEX_VERSION: u32 = 1;

/// Serializes the index with the fingerprint of the model that produced the
/// embeddings; little-endian throughout, SHA-256 checksum at the tail.
pub fn save_index<W: Write>(index: &EmbeddingIndex, fingerprint: &[u8; 32], writer: W) -> Result<()> {
    let mut w = CheckedWriter::new(writer);
    w.write_bytes(INDEX_MAGIC.as_bytes())?;
    w.write_u32(INDEX_VERSION)?;
    w.write_bytes(fingerprint)?;

    let config = index.forest.config;
    w.write_usize(config.n_trees)?;
    w.write_usize(config.max_leaf_size)?;
    w.write_u64(config.seed)?;

    let store = &index.store;
    w.write_usize(store.dimension())?;
    w.write_usize(store.len())?;
    for row in store.rows() {
        w.write_str(row.entity_id.as_str())?;
        w.write_str(row.name)?;
        for v in row.vector {
            w.write_f64(*v)?;
        }
    }

    for tree in &index.forest.trees {
        w.write_usize(tree.nodes.len())?;
        for node in &tree.nodes {
            match node {
                Node::Leaf { rows } => {
                    w.write_u8(0)?;
                    w.write_usize(rows.len())?;
                    for r in rows {
                        w.write_u32(*r)?;
                    }
                }
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    w.write_u8(1)?;
                    for n in normal {
                        w.write_f64(*n)?;
                    }
                    w.write_f64(*offset)?;
                    w.write_u32(*left)?;
                    w.write_u32(*right)?;
                }
            }
        }
    }
    w.finish()?;
    Ok(())
}

/// Loads an index and the model fingerprint it was built with.
pub fn load_index<R: Read>(reader: R) -> Result<(EmbeddingIndex, [u8; 32])> {
    let mut r = CheckedReader::new(reader);
    r.expect_magic(INDEX_MAGIC)?;
    let version = r.read_u32()?;
    if version != INDEX_VERSION {
        return Err(Error::VersionMismatch {
            expected: INDEX_VERSION,
            found: version,
        });
    }
    let mut fingerprint = [0u8; 32];
    r.read_bytes(&mut fingerprint)?;

    let n_trees = r.read_usize()?;
    let max_leaf_size = r.read_usize()?;
    let seed = r.read_u64()?;

    let dimension = r.read_usize()?;
    if dimension == 0 || dimension > (1 << 20) {
        return Err(Error::Corrupt(format!("implausible dimension {dimension}")));
    }
    let row_count = r.read_usize()?;
    let mut store = VectorStore::new(dimension)?;
    let mut buf = vec![0.0f64; dimension];
    for _ in 0..row_count {
        let entity = r.read_string()?;
        let name = r.read_string()?;
        for v in buf.iter_mut() {
            *v = r.read_f64()?;
        }
        let entity_id = EntityId::new(&entity).map_err(|_| Error::Corrupt("empty entity id".into()))?;
        store.insert(entity_id, name, &buf)?;
    }

    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let node_count = r.read_usize()?;
        let mut nodes = Vec::with_capacity(node_count.min(1 << 24));
        for _ in 0..node_count {
            let tag = r.read_u8()?;
            let node = match tag {
                0 => {
                    let len = r.read_usize()?;
                    let mut rows = Vec::with_capacity(len.min(1 << 24));
                    for _ in 0..len {
                        let row = r.read_u32()?;
                        if row as usize >= row_count {
                            return Err(Error::Corrupt(format!("leaf row {row} out of range")));
                        }
                        rows.push(row);
                    }
                    Node::Leaf { rows }
                }
                1 => {
                    let mut normal = vec![0.0f64; dimension];
                    for v in normal.iter_mut() {
                        *v = r.read_f64()?;
                    }
                    let offset = r.read_f64()?;
                    let left = r.read_u32()?;
                    let right = r.read_u32()?;
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    }
                }
                other => return Err(Error::Corrupt(format!("unknown node tag {other}"))),
            };
            nodes.push(node);
        }
        for node in &nodes {
            if let Node::Split { left, right, .. } = node {
                if *left as usize >= nodes.len() || *right as usize >= nodes.len() {
                    return Err(Error::Corrupt("split child out of range".into()));
                }
            }
        }
        trees.push(RpTree { nodes });
    }
    r.verify_checksum()?;

    let forest = RpForest {
        trees,
        config: IndexConfig {
            n_trees,
            max_leaf_size,
            seed,
        },
        dimension,
    };
    Ok((EmbeddingIndex { store, forest }, fingerprint))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_store(vectors: &[&[f64]]) -> VectorStore {
        let mut store = VectorStore::new(vectors[0].len()).unwrap();
        for (i, v) in vectors.iter().enumerate() {
            store
                .insert(EntityId::new(format!("E{i}")).unwrap(), format!("n{i}"), v)
                .unwrap();
        }
        store
    }

    fn random_unit_store(n: usize, dim: usize, seed: u64) -> VectorStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = VectorStore::new(dim).unwrap();
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store
                .insert(EntityId::new(format!("E{i}")).unwrap(), format!("n{i}"), &v)
                .unwrap();
        }
        store
    }

    #[test]
    fn store_rejects_bad_vectors() {
        let mut store = VectorStore::new(3).unwrap();
        let id = EntityId::new("E").unwrap();
        assert!(matches!(
            store.insert(id.clone(), "n", &[0.0, 0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(store.insert(id.clone(), "n", &[1.0, f64::NAN, 0.0]).is_err());
        assert!(matches!(
            store.insert(id, "n", &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn small_store_is_a_single_leaf_per_tree() {
        let store = toy_store(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let forest = build_index(
            &store,
            IndexConfig {
                n_trees: 4,
                max_leaf_size: 8,
                seed: 0,
            },
        )
        .unwrap();
        for t in 0..4 {
            assert_eq!(forest.trees[t].nodes.len(), 1);
            assert!(matches!(forest.trees[t].nodes[0], Node::Leaf { .. }));
        }
    }

    #[test]
    fn forest_partitions_every_row_in_every_tree() {
        let store = random_unit_store(500, 8, 3);
        let forest = build_index(
            &store,
            IndexConfig {
                n_trees: 10,
                max_leaf_size: 16,
                seed: 5,
            },
        )
        .unwrap();
        for t in 0..forest.trees() {
            let mut rows = forest.leaf_rows(t);
            rows.sort_unstable();
            let expected: Vec<u32> = (0..store.len() as u32).collect();
            assert_eq!(rows, expected, "tree {t} does not partition the rows");
        }
    }

    #[test]
    fn build_is_seed_deterministic() {
        let store = random_unit_store(300, 8, 1);
        let cfg = IndexConfig {
            n_trees: 5,
            max_leaf_size: 8,
            seed: 42,
        };
        let a = build_index(&store, cfg).unwrap();
        let b = build_index(&store, cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_heavy_data_still_terminates() {
        let vectors: Vec<Vec<f64>> = (0..100).map(|_| vec![0.5, 0.5, 0.5]).collect();
        let refs: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
        let store = toy_store(&refs);
        let forest = build_index(
            &store,
            IndexConfig {
                n_trees: 2,
                max_leaf_size: 4,
                seed: 0,
            },
        )
        .unwrap();
        for t in 0..2 {
            let mut rows = forest.leaf_rows(t);
            rows.sort_unstable();
            assert_eq!(rows.len(), 100);
        }
    }

    #[test]
    fn self_retrieval_and_tie_break() {
        let store = toy_store(&[&[2.0, 0.0], &[0.0, 3.0], &[2.0, 0.0]]);
        let hits = brute_force_query(&store, &[1.0, 0.0], 3).unwrap();
        // Rows 0 and 2 are identical unit vectors; ties break by row id.
        assert_eq!(hits[0].row_id, 0);
        assert_eq!(hits[1].row_id, 2);
        assert!(hits[0].distance <= 1e-9);
        assert!(hits[1].distance <= 1e-9);
        assert!(hits[0].distance <= hits[1].distance || hits[0].distance == hits[1].distance);
    }

    #[test]
    fn singleton_store_returns_its_row() {
        let store = toy_store(&[&[0.3, 0.4]]);
        let hits = brute_force_query(&store, &[0.3, 0.4], 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].row_id, 0);
    }

    #[test]
    fn exhaustive_budget_matches_brute_force() {
        let store = random_unit_store(400, 16, 9);
        let forest = build_index(
            &store,
            IndexConfig {
                n_trees: 8,
                max_leaf_size: 8,
                seed: 11,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..25 {
            let q: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let exact = brute_force_query(&store, &q, 10).unwrap();
            let approx = query(&forest, &store, &q, 10, store.len()).unwrap();
            assert_eq!(exact, approx);
        }
    }

    #[test]
    fn results_are_sorted_unique_and_in_range() {
        let store = random_unit_store(200, 8, 2);
        let forest = build_index(&store, IndexConfig::default()).unwrap();
        let hits = query(&forest, &store, store.vector(5), 20, 100).unwrap();
        let mut seen = HashSet::new();
        let mut last = -1.0f64;
        for h in &hits {
            assert!(h.distance >= last);
            last = h.distance;
            assert!((0.0..=2.0).contains(&h.distance));
            assert!(seen.insert(h.row_id));
        }
        assert_eq!(hits[0].row_id, 5);
        assert!(hits[0].distance <= 1e-9);
    }

    #[test]
    fn budget_monotonically_improves_recall() {
        let store = random_unit_store(1500, 16, 21);
        let forest = build_index(
            &store,
            IndexConfig {
                n_trees: 10,
                max_leaf_size: 8,
                seed: 3,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let queries: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let recall_at = |budget: usize| -> f64 {
            let mut total = 0.0;
            for q in &queries {
                let exact: HashSet<usize> = brute_force_query(&store, q, 10)
                    .unwrap()
                    .into_iter()
                    .map(|n| n.row_id)
                    .collect();
                let approx = query(&forest, &store, q, 10, budget).unwrap();
                let found = approx.iter().filter(|n| exact.contains(&n.row_id)).count();
                total += found as f64 / exact.len() as f64;
            }
            total / queries.len() as f64
        };
        let low = recall_at(50);
        let high = recall_at(600);
        let exhaustive = recall_at(1500);
        assert!(high >= low - 1e-9, "recall dropped: {low} -> {high}");
        assert!((exhaustive - 1.0).abs() < 1e-12);
    }

    #[test]
    fn index_roundtrips_and_answers_identically() {
        let store = random_unit_store(300, 12, 4);
        let index = EmbeddingIndex::new(
            store,
            IndexConfig {
                n_trees: 6,
                max_leaf_size: 8,
                seed: 8,
            },
        )
        .unwrap();
        let fingerprint = [7u8; 32];
        let mut buf = Vec::new();
        save_index(&index, &fingerprint, &mut buf).unwrap();
        let (loaded, fp) = load_index(buf.as_slice()).unwrap();
        assert_eq!(fp, fingerprint);
        assert_eq!(index, loaded);

        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..100 {
            let q: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = index.query(&q, 5, 100).unwrap();
            let b = loaded.query(&q, 5, 100).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupt_index_is_rejected() {
        let store = random_unit_store(50, 4, 5);
        let index = EmbeddingIndex::new(store, IndexConfig::default()).unwrap();
        let mut buf = Vec::new();
        save_index(&index, &[0u8; 32], &mut buf).unwrap();

        // Truncated stream.
        let truncated = &buf[..buf.len() / 2];
        assert!(load_index(truncated).is_err());

        // Wrong magic.
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            load_index(bad_magic.as_slice()),
            Err(Error::BadMagic { .. })
        ));

        // Bit flip in the payload.
        let mut flipped = buf.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x01;
        let err = load_index(flipped.as_slice());
        assert!(err.is_err());

        // Version bump.
        let mut versioned = buf;
        versioned[4] = 9;
        assert!(matches!(
            load_index(versioned.as_slice()),
            Err(Error::VersionMismatch { .. })
        ));
    }
}
