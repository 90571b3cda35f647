//! End-to-end retrieval: embed every reference name into an indexed store,
//! answer query mentions with entity-level ranked candidates, and score
//! Hits@k against gold labels.

use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::ann::{load_index, save_index, EmbeddingIndex, IndexConfig, Neighbor};
use crate::encoder::EncoderModel;
use crate::refset::{EntityId, QueryRecord, ReferenceSet};
use crate::training::embed_all_names;
use crate::{Error, Result};

/// Raw-neighbor overfetch before entity dedup: entities with many names
/// would otherwise crowd distinct entities out of the top-k.
pub const DEFAULT_OVERFETCH_FACTOR: usize = 5;

/// The reference set embedded and indexed under a specific model, tagged
/// with that model's fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedReference {
    fingerprint: [u8; 32],
    index: EmbeddingIndex,
}

impl EmbeddedReference {
    pub fn new(index: EmbeddingIndex, fingerprint: [u8; 32]) -> Self {
        EmbeddedReference { fingerprint, index }
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    /// Entity IDs present in the store.
    pub fn entity_ids(&self) -> HashSet<EntityId> {
        self.index
            .store()
            .rows()
            .map(|r| r.entity_id.clone())
            .collect()
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        save_index(&self.index, &self.fingerprint, writer)
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let (index, fingerprint) = load_index(reader)?;
        Ok(EmbeddedReference { fingerprint, index })
    }
}

/// Embeds all names of all entities and builds the search forest. The row
/// count equals the reference's `(id, name)` pair count; a name listed
/// under two entities yields two rows.
pub fn embed_reference(
    model: &EncoderModel,
    reference: &ReferenceSet,
    index_config: IndexConfig,
) -> Result<EmbeddedReference> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("cannot embed an empty reference set".into()));
    }
    let store = embed_all_names(&model.params, &model.vocab, &model.config, reference)?;
    let index = EmbeddingIndex::new(store, index_config)?;
    let fingerprint = crate::encoder::model_fingerprint(model)?;
    Ok(EmbeddedReference { fingerprint, index })
}

/// One candidate entity with its best-matching name.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entity_id: EntityId,
    pub name: String,
    pub distance: f64,
}

/// Ranked entity candidates for one mention, ascending by distance and
/// with each entity appearing once (at its minimum-distance name).
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub mention: String,
    pub candidates: Vec<Candidate>,
}

/// Retrieves the top-k entities for a mention: embed, overfetch raw
/// neighbors, collapse to entity level.
pub fn retrieve(
    embedded: &EmbeddedReference,
    model: &EncoderModel,
    mention: &str,
    k: usize,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    let vector = model.embed(mention)?;
    let raw_k = k.saturating_mul(DEFAULT_OVERFETCH_FACTOR);
    let budget = crate::ann::default_search_budget(raw_k);
    let neighbors = embedded
        .index
        .query(vector.as_slice().expect("contiguous"), raw_k, budget)?;
    Ok(RetrievalResult {
        mention: mention.to_owned(),
        candidates: dedup_entities(neighbors, k),
    })
}

fn dedup_entities(neighbors: Vec<Neighbor>, k: usize) -> Vec<Candidate> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(k);
    for n in neighbors {
        if out.len() == k {
            break;
        }
        if seen.insert(n.entity_id.clone()) {
            out.push(Candidate {
                entity_id: n.entity_id,
                name: n.name,
                distance: n.distance,
            });
        }
    }
    out
}

/// Per-query evaluation detail.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub mention: String,
    pub gold_id: EntityId,
    /// 1-based rank of the gold entity, if it surfaced.
    pub rank: Option<usize>,
    pub top1: Option<Candidate>,
    /// False when the gold ID does not exist in the embedded reference;
    /// such queries count as misses and are flagged, not dropped.
    pub gold_in_reference: bool,
}

/// Hits@k table over a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    /// `(k, fraction of queries whose gold entity ranked in the top k)`.
    pub hits: Vec<(usize, f64)>,
    pub query_count: usize,
    pub missing_gold_count: usize,
}

impl MetricsTable {
    /// `k<TAB>hits` rows.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, hits) in &self.hits {
            writeln!(w, "{k}\t{hits:.6}")?;
        }
        Ok(())
    }
}

/// `mention<TAB>gold<TAB>rank_or_-1<TAB>top1_id<TAB>top1_distance` rows.
pub fn write_query_details<W: Write>(outcomes: &[QueryOutcome], mut w: W) -> Result<()> {
    for o in outcomes {
        let rank = o.rank.map_or(-1i64, |r| r as i64);
        let (top_id, top_dist) = o
            .top1
            .as_ref()
            .map_or(("-".to_string(), f64::NAN), |c| {
                (c.entity_id.to_string(), c.distance)
            });
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{:.9}",
            o.mention, o.gold_id, rank, top_id, top_dist
        )?;
    }
    Ok(())
}

/// Evaluates Hits@k for each requested k over a gold-labeled query set.
///
/// Queries run in parallel against the immutable index; outcomes keep file
/// order, so the table is deterministic.
pub fn evaluate_hits_at_k(
    embedded: &EmbeddedReference,
    model: &EncoderModel,
    queries: &[QueryRecord],
    ks: &[usize],
) -> Result<(MetricsTable, Vec<QueryOutcome>)> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("query set is empty".into()));
    }
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(Error::InvalidArgument("ks must be non-empty positive values".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let k_max = *ks.last().expect("non-empty");

    let known_entities = embedded.entity_ids();
    let outcomes: Vec<QueryOutcome> = queries
        .par_iter()
        .map(|q| -> Result<QueryOutcome> {
            let result = retrieve(embedded, model, &q.mention, k_max)?;
            let rank = result
                .candidates
                .iter()
                .position(|c| c.entity_id == q.gold_id)
                .map(|p| p + 1);
            Ok(QueryOutcome {
                mention: q.mention.clone(),
                gold_id: q.gold_id.clone(),
                rank,
                top1: result.candidates.first().cloned(),
                gold_in_reference: known_entities.contains(&q.gold_id),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let total = outcomes.len();
    let hits = ks
        .iter()
        .map(|&k| {
            let hit = outcomes
                .iter()
                .filter(|o| o.rank.is_some_and(|r| r <= k))
                .count();
            (k, hit as f64 / total as f64)
        })
        .collect();
    let missing_gold_count = outcomes.iter().filter(|o| !o.gold_in_reference).count();
    Ok((
        MetricsTable {
            hits,
            query_count: total,
            missing_gold_count,
        },
        outcomes,
    ))
}

/// Dumps the store as `entity_id<TAB>name<TAB>v_0,...,v_{d−1}` rows; values
/// print in shortest round-trip decimal form.
pub fn dump_embeddings<W: Write>(embedded: &EmbeddedReference, mut w: W) -> Result<()> {
    for row in embedded.index.store().rows() {
        let values: Vec<String> = row.vector.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}\t{}\t{}", row.entity_id, row.name, values.join(","))?;
    }
    Ok(())
}
