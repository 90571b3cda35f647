//! Reference sets (canonical entities with their names) and gold-labeled
//! query sets, with TSV ingestion.
//!
//! The on-disk shape is deliberately flat: one `id<TAB>name` pair per line
//! for references, one `mention<TAB>gold_id` pair per line for queries.
//! Lines starting with `#` and blank lines are ignored. Names are stored
//! verbatim — no case folding — so that variant generation downstream stays
//! in control of normalization.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use crate::{Error, Result};

/// Canonical entity identifier.
///
/// Non-empty, with no surrounding whitespace (the constructor trims).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(raw: impl AsRef<str>) -> Result<Self> {
        let trimmed = raw.as_ref().trim();
        if trimmed.is_empty() {
            return Err(Error::InvalidArgument("entity id is empty".into()));
        }
        Ok(EntityId(trimmed.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A canonical entity: an ID plus the ordered set of names that refer to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    id: EntityId,
    names: Vec<String>,
}

impl Entity {
    pub fn id(&self) -> &EntityId {
        &self.id
    }

    /// Names in first-seen order. Non-empty; unique within the entity.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains_name(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}

/// The authority list of entities, with a name → IDs multimap.
///
/// A name may map to multiple entities; that ambiguity is retained and left
/// to consumers to resolve.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferenceSet {
    entities: Vec<Entity>,
    by_id: HashMap<String, usize>,
    name_lookup: HashMap<String, BTreeSet<EntityId>>,
}

impl ReferenceSet {
    /// Builds a reference set from `(id, name)` pairs, grouping by ID in
    /// first-seen order and collapsing duplicate pairs.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut set = ReferenceSet::default();
        for (id, name) in pairs {
            set.insert(EntityId::new(id)?, name.as_ref())?;
        }
        Ok(set)
    }

    fn insert(&mut self, id: EntityId, name: &str) -> Result<()> {
        if name.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "empty name for entity {id}"
            )));
        }
        let idx = match self.by_id.get(id.as_str()) {
            Some(&idx) => idx,
            None => {
                self.by_id.insert(id.as_str().to_owned(), self.entities.len());
                self.entities.push(Entity {
                    id: id.clone(),
                    names: Vec::new(),
                });
                self.entities.len() - 1
            }
        };
        let entity = &mut self.entities[idx];
        if !entity.contains_name(name) {
            entity.names.push(name.to_owned());
            self.name_lookup
                .entry(name.to_owned())
                .or_default()
                .insert(id);
        }
        Ok(())
    }

    /// Parses the `id<TAB>name` TSV shape. Duplicate pairs collapse; an
    /// input with no data lines is an error.
    pub fn parse_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut set = ReferenceSet::default();
        let mut saw_data = false;
        for (id, name, _line) in tsv_pairs(reader, "reference")? {
            saw_data = true;
            set.insert(id2(&id, _line)?, &name).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::parse(_line, m),
                other => other,
            })?;
        }
        if !saw_data {
            return Err(Error::EmptyInput("reference set has no data lines".into()));
        }
        Ok(set)
    }

    /// Writes the set back out in the same TSV shape, entities in order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for entity in &self.entities {
            for name in &entity.names {
                writeln!(w, "{}\t{}", entity.id(), name)?;
            }
        }
        Ok(())
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.by_id.get(id.as_str()).map(|&i| &self.entities[i])
    }

    pub fn contains_id(&self, id: &EntityId) -> bool {
        self.by_id.contains_key(id.as_str())
    }

    /// Entities a name string maps to (possibly more than one).
    pub fn entities_for_name(&self, name: &str) -> Option<&BTreeSet<EntityId>> {
        self.name_lookup.get(name)
    }

    /// Iterates `(id, name)` pairs in entity order.
    pub fn name_pairs(&self) -> impl Iterator<Item = (&EntityId, &str)> {
        self.entities
            .iter()
            .flat_map(|e| e.names.iter().map(move |n| (&e.id, n.as_str())))
    }

    pub fn name_pair_count(&self) -> usize {
        self.entities.iter().map(|e| e.names.len()).sum()
    }

    pub fn stats(&self) -> ReferenceStats {
        let mut histogram = BTreeMap::new();
        for entity in &self.entities {
            *histogram.entry(entity.names.len()).or_insert(0) += 1;
        }
        ReferenceStats {
            entity_count: self.entities.len(),
            name_pair_count: self.name_pair_count(),
            names_per_entity: histogram,
        }
    }
}

fn id2(raw: &str, line: usize) -> Result<EntityId> {
    EntityId::new(raw).map_err(|_| Error::parse(line, "empty entity id"))
}

/// Exact counts over a reference set: entities, `(id, name)` pairs, and a
/// histogram of names-per-entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceStats {
    pub entity_count: usize,
    pub name_pair_count: usize,
    /// name count → number of entities with that many names
    pub names_per_entity: BTreeMap<usize, usize>,
}

/// A query mention with its gold entity ID.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub mention: String,
    pub gold_id: EntityId,
}

/// Parses the `mention<TAB>gold_id` TSV shape. Records come back in file
/// order and duplicates are preserved; an empty stream is an empty list.
pub fn parse_query_tsv<R: BufRead>(reader: R) -> Result<Vec<QueryRecord>> {
    let mut records = Vec::new();
    for (mention, gold, line) in tsv_pairs(reader, "query")? {
        if mention.trim().is_empty() {
            return Err(Error::parse(line, "empty mention"));
        }
        let gold_id = EntityId::new(&gold).map_err(|_| Error::parse(line, "empty gold id"))?;
        records.push(QueryRecord { mention, gold_id });
    }
    Ok(records)
}

/// Splits a two-field TSV stream into `(field_a, field_b, line_number)`
/// triples, skipping comments and blank lines.
fn tsv_pairs<R: BufRead>(reader: R, what: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                line_no,
                format!(
                    "expected 2 tab-separated fields in {what} line, found {}",
                    fields.len()
                ),
            ));
        }
        out.push((fields[0].to_owned(), fields[1].to_owned(), line_no));
    }
    Ok(out)
}

/// Checks the name-lookup consistency invariant: every `(name, id)` edge in
/// the multimap corresponds to exactly one entity that carries the name.
#[doc(hidden)]
pub fn lookup_is_consistent(set: &ReferenceSet) -> bool {
    let mut edges = 0usize;
    for (name, ids) in &set.name_lookup {
        for id in ids {
            match set.entity(id) {
                Some(e) if e.contains_name(name) => edges += 1,
                _ => return false,
            }
        }
    }
    // Every (id, name) pair appears in exactly one entity: edge counts match.
    edges == set.name_pair_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(s: &str) -> Result<ReferenceSet> {
        ReferenceSet::parse_tsv(Cursor::new(s))
    }

    #[test]
    fn groups_names_by_id() {
        let set = parse("P1\tFOXP2\nP1\tFOX-P2\nP2\tRAS\n").unwrap();
        assert_eq!(set.len(), 2);
        let p1 = set.entity(&EntityId::new("P1").unwrap()).unwrap();
        assert_eq!(p1.names(), ["FOXP2", "FOX-P2"]);
        assert_eq!(set.name_pair_count(), 3);
    }

    #[test]
    fn duplicate_pairs_collapse() {
        let set = parse("P1\tFOXP2\nP1\tFOXP2\n").unwrap();
        assert_eq!(set.entity(&EntityId::new("P1").unwrap()).unwrap().names(), ["FOXP2"]);
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse("P1\tFOXP2\nP1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert!(matches!(parse(""), Err(Error::EmptyInput(_))));
        assert!(matches!(parse("# only comments\n\n"), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let set = parse("# header\nP1\tFOXP2\n\n  \nP2\tRAS\n").unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn ambiguous_names_are_retained() {
        let set = parse("P1\tRAS\nP2\tRAS\n").unwrap();
        let ids = set.entities_for_name("RAS").unwrap();
        assert_eq!(ids.len(), 2);
        assert!(lookup_is_consistent(&set));
    }

    #[test]
    fn query_parse_basics() {
        let records = parse_query_tsv(Cursor::new("FOX P2\tP1\n")).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].mention, "FOX P2");
        assert_eq!(records[0].gold_id, EntityId::new("P1").unwrap());

        assert!(parse_query_tsv(Cursor::new("")).unwrap().is_empty());

        let err = parse_query_tsv(Cursor::new("a\tb\tc\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn query_duplicates_preserved_in_order() {
        let records = parse_query_tsv(Cursor::new("m\tP1\nm\tP1\nn\tP2\n")).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0], records[1]);
    }

    #[test]
    fn stats_counts_and_histogram() {
        let set = parse("P1\tFOXP2\nP1\tFOX-P2\nP2\tRAS\n").unwrap();
        let stats = set.stats();
        assert_eq!(stats.entity_count, 2);
        assert_eq!(stats.name_pair_count, 3);
        assert_eq!(stats.names_per_entity.get(&2), Some(&1));
        assert_eq!(stats.names_per_entity.get(&1), Some(&1));

        let five = ReferenceSet::from_pairs((0..5).map(|i| ("E".to_string(), format!("n{i}")))).unwrap();
        assert_eq!(five.stats().names_per_entity, BTreeMap::from([(5, 1)]));

        let empty = ReferenceSet::default();
        let stats = empty.stats();
        assert_eq!(stats.entity_count, 0);
        assert_eq!(stats.name_pair_count, 0);
        assert!(stats.names_per_entity.is_empty());
    }

    #[test]
    fn pair_count_matches_name_sum() {
        let set = parse("A\tx\nA\ty\nB\tz\nC\tw\nC\tw\n").unwrap();
        let sum: usize = set.entities().iter().map(|e| e.names().len()).sum();
        assert_eq!(sum, set.stats().name_pair_count);
    }

    #[test]
    fn roundtrip_through_tsv() {
        let set = parse("P1\tFOXP2\nP1\tFOX-P2\nP2\tRAS\n").unwrap();
        let mut buf = Vec::new();
        set.write_tsv(&mut buf).unwrap();
        let back = ReferenceSet::parse_tsv(Cursor::new(buf)).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn crlf_lines_are_tolerated() {
        let set = parse("P1\tFOXP2\r\nP2\tRAS\r\n").unwrap();
        assert!(set.entity(&EntityId::new("P1").unwrap()).unwrap().contains_name("FOXP2"));
    }
}
