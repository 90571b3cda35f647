//! Labeled training pairs: same-entity positives, random cross-entity
//! negatives, soft-labeled syntactic variants, family pairs, and hard
//! negatives mined from the current embedding space.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ann::EmbeddingIndex;
use crate::encoder::EncoderModel;
use crate::refset::{EntityId, ReferenceSet};
use crate::strsim::{jaro_winkler_sim, levenshtein_sim, trigram_jaccard_sim};
use crate::{Error, Result};

/// Where a training pair came from; fixes its label semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairSource {
    Positive,
    RandomNegative,
    SameNameVariant,
    FamilyVariant,
    HardNegative,
}

impl PairSource {
    pub const ALL: [PairSource; 5] = [
        PairSource::Positive,
        PairSource::RandomNegative,
        PairSource::SameNameVariant,
        PairSource::FamilyVariant,
        PairSource::HardNegative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairSource::Positive => "positive",
            PairSource::RandomNegative => "random_negative",
            PairSource::SameNameVariant => "same_name_variant",
            PairSource::FamilyVariant => "family_variant",
            PairSource::HardNegative => "hard_negative",
        }
    }

    fn index(self) -> usize {
        match self {
            PairSource::Positive => 0,
            PairSource::RandomNegative => 1,
            PairSource::SameNameVariant => 2,
            PairSource::FamilyVariant => 3,
            PairSource::HardNegative => 4,
        }
    }
}

/// Two names and a similarity label `y ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub name_a: String,
    pub name_b: String,
    pub label: f64,
    pub source: PairSource,
}

impl TrainingPair {
    pub fn new(
        name_a: impl Into<String>,
        name_b: impl Into<String>,
        label: f64,
        source: PairSource,
    ) -> Result<Self> {
        let name_a = name_a.into();
        let name_b = name_b.into();
        if name_a.is_empty() || name_b.is_empty() {
            return Err(Error::InvalidArgument("pair has an empty name".into()));
        }
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::InvalidArgument(format!("label {label} outside [0, 1]")));
        }
        let label_ok = match source {
            PairSource::Positive => label == 1.0,
            PairSource::RandomNegative | PairSource::HardNegative => label == 0.0,
            PairSource::SameNameVariant | PairSource::FamilyVariant => true,
        };
        if !label_ok {
            return Err(Error::InvalidArgument(format!(
                "label {label} inconsistent with source {}",
                source.as_str()
            )));
        }
        if name_a == name_b && label < 1.0 {
            return Err(Error::InvalidArgument(
                "identical names may not carry a label below 1".into(),
            ));
        }
        Ok(TrainingPair {
            name_a,
            name_b,
            label,
            source,
        })
    }
}

type PairKey = (String, String, u64, PairSource);

/// A deduplicated collection of training pairs in insertion order, with
/// per-source counts. Pairs are unordered: `(a, b)` and `(b, a)` collide.
#[derive(Debug, Default, Clone)]
pub struct PairSet {
    pairs: Vec<TrainingPair>,
    seen: HashSet<PairKey>,
    counts: [usize; 5],
}

impl PairSet {
    pub fn new() -> Self {
        PairSet::default()
    }

    fn key(pair: &TrainingPair) -> PairKey {
        let (a, b) = if pair.name_a <= pair.name_b {
            (pair.name_a.clone(), pair.name_b.clone())
        } else {
            (pair.name_b.clone(), pair.name_a.clone())
        };
        (a, b, pair.label.to_bits(), pair.source)
    }

    /// Inserts a pair; returns false if an identical entry already exists.
    pub fn insert(&mut self, pair: TrainingPair) -> bool {
        let key = Self::key(&pair);
        if !self.seen.insert(key) {
            return false;
        }
        self.counts[pair.source.index()] += 1;
        self.pairs.push(pair);
        true
    }

    /// Moves every pair of `other` into `self`, dropping duplicates.
    pub fn merge(&mut self, other: PairSet) -> usize {
        let mut added = 0;
        for pair in other.pairs {
            if self.insert(pair) {
                added += 1;
            }
        }
        added
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, source: PairSource) -> usize {
        self.counts[source.index()]
    }

    /// `name_a<TAB>name_b<TAB>y<TAB>source` rows for inspection.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.pairs {
            writeln!(w, "{}\t{}\t{}\t{}", p.name_a, p.name_b, p.label, p.source.as_str())?;
        }
        Ok(())
    }
}

/// Unordered same-entity name pairs with label 1. Entities whose
/// cross-product exceeds `cap_per_entity` are subsampled uniformly.
pub fn generate_positive_pairs(
    reference: &ReferenceSet,
    cap_per_entity: usize,
    seed: u64,
) -> Result<PairSet> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference set is empty".into()));
    }
    if cap_per_entity == 0 {
        return Err(Error::InvalidArgument("cap_per_entity must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = PairSet::new();
    for entity in reference.entities() {
        let names = entity.names();
        let mut combos: Vec<(usize, usize)> = (0..names.len())
            .flat_map(|i| (i + 1..names.len()).map(move |j| (i, j)))
            .collect();
        if combos.len() > cap_per_entity {
            combos.shuffle(&mut rng);
            combos.truncate(cap_per_entity);
            combos.sort_unstable();
        }
        for (i, j) in combos {
            set.insert(TrainingPair::new(
                names[i].clone(),
                names[j].clone(),
                1.0,
                PairSource::Positive,
            )?);
        }
    }
    Ok(set)
}

/// `count` random cross-entity name pairs with label 0. Draws whose two
/// strings are equal are rejected and resampled.
pub fn sample_negative_pairs(reference: &ReferenceSet, count: usize, seed: u64) -> Result<PairSet> {
    if reference.len() < 2 {
        return Err(Error::InvalidArgument(
            "negative sampling needs at least 2 entities".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = PairSet::new();
    let entities = reference.entities();
    let max_attempts = 1000 + count.saturating_mul(100);
    let mut attempts = 0;
    while set.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArgument(format!(
                "could not draw {count} distinct negative pairs (got {})",
                set.len()
            )));
        }
        let i = rng.gen_range(0..entities.len());
        let j = rng.gen_range(0..entities.len());
        if i == j {
            continue;
        }
        let name_a = &entities[i].names()[rng.gen_range(0..entities[i].names().len())];
        let name_b = &entities[j].names()[rng.gen_range(0..entities[j].names().len())];
        if name_a == name_b {
            continue;
        }
        set.insert(TrainingPair::new(
            name_a.clone(),
            name_b.clone(),
            0.0,
            PairSource::RandomNegative,
        )?);
    }
    Ok(set)
}

/// Syntactic variants of a single name, in transform order: whitespace
/// removed, non-alphanumerics removed, upper-cased, lower-cased. Variants
/// that collapse to empty or that equal the input are dropped.
pub fn generate_same_name_variants(name: &str) -> Vec<String> {
    let transforms: [fn(&str) -> String; 4] = [
        |s| s.chars().filter(|c| !c.is_whitespace()).collect(),
        |s| s.chars().filter(|c| c.is_alphanumeric()).collect(),
        |s| s.to_uppercase(),
        |s| s.to_lowercase(),
    ];
    let mut out = Vec::new();
    for transform in transforms {
        let variant = transform(name);
        if variant.is_empty() || variant == name || out.contains(&variant) {
            continue;
        }
        out.push(variant);
    }
    out
}

const VARIANT_MEASURES: [(&str, fn(&str, &str) -> f64); 3] = [
    ("trigram_jaccard", trigram_jaccard_sim),
    ("levenshtein", levenshtein_sim),
    ("jaro_winkler", jaro_winkler_sim),
];

/// Soft-labeled variation pairs: every reference name against each of its
/// syntactic variants, plus sampled cross-entity same-family name pairs —
/// one pair per string-similarity measure, labeled with that measure's
/// score.
pub fn generate_variation_pairs(
    reference: &ReferenceSet,
    families: &FamilyMap,
    family_pair_budget: usize,
    seed: u64,
) -> Result<PairSet> {
    let mut set = PairSet::new();
    for entity in reference.entities() {
        for name in entity.names() {
            for variant in generate_same_name_variants(name) {
                for (_, measure) in VARIANT_MEASURES {
                    let score = measure(name, &variant);
                    set.insert(TrainingPair::new(
                        name.clone(),
                        variant.clone(),
                        score,
                        PairSource::SameNameVariant,
                    )?);
                }
            }
        }
    }

    let eligible = families.eligible_families(reference);
    if !eligible.is_empty() && family_pair_budget > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut drawn = 0usize;
        let mut attempts = 0usize;
        let max_attempts = 1000 + family_pair_budget.saturating_mul(20);
        while drawn < family_pair_budget && attempts < max_attempts {
            attempts += 1;
            let (_, members) = &eligible[rng.gen_range(0..eligible.len())];
            let i = rng.gen_range(0..members.len());
            let j = rng.gen_range(0..members.len());
            if i == j {
                continue;
            }
            let ea = reference.entity(&members[i]).expect("validated member");
            let eb = reference.entity(&members[j]).expect("validated member");
            let name_a = &ea.names()[rng.gen_range(0..ea.names().len())];
            let name_b = &eb.names()[rng.gen_range(0..eb.names().len())];
            if name_a == name_b {
                continue;
            }
            let mut inserted = false;
            for (_, measure) in VARIANT_MEASURES {
                let score = measure(name_a, name_b);
                inserted |= set.insert(TrainingPair::new(
                    name_a.clone(),
                    name_b.clone(),
                    score,
                    PairSource::FamilyVariant,
                )?);
            }
            if inserted {
                drawn += 1;
            }
        }
    }
    Ok(set)
}

/// Groups of entity IDs that share a domain family.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FamilyMap {
    families: BTreeMap<String, BTreeSet<EntityId>>,
}

impl FamilyMap {
    pub fn empty() -> Self {
        FamilyMap::default()
    }

    /// Parses `family_id<TAB>entity_id` lines (comments and blanks skipped).
    pub fn parse_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut families: BTreeMap<String, BTreeSet<EntityId>> = BTreeMap::new();
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
                    format!("expected 2 tab-separated fields, found {}", fields.len()),
                ));
            }
            let family = fields[0].trim();
            if family.is_empty() {
                return Err(Error::parse(line_no, "empty family id"));
            }
            let entity =
                EntityId::new(fields[1]).map_err(|_| Error::parse(line_no, "empty entity id"))?;
            families.entry(family.to_owned()).or_default().insert(entity);
        }
        Ok(FamilyMap { families })
    }

    /// Errors if any member entity is missing from the reference set.
    pub fn validate(&self, reference: &ReferenceSet) -> Result<()> {
        for (family, members) in &self.families {
            for id in members {
                if !reference.contains_id(id) {
                    return Err(Error::InvalidArgument(format!(
                        "family {family} references unknown entity {id}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    /// Families with ≥ 2 members present in the reference set.
    fn eligible_families(&self, reference: &ReferenceSet) -> Vec<(&str, Vec<EntityId>)> {
        self.families
            .iter()
            .filter_map(|(family, members)| {
                let present: Vec<EntityId> = members
                    .iter()
                    .filter(|id| reference.contains_id(id))
                    .cloned()
                    .collect();
                (present.len() >= 2).then_some((family.as_str(), present))
            })
            .collect()
    }
}

/// Hard negatives plus the mean embedding distance observed while mining.
#[derive(Debug, Clone)]
pub struct MinedNegatives {
    pub pairs: PairSet,
    /// Mean cosine distance of the emitted pairs at mining time.
    pub mean_distance: Option<f64>,
}

/// For every reference name, fetches its `k` nearest embedded names and
/// emits a zero-labeled pair for each neighbor that belongs to a different
/// entity; identical-string neighbors are skipped and unordered duplicates
/// collapse.
pub fn mine_hard_negatives(
    model: &EncoderModel,
    reference: &ReferenceSet,
    index: &EmbeddingIndex,
    k: usize,
) -> Result<MinedNegatives> {
    if model.config.output_dim != index.store().dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.config.output_dim,
            actual: index.store().dimension(),
        });
    }
    if index.store().len() != reference.name_pair_count() {
        return Err(Error::InvalidArgument(format!(
            "index has {} rows but the reference holds {} name pairs",
            index.store().len(),
            reference.name_pair_count()
        )));
    }
    let mut mined = MinedNegatives {
        pairs: PairSet::new(),
        mean_distance: None,
    };
    if k == 0 {
        return Ok(mined);
    }

    let store = index.store();
    let row_ids: Vec<usize> = (0..store.len()).collect();
    // Read-only queries run pair-parallel; results merge in row order so the
    // outcome does not depend on the thread count.
    let per_row: Vec<Vec<(usize, usize, f64)>> = row_ids
        .par_iter()
        .map(|&row_id| {
            let neighbors = index.query_row(row_id, k);
            neighbors
                .into_iter()
                .map(|n| (row_id, n.row_id, n.distance))
                .collect()
        })
        .collect();

    let mut total_distance = 0.0;
    let mut accepted = 0usize;
    for neighbors in per_row {
        for (row_id, neighbor_id, distance) in neighbors {
            let row = store.row(row_id);
            let neighbor = store.row(neighbor_id);
            if row.entity_id == neighbor.entity_id || row.name == neighbor.name {
                continue;
            }
            let pair = TrainingPair::new(
                row.name.to_owned(),
                neighbor.name.to_owned(),
                0.0,
                PairSource::HardNegative,
            )?;
            if mined.pairs.insert(pair) {
                total_distance += distance;
                accepted += 1;
            }
        }
    }
    if accepted > 0 {
        mined.mean_distance = Some(total_distance / accepted as f64);
    }
    Ok(mined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference(pairs: &[(&str, &str)]) -> ReferenceSet {
        ReferenceSet::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn positives_are_within_entity_cross_products() {
        let r = reference(&[("E1", "A"), ("E1", "B"), ("E1", "C"), ("E2", "X")]);
        let set = generate_positive_pairs(&r, 100, 0).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.pairs().iter().all(|p| p.label == 1.0));
        let names: HashSet<(String, String)> = set
            .pairs()
            .iter()
            .map(|p| (p.name_a.clone(), p.name_b.clone()))
            .collect();
        assert!(names.contains(&("A".into(), "B".into())));
        assert!(names.contains(&("A".into(), "C".into())));
        assert!(names.contains(&("B".into(), "C".into())));
    }

    #[test]
    fn single_name_entities_produce_no_positives() {
        let r = reference(&[("E1", "A"), ("E2", "B")]);
        let set = generate_positive_pairs(&r, 100, 0).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn positive_cap_is_exact() {
        let pairs: Vec<(String, String)> = (0..100)
            .map(|i| ("BIG".to_string(), format!("name{i:03}")))
            .collect();
        let r = ReferenceSet::from_pairs(pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap();
        let set = generate_positive_pairs(&r, 50, 1).unwrap();
        assert_eq!(set.len(), 50);
        let again = generate_positive_pairs(&r, 50, 1).unwrap();
        assert_eq!(
            set.pairs().iter().map(|p| (&p.name_a, &p.name_b)).collect::<Vec<_>>(),
            again.pairs().iter().map(|p| (&p.name_a, &p.name_b)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn negative_sampling_is_cross_entity_and_seeded() {
        let r = reference(&[
            ("E1", "a1"),
            ("E1", "a2"),
            ("E1", "a3"),
            ("E2", "b1"),
            ("E2", "b2"),
            ("E2", "b3"),
        ]);
        let set = sample_negative_pairs(&r, 10, 7).unwrap();
        assert_eq!(set.len(), 10);
        for p in set.pairs() {
            assert_eq!(p.label, 0.0);
            assert_ne!(p.name_a, p.name_b);
        }
        let rerun = sample_negative_pairs(&r, 10, 7).unwrap();
        assert_eq!(set.pairs(), rerun.pairs());
    }

    #[test]
    fn negative_sampling_rejects_shared_strings() {
        let r = reference(&[("E1", "RAS"), ("E1", "x"), ("E2", "RAS"), ("E2", "y")]);
        let set = sample_negative_pairs(&r, 3, 3).unwrap();
        for p in set.pairs() {
            assert_ne!(p.name_a, p.name_b);
        }
    }

    #[test]
    fn negative_sampling_needs_two_entities() {
        let r = reference(&[("E1", "a"), ("E1", "b")]);
        assert!(sample_negative_pairs(&r, 1, 0).is_err());
    }

    #[test]
    fn variants_follow_the_transform_list() {
        let v = generate_same_name_variants("FOX P2");
        assert!(v.contains(&"FOXP2".to_string()));
        let v = generate_same_name_variants("FOX-P2");
        assert!(v.contains(&"FOXP2".to_string()));
        let v = generate_same_name_variants("Ras");
        assert!(v.contains(&"RAS".to_string()));
        assert!(v.contains(&"ras".to_string()));
        // All-punctuation names produce no empty variants.
        let v = generate_same_name_variants("--");
        assert!(!v.iter().any(String::is_empty));
        // No-op transforms yield nothing.
        assert!(generate_same_name_variants("ABC").iter().all(|s| s != "ABC"));
    }

    #[test]
    fn variation_pairs_carry_measure_scores() {
        let r = reference(&[("E1", "FOX P2")]);
        let set = generate_variation_pairs(&r, &FamilyMap::empty(), 0, 0).unwrap();
        // "FOX P2" → variants "FOXP2" and "fox p2", three measures each.
        assert_eq!(set.count(PairSource::SameNameVariant), 6);
        assert_eq!(set.count(PairSource::FamilyVariant), 0);
        let lev = set
            .pairs()
            .iter()
            .find(|p| p.name_b == "FOXP2" && (p.label - (1.0 - 1.0 / 6.0)).abs() < 1e-12);
        assert!(lev.is_some(), "missing levenshtein-labeled variant pair");
        for p in set.pairs() {
            let scores = [
                trigram_jaccard_sim(&p.name_a, &p.name_b),
                levenshtein_sim(&p.name_a, &p.name_b),
                jaro_winkler_sim(&p.name_a, &p.name_b),
            ];
            assert!(scores.iter().any(|s| *s == p.label));
        }
    }

    #[test]
    fn family_pairs_cross_entities_within_family() {
        let r = reference(&[("E1", "alpha"), ("E2", "beta"), ("E3", "gamma")]);
        let tsv = "F1\tE1\nF1\tE2\n# comment\nF2\tE3\n";
        let fam = FamilyMap::parse_tsv(std::io::Cursor::new(tsv)).unwrap();
        fam.validate(&r).unwrap();
        assert_eq!(fam.len(), 2);
        let set = generate_variation_pairs(&r, &fam, 5, 9).unwrap();
        let family_pairs: Vec<_> = set
            .pairs()
            .iter()
            .filter(|p| p.source == PairSource::FamilyVariant)
            .collect();
        assert!(!family_pairs.is_empty());
        for p in &family_pairs {
            let names = [p.name_a.as_str(), p.name_b.as_str()];
            assert!(names.contains(&"alpha") && names.contains(&"beta"));
        }
    }

    #[test]
    fn family_validation_rejects_unknown_entities() {
        let r = reference(&[("E1", "alpha"), ("E2", "beta")]);
        let fam = FamilyMap::parse_tsv(std::io::Cursor::new("F1\tE1\nF1\tE9\n")).unwrap();
        assert!(fam.validate(&r).is_err());
    }

    #[test]
    fn pairset_dedups_unordered() {
        let mut set = PairSet::new();
        assert!(set.insert(TrainingPair::new("a", "b", 0.0, PairSource::RandomNegative).unwrap()));
        assert!(!set.insert(TrainingPair::new("b", "a", 0.0, PairSource::RandomNegative).unwrap()));
        // Same strings under a different source or label are distinct entries.
        assert!(set.insert(TrainingPair::new("a", "b", 0.0, PairSource::HardNegative).unwrap()));
        assert_eq!(set.len(), 2);
        assert_eq!(set.count(PairSource::RandomNegative), 1);
        assert_eq!(set.count(PairSource::HardNegative), 1);
    }

    #[test]
    fn training_pair_validation() {
        assert!(TrainingPair::new("a", "a", 0.5, PairSource::SameNameVariant).is_err());
        assert!(TrainingPair::new("a", "b", 0.5, PairSource::Positive).is_err());
        assert!(TrainingPair::new("a", "b", 0.5, PairSource::HardNegative).is_err());
        assert!(TrainingPair::new("", "b", 0.0, PairSource::RandomNegative).is_err());
        assert!(TrainingPair::new("a", "b", 1.5, PairSource::SameNameVariant).is_err());
        assert!(TrainingPair::new("a", "a", 1.0, PairSource::Positive).is_ok());
    }

    #[test]
    fn pairset_tsv_is_inspectable() {
        let mut set = PairSet::new();
        set.insert(TrainingPair::new("FOX P2", "FOXP2", 0.8333, PairSource::SameNameVariant).unwrap());
        let mut buf = Vec::new();
        set.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "FOX P2\tFOXP2\t0.8333\tsame_name_variant\n");
    }

    proptest! {
        /// Positive pairs stay within one entity; negatives cross entities.
        #[test]
        fn pair_provenance_is_checkable(seed in 0u64..50) {
            let r = reference(&[
                ("E1", "aa"), ("E1", "ab"), ("E1", "ac"),
                ("E2", "ba"), ("E2", "bb"),
                ("E3", "ca"), ("E3", "cb"),
            ]);
            let pos = generate_positive_pairs(&r, 100, seed).unwrap();
            for p in pos.pairs() {
                let ids_a = r.entities_for_name(&p.name_a).unwrap();
                let ids_b = r.entities_for_name(&p.name_b).unwrap();
                prop_assert!(ids_a.intersection(ids_b).next().is_some());
            }
            let neg = sample_negative_pairs(&r, 8, seed).unwrap();
            for p in neg.pairs() {
                let ids_a = r.entities_for_name(&p.name_a).unwrap();
                let ids_b = r.entities_for_name(&p.name_b).unwrap();
                prop_assert!(ids_a.intersection(ids_b).next().is_none());
            }
        }
    }
}
