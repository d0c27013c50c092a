//! Knowledge-graph topic context: a triple store, TransE entity embeddings
//! and the staged mapping from topic text to a sequence of graph entities.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Topic;
use crate::embeddings::{nearest_neighbors, EmbeddingTable, Metric};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Lowercase, whitespace and underscores folded to a single `_`, surrounding
/// punctuation removed. `"Death penalty"` and `"death_penalty"` normalize alike.
pub fn normalize_entity_name(name: &str) -> String {
    let lowered = name.to_lowercase();
    let parts: Vec<&str> = lowered
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|p| !p.is_empty())
        .collect();
    parts
        .join("_")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_index: HashMap<String, usize>,
    normalized_index: HashMap<String, usize>,
    relations: Vec<String>,
    relation_index: HashMap<String, usize>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, name: &str) -> usize {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(name.to_string());
        self.entity_index.insert(name.to_string(), id);
        self.normalized_index
            .entry(normalize_entity_name(name))
            .or_insert(id);
        id
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relations.len();
        self.relations.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        id
    }

    /// Adds a triple by names; returns false when it was already present.
    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let triple = Triple {
            head: self.add_entity(head),
            relation: self.add_relation(relation),
            tail: self.add_entity(tail),
        };
        if self.triple_set.insert(triple) {
            self.triples.push(triple);
            true
        } else {
            false
        }
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    /// Entity whose normalized name equals the normalized `text`.
    pub fn find_entity(&self, text: &str) -> Option<&str> {
        self.normalized_index
            .get(&normalize_entity_name(text))
            .map(|&id| self.entities[id].as_str())
    }
}

/// Reads `head TAB relation TAB tail` lines. Blank lines are skipped and
/// duplicate triples collapse.
pub fn load_triples(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut kg = KnowledgeGraph::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!(
                    "expected `head<TAB>relation<TAB>tail`, got {} fields",
                    fields.len()
                ),
            });
        }
        kg.add_triple(fields[0], fields[1], fields[2]);
    }
    Ok(kg)
}

/// TransE vectors for every entity and relation of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityEmbeddingTable {
    entity_names: Vec<String>,
    entity_index: HashMap<String, usize>,
    entity_vectors: Array2<f64>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, usize>,
    relation_vectors: Array2<f64>,
}

fn index_of(names: &[String]) -> HashMap<String, usize> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect()
}

impl EntityEmbeddingTable {
    pub fn new(
        entity_names: Vec<String>,
        entity_vectors: Array2<f64>,
        relation_names: Vec<String>,
        relation_vectors: Array2<f64>,
    ) -> Result<Self> {
        if entity_names.len() != entity_vectors.nrows()
            || relation_names.len() != relation_vectors.nrows()
        {
            return Err(Error::invalid("name count does not match vector rows"));
        }
        if entity_vectors.ncols() != relation_vectors.ncols() {
            return Err(Error::Dimension {
                expected: entity_vectors.ncols(),
                got: relation_vectors.ncols(),
            });
        }
        let entity_index = index_of(&entity_names);
        let relation_index = index_of(&relation_names);
        if entity_index.len() != entity_names.len() || relation_index.len() != relation_names.len()
        {
            return Err(Error::invalid("duplicate entity or relation name"));
        }
        Ok(Self {
            entity_names,
            entity_index,
            entity_vectors,
            relation_names,
            relation_index,
            relation_vectors,
        })
    }

    pub fn dimension(&self) -> usize {
        self.entity_vectors.ncols()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.entity_index
            .get(name)
            .map(|&i| self.entity_vectors.row(i))
    }

    pub fn relation(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.relation_index
            .get(name)
            .map(|&i| self.relation_vectors.row(i))
    }

    pub fn entity_vectors(&self) -> &Array2<f64> {
        &self.entity_vectors
    }

    pub fn relation_vectors(&self) -> &Array2<f64> {
        &self.relation_vectors
    }

    pub fn round_to_f32(&mut self) {
        self.entity_vectors.mapv_inplace(|x| x as f32 as f64);
        self.relation_vectors.mapv_inplace(|x| x as f32 as f64);
    }
}

fn l2(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// TransE distance ‖h + r − t‖₂; lower is more plausible.
pub fn transe_score(
    table: &EntityEmbeddingTable,
    head: &str,
    relation: &str,
    tail: &str,
) -> Result<f64> {
    let unknown = |kind, name: &str| Error::Unknown {
        kind,
        name: name.to_string(),
    };
    let h = table.entity(head).ok_or_else(|| unknown("entity", head))?;
    let r = table
        .relation(relation)
        .ok_or_else(|| unknown("relation", relation))?;
    let t = table.entity(tail).ok_or_else(|| unknown("entity", tail))?;
    Ok(l2((&h + &r - t).view()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransEConfig {
    pub dimension: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
}

impl Default for TransEConfig {
    fn default() -> Self {
        Self {
            dimension: 32,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 200,
            negatives_per_positive: 1,
        }
    }
}

impl TransEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::field("transe.dimension", "must be at least 1"));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::field("transe.margin", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::field("transe.learning_rate", "must be positive"));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::field(
                "transe.negatives_per_positive",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

struct TransEState {
    entities: Array2<f64>,
    relations: Array2<f64>,
}

impl TransEState {
    fn init(kg: &KnowledgeGraph, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw =
            |rows: usize| Array2::from_shape_fn((rows, dim), |_| rng.gen_range(-bound..bound));
        let mut state = Self {
            entities: draw(kg.entities().len()),
            relations: draw(kg.relations().len()),
        };
        normalize_rows(&mut state.relations);
        normalize_rows(&mut state.entities);
        state
    }

    fn distance_vector(&self, t: &Triple) -> Array1<f64> {
        &self.entities.row(t.head) + &self.relations.row(t.relation) - self.entities.row(t.tail)
    }

    /// One margin-ranking SGD update on a (true, corrupted) pair. Returns the hinge loss.
    fn sgd_step(&mut self, pos: &Triple, neg: &Triple, margin: f64, lr: f64) -> f64 {
        let dp = self.distance_vector(pos);
        let dn = self.distance_vector(neg);
        let (sp, sn) = (l2(dp.view()), l2(dn.view()));
        let loss = margin + sp - sn;
        if loss <= 0.0 {
            return 0.0;
        }
        let gp = if sp > 0.0 {
            dp / sp
        } else {
            Array1::zeros(dp.len())
        };
        let gn = if sn > 0.0 {
            dn / sn
        } else {
            Array1::zeros(dn.len())
        };
        // gradients are computed up front, so repeated entities accumulate correctly
        self.entities.row_mut(pos.head).scaled_add(-lr, &gp);
        self.relations.row_mut(pos.relation).scaled_add(-lr, &gp);
        self.entities.row_mut(pos.tail).scaled_add(lr, &gp);
        self.entities.row_mut(neg.head).scaled_add(lr, &gn);
        self.relations.row_mut(neg.relation).scaled_add(lr, &gn);
        self.entities.row_mut(neg.tail).scaled_add(-lr, &gn);
        loss
    }

    fn into_table(self, kg: &KnowledgeGraph) -> EntityEmbeddingTable {
        EntityEmbeddingTable::new(
            kg.entities().to_vec(),
            self.entities,
            kg.relations().to_vec(),
            self.relations,
        )
        .expect("shapes follow the graph")
    }
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let n = l2(row.view());
        if n > 0.0 {
            row /= n;
        }
    }
}

fn corrupt(triple: &Triple, n_entities: usize, rng: &mut ChaCha8Rng) -> Triple {
    let mut out = *triple;
    let replace_head = rng.gen_bool(0.5);
    let original = if replace_head {
        triple.head
    } else {
        triple.tail
    };
    let mut e = rng.gen_range(0..n_entities);
    if n_entities > 1 {
        while e == original {
            e = rng.gen_range(0..n_entities);
        }
    }
    if replace_head {
        out.head = e;
    } else {
        out.tail = e;
    }
    out
}

/// Trains TransE with the margin ranking loss over head/tail corruptions.
/// Entity vectors are projected onto the unit sphere at initialization and
/// after every epoch.
pub fn train_transe(
    kg: &KnowledgeGraph,
    config: &TransEConfig,
    seed: u64,
) -> Result<EntityEmbeddingTable> {
    if kg.triples().is_empty() {
        return Err(Error::Empty("knowledge graph has no triples"));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = TransEState::init(kg, config.dimension, &mut rng);
    let mut order: Vec<usize> = (0..kg.triples().len()).collect();
    let n_entities = kg.entities().len();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let pos = kg.triples()[i];
            for _ in 0..config.negatives_per_positive {
                let neg = corrupt(&pos, n_entities, &mut rng);
                total += state.sgd_step(&pos, &neg, config.margin, config.learning_rate);
            }
        }
        normalize_rows(&mut state.entities);
        log::debug!("transe epoch {epoch}: hinge loss {total:.4}");
    }
    Ok(state.into_table(kg))
}

/// Mean distance of the graph's triples and of all their single-entity
/// corruptions that are not themselves true triples.
pub fn score_summary(table: &EntityEmbeddingTable, kg: &KnowledgeGraph) -> Result<(f64, f64)> {
    let vectors = graph_vectors(table, kg)?;
    let (mut true_sum, mut corrupt_sum, mut corrupt_n) = (0.0, 0.0, 0usize);
    for t in kg.triples() {
        true_sum += vectors.score(t);
        for e in 0..kg.entities().len() {
            for c in [Triple { head: e, ..*t }, Triple { tail: e, ..*t }] {
                if !kg.contains(&c) {
                    corrupt_sum += vectors.score(&c);
                    corrupt_n += 1;
                }
            }
        }
    }
    let corrupt_mean = if corrupt_n == 0 {
        f64::NAN
    } else {
        corrupt_sum / corrupt_n as f64
    };
    Ok((true_sum / kg.triples().len() as f64, corrupt_mean))
}

/// Filtered tail-prediction hits@k: other true tails for the same
/// (head, relation) are removed before ranking.
pub fn tail_hits_at_k(table: &EntityEmbeddingTable, kg: &KnowledgeGraph, k: usize) -> Result<f64> {
    if kg.triples().is_empty() {
        return Err(Error::Empty("knowledge graph has no triples"));
    }
    let vectors = graph_vectors(table, kg)?;
    let mut hits = 0usize;
    for t in kg.triples() {
        let target = vectors.score(t);
        let better = (0..kg.entities().len())
            .filter(|&e| e != t.tail)
            .map(|e| Triple { tail: e, ..*t })
            .filter(|c| !kg.contains(c))
            .filter(|c| vectors.score(c) < target)
            .count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / kg.triples().len() as f64)
}

struct GraphVectors {
    entities: Array2<f64>,
    relations: Array2<f64>,
}

impl GraphVectors {
    fn score(&self, t: &Triple) -> f64 {
        l2(
            (&self.entities.row(t.head) + &self.relations.row(t.relation)
                - self.entities.row(t.tail))
            .view(),
        )
    }
}

fn graph_vectors(table: &EntityEmbeddingTable, kg: &KnowledgeGraph) -> Result<GraphVectors> {
    let dim = table.dimension();
    let mut entities = Array2::zeros((kg.entities().len(), dim));
    for (i, name) in kg.entities().iter().enumerate() {
        let v = table.entity(name).ok_or_else(|| Error::Unknown {
            kind: "entity",
            name: name.clone(),
        })?;
        entities.row_mut(i).assign(&v);
    }
    let mut relations = Array2::zeros((kg.relations().len(), dim));
    for (i, name) in kg.relations().iter().enumerate() {
        let v = table.relation(name).ok_or_else(|| Error::Unknown {
            kind: "relation",
            name: name.clone(),
        })?;
        relations.row_mut(i).assign(&v);
    }
    Ok(GraphVectors {
        entities,
        relations,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum ResolutionStage {
    /// The whole topic text names an entity.
    WholeTopic,
    /// A topic word names an entity.
    Word,
    /// A nearby word in embedding space names an entity.
    Neighbor { via: String },
}

impl ResolutionStage {
    pub fn number(&self) -> u8 {
        match self {
            ResolutionStage::WholeTopic => 1,
            ResolutionStage::Word => 2,
            ResolutionStage::Neighbor { .. } => 3,
        }
    }
}

impl fmt::Display for ResolutionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResolutionStage::WholeTopic => write!(f, "stage 1 (whole topic)"),
            ResolutionStage::Word => write!(f, "stage 2 (word match)"),
            ResolutionStage::Neighbor { via } => write!(f, "stage 3 (neighbor `{via}`)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ResolvedEntity {
    pub source: String,
    pub entity: String,
    #[serde(flatten)]
    pub stage: ResolutionStage,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WordDiagnostic {
    pub word: String,
    pub failures: Vec<String>,
}

impl fmt::Display for WordDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.word, self.failures.join("; "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TopicMapping {
    pub resolved: Vec<ResolvedEntity>,
    /// Words that were dropped because no stage resolved them.
    pub dropped: Vec<WordDiagnostic>,
}

impl TopicMapping {
    pub fn entities(&self) -> Vec<String> {
        self.resolved.iter().map(|r| r.entity.clone()).collect()
    }
}

pub const DEFAULT_MAX_NEIGHBOR_CANDIDATES: usize = 10;

/// Maps a topic to knowledge-graph entities in three stages: whole-topic
/// name match, per-word name match, then a scan over the word's cosine
/// neighbours (the word itself excluded, at most `max_neighbor_candidates`).
pub fn map_topic_detailed(
    topic: &Topic,
    kg: &KnowledgeGraph,
    word_table: &EmbeddingTable,
    max_neighbor_candidates: usize,
) -> Result<TopicMapping> {
    if kg.entities().is_empty() {
        return Err(Error::Empty("knowledge graph has no entities"));
    }
    if word_table.is_empty() {
        return Err(Error::Empty("word embedding table"));
    }
    if let Some(entity) = kg.find_entity(topic.raw()) {
        return Ok(TopicMapping {
            resolved: vec![ResolvedEntity {
                source: topic.raw().to_string(),
                entity: entity.to_string(),
                stage: ResolutionStage::WholeTopic,
            }],
            dropped: Vec::new(),
        });
    }

    let mut resolved = Vec::new();
    let mut dropped = Vec::new();
    for word in topic.tokens() {
        if let Some(entity) = kg.find_entity(word) {
            resolved.push(ResolvedEntity {
                source: word.clone(),
                entity: entity.to_string(),
                stage: ResolutionStage::Word,
            });
            continue;
        }
        let mut failures = vec!["no entity with this name".to_string()];
        match word_table.get(word) {
            None => failures.push("word has no embedding".to_string()),
            Some(v) => {
                let neighbors =
                    nearest_neighbors(word_table, v, max_neighbor_candidates + 1, Metric::Cosine)?;
                let hit = neighbors
                    .iter()
                    .filter(|(n, _)| n != word)
                    .take(max_neighbor_candidates)
                    .find_map(|(n, _)| kg.find_entity(n).map(|e| (n.clone(), e.to_string())));
                match hit {
                    Some((via, entity)) => {
                        resolved.push(ResolvedEntity {
                            source: word.clone(),
                            entity,
                            stage: ResolutionStage::Neighbor { via },
                        });
                        continue;
                    }
                    None => failures.push(format!(
                        "none of {max_neighbor_candidates} nearest neighbours names an entity"
                    )),
                }
            }
        }
        dropped.push(WordDiagnostic {
            word: word.clone(),
            failures,
        });
    }

    if resolved.is_empty() {
        return Err(Error::UnresolvableTopic {
            topic: topic.raw().to_string(),
            diagnostics: dropped,
        });
    }
    Ok(TopicMapping { resolved, dropped })
}

/// Entity sequence for a topic; see [`map_topic_detailed`].
pub fn map_topic(
    topic: &Topic,
    kg: &KnowledgeGraph,
    word_table: &EmbeddingTable,
    max_neighbor_candidates: usize,
) -> Result<Vec<String>> {
    map_topic_detailed(topic, kg, word_table, max_neighbor_candidates).map(|m| m.entities())
}

/// One TransE vector per entity, in order.
pub fn topic_context_vectors<S: AsRef<str>>(
    entities: &[S],
    table: &EntityEmbeddingTable,
) -> Result<Array2<f64>> {
    if entities.is_empty() {
        return Err(Error::Empty("entity sequence"));
    }
    let mut out = Array2::zeros((entities.len(), table.dimension()));
    for (i, name) in entities.iter().enumerate() {
        let name = name.as_ref();
        let v = table.entity(name).ok_or_else(|| Error::Unknown {
            kind: "entity",
            name: name.to_string(),
        })?;
        out.row_mut(i).assign(&v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fixture(name: &str) -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/fixtures")
            .join(name)
    }

    fn tiny_table() -> EntityEmbeddingTable {
        EntityEmbeddingTable::new(
            vec!["h".into(), "t".into(), "u".into()],
            array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]],
            vec!["r".into()],
            array![[0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn score_arithmetic() {
        let t = tiny_table();
        assert_eq!(transe_score(&t, "h", "r", "t").unwrap(), 0.0);
        assert_eq!(transe_score(&t, "h", "r", "u").unwrap(), 1.0);
        assert!(matches!(
            transe_score(&t, "h", "r", "nope"),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_entity_name("Death_penalty"), "death_penalty");
        assert_eq!(
            normalize_entity_name("  death   penalty. "),
            "death_penalty"
        );
        assert_eq!(normalize_entity_name("\"Gun control\""), "gun_control");
        for s in ["Death_penalty", "__a  b__", "(x)", "A_(band)"] {
            let once = normalize_entity_name(s);
            assert_eq!(normalize_entity_name(&once), once);
        }
    }

    #[test]
    fn triples_dedupe() {
        let mut kg = KnowledgeGraph::new();
        assert!(kg.add_triple("a", "r", "b"));
        assert!(!kg.add_triple("a", "r", "b"));
        assert_eq!(kg.triples().len(), 1);
        assert_eq!(kg.entities(), ["a", "b"]);
    }

    #[test]
    fn malformed_triple_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.tsv");
        std::fs::write(&p, "a\tr\tb\nc\td\n").unwrap();
        assert!(matches!(
            load_triples(&p),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn transe_requires_triples_and_sane_config() {
        assert!(train_transe(&KnowledgeGraph::new(), &TransEConfig::default(), 0).is_err());
        let kg = load_triples(fixture("toy_kg.tsv")).unwrap();
        let bad = TransEConfig {
            margin: 0.0,
            ..Default::default()
        };
        assert!(train_transe(&kg, &bad, 0).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let kg = load_triples(fixture("toy_kg.tsv")).unwrap();
        let cfg = TransEConfig {
            epochs: 0,
            dimension: 8,
            ..Default::default()
        };
        let a = train_transe(&kg, &cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = TransEState::init(&kg, 8, &mut rng).into_table(&kg);
        assert_eq!(a, init);
    }

    #[test]
    fn trained_entities_have_unit_norm_and_are_deterministic() {
        let kg = load_triples(fixture("toy_kg.tsv")).unwrap();
        let cfg = TransEConfig {
            epochs: 50,
            dimension: 8,
            ..Default::default()
        };
        let a = train_transe(&kg, &cfg, 3).unwrap();
        for row in a.entity_vectors().rows() {
            assert!((l2(row) - 1.0).abs() < 1e-12);
        }
        assert_eq!(a, train_transe(&kg, &cfg, 3).unwrap());
        assert_ne!(a, train_transe(&kg, &cfg, 4).unwrap());
    }

    #[test]
    fn sgd_step_touches_only_sampled_components() {
        let kg = load_triples(fixture("toy_kg.tsv")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = TransEState::init(&kg, 8, &mut rng);
        let before_e = state.entities.clone();
        let before_r = state.relations.clone();
        let pos = kg.triples()[0];
        let neg = Triple {
            tail: (pos.tail + 1) % kg.entities().len(),
            ..pos
        };
        // large margin forces an active hinge
        let loss = state.sgd_step(&pos, &neg, 10.0, 0.1);
        assert!(loss > 0.0);
        let touched = [pos.head, pos.tail, neg.head, neg.tail];
        for e in 0..kg.entities().len() {
            let moved = before_e.row(e) != state.entities.row(e);
            assert_eq!(moved, touched.contains(&e), "entity {e}");
        }
        for r in 0..kg.relations().len() {
            let moved = before_r.row(r) != state.relations.row(r);
            assert_eq!(moved, r == pos.relation, "relation {r}");
        }
    }

    #[test]
    fn unused_relation_never_moves() {
        let mut kg = load_triples(fixture("toy_kg.tsv")).unwrap();
        let idle = kg.add_relation("unused");
        let cfg = TransEConfig {
            epochs: 0,
            dimension: 8,
            ..Default::default()
        };
        let init = train_transe(&kg, &cfg, 9).unwrap();
        let trained = train_transe(&kg, &TransEConfig { epochs: 30, ..cfg }, 9).unwrap();
        let name = &kg.relations()[idle];
        assert_eq!(init.relation(name), trained.relation(name));
    }

    #[test]
    fn map_topic_stages() {
        let kg = load_triples(fixture("fmap_kg.tsv")).unwrap();
        let words = crate::embeddings::load_embeddings(fixture("fmap_words.txt")).unwrap();

        let m = map_topic_detailed(&Topic::new("death penalty").unwrap(), &kg, &words, 10).unwrap();
        assert_eq!(m.entities(), ["Death_penalty"]);
        assert_eq!(m.resolved[0].stage, ResolutionStage::WholeTopic);

        let m = map_topic_detailed(&Topic::new("gun control").unwrap(), &kg, &words, 10).unwrap();
        assert_eq!(m.entities(), ["Gun", "Control"]);
        assert!(m.resolved.iter().all(|r| r.stage == ResolutionStage::Word));

        let m = map_topic_detailed(&Topic::new("firearms").unwrap(), &kg, &words, 10).unwrap();
        assert_eq!(m.entities(), ["Gun"]);
        assert_eq!(
            m.resolved[0].stage,
            ResolutionStage::Neighbor { via: "gun".into() }
        );

        // "weapons" ranks rifle, firearms, gun: only a wider candidate scan reaches an entity
        let err = map_topic(&Topic::new("weapons").unwrap(), &kg, &words, 1).unwrap_err();
        assert!(matches!(err, Error::UnresolvableTopic { .. }));
        let m = map_topic_detailed(&Topic::new("weapons").unwrap(), &kg, &words, 10).unwrap();
        assert_eq!(
            m.resolved[0].stage,
            ResolutionStage::Neighbor { via: "gun".into() }
        );

        match map_topic(&Topic::new("qwxz blorf").unwrap(), &kg, &words, 10) {
            Err(Error::UnresolvableTopic { diagnostics, .. }) => {
                assert_eq!(diagnostics.len(), 2);
                assert!(diagnostics[0]
                    .failures
                    .iter()
                    .any(|f| f.contains("no embedding")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_resolution_drops_words() {
        let kg = load_triples(fixture("fmap_kg.tsv")).unwrap();
        let words = crate::embeddings::load_embeddings(fixture("fmap_words.txt")).unwrap();
        let m = map_topic_detailed(&Topic::new("gun blorf").unwrap(), &kg, &words, 10).unwrap();
        assert_eq!(m.entities(), ["Gun"]);
        assert_eq!(m.dropped.len(), 1);
    }

    #[test]
    fn context_vectors() {
        let t = tiny_table();
        let v = topic_context_vectors(&["h", "t", "h"], &t).unwrap();
        assert_eq!(v, array![[1.0, 0.0], [1.0, 1.0], [1.0, 0.0]]);
        assert!(topic_context_vectors::<&str>(&[], &t).is_err());
        assert!(topic_context_vectors(&["zz"], &t).is_err());
    }
}
