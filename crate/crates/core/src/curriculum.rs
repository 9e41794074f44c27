//! Curriculum-structure graphs.
//!
//! A curriculum is one topic's concepts plus prerequisite edges between them.
//! Concepts are addressed by their ordinal, which is their position in the
//! source document. The graph must be a DAG.
//!
//! File format (JSON, UTF-8, one topic per file):
//!
//! ```json
//! {
//!   "topic": "functions-1",
//!   "concepts": [{ "id": "c1", "name": "Domain" }, { "id": "c2" }],
//!   "edges": [["c1", "c2"]]
//! }
//! ```

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("malformed curriculum document: {0}")]
    Malformed(String),
    #[error("duplicate concept id `{0}`")]
    DuplicateConcept(String),
    #[error("edge references unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("edge ordinal {0} out of range for {1} concepts")]
    OrdinalOutOfRange(usize, usize),
    #[error("self-loop on concept {0}")]
    SelfLoop(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("cycle detected through edge {from} -> {to}")]
    Cycle { from: usize, to: usize },
}

/// A concept node. Its ordinal is its index in [`CurriculumGraph::concepts`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Concept {
    pub fn new(id: impl Into<String>) -> Self {
        Concept {
            id: id.into(),
            name: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurriculumDocument {
    topic: String,
    concepts: Vec<Concept>,
    #[serde(default)]
    edges: Vec<(String, String)>,
}

/// A validated, immutable prerequisite DAG for one topic.
#[derive(Debug, Clone)]
pub struct CurriculumGraph {
    topic: String,
    concepts: Vec<Concept>,
    edges: Vec<(usize, usize)>,
    index: HashMap<String, usize>,
    successors: Vec<Vec<usize>>,
}

impl PartialEq for CurriculumGraph {
    fn eq(&self, other: &Self) -> bool {
        self.topic == other.topic && self.concepts == other.concepts && self.edges == other.edges
    }
}

impl CurriculumGraph {
    /// Builds a graph from ordinal edges, rejecting anything that is not a
    /// simple DAG over unique concept ids.
    pub fn new(
        topic: impl Into<String>,
        concepts: Vec<Concept>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, CurriculumError> {
        let n = concepts.len();
        let mut index = HashMap::with_capacity(n);
        for (ordinal, c) in concepts.iter().enumerate() {
            if index.insert(c.id.clone(), ordinal).is_some() {
                return Err(CurriculumError::DuplicateConcept(c.id.clone()));
            }
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut successors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            if a >= n {
                return Err(CurriculumError::OrdinalOutOfRange(a, n));
            }
            if b >= n {
                return Err(CurriculumError::OrdinalOutOfRange(b, n));
            }
            if a == b {
                return Err(CurriculumError::SelfLoop(concepts[a].id.clone()));
            }
            if !seen.insert((a, b)) {
                return Err(CurriculumError::DuplicateEdge(
                    concepts[a].id.clone(),
                    concepts[b].id.clone(),
                ));
            }
            successors[a].push(b);
        }
        topological_order(n, &edges)?;
        Ok(CurriculumGraph {
            topic: topic.into(),
            concepts,
            edges,
            index,
            successors,
        })
    }

    /// Parses and validates a curriculum document. Ordinals follow document order.
    pub fn parse(document: &str) -> Result<Self, CurriculumError> {
        let doc: CurriculumDocument = serde_json::from_str(document)
            .map_err(|e| CurriculumError::Malformed(e.to_string()))?;
        let mut index = HashMap::with_capacity(doc.concepts.len());
        for (ordinal, c) in doc.concepts.iter().enumerate() {
            if index.insert(c.id.as_str(), ordinal).is_some() {
                return Err(CurriculumError::DuplicateConcept(c.id.clone()));
            }
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| CurriculumError::UnknownConcept(id.to_owned()))
        };
        let edges = doc
            .edges
            .iter()
            .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>, CurriculumError>>()?;
        CurriculumGraph::new(doc.topic, doc.concepts, edges)
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    /// Canonical serialization; `parse(to_canonical_string())` reproduces the graph
    /// and re-serializing gives the same bytes.
    pub fn to_canonical_string(&self) -> String {
        let doc = CurriculumDocument {
            topic: self.topic.clone(),
            concepts: self.concepts.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| (self.concepts[a].id.clone(), self.concepts[b].id.clone()))
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("curriculum serializes");
        out.push('\n');
        out
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn successors(&self, ordinal: usize) -> &[usize] {
        &self.successors[ordinal]
    }

    pub fn ordinal(&self, concept_id: &str) -> Option<usize> {
        self.index.get(concept_id).copied()
    }

    pub fn concept_id(&self, ordinal: usize) -> &str {
        &self.concepts[ordinal].id
    }

    /// Deterministic topological order (Kahn, smallest ordinal first).
    pub fn topological_order(&self) -> Vec<usize> {
        topological_order(self.len(), &self.edges).expect("validated at construction")
    }

    /// Every node `b != source` reachable from `source` along a path whose
    /// interior nodes all belong to `excluded_ok`. Direct successors always qualify.
    pub fn reachable_via_excluded(
        &self,
        source: usize,
        excluded_ok: &BTreeSet<usize>,
    ) -> BTreeSet<usize> {
        let mut found = BTreeSet::new();
        let mut expanded = vec![false; self.len()];
        let mut queue = VecDeque::from([source]);
        expanded[source] = true;
        while let Some(node) = queue.pop_front() {
            for &next in &self.successors[node] {
                if next == source {
                    continue;
                }
                found.insert(next);
                if excluded_ok.contains(&next) && !expanded[next] {
                    expanded[next] = true;
                    queue.push_back(next);
                }
            }
        }
        found
    }
}

/// Validates that `edges` over `n` nodes form a DAG and returns its topological
/// order, breaking ties by smallest ordinal. On failure reports one edge that
/// lies on a directed cycle.
pub fn topological_order(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, CurriculumError> {
    let mut indegree = vec![0usize; n];
    let mut successors = vec![Vec::new(); n];
    let mut predecessors = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(CurriculumError::OrdinalOutOfRange(a.max(b), n));
        }
        indegree[b] += 1;
        successors[a].push(b);
        predecessors[b].push(a);
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &w in &successors[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                ready.insert(w);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }

    // Every leftover node still has a leftover predecessor, so walking
    // predecessors must eventually revisit a node on a cycle.
    let leftover: Vec<bool> = indegree.iter().map(|&d| d > 0).collect();
    let start = leftover.iter().position(|&l| l).expect("some node left over");
    let mut visited = vec![false; n];
    let mut node = start;
    loop {
        visited[node] = true;
        let pred = predecessors[node]
            .iter()
            .copied()
            .find(|&p| leftover[p])
            .expect("leftover node has leftover predecessor");
        if visited[pred] {
            return Err(CurriculumError::Cycle { from: pred, to: node });
        }
        node = pred;
    }
}
