//! Student curriculum-based learning graphs.
//!
//! A learning graph keeps only the concepts a student attempted. Each kept
//! concept is linked to its nearest covered successors: `a -> b` exists when
//! the curriculum has a path from `a` to `b` whose interior nodes were all
//! skipped by the student. Parallel paths collapse into one edge, and a path
//! through another covered concept never produces a shortcut edge.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::CurriculumGraph;
use crate::numerics::Matrix;
use crate::traces::{self, FeatureScaler, StudentId, TraceError, TraceLog, TracingVector};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("covered concept set is empty")]
    EmptyCovered,
    #[error("covered ordinal {0} is not a curriculum concept")]
    CoveredOutOfRange(usize),
    #[error("student `{0}` has no attempts in this topic")]
    UnknownStudent(StudentId),
    #[error("no students left after selection")]
    EmptyCorpus,
    #[error("invalid learning graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Edges of the absorbed graph over `covered`, as curriculum ordinals.
pub fn absorb_nodes(
    curriculum: &CurriculumGraph,
    covered: &BTreeSet<usize>,
) -> Result<BTreeSet<(usize, usize)>, GraphError> {
    if covered.is_empty() {
        return Err(GraphError::EmptyCovered);
    }
    if let Some(&bad) = covered.iter().find(|&&c| c >= curriculum.len()) {
        return Err(GraphError::CoveredOutOfRange(bad));
    }
    let uncovered: BTreeSet<usize> = (0..curriculum.len()).filter(|c| !covered.contains(c)).collect();
    let mut edges = BTreeSet::new();
    for &a in covered {
        for b in curriculum.reachable_via_excluded(a, &uncovered) {
            if covered.contains(&b) {
                edges.insert((a, b));
            }
        }
    }
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningNode {
    pub concept: String,
    pub ordinal: usize,
    pub raw: TracingVector,
    pub scaled: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LearningGraphDocument {
    student: StudentId,
    topic: String,
    nodes: Vec<LearningNode>,
    edges: Vec<(String, String)>,
}

/// One student's absorbed graph. Nodes are in curriculum-ordinal order and
/// `edges` index into `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LearningGraphDocument", try_from = "LearningGraphDocument")]
pub struct LearningGraph {
    pub student: StudentId,
    pub topic: String,
    pub nodes: Vec<LearningNode>,
    pub edges: Vec<(usize, usize)>,
}

impl From<LearningGraph> for LearningGraphDocument {
    fn from(g: LearningGraph) -> Self {
        let edges = g
            .edges
            .iter()
            .map(|&(a, b)| (g.nodes[a].concept.clone(), g.nodes[b].concept.clone()))
            .collect();
        LearningGraphDocument {
            student: g.student,
            topic: g.topic,
            nodes: g.nodes,
            edges,
        }
    }
}

impl TryFrom<LearningGraphDocument> for LearningGraph {
    type Error = GraphError;

    fn try_from(doc: LearningGraphDocument) -> Result<Self, Self::Error> {
        if doc.nodes.is_empty() {
            return Err(GraphError::Invalid(format!("graph of `{}` has no nodes", doc.student)));
        }
        let index: BTreeMap<&str, usize> = doc
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.concept.as_str(), i))
            .collect();
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| GraphError::Invalid(format!("edge references absent concept `{id}`")))
        };
        let edges = doc
            .edges
            .iter()
            .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>, GraphError>>()?;
        Ok(LearningGraph {
            student: doc.student,
            topic: doc.topic,
            nodes: doc.nodes,
            edges,
        })
    }
}

impl LearningGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// N×ℓ matrix of scaled attributes, row i = node i.
    pub fn feature_matrix(&self) -> Matrix {
        let cols = self.nodes.first().map_or(0, |n| n.scaled.len());
        let data = self.nodes.iter().flat_map(|n| n.scaled.iter().copied()).collect();
        Matrix::from_vec(self.nodes.len(), cols, data)
    }
}

/// Builds the learning graph for one student with attributes standardized by `scaler`.
pub fn build_learning_graph(
    curriculum: &CurriculumGraph,
    log: &TraceLog,
    scaler: &FeatureScaler,
    student: &StudentId,
) -> Result<LearningGraph, GraphError> {
    let vectors = match traces::tracing_vectors(log, student) {
        Ok(v) if !v.is_empty() => v,
        _ => return Err(GraphError::UnknownStudent(student.clone())),
    };
    assemble(curriculum, log.topic(), scaler, student, &vectors)
}

fn assemble(
    curriculum: &CurriculumGraph,
    topic: &str,
    scaler: &FeatureScaler,
    student: &StudentId,
    vectors: &BTreeMap<usize, TracingVector>,
) -> Result<LearningGraph, GraphError> {
    let covered: BTreeSet<usize> = vectors.keys().copied().collect();
    let position: BTreeMap<usize, usize> = covered.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let edges = absorb_nodes(curriculum, &covered)?
        .into_iter()
        .map(|(a, b)| (position[&a], position[&b]))
        .collect();
    let nodes = vectors
        .iter()
        .map(|(&ordinal, raw)| LearningNode {
            concept: curriculum.concept_id(ordinal).to_owned(),
            ordinal,
            raw: *raw,
            scaled: scaler.transform(&raw.to_features()),
        })
        .collect();
    Ok(LearningGraph {
        student: student.clone(),
        topic: topic.to_owned(),
        nodes,
        edges,
    })
}

/// The graphs of every selected student in a topic plus the scaler fitted on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphCorpus {
    pub topic: String,
    pub threshold: f64,
    pub scaler: FeatureScaler,
    pub graphs: Vec<LearningGraph>,
}

impl GraphCorpus {
    /// Selects students by coverage, fits the scaler over all their tracing
    /// vectors, and builds one graph per student (ordered by student id).
    pub fn build(curriculum: &CurriculumGraph, log: &TraceLog, threshold: f64) -> Result<Self, GraphError> {
        let selected = traces::select_students(log, curriculum, threshold)?;
        if selected.is_empty() {
            return Err(GraphError::EmptyCorpus);
        }
        let per_student = selected
            .iter()
            .map(|s| Ok((s, traces::tracing_vectors(log, s)?)))
            .collect::<Result<Vec<_>, TraceError>>()?;
        let raw: Vec<[f64; 3]> = per_student
            .iter()
            .flat_map(|(_, v)| v.values().map(TracingVector::to_features))
            .collect();
        let scaler = FeatureScaler::fit(raw.iter().map(|r| &r[..]))?;
        let graphs = per_student
            .iter()
            .map(|(s, v)| assemble(curriculum, log.topic(), &scaler, s, v))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GraphCorpus {
            topic: log.topic().to_owned(),
            threshold,
            scaler,
            graphs,
        })
    }

    pub fn get(&self, student: &StudentId) -> Option<&LearningGraph> {
        self.graphs.iter().find(|g| &g.student == student)
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("corpus serializes");
        s.push('\n');
        s
    }
}
