//! Latent-space queries over student embeddings: cosine nearest neighbours,
//! cohort groups along the direction between two students, outlier scores,
//! a 3-D PCA projection, and per-student trace aggregates.
//!
//! All searches are exhaustive. Rankings are by ascending cosine distance with
//! ties broken by student id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError};
use crate::traces::{self, StudentId, TraceError, TraceLog};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unknown student `{0}`")]
    UnknownStudent(StudentId),
    #[error("k = {k} out of range (must be 1..={max})")]
    KOutOfRange { k: usize, max: usize },
    #[error("zero-norm vector in cosine distance")]
    ZeroNorm,
    #[error("cohort start and end must differ")]
    SameEndpoints,
    #[error("cohort direction is zero: `{0}` and `{1}` have identical embeddings")]
    ZeroDirection(StudentId, StudentId),
    #[error("need at least {need} students, store has {got}")]
    TooFewStudents { need: usize, got: usize },
    #[error("invalid embedding store: {0}")]
    InvalidStore(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    let aa = numerics::dot(a, a);
    let bb = numerics::dot(b, b);
    if aa == 0.0 || bb == 0.0 {
        return Err(AnalysisError::ZeroNorm);
    }
    // sqrt(|a|²|b|²) keeps `a == b` at exactly zero distance.
    let mut norm = (aa * bb).sqrt();
    if !norm.is_finite() || norm == 0.0 {
        norm = aa.sqrt() * bb.sqrt();
    }
    Ok((1.0 - numerics::dot(a, b) / norm).clamp(0.0, 2.0))
}

#[derive(Serialize, Deserialize)]
struct StoreDocument {
    topic: String,
    dim: usize,
    students: Vec<StoreEntry>,
}

#[derive(Serialize, Deserialize)]
struct StoreEntry {
    student: StudentId,
    embedding: Vec<f64>,
}

/// Per-student graph embeddings for one topic, in a fixed student order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "StoreDocument", try_from = "StoreDocument")]
pub struct EmbeddingStore {
    topic: String,
    ids: Vec<StudentId>,
    embeddings: Matrix,
    #[serde(skip)]
    index: HashMap<StudentId, usize>,
}

impl From<EmbeddingStore> for StoreDocument {
    fn from(s: EmbeddingStore) -> Self {
        StoreDocument {
            dim: s.embeddings.cols(),
            students: s
                .ids
                .iter()
                .zip(s.embeddings.iter_rows())
                .map(|(id, row)| StoreEntry {
                    student: id.clone(),
                    embedding: row.to_vec(),
                })
                .collect(),
            topic: s.topic,
        }
    }
}

impl TryFrom<StoreDocument> for EmbeddingStore {
    type Error = AnalysisError;

    fn try_from(doc: StoreDocument) -> Result<Self, Self::Error> {
        if let Some(e) = doc.students.iter().find(|e| e.embedding.len() != doc.dim) {
            return Err(AnalysisError::InvalidStore(format!(
                "embedding of `{}` has length {}, expected {}",
                e.student,
                e.embedding.len(),
                doc.dim
            )));
        }
        let ids = doc.students.iter().map(|e| e.student.clone()).collect();
        let data = doc.students.into_iter().flat_map(|e| e.embedding).collect::<Vec<_>>();
        let rows = data.len().checked_div(doc.dim).unwrap_or(0);
        EmbeddingStore::new(doc.topic, ids, Matrix::from_vec(rows, doc.dim, data))
    }
}

impl EmbeddingStore {
    /// Rejects duplicate ids, non-finite rows and zero-norm embeddings.
    pub fn new(topic: impl Into<String>, ids: Vec<StudentId>, embeddings: Matrix) -> Result<Self, AnalysisError> {
        if ids.len() != embeddings.rows() {
            return Err(AnalysisError::InvalidStore(format!(
                "{} ids for {} embeddings",
                ids.len(),
                embeddings.rows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, (id, row)) in ids.iter().zip(embeddings.iter_rows()).enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(AnalysisError::InvalidStore(format!("duplicate student `{id}`")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(AnalysisError::InvalidStore(format!("non-finite embedding for `{id}`")));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(AnalysisError::InvalidStore(format!("zero embedding for `{id}`")));
            }
        }
        Ok(EmbeddingStore {
            topic: topic.into(),
            ids,
            embeddings,
            index,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn ids(&self) -> &[StudentId] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn position(&self, student: &StudentId) -> Result<usize, AnalysisError> {
        self.index
            .get(student)
            .copied()
            .ok_or_else(|| AnalysisError::UnknownStudent(student.clone()))
    }

    pub fn embedding(&self, student: &StudentId) -> Result<&[f64], AnalysisError> {
        Ok(self.embeddings.row(self.position(student)?))
    }

    /// Ranks the students at `candidates` by distance to `target`, keeping the best `k`.
    fn rank(&self, target: &[f64], candidates: impl Iterator<Item = usize>, k: usize) -> Result<Vec<RankedOwned>, AnalysisError> {
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
        for i in candidates {
            let entry = Ranked {
                distance: cosine_distance(self.embeddings.row(i), target)?,
                id: &self.ids[i],
                position: i,
            };
            if heap.len() < k {
                heap.push(entry);
            } else if heap.peek().is_some_and(|worst| entry < *worst) {
                heap.pop();
                heap.push(entry);
            }
        }
        Ok(heap.into_sorted_vec().into_iter().map(|r| r.owned()).collect())
    }

    /// The `k` students closest to `student` (excluding itself), ascending.
    pub fn k_nearest(&self, student: &StudentId, k: usize) -> Result<Vec<Neighbor>, AnalysisError> {
        let q = self.position(student)?;
        let max = self.len().saturating_sub(1);
        if k == 0 || k > max {
            return Err(AnalysisError::KOutOfRange { k, max });
        }
        let target = self.embeddings.row(q);
        Ok(self
            .rank(target, (0..self.len()).filter(|&i| i != q), k)?
            .into_iter()
            .map(|r| Neighbor {
                student: self.ids[r.position].clone(),
                distance: r.distance,
            })
            .collect())
    }

    /// Start student, the `k` students most aligned with `y_start - y_end`, end student.
    pub fn cohort(&self, query: &CohortQuery) -> Result<Vec<CohortMember>, AnalysisError> {
        if query.start == query.end {
            return Err(AnalysisError::SameEndpoints);
        }
        let s = self.position(&query.start)?;
        let e = self.position(&query.end)?;
        let max = self.len().saturating_sub(2);
        if query.k == 0 || query.k > max {
            return Err(AnalysisError::KOutOfRange { k: query.k, max });
        }
        let direction: Vec<f64> = self
            .embeddings
            .row(s)
            .iter()
            .zip(self.embeddings.row(e))
            .map(|(a, b)| a - b)
            .collect();
        if direction.iter().all(|&v| v == 0.0) {
            return Err(AnalysisError::ZeroDirection(query.start.clone(), query.end.clone()));
        }
        let interior = self.rank(&direction, (0..self.len()).filter(|&i| i != s && i != e), query.k)?;
        let mut members = Vec::with_capacity(query.k + 2);
        members.push(CohortMember {
            student: query.start.clone(),
            role: CohortRole::Start,
            distance: None,
        });
        members.extend(interior.into_iter().map(|r| CohortMember {
            student: self.ids[r.position].clone(),
            role: CohortRole::Member,
            distance: Some(r.distance),
        }));
        members.push(CohortMember {
            student: query.end.clone(),
            role: CohortRole::End,
            distance: None,
        });
        Ok(members)
    }

    /// Mean cosine distance from each student to its `k` nearest neighbours, in store order.
    pub fn outlier_scores(&self, k: usize) -> Result<Vec<f64>, AnalysisError> {
        let max = self.len().saturating_sub(1);
        if k == 0 || k > max {
            return Err(AnalysisError::KOutOfRange { k, max });
        }
        self.ids
            .iter()
            .map(|id| {
                let nn = self.k_nearest(id, k)?;
                Ok(nn.iter().map(|n| n.distance).sum::<f64>() / k as f64)
            })
            .collect()
    }

    /// PCA projection of all embeddings to three dimensions.
    pub fn project_3d(&self) -> Result<Projection, AnalysisError> {
        if self.len() < 4 {
            return Err(AnalysisError::TooFewStudents { need: 4, got: self.len() });
        }
        let pca = numerics::pca_fit_transform(&self.embeddings, 3)?;
        Ok(Projection {
            topic: self.topic.clone(),
            explained_variance: pca.explained_variance,
            points: self
                .ids
                .iter()
                .zip(pca.projection.iter_rows())
                .map(|(id, row)| ProjectedPoint {
                    student: id.clone(),
                    coords: row.to_vec(),
                })
                .collect(),
        })
    }

    pub fn neighbors_report(&self, student: &StudentId, k: usize) -> Result<NeighborsReport, AnalysisError> {
        Ok(NeighborsReport {
            student: student.clone(),
            k,
            neighbors: self.k_nearest(student, k)?,
        })
    }

    pub fn cohort_report(&self, query: &CohortQuery) -> Result<CohortReport, AnalysisError> {
        Ok(CohortReport {
            start: query.start.clone(),
            end: query.end.clone(),
            k: query.k,
            members: self.cohort(query)?,
        })
    }

    /// Outlier scores sorted from most to least isolated (ties by id).
    pub fn outliers_report(&self, k: usize) -> Result<OutliersReport, AnalysisError> {
        let mut scores: Vec<OutlierScore> = self
            .ids
            .iter()
            .zip(self.outlier_scores(k)?)
            .map(|(id, score)| OutlierScore {
                student: id.clone(),
                score,
            })
            .collect();
        scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.student.cmp(&b.student)));
        Ok(OutliersReport { k, scores })
    }
}

#[derive(Debug, Clone, Copy)]
struct Ranked<'a> {
    distance: f64,
    id: &'a StudentId,
    position: usize,
}

impl Ranked<'_> {
    fn owned(self) -> RankedOwned {
        RankedOwned {
            distance: self.distance,
            position: self.position,
        }
    }
}

struct RankedOwned {
    distance: f64,
    position: usize,
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.id.cmp(other.id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub student: StudentId,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortQuery {
    pub start: StudentId,
    pub end: StudentId,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortRole {
    Start,
    Member,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMember {
    pub student: StudentId,
    pub role: CohortRole,
    /// Cosine distance to the cohort direction; absent for the endpoints.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborsReport {
    pub student: StudentId,
    pub k: usize,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub start: StudentId,
    pub end: StudentId,
    pub k: usize,
    pub members: Vec<CohortMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierScore {
    pub student: StudentId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutliersReport {
    pub k: usize,
    pub scores: Vec<OutlierScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub student: StudentId,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub topic: String,
    pub explained_variance: Vec<f64>,
    pub points: Vec<ProjectedPoint>,
}

impl Projection {
    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Topic-level summary of one student's traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentAggregate {
    pub student: StudentId,
    /// Mean score over every attempt (attempt-weighted).
    pub average_accuracy: f64,
    pub concept_count: usize,
    pub total_attempts: usize,
    /// Lower median of the per-concept median weeks.
    pub median_week: u32,
}

pub fn student_aggregate(log: &TraceLog, student: &StudentId) -> Result<StudentAggregate, AnalysisError> {
    let attempts = match log.attempts(student) {
        Some(a) if !a.is_empty() => a,
        _ => return Err(AnalysisError::UnknownStudent(student.clone())),
    };
    let per_concept = traces::tracing_vectors(log, student)?;
    let mut weeks: Vec<u32> = per_concept.values().map(|v| v.median_week).collect();
    Ok(StudentAggregate {
        student: student.clone(),
        average_accuracy: attempts.iter().map(|a| a.score).sum::<f64>() / attempts.len() as f64,
        concept_count: per_concept.len(),
        total_attempts: attempts.len(),
        median_week: traces::lower_median(&mut weeks),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::AttemptRecord;

    fn store(rows: &[&[f64]]) -> EmbeddingStore {
        let ids = (0..rows.len()).map(|i| StudentId(format!("s{i:02}"))).collect();
        EmbeddingStore::new("T", ids, Matrix::from_rows(rows)).unwrap()
    }

    fn sid(s: &str) -> StudentId {
        s.into()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]).unwrap(), 2.0);
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(AnalysisError::ZeroNorm)));
    }

    #[test]
    fn knn_examples() {
        let two = store(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let nn = two.k_nearest(&sid("s00"), 1).unwrap();
        assert_eq!(nn, vec![Neighbor { student: sid("s01"), distance: 1.0 }]);
        assert!(matches!(two.k_nearest(&sid("s00"), 5), Err(AnalysisError::KOutOfRange { k: 5, max: 1 })));
        assert!(matches!(two.k_nearest(&sid("zz"), 1), Err(AnalysisError::UnknownStudent(_))));

        let dup = store(&[&[1.0, 2.0], &[0.0, 1.0], &[1.0, 2.0]]);
        let nn = dup.k_nearest(&sid("s00"), 2).unwrap();
        assert_eq!(nn[0], Neighbor { student: sid("s02"), distance: 0.0 });
    }

    #[test]
    fn knn_ties_break_by_id() {
        let s = store(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0], &[0.0, 2.0]]);
        let nn = s.k_nearest(&sid("s00"), 3).unwrap();
        let ids: Vec<_> = nn.iter().map(|n| n.student.as_str()).collect();
        assert_eq!(ids, ["s01", "s02", "s03"]);
    }

    #[test]
    fn cohort_examples() {
        let three = store(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let q = CohortQuery { start: sid("s00"), end: sid("s01"), k: 1 };
        let c = three.cohort(&q).unwrap();
        let ids: Vec<_> = c.iter().map(|m| m.student.as_str()).collect();
        assert_eq!(ids, ["s00", "s02", "s01"]);
        assert_eq!(c[0].role, CohortRole::Start);
        assert_eq!(c[2].role, CohortRole::End);

        // s = -e: direction 2s; a candidate equal to s is perfectly aligned.
        let s = store(&[&[1.0, 2.0], &[-1.0, -2.0], &[0.0, 1.0], &[1.0, 2.0]]);
        let c = s.cohort(&CohortQuery { start: sid("s00"), end: sid("s01"), k: 2 }).unwrap();
        assert_eq!(c[1].student, sid("s03"));
        assert_eq!(c[1].distance, Some(0.0));

        assert!(matches!(
            s.cohort(&CohortQuery { start: sid("s00"), end: sid("s00"), k: 1 }),
            Err(AnalysisError::SameEndpoints)
        ));
        assert!(matches!(
            s.cohort(&CohortQuery { start: sid("s00"), end: sid("s03"), k: 1 }),
            Err(AnalysisError::ZeroDirection(..))
        ));
        assert!(matches!(
            s.cohort(&CohortQuery { start: sid("s00"), end: sid("s01"), k: 3 }),
            Err(AnalysisError::KOutOfRange { .. })
        ));
    }

    #[test]
    fn outlier_examples() {
        let same = store(&[&[1.0, 1.0], &[2.0, 2.0], &[0.5, 0.5], &[3.0, 3.0]]);
        assert!(same.outlier_scores(2).unwrap().iter().all(|&s| s == 0.0));

        let s = store(&[&[1.0, 0.01], &[1.0, 0.02], &[1.0, 0.0], &[1.0, -0.01], &[0.0, 1.0]]);
        let scores = s.outlier_scores(3).unwrap();
        let top = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(top, 4);
        assert_eq!(s.outliers_report(3).unwrap().scores[0].student, sid("s04"));
        assert!(s.outlier_scores(5).is_err());
    }

    #[test]
    fn store_validation_and_round_trip() {
        let ids = vec![sid("a"), sid("a")];
        assert!(EmbeddingStore::new("T", ids, Matrix::from_rows(&[[1.0], [2.0]])).is_err());
        assert!(EmbeddingStore::new("T", vec![sid("a")], Matrix::from_rows(&[[0.0, 0.0]])).is_err());
        let s = store(&[&[1.0, 0.25], &[0.1, -3.0]]);
        let back: EmbeddingStore = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.position(&sid("s01")).unwrap(), 1);
    }

    #[test]
    fn projection_needs_four() {
        let s = store(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(matches!(s.project_3d(), Err(AnalysisError::TooFewStudents { need: 4, got: 3 })));
        let s = store(&[&[1.0, 0.0, 0.0, 1.0], &[0.0, 1.0, 0.0, 1.0], &[0.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0]]);
        let p = s.project_3d().unwrap();
        assert_eq!(p.points.len(), 4);
        assert!(p.points.iter().all(|pt| pt.coords.len() == 3));
    }

    fn log(entries: &[(usize, f64, u32)]) -> TraceLog {
        let mut log = TraceLog::new("T");
        for (i, &(c, score, week)) in entries.iter().enumerate() {
            log.push(AttemptRecord {
                student: sid("u"),
                concept: c,
                question: format!("q{i}"),
                score,
                week,
            })
            .unwrap();
        }
        log
    }

    #[test]
    fn aggregate_examples() {
        let a = student_aggregate(&log(&[(0, 1.0, 2)]), &sid("u")).unwrap();
        assert_eq!((a.average_accuracy, a.concept_count, a.total_attempts, a.median_week), (1.0, 1, 1, 2));

        let a = student_aggregate(&log(&[(0, 1.0, 2), (0, 1.0, 2), (1, 0.0, 6)]), &sid("u")).unwrap();
        assert!((a.average_accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((a.concept_count, a.total_attempts, a.median_week), (2, 3, 2));

        let a = student_aggregate(&log(&[(0, 0.5, 1), (1, 0.5, 1), (2, 0.5, 3)]), &sid("u")).unwrap();
        assert_eq!(a.average_accuracy, 0.5);
        assert!(student_aggregate(&log(&[]), &sid("u")).is_err());
    }
}
