//! Seeded generators for curricula and student populations with planted
//! behavioural clusters.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{Concept, CurriculumGraph};
use crate::traces::{AttemptRecord, StudentId, TraceLog};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator input: {0}")]
    InvalidSpec(String),
}

pub const SYNTH_TOPIC: &str = "synthetic";

/// Random DAG over `n` concepts. Each pair `i < j` is an edge with
/// probability `density`; a concept left without predecessors gets `j-1 -> j`.
pub fn gen_curriculum(n: usize, density: f64, seed: u64) -> Result<CurriculumGraph, SynthError> {
    if n == 0 {
        return Err(SynthError::InvalidSpec("need at least one concept".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(SynthError::InvalidSpec(format!("edge density {density} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(2);
    let concepts = (1..=n).map(|i| Concept::new(format!("c{i:0width$}"))).collect();
    let mut edges = Vec::new();
    for j in 1..n {
        let before = edges.len();
        for i in 0..j {
            if rng.random_bool(density) {
                edges.push((i, j));
            }
        }
        if edges.len() == before {
            edges.push((j - 1, j));
        }
    }
    Ok(CurriculumGraph::new(SYNTH_TOPIC, concepts, edges).expect("forward edges form a DAG"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub name: String,
    pub size: usize,
    /// Minimum fraction of concepts each member covers.
    pub coverage: f64,
    pub accuracy_mean: f64,
    pub accuracy_spread: f64,
    /// Mean attempts per covered concept (at least one is always made).
    pub attempts_mean: f64,
    /// Inclusive range of weeks in which attempts happen.
    pub week_window: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub clusters: Vec<ClusterSpec>,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.clusters.is_empty() {
            return bad("no clusters".into());
        }
        for c in &self.clusters {
            if c.size == 0 {
                return bad(format!("cluster `{}` is empty", c.name));
            }
            if !(0.0..=1.0).contains(&c.coverage) {
                return bad(format!("cluster `{}` coverage outside [0, 1]", c.name));
            }
            if !(0.0..=1.0).contains(&c.accuracy_mean) {
                return bad(format!("cluster `{}` accuracy mean outside [0, 1]", c.name));
            }
            if !(c.accuracy_spread.is_finite() && c.accuracy_spread >= 0.0) {
                return bad(format!("cluster `{}` accuracy spread must be >= 0", c.name));
            }
            if !(c.attempts_mean.is_finite() && c.attempts_mean >= 1.0) {
                return bad(format!("cluster `{}` attempts mean must be >= 1", c.name));
            }
            let (lo, hi) = c.week_window;
            if lo < 1 || lo > hi {
                return bad(format!("cluster `{}` week window {lo}..={hi} is invalid", c.name));
            }
        }
        Ok(())
    }

    pub fn student_count(&self) -> usize {
        self.clusters.iter().map(|c| c.size).sum()
    }

    /// Two equally sized clusters: strong early finishers and weak late
    /// starters with more attempts per concept.
    pub fn two_clusters(students: usize, seed: u64) -> Self {
        let first = students / 2;
        PopulationSpec {
            clusters: vec![
                ClusterSpec {
                    name: "early".into(),
                    size: first,
                    coverage: 0.6,
                    accuracy_mean: 0.85,
                    accuracy_spread: 0.08,
                    attempts_mean: 2.0,
                    week_window: (1, 6),
                },
                ClusterSpec {
                    name: "late".into(),
                    size: students - first,
                    coverage: 0.6,
                    accuracy_mean: 0.4,
                    accuracy_spread: 0.1,
                    attempts_mean: 4.0,
                    week_window: (9, 14),
                },
            ],
            seed,
        }
    }
}

/// Held-out cluster membership of generated students.
pub type Labels = BTreeMap<StudentId, String>;

/// Generates attempts for every student of every cluster. Student ids are
/// `s0001`, `s0002`, ... with cluster membership shuffled across ids.
pub fn gen_population(curriculum: &CurriculumGraph, spec: &PopulationSpec) -> Result<(TraceLog, Labels), SynthError> {
    spec.validate()?;
    let n = curriculum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assignment: Vec<usize> = spec
        .clusters
        .iter()
        .enumerate()
        .flat_map(|(c, cl)| std::iter::repeat_n(c, cl.size))
        .collect();
    assignment.shuffle(&mut rng);
    let width = assignment.len().to_string().len().max(4);

    let mut log = TraceLog::new(curriculum.topic());
    let mut labels = Labels::new();
    for (s, &c) in assignment.iter().enumerate() {
        let cluster = &spec.clusters[c];
        let student = StudentId(format!("s{:0width$}", s + 1));
        let scores = Normal::new(cluster.accuracy_mean, cluster.accuracy_spread).expect("validated spread");
        let extra = (cluster.attempts_mean > 1.0)
            .then(|| Poisson::new(cluster.attempts_mean - 1.0).expect("validated mean"));
        let min_cover = ((cluster.coverage * n as f64).ceil() as usize).clamp(1, n);
        let count = rng.random_range(min_cover..=n);
        let mut covered = index::sample(&mut rng, n, count).into_vec();
        covered.sort_unstable();
        for concept in covered {
            let attempts = 1 + extra.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            for a in 0..attempts {
                let record = AttemptRecord {
                    student: student.clone(),
                    concept,
                    question: format!("q{}_{}", concept + 1, a + 1),
                    score: scores.sample(&mut rng).clamp(0.0, 1.0),
                    week: rng.random_range(cluster.week_window.0..=cluster.week_window.1),
                };
                log.push(record).expect("generated record is valid");
            }
        }
        labels.insert(student, cluster.name.clone());
    }
    Ok((log, labels))
}

/// `student,label` CSV with a header row.
pub fn labels_to_csv(labels: &Labels) -> String {
    let mut out = String::from("student,label\n");
    for (s, l) in labels {
        out.push_str(&format!("{s},{l}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::{ingest_traces, lower_median, select_students, IngestOptions};

    fn cluster(size: usize, coverage: f64, spread: f64, weeks: (u32, u32)) -> ClusterSpec {
        ClusterSpec {
            name: format!("w{}", weeks.0),
            size,
            coverage,
            accuracy_mean: 0.7,
            accuracy_spread: spread,
            attempts_mean: 2.5,
            week_window: weeks,
        }
    }

    #[test]
    fn single_node_curriculum() {
        let c = gen_curriculum(1, 0.5, 0).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.edges().is_empty());
    }

    #[test]
    fn zero_density_is_a_chain() {
        let c = gen_curriculum(5, 0.0, 3).unwrap();
        assert_eq!(c.edges(), &[(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn curriculum_is_seeded_and_connected() {
        let a = gen_curriculum(15, 0.2, 7).unwrap();
        let b = gen_curriculum(15, 0.2, 7).unwrap();
        assert_eq!(a.to_canonical_string(), b.to_canonical_string());
        for j in 1..15 {
            assert!(a.edges().iter().any(|&(_, t)| t == j), "node {j} has no predecessor");
        }
        assert!(a.edges().iter().all(|&(s, t)| s < t));
        assert!(gen_curriculum(0, 0.2, 0).is_err());
        assert!(gen_curriculum(3, 1.5, 0).is_err());
    }

    #[test]
    fn full_coverage_and_zero_spread() {
        let cur = gen_curriculum(6, 0.3, 1).unwrap();
        let spec = PopulationSpec {
            clusters: vec![cluster(10, 1.0, 0.0, (2, 4))],
            seed: 5,
        };
        let (log, labels) = gen_population(&cur, &spec).unwrap();
        assert_eq!(labels.len(), 10);
        for s in log.students() {
            assert_eq!(log.covered_concepts(s).len(), 6);
            assert!(log.attempts(s).unwrap().iter().all(|r| r.score == 0.7));
        }
    }

    #[test]
    fn disjoint_windows_keep_median_weeks() {
        let cur = gen_curriculum(8, 0.2, 2).unwrap();
        let spec = PopulationSpec {
            clusters: vec![cluster(20, 0.5, 0.2, (1, 3)), cluster(20, 0.5, 0.2, (10, 12))],
            seed: 9,
        };
        let (log, labels) = gen_population(&cur, &spec).unwrap();
        for (s, label) in &labels {
            let mut weeks: Vec<u32> = log.attempts(s).unwrap().iter().map(|r| r.week).collect();
            let m = lower_median(&mut weeks);
            let window = if label == "w1" { 1..=3 } else { 10..=12 };
            assert!(window.contains(&m), "{s}: {m}");
        }
    }

    #[test]
    fn generated_logs_ingest_and_select() {
        let cur = gen_curriculum(15, 0.2, 0).unwrap();
        let spec = PopulationSpec::two_clusters(40, 0);
        let (log, _) = gen_population(&cur, &spec).unwrap();
        let csv = log.to_csv_string(&cur);
        let back = ingest_traces(csv.as_bytes(), &cur, IngestOptions::default()).unwrap();
        assert_eq!(back.record_count(), log.record_count());
        assert_eq!(select_students(&log, &cur, 0.6).unwrap().len(), 40);
    }

    #[test]
    fn population_is_seeded() {
        let cur = gen_curriculum(10, 0.2, 0).unwrap();
        let spec = PopulationSpec::two_clusters(30, 4);
        let (a, la) = gen_population(&cur, &spec).unwrap();
        let (b, lb) = gen_population(&cur, &spec).unwrap();
        assert_eq!(a.to_csv_string(&cur), b.to_csv_string(&cur));
        assert_eq!(la, lb);
        assert!(labels_to_csv(&la).starts_with("student,label\ns0001,"));
    }

    #[test]
    fn rejects_bad_spec() {
        let cur = gen_curriculum(3, 0.2, 0).unwrap();
        for bad in [cluster(0, 0.5, 0.1, (1, 2)), cluster(3, 1.2, 0.1, (1, 2)), cluster(3, 0.5, 0.1, (0, 2)), cluster(3, 0.5, -1.0, (1, 2))] {
            let spec = PopulationSpec { clusters: vec![bad], seed: 0 };
            assert!(gen_population(&cur, &spec).is_err());
        }
    }
}
