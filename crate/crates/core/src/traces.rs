//! Learning-trace ingestion and per-concept tracing vectors.
//!
//! Trace files are delimited text with the header
//! `student_id,topic_id,concept_id,question_id,score,week`. A `timestamp`
//! column may replace (or accompany) `week`; timestamps are converted to
//! academic weeks relative to a configured start date. When a row carries a
//! non-empty week, the week wins.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::CurriculumGraph;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace file: {0}")]
    Malformed(String),
    #[error("trace file is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("timestamp {timestamp} precedes academic start {start}")]
    BeforeAcademicStart { timestamp: NaiveDateTime, start: NaiveDate },
    #[error("student `{student}` has no attempts on concept `{concept}`")]
    NoAttempts { student: StudentId, concept: String },
    #[error("unknown student `{0}`")]
    UnknownStudent(StudentId),
    #[error("coverage threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("cannot fit a scaler on zero vectors")]
    EmptyScalerInput,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StudentId(pub String);

impl StudentId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StudentId {
    fn from(s: &str) -> Self {
        StudentId(s.to_owned())
    }
}

impl From<String> for StudentId {
    fn from(s: String) -> Self {
        StudentId(s)
    }
}

/// One answered question. `concept` is the curriculum ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub student: StudentId,
    pub concept: usize,
    pub question: String,
    pub score: f64,
    pub week: u32,
}

/// Validated attempts for one topic, grouped by student (ordered by id).
#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    topic: String,
    by_student: BTreeMap<StudentId, Vec<AttemptRecord>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Required when rows carry timestamps instead of weeks.
    pub academic_start: Option<NaiveDate>,
}

impl TraceLog {
    pub fn new(topic: impl Into<String>) -> Self {
        TraceLog {
            topic: topic.into(),
            by_student: BTreeMap::new(),
        }
    }

    /// Appends a record after checking score and week ranges.
    pub fn push(&mut self, record: AttemptRecord) -> Result<(), TraceError> {
        check_score(record.score).map_err(|message| TraceError::Row { line: 0, message })?;
        if record.week < 1 {
            return Err(TraceError::Row {
                line: 0,
                message: "week must be >= 1".into(),
            });
        }
        self.by_student
            .entry(record.student.clone())
            .or_default()
            .push(record);
        Ok(())
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn students(&self) -> impl Iterator<Item = &StudentId> {
        self.by_student.keys()
    }

    pub fn student_count(&self) -> usize {
        self.by_student.len()
    }

    pub fn record_count(&self) -> usize {
        self.by_student.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_student.is_empty()
    }

    pub fn attempts(&self, student: &StudentId) -> Option<&[AttemptRecord]> {
        self.by_student.get(student).map(Vec::as_slice)
    }

    /// Ordinals of concepts the student attempted at least once.
    pub fn covered_concepts(&self, student: &StudentId) -> BTreeSet<usize> {
        self.attempts(student)
            .unwrap_or_default()
            .iter()
            .map(|r| r.concept)
            .collect()
    }

    /// Writes the log in the trace file format with a `week` column.
    pub fn to_csv_string(&self, curriculum: &CurriculumGraph) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["student_id", "topic_id", "concept_id", "question_id", "score", "week"])
            .expect("in-memory write");
        for records in self.by_student.values() {
            for r in records {
                w.write_record([
                    r.student.as_str(),
                    &self.topic,
                    curriculum.concept_id(r.concept),
                    &r.question,
                    &r.score.to_string(),
                    &r.week.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 output")
    }
}

fn check_score(score: f64) -> Result<(), String> {
    if score.is_finite() && (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(format!("score {score} outside [0, 1]"))
    }
}

/// 1-based academic week: `floor(days / 7) + 1`.
pub fn week_from_timestamp(timestamp: NaiveDateTime, academic_start: NaiveDate) -> Result<u32, TraceError> {
    let start = academic_start.and_hms_opt(0, 0, 0).expect("midnight is valid");
    if timestamp < start {
        return Err(TraceError::BeforeAcademicStart {
            timestamp,
            start: academic_start,
        });
    }
    let days = (timestamp.date() - academic_start).num_days();
    Ok((days / 7 + 1) as u32)
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_local());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads and validates a trace file against `curriculum`.
pub fn ingest_traces<R: Read>(
    reader: R,
    curriculum: &CurriculumGraph,
    options: IngestOptions,
) -> Result<TraceLog, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| TraceError::Malformed(e.to_string()))?
        .clone();
    let col = |name: &'static str| headers.iter().position(|h| h == name);
    let require = |name: &'static str| col(name).ok_or(TraceError::MissingColumn(name));
    let student_col = require("student_id")?;
    let topic_col = require("topic_id")?;
    let concept_col = require("concept_id")?;
    let question_col = require("question_id")?;
    let score_col = require("score")?;
    let week_col = col("week");
    let ts_col = col("timestamp");
    if week_col.is_none() && ts_col.is_none() {
        return Err(TraceError::MissingColumn("week"));
    }

    let mut log = TraceLog::new(curriculum.topic());
    for row in rdr.records() {
        let row = row.map_err(|e| TraceError::Malformed(e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| TraceError::Row { line, message };
        let field = |i: usize| row.get(i).unwrap_or("");

        let topic = field(topic_col);
        if topic != curriculum.topic() {
            return Err(bad(format!(
                "topic `{topic}` does not match curriculum topic `{}`",
                curriculum.topic()
            )));
        }
        let concept_id = field(concept_col);
        let concept = curriculum
            .ordinal(concept_id)
            .ok_or_else(|| bad(format!("unknown concept `{concept_id}`")))?;
        let student = field(student_col);
        if student.is_empty() {
            return Err(bad("empty student_id".into()));
        }
        let score: f64 = field(score_col)
            .parse()
            .map_err(|_| bad(format!("unparseable score `{}`", field(score_col))))?;
        check_score(score).map_err(bad)?;

        let week_raw = week_col.map(field).unwrap_or("");
        let week = if !week_raw.is_empty() {
            let w: u32 = week_raw
                .parse()
                .map_err(|_| bad(format!("unparseable week `{week_raw}`")))?;
            if w < 1 {
                return Err(bad("week must be >= 1".into()));
            }
            w
        } else {
            let raw = ts_col
                .map(field)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| bad("row has neither week nor timestamp".into()))?;
            let ts = parse_timestamp(raw).ok_or_else(|| bad(format!("unparseable timestamp `{raw}`")))?;
            let start = options
                .academic_start
                .ok_or_else(|| bad("timestamp given but no academic start date configured".into()))?;
            week_from_timestamp(ts, start).map_err(|e| bad(e.to_string()))?
        };

        log.by_student
            .entry(StudentId::from(student))
            .or_default()
            .push(AttemptRecord {
                student: StudentId::from(student),
                concept,
                question: field(question_col).to_owned(),
                score,
                week,
            });
    }
    Ok(log)
}

/// Raw behavioural attributes for one (student, concept) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracingVector {
    pub avg_accuracy: f64,
    pub attempt_count: u32,
    pub median_week: u32,
}

impl TracingVector {
    pub const LEN: usize = 3;

    /// Concatenated attribute vector, accuracy ⊕ attempts ⊕ week.
    pub fn to_features(&self) -> [f64; 3] {
        [
            self.avg_accuracy,
            self.attempt_count as f64,
            self.median_week as f64,
        ]
    }

    fn from_attempts<'a>(attempts: impl Iterator<Item = &'a AttemptRecord>) -> Option<Self> {
        let mut total = 0.0;
        let mut weeks = Vec::new();
        for a in attempts {
            total += a.score;
            weeks.push(a.week);
        }
        if weeks.is_empty() {
            return None;
        }
        let n = weeks.len();
        Some(TracingVector {
            avg_accuracy: total / n as f64,
            attempt_count: n as u32,
            median_week: lower_median(&mut weeks),
        })
    }
}

/// Lower median: always one of the input values. Panics on empty input.
pub fn lower_median<T: Ord + Copy>(values: &mut [T]) -> T {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

pub fn extract_tracing_vector(
    log: &TraceLog,
    student: &StudentId,
    concept: usize,
    curriculum: &CurriculumGraph,
) -> Result<TracingVector, TraceError> {
    let attempts = log.attempts(student).unwrap_or_default();
    TracingVector::from_attempts(attempts.iter().filter(|a| a.concept == concept)).ok_or_else(|| {
        TraceError::NoAttempts {
            student: student.clone(),
            concept: curriculum.concept_id(concept).to_owned(),
        }
    })
}

/// Tracing vectors for every concept the student attempted, keyed by ordinal.
pub fn tracing_vectors(log: &TraceLog, student: &StudentId) -> Result<BTreeMap<usize, TracingVector>, TraceError> {
    let attempts = log
        .attempts(student)
        .ok_or_else(|| TraceError::UnknownStudent(student.clone()))?;
    let mut grouped: BTreeMap<usize, Vec<&AttemptRecord>> = BTreeMap::new();
    for a in attempts {
        grouped.entry(a.concept).or_default().push(a);
    }
    Ok(grouped
        .into_iter()
        .map(|(c, list)| (c, TracingVector::from_attempts(list.into_iter()).expect("non-empty group")))
        .collect())
}

/// Students whose concept coverage ratio is at least `threshold`.
pub fn select_students(
    log: &TraceLog,
    curriculum: &CurriculumGraph,
    threshold: f64,
) -> Result<BTreeSet<StudentId>, TraceError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(TraceError::InvalidThreshold(threshold));
    }
    let total = curriculum.len() as f64;
    Ok(log
        .students()
        .filter(|s| log.covered_concepts(s).len() as f64 / total >= threshold)
        .cloned()
        .collect())
}

/// Per-attribute z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit<'a, I>(vectors: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = vectors.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(TraceError::EmptyScalerInput);
        };
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(FeatureScaler { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    /// Inverse of [`transform`](Self::transform); constant attributes come back as their mean.
    pub fn inverse(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::Concept;

    fn curriculum(n: usize) -> CurriculumGraph {
        let concepts = (1..=n).map(|i| Concept::new(format!("c{i}"))).collect();
        let edges = (1..n).map(|i| (i - 1, i)).collect();
        CurriculumGraph::new("T", concepts, edges).unwrap()
    }

    const HEADER: &str = "student_id,topic_id,concept_id,question_id,score,week\n";

    fn ingest(body: &str) -> Result<TraceLog, TraceError> {
        ingest_traces(format!("{HEADER}{body}").as_bytes(), &curriculum(6), IngestOptions::default())
    }

    fn log_of(attempts: &[(usize, f64, u32)]) -> TraceLog {
        let mut log = TraceLog::new("T");
        for (i, &(c, s, w)) in attempts.iter().enumerate() {
            log.push(AttemptRecord {
                student: "s1".into(),
                concept: c,
                question: format!("q{i}"),
                score: s,
                week: w,
            })
            .unwrap();
        }
        log
    }

    #[test]
    fn ingest_examples() {
        assert!(ingest("").unwrap().is_empty());
        let log = ingest("s1,T,c1,q1,1.0,3\n").unwrap();
        assert_eq!(log.record_count(), 1);
        let a = &log.attempts(&"s1".into()).unwrap()[0];
        assert_eq!((a.concept, a.score, a.week), (0, 1.0, 3));
        match ingest("s1,T,c1,q1,1.0,3\ns1,T,c1,q2,1.5,3\n").unwrap_err() {
            TraceError::Row { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("1.5"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ingest_rejects_unknown_concept_and_topic() {
        assert!(matches!(ingest("s1,T,zz,q1,1,3\n"), Err(TraceError::Row { line: 2, .. })));
        assert!(matches!(ingest("s1,X,c1,q1,1,3\n"), Err(TraceError::Row { .. })));
        assert!(matches!(ingest("s1,T,c1,q1,1,0\n"), Err(TraceError::Row { .. })));
        let no_week = "student_id,topic_id,concept_id,question_id,score\n";
        assert!(matches!(
            ingest_traces(no_week.as_bytes(), &curriculum(2), IngestOptions::default()),
            Err(TraceError::MissingColumn("week"))
        ));
    }

    #[test]
    fn timestamps_and_week_precedence() {
        let start = NaiveDate::from_ymd_opt(2023, 9, 1).unwrap();
        let opts = IngestOptions { academic_start: Some(start) };
        let doc = "student_id,topic_id,concept_id,question_id,score,week,timestamp\n\
                   s1,T,c1,q1,1,,2023-09-08T10:00:00\n\
                   s1,T,c2,q2,1,5,2023-09-01\n";
        let log = ingest_traces(doc.as_bytes(), &curriculum(3), opts).unwrap();
        let weeks: Vec<u32> = log.attempts(&"s1".into()).unwrap().iter().map(|a| a.week).collect();
        assert_eq!(weeks, vec![2, 5]);

        let ts_only = "student_id,topic_id,concept_id,question_id,score,timestamp\ns1,T,c1,q1,1,2023-09-01\n";
        assert!(ingest_traces(ts_only.as_bytes(), &curriculum(3), IngestOptions::default()).is_err());
    }

    #[test]
    fn week_numbers() {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let at = |d: u64| (start + chrono::Days::new(d)).and_hms_opt(12, 0, 0).unwrap();
        assert_eq!(week_from_timestamp(start.and_hms_opt(0, 0, 0).unwrap(), start).unwrap(), 1);
        assert_eq!(week_from_timestamp(at(6), start).unwrap(), 1);
        assert_eq!(week_from_timestamp(at(7), start).unwrap(), 2);
        let before = (start - chrono::Days::new(1)).and_hms_opt(0, 0, 0).unwrap();
        assert!(week_from_timestamp(before, start).is_err());
    }

    #[test]
    fn tracing_vector_examples() {
        let c = curriculum(6);
        let s: StudentId = "s1".into();
        let tv = |a: &[(usize, f64, u32)]| extract_tracing_vector(&log_of(a), &s, 0, &c).unwrap();
        assert_eq!(tv(&[(0, 1.0, 5)]), TracingVector { avg_accuracy: 1.0, attempt_count: 1, median_week: 5 });
        assert_eq!(tv(&[(0, 1.0, 3), (0, 0.0, 7)]), TracingVector { avg_accuracy: 0.5, attempt_count: 2, median_week: 3 });
        assert_eq!(
            tv(&[(0, 1.0, 2), (0, 0.5, 4), (0, 0.0, 9)]),
            TracingVector { avg_accuracy: 0.5, attempt_count: 3, median_week: 4 }
        );
        assert!(matches!(
            extract_tracing_vector(&log_of(&[(1, 1.0, 1)]), &s, 0, &c),
            Err(TraceError::NoAttempts { .. })
        ));
    }

    #[test]
    fn selection_examples() {
        let c = curriculum(6);
        let all = log_of(&(0..6).map(|i| (i, 1.0, 1)).collect::<Vec<_>>());
        assert_eq!(select_students(&all, &c, 0.5).unwrap().len(), 1);
        let two = log_of(&[(0, 1.0, 1), (1, 1.0, 1)]);
        assert!(select_students(&two, &c, 0.5).unwrap().is_empty());
        let three = log_of(&[(0, 1.0, 1), (1, 1.0, 1), (2, 1.0, 1)]);
        assert_eq!(select_students(&three, &c, 0.5).unwrap().len(), 1);
        assert!(select_students(&three, &c, 0.0).is_err());
        assert!(select_students(&three, &c, 1.5).is_err());
    }

    #[test]
    fn scaler_examples() {
        let one = FeatureScaler::fit([&[0.5, 2.0, 3.0][..]]).unwrap();
        assert_eq!(one.transform(&[0.5, 2.0, 3.0]), vec![0.0, 0.0, 0.0]);

        let two = FeatureScaler::fit([&[0.0, 2.0, 3.0][..], &[1.0, 2.0, 5.0][..]]).unwrap();
        assert_eq!(two.transform(&[0.0, 2.0, 3.0]), vec![-1.0, 0.0, -1.0]);
        assert_eq!(two.transform(&[1.0, 2.0, 5.0]), vec![1.0, 0.0, 1.0]);

        assert!(matches!(
            FeatureScaler::fit(std::iter::empty::<&[f64]>()),
            Err(TraceError::EmptyScalerInput)
        ));
    }

    #[test]
    fn lower_median_picks_an_element() {
        assert_eq!(lower_median(&mut [3, 7]), 3);
        assert_eq!(lower_median(&mut [9, 2, 4]), 4);
        assert_eq!(lower_median(&mut [6, 2, 2, 8]), 2);
    }

    #[test]
    fn csv_round_trip() {
        let c = curriculum(3);
        let log = log_of(&[(0, 0.25, 1), (2, 1.0, 4)]);
        let text = log.to_csv_string(&c);
        let back = ingest_traces(text.as_bytes(), &c, IngestOptions::default()).unwrap();
        assert_eq!(back.attempts(&"s1".into()), log.attempts(&"s1".into()));
    }
}
