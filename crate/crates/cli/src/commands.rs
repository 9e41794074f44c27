//! Pipeline stages. Every stage reads its inputs from files and writes its
//! outputs into a run directory, so runs can be resumed and inspected.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use chrono::NaiveDate;
use learngraph::analysis::{self, CohortReport, NeighborsReport, OutliersReport, Projection};
use learngraph::graphs::GraphCorpus;
use learngraph::synth::{self, PopulationSpec};
use learngraph::traces::{self, IngestOptions};
use learngraph::training::{self, Checkpoint, RunManifest};
use learngraph::{CohortQuery, CurriculumGraph, EmbeddingStore, StudentAggregate, StudentId, TraceLog, TrainConfig};
use serde::Serialize;

/// Pretty JSON with a trailing newline; shared by files, stdout and the API.
pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn curriculum(&self) -> PathBuf {
        self.root.join("curriculum.json")
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.csv")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.csv")
    }

    pub fn graphs(&self) -> PathBuf {
        self.root.join("graphs.json")
    }

    pub fn aggregates(&self) -> PathBuf {
        self.root.join("aggregates.json")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.json")
    }

    pub fn projection(&self) -> PathBuf {
        self.root.join("projection.json")
    }

    fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root).with_context(|| format!("cannot create output directory {}", self.root.display()))
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        bail!("{} not found; run `learngraph {produced_by}` first or pass its path explicitly", path.display());
    }
    Ok(())
}

pub fn load_curriculum(path: &Path) -> Result<CurriculumGraph> {
    require(path, "ingest")?;
    CurriculumGraph::load(path).with_context(|| format!("invalid curriculum {}", path.display()))
}

pub fn load_traces(path: &Path, curriculum: &CurriculumGraph, academic_start: Option<NaiveDate>) -> Result<TraceLog> {
    require(path, "ingest")?;
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    traces::ingest_traces(BufReader::new(file), curriculum, IngestOptions { academic_start })
        .with_context(|| format!("invalid traces {}", path.display()))
}

pub fn load_corpus(path: &Path) -> Result<GraphCorpus> {
    require(path, "build")?;
    GraphCorpus::load(path).with_context(|| format!("invalid graphs file {}", path.display()))
}

pub fn load_store(path: &Path) -> Result<EmbeddingStore> {
    require(path, "embed")?;
    EmbeddingStore::load(path).with_context(|| format!("invalid embedding store {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path, "train")?;
    Checkpoint::load(path).with_context(|| format!("invalid checkpoint {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub concepts: usize,
    pub students: usize,
    pub density: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            concepts: 15,
            students: 300,
            density: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub concepts: usize,
    pub edges: usize,
    pub students: usize,
    pub records: usize,
}

/// Writes a synthetic curriculum, traces and held-out labels.
pub fn synth(out: &RunDir, opts: &SynthOptions) -> Result<SynthSummary> {
    ensure!(opts.students >= 2, "need at least 2 students, got {}", opts.students);
    let curriculum = synth::gen_curriculum(opts.concepts, opts.density, opts.seed)?;
    let spec = PopulationSpec::two_clusters(opts.students, opts.seed);
    let (log, labels) = synth::gen_population(&curriculum, &spec)?;
    out.create()?;
    write(&out.curriculum(), &curriculum.to_canonical_string())?;
    write(&out.traces(), &log.to_csv_string(&curriculum))?;
    write(&out.labels(), &synth::labels_to_csv(&labels))?;
    Ok(SynthSummary {
        concepts: curriculum.len(),
        edges: curriculum.edges().len(),
        students: log.student_count(),
        records: log.record_count(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub topic: String,
    pub concepts: usize,
    pub students: usize,
    pub records: usize,
}

/// Validates a curriculum and trace file and writes normalised copies.
pub fn ingest(curriculum: &Path, traces: &Path, academic_start: Option<NaiveDate>, out: &RunDir) -> Result<IngestSummary> {
    let cur = CurriculumGraph::load(curriculum).with_context(|| format!("invalid curriculum {}", curriculum.display()))?;
    let log = load_traces(traces, &cur, academic_start)?;
    out.create()?;
    write(&out.curriculum(), &cur.to_canonical_string())?;
    write(&out.traces(), &log.to_csv_string(&cur))?;
    Ok(IngestSummary {
        topic: cur.topic().to_owned(),
        concepts: cur.len(),
        students: log.student_count(),
        records: log.record_count(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub topic: String,
    pub students: usize,
    pub selected: usize,
    pub nodes: usize,
    pub edges: usize,
}

/// Builds learning graphs and per-student aggregates for the selected students.
pub fn build(curriculum: &Path, traces: &Path, threshold: f64, academic_start: Option<NaiveDate>, out: &RunDir) -> Result<BuildSummary> {
    let cur = load_curriculum(curriculum)?;
    let log = load_traces(traces, &cur, academic_start)?;
    let corpus = GraphCorpus::build(&cur, &log, threshold)
        .with_context(|| format!("cannot build learning graphs at coverage threshold {threshold}"))?;
    let aggregates = corpus
        .graphs
        .iter()
        .map(|g| analysis::student_aggregate(&log, &g.student))
        .collect::<Result<Vec<StudentAggregate>, _>>()?;
    out.create()?;
    write(&out.graphs(), &corpus.to_json())?;
    write(&out.aggregates(), &to_pretty_json(&aggregates))?;
    if curriculum != out.curriculum() {
        write(&out.curriculum(), &cur.to_canonical_string())?;
    }
    Ok(BuildSummary {
        topic: corpus.topic.clone(),
        students: log.student_count(),
        selected: corpus.graphs.len(),
        nodes: corpus.graphs.iter().map(|g| g.nodes.len()).sum(),
        edges: corpus.graphs.iter().map(|g| g.edges.len()).sum(),
    })
}

/// Trains an encoder on a graphs file; writes the checkpoint and run manifest.
pub fn train(graphs: &Path, config: &TrainConfig, out: &RunDir) -> Result<RunManifest> {
    let corpus = load_corpus(graphs)?;
    let tensors = training::tensors(&corpus.graphs)?;
    let started = Instant::now();
    let report = training::train(&tensors, config)?;
    let manifest = RunManifest::new(config, &corpus.topic, corpus.threshold, tensors.len(), &report, started);
    let checkpoint = Checkpoint::new(&report.model, *config, corpus.scaler.clone(), corpus.topic.clone());
    out.create()?;
    write(&out.model(), &checkpoint.to_json())?;
    write(&out.manifest(), &to_pretty_json(&manifest))?;
    Ok(manifest)
}

/// Embeds every graph with a trained checkpoint.
pub fn embed(model: &Path, graphs: &Path, out: &RunDir) -> Result<EmbeddingStore> {
    let checkpoint = load_checkpoint(model)?;
    let corpus = load_corpus(graphs)?;
    ensure!(
        checkpoint.topic == corpus.topic,
        "checkpoint was trained on topic `{}` but graphs are for `{}`",
        checkpoint.topic,
        corpus.topic
    );
    ensure!(
        checkpoint.scaler == corpus.scaler,
        "graphs were scaled differently from the training corpus; rebuild them or retrain"
    );
    let encoder = checkpoint.to_model()?;
    let store = training::embed_all(&encoder, &corpus.topic, &corpus.graphs)?;
    out.create()?;
    write(&out.embeddings(), &store.to_json())?;
    Ok(store)
}

/// 3-d PCA projection of an embedding store.
pub fn project(embeddings: &Path, out: &RunDir) -> Result<Projection> {
    let store = load_store(embeddings)?;
    let projection = store.project_3d()?;
    out.create()?;
    write(&out.projection(), &to_pretty_json(&projection))?;
    Ok(projection)
}

pub fn neighbors(embeddings: &Path, student: &str, k: usize) -> Result<NeighborsReport> {
    Ok(load_store(embeddings)?.neighbors_report(&StudentId::from(student), k)?)
}

pub fn cohort(embeddings: &Path, start: &str, end: &str, k: usize) -> Result<CohortReport> {
    let query = CohortQuery {
        start: start.into(),
        end: end.into(),
        k,
    };
    Ok(load_store(embeddings)?.cohort_report(&query)?)
}

pub fn outliers(embeddings: &Path, k: usize) -> Result<OutliersReport> {
    Ok(load_store(embeddings)?.outliers_report(k)?)
}
