//! Fixtures shared by the benchmarks.

use learngraph::encoder::GraphTensor;
use learngraph::graphs::GraphCorpus;
use learngraph::synth::{self, PopulationSpec};
use learngraph::training;
use learngraph::CurriculumGraph;

pub struct Fixture {
    pub curriculum: CurriculumGraph,
    pub corpus: GraphCorpus,
    pub tensors: Vec<GraphTensor>,
}

/// Two-cluster synthetic corpus over a 15-concept curriculum.
pub fn synthetic(students: usize, seed: u64) -> Fixture {
    let curriculum = synth::gen_curriculum(15, 0.2, seed).expect("valid curriculum");
    let (log, _) = synth::gen_population(&curriculum, &PopulationSpec::two_clusters(students, seed)).expect("valid population");
    let corpus = GraphCorpus::build(&curriculum, &log, 0.5).expect("non-empty corpus");
    let tensors = training::tensors(&corpus.graphs).expect("valid graphs");
    Fixture {
        curriculum,
        corpus,
        tensors,
    }
}
