use std::path::Path;

use learngraph::{EncoderConfig, TrainConfig};
use learngraph_cli::commands::{self, RunDir, SynthOptions};

/// A small trained run: synth, build, train, embed, project.
pub fn fixture_run(dir: &Path, students: usize) -> RunDir {
    let run = RunDir::new(dir);
    let opts = SynthOptions {
        concepts: 8,
        students,
        density: 0.3,
        seed: 1,
    };
    commands::synth(&run, &opts).unwrap();
    commands::build(&run.curriculum(), &run.traces(), 0.5, None, &run).unwrap();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 16,
        encoder: EncoderConfig {
            hidden_dim: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    commands::train(&run.graphs(), &config, &run).unwrap();
    commands::embed(&run.model(), &run.graphs(), &run).unwrap();
    commands::project(&run.embeddings(), &run).unwrap();
    run
}
