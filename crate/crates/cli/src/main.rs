use std::path::PathBuf;

use anyhow::Result;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use learngraph::{EncoderConfig, TrainConfig};
use learngraph_cli::commands::{self, to_pretty_json, RunDir, SynthOptions};
use learngraph_cli::service::{self, Snapshots, DEFAULT_COHORT_K, DEFAULT_CORS_ORIGINS, DEFAULT_NEIGHBORS_K, DEFAULT_OUTLIERS_K};

#[derive(Parser)]
#[command(name = "learngraph", version, about = "Curriculum-based learning graphs and student embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Run directory for inputs and outputs.
    #[arg(long, env = "LEARNGRAPH_OUT", default_value = "run")]
    out: PathBuf,
}

impl OutDir {
    fn run(&self) -> RunDir {
        RunDir::new(&self.out)
    }
}

#[derive(Args)]
struct TraceInputs {
    /// Curriculum JSON (default: <out>/curriculum.json).
    #[arg(long)]
    curriculum: Option<PathBuf>,
    /// Trace CSV (default: <out>/traces.csv).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// First day of the academic year, for traces with timestamps instead of weeks.
    #[arg(long, value_name = "YYYY-MM-DD")]
    academic_start: Option<NaiveDate>,
}

#[derive(Args)]
struct StoreInput {
    /// Embedding store (default: <out>/embeddings.json).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic curriculum and two-cluster student population.
    Synth {
        #[command(flatten)]
        out: OutDir,
        #[arg(long, default_value_t = 15)]
        concepts: usize,
        #[arg(long, default_value_t = 300)]
        students: usize,
        #[arg(long, default_value_t = 0.2)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate a curriculum and trace file and copy them into the run directory.
    Ingest {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        curriculum: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, value_name = "YYYY-MM-DD")]
        academic_start: Option<NaiveDate>,
    },
    /// Select students by coverage and build their learning graphs.
    Build {
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        inputs: TraceInputs,
        /// Minimum fraction of concepts a student must have attempted.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train the graph encoder on the built learning graphs.
    Train {
        #[command(flatten)]
        out: OutDir,
        /// Graphs file (default: <out>/graphs.json).
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        hidden_dim: usize,
        /// Aggregate over in-edges only instead of the symmetrised neighbourhood.
        #[arg(long)]
        directed: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Embed every learning graph with a trained model.
    Embed {
        #[command(flatten)]
        out: OutDir,
        /// Checkpoint (default: <out>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Graphs file (default: <out>/graphs.json).
        #[arg(long)]
        graphs: Option<PathBuf>,
    },
    /// Project embeddings onto their top three principal components.
    Project {
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        store: StoreInput,
    },
    /// Students closest to a given student.
    Neighbors {
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        store: StoreInput,
        #[arg(long)]
        student: String,
        #[arg(long, default_value_t = DEFAULT_NEIGHBORS_K)]
        k: usize,
    },
    /// Students aligned with the direction from one student to another.
    Cohort {
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        store: StoreInput,
        #[arg(long)]
        start: String,
        #[arg(long)]
        end: String,
        #[arg(long, default_value_t = DEFAULT_COHORT_K)]
        k: usize,
    },
    /// Students ranked by mean distance to their nearest neighbours.
    Outliers {
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        store: StoreInput,
        #[arg(long, default_value_t = DEFAULT_OUTLIERS_K)]
        k: usize,
    },
    /// Serve run directories over HTTP.
    Serve {
        #[command(flatten)]
        out: OutDir,
        /// Additional run directories (one per topic).
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Allowed CORS origin; repeat for several.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
        /// Directory of built explorer assets to serve at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn print<T: serde::Serialize>(value: &T) {
    print!("{}", to_pretty_json(value));
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth {
            out,
            concepts,
            students,
            density,
            seed,
        } => {
            let opts = SynthOptions {
                concepts,
                students,
                density,
                seed,
            };
            print(&commands::synth(&out.run(), &opts)?);
        }
        Command::Ingest {
            out,
            curriculum,
            traces,
            academic_start,
        } => print(&commands::ingest(&curriculum, &traces, academic_start, &out.run())?),
        Command::Build { out, inputs, threshold } => {
            let run = out.run();
            let curriculum = inputs.curriculum.unwrap_or_else(|| run.curriculum());
            let traces = inputs.traces.unwrap_or_else(|| run.traces());
            print(&commands::build(&curriculum, &traces, threshold, inputs.academic_start, &run)?);
        }
        Command::Train {
            out,
            graphs,
            epochs,
            batch_size,
            lr,
            layers,
            hidden_dim,
            directed,
            seed,
        } => {
            let run = out.run();
            let config = TrainConfig {
                batch_size,
                learning_rate: lr,
                epochs,
                seed,
                encoder: EncoderConfig {
                    num_layers: layers,
                    hidden_dim,
                    directed_aggregation: directed,
                    ..EncoderConfig::default()
                },
            };
            let manifest = commands::train(&graphs.unwrap_or_else(|| run.graphs()), &config, &run)?;
            print(&manifest);
        }
        Command::Embed { out, model, graphs } => {
            let run = out.run();
            let store = commands::embed(
                &model.unwrap_or_else(|| run.model()),
                &graphs.unwrap_or_else(|| run.graphs()),
                &run,
            )?;
            log::info!("embedded {} students into {} dimensions", store.len(), store.dim());
        }
        Command::Project { out, store } => {
            let run = out.run();
            print(&commands::project(&store.embeddings.unwrap_or_else(|| run.embeddings()), &run)?);
        }
        Command::Neighbors { out, store, student, k } => {
            let path = store.embeddings.unwrap_or_else(|| out.run().embeddings());
            print(&commands::neighbors(&path, &student, k)?);
        }
        Command::Cohort { out, store, start, end, k } => {
            let path = store.embeddings.unwrap_or_else(|| out.run().embeddings());
            print(&commands::cohort(&path, &start, &end, k)?);
        }
        Command::Outliers { out, store, k } => {
            let path = store.embeddings.unwrap_or_else(|| out.run().embeddings());
            print(&commands::outliers(&path, k)?);
        }
        Command::Serve {
            out,
            mut runs,
            host,
            port,
            mut cors_origins,
            static_dir,
        } => {
            if runs.is_empty() {
                runs.push(out.out);
            }
            if cors_origins.is_empty() {
                cors_origins = DEFAULT_CORS_ORIGINS.iter().map(|s| s.to_string()).collect();
            }
            let snapshots = Snapshots::load(&runs)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(service::serve(snapshots, &host, port, &cors_origins, static_dir.as_deref()))?;
        }
    }
    Ok(())
}
