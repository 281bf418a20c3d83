//! Training orchestration and the file formats it reads and writes.

mod ablation;
mod checkpoint;
mod config;
mod embeddings;
mod mi_bench;
mod train;

pub use ablation::{
    coverage, histogram, run_ablation, AblationReport, AblationRun, AblationSummary, Coverage,
    Variant, COVERAGE_FILE, RUNS_FILE, SUMMARY_FILE,
};
pub use checkpoint::{
    read_metrics, write_metrics, Checkpoint, MetricsRow, CHECKPOINT_MAGIC, METRICS_HEADER,
};
pub use config::{Method, TrainConfig, CONFIG_KEYS};
pub use embeddings::{dump_embeddings, embed_rollouts, embedding_header, EmbeddingRow};
pub use mi_bench::{gaussian_pairs, mi_bench, mi_bench_one, MiBenchConfig, MiBenchRow, MI_BENCH_HEADER};
pub use train::{
    action_features, anchor_features, critic_graph, critic_inputs, critic_step, evaluate,
    evaluate_policy, mix_seed, state_features, train, Agent, CriticStep, TrainOutcome,
    CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
};
